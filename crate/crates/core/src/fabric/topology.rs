use super::config::ClosConfig;
use super::{FabricError, HostId, LinkId, NodeId};
use crate::simkernel::splitmix64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    Host,
    Leaf,
    Spine,
}

/// A directed link; its output queue lives at `from`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LinkSpec {
    pub from: NodeId,
    pub to: NodeId,
}

/// Node numbering: hosts `0..H`, then leaves, then spines.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    config: ClosConfig,
    nodes: Vec<NodeKind>,
    links: Vec<LinkSpec>,
    host_up: Vec<LinkId>,
    leaf_down: Vec<Vec<LinkId>>,
    leaf_up: Vec<Vec<LinkId>>,
    spine_down: Vec<Vec<LinkId>>,
    /// Per node, for each destination host, the candidate next links.
    tables: Vec<Vec<Vec<LinkId>>>,
}

pub fn build_clos(config: &ClosConfig) -> Result<Topology, FabricError> {
    config.validate()?;
    let h = config.hosts;
    let l = config.leaf_count;
    let s = if l > 1 { config.spine_count } else { 0 };

    let mut nodes = vec![NodeKind::Host; h];
    nodes.extend(std::iter::repeat_n(NodeKind::Leaf, l));
    nodes.extend(std::iter::repeat_n(NodeKind::Spine, s));

    let mut links = Vec::new();
    let mut add = |from, to| {
        links.push(LinkSpec { from, to });
        links.len() - 1
    };
    let leaf_node = |leaf: usize| h + leaf;
    let spine_node = |spine: usize| h + l + spine;

    let host_up: Vec<LinkId> = (0..h)
        .map(|host| add(host, leaf_node(host / config.hosts_per_leaf)))
        .collect();
    let leaf_down: Vec<Vec<LinkId>> = (0..l)
        .map(|leaf| {
            (0..config.hosts_per_leaf)
                .map(|j| add(leaf_node(leaf), leaf * config.hosts_per_leaf + j))
                .collect()
        })
        .collect();
    let leaf_up: Vec<Vec<LinkId>> = (0..l)
        .map(|leaf| (0..s).map(|sp| add(leaf_node(leaf), spine_node(sp))).collect())
        .collect();
    let spine_down: Vec<Vec<LinkId>> = (0..s)
        .map(|sp| (0..l).map(|leaf| add(spine_node(sp), leaf_node(leaf))).collect())
        .collect();

    let mut topo = Topology {
        config: config.clone(),
        nodes,
        links,
        host_up,
        leaf_down,
        leaf_up,
        spine_down,
        tables: Vec::new(),
    };
    topo.tables = (0..topo.nodes.len())
        .map(|node| (0..h).map(|dst| topo.candidates(node, dst)).collect())
        .collect();
    Ok(topo)
}

impl Topology {
    pub fn config(&self) -> &ClosConfig {
        &self.config
    }

    pub fn host_count(&self) -> usize {
        self.config.hosts
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn node_kind(&self, node: NodeId) -> NodeKind {
        self.nodes[node]
    }

    pub fn links(&self) -> &[LinkSpec] {
        &self.links
    }

    pub fn link(&self, id: LinkId) -> LinkSpec {
        self.links[id]
    }

    pub fn host_uplink(&self, host: HostId) -> LinkId {
        self.host_up[host]
    }

    pub fn leaf_of(&self, host: HostId) -> usize {
        host / self.config.hosts_per_leaf
    }

    /// Candidate next links from `node` toward `dst`, in a fixed order.
    pub fn routing_table(&self, node: NodeId) -> &[Vec<LinkId>] {
        &self.tables[node]
    }

    fn candidates(&self, node: NodeId, dst: HostId) -> Vec<LinkId> {
        let h = self.config.hosts;
        let l = self.config.leaf_count;
        match self.nodes[node] {
            NodeKind::Host if node == dst => Vec::new(),
            NodeKind::Host => vec![self.host_up[node]],
            NodeKind::Leaf => {
                let leaf = node - h;
                if self.leaf_of(dst) == leaf {
                    vec![self.leaf_down[leaf][dst % self.config.hosts_per_leaf]]
                } else {
                    self.leaf_up[leaf].clone()
                }
            }
            NodeKind::Spine => {
                let spine = node - h - l;
                vec![self.spine_down[spine][self.leaf_of(dst)]]
            }
        }
    }

    /// Next link for a packet of flow `(src, dst, key)` at `node`. ECMP picks
    /// among equal-cost uplinks by a fixed hash of the flow tuple.
    pub fn next_link(&self, node: NodeId, src: HostId, dst: HostId, key: u32) -> LinkId {
        let cands = &self.tables[node][dst];
        debug_assert!(!cands.is_empty(), "no route from {node} to {dst}");
        if cands.len() == 1 {
            cands[0]
        } else {
            cands[Self::ecmp_index(src, dst, key, cands.len())]
        }
    }

    pub fn ecmp_index(src: HostId, dst: HostId, key: u32, ways: usize) -> usize {
        let h = splitmix64(((src as u64) << 40) ^ ((dst as u64) << 20) ^ key as u64);
        (h % ways as u64) as usize
    }

    /// Full link path for a flow.
    pub fn path(&self, src: HostId, dst: HostId, key: u32) -> Vec<LinkId> {
        let mut path = Vec::new();
        let mut node = src;
        while node != dst {
            let link = self.next_link(node, src, dst, key);
            path.push(link);
            node = self.links[link].to;
            assert!(path.len() <= self.nodes.len(), "routing loop");
        }
        path
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_scale_clos_is_fully_reachable_with_diameter_four() {
        let cfg = ClosConfig::with_shape(8, 16, 8);
        let topo = build_clos(&cfg).unwrap();
        assert_eq!(topo.host_count(), 128);
        let mut max_hops = 0;
        for src in 0..128 {
            for dst in 0..128 {
                if src != dst {
                    let p = topo.path(src, dst, 0);
                    assert_eq!(topo.link(*p.last().unwrap()).to, dst);
                    max_hops = max_hops.max(p.len());
                }
            }
        }
        assert_eq!(max_hops, 4);
    }

    #[test]
    fn intra_leaf_path_stays_under_the_leaf() {
        let topo = build_clos(&ClosConfig::with_shape(1, 2, 0)).unwrap();
        let p = topo.path(0, 1, 0);
        assert_eq!(p.len(), 2);
        assert_eq!(topo.node_kind(topo.link(p[0]).to), NodeKind::Leaf);
    }

    #[test]
    fn builds_are_identical() {
        let cfg = ClosConfig::with_shape(4, 4, 2);
        assert_eq!(build_clos(&cfg).unwrap(), build_clos(&cfg).unwrap());
    }

    #[test]
    fn ecmp_spreads_flows_over_spines() {
        let topo = build_clos(&ClosConfig::with_shape(2, 4, 4)).unwrap();
        let mut used = std::collections::BTreeSet::new();
        for key in 0..64 {
            used.insert(topo.path(0, 4, key)[1]);
        }
        assert_eq!(used.len(), 4);
        assert_eq!(topo.path(0, 4, 9), topo.path(0, 4, 9));
    }

    #[test]
    fn bad_config_is_rejected() {
        let cfg = ClosConfig {
            hosts: 7,
            ..ClosConfig::default()
        };
        assert!(build_clos(&cfg).is_err());
    }
}
