use super::LossError;

/// Data fragments plus one XOR parity fragment per group of `group_size`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct XorCoded {
    pub data: Vec<Vec<u8>>,
    pub parity: Vec<Vec<u8>>,
    pub group_size: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct XorRecovery {
    /// `None` where a fragment could not be recovered.
    pub fragments: Vec<Option<Vec<u8>>>,
    pub recovered: usize,
    /// Data fragments still missing after recovery.
    pub residual_lost: usize,
}

fn xor_into(acc: &mut Vec<u8>, frag: &[u8]) {
    if acc.len() < frag.len() {
        acc.resize(frag.len(), 0);
    }
    acc.iter_mut().zip(frag).for_each(|(a, b)| *a ^= b);
}

pub fn xor_encode(fragments: &[Vec<u8>], group_size: usize) -> Result<XorCoded, LossError> {
    if group_size == 0 {
        return Err(LossError::GroupSize);
    }
    let parity = fragments
        .chunks(group_size)
        .map(|group| {
            let mut p = Vec::new();
            for f in group {
                xor_into(&mut p, f);
            }
            p
        })
        .collect();
    Ok(XorCoded {
        data: fragments.to_vec(),
        parity,
        group_size,
    })
}

/// Rebuilds single erasures per group. Recovered fragments take the length
/// of the original (known to the receiver from the layout).
pub fn xor_decode(
    coded: &XorCoded,
    data_received: &[bool],
    parity_received: &[bool],
) -> Result<XorRecovery, LossError> {
    if data_received.len() != coded.data.len() || parity_received.len() != coded.parity.len() {
        return Err(LossError::MaskLength {
            mask: data_received.len() + parity_received.len(),
            fragments: coded.data.len() + coded.parity.len(),
        });
    }
    let mut fragments: Vec<Option<Vec<u8>>> = coded
        .data
        .iter()
        .zip(data_received)
        .map(|(f, ok)| ok.then(|| f.clone()))
        .collect();
    let mut recovered = 0;
    for (g, start) in (0..coded.data.len()).step_by(coded.group_size).enumerate() {
        let end = (start + coded.group_size).min(coded.data.len());
        let missing: Vec<usize> = (start..end).filter(|&i| fragments[i].is_none()).collect();
        if missing.len() != 1 || !parity_received[g] {
            continue;
        }
        let mut acc = coded.parity[g].clone();
        for f in fragments[start..end].iter().flatten() {
            xor_into(&mut acc, f);
        }
        let lost = missing[0];
        acc.truncate(coded.data[lost].len());
        fragments[lost] = Some(acc);
        recovered += 1;
    }
    let residual_lost = fragments.iter().filter(|f| f.is_none()).count();
    Ok(XorRecovery {
        fragments,
        recovered,
        residual_lost,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn group_of_one_duplicates() {
        let c = xor_encode(&[vec![1, 2, 3]], 1).unwrap();
        assert_eq!(c.parity, vec![vec![1, 2, 3]]);
    }

    #[test]
    fn single_loss_recovered() {
        let a = vec![0xAA, 0x01];
        let b = vec![0x0F, 0xF0];
        let c = xor_encode(&[a.clone(), b.clone()], 2).unwrap();
        let r = xor_decode(&c, &[true, false], &[true]).unwrap();
        assert_eq!(r.fragments[1].as_deref(), Some(&b[..]));
        assert_eq!((r.recovered, r.residual_lost), (1, 0));
    }

    #[test]
    fn double_loss_is_residual() {
        let c = xor_encode(&[vec![1], vec![2], vec![3]], 3).unwrap();
        let r = xor_decode(&c, &[false, true, false], &[true]).unwrap();
        assert_eq!((r.recovered, r.residual_lost), (0, 2));
    }

    #[test]
    fn zero_group_rejected() {
        assert_eq!(xor_encode(&[], 0), Err(LossError::GroupSize));
    }

    proptest! {
        #[test]
        fn at_most_one_loss_per_group_is_exact(
            frags in prop::collection::vec(prop::collection::vec(any::<u8>(), 1..20), 1..24),
            k in 1usize..6,
            drops in prop::collection::vec(any::<prop::sample::Index>(), 0..6),
        ) {
            let c = xor_encode(&frags, k).unwrap();
            let mut received = vec![true; frags.len()];
            let mut hit = vec![false; c.parity.len()];
            for d in drops {
                let i = d.index(frags.len());
                if !hit[i / k] {
                    hit[i / k] = true;
                    received[i] = false;
                }
            }
            let r = xor_decode(&c, &received, &vec![true; c.parity.len()]).unwrap();
            prop_assert_eq!(r.residual_lost, 0);
            for (got, want) in r.fragments.iter().zip(&frags) {
                prop_assert_eq!(got.as_ref(), Some(want));
            }
        }
    }
}
