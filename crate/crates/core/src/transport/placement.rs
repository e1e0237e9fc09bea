use std::collections::BTreeMap;

/// Application memory that packets are written into by offset.
///
/// Coverage is kept as a set of disjoint byte intervals, so duplicate or
/// overlapping writes count once. Contents are stored only when requested.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecvBuffer {
    len: u64,
    covered: BTreeMap<u64, u64>,
    covered_bytes: u64,
    data: Option<Vec<u8>>,
}

impl RecvBuffer {
    pub fn new(len: u64) -> Self {
        Self {
            len,
            covered: BTreeMap::new(),
            covered_bytes: 0,
            data: None,
        }
    }

    pub fn with_contents(len: u64) -> Self {
        Self {
            data: Some(vec![0; len as usize]),
            ..Self::new(len)
        }
    }

    pub fn len(&self) -> u64 {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn bytes_received(&self) -> u64 {
        self.covered_bytes
    }

    pub fn is_complete(&self) -> bool {
        self.covered_bytes == self.len
    }

    pub fn contents(&self) -> Option<&[u8]> {
        self.data.as_deref()
    }

    /// Writes `[offset, offset + len)`; returns the number of newly covered
    /// bytes, or `None` when the range falls outside the buffer.
    pub fn place(&mut self, offset: u64, len: u64, bytes: Option<&[u8]>) -> Option<u64> {
        let end = offset.checked_add(len)?;
        if end > self.len {
            return None;
        }
        if let (Some(data), Some(src)) = (self.data.as_mut(), bytes) {
            debug_assert_eq!(src.len() as u64, len);
            data[offset as usize..end as usize].copy_from_slice(src);
        }
        if len == 0 {
            return Some(0);
        }
        let mut start = offset;
        let mut stop = end;
        let mut already = 0;
        // Merge with an interval that begins at or before `start`.
        if let Some((&s, &e)) = self.covered.range(..=start).next_back() {
            if e >= start {
                already += e.min(stop) - start;
                start = s;
                stop = stop.max(e);
                self.covered.remove(&s);
            }
        }
        // Absorb intervals that begin inside the new range.
        let inside: Vec<(u64, u64)> = self
            .covered
            .range(start..=stop)
            .map(|(&s, &e)| (s, e))
            .collect();
        for (s, e) in inside {
            already += e.min(end).saturating_sub(s.max(offset));
            stop = stop.max(e);
            self.covered.remove(&s);
        }
        self.covered.insert(start, stop);
        let fresh = len - already;
        self.covered_bytes += fresh;
        Some(fresh)
    }

    /// Disjoint covered ranges in ascending order.
    pub fn covered_ranges(&self) -> impl Iterator<Item = (u64, u64)> + '_ {
        self.covered.iter().map(|(&s, &e)| (s, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn order_independent_coverage() {
        let mut b = RecvBuffer::new(3000);
        assert_eq!(b.place(1500, 1500, None), Some(1500));
        assert_eq!(b.place(0, 1500, None), Some(1500));
        assert_eq!(b.bytes_received(), 3000);
        assert!(b.is_complete());
        assert_eq!(b.covered_ranges().collect::<Vec<_>>(), vec![(0, 3000)]);
    }

    #[test]
    fn duplicates_count_once() {
        let mut b = RecvBuffer::new(4500);
        b.place(1500, 1500, None);
        assert_eq!(b.place(1500, 1500, None), Some(0));
        assert_eq!(b.bytes_received(), 1500);
    }

    #[test]
    fn out_of_range_is_rejected() {
        let mut b = RecvBuffer::new(100);
        assert_eq!(b.place(90, 20, None), None);
        assert_eq!(b.place(u64::MAX, 2, None), None);
    }

    proptest! {
        #[test]
        fn coverage_matches_bitmap(writes in prop::collection::vec((0u64..200, 0u64..40), 0..60)) {
            let mut b = RecvBuffer::new(240);
            let mut bitmap = vec![false; 240];
            for (off, len) in writes {
                let fresh = b.place(off, len, None).unwrap();
                let mut expect = 0;
                for i in off..off + len {
                    if !bitmap[i as usize] {
                        bitmap[i as usize] = true;
                        expect += 1;
                    }
                }
                prop_assert_eq!(fresh, expect);
            }
            prop_assert_eq!(b.bytes_received(), bitmap.iter().filter(|x| **x).count() as u64);
            let ranges: Vec<_> = b.covered_ranges().collect();
            prop_assert!(ranges.windows(2).all(|w| w[0].1 < w[1].0));
        }
    }
}
