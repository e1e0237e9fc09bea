use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ExperimentError;

/// Nearest-rank percentile of `sorted` (ascending), `p` in [0, 100].
pub fn percentile(sorted: &[u64], p: f64) -> Option<u64> {
    if sorted.is_empty() || !(0.0..=100.0).contains(&p) {
        return None;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    Some(sorted[rank.clamp(1, sorted.len()) - 1])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EcdfRow {
    pub duration_ns: u64,
    pub cumulative_fraction: f64,
}

/// Sorted durations paired with `i / n`.
pub fn ecdf(durations: &[u64]) -> Result<Vec<EcdfRow>, ExperimentError> {
    if durations.is_empty() {
        return Err(ExperimentError::EmptyInput("no step durations to build an ECDF from"));
    }
    let mut v = durations.to_vec();
    v.sort_unstable();
    let n = v.len() as f64;
    Ok(v.into_iter()
        .enumerate()
        .map(|(i, d)| EcdfRow {
            duration_ns: d,
            cumulative_fraction: (i + 1) as f64 / n,
        })
        .collect())
}

/// Reads the `duration_ns` column of a CSV, or its first column when there
/// is no such header.
pub fn read_durations(path: &Path) -> Result<Vec<u64>, ExperimentError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| ExperimentError::csv(path, e))?;
    let headers = r.headers().map_err(|e| ExperimentError::csv(path, e))?.clone();
    let col = headers.iter().position(|h| h == "duration_ns").unwrap_or(0);
    let mut out = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| ExperimentError::csv(path, e))?;
        let cell = rec.get(col).unwrap_or("").trim();
        let v = cell.parse::<u64>().map_err(|_| {
            ExperimentError::csv(path, format!("row {}: `{cell}` is not a duration", line + 2))
        })?;
        out.push(v);
    }
    Ok(out)
}

pub fn write_ecdf(rows: &[EcdfRow], path: &Path) -> Result<(), ExperimentError> {
    super::write_csv(path, rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pairs(v: &[u64]) -> Vec<(u64, f64)> {
        ecdf(v)
            .unwrap()
            .into_iter()
            .map(|r| (r.duration_ns, r.cumulative_fraction))
            .collect()
    }

    #[test]
    fn three_values() {
        assert_eq!(pairs(&[3, 1, 2]), vec![(1, 1.0 / 3.0), (2, 2.0 / 3.0), (3, 1.0)]);
    }

    #[test]
    fn duplicates_keep_separate_rows() {
        assert_eq!(pairs(&[2, 2]), vec![(2, 0.5), (2, 1.0)]);
    }

    #[test]
    fn empty_input_is_rejected() {
        assert!(matches!(ecdf(&[]), Err(ExperimentError::EmptyInput(_))));
    }

    #[test]
    fn nearest_rank() {
        let v: Vec<u64> = (1..=100).collect();
        assert_eq!(percentile(&v, 50.0), Some(50));
        assert_eq!(percentile(&v, 99.0), Some(99));
        assert_eq!(percentile(&v, 100.0), Some(100));
        assert_eq!(percentile(&v, 0.0), Some(1));
        assert_eq!(percentile(&[7, 9], 50.0), Some(7));
        assert_eq!(percentile(&[], 50.0), None);
    }

    #[test]
    fn reads_named_or_first_column() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.csv");
        std::fs::write(&a, "node,duration_ns\n0,30\n1,10\n").unwrap();
        assert_eq!(read_durations(&a).unwrap(), vec![30, 10]);
        let b = dir.path().join("b.csv");
        std::fs::write(&b, "d\n5\n").unwrap();
        assert_eq!(read_durations(&b).unwrap(), vec![5]);
        std::fs::write(&b, "d\nfive\n").unwrap();
        assert!(read_durations(&b).is_err());
    }

    proptest::proptest! {
        #[test]
        fn ecdf_is_monotone_and_ends_at_one(v in proptest::collection::vec(0u64..1000, 1..200)) {
            let rows = ecdf(&v).unwrap();
            proptest::prop_assert_eq!(rows.last().unwrap().cumulative_fraction, 1.0);
            for w in rows.windows(2) {
                proptest::prop_assert!(w[0].duration_ns <= w[1].duration_ns);
                proptest::prop_assert!(w[0].cumulative_fraction < w[1].cumulative_fraction);
            }
        }

        #[test]
        fn percentiles_are_ordered(mut v in proptest::collection::vec(0u64..1_000_000, 1..300)) {
            v.sort_unstable();
            let (m, p95, p99) = (percentile(&v, 50.0), percentile(&v, 95.0), percentile(&v, 99.0));
            proptest::prop_assert!(m <= p95 && p95 <= p99);
        }
    }
}
