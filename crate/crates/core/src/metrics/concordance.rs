use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::survival::SurvivalRecord;

/// Pair counts behind the C-index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConcordanceCounts {
    pub comparable: u64,
    pub concordant: u64,
    pub tied_risk: u64,
}

impl ConcordanceCounts {
    pub fn c_index(&self) -> f64 {
        (self.concordant as f64 + 0.5 * self.tied_risk as f64) / self.comparable as f64
    }
}

struct Fenwick(Vec<u64>);

impl Fenwick {
    fn add(&mut self, mut i: usize) {
        i += 1;
        while i < self.0.len() {
            self.0[i] += 1;
            i += i & i.wrapping_neg();
        }
    }

    // count of inserted ranks < i
    fn prefix(&self, mut i: usize) -> u64 {
        let mut s = 0;
        while i > 0 {
            s += self.0[i];
            i -= i & i.wrapping_neg();
        }
        s
    }
}

/// Counts comparable pairs (T_i < T_j, δ_i = 1) in O(n log n).
pub fn concordance_counts(risks: &[f64], records: &[SurvivalRecord]) -> Result<ConcordanceCounts> {
    if risks.len() != records.len() {
        return Err(Error::DimensionMismatch { expected: records.len(), got: risks.len() });
    }
    if risks.iter().any(|r| r.is_nan()) {
        return Err(Error::InvalidInput("risk scores must not be NaN".into()));
    }
    let mut levels: Vec<f64> = risks.to_vec();
    levels.sort_by(|a, b| a.total_cmp(b));
    levels.dedup_by(|a, b| a == b);
    let rank = |r: f64| levels.partition_point(|&x| x < r);

    let mut order: Vec<usize> = (0..records.len()).collect();
    order.sort_by(|&a, &b| records[b].time.total_cmp(&records[a].time));

    let mut tree = Fenwick(vec![0; levels.len() + 1]);
    let mut inserted = 0u64;
    let mut counts = ConcordanceCounts { comparable: 0, concordant: 0, tied_risk: 0 };
    let mut i = 0;
    while i < order.len() {
        let t = records[order[i]].time;
        let mut j = i;
        while j < order.len() && records[order[j]].time == t {
            j += 1;
        }
        // everyone inserted so far has a strictly later time
        for &p in &order[i..j] {
            if records[p].event {
                let r = rank(risks[p]);
                let below = tree.prefix(r);
                let at = tree.prefix(r + 1) - below;
                counts.comparable += inserted;
                counts.concordant += below;
                counts.tied_risk += at;
            }
        }
        for &p in &order[i..j] {
            tree.add(rank(risks[p]));
            inserted += 1;
        }
        i = j;
    }
    Ok(counts)
}

/// Harrell's C-index; higher risk should mean shorter survival.
pub fn c_index(risks: &[f64], records: &[SurvivalRecord]) -> Result<f64> {
    let counts = concordance_counts(risks, records)?;
    if counts.comparable == 0 {
        return Err(Error::NoComparablePairs);
    }
    Ok(counts.c_index())
}
