//! Spearman rank correlation with average ranks for ties.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{LabError, Result};

/// Largest n for which the p-value is computed from the exact permutation
/// distribution.
pub const EXACT_MAX_N: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PValueMethod {
    ExactPermutation,
    TDistribution,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpearmanResult {
    pub rho: f64,
    /// Two-sided.
    pub p_value: f64,
    pub n: usize,
    pub method: PValueMethod,
}

/// 1-based ranks; tied values share the mean of their positions.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa * sbb).sqrt()
}

/// Two-sided exact p-value: the share of all n! pairings of the ranks whose
/// correlation is at least as extreme as the observed one. Ranks are doubled
/// so ties (half ranks) stay integral; the pairing sums are then enumerated
/// by a dynamic program over subsets of the second series.
fn exact_p(rx: &[f64], ry: &[f64]) -> f64 {
    let n = rx.len();
    let ix: Vec<i64> = rx.iter().map(|r| (2.0 * r).round() as i64).collect();
    let iy: Vec<i64> = ry.iter().map(|r| (2.0 * r).round() as i64).collect();
    let sx: i64 = ix.iter().sum();
    let sy: i64 = iy.iter().sum();
    // Centered statistic n·Σ x·y − Σx·Σy, monotone in rho for fixed ranks.
    let stat = |s: i64| n as i64 * s - sx * sy;
    let observed = stat(ix.iter().zip(&iy).map(|(a, b)| a * b).sum()).abs();

    let mut layer: HashMap<u32, HashMap<i64, u64>> = HashMap::new();
    layer.insert(0, HashMap::from([(0, 1)]));
    for &x in &ix {
        let mut next: HashMap<u32, HashMap<i64, u64>> = HashMap::new();
        for (mask, sums) in &layer {
            for (j, &y) in iy.iter().enumerate() {
                if mask & (1 << j) != 0 {
                    continue;
                }
                let entry = next.entry(mask | (1 << j)).or_default();
                for (&s, &c) in sums {
                    *entry.entry(s + x * y).or_default() += c;
                }
            }
        }
        layer = next;
    }
    let full = &layer[&((1u32 << n) - 1)];
    let total: u64 = full.values().sum();
    let extreme: u64 = full
        .iter()
        .filter(|(&s, _)| stat(s).abs() >= observed)
        .map(|(_, &c)| c)
        .sum();
    extreme as f64 / total as f64
}

pub fn spearman(x: &[f64], y: &[f64]) -> Result<SpearmanResult> {
    if x.len() != y.len() {
        return Err(LabError::invalid("series lengths differ"));
    }
    let n = x.len();
    if n < 3 {
        return Err(LabError::invalid("spearman needs at least 3 pairs"));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(LabError::invalid("series contain non-finite values"));
    }
    let constant = |v: &[f64]| v.iter().all(|&a| a == v[0]);
    if constant(x) || constant(y) {
        return Err(LabError::Undefined("rank correlation of a constant series".into()));
    }
    let rx = average_ranks(x);
    let ry = average_ranks(y);
    let rho = pearson(&rx, &ry).clamp(-1.0, 1.0);
    let (p_value, method) = if n <= EXACT_MAX_N {
        (exact_p(&rx, &ry), PValueMethod::ExactPermutation)
    } else if rho.abs() >= 1.0 {
        (0.0, PValueMethod::TDistribution)
    } else {
        let df = (n - 2) as f64;
        let t = rho * (df / (1.0 - rho * rho)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, df).expect("valid degrees of freedom");
        ((2.0 * (1.0 - dist.cdf(t.abs()))).min(1.0), PValueMethod::TDistribution)
    };
    Ok(SpearmanResult { rho, p_value, n, method })
}
