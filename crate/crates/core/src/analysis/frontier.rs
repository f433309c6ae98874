use serde::{Deserialize, Serialize};

use crate::costmodel::count_params;
use crate::error::{LabError, Result};
use crate::trainer::RunLog;

pub const DEFAULT_BINS: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontierPoint {
    pub bin_lo: f64,
    pub bin_hi: f64,
    pub flops: f64,
    pub loss: f64,
    pub run_id: String,
    pub step: u64,
    pub params: u64,
    pub tokens_seen: u64,
}

/// `n + 1` log-spaced edges from `lo` to `hi`, with both ends exact.
pub fn log_bin_edges(lo: f64, hi: f64, n: usize) -> Result<Vec<f64>> {
    if n == 0 || !(lo > 0.0) || !(hi > lo) || !hi.is_finite() {
        return Err(LabError::invalid(format!(
            "log bins need 0 < lo < hi and n >= 1 (lo {lo}, hi {hi}, n {n})"
        )));
    }
    let (a, b) = (lo.ln(), hi.ln());
    let mut edges: Vec<f64> = (0..=n)
        .map(|k| (a + (b - a) * k as f64 / n as f64).exp())
        .collect();
    edges[0] = lo;
    edges[n] = hi;
    Ok(edges)
}

/// Per log-spaced FLOPs bin, the record with the lowest eval loss across all
/// runs. Bins are `[lo, hi)` except the last, which also holds the maximum.
/// Records with zero FLOPs (initial evaluations) cannot be placed on a log
/// axis and are skipped. Empty bins are omitted.
pub fn compute_optimal_frontier(runs: &[RunLog], n_bins: usize) -> Result<Vec<FrontierPoint>> {
    if n_bins == 0 {
        return Err(LabError::invalid("n_bins must be at least 1"));
    }
    let records: Vec<(&RunLog, usize)> = runs
        .iter()
        .flat_map(|r| (0..r.records.len()).map(move |i| (r, i)))
        .filter(|(r, i)| r.records[*i].flops > 0.0 && r.records[*i].eval_loss.is_finite())
        .collect();
    if records.is_empty() {
        return Err(LabError::EmptyInput("run records with positive FLOPs".into()));
    }
    let flops = |&(r, i): &(&RunLog, usize)| r.records[i].flops;
    let lo = records.iter().map(flops).fold(f64::INFINITY, f64::min);
    let hi = records.iter().map(flops).fold(0.0, f64::max);
    let edges = if hi > lo {
        log_bin_edges(lo, hi, n_bins)?
    } else {
        vec![lo, lo * (1.0 + 1e-12)]
    };
    let bins = edges.len() - 1;
    let mut best: Vec<Option<(&RunLog, usize)>> = vec![None; bins];
    for rec in &records {
        let f = flops(rec);
        let k = (edges.partition_point(|&e| e <= f) - 1).min(bins - 1);
        let loss = rec.0.records[rec.1].eval_loss;
        match best[k] {
            Some((r, i)) if r.records[i].eval_loss <= loss => {}
            _ => best[k] = Some(*rec),
        }
    }
    Ok(best
        .into_iter()
        .enumerate()
        .filter_map(|(k, b)| {
            b.map(|(r, i)| {
                let rec = &r.records[i];
                FrontierPoint {
                    bin_lo: edges[k],
                    bin_hi: edges[k + 1],
                    flops: rec.flops,
                    loss: rec.eval_loss,
                    run_id: r.run_id.clone(),
                    step: rec.step,
                    params: count_params(&r.config),
                    tokens_seen: rec.tokens_seen,
                }
            })
        })
        .collect())
}
