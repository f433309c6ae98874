//! Incremental cost-effectiveness along a one-axis ladder of configs.

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::model::ModelConfig;

/// ICER is reported as perplexity reduction per this many FLOPs.
pub const ICER_FLOPS_UNIT: f64 = 1e15;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LadderRung {
    pub config: ModelConfig,
    pub perplexity: f64,
    pub flops: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IcerEntry {
    pub from: ModelConfig,
    pub to: ModelConfig,
    pub delta_perplexity: f64,
    pub delta_flops: f64,
    /// `delta_perplexity / (delta_flops / ICER_FLOPS_UNIT)`.
    pub icer: f64,
}

fn differing_axes(a: &ModelConfig, b: &ModelConfig) -> usize {
    let (x, y) = (a.shape(), b.shape());
    [x.0 != y.0, x.1 != y.1, x.2 != y.2, x.3 != y.3, x.4 != y.4]
        .iter()
        .filter(|&&d| d)
        .count()
}

/// One entry per rung after the first, each against the previous rung.
pub fn icer(ladder: &[LadderRung]) -> Result<Vec<IcerEntry>> {
    ladder
        .windows(2)
        .map(|w| {
            let (a, b) = (&w[0], &w[1]);
            let delta_flops = b.flops - a.flops;
            if !(delta_flops > 0.0) {
                return Err(LabError::invalid(format!(
                    "ladder is not strictly cost-increasing at {} -> {}",
                    a.config, b.config
                )));
            }
            if differing_axes(&a.config, &b.config) != 1
                || a.config.vocab_size != b.config.vocab_size
                || a.config.max_seq_len != b.config.max_seq_len
            {
                return Err(LabError::invalid(format!(
                    "{} -> {} must differ in exactly one hyperparameter",
                    a.config, b.config
                )));
            }
            let delta_perplexity = a.perplexity - b.perplexity;
            Ok(IcerEntry {
                from: a.config,
                to: b.config,
                delta_perplexity,
                delta_flops,
                icer: delta_perplexity / (delta_flops / ICER_FLOPS_UNIT),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rung(h: usize, ppl: f64, pflops: f64) -> LadderRung {
        LadderRung {
            config: ModelConfig::new(256, h, 1024, 8, 8, 19_000, 128),
            perplexity: ppl,
            flops: pflops * 1e15,
        }
    }

    #[test]
    fn single_step_arithmetic() {
        let e = icer(&[rung(64, 10.42, 42.0), rung(128, 7.56, 50.0)]).unwrap();
        assert_eq!(e.len(), 1);
        assert!((e[0].delta_perplexity - 2.86).abs() < 1e-12);
        assert!((e[0].delta_flops - 8e15).abs() < 1.0);
        assert!((e[0].icer - 0.3575).abs() < 1e-12);
    }

    #[test]
    fn flat_perplexity_gives_zero() {
        let e = icer(&[rung(64, 5.0, 1.0), rung(128, 5.0, 2.0)]).unwrap();
        assert_eq!(e[0].icer, 0.0);
    }

    #[test]
    fn rejects_non_increasing_cost_and_multi_axis_steps() {
        assert!(icer(&[rung(64, 5.0, 2.0), rung(128, 4.0, 2.0)]).is_err());
        let mut b = rung(128, 4.0, 3.0);
        b.config.num_layers = 4;
        assert!(icer(&[rung(64, 5.0, 2.0), b]).is_err());
        assert!(icer(&[rung(64, 5.0, 2.0)]).unwrap().is_empty());
    }
}
