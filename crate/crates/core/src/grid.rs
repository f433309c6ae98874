//! Experiment grids: one-axis variations around an anchor, and seeded
//! samples from the power-of-two lattice.

use std::collections::BTreeSet;

use log::warn;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::model::ModelConfig;

/// Largest allowed value per axis: E, H, I, L, A.
pub const AXIS_BOUNDS: [usize; 5] = [256, 256, 1024, 8, 8];
pub const AXIS_NAMES: [&str; 5] = ["embedding", "hidden", "intermediate", "layers", "heads"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridMode {
    Unidirectional,
    RandomSample,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridAxes {
    pub embedding: Vec<usize>,
    pub hidden: Vec<usize>,
    pub intermediate: Vec<usize>,
    pub layers: Vec<usize>,
    pub heads: Vec<usize>,
}

impl GridAxes {
    fn lists(&self) -> [&Vec<usize>; 5] {
        [&self.embedding, &self.hidden, &self.intermediate, &self.layers, &self.heads]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSpec {
    pub anchor: ModelConfig,
    pub axes: GridAxes,
    pub mode: GridMode,
    #[serde(default)]
    pub sample_count: usize,
    #[serde(default)]
    pub seed: u64,
    /// Configs a random sample must avoid in addition to the unidirectional set.
    #[serde(default)]
    pub exclude: Vec<ModelConfig>,
}

fn with_axis(cfg: &ModelConfig, axis: usize, value: usize) -> ModelConfig {
    let mut c = *cfg;
    match axis {
        0 => c.embedding_size = value,
        1 => c.hidden_size = value,
        2 => c.intermediate_size = value,
        3 => c.num_layers = value,
        _ => c.num_heads = value,
    }
    c
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        self.anchor.validate()?;
        for (k, list) in self.axes.lists().iter().enumerate() {
            for &v in list.iter() {
                if v == 0 || !v.is_power_of_two() || v > AXIS_BOUNDS[k] {
                    return Err(LabError::InvalidConfig(format!(
                        "{} value {v} must be a power of two in [1, {}]",
                        AXIS_NAMES[k], AXIS_BOUNDS[k]
                    )));
                }
            }
        }
        Ok(())
    }

    /// The anchor followed by each one-axis variant, in axis order.
    pub fn unidirectional(&self) -> Vec<ModelConfig> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        let mut push = |c: ModelConfig, out: &mut Vec<ModelConfig>| {
            if seen.insert(c.shape()) {
                out.push(c);
            }
        };
        push(self.anchor, &mut out);
        for (k, list) in self.axes.lists().iter().enumerate() {
            for &v in list.iter() {
                let c = with_axis(&self.anchor, k, v);
                if c.validate().is_err() {
                    warn!("skipping {c}: hidden size not divisible by heads");
                    continue;
                }
                push(c, &mut out);
            }
        }
        out
    }

    fn lattice(&self) -> Vec<ModelConfig> {
        let l = self.axes.lists();
        let mut out = Vec::new();
        for &e in l[0] {
            for &h in l[1] {
                for &i in l[2] {
                    for &n in l[3] {
                        for &a in l[4] {
                            let c = ModelConfig {
                                embedding_size: e,
                                hidden_size: h,
                                intermediate_size: i,
                                num_layers: n,
                                num_heads: a,
                                ..self.anchor
                            };
                            if c.validate().is_ok() {
                                out.push(c);
                            }
                        }
                    }
                }
            }
        }
        out.sort_by_key(|c| c.shape());
        out.dedup_by_key(|c| c.shape());
        out
    }
}

pub fn generate_grid(spec: &GridSpec) -> Result<Vec<ModelConfig>> {
    spec.validate()?;
    match spec.mode {
        GridMode::Unidirectional => Ok(spec.unidirectional()),
        GridMode::RandomSample => {
            if spec.sample_count == 0 {
                return Ok(Vec::new());
            }
            let taken: BTreeSet<_> = spec
                .unidirectional()
                .iter()
                .chain(&spec.exclude)
                .map(|c| c.shape())
                .collect();
            let pool: Vec<ModelConfig> = spec
                .lattice()
                .into_iter()
                .filter(|c| !taken.contains(&c.shape()))
                .collect();
            if spec.sample_count > pool.len() {
                return Err(LabError::InvalidConfig(format!(
                    "sample_count {} exceeds the {} available lattice configs",
                    spec.sample_count,
                    pool.len()
                )));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            Ok(sample(&mut rng, pool.len(), spec.sample_count)
                .into_iter()
                .map(|i| pool[i])
                .collect())
        }
    }
}
