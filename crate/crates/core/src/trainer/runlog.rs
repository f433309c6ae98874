//! Training log: CSV of records plus a JSON sidecar with the run's settings.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::OptimizerHyper;
use crate::costmodel::FlopsMode;
use crate::error::{LabError, Result};
use crate::model::ModelConfig;

pub const CSV_HEADER: &str = "step,tokens_seen,flops,train_loss,eval_loss,eval_ppl";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub step: u64,
    pub tokens_seen: u64,
    pub flops: f64,
    pub train_loss: f64,
    pub eval_loss: f64,
    pub eval_ppl: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub run_id: String,
    pub config: ModelConfig,
    pub hyper: OptimizerHyper,
    pub seed: u64,
    pub flops_mode: FlopsMode,
    /// Per-sequence cost used for the `flops` column.
    pub c_seq: f64,
    /// Updates actually performed; below `hyper.total_steps` if data ran out.
    pub steps_completed: u64,
    #[serde(skip)]
    pub records: Vec<RunRecord>,
}

impl RunLog {
    pub fn last(&self) -> Option<&RunRecord> {
        self.records.last()
    }

    /// Checks ordering and the derived columns.
    pub fn validate(&self) -> Result<()> {
        for w in self.records.windows(2) {
            if w[1].step <= w[0].step {
                return Err(LabError::Format("steps must be strictly increasing".into()));
            }
            if w[1].flops < w[0].flops {
                return Err(LabError::Format("flops must be non-decreasing".into()));
            }
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{:e},{},{},{}\n",
                r.step, r.tokens_seen, r.flops, r.train_loss, r.eval_loss, r.eval_ppl
            ));
        }
        out
    }

    pub fn parse_csv(text: &str) -> Result<Vec<RunRecord>> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == CSV_HEADER => {}
            _ => return Err(LabError::Parse { line: 1, msg: format!("expected header {CSV_HEADER}") }),
        }
        let mut out = Vec::new();
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            let err = |msg: String| LabError::Parse { line: i + 1, msg };
            if f.len() != 6 {
                return Err(err(format!("expected 6 fields, found {}", f.len())));
            }
            let num = |s: &str| s.trim().parse::<f64>().map_err(|e| err(format!("{s}: {e}")));
            let int = |s: &str| s.trim().parse::<u64>().map_err(|e| err(format!("{s}: {e}")));
            out.push(RunRecord {
                step: int(f[0])?,
                tokens_seen: int(f[1])?,
                flops: num(f[2])?,
                train_loss: num(f[3])?,
                eval_loss: num(f[4])?,
                eval_ppl: num(f[5])?,
            });
        }
        Ok(out)
    }

    /// Sidecar path for a CSV path: same stem, `.json`.
    pub fn sidecar_path(csv: &Path) -> PathBuf {
        csv.with_extension("json")
    }

    pub fn save(&self, csv: &Path) -> Result<()> {
        if let Some(dir) = csv.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(csv, self.to_csv())?;
        fs::write(Self::sidecar_path(csv), serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(csv: &Path) -> Result<Self> {
        let mut log: RunLog = serde_json::from_str(&fs::read_to_string(Self::sidecar_path(csv))?)?;
        log.records = Self::parse_csv(&fs::read_to_string(csv)?)?;
        log.validate()?;
        Ok(log)
    }
}
