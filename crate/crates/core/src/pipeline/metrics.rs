use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::LossBreakdown;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Inspirer,
    Distill,
    Supervised,
}

/// One line of the metrics stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum MetricRecord {
    Step {
        stage: Stage,
        epoch: usize,
        step: usize,
        /// Annealing threshold, when annealing applies.
        eta: Option<f64>,
        #[serde(flatten)]
        losses: LossBreakdown,
    },
    Epoch {
        stage: Stage,
        epoch: usize,
        network: String,
        dev_accuracy: f64,
    },
    Final {
        stage: Stage,
        best_epoch: usize,
        dev_accuracy: f64,
        test_accuracy: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub phase: String,
    pub seconds: f64,
}

/// Records of one run. Wall-clock timings are kept apart so the stream
/// itself is reproducible bit for bit.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunMetrics {
    pub records: Vec<MetricRecord>,
    pub timings: Vec<Timing>,
}

impl RunMetrics {
    pub fn steps(&self) -> impl Iterator<Item = (usize, &LossBreakdown)> {
        self.records.iter().filter_map(|r| match r {
            MetricRecord::Step { step, losses, .. } => Some((*step, losses)),
            _ => None,
        })
    }

    /// Dev accuracy after each epoch; epoch 0 is the initialization.
    pub fn dev_curve(&self) -> Vec<f64> {
        self.records
            .iter()
            .filter_map(|r| match r {
                MetricRecord::Epoch { dev_accuracy, .. } => Some(*dev_accuracy),
                _ => None,
            })
            .collect()
    }

    pub fn test_accuracy(&self) -> Option<f64> {
        self.records.iter().rev().find_map(|r| match r {
            MetricRecord::Final { test_accuracy, .. } => Some(*test_accuracy),
            _ => None,
        })
    }

    pub fn best_dev_accuracy(&self) -> Option<f64> {
        self.records.iter().rev().find_map(|r| match r {
            MetricRecord::Final { dev_accuracy, .. } => Some(*dev_accuracy),
            _ => None,
        })
    }

    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        for r in &self.records {
            s.push_str(&serde_json::to_string(r).expect("records serialize"));
            s.push('\n');
        }
        s
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(f);
        w.write_all(self.to_jsonl().as_bytes())
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn total_seconds(&self) -> f64 {
        self.timings.iter().map(|t| t.seconds).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_records_flatten_the_breakdown() {
        let r = MetricRecord::Step {
            stage: Stage::Distill,
            epoch: 1,
            step: 4,
            eta: None,
            losses: LossBreakdown {
                l_ce: 0.5,
                total: 0.5,
                ..Default::default()
            },
        };
        let s = serde_json::to_string(&r).unwrap();
        assert!(s.starts_with(r#"{"record":"step","stage":"distill""#), "{s}");
        assert!(s.contains(r#""l_ce":0.5"#));
        let back: MetricRecord = serde_json::from_str(&s).unwrap();
        assert_eq!(back, r);
    }
}
