use std::path::{Path, PathBuf};

use serde::Serialize;

use super::{RunConfig, RunMetrics, Stage};
use crate::data::Vocab;
use crate::error::{Error, Result};
use crate::models::{save_checkpoint, CheckpointModel};

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const VOCAB_FILE: &str = "vocab.txt";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const TIMING_FILE: &str = "timing.json";

#[derive(Serialize)]
struct Manifest<'a> {
    stage: Stage,
    model: &'static str,
    seed: u64,
    crate_version: &'static str,
    alignment: Option<String>,
    test_accuracy: Option<f64>,
    config: &'a RunConfig,
}

fn write(path: &Path, contents: &[u8]) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Writes checkpoint, vocabulary, metrics, manifest and timings into `dir`.
pub fn write_run(
    dir: &Path,
    stage: Stage,
    config: &RunConfig,
    vocab: &Vocab,
    model: &CheckpointModel,
    metrics: &RunMetrics,
    alignment: Option<String>,
) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let ckpt = dir.join(CHECKPOINT_FILE);
    save_checkpoint(&ckpt, model)?;
    vocab.save(&dir.join(VOCAB_FILE))?;
    metrics.write_jsonl(&dir.join(METRICS_FILE))?;
    let manifest = Manifest {
        stage,
        model: model.kind(),
        seed: config.seed,
        crate_version: env!("CARGO_PKG_VERSION"),
        alignment,
        test_accuracy: metrics.test_accuracy(),
        config,
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::config(e.to_string()))?;
    write(&dir.join(MANIFEST_FILE), json.as_bytes())?;
    let timing = serde_json::to_string_pretty(&metrics.timings).map_err(|e| Error::config(e.to_string()))?;
    write(&dir.join(TIMING_FILE), timing.as_bytes())?;
    Ok(ckpt)
}
