//! Tokenization, vocabulary, corpus ingestion and batch assembly.

mod batch;
mod io;
mod synthetic;
mod vocab;

pub use batch::{make_batches, steps_per_epoch, BatchConfig, LabeledBatch, PairBatch, StepBatch, TokenBatch};
pub use io::{load_bundle, load_embeddings, load_jsonl, write_jsonl, JsonlSplit};
pub use synthetic::{generate_synthetic, SyntheticSpec};
pub use vocab::{tokenize, Vocab};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD_ID: usize = 0;
pub const CLS_ID: usize = 1;
pub const UNK_ID: usize = 2;
/// Number of reserved ids at the start of every vocabulary.
pub const RESERVED: usize = 3;

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LabeledText {
    pub text: String,
    pub label: usize,
}

/// Raw text splits. `labeled` is X, `unlabeled` is U.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct DatasetBundle {
    pub labeled: Vec<LabeledText>,
    pub unlabeled: Vec<String>,
    pub dev: Vec<LabeledText>,
    pub test: Vec<LabeledText>,
    pub classes: usize,
}

impl DatasetBundle {
    /// Labeled count `n`.
    pub fn n(&self) -> usize {
        self.labeled.len()
    }

    /// Unlabeled count `m`.
    pub fn m(&self) -> usize {
        self.unlabeled.len()
    }

    pub fn validate(&self) -> Result<()> {
        for split in [&self.labeled, &self.dev, &self.test] {
            if let Some(bad) = split.iter().find(|e| e.label >= self.classes) {
                return Err(Error::data(format!(
                    "label {} out of range for {} classes",
                    bad.label, self.classes
                )));
            }
        }
        Ok(())
    }

    /// Texts used to build the vocabulary: training material only.
    pub fn training_texts(&self) -> impl Iterator<Item = &str> {
        self.labeled
            .iter()
            .map(|e| e.text.as_str())
            .chain(self.unlabeled.iter().map(String::as_str))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct LabeledExample {
    pub tokens: Vec<usize>,
    pub label: usize,
}

/// A bundle after tokenization against a fixed vocabulary.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedDataset {
    pub labeled: Vec<LabeledExample>,
    pub unlabeled: Vec<Vec<usize>>,
    pub dev: Vec<LabeledExample>,
    pub test: Vec<LabeledExample>,
    pub classes: usize,
}

impl EncodedDataset {
    pub fn encode(bundle: &DatasetBundle, vocab: &Vocab, max_len: usize) -> Result<Self> {
        bundle.validate()?;
        let lab = |split: &[LabeledText]| -> Vec<LabeledExample> {
            split
                .iter()
                .map(|e| LabeledExample {
                    tokens: vocab.encode(&e.text, max_len),
                    label: e.label,
                })
                .collect()
        };
        Ok(EncodedDataset {
            labeled: lab(&bundle.labeled),
            unlabeled: bundle.unlabeled.iter().map(|t| vocab.encode(t, max_len)).collect(),
            dev: lab(&bundle.dev),
            test: lab(&bundle.test),
            classes: bundle.classes,
        })
    }
}
