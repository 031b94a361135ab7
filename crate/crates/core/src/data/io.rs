use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{DatasetBundle, LabeledText, Vocab, PAD_ID};
use crate::autodiff::{Real, Tensor};
use crate::error::{Error, Result};
use crate::rng::rng_for;

#[derive(Debug, Serialize, Deserialize)]
struct Record {
    label: Option<usize>,
    text: String,
}

/// Contents of one dataset file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct JsonlSplit {
    pub labeled: Vec<LabeledText>,
    /// Records whose label is null.
    pub unlabeled: Vec<String>,
}

/// Reads `{"label": int|null, "text": string}` records, one per line.
/// Blank lines are skipped.
pub fn load_jsonl(path: &Path) -> Result<JsonlSplit> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = JsonlSplit::default();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line).map_err(|e| Error::Data {
            line: Some(i + 1),
            msg: format!("{}: {e}", path.display()),
        })?;
        match rec.label {
            Some(label) => out.labeled.push(LabeledText { text: rec.text, label }),
            None => out.unlabeled.push(rec.text),
        }
    }
    Ok(out)
}

pub fn write_jsonl<'a>(path: &Path, records: impl IntoIterator<Item = (Option<usize>, &'a str)>) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    for (label, text) in records {
        let line = serde_json::to_string(&Record {
            label,
            text: text.to_string(),
        })
        .map_err(|e| Error::data(e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Assembles a bundle from separate files. Null-label records in the
/// training file join the unlabeled pool; `classes` defaults to one more than
/// the largest label seen.
pub fn load_bundle(
    train: &Path,
    unlabeled: Option<&Path>,
    dev: &Path,
    test: &Path,
    classes: Option<usize>,
) -> Result<DatasetBundle> {
    let tr = load_jsonl(train)?;
    let mut pool = tr.unlabeled;
    if let Some(p) = unlabeled {
        let u = load_jsonl(p)?;
        pool.extend(u.unlabeled);
        // labels in the unlabeled file are ignored by construction
        pool.extend(u.labeled.into_iter().map(|e| e.text));
    }
    let dev = load_jsonl(dev)?.labeled;
    let test = load_jsonl(test)?.labeled;
    let seen = tr
        .labeled
        .iter()
        .chain(&dev)
        .chain(&test)
        .map(|e| e.label + 1)
        .max()
        .unwrap_or(0);
    let bundle = DatasetBundle {
        labeled: tr.labeled,
        unlabeled: pool,
        dev,
        test,
        classes: classes.unwrap_or(seen.max(2)),
    };
    bundle.validate()?;
    Ok(bundle)
}

/// Embedding table in the word-per-line text format (`token v1 … vdim`).
///
/// An optional `count dim` header line is skipped. Rows for vocabulary words
/// absent from the file are drawn from uniform(−0.05, 0.05); the pad row is zero.
pub fn load_embeddings(path: &Path, vocab: &Vocab, dim: usize, seed: u64) -> Result<Tensor<Real>> {
    let mut rng = rng_for(seed, "embedding-init", 0);
    let mut table: Vec<Real> = (0..vocab.len() * dim).map(|_| rng.gen_range(-0.05..0.05)).collect();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let mut parts = line.split_whitespace();
        let Some(word) = parts.next() else { continue };
        let values = parts
            .map(|s| s.parse::<Real>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Data {
                line: Some(i + 1),
                msg: format!("{}: {e}", path.display()),
            })?;
        if i == 0 && values.len() == 1 && word.parse::<usize>().is_ok() {
            continue;
        }
        if values.len() != dim {
            return Err(Error::config(format!(
                "{} line {}: expected {dim} values, found {}",
                path.display(),
                i + 1,
                values.len()
            )));
        }
        let id = vocab.id(word);
        if vocab.token(id) == Some(word) && id >= super::RESERVED {
            table[id * dim..(id + 1) * dim].copy_from_slice(&values);
        }
    }
    table[PAD_ID * dim..(PAD_ID + 1) * dim].fill(0.0);
    Tensor::new(vec![vocab.len(), dim], table)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn null_labels_route_to_unlabeled_pool() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        let recs = [(Some(0), "a"), (None, "b"), (Some(1), "c"), (None, "d"), (None, "e")];
        write_jsonl(&p, recs).unwrap();
        let s = load_jsonl(&p).unwrap();
        assert_eq!((s.labeled.len(), s.unlabeled.len()), (2, 3));
    }

    #[test]
    fn malformed_line_reports_its_number() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        std::fs::write(&p, "{\"label\":0,\"text\":\"x\"}\n{oops}\n").unwrap();
        match load_jsonl(&p) {
            Err(Error::Data { line: Some(2), .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn embeddings_match_by_token_and_zero_the_pad_row() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.txt");
        std::fs::write(&p, "2 3\ncat 0.1 0.2 0.3\nzebra 1 1 1\n").unwrap();
        let vocab = Vocab::build(["cat dog"], 1, None);
        let t = load_embeddings(&p, &vocab, 3, 0).unwrap();
        assert_eq!(t.row(vocab.id("cat")), &[0.1, 0.2, 0.3]);
        assert!(t.row(PAD_ID).iter().all(|&v| v == 0.0));
        assert!(t.row(vocab.id("dog")).iter().all(|v| v.abs() < 0.05));
    }

    #[test]
    fn embedding_dimension_mismatch_is_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.txt");
        std::fs::write(&p, "cat 0.1 0.2\n").unwrap();
        let vocab = Vocab::build(["cat"], 1, None);
        assert!(matches!(load_embeddings(&p, &vocab, 3, 0), Err(Error::Config(_))));
    }
}
