use std::collections::HashMap;
use std::fs;
use std::path::Path;

use super::{CLS_ID, PAD_ID, RESERVED, UNK_ID};
use crate::error::{Error, Result};

pub const PAD_TOKEN: &str = "<pad>";
pub const CLS_TOKEN: &str = "[CLS]";
pub const UNK_TOKEN: &str = "<unk>";

/// Lowercases, splits on whitespace and splits punctuation into separate tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        let mut word = String::new();
        for ch in chunk.chars() {
            if ch.is_alphanumeric() || ch == '_' {
                word.extend(ch.to_lowercase());
            } else {
                if !word.is_empty() {
                    out.push(std::mem::take(&mut word));
                }
                out.push(ch.to_lowercase().collect());
            }
        }
        if !word.is_empty() {
            out.push(word);
        }
    }
    out
}

/// Word vocabulary. Ids 0, 1, 2 are pad, classification and unknown; the
/// remainder is ordered by descending corpus frequency, ties broken lexically.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < RESERVED
            || tokens[PAD_ID] != PAD_TOKEN
            || tokens[CLS_ID] != CLS_TOKEN
            || tokens[UNK_ID] != UNK_TOKEN
        {
            return Err(Error::data("vocabulary must start with <pad>, [CLS], <unk>"));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Data {
                    line: Some(i + 1),
                    msg: format!("duplicate vocabulary entry {t:?}"),
                });
            }
        }
        Ok(Vocab { tokens, index })
    }

    /// Builds from texts, keeping tokens seen at least `min_count` times and
    /// at most `max_size` entries in total.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>, min_count: usize, max_size: Option<usize>) -> Self {
        let mut counts: HashMap<String, usize> = HashMap::new();
        for t in texts {
            for tok in tokenize(t) {
                *counts.entry(tok).or_default() += 1;
            }
        }
        let mut words: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(w, c)| *c >= min_count.max(1) && ![PAD_TOKEN, CLS_TOKEN, UNK_TOKEN].contains(&w.as_str()))
            .collect();
        words.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        if let Some(max) = max_size {
            words.truncate(max.saturating_sub(RESERVED));
        }
        let tokens = [PAD_TOKEN, CLS_TOKEN, UNK_TOKEN]
            .into_iter()
            .map(String::from)
            .chain(words.into_iter().map(|(w, _)| w))
            .collect();
        Self::from_tokens(tokens).expect("reserved ids are in place")
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Classification token followed by word ids, truncated to `max_len` ids in total.
    pub fn encode(&self, text: &str, max_len: usize) -> Vec<usize> {
        std::iter::once(CLS_ID)
            .chain(tokenize(text).iter().map(|t| self.id(t)))
            .take(max_len.max(1))
            .collect()
    }

    /// As [`encode`](Self::encode), then right-padded to at least `min_len`.
    pub fn encode_padded(&self, text: &str, max_len: usize, min_len: usize) -> Vec<usize> {
        let mut ids = self.encode(text, max_len);
        if ids.len() < min_len {
            ids.resize(min_len, PAD_ID);
        }
        ids
    }

    /// Word tokens for `ids`, skipping pad and classification tokens.
    pub fn decode(&self, ids: &[usize]) -> Vec<&str> {
        ids.iter()
            .filter(|&&i| i != PAD_ID && i != CLS_ID)
            .map(|&i| self.token(i).unwrap_or(UNK_TOKEN))
            .collect()
    }

    /// One token per line; line number minus one is the id.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut s = self.tokens.join("\n");
        s.push('\n');
        fs::write(path, s).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_tokens(s.lines().map(String::from).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn punctuation_splits_and_case_folds() {
        assert_eq!(tokenize("Hello, World!"), ["hello", ",", "world", "!"]);
        let v = Vocab::build(["Hello hello"], 1, None);
        let ids = v.encode("Hello hello", 16);
        assert_eq!(ids[0], CLS_ID);
        assert_eq!(ids[1], ids[2]);
        assert_ne!(ids[1], UNK_ID);
    }

    #[test]
    fn empty_text_pads_to_min_length() {
        let v = Vocab::build(["a"], 1, None);
        assert_eq!(
            v.encode_padded("", 256, 5),
            vec![CLS_ID, PAD_ID, PAD_ID, PAD_ID, PAD_ID]
        );
    }

    #[test]
    fn truncates_to_max_len() {
        let text: Vec<String> = (0..300).map(|i| format!("w{i}")).collect();
        let text = text.join(" ");
        let v = Vocab::build([text.as_str()], 1, None);
        assert_eq!(v.encode(&text, 256).len(), 256);
    }

    #[test]
    fn frequency_order_and_reserved_ids() {
        let v = Vocab::build(["b a a c c c"], 1, None);
        assert_eq!(v.tokens(), [PAD_TOKEN, CLS_TOKEN, UNK_TOKEN, "c", "a", "b"]);
        assert_eq!(v.id("zzz"), UNK_ID);
    }

    #[test]
    fn decode_then_encode_round_trips() {
        let v = Vocab::build(["the cat sat on the mat"], 1, None);
        let ids = v.encode("the mat sat", 32);
        let words = v.decode(&ids).join(" ");
        assert_eq!(v.encode(&words, 32), ids);
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let v = Vocab::build(["x y z y"], 1, None);
        let p = dir.path().join("vocab.txt");
        v.save(&p).unwrap();
        assert_eq!(Vocab::load(&p).unwrap(), v);
    }
}
