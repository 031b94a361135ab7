//! Seeded token-level noise producing the augmented branch of consistency
//! training.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{CLS_ID, PAD_ID, RESERVED};
use crate::error::{Error, Result};
use crate::rng::{rng_for, SeededRng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentKind {
    /// Replace tokens with the pad id.
    TokenDropout,
    /// Replace tokens with a uniformly drawn word.
    UniformReplace,
    /// Replace uninformative (low tf-idf) tokens preferentially.
    TfidfReplace,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentPolicy {
    pub kind: AugmentKind,
    pub rate: f64,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        AugmentPolicy {
            kind: AugmentKind::TokenDropout,
            rate: 0.3,
        }
    }
}

impl AugmentPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.rate) {
            return Err(Error::config(format!("augmentation rate {} outside [0, 1]", self.rate)));
        }
        Ok(())
    }
}

/// Corpus-level tf-idf scores per token id, min-max normalized to `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct TfidfTable {
    scores: Vec<f64>,
    idf: Vec<f64>,
}

impl TfidfTable {
    /// `idf = ln((1 + D) / (1 + df)) + 1`; a token's raw score is its mean
    /// `tf · idf` over the documents containing it. Special ids are ignored.
    pub fn build<S: AsRef<[usize]>>(corpus: &[S], vocab_size: usize) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::data("tf-idf needs a nonempty corpus"));
        }
        let d = corpus.len() as f64;
        let mut df = vec![0usize; vocab_size];
        let mut tf_sum = vec![0.0f64; vocab_size];
        for doc in corpus {
            let words: Vec<usize> = doc.as_ref().iter().copied().filter(|&t| t >= RESERVED).collect();
            let mut counts: HashMap<usize, usize> = HashMap::new();
            for &t in &words {
                if t >= vocab_size {
                    return Err(Error::data(format!("token id {t} outside vocabulary of {vocab_size}")));
                }
                *counts.entry(t).or_default() += 1;
            }
            for (&t, &c) in &counts {
                df[t] += 1;
                tf_sum[t] += c as f64 / words.len() as f64;
            }
        }
        let idf: Vec<f64> = df.iter().map(|&f| ((1.0 + d) / (1.0 + f as f64)).ln() + 1.0).collect();
        let raw: Vec<Option<f64>> = (0..vocab_size)
            .map(|t| (df[t] > 0).then(|| tf_sum[t] / df[t] as f64 * idf[t]))
            .collect();
        let lo = raw.iter().flatten().copied().fold(f64::INFINITY, f64::min);
        let hi = raw.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = hi - lo;
        // unseen tokens count as maximally informative so they are kept
        let scores = raw
            .iter()
            .map(|r| match r {
                Some(v) if span > 0.0 => (v - lo) / span,
                Some(_) => 0.0,
                None => 1.0,
            })
            .collect();
        Ok(TfidfTable { scores, idf })
    }

    pub fn score(&self, id: usize) -> f64 {
        self.scores.get(id).copied().unwrap_or(1.0)
    }

    pub fn idf(&self, id: usize) -> f64 {
        self.idf[id]
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }
}

fn is_special(t: usize) -> bool {
    t == PAD_ID || t == CLS_ID
}

/// A policy bound to a vocabulary (and tf-idf table where the policy needs one).
#[derive(Clone, Debug)]
pub struct Augmenter {
    policy: AugmentPolicy,
    vocab_size: usize,
    tfidf: Option<TfidfTable>,
    /// Cumulative replacement weights `∝ 1 − score` over word ids.
    tfidf_cdf: Vec<f64>,
}

impl Augmenter {
    pub fn new(policy: AugmentPolicy, vocab_size: usize, tfidf: Option<TfidfTable>) -> Result<Self> {
        policy.validate()?;
        if policy.kind != AugmentKind::TokenDropout && vocab_size <= RESERVED + 1 {
            return Err(Error::config("replacement needs at least two word ids"));
        }
        if policy.kind == AugmentKind::TfidfReplace && tfidf.is_none() {
            return Err(Error::config("tfidf_replace needs a tf-idf table"));
        }
        let tfidf_cdf = match &tfidf {
            Some(t) if policy.kind == AugmentKind::TfidfReplace => {
                let mut acc = 0.0;
                (RESERVED..vocab_size)
                    .map(|id| {
                        // small floor keeps every word reachable
                        acc += (1.0 - t.score(id)).max(1e-3);
                        acc
                    })
                    .collect()
            }
            _ => Vec::new(),
        };
        Ok(Augmenter {
            policy,
            vocab_size,
            tfidf,
            tfidf_cdf,
        })
    }

    pub fn policy(&self) -> &AugmentPolicy {
        &self.policy
    }

    fn uniform_word(&self, original: usize, rng: &mut SeededRng) -> usize {
        // uniform over word ids other than `original`
        let n = self.vocab_size - RESERVED;
        if original >= RESERVED && original < self.vocab_size {
            let r = RESERVED + rng.gen_range(0..n - 1);
            if r >= original {
                r + 1
            } else {
                r
            }
        } else {
            RESERVED + rng.gen_range(0..n)
        }
    }

    fn weighted_word(&self, original: usize, rng: &mut SeededRng) -> usize {
        let total = *self.tfidf_cdf.last().unwrap_or(&0.0);
        loop {
            let x = rng.gen::<f64>() * total;
            let i = self
                .tfidf_cdf
                .partition_point(|&c| c <= x)
                .min(self.tfidf_cdf.len() - 1);
            let id = RESERVED + i;
            if id != original {
                return id;
            }
        }
    }

    /// Per-position replacement probabilities for `tokens`.
    pub fn probabilities(&self, tokens: &[usize]) -> Vec<f64> {
        let rate = self.policy.rate;
        match (&self.policy.kind, &self.tfidf) {
            (AugmentKind::TfidfReplace, Some(t)) => {
                let w: Vec<f64> = tokens
                    .iter()
                    .map(|&id| if is_special(id) { 0.0 } else { 1.0 - t.score(id) })
                    .collect();
                let active = tokens.iter().filter(|&&id| !is_special(id)).count();
                let mean = w.iter().sum::<f64>() / active.max(1) as f64;
                w.iter()
                    .map(|&x| if mean > 0.0 { (rate * x / mean).min(1.0) } else { 0.0 })
                    .collect()
            }
            _ => tokens
                .iter()
                .map(|&id| if is_special(id) { 0.0 } else { rate })
                .collect(),
        }
    }

    /// Noised copy of `tokens`, same length; pad and classification ids are kept.
    pub fn apply(&self, tokens: &[usize], rng: &mut SeededRng) -> Vec<usize> {
        let probs = self.probabilities(tokens);
        tokens
            .iter()
            .zip(probs)
            .map(|(&t, p)| {
                if p <= 0.0 || rng.gen::<f64>() >= p {
                    return t;
                }
                match self.policy.kind {
                    AugmentKind::TokenDropout => PAD_ID,
                    AugmentKind::UniformReplace => self.uniform_word(t, rng),
                    AugmentKind::TfidfReplace => self.weighted_word(t, rng),
                }
            })
            .collect()
    }
}

/// One-off augmentation with an explicit seed.
pub fn augment(tokens: &[usize], augmenter: &Augmenter, seed: u64) -> Result<Vec<usize>> {
    if tokens.is_empty() {
        return Err(Error::precondition("cannot augment an empty sequence"));
    }
    Ok(augmenter.apply(tokens, &mut rng_for(seed, "augment-one", 0)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn aug(kind: AugmentKind, rate: f64) -> Augmenter {
        let corpus = vec![vec![1, 3, 4, 5], vec![1, 3, 6, 7, 7], vec![1, 3, 8]];
        let t = TfidfTable::build(&corpus, 10).unwrap();
        Augmenter::new(AugmentPolicy { kind, rate }, 10, Some(t)).unwrap()
    }

    #[test]
    fn zero_rate_is_identity_and_full_dropout_pads_everything() {
        let x = vec![1, 3, 4, 5, 6, 7];
        for k in [
            AugmentKind::TokenDropout,
            AugmentKind::UniformReplace,
            AugmentKind::TfidfReplace,
        ] {
            assert_eq!(augment(&x, &aug(k, 0.0), 3).unwrap(), x);
        }
        assert_eq!(
            augment(&x, &aug(AugmentKind::TokenDropout, 1.0), 3).unwrap(),
            vec![1, 0, 0, 0, 0, 0]
        );
    }

    #[test]
    fn rate_bounds_enforced() {
        let p = AugmentPolicy {
            kind: AugmentKind::TokenDropout,
            rate: 1.5,
        };
        assert!(matches!(Augmenter::new(p, 10, None), Err(Error::Config(_))));
    }

    #[test]
    fn idf_orders_shared_and_rare_words() {
        // {"a b", "a c"} with a=3, b=4, c=5
        let t = TfidfTable::build(&[vec![3, 4], vec![3, 5]], 6).unwrap();
        assert!(t.idf(3) < t.idf(4));
        assert_eq!(t.idf(4), t.idf(5));
        assert!((t.idf(3) - 1.0).abs() < 1e-12);
        assert!(t.scores().iter().all(|s| (0.0..=1.0).contains(s)));
    }

    #[test]
    fn empty_corpus_is_a_data_error() {
        let empty: Vec<Vec<usize>> = Vec::new();
        assert!(matches!(TfidfTable::build(&empty, 5), Err(Error::Data { .. })));
    }

    #[test]
    fn uniform_replace_never_keeps_the_word_it_replaces() {
        let a = aug(AugmentKind::UniformReplace, 1.0);
        let x = vec![1, 3, 4, 5, 6, 7, 8, 9];
        let y = augment(&x, &a, 11).unwrap();
        assert_eq!(y[0], 1);
        for (u, v) in x.iter().zip(&y).skip(1) {
            assert_ne!(u, v);
            assert!((RESERVED..10).contains(v));
        }
    }
}
