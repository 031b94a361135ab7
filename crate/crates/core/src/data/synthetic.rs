use std::collections::HashSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{DatasetBundle, LabeledText};
use crate::error::{Error, Result};
use crate::rng::{rng_for, SeededRng};

/// Parameters of a keyword-injection text corpus.
///
/// Every position draws, with probability `injection_rate`, a keyword from the
/// example's class set, otherwise a background word. Class keyword sets are
/// disjoint from each other and from the background vocabulary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub classes: usize,
    /// Background vocabulary size.
    pub vocab_size: usize,
    pub keywords_per_class: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub injection_rate: f64,
    /// Probability that a labeled training example carries a wrong label.
    pub label_noise: f64,
    pub n_labeled: usize,
    pub n_unlabeled: usize,
    pub n_dev: usize,
    pub n_test: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec::reference()
    }
}

impl SyntheticSpec {
    /// Two classes, 20 labeled and 2000 unlabeled examples, 10% label noise.
    pub fn reference() -> Self {
        SyntheticSpec {
            classes: 2,
            vocab_size: 200,
            keywords_per_class: 30,
            min_len: 8,
            max_len: 16,
            injection_rate: 0.25,
            label_noise: 0.1,
            n_labeled: 20,
            n_unlabeled: 2000,
            n_dev: 200,
            n_test: 1000,
            seed: 17,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::config(format!("need at least 2 classes, got {}", self.classes)));
        }
        if !(self.injection_rate > 0.0 && self.injection_rate <= 1.0) {
            return Err(Error::config(format!(
                "injection rate {} outside (0, 1]",
                self.injection_rate
            )));
        }
        if !(0.0..=1.0).contains(&self.label_noise) {
            return Err(Error::config(format!(
                "label noise {} outside [0, 1]",
                self.label_noise
            )));
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return Err(Error::config("length range must satisfy 1 <= min_len <= max_len"));
        }
        if self.keywords_per_class == 0 || self.vocab_size == 0 {
            return Err(Error::config(
                "keyword sets and background vocabulary must be non-empty",
            ));
        }
        Ok(())
    }

    pub fn keyword(class: usize, j: usize) -> String {
        format!("k{class}x{j}")
    }

    pub fn background(j: usize) -> String {
        format!("w{j}")
    }

    /// Class keyword sets, pairwise disjoint by construction.
    pub fn keyword_sets(&self) -> Vec<Vec<String>> {
        (0..self.classes)
            .map(|c| (0..self.keywords_per_class).map(|j| Self::keyword(c, j)).collect())
            .collect()
    }
}

fn draw(spec: &SyntheticSpec, rng: &mut SeededRng) -> (String, usize) {
    let label = rng.gen_range(0..spec.classes);
    let len = rng.gen_range(spec.min_len..=spec.max_len);
    let words: Vec<String> = (0..len)
        .map(|_| {
            if rng.gen::<f64>() < spec.injection_rate {
                SyntheticSpec::keyword(label, rng.gen_range(0..spec.keywords_per_class))
            } else {
                SyntheticSpec::background(rng.gen_range(0..spec.vocab_size))
            }
        })
        .collect();
    (words.join(" "), label)
}

/// Deterministic corpus for `spec`. Texts are unique across all splits.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<DatasetBundle> {
    spec.validate()?;
    let mut seen = HashSet::new();
    let mut split = |name: &str, n: usize| -> Vec<(String, usize)> {
        let mut rng = rng_for(spec.seed, name, 0);
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            let (text, label) = draw(spec, &mut rng);
            if seen.insert(text.clone()) {
                out.push((text, label));
            }
        }
        out
    };
    let test = split("synthetic-test", spec.n_test);
    let dev = split("synthetic-dev", spec.n_dev);
    let labeled = split("synthetic-labeled", spec.n_labeled);
    let unlabeled = split("synthetic-unlabeled", spec.n_unlabeled);

    let mut noise_rng = rng_for(spec.seed, "synthetic-noise", 0);
    let labeled = labeled
        .into_iter()
        .map(|(text, label)| {
            let label = if noise_rng.gen::<f64>() < spec.label_noise {
                let shift = noise_rng.gen_range(1..spec.classes);
                (label + shift) % spec.classes
            } else {
                label
            };
            LabeledText { text, label }
        })
        .collect();
    let to_lab = |v: Vec<(String, usize)>| -> Vec<LabeledText> {
        v.into_iter().map(|(text, label)| LabeledText { text, label }).collect()
    };
    Ok(DatasetBundle {
        labeled,
        unlabeled: unlabeled.into_iter().map(|(t, _)| t).collect(),
        dev: to_lab(dev),
        test: to_lab(test),
        classes: spec.classes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SyntheticSpec {
        SyntheticSpec {
            n_labeled: 30,
            n_unlabeled: 50,
            n_dev: 20,
            n_test: 40,
            ..SyntheticSpec::reference()
        }
    }

    /// Counts class keywords and predicts the class with the most hits.
    fn keyword_vote(spec: &SyntheticSpec, text: &str) -> usize {
        let mut counts = vec![0usize; spec.classes];
        for w in text.split_whitespace() {
            for (c, set) in spec.keyword_sets().iter().enumerate() {
                if set.iter().any(|k| k == w) {
                    counts[c] += 1;
                }
            }
        }
        (0..spec.classes)
            .max_by_key(|&c| (counts[c], std::cmp::Reverse(c)))
            .unwrap()
    }

    #[test]
    fn keyword_oracle_is_perfect_without_noise() {
        let spec = SyntheticSpec {
            injection_rate: 1.0,
            label_noise: 0.0,
            classes: 3,
            ..small()
        };
        let b = generate_synthetic(&spec).unwrap();
        for e in &b.test {
            assert_eq!(keyword_vote(&spec, &e.text), e.label);
        }
    }

    #[test]
    fn same_seed_same_bundle() {
        assert_eq!(
            generate_synthetic(&small()).unwrap(),
            generate_synthetic(&small()).unwrap()
        );
        let other = SyntheticSpec { seed: 99, ..small() };
        assert_ne!(
            generate_synthetic(&small()).unwrap(),
            generate_synthetic(&other).unwrap()
        );
    }

    #[test]
    fn class_priors_are_uniform() {
        let spec = SyntheticSpec {
            n_labeled: 0,
            n_unlabeled: 0,
            n_dev: 0,
            n_test: 10_000,
            min_len: 10,
            max_len: 20,
            ..SyntheticSpec::reference()
        };
        let b = generate_synthetic(&spec).unwrap();
        let ones = b.test.iter().filter(|e| e.label == 1).count() as f64;
        // binomial(10^4, 0.5): sd = 50; allow 5 sd
        assert!((ones - 5000.0).abs() < 250.0, "{ones}");
    }

    #[test]
    fn rejects_single_class() {
        let spec = SyntheticSpec { classes: 1, ..small() };
        assert!(matches!(generate_synthetic(&spec), Err(Error::Config(_))));
    }

    #[test]
    fn splits_are_disjoint_and_sized() {
        let b = generate_synthetic(&small()).unwrap();
        assert_eq!((b.n(), b.m(), b.dev.len(), b.test.len()), (30, 50, 20, 40));
        let test: HashSet<&str> = b.test.iter().map(|e| e.text.as_str()).collect();
        assert!(b.training_texts().all(|t| !test.contains(t)));
    }

    #[test]
    fn label_noise_flips_about_the_stated_fraction() {
        let spec = SyntheticSpec {
            n_labeled: 4000,
            n_unlabeled: 0,
            n_dev: 0,
            n_test: 0,
            label_noise: 0.1,
            injection_rate: 1.0,
            ..SyntheticSpec::reference()
        };
        let b = generate_synthetic(&spec).unwrap();
        let flipped = b
            .labeled
            .iter()
            .filter(|e| keyword_vote(&spec, &e.text) != e.label)
            .count();
        // binomial(4000, 0.1): sd ≈ 19
        assert!((flipped as f64 - 400.0).abs() < 95.0, "{flipped}");
    }
}
