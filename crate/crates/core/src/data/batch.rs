use rand::seq::SliceRandom;

use super::{EncodedDataset, LabeledExample, PAD_ID};
use crate::augment::Augmenter;
use crate::error::{Error, Result};
use crate::rng::rng_for;

/// Right-padded token ids for a batch, stacked row-major as `[batch × seq]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenBatch {
    pub ids: Vec<usize>,
    pub batch: usize,
    pub seq: usize,
    /// Unpadded length of each sequence.
    pub lens: Vec<usize>,
}

impl TokenBatch {
    /// Pads every sequence to the batch maximum, but never below `min_len`.
    pub fn from_sequences<S: AsRef<[usize]>>(seqs: &[S], min_len: usize) -> Result<Self> {
        if seqs.is_empty() {
            return Err(Error::precondition("empty batch"));
        }
        let lens: Vec<usize> = seqs.iter().map(|s| s.as_ref().len()).collect();
        if lens.contains(&0) {
            return Err(Error::precondition("empty sequence in batch"));
        }
        let seq = lens.iter().copied().max().unwrap_or(0).max(min_len);
        let mut ids = Vec::with_capacity(seqs.len() * seq);
        for s in seqs {
            let s = s.as_ref();
            ids.extend_from_slice(s);
            ids.extend(std::iter::repeat_n(PAD_ID, seq - s.len()));
        }
        Ok(TokenBatch {
            ids,
            batch: seqs.len(),
            seq,
            lens,
        })
    }

    pub fn row(&self, i: usize) -> &[usize] {
        &self.ids[i * self.seq..i * self.seq + self.lens[i]]
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabeledBatch {
    pub tokens: TokenBatch,
    pub labels: Vec<usize>,
}

/// Unlabeled inputs `u` with their augmented counterparts `a`, row-aligned.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PairBatch {
    pub original: TokenBatch,
    pub augmented: TokenBatch,
}

/// Everything consumed by one optimizer step.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StepBatch {
    pub labeled: LabeledBatch,
    pub unlabeled: Option<PairBatch>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BatchConfig {
    pub labeled_batch: usize,
    /// Unlabeled batch size as a multiple of the labeled batch size.
    pub unsup_ratio: usize,
    /// Padding floor, normally the largest filter size.
    pub min_len: usize,
}

impl BatchConfig {
    pub fn unlabeled_batch(&self) -> usize {
        self.labeled_batch * self.unsup_ratio
    }
}

fn ceil_div(a: usize, b: usize) -> usize {
    a.div_ceil(b)
}

/// Optimizer steps per epoch: the longer of the two streams sets the pace.
/// Without unlabeled data only the labeled stream counts.
pub fn steps_per_epoch(n: usize, m: usize, cfg: &BatchConfig, semi_supervised: bool) -> usize {
    let sup = ceil_div(n, cfg.labeled_batch);
    if semi_supervised {
        sup.max(ceil_div(m, cfg.unlabeled_batch()))
    } else {
        sup
    }
}

/// Index batches for one stream. The stream that sets the step count yields
/// its natural batches, with a short final one; a shorter stream is cycled.
fn stream(order: &[usize], batch: usize, steps: usize) -> Vec<Vec<usize>> {
    let natural = ceil_div(order.len(), batch);
    if natural >= steps {
        return order.chunks(batch).map(<[usize]>::to_vec).collect();
    }
    let take = batch.min(order.len());
    (0..steps)
        .map(|s| (0..take).map(|j| order[(s * take + j) % order.len()]).collect())
        .collect()
}

/// The step batches of one epoch.
///
/// With `augment` present the unlabeled pool is consumed as `(u, a)` pairs;
/// without it the run is purely supervised. Every shuffle and augmentation
/// draw is derived from `(seed, epoch)`.
pub fn make_batches(
    data: &EncodedDataset,
    cfg: &BatchConfig,
    augment: Option<&Augmenter>,
    seed: u64,
    epoch: usize,
) -> Result<Vec<StepBatch>> {
    if cfg.labeled_batch == 0 || cfg.unsup_ratio == 0 {
        return Err(Error::config("batch sizes must be positive"));
    }
    if data.labeled.is_empty() {
        return Err(Error::data("labeled pool is empty"));
    }
    let ssl = augment.is_some();
    if ssl && data.unlabeled.is_empty() {
        return Err(Error::data("semi-supervised training needs a nonempty unlabeled pool"));
    }
    let steps = steps_per_epoch(data.labeled.len(), data.unlabeled.len(), cfg, ssl);
    let e = epoch as u64;

    let mut lab_order: Vec<usize> = (0..data.labeled.len()).collect();
    lab_order.shuffle(&mut rng_for(seed, "labeled-order", e));
    let lab_batches = stream(&lab_order, cfg.labeled_batch, steps);

    let unl_batches = if ssl {
        let mut order: Vec<usize> = (0..data.unlabeled.len()).collect();
        order.shuffle(&mut rng_for(seed, "unlabeled-order", e));
        stream(&order, cfg.unlabeled_batch(), steps)
    } else {
        Vec::new()
    };

    let mut aug_rng = rng_for(seed, "augment", e);
    let mut out = Vec::with_capacity(steps);
    for s in 0..steps {
        let picked: Vec<&LabeledExample> = lab_batches[s].iter().map(|&i| &data.labeled[i]).collect();
        let tokens: Vec<&[usize]> = picked.iter().map(|e| e.tokens.as_slice()).collect();
        let labeled = LabeledBatch {
            tokens: TokenBatch::from_sequences(&tokens, cfg.min_len)?,
            labels: picked.iter().map(|e| e.label).collect(),
        };
        let unlabeled = match augment {
            Some(aug) => {
                let orig: Vec<&[usize]> = unl_batches[s].iter().map(|&i| data.unlabeled[i].as_slice()).collect();
                let augd: Vec<Vec<usize>> = orig.iter().map(|u| aug.apply(u, &mut aug_rng)).collect();
                Some(PairBatch {
                    original: TokenBatch::from_sequences(&orig, cfg.min_len)?,
                    augmented: TokenBatch::from_sequences(&augd, cfg.min_len)?,
                })
            }
            None => None,
        };
        out.push(StepBatch { labeled, unlabeled });
    }
    Ok(out)
}
