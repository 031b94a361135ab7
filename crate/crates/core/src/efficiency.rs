//! Parameter counts, analytic FLOPs, and inference latency.
//!
//! FLOPs convention: one multiply-add is two FLOPs. Headline totals cover
//! matrix products, attention scores and mixing, convolutions and the
//! classifier head. Bias adds, softmax, normalization and activations are
//! excluded from the total but itemized in [`FlopBreakdown::excluded`].

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::autodiff::Real;
use crate::data::TokenBatch;
use crate::error::{Error, Result};
use crate::models::{predict_logits, InspirerConfig, Network, TargetConfig};

pub const FLOPS_CONVENTION: &str = "multiply-add = 2 FLOPs; totals include matmuls, attention, convolutions and \
     classifier heads; bias, softmax, normalization and activation costs are itemized separately";

/// An architecture whose cost can be computed without instantiating it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    Inspirer(InspirerConfig),
    Target(TargetConfig),
}

impl ModelSpec {
    pub fn name(&self) -> &'static str {
        match self {
            ModelSpec::Inspirer(_) => "inspirer",
            ModelSpec::Target(_) => "target",
        }
    }
}

/// Parameters on the inference path, from declared shapes.
/// Feature projections are training-only and excluded.
pub fn count_params(spec: &ModelSpec) -> usize {
    match spec {
        ModelSpec::Inspirer(c) => {
            let d = c.hidden;
            let block = 4 * (d * d + d) + 2 * (2 * d) + (d * c.ff_dim + c.ff_dim) + (c.ff_dim * d + d);
            c.vocab_size * d
                + c.max_len * d
                + c.layers * block
                + (d * c.mlp_hidden + c.mlp_hidden)
                + (c.mlp_hidden * c.classes + c.classes)
        }
        ModelSpec::Target(c) => {
            let convs: usize = c
                .filter_sizes
                .iter()
                .map(|&k| k * c.emb_dim * c.channels + c.channels)
                .sum();
            let feat = c.channels * c.filter_sizes.len();
            c.vocab_size * c.emb_dim + convs + feat * c.classes + c.classes
        }
    }
}

/// Costs outside the headline total, as element-operation counts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ExcludedOps {
    pub bias_adds: u64,
    pub softmax_elements: u64,
    pub norm_elements: u64,
    pub activation_elements: u64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FlopBreakdown {
    /// Q, K, V and output projections.
    pub attention_projections: u64,
    /// Score computation and value mixing.
    pub attention_mixing: u64,
    pub feed_forward: u64,
    pub convolution: u64,
    pub head: u64,
    pub total: u64,
    pub excluded: ExcludedOps,
}

/// FLOPs of one forward pass over a single sequence of `n` tokens.
pub fn estimate_flops(spec: &ModelSpec, n: usize) -> Result<FlopBreakdown> {
    if n == 0 {
        return Err(Error::precondition("sequence length must be at least 1"));
    }
    let n = n as u64;
    let mut f = FlopBreakdown::default();
    match spec {
        ModelSpec::Inspirer(c) => {
            if n > c.max_len as u64 {
                return Err(Error::precondition(format!(
                    "sequence length {n} exceeds max_len {}",
                    c.max_len
                )));
            }
            let (l, d, ff) = (c.layers as u64, c.hidden as u64, c.ff_dim as u64);
            let (mh, cl, h) = (c.mlp_hidden as u64, c.classes as u64, c.heads as u64);
            f.attention_projections = l * 2 * (4 * n * d * d);
            f.attention_mixing = l * 2 * (2 * n * n * d);
            f.feed_forward = l * 2 * (2 * n * d * ff);
            f.head = 2 * (d * mh + mh * cl);
            f.excluded = ExcludedOps {
                bias_adds: l * n * (4 * d + ff + d) + mh + cl,
                softmax_elements: l * h * n * n,
                norm_elements: l * 2 * n * d,
                activation_elements: l * n * ff + mh,
            };
        }
        ModelSpec::Target(c) => {
            let (e, ch) = (c.emb_dim as u64, c.channels as u64);
            let mut conv = 0;
            let mut bias = 0;
            for &k in &c.filter_sizes {
                let k = k as u64;
                if k > n {
                    return Err(Error::precondition(format!(
                        "sequence length {n} shorter than filter size {k}"
                    )));
                }
                conv += 2 * k * e * ch * (n - k + 1);
                bias += ch * (n - k + 1);
            }
            let feat = ch * c.filter_sizes.len() as u64;
            let cl = c.classes as u64;
            f.convolution = conv;
            f.head = 2 * feat * cl;
            f.excluded = ExcludedOps {
                bias_adds: bias + cl,
                softmax_elements: 0,
                norm_elements: 0,
                activation_elements: feat,
            };
        }
    }
    f.total = f.attention_projections + f.attention_mixing + f.feed_forward + f.convolution + f.head;
    Ok(f)
}

/// Wall-clock inference timing.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Latency {
    pub trials: usize,
    /// Mean seconds per example.
    pub mean: f64,
    /// Standard deviation of seconds per example across trials.
    pub std: f64,
}

impl Latency {
    /// How many times faster `self` is than `baseline`.
    pub fn speedup_over(&self, baseline: &Latency) -> f64 {
        baseline.mean / self.mean
    }
}

/// Times eval-mode forwards over `probe`. Two warm-up passes are discarded.
pub fn benchmark_inference<N: Network<Real> + ?Sized>(model: &N, probe: &TokenBatch, trials: usize) -> Result<Latency> {
    if trials < 10 {
        return Err(Error::precondition(format!("need at least 10 trials, got {trials}")));
    }
    for _ in 0..2 {
        predict_logits(model, probe)?;
    }
    let mut samples = Vec::with_capacity(trials);
    for _ in 0..trials {
        let t = Instant::now();
        let out = predict_logits(model, probe)?;
        std::hint::black_box(out);
        samples.push(t.elapsed().as_secs_f64() / probe.batch as f64);
    }
    let mean = samples.iter().sum::<f64>() / trials as f64;
    let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (trials - 1) as f64;
    Ok(Latency {
        trials,
        mean,
        std: var.sqrt(),
    })
}

/// Cost summary of one architecture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub convention: String,
    pub model: String,
    pub seq_len: usize,
    pub params: usize,
    pub flops: FlopBreakdown,
    pub latency: Option<Latency>,
    pub baseline: Option<String>,
    pub speedup: Option<f64>,
}

impl CostReport {
    pub fn analyze(spec: &ModelSpec, seq_len: usize) -> Result<Self> {
        Ok(CostReport {
            convention: FLOPS_CONVENTION.to_string(),
            model: spec.name().to_string(),
            seq_len,
            params: count_params(spec),
            flops: estimate_flops(spec, seq_len)?,
            latency: None,
            baseline: None,
            speedup: None,
        })
    }

    /// Fills in the speedup relative to a baseline report with a latency.
    pub fn compare_to(&mut self, baseline: &CostReport) {
        if let (Some(mine), Some(theirs)) = (&self.latency, &baseline.latency) {
            self.speedup = Some(mine.speedup_over(theirs));
            self.baseline = Some(baseline.model.clone());
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{InspirerModel, TargetModel};

    fn tiny_target() -> TargetConfig {
        TargetConfig {
            filter_sizes: vec![2],
            channels: 3,
            emb_dim: 4,
            vocab_size: 10,
            classes: 2,
            ..TargetConfig::default()
        }
    }

    #[test]
    fn hand_counted_textcnn_has_75_parameters() {
        assert_eq!(count_params(&ModelSpec::Target(tiny_target())), 75);
    }

    #[test]
    fn closed_form_matches_instantiated_models() {
        let t = TargetModel::<Real>::new(tiny_target(), 0).unwrap();
        assert_eq!(t.inference_param_count(), 75);
        let ic = InspirerConfig {
            layers: 2,
            hidden: 8,
            heads: 2,
            ff_dim: 12,
            vocab_size: 20,
            max_len: 9,
            classes: 3,
            mlp_hidden: 5,
            projection_dim: 4,
            dropout: 0.1,
        };
        let m = InspirerModel::<Real>::new(ic.clone(), 0).unwrap();
        assert_eq!(m.inference_param_count(), count_params(&ModelSpec::Inspirer(ic)));
    }

    #[test]
    fn single_position_single_filter_conv_cost() {
        let c = TargetConfig {
            filter_sizes: vec![1],
            ..tiny_target()
        };
        let f = estimate_flops(&ModelSpec::Target(c), 1).unwrap();
        assert_eq!(f.convolution, 2 * 4 * 3);
    }

    #[test]
    fn attention_cost_is_quadratic_in_length() {
        let s = ModelSpec::Inspirer(InspirerConfig::default());
        let f = |n| estimate_flops(&s, n).unwrap();
        assert_eq!(f(64).attention_mixing as f64 / f(32).attention_mixing as f64, 4.0);
        // with a narrow model the quadratic term dominates the whole count
        let narrow = ModelSpec::Inspirer(InspirerConfig {
            hidden: 4,
            heads: 1,
            ff_dim: 8,
            max_len: 128,
            ..InspirerConfig::default()
        });
        let t = |n| estimate_flops(&narrow, n).unwrap().total as f64;
        let ratio = t(128) / t(64);
        assert!((ratio - 4.0).abs() / 4.0 < 0.15, "{ratio}");
    }
}
