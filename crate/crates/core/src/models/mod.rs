//! The inspirer (transformer) and target (TextCNN) networks as functions of
//! their parameter stores.

mod checkpoint;
mod config;
mod inspirer;
mod target;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CheckpointModel};
pub use config::{Activation, InspirerConfig, TargetConfig};
pub use inspirer::{attention_block, multi_head_attention, BlockVars, InspirerModel, SeqLayout};
pub use target::{conv1d_bank, TargetModel};

use crate::autodiff::{Bound, Element, Graph, ParamStore, Var};
use crate::data::TokenBatch;
use crate::error::Result;
use crate::rng::SeededRng;

/// Forward mode. Training mode carries the dropout RNG.
pub enum Mode<'a> {
    Train(&'a mut SeededRng),
    Eval,
}

impl Mode<'_> {
    pub fn is_train(&self) -> bool {
        matches!(self, Mode::Train(_))
    }

    pub(crate) fn dropout<F: Element>(&mut self, g: &mut Graph<F>, x: Var, p: f64) -> Result<Var> {
        match self {
            Mode::Train(rng) => g.dropout(x, p, *rng),
            Mode::Eval => Ok(x),
        }
    }
}

/// Graph handles produced by one forward pass over a batch.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    /// `[batch × classes]`
    pub logits: Var,
    /// Classification-token state (inspirer) or concatenated pooled filters (target).
    pub pooled: Var,
    /// Per-layer hidden states `[batch·seq × hidden]` keyed by layer index (inspirer),
    /// or per-size pooled vectors `[batch × channels]` keyed by filter size (target).
    pub intermediates: Vec<(usize, Var)>,
    /// Raw per-size feature maps (target only).
    pub feature_maps: Vec<(usize, Var)>,
    /// `(start row, valid length)` of each sequence in the stacked hidden states.
    pub row_groups: Vec<(usize, usize)>,
}

impl ForwardTrace {
    pub fn intermediate(&self, key: usize) -> Option<Var> {
        self.intermediates.iter().find(|(k, _)| *k == key).map(|&(_, v)| v)
    }
}

/// Shared surface of both networks.
pub trait Network<F: Element> {
    fn params(&self) -> &ParamStore<F>;
    fn params_mut(&mut self) -> &mut ParamStore<F>;
    fn classes(&self) -> usize;
    /// Shortest padded sequence the network accepts.
    fn min_seq(&self) -> usize;
    /// Longest sequence the network accepts, if bounded.
    fn max_seq(&self) -> Option<usize>;
    fn forward(&self, g: &mut Graph<F>, p: &Bound, batch: &TokenBatch, mode: Mode<'_>) -> Result<ForwardTrace>;
    /// Projects the intermediates named by `keys` into the shared feature space.
    fn project(
        &self,
        g: &mut Graph<F>,
        p: &Bound,
        trace: &ForwardTrace,
        keys: &[usize],
        activation: Activation,
    ) -> Result<Vec<Var>>;
    /// Parameters used on the inference path (projection heads excluded).
    fn inference_param_count(&self) -> usize;
}

pub(crate) fn linear<F: Element>(g: &mut Graph<F>, x: Var, w: Var, b: Var) -> Result<Var> {
    let y = g.matmul(x, w)?;
    g.add_row(y, b)
}

pub(crate) fn activate<F: Element>(g: &mut Graph<F>, x: Var, act: Activation) -> Var {
    match act {
        Activation::None => x,
        Activation::Relu => g.relu(x),
        Activation::Tanh => g.tanh(x),
    }
}

/// Eval-mode logits for a batch as plain `f64` rows.
pub fn predict_logits<F: Element, N: Network<F> + ?Sized>(model: &N, batch: &TokenBatch) -> Result<Vec<Vec<f64>>> {
    let mut g = Graph::new();
    let p = model.params().bind(&mut g, false);
    let trace = model.forward(&mut g, &p, batch, Mode::Eval)?;
    let v = g.value(trace.logits);
    Ok((0..v.rows())
        .map(|r| v.row(r).iter().map(|x| x.as_f64()).collect())
        .collect())
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}
