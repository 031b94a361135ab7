use super::config::{Activation, InspirerConfig};
use super::{activate, linear, ForwardTrace, Mode, Network};
use crate::autodiff::{Bound, Element, Graph, ParamGroup, ParamStore, Real, Tensor, Var};
use crate::data::{TokenBatch, CLS_ID};
use crate::error::{Error, Result};
use crate::rng::rng_for;

const LN_EPS: f64 = 1e-5;

/// How stacked sequences are laid out in a `[batch·seq × hidden]` tensor.
#[derive(Clone, Debug)]
pub struct SeqLayout {
    pub heads: usize,
    pub batch: usize,
    pub seq: usize,
    /// Valid (unpadded) length of each sequence.
    pub lens: Vec<usize>,
}

/// Graph handles for one encoder block.
#[derive(Clone, Copy, Debug)]
pub struct BlockVars {
    pub wq: Var,
    pub bq: Var,
    pub wk: Var,
    pub bk: Var,
    pub wv: Var,
    pub bv: Var,
    pub wo: Var,
    pub bo: Var,
    pub ln1_g: Var,
    pub ln1_b: Var,
    pub ff1_w: Var,
    pub ff1_b: Var,
    pub ff2_w: Var,
    pub ff2_b: Var,
    pub ln2_g: Var,
    pub ln2_b: Var,
}

impl BlockVars {
    pub fn bind<F: Element>(p: &Bound, store: &ParamStore<F>, layer: usize) -> Result<Self> {
        let v = |s: &str| p.var(store, &format!("layer{layer}.{s}"));
        Ok(BlockVars {
            wq: v("wq")?,
            bq: v("bq")?,
            wk: v("wk")?,
            bk: v("bk")?,
            wv: v("wv")?,
            bv: v("bv")?,
            wo: v("wo")?,
            bo: v("bo")?,
            ln1_g: v("ln1.g")?,
            ln1_b: v("ln1.b")?,
            ff1_w: v("ff1.w")?,
            ff1_b: v("ff1.b")?,
            ff2_w: v("ff2.w")?,
            ff2_b: v("ff2.b")?,
            ln2_g: v("ln2.g")?,
            ln2_b: v("ln2.b")?,
        })
    }
}

/// Multi-head self-attention including the output projection, before the residual.
pub fn multi_head_attention<F: Element>(g: &mut Graph<F>, x: Var, p: &BlockVars, layout: &SeqLayout) -> Result<Var> {
    let q = linear(g, x, p.wq, p.bq)?;
    let k = linear(g, x, p.wk, p.bk)?;
    let v = linear(g, x, p.wv, p.bv)?;
    let a = g.attention(q, k, v, layout.heads, layout.batch, layout.seq, &layout.lens)?;
    linear(g, a, p.wo, p.bo)
}

/// Post-norm encoder block: attention, residual, layer norm, feed-forward,
/// residual, layer norm.
pub fn attention_block<F: Element>(
    g: &mut Graph<F>,
    x: Var,
    p: &BlockVars,
    layout: &SeqLayout,
    dropout: f64,
    mode: &mut Mode<'_>,
) -> Result<Var> {
    let a = multi_head_attention(g, x, p, layout)?;
    let a = mode.dropout(g, a, dropout)?;
    let r = g.add(x, a)?;
    let h = g.layer_norm(r, p.ln1_g, p.ln1_b, LN_EPS)?;
    let f = linear(g, h, p.ff1_w, p.ff1_b)?;
    let f = g.relu(f);
    let f = linear(g, f, p.ff2_w, p.ff2_b)?;
    let f = mode.dropout(g, f, dropout)?;
    let r = g.add(h, f)?;
    g.layer_norm(r, p.ln2_g, p.ln2_b, LN_EPS)
}

/// Transformer encoder with a two-layer classifier on the classification
/// token and one feature projection per layer.
#[derive(Clone, Debug, PartialEq)]
pub struct InspirerModel<F: Element = Real> {
    pub config: InspirerConfig,
    pub params: ParamStore<F>,
}

impl<F: Element> InspirerModel<F> {
    pub fn new(config: InspirerConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng_for(seed, "inspirer-init", 0);
        let c = &config;
        let (d, ff) = (c.hidden, c.ff_dim);
        let mut s = ParamStore::new();
        let enc = ParamGroup::Encoder;
        let head = ParamGroup::Head;
        s.insert_uniform("tok_emb", enc, &[c.vocab_size, d], 0.1, &mut rng);
        s.insert_uniform("pos_emb", enc, &[c.max_len, d], 0.1, &mut rng);
        for l in 0..c.layers {
            for w in ["wq", "wk", "wv", "wo"] {
                s.insert_glorot(format!("layer{l}.{w}"), enc, d, d, &mut rng);
                let b = w.replace('w', "b");
                s.insert(format!("layer{l}.{b}"), enc, Tensor::zeros(&[d]));
            }
            s.insert(format!("layer{l}.ln1.g"), enc, Tensor::filled(&[d], F::one()));
            s.insert(format!("layer{l}.ln1.b"), enc, Tensor::zeros(&[d]));
            s.insert_glorot(format!("layer{l}.ff1.w"), enc, d, ff, &mut rng);
            s.insert(format!("layer{l}.ff1.b"), enc, Tensor::zeros(&[ff]));
            s.insert_glorot(format!("layer{l}.ff2.w"), enc, ff, d, &mut rng);
            s.insert(format!("layer{l}.ff2.b"), enc, Tensor::zeros(&[d]));
            s.insert(format!("layer{l}.ln2.g"), enc, Tensor::filled(&[d], F::one()));
            s.insert(format!("layer{l}.ln2.b"), enc, Tensor::zeros(&[d]));
        }
        s.insert_glorot("cls.w1", head, d, c.mlp_hidden, &mut rng);
        s.insert("cls.b1", head, Tensor::zeros(&[c.mlp_hidden]));
        s.insert_glorot("cls.w2", head, c.mlp_hidden, c.classes, &mut rng);
        s.insert("cls.b2", head, Tensor::zeros(&[c.classes]));
        for l in 0..c.layers {
            s.insert_glorot(format!("proj{l}.w"), head, d, c.projection_dim, &mut rng);
            s.insert(format!("proj{l}.b"), head, Tensor::zeros(&[c.projection_dim]));
        }
        Ok(InspirerModel { config, params: s })
    }
}

impl<F: Element> Network<F> for InspirerModel<F> {
    fn params(&self) -> &ParamStore<F> {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore<F> {
        &mut self.params
    }

    fn classes(&self) -> usize {
        self.config.classes
    }

    fn min_seq(&self) -> usize {
        1
    }

    fn max_seq(&self) -> Option<usize> {
        Some(self.config.max_len)
    }

    fn forward(&self, g: &mut Graph<F>, p: &Bound, batch: &TokenBatch, mut mode: Mode<'_>) -> Result<ForwardTrace> {
        let c = &self.config;
        let s = &self.params;
        let (b, n) = (batch.batch, batch.seq);
        if n > c.max_len {
            return Err(Error::precondition(format!(
                "sequence length {n} exceeds inspirer max_len {}",
                c.max_len
            )));
        }
        if (0..b).any(|i| batch.ids[i * n] != CLS_ID) {
            return Err(Error::precondition(
                "inspirer input must start with the classification token",
            ));
        }
        let tok = g.embedding(p.var(s, "tok_emb")?, &batch.ids, None)?;
        let pos_ids: Vec<usize> = (0..b).flat_map(|_| 0..n).collect();
        let pos = g.embedding(p.var(s, "pos_emb")?, &pos_ids, None)?;
        let mut x = g.add(tok, pos)?;
        x = mode.dropout(g, x, c.dropout)?;

        let layout = SeqLayout {
            heads: c.heads,
            batch: b,
            seq: n,
            lens: batch.lens.clone(),
        };
        let mut hidden = Vec::with_capacity(c.layers);
        for l in 0..c.layers {
            let bv = BlockVars::bind(p, s, l)?;
            x = attention_block(g, x, &bv, &layout, c.dropout, &mut mode)?;
            hidden.push((l, x));
        }
        let cls_rows: Vec<usize> = (0..b).map(|i| i * n).collect();
        let h = g.select_rows(x, &cls_rows)?;
        let hd = mode.dropout(g, h, c.dropout)?;
        let z = linear(g, hd, p.var(s, "cls.w1")?, p.var(s, "cls.b1")?)?;
        let z = g.tanh(z);
        let logits = linear(g, z, p.var(s, "cls.w2")?, p.var(s, "cls.b2")?)?;
        Ok(ForwardTrace {
            logits,
            pooled: h,
            intermediates: hidden,
            feature_maps: Vec::new(),
            row_groups: (0..b).map(|i| (i * n, batch.lens[i])).collect(),
        })
    }

    /// Mean over valid positions of each requested layer, then `act(MLP(·))`.
    fn project(
        &self,
        g: &mut Graph<F>,
        p: &Bound,
        trace: &ForwardTrace,
        keys: &[usize],
        activation: Activation,
    ) -> Result<Vec<Var>> {
        let s = &self.params;
        keys.iter()
            .map(|&l| {
                let h = trace.intermediate(l).ok_or_else(|| {
                    Error::config(format!(
                        "alignment references transformer layer {l}, model has {}",
                        self.config.layers
                    ))
                })?;
                let summary = g.mean_rows(h, &trace.row_groups)?;
                let y = linear(
                    g,
                    summary,
                    p.var(s, &format!("proj{l}.w"))?,
                    p.var(s, &format!("proj{l}.b"))?,
                )?;
                Ok(activate(g, y, activation))
            })
            .collect()
    }

    fn inference_param_count(&self) -> usize {
        self.params
            .iter()
            .filter(|p| !p.name.starts_with("proj"))
            .map(|p| p.value.numel())
            .sum()
    }
}
