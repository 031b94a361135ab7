use super::config::{Activation, TargetConfig};
use super::{activate, linear, ForwardTrace, Mode, Network};
use crate::autodiff::{Bound, Element, Graph, ParamGroup, ParamStore, Real, Tensor, Var};
use crate::data::{TokenBatch, PAD_ID};
use crate::error::{Error, Result};
use crate::rng::rng_for;

/// One valid convolution per filter size over stacked embeddings.
///
/// `banks` holds `(size, weight, bias)` triples; returns `(size, map)` pairs
/// with maps of shape `[batch·(seq−size+1) × channels]`.
pub fn conv1d_bank<F: Element>(
    g: &mut Graph<F>,
    emb: Var,
    banks: &[(usize, Var, Var)],
    batch: usize,
    seq: usize,
) -> Result<Vec<(usize, Var)>> {
    banks
        .iter()
        .map(|&(k, w, b)| Ok((k, g.conv1d(emb, w, b, batch, seq, k)?)))
        .collect()
}

/// TextCNN: embeddings, one convolution bank per filter size, max-over-time
/// pooling, a linear classifier and one feature projection per size.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetModel<F: Element = Real> {
    pub config: TargetConfig,
    pub params: ParamStore<F>,
}

impl<F: Element> TargetModel<F> {
    pub fn new(config: TargetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng_for(seed, "target-init", 0);
        let c = &config;
        let mut s = ParamStore::new();
        let enc = ParamGroup::Encoder;
        let head = ParamGroup::Head;
        let id = s.insert_uniform("emb", enc, &[c.vocab_size, c.emb_dim], 0.05, &mut rng);
        s.params_mut()[id].value.data_mut()[..c.emb_dim].fill(F::zero());
        for &k in &c.filter_sizes {
            s.insert_glorot(format!("conv{k}.w"), enc, k * c.emb_dim, c.channels, &mut rng);
            s.insert(format!("conv{k}.b"), enc, Tensor::zeros(&[c.channels]));
        }
        let feat = c.channels * c.filter_sizes.len();
        s.insert_glorot("cls.w", head, feat, c.classes, &mut rng);
        s.insert("cls.b", head, Tensor::zeros(&[c.classes]));
        for &k in &c.filter_sizes {
            s.insert_glorot(format!("proj{k}.w"), head, c.channels, c.projection_dim, &mut rng);
            s.insert(format!("proj{k}.b"), head, Tensor::zeros(&[c.projection_dim]));
        }
        Ok(TargetModel { config, params: s })
    }

    /// Replaces the embedding table, e.g. with pretrained vectors. The pad row is zeroed.
    pub fn set_embeddings(&mut self, table: Tensor<F>) -> Result<()> {
        let want = [self.config.vocab_size, self.config.emb_dim];
        if table.shape() != want {
            return Err(Error::Dimension {
                op: "set_embeddings",
                lhs: want.to_vec(),
                rhs: table.shape().to_vec(),
            });
        }
        let dst = self.params.get_mut("emb")?;
        *dst = table;
        let d = self.config.emb_dim;
        dst.data_mut()[PAD_ID * d..(PAD_ID + 1) * d].fill(F::zero());
        Ok(())
    }
}

impl<F: Element> Network<F> for TargetModel<F> {
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
        self.config.max_filter()
    }

    fn max_seq(&self) -> Option<usize> {
        None
    }

    fn forward(&self, g: &mut Graph<F>, p: &Bound, batch: &TokenBatch, mut mode: Mode<'_>) -> Result<ForwardTrace> {
        let c = &self.config;
        let s = &self.params;
        let (b, n) = (batch.batch, batch.seq);
        if n < c.max_filter() {
            return Err(Error::precondition(format!(
                "padded length {n} shorter than largest filter {}",
                c.max_filter()
            )));
        }
        let emb = g.embedding(p.var(s, "emb")?, &batch.ids, Some(PAD_ID))?;
        let banks = c
            .filter_sizes
            .iter()
            .map(|&k| Ok((k, p.var(s, &format!("conv{k}.w"))?, p.var(s, &format!("conv{k}.b"))?)))
            .collect::<Result<Vec<_>>>()?;
        let maps = conv1d_bank(g, emb, &banks, b, n)?;
        let mut pooled = Vec::with_capacity(maps.len());
        for &(k, m) in &maps {
            // relu∘maxpool equals maxpool∘relu, at a fraction of the cost
            let mp = g.maxpool_time(m, b)?;
            pooled.push((k, g.relu(mp)));
        }
        let vars: Vec<Var> = pooled.iter().map(|&(_, v)| v).collect();
        let cat = g.concat_cols(&vars)?;
        let cd = mode.dropout(g, cat, c.dropout)?;
        let logits = linear(g, cd, p.var(s, "cls.w")?, p.var(s, "cls.b")?)?;
        Ok(ForwardTrace {
            logits,
            pooled: cat,
            intermediates: pooled,
            feature_maps: maps,
            row_groups: (0..b).map(|i| (i * n, batch.lens[i])).collect(),
        })
    }

    /// `act(MLP(·))` of the pooled vector of each requested filter size.
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
            .map(|&k| {
                let h = trace.intermediate(k).ok_or_else(|| {
                    Error::config(format!(
                        "alignment references filter size {k}, model has {:?}",
                        self.config.filter_sizes
                    ))
                })?;
                let y = linear(g, h, p.var(s, &format!("proj{k}.w"))?, p.var(s, &format!("proj{k}.b"))?)?;
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
