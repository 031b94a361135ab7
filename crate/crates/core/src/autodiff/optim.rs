use super::params::{ParamGroup, ParamStore};
use super::tensor::Element;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub encoder_lr: f64,
    pub head_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn new(lr: f64) -> Self {
        AdamConfig {
            encoder_lr: lr,
            head_lr: lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn with_group_lrs(encoder_lr: f64, head_lr: f64) -> Self {
        AdamConfig {
            encoder_lr,
            head_lr,
            ..Self::new(encoder_lr)
        }
    }

    fn lr(&self, group: ParamGroup) -> f64 {
        match group {
            ParamGroup::Encoder => self.encoder_lr,
            ParamGroup::Head => self.head_lr,
        }
    }
}

/// Adam with bias correction. Parameters that received no gradient are skipped
/// and their moment estimates left untouched.
#[derive(Clone, Debug)]
pub struct Adam<F> {
    config: AdamConfig,
    step: u64,
    m: Vec<Vec<F>>,
    v: Vec<Vec<F>>,
}

impl<F: Element> Adam<F> {
    pub fn new(config: AdamConfig, store: &ParamStore<F>) -> Result<Self> {
        if !(config.encoder_lr > 0.0 && config.head_lr > 0.0) {
            return Err(Error::config(format!(
                "learning rates must be positive, got {} / {}",
                config.encoder_lr, config.head_lr
            )));
        }
        let zeros = |s: &ParamStore<F>| -> Vec<Vec<F>> { s.iter().map(|p| vec![F::zero(); p.value.numel()]).collect() };
        Ok(Adam {
            config,
            step: 0,
            m: zeros(store),
            v: zeros(store),
        })
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, store: &mut ParamStore<F>, grads: &[Option<Vec<F>>]) -> Result<()> {
        if grads.len() != store.len() || self.m.len() != store.len() {
            return Err(Error::Dimension {
                op: "adam_step",
                lhs: vec![store.len()],
                rhs: vec![grads.len()],
            });
        }
        self.step += 1;
        let c = &self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let (b1, b2) = (F::of(c.beta1), F::of(c.beta2));
        let (ob1, ob2) = (F::of(1.0 - c.beta1), F::of(1.0 - c.beta2));
        let eps = F::of(c.eps);
        for (i, param) in store.params_mut().iter_mut().enumerate() {
            let Some(g) = &grads[i] else { continue };
            if g.len() != param.value.numel() {
                return Err(Error::Dimension {
                    op: "adam_step",
                    lhs: param.value.shape().to_vec(),
                    rhs: vec![g.len()],
                });
            }
            let lr = self.config.lr(param.group);
            let step_size = F::of(lr / bc1);
            let inv_bc2 = F::of(1.0 / bc2);
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (((p, &gv), mv), vv) in param
                .value
                .data_mut()
                .iter_mut()
                .zip(g)
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *mv = b1 * *mv + ob1 * gv;
                *vv = b2 * *vv + ob2 * gv * gv;
                let denom = (*vv * inv_bc2).sqrt() + eps;
                *p -= step_size * *mv / denom;
            }
        }
        Ok(())
    }
}
