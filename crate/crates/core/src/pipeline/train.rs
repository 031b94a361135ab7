use std::time::Instant;

use super::metrics::{MetricRecord, RunMetrics, Stage, Timing};
use super::{AlignmentSpec, RunConfig};
use crate::augment::{AugmentKind, Augmenter, TfidfTable};
use crate::autodiff::{Adam, AdamConfig, Graph, Real, Tensor};
use crate::data::{
    generate_synthetic, load_bundle, load_embeddings, make_batches, steps_per_epoch, BatchConfig, DatasetBundle,
    EncodedDataset, LabeledExample, StepBatch, TokenBatch, Vocab,
};
use crate::error::{Error, Result};
use crate::losses::{
    inspirer_objective, target_objective, Components, InspirerInputs, LossBreakdown, StudentBranch, TargetInputs,
    TeacherSignals, TsaKind, TsaSchedule,
};
use crate::models::{argmax, predict_logits, InspirerModel, Mode, Network, TargetModel};
use crate::rng::rng_for;

/// A config with its data loaded, tokenized and bound to a vocabulary.
///
/// `config` is resolved: model vocabulary sizes and class counts match the data.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub config: RunConfig,
    pub bundle: DatasetBundle,
    pub vocab: Vocab,
    pub data: EncodedDataset,
    pub augmenter: Augmenter,
    pub embeddings: Option<Tensor<Real>>,
}

impl Prepared {
    pub fn batch_config(&self) -> BatchConfig {
        BatchConfig {
            labeled_batch: self.config.train.labeled_batch,
            unsup_ratio: self.config.train.unsup_ratio,
            min_len: self.config.target.max_filter(),
        }
    }

    /// Steps per epoch of every semi-supervised stage, and of the
    /// budget-matched supervised baseline.
    pub fn steps_per_epoch(&self) -> usize {
        steps_per_epoch(
            self.data.labeled.len(),
            self.data.unlabeled.len(),
            &self.batch_config(),
            true,
        )
    }

    fn batches(&self, epoch: usize) -> Result<Vec<StepBatch>> {
        make_batches(
            &self.data,
            &self.batch_config(),
            Some(&self.augmenter),
            self.config.seed,
            epoch,
        )
    }
}

/// Loads or generates the data and resolves data-dependent config fields.
pub fn prepare(config: &RunConfig) -> Result<Prepared> {
    config.validate()?;
    let d = &config.data;
    let bundle = match &d.synthetic {
        Some(spec) => generate_synthetic(spec)?,
        None => {
            let need = |p: &Option<std::path::PathBuf>, what: &str| {
                p.clone()
                    .ok_or_else(|| Error::config(format!("data.{what} is required")))
            };
            load_bundle(
                &need(&d.train, "train")?,
                d.unlabeled.as_deref(),
                &need(&d.dev, "dev")?,
                &need(&d.test, "test")?,
                d.classes,
            )?
        }
    };
    let vocab = Vocab::build(bundle.training_texts(), d.min_count.max(1), d.max_vocab);
    let mut config = config.clone();
    config.inspirer.vocab_size = vocab.len();
    config.target.vocab_size = vocab.len();
    config.inspirer.classes = bundle.classes;
    config.target.classes = bundle.classes;
    config.inspirer.validate()?;
    config.target.validate()?;
    let data = EncodedDataset::encode(&bundle, &vocab, config.inspirer.max_len)?;
    let tfidf = match config.augment.kind {
        AugmentKind::TfidfReplace => {
            let corpus: Vec<&[usize]> = data
                .labeled
                .iter()
                .map(|e| e.tokens.as_slice())
                .chain(data.unlabeled.iter().map(Vec::as_slice))
                .collect();
            Some(TfidfTable::build(&corpus, vocab.len())?)
        }
        _ => None,
    };
    let augmenter = Augmenter::new(config.augment, vocab.len(), tfidf)?;
    let embeddings = match &d.embeddings {
        Some(p) => Some(load_embeddings(p, &vocab, config.target.emb_dim, config.seed)?),
        None => None,
    };
    Ok(Prepared {
        config,
        bundle,
        vocab,
        data,
        augmenter,
        embeddings,
    })
}

/// Fraction of `examples` whose argmax prediction equals the label.
pub fn accuracy<N: Network<Real> + ?Sized>(model: &N, examples: &[LabeledExample], batch: usize) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::precondition("cannot evaluate on an empty split"));
    }
    let mut correct = 0usize;
    for chunk in examples.chunks(batch.max(1)) {
        let seqs: Vec<&[usize]> = chunk.iter().map(|e| e.tokens.as_slice()).collect();
        let tb = TokenBatch::from_sequences(&seqs, model.min_seq())?;
        let logits = predict_logits(model, &tb)?;
        correct += logits.iter().zip(chunk).filter(|(z, e)| argmax(z) == e.label).count();
    }
    Ok(correct as f64 / examples.len() as f64)
}

fn diverged(step: usize, bd: &LossBreakdown) -> Result<()> {
    if bd.total.is_finite() {
        Ok(())
    } else {
        Err(Error::Divergence {
            step,
            msg: format!("loss is not finite: {bd:?}"),
        })
    }
}

/// Keeps the parameters with the best dev accuracy; ties keep the earlier epoch.
struct BestDev<M> {
    model: M,
    epoch: usize,
    accuracy: f64,
}

impl<M: Clone> BestDev<M> {
    fn offer(&mut self, model: &M, epoch: usize, accuracy: f64) {
        if accuracy > self.accuracy {
            self.model = model.clone();
            self.epoch = epoch;
            self.accuracy = accuracy;
        }
    }
}

fn elapsed(phase: &str, t: Instant) -> Timing {
    Timing {
        phase: phase.into(),
        seconds: t.elapsed().as_secs_f64(),
    }
}

pub struct Trained<M> {
    /// Best-dev parameters.
    pub model: M,
    pub metrics: RunMetrics,
}

/// Stage 1: annealed cross-entropy on labeled data plus consistency between
/// each unlabeled input and its augmentation.
pub fn train_inspirer(prep: &Prepared) -> Result<Trained<InspirerModel>> {
    let cfg = &prep.config;
    let start = Instant::now();
    let mut model = InspirerModel::<Real>::new(cfg.inspirer.clone(), cfg.seed)?;
    let mut adam = Adam::new(
        AdamConfig::with_group_lrs(cfg.train.inspirer_encoder_lr, cfg.train.inspirer_head_lr),
        &model.params,
    )?;
    let spe = prep.steps_per_epoch();
    let tsa = TsaSchedule {
        kind: cfg.train.tsa,
        total_steps: spe * cfg.train.inspirer_epochs,
        classes: cfg.inspirer.classes,
    };
    let eval_batch = cfg.train.eval_batch;
    let mut metrics = RunMetrics::default();
    let init_dev = accuracy(&model, &prep.data.dev, eval_batch)?;
    metrics.records.push(MetricRecord::Epoch {
        stage: Stage::Inspirer,
        epoch: 0,
        network: "inspirer".into(),
        dev_accuracy: init_dev,
    });
    let mut best = BestDev {
        model: model.clone(),
        epoch: 0,
        accuracy: init_dev,
    };
    let mut step = 0usize;
    for epoch in 1..=cfg.train.inspirer_epochs {
        for batch in prep.batches(epoch - 1)? {
            let mut rng = rng_for(cfg.seed, "inspirer-dropout", step as u64);
            let mut g = Graph::<Real>::new();
            let p = model.params.bind(&mut g, true);
            let lab = model.forward(&mut g, &p, &batch.labeled.tokens, Mode::Train(&mut rng))?;
            let unlabeled = match &batch.unlabeled {
                Some(pair) => {
                    let aug = model.forward(&mut g, &p, &pair.augmented, Mode::Train(&mut rng))?;
                    // clean branch: a no-grad graph, used only as the KL reference
                    let mut gc = Graph::<Real>::new();
                    let pc = model.params.bind(&mut gc, false);
                    let clean = model.forward(&mut gc, &pc, &pair.original, Mode::Train(&mut rng))?;
                    let reference = g.constant(gc.value(clean.logits).clone());
                    Some((reference, aug.logits))
                }
                None => None,
            };
            let inputs = InspirerInputs {
                labeled_logits: lab.logits,
                labels: &batch.labeled.labels,
                unlabeled,
            };
            let (total, losses, eta) = inspirer_objective(&mut g, &inputs, &tsa, step)?;
            diverged(step, &losses)?;
            g.backward(total)?;
            adam.step(&mut model.params, &p.grads(&g))?;
            metrics.records.push(MetricRecord::Step {
                stage: Stage::Inspirer,
                epoch,
                step,
                eta: (cfg.train.tsa != TsaKind::None).then_some(eta),
                losses,
            });
            step += 1;
        }
        let dev = accuracy(&model, &prep.data.dev, eval_batch)?;
        metrics.records.push(MetricRecord::Epoch {
            stage: Stage::Inspirer,
            epoch,
            network: "inspirer".into(),
            dev_accuracy: dev,
        });
        best.offer(&model, epoch, dev);
    }
    let test = accuracy(&best.model, &prep.data.test, eval_batch)?;
    metrics.records.push(MetricRecord::Final {
        stage: Stage::Inspirer,
        best_epoch: best.epoch,
        dev_accuracy: best.accuracy,
        test_accuracy: test,
    });
    metrics.timings.push(elapsed("train_inspirer", start));
    Ok(Trained {
        model: best.model,
        metrics,
    })
}

/// A frozen inspirer and the layers it exposes to feature distillation.
pub struct Teacher<'a> {
    pub model: &'a InspirerModel,
    pub alignment: AlignmentSpec,
}

impl Teacher<'_> {
    /// Eval-mode logits and projected features, computed in a separate graph.
    fn signals(&self, batch: &TokenBatch, activation: crate::models::Activation) -> Result<TeacherSignals<Real>> {
        let mut g = Graph::<Real>::new();
        let p = self.model.params.bind(&mut g, false);
        let trace = self.model.forward(&mut g, &p, batch, Mode::Eval)?;
        let feats = self
            .model
            .project(&mut g, &p, &trace, &self.alignment.layers(), activation)?;
        Ok(TeacherSignals {
            logits: g.value(trace.logits).clone(),
            features: feats.into_iter().map(|v| g.value(v).clone()).collect(),
        })
    }
}

fn check_teacher(prep: &Prepared, teacher: &InspirerModel, alignment: &AlignmentSpec) -> Result<()> {
    let (ic, tc) = (&teacher.config, &prep.config.target);
    if ic.vocab_size != tc.vocab_size {
        return Err(Error::config(format!(
            "inspirer vocabulary has {} entries, data vocabulary {}",
            ic.vocab_size, tc.vocab_size
        )));
    }
    if ic.classes != tc.classes {
        return Err(Error::config(format!(
            "inspirer predicts {} classes, data has {}",
            ic.classes, tc.classes
        )));
    }
    if ic.projection_dim != tc.projection_dim {
        return Err(Error::config(format!(
            "projection dims differ: inspirer {}, target {}",
            ic.projection_dim, tc.projection_dim
        )));
    }
    if tc.max_filter() > ic.max_len {
        return Err(Error::config("largest filter exceeds the inspirer's maximum length"));
    }
    alignment.validate(ic.layers, &tc.filter_sizes)
}

/// Trains a target network. With a teacher this is stage 2; without one,
/// only cross-entropy may be enabled and the run is the supervised baseline.
fn train_target(
    prep: &Prepared,
    teacher: Option<&Teacher<'_>>,
    components: &Components,
    stage: Stage,
) -> Result<Trained<TargetModel>> {
    let cfg = &prep.config;
    let start = Instant::now();
    if teacher.is_none() && components.needs_teacher() {
        return Err(Error::Usage("distillation components need an inspirer".into()));
    }
    let mut model = TargetModel::<Real>::new(cfg.target.clone(), cfg.seed)?;
    if let Some(table) = &prep.embeddings {
        model.set_embeddings(table.clone())?;
    }
    let mut adam = Adam::new(AdamConfig::new(cfg.train.target_lr), &model.params)?;
    let sizes: Vec<usize> = teacher.map(|t| t.alignment.sizes()).unwrap_or_default();
    let act = cfg.target.projection_activation;
    let use_unlabeled = components.needs_teacher() || components.consistency;
    let eval_batch = cfg.train.eval_batch;
    let mut metrics = RunMetrics::default();
    let init_dev = accuracy(&model, &prep.data.dev, eval_batch)?;
    metrics.records.push(MetricRecord::Epoch {
        stage,
        epoch: 0,
        network: "target".into(),
        dev_accuracy: init_dev,
    });
    let mut best = BestDev {
        model: model.clone(),
        epoch: 0,
        accuracy: init_dev,
    };
    let mut step = 0usize;
    for epoch in 1..=cfg.train.target_epochs {
        for batch in prep.batches(epoch - 1)? {
            let mut rng = rng_for(cfg.seed, "target-dropout", step as u64);
            let mut g = Graph::<Real>::new();
            let p = model.params.bind(&mut g, true);
            let lt = model.forward(&mut g, &p, &batch.labeled.tokens, Mode::Train(&mut rng))?;
            let lf = if components.feature_distill {
                model.project(&mut g, &p, &lt, &sizes, act)?
            } else {
                Vec::new()
            };
            let student_labeled = StudentBranch {
                logits: lt.logits,
                features: lf,
            };
            let mut student_unlabeled = None;
            let mut t_unl = None;
            if let (true, Some(pair)) = (use_unlabeled, &batch.unlabeled) {
                let ut = model.forward(&mut g, &p, &pair.original, Mode::Train(&mut rng))?;
                let uf = if components.feature_distill {
                    model.project(&mut g, &p, &ut, &sizes, act)?
                } else {
                    Vec::new()
                };
                let at = model.forward(&mut g, &p, &pair.augmented, Mode::Train(&mut rng))?;
                student_unlabeled = Some((
                    StudentBranch {
                        logits: ut.logits,
                        features: uf,
                    },
                    at.logits,
                ));
                if let (true, Some(t)) = (components.needs_teacher(), teacher) {
                    t_unl = Some(t.signals(&pair.original, act)?);
                }
            }
            let t_lab = match (components.needs_teacher(), teacher) {
                (true, Some(t)) => Some(t.signals(&batch.labeled.tokens, act)?),
                _ => None,
            };
            let inputs = TargetInputs {
                labels: &batch.labeled.labels,
                student_labeled,
                student_unlabeled,
                teacher_labeled: t_lab.as_ref(),
                teacher_unlabeled: t_unl.as_ref(),
            };
            let (total, losses) = target_objective(&mut g, &inputs, components)?;
            diverged(step, &losses)?;
            g.backward(total)?;
            adam.step(&mut model.params, &p.grads(&g))?;
            metrics.records.push(MetricRecord::Step {
                stage,
                epoch,
                step,
                eta: None,
                losses,
            });
            step += 1;
        }
        let dev = accuracy(&model, &prep.data.dev, eval_batch)?;
        metrics.records.push(MetricRecord::Epoch {
            stage,
            epoch,
            network: "target".into(),
            dev_accuracy: dev,
        });
        best.offer(&model, epoch, dev);
    }
    let test = accuracy(&best.model, &prep.data.test, eval_batch)?;
    metrics.records.push(MetricRecord::Final {
        stage,
        best_epoch: best.epoch,
        dev_accuracy: best.accuracy,
        test_accuracy: test,
    });
    let phase = match stage {
        Stage::Supervised => "train_supervised",
        _ => "distill_target",
    };
    metrics.timings.push(elapsed(phase, start));
    Ok(Trained {
        model: best.model,
        metrics,
    })
}

/// Stage 2 with the config's alignment and components.
pub fn distill_target(prep: &Prepared, inspirer: &InspirerModel) -> Result<Trained<TargetModel>> {
    let alignment = prep.config.alignment()?;
    distill_with(prep, inspirer, &alignment, &prep.config.distill.components)
}

/// Stage 2 with an explicit alignment and component set.
pub fn distill_with(
    prep: &Prepared,
    inspirer: &InspirerModel,
    alignment: &AlignmentSpec,
    components: &Components,
) -> Result<Trained<TargetModel>> {
    check_teacher(prep, inspirer, alignment)?;
    let teacher = Teacher {
        model: inspirer,
        alignment: alignment.clone(),
    };
    train_target(prep, Some(&teacher), components, Stage::Distill)
}

/// Cross-entropy-only target on the labeled data, with the same step
/// schedule as the semi-supervised stages.
pub fn train_supervised(prep: &Prepared) -> Result<Trained<TargetModel>> {
    train_target(prep, None, &Components::ce_only(), Stage::Supervised)
}
