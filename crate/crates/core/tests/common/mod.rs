//! Shared fixtures: gradient-check suites, naive reference implementations
//! and small configurations.
#![allow(dead_code)]

use flitext::autodiff::gradcheck::{check, default_step, GradCheck};
use flitext::autodiff::{Bound, Element, Graph, ParamStore, Real, Tensor, Var};
use flitext::data::{TokenBatch, CLS_ID};
use flitext::efficiency::{estimate_flops, ModelSpec};
use flitext::losses::{
    consistency_term, inspirer_objective, softmax_rows, target_objective, Components, DistillMode, InspirerInputs,
    StudentBranch, TargetInputs, TeacherSignals, TsaKind, TsaSchedule,
};
use flitext::models::{
    attention_block, conv1d_bank, Activation, BlockVars, InspirerConfig, InspirerModel, Mode, Network, SeqLayout,
    TargetConfig, TargetModel,
};
use flitext::pipeline::RunConfig;
use flitext::rng::{rng_for, SeededRng};
use flitext::Result;
use rand::Rng;

pub const TOL_F32: f64 = 1e-3;
pub const TOL_F64: f64 = 1e-6;
pub const ORACLE_TOL: f64 = 1e-5;

pub fn tol<F: Element>() -> f64 {
    if std::mem::size_of::<F>() == 4 {
        TOL_F32
    } else {
        TOL_F64
    }
}

pub fn uniform(rng: &mut SeededRng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

pub fn tensor<F: Element>(rng: &mut SeededRng, shape: &[usize], lo: f64, hi: f64) -> Tensor<F> {
    let n = shape.iter().product();
    Tensor::from_f64(shape, &uniform(rng, n, lo, hi)).unwrap()
}

/// Values at least `gap` away from zero, for ops with a kink at zero.
fn away_from_zero<F: Element>(rng: &mut SeededRng, shape: &[usize], gap: f64) -> Tensor<F> {
    let n: usize = shape.iter().product();
    let v: Vec<f64> = uniform(rng, n, -1.0, 1.0)
        .into_iter()
        .map(|x| x + gap * x.signum())
        .collect();
    Tensor::from_f64(shape, &v).unwrap()
}

/// Distinct values spaced by `gap` in random order, so max-pool winners are stable under perturbation.
fn spaced<F: Element>(rng: &mut SeededRng, shape: &[usize], gap: f64) -> Tensor<F> {
    let n: usize = shape.iter().product();
    let mut v: Vec<f64> = (0..n).map(|i| i as f64 * gap - n as f64 * gap / 2.0).collect();
    for i in (1..n).rev() {
        v.swap(i, rng.gen_range(0..=i));
    }
    Tensor::from_f64(shape, &v).unwrap()
}

/// Reduces any output to a scalar with fixed random weights so every entry matters.
pub fn reduce<F: Element>(g: &mut Graph<F>, y: Var, seed: u64) -> Result<Var> {
    let n = g.value(y).numel();
    let mut rng = rng_for(seed, "reduce", n as u64);
    let coeff = (0..n).map(|_| F::of(rng.gen_range(-1.0..1.0))).collect();
    g.dot_const(y, coeff)
}

type Builder<F> = Box<dyn Fn(&mut Graph<F>, &[Var]) -> Result<Var>>;

struct Case<F: Element> {
    name: &'static str,
    inputs: Vec<Tensor<F>>,
    f: Builder<F>,
}

fn cases<F: Element>(instance: u64) -> Vec<Case<F>> {
    let mut r = rng_for(instance, "op-cases", 0);
    let r = &mut r;
    let s = instance;
    let mut out: Vec<Case<F>> = Vec::new();
    let mut add = |name: &'static str, inputs: Vec<Tensor<F>>, f: Builder<F>| out.push(Case { name, inputs, f });
    add(
        "matmul",
        vec![tensor(r, &[3, 4], -1.0, 1.0), tensor(r, &[4, 2], -1.0, 1.0)],
        Box::new(move |g, v| {
            let y = g.matmul(v[0], v[1])?;
            reduce(g, y, s)
        }),
    );
    add(
        "add",
        vec![tensor(r, &[3, 4], -1.0, 1.0), tensor(r, &[3, 4], -1.0, 1.0)],
        Box::new(move |g, v| {
            let y = g.add(v[0], v[1])?;
            reduce(g, y, s)
        }),
    );
    add(
        "sub",
        vec![tensor(r, &[3, 4], -1.0, 1.0), tensor(r, &[3, 4], -1.0, 1.0)],
        Box::new(move |g, v| {
            let y = g.sub(v[0], v[1])?;
            reduce(g, y, s)
        }),
    );
    add(
        "mul",
        vec![tensor(r, &[3, 4], -1.0, 1.0), tensor(r, &[3, 4], -1.0, 1.0)],
        Box::new(move |g, v| {
            let y = g.mul(v[0], v[1])?;
            reduce(g, y, s)
        }),
    );
    add(
        "add_row",
        vec![tensor(r, &[3, 4], -1.0, 1.0), tensor(r, &[4], -1.0, 1.0)],
        Box::new(move |g, v| {
            let y = g.add_row(v[0], v[1])?;
            reduce(g, y, s)
        }),
    );
    add(
        "scale",
        vec![tensor(r, &[2, 5], -1.0, 1.0)],
        Box::new(move |g, v| {
            let y = g.scale(v[0], -1.7);
            reduce(g, y, s)
        }),
    );
    add(
        "add_scalar",
        vec![tensor(r, &[2, 5], -1.0, 1.0)],
        Box::new(move |g, v| {
            let y = g.add_scalar(v[0], 0.3);
            let y = g.square(y);
            reduce(g, y, s)
        }),
    );
    add(
        "relu",
        vec![away_from_zero(r, &[3, 5], 0.1)],
        Box::new(move |g, v| {
            let y = g.relu(v[0]);
            reduce(g, y, s)
        }),
    );
    add(
        "tanh",
        vec![tensor(r, &[3, 5], -2.0, 2.0)],
        Box::new(move |g, v| {
            let y = g.tanh(v[0]);
            reduce(g, y, s)
        }),
    );
    add(
        "square",
        vec![tensor(r, &[3, 5], -2.0, 2.0)],
        Box::new(move |g, v| {
            let y = g.square(v[0]);
            reduce(g, y, s)
        }),
    );
    add(
        "embedding",
        vec![tensor(r, &[6, 3], -1.0, 1.0)],
        Box::new(move |g, v| {
            // the padding row is exempt from gradient by contract, so it is not looked up here
            let y = g.embedding(v[0], &[1, 4, 3, 3, 5, 2], Some(0))?;
            reduce(g, y, s)
        }),
    );
    add(
        "layer_norm",
        vec![
            tensor(r, &[3, 5], -2.0, 2.0),
            tensor(r, &[5], 0.5, 1.5),
            tensor(r, &[5], -0.5, 0.5),
        ],
        Box::new(move |g, v| {
            let y = g.layer_norm(v[0], v[1], v[2], 1e-5)?;
            reduce(g, y, s)
        }),
    );
    add(
        "dropout",
        vec![tensor(r, &[4, 5], -1.0, 1.0)],
        Box::new(move |g, v| {
            let mut rng = rng_for(s, "dropout-case", 0);
            let y = g.dropout(v[0], 0.3, &mut rng)?;
            reduce(g, y, s)
        }),
    );
    add(
        "softmax",
        vec![tensor(r, &[3, 4], -2.0, 2.0)],
        Box::new(move |g, v| {
            let y = g.softmax(v[0])?;
            reduce(g, y, s)
        }),
    );
    add(
        "log_softmax",
        vec![tensor(r, &[3, 4], -2.0, 2.0)],
        Box::new(move |g, v| {
            let y = g.log_softmax(v[0])?;
            reduce(g, y, s)
        }),
    );
    add(
        "ln_floor",
        vec![tensor(r, &[3, 4], 0.5, 2.0)],
        Box::new(move |g, v| {
            let y = g.ln_floor(v[0], 1e-8);
            reduce(g, y, s)
        }),
    );
    add(
        "sum",
        vec![tensor(r, &[3, 4], -1.0, 1.0)],
        Box::new(|g, v| {
            let y = g.square(v[0]);
            Ok(g.sum(y))
        }),
    );
    add(
        "mean",
        vec![tensor(r, &[3, 4], -1.0, 1.0)],
        Box::new(|g, v| {
            let y = g.square(v[0]);
            Ok(g.mean(y))
        }),
    );
    add(
        "dot_const",
        vec![tensor(r, &[3, 4], -1.0, 1.0)],
        Box::new(move |g, v| reduce(g, v[0], s)),
    );
    add(
        "conv1d",
        vec![
            tensor(r, &[2 * 6, 3], -1.0, 1.0),
            tensor(r, &[3 * 3, 4], -1.0, 1.0),
            tensor(r, &[4], -1.0, 1.0),
        ],
        Box::new(move |g, v| {
            let y = g.conv1d(v[0], v[1], v[2], 2, 6, 3)?;
            reduce(g, y, s)
        }),
    );
    add(
        "maxpool_time",
        vec![spaced(r, &[2 * 5, 3], 0.1)],
        Box::new(move |g, v| {
            let y = g.maxpool_time(v[0], 2)?;
            reduce(g, y, s)
        }),
    );
    add(
        "attention",
        vec![
            tensor(r, &[2 * 4, 4], -1.0, 1.0),
            tensor(r, &[2 * 4, 4], -1.0, 1.0),
            tensor(r, &[2 * 4, 4], -1.0, 1.0),
        ],
        Box::new(move |g, v| {
            let y = g.attention(v[0], v[1], v[2], 2, 2, 4, &[4, 2])?;
            reduce(g, y, s)
        }),
    );
    add(
        "select_rows",
        vec![tensor(r, &[5, 3], -1.0, 1.0)],
        Box::new(move |g, v| {
            let y = g.select_rows(v[0], &[4, 0, 0, 2])?;
            reduce(g, y, s)
        }),
    );
    add(
        "mean_rows",
        vec![tensor(r, &[5, 3], -1.0, 1.0)],
        Box::new(move |g, v| {
            let y = g.mean_rows(v[0], &[(0, 2), (2, 3)])?;
            reduce(g, y, s)
        }),
    );
    add(
        "concat_cols",
        vec![tensor(r, &[3, 2], -1.0, 1.0), tensor(r, &[3, 4], -1.0, 1.0)],
        Box::new(move |g, v| {
            let y = g.concat_cols(&[v[0], v[1]])?;
            reduce(g, y, s)
        }),
    );
    out
}

/// Finite-difference checks of every differentiable op on `instances` random instances each.
pub fn op_suite<F: Element>(instances: u64) -> Result<Vec<(String, GradCheck)>> {
    let mut out = Vec::new();
    for i in 0..instances {
        for c in cases::<F>(i + 1) {
            let res = check(&c.inputs, default_step::<F>(), |g, v| (c.f)(g, v))?;
            out.push((format!("{}#{i}", c.name), res));
        }
    }
    Ok(out)
}

/// True-class probabilities of `logits`, and a threshold halfway across their widest gap,
/// so the TSA mask is stable under small perturbations.
fn stable_threshold(logits: &Tensor<f64>, labels: &[usize], classes: usize) -> (TsaSchedule, usize) {
    let probs = softmax_rows(logits);
    let mut py: Vec<f64> = probs.iter().zip(labels).map(|(p, &y)| p[y]).collect();
    py.push(1.0 / classes as f64);
    py.push(1.0);
    py.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let (mut best, mut mid) = (0.0, 0.5);
    for w in py.windows(2) {
        if w[1] - w[0] > best {
            best = w[1] - w[0];
            mid = (w[0] + w[1]) / 2.0;
        }
    }
    let total = 100_000;
    let c = 1.0 / classes as f64;
    let step = ((mid - c) / (1.0 - c) * total as f64).round() as usize;
    (
        TsaSchedule {
            kind: TsaKind::Linear,
            total_steps: total,
            classes,
        },
        step,
    )
}

/// Gradient check of the stage-1 objective with respect to the labeled and augmented logits.
/// The clean-branch reference is a constant, as it is in training.
pub fn inspirer_objective_check<F: Element>(seed: u64) -> Result<GradCheck> {
    let mut r = rng_for(seed, "inspirer-objective", 0);
    let classes = 3;
    let labels = vec![0, 2, 1, 2];
    let labeled: Tensor<f64> = tensor(&mut r, &[4, classes], -2.0, 2.0);
    let (tsa, step) = stable_threshold(&labeled, &labels, classes);
    let reference: Tensor<F> = tensor(&mut r, &[5, classes], -2.0, 2.0);
    let aug: Tensor<F> = tensor(&mut r, &[5, classes], -2.0, 2.0);
    check(&[labeled.cast(), aug], default_step::<F>(), |g, v| {
        let orig = g.constant(reference.clone());
        let inputs = InspirerInputs {
            labeled_logits: v[0],
            labels: &labels,
            unlabeled: Some((orig, v[1])),
        };
        Ok(inspirer_objective(g, &inputs, &tsa, step)?.0)
    })
}

fn signals<F: Element>(r: &mut SeededRng, rows: usize, classes: usize, pairs: usize, dim: usize) -> TeacherSignals<F> {
    TeacherSignals {
        logits: tensor(r, &[rows, classes], -2.0, 2.0),
        features: (0..pairs).map(|_| tensor(r, &[rows, dim], -1.0, 1.0)).collect(),
    }
}

/// Gradient checks of the stage-2 objective with every component active.
///
/// The first check covers everything except the student's clean unlabeled logits, which
/// double as the consistency reference and so cannot be perturbed with the reference held
/// fixed; the second covers those logits with consistency off.
pub fn target_objective_checks<F: Element>(seed: u64, mode: DistillMode) -> Result<[GradCheck; 2]> {
    let mut r = rng_for(seed, "target-objective", 0);
    let (c, pairs, dim, bl, bu) = (3, 2, 4, 3, 4);
    let labels = vec![2, 0, 1];
    let tl: TeacherSignals<F> = signals(&mut r, bl, c, pairs, dim);
    let tu: TeacherSignals<F> = signals(&mut r, bu, c, pairs, dim);
    let sl: Tensor<F> = tensor(&mut r, &[bl, c], -2.0, 2.0);
    let su: Tensor<F> = tensor(&mut r, &[bu, c], -2.0, 2.0);
    let sa: Tensor<F> = tensor(&mut r, &[bu, c], -2.0, 2.0);
    let fl: Vec<Tensor<F>> = (0..pairs).map(|_| tensor(&mut r, &[bl, dim], -1.0, 1.0)).collect();
    let fu: Vec<Tensor<F>> = (0..pairs).map(|_| tensor(&mut r, &[bu, dim], -1.0, 1.0)).collect();
    let full = Components {
        mode,
        ..Components::default()
    };
    let mut inputs = vec![sl.clone(), sa.clone()];
    inputs.extend(fl.iter().cloned());
    inputs.extend(fu.iter().cloned());
    let first = check(&inputs, default_step::<F>(), |g, v| {
        let su_var = g.constant(su.clone());
        let ti = TargetInputs {
            labels: &labels,
            student_labeled: StudentBranch {
                logits: v[0],
                features: v[2..2 + pairs].to_vec(),
            },
            student_unlabeled: Some((
                StudentBranch {
                    logits: su_var,
                    features: v[2 + pairs..].to_vec(),
                },
                v[1],
            )),
            teacher_labeled: Some(&tl),
            teacher_unlabeled: Some(&tu),
        };
        Ok(target_objective(g, &ti, &full)?.0)
    })?;
    let no_consistency = Components {
        consistency: false,
        ..full
    };
    let second = check(std::slice::from_ref(&su), default_step::<F>(), |g, v| {
        let sl_var = g.constant(sl.clone());
        let sa_var = g.constant(sa.clone());
        let fl_vars: Vec<Var> = fl.iter().map(|t| g.constant(t.clone())).collect();
        let fu_vars: Vec<Var> = fu.iter().map(|t| g.constant(t.clone())).collect();
        let ti = TargetInputs {
            labels: &labels,
            student_labeled: StudentBranch {
                logits: sl_var,
                features: fl_vars,
            },
            student_unlabeled: Some((
                StudentBranch {
                    logits: v[0],
                    features: fu_vars,
                },
                sa_var,
            )),
            teacher_labeled: Some(&tl),
            teacher_unlabeled: Some(&tu),
        };
        Ok(target_objective(g, &ti, &no_consistency)?.0)
    })?;
    Ok([first, second])
}

pub fn tiny_target() -> TargetConfig {
    TargetConfig {
        filter_sizes: vec![1, 2],
        channels: 3,
        emb_dim: 3,
        vocab_size: 9,
        classes: 2,
        projection_dim: 3,
        projection_activation: Activation::Tanh,
        dropout: 0.2,
    }
}

pub fn tiny_inspirer() -> InspirerConfig {
    InspirerConfig {
        layers: 2,
        hidden: 4,
        heads: 2,
        ff_dim: 6,
        vocab_size: 9,
        max_len: 6,
        classes: 2,
        mlp_hidden: 3,
        projection_dim: 3,
        dropout: 0.1,
    }
}

pub fn batch(seqs: &[Vec<usize>], min_len: usize) -> TokenBatch {
    TokenBatch::from_sequences(seqs, min_len).unwrap()
}

fn leaves<F: Element>(store: &ParamStore<F>) -> Vec<Tensor<F>> {
    store.iter().map(|p| p.value.clone()).collect()
}

/// End-to-end check of the stage-2 objective through a train-mode TextCNN,
/// with respect to every student parameter.
pub fn target_model_check(seed: u64) -> Result<GradCheck> {
    let model = TargetModel::<f64>::new(tiny_target(), seed)?;
    let mut r = rng_for(seed, "target-model-check", 0);
    // no padding: the pad embedding row is frozen by contract
    let lab = batch(&[vec![4, 5, 6, 7], vec![3, 8, 2, 6]], 2);
    let un = batch(&[vec![5, 5, 3], vec![8, 7, 6], vec![4, 3, 1]], 2);
    let au = batch(&[vec![5, 2, 3], vec![8, 7, 2], vec![4, 6, 1]], 2);
    let labels = vec![1, 0];
    let keys = vec![1, 2];
    let tl: TeacherSignals<f64> = signals(&mut r, 2, 2, keys.len(), 3);
    let tu: TeacherSignals<f64> = signals(&mut r, 3, 2, keys.len(), 3);
    // the clean student logits act as a constant reference; take them at the initial params
    let reference = {
        let mut g = Graph::new();
        let p = model.params().bind(&mut g, false);
        let mut drng = rng_for(seed, "dropout", 1);
        let t = model.forward(&mut g, &p, &un, Mode::Train(&mut drng))?;
        g.value(t.logits).clone()
    };
    // consistency is added by hand against the constant reference, which is what
    // the objective does with its in-graph clean-branch value
    let comps = Components {
        consistency: false,
        ..Components::default()
    };
    check(&leaves(model.params()), default_step::<f64>(), |g, v| {
        let p = Bound::from_vars(model.params(), v.to_vec())?;
        let mut d0 = rng_for(seed, "dropout", 0);
        let mut d1 = rng_for(seed, "dropout", 1);
        let mut d2 = rng_for(seed, "dropout", 2);
        let tlab = model.forward(g, &p, &lab, Mode::Train(&mut d0))?;
        let tun = model.forward(g, &p, &un, Mode::Train(&mut d1))?;
        let taug = model.forward(g, &p, &au, Mode::Train(&mut d2))?;
        let fl = model.project(g, &p, &tlab, &keys, Activation::Tanh)?;
        let fu = model.project(g, &p, &tun, &keys, Activation::Tanh)?;
        let ti = TargetInputs {
            labels: &labels,
            student_labeled: StudentBranch {
                logits: tlab.logits,
                features: fl,
            },
            student_unlabeled: Some((
                StudentBranch {
                    logits: tun.logits,
                    features: fu,
                },
                taug.logits,
            )),
            teacher_labeled: Some(&tl),
            teacher_unlabeled: Some(&tu),
        };
        let (total, _) = target_objective(g, &ti, &comps)?;
        let kl = consistency_term(g, &reference, taug.logits)?;
        g.add(total, kl)
    })
}

/// End-to-end check of the stage-1 objective through a train-mode transformer,
/// with respect to every inspirer parameter.
pub fn inspirer_model_check(seed: u64) -> Result<GradCheck> {
    let model = InspirerModel::<f64>::new(tiny_inspirer(), seed)?;
    let lab = batch(&[vec![CLS_ID, 4, 5, 6], vec![CLS_ID, 3, 8]], 1);
    let au = batch(&[vec![CLS_ID, 5, 2, 3], vec![CLS_ID, 8, 7, 2, 6]], 1);
    let labels = vec![1, 0];
    let mut r = rng_for(seed, "inspirer-model-check", 0);
    let reference: Tensor<f64> = tensor(&mut r, &[2, 2], -1.0, 1.0);
    let tsa = TsaSchedule {
        kind: TsaKind::None,
        total_steps: 10,
        classes: 2,
    };
    check(&leaves(model.params()), default_step::<f64>(), |g, v| {
        let p = Bound::from_vars(model.params(), v.to_vec())?;
        let mut d0 = rng_for(seed, "dropout", 0);
        let mut d1 = rng_for(seed, "dropout", 1);
        let tl = model.forward(g, &p, &lab, Mode::Train(&mut d0))?;
        let ta = model.forward(g, &p, &au, Mode::Train(&mut d1))?;
        let orig = g.constant(reference.clone());
        let inputs = InspirerInputs {
            labeled_logits: tl.logits,
            labels: &labels,
            unlabeled: Some((orig, ta.logits)),
        };
        // projections are trained in no objective but their gradient path is checked here
        let feats = model.project(g, &p, &tl, &[0, 1], Activation::Tanh)?;
        let (obj, _, _) = inspirer_objective(g, &inputs, &tsa, 0)?;
        let f = g.concat_cols(&feats)?;
        let f = reduce(g, f, seed)?;
        g.add(obj, f)
    })
}

// ---- naive references, computed in f64 from raw values ----

/// Valid 1-D convolution: `x` is `[batch·seq × dim]`, `w` is `[k·dim × ch]`.
pub fn naive_conv1d(x: &[f64], w: &[f64], b: &[f64], batch: usize, seq: usize, dim: usize, k: usize) -> Vec<f64> {
    let ch = b.len();
    let t_out = seq - k + 1;
    let mut out = vec![0.0; batch * t_out * ch];
    for bi in 0..batch {
        for t in 0..t_out {
            for c in 0..ch {
                let mut acc = b[c];
                for j in 0..k {
                    for e in 0..dim {
                        acc += x[(bi * seq + t + j) * dim + e] * w[(j * dim + e) * ch + c];
                    }
                }
                out[(bi * t_out + t) * ch + c] = acc;
            }
        }
    }
    out
}

pub fn naive_maxpool(x: &[f64], batch: usize, t: usize, ch: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(batch * ch);
    for bi in 0..batch {
        for c in 0..ch {
            let col = (0..t).map(|s| x[(bi * t + s) * ch + c]);
            out.push(col.fold(f64::NEG_INFINITY, f64::max));
        }
    }
    out
}

fn mat(x: &[f64], rows: usize, cols: usize, w: &[f64], out_cols: usize, bias: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; rows * out_cols];
    for i in 0..rows {
        for j in 0..out_cols {
            let mut acc = bias[j];
            for p in 0..cols {
                acc += x[i * cols + p] * w[p * out_cols + j];
            }
            y[i * out_cols + j] = acc;
        }
    }
    y
}

fn layer_norm(x: &[f64], cols: usize, g: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len());
    for row in x.chunks(cols) {
        let mean = row.iter().sum::<f64>() / cols as f64;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / cols as f64;
        let inv = 1.0 / (var + 1e-5).sqrt();
        out.extend(row.iter().enumerate().map(|(c, v)| (v - mean) * inv * g[c] + b[c]));
    }
    out
}

/// Post-norm encoder block in eval mode, written out loop by loop.
#[allow(clippy::too_many_arguments)]
pub fn naive_attention_block(
    x: &[f64],
    p: &dyn Fn(&str) -> Vec<f64>,
    d: usize,
    ff: usize,
    heads: usize,
    batch: usize,
    seq: usize,
    lens: &[usize],
) -> Vec<f64> {
    let rows = batch * seq;
    let q = mat(x, rows, d, &p("wq"), d, &p("bq"));
    let k = mat(x, rows, d, &p("wk"), d, &p("bk"));
    let v = mat(x, rows, d, &p("wv"), d, &p("bv"));
    let dh = d / heads;
    let mut mixed = vec![0.0; rows * d];
    for b in 0..batch {
        for h in 0..heads {
            for i in 0..seq {
                let mut scores = vec![f64::NEG_INFINITY; seq];
                for (j, s) in scores.iter_mut().enumerate().take(lens[b]) {
                    let mut acc = 0.0;
                    for e in 0..dh {
                        acc += q[(b * seq + i) * d + h * dh + e] * k[(b * seq + j) * d + h * dh + e];
                    }
                    *s = acc / (dh as f64).sqrt();
                }
                let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = scores.iter().map(|s| (s - m).exp()).sum();
                for (j, s) in scores.iter().enumerate() {
                    let w = (s - m).exp() / z;
                    for e in 0..dh {
                        mixed[(b * seq + i) * d + h * dh + e] += w * v[(b * seq + j) * d + h * dh + e];
                    }
                }
            }
        }
    }
    let a = mat(&mixed, rows, d, &p("wo"), d, &p("bo"));
    let r: Vec<f64> = x.iter().zip(&a).map(|(u, w)| u + w).collect();
    let h1 = layer_norm(&r, d, &p("ln1.g"), &p("ln1.b"));
    let f = mat(&h1, rows, d, &p("ff1.w"), ff, &p("ff1.b"));
    let f: Vec<f64> = f.into_iter().map(|v| v.max(0.0)).collect();
    let f = mat(&f, rows, ff, &p("ff2.w"), d, &p("ff2.b"));
    let r: Vec<f64> = h1.iter().zip(&f).map(|(u, w)| u + w).collect();
    layer_norm(&r, d, &p("ln2.g"), &p("ln2.b"))
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Largest deviation of the conv bank from the naive convolution over one random instance.
pub fn conv_bank_oracle<F: Element>(instance: u64) -> Result<f64> {
    let mut r = rng_for(instance, "conv-oracle", 0);
    let batch = r.gen_range(1..4);
    let dim = r.gen_range(1..6);
    let ch = r.gen_range(1..6);
    let sizes: Vec<usize> = {
        let mut s: Vec<usize> = (1..=5).filter(|_| r.gen_bool(0.5)).collect();
        if s.is_empty() {
            s.push(2);
        }
        s
    };
    let seq = r.gen_range(*sizes.last().unwrap()..12);
    let xv = uniform(&mut r, batch * seq * dim, -1.0, 1.0);
    let mut g = Graph::<F>::new();
    let x = g.leaf(Tensor::from_f64(&[batch * seq, dim], &xv)?, false);
    let mut raw = Vec::new();
    let mut banks = Vec::new();
    for &k in &sizes {
        let wv = uniform(&mut r, k * dim * ch, -1.0, 1.0);
        let bv = uniform(&mut r, ch, -1.0, 1.0);
        let w = g.leaf(Tensor::from_f64(&[k * dim, ch], &wv)?, false);
        let b = g.leaf(Tensor::from_f64(&[ch], &bv)?, false);
        banks.push((k, w, b));
        raw.push((wv, bv));
    }
    let maps = conv1d_bank(&mut g, x, &banks, batch, seq)?;
    let mut worst = 0.0f64;
    for ((k, m), (wv, bv)) in maps.iter().zip(&raw) {
        let want = naive_conv1d(&xv, wv, bv, batch, seq, dim, *k);
        worst = worst.max(max_abs_diff(&g.value(*m).to_f64_vec(), &want));
    }
    Ok(worst)
}

pub fn maxpool_oracle<F: Element>(instance: u64) -> Result<f64> {
    let mut r = rng_for(instance, "maxpool-oracle", 0);
    let (batch, t, ch) = (r.gen_range(1..4), r.gen_range(1..9), r.gen_range(1..6));
    let xv = uniform(&mut r, batch * t * ch, -3.0, 3.0);
    let mut g = Graph::<F>::new();
    let x = g.leaf(Tensor::from_f64(&[batch * t, ch], &xv)?, false);
    let y = g.maxpool_time(x, batch)?;
    let xr = Tensor::<F>::from_f64(&[batch * t, ch], &xv)?.to_f64_vec();
    Ok(max_abs_diff(
        &g.value(y).to_f64_vec(),
        &naive_maxpool(&xr, batch, t, ch),
    ))
}

pub fn attention_oracle<F: Element>(instance: u64) -> Result<f64> {
    let mut r = rng_for(instance, "attention-oracle", 0);
    let heads = r.gen_range(1..4);
    let d = heads * r.gen_range(1..4);
    let ff = r.gen_range(1..9);
    let (batch, seq) = (r.gen_range(1..4), r.gen_range(1..7));
    let lens: Vec<usize> = (0..batch).map(|_| r.gen_range(1..=seq)).collect();
    let cfg = InspirerConfig {
        layers: 1,
        hidden: d,
        heads,
        ff_dim: ff,
        vocab_size: 8,
        max_len: 8,
        classes: 2,
        mlp_hidden: 2,
        projection_dim: 2,
        dropout: 0.1,
    };
    let mut model = InspirerModel::<F>::new(cfg, instance)?;
    // perturb norms and biases away from their identity initialization
    for prm in model.params.params_mut() {
        if prm.name.contains(".b") || prm.name.contains(".g") {
            let n = prm.value.numel();
            let v = uniform(&mut r, n, 0.5, 1.5);
            prm.value = Tensor::from_f64(prm.value.shape(), &v)?;
        }
    }
    let xv = uniform(&mut r, batch * seq * d, -1.0, 1.0);
    let mut g = Graph::<F>::new();
    let p = model.params.bind(&mut g, false);
    let bv = BlockVars::bind(&p, &model.params, 0)?;
    let x = g.leaf(Tensor::from_f64(&[batch * seq, d], &xv)?, false);
    let layout = SeqLayout {
        heads,
        batch,
        seq,
        lens: lens.clone(),
    };
    let y = attention_block(&mut g, x, &bv, &layout, 0.1, &mut Mode::Eval)?;
    let store = &model.params;
    let get = |name: &str| store.get(&format!("layer0.{name}")).unwrap().to_f64_vec();
    let xr = Tensor::<F>::from_f64(&[batch * seq, d], &xv)?.to_f64_vec();
    let want = naive_attention_block(&xr, &get, d, ff, heads, batch, seq, &lens);
    Ok(max_abs_diff(&g.value(y).to_f64_vec(), &want))
}

/// A reduced run configuration that trains in a couple of seconds.
pub fn quick_config(seed: u64) -> RunConfig {
    let mut c = RunConfig::reference();
    c.seed = seed;
    let s = c.data.synthetic.as_mut().unwrap();
    s.n_unlabeled = 120;
    s.n_dev = 40;
    s.n_test = 60;
    s.seed = seed;
    c.train.inspirer_epochs = 2;
    c.train.target_epochs = 2;
    c.inspirer.layers = 2;
    c.inspirer.hidden = 8;
    c.inspirer.heads = 2;
    c.inspirer.ff_dim = 16;
    c.inspirer.mlp_hidden = 8;
    c.inspirer.projection_dim = 8;
    c.target.channels = 8;
    c.target.emb_dim = 8;
    c.target.projection_dim = 8;
    c
}

/// Analytic FLOPs and twice the multiply-accumulates recorded by the engine
/// during one eval forward over a single sequence of length `n`.
pub fn flops_match_counter(spec: &ModelSpec, n: usize) -> (u64, u64) {
    let mut g = Graph::<Real>::new();
    match spec {
        ModelSpec::Inspirer(c) => {
            let mut s = vec![4usize; n];
            s[0] = CLS_ID;
            let m = InspirerModel::<Real>::new(c.clone(), 0).unwrap();
            let p = m.params().bind(&mut g, false);
            m.forward(&mut g, &p, &batch(&[s], 1), Mode::Eval).unwrap();
        }
        ModelSpec::Target(c) => {
            let m = TargetModel::<Real>::new(c.clone(), 0).unwrap();
            let p = m.params().bind(&mut g, false);
            m.forward(&mut g, &p, &batch(&[vec![4usize; n]], 1), Mode::Eval)
                .unwrap();
        }
    }
    (estimate_flops(spec, n).unwrap().total, 2 * g.mac_counts().total())
}
