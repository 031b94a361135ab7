//! Objective terms for both training stages, and training-signal annealing.
//!
//! Graph-level terms take logits and treat every teacher-side or clean-branch
//! quantity as a constant, so gradients reach only the network being trained.
//! The `*_loss` functions on plain probability rows are value-only versions
//! of the same quantities.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Element, Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::models::argmax;

/// Floor applied inside every logarithm of a probability.
pub const LOG_FLOOR: f64 = 1e-8;

/// Per-step loss decomposition. Inactive terms are exactly zero.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_ce: f64,
    pub l_consist_t: f64,
    pub l_soft_sup: f64,
    pub l_soft_unsup: f64,
    pub l_hard_sup: f64,
    pub l_hard_unsup: f64,
    pub l_feat_sup: f64,
    pub l_feat_unsup: f64,
    pub l_consist_s: f64,
    pub total: f64,
}

impl LossBreakdown {
    /// Components in summation order.
    pub fn components(&self) -> [f64; 9] {
        [
            self.l_ce,
            self.l_consist_t,
            self.l_soft_sup,
            self.l_hard_sup,
            self.l_feat_sup,
            self.l_soft_unsup,
            self.l_hard_unsup,
            self.l_feat_unsup,
            self.l_consist_s,
        ]
    }

    pub fn component_sum(&self) -> f64 {
        self.components().iter().sum()
    }

    fn finish(mut self) -> Self {
        self.total = self.component_sum();
        self
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TsaKind {
    #[default]
    Linear,
    Log,
    Exp,
    None,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TsaSchedule {
    pub kind: TsaKind,
    pub total_steps: usize,
    pub classes: usize,
}

impl TsaSchedule {
    /// Confidence threshold η(t): rises from 1/C at t = 0 to 1 at t = T.
    /// Without annealing the threshold is 1 throughout.
    pub fn threshold(&self, step: usize) -> f64 {
        let c = 1.0 / self.classes as f64;
        let frac = if self.total_steps == 0 {
            1.0
        } else {
            (step as f64 / self.total_steps as f64).min(1.0)
        };
        let alpha = match self.kind {
            TsaKind::Linear => frac,
            TsaKind::Log => 1.0 - (-5.0 * frac).exp(),
            TsaKind::Exp => (5.0 * (frac - 1.0)).exp(),
            TsaKind::None => return 1.0,
        };
        alpha * (1.0 - c) + c
    }
}

/// Weight 0 for examples whose true-class probability exceeds `eta`, else 1.
pub fn tsa_mask(probs: &[Vec<f64>], labels: &[usize], eta: f64) -> Vec<f64> {
    probs
        .iter()
        .zip(labels)
        .map(|(p, &y)| if p[y] > eta { 0.0 } else { 1.0 })
        .collect()
}

/// Row-wise softmax of a logits tensor, computed in `f64`.
pub fn softmax_rows<F: Element>(logits: &Tensor<F>) -> Vec<Vec<f64>> {
    (0..logits.rows())
        .map(|r| {
            let row: Vec<f64> = logits.row(r).iter().map(|v| v.as_f64()).collect();
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
            let s: f64 = e.iter().sum();
            e.into_iter().map(|v| v / s).collect()
        })
        .collect()
}

fn log_softmax_rows<F: Element>(logits: &Tensor<F>) -> Vec<Vec<f64>> {
    (0..logits.rows())
        .map(|r| {
            let row: Vec<f64> = logits.row(r).iter().map(|v| v.as_f64()).collect();
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            row.into_iter().map(|v| v - lse).collect()
        })
        .collect()
}

fn check_labels(labels: &[usize], classes: usize) -> Result<()> {
    match labels.iter().find(|&&y| y >= classes) {
        Some(y) => Err(Error::data(format!("label {y} out of range for {classes} classes"))),
        None => Ok(()),
    }
}

// ---- value-level reference functions ----

/// Mean negative log-likelihood of the labels.
pub fn ce_loss(probs: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    if probs.len() != labels.len() || probs.is_empty() {
        return Err(Error::Dimension {
            op: "ce_loss",
            lhs: vec![probs.len()],
            rhs: vec![labels.len()],
        });
    }
    check_labels(labels, probs[0].len())?;
    Ok(probs
        .iter()
        .zip(labels)
        .map(|(p, &y)| -p[y].max(LOG_FLOOR).ln())
        .sum::<f64>()
        / probs.len() as f64)
}

/// Mean KL(p ‖ q) over rows.
pub fn kl_loss(p: &[Vec<f64>], q: &[Vec<f64>]) -> f64 {
    let n = p.len().max(1) as f64;
    p.iter()
        .zip(q)
        .map(|(pr, qr)| {
            pr.iter()
                .zip(qr)
                .map(|(&a, &b)| a * (a.max(LOG_FLOOR).ln() - b.max(LOG_FLOOR).ln()))
                .sum::<f64>()
        })
        .sum::<f64>()
        / n
}

/// Mean squared Euclidean distance between logit rows.
pub fn soft_distill_loss(z_t: &[Vec<f64>], z_s: &[Vec<f64>]) -> f64 {
    let n = z_t.len().max(1) as f64;
    z_t.iter()
        .zip(z_s)
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>())
        .sum::<f64>()
        / n
}

/// Cross-entropy of student rows against teacher argmax pseudo-labels.
pub fn hard_distill_loss(p_t: &[Vec<f64>], p_s: &[Vec<f64>]) -> Result<f64> {
    let labels: Vec<usize> = p_t.iter().map(|r| argmax(r)).collect();
    ce_loss(p_s, &labels)
}

/// Mean over aligned pairs of the elementwise mean squared error.
pub fn feature_distill_loss(teacher: &[Vec<f64>], student: &[Vec<f64>]) -> Result<f64> {
    if teacher.len() != student.len() || teacher.is_empty() {
        return Err(Error::config(format!(
            "{} teacher features vs {} student features",
            teacher.len(),
            student.len()
        )));
    }
    let mut acc = 0.0;
    for (a, b) in teacher.iter().zip(student) {
        if a.len() != b.len() {
            return Err(Error::Dimension {
                op: "feature_distill",
                lhs: vec![a.len()],
                rhs: vec![b.len()],
            });
        }
        acc += a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64;
    }
    Ok(acc / teacher.len() as f64)
}

// ---- graph-level terms ----

/// Weighted cross-entropy from logits, normalized by `max(1, Σ weights)`.
pub fn ce_term<F: Element>(g: &mut Graph<F>, logits: Var, labels: &[usize], weights: Option<&[f64]>) -> Result<Var> {
    let (b, c) = (g.value(logits).rows(), g.value(logits).cols());
    if labels.len() != b {
        return Err(Error::Dimension {
            op: "ce_term",
            lhs: vec![b, c],
            rhs: vec![labels.len()],
        });
    }
    check_labels(labels, c)?;
    let ones = vec![1.0; b];
    let w = weights.unwrap_or(&ones);
    let norm = w.iter().sum::<f64>().max(1.0);
    let mut coeff = vec![F::zero(); b * c];
    for (i, (&y, &wi)) in labels.iter().zip(w).enumerate() {
        coeff[i * c + y] = F::of(-wi / norm);
    }
    let lp = g.log_softmax(logits)?;
    g.dot_const(lp, coeff)
}

/// Mean KL(softmax(reference) ‖ softmax(logits)); `reference` carries no gradient.
pub fn consistency_term<F: Element>(g: &mut Graph<F>, reference: &Tensor<F>, logits: Var) -> Result<Var> {
    if reference.shape() != g.shape(logits) {
        return Err(Error::Dimension {
            op: "consistency",
            lhs: reference.shape().to_vec(),
            rhs: g.shape(logits).to_vec(),
        });
    }
    let p = softmax_rows(reference);
    let b = p.len() as f64;
    let lq64 = log_softmax_rows(g.value(logits));
    let exact: f64 = p
        .iter()
        .flatten()
        .zip(lq64.iter().flatten())
        .map(|(&v, &l)| v * (v.max(LOG_FLOOR).ln() - l))
        .sum::<f64>()
        / b;
    let coeff: Vec<F> = p.iter().flatten().map(|&v| F::of(-v / b)).collect();
    let lq = g.log_softmax(logits)?;
    let cross = g.dot_const(lq, coeff)?;
    // the constant carries the entropy part; fixing it against the f64 value
    // keeps low-precision round-off out of the reported divergence
    let offset = exact - g.scalar(cross);
    Ok(g.add_scalar(cross, offset))
}

/// Mean squared L2 distance between constant teacher logits and student logits.
pub fn soft_term<F: Element>(g: &mut Graph<F>, teacher: &Tensor<F>, student: Var) -> Result<Var> {
    let t = g.constant(teacher.clone());
    let d = g.sub(student, t)?;
    let sq = g.square(d);
    let s = g.sum(sq);
    Ok(g.scale(s, 1.0 / teacher.rows() as f64))
}

/// Cross-entropy of the student against the teacher's argmax labels.
pub fn hard_term<F: Element>(g: &mut Graph<F>, teacher: &Tensor<F>, student: Var) -> Result<Var> {
    let labels: Vec<usize> = (0..teacher.rows())
        .map(|r| argmax(&teacher.row(r).iter().map(|v| v.as_f64()).collect::<Vec<_>>()))
        .collect();
    ce_term(g, student, &labels, None)
}

/// Mean over aligned pairs of the elementwise MSE; teacher features are constants.
pub fn feature_term<F: Element>(g: &mut Graph<F>, teacher: &[Tensor<F>], student: &[Var]) -> Result<Var> {
    if teacher.len() != student.len() || teacher.is_empty() {
        return Err(Error::config(format!(
            "{} teacher features vs {} student features",
            teacher.len(),
            student.len()
        )));
    }
    let mut acc: Option<Var> = None;
    for (t, &s) in teacher.iter().zip(student) {
        let tc = g.constant(t.clone());
        let d = g.sub(s, tc)?;
        let sq = g.square(d);
        let m = g.mean(sq);
        acc = Some(match acc {
            Some(a) => g.add(a, m)?,
            None => m,
        });
    }
    let sum = acc.expect("nonempty");
    Ok(g.scale(sum, 1.0 / teacher.len() as f64))
}

/// Appends terms to a running graph sum while recording their values.
struct Accumulator {
    total: Option<Var>,
}

impl Accumulator {
    fn push<F: Element>(&mut self, g: &mut Graph<F>, term: Var) -> Result<f64> {
        self.total = Some(match self.total {
            Some(t) => g.add(t, term)?,
            None => term,
        });
        Ok(g.scalar(term))
    }

    fn finish<F: Element>(self, g: &mut Graph<F>) -> Var {
        self.total.unwrap_or_else(|| g.constant(Tensor::scalar(F::zero())))
    }
}

/// Network outputs consumed by the inspirer objective.
pub struct InspirerInputs<'a> {
    pub labeled_logits: Var,
    pub labels: &'a [usize],
    /// Logits on `u` and on its augmentation `a`.
    pub unlabeled: Option<(Var, Var)>,
}

/// TSA-masked cross-entropy plus consistency KL on the unlabeled pairs.
/// Returns the graph total, the breakdown and the threshold used.
pub fn inspirer_objective<F: Element>(
    g: &mut Graph<F>,
    inputs: &InspirerInputs<'_>,
    tsa: &TsaSchedule,
    step: usize,
) -> Result<(Var, LossBreakdown, f64)> {
    let eta = tsa.threshold(step);
    let probs = softmax_rows(g.value(inputs.labeled_logits));
    let mask = tsa_mask(&probs, inputs.labels, eta);
    let mut acc = Accumulator { total: None };
    let mut bd = LossBreakdown::default();
    let ce = ce_term(g, inputs.labeled_logits, inputs.labels, Some(&mask))?;
    bd.l_ce = acc.push(g, ce)?;
    if let Some((orig, aug)) = inputs.unlabeled {
        let reference = g.value(orig).clone();
        let kl = consistency_term(g, &reference, aug)?;
        bd.l_consist_t = acc.push(g, kl)?;
    }
    Ok((acc.finish(g), bd.finish(), eta))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistillMode {
    /// Squared distance between logits.
    #[default]
    Soft,
    /// Cross-entropy against teacher argmax.
    Hard,
}

/// Which stage-2 terms are active. Cross-entropy is always on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Components {
    pub output_distill: bool,
    pub feature_distill: bool,
    pub consistency: bool,
    pub mode: DistillMode,
}

impl Default for Components {
    fn default() -> Self {
        Components {
            output_distill: true,
            feature_distill: true,
            consistency: true,
            mode: DistillMode::Soft,
        }
    }
}

impl Components {
    pub fn ce_only() -> Self {
        Components {
            output_distill: false,
            feature_distill: false,
            consistency: false,
            mode: DistillMode::Soft,
        }
    }

    pub fn needs_teacher(&self) -> bool {
        self.output_distill || self.feature_distill
    }
}

/// Teacher outputs on one branch, as constants.
#[derive(Clone, Debug)]
pub struct TeacherSignals<F> {
    pub logits: Tensor<F>,
    /// Projected features, one per alignment pair.
    pub features: Vec<Tensor<F>>,
}

/// Student outputs on one branch.
#[derive(Clone, Debug)]
pub struct StudentBranch {
    pub logits: Var,
    pub features: Vec<Var>,
}

pub struct TargetInputs<'a, F> {
    pub labels: &'a [usize],
    pub student_labeled: StudentBranch,
    /// Student on `u` and logits on `a`.
    pub student_unlabeled: Option<(StudentBranch, Var)>,
    pub teacher_labeled: Option<&'a TeacherSignals<F>>,
    pub teacher_unlabeled: Option<&'a TeacherSignals<F>>,
}

/// Cross-entropy, output distillation and feature distillation on both
/// branches, and student consistency, each with unit weight.
pub fn target_objective<F: Element>(
    g: &mut Graph<F>,
    inputs: &TargetInputs<'_, F>,
    components: &Components,
) -> Result<(Var, LossBreakdown)> {
    let missing = |what: &str| Error::Usage(format!("target objective needs {what}"));
    let mut acc = Accumulator { total: None };
    let mut bd = LossBreakdown::default();
    let sl = &inputs.student_labeled;
    let ce = ce_term(g, sl.logits, inputs.labels, None)?;
    bd.l_ce = acc.push(g, ce)?;

    let branches = [
        (Some(sl), inputs.teacher_labeled, true),
        (
            inputs.student_unlabeled.as_ref().map(|(s, _)| s),
            inputs.teacher_unlabeled,
            false,
        ),
    ];
    for (student, teacher, sup) in branches {
        let Some(student) = student else { continue };
        if components.needs_teacher() && teacher.is_none() {
            return Err(missing(if sup {
                "teacher signals on the labeled batch"
            } else {
                "teacher signals on the unlabeled batch"
            }));
        }
        if components.output_distill {
            let t = teacher.expect("checked");
            match components.mode {
                DistillMode::Soft => {
                    let v = soft_term(g, &t.logits, student.logits)?;
                    let x = acc.push(g, v)?;
                    if sup {
                        bd.l_soft_sup = x
                    } else {
                        bd.l_soft_unsup = x
                    }
                }
                DistillMode::Hard => {
                    let v = hard_term(g, &t.logits, student.logits)?;
                    let x = acc.push(g, v)?;
                    if sup {
                        bd.l_hard_sup = x
                    } else {
                        bd.l_hard_unsup = x
                    }
                }
            }
        }
        if components.feature_distill {
            let t = teacher.expect("checked");
            let v = feature_term(g, &t.features, &student.features)?;
            let x = acc.push(g, v)?;
            if sup {
                bd.l_feat_sup = x
            } else {
                bd.l_feat_unsup = x
            }
        }
    }
    if components.consistency {
        let (su, aug) = inputs
            .student_unlabeled
            .as_ref()
            .ok_or_else(|| missing("an unlabeled batch for consistency"))?;
        let reference = g.value(su.logits).clone();
        let kl = consistency_term(g, &reference, *aug)?;
        bd.l_consist_s = acc.push(g, kl)?;
    }
    Ok((acc.finish(g), bd.finish()))
}

#[cfg(test)]
mod tests {
    use super::*;

    const LN2: f64 = std::f64::consts::LN_2;

    #[test]
    fn closed_form_values() {
        assert!((ce_loss(&[vec![0.5, 0.5]], &[0]).unwrap() - LN2).abs() < 1e-12);
        assert_eq!(ce_loss(&[vec![0.0, 1.0]], &[1]).unwrap(), 0.0);
        assert!((kl_loss(&[vec![1.0, 0.0]], &[vec![0.5, 0.5]]) - LN2).abs() < 1e-12);
        assert_eq!(soft_distill_loss(&[vec![1.0, 0.0]], &[vec![0.0, 0.0]]), 1.0);
        assert!((hard_distill_loss(&[vec![0.9, 0.1]], &[vec![0.5, 0.5]]).unwrap() - LN2).abs() < 1e-12);
        assert_eq!(feature_distill_loss(&[vec![1.0, 2.0]], &[vec![0.0, 0.0]]).unwrap(), 2.5);
    }

    #[test]
    fn out_of_range_label_is_a_data_error() {
        assert!(matches!(ce_loss(&[vec![0.5, 0.5]], &[2]), Err(Error::Data { .. })));
    }

    #[test]
    fn tsa_endpoints_and_masking() {
        let s = TsaSchedule {
            kind: TsaKind::Linear,
            total_steps: 10,
            classes: 2,
        };
        assert_eq!(s.threshold(0), 0.5);
        assert_eq!(s.threshold(10), 1.0);
        assert_eq!(tsa_mask(&[vec![0.1, 0.9]], &[1], 0.7), vec![0.0]);
        let exp = TsaSchedule {
            kind: TsaKind::Exp,
            ..s
        };
        assert!((exp.threshold(0) - (0.5 + 0.5 * (-5.0f64).exp())).abs() < 1e-12);
        assert_eq!(exp.threshold(10), 1.0);
        // the log schedule saturates just short of 1
        let log = TsaSchedule {
            kind: TsaKind::Log,
            ..s
        };
        assert_eq!(log.threshold(0), 0.5);
        assert!((log.threshold(10) - (1.0 - 0.5 * (-5.0f64).exp())).abs() < 1e-12);
    }

    #[test]
    fn graph_terms_match_value_functions() {
        let mut g = Graph::<f64>::new();
        let z = Tensor::from_f64(&[2, 3], &[0.3, -1.0, 2.0, 0.5, 0.5, -0.2]).unwrap();
        let r = Tensor::from_f64(&[2, 3], &[1.0, 0.0, -1.0, 0.2, 0.1, 0.0]).unwrap();
        let zv = g.leaf(z.clone(), true);
        let p = softmax_rows(&z);
        let pr = softmax_rows(&r);
        let ce = ce_term(&mut g, zv, &[2, 0], None).unwrap();
        assert!((g.scalar(ce) - ce_loss(&p, &[2, 0]).unwrap()).abs() < 1e-12);
        let kl = consistency_term(&mut g, &r, zv).unwrap();
        assert!((g.scalar(kl) - kl_loss(&pr, &p)).abs() < 1e-12);
        let soft = soft_term(&mut g, &r, zv).unwrap();
        let rows = |t: &Tensor<f64>| (0..2).map(|i| t.row(i).to_vec()).collect::<Vec<_>>();
        assert!((g.scalar(soft) - soft_distill_loss(&rows(&r), &rows(&z))).abs() < 1e-12);
        let hard = hard_term(&mut g, &r, zv).unwrap();
        assert!((g.scalar(hard) - hard_distill_loss(&pr, &p).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn fully_masked_ce_is_zero() {
        let mut g = Graph::<f64>::new();
        let z = g.leaf(Tensor::from_f64(&[1, 2], &[5.0, -5.0]).unwrap(), true);
        let ce = ce_term(&mut g, z, &[0], Some(&[0.0])).unwrap();
        assert_eq!(g.scalar(ce), 0.0);
    }
}
