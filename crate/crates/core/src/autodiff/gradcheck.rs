//! Central finite-difference gradient verification.

use super::graph::{Graph, Var};
use super::tensor::{Element, Tensor};
use crate::error::Result;

/// Outcome of comparing analytic gradients against central differences.
#[derive(Clone, Debug)]
pub struct GradCheck {
    /// `‖analytic − numeric‖₂ / max(‖analytic‖₂, ‖numeric‖₂)` over all inputs.
    pub rel_error: f64,
    pub max_abs_error: f64,
    pub analytic: Vec<Vec<f64>>,
    pub numeric: Vec<Vec<f64>>,
}

impl GradCheck {
    pub fn passes(&self, tol: f64) -> bool {
        self.rel_error <= tol
    }
}

/// Default perturbation for the element type: coarse enough for `f32`
/// round-off, fine enough for `f64` truncation error.
pub fn default_step<F: Element>() -> f64 {
    if std::mem::size_of::<F>() == 4 {
        1e-2
    } else {
        1e-6
    }
}

/// Checks `d f / d inputs` where `f` builds a scalar from leaf vars.
///
/// `f` must be a deterministic function of its inputs (reseed any RNG inside it).
pub fn check<F, Fun>(inputs: &[Tensor<F>], h: f64, f: Fun) -> Result<GradCheck>
where
    F: Element,
    Fun: Fn(&mut Graph<F>, &[Var]) -> Result<Var>,
{
    let eval = |vals: &[Tensor<F>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = vals.iter().map(|t| g.leaf(t.clone(), false)).collect();
        let out = f(&mut g, &vars)?;
        Ok(g.scalar(out))
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone(), true)).collect();
    let out = f(&mut g, &vars)?;
    g.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| match g.grad(v) {
            Some(gr) => gr.iter().map(|x| x.as_f64()).collect(),
            None => vec![0.0; t.numel()],
        })
        .collect();

    let mut numeric = Vec::with_capacity(inputs.len());
    let mut work: Vec<Tensor<F>> = inputs.to_vec();
    for ti in 0..inputs.len() {
        let mut col = Vec::with_capacity(inputs[ti].numel());
        for j in 0..inputs[ti].numel() {
            let orig = inputs[ti].data()[j];
            work[ti].data_mut()[j] = F::of(orig.as_f64() + h);
            let plus = eval(&work)?;
            work[ti].data_mut()[j] = F::of(orig.as_f64() - h);
            let minus = eval(&work)?;
            work[ti].data_mut()[j] = orig;
            col.push((plus - minus) / (2.0 * h));
        }
        numeric.push(col);
    }

    let (mut diff2, mut a2, mut n2, mut max_abs) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for (a, n) in analytic.iter().flatten().zip(numeric.iter().flatten()) {
        diff2 += (a - n) * (a - n);
        a2 += a * a;
        n2 += n * n;
        max_abs = max_abs.max((a - n).abs());
    }
    let denom = a2.sqrt().max(n2.sqrt());
    let rel_error = if denom == 0.0 { 0.0 } else { diff2.sqrt() / denom };
    Ok(GradCheck {
        rel_error,
        max_abs_error: max_abs,
        analytic,
        numeric,
    })
}
