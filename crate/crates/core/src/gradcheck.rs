//! Central finite-difference oracle for graph gradients.
//!
//! The numeric side only ever runs forward passes, so it stays independent
//! of every backward rule it checks.

use crate::error::Result;
use crate::tensor::{Graph, Tensor, Var};

/// Outcome of one gradient check.
#[derive(Clone, Debug)]
pub struct GradCheck {
    /// Worst relative error over all checked inputs,
    /// `||analytic - numeric|| / max(||analytic||, ||numeric||, floor)`.
    pub max_rel_err: f64,
    /// Number of scalar coordinates perturbed.
    pub probes: usize,
    pub analytic_norm: f64,
}

impl GradCheck {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err <= tol
    }
}

fn eval<F>(build: &F, inputs: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = build(&mut g, &vars)?;
    Ok(g.value(out).item())
}

/// Compares autodiff gradients of the scalar produced by `build` against
/// central differences with step `h`, perturbing at most `max_probes`
/// evenly strided coordinates per input.
pub fn check<F>(inputs: &[Tensor], build: F, h: f64, max_probes: usize) -> Result<GradCheck>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = build(&mut g, &vars)?;
    let mut grads = g.backward(out)?;
    let analytic: Vec<Tensor> = vars.iter().map(|v| grads.take(*v)).collect();

    let mut worst = 0.0f64;
    let mut probes = 0;
    let mut analytic_norm = 0.0f64;
    for (idx, input) in inputs.iter().enumerate() {
        let n = input.numel();
        let stride = n.div_ceil(max_probes.max(1)).max(1);
        let mut diff2 = 0.0;
        let mut a2 = 0.0;
        let mut n2 = 0.0;
        for j in (0..n).step_by(stride) {
            let mut plus = inputs.to_vec();
            plus[idx].data_mut()[j] += h;
            let mut minus = inputs.to_vec();
            minus[idx].data_mut()[j] -= h;
            let numeric = (eval(&build, &plus)? - eval(&build, &minus)?) / (2.0 * h);
            let a = analytic[idx].data()[j];
            diff2 += (a - numeric).powi(2);
            a2 += a * a;
            n2 += numeric * numeric;
            probes += 1;
        }
        let scale = a2.sqrt().max(n2.sqrt()).max(1e-10);
        worst = worst.max(diff2.sqrt() / scale);
        analytic_norm += a2;
    }
    Ok(GradCheck {
        max_rel_err: worst,
        probes,
        analytic_norm: analytic_norm.sqrt(),
    })
}
