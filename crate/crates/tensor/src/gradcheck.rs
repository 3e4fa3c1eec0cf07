//! Central finite-difference gradient checking.

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct GradReport {
    /// Largest `|analytic - numeric| / (|analytic| + floor)` over all elements.
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub checked: usize,
}

/// Compare tape gradients of a scalar function against central differences.
///
/// `f` builds the scalar from leaf vars created for each of `inputs`.
pub fn check<F>(inputs: &[Tensor], h: f64, floor: f64, f: F) -> Result<GradReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.input_with_grad(t.clone())).collect();
    let loss = f(&mut g, &vars)?;
    g.backward(loss)?;
    let analytic: Vec<Tensor> = vars.iter().map(|&v| g.grad_or_zeros(v)).collect();

    let eval = |ins: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = ins.iter().map(|t| g.input(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok(g.value(out).item())
    };

    let mut report = GradReport {
        max_rel_err: 0.0,
        max_abs_err: 0.0,
        checked: 0,
    };
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (which, grad) in analytic.iter().enumerate() {
        for e in 0..inputs[which].numel() {
            let orig = inputs[which].data()[e];
            work[which].data_mut()[e] = orig + h;
            let up = eval(&work)?;
            work[which].data_mut()[e] = orig - h;
            let down = eval(&work)?;
            work[which].data_mut()[e] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = grad.data()[e];
            let abs = (a - numeric).abs();
            report.max_abs_err = report.max_abs_err.max(abs);
            report.max_rel_err = report.max_rel_err.max(abs / (a.abs() + floor));
            report.checked += 1;
        }
    }
    Ok(report)
}
