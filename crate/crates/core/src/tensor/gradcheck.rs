use super::{Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Outcome of comparing reverse-mode gradients with central differences.
#[derive(Clone, Debug, Default)]
pub struct GradCheck {
    /// Largest `|a - n| / max(|a|, |n|, 1e-8)` over all finite components.
    pub max_rel_error: f64,
    /// `(input, component)` where the maximum occurred.
    pub worst: Option<(usize, usize)>,
    /// Components whose perturbed evaluations were not finite.
    pub non_finite: Vec<(usize, usize)>,
    pub components: usize,
}

fn evaluate<F>(f: &F, point: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = point.iter().map(|t| g.leaf(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    g.value(out)
        .item()
        .ok_or_else(|| Error::NonScalarSeed(g.shape(out).to_vec()))
}

/// Checks the gradient of the scalar function `f` at `point` against central
/// finite differences with the given `step`.
pub fn gradcheck<F>(f: F, point: &[Tensor], step: f64) -> Result<GradCheck>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    if !(step > 0.0) {
        return Err(Error::invalid("gradcheck", "step must be positive"));
    }
    let mut g = Graph::new();
    let vars: Vec<Var> = point.iter().map(|t| g.leaf(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    let grads = g.backward(out)?;

    let mut report = GradCheck::default();
    let mut probe: Vec<Tensor> = point.to_vec();
    for (i, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var);
        for c in 0..point[i].len() {
            let x0 = point[i].data()[c];
            probe[i].data_mut()[c] = x0 + step;
            let plus = evaluate(&f, &probe)?;
            probe[i].data_mut()[c] = x0 - step;
            let minus = evaluate(&f, &probe)?;
            probe[i].data_mut()[c] = x0;
            report.components += 1;
            if !plus.is_finite() || !minus.is_finite() {
                report.non_finite.push((i, c));
                continue;
            }
            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic.data()[c];
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            let rel = (a - numeric).abs() / denom;
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = rel.max(report.max_rel_error);
                report.worst = Some((i, c));
            }
        }
    }
    Ok(report)
}
