//! Central-difference verification of reverse-mode gradients.

use crate::error::{Error, Result};

use super::array::Tensor;
use super::graph::{Graph, Var};

/// Worst element found by [`grad_check`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(input index, element index)` of the worst element.
    pub location: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub elements: usize,
}

/// Compares the gradient of the scalar `f` at `inputs` with central
/// differences of step `eps`, element by element.
///
/// The relative error of one element is
/// `|g_ad - g_fd| / max(1e-8, |g_ad| + |g_fd|)`.
pub fn grad_check<F>(f: F, inputs: &[Tensor<f64>], eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor<f64>]| -> Result<(Graph<f64>, Vec<Var>, Var)> {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|t| g.variable(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        if g.value(out).len() != 1 {
            return Err(Error::Shape(format!(
                "grad_check of non-scalar output {}",
                g.shape(out)
            )));
        }
        Ok((g, vars, out))
    };

    let (g, vars, out) = eval(inputs)?;
    let base = g.value(out).item();
    if !base.is_finite() {
        return Err(Error::NonFinite(format!(
            "function value {base} at the base point"
        )));
    }
    let grads = g.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| {
            grads
                .get(v)
                .map_or_else(|| vec![0.0; t.len()], <[f64]>::to_vec)
        })
        .collect();
    for (i, a) in analytic.iter().enumerate() {
        if let Some(j) = a.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "analytic gradient of input {i} at element {j}"
            )));
        }
    }
    drop(g);

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        location: (0, 0),
        analytic: 0.0,
        numeric: 0.0,
        elements: 0,
    };
    let mut probe = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        #[allow(clippy::needless_range_loop)]
        for j in 0..input.len() {
            let x0 = input.data()[j];
            let mut side = |x: f64| -> Result<f64> {
                probe[i].data_mut()[j] = x;
                let (g, _, out) = eval(&probe)?;
                let v = g.value(out).item();
                if !v.is_finite() {
                    return Err(Error::NonFinite(format!(
                        "function value at input {i} element {j} shifted to {x}"
                    )));
                }
                Ok(v)
            };
            let plus = side(x0 + eps)?;
            let minus = side(x0 - eps)?;
            probe[i].data_mut()[j] = x0;
            let numeric = (plus - minus) / (2.0 * eps);
            let ad = analytic[i][j];
            let rel = (ad - numeric).abs() / (ad.abs() + numeric.abs()).max(1e-8);
            report.elements += 1;
            if rel > report.max_rel_error || report.elements == 1 {
                report.max_rel_error = rel;
                report.location = (i, j);
                report.analytic = ad;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}
