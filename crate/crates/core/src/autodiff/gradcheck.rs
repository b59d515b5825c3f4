use super::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// One coordinate whose analytic and numeric derivatives disagree.
#[derive(Debug, Clone, PartialEq)]
pub struct CoordFailure {
    pub input: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// Largest relative error seen for each input.
    pub per_input: Vec<f64>,
    pub failures: Vec<CoordFailure>,
    pub pass: bool,
}

/// Denominator floor of [`relative_error`]; below it the error is
/// effectively absolute, which keeps round-off on near-zero derivatives from
/// counting as a failure.
pub const REL_ERR_FLOOR: f64 = 1e-8;

/// `|a - n| / max(REL_ERR_FLOOR, |a| + |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / f64::max(REL_ERR_FLOOR, analytic.abs() + numeric.abs())
}

/// Compares reverse-mode gradients of a scalar function against central
/// differences `(f(x+h) - f(x-h)) / 2h`, coordinate by coordinate.
///
/// A coordinate that misses `tol` is retried with `h / 10` and `h * 10`:
/// when `x +- h` straddles a ReLU or max-pool kink the wide difference is
/// wrong, and on tiny derivatives round-off swamps the narrow one. The
/// smallest error is kept.
///
/// `forward` receives a fresh graph and one leaf per entry of `inputs` and
/// must return a one-element node.
pub fn grad_check<F>(forward: F, inputs: &[Tensor], step: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let leaves: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let out = forward(&mut g, &leaves)?;
    let grads = g.backward(out)?;
    let analytic: Vec<Tensor> = leaves
        .iter()
        .zip(inputs)
        .map(|(v, t)| grads.get(*v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();
    drop(g);

    let eval = |xs: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vs: Vec<Var> = xs.iter().map(|t| g.constant(t.clone())).collect();
        let out = forward(&mut g, &vs)?;
        let v = g.value(out);
        if v.numel() != 1 {
            return Err(Error::NonScalarLoss(v.shape().into()));
        }
        Ok(v.item())
    };

    let mut work: Vec<Tensor> = inputs.to_vec();
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        per_input: vec![0.0; inputs.len()],
        failures: Vec::new(),
        pass: true,
    };
    for i in 0..inputs.len() {
        for j in 0..inputs[i].numel() {
            let x0 = inputs[i].data()[j];
            let a = analytic[i].data()[j];
            let mut central = |h: f64| -> Result<f64> {
                work[i].data_mut()[j] = x0 + h;
                let fp = eval(&work)?;
                work[i].data_mut()[j] = x0 - h;
                let fm = eval(&work)?;
                work[i].data_mut()[j] = x0;
                Ok((fp - fm) / (2.0 * h))
            };
            let mut numeric = central(step)?;
            let mut rel = relative_error(a, numeric);
            for h in [step / 10.0, step * 10.0] {
                if rel < tol {
                    break;
                }
                let retry = central(h)?;
                let retry_rel = relative_error(a, retry);
                if retry_rel < rel {
                    numeric = retry;
                    rel = retry_rel;
                }
            }
            report.per_input[i] = report.per_input[i].max(rel);
            report.max_rel_err = report.max_rel_err.max(rel);
            if rel.is_nan() || rel >= tol {
                report.pass = false;
                report.failures.push(CoordFailure {
                    input: i,
                    index: j,
                    analytic: a,
                    numeric,
                    rel_err: rel,
                });
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_function_is_exact() {
        let x = Tensor::from_vec(vec![0.5, -1.5, 2.0, 3.25]);
        let r = grad_check(
            |g, v| {
                let s = g.scale(v[0], 3.0);
                Ok(g.sum(s))
            },
            &[x],
            1e-3,
            1e-9,
        )
        .unwrap();
        assert!(r.pass);
        assert!(r.max_rel_err < 1e-9, "{}", r.max_rel_err);
    }

    #[test]
    fn reports_broken_gradient() {
        let x = Tensor::from_vec(vec![1.0, 2.0]);
        let r = grad_check(
            |g, v| {
                let sq = g.mul(v[0], v[0])?;
                let cube = g.mul(sq, v[0])?;
                Ok(g.sum(cube))
            },
            &[x],
            0.5,
            1e-6,
        )
        .unwrap();
        // Central differences of x^3 are off by h^2 = 0.25.
        assert!(!r.pass);
        assert_eq!(r.failures.len(), 2);
    }
}
