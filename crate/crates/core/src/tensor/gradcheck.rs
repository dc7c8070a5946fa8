use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Outcome of comparing reverse-mode gradients with finite differences.
#[derive(Clone, Debug)]
pub struct GradcheckReport {
    /// Worst `|analytic - numeric| / max(|analytic|, |numeric|, GRAD_FLOOR)`.
    pub max_rel_error: f64,
    /// `(input, component)` where the worst error occurred.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
}

/// Gradient components smaller than this are compared in absolute terms, so
/// that finite-difference roundoff on an exactly zero gradient is not
/// reported as a large relative error.
pub const GRAD_FLOOR: f64 = 1e-6;

/// Checks the gradient of a scalar function of `inputs` at 64-bit precision.
///
/// Numeric derivatives use the fourth-order central stencil
/// `(-f(x+2h) + 8f(x+h) - 8f(x-h) + f(x-2h)) / 12h`.
pub fn gradcheck<F>(f: F, inputs: &[Tensor<f64>], step: f64) -> Result<GradcheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    if !(step > 0.0) {
        return Err(Error::param(format!("gradcheck step must be positive, got {step}")));
    }
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let out = f(&mut tape, &vars)?;
    check_finite(tape.value(out).item(), "function value")?;
    let grads = tape.backward(out)?;
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .map(|&v| grads.get(v).cloned().expect("leaf gradient"))
        .collect();

    let eval = |perturbed: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = perturbed.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        let v = tape.value(out).item();
        check_finite(v, "perturbed function value")?;
        Ok(v)
    };

    let mut report = GradcheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        analytic: 0.0,
        numeric: 0.0,
    };
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (ti, input) in inputs.iter().enumerate() {
        for ci in 0..input.numel() {
            let x0 = input.data()[ci];
            let mut at = |offset: f64| -> Result<f64> {
                work[ti].data_mut()[ci] = x0 + offset;
                let v = eval(&work);
                work[ti].data_mut()[ci] = x0;
                v
            };
            let numeric = (-at(2.0 * step)? + 8.0 * at(step)? - 8.0 * at(-step)? + at(-2.0 * step)?)
                / (12.0 * step);
            let a = analytic[ti].data()[ci];
            check_finite(a, "analytic gradient")?;
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(GRAD_FLOOR);
            if rel > report.max_rel_error {
                report = GradcheckReport {
                    max_rel_error: rel,
                    worst: (ti, ci),
                    analytic: a,
                    numeric,
                };
            }
        }
    }
    Ok(report)
}

fn check_finite(v: f64, what: &str) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::Numeric(format!("{what} is {v}")))
    }
}
