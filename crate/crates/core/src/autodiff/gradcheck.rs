//! Finite-difference verification of tape gradients.

use crate::scalar::Scalar;

use super::{backprop, AutodiffError, Tape, Tensor, Var};

/// Denominator floor for the relative error, so that gradients that vanish
/// analytically are compared in absolute terms.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

pub const DEFAULT_STEP: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct Mismatch {
    pub param: usize,
    pub coord: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    /// Coordinate with the largest relative error.
    pub worst: Option<Mismatch>,
    /// Every coordinate whose error reached the tolerance.
    pub failures: Vec<Mismatch>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Compares tape gradients of `expr` against central differences.
///
/// `expr` receives a fresh tape and the parameters registered on it (in the
/// order given) and must return a scalar.
pub fn grad_check<T, F>(expr: F, params: &[Tensor<T>], tolerance: f64) -> Result<GradCheckReport, AutodiffError>
where
    T: Scalar,
    F: Fn(&mut Tape<T>, &[Var]) -> Result<Var, AutodiffError>,
{
    let eval = |ps: &[Tensor<T>]| -> Result<(Tape<T>, Var), AutodiffError> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ps.iter().map(|p| tape.param(p.clone())).collect();
        let out = expr(&mut tape, &vars)?;
        Ok((tape, out))
    };
    let (tape, out) = eval(params)?;
    let analytic = backprop(&tape, out)?.params();
    compare_gradients(
        &analytic,
        |ps| {
            let (tape, out) = eval(ps)?;
            tape.value(out).item().ok_or(AutodiffError::NotScalar {
                shape: tape.value(out).shape().to_vec(),
            })
        },
        params,
        tolerance,
        DEFAULT_STEP,
    )
}

/// Checks supplied gradients against central differences of `value`.
pub fn compare_gradients<T, F>(
    analytic: &[Tensor<T>],
    value: F,
    params: &[Tensor<T>],
    tolerance: f64,
    step: f64,
) -> Result<GradCheckReport, AutodiffError>
where
    T: Scalar,
    F: Fn(&[Tensor<T>]) -> Result<T, AutodiffError>,
{
    if analytic.len() != params.len() {
        return Err(AutodiffError::ShapeMismatch {
            op: "grad_check",
            detail: format!("{} gradients for {} params", analytic.len(), params.len()),
        });
    }
    let mut work = params.to_vec();
    let mut report = GradCheckReport {
        checked: 0,
        max_rel_error: 0.0,
        worst: None,
        failures: Vec::new(),
        tolerance,
    };
    let h = T::of(step);
    for (pi, grad) in analytic.iter().enumerate() {
        for coord in 0..params[pi].len() {
            let orig = params[pi].data()[coord];
            work[pi].data_mut()[coord] = orig + h;
            let plus = value(&work)?;
            work[pi].data_mut()[coord] = orig - h;
            let minus = value(&work)?;
            work[pi].data_mut()[coord] = orig;
            let numeric = ((plus - minus) / (h + h)).as_f64();
            let a = grad.data()[coord].as_f64();
            let rel = relative_error(a, numeric);
            let m = Mismatch { param: pi, coord, analytic: a, numeric, rel_error: rel };
            if rel >= tolerance {
                report.failures.push(m.clone());
            }
            if report.worst.is_none() || rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some(m);
            }
            report.checked += 1;
        }
    }
    Ok(report)
}
