use super::{Tape, Tensor, Var};
use crate::{Error, Result};

/// Absolute error below which a coordinate passes regardless of relative error.
pub const ABS_FLOOR: f64 = 1e-6;

/// Per-coordinate comparison of tape gradients against central differences.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    pub rel_errors: Vec<f64>,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub passed: bool,
}

/// Checks `d f / d x` at `x` with central differences of step `h`.
///
/// A coordinate passes when its relative error is at most `tol` or its
/// absolute error is at most [`ABS_FLOOR`].
pub fn grad_check<F>(f: F, x: &Tensor, h: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    grad_check_with_floor(f, x, h, tol, ABS_FLOOR)
}

pub fn grad_check_with_floor<F>(
    f: F,
    x: &Tensor,
    h: f64,
    tol: f64,
    abs_floor: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let eval = |point: &Tensor| -> Result<f64> {
        let mut tape = Tape::new();
        let v = tape.constant(point.clone());
        let out = f(&mut tape, v)?;
        let value = tape.value(out);
        if !value.is_scalar() {
            return Err(Error::shape(
                "grad_check",
                format!("function must be scalar, got {:?}", value.shape()),
            ));
        }
        Ok(value.data()[0])
    };

    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone());
    let out = f(&mut tape, xv)?;
    tape.backward(out)?;
    let analytic = tape
        .grad(xv)
        .map(Tensor::into_data)
        .unwrap_or_else(|| vec![0.0; x.numel()]);

    let mut numeric = Vec::with_capacity(x.numel());
    let mut probe = x.clone();
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let plus = eval(&probe)?;
        probe.data_mut()[i] = orig - h;
        let minus = eval(&probe)?;
        probe.data_mut()[i] = orig;
        numeric.push((plus - minus) / (2.0 * h));
    }

    let mut rel_errors = Vec::with_capacity(x.numel());
    let mut passed = true;
    let mut max_abs_error = 0.0f64;
    for (a, n) in analytic.iter().zip(&numeric) {
        let abs = (a - n).abs();
        let scale = a.abs().max(n.abs());
        let rel = if scale == 0.0 { 0.0 } else { abs / scale };
        passed &= rel <= tol || abs <= abs_floor;
        max_abs_error = max_abs_error.max(abs);
        rel_errors.push(rel);
    }
    let max_rel_error = rel_errors.iter().copied().fold(0.0, f64::max);
    Ok(GradCheckReport {
        analytic,
        numeric,
        rel_errors,
        max_rel_error,
        max_abs_error,
        passed,
    })
}
