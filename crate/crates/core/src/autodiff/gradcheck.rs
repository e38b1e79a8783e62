//! Central finite-difference check of reverse-mode gradients.

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Flat index of the worst element.
    pub worst_index: usize,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    pub pass: bool,
}

/// Relative error with the `max(|a|, |b|, 1e-8)` denominator.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Compares the tape gradient of `f` at `point` with central differences.
///
/// `f` receives a fresh tape and the input variable and returns a scalar.
/// It is re-evaluated at `point ± fd_step · e_k` for every element `k`, so it
/// must be deterministic (stochastic nodes take a fixed [`NoiseKey`]).
///
/// [`NoiseKey`]: super::rng::NoiseKey
pub fn grad_check<F>(f: F, point: &Tensor, fd_step: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    if !(fd_step > 0.0) {
        return Err(invalid(format!("fd_step must be positive, got {fd_step}")));
    }
    let mut tape = Tape::new();
    let x = tape.leaf(point.clone());
    let y = f(&mut tape, x)?;
    tape.backward(y)?;
    let analytic = tape
        .grad(x)
        .map(<[f64]>::to_vec)
        .unwrap_or_else(|| vec![0.0; point.len()]);

    let eval = |p: Tensor| -> Result<f64> {
        let mut t = Tape::new();
        let v = t.constant(p);
        let out = f(&mut t, v)?;
        t.value(out).item()
    };

    let mut numeric = Vec::with_capacity(point.len());
    for k in 0..point.len() {
        let mut plus = point.clone();
        plus.data_mut()[k] += fd_step;
        let mut minus = point.clone();
        minus.data_mut()[k] -= fd_step;
        let d = (eval(plus)? - eval(minus)?) / (2.0 * fd_step);
        if !d.is_finite() {
            return Err(Error::NonFinite("grad_check"));
        }
        numeric.push(d);
    }

    let (worst_index, max_rel_error) = analytic
        .iter()
        .zip(&numeric)
        .map(|(&a, &b)| relative_error(a, b))
        .enumerate()
        .fold((0, 0.0_f64), |best, (i, e)| if e > best.1 { (i, e) } else { best });

    Ok(GradCheckReport {
        max_rel_error,
        worst_index,
        analytic,
        numeric,
        pass: max_rel_error <= tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares_passes() {
        let p = Tensor::vector(vec![1.0, 2.0, 3.0]).unwrap();
        let r = grad_check(
            |t, x| {
                let s = t.square(x)?;
                t.sum(s, None)
            },
            &p,
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(r.pass, "{r:?}");
        assert_eq!(r.analytic, vec![2.0, 4.0, 6.0]);
    }

    #[test]
    fn detects_wrong_gradient() {
        // relu' is taken as 0 at the kink; a point sitting on it gives a
        // central difference of 0.5, which the check must flag.
        let p = Tensor::vector(vec![0.0]).unwrap();
        let r = grad_check(
            |t, x| {
                let r = t.relu(x)?;
                t.sum(r, None)
            },
            &p,
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(!r.pass);
    }

    #[test]
    fn rejects_nonpositive_step() {
        let p = Tensor::scalar(1.0);
        assert!(grad_check(|t, x| t.square(x), &p, 0.0, 1e-4).is_err());
    }
}
