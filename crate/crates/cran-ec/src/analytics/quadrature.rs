//! Adaptive quadrature shared by the average-power expressions.

use crate::error::{Error, Result};
use crate::specfun;

const MAX_DEPTH: usize = 60;

fn simpson(a: f64, fa: f64, fm: f64, fb: f64, b: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn adaptive<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: usize,
) -> Result<f64> {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson(a, fa, flm, fm, m);
    let right = simpson(m, fm, frm, fb, b);
    let delta = left + right - whole;
    if delta.abs() <= 15.0 * tol {
        return Ok(left + right + delta / 15.0);
    }
    if depth >= MAX_DEPTH {
        return Err(Error::Convergence {
            op: "integrate",
            limit: MAX_DEPTH,
        });
    }
    Ok(adaptive(f, a, m, fa, flm, fm, left, 0.5 * tol, depth + 1)?
        + adaptive(f, m, b, fm, frm, fb, right, 0.5 * tol, depth + 1)?)
}

/// Number of fixed panels seeding the adaptive recursion. Guards against
/// the classic blind spot where the three initial samples all miss a
/// narrow bump and the coarse estimate self-certifies.
const INIT_PANELS: usize = 16;

fn adaptive_panels<F: Fn(f64) -> f64>(f: &F, lo: f64, hi: f64, abs_tol: f64) -> Result<f64> {
    let step = (hi - lo) / INIT_PANELS as f64;
    let tol = abs_tol / INIT_PANELS as f64;
    let mut total = 0.0;
    for k in 0..INIT_PANELS {
        let a = lo + k as f64 * step;
        let b = if k + 1 == INIT_PANELS { hi } else { a + step };
        let (fa, fm, fb) = (f(a), f(0.5 * (a + b)), f(b));
        let whole = simpson(a, fa, fm, fb, b);
        total += adaptive(f, a, b, fa, fm, fb, whole, tol, 0)?;
    }
    Ok(total)
}

/// Adaptive Simpson quadrature of `f` over `[lo, hi]` to absolute
/// tolerance `abs_tol`. `hi` may be `f64::INFINITY`; the tail is folded in
/// through the substitution t = lo + u/(1-u), so the integrand must decay
/// faster than 1/t² (every gamma-weighted integrand here decays
/// exponentially).
pub fn integrate<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, abs_tol: f64) -> Result<f64> {
    if !(abs_tol > 0.0) {
        return Err(Error::domain("integrate", "abs_tol must be > 0"));
    }
    if !lo.is_finite() {
        return Err(Error::domain("integrate", "lower limit must be finite"));
    }
    if hi.is_infinite() {
        let g = move |u: f64| {
            if u >= 1.0 {
                0.0
            } else {
                let w = 1.0 - u;
                f(lo + u / w) / (w * w)
            }
        };
        return adaptive_panels(&g, 0.0, 1.0, abs_tol);
    }
    if hi < lo {
        return Err(Error::domain("integrate", "upper limit below lower limit"));
    }
    if hi == lo {
        return Ok(0.0);
    }
    adaptive_panels(&f, lo, hi, abs_tol)
}

/// Upper truncation point for gamma-weighted semi-infinite integrals: the
/// smallest power-of-two multiple of the mean whose right tail mass under
/// Gamma(m, mean/m) is below `tail_mass`.
pub fn gamma_tail_cutoff(m: f64, mean: f64, tail_mass: f64) -> f64 {
    let mut u = mean.max(1e-12);
    for _ in 0..200 {
        match specfun::reg_upper_gamma(m, m * u / mean) {
            Ok(q) if q < tail_mass => return u,
            _ => u *= 2.0,
        }
    }
    u
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn polynomial_and_normalization() {
        assert_relative_eq!(
            integrate(|x| x, 0.0, 1.0, 1e-12).unwrap(),
            0.5,
            epsilon = 1e-12
        );
        let mass = integrate(
            |a| crate::channel::pdf(a, 2.0, 3.89).unwrap(),
            0.0,
            f64::INFINITY,
            1e-10,
        )
        .unwrap();
        assert_relative_eq!(mass, 1.0, epsilon = 1e-8);
    }

    #[test]
    fn tolerance_halving_is_stable() {
        // Richardson-style consistency on a representative region integrand.
        let f = |a1: f64| {
            let arg = 0.9 * (1.0 + 0.8 * a1).powf(2.4427);
            crate::channel::pdf(a1, 2.0, 3.89).unwrap()
                * crate::specfun::reg_lower_gamma(2.0, arg).unwrap()
        };
        let coarse = integrate(f, 0.2, 9.0, 1e-8).unwrap();
        let fine = integrate(f, 0.2, 9.0, 5e-9).unwrap();
        assert!((coarse - fine).abs() < 1e-8);
    }

    #[test]
    fn cutoff_truncates_the_tail() {
        let u = gamma_tail_cutoff(2.0, 3.89, 1e-12);
        assert!(crate::specfun::reg_upper_gamma(2.0, 2.0 * u / 3.89).unwrap() < 1e-12);
        assert!(u < 3.89 * 128.0);
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(integrate(|x| x, 0.0, 1.0, 0.0).is_err());
        assert!(integrate(|x| x, 1.0, 0.0, 1e-9).is_err());
    }

    #[test]
    fn reports_nonconvergence_instead_of_guessing() {
        // an interior near-singularity the refinement cannot settle at
        // this tolerance
        let nasty = |x: f64| (x - 0.31).abs().powf(-0.97);
        match integrate(nasty, 0.0, 1.0, 1e-13) {
            Err(crate::error::Error::Convergence { .. }) => {}
            other => panic!("expected a convergence error, got {other:?}"),
        }
    }
}
