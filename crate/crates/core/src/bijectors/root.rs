//! Bracketed scalar root finding (Chandrupatla's method with bisection fallback).

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct RootOptions {
    /// Absolute tolerance on the abscissa.
    pub xtol: f64,
    /// Absolute tolerance on `|f|`.
    pub ftol: f64,
    pub max_iter: usize,
}

impl Default for RootOptions {
    fn default() -> Self {
        RootOptions {
            xtol: 1e-14,
            ftol: 1e-12,
            max_iter: 100,
        }
    }
}

/// Root of `f` in `[a, b]`; `f(a)` and `f(b)` must differ in sign (or vanish).
pub fn chandrupatla<F>(mut f: F, a: f64, b: f64, opts: RootOptions) -> Result<f64>
where
    F: FnMut(f64) -> f64,
{
    let (mut a, mut b) = (a, b);
    let mut fa = f(a);
    let mut fb = f(b);
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if !(fa.is_finite() && fb.is_finite()) || fa.signum() == fb.signum() {
        return Err(Error::RootFinding(format!(
            "[{a}, {b}] does not bracket a root (f = {fa}, {fb})"
        )));
    }
    let mut c;
    let mut fc;
    let mut t = 0.5;
    for _ in 0..opts.max_iter {
        let xt = a + t * (b - a);
        let ft = f(xt);
        if ft.signum() == fa.signum() {
            c = a;
            fc = fa;
        } else {
            c = b;
            fc = fb;
            b = a;
            fb = fa;
        }
        a = xt;
        fa = ft;

        let (xm, fm) = if fa.abs() < fb.abs() {
            (a, fa)
        } else {
            (b, fb)
        };
        if fm == 0.0 || fm.abs() < opts.ftol {
            return Ok(xm);
        }
        let tol = 2.0 * f64::EPSILON * xm.abs() + opts.xtol;
        let tlim = tol / (b - c).abs();
        if tlim > 0.5 {
            return Ok(xm);
        }

        let xi = (a - b) / (c - b);
        let phi = (fa - fb) / (fc - fb);
        t = if phi * phi < xi && (1.0 - phi) * (1.0 - phi) < 1.0 - xi {
            fa / (fb - fa) * fc / (fb - fc) + (c - a) / (b - a) * fa / (fc - fa) * fb / (fc - fb)
        } else {
            0.5
        };
        t = t.clamp(tlim, 1.0 - tlim);
    }
    bisect(f, a.min(b), a.max(b), opts)
}

fn bisect<F>(mut f: F, mut lo: f64, mut hi: f64, opts: RootOptions) -> Result<f64>
where
    F: FnMut(f64) -> f64,
{
    let mut flo = f(lo);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let fm = f(mid);
        if fm == 0.0 || fm.abs() < opts.ftol || hi - lo < opts.xtol {
            return Ok(mid);
        }
        if fm.signum() == flo.signum() {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    Err(Error::RootFinding("bisection did not converge".into()))
}

/// Solve `f(x) = 0` for increasing `f`, widening `[lo, hi]` geometrically until
/// it brackets the root.
pub fn solve_increasing<F>(mut f: F, mut lo: f64, mut hi: f64, opts: RootOptions) -> Result<f64>
where
    F: FnMut(f64) -> f64,
{
    let mut width = (hi - lo).max(1e-3);
    for _ in 0..64 {
        let (flo, fhi) = (f(lo), f(hi));
        if flo <= 0.0 && fhi >= 0.0 {
            return chandrupatla(&mut f, lo, hi, opts);
        }
        if flo > 0.0 {
            lo -= width;
        }
        if fhi < 0.0 {
            hi += width;
        }
        width *= 2.0;
    }
    Err(Error::RootFinding(format!(
        "no bracket found after expansion to [{lo}, {hi}]"
    )))
}
