//! Adaptive Simpson quadrature, including half-line integrals of
//! exponentially damped integrands.

use crate::error::{Error, Result};

pub const DEFAULT_TOL: f64 = 1e-10;
/// Half-line integrals stop at `s*` with `e^{−2λs*}` below this.
pub const TAIL_CUTOFF: f64 = 1e-14;
const MAX_DEPTH: u32 = 48;

struct Panel {
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
}

fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

fn recurse<F: Fn(f64) -> f64>(f: &F, p: Panel, tol: f64, depth: u32) -> Result<f64> {
    let m = 0.5 * (p.a + p.b);
    let lm = 0.5 * (p.a + m);
    let rm = 0.5 * (m + p.b);
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson(p.a, m, p.fa, flm, p.fm);
    let right = simpson(m, p.b, p.fm, frm, p.fb);
    let diff = left + right - p.whole;
    if !diff.is_finite() {
        return Err(Error::NonFinite(format!("integrand near s = {m}")));
    }
    if depth == 0 {
        return Err(Error::Internal(format!(
            "quadrature did not converge on [{}, {}]",
            p.a, p.b
        )));
    }
    if diff.abs() <= 15.0 * tol {
        return Ok(left + right + diff / 15.0);
    }
    let l = recurse(
        f,
        Panel { a: p.a, b: m, fa: p.fa, fm: flm, fb: p.fm, whole: left },
        0.5 * tol,
        depth - 1,
    )?;
    let r = recurse(
        f,
        Panel { a: m, b: p.b, fa: p.fm, fm: frm, fb: p.fb, whole: right },
        0.5 * tol,
        depth - 1,
    )?;
    Ok(l + r)
}

/// `∫_a^b f` to absolute tolerance `tol`.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> Result<f64> {
    if !(a.is_finite() && b.is_finite() && tol > 0.0) {
        return Err(Error::invalid("quadrature needs finite limits and positive tolerance"));
    }
    if a == b {
        return Ok(0.0);
    }
    // a few initial panels so a narrow feature is not skipped on the first look
    let panels = 16;
    let w = (b - a) / panels as f64;
    let mut total = 0.0;
    for k in 0..panels {
        let lo = a + k as f64 * w;
        let hi = if k + 1 == panels { b } else { lo + w };
        let (fa, fm, fb) = (f(lo), f(0.5 * (lo + hi)), f(hi));
        let whole = simpson(lo, hi, fa, fm, fb);
        total += recurse(
            &f,
            Panel { a: lo, b: hi, fa, fm, fb, whole },
            tol / panels as f64,
            MAX_DEPTH,
        )?;
    }
    Ok(total)
}

/// Truncation point for `∫₀^∞ e^{−2·rate·s} …`.
pub fn tail_cutoff(rate: f64) -> f64 {
    -TAIL_CUTOFF.ln() / (2.0 * rate)
}

/// `∫₀^∞ e^{−2·rate·s} k(s) ds` for bounded `k`, truncated at [`tail_cutoff`].
pub fn damped_half_line<F: Fn(f64) -> f64>(k: F, rate: f64) -> Result<f64> {
    if !(rate > 0.0 && rate.is_finite()) {
        return Err(Error::invalid("decay rate must be positive"));
    }
    let s_star = tail_cutoff(rate);
    adaptive_simpson(|s| (-2.0 * rate * s).exp() * k(s), 0.0, s_star, DEFAULT_TOL)
}
