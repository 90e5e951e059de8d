//! Deterministic flow `S^t`, its linearization `Φ_x(t)` and the covariance
//! of the linear-response Gaussian, all by fixed-step RK4.

use crate::error::{Error, Result};
use crate::linalg::{self, Mat2, Vec2};
use crate::system::{ExitDomain, SaddleSystem};

pub const DEFAULT_STEP: f64 = 1e-3;
pub const DEFAULT_ESCAPE_BOUND: f64 = 1e6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FlowOptions {
    pub h: f64,
    /// Integration aborts with [`Error::TrajectoryEscape`] once `|x|` exceeds this.
    pub escape_bound: f64,
}

impl Default for FlowOptions {
    fn default() -> Self {
        FlowOptions {
            h: DEFAULT_STEP,
            escape_bound: DEFAULT_ESCAPE_BOUND,
        }
    }
}

impl FlowOptions {
    pub fn with_step(h: f64) -> Self {
        FlowOptions {
            h,
            ..Default::default()
        }
    }
}

/// One classical RK4 step for an autonomous system.
#[inline]
pub fn rk4_step<const N: usize, F>(f: &F, y: &[f64; N], h: f64) -> [f64; N]
where
    F: Fn(&[f64; N]) -> [f64; N],
{
    let shift = |base: &[f64; N], k: &[f64; N], c: f64| {
        let mut out = *base;
        for i in 0..N {
            out[i] += c * k[i];
        }
        out
    };
    let k1 = f(y);
    let k2 = f(&shift(y, &k1, 0.5 * h));
    let k3 = f(&shift(y, &k2, 0.5 * h));
    let k4 = f(&shift(y, &k3, h));
    let mut out = *y;
    for i in 0..N {
        out[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    out
}

fn check_step(h: f64, t: f64) -> Result<()> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::invalid(format!("step h = {h} must be positive")));
    }
    if !t.is_finite() {
        return Err(Error::invalid("integration time must be finite"));
    }
    Ok(())
}

/// Number of steps and the exact step length that lands on `t`.
fn step_plan(t: f64, h: f64) -> (usize, f64) {
    if t == 0.0 {
        return (0, 0.0);
    }
    let n = (t.abs() / h).ceil().max(1.0) as usize;
    (n, t / n as f64)
}

fn guard(x: Vec2, time: f64, bound: f64) -> Result<()> {
    if !(x[0].abs() <= bound && x[1].abs() <= bound) {
        return Err(Error::TrajectoryEscape { time, bound });
    }
    Ok(())
}

/// `S^t x`. Negative `t` integrates backwards.
pub fn flow_map(system: &SaddleSystem, x: Vec2, t: f64, h: f64) -> Result<Vec2> {
    flow_map_with(system, x, t, &FlowOptions::with_step(h))
}

pub fn flow_map_with(system: &SaddleSystem, x: Vec2, t: f64, opts: &FlowOptions) -> Result<Vec2> {
    check_step(opts.h, t)?;
    let (n, dt) = step_plan(t, opts.h);
    let f = |y: &[f64; 2]| system.drift(*y);
    let mut y = x;
    for k in 0..n {
        y = rk4_step(&f, &y, dt);
        guard(y, (k + 1) as f64 * dt, opts.escape_bound)?;
    }
    Ok(y)
}

/// `Φ_x` sampled on the integration grid together with the base orbit.
#[derive(Clone, Debug)]
pub struct VariationalPath {
    pub times: Vec<f64>,
    pub states: Vec<Vec2>,
    pub phi: Vec<Mat2>,
}

impl VariationalPath {
    pub fn final_phi(&self) -> Mat2 {
        *self.phi.last().expect("path has at least the initial point")
    }

    pub fn final_state(&self) -> Vec2 {
        *self.states.last().expect("path has at least the initial point")
    }
}

fn variational_rhs(system: &SaddleSystem, y: &[f64; 6]) -> [f64; 6] {
    let x = [y[0], y[1]];
    let b = system.drift(x);
    let a = system.drift_jacobian(x);
    let phi = [[y[2], y[3]], [y[4], y[5]]];
    let d = linalg::mat_mul(&a, &phi);
    [b[0], b[1], d[0][0], d[0][1], d[1][0], d[1][1]]
}

/// Solves `dΦ/dt = Db(S^t x)Φ`, `Φ(0) = I`, jointly with the orbit.
pub fn variational_flow(system: &SaddleSystem, x: Vec2, t_end: f64, h: f64) -> Result<VariationalPath> {
    let opts = FlowOptions::with_step(h);
    check_step(h, t_end)?;
    if t_end < 0.0 {
        return Err(Error::invalid("variational flow horizon must be non-negative"));
    }
    let (n, dt) = step_plan(t_end, h);
    let f = |y: &[f64; 6]| variational_rhs(system, y);
    let mut y = [x[0], x[1], 1.0, 0.0, 0.0, 1.0];
    let mut path = VariationalPath {
        times: Vec::with_capacity(n + 1),
        states: Vec::with_capacity(n + 1),
        phi: Vec::with_capacity(n + 1),
    };
    path.times.push(0.0);
    path.states.push(x);
    path.phi.push(linalg::IDENTITY);
    for k in 0..n {
        y = rk4_step(&f, &y, dt);
        let t = (k + 1) as f64 * dt;
        guard([y[0], y[1]], t, opts.escape_bound)?;
        path.times.push(t);
        path.states.push([y[0], y[1]]);
        path.phi.push([[y[2], y[3]], [y[4], y[5]]]);
    }
    Ok(path)
}

/// Covariance `C(t)` of `N = Φ_x(t)∫₀ᵗ Φ_x(s)⁻¹σ(S^s x)dW` on the grid.
#[derive(Clone, Debug)]
pub struct CovariancePath {
    pub times: Vec<f64>,
    pub states: Vec<Vec2>,
    pub phi: Vec<Mat2>,
    pub cov: Vec<Mat2>,
}

fn lyapunov_rhs(system: &SaddleSystem, y: &[f64; 9]) -> [f64; 9] {
    let x = [y[0], y[1]];
    let b = system.drift(x);
    let a = system.drift_jacobian(x);
    let phi = [[y[2], y[3]], [y[4], y[5]]];
    let c = [[y[6], y[7]], [y[7], y[8]]];
    let s = system.sigma(x);
    let ss = linalg::mat_mul(&s, &linalg::transpose(&s));
    let dphi = linalg::mat_mul(&a, &phi);
    let ac = linalg::mat_mul(&a, &c);
    let dc00 = 2.0 * ac[0][0] + ss[0][0];
    let dc01 = ac[0][1] + ac[1][0] + ss[0][1];
    let dc11 = 2.0 * ac[1][1] + ss[1][1];
    [b[0], b[1], dphi[0][0], dphi[0][1], dphi[1][0], dphi[1][1], dc00, dc01, dc11]
}

/// Integrates `dC/dt = A(t)C + CA(t)ᵀ + σσᵀ(S^t x)`, `C(0) = 0`, with the
/// orbit and `Φ_x`. `C` is kept symmetric by construction.
pub fn covariance_flow(system: &SaddleSystem, x: Vec2, t_end: f64, h: f64) -> Result<CovariancePath> {
    check_step(h, t_end)?;
    if t_end < 0.0 {
        return Err(Error::invalid("covariance horizon must be non-negative"));
    }
    let (n, dt) = step_plan(t_end, h);
    let f = |y: &[f64; 9]| lyapunov_rhs(system, y);
    let mut y = [x[0], x[1], 1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0];
    let mut path = CovariancePath {
        times: vec![0.0],
        states: vec![x],
        phi: vec![linalg::IDENTITY],
        cov: vec![linalg::ZERO],
    };
    for k in 0..n {
        y = rk4_step(&f, &y, dt);
        let t = (k + 1) as f64 * dt;
        guard([y[0], y[1]], t, DEFAULT_ESCAPE_BOUND)?;
        path.times.push(t);
        path.states.push([y[0], y[1]]);
        path.phi.push([[y[2], y[3]], [y[4], y[5]]]);
        path.cov.push([[y[6], y[7]], [y[7], y[8]]]);
    }
    Ok(path)
}

/// Time for the deterministic orbit of `x` to reach `∂V`, and the hitting
/// point. The crossing step is refined by bisection.
pub fn time_to_boundary(
    system: &SaddleSystem,
    x: Vec2,
    domain: &ExitDomain,
    h: f64,
    t_max: f64,
) -> Result<(f64, Vec2)> {
    check_step(h, t_max)?;
    if !domain.contains(x) {
        return Err(Error::invalid("orbit start is not inside the exit domain"));
    }
    let f = |y: &[f64; 2]| system.drift(*y);
    let mut t = 0.0;
    let mut y = x;
    while t < t_max {
        let next = rk4_step(&f, &y, h);
        guard(next, t + h, DEFAULT_ESCAPE_BOUND)?;
        if !domain.contains(next) {
            let (mut lo, mut hi) = (0.0, h);
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if domain.contains(rk4_step(&f, &y, mid)) {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            return Ok((t + hi, rk4_step(&f, &y, hi)));
        }
        y = next;
        t += h;
    }
    Err(Error::invalid(format!(
        "orbit did not reach the boundary within t = {t_max}"
    )))
}
