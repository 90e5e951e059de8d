//! Euler–Maruyama simulation of `dX = b(X)dt + εσ(X)dW` with exit detection.

use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Mat2, Vec2};
use crate::normal_form::TransformedSde;
use crate::system::{ExitDomain, ExitPoints, SaddleSystem};

/// Coefficients of a diffusion `dY = μ(Y)dt + ε s(Y)dW`.
pub trait Dynamics: Sync {
    /// `(μ(y), s(y))` at noise level `eps`.
    fn coefficients(&self, y: Vec2, eps: f64) -> Result<(Vec2, Mat2)>;
}

impl Dynamics for SaddleSystem {
    #[inline]
    fn coefficients(&self, y: Vec2, _eps: f64) -> Result<(Vec2, Mat2)> {
        Ok((self.drift(y), self.sigma(y)))
    }
}

impl Dynamics for TransformedSde {
    #[inline]
    fn coefficients(&self, y: Vec2, eps: f64) -> Result<(Vec2, Mat2)> {
        let c = TransformedSde::coefficients(self, y)?;
        let e2 = eps * eps;
        Ok((
            [c.drift[0] + e2 * c.psi[0], c.drift[1] + e2 * c.psi[1]],
            c.sigma_tilde,
        ))
    }
}

impl<D: Dynamics> Dynamics for &D {
    fn coefficients(&self, y: Vec2, eps: f64) -> Result<(Vec2, Mat2)> {
        (**self).coefficients(y, eps)
    }
}

/// `x + b h + ε√h σ z`.
#[inline]
pub fn em_step(x: Vec2, drift: Vec2, sigma: &Mat2, eps: f64, h: f64, z: Vec2) -> Vec2 {
    let s = eps * h.sqrt();
    [
        x[0] + drift[0] * h + s * (sigma[0][0] * z[0] + sigma[0][1] * z[1]),
        x[1] + drift[1] * h + s * (sigma[1][0] * z[0] + sigma[1][1] * z[1]),
    ]
}

#[inline]
pub fn gaussian_pair(rng: &mut ChaCha8Rng) -> Vec2 {
    [StandardNormal.sample(rng), StandardNormal.sample(rng)]
}

/// Independent stream for path `path_id` under master `seed`.
pub fn path_rng(seed: u64, path_id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path_id);
    rng
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub eps: f64,
    pub h: f64,
    pub t_max: f64,
    /// Paths leaving `(−guard, guard)²` are recorded as escaped.
    pub guard: f64,
    pub seed: u64,
    pub n_paths: usize,
}

impl SimConfig {
    /// Step `10⁻⁴·min(1/λ₊, 1/λ₋)` and horizon `10(α/λ₊)|ln ε| + 50`.
    pub fn with_defaults(eps: f64, alpha: f64, lambda_plus: f64, lambda_minus: f64, guard: f64, seed: u64, n_paths: usize) -> Self {
        SimConfig {
            eps,
            h: 1e-4 * (1.0 / lambda_plus).min(1.0 / lambda_minus),
            t_max: default_t_max(eps, alpha, lambda_plus),
            guard,
            seed,
            n_paths,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.h > 0.0 && self.h.is_finite()) {
            return Err(Error::invalid("time step must be positive"));
        }
        if !(self.t_max >= 1.0 && self.t_max.is_finite()) {
            return Err(Error::invalid("t_max must be at least 1"));
        }
        if !(self.eps > 0.0 && self.eps < 1.0) {
            return Err(Error::invalid("eps must lie in (0, 1)"));
        }
        if !(self.guard > 0.0) {
            return Err(Error::invalid("guard box must have positive size"));
        }
        Ok(())
    }
}

pub fn default_t_max(eps: f64, alpha: f64, lambda_plus: f64) -> f64 {
    10.0 * (alpha / lambda_plus) * eps.ln().abs() + 50.0
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExitKind {
    SideHit(i8),
    TopBottom,
    Censored,
    Escaped,
}

impl ExitKind {
    pub fn label(&self) -> &'static str {
        match self {
            ExitKind::SideHit(s) if *s > 0 => "side_plus",
            ExitKind::SideHit(_) => "side_minus",
            ExitKind::TopBottom => "top_bottom",
            ExitKind::Censored => "censored",
            ExitKind::Escaped => "escaped",
        }
    }

    pub fn from_label(s: &str) -> Result<Self> {
        Ok(match s {
            "side_plus" => ExitKind::SideHit(1),
            "side_minus" => ExitKind::SideHit(-1),
            "top_bottom" => ExitKind::TopBottom,
            "censored" => ExitKind::Censored,
            "escaped" => ExitKind::Escaped,
            other => return Err(Error::Parse(format!("unknown exit kind {other:?}"))),
        })
    }

    pub fn sign(&self) -> Option<i8> {
        match self {
            ExitKind::SideHit(s) => Some(*s),
            _ => None,
        }
    }
}

/// Exit triple rescaled by powers of `ε`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rescaled {
    pub psi_sign: i8,
    pub phi: f64,
    pub time_shifted: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExitSample {
    pub path_id: u64,
    pub kind: ExitKind,
    pub point: Vec2,
    pub time: f64,
    pub rescaled: Option<Rescaled>,
}

/// Scaling used to fill [`ExitSample::rescaled`]: the transverse coordinate
/// is multiplied by `ε^{−β}`, the time shifted by `(α/λ₊)ln ε`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Scaling {
    pub alpha: f64,
    pub beta: f64,
    pub lambda_plus: f64,
}

impl Scaling {
    pub fn time_shift(&self, eps: f64) -> f64 {
        self.alpha / self.lambda_plus * eps.ln()
    }
}

/// Where a path stops.
#[derive(Clone, Copy, Debug)]
pub enum Stopping<'a> {
    /// `|y₁| = level` (side hit, sign of `y₁`) or `|y₂| = top`.
    Strip { level: f64, top: f64 },
    /// Boundary of a polygon; hits on the edges carrying `q±` are side hits.
    Polygon {
        domain: &'a ExitDomain,
        exits: ExitPoints,
    },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PathParams {
    pub eps: f64,
    pub h: f64,
    pub t_max: f64,
    pub guard: f64,
}

impl From<&SimConfig> for PathParams {
    fn from(c: &SimConfig) -> Self {
        PathParams {
            eps: c.eps,
            h: c.h,
            t_max: c.t_max,
            guard: c.guard,
        }
    }
}

/// Raw result of stepping until a stopping rule fires.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hit {
    pub kind: ExitKind,
    /// Interpolated exit point.
    pub point: Vec2,
    pub time: f64,
    /// Polygon edge that was crossed.
    pub edge: Option<usize>,
}

fn outside_guard(y: Vec2, guard: f64) -> bool {
    !(y[0].abs() < guard && y[1].abs() < guard)
}

fn strip_fraction(old: f64, new: f64, level: f64) -> Option<f64> {
    if new.abs() < level {
        return None;
    }
    let target = level.copysign(new);
    let s = (target - old) / (new - old);
    Some(if s.is_finite() { s.clamp(0.0, 1.0) } else { 1.0 })
}

fn check_start(y: Vec2, stop: &Stopping<'_>) -> Option<Hit> {
    match *stop {
        Stopping::Strip { level, top } => {
            if y[1].abs() >= top {
                Some(Hit { kind: ExitKind::TopBottom, point: y, time: 0.0, edge: None })
            } else if y[0].abs() >= level {
                let sign = if y[0] >= 0.0 { 1 } else { -1 };
                Some(Hit { kind: ExitKind::SideHit(sign), point: y, time: 0.0, edge: None })
            } else {
                None
            }
        }
        Stopping::Polygon { domain, exits } => {
            if domain.contains(y) {
                None
            } else {
                let edge = nearest_edge(domain, y);
                Some(Hit {
                    kind: polygon_kind(domain, &exits, y, edge),
                    point: y,
                    time: 0.0,
                    edge: Some(edge),
                })
            }
        }
    }
}

fn nearest_edge(domain: &ExitDomain, y: Vec2) -> usize {
    (0..domain.edge_count())
        .max_by(|&a, &b| {
            let da = linalg::dot(domain.outward_normal(a), y) - domain.offset(a);
            let db = linalg::dot(domain.outward_normal(b), y) - domain.offset(b);
            da.total_cmp(&db)
        })
        .unwrap_or(0)
}

/// Side hit when the crossed edge carries `q±` (the nearer one if both do).
fn polygon_kind(domain: &ExitDomain, exits: &ExitPoints, at: Vec2, edge: usize) -> ExitKind {
    let tol = 1e-9;
    let on = |q: Vec2| domain.edge_containing(q, tol) == Some(edge);
    match (on(exits.plus), on(exits.minus)) {
        (true, false) => ExitKind::SideHit(1),
        (false, true) => ExitKind::SideHit(-1),
        (true, true) => {
            if linalg::norm(linalg::sub(at, exits.plus)) <= linalg::norm(linalg::sub(at, exits.minus)) {
                ExitKind::SideHit(1)
            } else {
                ExitKind::SideHit(-1)
            }
        }
        (false, false) => ExitKind::TopBottom,
    }
}

/// Crossing of one step `old → new`, if any.
fn crossing(old: Vec2, new: Vec2, stop: &Stopping<'_>) -> Option<(f64, ExitKind, Vec2, Option<usize>)> {
    match *stop {
        Stopping::Strip { level, top } => {
            let side = strip_fraction(old[0], new[0], level);
            let tb = strip_fraction(old[1], new[1], top);
            let lerp = |s: f64| [old[0] + s * (new[0] - old[0]), old[1] + s * (new[1] - old[1])];
            match (side, tb) {
                (None, None) => None,
                (Some(s), t) if t.is_none_or(|t| s <= t) => {
                    let mut p = lerp(s);
                    p[0] = level.copysign(new[0]);
                    let sign = if new[0] > 0.0 { 1 } else { -1 };
                    Some((s, ExitKind::SideHit(sign), p, None))
                }
                (_, Some(t)) => {
                    let mut p = lerp(t);
                    p[1] = top.copysign(new[1]);
                    Some((t, ExitKind::TopBottom, p, None))
                }
                _ => unreachable!(),
            }
        }
        Stopping::Polygon { domain, exits } => {
            if domain.contains(new) {
                return None;
            }
            let (s, edge) = domain.crossing(old, new);
            let p = [old[0] + s * (new[0] - old[0]), old[1] + s * (new[1] - old[1])];
            Some((s, polygon_kind(domain, &exits, p, edge), p, Some(edge)))
        }
    }
}

/// Mutable chain state of one path; continuing a run after a stop keeps
/// consuming the same increments.
#[derive(Clone, Debug)]
pub struct PathState {
    pub y: Vec2,
    pub t: f64,
    pub rng: ChaCha8Rng,
}

enum StepOutcome {
    Moved(Vec2),
    Escaped,
}

#[inline]
fn advance<D: Dynamics>(dynamics: &D, state: &mut PathState, params: &PathParams) -> StepOutcome {
    let z = gaussian_pair(&mut state.rng);
    let (mu, s) = match dynamics.coefficients(state.y, params.eps) {
        Ok(c) => c,
        Err(_) => return StepOutcome::Escaped,
    };
    let next = em_step(state.y, mu, &s, params.eps, params.h, z);
    if !(next[0].is_finite() && next[1].is_finite()) || outside_guard(next, params.guard) {
        return StepOutcome::Escaped;
    }
    StepOutcome::Moved(next)
}

/// Steps until `stop` fires, the guard box is left, or `t_max` passes.
/// The chain is left at the first post-crossing state.
pub fn run_until<D: Dynamics>(dynamics: &D, state: &mut PathState, params: &PathParams, stop: &Stopping<'_>) -> Hit {
    if let Some(hit) = check_start(state.y, stop) {
        return Hit { time: state.t, ..hit };
    }
    let h = params.h;
    while state.t < params.t_max {
        let next = match advance(dynamics, state, params) {
            StepOutcome::Moved(n) => n,
            StepOutcome::Escaped => {
                return Hit { kind: ExitKind::Escaped, point: state.y, time: state.t, edge: None };
            }
        };
        let old = state.y;
        let t0 = state.t;
        state.y = next;
        state.t = t0 + h;
        if let Some((s, kind, point, edge)) = crossing(old, next, stop) {
            return Hit { kind, point, time: t0 + s * h, edge };
        }
    }
    Hit { kind: ExitKind::Censored, point: state.y, time: state.t, edge: None }
}

/// Runs one path from `initial` to its exit.
pub fn simulate_exit<D: Dynamics>(
    dynamics: &D,
    params: &PathParams,
    initial: Vec2,
    stop: &Stopping<'_>,
    rng: ChaCha8Rng,
    path_id: u64,
) -> ExitSample {
    let mut state = PathState { y: initial, t: 0.0, rng };
    let hit = run_until(dynamics, &mut state, params, stop);
    ExitSample {
        path_id,
        kind: hit.kind,
        point: hit.point,
        time: hit.time,
        rescaled: None,
    }
}

/// Rescaled triple for a polygon exit: `φ = ε^{−β}⟨X − q, t⟩` along the
/// crossed edge's tangent `t`.
pub fn polygon_rescale(sample: &ExitSample, domain: &ExitDomain, exits: &ExitPoints, edge: usize, eps: f64, scaling: &Scaling) -> Option<Rescaled> {
    let sign = sample.kind.sign()?;
    let q = exits.get(sign);
    let tangent = domain.tangent(edge);
    Some(Rescaled {
        psi_sign: sign,
        phi: eps.powf(-scaling.beta) * linalg::dot(linalg::sub(sample.point, q), tangent),
        time_shifted: sample.time + scaling.time_shift(eps),
    })
}

/// Runs `X` to a fixed time `t` (no stopping except the guard).
pub fn simulate_to_time<D: Dynamics>(dynamics: &D, params: &PathParams, initial: Vec2, t: f64, rng: ChaCha8Rng) -> Result<Vec2> {
    let n = (t / params.h).round() as usize;
    if ((n as f64) * params.h - t).abs() > 1e-9 * t.max(1.0) {
        return Err(Error::invalid("fixed-time horizon must be a multiple of the step"));
    }
    let mut state = PathState { y: initial, t: 0.0, rng };
    for _ in 0..n {
        match advance(dynamics, &mut state, params) {
            StepOutcome::Moved(y) => {
                state.y = y;
                state.t += params.h;
            }
            StepOutcome::Escaped => {
                return Err(Error::TrajectoryEscape { time: state.t, bound: params.guard });
            }
        }
    }
    Ok(state.y)
}

/// A path through the two nested stopping levels `ε^{αp}` and `δ`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoStage {
    pub stage1: ExitSample,
    pub stage2: Option<ExitSample>,
    /// `τ̂`, the first time `|Y₁| = ε^{αp}`.
    pub tau_hat: f64,
    pub eta_plus: f64,
    pub eta_minus: f64,
    /// `ε^{−αp}e^{−λ₊τ}Y₁(τ)` at the second stop.
    pub theta_plus: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TwoStageSpec {
    pub alpha: f64,
    pub beta: f64,
    pub p: f64,
    pub delta: f64,
    pub lambda_plus: f64,
    pub lambda_minus: f64,
}

impl TwoStageSpec {
    pub fn scaling(&self) -> Scaling {
        Scaling {
            alpha: self.alpha,
            beta: self.beta,
            lambda_plus: self.lambda_plus,
        }
    }
}

/// Runs one path in normal-form coordinates to `τ̂` and then, continuing
/// the same chain, to `τ(δ)`.
pub fn two_stage_exit<D: Dynamics>(
    dynamics: &D,
    params: &PathParams,
    spec: &TwoStageSpec,
    initial: Vec2,
    rng: ChaCha8Rng,
    path_id: u64,
) -> TwoStage {
    let eps = params.eps;
    let level = eps.powf(spec.alpha * spec.p);
    let mut state = PathState { y: initial, t: 0.0, rng };
    let first = run_until(dynamics, &mut state, params, &Stopping::Strip { level, top: spec.delta });
    let stage1 = ExitSample {
        path_id,
        kind: first.kind,
        point: first.point,
        time: first.time,
        rescaled: None,
    };
    let tau_hat = first.time;
    let eta_plus = eps.powf(-spec.alpha) * (-spec.lambda_plus * tau_hat).exp() * first.point[0];
    let eta_minus = eps.powf(-spec.alpha * (1.0 - spec.p) * spec.lambda_minus / spec.lambda_plus) * first.point[1];
    if first.kind.sign().is_none() {
        return TwoStage {
            stage1,
            stage2: None,
            tau_hat,
            eta_plus,
            eta_minus,
            theta_plus: None,
        };
    }
    // Continue from the raw chain state; a single step may have crossed δ
    // as well, which the crossing check below sees against the pre-step
    // state.
    let stop = Stopping::Strip { level: spec.delta, top: spec.delta };
    let second = if state.y[0].abs() >= spec.delta || state.y[1].abs() >= spec.delta {
        let (s, kind, point, _) = crossing(first.point, state.y, &stop).unwrap_or((0.0, ExitKind::Escaped, state.y, None));
        let dt = state.t - first.time;
        Hit { kind, point, time: first.time + s * dt, edge: None }
    } else {
        run_until(dynamics, &mut state, params, &stop)
    };
    let scaling = spec.scaling();
    let rescaled = second.kind.sign().map(|sign| Rescaled {
        psi_sign: sign,
        phi: eps.powf(-spec.beta) * second.point[1],
        time_shifted: second.time + scaling.time_shift(eps),
    });
    let theta_plus = second
        .kind
        .sign()
        .map(|_| eps.powf(-spec.alpha * spec.p) * (-spec.lambda_plus * second.time).exp() * second.point[0]);
    TwoStage {
        stage1,
        stage2: Some(ExitSample {
            path_id,
            kind: second.kind,
            point: second.point,
            time: second.time,
            rescaled,
        }),
        tau_hat,
        eta_plus,
        eta_minus,
        theta_plus,
    }
}

/// Maps `job` over path ids `0..n_paths` in parallel; each call gets its own
/// stream, and the output is ordered by path id regardless of worker count.
pub fn run_ensemble<T, F>(seed: u64, n_paths: usize, job: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64, ChaCha8Rng) -> T + Sync + Send,
{
    (0..n_paths as u64)
        .into_par_iter()
        .map(|k| job(k, path_rng(seed, k)))
        .collect()
}

/// Per-kind counts of an ensemble.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KindCounts {
    pub side_plus: usize,
    pub side_minus: usize,
    pub top_bottom: usize,
    pub censored: usize,
    pub escaped: usize,
}

impl KindCounts {
    pub fn from_samples<'a>(samples: impl IntoIterator<Item = &'a ExitSample>) -> Self {
        let mut c = KindCounts::default();
        for s in samples {
            match s.kind {
                ExitKind::SideHit(x) if x > 0 => c.side_plus += 1,
                ExitKind::SideHit(_) => c.side_minus += 1,
                ExitKind::TopBottom => c.top_bottom += 1,
                ExitKind::Censored => c.censored += 1,
                ExitKind::Escaped => c.escaped += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.side_plus + self.side_minus + self.top_bottom + self.censored + self.escaped
    }

    pub fn bad(&self) -> usize {
        self.top_bottom + self.censored + self.escaped
    }
}

pub const CSV_HEADER: [&str; 8] = [
    "path_id",
    "exit_kind",
    "exit_x",
    "exit_y",
    "exit_time",
    "psi_sign",
    "phi_rescaled",
    "time_shifted",
];

pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn write_samples_csv<W: Write>(out: W, samples: &[ExitSample]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for s in samples {
        let (sign, phi, ts) = match &s.rescaled {
            Some(r) => (r.psi_sign.to_string(), fmt_f64(r.phi), fmt_f64(r.time_shifted)),
            None => (String::new(), String::new(), String::new()),
        };
        w.write_record([
            s.path_id.to_string(),
            s.kind.label().to_string(),
            fmt_f64(s.point[0]),
            fmt_f64(s.point[1]),
            fmt_f64(s.time),
            sign,
            phi,
            ts,
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv output>", e))?;
    Ok(())
}

fn parse_f64_field(s: &str, what: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| Error::Parse(format!("bad {what} value {s:?}")))
}

pub fn read_samples_csv<R: Read>(input: R) -> Result<Vec<ExitSample>> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header = r.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != CSV_HEADER {
        return Err(Error::Parse("unexpected samples header".into()));
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        if rec.len() != CSV_HEADER.len() {
            return Err(Error::Parse("wrong number of columns".into()));
        }
        let path_id = rec[0]
            .trim()
            .parse::<u64>()
            .map_err(|_| Error::Parse(format!("bad path_id {:?}", &rec[0])))?;
        let kind = ExitKind::from_label(rec[1].trim())?;
        let point = [parse_f64_field(&rec[2], "exit_x")?, parse_f64_field(&rec[3], "exit_y")?];
        let time = parse_f64_field(&rec[4], "exit_time")?;
        let rescaled = if rec[5].trim().is_empty() && rec[6].trim().is_empty() && rec[7].trim().is_empty() {
            None
        } else {
            let psi_sign: i8 = rec[5]
                .trim()
                .parse()
                .map_err(|_| Error::Parse(format!("bad psi_sign {:?}", &rec[5])))?;
            if psi_sign != 1 && psi_sign != -1 {
                return Err(Error::Parse("psi_sign must be 1 or -1".into()));
            }
            Some(Rescaled {
                psi_sign,
                phi: parse_f64_field(&rec[6], "phi_rescaled")?,
                time_shifted: parse_f64_field(&rec[7], "time_shifted")?,
            })
        };
        if rescaled.is_some() && kind.sign().is_none() {
            return Err(Error::Parse("rescaled values on a non-side exit".into()));
        }
        out.push(ExitSample {
            path_id,
            kind,
            point,
            time,
            rescaled,
        });
    }
    Ok(out)
}
