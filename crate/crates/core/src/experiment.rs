//! Config-driven experiments: Monte Carlo ensembles against the limit laws.
//!
//! Relative paths inside a config file are resolved against the directory
//! that contains it.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::limit_laws::{
    beta_exponent, compose_full_exit_law, p_range, CaseTag, KernelVariant, LawParameters, LimitLaw,
    ThetaPrime, ThetaPrimeLaw,
};
use crate::linalg::{self, Mat2, Vec2};
use crate::mixture::{ComponentSpec, Mixture};
use crate::normal_form::{poincare_dulac, transform_sde, NormalForm, NormalFormTable, TransformedSde};
use crate::resonance::{check_observations, resonant_indices, ObservationViolation, ResonanceReport, DEFAULT_R_MAX};
use crate::sde::{
    default_t_max, polygon_rescale, run_ensemble, run_until, two_stage_exit, ExitKind, ExitSample, KindCounts,
    PathParams, PathState, Rescaled, Scaling, Stopping, TwoStage, TwoStageSpec,
};
use crate::stats::{self, LinearFit};
use crate::system::{validate_system, SaddleSystem, ValidationReport};
use crate::system_file::load_system;

/// Stream master for limit-law draws, kept apart from the path streams.
const LAW_SEED_SALT: u64 = 0x9e37_79b9_7f4a_7c15;
const MAX_ORDER: u32 = 8;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Resonance,
    NormalForm,
    Simulate,
    LimitLaw,
    #[default]
    Verify,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    pub ks_max: f64,
    pub ks_trend_slack: f64,
    pub sign_se: f64,
    pub exponent_tol: f64,
    pub censor_max: f64,
    pub full_ks_max: f64,
    pub full_bad_max: f64,
    pub identity_tol: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            ks_max: 0.05,
            ks_trend_slack: 0.01,
            sign_se: 3.0,
            exponent_tol: 0.1,
            censor_max: 0.05,
            full_ks_max: 0.07,
            full_bad_max: 0.02,
            identity_tol: 1e-9,
        }
    }
}

/// End-to-end comparison from `x0` through the saddle to `∂V`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FullExitSpec {
    /// Time for the deterministic flow from `x0` to reach the box.
    pub entry_time: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system_file: PathBuf,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default)]
    pub eps_grid: Vec<f64>,
    #[serde(default = "one")]
    pub alpha: f64,
    /// Defaults to the midpoint of the admissible range.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    pub delta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_prime: Option<f64>,
    /// Entry point `(0, y₂)` in normal-form coordinates.
    pub y2: f64,
    /// Law of the initial perturbation `ξ₀` in the original coordinates.
    pub xi0: Vec<ComponentSpec>,
    #[serde(default = "default_paths")]
    pub n_paths: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub kernel_variant: KernelVariant,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub order: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_max: Option<u32>,
    #[serde(default)]
    pub thresholds: Thresholds,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub full_exit: Option<FullExitSpec>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn one() -> f64 {
    1.0
}

fn default_paths() -> usize {
    20_000
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

impl ExperimentConfig {
    /// Parses a config; relative paths resolve against `base_dir`.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut c: ExperimentConfig = serde_json::from_str(text)?;
        c.base_dir = base_dir.to_path_buf();
        c.check_shape()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, &base)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn system_path(&self) -> PathBuf {
        self.resolve(&self.system_file)
    }

    pub fn output_path(&self) -> PathBuf {
        self.resolve(&self.output_dir)
    }

    /// Checks that need no system: grid order, ranges, counts.
    fn check_shape(&self) -> Result<()> {
        for w in self.eps_grid.windows(2) {
            if !(w[1] < w[0]) {
                return Err(Error::invalid("eps_grid must be strictly decreasing"));
            }
        }
        if self.eps_grid.iter().any(|&e| !(e > 0.0 && e < 1.0)) {
            return Err(Error::invalid("every ε must lie in (0, 1)"));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::invalid("alpha must lie in (0, 1]"));
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(Error::invalid("delta must be positive"));
        }
        if !self.y2.is_finite() || self.y2.abs() >= self.delta {
            return Err(Error::invalid("entry point must satisfy |y2| < delta"));
        }
        if self.n_paths == 0 {
            return Err(Error::invalid("n_paths must be positive"));
        }
        if self.xi0.is_empty() {
            return Err(Error::invalid("xi0 needs at least one component"));
        }
        if let Some(h) = self.h {
            if !(h > 0.0 && h.is_finite()) {
                return Err(Error::invalid("h must be positive"));
            }
        }
        if let Some(t) = self.t_max {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::invalid("t_max must be positive"));
            }
        }
        if let Some(f) = self.full_exit {
            if !(f.entry_time > 0.0 && f.entry_time.is_finite()) {
                return Err(Error::invalid("entry_time must be positive"));
            }
        }
        Ok(())
    }
}

/// Everything a run needs, built and validated once.
pub struct Experiment {
    pub config: ExperimentConfig,
    pub system: SaddleSystem,
    pub validation: ValidationReport,
    pub nf: NormalForm,
    pub sde: TransformedSde,
    pub xi0: Mixture,
    pub spec: TwoStageSpec,
    pub law: ThetaPrimeLaw,
    /// The same law under the other `N⁺` kernel.
    pub alt_law: ThetaPrimeLaw,
    pub h: f64,
}

fn default_order(system: &SaddleSystem) -> Result<u32> {
    let (lp, lm) = (system.lambda_plus_exact()?, system.lambda_minus_exact()?);
    let rep = resonant_indices(&lp, &lm, 2)?;
    let r = rep.generating_relation.map(|g| g.smallest_order + 1).unwrap_or(MAX_ORDER as u64);
    Ok(r.clamp(2, MAX_ORDER as u64) as u32)
}

impl Experiment {
    pub fn prepare(config: ExperimentConfig) -> Result<Self> {
        config.check_shape()?;
        let system = load_system(&config.system_path())?;
        let validation = validate_system(&system);
        if !validation.valid {
            return Err(Error::invalid(format!("system is invalid: {}", validation.failures.join("; "))));
        }
        let (lp, lm) = (system.lambda_plus(), system.lambda_minus());
        let p = match config.p {
            Some(p) => p,
            None => {
                let (lo, hi) = p_range(lp, lm)?;
                0.5 * (lo + hi)
            }
        };
        let (lo, hi) = p_range(lp, lm)?;
        if !(p > lo && p < hi) {
            return Err(Error::invalid(format!("p = {p} is outside the admissible range ({lo}, {hi})")));
        }
        let order = match config.order {
            Some(r) => r,
            None => default_order(&system)?,
        };
        let nf = poincare_dulac(&system, order)?;
        let dp = config.delta_prime.unwrap_or(nf.delta_prime);
        let nf = nf.fit_box(config.delta, dp)?;
        let sde = transform_sde(&system, &nf);
        let xi0 = Mixture::from_specs(&config.xi0)?;
        let alpha = config.alpha;
        if alpha < 1.0 {
            let b = system.drift(sde.g([0.0, config.y2]));
            if xi0.has_mass_on_line(b) {
                return Err(Error::invalid("ξ₀ charges the drift line at the entry point"));
            }
        }
        let law_for = |kernel| -> Result<ThetaPrimeLaw> {
            let law = LimitLaw::from_sde(&sde, alpha, lp, lm, config.delta, config.y2, &xi0, kernel)?;
            Ok(ThetaPrimeLaw::from_sde(law, &sde))
        };
        let alt = match config.kernel_variant {
            KernelVariant::LambdaPlus => KernelVariant::LambdaMinus,
            KernelVariant::LambdaMinus => KernelVariant::LambdaPlus,
        };
        let law = law_for(config.kernel_variant)?;
        let alt_law = law_for(alt)?;
        let spec = TwoStageSpec {
            alpha,
            beta: beta_exponent(alpha, lp, lm),
            p,
            delta: config.delta,
            lambda_plus: lp,
            lambda_minus: lm,
        };
        let h = config.h.unwrap_or(1e-4 * (1.0 / lp).min(1.0 / lm));
        Ok(Experiment {
            config,
            system,
            validation,
            nf,
            sde,
            xi0,
            spec,
            law,
            alt_law,
            h,
        })
    }

    pub fn params(&self, eps: f64) -> PathParams {
        PathParams {
            eps,
            h: self.h,
            t_max: self.config.t_max.unwrap_or_else(|| default_t_max(eps, self.spec.alpha, self.spec.lambda_plus)),
            guard: self.nf.delta_prime,
        }
    }

    /// One two-stage path. `ξ` is drawn first from the path's stream, so a
    /// fixed seed gives common random numbers across the ε grid.
    pub fn run_path(&self, eps: f64, path_id: u64, mut rng: rand_chacha::ChaCha8Rng) -> TwoStage {
        let xi = self.xi0.sample(&mut rng);
        let x = linalg::add(self.sde.g([0.0, self.config.y2]), linalg::scale(eps.powf(self.spec.alpha), xi));
        let params = self.params(eps);
        match self.sde.invert(x) {
            Ok(y0) => two_stage_exit(&self.sde, &params, &self.spec, y0, rng, path_id),
            Err(_) => {
                let s = ExitSample {
                    path_id,
                    kind: ExitKind::Escaped,
                    point: x,
                    time: 0.0,
                    rescaled: None,
                };
                TwoStage {
                    stage1: s,
                    stage2: None,
                    tau_hat: 0.0,
                    eta_plus: f64::NAN,
                    eta_minus: f64::NAN,
                    theta_plus: None,
                }
            }
        }
    }

    pub fn ensemble(&self, eps: f64) -> Vec<TwoStage> {
        run_ensemble(self.config.seed, self.config.n_paths, |k, rng| self.run_path(eps, k, rng))
    }

    pub fn law_samples(&self, law: &ThetaPrimeLaw, n: usize) -> Result<Vec<ThetaPrime>> {
        run_ensemble(self.config.seed ^ LAW_SEED_SALT, n, |_, mut rng| law.sample(&mut rng))
            .into_iter()
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FitSummary {
    pub slope: f64,
    pub intercept: f64,
    pub stderr: f64,
    pub ci95: (f64, f64),
    pub expected: f64,
}

impl FitSummary {
    fn new(fit: LinearFit, expected: f64) -> Self {
        FitSummary {
            slope: fit.slope,
            intercept: fit.intercept,
            stderr: fit.stderr,
            ci95: fit.ci95(),
            expected,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpsResult {
    pub eps: f64,
    pub stage1: KindCounts,
    pub stage2: KindCounts,
    /// Paths without a side exit at `δ`, over all paths.
    pub bad_fraction: f64,
    pub ks_sign: f64,
    pub ks_phi: f64,
    pub ks_time: f64,
    /// Time KS against the law built with the other `N⁺` kernel.
    pub ks_time_alt_kernel: f64,
    /// One-sample KS of `φ` against the centred Gaussian, when `θ` is one.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ks_phi_gaussian: Option<f64>,
    pub p_plus_mc: f64,
    pub p_plus_law: f64,
    pub sign_se: f64,
    pub sign_z: f64,
    pub iqr_y2: f64,
    pub mean_exit_time: f64,
    pub tau_hat_identity_err: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FullExitResult {
    pub eps: f64,
    pub entry_point: Vec2,
    pub counts: KindCounts,
    pub bad_fraction: f64,
    pub ks_sign: f64,
    pub ks_phi: f64,
    pub ks_time: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Criterion {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VerificationReport {
    pub system: String,
    pub alpha: f64,
    pub p: f64,
    pub delta: f64,
    pub delta_prime: f64,
    pub order: u32,
    pub h: f64,
    pub n_paths: usize,
    pub seed: u64,
    pub law: LawParameters,
    pub per_eps: Vec<EpsResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta_fit: Option<FitSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub time_slope_fit: Option<FitSummary>,
    pub theta_prime_identity_err: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub full_exit: Option<FullExitResult>,
    pub criteria: Vec<Criterion>,
    pub notes: Vec<String>,
    pub pass: bool,
}

/// Named sample sets written under `samples/`.
#[derive(Clone, Debug, Default)]
pub struct SampleSets {
    pub sets: Vec<(String, Vec<ExitSample>)>,
}

#[derive(Clone, Debug)]
pub struct VerificationRun {
    pub report: VerificationReport,
    pub samples: SampleSets,
}

fn ks_or_nan(a: &[f64], b: &[f64]) -> f64 {
    stats::ks_two_sample(a, b).unwrap_or(f64::NAN)
}

fn law_as_samples(draws: &[ThetaPrime]) -> Vec<ExitSample> {
    draws
        .iter()
        .enumerate()
        .map(|(k, d)| {
            let sign: i8 = if d.eta_plus > 0.0 { 1 } else { -1 };
            ExitSample {
                path_id: k as u64,
                kind: ExitKind::SideHit(sign),
                point: d.exit_vector,
                time: d.time,
                rescaled: Some(Rescaled {
                    psi_sign: sign,
                    phi: d.theta,
                    time_shifted: d.time,
                }),
            }
        })
        .collect()
}

struct Coord {
    sign: Vec<f64>,
    phi: Vec<f64>,
    time: Vec<f64>,
}

fn coords<'a>(rescaled: impl Iterator<Item = &'a Rescaled>) -> Coord {
    let mut c = Coord {
        sign: Vec::new(),
        phi: Vec::new(),
        time: Vec::new(),
    };
    for r in rescaled {
        c.sign.push(r.psi_sign as f64);
        c.phi.push(r.phi);
        c.time.push(r.time_shifted);
    }
    c
}

fn law_coords(draws: &[ThetaPrime]) -> Coord {
    Coord {
        sign: draws.iter().map(|d| d.eta_plus.signum()).collect(),
        phi: draws.iter().map(|d| d.theta).collect(),
        time: draws.iter().map(|d| d.time).collect(),
    }
}

fn normal_cdf(var: f64) -> impl Fn(f64) -> f64 {
    let sd = var.sqrt();
    move |x| 0.5 * statrs::function::erf::erfc(-x / (sd * std::f64::consts::SQRT_2))
}

fn eps_result(exp: &Experiment, eps: f64, paths: &[TwoStage], law: &Coord, alt_time: &[f64]) -> EpsResult {
    let n = paths.len();
    let stage1 = KindCounts::from_samples(paths.iter().map(|p| &p.stage1));
    let stage2 = KindCounts::from_samples(paths.iter().filter_map(|p| p.stage2.as_ref()));
    let side: Vec<&ExitSample> = paths
        .iter()
        .filter_map(|p| p.stage2.as_ref())
        .filter(|s| s.rescaled.is_some())
        .collect();
    let mc = coords(side.iter().filter_map(|s| s.rescaled.as_ref()));
    let n_side = side.len() as f64;
    let plus = mc.sign.iter().filter(|&&s| s > 0.0).count() as f64;
    let p_law = exp.law.law.prob_positive();
    let p_mc = plus / n_side;
    let se = (p_law * (1.0 - p_law) / n_side).sqrt();
    let y2: Vec<f64> = side.iter().map(|s| s.point[1]).collect();
    let times: Vec<f64> = side.iter().map(|s| s.time).collect();
    let ks_phi_gaussian = {
        let l = &exp.law.law;
        (l.case == CaseTag::NoiseDominated && l.sigma_plus == l.sigma_minus && l.sigma_plus > 0.0)
            .then(|| stats::ks_one_sample(&mc.phi, normal_cdf(l.sigma_plus)).unwrap_or(f64::NAN))
    };
    // |Y₁(τ̂)| = ε^{αp} makes τ̂ = (1/λ₊)ln(ε^{α(p−1)}/|η⁺|) exact.
    let s = &exp.spec;
    let tau_hat_identity_err = paths
        .iter()
        .filter(|p| p.stage1.kind.sign().is_some() && p.tau_hat > 0.0)
        .map(|p| {
            let pred = (eps.powf(s.alpha * (s.p - 1.0)) / p.eta_plus.abs()).ln() / s.lambda_plus;
            (pred - p.tau_hat).abs() / p.tau_hat.max(1.0)
        })
        .fold(0.0, f64::max);
    EpsResult {
        eps,
        stage1,
        stage2,
        bad_fraction: (n as f64 - n_side) / n as f64,
        ks_sign: ks_or_nan(&mc.sign, &law.sign),
        ks_phi: ks_or_nan(&mc.phi, &law.phi),
        ks_time: ks_or_nan(&mc.time, &law.time),
        ks_time_alt_kernel: ks_or_nan(&mc.time, alt_time),
        ks_phi_gaussian,
        p_plus_mc: p_mc,
        p_plus_law: p_law,
        sign_se: se,
        sign_z: if se > 0.0 { (p_mc - p_law) / se } else if p_mc == p_law { 0.0 } else { f64::INFINITY },
        iqr_y2: stats::iqr(&y2).unwrap_or(f64::NAN),
        mean_exit_time: stats::mean(&times),
        tau_hat_identity_err,
    }
}

fn criterion(name: &str, pass: bool, detail: String) -> Criterion {
    Criterion {
        name: name.to_string(),
        pass,
        detail,
    }
}

/// Monte Carlo exit triples for the full problem, in original coordinates.
pub fn full_exit_mc(exp: &Experiment, eps: f64, entry_time: f64) -> Result<Vec<ExitSample>> {
    let system = &exp.system;
    let x0 = system.x0.ok_or_else(|| Error::invalid("system has no x0"))?;
    let domain = system
        .domain
        .as_ref()
        .ok_or_else(|| Error::invalid("system has no exit domain"))?;
    let exits = system
        .exit_points
        .ok_or_else(|| Error::invalid("system has no exit points"))?;
    let extent = domain.vertices().iter().map(|v| v[0].abs().max(v[1].abs())).fold(0.0, f64::max);
    let scaling = Scaling {
        alpha: exp.spec.alpha,
        beta: exp.spec.beta,
        lambda_plus: exp.spec.lambda_plus,
    };
    let params = PathParams {
        eps,
        h: exp.h,
        t_max: entry_time + exp.config.t_max.unwrap_or_else(|| default_t_max(eps, scaling.alpha, scaling.lambda_plus)),
        guard: 10.0 * extent,
    };
    let stop = Stopping::Polygon { domain, exits };
    Ok(run_ensemble(exp.config.seed, exp.config.n_paths, |k, mut rng| {
        let xi = exp.xi0.sample(&mut rng);
        let y = linalg::add(x0, linalg::scale(eps.powf(scaling.alpha), xi));
        let mut state = PathState { y, t: 0.0, rng };
        let hit = run_until(system, &mut state, &params, &stop);
        let mut s = ExitSample {
            path_id: k,
            kind: hit.kind,
            point: hit.point,
            time: hit.time,
            rescaled: None,
        };
        if let Some(edge) = hit.edge {
            s.rescaled = polygon_rescale(&s, domain, &exits, edge, eps, &scaling);
        }
        s
    }))
}

fn run_full_exit(exp: &Experiment, spec: FullExitSpec, eps: f64, samples: &mut SampleSets) -> Result<FullExitResult> {
    let c = &exp.config;
    let full = compose_full_exit_law(
        &exp.system,
        &exp.nf,
        &exp.sde,
        c.alpha,
        c.delta,
        &exp.xi0,
        spec.entry_time,
        c.kernel_variant,
        exp.h.min(1e-3),
    )?;
    let mc = full_exit_mc(exp, eps, spec.entry_time)?;
    let draws: Vec<_> = run_ensemble(c.seed ^ LAW_SEED_SALT, c.n_paths, |_, mut rng| full.sample(&mut rng))
        .into_iter()
        .collect::<Result<_>>()?;
    let law_samples: Vec<ExitSample> = draws
        .iter()
        .enumerate()
        .map(|(k, d)| ExitSample {
            path_id: k as u64,
            kind: ExitKind::SideHit(d.sign),
            point: [d.phi, 0.0],
            time: d.time,
            rescaled: Some(Rescaled {
                psi_sign: d.sign,
                phi: d.phi,
                time_shifted: d.time,
            }),
        })
        .collect();
    // Both time coordinates already carry the (α/λ₊)ln ε shift.
    let m = coords(mc.iter().filter_map(|s| s.rescaled.as_ref()));
    let l = coords(law_samples.iter().filter_map(|s| s.rescaled.as_ref()));
    let counts = KindCounts::from_samples(&mc);
    let side = m.sign.len();
    let result = FullExitResult {
        eps,
        entry_point: full.entry_point,
        counts,
        bad_fraction: (mc.len() - side) as f64 / mc.len() as f64,
        ks_sign: ks_or_nan(&m.sign, &l.sign),
        ks_phi: ks_or_nan(&m.phi, &l.phi),
        ks_time: ks_or_nan(&m.time, &l.time),
    };
    samples.sets.push(("full_mc".into(), mc));
    samples.sets.push(("full_law".into(), law_samples));
    Ok(result)
}

pub fn run_verification(config: ExperimentConfig) -> Result<VerificationRun> {
    let exp = Experiment::prepare(config)?;
    verify_prepared(&exp)
}

pub fn verify_prepared(exp: &Experiment) -> Result<VerificationRun> {
    let c = &exp.config;
    if c.eps_grid.is_empty() {
        return Err(Error::invalid("eps_grid is empty"));
    }
    let n = c.n_paths;
    let draws = exp.law_samples(&exp.law, n)?;
    let alt_draws = exp.law_samples(&exp.alt_law, n)?;
    let law = law_coords(&draws);
    let alt_time: Vec<f64> = alt_draws.iter().map(|d| d.time).collect();
    let theta_prime_identity_err = draws
        .iter()
        .map(|d| {
            let pred = (c.delta / d.eta_plus.abs()).ln() / exp.spec.lambda_plus;
            (pred - d.time).abs()
        })
        .fold(0.0, f64::max);

    let mut samples = SampleSets::default();
    let mut per_eps = Vec::with_capacity(c.eps_grid.len());
    for (i, &eps) in c.eps_grid.iter().enumerate() {
        let paths = exp.ensemble(eps);
        per_eps.push(eps_result(exp, eps, &paths, &law, &alt_time));
        let mc: Vec<ExitSample> = paths.iter().map(|p| p.stage2.unwrap_or(p.stage1)).collect();
        samples.sets.push((format!("mc_eps{i}"), mc));
    }
    samples.sets.push(("law".into(), law_as_samples(&draws)));

    let th = c.thresholds;
    let mut notes = Vec::new();
    let mut criteria = Vec::new();
    let worst_bad = per_eps.iter().map(|r| r.bad_fraction).fold(0.0, f64::max);
    criteria.push(criterion(
        "censoring",
        worst_bad <= th.censor_max,
        format!("worst fraction without a side exit {worst_bad:.4} (limit {})", th.censor_max),
    ));
    let last = per_eps.last().expect("non-empty grid");
    let ks_last = last.ks_sign.max(last.ks_phi).max(last.ks_time);
    criteria.push(criterion(
        "ks_smallest_eps",
        ks_last < th.ks_max,
        format!(
            "ε = {}: sign {:.4}, phi {:.4}, time {:.4} (limit {})",
            last.eps, last.ks_sign, last.ks_phi, last.ks_time, th.ks_max
        ),
    ));
    let ks_times: Vec<f64> = per_eps.iter().map(|r| r.ks_time).collect();
    let (small, large) = stats::trend_inversions(&ks_times, th.ks_trend_slack);
    criteria.push(criterion(
        "ks_time_trend",
        large == 0 && small <= 1 && ks_times.iter().all(|k| k.is_finite()),
        format!("time KS along the grid {ks_times:?}; {small} small and {large} large inversions"),
    ));
    let worst_z = per_eps.iter().map(|r| r.sign_z.abs()).fold(0.0, f64::max);
    criteria.push(criterion(
        "exit_sign",
        worst_z <= th.sign_se,
        format!("worst |z| = {worst_z:.3} (limit {})", th.sign_se),
    ));

    let eps: Vec<f64> = per_eps.iter().map(|r| r.eps).collect();
    let iqrs: Vec<f64> = per_eps.iter().map(|r| r.iqr_y2).collect();
    let beta_fit = match stats::scaling_regression(&eps, &iqrs) {
        Ok(fit) => Some(FitSummary::new(fit, exp.spec.beta)),
        Err(e) => {
            notes.push(format!("β regression skipped: {e}"));
            None
        }
    };
    if let Some(f) = beta_fit {
        criteria.push(criterion(
            "beta_exponent",
            (f.slope - f.expected).abs() <= th.exponent_tol,
            format!("slope {:.4} ± {:.4}, expected {}", f.slope, f.stderr, f.expected),
        ));
    }
    let expected_time = -exp.spec.alpha / exp.spec.lambda_plus;
    let ln_eps: Vec<f64> = eps.iter().map(|e| e.ln()).collect();
    let mean_times: Vec<f64> = per_eps.iter().map(|r| r.mean_exit_time).collect();
    let time_slope_fit = if eps.len() >= 2 {
        match stats::least_squares(&ln_eps, &mean_times) {
            Ok(fit) => Some(FitSummary::new(fit, expected_time)),
            Err(e) => {
                notes.push(format!("exit-time regression skipped: {e}"));
                None
            }
        }
    } else {
        None
    };
    if let Some(f) = time_slope_fit {
        criteria.push(criterion(
            "exit_time_slope",
            (f.slope - f.expected).abs() <= th.exponent_tol,
            format!("slope {:.4}, expected {:.4}", f.slope, f.expected),
        ));
    }
    let id_err = per_eps.iter().map(|r| r.tau_hat_identity_err).fold(theta_prime_identity_err, f64::max);
    criteria.push(criterion(
        "identities",
        id_err <= th.identity_tol,
        format!("largest identity residual {id_err:e}"),
    ));

    let full_exit = match c.full_exit {
        Some(spec) => {
            let r = run_full_exit(exp, spec, last.eps, &mut samples)?;
            let ks = r.ks_sign.max(r.ks_phi).max(r.ks_time);
            criteria.push(criterion(
                "full_exit_ks",
                ks < th.full_ks_max,
                format!("sign {:.4}, phi {:.4}, time {:.4} (limit {})", r.ks_sign, r.ks_phi, r.ks_time, th.full_ks_max),
            ));
            criteria.push(criterion(
                "full_exit_bad_fraction",
                r.bad_fraction < th.full_bad_max,
                format!("{:.4} (limit {})", r.bad_fraction, th.full_bad_max),
            ));
            Some(r)
        }
        None => None,
    };

    let pass = criteria.iter().all(|c| c.pass);
    Ok(VerificationRun {
        report: VerificationReport {
            system: exp.system.name.clone(),
            alpha: exp.spec.alpha,
            p: exp.spec.p,
            delta: exp.spec.delta,
            delta_prime: exp.nf.delta_prime,
            order: exp.nf.order,
            h: exp.h,
            n_paths: n,
            seed: c.seed,
            law: exp.law.law.params(),
            per_eps,
            beta_fit,
            time_slope_fit,
            theta_prime_identity_err,
            full_exit,
            criteria,
            notes,
            pass,
        },
        samples,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SimulationEps {
    pub eps: f64,
    pub stage1: KindCounts,
    pub stage2: KindCounts,
    pub mean_exit_time: f64,
    pub iqr_y2: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SimulationReport {
    pub system: String,
    pub alpha: f64,
    pub p: f64,
    pub delta: f64,
    pub h: f64,
    pub n_paths: usize,
    pub seed: u64,
    pub per_eps: Vec<SimulationEps>,
}

pub fn run_simulation(config: ExperimentConfig) -> Result<(SimulationReport, SampleSets)> {
    let exp = Experiment::prepare(config)?;
    if exp.config.eps_grid.is_empty() {
        return Err(Error::invalid("eps_grid is empty"));
    }
    let mut samples = SampleSets::default();
    let mut per_eps = Vec::new();
    for (i, &eps) in exp.config.eps_grid.iter().enumerate() {
        let paths = exp.ensemble(eps);
        let side: Vec<&ExitSample> = paths
            .iter()
            .filter_map(|p| p.stage2.as_ref())
            .filter(|s| s.kind.sign().is_some())
            .collect();
        let y2: Vec<f64> = side.iter().map(|s| s.point[1]).collect();
        let t: Vec<f64> = side.iter().map(|s| s.time).collect();
        per_eps.push(SimulationEps {
            eps,
            stage1: KindCounts::from_samples(paths.iter().map(|p| &p.stage1)),
            stage2: KindCounts::from_samples(paths.iter().filter_map(|p| p.stage2.as_ref())),
            mean_exit_time: stats::mean(&t),
            iqr_y2: stats::iqr(&y2).unwrap_or(f64::NAN),
        });
        samples
            .sets
            .push((format!("mc_eps{i}"), paths.iter().map(|p| p.stage2.unwrap_or(p.stage1)).collect()));
    }
    Ok((
        SimulationReport {
            system: exp.system.name.clone(),
            alpha: exp.spec.alpha,
            p: exp.spec.p,
            delta: exp.spec.delta,
            h: exp.h,
            n_paths: exp.config.n_paths,
            seed: exp.config.seed,
            per_eps,
        },
        samples,
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LimitLawReport {
    pub system: String,
    pub law: LawParameters,
    pub chi0: Vec<ComponentSpec>,
    pub dg_plus: Mat2,
    pub dg_minus: Mat2,
    pub samples: usize,
}

pub fn run_limit_law(config: ExperimentConfig, samples: usize) -> Result<(LimitLawReport, SampleSets)> {
    let exp = Experiment::prepare(config)?;
    let mut sets = SampleSets::default();
    if samples > 0 {
        let draws = exp.law_samples(&exp.law, samples)?;
        sets.sets.push(("law".into(), law_as_samples(&draws)));
    }
    Ok((
        LimitLawReport {
            system: exp.system.name.clone(),
            law: exp.law.law.params(),
            chi0: exp.law.law.chi0.to_specs(),
            dg_plus: exp.law.dg_plus,
            dg_minus: exp.law.dg_minus,
            samples,
        },
        sets,
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ResonanceOutput {
    pub report: ResonanceReport,
    pub violations: Vec<ObservationViolation>,
}

pub fn resonance_for(system: &SaddleSystem, r_max: Option<u32>) -> Result<ResonanceOutput> {
    let report = resonant_indices(
        &system.lambda_plus_exact()?,
        &system.lambda_minus_exact()?,
        r_max.unwrap_or(DEFAULT_R_MAX),
    )?;
    let violations = check_observations(&report);
    Ok(ResonanceOutput { report, violations })
}

pub fn normal_form_for(system: &SaddleSystem, order: u32) -> Result<NormalFormTable> {
    Ok(poincare_dulac(system, order)?.table())
}

/// Fails on any `null` in a serialized report. Reports never serialize
/// absent values as `null`, so a `null` is a NaN or infinity.
pub fn check_finite(value: &serde_json::Value) -> Result<()> {
    fn walk(v: &serde_json::Value, path: &mut String) -> Result<()> {
        match v {
            serde_json::Value::Null => Err(Error::NonFinite(if path.is_empty() { "<root>".into() } else { path.clone() })),
            serde_json::Value::Array(a) => {
                for (i, x) in a.iter().enumerate() {
                    let len = path.len();
                    let _ = write!(path, "[{i}]");
                    walk(x, path)?;
                    path.truncate(len);
                }
                Ok(())
            }
            serde_json::Value::Object(m) => {
                for (k, x) in m {
                    let len = path.len();
                    if !path.is_empty() {
                        path.push('.');
                    }
                    path.push_str(k);
                    walk(x, path)?;
                    path.truncate(len);
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
    walk(value, &mut String::new())
}

/// Pretty JSON with a trailing newline, rejected if any number is not finite.
pub fn to_report_json<T: Serialize>(report: &T) -> Result<String> {
    let value = serde_json::to_value(report)?;
    check_finite(&value)?;
    let mut s = serde_json::to_string_pretty(&value)?;
    s.push('\n');
    Ok(s)
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Writes `report.json`, `summary.txt` and `samples/<name>.csv`.
pub fn emit_report<T: Serialize>(report: &T, summary: &str, samples: &SampleSets, output_dir: &Path) -> Result<()> {
    let json = to_report_json(report)?;
    std::fs::create_dir_all(output_dir).map_err(|e| Error::io(output_dir, e))?;
    write_file(&output_dir.join("report.json"), json.as_bytes())?;
    write_file(&output_dir.join("summary.txt"), summary.as_bytes())?;
    if !samples.sets.is_empty() {
        let dir = output_dir.join("samples");
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for (name, set) in &samples.sets {
            let path = dir.join(format!("{name}.csv"));
            let mut buf = Vec::new();
            crate::sde::write_samples_csv(&mut buf, set)?;
            write_file(&path, &buf)?;
        }
    }
    Ok(())
}

pub fn verification_summary(r: &VerificationReport) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "system {}  alpha {}  beta {}  p {}  delta {}  n {}  seed {}",
        r.system, r.alpha, r.law.beta, r.p, r.delta, r.n_paths, r.seed
    );
    let _ = writeln!(
        s,
        "{:>10} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8}",
        "eps", "ks_sign", "ks_phi", "ks_time", "p+_mc", "p+_law", "z", "bad", "ks_gauss", "ks_alt"
    );
    for e in &r.per_eps {
        let _ = writeln!(
            s,
            "{:>10.3e} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8.3} {:>8.4} {:>8} {:>8.4}",
            e.eps,
            e.ks_sign,
            e.ks_phi,
            e.ks_time,
            e.p_plus_mc,
            e.p_plus_law,
            e.sign_z,
            e.bad_fraction,
            e.ks_phi_gaussian.map_or("-".to_string(), |k| format!("{k:.4}")),
            e.ks_time_alt_kernel
        );
    }
    if let Some(f) = &r.beta_fit {
        let _ = writeln!(s, "beta fit: slope {:.4} [{:.4}, {:.4}], expected {}", f.slope, f.ci95.0, f.ci95.1, f.expected);
    }
    if let Some(f) = &r.time_slope_fit {
        let _ = writeln!(s, "exit-time slope: {:.4} [{:.4}, {:.4}], expected {:.4}", f.slope, f.ci95.0, f.ci95.1, f.expected);
    }
    if let Some(f) = &r.full_exit {
        let _ = writeln!(
            s,
            "full exit at eps {:e}: ks sign {:.4} phi {:.4} time {:.4}, bad {:.4}",
            f.eps, f.ks_sign, f.ks_phi, f.ks_time, f.bad_fraction
        );
    }
    for c in &r.criteria {
        let _ = writeln!(s, "[{}] {}: {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    for n in &r.notes {
        let _ = writeln!(s, "note: {n}");
    }
    let _ = writeln!(s, "overall: {}", if r.pass { "PASS" } else { "FAIL" });
    s
}

pub fn simulation_summary(r: &SimulationReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "system {}  alpha {}  p {}  delta {}  n {}", r.system, r.alpha, r.p, r.delta, r.n_paths);
    let _ = writeln!(s, "{:>10} {:>8} {:>8} {:>8} {:>8} {:>10} {:>10}", "eps", "plus", "minus", "top", "cens", "mean_t", "iqr_y2");
    for e in &r.per_eps {
        let _ = writeln!(
            s,
            "{:>10.3e} {:>8} {:>8} {:>8} {:>8} {:>10.4} {:>10.3e}",
            e.eps,
            e.stage2.side_plus,
            e.stage2.side_minus,
            e.stage1.top_bottom + e.stage2.top_bottom,
            e.stage1.censored + e.stage1.escaped + e.stage2.censored + e.stage2.escaped,
            e.mean_exit_time,
            e.iqr_y2
        );
    }
    s
}

pub fn limit_law_summary(r: &LimitLawReport) -> String {
    let l = &r.law;
    format!(
        "system {}\nalpha {}  beta {}  case {:?}  kernel {:?}\nVar N+ {:.6e}  sigma+ {:.6e}  sigma- {:.6e}\nP(eta0+ > 0) {:.6}\n",
        r.system, l.alpha, l.beta, l.case, l.kernel, l.var_n_plus, l.sigma_plus, l.sigma_minus, l.prob_positive
    )
}
