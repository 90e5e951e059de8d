//! Limiting exit laws: the exponent `β`, the admissible `p`, the Gaussian
//! variances by quadrature, samplers for `η₀±`, `θ`, `Θ'` and the composed
//! exit law through `∂V`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{covariance_flow, time_to_boundary};
use crate::linalg::{self, Mat2, Vec2};
use crate::mixture::Mixture;
use crate::normal_form::{NormalForm, TransformedSde};
use crate::quad::damped_half_line;
use crate::system::{SaddleSystem, TRANSVERSALITY_TOL};

/// Relative tolerance for deciding `αλ₋ = λ₊` in floating point.
pub const CASE_TOL: f64 = 1e-12;
const MAX_RESAMPLE: usize = 1000;

pub fn beta_exponent(alpha: f64, lambda_plus: f64, lambda_minus: f64) -> f64 {
    if alpha * lambda_minus >= lambda_plus {
        1.0
    } else {
        alpha * lambda_minus / lambda_plus
    }
}

/// Open interval of admissible `p`:
/// `(max(0, 1 − λ₊/λ₋), λ₋/(λ₊ + λ₋))`.
pub fn p_range(lambda_plus: f64, lambda_minus: f64) -> Result<(f64, f64)> {
    if !(lambda_plus > 0.0 && lambda_minus > 0.0) {
        return Err(Error::invalid("eigenvalues must be positive"));
    }
    let lo = (1.0 - lambda_plus / lambda_minus).max(0.0);
    let hi = (lambda_minus / (lambda_plus + lambda_minus)).min(1.0);
    if !(lo < hi) {
        return Err(Error::Internal(format!("empty p-range ({lo}, {hi})")));
    }
    Ok((lo, hi))
}

pub fn p_in_range(p: f64, lambda_plus: f64, lambda_minus: f64) -> Result<bool> {
    let (lo, hi) = p_range(lambda_plus, lambda_minus)?;
    Ok(p > lo && p < hi)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaseTag {
    /// `αλ₋ > λ₊`: `θ` is purely Gaussian.
    NoiseDominated,
    /// `αλ₋ = λ₊`.
    Balanced,
    /// `αλ₋ < λ₊`: `θ` is a deterministic function of `η₀⁺`.
    DriftDominated,
}

pub fn case_tag(alpha: f64, lambda_plus: f64, lambda_minus: f64) -> CaseTag {
    let a = alpha * lambda_minus;
    if (a - lambda_plus).abs() <= CASE_TOL * lambda_plus.max(a) {
        CaseTag::Balanced
    } else if a > lambda_plus {
        CaseTag::NoiseDominated
    } else {
        CaseTag::DriftDominated
    }
}

/// Decay rate in the kernel of `Var N⁺`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelVariant {
    #[default]
    LambdaPlus,
    LambdaMinus,
}

/// `Var N⁺ = ∫₀^∞ e^{−2κs}|σ̃₁(0, e^{−λ₋s}y₂)|² ds` with `κ = λ₊` (or `λ₋`
/// for the alternative kernel). `sigma_tilde` returns the full matrix; only
/// its first row is used.
pub fn var_n_plus<F: Fn(Vec2) -> Mat2>(
    sigma_tilde: F,
    lambda_plus: f64,
    lambda_minus: f64,
    y2: f64,
    kernel: KernelVariant,
) -> Result<f64> {
    let rate = match kernel {
        KernelVariant::LambdaPlus => lambda_plus,
        KernelVariant::LambdaMinus => lambda_minus,
    };
    damped_half_line(
        |s| {
            let row = sigma_tilde([0.0, (-lambda_minus * s).exp() * y2])[0];
            row[0] * row[0] + row[1] * row[1]
        },
        rate,
    )
}

/// `σ± = ∫₀^∞ e^{−2λ₋u}|σ̃₂(±δe^{−λ₊u}, 0)|² du`.
pub fn sigma_pm_variance<F: Fn(Vec2) -> Mat2>(
    sigma_tilde: F,
    lambda_plus: f64,
    lambda_minus: f64,
    delta: f64,
) -> Result<(f64, f64)> {
    let side = |sign: f64| {
        damped_half_line(
            |u| {
                let row = sigma_tilde([sign * delta * (-lambda_plus * u).exp(), 0.0])[1];
                row[0] * row[0] + row[1] * row[1]
            },
            lambda_minus,
        )
    };
    Ok((side(1.0)?, side(-1.0)?))
}

#[derive(Clone, Debug)]
pub struct LimitLaw {
    pub alpha: f64,
    pub beta: f64,
    pub lambda_plus: f64,
    pub lambda_minus: f64,
    /// Second coordinate of the entry point `(0, y₂)` in normal-form coordinates.
    pub y2: f64,
    pub delta: f64,
    /// Law of `χ₀`, the initial perturbation in normal-form coordinates.
    pub chi0: Mixture,
    pub var_n_plus: f64,
    pub sigma_plus: f64,
    pub sigma_minus: f64,
    pub case: CaseTag,
    pub kernel: KernelVariant,
}

impl LimitLaw {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        alpha: f64,
        lambda_plus: f64,
        lambda_minus: f64,
        y2: f64,
        delta: f64,
        chi0: Mixture,
        var_n_plus: f64,
        sigma_pm: (f64, f64),
        kernel: KernelVariant,
    ) -> Result<Self> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::invalid("alpha must lie in (0, 1]"));
        }
        if !(lambda_plus > 0.0 && lambda_minus > 0.0) {
            return Err(Error::invalid("eigenvalues must be positive"));
        }
        if !(delta > 0.0) {
            return Err(Error::invalid("delta must be positive"));
        }
        for (v, what) in [(var_n_plus, "Var N⁺"), (sigma_pm.0, "σ₊"), (sigma_pm.1, "σ₋")] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{what} must be a finite non-negative number, got {v}")));
            }
        }
        let gaussian_part = alpha == 1.0 && var_n_plus > 0.0;
        if chi0.first_coordinate_has_atom_at_zero() && !gaussian_part {
            return Err(Error::invalid(
                "the first coordinate of χ₀ has an atom at 0; the exit sign is undefined",
            ));
        }
        Ok(LimitLaw {
            alpha,
            beta: beta_exponent(alpha, lambda_plus, lambda_minus),
            lambda_plus,
            lambda_minus,
            y2,
            delta,
            chi0,
            var_n_plus,
            sigma_plus: sigma_pm.0,
            sigma_minus: sigma_pm.1,
            case: case_tag(alpha, lambda_plus, lambda_minus),
            kernel,
        })
    }

    /// Builds the law from a transported SDE. `xi0` is the law of the
    /// initial perturbation in the original coordinates at `g(0, y₂)`.
    #[allow(clippy::too_many_arguments)]
    pub fn from_sde(
        sde: &TransformedSde,
        alpha: f64,
        lambda_plus: f64,
        lambda_minus: f64,
        delta: f64,
        y2: f64,
        xi0: &Mixture,
        kernel: KernelVariant,
    ) -> Result<Self> {
        let dg = sde.dg([0.0, y2]);
        let df = linalg::inverse(&dg).ok_or(Error::SingularJacobian(0.0, y2))?;
        let chi0 = xi0.linear_map(&df);
        let st = |y: Vec2| sde.sigma_tilde(y).unwrap_or([[f64::NAN; 2]; 2]);
        let var = var_n_plus(st, lambda_plus, lambda_minus, y2, kernel)?;
        let spm = sigma_pm_variance(st, lambda_plus, lambda_minus, delta)?;
        Self::new(alpha, lambda_plus, lambda_minus, y2, delta, chi0, var, spm, kernel)
    }

    /// Variance of the Gaussian added to `χ₀,₁` in `η₀⁺`.
    pub fn eta_noise_var(&self) -> f64 {
        if self.alpha == 1.0 {
            self.var_n_plus
        } else {
            0.0
        }
    }

    /// `P{η₀⁺ > 0}` in closed form.
    pub fn prob_positive(&self) -> f64 {
        self.chi0.prob_first_positive(self.eta_noise_var())
    }

    /// The boundary case uses an independence completion for `N`.
    pub fn uses_completion(&self) -> bool {
        self.case == CaseTag::Balanced
    }

    pub fn params(&self) -> LawParameters {
        LawParameters {
            alpha: self.alpha,
            beta: self.beta,
            lambda_plus: self.lambda_plus,
            lambda_minus: self.lambda_minus,
            p_range: p_range(self.lambda_plus, self.lambda_minus).ok(),
            y2: self.y2,
            delta: self.delta,
            var_n_plus: self.var_n_plus,
            sigma_plus: self.sigma_plus,
            sigma_minus: self.sigma_minus,
            case: self.case,
            kernel: self.kernel,
            prob_positive: self.prob_positive(),
            independence_completion: self.uses_completion(),
        }
    }
}

/// Serializable summary of a [`LimitLaw`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LawParameters {
    pub alpha: f64,
    pub beta: f64,
    pub lambda_plus: f64,
    pub lambda_minus: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_range: Option<(f64, f64)>,
    pub y2: f64,
    pub delta: f64,
    pub var_n_plus: f64,
    pub sigma_plus: f64,
    pub sigma_minus: f64,
    pub case: CaseTag,
    pub kernel: KernelVariant,
    pub prob_positive: f64,
    pub independence_completion: bool,
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// `(η₀⁺, η₀⁻)` with `η₀⁺ = χ₀,₁ + 1{α=1}N⁺` and `η₀⁻ = |η₀⁺|^{λ₋/λ₊}y₂`.
pub fn sample_eta0(law: &LimitLaw, rng: &mut ChaCha8Rng) -> Result<(f64, f64)> {
    let sd = law.eta_noise_var().sqrt();
    for _ in 0..MAX_RESAMPLE {
        let chi = law.chi0.sample(rng);
        let eta = if sd > 0.0 { chi[0] + sd * normal(rng) } else { chi[0] };
        if eta != 0.0 {
            let minus = eta.abs().powf(law.lambda_minus / law.lambda_plus) * law.y2;
            return Ok((eta, minus));
        }
    }
    Err(Error::Internal("η₀⁺ kept landing on 0".into()))
}

/// `θ` given `η₀⁺`; the Gaussian part has variance `σ_{sgn η₀⁺}` and is
/// drawn independently of `|η₀⁺|`.
pub fn sample_theta(law: &LimitLaw, eta_plus: f64, rng: &mut ChaCha8Rng) -> f64 {
    let var = if eta_plus > 0.0 { law.sigma_plus } else { law.sigma_minus };
    let ratio = || (eta_plus.abs() / law.delta).powf(law.lambda_minus / law.lambda_plus) * law.y2;
    match law.case {
        CaseTag::NoiseDominated => var.sqrt() * normal(rng),
        CaseTag::Balanced => ratio() + var.sqrt() * normal(rng),
        CaseTag::DriftDominated => ratio(),
    }
}

/// One draw of the limiting `Θ'`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ThetaPrime {
    pub eta_plus: f64,
    pub theta: f64,
    /// `Dg(sgn(η₀⁺)δe₁)(θe₂)`.
    pub exit_vector: Vec2,
    /// `(1/λ₊)ln(δ/|η₀⁺|)`.
    pub time: f64,
}

/// Sampler for `Θ'` given `Dg` at `±δe₁`.
#[derive(Clone, Debug)]
pub struct ThetaPrimeLaw {
    pub law: LimitLaw,
    pub dg_plus: Mat2,
    pub dg_minus: Mat2,
}

pub fn theta_prime_law(law: LimitLaw, dg_plus: Mat2, dg_minus: Mat2) -> ThetaPrimeLaw {
    ThetaPrimeLaw { law, dg_plus, dg_minus }
}

impl ThetaPrimeLaw {
    pub fn from_sde(law: LimitLaw, sde: &TransformedSde) -> Self {
        let d = law.delta;
        let (p, m) = (sde.dg([d, 0.0]), sde.dg([-d, 0.0]));
        theta_prime_law(law, p, m)
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> Result<ThetaPrime> {
        let (eta_plus, _) = sample_eta0(&self.law, rng)?;
        let theta = sample_theta(&self.law, eta_plus, rng);
        let dg = if eta_plus > 0.0 { &self.dg_plus } else { &self.dg_minus };
        Ok(ThetaPrime {
            eta_plus,
            theta,
            exit_vector: linalg::mat_vec(dg, [0.0, theta]),
            time: (self.law.delta / eta_plus.abs()).ln() / self.law.lambda_plus,
        })
    }
}

/// `C(T)` from the Lyapunov equation along the orbit of `x`.
pub fn gaussian_covariance_far(system: &SaddleSystem, x: Vec2, t: f64, h: f64) -> Result<Mat2> {
    let path = covariance_flow(system, x, t, h)?;
    Ok(*path.cov.last().expect("path has its initial point"))
}

/// Deterministic endpoint, linearization and law of
/// `ξ̄₀ = Φ_x(T)ξ₀ + 1{α=1}N`.
#[derive(Clone, Debug)]
pub struct FarLaw {
    pub endpoint: Vec2,
    pub phi: Mat2,
    pub cov: Mat2,
    pub law: Mixture,
}

pub fn pushforward_far(xi0: &Mixture, system: &SaddleSystem, x: Vec2, t: f64, alpha: f64, h: f64) -> Result<FarLaw> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::invalid("alpha must lie in (0, 1]"));
    }
    let path = covariance_flow(system, x, t, h)?;
    let n = path.times.len() - 1;
    let (phi, cov) = (path.phi[n], path.cov[n]);
    let mut law = xi0.linear_map(&phi);
    if alpha == 1.0 {
        law = law.convolve_gaussian(&cov);
    }
    Ok(FarLaw {
        endpoint: path.states[n],
        phi,
        cov,
        law,
    })
}

/// Coordinate `w` in `v = c·b_q + w·tangent`.
pub fn transversal_projection(b_q: Vec2, tangent: Vec2, v: Vec2) -> Result<f64> {
    let d = linalg::cross(b_q, tangent);
    if d.abs() < 1e-12 * linalg::norm(b_q) * linalg::norm(tangent) || d == 0.0 {
        return Err(Error::Transversality(format!(
            "drift {b_q:?} is parallel to the boundary direction {tangent:?}"
        )));
    }
    Ok(linalg::cross(b_q, v) / d)
}

/// Deterministic data of the leg from `g(±δe₁)` to `q±`.
#[derive(Clone, Debug, Serialize)]
pub struct UnstableLeg {
    pub start: Vec2,
    pub travel_time: f64,
    pub phi: Mat2,
    pub cov: Mat2,
    pub hit_point: Vec2,
    pub drift_at_exit: Vec2,
    pub tangent: Vec2,
}

/// Limiting law of the exit triple through `∂V`.
#[derive(Clone, Debug)]
pub struct FullExitLaw {
    pub entry_time: f64,
    pub entry_point: Vec2,
    pub theta_prime: ThetaPrimeLaw,
    pub plus: UnstableLeg,
    pub minus: UnstableLeg,
}

/// One draw of the limiting exit triple.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ExitTriple {
    pub sign: i8,
    pub phi: f64,
    pub time: f64,
}

/// Composes the entry leg from `x₀` over time `entry_time`, the saddle
/// passage, the unstable legs to `q±` and the projection at `∂V`.
#[allow(clippy::too_many_arguments)]
pub fn compose_full_exit_law(
    system: &SaddleSystem,
    nf: &NormalForm,
    sde: &TransformedSde,
    alpha: f64,
    delta: f64,
    xi0: &Mixture,
    entry_time: f64,
    kernel: KernelVariant,
    h: f64,
) -> Result<FullExitLaw> {
    let x0 = system.x0.ok_or_else(|| Error::invalid("system has no x0"))?;
    let domain = system
        .domain
        .as_ref()
        .ok_or_else(|| Error::invalid("system has no exit domain"))?;
    let exits = system
        .exit_points
        .ok_or_else(|| Error::invalid("system has no exit points"))?;
    let lp = system.lambda_plus();
    let lm = system.lambda_minus();
    if delta >= nf.delta_prime {
        return Err(Error::invalid("δ must be smaller than the normal-form box δ′"));
    }

    let far = pushforward_far(xi0, system, x0, entry_time, alpha, h)?;
    let y = sde.invert(far.endpoint)?;
    if y[0].abs() > 1e-8 {
        return Err(Error::invalid(format!(
            "x0 does not flow onto the stable axis of the normal form (y₁ = {:e})",
            y[0]
        )));
    }
    if y[1].abs() >= delta {
        return Err(Error::invalid(format!(
            "entry point y₂ = {} is outside the box; lengthen the entry time",
            y[1]
        )));
    }
    let law = LimitLaw::from_sde(sde, alpha, lp, lm, delta, y[1], &far.law, kernel)?;
    let theta_prime = ThetaPrimeLaw::from_sde(law, sde);

    let leg = |sign: f64, q: Vec2| -> Result<UnstableLeg> {
        let start = sde.g([sign * delta, 0.0]);
        let (travel_time, hit_point) = time_to_boundary(system, start, domain, h, 1e3)?;
        if linalg::norm(linalg::sub(hit_point, q)) > 1e-4 {
            return Err(Error::invalid(format!(
                "unstable orbit from {start:?} meets ∂V at {hit_point:?}, not at {q:?}"
            )));
        }
        let edge = domain
            .edge_containing(q, 1e-9)
            .ok_or_else(|| Error::invalid(format!("exit point {q:?} is not on ∂V")))?;
        let path = covariance_flow(system, start, travel_time, h)?;
        let n = path.times.len() - 1;
        let drift_at_exit = system.drift(q);
        if linalg::dot(drift_at_exit, domain.outward_normal(edge)).abs() <= TRANSVERSALITY_TOL {
            return Err(Error::Transversality(format!("drift is tangent to ∂V at {q:?}")));
        }
        Ok(UnstableLeg {
            start,
            travel_time,
            phi: path.phi[n],
            cov: path.cov[n],
            hit_point,
            drift_at_exit,
            tangent: domain.tangent(edge),
        })
    };
    Ok(FullExitLaw {
        entry_time,
        entry_point: far.endpoint,
        theta_prime,
        plus: leg(1.0, exits.plus)?,
        minus: leg(-1.0, exits.minus)?,
    })
}

impl FullExitLaw {
    pub fn law(&self) -> &LimitLaw {
        &self.theta_prime.law
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> Result<ExitTriple> {
        let tp = self.theta_prime.sample(rng)?;
        let (sign, leg) = if tp.eta_plus > 0.0 { (1, &self.plus) } else { (-1, &self.minus) };
        let mut w = linalg::mat_vec(&leg.phi, tp.exit_vector);
        if self.law().beta == 1.0 {
            let l = linalg::psd_sqrt_lower(&leg.cov);
            let z = [normal(rng), normal(rng)];
            w = linalg::add(w, linalg::mat_vec(&l, z));
        }
        Ok(ExitTriple {
            sign,
            phi: transversal_projection(leg.drift_at_exit, leg.tangent, w)?,
            time: self.entry_time + tp.time + leg.travel_time,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mixture::Component;
    use crate::normal_form::{poincare_dulac, transform_sde};
    use crate::sde::path_rng;
    use crate::system::benchmarks::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn const_sigma(m: Mat2) -> impl Fn(Vec2) -> Mat2 {
        move |_| m
    }

    #[test]
    fn beta_cases() {
        assert_eq!(beta_exponent(1.0, 1.0, 2.0), 1.0);
        assert_eq!(beta_exponent(1.0, 1.0, 1.0), 1.0);
        assert_eq!(beta_exponent(0.5, 2.0, 1.0), 0.25);
        assert_eq!(case_tag(1.0, 1.0, 1.0), CaseTag::Balanced);
        assert_eq!(case_tag(1.0, 1.0, 2.0), CaseTag::NoiseDominated);
        assert_eq!(case_tag(0.5, 2.0, 1.0), CaseTag::DriftDominated);
    }

    #[test]
    fn beta_continuous_at_boundary() {
        let mut prev = 0.0;
        for k in 1..=10 {
            let alpha = 1.0 - 0.5f64.powi(k);
            let b = beta_exponent(alpha, 1.0, 1.0);
            assert_abs_diff_eq!(b, alpha, epsilon = 1e-15);
            assert!(b > prev && b < 1.0);
            prev = b;
        }
        assert!(1.0 - prev < 1e-3);
    }

    #[test]
    fn p_ranges() {
        assert_eq!(p_range(1.0, 1.0).unwrap(), (0.0, 0.5));
        let (lo, hi) = p_range(1.0, 2.0).unwrap();
        assert_abs_diff_eq!(lo, 0.5);
        assert_abs_diff_eq!(hi, 2.0 / 3.0);
        let (lo, hi) = p_range(2.0, 1.0).unwrap();
        assert_eq!(lo, 0.0);
        assert_abs_diff_eq!(hi, 1.0 / 3.0);
        assert!(p_range(0.0, 1.0).is_err());
    }

    #[test]
    fn var_n_plus_closed_forms() {
        let v = var_n_plus(const_sigma(linalg::IDENTITY), 1.0, 1.0, 0.3, KernelVariant::LambdaPlus).unwrap();
        assert_relative_eq!(v, 0.5, max_relative = 1e-8);
        let v = var_n_plus(const_sigma(linalg::ZERO), 1.0, 1.0, 0.3, KernelVariant::LambdaPlus).unwrap();
        assert_eq!(v, 0.0);
        let v = var_n_plus(|y| [[y[1], 0.0], [0.0, 1.0]], 1.0, 1.0, 1.0, KernelVariant::LambdaPlus).unwrap();
        assert_relative_eq!(v, 0.25, max_relative = 1e-8);
        let v = var_n_plus(const_sigma(linalg::IDENTITY), 1.0, 2.0, 0.3, KernelVariant::LambdaMinus).unwrap();
        assert_relative_eq!(v, 0.25, max_relative = 1e-8);
    }

    #[test]
    fn sigma_pm_closed_forms() {
        let (p, m) = sigma_pm_variance(const_sigma(linalg::IDENTITY), 1.0, 1.0, 0.1).unwrap();
        assert_relative_eq!(p, 0.5, max_relative = 1e-8);
        assert_relative_eq!(m, 0.5, max_relative = 1e-8);
        let (p, m) = sigma_pm_variance(|y| [[1.0, 0.0], [y[0], 0.0]], 1.0, 1.0, 0.1).unwrap();
        assert_relative_eq!(p, 0.0025, max_relative = 1e-8);
        assert_relative_eq!(m, p, max_relative = 1e-12);
        // odd in the first argument: same variance on both sides
        let (p, m) = sigma_pm_variance(|y| [[1.0, 0.0], [y[0] * y[0] * y[0], 1.0]], 1.5, 0.7, 0.3).unwrap();
        assert_relative_eq!(p, m, max_relative = 1e-12);
    }

    #[allow(clippy::too_many_arguments)]
    fn point_law(alpha: f64, lp: f64, lm: f64, y2: f64, delta: f64, chi: Vec2, var: f64, spm: f64) -> LimitLaw {
        LimitLaw::new(alpha, lp, lm, y2, delta, Mixture::point(chi), var, (spm, spm), KernelVariant::LambdaPlus).unwrap()
    }

    #[test]
    fn eta0_examples() {
        let mut rng = path_rng(1, 0);
        let law = point_law(1.0, 1.0, 1.0, 0.4, 0.5, [1.0, 0.0], 0.0, 0.0);
        assert_eq!(sample_eta0(&law, &mut rng).unwrap(), (1.0, 0.4));
        let law = point_law(1.0, 1.0, 2.0, 0.5, 0.5, [-3.0, 0.0], 0.0, 0.0);
        let (p, m) = sample_eta0(&law, &mut rng).unwrap();
        assert_eq!(p, -3.0);
        assert_abs_diff_eq!(m, 4.5, epsilon = 1e-12);
        // α < 1: the Gaussian part is switched off
        let law = point_law(0.5, 2.0, 1.0, 0.4, 0.5, [0.7, 0.0], 3.0, 0.0);
        assert_eq!(sample_eta0(&law, &mut rng).unwrap().0, 0.7);
    }

    #[test]
    fn atom_at_zero_rejected() {
        let r = LimitLaw::new(0.5, 1.0, 1.0, 0.3, 0.5, Mixture::point([0.0, 1.0]), 1.0, (0.0, 0.0), KernelVariant::LambdaPlus);
        assert!(r.is_err());
        let r = LimitLaw::new(1.0, 1.0, 1.0, 0.3, 0.5, Mixture::point([0.0, 1.0]), 1.0, (0.0, 0.0), KernelVariant::LambdaPlus);
        assert!(r.is_ok());
    }

    #[test]
    fn theta_cases() {
        let mut rng = path_rng(2, 0);
        let law = point_law(0.5, 2.0, 1.0, 0.3, 0.5, [0.5, 0.0], 0.0, 1.0);
        assert_eq!(sample_theta(&law, 0.5, &mut rng), 0.3);
        // balanced with zero variance reduces to the deterministic value
        let law = point_law(1.0, 1.0, 1.0, 0.3, 0.5, [0.25, 0.0], 0.0, 0.0);
        assert_abs_diff_eq!(sample_theta(&law, 0.25, &mut rng), 0.15, epsilon = 1e-15);
        // noise dominated: N(0, σ±)
        let law = point_law(1.0, 1.0, 2.0, 0.3, 0.5, [0.25, 0.0], 0.0, 0.25);
        let xs: Vec<f64> = (0..200_000).map(|_| sample_theta(&law, 1.0, &mut rng)).collect();
        let v = crate::stats::variance(&xs);
        assert!((v - 0.25).abs() < 4.0 * 0.25 * (2.0 / 200_000f64).sqrt());
    }

    #[test]
    fn eta0_moments() {
        let chi0 = Mixture::new(vec![
            (0.3, Component::Point([-0.5, 0.0])),
            (0.7, Component::Gaussian { mean: [1.0, 0.0], cov: [[0.2, 0.0], [0.0, 1.0]] }),
        ])
        .unwrap();
        let law = LimitLaw::new(1.0, 1.0, 1.0, 0.3, 0.5, chi0, 0.5, (0.5, 0.5), KernelVariant::LambdaPlus).unwrap();
        let mut rng = path_rng(3, 0);
        let n = 1_000_000;
        let xs: Vec<f64> = (0..n).map(|_| sample_eta0(&law, &mut rng).unwrap().0).collect();
        let mean = 0.3 * -0.5 + 0.7 * 1.0;
        let var = 0.3 * 0.25 + 0.7 * (0.2 + 1.0) - mean * mean + 0.5;
        let m = crate::stats::mean(&xs);
        let v = crate::stats::variance(&xs);
        assert!((m - mean).abs() < 4.0 * (var / n as f64).sqrt(), "{m} vs {mean}");
        // fourth moment bound for the variance standard error
        let m4 = xs.iter().map(|x| (x - m).powi(4)).sum::<f64>() / n as f64;
        assert!((v - var).abs() < 4.0 * ((m4 - v * v) / n as f64).sqrt(), "{v} vs {var}");
    }

    #[test]
    fn theta_prime_time_identity() {
        let chi0 = Mixture::gaussian([0.2, 0.0], [[1.0, 0.0], [0.0, 1.0]]).unwrap();
        let law = LimitLaw::new(1.0, 1.5, 1.0, 0.3, 0.5, chi0, 0.4, (0.3, 0.2), KernelVariant::LambdaPlus).unwrap();
        let tp = theta_prime_law(law, linalg::IDENTITY, linalg::IDENTITY);
        let mut rng = path_rng(4, 0);
        for _ in 0..1000 {
            let s = tp.sample(&mut rng).unwrap();
            let expect = -s.eta_plus.abs().ln() / 1.5 + 0.5f64.ln() / 1.5;
            assert_abs_diff_eq!(s.time, expect, epsilon = 1e-14);
        }
        let law = point_law(0.5, 2.0, 1.0, 0.3, 0.5, [0.5, 0.0], 0.0, 0.0);
        let tp = theta_prime_law(law, linalg::IDENTITY, linalg::IDENTITY);
        let s = tp.sample(&mut rng).unwrap();
        assert_eq!((s.eta_plus, s.exit_vector, s.time), (0.5, [0.0, 0.3], 0.0));
    }

    #[test]
    fn covariance_far_linear() {
        let s = linear_saddle(1, 1);
        let t: f64 = 1.3;
        let c = gaussian_covariance_far(&s, [0.2, 0.4], t, 1e-3).unwrap();
        assert_abs_diff_eq!(c[0][0], ((2.0 * t).exp() - 1.0) / 2.0, epsilon = 1e-8);
        assert_abs_diff_eq!(c[1][1], (1.0 - (-2.0 * t).exp()) / 2.0, epsilon = 1e-8);
        assert_abs_diff_eq!(c[0][1], 0.0, epsilon = 1e-12);
        let quiet = s.with_sigma_scaled(0.0);
        assert_eq!(gaussian_covariance_far(&quiet, [0.2, 0.4], t, 1e-3).unwrap(), linalg::ZERO);
        let tiny = gaussian_covariance_far(&s, [0.2, 0.4], 1e-4, 1e-5).unwrap();
        assert_relative_eq!(tiny[0][0] / 1e-4, 1.0, max_relative = 1e-3);
    }

    #[test]
    fn covariance_far_is_psd() {
        let s = cubic_resonant();
        let path = covariance_flow(&s, [0.1, 0.1], 1.0, 1e-3).unwrap();
        for c in &path.cov {
            assert_eq!(c[0][1], c[1][0]);
            assert!(linalg::sym_min_eigenvalue(c) >= -1e-12);
        }
    }

    #[test]
    fn pushforward_examples() {
        let s = linear_saddle(1, 1);
        let far = pushforward_far(&Mixture::point([1.0, 2.0]), &s, [0.0, 0.5], 1.0, 0.5, 1e-3).unwrap();
        let e = std::f64::consts::E;
        let m = far.law.mean();
        assert_abs_diff_eq!(m[0], e, epsilon = 1e-9);
        assert_abs_diff_eq!(m[1], 2.0 / e, epsilon = 1e-9);
        assert_eq!(far.law.covariance(), linalg::ZERO);
        let id = pushforward_far(&Mixture::point([1.0, 2.0]), &s, [0.0, 0.5], 0.0, 1.0, 1e-3).unwrap();
        assert_eq!(id.law, Mixture::point([1.0, 2.0]));
    }

    #[test]
    fn pushforward_gaussian_moments() {
        let s = linear_saddle(1, 1);
        let far = pushforward_far(&Mixture::gaussian([0.0, 0.0], linalg::IDENTITY).unwrap(), &s, [0.0, 0.5], 0.7, 0.5, 1e-3).unwrap();
        let mut rng = path_rng(8, 0);
        let n = 200_000;
        let xs: Vec<Vec2> = (0..n).map(|_| far.law.sample(&mut rng)).collect();
        let expect = [(1.4f64).exp(), (-1.4f64).exp()];
        for i in 0..2 {
            let v: Vec<f64> = xs.iter().map(|x| x[i]).collect();
            let var = crate::stats::variance(&v);
            assert!((var - expect[i]).abs() < 4.0 * expect[i] * (2.0 / n as f64).sqrt());
        }
    }

    #[test]
    fn projections() {
        assert_eq!(transversal_projection([1.0, 0.0], [0.0, 1.0], [3.0, 5.0]).unwrap(), 5.0);
        assert_abs_diff_eq!(transversal_projection([1.0, 1.0], [1.0, 0.0], [2.0, 3.0]).unwrap(), -1.0, epsilon = 1e-15);
        assert_eq!(transversal_projection([1.0, 2.0], [0.0, 1.0], [2.0, 4.0]).unwrap(), 0.0);
        assert!(matches!(
            transversal_projection([1.0, 0.0], [2.0, 0.0], [1.0, 1.0]),
            Err(Error::Transversality(_))
        ));
    }

    #[test]
    fn sign_symmetry_without_gaussian() {
        let chi0 = Mixture::gaussian([0.0, 0.0], linalg::IDENTITY).unwrap();
        let law = LimitLaw::new(0.5, 2.0, 1.0, 0.3, 0.5, chi0, 0.5, (0.5, 0.5), KernelVariant::LambdaPlus).unwrap();
        assert_eq!(law.prob_positive(), 0.5);
    }

    fn linear_pipeline(alpha: f64, xi0: Mixture) -> FullExitLaw {
        let s = linear_saddle(1, 1)
            .with_domain(crate::system::ExitDomain::rectangle(-1.0, 1.0, -1.0, 1.0).unwrap())
            .with_exit_points([1.0, 0.0], [-1.0, 0.0])
            .with_x0([0.0, 0.9]);
        let nf = poincare_dulac(&s, 3).unwrap();
        let sde = transform_sde(&s, &nf);
        compose_full_exit_law(&s, &nf, &sde, alpha, 0.5, &xi0, 3f64.ln(), KernelVariant::LambdaPlus, 1e-3).unwrap()
    }

    #[test]
    fn deterministic_pipeline() {
        let quiet = linear_pipeline(0.5, Mixture::point([0.5, 0.0]));
        let mut rng = path_rng(0, 0);
        let a = quiet.sample(&mut rng).unwrap();
        let b = quiet.sample(&mut rng).unwrap();
        assert_eq!(a, b);
        // χ₀,₁ = Φ₁₁(T)·0.5 = 1.5 ⇒ time = T + ln(δ/1.5) + ln 2 = ln 3 + ln(1/3) + ln 2
        assert_eq!(a.sign, 1);
        assert_abs_diff_eq!(a.time, 2f64.ln(), epsilon = 1e-6);
        // β = 1/2 < 1, drift-dominated: θ = (1.5/0.5)·0.3 = 0.9; exits at x₂ = 0.9/2
        assert_abs_diff_eq!(quiet.law().beta, 0.5);
        assert_abs_diff_eq!(a.phi, 0.45, epsilon = 1e-6);
        assert_abs_diff_eq!(quiet.plus.travel_time, 2f64.ln(), epsilon = 1e-9);
    }
}
