//! Polynomial Poincaré–Dulac normal forms and the transported SDE.
//!
//! The conjugacy `g = id + h` is built degree by degree so that
//! `Dg(y)⁻¹ b(g(y)) = Ay + P(y) + O(|y|^{R+1})` with `P` made of resonant
//! monomials only. All algebra is exact; floating point enters only when the
//! result is compiled for evaluation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Mat2, Vec2};
use crate::poly::{
    compose_field, format_rational, identity_field, jacobian, parse_rational, EvalField, EvalMatrix, EvalPoly,
    Poly, PolyField, Rational,
};
use crate::resonance::{divisor, resonant_indices, MultiIndex, ResonanceReport, Target};
use crate::system::SaddleSystem;

/// Minimum of `det Dg` accepted on the outer box.
pub const MIN_JACOBIAN_DET: f64 = 0.5;
const BOX_GRID: usize = 41;
const MAX_SHRINKS: u32 = 60;

#[derive(Clone, Debug)]
pub struct NormalForm {
    pub order: u32,
    pub lambda_plus: Rational,
    pub lambda_minus: Rational,
    /// Coordinate change `x = g(y)`.
    pub g: PolyField,
    /// Inverse of `g` truncated at order `R`.
    pub f: PolyField,
    /// Resonant part of the normal-form drift.
    pub p: PolyField,
    pub delta: f64,
    pub delta_prime: f64,
    pub resonances: ResonanceReport,
    g_eval: EvalField,
    p_eval: EvalField,
}

impl NormalForm {
    pub fn g_eval(&self) -> &EvalField {
        &self.g_eval
    }

    pub fn g_at(&self, y: Vec2) -> Vec2 {
        self.g_eval.eval(y)
    }

    pub fn dg_at(&self, y: Vec2) -> Mat2 {
        self.g_eval.jacobian(y)
    }

    pub fn p_at(&self, y: Vec2) -> Vec2 {
        self.p_eval.eval(y)
    }

    /// `g` is the identity map.
    pub fn is_identity(&self) -> bool {
        self.g == identity_field()
    }

    /// The normal-form drift `Ay + P(y)` in exact form.
    pub fn normal_drift(&self) -> PolyField {
        let mut d = self.p.clone();
        d[0].add_term((1, 0), self.lambda_plus.clone());
        d[1].add_term((0, 1), -self.lambda_minus.clone());
        d
    }

    pub fn p_indices(&self) -> Vec<MultiIndex> {
        let mut out = Vec::new();
        for (j, comp) in self.p.iter().enumerate() {
            for (&(a1, a2), _) in comp.terms() {
                out.push(MultiIndex::new(a1, a2, Target::from_index(j)));
            }
        }
        out
    }

    /// Re-fits the boxes: `δ′` is halved until `det Dg ≥ 1/2` on a grid over
    /// `[−δ′, δ′]²`; fails once `δ′ ≤ δ`.
    pub fn fit_box(mut self, delta: f64, delta_prime: f64) -> Result<Self> {
        if !(delta > 0.0 && delta_prime > 0.0 && delta.is_finite() && delta_prime.is_finite()) {
            return Err(Error::invalid("box half-widths must be positive"));
        }
        let mut dp = delta_prime;
        let mut shrinks = 0;
        while !self.jacobian_ok_on(dp) {
            dp *= 0.5;
            shrinks += 1;
            if shrinks > MAX_SHRINKS {
                return Err(Error::Internal("normal-form box collapsed".into()));
            }
        }
        if delta >= dp {
            return Err(Error::invalid(format!(
                "inner box δ = {delta} does not fit inside δ′ = {dp} where Dg stays invertible"
            )));
        }
        self.delta = delta;
        self.delta_prime = dp;
        Ok(self)
    }

    fn jacobian_ok_on(&self, half_width: f64) -> bool {
        let n = BOX_GRID;
        for i in 0..n {
            for k in 0..n {
                let y = [
                    -half_width + 2.0 * half_width * i as f64 / (n - 1) as f64,
                    -half_width + 2.0 * half_width * k as f64 / (n - 1) as f64,
                ];
                let d = linalg::det(&self.dg_at(y));
                if !(d >= MIN_JACOBIAN_DET) {
                    return false;
                }
            }
        }
        true
    }

    pub fn table(&self) -> NormalFormTable {
        NormalFormTable {
            order: self.order,
            lambda_plus: format_rational(&self.lambda_plus),
            lambda_minus: format_rational(&self.lambda_minus),
            delta: self.delta,
            delta_prime: self.delta_prime,
            g: coefficient_table(&self.g),
            f: coefficient_table(&self.f),
            p: coefficient_table(&self.p),
        }
    }
}

/// Computes the normal form to order `r`. The boxes default to
/// `δ′ = bound_box` (shrunk until `Dg` is safely invertible) and `δ = δ′/2`.
pub fn poincare_dulac(system: &SaddleSystem, r: u32) -> Result<NormalForm> {
    if r < 2 {
        return Err(Error::invalid("normal-form order must be at least 2"));
    }
    if r > 24 {
        return Err(Error::invalid("normal-form order above 24 is not supported"));
    }
    if !system.is_diagonal() {
        return Err(Error::invalid("linear part must be diagonal"));
    }
    let lp = system.lambda_plus_exact()?;
    let lm = system.lambda_minus_exact()?;
    let resonances = resonant_indices(&lp, &lm, r)?;
    let b = system.drift_exact();
    let lambdas = [lp.clone(), -lm.clone()];

    let mut h: PolyField = [Poly::zero(), Poly::zero()];
    let mut p: PolyField = [Poly::zero(), Poly::zero()];
    for k in 2..=r {
        let g = add_fields(&identity_field(), &h);
        let e = homological_residual(&b, &g, &lambdas, &p, k);
        for (j, comp) in e.iter().enumerate() {
            for (&(a1, a2), c) in comp.terms() {
                let target = Target::from_index(j);
                let d = divisor(&lp, &lm, a1, a2, target);
                let idx = MultiIndex::new(a1, a2, target);
                if d == Rational::from_integer(0.into()) {
                    if !resonances.contains(&idx) {
                        return Err(Error::Internal(format!(
                            "zero divisor at {idx:?}, which is not a listed resonance"
                        )));
                    }
                    p[j].add_term((a1, a2), c.clone());
                } else {
                    h[j].add_term((a1, a2), c / d);
                }
            }
        }
        // the degree-k residual must now vanish
        let g = add_fields(&identity_field(), &h);
        let check = homological_residual(&b, &g, &lambdas, &p, k);
        if !(check[0].is_zero() && check[1].is_zero()) {
            return Err(Error::Internal(format!("homological step failed at degree {k}")));
        }
    }
    let g = add_fields(&identity_field(), &h);
    let f = truncated_inverse(&h, r);
    let nf = NormalForm {
        order: r,
        lambda_plus: lp,
        lambda_minus: lm,
        g_eval: EvalField::from_exact(&g),
        p_eval: EvalField::from_exact(&p),
        g,
        f,
        p,
        delta: 0.0,
        delta_prime: 0.0,
        resonances,
    };
    let dp = system.bound_box;
    let fitted = nf.clone().fit_box(0.5 * dp, dp);
    match fitted {
        Ok(nf) => Ok(nf),
        Err(_) => {
            // the box shrank past δ = δ′/2: keep δ at half of whatever survived
            let probe = nf.fit_box(f64::MIN_POSITIVE, dp)?;
            let dp = probe.delta_prime;
            probe.fit_box(0.5 * dp, dp)
        }
    }
}

fn add_fields(a: &PolyField, b: &PolyField) -> PolyField {
    [&a[0] + &b[0], &a[1] + &b[1]]
}

/// Degree-`k` part of `b(g(y)) − Dg(y)(Λy + P(y))`.
fn homological_residual(b: &PolyField, g: &PolyField, lambdas: &[Rational; 2], p: &PolyField, k: u32) -> PolyField {
    let bg = compose_field(b, g, Some(k));
    let rhs = dg_times_normal(g, lambdas, p, Some(k));
    [
        (&bg[0] - &rhs[0]).homogeneous(k),
        (&bg[1] - &rhs[1]).homogeneous(k),
    ]
}

fn dg_times_normal(g: &PolyField, lambdas: &[Rational; 2], p: &PolyField, max: Option<u32>) -> PolyField {
    let mut nd = p.clone();
    nd[0].add_term((1, 0), lambdas[0].clone());
    nd[1].add_term((0, 1), lambdas[1].clone());
    let dg = jacobian(g);
    let row = |i: usize| &dg[i][0].mul_trunc(&nd[0], max) + &dg[i][1].mul_trunc(&nd[1], max);
    [row(0), row(1)]
}

/// `f` with `f = id − h∘f` up to order `r`.
fn truncated_inverse(h: &PolyField, r: u32) -> PolyField {
    let id = identity_field();
    let mut f = id.clone();
    if h[0].is_zero() && h[1].is_zero() {
        return f;
    }
    for _ in 1..r {
        let hf = compose_field(h, &f, Some(r));
        f = [&id[0] - &hf[0], &id[1] - &hf[1]];
    }
    f
}

/// Full exact residual polynomial `b(g(y)) − Dg(y)(Ay + P(y))`.
pub fn exact_residual_poly(system: &SaddleSystem, nf: &NormalForm) -> PolyField {
    let bg = compose_field(&system.drift_exact(), &nf.g, None);
    let lambdas = [nf.lambda_plus.clone(), -nf.lambda_minus.clone()];
    let rhs = dg_times_normal(&nf.g, &lambdas, &nf.p, None);
    [&bg[0] - &rhs[0], &bg[1] - &rhs[1]]
}

#[derive(Clone, Debug, Serialize)]
pub struct ResidualFit {
    pub scales: Vec<f64>,
    pub max_residual: Vec<f64>,
    /// Log-log slope; `+∞` when the residual vanishes identically.
    pub slope: f64,
}

impl ResidualFit {
    pub fn passes(&self, order: u32) -> bool {
        self.slope >= order as f64 + 1.0 - 0.1
    }
}

const RESIDUAL_POINTS: usize = 256;

fn fit_scaling<F: Fn(Vec2) -> Result<f64>>(scales: &[f64], seed: u64, eval: F) -> Result<ResidualFit> {
    if scales.len() < 2 {
        return Err(Error::invalid("need at least two scales"));
    }
    if scales.windows(2).any(|w| !(w[1] < w[0])) || scales.iter().any(|s| !(*s > 0.0)) {
        return Err(Error::invalid("scales must be positive and strictly decreasing"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut maxima = Vec::with_capacity(scales.len());
    for &s in scales {
        let mut m: f64 = 0.0;
        for _ in 0..RESIDUAL_POINTS {
            let phi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            m = m.max(eval([s * phi.cos(), s * phi.sin()])?);
        }
        maxima.push(m);
    }
    let slope = if maxima.iter().all(|m| *m == 0.0) {
        f64::INFINITY
    } else if maxima.contains(&0.0) {
        return Err(Error::Internal(
            "residual vanishes at some scales but not others".into(),
        ));
    } else {
        let xs: Vec<f64> = scales.iter().map(|s| s.ln()).collect();
        let ys: Vec<f64> = maxima.iter().map(|m| m.ln()).collect();
        crate::stats::least_squares(&xs, &ys)?.slope
    };
    Ok(ResidualFit {
        scales: scales.to_vec(),
        max_residual: maxima,
        slope,
    })
}

/// Regresses `max |ρ(y)|` over random `|y| = s` on `s`, where
/// `ρ(y) = Dg(y)⁻¹b(g(y)) − Ay − P(y)`.
pub fn conjugacy_residual(system: &SaddleSystem, nf: &NormalForm, scales: &[f64], seed: u64) -> Result<ResidualFit> {
    if scales.iter().any(|s| *s >= nf.delta_prime) {
        return Err(Error::invalid("residual scales must lie inside the normal-form box"));
    }
    let res = EvalField::from_exact(&exact_residual_poly(system, nf));
    fit_scaling(scales, seed, |y| {
        let dg = nf.dg_at(y);
        let inv = linalg::inverse(&dg).ok_or(Error::SingularJacobian(y[0], y[1]))?;
        Ok(linalg::norm(linalg::mat_vec(&inv, res.eval(y))))
    })
}

/// Regresses `|g(f(y)) − y|` on the scale.
pub fn inverse_residual(nf: &NormalForm, scales: &[f64], seed: u64) -> Result<ResidualFit> {
    let gf = compose_field(&nf.g, &nf.f, None);
    let id = identity_field();
    let diff = EvalField::from_exact(&[&gf[0] - &id[0], &gf[1] - &id[1]]);
    fit_scaling(scales, seed, |y| Ok(linalg::norm(diff.eval(y))))
}

/// Coefficients of the SDE for `Y` with `X = g(Y)`:
/// `dY = (Dg⁻¹b(g(Y)) + ε²Ψ(Y))dt + εσ̃(Y)dW`.
#[derive(Clone, Debug)]
pub struct TransformedSde {
    identity: bool,
    g: EvalField,
    g_hess: [[[EvalPoly; 2]; 2]; 2],
    f_hess: [[[EvalPoly; 2]; 2]; 2],
    drift: EvalField,
    sigma: EvalMatrix,
    pub delta: f64,
    pub delta_prime: f64,
}

fn hessians(field: &PolyField) -> [[[EvalPoly; 2]; 2]; 2] {
    let d = |i: usize, k: usize, l: usize| field[i].derivative(k).derivative(l).to_eval();
    [
        [[d(0, 0, 0), d(0, 0, 1)], [d(0, 1, 0), d(0, 1, 1)]],
        [[d(1, 0, 0), d(1, 0, 1)], [d(1, 1, 0), d(1, 1, 1)]],
    ]
}

fn contract(hess: &[[[EvalPoly; 2]; 2]; 2], at: Vec2, m: &Mat2) -> Vec2 {
    let mut out = [0.0; 2];
    for (i, o) in out.iter_mut().enumerate() {
        for k in 0..2 {
            for l in 0..2 {
                if m[k][l] != 0.0 {
                    *o += hess[i][k][l].eval(at) * m[k][l];
                }
            }
        }
        *o *= 0.5;
    }
    out
}

/// Builds σ̃ and Ψ for a normal form.
pub fn transform_sde(system: &SaddleSystem, nf: &NormalForm) -> TransformedSde {
    TransformedSde {
        identity: nf.is_identity(),
        g: nf.g_eval.clone(),
        g_hess: hessians(&nf.g),
        f_hess: hessians(&nf.f),
        drift: EvalField::from_exact(&system.drift_exact()),
        sigma: system.sigma_field().clone(),
        delta: nf.delta,
        delta_prime: nf.delta_prime,
    }
}

/// Drift, diffusion and Itô correction at one point.
#[derive(Clone, Copy, Debug)]
pub struct Coefficients {
    pub drift: Vec2,
    pub sigma_tilde: Mat2,
    pub psi: Vec2,
}

impl TransformedSde {
    pub fn is_identity(&self) -> bool {
        self.identity
    }

    pub fn g(&self, y: Vec2) -> Vec2 {
        if self.identity {
            y
        } else {
            self.g.eval(y)
        }
    }

    pub fn dg(&self, y: Vec2) -> Mat2 {
        if self.identity {
            linalg::IDENTITY
        } else {
            self.g.jacobian(y)
        }
    }

    /// All coefficients, sharing one inversion of `Dg(y)`.
    #[inline]
    pub fn coefficients(&self, y: Vec2) -> Result<Coefficients> {
        if self.identity {
            return Ok(Coefficients {
                drift: self.drift.eval(y),
                sigma_tilde: self.sigma.eval(y),
                psi: [0.0, 0.0],
            });
        }
        let x = self.g.eval(y);
        let inv = linalg::inverse(&self.g.jacobian(y)).ok_or(Error::SingularJacobian(y[0], y[1]))?;
        let sigma_tilde = linalg::mat_mul(&inv, &self.sigma.eval(x));
        let cov = linalg::mat_mul(&sigma_tilde, &linalg::transpose(&sigma_tilde));
        // X = g(Y) exactly: Dg·Ψ + ½D²g[σ̃σ̃ᵀ] = 0
        let psi = linalg::scale(-1.0, linalg::mat_vec(&inv, contract(&self.g_hess, y, &cov)));
        Ok(Coefficients {
            drift: linalg::mat_vec(&inv, self.drift.eval(x)),
            sigma_tilde,
            psi,
        })
    }

    pub fn sigma_tilde(&self, y: Vec2) -> Result<Mat2> {
        Ok(self.coefficients(y)?.sigma_tilde)
    }

    pub fn psi(&self, y: Vec2) -> Result<Vec2> {
        Ok(self.coefficients(y)?.psi)
    }

    /// `½ D²f(g(y))[σσᵀ(g(y))]` from the truncated inverse; agrees with
    /// [`Self::psi`] up to the truncation order.
    pub fn psi_from_inverse(&self, y: Vec2) -> Vec2 {
        let x = self.g(y);
        let s = self.sigma.eval(x);
        let cov = linalg::mat_mul(&s, &linalg::transpose(&s));
        contract(&self.f_hess, x, &cov)
    }

    /// `g⁻¹(x)` by Newton iteration from `x`.
    pub fn invert(&self, x: Vec2) -> Result<Vec2> {
        if self.identity {
            return Ok(x);
        }
        let mut y = x;
        for _ in 0..100 {
            let r = linalg::sub(self.g(y), x);
            if linalg::norm(r) <= 1e-15 * (1.0 + linalg::norm(x)) {
                return Ok(y);
            }
            let inv = linalg::inverse(&self.dg(y)).ok_or(Error::SingularJacobian(y[0], y[1]))?;
            y = linalg::sub(y, linalg::mat_vec(&inv, r));
            if !(y[0].is_finite() && y[1].is_finite()) {
                break;
            }
        }
        let r = linalg::norm(linalg::sub(self.g(y), x));
        if r <= 1e-12 * (1.0 + linalg::norm(x)) {
            Ok(y)
        } else {
            Err(Error::Internal(format!("could not invert g at {x:?}")))
        }
    }

    pub fn sigma_at_x(&self, x: Vec2) -> Mat2 {
        self.sigma.eval(x)
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct HBounds {
    pub k1: f64,
    pub k2: f64,
    pub pass: bool,
}

/// Smallest `K₁, K₂` with `|H₁| ≤ K₁y₁²|y₂| + K₂ε²` and
/// `|H₂| ≤ K₁|y₁|y₂² + K₂ε²` on sampled points of the inner box, where
/// `H = P + ε²Ψ`.
pub fn verify_h_bounds(sde: &TransformedSde, nf: &NormalForm, eps: f64, samples: usize, seed: u64) -> Result<HBounds> {
    if !(eps >= 0.0) {
        return Err(Error::invalid("eps must be non-negative"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = nf.delta;
    let (mut k1, mut k2): (f64, f64) = (0.0, 0.0);
    for _ in 0..samples {
        let y = [rng.random_range(-d..d), rng.random_range(-d..d)];
        let p = nf.p_at(y);
        let w1 = y[0] * y[0] * y[1].abs();
        let w2 = y[0].abs() * y[1] * y[1];
        for (pi, w) in [(p[0], w1), (p[1], w2)] {
            if pi != 0.0 {
                if w == 0.0 {
                    return Ok(HBounds { k1: f64::INFINITY, k2, pass: false });
                }
                k1 = k1.max(pi.abs() / w);
            }
        }
        if eps > 0.0 {
            let psi = sde.psi(y)?;
            k2 = k2.max(psi[0].abs()).max(psi[1].abs());
        }
    }
    Ok(HBounds {
        k1,
        k2,
        pass: k1.is_finite() && k2.is_finite(),
    })
}

/// One coefficient of a polynomial map: `coef · y₁^a1 y₂^a2` in component
/// `target` (1 or 2).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoefficientRecord {
    pub target: u8,
    pub a1: u32,
    pub a2: u32,
    pub numerator: String,
    pub denominator: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NormalFormTable {
    pub order: u32,
    pub lambda_plus: String,
    pub lambda_minus: String,
    pub delta: f64,
    pub delta_prime: f64,
    pub g: Vec<CoefficientRecord>,
    pub f: Vec<CoefficientRecord>,
    pub p: Vec<CoefficientRecord>,
}

pub fn coefficient_table(field: &PolyField) -> Vec<CoefficientRecord> {
    let mut out = Vec::new();
    for (j, comp) in field.iter().enumerate() {
        for (&(a1, a2), c) in comp.terms() {
            out.push(CoefficientRecord {
                target: j as u8 + 1,
                a1,
                a2,
                numerator: c.numer().to_string(),
                denominator: c.denom().to_string(),
            });
        }
    }
    out
}

/// Rebuilds a polynomial map from coefficient records. Repeated monomials
/// are summed.
pub fn field_from_table(records: &[CoefficientRecord]) -> Result<PolyField> {
    let mut field: PolyField = [Poly::zero(), Poly::zero()];
    for r in records {
        if !(r.target == 1 || r.target == 2) {
            return Err(Error::Parse(format!("target must be 1 or 2, got {}", r.target)));
        }
        if r.a1 > crate::poly::MAX_EXPONENT || r.a2 > crate::poly::MAX_EXPONENT {
            return Err(Error::Parse("exponent too large".into()));
        }
        let c = parse_rational(&format!("{}/{}", r.numerator.trim(), r.denominator.trim()))?;
        field[r.target as usize - 1].add_term((r.a1, r.a2), c);
    }
    Ok(field)
}

/// Parses a JSON array of coefficient records.
pub fn parse_coefficient_table(text: &str) -> Result<PolyField> {
    let records: Vec<CoefficientRecord> = serde_json::from_str(text)?;
    field_from_table(&records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::benchmarks::*;
    use approx::assert_abs_diff_eq;

    fn q(n: i64, d: i64) -> Rational {
        Rational::new(n.into(), d.into())
    }

    #[test]
    fn quadratic_single_homological_step() {
        let nf = poincare_dulac(&quadratic(), 2).unwrap();
        assert_eq!(nf.g[0].coeff(0, 2), q(-1, 3));
        assert!(nf.p[0].is_zero() && nf.p[1].is_zero());
        assert_eq!(nf.g[0].coeff(1, 0), q(1, 1));
    }

    #[test]
    fn cubic_keeps_resonant_term() {
        let nf = poincare_dulac(&cubic_resonant(), 3).unwrap();
        assert_eq!(nf.p[0].coeff(2, 1), q(1, 1));
        assert_eq!(nf.p[0].len(), 1);
        assert!(nf.p[1].is_zero());
        assert!(nf.is_identity());
    }

    #[test]
    fn linear_is_trivial() {
        for r in [2, 3, 6] {
            let nf = poincare_dulac(&linear_saddle(1, 2), r).unwrap();
            assert!(nf.is_identity());
            assert!(nf.p[0].is_zero() && nf.p[1].is_zero());
            assert_eq!(nf.f, identity_field());
        }
    }

    #[test]
    fn g_is_tangent_to_identity() {
        let nf = poincare_dulac(&mixed_resonant(), 5).unwrap();
        assert_eq!(nf.g_at([0.0, 0.0]), [0.0, 0.0]);
        assert_eq!(nf.dg_at([0.0, 0.0]), linalg::IDENTITY);
        for idx in nf.p_indices() {
            assert!(nf.resonances.contains(&idx), "{idx:?}");
        }
    }

    #[test]
    fn residual_slopes() {
        let s = quadratic();
        let nf = poincare_dulac(&s, 2).unwrap();
        let fit = conjugacy_residual(&s, &nf, &[1e-1, 1e-2, 1e-3], 7).unwrap();
        assert!(fit.slope >= 2.9, "{fit:?}");
        let s = mixed_resonant();
        for r in [3, 4, 5] {
            let nf = poincare_dulac(&s, r).unwrap();
            let fit = conjugacy_residual(&s, &nf, &[1e-1, 1e-2, 1e-3], 7).unwrap();
            assert!(fit.passes(r), "R = {r}: {fit:?}");
            assert!(fit.slope.is_finite());
            let inv = inverse_residual(&nf, &[1e-1, 1e-2, 1e-3], 3).unwrap();
            assert!(inv.passes(r), "R = {r}: {inv:?}");
        }
        let s = linear_saddle(1, 1);
        let nf = poincare_dulac(&s, 3).unwrap();
        assert_eq!(conjugacy_residual(&s, &nf, &[1e-1, 1e-2], 1).unwrap().slope, f64::INFINITY);
    }

    #[test]
    fn transform_identity_and_origin() {
        let s = cubic_resonant();
        let nf = poincare_dulac(&s, 3).unwrap();
        let sde = transform_sde(&s, &nf);
        let y = [0.2, -0.1];
        assert_eq!(sde.sigma_tilde(y).unwrap(), s.sigma(y));
        assert_eq!(sde.psi(y).unwrap(), [0.0, 0.0]);

        let s = quadratic();
        let nf = poincare_dulac(&s, 2).unwrap();
        let sde = transform_sde(&s, &nf);
        assert_eq!(sde.sigma_tilde([0.0, 0.0]).unwrap(), linalg::IDENTITY);
    }

    /// Newton inverse of `g`, used as an independent oracle for `f`.
    fn invert_g(nf: &NormalForm, x: Vec2) -> Vec2 {
        let mut y = x;
        for _ in 0..50 {
            let r = linalg::sub(nf.g_at(y), x);
            let inv = linalg::inverse(&nf.dg_at(y)).unwrap();
            y = linalg::sub(y, linalg::mat_vec(&inv, r));
        }
        y
    }

    #[test]
    fn transported_coefficients_match_finite_differences() {
        let s = quadratic();
        let nf = poincare_dulac(&s, 2).unwrap();
        let sde = transform_sde(&s, &nf);
        let y = [0.1, 0.1];
        let x = nf.g_at(y);
        let hstep = 1e-4;
        // Df(x) by central differences of the exact inverse
        let mut df = [[0.0; 2]; 2];
        for k in 0..2 {
            let mut xp = x;
            let mut xm = x;
            xp[k] += hstep;
            xm[k] -= hstep;
            let (fp, fm) = (invert_g(&nf, xp), invert_g(&nf, xm));
            for i in 0..2 {
                df[i][k] = (fp[i] - fm[i]) / (2.0 * hstep);
            }
        }
        let st = sde.sigma_tilde(y).unwrap();
        let expect = linalg::mat_mul(&df, &s.sigma(x));
        for i in 0..2 {
            for j in 0..2 {
                assert_abs_diff_eq!(st[i][j], expect[i][j], epsilon = 1e-6);
            }
        }
        // ½ Σ ∂²f_i/∂x_k∂x_l (σσᵀ)_kl with σ = I
        let hs = 1e-3;
        let f0 = invert_g(&nf, x);
        let mut psi = [0.0; 2];
        for k in 0..2 {
            let mut xp = x;
            let mut xm = x;
            xp[k] += hs;
            xm[k] -= hs;
            let (fp, fm) = (invert_g(&nf, xp), invert_g(&nf, xm));
            for i in 0..2 {
                psi[i] += 0.5 * (fp[i] - 2.0 * f0[i] + fm[i]) / (hs * hs);
            }
        }
        let got = sde.psi(y).unwrap();
        for i in 0..2 {
            assert_abs_diff_eq!(got[i], psi[i], epsilon = 1e-6);
        }
    }

    #[test]
    fn truncated_inverse_psi_converges() {
        let s = mixed_resonant();
        let nf = poincare_dulac(&s, 6).unwrap();
        let sde = transform_sde(&s, &nf);
        let y = [0.01, 0.01];
        let a = sde.psi(y).unwrap();
        let b = sde.psi_from_inverse(y);
        assert!(linalg::norm(linalg::sub(a, b)) < 1e-6, "{a:?} {b:?}");
    }

    #[test]
    fn h_bounds() {
        let s = linear_saddle(1, 1);
        let nf = poincare_dulac(&s, 3).unwrap();
        let sde = transform_sde(&s, &nf);
        let hb = verify_h_bounds(&sde, &nf, 0.1, 1000, 1).unwrap();
        assert_eq!((hb.k1, hb.k2), (0.0, 0.0));

        let s = cubic_resonant();
        let nf = poincare_dulac(&s, 3).unwrap();
        let sde = transform_sde(&s, &nf);
        let hb = verify_h_bounds(&sde, &nf, 0.0, 2000, 1).unwrap();
        assert!(hb.pass && hb.k1 <= 1.0 + 1e-9 && hb.k1 > 0.999);

        let s = quadratic();
        let nf = poincare_dulac(&s, 2).unwrap();
        let sde = transform_sde(&s, &nf);
        let hb = verify_h_bounds(&sde, &nf, 0.1, 2000, 1).unwrap();
        let mut c: f64 = 0.0;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..2000 {
            let d = nf.delta;
            let y = [rng.random_range(-d..d), rng.random_range(-d..d)];
            let p = sde.psi(y).unwrap();
            c = c.max(p[0].abs()).max(p[1].abs());
        }
        assert!(hb.pass && hb.k2 >= c && c > 0.0);
    }

    #[test]
    fn p_vanishes_on_axes() {
        let nf = poincare_dulac(&mixed_resonant(), 6).unwrap();
        assert!(!nf.p[0].is_zero());
        for k in 0..1000 {
            let t = -1.0 + 2.0 * k as f64 / 999.0;
            assert_eq!(nf.p_at([0.0, t]), [0.0, 0.0]);
            assert_eq!(nf.p_at([t, 0.0]), [0.0, 0.0]);
        }
    }

    #[test]
    fn table_round_trip() {
        let nf = poincare_dulac(&mixed_resonant(), 4).unwrap();
        let t = nf.table();
        let text = serde_json::to_string(&t.g).unwrap();
        assert_eq!(parse_coefficient_table(&text).unwrap(), nf.g);
        assert!(parse_coefficient_table(r#"[{"target":3,"a1":1,"a2":1,"numerator":"1","denominator":"1"}]"#).is_err());
        assert!(parse_coefficient_table(r#"[{"target":1,"a1":1,"a2":1,"numerator":"1","denominator":"0"}]"#).is_err());
    }

    #[test]
    fn box_fitting() {
        let nf = poincare_dulac(&quadratic(), 2).unwrap();
        assert!(nf.delta < nf.delta_prime);
        assert!(nf.clone().fit_box(0.9, 0.5).is_err());
        // det Dg ≡ 1 here, so nothing shrinks
        assert_eq!(nf.fit_box(0.1, 64.0).unwrap().delta_prime, 64.0);
        let nf = poincare_dulac(&mixed_resonant(), 4).unwrap();
        let big = nf.fit_box(0.1, 64.0).unwrap();
        assert!(big.delta_prime < 64.0 && big.delta_prime > 0.1);
    }
}
