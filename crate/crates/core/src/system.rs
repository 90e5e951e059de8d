//! Planar saddle systems `dX = b(X)dt + ε σ(X)dW` with `b(x) = Ax + Q(x)`.

use num_traits::{Signed, Zero};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{self, Mat2, Vec2};
use crate::mixture::Mixture;
use crate::poly::{rational_to_f64, EvalField, EvalMatrix, Poly, PolyField, Rational};

/// Tolerance for `|b(q)·n|` when checking transversal exits.
pub const TRANSVERSALITY_TOL: f64 = 1e-8;

/// Convex polygonal exit domain, vertices stored counter-clockwise.
#[derive(Clone, Debug, PartialEq)]
pub struct ExitDomain {
    vertices: Vec<Vec2>,
    normals: Vec<Vec2>,
    offsets: Vec<f64>,
}

impl ExitDomain {
    pub fn polygon(mut vertices: Vec<Vec2>) -> Result<Self> {
        if vertices.len() < 3 {
            return Err(Error::invalid("exit domain needs at least three vertices"));
        }
        if vertices.len() > 4096 {
            return Err(Error::invalid("exit domain has too many vertices"));
        }
        if vertices.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::invalid("exit domain vertices must be finite"));
        }
        let n = vertices.len();
        let area2: f64 = (0..n)
            .map(|i| linalg::cross(vertices[i], vertices[(i + 1) % n]))
            .sum();
        if area2 == 0.0 || !area2.is_finite() {
            return Err(Error::invalid("exit domain polygon is degenerate"));
        }
        if area2 < 0.0 {
            vertices.reverse();
        }
        let mut normals = Vec::with_capacity(n);
        let mut offsets = Vec::with_capacity(n);
        for i in 0..n {
            let a = vertices[i];
            let b = vertices[(i + 1) % n];
            let e = linalg::sub(b, a);
            let len = linalg::norm(e);
            if len == 0.0 {
                return Err(Error::invalid("exit domain has a repeated vertex"));
            }
            let turn = linalg::cross(e, linalg::sub(vertices[(i + 2) % n], b));
            if turn <= 0.0 {
                return Err(Error::invalid("exit domain polygon must be strictly convex"));
            }
            let nrm = [e[1] / len, -e[0] / len];
            normals.push(nrm);
            offsets.push(linalg::dot(nrm, a));
        }
        let domain = ExitDomain {
            vertices,
            normals,
            offsets,
        };
        if !domain.contains([0.0, 0.0]) {
            return Err(Error::invalid("exit domain must contain the origin strictly"));
        }
        Ok(domain)
    }

    pub fn rectangle(x_min: f64, x_max: f64, y_min: f64, y_max: f64) -> Result<Self> {
        Self::polygon(vec![
            [x_min, y_min],
            [x_max, y_min],
            [x_max, y_max],
            [x_min, y_max],
        ])
    }

    pub fn vertices(&self) -> &[Vec2] {
        &self.vertices
    }

    pub fn edge_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn outward_normal(&self, edge: usize) -> Vec2 {
        self.normals[edge]
    }

    /// `c` in the edge's supporting line `n·x = c`.
    pub fn offset(&self, edge: usize) -> f64 {
        self.offsets[edge]
    }

    /// Unit tangent of `edge`, oriented counter-clockwise.
    pub fn tangent(&self, edge: usize) -> Vec2 {
        let n = self.normals[edge];
        [-n[1], n[0]]
    }

    /// Strict interior test.
    #[inline]
    pub fn contains(&self, x: Vec2) -> bool {
        self.normals
            .iter()
            .zip(&self.offsets)
            .all(|(n, c)| linalg::dot(*n, x) < *c)
    }

    /// Edge whose segment contains `q` up to `tol`.
    pub fn edge_containing(&self, q: Vec2, tol: f64) -> Option<usize> {
        let n = self.vertices.len();
        (0..n).find(|&i| {
            let a = self.vertices[i];
            let b = self.vertices[(i + 1) % n];
            let dist = (linalg::dot(self.normals[i], q) - self.offsets[i]).abs();
            let e = linalg::sub(b, a);
            let s = linalg::dot(linalg::sub(q, a), e) / linalg::dot(e, e);
            dist <= tol && (-tol..=1.0 + tol).contains(&s)
        })
    }

    /// For a step from `inside` to `outside`, the fraction `s ∈ [0, 1]` at
    /// which the segment leaves the polygon and the edge it crosses.
    pub fn crossing(&self, inside: Vec2, outside: Vec2) -> (f64, usize) {
        let d = linalg::sub(outside, inside);
        let mut best = (1.0, 0);
        let mut found = false;
        for (i, (n, c)) in self.normals.iter().zip(&self.offsets).enumerate() {
            let rate = linalg::dot(*n, d);
            if rate <= 0.0 {
                continue;
            }
            let s = ((c - linalg::dot(*n, inside)) / rate).clamp(0.0, 1.0);
            if !found || s < best.0 {
                best = (s, i);
                found = true;
            }
        }
        best
    }
}

/// Exit points `q₊`, `q₋` where the unstable manifold meets `∂V`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ExitPoints {
    pub plus: Vec2,
    pub minus: Vec2,
}

impl ExitPoints {
    pub fn get(&self, sign: i8) -> Vec2 {
        if sign >= 0 {
            self.plus
        } else {
            self.minus
        }
    }
}

#[derive(Clone, Debug)]
pub struct SaddleSystem {
    pub name: String,
    linear: [[Rational; 2]; 2],
    nonlinear: PolyField,
    sigma: EvalMatrix,
    drift: EvalField,
    pub lipschitz_bound: f64,
    /// Half-width of the compact box used for boundedness checks and as the
    /// default guard box.
    pub bound_box: f64,
    pub domain: Option<ExitDomain>,
    pub exit_points: Option<ExitPoints>,
    pub x0: Option<Vec2>,
    /// Benchmark metadata: both coordinate axes are invariant under the flow.
    pub invariant_axes: bool,
}

impl SaddleSystem {
    /// Builds a system from its linear part, nonlinear part and diffusion.
    /// No invariant is enforced here; see [`validate_system`].
    pub fn new(linear: [[Rational; 2]; 2], nonlinear: PolyField, sigma: EvalMatrix) -> Self {
        let drift = EvalField::from_exact(&full_drift(&linear, &nonlinear));
        SaddleSystem {
            name: String::new(),
            linear,
            nonlinear,
            sigma,
            drift,
            lipschitz_bound: f64::INFINITY,
            bound_box: 1.0,
            domain: None,
            exit_points: None,
            x0: None,
            invariant_axes: false,
        }
    }

    /// Diagonal system `A = diag(λ₊, −λ₋)`.
    pub fn diagonal(
        lambda_plus: Rational,
        lambda_minus: Rational,
        nonlinear: PolyField,
        sigma: EvalMatrix,
    ) -> Self {
        let z = Rational::zero();
        Self::new(
            [[lambda_plus, z.clone()], [z, -lambda_minus]],
            nonlinear,
            sigma,
        )
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn with_domain(mut self, domain: ExitDomain) -> Self {
        self.domain = Some(domain);
        self
    }

    pub fn with_exit_points(mut self, plus: Vec2, minus: Vec2) -> Self {
        self.exit_points = Some(ExitPoints { plus, minus });
        self
    }

    pub fn with_x0(mut self, x0: Vec2) -> Self {
        self.x0 = Some(x0);
        self
    }

    pub fn with_bounds(mut self, lipschitz_bound: f64, bound_box: f64) -> Self {
        self.lipschitz_bound = lipschitz_bound;
        self.bound_box = bound_box;
        self
    }

    pub fn with_invariant_axes(mut self, flag: bool) -> Self {
        self.invariant_axes = flag;
        self
    }

    /// Same drift, diffusion multiplied by `c`.
    pub fn with_sigma_scaled(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.sigma = self.sigma.scaled(c);
        out
    }

    pub fn linear_part(&self) -> &[[Rational; 2]; 2] {
        &self.linear
    }

    pub fn nonlinear_part(&self) -> &PolyField {
        &self.nonlinear
    }

    /// `b = Ax + Q` as exact polynomials.
    pub fn drift_exact(&self) -> PolyField {
        full_drift(&self.linear, &self.nonlinear)
    }

    pub fn sigma_field(&self) -> &EvalMatrix {
        &self.sigma
    }

    pub fn is_diagonal(&self) -> bool {
        self.linear[0][1].is_zero() && self.linear[1][0].is_zero()
    }

    /// `λ₊ = A₁₁` when `A` is a diagonal saddle.
    pub fn lambda_plus_exact(&self) -> Result<Rational> {
        self.check_saddle()?;
        Ok(self.linear[0][0].clone())
    }

    /// `λ₋ = −A₂₂` when `A` is a diagonal saddle.
    pub fn lambda_minus_exact(&self) -> Result<Rational> {
        self.check_saddle()?;
        Ok(-self.linear[1][1].clone())
    }

    pub fn lambda_plus(&self) -> f64 {
        rational_to_f64(&self.linear[0][0])
    }

    pub fn lambda_minus(&self) -> f64 {
        -rational_to_f64(&self.linear[1][1])
    }

    fn check_saddle(&self) -> Result<()> {
        if !self.is_diagonal() {
            return Err(Error::invalid("linear part must be diagonal"));
        }
        if !(self.linear[0][0].is_positive() && self.linear[1][1].is_negative()) {
            return Err(Error::invalid(
                "linear part is not a hyperbolic saddle diag(λ₊ > 0, −λ₋ < 0)",
            ));
        }
        Ok(())
    }

    #[inline]
    pub fn drift(&self, x: Vec2) -> Vec2 {
        self.drift.eval(x)
    }

    #[inline]
    pub fn drift_jacobian(&self, x: Vec2) -> Mat2 {
        self.drift.jacobian(x)
    }

    #[inline]
    pub fn sigma(&self, x: Vec2) -> Mat2 {
        self.sigma.eval(x)
    }
}

fn full_drift(linear: &[[Rational; 2]; 2], nonlinear: &PolyField) -> PolyField {
    let mut out = nonlinear.clone();
    for (i, row) in linear.iter().enumerate() {
        for (j, a) in row.iter().enumerate() {
            out[i].add_term(if j == 0 { (1, 0) } else { (0, 1) }, a.clone());
        }
    }
    out
}

/// Scaling exponent `α` and limiting law of `ξ₀` for
/// `X_ε(0) = x₀ + ε^α ξ_ε`.
#[derive(Clone, Debug)]
pub struct InitialLaw {
    pub alpha: f64,
    pub xi_law: Mixture,
    pub collinearity_declared_ok: bool,
}

impl InitialLaw {
    /// Checks `α ∈ (0, 1]` and, when `α ≠ 1`, that `ξ₀` puts no mass on the
    /// line spanned by `drift_at_x0`.
    pub fn new(
        alpha: f64,
        xi_law: Mixture,
        collinearity_declared_ok: bool,
        drift_at_x0: Vec2,
    ) -> Result<Self> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::invalid(format!("alpha = {alpha} is outside (0, 1]")));
        }
        if alpha != 1.0 {
            if !collinearity_declared_ok {
                return Err(Error::invalid(
                    "alpha != 1 requires the non-collinearity condition to be declared",
                ));
            }
            if xi_law.has_mass_on_line(drift_at_x0) {
                return Err(Error::invalid(
                    "initial perturbation law puts mass on the line spanned by b(x0)",
                ));
            }
        }
        Ok(InitialLaw {
            alpha,
            xi_law,
            collinearity_declared_ok,
        })
    }
}

#[derive(Clone, Debug, Default, Serialize, PartialEq)]
pub struct ValidationReport {
    pub valid: bool,
    pub lambda_plus: Option<f64>,
    pub lambda_minus: Option<f64>,
    pub hyperbolic: bool,
    /// Lowest total degree among the terms of `Q` (`None` when `Q = 0`).
    pub q_min_degree: Option<u32>,
    pub max_drift_sample: f64,
    pub max_sigma_sample: f64,
    pub failures: Vec<String>,
}

/// Checks every structural invariant of a saddle system and collects all
/// failures instead of stopping at the first.
pub fn validate_system(system: &SaddleSystem) -> ValidationReport {
    let mut report = ValidationReport::default();
    let a = &system.linear;

    if !system.is_diagonal() {
        report
            .failures
            .push("linear part A is not diagonal".to_string());
    }
    let a11 = rational_to_f64(&a[0][0]);
    let a22 = rational_to_f64(&a[1][1]);
    report.hyperbolic = a[0][0].is_positive() && a[1][1].is_negative();
    if report.hyperbolic {
        report.lambda_plus = Some(a11);
        report.lambda_minus = Some(-a22);
    } else {
        report.failures.push(format!(
            "not a hyperbolic saddle: diagonal entries {a11} and {a22} need opposite signs (+, −)"
        ));
    }

    let q_min = system
        .nonlinear
        .iter()
        .filter_map(Poly::valuation)
        .min();
    report.q_min_degree = q_min;
    match q_min {
        Some(0) => report
            .failures
            .push("Q(0) != 0: nonlinear part has a constant term".to_string()),
        Some(1) => report
            .failures
            .push("DQ(0) != 0: nonlinear part has a linear term".to_string()),
        _ => {}
    }

    let bb = system.bound_box;
    if !(bb.is_finite() && bb > 0.0) {
        report
            .failures
            .push(format!("bound box half-width {bb} must be positive"));
    } else {
        const GRID: usize = 41;
        for i in 0..GRID {
            for j in 0..GRID {
                let x = [
                    -bb + 2.0 * bb * i as f64 / (GRID - 1) as f64,
                    -bb + 2.0 * bb * j as f64 / (GRID - 1) as f64,
                ];
                report.max_drift_sample = report.max_drift_sample.max(linalg::norm(system.drift(x)));
                report.max_sigma_sample =
                    report.max_sigma_sample.max(linalg::frobenius(&system.sigma(x)));
            }
        }
        let l = system.lipschitz_bound;
        if report.max_drift_sample > l || report.max_sigma_sample > l {
            report.failures.push(format!(
                "sampled |b| = {:.6} or |σ| = {:.6} exceeds the bound L = {l} on the box",
                report.max_drift_sample, report.max_sigma_sample
            ));
        }
    }

    if let Some(domain) = &system.domain {
        if let Some(x0) = system.x0 {
            if !domain.contains(x0) {
                report.failures.push("x0 is not inside V".to_string());
            }
        }
        if let Some(q) = system.exit_points {
            for (label, point) in [("q+", q.plus), ("q-", q.minus)] {
                match domain.edge_containing(point, 1e-9) {
                    None => report.failures.push(format!("{label} is not on the boundary of V")),
                    Some(edge) => {
                        let flux = linalg::dot(system.drift(point), domain.outward_normal(edge));
                        if flux.abs() <= TRANSVERSALITY_TOL {
                            report
                                .failures
                                .push(format!("b({label}) is tangent to the boundary of V"));
                        }
                    }
                }
            }
        }
    } else if system.exit_points.is_some() {
        report
            .failures
            .push("exit points declared without an exit domain".to_string());
    }

    report.valid = report.failures.is_empty();
    report
}

/// Reference systems used throughout tests, examples and the acceptance suite.
pub mod benchmarks {
    use super::*;
    use crate::poly::EvalPoly;

    fn int(n: i64) -> Rational {
        Rational::from_integer(n.into())
    }

    pub fn identity_sigma() -> EvalMatrix {
        EvalMatrix::identity()
    }

    /// `b = (λ₊x₁, −λ₋x₂)`, `σ = I`.
    pub fn linear_saddle(lambda_plus: i64, lambda_minus: i64) -> SaddleSystem {
        SaddleSystem::diagonal(
            int(lambda_plus),
            int(lambda_minus),
            [Poly::zero(), Poly::zero()],
            identity_sigma(),
        )
        .with_name(format!("linear({lambda_plus},{lambda_minus})"))
        .with_bounds(f64::INFINITY, 1.0)
        .with_invariant_axes(true)
    }

    /// `b = (x₁ + x₂², −x₂)`: one non-resonant quadratic term.
    pub fn quadratic() -> SaddleSystem {
        SaddleSystem::diagonal(
            int(1),
            int(1),
            [Poly::monomial(int(1), 0, 2), Poly::zero()],
            identity_sigma(),
        )
        .with_name("quadratic")
    }

    /// `b = (x₁ + x₁²x₂, −x₂)`: the resonant monomial `y₁²y₂ e₁`.
    pub fn cubic_resonant() -> SaddleSystem {
        SaddleSystem::diagonal(
            int(1),
            int(1),
            [Poly::monomial(int(1), 2, 1), Poly::zero()],
            EvalMatrix::new([
                [EvalPoly::constant(1.0), EvalPoly::from_terms([(0, 1, 0.5)])],
                [EvalPoly::constant(0.25), EvalPoly::constant(1.0)],
            ]),
        )
        .with_name("cubic-resonant")
        .with_invariant_axes(true)
    }

    /// Mixed resonant and non-resonant terms whose conjugacy does not
    /// terminate, so the truncation residual is genuinely nonzero.
    pub fn mixed_resonant() -> SaddleSystem {
        let q1 = &(&Poly::monomial(int(1), 2, 1) + &Poly::monomial(int(1), 1, 1))
            + &Poly::monomial(int(1), 0, 2);
        let q2 = &Poly::monomial(int(1), 2, 0) - &Poly::monomial(Rational::new(1.into(), 2.into()), 1, 2);
        SaddleSystem::diagonal(int(1), int(1), [q1, q2], identity_sigma()).with_name("mixed")
    }
}
