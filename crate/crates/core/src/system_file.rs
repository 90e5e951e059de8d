//! JSON description of a saddle system.
//!
//! ```json
//! {
//!   "name": "cubic",
//!   "linear": [[1, 0], [0, -1]],
//!   "nonlinear": [{"coef": 1, "a1": 2, "a2": 1, "target": 1}],
//!   "sigma": [[1, [{"coef": 0.5, "a1": 0, "a2": 1}]], [0.25, 1]],
//!   "lipschitz_bound": 100,
//!   "bound_box": 1,
//!   "domain": {"rectangle": [-1, 1, -1, 1]},
//!   "exit_points": {"plus": [1, 0], "minus": [-1, 0]},
//!   "x0": [0, 0.9],
//!   "invariant_axes": true
//! }
//! ```
//!
//! Drift coefficients are exact: numbers are read through their decimal
//! text, and strings such as `"-2/7"` are accepted as well.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Vec2;
use crate::poly::{parse_rational, rational_to_f64, EvalMatrix, EvalPoly, Poly, PolyField, Rational, MAX_EXPONENT};
use crate::system::{ExitDomain, SaddleSystem};

/// A number or a rational literal string.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Scalar {
    Number(serde_json::Number),
    Text(String),
}

impl Scalar {
    pub fn to_rational(&self) -> Result<Rational> {
        match self {
            Scalar::Number(n) => parse_rational(&n.to_string()),
            Scalar::Text(s) => parse_rational(s),
        }
    }

    pub fn to_f64(&self) -> Result<f64> {
        Ok(rational_to_f64(&self.to_rational()?))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriftTerm {
    pub coef: Scalar,
    pub a1: u32,
    pub a2: u32,
    /// Component, 1 or 2.
    pub target: u8,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SigmaTerm {
    pub coef: Scalar,
    pub a1: u32,
    pub a2: u32,
}

/// A diffusion entry: a constant or a polynomial term list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SigmaEntry {
    Constant(Scalar),
    Terms(Vec<SigmaTerm>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum DomainSpec {
    /// `[x_min, x_max, y_min, y_max]`.
    Rectangle([f64; 4]),
    Polygon(Vec<Vec2>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExitPointsSpec {
    pub plus: Vec2,
    pub minus: Vec2,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemFile {
    #[serde(default)]
    pub name: String,
    pub linear: [[Scalar; 2]; 2],
    #[serde(default)]
    pub nonlinear: Vec<DriftTerm>,
    pub sigma: [[SigmaEntry; 2]; 2],
    #[serde(default)]
    pub lipschitz_bound: Option<f64>,
    #[serde(default)]
    pub bound_box: Option<f64>,
    #[serde(default)]
    pub domain: Option<DomainSpec>,
    #[serde(default)]
    pub exit_points: Option<ExitPointsSpec>,
    #[serde(default)]
    pub x0: Option<Vec2>,
    #[serde(default)]
    pub invariant_axes: bool,
}

fn check_exponents(a1: u32, a2: u32) -> Result<()> {
    if a1 > MAX_EXPONENT || a2 > MAX_EXPONENT {
        return Err(Error::Parse(format!(
            "exponent ({a1}, {a2}) exceeds the limit {MAX_EXPONENT}"
        )));
    }
    Ok(())
}

fn sigma_poly(entry: &SigmaEntry) -> Result<EvalPoly> {
    match entry {
        SigmaEntry::Constant(c) => Ok(EvalPoly::constant(c.to_f64()?)),
        SigmaEntry::Terms(terms) => {
            let mut out = Vec::with_capacity(terms.len());
            for t in terms {
                check_exponents(t.a1, t.a2)?;
                out.push((t.a1, t.a2, t.coef.to_f64()?));
            }
            Ok(EvalPoly::from_terms(out))
        }
    }
}

impl SystemFile {
    pub fn into_system(self) -> Result<SaddleSystem> {
        let mut linear: [[Rational; 2]; 2] = Default::default();
        for (row, src) in linear.iter_mut().zip(&self.linear) {
            for (cell, entry) in row.iter_mut().zip(src) {
                *cell = entry.to_rational()?;
            }
        }
        let mut nonlinear: PolyField = [Poly::zero(), Poly::zero()];
        for t in &self.nonlinear {
            if !(t.target == 1 || t.target == 2) {
                return Err(Error::Parse(format!("drift target must be 1 or 2, got {}", t.target)));
            }
            check_exponents(t.a1, t.a2)?;
            nonlinear[t.target as usize - 1].add_term((t.a1, t.a2), t.coef.to_rational()?);
        }
        let sigma = EvalMatrix::new([
            [sigma_poly(&self.sigma[0][0])?, sigma_poly(&self.sigma[0][1])?],
            [sigma_poly(&self.sigma[1][0])?, sigma_poly(&self.sigma[1][1])?],
        ]);
        let mut s = SaddleSystem::new(linear, nonlinear, sigma)
            .with_name(self.name)
            .with_invariant_axes(self.invariant_axes);
        if let Some(l) = self.lipschitz_bound {
            if !(l > 0.0) {
                return Err(Error::invalid("lipschitz_bound must be positive"));
            }
            s.lipschitz_bound = l;
        }
        if let Some(b) = self.bound_box {
            if !(b > 0.0 && b.is_finite()) {
                return Err(Error::invalid("bound_box must be positive"));
            }
            s.bound_box = b;
        }
        if let Some(d) = self.domain {
            s = s.with_domain(match d {
                DomainSpec::Rectangle([x0, x1, y0, y1]) => {
                    if !(x0 < x1 && y0 < y1) {
                        return Err(Error::invalid("rectangle bounds must be increasing"));
                    }
                    ExitDomain::rectangle(x0, x1, y0, y1)?
                }
                DomainSpec::Polygon(v) => ExitDomain::polygon(v)?,
            });
        }
        if let Some(e) = self.exit_points {
            s = s.with_exit_points(e.plus, e.minus);
        }
        if let Some(x0) = self.x0 {
            if !(x0[0].is_finite() && x0[1].is_finite()) {
                return Err(Error::invalid("x0 must be finite"));
            }
            s = s.with_x0(x0);
        }
        Ok(s)
    }
}

/// Parses a system description. Structural checks (hyperbolicity, degree
/// of `Q`, transversality) are left to [`crate::system::validate_system`].
pub fn parse_system(text: &str) -> Result<SaddleSystem> {
    let file: SystemFile = serde_json::from_str(text)?;
    file.into_system()
}

pub fn load_system(path: &Path) -> Result<SaddleSystem> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_system(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::validate_system;

    const CUBIC: &str = r#"{
        "name": "cubic",
        "linear": [[1, 0], [0, "-1"]],
        "nonlinear": [{"coef": 1, "a1": 2, "a2": 1, "target": 1}],
        "sigma": [[1, [{"coef": 0.5, "a1": 0, "a2": 1}]], [0.25, 1]],
        "lipschitz_bound": 100,
        "bound_box": 1,
        "domain": {"rectangle": [-1, 1, -1, 1]},
        "exit_points": {"plus": [1, 0], "minus": [-1, 0]},
        "x0": [0, 0.9],
        "invariant_axes": true
    }"#;

    #[test]
    fn parses_cubic() {
        let s = parse_system(CUBIC).unwrap();
        let r = validate_system(&s);
        assert!(r.valid, "{:?}", r.failures);
        assert_eq!(s.drift([0.5, 0.2]), [0.5 + 0.25 * 0.2, -0.2]);
        assert_eq!(s.sigma([0.0, 0.4])[0][1], 0.2);
        assert!(s.invariant_axes);
    }

    #[test]
    fn decimal_numbers_are_exact() {
        let text = CUBIC.replace(r#""linear": [[1, 0], [0, "-1"]]"#, r#""linear": [[0.1, 0], [0, "-3/10"]]"#);
        let s = parse_system(&text).unwrap();
        assert_eq!(s.lambda_plus_exact().unwrap(), Rational::new(1.into(), 10.into()));
        assert_eq!(s.lambda_minus_exact().unwrap(), Rational::new(3.into(), 10.into()));
    }

    #[test]
    fn rejects_bad_input() {
        assert!(parse_system("{").is_err());
        assert!(parse_system(&CUBIC.replace("\"target\": 1", "\"target\": 3")).is_err());
        assert!(parse_system(&CUBIC.replace("\"a1\": 2", "\"a1\": 4000000000")).is_err());
        assert!(parse_system(&CUBIC.replace("\"name\"", "\"nmae\"")).is_err());
        assert!(parse_system(&CUBIC.replace("[-1, 1, -1, 1]", "[1, -1, -1, 1]")).is_err());
        assert!(parse_system(&CUBIC.replace("\"-1\"", "\"1/0\"")).is_err());
    }
}
