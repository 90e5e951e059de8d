//! Resonances among the saddle eigenvalues `(λ₊, −λ₋)`.
//!
//! A multi-index `α` with `|α| ≥ 2` is resonant for coordinate `j` when
//! `α₁λ₊ − α₂λ₋ = λ_j`, with `λ₁ = λ₊` and `λ₂ = −λ₋`. For a fixed order
//! `r = α₁ + α₂` this is a 2×2 linear system with a unique rational solution,
//! so every candidate can be written down directly and kept when integral.
//! All arithmetic here is exact.

use num_bigint::BigInt;
use num_integer::{Integer, Roots};
use num_traits::{Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::poly::{format_rational, is_integer, Rational};

pub const DEFAULT_R_MAX: u32 = 12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    /// Coordinate 1, the expanding direction.
    Plus,
    /// Coordinate 2, the contracting direction.
    Minus,
}

impl Target {
    pub fn index(self) -> usize {
        match self {
            Target::Plus => 0,
            Target::Minus => 1,
        }
    }

    pub fn from_index(j: usize) -> Self {
        if j == 0 {
            Target::Plus
        } else {
            Target::Minus
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MultiIndex {
    pub a1: u32,
    pub a2: u32,
    pub target: Target,
}

impl MultiIndex {
    pub fn new(a1: u32, a2: u32, target: Target) -> Self {
        MultiIndex { a1, a2, target }
    }

    pub fn order(&self) -> u32 {
        self.a1 + self.a2
    }

    /// Whether `α·λ = λ_j` holds exactly.
    pub fn is_resonant(&self, lambda_plus: &Rational, lambda_minus: &Rational) -> bool {
        let lhs = Rational::from_integer(self.a1.into()) * lambda_plus
            - Rational::from_integer(self.a2.into()) * lambda_minus;
        let rhs = match self.target {
            Target::Plus => lambda_plus.clone(),
            Target::Minus => -lambda_minus.clone(),
        };
        lhs == rhs
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Classification {
    NonResonant,
    OneResonant,
}

/// The primitive relation `m₊λ₊ = m₋λ₋` from which every resonance follows:
/// the resonant indices are exactly `e_j + k(m₊, m₋)`, `k ≥ 1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratingRelation {
    pub m_plus: u64,
    pub m_minus: u64,
    /// Order `1 + m₊ + m₋` of the lowest resonant monomials.
    pub smallest_order: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResonanceReport {
    pub lambda_plus: Option<String>,
    pub lambda_minus: Option<String>,
    pub r_max: u32,
    pub classification: Classification,
    pub generating_relation: Option<GeneratingRelation>,
    pub indices_plus: Vec<MultiIndex>,
    pub indices_minus: Vec<MultiIndex>,
}

impl ResonanceReport {
    pub fn non_resonant(r_max: u32) -> Self {
        ResonanceReport {
            lambda_plus: None,
            lambda_minus: None,
            r_max,
            classification: Classification::NonResonant,
            generating_relation: None,
            indices_plus: Vec::new(),
            indices_minus: Vec::new(),
        }
    }

    pub fn all_indices(&self) -> impl Iterator<Item = &MultiIndex> {
        self.indices_plus.iter().chain(self.indices_minus.iter())
    }

    pub fn contains(&self, idx: &MultiIndex) -> bool {
        self.all_indices().any(|m| m == idx)
    }
}

/// Eigenvalue data: exact rationals, or a declared irrational ratio
/// `λ₋/λ₊ = c·√n` used by fixtures.
#[derive(Clone, Debug, PartialEq)]
pub enum Spectrum {
    Rational { plus: Rational, minus: Rational },
    SurdRatio { coefficient: Rational, radicand: u64 },
}

fn check_positive(lambda_plus: &Rational, lambda_minus: &Rational) -> Result<()> {
    if !lambda_plus.is_positive() || !lambda_minus.is_positive() {
        return Err(Error::invalid(format!(
            "eigenvalues must be positive, got λ₊ = {}, λ₋ = {}",
            format_rational(lambda_plus),
            format_rational(lambda_minus)
        )));
    }
    Ok(())
}

/// Candidate plus-family index of order `r`, exact and possibly fractional.
pub fn alpha_plus(lambda_plus: &Rational, lambda_minus: &Rational, r: u32) -> (Rational, Rational) {
    let s = lambda_plus + lambda_minus;
    let r = Rational::from_integer(r.into());
    let one = Rational::from_integer(1.into());
    (
        (lambda_plus + &r * lambda_minus) / &s,
        ((&r - one) * lambda_plus) / s,
    )
}

/// Candidate minus-family index of order `r`.
pub fn alpha_minus(lambda_plus: &Rational, lambda_minus: &Rational, r: u32) -> (Rational, Rational) {
    let s = lambda_plus + lambda_minus;
    let r = Rational::from_integer(r.into());
    let one = Rational::from_integer(1.into());
    (
        ((&r - one) * lambda_minus) / &s,
        (&r * lambda_plus + lambda_minus) / s,
    )
}

fn integral_pair(pair: (Rational, Rational)) -> Option<(u32, u32)> {
    if !(is_integer(&pair.0) && is_integer(&pair.1)) {
        return None;
    }
    if pair.0.is_negative() || pair.1.is_negative() {
        return None;
    }
    Some((pair.0.to_integer().to_u32()?, pair.1.to_integer().to_u32()?))
}

fn generating_relation(lambda_plus: &Rational, lambda_minus: &Rational) -> Option<GeneratingRelation> {
    // λ₋/λ₊ = p/q in lowest terms  ⇒  p·λ₊ = q·λ₋
    let ratio = lambda_minus / lambda_plus;
    let m_plus = ratio.numer().to_u64()?;
    let m_minus = ratio.denom().to_u64()?;
    Some(GeneratingRelation {
        m_plus,
        m_minus,
        smallest_order: 1 + m_plus + m_minus,
    })
}

/// Enumerates all resonant multi-indices of order `2..=r_max` from the
/// closed-form candidates.
pub fn resonant_indices(
    lambda_plus: &Rational,
    lambda_minus: &Rational,
    r_max: u32,
) -> Result<ResonanceReport> {
    check_positive(lambda_plus, lambda_minus)?;
    if r_max < 2 {
        return Err(Error::invalid("r_max must be at least 2"));
    }
    let mut plus = Vec::new();
    let mut minus = Vec::new();
    for r in 2..=r_max {
        if let Some((a1, a2)) = integral_pair(alpha_plus(lambda_plus, lambda_minus, r)) {
            plus.push(MultiIndex::new(a1, a2, Target::Plus));
        }
        if let Some((a1, a2)) = integral_pair(alpha_minus(lambda_plus, lambda_minus, r)) {
            minus.push(MultiIndex::new(a1, a2, Target::Minus));
        }
    }
    Ok(ResonanceReport {
        lambda_plus: Some(format_rational(lambda_plus)),
        lambda_minus: Some(format_rational(lambda_minus)),
        r_max,
        // a rational ratio always yields a primitive relation, whether or not
        // its order fits under r_max
        classification: Classification::OneResonant,
        generating_relation: generating_relation(lambda_plus, lambda_minus),
        indices_plus: plus,
        indices_minus: minus,
    })
}

/// Resonance classification of an eigenvalue pair.
pub fn is_resonant_pair(spectrum: &Spectrum) -> Result<(Classification, Option<GeneratingRelation>)> {
    match spectrum {
        Spectrum::Rational { plus, minus } => {
            check_positive(plus, minus)?;
            Ok((Classification::OneResonant, generating_relation(plus, minus)))
        }
        Spectrum::SurdRatio {
            coefficient,
            radicand,
        } => {
            if !coefficient.is_positive() {
                return Err(Error::invalid("eigenvalue ratio must be positive"));
            }
            let root = radicand.sqrt();
            if root * root == *radicand {
                let ratio = coefficient * Rational::from_integer(BigInt::from(root));
                let plus = Rational::from_integer(1.into());
                Ok((
                    Classification::OneResonant,
                    generating_relation(&plus, &ratio),
                ))
            } else {
                Ok((Classification::NonResonant, None))
            }
        }
    }
}

/// A failed structural observation about the resonant indices.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ObservationViolation {
    pub observation: u8,
    pub detail: String,
}

/// Checks the structural facts every two-dimensional saddle resonance
/// satisfies; returns the violations (expected empty).
///
/// 1. no zero entries, and neither `α₁⁺` nor `α₂⁻` equals 1;
/// 2. entries strictly increase with the order within each family;
/// 3. nothing at order 2;
/// 4. `α⁺ ≥ (2, 1)` and `α⁻ ≥ (1, 2)` coordinatewise;
/// 5. every resonant monomial vanishes on both coordinate axes.
pub fn check_observations(report: &ResonanceReport) -> Vec<ObservationViolation> {
    let mut out = Vec::new();
    let mut fail = |observation: u8, detail: String| {
        out.push(ObservationViolation {
            observation,
            detail,
        })
    };
    for m in report.all_indices() {
        if m.a1 == 0 || m.a2 == 0 {
            fail(1, format!("{m:?} has a zero entry"));
        }
        if (m.target == Target::Plus && m.a1 == 1) || (m.target == Target::Minus && m.a2 == 1) {
            fail(1, format!("{m:?} has a forbidden unit entry"));
        }
        if m.order() == 2 {
            fail(3, format!("{m:?} has order 2"));
        }
        let (lo1, lo2) = match m.target {
            Target::Plus => (2, 1),
            Target::Minus => (1, 2),
        };
        if m.a1 < lo1 || m.a2 < lo2 {
            fail(4, format!("{m:?} is below ({lo1}, {lo2})"));
        }
        if m.a1 < 1 || m.a2 < 1 {
            fail(5, format!("{m:?} does not vanish on both axes"));
        }
    }
    for family in [&report.indices_plus, &report.indices_minus] {
        for w in family.windows(2) {
            let (a, b) = (&w[0], &w[1]);
            if !(b.order() > a.order() && b.a1 > a.a1 && b.a2 > a.a2) {
                fail(2, format!("{a:?} -> {b:?} is not increasing"));
            }
        }
    }
    if let (Some(lp), Some(lm)) = (&report.lambda_plus, &report.lambda_minus) {
        if let (Ok(lp), Ok(lm)) = (crate::poly::parse_rational(lp), crate::poly::parse_rational(lm)) {
            for m in report.all_indices() {
                if !m.is_resonant(&lp, &lm) {
                    fail(0, format!("{m:?} does not satisfy the resonance relation"));
                }
            }
        }
    }
    out
}

/// Whether a coefficient divisor `α·λ − λ_j` vanishes.
pub fn divisor(lambda_plus: &Rational, lambda_minus: &Rational, a1: u32, a2: u32, target: Target) -> Rational {
    let lhs = Rational::from_integer(a1.into()) * lambda_plus
        - Rational::from_integer(a2.into()) * lambda_minus;
    match target {
        Target::Plus => lhs - lambda_plus,
        Target::Minus => lhs + lambda_minus,
    }
}

/// Greatest common divisor helper for fixtures.
pub fn reduced_ratio(p: u64, q: u64) -> (u64, u64) {
    let g = p.gcd(&q).max(1);
    (p / g, q / g)
}

impl ResonanceReport {
    pub fn is_empty(&self) -> bool {
        self.indices_plus.is_empty() && self.indices_minus.is_empty()
    }

    /// Whether `α·λ − λ_j` is zero, using this report's eigenvalues.
    pub fn is_zero_divisor(&self, a1: u32, a2: u32, target: Target) -> bool {
        match (&self.lambda_plus, &self.lambda_minus) {
            (Some(lp), Some(lm)) => {
                match (crate::poly::parse_rational(lp), crate::poly::parse_rational(lm)) {
                    (Ok(lp), Ok(lm)) => divisor(&lp, &lm, a1, a2, target).is_zero(),
                    _ => false,
                }
            }
            _ => false,
        }
    }
}
