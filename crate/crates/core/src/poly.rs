//! Bivariate polynomials with exact rational coefficients, plus a compiled
//! floating-point form for fast evaluation.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, Neg, Sub};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

use crate::error::{Error, Result};
use crate::linalg::{Mat2, Vec2};

pub type Rational = BigRational;

/// Exponent pair `(a1, a2)` of the monomial `x1^a1 x2^a2`.
pub type Exponent = (u32, u32);

/// Largest exponent accepted from external input.
pub const MAX_EXPONENT: u32 = 64;

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Poly {
    terms: BTreeMap<Exponent, Rational>,
}

/// A polynomial vector field on the plane: component `j` is the coefficient
/// of `e_{j+1}`.
pub type PolyField = [Poly; 2];

impl Poly {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn constant(c: Rational) -> Self {
        Self::monomial(c, 0, 0)
    }

    /// The coordinate function `x_{i+1}`.
    pub fn var(i: usize) -> Self {
        let exp = if i == 0 { (1, 0) } else { (0, 1) };
        let mut p = Self::zero();
        p.add_term(exp, Rational::one());
        p
    }

    pub fn monomial(c: Rational, a1: u32, a2: u32) -> Self {
        let mut p = Self::zero();
        p.add_term((a1, a2), c);
        p
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Exponent, &Rational)> {
        self.terms.iter()
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn coeff(&self, a1: u32, a2: u32) -> Rational {
        self.terms
            .get(&(a1, a2))
            .cloned()
            .unwrap_or_else(Rational::zero)
    }

    /// Adds `c·x^exp`, dropping the entry if it cancels.
    pub fn add_term(&mut self, exp: Exponent, c: Rational) {
        if c.is_zero() {
            return;
        }
        let entry = self.terms.entry(exp).or_insert_with(Rational::zero);
        *entry += c;
        if entry.is_zero() {
            self.terms.remove(&exp);
        }
    }

    pub fn degree(&self) -> Option<u32> {
        self.terms.keys().map(|&(a, b)| a + b).max()
    }

    /// Lowest total degree present.
    pub fn valuation(&self) -> Option<u32> {
        self.terms.keys().map(|&(a, b)| a + b).min()
    }

    pub fn homogeneous(&self, k: u32) -> Poly {
        Poly {
            terms: self
                .terms
                .iter()
                .filter(|((a, b), _)| a + b == k)
                .map(|(e, c)| (*e, c.clone()))
                .collect(),
        }
    }

    pub fn truncate(&self, max_degree: u32) -> Poly {
        Poly {
            terms: self
                .terms
                .iter()
                .filter(|((a, b), _)| a + b <= max_degree)
                .map(|(e, c)| (*e, c.clone()))
                .collect(),
        }
    }

    pub fn scale(&self, s: &Rational) -> Poly {
        if s.is_zero() {
            return Poly::zero();
        }
        Poly {
            terms: self.terms.iter().map(|(e, c)| (*e, c * s)).collect(),
        }
    }

    /// Product, discarding terms of total degree above `max_degree`.
    pub fn mul_trunc(&self, other: &Poly, max_degree: Option<u32>) -> Poly {
        let mut out = Poly::zero();
        for (&(a1, a2), c) in &self.terms {
            for (&(b1, b2), d) in &other.terms {
                let e = (a1 + b1, a2 + b2);
                if max_degree.is_some_and(|m| e.0 + e.1 > m) {
                    continue;
                }
                out.add_term(e, c * d);
            }
        }
        out
    }

    /// Partial derivative with respect to `x_{i+1}`.
    pub fn derivative(&self, i: usize) -> Poly {
        let mut out = Poly::zero();
        for (&(a1, a2), c) in &self.terms {
            let (k, e) = if i == 0 {
                (a1, (a1.wrapping_sub(1), a2))
            } else {
                (a2, (a1, a2.wrapping_sub(1)))
            };
            if k > 0 {
                out.add_term(e, c * Rational::from_integer(BigInt::from(k)));
            }
        }
        out
    }

    /// `self(s1(y), s2(y))`, optionally truncated at `max_degree`.
    pub fn compose(&self, subs: &PolyField, max_degree: Option<u32>) -> Poly {
        let max1 = self.terms.keys().map(|e| e.0).max().unwrap_or(0);
        let max2 = self.terms.keys().map(|e| e.1).max().unwrap_or(0);
        let powers = |p: &Poly, n: u32| {
            let mut v = vec![Poly::constant(Rational::one())];
            for k in 1..=n as usize {
                let next = v[k - 1].mul_trunc(p, max_degree);
                v.push(next);
            }
            v
        };
        let p1 = powers(&subs[0], max1);
        let p2 = powers(&subs[1], max2);
        let mut out = Poly::zero();
        for (&(a1, a2), c) in &self.terms {
            let term = p1[a1 as usize].mul_trunc(&p2[a2 as usize], max_degree);
            for (e, d) in term.terms {
                out.add_term(e, c * d);
            }
        }
        out
    }

    pub fn eval_exact(&self, x: &[Rational; 2]) -> Rational {
        let mut acc = Rational::zero();
        for (&(a1, a2), c) in &self.terms {
            acc += c * pow_rational(&x[0], a1) * pow_rational(&x[1], a2);
        }
        acc
    }

    pub fn to_eval(&self) -> EvalPoly {
        EvalPoly::from_terms(
            self.terms
                .iter()
                .map(|(&(a1, a2), c)| (a1, a2, rational_to_f64(c))),
        )
    }
}

fn pow_rational(x: &Rational, n: u32) -> Rational {
    let mut acc = Rational::one();
    for _ in 0..n {
        acc *= x;
    }
    acc
}

impl Add for &Poly {
    type Output = Poly;
    fn add(self, rhs: &Poly) -> Poly {
        let mut out = self.clone();
        for (e, c) in &rhs.terms {
            out.add_term(*e, c.clone());
        }
        out
    }
}

impl Sub for &Poly {
    type Output = Poly;
    fn sub(self, rhs: &Poly) -> Poly {
        let mut out = self.clone();
        for (e, c) in &rhs.terms {
            out.add_term(*e, -c.clone());
        }
        out
    }
}

impl Neg for &Poly {
    type Output = Poly;
    fn neg(self) -> Poly {
        Poly {
            terms: self.terms.iter().map(|(e, c)| (*e, -c.clone())).collect(),
        }
    }
}

impl fmt::Display for Poly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        for (i, (&(a1, a2), c)) in self.terms.iter().enumerate() {
            if i > 0 {
                write!(f, " + ")?;
            }
            write!(f, "({c})")?;
            if a1 > 0 {
                write!(f, "·y1^{a1}")?;
            }
            if a2 > 0 {
                write!(f, "·y2^{a2}")?;
            }
        }
        Ok(())
    }
}

/// Componentwise composition `F ∘ G` of polynomial maps.
pub fn compose_field(outer: &PolyField, inner: &PolyField, max_degree: Option<u32>) -> PolyField {
    [
        outer[0].compose(inner, max_degree),
        outer[1].compose(inner, max_degree),
    ]
}

/// Jacobian matrix entries `∂F_i/∂x_j`.
pub fn jacobian(field: &PolyField) -> [[Poly; 2]; 2] {
    [
        [field[0].derivative(0), field[0].derivative(1)],
        [field[1].derivative(0), field[1].derivative(1)],
    ]
}

pub fn identity_field() -> PolyField {
    [Poly::var(0), Poly::var(1)]
}

pub fn rational_to_f64(r: &Rational) -> f64 {
    r.to_f64().unwrap_or_else(|| {
        let n = r.numer().to_f64().unwrap_or(f64::NAN);
        let d = r.denom().to_f64().unwrap_or(f64::NAN);
        n / d
    })
}

/// Parses `"3"`, `"-2/7"`, `"0.125"`, or `"1.5e-3"` into an exact rational.
pub fn parse_rational(s: &str) -> Result<Rational> {
    let s = s.trim();
    if s.is_empty() || s.len() > 128 {
        return Err(Error::Parse(format!("bad rational literal {s:?}")));
    }
    if let Some((n, d)) = s.split_once('/') {
        let n: BigInt = n
            .trim()
            .parse()
            .map_err(|_| Error::Parse(format!("bad numerator in {s:?}")))?;
        let d: BigInt = d
            .trim()
            .parse()
            .map_err(|_| Error::Parse(format!("bad denominator in {s:?}")))?;
        if d.is_zero() {
            return Err(Error::Parse(format!("zero denominator in {s:?}")));
        }
        return Ok(Rational::new(n, d));
    }
    parse_decimal(s)
}

fn parse_decimal(s: &str) -> Result<Rational> {
    let bad = || Error::Parse(format!("bad decimal literal {s:?}"));
    let (mantissa, exp) = match s.find(['e', 'E']) {
        Some(i) => {
            let e: i32 = s[i + 1..].parse().map_err(|_| bad())?;
            (&s[..i], e)
        }
        None => (s, 0),
    };
    if exp.abs() > 64 {
        return Err(bad());
    }
    let (neg, body) = match mantissa.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, mantissa.strip_prefix('+').unwrap_or(mantissa)),
    };
    let (int_part, frac_part) = body.split_once('.').unwrap_or((body, ""));
    if int_part.is_empty() && frac_part.is_empty() {
        return Err(bad());
    }
    if !int_part.chars().chain(frac_part.chars()).all(|c| c.is_ascii_digit()) {
        return Err(bad());
    }
    let digits = format!("{int_part}{frac_part}");
    let mut n: BigInt = if digits.is_empty() {
        BigInt::zero()
    } else {
        digits.parse().map_err(|_| bad())?
    };
    if neg {
        n = -n;
    }
    let scale = exp - frac_part.len() as i32;
    let ten = BigInt::from(10);
    let r = if scale >= 0 {
        Rational::from_integer(n * num_traits::pow(ten, scale as usize))
    } else {
        Rational::new(n, num_traits::pow(ten, (-scale) as usize))
    };
    Ok(r)
}

/// Renders a rational as `"p"` or `"p/q"`.
pub fn format_rational(r: &Rational) -> String {
    if r.denom().is_one() {
        r.numer().to_string()
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

pub fn is_integer(r: &Rational) -> bool {
    r.denom().is_one()
}

pub fn is_positive(r: &Rational) -> bool {
    r.is_positive()
}

/// Floating-point polynomial in two variables, compiled for evaluation.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalPoly {
    terms: Vec<(i32, i32, f64)>,
}

impl EvalPoly {
    pub fn from_terms(terms: impl IntoIterator<Item = (u32, u32, f64)>) -> Self {
        let mut merged: BTreeMap<(u32, u32), f64> = BTreeMap::new();
        for (a1, a2, c) in terms {
            *merged.entry((a1, a2)).or_insert(0.0) += c;
        }
        EvalPoly {
            terms: merged
                .into_iter()
                .filter(|(_, c)| *c != 0.0)
                .map(|((a1, a2), c)| (a1 as i32, a2 as i32, c))
                .collect(),
        }
    }

    pub fn constant(c: f64) -> Self {
        Self::from_terms([(0, 0, c)])
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> impl Iterator<Item = (u32, u32, f64)> + '_ {
        self.terms.iter().map(|&(a, b, c)| (a as u32, b as u32, c))
    }

    pub fn degree(&self) -> Option<u32> {
        self.terms.iter().map(|&(a, b, _)| (a + b) as u32).max()
    }

    pub fn is_constant(&self) -> bool {
        self.terms.iter().all(|&(a, b, _)| a == 0 && b == 0)
    }

    #[inline]
    pub fn eval(&self, x: Vec2) -> f64 {
        let mut acc = 0.0;
        for &(a1, a2, c) in &self.terms {
            acc += c * x[0].powi(a1) * x[1].powi(a2);
        }
        acc
    }

    pub fn derivative(&self, i: usize) -> EvalPoly {
        EvalPoly::from_terms(self.terms.iter().filter_map(|&(a1, a2, c)| {
            let k = if i == 0 { a1 } else { a2 };
            (k > 0).then(|| {
                if i == 0 {
                    ((a1 - 1) as u32, a2 as u32, c * k as f64)
                } else {
                    (a1 as u32, (a2 - 1) as u32, c * k as f64)
                }
            })
        }))
    }

    pub fn scaled(&self, s: f64) -> EvalPoly {
        EvalPoly::from_terms(self.terms().map(|(a, b, c)| (a, b, s * c)))
    }
}

/// A compiled polynomial vector field with its Jacobian.
#[derive(Clone, Debug, Default)]
pub struct EvalField {
    comps: [EvalPoly; 2],
    jac: [[EvalPoly; 2]; 2],
}

impl EvalField {
    pub fn new(comps: [EvalPoly; 2]) -> Self {
        let jac = [
            [comps[0].derivative(0), comps[0].derivative(1)],
            [comps[1].derivative(0), comps[1].derivative(1)],
        ];
        EvalField { comps, jac }
    }

    pub fn from_exact(field: &PolyField) -> Self {
        Self::new([field[0].to_eval(), field[1].to_eval()])
    }

    pub fn component(&self, j: usize) -> &EvalPoly {
        &self.comps[j]
    }

    #[inline]
    pub fn eval(&self, x: Vec2) -> Vec2 {
        [self.comps[0].eval(x), self.comps[1].eval(x)]
    }

    #[inline]
    pub fn jacobian(&self, x: Vec2) -> Mat2 {
        [
            [self.jac[0][0].eval(x), self.jac[0][1].eval(x)],
            [self.jac[1][0].eval(x), self.jac[1][1].eval(x)],
        ]
    }

    pub fn is_zero(&self) -> bool {
        self.comps.iter().all(EvalPoly::is_zero)
    }
}

/// A compiled polynomial matrix field (used for σ).
#[derive(Clone, Debug, Default)]
pub struct EvalMatrix {
    entries: [[EvalPoly; 2]; 2],
}

impl EvalMatrix {
    pub fn new(entries: [[EvalPoly; 2]; 2]) -> Self {
        EvalMatrix { entries }
    }

    pub fn identity() -> Self {
        Self::new([
            [EvalPoly::constant(1.0), EvalPoly::zero_poly()],
            [EvalPoly::zero_poly(), EvalPoly::constant(1.0)],
        ])
    }

    pub fn entry(&self, i: usize, j: usize) -> &EvalPoly {
        &self.entries[i][j]
    }

    #[inline]
    pub fn eval(&self, x: Vec2) -> Mat2 {
        [
            [self.entries[0][0].eval(x), self.entries[0][1].eval(x)],
            [self.entries[1][0].eval(x), self.entries[1][1].eval(x)],
        ]
    }

    pub fn is_constant(&self) -> bool {
        self.entries.iter().flatten().all(EvalPoly::is_constant)
    }

    pub fn scaled(&self, s: f64) -> EvalMatrix {
        EvalMatrix::new([
            [self.entries[0][0].scaled(s), self.entries[0][1].scaled(s)],
            [self.entries[1][0].scaled(s), self.entries[1][1].scaled(s)],
        ])
    }
}

impl EvalPoly {
    pub fn zero_poly() -> Self {
        EvalPoly::default()
    }
}
