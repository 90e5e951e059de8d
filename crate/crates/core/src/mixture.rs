//! Finite mixtures of point masses and Gaussians on the plane.
//!
//! This class is closed under linear maps and convolution with an
//! independent centered Gaussian, which is all the limit-law pushforwards
//! need, and atoms are explicit so no-atom conditions are decidable.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::linalg::{self, Mat2, Vec2};

#[derive(Clone, Debug, PartialEq)]
pub enum Component {
    Point(Vec2),
    Gaussian { mean: Vec2, cov: Mat2 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mixture {
    weights: Vec<f64>,
    components: Vec<Component>,
}

/// JSON form of one mixture component.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ComponentSpec {
    Point { weight: f64, at: Vec2 },
    Gaussian { weight: f64, mean: Vec2, cov: Mat2 },
}

impl Mixture {
    pub fn new(parts: Vec<(f64, Component)>) -> Result<Self> {
        if parts.is_empty() {
            return Err(Error::invalid("mixture needs at least one component"));
        }
        let total: f64 = parts.iter().map(|(w, _)| *w).sum();
        if !total.is_finite() || total <= 0.0 {
            return Err(Error::invalid("mixture weights must sum to a positive number"));
        }
        for (w, c) in &parts {
            if !w.is_finite() || *w <= 0.0 {
                return Err(Error::invalid("mixture weights must be positive"));
            }
            match c {
                Component::Point(v) => check_finite(v, "point mass")?,
                Component::Gaussian { mean, cov } => {
                    check_finite(mean, "gaussian mean")?;
                    check_finite(&cov[0], "gaussian covariance")?;
                    check_finite(&cov[1], "gaussian covariance")?;
                    let asym = (cov[0][1] - cov[1][0]).abs();
                    if asym > 1e-12 * (1.0 + cov[0][1].abs()) {
                        return Err(Error::invalid("gaussian covariance must be symmetric"));
                    }
                    let scale = cov[0][0].abs() + cov[1][1].abs();
                    if linalg::sym_min_eigenvalue(cov) < -1e-12 * (1.0 + scale) {
                        return Err(Error::invalid(
                            "gaussian covariance must be positive semidefinite",
                        ));
                    }
                }
            }
        }
        let (weights, components) = parts.into_iter().map(|(w, c)| (w / total, c)).unzip();
        Ok(Mixture {
            weights,
            components,
        })
    }

    pub fn point(v: Vec2) -> Self {
        Mixture {
            weights: vec![1.0],
            components: vec![Component::Point(v)],
        }
    }

    pub fn gaussian(mean: Vec2, cov: Mat2) -> Result<Self> {
        Self::new(vec![(1.0, Component::Gaussian { mean, cov })])
    }

    pub fn from_specs(specs: &[ComponentSpec]) -> Result<Self> {
        Self::new(
            specs
                .iter()
                .map(|s| match s {
                    ComponentSpec::Point { weight, at } => (*weight, Component::Point(*at)),
                    ComponentSpec::Gaussian { weight, mean, cov } => (
                        *weight,
                        Component::Gaussian {
                            mean: *mean,
                            cov: *cov,
                        },
                    ),
                })
                .collect(),
        )
    }

    pub fn to_specs(&self) -> Vec<ComponentSpec> {
        self.iter()
            .map(|(w, c)| match c {
                Component::Point(v) => ComponentSpec::Point { weight: w, at: *v },
                Component::Gaussian { mean, cov } => ComponentSpec::Gaussian {
                    weight: w,
                    mean: *mean,
                    cov: *cov,
                },
            })
            .collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, &Component)> {
        self.weights.iter().copied().zip(self.components.iter())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec2 {
        let idx = if self.weights.len() == 1 {
            0
        } else {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut pick = self.weights.len() - 1;
            for (i, w) in self.weights.iter().enumerate() {
                acc += w;
                if u < acc {
                    pick = i;
                    break;
                }
            }
            pick
        };
        match &self.components[idx] {
            Component::Point(v) => *v,
            Component::Gaussian { mean, cov } => {
                let l = linalg::psd_sqrt_lower(cov);
                let z = [rng.sample(StandardNormal), rng.sample(StandardNormal)];
                linalg::add(*mean, linalg::mat_vec(&l, z))
            }
        }
    }

    /// Law of `M·v` for `v` drawn from this mixture.
    pub fn linear_map(&self, m: &Mat2) -> Mixture {
        let components = self
            .components
            .iter()
            .map(|c| match c {
                Component::Point(v) => Component::Point(linalg::mat_vec(m, *v)),
                Component::Gaussian { mean, cov } => Component::Gaussian {
                    mean: linalg::mat_vec(m, *mean),
                    cov: linalg::mat_mul(&linalg::mat_mul(m, cov), &linalg::transpose(m)),
                },
            })
            .collect();
        Mixture {
            weights: self.weights.clone(),
            components,
        }
    }

    /// Law of `v + N` with `N ~ N(0, cov)` independent of `v`.
    pub fn convolve_gaussian(&self, extra: &Mat2) -> Mixture {
        if linalg::frobenius(extra) == 0.0 {
            return self.clone();
        }
        let components = self
            .components
            .iter()
            .map(|c| match c {
                Component::Point(v) => Component::Gaussian {
                    mean: *v,
                    cov: *extra,
                },
                Component::Gaussian { mean, cov } => Component::Gaussian {
                    mean: *mean,
                    cov: linalg::mat_add(cov, extra),
                },
            })
            .collect();
        Mixture {
            weights: self.weights.clone(),
            components,
        }
    }

    pub fn mean(&self) -> Vec2 {
        self.iter().fold([0.0, 0.0], |acc, (w, c)| {
            let m = match c {
                Component::Point(v) => *v,
                Component::Gaussian { mean, .. } => *mean,
            };
            linalg::add(acc, linalg::scale(w, m))
        })
    }

    pub fn covariance(&self) -> Mat2 {
        let mu = self.mean();
        let mut out = linalg::ZERO;
        for (w, c) in self.iter() {
            let (m, cov) = match c {
                Component::Point(v) => (*v, linalg::ZERO),
                Component::Gaussian { mean, cov } => (*mean, *cov),
            };
            let d = linalg::sub(m, mu);
            for i in 0..2 {
                for j in 0..2 {
                    out[i][j] += w * (cov[i][j] + d[i] * d[j]);
                }
            }
        }
        out
    }

    /// Whether some component puts positive mass on the line `ℝ·dir`
    /// through the origin.
    pub fn has_mass_on_line(&self, dir: Vec2) -> bool {
        let n = linalg::norm(dir);
        if n == 0.0 {
            return true;
        }
        let u = linalg::scale(1.0 / n, dir);
        let on_line = |v: Vec2| linalg::cross(v, u).abs() <= 1e-12 * (1.0 + linalg::norm(v));
        self.components.iter().any(|c| match c {
            Component::Point(v) => on_line(*v),
            Component::Gaussian { mean, cov } => {
                if linalg::det(cov).abs() > 1e-14 * (1.0 + linalg::frobenius(cov)).powi(2) {
                    return false;
                }
                // degenerate: support is mean + range(cov)
                let perp = [-u[1], u[0]];
                let var_perp = linalg::dot(perp, linalg::mat_vec(cov, perp));
                on_line(*mean) && var_perp.abs() <= 1e-14 * (1.0 + linalg::frobenius(cov))
            }
        })
    }

    /// Whether the first coordinate has an atom at zero.
    pub fn first_coordinate_has_atom_at_zero(&self) -> bool {
        self.components.iter().any(|c| match c {
            Component::Point(v) => v[0] == 0.0,
            Component::Gaussian { mean, cov } => cov[0][0] <= 0.0 && mean[0] == 0.0,
        })
    }

    /// `P{v₁ + N > 0}` for `N ~ N(0, extra_var)` independent of `v`.
    pub fn prob_first_positive(&self, extra_var: f64) -> f64 {
        self.iter()
            .map(|(w, c)| {
                let (m, v) = match c {
                    Component::Point(p) => (p[0], 0.0),
                    Component::Gaussian { mean, cov } => (mean[0], cov[0][0]),
                };
                let v = v + extra_var;
                let p = if v <= 0.0 {
                    if m > 0.0 {
                        1.0
                    } else {
                        0.0
                    }
                } else {
                    0.5 * erfc(-m / (2.0 * v).sqrt())
                };
                w * p
            })
            .sum()
    }
}

fn check_finite(v: &Vec2, what: &str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::invalid(format!("{what} must be finite")))
    }
}
