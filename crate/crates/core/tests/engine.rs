use std::f64::consts::PI;
use std::path::PathBuf;

use saddle_exit::experiment::{Experiment, ExperimentConfig};
use saddle_exit::linalg::{Mat2, Vec2, IDENTITY};
use saddle_exit::sde::{path_rng, run_ensemble, simulate_exit, Dynamics, ExitKind, KindCounts, PathParams, Stopping};
use saddle_exit::stats::{ks_two_sample, mean, variance};
use saddle_exit::system::benchmarks::{cubic_resonant, linear_saddle};
use saddle_exit::system::{ExitDomain, ExitPoints};
use saddle_exit::Result;

struct PureNoise;

impl Dynamics for PureNoise {
    fn coefficients(&self, _y: Vec2, _eps: f64) -> Result<(Vec2, Mat2)> {
        Ok(([0.0, 0.0], IDENTITY))
    }
}

/// `E τ` at the centre of `(−1, 1)²` for `dX = ε dW`: five-point finite
/// differences for `(ε²/2)Δu = −1` on `n` interior nodes per side, solved
/// exactly in the discrete sine basis.
fn poisson_centre(eps: f64, n: usize) -> f64 {
    assert!(n % 2 == 1);
    let m = (n + 1) as f64;
    let dx = 2.0 / m;
    let f = 2.0 / (eps * eps);
    let c = n.div_ceil(2);
    let s = |i: usize, k: usize| (PI * (i * k) as f64 / m).sin();
    let col: Vec<f64> = (1..=n).map(|k| (1..=n).map(|i| s(i, k)).sum()).collect();
    let mut u = 0.0;
    for k in 1..=n {
        for l in 1..=n {
            let mu = 4.0 / (dx * dx) * ((PI * k as f64 / (2.0 * m)).sin().powi(2) + (PI * l as f64 / (2.0 * m)).sin().powi(2));
            let fhat = (2.0 / m).powi(2) * f * col[k - 1] * col[l - 1];
            u += s(c, k) * s(c, l) * fhat / mu;
        }
    }
    u
}

#[test]
fn poisson_oracle_matches_known_torsion_constant() {
    // Centre value of −Δw = 1 on the unit square is 0.0736713...
    let u = poisson_centre(1.0, 199) / 2.0 / 4.0;
    assert!((u - 0.073_671_3).abs() < 2e-6, "{u}");
}

#[test]
fn pure_noise_mean_exit_time() {
    let eps = 0.1;
    let oracle = poisson_centre(eps, 199);
    let domain = ExitDomain::rectangle(-1.0, 1.0, -1.0, 1.0).unwrap();
    let stop = Stopping::Polygon {
        domain: &domain,
        exits: ExitPoints { plus: [1.0, 0.0], minus: [-1.0, 0.0] },
    };
    let params = PathParams { eps, h: 1e-3, t_max: 1e4, guard: 2.0 };
    let n = 4000;
    let times: Vec<f64> = run_ensemble(5, n, |k, rng| simulate_exit(&PureNoise, &params, [0.0, 0.0], &stop, rng, k).time);
    let m = mean(&times);
    let se = (variance(&times) / n as f64).sqrt();
    // Discrete monitoring misses excursions: E τ is biased up by about
    // 2·0.5826·ε√h relative to the half-width, well inside 3 SE here.
    assert!((m - oracle).abs() < 3.0 * se, "MC {m} ± {se}, oracle {oracle}");
}

#[test]
fn sigma_scaling_symmetry() {
    let base = cubic_resonant();
    let stop = Stopping::Strip { level: 0.5, top: 0.5 };
    let run = |sys: &saddle_exit::system::SaddleSystem, eps: f64| {
        let params = PathParams { eps, h: 1e-3, t_max: 40.0, guard: 1.0 };
        (0..64).map(|k| simulate_exit(sys, &params, [0.0, 0.3], &stop, path_rng(9, k), k)).collect::<Vec<_>>()
    };
    let reference = run(&base, 1e-2);
    // Scaling by 2 is exact in floating point.
    assert_eq!(run(&base.with_sigma_scaled(2.0), 5e-3), reference);
    for (a, b) in run(&base.with_sigma_scaled(3.0), 1e-2 / 3.0).iter().zip(&reference) {
        assert_eq!(a.kind, b.kind);
        assert!((a.time - b.time).abs() < 1e-9, "{} vs {}", a.time, b.time);
    }
}

#[test]
fn neighbouring_seeds_share_the_law() {
    let sys = linear_saddle(1, 1);
    let stop = Stopping::Strip { level: 0.5, top: 0.5 };
    let params = PathParams { eps: 1e-2, h: 1e-3, t_max: 60.0, guard: 1.0 };
    let times = |seed| -> Vec<f64> {
        run_ensemble(seed, 4000, |k, rng| simulate_exit(&sys, &params, [0.0, 0.3], &stop, rng, k).time)
    };
    let (a, b) = (times(21), times(22));
    assert_ne!(a, b);
    let ks = ks_two_sample(&a, &b).unwrap();
    // 99.9% critical value for n = m = 4000.
    assert!(ks < 1.95 * (2.0 / 4000.0f64).sqrt(), "{ks}");
}

#[test]
fn empty_ensemble() {
    let out: Vec<u64> = run_ensemble(1, 0, |k, _| k);
    assert!(out.is_empty());
}

fn time_law_config() -> ExperimentConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/configs/time_law.json");
    ExperimentConfig::load(&path).unwrap()
}

#[test]
fn top_bottom_exits_are_rare() {
    let mut c = time_law_config();
    c.eps_grid = vec![1e-3];
    c.n_paths = 10_000;
    let exp = Experiment::prepare(c).unwrap();
    let paths = exp.ensemble(1e-3);
    let s1 = KindCounts::from_samples(paths.iter().map(|p| &p.stage1));
    let s2 = KindCounts::from_samples(paths.iter().filter_map(|p| p.stage2.as_ref()));
    let top = (s1.top_bottom + s2.top_bottom) as f64 / paths.len() as f64;
    assert!(top < 0.01, "{s1:?} {s2:?}");
    // τ̂ = −(α/λ₊)(1−p)ln ε − (1/λ₊)ln|η⁺| for every side hit.
    for p in paths.iter().filter(|p| p.stage1.kind.sign().is_some()) {
        let pred = -(1.0 - 0.25) * 1e-3f64.ln() - p.eta_plus.abs().ln();
        assert!((pred - p.tau_hat).abs() < 1e-9, "{pred} vs {}", p.tau_hat);
    }
}

#[test]
fn weak_order_in_the_step() {
    let mean_time = |h: f64| {
        let mut c = time_law_config();
        c.eps_grid = vec![1e-2];
        c.n_paths = 10_000;
        c.h = Some(h);
        let exp = Experiment::prepare(c).unwrap();
        let t: Vec<f64> = exp
            .ensemble(1e-2)
            .iter()
            .filter_map(|p| p.stage2.and_then(|s| s.rescaled))
            .map(|r| r.time_shifted)
            .collect();
        assert_eq!(t.len(), 10_000);
        (mean(&t), (variance(&t) / t.len() as f64).sqrt())
    };
    let (coarse, se) = mean_time(1e-3);
    let (fine, _) = mean_time(5e-4);
    assert!((coarse - fine).abs() < se, "{coarse} vs {fine}, se {se}");
}

#[test]
fn censoring_and_escape_are_not_errors() {
    let sys = linear_saddle(1, 1);
    let stop = Stopping::Strip { level: 0.5, top: 0.5 };
    let params = PathParams { eps: 0.0, h: 1e-2, t_max: 5.0, guard: 1.0 };
    let s = simulate_exit(&sys, &params, [0.0, 0.3], &stop, path_rng(0, 0), 0);
    assert_eq!(s.kind, ExitKind::Censored);
    assert!(s.rescaled.is_none());
}
