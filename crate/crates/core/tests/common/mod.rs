#![allow(dead_code)]

use std::path::PathBuf;

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use synthctl_core::epi::{panel_from_configs, SirConfig, SyntheticPanel};
use synthctl_core::panel::{Metric, MetricKind, Panel};

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

pub fn ids(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i:02}")).collect()
}

/// Rank-3 factor panel: a slow trend and two seasonal factors of similar strength.
pub struct FactorPanel {
    pub donors: Vec<Vec<f64>>,
    pub target: Vec<f64>,
    /// Noise-free target.
    pub target_mean: Vec<f64>,
}

fn factor(k: usize, t: usize) -> f64 {
    let x = t as f64;
    match k {
        0 => 10.0 + 5.0 * x / 120.0,
        1 => 10.0 * (2.0 * std::f64::consts::PI * x / 45.0).sin(),
        _ => 10.0 * (2.0 * std::f64::consts::PI * x / 100.0).cos(),
    }
}

/// `n` donors and one target over `days`, each cell scaled by `1 + noise·z`.
pub fn factor_panel(n: usize, days: usize, noise: f64, seed: u64) -> FactorPanel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let loadings: Vec<[f64; 3]> = (0..=n)
        .map(|_| {
            [
                rng.random_range(0.5..1.5),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ]
        })
        .collect();
    let mean = |i: usize, t: usize| (0..3).map(|k| loadings[i][k] * factor(k, t)).sum::<f64>();
    let mut noisy = |v: f64| {
        let z: f64 = StandardNormal.sample(&mut rng);
        v * (1.0 + noise * z)
    };
    let donors = (0..n)
        .map(|i| (0..days).map(|t| noisy(mean(i, t))).collect())
        .collect();
    let target_mean: Vec<f64> = (0..days).map(|t| mean(n, t)).collect();
    let target = target_mean.iter().map(|&v| noisy(v)).collect();
    FactorPanel {
        donors,
        target,
        target_mean,
    }
}

/// Drops each cell with probability `rate`; target cells only before `t0`.
pub fn mask(
    donors: &[Vec<f64>],
    target: &[f64],
    t0: usize,
    rate: f64,
    seed: u64,
) -> (Vec<Vec<Option<f64>>>, Vec<Option<f64>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut keep = |v: f64, maskable: bool| (!(maskable && rng.random::<f64>() < rate)).then_some(v);
    let d = donors
        .iter()
        .map(|row| row.iter().map(|&v| keep(v, true)).collect())
        .collect();
    let t = target
        .iter()
        .enumerate()
        .map(|(i, &v)| keep(v, i < t0))
        .collect();
    (d, t)
}

pub fn start() -> NaiveDate {
    NaiveDate::from_ymd_opt(2020, 3, 1).unwrap()
}

/// Two mobility regimes: a deep drop around day 20 and a shallow one.
/// Returns the panel and each unit's regime (0 deep, 1 shallow).
pub fn mobility_regimes(n: usize, days: usize, seed: u64) -> (Panel, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for i in 0..n {
        let regime = i % 2;
        let (depth, onset) = if regime == 0 {
            (rng.random_range(-60.0..-40.0), rng.random_range(15..22))
        } else {
            (rng.random_range(-15.0..-5.0), rng.random_range(20..30))
        };
        let row = (0..days)
            .map(|d| {
                let z: f64 = StandardNormal.sample(&mut rng);
                let weekend = if d % 7 >= 5 { 4.0 } else { 0.0 };
                (if d >= onset { depth } else { 0.0 }) + weekend + 3.0 * z
            })
            .collect();
        rows.push(row);
        labels.push(regime);
    }
    let p = Panel::from_dense(
        ids("m", n),
        start(),
        rows,
        Metric::new("mobility-pct", MetricKind::Level),
    )
    .unwrap();
    (p, labels)
}

/// One-regime SIR panel with intervention days spread over 35..=65.
pub fn staggered_lockdowns(n: usize, days: usize, seed: u64) -> SyntheticPanel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut template = SirConfig::baseline();
    template.population = 10_000_000;
    template.seed_infected = 1000;
    let units: Vec<(String, SirConfig)> = (0..n)
        .map(|_| {
            let mut c = template.clone();
            c.population = (c.population as f64 * rng.random_range(0.7..=1.3)) as u64;
            c.seed_infected = (c.seed_infected as f64 * rng.random_range(0.7..=1.3)) as u64;
            c.beta0 *= 1.0 + 0.05 * rng.random_range(-1.0..=1.0);
            c.beta_lockdown *= 1.0 + 0.05 * rng.random_range(-1.0..=1.0);
            c.t0 = rng.random_range(35..=65);
            ("strict".to_string(), c)
        })
        .collect();
    panel_from_configs(&units, days, seed).unwrap()
}

/// Strict and loose units alternating, common intervention on `t0`,
/// cases per million on `t0` spread over roughly 2000..8000.
pub fn two_regimes(n: usize, days: usize, t0: usize, seed: u64) -> SyntheticPanel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let units: Vec<(String, SirConfig)> = (0..n)
        .map(|u| {
            let regime = if u % 2 == 0 { "strict" } else { "loose" };
            let mut c = SirConfig::regime(regime).unwrap();
            c.population = (1e7 * rng.random_range(0.8..1.2)) as u64;
            c.seed_infected = rng.random_range(20..=80);
            c.beta0 *= 1.0 + 0.05 * rng.random_range(-1.0..=1.0);
            c.beta_lockdown = (c.beta_lockdown * (1.0 + 0.05 * rng.random_range(-1.0..=1.0))).min(c.beta0);
            c.t0 = t0;
            (regime.to_string(), c)
        })
        .collect();
    panel_from_configs(&units, days, seed).unwrap()
}

pub fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Solves `(AᵀA) x = Aᵀb` by Gaussian elimination with partial pivoting.
pub fn normal_equations(a: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let n = a[0].len();
    let mut m = vec![vec![0.0; n + 1]; n];
    for i in 0..n {
        for j in 0..n {
            m[i][j] = a.iter().map(|row| row[i] * row[j]).sum();
        }
        m[i][n] = a.iter().zip(b).map(|(row, y)| row[i] * y).sum();
    }
    for c in 0..n {
        let p = (c..n).max_by(|&x, &y| m[x][c].abs().total_cmp(&m[y][c].abs())).unwrap();
        m.swap(c, p);
        for r in 0..n {
            if r != c {
                let f = m[r][c] / m[c][c];
                for k in c..=n {
                    m[r][k] -= f * m[c][k];
                }
            }
        }
    }
    (0..n).map(|i| m[i][n] / m[i][i]).collect()
}
