//! SIR epidemic panels with known intervention effects.
//!
//! Used as ground truth for the estimators: every unit runs a discrete-day
//! SIR model whose transmission rate switches at the unit's intervention day.

use chrono::{Days, NaiveDate};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{Metric, MetricKind, Panel, UnitMeta};

/// Largest per-day transmission rate the one-day Euler step accepts.
pub const MAX_DAILY_BETA: f64 = 5.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SirConfig {
    pub population: u64,
    /// Transmission rate before the intervention, per day.
    pub beta0: f64,
    /// Transmission rate from the intervention day on, per day.
    pub beta_lockdown: f64,
    /// Recovery rate, per day.
    pub gamma: f64,
    /// Infection fatality ratio.
    pub ifr: f64,
    pub seed_infected: u64,
    /// Intervention day.
    pub t0: usize,
    /// σ of the multiplicative log-normal observation noise.
    pub noise_sigma: f64,
    /// Days from case report to death.
    pub report_lag: usize,
}

impl SirConfig {
    /// A template with R0 = 2.5 before and 0.8 after the intervention.
    pub fn baseline() -> Self {
        let gamma = 1.0 / 14.0;
        SirConfig {
            population: 1_000_000,
            beta0: 2.5 * gamma,
            beta_lockdown: 0.8 * gamma,
            gamma,
            ifr: 0.01,
            seed_infected: 10,
            t0: 40,
            noise_sigma: 0.05,
            report_lag: 21,
        }
    }

    /// Named templates: `strict` (R = 0.8 after t0), `loose` (R = 1.3) and
    /// `none` (no change).
    pub fn regime(name: &str) -> Result<Self> {
        let mut cfg = SirConfig::baseline();
        cfg.beta_lockdown = match name {
            "strict" => 0.8 * cfg.gamma,
            "loose" => 1.3 * cfg.gamma,
            "none" => cfg.beta0,
            other => {
                return Err(Error::InvalidParameter(format!(
                    "unknown regime '{other}' (expected strict, loose or none)"
                )))
            }
        };
        Ok(cfg)
    }

    pub fn r0(&self) -> f64 {
        self.beta0 / self.gamma
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.to_string()));
        if self.population == 0 {
            return bad("population must be ≥ 1");
        }
        if self.seed_infected > self.population {
            return bad("seed infections exceed population");
        }
        if !(self.gamma > 0.0) {
            return bad("gamma must be positive");
        }
        if !(self.beta_lockdown >= 0.0 && self.beta_lockdown <= self.beta0) {
            return bad("need 0 ≤ beta_lockdown ≤ beta0");
        }
        if !(self.ifr > 0.0 && self.ifr < 1.0) {
            return bad("ifr must be in (0, 1)");
        }
        if !(self.noise_sigma >= 0.0) {
            return bad("noise sigma must be ≥ 0");
        }
        if self.beta0 > MAX_DAILY_BETA || self.gamma > MAX_DAILY_BETA {
            return Err(Error::Stability(format!(
                "daily rates beta0 = {}, gamma = {} exceed {MAX_DAILY_BETA}",
                self.beta0, self.gamma
            )));
        }
        Ok(())
    }
}

/// Daily series of one simulated unit.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SirOutput {
    pub susceptible: Vec<f64>,
    pub infected: Vec<f64>,
    pub recovered: Vec<f64>,
    /// New cases per day before observation noise.
    pub true_cases: Vec<f64>,
    /// Deaths per day before observation noise.
    pub true_deaths: Vec<f64>,
    /// Observed new cases per day.
    pub cases: Vec<f64>,
    /// Observed deaths per day.
    pub deaths: Vec<f64>,
}

impl SirOutput {
    pub fn cumulative_cases(&self) -> Vec<f64> {
        running_sum(&self.cases)
    }

    pub fn cumulative_deaths(&self) -> Vec<f64> {
        running_sum(&self.deaths)
    }
}

fn running_sum(v: &[f64]) -> Vec<f64> {
    v.iter()
        .scan(0.0, |acc, x| {
            *acc += x;
            Some(*acc)
        })
        .collect()
}

/// Euler-stepped SIR with a one-day step.
///
/// Day 0 reports the seed infections. The step from day `d` to `d + 1` uses
/// `beta0` while `d < t0` and `beta_lockdown` afterwards. Daily cases are the
/// drop in susceptibles; deaths are `ifr` times the cases `report_lag` days
/// earlier. `R` is kept as `N - S - I`.
pub fn simulate(cfg: &SirConfig, days: usize, seed: u64) -> Result<SirOutput> {
    if days == 0 {
        return Err(Error::InvalidParameter("days must be ≥ 1".into()));
    }
    cfg.validate()?;
    let n = cfg.population as f64;
    let mut s = n - cfg.seed_infected as f64;
    let mut i = cfg.seed_infected as f64;

    let mut out = SirOutput {
        susceptible: Vec::with_capacity(days),
        infected: Vec::with_capacity(days),
        recovered: Vec::with_capacity(days),
        true_cases: Vec::with_capacity(days),
        true_deaths: Vec::with_capacity(days),
        cases: Vec::with_capacity(days),
        deaths: Vec::with_capacity(days),
    };
    out.susceptible.push(s);
    out.infected.push(i);
    out.recovered.push(n - s - i);
    out.true_cases.push(cfg.seed_infected as f64);

    for d in 1..days {
        let beta = if d - 1 < cfg.t0 { cfg.beta0 } else { cfg.beta_lockdown };
        let infections = (beta * s * i / n).min(s);
        let recoveries = (cfg.gamma * i).min(i + infections);
        s -= infections;
        i += infections - recoveries;
        out.susceptible.push(s);
        out.infected.push(i);
        out.recovered.push(n - s - i);
        out.true_cases.push(infections);
    }
    out.true_deaths = (0..days)
        .map(|d| {
            d.checked_sub(cfg.report_lag)
                .map_or(0.0, |src| cfg.ifr * out.true_cases[src])
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut noisy = |v: f64| {
        let z: f64 = StandardNormal.sample(&mut rng);
        v * (cfg.noise_sigma * z).exp()
    };
    let (cases, deaths): (Vec<f64>, Vec<f64>) = out
        .true_cases
        .iter()
        .zip(&out.true_deaths)
        .map(|(&c, &dth)| (noisy(c), noisy(dth)))
        .unzip();
    out.cases = cases;
    out.deaths = deaths;
    Ok(out)
}

/// A generated panel pair with the regime each unit was drawn from.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticPanel {
    /// Cumulative observed cases.
    pub cases: Panel,
    /// Cumulative observed deaths.
    pub deaths: Panel,
    pub labels: Vec<(String, String)>,
    pub configs: Vec<SirConfig>,
}

impl SyntheticPanel {
    pub fn units_in(&self, regime: &str) -> Vec<String> {
        self.labels
            .iter()
            .filter(|(_, r)| r == regime)
            .map(|(u, _)| u.clone())
            .collect()
    }
}

pub fn epoch() -> NaiveDate {
    NaiveDate::from_ymd_opt(2020, 1, 22).expect("valid date")
}

/// Simulates `n_units` units over `days` days.
///
/// Units are assigned to regimes round-robin in the given order. Population,
/// both transmission rates, seed infections and the intervention day are each
/// multiplied by an independent factor drawn uniformly from
/// `[1 - jitter, 1 + jitter]`.
pub fn generate_panel(
    n_units: usize,
    regimes: &[(String, SirConfig)],
    jitter: f64,
    days: usize,
    seed: u64,
) -> Result<SyntheticPanel> {
    if n_units < 2 {
        return Err(Error::InvalidParameter("need at least 2 units".into()));
    }
    if regimes.is_empty() {
        return Err(Error::InvalidParameter("need at least one regime".into()));
    }
    if !(0.0..1.0).contains(&jitter) {
        return Err(Error::InvalidParameter("jitter must be in [0, 1)".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let units = regimes
        .iter()
        .cycle()
        .take(n_units)
        .map(|(regime, template)| {
            let mut factor = || 1.0 + jitter * rng.random_range(-1.0..=1.0);
            let mut cfg = template.clone();
            cfg.population = ((cfg.population as f64 * factor()).round() as u64).max(1);
            cfg.beta0 *= factor();
            cfg.beta_lockdown = (cfg.beta_lockdown * factor()).min(cfg.beta0);
            cfg.seed_infected = ((cfg.seed_infected as f64 * factor()).round() as u64)
                .clamp(1, cfg.population);
            cfg.t0 = (cfg.t0 as f64 * factor()).round() as usize;
            (regime.clone(), cfg)
        })
        .collect::<Vec<_>>();
    panel_from_configs(&units, days, rng.next_u64())
}

/// Simulates one unit per `(regime, config)` pair, ids `u000`, `u001`, ...
pub fn panel_from_configs(
    units: &[(String, SirConfig)],
    days: usize,
    seed: u64,
) -> Result<SyntheticPanel> {
    if units.is_empty() {
        return Err(Error::InvalidParameter("need at least one unit".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let width = units.len().to_string().len().max(3);
    let mut ids = Vec::with_capacity(units.len());
    let mut labels = Vec::with_capacity(units.len());
    let mut configs = Vec::with_capacity(units.len());
    let mut cases = Vec::with_capacity(units.len());
    let mut deaths = Vec::with_capacity(units.len());
    for (u, (regime, cfg)) in units.iter().enumerate() {
        let sim = simulate(cfg, days, rng.next_u64())?;
        let id = format!("u{u:0width$}");
        cases.push(sim.cumulative_cases());
        deaths.push(sim.cumulative_deaths());
        ids.push(id.clone());
        labels.push((id, regime.clone()));
        configs.push(cfg.clone());
    }
    let meta = ids
        .iter()
        .zip(&configs)
        .zip(&labels)
        .map(|((id, cfg), (_, regime))| {
            let m = UnitMeta::new(cfg.population)
                .with_region(regime.clone())
                .with_intervention(epoch() + Days::new(cfg.t0 as u64));
            (id.clone(), m)
        })
        .collect::<std::collections::BTreeMap<_, _>>();
    let cases = Panel::from_dense(
        ids.clone(),
        epoch(),
        cases,
        Metric::new("cumulative-cases", MetricKind::Cumulative),
    )?
    .with_meta(meta.clone());
    let deaths = Panel::from_dense(
        ids,
        epoch(),
        deaths,
        Metric::new("cumulative-deaths", MetricKind::Cumulative),
    )?
    .with_meta(meta);
    Ok(SyntheticPanel {
        cases,
        deaths,
        labels,
        configs,
    })
}
