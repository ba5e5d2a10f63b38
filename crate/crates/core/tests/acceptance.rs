//! Acceptance criteria; prints one PASS/FAIL line per criterion.

mod common;

use std::collections::BTreeMap;
use std::time::Instant;

use chrono::Days;
use nalgebra::{DMatrix, DVector};
use synthctl_core::align::{align_by_intervention, align_by_threshold, infer_lockdown_from_mobility};
use synthctl_core::epi::{epoch, simulate, SirConfig};
use synthctl_core::linalg::{min_norm_lstsq, MaskedMatrix};
use synthctl_core::panel::{ingest_csv, CsvSchema, Metric, MetricKind};
use synthctl_core::rsc::{counterfactual_shifted_intervention, fit, FitOptions, ShiftSpec};
use synthctl_core::synthint::{compare_regions, BinSpec, CompareOptions, DonorRegion, StageFilter};
use synthctl_core::trendcluster::{cluster_aggregates, kmeans_trends, DateRange, DayWindow, KMeansOptions};

use common::*;

type Outcome = (bool, String);

fn criterion_1() -> Outcome {
    let clock = Instant::now();
    let (n, days, t0) = (20, 120, 30);
    let p = factor_panel(n, days, 0.0, 1);
    let x = MaskedMatrix::from_rows(&p.donors.iter().map(|r| r.iter().map(|&v| Some(v)).collect()).collect::<Vec<_>>()).unwrap();
    let target: Vec<Option<f64>> = p.target.iter().map(|&v| Some(v)).collect();
    let m = fit(&ids("d", n), &x, "t", &target, t0, &FitOptions::default()).unwrap();
    let cf = m.project_all().counterfactual;
    let num: f64 = (t0..days).map(|t| (cf[t] - p.target[t]).powi(2)).sum::<f64>().sqrt();
    let den: f64 = (t0..days).map(|t| p.target[t].powi(2)).sum::<f64>().sqrt();
    let err = num / den;
    let secs = clock.elapsed().as_secs_f64();
    (err < 1e-6 && secs < 1.0, format!("relative error {err:.2e}, kept rank {}, {secs:.3} s", m.kept_rank))
}

fn criterion_2() -> Outcome {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
    let (n, days, t0) = (5, 30, 20);
    let donors: Vec<Vec<f64>> = (0..n).map(|_| (0..days).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let target: Vec<f64> = (0..days).map(|t| 0.5 * donors[0][t] + 0.5 * donors[1][t]).collect();
    let x = MaskedMatrix::from_rows(&donors.iter().map(|r| r.iter().map(|&v| Some(v)).collect()).collect::<Vec<_>>()).unwrap();
    let m = fit(&ids("d", n), &x, "t", &target.iter().map(|&v| Some(v)).collect::<Vec<_>>(), t0, &FitOptions::with_rank(n)).unwrap();
    let expected = [0.5, 0.5, 0.0, 0.0, 0.0];
    let off_truth = m.weights.iter().zip(expected).map(|(w, e)| (w - e).abs()).fold(0.0, f64::max);
    let pre: Vec<Vec<f64>> = (0..t0).map(|t| (0..n).map(|i| donors[i][t]).collect()).collect();
    let oracle = normal_equations(&pre, &target[..t0]);
    let off_oracle = m.weights.iter().zip(&oracle).map(|(w, o)| (w - o).abs()).fold(0.0, f64::max);
    (off_truth <= 1e-6 && off_oracle <= 1e-8, format!("max |w - (0.5, 0.5, 0, 0, 0)| {off_truth:.1e}, max |w - normal equations| {off_oracle:.1e}"))
}

const RSC_DONORS: usize = 50;
const RSC_DAYS: usize = 200;
const RSC_T0: usize = 60;
const RSC_SEEDS: u64 = 100;

fn post_rmse(cf: &[f64], actual: &[f64]) -> f64 {
    ((RSC_T0..RSC_DAYS).map(|t| (cf[t] - actual[t]).powi(2)).sum::<f64>() / (RSC_DAYS - RSC_T0) as f64).sqrt()
}

/// Denoised-RSC post-period RMSE against the observed target, optionally masked.
fn rsc_rmse(seed: u64, mask_rate: f64) -> f64 {
    let p = factor_panel(RSC_DONORS, RSC_DAYS, 0.1, seed);
    let (d, t) = mask(&p.donors, &p.target, RSC_T0, mask_rate, seed);
    let x = MaskedMatrix::from_rows(&d).unwrap();
    let m = fit(&ids("d", RSC_DONORS), &x, "t", &t, RSC_T0, &FitOptions::with_rank(3)).unwrap();
    post_rmse(&m.project_all().counterfactual, &p.target)
}

fn raw_ls_rmse(seed: u64) -> f64 {
    let p = factor_panel(RSC_DONORS, RSC_DAYS, 0.1, seed);
    let a = DMatrix::from_fn(RSC_T0, RSC_DONORS, |t, i| p.donors[i][t]);
    let b = DVector::from_column_slice(&p.target[..RSC_T0]);
    let w = min_norm_lstsq(&a, &b, 0.0);
    let cf: Vec<f64> = (0..RSC_DAYS).map(|t| (0..RSC_DONORS).map(|i| w[i] * p.donors[i][t]).sum()).collect();
    post_rmse(&cf, &p.target)
}

fn criterion_3() -> Outcome {
    let mut wins = 0;
    let mut gains = Vec::new();
    for seed in 0..RSC_SEEDS {
        let (d, r) = (rsc_rmse(seed, 0.0), raw_ls_rmse(seed));
        if d <= r {
            wins += 1;
        }
        gains.push(1.0 - d / r);
    }
    let gain = median(gains);
    (wins >= 80 && gain >= 0.10, format!("denoised wins {wins}/{RSC_SEEDS}, median improvement {:.1}%", gain * 100.0))
}

fn criterion_4() -> Outcome {
    let full = median((0..RSC_SEEDS).map(|s| rsc_rmse(s, 0.0)).collect());
    let masked = median((0..RSC_SEEDS).map(|s| rsc_rmse(s, 0.2)).collect());
    let ratio = masked / full;
    (ratio <= 2.0, format!("median RMSE {masked:.3} masked vs {full:.3} complete, ratio {ratio:.2}"))
}

fn criterion_5() -> Outcome {
    let (mut positive, mut monotone) = (0, 0);
    for seed in 0..100 {
        let p = staggered_lockdowns(20, 150, seed);
        let a = align_by_intervention(&p.deaths).unwrap();
        let (target, last) = a.offsets().iter().max_by_key(|(u, o)| (*o, u.clone())).unwrap().clone();
        let donors: Vec<String> = a.offsets().iter().filter(|(_, o)| *o <= last - 10).map(|(u, _)| u.clone()).collect();
        let totals: Vec<_> = [0, -5, -10]
            .iter()
            .map(|&shift| {
                let spec = ShiftSpec { shift, train_days: 20, horizon_end: None };
                counterfactual_shifted_intervention(&a, &target, &donors, &spec, &FitOptions::default()).unwrap().summary
            })
            .collect();
        if totals[2].percent_reduction.is_some_and(|r| r > 0.0) {
            positive += 1;
        }
        if totals.windows(2).all(|w| w[1].counterfactual_total <= w[0].counterfactual_total) {
            monotone += 1;
        }
    }
    (positive >= 90 && monotone >= 90, format!("reduction > 0 in {positive}/100 seeds, monotone in {monotone}/100"))
}

fn criterion_6() -> Outcome {
    let mut good = 0;
    let mut slowest: f64 = 0.0;
    let mut populated = 0;
    for seed in 0..10 {
        let clock = Instant::now();
        let p = two_regimes(100, 180, 60, seed);
        let region = DonorRegion::from_meta(&p.cases, "strict").unwrap();
        let f = StageFilter::new(epoch() + Days::new(60), 0.5).unwrap();
        let bins = BinSpec::new(vec![2000.0, 4000.0, 6000.0, 8000.0]).unwrap();
        let opts = CompareOptions { rank: Some(3), ..Default::default() };
        let r = compare_regions(p.cases.units(), &region, &p.cases, &f, &bins, &opts).unwrap();
        slowest = slowest.max(clock.elapsed().as_secs_f64());
        let both: Vec<_> = r.rows.iter().filter_map(|row| row.mean_nmse_in.zip(row.mean_nmse_out)).collect();
        populated += both.len();
        if !both.is_empty() && both.iter().all(|(i, o)| o > i) {
            good += 1;
        }
    }
    (good == 10 && slowest < 30.0, format!("out > in in every populated bin for {good}/10 seeds ({populated} bins compared), slowest run {slowest:.2} s"))
}

fn criterion_7() -> Outcome {
    let deaths = ingest_csv(fixture("eu_deaths.csv"), CsvSchema::Wide, Metric::new("cumulative-deaths", MetricKind::Cumulative)).unwrap();
    let a = align_by_threshold(&deaths, 100.0, false).unwrap();
    let mut mismatches = 0;
    for (i, unit) in deaths.units().iter().enumerate() {
        let scan = deaths.row(i).iter().position(|v| v.is_some_and(|v| v >= 100.0)).map(|d| d as i64);
        if scan != a.offset(unit) {
            mismatches += 1;
        }
    }
    let mobility = ingest_csv(fixture("mobility.csv"), CsvSchema::Wide, Metric::new("mobility-pct", MetricKind::Level)).unwrap();
    let inferred = infer_lockdown_from_mobility(&mobility, 25.0, 7).unwrap();
    let oracle = mobility_scan(&mobility, 25.0, 7);
    let same = inferred == oracle;
    (mismatches == 0 && same, format!("threshold offsets: {mismatches} mismatches over {} units; mobility dates {} ({} inferred)", deaths.n_units(), if same { "identical" } else { "differ" }, inferred.len()))
}

/// Brute-force windowed scan: trailing 7-day mean from scratch at every day,
/// first day whose next `sustain` means are all ≤ -drop, moved back over the
/// raw values at or below -drop.
fn mobility_scan(p: &synthctl_core::panel::Panel, drop: f64, sustain: usize) -> BTreeMap<String, chrono::NaiveDate> {
    let mut out = BTreeMap::new();
    for (i, unit) in p.units().iter().enumerate() {
        let row = p.row(i);
        let ma: Vec<Option<f64>> = (0..row.len())
            .map(|d| {
                row[d]?;
                let w: Vec<f64> = row[d.saturating_sub(6)..=d].iter().flatten().copied().collect();
                Some(w.iter().sum::<f64>() / w.len() as f64)
            })
            .collect();
        'days: for d in 0..row.len() {
            if d + sustain > row.len() {
                break;
            }
            for e in d..d + sustain {
                if !ma[e].is_some_and(|v| v <= -drop) {
                    continue 'days;
                }
            }
            let mut onset = d;
            while onset > 0 && row[onset].is_some_and(|v| v <= -drop) && row[onset - 1].is_some_and(|v| v <= -drop) {
                onset -= 1;
            }
            out.insert(unit.clone(), p.dates()[onset]);
            break;
        }
    }
    out
}

fn criterion_8() -> Outcome {
    let mut worst = usize::MAX;
    let mut monotone = true;
    let mut deterministic = true;
    for seed in 0..10 {
        let (p, labels) = mobility_regimes(20, 60, seed);
        let run = || kmeans_trends(&p, DayWindow::new(0, 60).unwrap(), 2, seed, &KMeansOptions::default()).unwrap();
        let c = run();
        let first = serde_json::to_string(&c).unwrap();
        deterministic &= first == serde_json::to_string(&run()).unwrap();
        monotone &= c.inertia_history.windows(2).all(|w| w[1] <= w[0]);
        let same = c.assignment.iter().zip(&labels).filter(|((_, j), l)| j == *l).count();
        worst = worst.min(same.max(20 - same));
    }
    (worst >= 19 && monotone && deterministic, format!("worst agreement {worst}/20 over 10 seeds, inertia monotone {monotone}, byte-identical reruns {deterministic}"))
}

/// Per-cluster means of member means on 2020-05-25..2020-07-31, recomputed
/// independently from the fixture CSVs (temperature, cases, deaths).
const TABLE1_ORACLE: [[f64; 3]; 4] = [
    [64.44220588235292, 78.92841911764705, 1.996525735294118],
    [76.6045588235294, 119.25049632352942, 3.4358081650570678],
    [88.24786764705883, 259.96195588235287, 4.047447749554367],
    [54.50867647058823, 39.598161984196665, 0.9901801470588234],
];

fn criterion_9() -> Outcome {
    let level = |name: &str, label: &str| ingest_csv(fixture(&format!("table1/{name}")), CsvSchema::Wide, Metric::new(label, MetricKind::Level)).unwrap();
    let temp = level("temperature.csv", "temperature-F");
    let cases = level("cases_pm.csv", "daily-cases-per-million");
    let deaths = level("deaths_pm.csv", "daily-deaths-per-million");
    let window = DateRange::new(
        chrono::NaiveDate::from_ymd_opt(2020, 5, 25).unwrap(),
        chrono::NaiveDate::from_ymd_opt(2020, 7, 31).unwrap(),
    )
    .unwrap();
    let start = temp.date_index(window.first).unwrap();
    let c = kmeans_trends(&temp, DayWindow::new(start, temp.n_days()).unwrap(), 4, 7, &KMeansOptions::default()).unwrap();
    let truth: BTreeMap<String, usize> = std::fs::read_to_string(fixture("table1/clusters.csv"))
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| {
            let (u, k) = l.split_once(',').unwrap();
            (u.to_string(), k.parse().unwrap())
        })
        .collect();
    let stats = [("temperature".to_string(), &temp), ("cases".to_string(), &cases), ("deaths".to_string(), &deaths)];
    let groups = cluster_aggregates(&cases, &c, window, &stats).unwrap();
    let mut worst: f64 = 0.0;
    let mut matched = 0;
    for g in &groups {
        let band = truth[&g.members[0]];
        if g.members.iter().all(|m| truth[m] == band) && g.members.len() == 4 {
            matched += 1;
        }
        for (j, name) in ["temperature", "cases", "deaths"].iter().enumerate() {
            worst = worst.max((g.scalar_stats[*name] - TABLE1_ORACLE[band][j]).abs());
        }
    }
    (matched == 4 && worst <= 1e-9, format!("{matched}/4 clusters recovered, max |stat - oracle| {worst:.1e}"))
}

/// Daily new cases of a dt-step Euler integration, summed per day.
fn fine_step_cases(cfg: &SirConfig, days: usize, dt: f64) -> Vec<f64> {
    let n = cfg.population as f64;
    let (mut s, mut i) = (n - cfg.seed_infected as f64, cfg.seed_infected as f64);
    let steps = (1.0 / dt).round() as usize;
    let mut cases = vec![cfg.seed_infected as f64];
    for d in 1..days {
        let before = s;
        for k in 0..steps {
            let t = (d - 1) as f64 + k as f64 * dt;
            let beta = if t < cfg.t0 as f64 { cfg.beta0 } else { cfg.beta_lockdown };
            let inf = beta * s * i / n * dt;
            let rec = cfg.gamma * i * dt;
            s -= inf;
            i += inf - rec;
        }
        cases.push(before - s);
    }
    cases
}

fn argmax(v: &[f64]) -> usize {
    v.iter().enumerate().fold(0, |b, (i, &x)| if x > v[b] { i } else { b })
}

fn criterion_10() -> Outcome {
    let mut cfg = SirConfig::baseline();
    cfg.seed_infected = 1000;
    cfg.t0 = 60;
    cfg.noise_sigma = 0.0;
    let days = 200;
    let out = simulate(&cfg, days, 0).unwrap();
    let reference = fine_step_cases(&cfg, days, 0.01);
    let (pd, pr) = (argmax(&out.true_cases[1..]) + 1, argmax(&reference[1..]) + 1);
    let height = (out.true_cases[pd] - reference[pr]).abs() / reference[pr];
    let n = cfg.population as f64;
    let drift = (0..days)
        .map(|d| (out.susceptible[d] + out.infected[d] + out.recovered[d] - n).abs())
        .fold(0.0, f64::max);
    let ok = (pd as i64 - pr as i64).abs() <= 2 && height <= 0.05 && drift <= 1e-9;
    (ok, format!("peak day {pd} vs {pr}, height error {:.2}%, max |S+I+R-N| {drift:.1e}", height * 100.0))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("exact recovery", criterion_1),
        ("weight identification", criterion_2),
        ("denoising benefit", criterion_3),
        ("missing-data robustness", criterion_4),
        ("counterfactual direction", criterion_5),
        ("synthetic-interventions gap", criterion_6),
        ("alignment oracles", criterion_7),
        ("clustering", criterion_8),
        ("table-1 pipeline", criterion_9),
        ("SIR oracle validity", criterion_10),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let (ok, detail) = check();
        println!("{} criterion {:>2} {name}: {detail}", if ok { "PASS" } else { "FAIL" }, i + 1);
        failed += usize::from(!ok);
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
