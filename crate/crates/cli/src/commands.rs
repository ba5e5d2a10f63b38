use rayon::prelude::*;
use serde_json::Value;
use synthctl_core::align::{train_test_split, AlignedPanel, AlignmentRule, Exclusion};
use synthctl_core::epi::{generate_panel, SirConfig};
use synthctl_core::impact::{gap_summary_with, peak_analysis};
use synthctl_core::panel::{write_wide, CsvSchema, Metric, MetricKind, Panel};
use synthctl_core::rsc::{
    counterfactual_shifted_intervention, default_donors, fit_aligned, restore_aligned, FitOptions,
    ModelFile, RankPolicy, RelWindow, ShiftSpec, Trajectory,
};
use synthctl_core::synthint::{compare_regions, BinSpec, CompareOptions, DonorRegion, NmseConfig, StageFilter};
use synthctl_core::trendcluster::{
    cluster_aggregates, group_by_policy, kmeans_trends, DateRange, DayWindow, GroupAggregate, KMeansOptions,
    MAX_ITERATIONS,
};
use synthctl_core::Error;

use crate::args::*;
use crate::input::{load_groups, load_offsets, load_panel, metric_line, read_panel};
use crate::output::{num, opt, Run};
use crate::{Failure, Outcome};

pub fn run(cli: &Cli) -> Outcome {
    let mut run = Run::new(&cli.common.out_dir, cli.command.name())?;
    let seed = cli.common.seed;
    match &cli.command {
        Command::Ingest(a) => ingest(&mut run, a)?,
        Command::Align(a) => align(&mut run, a)?,
        Command::Fit(a) => fit(&mut run, a)?,
        Command::Predict(a) => predict(&mut run, a)?,
        Command::Counterfactual(a) => counterfactual(&mut run, a)?,
        Command::SiCompare(a) => si_compare(&mut run, a)?,
        Command::Cluster(a) => cluster(&mut run, a, seed)?,
        Command::Impact(a) => impact(&mut run, a)?,
        Command::Gap(a) => gap(&mut run, a)?,
        Command::SynthGen(a) => synth_gen(&mut run, a, seed)?,
    }
    run.finish(resolved_config(cli))
}

/// Flag values of this run in `--config` form.
fn resolved_config(cli: &Cli) -> Value {
    let mut config = match serde_json::to_value(&cli.command).expect("arguments serialize") {
        Value::Object(m) => m.into_iter().next().map(|(_, v)| v).unwrap_or(Value::Null),
        other => other,
    };
    if let Value::Object(m) = &mut config {
        m.insert("seed".into(), cli.common.seed.into());
        if let Some(j) = cli.common.jobs {
            m.insert("jobs".into(), j.into());
        }
    }
    config
}

fn fit_options(r: &RankArgs) -> FitOptions {
    FitOptions {
        rank: match r.rank {
            Some(k) => RankPolicy::Fixed(k),
            None => RankPolicy::Energy(r.energy),
        },
        ridge: r.ridge,
    }
}

fn panel_bytes(run: &Run, p: &Panel) -> Outcome<Vec<u8>> {
    let mut bytes = run.comment().into_bytes();
    bytes.extend(metric_line(p.metric()).into_bytes());
    write_wide(p, &mut bytes)?;
    Ok(bytes)
}

fn trajectory_bytes(run: &Run, t: &Trajectory) -> Outcome<Vec<u8>> {
    let mut bytes = run.comment().into_bytes();
    t.write_csv(&mut bytes)?;
    Ok(bytes)
}

fn write_excluded(run: &mut Run, excluded: &[Exclusion]) -> Outcome {
    let mut t = run.table(&["unit", "reason"])?;
    for e in excluded {
        t.row([&e.unit, &e.reason])?;
    }
    run.save_table("excluded.csv", t)
}

fn last_day(a: &AlignedPanel, unit: &str) -> Outcome<i64> {
    a.last_rel_day(unit)
        .ok_or_else(|| Error::UnknownUnit(unit.to_string()).into())
}

fn ingest(run: &mut Run, a: &IngestArgs) -> Outcome {
    let metric = Metric::new(a.metric.clone(), a.kind.into());
    let panel = read_panel(run, "input", &a.input, a.schema.into(), Some(metric))?;
    let violations = panel.monotonicity_violations();
    let bytes = panel_bytes(run, &panel)?;
    run.save(&a.out, &bytes)?;
    let mut t = run.table(&["unit", "date", "value", "previous"])?;
    for v in &violations {
        t.row([v.unit.clone(), v.date.to_string(), num(v.value), opt(v.previous)])?;
    }
    run.save_table("violations.csv", t)?;
    println!(
        "{} units, {} days ({} to {}), observed fraction {:.4}, {} monotonicity violations",
        panel.n_units(),
        panel.n_days(),
        panel.dates()[0],
        panel.dates()[panel.n_days() - 1],
        panel.mask().observed_fraction,
        violations.len()
    );
    Ok(())
}

fn align(run: &mut Run, a: &AlignArgs) -> Outcome {
    let panel = load_panel(run, &a.input)?;
    let (rule, mobility) = match a.rule {
        Rule::Threshold => (
            AlignmentRule::Threshold {
                threshold: a.threshold,
                per_capita: a.per_capita,
            },
            None,
        ),
        Rule::Intervention => (
            AlignmentRule::Intervention {
                overrides: a.overrides.clone().map(|m| m.0).unwrap_or_default(),
            },
            None,
        ),
        Rule::Mobility => {
            let path = a
                .mobility
                .as_ref()
                .ok_or_else(|| Failure::Usage("--rule mobility needs --mobility".into()))?;
            let metric = Metric::new("mobility", MetricKind::Level);
            let mob = read_panel(run, "mobility", path, CsvSchema::Wide, Some(metric))?;
            (
                AlignmentRule::MobilityDrop {
                    drop_pct: a.drop_pct,
                    sustain_days: a.sustain,
                },
                Some(mob),
            )
        }
    };
    let aligned = rule.apply(&panel, mobility.as_ref())?;

    let mut t = run.table(&["unit", "t0_date", "rel_days_available"])?;
    for unit in aligned.units() {
        let date = aligned.t0_date(unit).expect("aligned unit has a day zero");
        t.row([unit.to_string(), date.to_string(), aligned.rel_days_available(unit).to_string()])?;
    }
    run.save_table("offsets.csv", t)?;
    write_excluded(run, aligned.excluded())?;

    let (lo, hi) = aligned.horizon();
    let mut header = vec!["unit".to_string()];
    header.extend((lo..=hi).map(|d| d.to_string()));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut t = run.table(&header)?;
    for (unit, row) in aligned.units().zip(aligned.rel_values()) {
        let mut rec = vec![unit.to_string()];
        rec.extend(row.into_iter().map(opt));
        t.row(rec)?;
    }
    run.save_table("aligned.csv", t)?;

    if let (Some(train), Some(test)) = (a.train_days, a.test_up_to) {
        let split = train_test_split(&aligned, train, test)?;
        let mut roles: Vec<(&str, &str)> = split
            .donors
            .iter()
            .map(|u| (u.as_str(), "donor"))
            .chain(split.targets.iter().map(|u| (u.as_str(), "target")))
            .chain(split.unused.iter().map(|u| (u.as_str(), "unused")))
            .collect();
        roles.sort();
        let mut t = run.table(&["unit", "role"])?;
        for (u, r) in roles {
            t.row([u, r])?;
        }
        run.save_table("split.csv", t)?;
        println!(
            "{} donors, {} targets, {} unused",
            split.donors.len(),
            split.targets.len(),
            split.unused.len()
        );
    }
    println!(
        "{} units aligned, {} excluded, relative days {lo}..={hi}",
        aligned.units().count(),
        aligned.excluded().len()
    );
    Ok(())
}

fn fit(run: &mut Run, a: &FitArgs) -> Outcome {
    let panel = load_panel(run, &a.input)?;
    let aligned = load_offsets(run, &a.offsets, &panel)?;
    let offset = aligned
        .offset(&a.target)
        .ok_or_else(|| Error::UnknownUnit(a.target.clone()))?;
    let donors = match &a.donors {
        Some(d) => d.0.clone(),
        None => default_donors(&aligned, &a.target),
    };
    let start = match a.train_days {
        Some(n) => -(n as i64),
        None => -offset,
    };
    let end = match a.horizon_end {
        Some(e) => e,
        None => donors
            .iter()
            .map(|d| last_day(&aligned, d))
            .try_fold(i64::MAX, |acc, d| d.map(|d| acc.min(d)))?,
    };
    let window = RelWindow { start, t0: 0, end };
    let model = fit_aligned(&aligned, &a.target, &donors, window, &fit_options(&a.rank))?;
    let mut json = serde_json::to_string_pretty(&model.to_file()).expect("model serializes");
    json.push('\n');
    run.save("model.json", json.as_bytes())?;
    let top = model
        .top_weights(3)
        .map(|w| w.iter().map(|(d, w)| format!("{d} {w:.3}")).collect::<Vec<_>>().join(", "))
        .unwrap_or_default();
    println!(
        "target {}: {} donors, rank {}, pre-period RMSE {}, days {start}..={end}; top weights {top}",
        a.target,
        donors.len(),
        model.kept_rank,
        model.pre_rmse()
    );
    Ok(())
}

fn predict(run: &mut Run, a: &PredictArgs) -> Outcome {
    let panel = load_panel(run, &a.input)?;
    let aligned = load_offsets(run, &a.offsets, &panel)?;
    let bytes = run.read("model", &a.model)?;
    let file: ModelFile = serde_json::from_slice(&bytes).map_err(|e| Failure::Data {
        kind: "ParseError",
        message: format!("{}: {e}", a.model.display()),
    })?;
    let model = restore_aligned(&file, &aligned)?;
    let mut t = model.project(a.from.unwrap_or(file.train_start), a.to.unwrap_or(file.end))?;
    if a.clip {
        let cf = t.counterfactual.iter().map(|v| v.max(0.0)).collect();
        t = Trajectory::new(t.target_id, t.rel_days, t.actual, cf, t.t0);
    }
    let bytes = trajectory_bytes(run, &t)?;
    run.save("trajectory.csv", &bytes)?;
    println!(
        "target {}: {} days written, relative days {}..={}",
        t.target_id,
        t.rel_days.len(),
        t.rel_days[0],
        t.rel_days[t.rel_days.len() - 1]
    );
    Ok(())
}

fn counterfactual(run: &mut Run, a: &CounterfactualArgs) -> Outcome {
    let panel = load_panel(run, &a.input)?;
    let aligned = load_offsets(run, &a.offsets, &panel)?;
    let donors = match &a.donors {
        Some(d) => d.0.clone(),
        None => default_donors(&aligned, &a.target),
    };
    if a.shifts.0.is_empty() {
        return Err(Failure::Usage("--shifts is empty".into()));
    }
    // One horizon for every shift so the totals are comparable.
    let end = match a.horizon_end {
        Some(e) => e,
        None => {
            let target_last = last_day(&aligned, &a.target)?;
            let latest_shift = *a.shifts.0.iter().max().expect("non-empty");
            donors
                .iter()
                .map(|d| last_day(&aligned, d))
                .try_fold(target_last - latest_shift, |acc, d| d.map(|d| acc.min(d)))?
        }
    };
    let opts = fit_options(&a.rank);
    let outcomes = a
        .shifts
        .0
        .par_iter()
        .map(|&shift| {
            let spec = ShiftSpec {
                shift,
                train_days: a.train_days,
                horizon_end: Some(end),
            };
            counterfactual_shifted_intervention(&aligned, &a.target, &donors, &spec, &opts)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut summary = run.table(&["shift", "actual_total", "counterfactual_total", "percent_reduction"])?;
    for o in &outcomes {
        let bytes = trajectory_bytes(run, &o.trajectory)?;
        run.save(format!("trajectory_shift{}.csv", o.summary.shift), &bytes)?;
        let s = &o.summary;
        summary.row([
            s.shift.to_string(),
            num(s.actual_total),
            num(s.counterfactual_total),
            opt(s.percent_reduction),
        ])?;
        println!(
            "shift {:+}: actual {}, counterfactual {}, reduction {}",
            s.shift,
            s.actual_total,
            s.counterfactual_total,
            s.percent_reduction.map_or("undefined".into(), |p| format!("{p:.2}%"))
        );
    }
    run.save_table("summary.csv", summary)
}

fn si_compare(run: &mut Run, a: &SiCompareArgs) -> Outcome {
    if a.input.meta.is_none() {
        return Err(Failure::Usage("si-compare needs --meta".into()));
    }
    let panel = load_panel(run, &a.input)?;
    let region = DonorRegion::from_meta(&panel, &a.donor_region)?;
    let targets = match &a.targets {
        Some(t) => t.0.clone(),
        None => panel.meta().keys().cloned().collect(),
    };
    let filter = StageFilter::new(a.reference_date, a.tolerance)?;
    let bins = BinSpec::new(a.bins.0.clone())?;
    let opts = CompareOptions {
        rank: a.rank,
        nmse: NmseConfig {
            scale: a.nmse_scale.into(),
            aggregation: a.nmse_aggregation.into(),
        },
    };
    let cmp = compare_regions(&targets, &region, &panel, &filter, &bins, &opts)?;

    let mut t = run.table(&["bin_low", "bin_high", "mean_nmse_in", "mean_nmse_out", "count_in", "count_out"])?;
    for r in &cmp.rows {
        t.row([
            num(r.low),
            num(r.high),
            opt(r.mean_nmse_in),
            opt(r.mean_nmse_out),
            r.count_in.to_string(),
            r.count_out.to_string(),
        ])?;
    }
    run.save_table("bins.csv", t)?;

    let mut t = run.table(&["target", "in_donor_region", "nmse", "days", "cpm_ref", "bin", "donor_count"])?;
    for c in &cmp.comparisons {
        t.row([
            c.target_id.clone(),
            c.in_donor_region.to_string(),
            num(c.nmse),
            c.days.to_string(),
            num(c.cpm_ref),
            c.bin.map(|b| b.to_string()).unwrap_or_default(),
            c.donor_count.to_string(),
        ])?;
    }
    run.save_table("targets.csv", t)?;

    let mut t = run.table(&["target", "reason"])?;
    for u in &cmp.out_of_range {
        t.row([u.as_str(), "outside bin range"])?;
    }
    for (u, why) in &cmp.failed {
        t.row([u, why])?;
    }
    run.save_table("failed.csv", t)?;
    println!(
        "{} targets compared, {} outside the bins, {} failed",
        cmp.comparisons.len(),
        cmp.out_of_range.len(),
        cmp.failed.len()
    );
    Ok(())
}

fn cluster(run: &mut Run, a: &ClusterArgs, seed: u64) -> Outcome {
    let panel = load_panel(run, &a.input)?;
    let n = panel.n_days();
    let window = match a.window {
        Some(s) if s.from < 0 => {
            return Err(Failure::Usage(format!("--window starts at day index {}", s.from)))
        }
        Some(s) => DayWindow::new(s.from as usize, s.to as usize)?,
        None => DayWindow::new(0, n)?,
    };
    if window.end > n {
        return Err(Error::InvalidParameter(format!("window end {} beyond {n} days", window.end)).into());
    }
    let range = match a.stat_range {
        Some(s) => DateRange::new(s.first, s.last)?,
        None => DateRange::new(panel.dates()[window.start], panel.dates()[window.end - 1])?,
    };
    let mut stat_panels = Vec::new();
    for (label, path) in a.stats.iter().flat_map(|m| m.0.iter()) {
        let metric = Metric::new(label.clone(), MetricKind::Level);
        let p = read_panel(run, &format!("stats.{label}"), path, CsvSchema::Wide, Some(metric))?;
        stat_panels.push((label.clone(), p));
    }
    let stats: Vec<(String, &Panel)> = stat_panels.iter().map(|(l, p)| (l.clone(), p)).collect();

    let aggregates = if let Some(path) = &a.groups {
        let groups = load_groups(run, path)?;
        let aggregates = group_by_policy(&panel, &groups, range, &stats)?;
        let mut t = run.table(&["unit", "cluster"])?;
        for (g, members) in &groups {
            for u in members {
                t.row([u, g])?;
            }
        }
        run.save_table("clusters.csv", t)?;
        println!("{} groups", aggregates.len());
        aggregates
    } else {
        let opts = KMeansOptions {
            normalize: a.normalize,
            restarts: a.restarts,
            max_iterations: MAX_ITERATIONS,
        };
        let c = kmeans_trends(&panel, window, a.k, seed, &opts)?;
        let mut t = run.table(&["unit", "cluster"])?;
        for (u, j) in &c.assignment {
            t.row([u.clone(), j.to_string()])?;
        }
        run.save_table("clusters.csv", t)?;
        let mut t = run.table(&["iteration", "inertia"])?;
        for (i, v) in c.inertia_history.iter().enumerate() {
            t.row([i.to_string(), num(*v)])?;
        }
        run.save_table("inertia.csv", t)?;
        write_excluded(run, &c.excluded)?;
        println!(
            "k = {}: inertia {}, {} iterations{}, {} units excluded",
            c.k,
            c.inertia,
            c.iterations,
            if c.converged { "" } else { " (not converged)" },
            c.excluded.len()
        );
        cluster_aggregates(&panel, &c, range, &stats)?
    };
    write_aggregates(run, &aggregates, &stats)
}

fn write_aggregates(run: &mut Run, aggregates: &[GroupAggregate], stats: &[(String, &Panel)]) -> Outcome {
    let mut t = run.table(&["cluster", "day", "mean_value"])?;
    for g in aggregates {
        for (d, v) in g.dates.iter().zip(&g.mean_series) {
            t.row([g.label.clone(), d.to_string(), opt(*v)])?;
        }
    }
    run.save_table("means.csv", t)?;

    let mut header = vec!["cluster", "members"];
    header.extend(stats.iter().map(|(l, _)| l.as_str()));
    let mut t = run.table(&header)?;
    for g in aggregates {
        let mut rec = vec![g.label.clone(), g.members.len().to_string()];
        rec.extend(stats.iter().map(|(l, _)| opt(g.scalar_stats.get(l).copied())));
        t.row(rec)?;
    }
    run.save_table("aggregates.csv", t)
}

fn impact(run: &mut Run, a: &ImpactArgs) -> Outcome {
    let panel = load_panel(run, &a.input)?;
    let aligned = load_offsets(run, &a.offsets, &panel)?;
    let report = peak_analysis(&aligned, (a.peak_smooth > 0).then_some(a.peak_smooth))?;
    let mut t = run.table(&["unit", "peak_value", "days_to_peak", "value_at_intervention", "right_censored"])?;
    for p in &report.peaks {
        t.row([
            p.unit.clone(),
            num(p.peak_value),
            p.days_to_peak.to_string(),
            opt(p.value_at_intervention),
            p.right_censored.to_string(),
        ])?;
    }
    run.save_table("peaks.csv", t)?;
    write_excluded(run, &report.excluded)?;
    println!("{} peaks, {} units excluded", report.peaks.len(), report.excluded.len());
    Ok(())
}

fn gap(run: &mut Run, a: &GapArgs) -> Outcome {
    let bytes = run.read("trajectory", &a.trajectory)?;
    let t = Trajectory::read_csv("target", 0, bytes.as_slice())?;
    let g = gap_summary_with(&t, a.window.from, a.window.to, a.baseline.into())?;
    let mut table = run.table(&["from", "to", "cumulative_actual", "cumulative_counterfactual", "percent_reduction"])?;
    table.row([
        a.window.from.to_string(),
        a.window.to.to_string(),
        num(g.cumulative_actual),
        num(g.cumulative_counterfactual),
        num(g.percent_reduction),
    ])?;
    run.save_table("gap.csv", table)?;
    println!(
        "days {}..{}: actual {}, counterfactual {}, reduction {:.2}%",
        a.window.from, a.window.to, g.cumulative_actual, g.cumulative_counterfactual, g.percent_reduction
    );
    Ok(())
}

fn synth_gen(run: &mut Run, a: &SynthGenArgs, seed: u64) -> Outcome {
    let regimes = a
        .regimes
        .0
        .iter()
        .map(|name| {
            let mut cfg = SirConfig::regime(name)?;
            cfg.t0 = a.t0;
            if let Some(s) = a.noise {
                cfg.noise_sigma = s;
            }
            Ok((name.clone(), cfg))
        })
        .collect::<Result<Vec<_>, Error>>()?;
    let sp = generate_panel(a.units, &regimes, a.jitter, a.days, seed)?;
    let bytes = panel_bytes(run, &sp.cases)?;
    run.save(&a.out, &bytes)?;
    let bytes = panel_bytes(run, &sp.deaths)?;
    run.save("deaths.csv", &bytes)?;

    let mut t = run.table(&["unit", "regime"])?;
    for (u, r) in &sp.labels {
        t.row([u, r])?;
    }
    run.save_table("labels.csv", t)?;

    let mut t = run.table(&["unit", "population", "region", "intervention_date"])?;
    for (u, m) in sp.cases.meta() {
        let dates: Vec<String> = m.intervention_dates.iter().map(|d| d.to_string()).collect();
        t.row([
            u.clone(),
            m.population.to_string(),
            m.region.clone().unwrap_or_default(),
            dates.join(";"),
        ])?;
    }
    run.save_table("meta.csv", t)?;
    println!("{} units over {} days, regimes {}", a.units, a.days, a.regimes.0.join(","));
    Ok(())
}
