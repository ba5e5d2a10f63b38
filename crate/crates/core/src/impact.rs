//! Descriptive intervention-impact metrics: epidemic peaks relative to the
//! intervention day and counterfactual gap summaries.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::align::{AlignedPanel, Exclusion};
use crate::error::{Error, Result};
use crate::panel::MetricKind;
use crate::rsc::Trajectory;

pub const DEFAULT_SMOOTH_WINDOW: usize = 7;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PeakStats {
    pub unit: String,
    /// Largest (smoothed) daily value.
    pub peak_value: f64,
    /// Peak day minus intervention day; negative when the peak came first.
    pub days_to_peak: i64,
    /// Metric level on the intervention day, as stored in the panel.
    pub value_at_intervention: Option<f64>,
    /// The peak is on the unit's last observed day and may lie beyond the data.
    pub right_censored: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PeakReport {
    pub peaks: Vec<PeakStats>,
    pub excluded: Vec<Exclusion>,
}

/// Peak of each unit's daily series, relative to its intervention day.
///
/// Cumulative panels are differenced first. With `smooth_window = Some(w)`
/// the daily series is a trailing `w`-day moving average; `None` uses raw
/// values. Ties go to the earliest day.
pub fn peak_analysis(a: &AlignedPanel, smooth_window: Option<usize>) -> Result<PeakReport> {
    let base = a.base();
    let daily = match base.metric().kind {
        MetricKind::Cumulative => base.to_daily()?.0,
        _ => base.clone(),
    };
    let series = match smooth_window {
        Some(w) => daily.moving_average(w)?,
        None => daily,
    };
    let results: Vec<(String, Option<PeakStats>)> = a
        .offsets()
        .par_iter()
        .map(|(unit, offset)| {
            let row = series.row_of(unit).expect("aligned units exist");
            let peak = row
                .iter()
                .enumerate()
                .filter_map(|(i, v)| v.map(|v| (i, v)))
                .fold(None, |best: Option<(usize, f64)>, (i, v)| match best {
                    Some((_, b)) if b >= v => best,
                    _ => Some((i, v)),
                });
            let stats = peak.map(|(i, v)| {
                let last = row.iter().rposition(Option::is_some).expect("has a value");
                PeakStats {
                    unit: unit.clone(),
                    peak_value: v,
                    days_to_peak: i as i64 - offset,
                    value_at_intervention: a.rel_value(unit, 0),
                    right_censored: i == last,
                }
            });
            (unit.clone(), stats)
        })
        .collect();
    let mut report = PeakReport {
        peaks: Vec::new(),
        excluded: Vec::new(),
    };
    for (unit, stats) in results {
        match stats {
            Some(s) => report.peaks.push(s),
            None => report.excluded.push(Exclusion {
                unit,
                reason: "no observations".into(),
            }),
        }
    }
    Ok(report)
}

/// Which total a reduction is expressed against.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GapBaseline {
    /// `(counterfactual - actual) / counterfactual`: the counterfactual is the
    /// world without the intervention.
    #[default]
    Counterfactual,
    /// `(actual - counterfactual) / actual`: the counterfactual is the world
    /// with an earlier or stricter intervention.
    Actual,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapSummary {
    pub cumulative_actual: f64,
    pub cumulative_counterfactual: f64,
    pub baseline: GapBaseline,
    pub percent_reduction: f64,
}

/// Sums actual and counterfactual over relative days `from..to` (half-open)
/// and reports `(counterfactual - actual) / counterfactual × 100`.
///
/// Intended for daily trajectories; the window must lie inside the
/// trajectory and have an actual value on every day.
pub fn gap_summary(t: &Trajectory, from: i64, to: i64) -> Result<GapSummary> {
    gap_summary_with(t, from, to, GapBaseline::Counterfactual)
}

/// [`gap_summary`] with the reduction taken relative to `baseline`.
pub fn gap_summary_with(
    t: &Trajectory,
    from: i64,
    to: i64,
    baseline: GapBaseline,
) -> Result<GapSummary> {
    let (cumulative_actual, cumulative_counterfactual) = gap_totals(t, from, to)?;
    let (base, other) = match baseline {
        GapBaseline::Counterfactual => (cumulative_counterfactual, cumulative_actual),
        GapBaseline::Actual => (cumulative_actual, cumulative_counterfactual),
    };
    if !(base > 0.0) {
        return Err(Error::UndefinedReduction { total: base });
    }
    Ok(GapSummary {
        cumulative_actual,
        cumulative_counterfactual,
        baseline,
        percent_reduction: (base - other) / base * 100.0,
    })
}

/// `(Σ actual, Σ counterfactual)` over `from..to`.
pub fn gap_totals(t: &Trajectory, from: i64, to: i64) -> Result<(f64, f64)> {
    if from >= to {
        return Err(Error::InvalidParameter(format!("empty window {from}:{to}")));
    }
    let (Some(i), Some(j)) = (t.index_of(from), t.index_of(to - 1)) else {
        return Err(Error::InvalidParameter(format!(
            "window {from}:{to} is outside the trajectory"
        )));
    };
    let mut actual = 0.0;
    let mut cf = 0.0;
    for k in i..=j {
        let a = t.actual[k].ok_or_else(|| {
            Error::InvalidParameter(format!("no actual value on relative day {}", t.rel_days[k]))
        })?;
        actual += a;
        cf += t.counterfactual[k];
    }
    Ok((actual, cf))
}
