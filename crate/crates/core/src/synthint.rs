//! Synthetic interventions: the counterfactual of a unit under another
//! region's policy regime, built from stage-matched donors of that region.

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::MaskedMatrix;
use crate::panel::{MetricKind, Panel};
use crate::rsc::{fit, FitOptions, RscModel, Trajectory};

pub const DEFAULT_TOLERANCE: f64 = 0.5;
/// Rank used once the donor pool has at least [`LARGE_POOL`] members.
pub const DEFAULT_RANK: usize = 3;
pub const LARGE_POOL: usize = 30;

/// Donors match a target when their cumulative cases per million on
/// `reference_date` are within `tolerance` (a fraction) of the target's.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageFilter {
    pub reference_date: NaiveDate,
    pub tolerance: f64,
}

impl StageFilter {
    pub fn new(reference_date: NaiveDate, tolerance: f64) -> Result<Self> {
        let f = StageFilter {
            reference_date,
            tolerance,
        };
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0 && self.tolerance < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "tolerance must be in (0, 1), got {}",
                self.tolerance
            )));
        }
        Ok(())
    }
}

/// A named set of units sharing a policy regime.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DonorRegion {
    pub tag: String,
    pub members: Vec<String>,
}

impl DonorRegion {
    pub fn new(tag: impl Into<String>, mut members: Vec<String>) -> Self {
        members.sort();
        members.dedup();
        DonorRegion {
            tag: tag.into(),
            members,
        }
    }

    /// Units whose metadata region equals `tag`.
    pub fn from_meta(panel: &Panel, tag: &str) -> Result<Self> {
        let members: Vec<String> = panel
            .units()
            .iter()
            .filter(|u| panel.meta_of(u).and_then(|m| m.region.as_deref()) == Some(tag))
            .cloned()
            .collect();
        if members.is_empty() {
            return Err(Error::EmptyDonor(format!("no unit has region '{tag}'")));
        }
        Ok(DonorRegion::new(tag, members))
    }

    pub fn contains(&self, unit: &str) -> bool {
        self.members.binary_search_by(|m| m.as_str().cmp(unit)).is_ok()
    }
}

/// Cumulative cases per million of `unit` on `date`.
pub fn cases_per_million(panel: &Panel, unit: &str, date: NaiveDate) -> Result<f64> {
    let row = panel.row_of(unit)?;
    let day = panel.date_index(date).ok_or_else(|| Error::Range {
        unit: unit.to_string(),
        date: date.to_string(),
    })?;
    let meta = panel.meta_of(unit).ok_or_else(|| Error::Metadata {
        unit: unit.to_string(),
        message: "no population".into(),
    })?;
    let value = row[day].ok_or_else(|| {
        Error::InvalidParameter(format!("'{unit}' has no value on {date}"))
    })?;
    Ok(value / meta.population as f64 * 1e6)
}

fn require_cumulative(panel: &Panel) -> Result<()> {
    if panel.metric().kind != MetricKind::Cumulative {
        return Err(Error::Metric(format!(
            "stage matching needs cumulative cases, '{}' is not cumulative",
            panel.metric().label
        )));
    }
    Ok(())
}

/// Donor-region members at a similar stage as `target`; the target itself is
/// never returned. Members without a value on the reference date are skipped.
pub fn filter_donors(
    region: &DonorRegion,
    target: &str,
    panel: &Panel,
    f: &StageFilter,
) -> Result<Vec<String>> {
    f.validate()?;
    require_cumulative(panel)?;
    let cpm_t = cases_per_million(panel, target, f.reference_date)?;
    let mut matched = Vec::new();
    let mut nearest: Option<(&str, f64)> = None;
    for d in region.members.iter().filter(|d| *d != target) {
        let cpm_d = match cases_per_million(panel, d, f.reference_date) {
            Ok(v) => v,
            Err(Error::InvalidParameter(_)) => continue,
            Err(e) => return Err(e),
        };
        let gap = (cpm_d - cpm_t).abs();
        if gap <= f.tolerance * cpm_t {
            matched.push(d.clone());
        } else if nearest.is_none_or(|(_, best)| gap < (best - cpm_t).abs()) {
            nearest = Some((d, cpm_d));
        }
    }
    if matched.is_empty() {
        let hint = match nearest {
            Some((d, v)) => format!(
                "nearest is '{d}' at {v:.1} ({:.0}% away)",
                if cpm_t > 0.0 { (v - cpm_t).abs() / cpm_t * 100.0 } else { f64::INFINITY }
            ),
            None => "region has no other units with data".into(),
        };
        return Err(Error::EmptyDonor(format!(
            "no donor in '{}' within {:.0}% of '{target}' ({cpm_t:.1} cases per million on {}); {hint}",
            region.tag,
            f.tolerance * 100.0,
            f.reference_date
        )));
    }
    Ok(matched)
}

/// Rank for a donor pool of `n` units: [`DEFAULT_RANK`] for large pools,
/// one per ten donors (at least one) otherwise.
pub fn default_rank(n: usize) -> usize {
    if n >= LARGE_POOL {
        DEFAULT_RANK
    } else {
        (n / 10).max(1)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SiOutcome {
    pub model: RscModel,
    pub trajectory: Trajectory,
    pub donors: Vec<String>,
    /// Target's cumulative cases per million on the reference date.
    pub cpm_ref: f64,
}

/// Counterfactual of `target` under the donor region's regime.
///
/// Works on cases per million over the panel's calendar: training covers the
/// days before the reference date, the projection the rest. `rank = None`
/// applies [`default_rank`]. Trajectory days are calendar offsets relative
/// to the reference date.
pub fn synthetic_intervention(
    target: &str,
    region: &DonorRegion,
    panel: &Panel,
    f: &StageFilter,
    rank: Option<usize>,
) -> Result<SiOutcome> {
    let donors = filter_donors(region, target, panel, f)?;
    si_with_donors(target, region, &panel.per_million()?, f, rank, donors)
}

fn si_with_donors(
    target: &str,
    region: &DonorRegion,
    cpm: &Panel,
    f: &StageFilter,
    rank: Option<usize>,
    donors: Vec<String>,
) -> Result<SiOutcome> {
    let t0 = cpm
        .date_index(f.reference_date)
        .expect("filter checked the reference date");
    let rows = donors
        .iter()
        .map(|d| cpm.row_of(d).map(<[_]>::to_vec))
        .collect::<Result<Vec<_>>>()?;
    let matrix = MaskedMatrix::from_rows(&rows)?;
    let series = cpm.row_of(target)?.to_vec();
    let k = rank.unwrap_or_else(|| default_rank(donors.len()));
    let model = fit(&donors, &matrix, target, &series, t0, &FitOptions::with_rank(k))?
        .with_start_rel(-(t0 as i64));
    let cpm_ref = series[t0].expect("filter checked the target value");
    let trajectory = model.project_all().with_tag(region.tag.clone());
    Ok(SiOutcome {
        model,
        trajectory,
        donors,
        cpm_ref,
    })
}

/// Exponent of the reference-level normaliser in the NMSE.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NmseScale {
    /// Divide squared errors by the squared reference level (dimensionless).
    #[default]
    Squared,
    /// Divide by the reference level itself.
    Linear,
}

/// How per-day errors are averaged within a bin.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NmseAggregation {
    /// Mean over days per target, then over targets.
    #[default]
    DaysThenUnits,
    /// One mean over every (target, day) pair.
    Pooled,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NmseConfig {
    pub scale: NmseScale,
    pub aggregation: NmseAggregation,
}

/// Mean over post-period days with an actual value of
/// `(counterfactual - actual)² / level^e`, `e` set by `scale`.
/// Returns the mean and the number of days used.
pub fn nmse(t: &Trajectory, level: f64, scale: NmseScale) -> Result<(f64, usize)> {
    if !(level > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "reference level must be positive, got {level}"
        )));
    }
    let denom = match scale {
        NmseScale::Squared => level * level,
        NmseScale::Linear => level,
    };
    let (sum, n) = t
        .rel_days
        .iter()
        .zip(&t.actual)
        .zip(&t.counterfactual)
        .filter(|((&r, a), _)| r >= t.t0 && a.is_some())
        .fold((0.0, 0usize), |(s, n), ((_, a), c)| {
            (s + (c - a.unwrap()).powi(2), n + 1)
        });
    if n == 0 {
        return Err(Error::InvalidParameter(format!(
            "'{}' has no post-period observations",
            t.target_id
        )));
    }
    Ok((sum / n as f64 / denom, n))
}

/// Bin edges in cases per million; bins are `[e_i, e_{i+1})` except the last,
/// which also includes its upper edge.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinSpec {
    edges: Vec<f64>,
}

impl BinSpec {
    pub fn new(edges: Vec<f64>) -> Result<Self> {
        if edges.len() < 2 {
            return Err(Error::InvalidParameter("need at least two bin edges".into()));
        }
        if edges.iter().any(|e| !e.is_finite()) || edges.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidParameter(
                "bin edges must be finite and strictly increasing".into(),
            ));
        }
        Ok(BinSpec { edges })
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn n_bins(&self) -> usize {
        self.edges.len() - 1
    }

    pub fn bounds(&self, bin: usize) -> (f64, f64) {
        (self.edges[bin], self.edges[bin + 1])
    }

    pub fn assign(&self, x: f64) -> Option<usize> {
        let last = self.n_bins() - 1;
        if x == self.edges[last + 1] {
            return Some(last);
        }
        (0..=last).find(|&b| self.edges[b] <= x && x < self.edges[b + 1])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SiComparison {
    pub target_id: String,
    pub in_donor_region: bool,
    pub nmse: f64,
    /// Post-period days the NMSE averages over.
    pub days: usize,
    pub cpm_ref: f64,
    pub bin: Option<usize>,
    pub donor_count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BinRow {
    pub low: f64,
    pub high: f64,
    pub mean_nmse_in: Option<f64>,
    pub mean_nmse_out: Option<f64>,
    pub count_in: usize,
    pub count_out: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RegionComparison {
    pub rows: Vec<BinRow>,
    pub comparisons: Vec<SiComparison>,
    /// Targets whose reference level falls outside every bin.
    pub out_of_range: Vec<String>,
    /// Targets that could not be estimated, with the reason.
    pub failed: Vec<(String, String)>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CompareOptions {
    pub rank: Option<usize>,
    pub nmse: NmseConfig,
}

/// Synthetic interventions for every target, summarised per case-density bin.
///
/// In-region targets measure prediction error, out-of-region targets the gap
/// between their own course and the donor regime. Targets are processed in
/// sorted order; a target without matching donors or usable data goes to
/// `failed` instead of aborting the run.
pub fn compare_regions(
    targets: &[String],
    region: &DonorRegion,
    panel: &Panel,
    f: &StageFilter,
    bins: &BinSpec,
    opts: &CompareOptions,
) -> Result<RegionComparison> {
    f.validate()?;
    require_cumulative(panel)?;
    if panel.date_index(f.reference_date).is_none() {
        return Err(Error::Range {
            unit: String::new(),
            date: f.reference_date.to_string(),
        });
    }
    let mut targets = targets.to_vec();
    targets.sort();
    targets.dedup();
    let cpm = panel.per_million()?;
    let results: Vec<(String, Result<SiComparison>)> = targets
        .par_iter()
        .map(|t| {
            let r = filter_donors(region, t, panel, f)
                .and_then(|donors| si_with_donors(t, region, &cpm, f, opts.rank, donors))
                .and_then(|o| {
                    let (value, days) = nmse(&o.trajectory, o.cpm_ref, opts.nmse.scale)?;
                    Ok(SiComparison {
                        target_id: t.clone(),
                        in_donor_region: region.contains(t),
                        nmse: value,
                        days,
                        cpm_ref: o.cpm_ref,
                        bin: bins.assign(o.cpm_ref),
                        donor_count: o.donors.len(),
                    })
                });
            (t.clone(), r)
        })
        .collect();

    let mut comparisons = Vec::new();
    let mut failed = Vec::new();
    for (t, r) in results {
        match r {
            Ok(c) => comparisons.push(c),
            Err(e) => failed.push((t, e.to_string())),
        }
    }
    let out_of_range = comparisons
        .iter()
        .filter(|c| c.bin.is_none())
        .map(|c| c.target_id.clone())
        .collect();
    let rows = (0..bins.n_bins())
        .map(|b| {
            let (low, high) = bins.bounds(b);
            let group = |inside: bool| {
                let members: Vec<&SiComparison> = comparisons
                    .iter()
                    .filter(|c| c.bin == Some(b) && c.in_donor_region == inside)
                    .collect();
                (mean_nmse(&members, opts.nmse.aggregation), members.len())
            };
            let (mean_nmse_in, count_in) = group(true);
            let (mean_nmse_out, count_out) = group(false);
            BinRow {
                low,
                high,
                mean_nmse_in,
                mean_nmse_out,
                count_in,
                count_out,
            }
        })
        .collect();
    Ok(RegionComparison {
        rows,
        comparisons,
        out_of_range,
        failed,
    })
}

fn mean_nmse(members: &[&SiComparison], how: NmseAggregation) -> Option<f64> {
    if members.is_empty() {
        return None;
    }
    Some(match how {
        NmseAggregation::DaysThenUnits => {
            members.iter().map(|c| c.nmse).sum::<f64>() / members.len() as f64
        }
        NmseAggregation::Pooled => {
            let days: usize = members.iter().map(|c| c.days).sum();
            members.iter().map(|c| c.nmse * c.days as f64).sum::<f64>() / days as f64
        }
    })
}
