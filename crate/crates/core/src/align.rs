//! Relative-time alignment of panel rows.
//!
//! Each included unit gets an offset: the calendar index of its own day zero.
//! Relative day `r` of a unit is calendar index `offset + r` of the base panel.

use std::collections::BTreeMap;

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::Panel;

pub const DEFAULT_THRESHOLD: f64 = 100.0;
pub const DEFAULT_DROP_PCT: f64 = 25.0;
pub const DEFAULT_SUSTAIN_DAYS: usize = 7;
const MOBILITY_SMOOTHING: usize = 7;

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Exclusion {
    pub unit: String,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AlignmentRule {
    Threshold {
        threshold: f64,
        per_capita: bool,
    },
    Intervention {
        #[serde(default)]
        overrides: BTreeMap<String, NaiveDate>,
    },
    MobilityDrop {
        drop_pct: f64,
        sustain_days: usize,
    },
}

impl AlignmentRule {
    /// Aligns `panel`. The mobility rule infers day zero from `mobility`.
    pub fn apply(&self, panel: &Panel, mobility: Option<&Panel>) -> Result<AlignedPanel> {
        match self {
            AlignmentRule::Threshold {
                threshold,
                per_capita,
            } => align_by_threshold(panel, *threshold, *per_capita),
            AlignmentRule::Intervention { overrides } => {
                align_by_intervention_with(panel, overrides)
            }
            AlignmentRule::MobilityDrop {
                drop_pct,
                sustain_days,
            } => {
                let mobility = mobility.ok_or_else(|| {
                    Error::InvalidParameter("mobility rule needs a mobility panel".into())
                })?;
                let dates = infer_lockdown_from_mobility(mobility, *drop_pct, *sustain_days)?;
                align_by_dates(panel, &dates, "no mobility-inferred lockdown")
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AlignedPanel {
    base: Panel,
    offsets: Vec<(String, i64)>,
    excluded: Vec<Exclusion>,
}

impl AlignedPanel {
    /// Offsets must name units of `base`; they are stored in base row order.
    pub fn new(
        base: Panel,
        offsets: &BTreeMap<String, i64>,
        excluded: Vec<Exclusion>,
    ) -> Result<Self> {
        for unit in offsets.keys() {
            if base.unit_index(unit).is_none() {
                return Err(Error::UnknownUnit(unit.clone()));
            }
        }
        let offsets = base
            .units()
            .iter()
            .filter_map(|u| offsets.get(u).map(|&o| (u.clone(), o)))
            .collect();
        Ok(AlignedPanel {
            base,
            offsets,
            excluded,
        })
    }

    pub fn base(&self) -> &Panel {
        &self.base
    }

    pub fn offsets(&self) -> &[(String, i64)] {
        &self.offsets
    }

    pub fn units(&self) -> impl Iterator<Item = &str> {
        self.offsets.iter().map(|(u, _)| u.as_str())
    }

    pub fn offset(&self, unit: &str) -> Option<i64> {
        self.offsets.iter().find(|(u, _)| u == unit).map(|(_, o)| *o)
    }

    pub fn excluded(&self) -> &[Exclusion] {
        &self.excluded
    }

    /// Day-zero calendar date of a unit, when it lies inside the calendar.
    pub fn t0_date(&self, unit: &str) -> Option<NaiveDate> {
        let o = self.offset(unit)?;
        usize::try_from(o).ok().and_then(|i| self.base.dates().get(i).copied())
    }

    /// `(min_rel, max_rel)` over all included units.
    pub fn horizon(&self) -> (i64, i64) {
        let last = self.base.n_days() as i64 - 1;
        let min = self.offsets.iter().map(|(_, o)| -o).min().unwrap_or(0);
        let max = self.offsets.iter().map(|(_, o)| last - o).max().unwrap_or(0);
        (min, max)
    }

    pub fn rel_value(&self, unit: &str, rel: i64) -> Option<f64> {
        let o = self.offset(unit)?;
        let i = self.base.unit_index(unit)?;
        self.base.value(i, o + rel)
    }

    /// Relative days `start..=end` of one unit; cells outside the calendar are missing.
    pub fn rel_series(&self, unit: &str, start: i64, end: i64) -> Result<Vec<Option<f64>>> {
        self.rel_series_shifted(unit, start, end, 0)
    }

    /// Like [`rel_series`](Self::rel_series) with the unit's day zero moved by `shift` days.
    pub fn rel_series_shifted(
        &self,
        unit: &str,
        start: i64,
        end: i64,
        shift: i64,
    ) -> Result<Vec<Option<f64>>> {
        let o = self
            .offset(unit)
            .ok_or_else(|| Error::UnknownUnit(unit.to_string()))?;
        let i = self.base.unit_index(unit).expect("offsets name base units");
        Ok((start..=end).map(|r| self.base.value(i, o + shift + r)).collect())
    }

    /// The relative-time matrix over [`horizon`](Self::horizon), rows in unit order.
    pub fn rel_values(&self) -> Vec<Vec<Option<f64>>> {
        let (lo, hi) = self.horizon();
        self.offsets
            .iter()
            .map(|(u, _)| self.rel_series(u, lo, hi).expect("included unit"))
            .collect()
    }

    /// Relative days from day zero through the unit's last present observation.
    pub fn rel_days_available(&self, unit: &str) -> usize {
        let (Some(o), Some(i)) = (self.offset(unit), self.base.unit_index(unit)) else {
            return 0;
        };
        self.base
            .row(i)
            .iter()
            .rposition(Option::is_some)
            .map_or(0, |last| (last as i64 - o + 1).max(0) as usize)
    }

    /// Last relative day with a present observation.
    pub fn last_rel_day(&self, unit: &str) -> Option<i64> {
        let o = self.offset(unit)?;
        let i = self.base.unit_index(unit)?;
        self.base
            .row(i)
            .iter()
            .rposition(Option::is_some)
            .map(|last| last as i64 - o)
    }
}

/// Day zero = first calendar day whose value (per million when `per_capita`)
/// reaches `threshold`.
pub fn align_by_threshold(panel: &Panel, threshold: f64, per_capita: bool) -> Result<AlignedPanel> {
    if !(threshold > 0.0) {
        return Err(Error::InvalidParameter("threshold must be positive".into()));
    }
    let source = if per_capita {
        panel.per_million()?
    } else {
        panel.clone()
    };
    let crossings: Vec<Option<usize>> = source
        .rows()
        .par_iter()
        .map(|row| row.iter().position(|c| c.is_some_and(|v| v >= threshold)))
        .collect();
    let mut offsets = BTreeMap::new();
    let mut excluded = Vec::new();
    for (unit, crossing) in panel.units().iter().zip(crossings) {
        match crossing {
            Some(i) => {
                offsets.insert(unit.clone(), i as i64);
            }
            None => excluded.push(Exclusion {
                unit: unit.clone(),
                reason: format!("never reaches {threshold}"),
            }),
        }
    }
    if offsets.is_empty() {
        return Err(Error::EmptyAlignment);
    }
    AlignedPanel::new(panel.clone(), &offsets, excluded)
}

/// Day zero = each unit's intervention date from metadata (latest announced measure).
pub fn align_by_intervention(panel: &Panel) -> Result<AlignedPanel> {
    align_by_intervention_with(panel, &BTreeMap::new())
}

/// As [`align_by_intervention`], with explicit per-unit dates taking precedence.
pub fn align_by_intervention_with(
    panel: &Panel,
    overrides: &BTreeMap<String, NaiveDate>,
) -> Result<AlignedPanel> {
    let dates: BTreeMap<String, NaiveDate> = panel
        .units()
        .iter()
        .filter_map(|u| {
            overrides
                .get(u)
                .copied()
                .or_else(|| panel.meta_of(u).and_then(|m| m.intervention_date()))
                .map(|d| (u.clone(), d))
        })
        .collect();
    align_by_dates(panel, &dates, "no intervention date")
}

/// Day zero = the given calendar date per unit. Units without a date are excluded.
pub fn align_by_dates(
    panel: &Panel,
    dates: &BTreeMap<String, NaiveDate>,
    missing_reason: &str,
) -> Result<AlignedPanel> {
    let mut offsets = BTreeMap::new();
    let mut excluded = Vec::new();
    for unit in panel.units() {
        let Some(&date) = dates.get(unit) else {
            excluded.push(Exclusion {
                unit: unit.clone(),
                reason: missing_reason.to_string(),
            });
            continue;
        };
        let index = panel.date_index(date).ok_or_else(|| Error::Range {
            unit: unit.clone(),
            date: date.to_string(),
        })?;
        offsets.insert(unit.clone(), index as i64);
    }
    if offsets.is_empty() {
        return Err(Error::EmptyAlignment);
    }
    AlignedPanel::new(panel.clone(), &offsets, excluded)
}

/// Infers an implicit lockdown from a percent-change-from-baseline mobility panel.
///
/// A day qualifies once the trailing 7-day mean is at or below `-drop_pct` and
/// stays there for `sustain_days` consecutive days starting that day. The
/// reported date is the onset of the drop: the qualifying day is moved back
/// over the run of raw values already at or below `-drop_pct`, which removes
/// the lag introduced by smoothing. Units that never qualify are omitted.
pub fn infer_lockdown_from_mobility(
    mobility: &Panel,
    drop_pct: f64,
    sustain_days: usize,
) -> Result<BTreeMap<String, NaiveDate>> {
    if sustain_days == 0 || sustain_days > mobility.n_days() {
        return Err(Error::InvalidParameter(format!(
            "sustain days must be in 1..={}, got {sustain_days}",
            mobility.n_days()
        )));
    }
    let smoothed = mobility.moving_average(MOBILITY_SMOOTHING)?;
    let limit = -drop_pct;
    let found: Vec<Option<usize>> = mobility
        .rows()
        .par_iter()
        .zip(smoothed.rows().par_iter())
        .map(|(raw, ma)| {
            let below = |c: &Option<f64>| c.is_some_and(|v| v <= limit);
            let qualifying = ma
                .windows(sustain_days)
                .position(|w| w.iter().all(below))?;
            let onset = (0..=qualifying)
                .rev()
                .take_while(|&d| below(&raw[d]))
                .last()
                .unwrap_or(qualifying);
            Some(onset)
        })
        .collect();
    Ok(mobility
        .units()
        .iter()
        .zip(found)
        .filter_map(|(u, day)| day.map(|d| (u.clone(), mobility.dates()[d])))
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Split {
    pub donors: Vec<String>,
    pub targets: Vec<String>,
    /// Units with fewer than `train_days` aligned days.
    pub unused: Vec<String>,
    pub split_index: usize,
}

/// Donors have at least `test_up_to` aligned days; targets at least
/// `train_days` but fewer than `test_up_to`.
pub fn train_test_split(a: &AlignedPanel, train_days: usize, test_up_to: usize) -> Result<Split> {
    if train_days == 0 || train_days >= test_up_to {
        return Err(Error::InvalidParameter(format!(
            "need 0 < train days ({train_days}) < test-up-to ({test_up_to})"
        )));
    }
    let mut split = Split {
        donors: Vec::new(),
        targets: Vec::new(),
        unused: Vec::new(),
        split_index: train_days,
    };
    for unit in a.units() {
        let n = a.rel_days_available(unit);
        let bucket = if n >= test_up_to {
            &mut split.donors
        } else if n >= train_days {
            &mut split.targets
        } else {
            &mut split.unused
        };
        bucket.push(unit.to_string());
    }
    if split.donors.is_empty() {
        return Err(Error::EmptyDonor(format!(
            "no unit has {test_up_to} aligned days"
        )));
    }
    Ok(split)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::{Metric, MetricKind, UnitMeta};

    fn day0() -> NaiveDate {
        "2020-03-01".parse().unwrap()
    }

    fn panel(rows: &[(&str, Vec<f64>)]) -> Panel {
        Panel::from_dense(
            rows.iter().map(|(u, _)| u.to_string()).collect(),
            day0(),
            rows.iter().map(|(_, r)| r.clone()).collect(),
            Metric::new("cumulative-deaths", MetricKind::Cumulative),
        )
        .unwrap()
    }

    #[test]
    fn first_crossing() {
        let p = panel(&[("a", vec![10.0, 50.0, 120.0, 300.0]), ("b", vec![0.0, 10.0, 50.0, 90.0])]);
        let a = align_by_threshold(&p, 100.0, false).unwrap();
        assert_eq!(a.offset("a"), Some(2));
        assert_eq!(a.offset("b"), None);
        assert_eq!(a.excluded()[0].unit, "b");
        assert_eq!(a.rel_value("a", 1), Some(300.0));
        assert_eq!(a.rel_value("a", -2), Some(10.0));
    }

    #[test]
    fn exact_hit_aligns_that_day() {
        let p = panel(&[("a", vec![10.0, 100.0, 120.0])]);
        assert_eq!(align_by_threshold(&p, 100.0, false).unwrap().offset("a"), Some(1));
    }

    #[test]
    fn nobody_crosses() {
        let p = panel(&[("a", vec![10.0, 90.0])]);
        assert!(matches!(align_by_threshold(&p, 100.0, false), Err(Error::EmptyAlignment)));
        assert!(align_by_threshold(&p, 0.0, false).is_err());
    }

    #[test]
    fn per_capita_threshold() {
        let mut p = panel(&[("a", vec![10.0, 50.0, 120.0])]);
        p.set_meta("a", UnitMeta::new(500_000));
        // 50 per 500k = 100 per million
        assert_eq!(align_by_threshold(&p, 100.0, true).unwrap().offset("a"), Some(1));
    }

    #[test]
    fn intervention_uses_latest_measure() {
        let mut p = panel(&[("a", vec![0.0; 60]), ("b", vec![0.0; 60]), ("c", vec![0.0; 60])]);
        p.set_meta("a", UnitMeta::new(1).with_intervention(day0() + chrono::Days::new(40)));
        let mut m = UnitMeta::new(1);
        for d in [30, 35, 38] {
            m = m.with_intervention(day0() + chrono::Days::new(d));
        }
        p.set_meta("b", m);
        let a = align_by_intervention(&p).unwrap();
        assert_eq!(a.offset("a"), Some(40));
        assert_eq!(a.offset("b"), Some(38));
        assert_eq!(a.excluded().len(), 1);
        assert_eq!(a.excluded()[0].unit, "c");
    }

    #[test]
    fn intervention_override_wins() {
        let mut p = panel(&[("a", vec![0.0; 10])]);
        p.set_meta("a", UnitMeta::new(1).with_intervention(day0() + chrono::Days::new(4)));
        let overrides = BTreeMap::from([("a".to_string(), day0() + chrono::Days::new(2))]);
        assert_eq!(align_by_intervention_with(&p, &overrides).unwrap().offset("a"), Some(2));
    }

    #[test]
    fn intervention_outside_calendar() {
        let mut p = panel(&[("a", vec![0.0; 10])]);
        p.set_meta("a", UnitMeta::new(1).with_intervention(day0() + chrono::Days::new(30)));
        match align_by_intervention(&p) {
            Err(Error::Range { unit, .. }) => assert_eq!(unit, "a"),
            other => panic!("unexpected {other:?}"),
        }
    }

    fn mobility(rows: &[(&str, Vec<f64>)]) -> Panel {
        Panel::from_dense(
            rows.iter().map(|(u, _)| u.to_string()).collect(),
            day0(),
            rows.iter().map(|(_, r)| r.clone()).collect(),
            Metric::new("mobility-pct", MetricKind::Level),
        )
        .unwrap()
    }

    #[test]
    fn mobility_step_is_found_at_onset() {
        let step: Vec<f64> = (0..60).map(|d| if d >= 20 { -40.0 } else { 0.0 }).collect();
        let wobble: Vec<f64> = (0..60).map(|d| -10.0 * ((d % 7) as f64 / 6.0)).collect();
        let m = mobility(&[("step", step), ("wobble", wobble)]);
        let dates = infer_lockdown_from_mobility(&m, 25.0, 7).unwrap();
        assert_eq!(dates.get("step"), Some(&(day0() + chrono::Days::new(20))));
        assert!(!dates.contains_key("wobble"));
    }

    #[test]
    fn sustain_longer_than_series() {
        let m = mobility(&[("a", vec![0.0; 5])]);
        assert!(matches!(
            infer_lockdown_from_mobility(&m, 25.0, 6),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn split_by_activity() {
        let mut rows = Vec::new();
        for (u, active) in [("d", 40usize), ("t", 20), ("x", 10)] {
            let mut r = vec![0.0; 60 - active];
            r.extend(vec![200.0; active]);
            rows.push((u, r));
        }
        let p = panel(&rows);
        let a = align_by_threshold(&p, 100.0, false).unwrap();
        let s = train_test_split(&a, 15, 30).unwrap();
        assert_eq!(s.donors, vec!["d"]);
        assert_eq!(s.targets, vec!["t"]);
        assert_eq!(s.unused, vec!["x"]);
        assert_eq!(s.split_index, 15);
        assert!(train_test_split(&a, 30, 15).is_err());
        assert!(matches!(train_test_split(&a, 15, 50), Err(Error::EmptyDonor(_))));
    }

    #[test]
    fn horizon_spans_all_units() {
        let p = panel(&[("a", vec![0.0, 200.0, 200.0, 200.0]), ("b", vec![0.0, 0.0, 0.0, 200.0])]);
        let a = align_by_threshold(&p, 100.0, false).unwrap();
        assert_eq!(a.horizon(), (-3, 2));
        let rel = a.rel_values();
        assert_eq!(rel[0].len(), 6);
        assert_eq!(rel[1][3], Some(200.0));
        assert_eq!(rel[0][0], None);
    }
}
