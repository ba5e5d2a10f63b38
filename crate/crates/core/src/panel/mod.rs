//! Unit × day observation panels.
//!
//! A [`Panel`] holds one metric for a set of units over a contiguous daily
//! calendar. Cells are `Option<f64>`; `None` marks a missing observation and
//! is carried through every transformation rather than being imputed.

mod io;

pub use io::{ingest_csv, read_csv, read_meta, load_meta, write_wide, CsvSchema};

use std::collections::BTreeMap;

use chrono::{Days, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    /// Running totals (cumulative cases, cumulative deaths).
    Cumulative,
    /// Per-day counts.
    Daily,
    /// Levels that are neither (mobility percent change, temperature).
    Level,
}

impl std::str::FromStr for MetricKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cumulative" => Ok(MetricKind::Cumulative),
            "daily" => Ok(MetricKind::Daily),
            "level" => Ok(MetricKind::Level),
            other => Err(Error::InvalidParameter(format!(
                "unknown metric kind '{other}' (expected cumulative, daily or level)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Metric {
    pub label: String,
    pub kind: MetricKind,
}

impl Metric {
    pub fn new(label: impl Into<String>, kind: MetricKind) -> Self {
        Metric {
            label: label.into(),
            kind,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnitMeta {
    pub population: u64,
    pub region: Option<String>,
    /// Announced measure dates; the latest one is the effective intervention.
    pub intervention_dates: Vec<NaiveDate>,
}

impl UnitMeta {
    pub fn new(population: u64) -> Self {
        UnitMeta {
            population,
            region: None,
            intervention_dates: Vec::new(),
        }
    }

    pub fn with_region(mut self, region: impl Into<String>) -> Self {
        self.region = Some(region.into());
        self
    }

    pub fn with_intervention(mut self, date: NaiveDate) -> Self {
        self.intervention_dates.push(date);
        self
    }

    /// The strictest measure, taken to be the last one announced.
    pub fn intervention_date(&self) -> Option<NaiveDate> {
        self.intervention_dates.iter().max().copied()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MissingMask {
    pub observed: Vec<Vec<bool>>,
    pub observed_fraction: f64,
}

/// A present cell that breaks the non-decreasing contract of a cumulative row.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Violation {
    pub unit: String,
    pub date: NaiveDate,
    pub value: f64,
    pub previous: Option<f64>,
}

/// A negative first difference produced by [`Panel::to_daily`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NegativeStep {
    pub unit: String,
    pub date: NaiveDate,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Panel {
    units: Vec<String>,
    dates: Vec<NaiveDate>,
    values: Vec<Vec<Option<f64>>>,
    metric: Metric,
    meta: BTreeMap<String, UnitMeta>,
}

impl Panel {
    /// Builds a panel whose calendar starts at `start` and spans the row length.
    pub fn new(
        units: Vec<String>,
        start: NaiveDate,
        values: Vec<Vec<Option<f64>>>,
        metric: Metric,
    ) -> Result<Self> {
        if units.len() != values.len() {
            return Err(Error::InvalidParameter(format!(
                "{} units but {} rows",
                units.len(),
                values.len()
            )));
        }
        let n_days = values.first().map_or(0, Vec::len);
        if let Some((i, _)) = values.iter().enumerate().find(|(_, r)| r.len() != n_days) {
            return Err(Error::InvalidParameter(format!(
                "row for '{}' has {} cells, expected {}",
                units[i],
                values[i].len(),
                n_days
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for u in &units {
            if !seen.insert(u.as_str()) {
                return Err(Error::Duplicate {
                    unit: u.clone(),
                    date: start.to_string(),
                });
            }
        }
        if values.iter().flatten().any(|v| v.is_some_and(|x| !x.is_finite())) {
            return Err(Error::InvalidParameter("non-finite cell value".into()));
        }
        let dates = (0..n_days)
            .map(|d| start + Days::new(d as u64))
            .collect();
        Ok(Panel {
            units,
            dates,
            values,
            metric,
            meta: BTreeMap::new(),
        })
    }

    /// Fully observed panel from plain rows.
    pub fn from_dense(
        units: Vec<String>,
        start: NaiveDate,
        rows: Vec<Vec<f64>>,
        metric: Metric,
    ) -> Result<Self> {
        let values = rows
            .into_iter()
            .map(|r| r.into_iter().map(Some).collect())
            .collect();
        Panel::new(units, start, values, metric)
    }

    pub fn with_meta(mut self, meta: BTreeMap<String, UnitMeta>) -> Self {
        self.meta = meta;
        self
    }

    pub fn set_meta(&mut self, unit: impl Into<String>, meta: UnitMeta) {
        self.meta.insert(unit.into(), meta);
    }

    pub fn units(&self) -> &[String] {
        &self.units
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn n_units(&self) -> usize {
        self.units.len()
    }

    pub fn n_days(&self) -> usize {
        self.dates.len()
    }

    pub fn metric(&self) -> &Metric {
        &self.metric
    }

    pub fn meta(&self) -> &BTreeMap<String, UnitMeta> {
        &self.meta
    }

    pub fn meta_of(&self, unit: &str) -> Option<&UnitMeta> {
        self.meta.get(unit)
    }

    pub fn rows(&self) -> &[Vec<Option<f64>>] {
        &self.values
    }

    pub fn row(&self, index: usize) -> &[Option<f64>] {
        &self.values[index]
    }

    pub fn unit_index(&self, unit: &str) -> Option<usize> {
        self.units.iter().position(|u| u == unit)
    }

    pub fn row_of(&self, unit: &str) -> Result<&[Option<f64>]> {
        self.unit_index(unit)
            .map(|i| self.values[i].as_slice())
            .ok_or_else(|| Error::UnknownUnit(unit.to_string()))
    }

    /// Cell lookup that tolerates out-of-calendar day indices.
    pub fn value(&self, unit: usize, day: i64) -> Option<f64> {
        if day < 0 {
            return None;
        }
        self.values[unit].get(day as usize).copied().flatten()
    }

    pub fn date_index(&self, date: NaiveDate) -> Option<usize> {
        let first = *self.dates.first()?;
        let offset = (date - first).num_days();
        (offset >= 0 && (offset as usize) < self.dates.len()).then_some(offset as usize)
    }

    /// Signed calendar index of a date, which may fall outside the panel.
    pub fn day_offset(&self, date: NaiveDate) -> Option<i64> {
        self.dates.first().map(|first| (date - *first).num_days())
    }

    pub fn mask(&self) -> MissingMask {
        let observed: Vec<Vec<bool>> = self
            .values
            .iter()
            .map(|r| r.iter().map(Option::is_some).collect())
            .collect();
        let total = self.n_units() * self.n_days();
        let present = observed.iter().flatten().filter(|&&b| b).count();
        MissingMask {
            observed,
            observed_fraction: if total == 0 {
                0.0
            } else {
                present as f64 / total as f64
            },
        }
    }

    /// Cells breaking non-negativity or monotonicity. Empty for non-cumulative metrics.
    pub fn monotonicity_violations(&self) -> Vec<Violation> {
        if self.metric.kind != MetricKind::Cumulative {
            return Vec::new();
        }
        let mut out = Vec::new();
        for (unit, row) in self.units.iter().zip(&self.values) {
            let mut previous: Option<f64> = None;
            for (date, cell) in self.dates.iter().zip(row) {
                let Some(v) = *cell else { continue };
                if v < 0.0 || previous.is_some_and(|p| v < p) {
                    out.push(Violation {
                        unit: unit.clone(),
                        date: *date,
                        value: v,
                        previous,
                    });
                }
                previous = Some(v);
            }
        }
        out
    }

    /// Sub-panel with the given units, in the given order.
    pub fn select_units(&self, units: &[String]) -> Result<Panel> {
        let values = units
            .iter()
            .map(|u| self.row_of(u).map(<[_]>::to_vec))
            .collect::<Result<Vec<_>>>()?;
        let meta = units
            .iter()
            .filter_map(|u| self.meta.get(u).map(|m| (u.clone(), m.clone())))
            .collect();
        Ok(Panel {
            units: units.to_vec(),
            dates: self.dates.clone(),
            values,
            metric: self.metric.clone(),
            meta,
        })
    }

    fn with_values(&self, values: Vec<Vec<Option<f64>>>, metric: Metric) -> Panel {
        Panel {
            units: self.units.clone(),
            dates: self.dates.clone(),
            values,
            metric,
            meta: self.meta.clone(),
        }
    }

    /// Trailing moving average over the `window` calendar days ending at each
    /// date, averaging only the present cells. The series start uses the
    /// shorter available prefix. Missing cells stay missing.
    pub fn moving_average(&self, window: usize) -> Result<Panel> {
        if window == 0 {
            return Err(Error::InvalidParameter("moving-average window must be ≥ 1".into()));
        }
        let values = self
            .values
            .iter()
            .map(|row| {
                (0..row.len())
                    .map(|t| {
                        row[t]?;
                        let lo = (t + 1).saturating_sub(window);
                        let (sum, n) = row[lo..=t]
                            .iter()
                            .flatten()
                            .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
                        Some(sum / n as f64)
                    })
                    .collect()
            })
            .collect();
        Ok(self.with_values(values, self.metric.clone()))
    }

    /// Scales each row to a per-million-inhabitants basis.
    pub fn per_million(&self) -> Result<Panel> {
        let mut values = Vec::with_capacity(self.n_units());
        for (unit, row) in self.units.iter().zip(&self.values) {
            let population = self
                .meta
                .get(unit)
                .map(|m| m.population)
                .filter(|&p| p >= 1)
                .ok_or_else(|| Error::Metadata {
                    unit: unit.clone(),
                    message: "missing population".into(),
                })?;
            let scale = 1_000_000.0 / population as f64;
            values.push(row.iter().map(|c| c.map(|v| v * scale)).collect());
        }
        let metric = Metric::new(format!("{}-per-million", self.metric.label), self.metric.kind);
        Ok(self.with_values(values, metric))
    }

    /// First difference of a cumulative panel. Negative steps are kept and reported.
    pub fn to_daily(&self) -> Result<(Panel, Vec<NegativeStep>)> {
        if self.metric.kind != MetricKind::Cumulative {
            return Err(Error::Metric(format!(
                "'{}' is not cumulative",
                self.metric.label
            )));
        }
        let mut negatives = Vec::new();
        let mut values = Vec::with_capacity(self.n_units());
        for (unit, row) in self.units.iter().zip(&self.values) {
            let mut out = Vec::with_capacity(row.len());
            for t in 0..row.len() {
                let cell = if t == 0 {
                    row[0]
                } else {
                    match (row[t], row[t - 1]) {
                        (Some(a), Some(b)) => Some(a - b),
                        _ => None,
                    }
                };
                if let Some(v) = cell.filter(|&v| t > 0 && v < 0.0) {
                    negatives.push(NegativeStep {
                        unit: unit.clone(),
                        date: self.dates[t],
                        value: v,
                    });
                }
                out.push(cell);
            }
            values.push(out);
        }
        let label = match self.metric.label.strip_prefix("cumulative") {
            Some(rest) => format!("daily{rest}"),
            None => format!("{}-daily", self.metric.label),
        };
        Ok((self.with_values(values, Metric::new(label, MetricKind::Daily)), negatives))
    }

    /// Running sum of a daily panel; missing cells stay missing and add nothing.
    pub fn to_cumulative(&self) -> Result<Panel> {
        if self.metric.kind != MetricKind::Daily {
            return Err(Error::Metric(format!("'{}' is not daily", self.metric.label)));
        }
        let values = self
            .values
            .iter()
            .map(|row| {
                let mut acc = 0.0;
                row.iter()
                    .map(|c| {
                        c.map(|v| {
                            acc += v;
                            acc
                        })
                    })
                    .collect()
            })
            .collect();
        let label = match self.metric.label.strip_prefix("daily") {
            Some(rest) => format!("cumulative{rest}"),
            None => format!("{}-cumulative", self.metric.label),
        };
        Ok(self.with_values(values, Metric::new(label, MetricKind::Cumulative)))
    }

    /// Multiplies every present cell by `factor`.
    pub fn scaled(&self, factor: f64) -> Panel {
        let values = self
            .values
            .iter()
            .map(|r| r.iter().map(|c| c.map(|v| v * factor)).collect())
            .collect();
        self.with_values(values, self.metric.clone())
    }

    /// Sum of present values per unit, in unit order.
    pub fn row_sums(&self) -> Vec<f64> {
        self.values
            .iter()
            .map(|r| r.iter().flatten().sum())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(s: &str) -> NaiveDate {
        s.parse().unwrap()
    }

    fn one_row(row: Vec<Option<f64>>, kind: MetricKind) -> Panel {
        Panel::new(vec!["a".into()], d("2020-03-01"), vec![row], Metric::new("m", kind)).unwrap()
    }

    #[test]
    fn window_one_is_identity() {
        let p = one_row(vec![Some(1.0), None, Some(3.5), Some(-2.0)], MetricKind::Daily);
        assert_eq!(p.moving_average(1).unwrap(), p);
    }

    #[test]
    fn seven_day_mean_of_ramp() {
        let p = Panel::from_dense(
            vec!["a".into()],
            d("2020-03-01"),
            vec![vec![0.0, 7.0, 14.0, 21.0, 28.0, 35.0, 42.0]],
            Metric::new("m", MetricKind::Daily),
        )
        .unwrap();
        let ma = p.moving_average(7).unwrap();
        assert_eq!(ma.row(0)[6], Some(21.0));
        // partial prefix
        assert_eq!(ma.row(0)[1], Some(3.5));
    }

    #[test]
    fn moving_average_keeps_gaps_and_skips_them() {
        let p = one_row(vec![Some(2.0), None, Some(4.0)], MetricKind::Daily);
        let ma = p.moving_average(3).unwrap();
        assert_eq!(ma.row(0), &[Some(2.0), None, Some(3.0)]);
    }

    #[test]
    fn zero_window_rejected() {
        let p = one_row(vec![Some(1.0)], MetricKind::Daily);
        assert!(matches!(p.moving_average(0), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn per_million_ratios() {
        let mut p = Panel::from_dense(
            vec!["a".into(), "b".into()],
            d("2020-03-01"),
            vec![vec![500.0], vec![50.0]],
            Metric::new("cases", MetricKind::Cumulative),
        )
        .unwrap();
        p.set_meta("a", UnitMeta::new(1_000_000));
        p.set_meta("b", UnitMeta::new(100_000));
        let pm = p.per_million().unwrap();
        assert_eq!(pm.row(0)[0], Some(500.0));
        assert_eq!(pm.row(1)[0], Some(500.0));
        assert_eq!(pm.metric().label, "cases-per-million");
    }

    #[test]
    fn per_million_names_unit_without_population() {
        let mut p = Panel::from_dense(
            vec!["a".into(), "b".into()],
            d("2020-03-01"),
            vec![vec![1.0], vec![1.0]],
            Metric::new("cases", MetricKind::Cumulative),
        )
        .unwrap();
        p.set_meta("a", UnitMeta::new(10));
        match p.per_million() {
            Err(Error::Metadata { unit, .. }) => assert_eq!(unit, "b"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn differencing() {
        let p = one_row(
            [0.0, 0.0, 3.0, 5.0, 5.0].map(Some).to_vec(),
            MetricKind::Cumulative,
        );
        let (daily, neg) = p.to_daily().unwrap();
        assert_eq!(daily.row(0), [0.0, 0.0, 3.0, 2.0, 0.0].map(Some).as_slice());
        assert!(neg.is_empty());
        assert_eq!(daily.metric().kind, MetricKind::Daily);
    }

    #[test]
    fn constant_row_differences_to_zero() {
        let p = one_row(vec![Some(4.0); 5], MetricKind::Cumulative);
        let (daily, _) = p.to_daily().unwrap();
        assert_eq!(daily.row(0), [4.0, 0.0, 0.0, 0.0, 0.0].map(Some).as_slice());
    }

    #[test]
    fn negative_steps_are_preserved_and_reported() {
        let p = one_row([1.0, 5.0, 4.0].map(Some).to_vec(), MetricKind::Cumulative);
        assert_eq!(p.monotonicity_violations().len(), 1);
        let (daily, neg) = p.to_daily().unwrap();
        assert_eq!(daily.row(0)[2], Some(-1.0));
        assert_eq!(neg.len(), 1);
        assert_eq!(neg[0].date, d("2020-03-03"));
    }

    #[test]
    fn to_daily_requires_cumulative() {
        let p = one_row(vec![Some(1.0)], MetricKind::Level);
        assert!(matches!(p.to_daily(), Err(Error::Metric(_))));
    }

    #[test]
    fn mask_fraction() {
        let p = one_row(vec![Some(1.0), None, Some(1.0), Some(1.0)], MetricKind::Daily);
        assert_eq!(p.mask().observed_fraction, 0.75);
    }

    #[test]
    fn latest_measure_is_the_intervention() {
        let m = UnitMeta::new(1)
            .with_intervention(d("2020-03-30"))
            .with_intervention(d("2020-04-07"))
            .with_intervention(d("2020-04-04"));
        assert_eq!(m.intervention_date(), Some(d("2020-04-07")));
    }

    #[test]
    fn rejects_ragged_rows() {
        let r = Panel::new(
            vec!["a".into(), "b".into()],
            d("2020-03-01"),
            vec![vec![Some(1.0)], vec![]],
            Metric::new("m", MetricKind::Daily),
        );
        assert!(r.is_err());
    }
}
