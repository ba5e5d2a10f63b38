//! k-means clustering of units by the shape of their series, and per-group
//! aggregates for fixed or clustered groupings.

use std::collections::BTreeMap;

use chrono::NaiveDate;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::align::Exclusion;
use crate::error::{Error, Result};
use crate::panel::Panel;

pub const MAX_ITERATIONS: usize = 300;

/// Half-open range `[start, end)` of day indices into a panel's calendar.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DayWindow {
    pub start: usize,
    pub end: usize,
}

impl DayWindow {
    pub fn new(start: usize, end: usize) -> Result<Self> {
        if start >= end {
            return Err(Error::InvalidParameter(format!(
                "empty day window {start}:{end}"
            )));
        }
        Ok(DayWindow { start, end })
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start >= self.end
    }
}

/// Inclusive calendar range.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DateRange {
    pub first: NaiveDate,
    pub last: NaiveDate,
}

impl DateRange {
    pub fn new(first: NaiveDate, last: NaiveDate) -> Result<Self> {
        if first > last {
            return Err(Error::InvalidParameter(format!("empty date range {first}..{last}")));
        }
        Ok(DateRange { first, last })
    }

    /// The whole calendar of `p`.
    pub fn of(p: &Panel) -> Self {
        let d = p.dates();
        DateRange {
            first: d[0],
            last: d[d.len() - 1],
        }
    }

    pub fn days(&self) -> impl Iterator<Item = NaiveDate> + use<> {
        let last = self.last;
        self.first.iter_days().take_while(move |d| *d <= last)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KMeansOptions {
    /// z-score each unit's window before clustering.
    pub normalize: bool,
    /// Independent k-means++ starts; the lowest final inertia wins.
    pub restarts: usize,
    pub max_iterations: usize,
}

impl Default for KMeansOptions {
    fn default() -> Self {
        KMeansOptions {
            normalize: false,
            restarts: 1,
            max_iterations: MAX_ITERATIONS,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClusterResult {
    pub k: usize,
    pub seed: u64,
    pub window: DayWindow,
    /// Clustered units in panel order with their cluster index.
    pub assignment: Vec<(String, usize)>,
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
    /// Inertia after each Lloyd iteration of the winning start.
    pub inertia_history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Units left out because of gaps in the window.
    pub excluded: Vec<Exclusion>,
}

impl ClusterResult {
    pub fn cluster_of(&self, unit: &str) -> Option<usize> {
        self.assignment.iter().find(|(u, _)| u == unit).map(|(_, c)| *c)
    }

    pub fn members(&self, cluster: usize) -> Vec<String> {
        self.assignment
            .iter()
            .filter(|(_, c)| *c == cluster)
            .map(|(u, _)| u.clone())
            .collect()
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn zscore(v: &mut [f64]) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
    for x in v.iter_mut() {
        *x -= mean;
        if sd > 0.0 {
            *x /= sd;
        }
    }
}

/// Clusters the units of `p` by their values on `window`.
///
/// Units with any missing cell in the window are excluded and reported.
/// Initialisation is k-means++ from a generator seeded with `seed`; Lloyd
/// iterations run until the assignment stops changing or
/// `opts.max_iterations` is reached. A cluster that empties is re-seeded
/// at the point farthest from its current centroid.
pub fn kmeans_trends(
    p: &Panel,
    window: DayWindow,
    k: usize,
    seed: u64,
    opts: &KMeansOptions,
) -> Result<ClusterResult> {
    if k == 0 {
        return Err(Error::InvalidParameter("k must be ≥ 1".into()));
    }
    if opts.restarts == 0 || opts.max_iterations == 0 {
        return Err(Error::InvalidParameter(
            "restarts and max iterations must be ≥ 1".into(),
        ));
    }
    if window.is_empty() || window.end > p.n_days() {
        return Err(Error::InvalidParameter(format!(
            "window {}:{} outside the {}-day calendar",
            window.start,
            window.end,
            p.n_days()
        )));
    }
    let mut units = Vec::new();
    let mut points = Vec::new();
    let mut excluded = Vec::new();
    for (u, row) in p.units().iter().zip(p.rows()) {
        let cells = &row[window.start..window.end];
        match cells.iter().copied().collect::<Option<Vec<f64>>>() {
            Some(mut v) => {
                if opts.normalize {
                    zscore(&mut v);
                }
                units.push(u.clone());
                points.push(v);
            }
            None => excluded.push(Exclusion {
                unit: u.clone(),
                reason: "missing values in clustering window".into(),
            }),
        }
    }
    if k > points.len() {
        return Err(Error::InvalidParameter(format!(
            "k = {k} exceeds the {} clusterable units",
            points.len()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<Lloyd> = None;
    for _ in 0..opts.restarts {
        let init = kmeans_pp(&points, k, &mut rng);
        let run = lloyd(&points, init, opts.max_iterations);
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    let best = best.expect("at least one restart");
    Ok(ClusterResult {
        k,
        seed,
        window,
        assignment: units.into_iter().zip(best.assignment).collect(),
        centroids: best.centroids,
        inertia: best.inertia,
        inertia_history: best.history,
        iterations: best.iterations,
        converged: best.converged,
        excluded,
    })
}

fn kmeans_pp(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut chosen = vec![rng.random_range(0..points.len())];
    let mut d2: Vec<f64> = points.iter().map(|x| sq_dist(x, &points[chosen[0]])).collect();
    while chosen.len() < k {
        let next = match WeightedIndex::new(&d2) {
            Ok(w) => w.sample(rng),
            // every point coincides with a centre already
            Err(_) => {
                let free: Vec<usize> = (0..points.len()).filter(|i| !chosen.contains(i)).collect();
                free[rng.random_range(0..free.len())]
            }
        };
        chosen.push(next);
        for (d, x) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(x, &points[next]));
        }
    }
    chosen.into_iter().map(|i| points[i].clone()).collect()
}

struct Lloyd {
    assignment: Vec<usize>,
    centroids: Vec<Vec<f64>>,
    inertia: f64,
    history: Vec<f64>,
    iterations: usize,
    converged: bool,
}

fn nearest(x: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    centroids
        .iter()
        .enumerate()
        .map(|(j, c)| (j, sq_dist(x, c)))
        .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
}

fn inertia(points: &[Vec<f64>], assignment: &[usize], centroids: &[Vec<f64>]) -> f64 {
    points
        .iter()
        .zip(assignment)
        .map(|(x, &j)| sq_dist(x, &centroids[j]))
        .sum()
}

fn lloyd(points: &[Vec<f64>], mut centroids: Vec<Vec<f64>>, max_iterations: usize) -> Lloyd {
    let k = centroids.len();
    let dim = points[0].len();
    let mut assignment: Vec<usize> = Vec::new();
    let mut history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < max_iterations {
        let nearest_all: Vec<(usize, f64)> =
            points.par_iter().map(|x| nearest(x, &centroids)).collect();
        let mut next: Vec<usize> = nearest_all.iter().map(|(j, _)| *j).collect();
        let mut dist: Vec<f64> = nearest_all.iter().map(|(_, d)| *d).collect();
        repair_empty(&mut next, &mut dist, k);
        if next == assignment {
            converged = true;
            break;
        }
        assignment = next;
        iterations += 1;
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (x, &j) in points.iter().zip(&assignment) {
            counts[j] += 1;
            for (s, v) in sums[j].iter_mut().zip(x) {
                *s += v;
            }
        }
        for (c, (s, n)) in centroids.iter_mut().zip(sums.into_iter().zip(counts)) {
            *c = s.into_iter().map(|v| v / n as f64).collect();
        }
        history.push(inertia(points, &assignment, &centroids));
    }
    let inertia = inertia(points, &assignment, &centroids);
    Lloyd {
        assignment,
        centroids,
        inertia,
        history,
        iterations,
        converged,
    }
}

/// Moves the point farthest from its centroid into each empty cluster,
/// never emptying the cluster it leaves.
fn repair_empty(assignment: &mut [usize], dist: &mut [f64], k: usize) {
    let mut counts = vec![0usize; k];
    for &j in assignment.iter() {
        counts[j] += 1;
    }
    for empty in 0..k {
        if counts[empty] > 0 {
            continue;
        }
        let far = (0..assignment.len())
            .filter(|&i| counts[assignment[i]] > 1)
            .fold(None, |best: Option<usize>, i| match best {
                Some(b) if dist[b] >= dist[i] => Some(b),
                _ => Some(i),
            })
            .expect("k ≤ number of points");
        counts[assignment[far]] -= 1;
        assignment[far] = empty;
        counts[empty] = 1;
        dist[far] = 0.0;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GroupAggregate {
    pub label: String,
    pub members: Vec<String>,
    /// Per-day mean over members with a value; `None` when none has one.
    pub dates: Vec<NaiveDate>,
    pub mean_series: Vec<Option<f64>>,
    /// Per source panel: the mean over members of each member's mean over the window.
    pub scalar_stats: BTreeMap<String, f64>,
}

/// Averages `p` over each group on `window`.
///
/// `stats` adds one scalar per labelled panel; members without any value in
/// the window are skipped for that scalar, which is left out when no
/// member has data.
pub fn group_by_policy(
    p: &Panel,
    groups: &BTreeMap<String, Vec<String>>,
    window: DateRange,
    stats: &[(String, &Panel)],
) -> Result<Vec<GroupAggregate>> {
    let mut owner: BTreeMap<&str, &str> = BTreeMap::new();
    for (label, members) in groups {
        if members.is_empty() {
            return Err(Error::InvalidParameter(format!("group '{label}' has no members")));
        }
        for m in members {
            if let Some(first) = owner.insert(m, label) {
                if first != label {
                    return Err(Error::Grouping {
                        unit: m.clone(),
                        first: first.to_string(),
                        second: label.clone(),
                    });
                }
            }
            p.row_of(m)?;
        }
    }
    let dates: Vec<NaiveDate> = window.days().collect();
    groups
        .iter()
        .map(|(label, members)| {
            let mut members = members.clone();
            members.sort();
            members.dedup();
            let mean_series = dates
                .iter()
                .map(|&d| mean_on(p, &members, d))
                .collect::<Result<Vec<_>>>()?;
            let mut scalar_stats = BTreeMap::new();
            for (name, panel) in stats {
                if let Some(v) = mean_of_means(panel, &members, &dates)? {
                    scalar_stats.insert(name.clone(), v);
                }
            }
            Ok(GroupAggregate {
                label: label.clone(),
                members,
                dates: dates.clone(),
                mean_series,
                scalar_stats,
            })
        })
        .collect()
}

fn cell(p: &Panel, unit: &str, d: NaiveDate) -> Result<Option<f64>> {
    let row = p.row_of(unit)?;
    Ok(p.date_index(d).and_then(|i| row[i]))
}

fn mean_on(p: &Panel, members: &[String], d: NaiveDate) -> Result<Option<f64>> {
    let (mut sum, mut n) = (0.0, 0usize);
    for m in members {
        if let Some(v) = cell(p, m, d)? {
            sum += v;
            n += 1;
        }
    }
    Ok((n > 0).then(|| sum / n as f64))
}

fn mean_of_means(p: &Panel, members: &[String], dates: &[NaiveDate]) -> Result<Option<f64>> {
    let (mut sum, mut n) = (0.0, 0usize);
    for m in members {
        let (mut s, mut c) = (0.0, 0usize);
        for &d in dates {
            if let Some(v) = cell(p, m, d)? {
                s += v;
                c += 1;
            }
        }
        if c > 0 {
            sum += s / c as f64;
            n += 1;
        }
    }
    Ok((n > 0).then(|| sum / n as f64))
}

/// [`group_by_policy`] over the clusters of `c`, labelled by cluster index.
pub fn cluster_aggregates(
    p: &Panel,
    c: &ClusterResult,
    window: DateRange,
    stats: &[(String, &Panel)],
) -> Result<Vec<GroupAggregate>> {
    let groups: BTreeMap<String, Vec<String>> = (0..c.k)
        .map(|j| (j.to_string(), c.members(j)))
        .filter(|(_, m)| !m.is_empty())
        .collect();
    let mut out = group_by_policy(p, &groups, window, stats)?;
    out.sort_by_key(|g| g.label.parse::<usize>().unwrap_or(usize::MAX));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::{Metric, MetricKind};

    fn start() -> NaiveDate {
        NaiveDate::from_ymd_opt(2020, 6, 1).unwrap()
    }

    fn panel(rows: Vec<Vec<f64>>) -> Panel {
        let units = (0..rows.len()).map(|i| format!("s{i}")).collect();
        Panel::from_dense(units, start(), rows, Metric::new("mobility-pct", MetricKind::Level)).unwrap()
    }

    #[test]
    fn separated_point_masses() {
        let p = panel(vec![vec![0.0; 3], vec![10.0; 3], vec![0.0; 3], vec![10.0; 3]]);
        let c = kmeans_trends(&p, DayWindow::new(0, 3).unwrap(), 2, 1, &KMeansOptions::default()).unwrap();
        assert_eq!(c.inertia, 0.0);
        assert_eq!(c.cluster_of("s0"), c.cluster_of("s2"));
        assert_ne!(c.cluster_of("s0"), c.cluster_of("s1"));
    }

    #[test]
    fn k_equals_units() {
        let p = panel(vec![vec![1.0, 2.0], vec![3.0, 1.0], vec![0.0, 5.0]]);
        let c = kmeans_trends(&p, DayWindow::new(0, 2).unwrap(), 3, 9, &KMeansOptions::default()).unwrap();
        assert_eq!(c.inertia, 0.0);
        let mut seen: Vec<usize> = c.assignment.iter().map(|(_, j)| *j).collect();
        seen.sort();
        assert_eq!(seen, vec![0, 1, 2]);
        assert!(kmeans_trends(&p, DayWindow::new(0, 2).unwrap(), 4, 9, &KMeansOptions::default()).is_err());
    }

    #[test]
    fn duplicates_still_fill_every_cluster() {
        let p = panel(vec![vec![1.0], vec![1.0], vec![1.0], vec![2.0]]);
        let c = kmeans_trends(&p, DayWindow::new(0, 1).unwrap(), 3, 0, &KMeansOptions::default()).unwrap();
        for j in 0..3 {
            assert!(!c.members(j).is_empty());
        }
    }

    #[test]
    fn gaps_are_excluded() {
        let mut p = panel(vec![vec![1.0, 1.0], vec![5.0, 5.0], vec![2.0, 2.0]]);
        p = Panel::new(
            p.units().to_vec(),
            start(),
            vec![vec![Some(1.0), None], p.row(1).to_vec(), p.row(2).to_vec()],
            p.metric().clone(),
        )
        .unwrap();
        let c = kmeans_trends(&p, DayWindow::new(0, 2).unwrap(), 2, 0, &KMeansOptions::default()).unwrap();
        assert_eq!(c.excluded.len(), 1);
        assert_eq!(c.excluded[0].unit, "s0");
        let c = kmeans_trends(&p, DayWindow::new(0, 1).unwrap(), 2, 0, &KMeansOptions::default()).unwrap();
        assert!(c.excluded.is_empty());
    }

    #[test]
    fn normalize_groups_by_shape() {
        // two rising and two falling series at very different levels
        let p = panel(vec![
            vec![0.0, 1.0, 2.0],
            vec![100.0, 90.0, 80.0],
            vec![50.0, 60.0, 70.0],
            vec![2.0, 1.0, 0.0],
        ]);
        let opts = KMeansOptions { normalize: true, ..Default::default() };
        let c = kmeans_trends(&p, DayWindow::new(0, 3).unwrap(), 2, 3, &opts).unwrap();
        assert_eq!(c.cluster_of("s0"), c.cluster_of("s2"));
        assert_eq!(c.cluster_of("s1"), c.cluster_of("s3"));
    }

    #[test]
    fn group_means() {
        let p = panel(vec![vec![100.0, 100.0], vec![300.0, 300.0], vec![7.0, 9.0]]);
        let groups = BTreeMap::from([
            ("pair".to_string(), vec!["s0".to_string(), "s1".to_string()]),
            ("solo".to_string(), vec!["s2".to_string()]),
        ]);
        let g = group_by_policy(&p, &groups, DateRange::of(&p), &[("level".into(), &p)]).unwrap();
        assert_eq!(g[0].mean_series, vec![Some(200.0), Some(200.0)]);
        assert_eq!(g[1].mean_series, vec![Some(7.0), Some(9.0)]);
        assert_eq!(g[1].scalar_stats["level"], 8.0);
    }

    #[test]
    fn overlapping_groups_rejected() {
        let p = panel(vec![vec![1.0], vec![2.0]]);
        let groups = BTreeMap::from([
            ("a".to_string(), vec!["s0".to_string()]),
            ("b".to_string(), vec!["s0".to_string(), "s1".to_string()]),
        ]);
        let err = group_by_policy(&p, &groups, DateRange::of(&p), &[]).unwrap_err();
        assert!(matches!(err, Error::Grouping { ref unit, .. } if unit == "s0"));
    }
}
