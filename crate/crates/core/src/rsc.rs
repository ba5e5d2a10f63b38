//! Robust synthetic control.
//!
//! The donor matrix (donors × days, pre- and post-intervention together) is
//! zero-filled where unobserved, rescaled by the observed fraction `p̂`, and
//! truncated to its leading singular values. The target's pre-intervention
//! series is then regressed on the denoised pre-intervention donor block with
//! unconstrained weights (minimum-norm least squares), and the counterfactual
//! is the same linear combination of the denoised donors over the full
//! horizon.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::align::AlignedPanel;
use crate::error::{Error, Result};
use crate::linalg::{min_norm_lstsq, sorted_svd, MaskedMatrix};
use crate::panel::MetricKind;

/// Fraction of spectral energy retained by the default rank policy.
pub const DEFAULT_ENERGY: f64 = 0.99;

/// Relative size below which a singular value counts as zero.
const NULL_SINGULAR_VALUE: f64 = 1e-12;

/// How many singular values to keep when denoising.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum RankPolicy {
    /// Smallest rank whose retained squared singular values reach this share of the total.
    Energy(f64),
    Fixed(usize),
}

impl Default for RankPolicy {
    fn default() -> Self {
        RankPolicy::Energy(DEFAULT_ENERGY)
    }
}

impl RankPolicy {
    /// Resolves to a concrete rank in `1..=cap` for the given spectrum.
    pub fn resolve(&self, spectrum: &[f64], cap: usize) -> usize {
        let k = match *self {
            RankPolicy::Fixed(k) => k,
            RankPolicy::Energy(share) => {
                let total: f64 = spectrum.iter().map(|s| s * s).sum();
                let mut acc = 0.0;
                let mut k = spectrum.len();
                for (i, s) in spectrum.iter().enumerate() {
                    acc += s * s;
                    if acc >= share * total {
                        k = i + 1;
                        break;
                    }
                }
                k
            }
        };
        k.clamp(1, cap.max(1))
    }

    fn validate(&self) -> Result<()> {
        match *self {
            RankPolicy::Fixed(0) => Err(Error::InvalidParameter("rank must be ≥ 1".into())),
            RankPolicy::Energy(e) if !(e > 0.0 && e <= 1.0) => Err(Error::InvalidParameter(
                format!("energy share must be in (0, 1], got {e}"),
            )),
            _ => Ok(()),
        }
    }
}

/// Output of hard singular-value thresholding.
#[derive(Clone, Debug, PartialEq)]
pub struct Denoised {
    pub matrix: DMatrix<f64>,
    /// Full spectrum of the rescaled, zero-filled matrix.
    pub singular_values: Vec<f64>,
    pub kept_rank: usize,
    pub p_hat: f64,
}

/// Zero-fills, rescales by `1/p̂` and keeps the top `kept_rank` singular values.
pub fn denoise(x: &MaskedMatrix, kept_rank: usize) -> Result<Denoised> {
    denoise_with(x, RankPolicy::Fixed(kept_rank), usize::MAX)
}

/// As [`denoise`] with the rank chosen by `policy`, capped at `cap`.
pub fn denoise_with(x: &MaskedMatrix, policy: RankPolicy, cap: usize) -> Result<Denoised> {
    policy.validate()?;
    let p_hat = x.observed_fraction();
    if p_hat == 0.0 {
        return Err(Error::DegenerateInput("matrix has no observed entries".into()));
    }
    let filled = x.zero_filled() / p_hat;
    let (u, s, v_t) = sorted_svd(filled);
    let cap = cap.min(s.len());
    let kept_rank = policy.resolve(&s, cap);
    let largest = s.first().copied().unwrap_or(0.0);
    let nonzero = s.iter().take_while(|&&v| v > NULL_SINGULAR_VALUE * largest).count();
    if largest == 0.0 || nonzero < kept_rank {
        return Err(Error::DegenerateInput(format!(
            "rank {kept_rank} requested but only {nonzero} non-zero singular values"
        )));
    }
    let mut matrix = DMatrix::zeros(x.nrows(), x.ncols());
    for k in 0..kept_rank {
        matrix += u.column(k) * v_t.row(k) * s[k];
    }
    Ok(Denoised {
        matrix,
        singular_values: s,
        kept_rank,
        p_hat,
    })
}

/// The four blocks of a stacked donor/target observation matrix split at `t0`.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockMatrix {
    pub d_pre: MaskedMatrix,
    pub d_post: MaskedMatrix,
    pub i_pre: MaskedMatrix,
    pub i_post: MaskedMatrix,
}

impl BlockMatrix {
    pub fn split(donors: &MaskedMatrix, targets: &MaskedMatrix, t0: usize) -> Result<Self> {
        let cols = donors.ncols();
        if targets.ncols() != cols || t0 > cols {
            return Err(Error::InvalidParameter(format!(
                "inconsistent blocks: donors {} cols, targets {} cols, t0 {t0}",
                cols,
                targets.ncols()
            )));
        }
        Ok(BlockMatrix {
            d_pre: donors.columns(0..t0),
            d_post: donors.columns(t0..cols),
            i_pre: targets.columns(0..t0),
            i_post: targets.columns(t0..cols),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub rank: RankPolicy,
    /// Ridge penalty on the weights; 0 gives the minimum-norm solution.
    pub ridge: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            rank: RankPolicy::default(),
            ridge: 0.0,
        }
    }
}

impl FitOptions {
    pub fn with_rank(rank: usize) -> Self {
        FitOptions {
            rank: RankPolicy::Fixed(rank),
            ridge: 0.0,
        }
    }
}

/// A fitted synthetic control for one target.
#[derive(Clone, Debug, PartialEq)]
pub struct RscModel {
    pub target_id: String,
    pub donor_ids: Vec<String>,
    /// One unconstrained weight per donor, in `donor_ids` order.
    pub weights: Vec<f64>,
    pub kept_rank: usize,
    pub singular_values: Vec<f64>,
    /// Number of pre-intervention columns.
    pub t0: usize,
    pub p_hat: f64,
    pub ridge: f64,
    /// Relative day of the first column.
    pub start_rel: i64,
    target: Vec<Option<f64>>,
    /// Donor indices sorted by id; fixes the summation order.
    canonical: Vec<usize>,
    /// Denoised donors, rows in canonical order.
    denoised: DMatrix<f64>,
}

/// Fits weights for `target` against `donors` (rows aligned with `donor_ids`).
///
/// Columns `0..t0` are the training window. Donors are processed in id order
/// internally so results do not depend on the order they are supplied in.
pub fn fit(
    donor_ids: &[String],
    donors: &MaskedMatrix,
    target_id: &str,
    target: &[Option<f64>],
    t0: usize,
    opts: &FitOptions,
) -> Result<RscModel> {
    if donor_ids.is_empty() || donors.nrows() != donor_ids.len() {
        return Err(Error::EmptyDonor(format!(
            "{} donor ids for {} donor rows",
            donor_ids.len(),
            donors.nrows()
        )));
    }
    if donors.ncols() != target.len() {
        return Err(Error::InvalidParameter(format!(
            "target has {} days, donors {}",
            target.len(),
            donors.ncols()
        )));
    }
    if t0 > target.len() {
        return Err(Error::InvalidParameter(format!(
            "t0 {t0} beyond horizon {}",
            target.len()
        )));
    }
    if !(opts.ridge >= 0.0) {
        return Err(Error::InvalidParameter("ridge must be ≥ 0".into()));
    }
    let pre_days: Vec<usize> = (0..t0).filter(|&t| target[t].is_some()).collect();
    if t0 <= 1 || pre_days.len() < 2 {
        return Err(Error::InsufficientPretreatment {
            available: pre_days.len(),
        });
    }
    let canonical = canonical_order(donor_ids)?;
    let ordered = donors.select_rows(&canonical);
    let denoised = denoise_with(&ordered, opts.rank, donor_ids.len().min(t0))?;
    let m = &denoised.matrix;

    let target_row = MaskedMatrix::from_rows(&[target.to_vec()])?;
    let blocks = BlockMatrix::split(&ordered, &target_row, t0)?;
    let a = DMatrix::from_fn(pre_days.len(), canonical.len(), |r, j| m[(j, pre_days[r])]);
    let b = DVector::from_iterator(
        pre_days.len(),
        pre_days.iter().map(|&t| blocks.i_pre.get(0, t).expect("present")),
    );
    let beta = min_norm_lstsq(&a, &b, opts.ridge);
    let mut weights = vec![0.0; donor_ids.len()];
    for (k, &i) in canonical.iter().enumerate() {
        weights[i] = beta[k];
    }
    Ok(RscModel {
        target_id: target_id.to_string(),
        donor_ids: donor_ids.to_vec(),
        weights,
        kept_rank: denoised.kept_rank,
        singular_values: denoised.singular_values,
        t0,
        p_hat: denoised.p_hat,
        ridge: opts.ridge,
        start_rel: 0,
        target: target.to_vec(),
        canonical,
        denoised: denoised.matrix,
    })
}

fn canonical_order(donor_ids: &[String]) -> Result<Vec<usize>> {
    let mut canonical: Vec<usize> = (0..donor_ids.len()).collect();
    canonical.sort_by(|&a, &b| donor_ids[a].cmp(&donor_ids[b]));
    if canonical.windows(2).any(|w| donor_ids[w[0]] == donor_ids[w[1]]) {
        return Err(Error::InvalidParameter("duplicate donor ids".into()));
    }
    Ok(canonical)
}

/// Rebuilds a model from its file and the aligned panel it was fitted on.
///
/// The donor block over the model horizon is denoised again at the stored
/// rank; the stored weights are used unchanged.
pub fn restore_aligned(file: &ModelFile, a: &AlignedPanel) -> Result<RscModel> {
    if file.weights.len() != file.donor_ids.len() {
        return Err(Error::InvalidParameter(format!(
            "{} weights for {} donors",
            file.weights.len(),
            file.donor_ids.len()
        )));
    }
    let window = RelWindow {
        start: file.train_start,
        t0: file.t0,
        end: file.end,
    };
    window.validate()?;
    let rows = file
        .donor_ids
        .iter()
        .map(|d| a.rel_series(d, window.start, window.end))
        .collect::<Result<Vec<_>>>()?;
    let target = a.rel_series(&file.target_id, window.start, window.end)?;
    let t0 = (window.t0 - window.start) as usize;
    let canonical = canonical_order(&file.donor_ids)?;
    let ordered = MaskedMatrix::from_rows(&rows)?.select_rows(&canonical);
    let cap = file.donor_ids.len().min(t0);
    let denoised = denoise_with(&ordered, RankPolicy::Fixed(file.kept_rank), cap)?;
    Ok(RscModel {
        target_id: file.target_id.clone(),
        donor_ids: file.donor_ids.clone(),
        weights: file.weights.clone(),
        kept_rank: denoised.kept_rank,
        singular_values: denoised.singular_values,
        t0,
        p_hat: denoised.p_hat,
        ridge: file.ridge,
        start_rel: window.start,
        target,
        canonical,
        denoised: denoised.matrix,
    })
}

impl RscModel {
    pub fn n_days(&self) -> usize {
        self.target.len()
    }

    pub fn with_start_rel(mut self, start_rel: i64) -> Self {
        self.start_rel = start_rel;
        self
    }

    /// Training window `[start, t0)` in relative days.
    pub fn train_window(&self) -> (i64, i64) {
        (self.start_rel, self.start_rel + self.t0 as i64)
    }

    pub fn target(&self) -> &[Option<f64>] {
        &self.target
    }

    /// Denoised series of one donor over the model horizon.
    pub fn denoised_donor(&self, donor: &str) -> Option<Vec<f64>> {
        let i = self.donor_ids.iter().position(|d| d == donor)?;
        let k = self.canonical.iter().position(|&c| c == i)?;
        Some(self.denoised.row(k).iter().copied().collect())
    }

    fn counterfactual_at(&self, col: usize) -> f64 {
        self.canonical
            .iter()
            .enumerate()
            .map(|(k, &i)| self.weights[i] * self.denoised[(k, col)])
            .sum()
    }

    /// Root-mean-square residual over present pre-intervention days.
    pub fn pre_rmse(&self) -> f64 {
        let residuals: Vec<f64> = (0..self.t0)
            .filter_map(|t| self.target[t].map(|y| self.counterfactual_at(t) - y))
            .collect();
        (residuals.iter().map(|r| r * r).sum::<f64>() / residuals.len() as f64).sqrt()
    }

    /// Counterfactual over relative days `from..=to`.
    pub fn project(&self, from: i64, to: i64) -> Result<Trajectory> {
        let last = self.start_rel + self.n_days() as i64 - 1;
        if from < self.start_rel || to > last || from > to {
            return Err(Error::InvalidParameter(format!(
                "horizon {from}..={to} outside model days {}..={last}",
                self.start_rel
            )));
        }
        let cols = (from - self.start_rel) as usize..=(to - self.start_rel) as usize;
        let rel_days: Vec<i64> = (from..=to).collect();
        let actual: Vec<Option<f64>> = cols.clone().map(|c| self.target[c]).collect();
        let counterfactual: Vec<f64> = cols.map(|c| self.counterfactual_at(c)).collect();
        Ok(Trajectory::new(
            self.target_id.clone(),
            rel_days,
            actual,
            counterfactual,
            self.start_rel + self.t0 as i64,
        ))
    }

    /// Counterfactual over the whole model horizon.
    pub fn project_all(&self) -> Trajectory {
        let last = self.start_rel + self.n_days() as i64 - 1;
        self.project(self.start_rel, last).expect("full horizon")
    }

    /// Weights scaled to unit L1 norm.
    pub fn normalized_weights(&self) -> Result<Vec<f64>> {
        normalized_weights(&self.weights)
    }

    /// The `k` donors with the largest absolute normalized weight.
    pub fn top_weights(&self, k: usize) -> Result<Vec<(String, f64)>> {
        let w = self.normalized_weights()?;
        let mut pairs: Vec<(String, f64)> = self.donor_ids.iter().cloned().zip(w).collect();
        pairs.sort_by(|a, b| b.1.abs().total_cmp(&a.1.abs()).then_with(|| a.0.cmp(&b.0)));
        pairs.truncate(k);
        Ok(pairs)
    }

    pub fn to_file(&self) -> ModelFile {
        ModelFile {
            target_id: self.target_id.clone(),
            donor_ids: self.donor_ids.clone(),
            weights: self.weights.clone(),
            kept_rank: self.kept_rank,
            singular_values: self.singular_values.clone(),
            t0: self.start_rel + self.t0 as i64,
            train_start: self.start_rel,
            end: self.start_rel + self.n_days() as i64 - 1,
            p_hat: self.p_hat,
            ridge: self.ridge,
        }
    }
}

/// L1-normalised weights.
pub fn normalized_weights(weights: &[f64]) -> Result<Vec<f64>> {
    let l1: f64 = weights.iter().map(|w| w.abs()).sum();
    if !(l1 > 0.0) {
        return Err(Error::DegenerateModel("all weights are zero".into()));
    }
    Ok(weights.iter().map(|w| w / l1).collect())
}

/// Serialized form of a fitted model. `t0`, `train_start` and `end` (last
/// projected day) are relative days.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub target_id: String,
    pub donor_ids: Vec<String>,
    pub weights: Vec<f64>,
    pub kept_rank: usize,
    pub singular_values: Vec<f64>,
    pub t0: i64,
    pub train_start: i64,
    pub end: i64,
    pub p_hat: f64,
    #[serde(default)]
    pub ridge: f64,
}

/// Actual versus counterfactual series of one target.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Trajectory {
    pub target_id: String,
    pub rel_days: Vec<i64>,
    pub actual: Vec<Option<f64>>,
    pub counterfactual: Vec<f64>,
    /// Relative day of the intervention.
    pub t0: i64,
    /// `counterfactual - actual` where actual is present.
    pub gap: Vec<Option<f64>>,
    pub tag: Option<String>,
}

impl Trajectory {
    pub fn new(
        target_id: String,
        rel_days: Vec<i64>,
        actual: Vec<Option<f64>>,
        counterfactual: Vec<f64>,
        t0: i64,
    ) -> Self {
        let gap = actual
            .iter()
            .zip(&counterfactual)
            .map(|(a, c)| a.map(|a| c - a))
            .collect();
        Trajectory {
            target_id,
            rel_days,
            actual,
            counterfactual,
            t0,
            gap,
            tag: None,
        }
    }

    pub fn with_tag(mut self, tag: impl Into<String>) -> Self {
        self.tag = Some(tag.into());
        self
    }

    pub fn index_of(&self, rel_day: i64) -> Option<usize> {
        let first = *self.rel_days.first()?;
        let i = rel_day - first;
        (i >= 0 && (i as usize) < self.rel_days.len()).then_some(i as usize)
    }

    /// `rel_day,actual,counterfactual,gap` with empty cells for missing actuals.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["rel_day", "actual", "counterfactual", "gap"])?;
        for i in 0..self.rel_days.len() {
            w.write_record([
                self.rel_days[i].to_string(),
                self.actual[i].map(|v| v.to_string()).unwrap_or_default(),
                self.counterfactual[i].to_string(),
                self.gap[i].map(|v| v.to_string()).unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the format written by [`write_csv`](Self::write_csv).
    pub fn read_csv<R: std::io::Read>(target_id: &str, t0: i64, reader: R) -> Result<Trajectory> {
        let mut r = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .from_reader(reader);
        let mut rel_days = Vec::new();
        let mut actual = Vec::new();
        let mut cf = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let row = rec.position().map_or(0, |p| p.line() as usize);
            let parse = |s: &str| -> Result<f64> {
                s.parse().map_err(|_| Error::Parse {
                    row,
                    message: format!("malformed number '{s}'"),
                })
            };
            rel_days.push(parse(&rec[0])? as i64);
            actual.push(if rec[1].is_empty() { None } else { Some(parse(&rec[1])?) });
            cf.push(parse(&rec[2])?);
        }
        if rel_days.is_empty() {
            return Err(Error::EmptyInput);
        }
        Ok(Trajectory::new(target_id.to_string(), rel_days, actual, cf, t0))
    }
}

/// Relative-day window for fitting on an aligned panel: train on
/// `start..t0`, project through `end` (inclusive).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelWindow {
    pub start: i64,
    pub t0: i64,
    pub end: i64,
}

impl RelWindow {
    fn validate(&self) -> Result<()> {
        if self.start >= self.t0 || self.t0 > self.end + 1 {
            return Err(Error::InvalidParameter(format!(
                "window needs start < t0 ≤ end + 1, got {}, {}, {}",
                self.start, self.t0, self.end
            )));
        }
        Ok(())
    }
}

/// Fits `target` against `donors` on the relative-time axis of an aligned panel.
pub fn fit_aligned(
    a: &AlignedPanel,
    target: &str,
    donors: &[String],
    window: RelWindow,
    opts: &FitOptions,
) -> Result<RscModel> {
    fit_aligned_shifted(a, target, donors, window, 0, opts)
}

fn fit_aligned_shifted(
    a: &AlignedPanel,
    target: &str,
    donors: &[String],
    window: RelWindow,
    shift: i64,
    opts: &FitOptions,
) -> Result<RscModel> {
    window.validate()?;
    if donors.iter().any(|d| d == target) {
        return Err(Error::InvalidParameter(format!("target '{target}' is among its donors")));
    }
    let rows = donors
        .iter()
        .map(|d| a.rel_series(d, window.start, window.end))
        .collect::<Result<Vec<_>>>()?;
    let matrix = MaskedMatrix::from_rows(&rows)?;
    let series = a.rel_series_shifted(target, window.start, window.end, shift)?;
    let t0 = (window.t0 - window.start) as usize;
    Ok(fit(donors, &matrix, target, &series, t0, opts)?.with_start_rel(window.start))
}

/// Every aligned unit other than `target`.
pub fn default_donors(a: &AlignedPanel, target: &str) -> Vec<String> {
    a.units().filter(|u| *u != target).map(str::to_string).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShiftSpec {
    /// Days to move the target's intervention; negative is earlier.
    pub shift: i64,
    /// Pre-intervention days used for training.
    pub train_days: usize,
    /// Last relative day to project; defaults to the last day covered by the
    /// target's data and by every donor.
    pub horizon_end: Option<i64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ShiftSummary {
    pub shift: i64,
    pub actual_total: f64,
    pub counterfactual_total: f64,
    /// `(actual - counterfactual) / actual × 100`; undefined when the actual total is not positive.
    pub percent_reduction: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ShiftOutcome {
    pub model: RscModel,
    pub trajectory: Trajectory,
    pub summary: ShiftSummary,
}

/// Counterfactual under an intervention moved by `spec.shift` days.
///
/// `a` must be aligned on each unit's own intervention date. The target's
/// day zero is moved by the shift, the model is trained on the
/// `spec.train_days` days before the moved day zero, and the donors'
/// post-intervention behaviour is projected from there.
pub fn counterfactual_shifted_intervention(
    a: &AlignedPanel,
    target: &str,
    donors: &[String],
    spec: &ShiftSpec,
    opts: &FitOptions,
) -> Result<ShiftOutcome> {
    if spec.train_days < 2 {
        return Err(Error::InsufficientPretreatment {
            available: spec.train_days,
        });
    }
    let target_last = a
        .last_rel_day(target)
        .ok_or_else(|| Error::UnknownUnit(target.to_string()))?
        - spec.shift;
    let end = match spec.horizon_end {
        Some(end) => end,
        None => donors
            .iter()
            .map(|d| a.last_rel_day(d).ok_or_else(|| Error::UnknownUnit(d.clone())))
            .try_fold(target_last, |acc, d| d.map(|d| acc.min(d)))?,
    };
    if end < 0 {
        return Err(Error::InvalidParameter(format!(
            "no post-intervention days before horizon end {end}"
        )));
    }
    let window = RelWindow {
        start: -(spec.train_days as i64),
        t0: 0,
        end,
    };
    let model = fit_aligned_shifted(a, target, donors, window, spec.shift, opts)?;
    let trajectory = model.project_all();
    let kind = a.base().metric().kind;
    let summary = shift_summary(&trajectory, kind, spec.shift);
    Ok(ShiftOutcome {
        model,
        trajectory,
        summary,
    })
}

/// Totals over the post-intervention part of a trajectory: the last present
/// value for cumulative metrics, the sum over present days otherwise.
fn shift_summary(t: &Trajectory, kind: MetricKind, shift: i64) -> ShiftSummary {
    let post = t.rel_days.iter().enumerate().filter(|(_, &r)| r >= t.t0);
    let (actual_total, counterfactual_total) = match kind {
        MetricKind::Cumulative => post
            .filter_map(|(i, _)| t.actual[i].map(|a| (a, t.counterfactual[i])))
            .next_back()
            .unwrap_or((0.0, 0.0)),
        _ => post
            .filter_map(|(i, _)| t.actual[i].map(|a| (a, t.counterfactual[i])))
            .fold((0.0, 0.0), |(sa, sc), (a, c)| (sa + a, sc + c)),
    };
    ShiftSummary {
        shift,
        actual_total,
        counterfactual_total,
        percent_reduction: (actual_total > 0.0)
            .then(|| (actual_total - counterfactual_total) / actual_total * 100.0),
    }
}
