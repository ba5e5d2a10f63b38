use std::path::PathBuf;

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use synthctl_core::impact::GapBaseline;
use synthctl_core::panel::{CsvSchema, MetricKind};
use synthctl_core::synthint::{NmseAggregation, NmseScale};

#[derive(Parser, Debug)]
#[command(
    name = "synthctl",
    version,
    about = "Counterfactual analysis of panel time series with robust synthetic control",
    args_override_self = true
)]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Serialize)]
pub struct Common {
    /// JSON object of flag values; flags given on the command line win
    #[arg(long, global = true, value_name = "PATH")]
    #[serde(skip)]
    pub config: Option<PathBuf>,

    /// Directory for outputs and manifest.json
    #[arg(long, global = true, value_name = "DIR", default_value = ".")]
    #[serde(skip)]
    pub out_dir: PathBuf,

    /// Seed for every random draw
    #[arg(long, global = true, env = "SYNTHCTL_SEED", default_value_t = 0)]
    pub seed: u64,

    /// Worker threads for per-target fits
    #[arg(long, global = true, value_name = "N")]
    pub jobs: Option<usize>,
}

#[derive(Subcommand, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Read a long or wide CSV and write a normalised wide panel
    #[command(args_override_self = true)]
    Ingest(IngestArgs),
    /// Align units on a common event and write per-unit offsets
    #[command(args_override_self = true)]
    Align(AlignArgs),
    /// Fit donor weights for one target
    #[command(args_override_self = true)]
    Fit(FitArgs),
    /// Project a fitted model over relative days
    #[command(args_override_self = true)]
    Predict(PredictArgs),
    /// Counterfactuals with the target's intervention moved in time
    #[command(args_override_self = true)]
    Counterfactual(CounterfactualArgs),
    /// Synthetic interventions in and out of a donor region, per case-density bin
    #[command(name = "si-compare", args_override_self = true)]
    SiCompare(SiCompareArgs),
    /// k-means clustering of unit trends and group aggregates
    #[command(args_override_self = true)]
    Cluster(ClusterArgs),
    /// Epidemic peak relative to each unit's intervention
    #[command(args_override_self = true)]
    Impact(ImpactArgs),
    /// Cumulative gap between actual and counterfactual over a window
    #[command(args_override_self = true)]
    Gap(GapArgs),
    /// Simulate an SIR panel with per-unit interventions
    #[command(name = "synth-gen", args_override_self = true)]
    SynthGen(SynthGenArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Ingest(_) => "ingest",
            Command::Align(_) => "align",
            Command::Fit(_) => "fit",
            Command::Predict(_) => "predict",
            Command::Counterfactual(_) => "counterfactual",
            Command::SiCompare(_) => "si-compare",
            Command::Cluster(_) => "cluster",
            Command::Impact(_) => "impact",
            Command::Gap(_) => "gap",
            Command::SynthGen(_) => "synth-gen",
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Schema {
    Wide,
    Long,
}

impl From<Schema> for CsvSchema {
    fn from(s: Schema) -> Self {
        match s {
            Schema::Wide => CsvSchema::Wide,
            Schema::Long => CsvSchema::Long,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Cumulative,
    Daily,
    Level,
}

impl From<Kind> for MetricKind {
    fn from(k: Kind) -> Self {
        match k {
            Kind::Cumulative => MetricKind::Cumulative,
            Kind::Daily => MetricKind::Daily,
            Kind::Level => MetricKind::Level,
        }
    }
}

/// Panel file plus optional preprocessing, applied as difference,
/// per-million, then moving average.
#[derive(Args, Debug, Clone, Serialize)]
pub struct PanelInput {
    /// Panel CSV
    #[arg(long, value_name = "PATH")]
    pub panel: PathBuf,
    #[arg(long, value_enum, default_value = "wide")]
    pub schema: Schema,
    /// Metric kind; read from the file's `# metric` line when omitted
    #[arg(long, value_enum)]
    pub kind: Option<Kind>,
    /// Metric label
    #[arg(long)]
    pub metric: Option<String>,
    /// Unit metadata CSV: unit,population,region,intervention_date
    #[arg(long, value_name = "PATH")]
    pub meta: Option<PathBuf>,
    /// Difference a cumulative panel into daily values
    #[arg(long, num_args = 0..=1, require_equals = true, default_value_t = false, default_missing_value = "true")]
    pub daily: bool,
    /// Scale values to per million inhabitants (needs --meta)
    #[arg(long, num_args = 0..=1, require_equals = true, default_value_t = false, default_missing_value = "true")]
    pub per_million: bool,
    /// Trailing moving average over this many days
    #[arg(long, value_name = "DAYS")]
    pub smooth: Option<usize>,
}

#[derive(Args, Debug, Serialize)]
pub struct IngestArgs {
    /// Input CSV
    #[arg(long, value_name = "PATH")]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value = "wide")]
    pub schema: Schema,
    /// cumulative, daily or level
    #[arg(long, value_enum)]
    pub kind: Kind,
    #[arg(long, default_value = "value")]
    pub metric: String,
    /// Output file name
    #[arg(long, default_value = "panel.csv")]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Rule {
    Threshold,
    Intervention,
    Mobility,
}

#[derive(Args, Debug, Serialize)]
pub struct AlignArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub input: PanelInput,
    #[arg(long, value_enum, default_value = "threshold")]
    pub rule: Rule,
    /// Threshold in metric units (per million with --per-capita)
    #[arg(long, default_value_t = synthctl_core::align::DEFAULT_THRESHOLD)]
    pub threshold: f64,
    #[arg(long, num_args = 0..=1, require_equals = true, default_value_t = false, default_missing_value = "true")]
    pub per_capita: bool,
    /// Mobility panel for the mobility rule
    #[arg(long, value_name = "PATH")]
    pub mobility: Option<PathBuf>,
    /// Percent drop below baseline that counts as a lockdown
    #[arg(long, default_value_t = synthctl_core::align::DEFAULT_DROP_PCT)]
    pub drop_pct: f64,
    /// Days the drop has to last
    #[arg(long, default_value_t = synthctl_core::align::DEFAULT_SUSTAIN_DAYS)]
    pub sustain: usize,
    /// Explicit intervention dates, UNIT=YYYY-MM-DD,...
    #[arg(long, value_name = "LIST", value_parser = parse_date_map)]
    pub overrides: Option<DateMap>,
    /// Aligned days a target needs
    #[arg(long, requires = "test_up_to")]
    pub train_days: Option<usize>,
    /// Aligned days a donor needs
    #[arg(long, requires = "train_days")]
    pub test_up_to: Option<usize>,
}

#[derive(Args, Debug, Serialize)]
pub struct RankArgs {
    /// Keep exactly this many singular values
    #[arg(long, conflicts_with = "energy")]
    pub rank: Option<usize>,
    /// Keep the fewest singular values holding this share of the energy
    #[arg(long, default_value_t = synthctl_core::rsc::DEFAULT_ENERGY)]
    pub energy: f64,
    /// Ridge penalty on the weights
    #[arg(long, default_value_t = 0.0)]
    pub ridge: f64,
}

#[derive(Args, Debug, Serialize)]
pub struct FitArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub input: PanelInput,
    /// offsets.csv written by `align`
    #[arg(long, value_name = "PATH")]
    pub offsets: PathBuf,
    #[arg(long)]
    pub target: String,
    /// Donor units, comma separated; every other aligned unit by default
    #[arg(long, value_name = "LIST", value_parser = parse_list)]
    pub donors: Option<List>,
    /// Pre-intervention days to train on; the target's whole pre-period by default
    #[arg(long)]
    pub train_days: Option<usize>,
    /// Last relative day of the model; the last day every donor covers by default
    #[arg(long, allow_hyphen_values = true)]
    pub horizon_end: Option<i64>,
    #[command(flatten)]
    #[serde(flatten)]
    pub rank: RankArgs,
}

#[derive(Args, Debug, Serialize)]
pub struct PredictArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub input: PanelInput,
    #[arg(long, value_name = "PATH")]
    pub offsets: PathBuf,
    /// model.json written by `fit`
    #[arg(long, value_name = "PATH")]
    pub model: PathBuf,
    /// First relative day to write
    #[arg(long, allow_hyphen_values = true)]
    pub from: Option<i64>,
    /// Last relative day to write
    #[arg(long, allow_hyphen_values = true)]
    pub to: Option<i64>,
    /// Write negative counterfactual values as zero
    #[arg(long, num_args = 0..=1, require_equals = true, default_value_t = false, default_missing_value = "true")]
    pub clip: bool,
}

#[derive(Args, Debug, Serialize)]
pub struct CounterfactualArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub input: PanelInput,
    #[arg(long, value_name = "PATH")]
    pub offsets: PathBuf,
    #[arg(long)]
    pub target: String,
    #[arg(long, value_name = "LIST", value_parser = parse_list)]
    pub donors: Option<List>,
    /// Intervention shifts in days, comma separated; negative is earlier
    #[arg(long, value_name = "LIST", default_value = "0", allow_hyphen_values = true, value_parser = parse_i64_list)]
    pub shifts: I64List,
    #[arg(long, default_value_t = 20)]
    pub train_days: usize,
    /// Last relative day; shared by all shifts
    #[arg(long, allow_hyphen_values = true)]
    pub horizon_end: Option<i64>,
    #[command(flatten)]
    #[serde(flatten)]
    pub rank: RankArgs,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Squared,
    Linear,
}

impl From<Scale> for NmseScale {
    fn from(s: Scale) -> Self {
        match s {
            Scale::Squared => NmseScale::Squared,
            Scale::Linear => NmseScale::Linear,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Aggregation {
    DaysThenUnits,
    Pooled,
}

impl From<Aggregation> for NmseAggregation {
    fn from(a: Aggregation) -> Self {
        match a {
            Aggregation::DaysThenUnits => NmseAggregation::DaysThenUnits,
            Aggregation::Pooled => NmseAggregation::Pooled,
        }
    }
}

#[derive(Args, Debug, Serialize)]
pub struct SiCompareArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub input: PanelInput,
    /// Region tag of the donor units
    #[arg(long)]
    pub donor_region: String,
    /// Targets, comma separated; every unit with metadata by default
    #[arg(long, value_name = "LIST", value_parser = parse_list)]
    pub targets: Option<List>,
    #[arg(long, value_name = "YYYY-MM-DD")]
    pub reference_date: NaiveDate,
    #[arg(long, default_value_t = synthctl_core::synthint::DEFAULT_TOLERANCE)]
    pub tolerance: f64,
    /// Kept rank; 3 with 30 or more donors, else donors / 10
    #[arg(long)]
    pub rank: Option<usize>,
    /// Bin edges in cases per million, comma separated
    #[arg(long, value_name = "LIST", value_parser = parse_f64_list)]
    pub bins: F64List,
    #[arg(long, value_enum, default_value = "squared")]
    pub nmse_scale: Scale,
    #[arg(long, value_enum, default_value = "days-then-units")]
    pub nmse_aggregation: Aggregation,
}

#[derive(Args, Debug, Serialize)]
pub struct ClusterArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub input: PanelInput,
    /// Day indices START:END, end exclusive; the whole calendar by default
    #[arg(long, value_name = "START:END", value_parser = parse_span)]
    pub window: Option<Span>,
    #[arg(long, default_value_t = 4)]
    pub k: usize,
    /// z-score each unit's window first
    #[arg(long, num_args = 0..=1, require_equals = true, default_value_t = false, default_missing_value = "true")]
    pub normalize: bool,
    #[arg(long, default_value_t = 1)]
    pub restarts: usize,
    /// unit,group CSV to aggregate by instead of clustering
    #[arg(long, value_name = "PATH")]
    pub groups: Option<PathBuf>,
    /// Scalar statistics, LABEL=PATH,... of wide panels
    #[arg(long, value_name = "LIST", value_parser = parse_path_map)]
    pub stats: Option<PathMap>,
    /// Dates FIRST:LAST (inclusive) for the aggregates; the window by default
    #[arg(long, value_name = "FIRST:LAST", value_parser = parse_date_span)]
    pub stat_range: Option<DateSpan>,
}

#[derive(Args, Debug, Serialize)]
pub struct ImpactArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub input: PanelInput,
    /// offsets.csv aligned on intervention dates
    #[arg(long, value_name = "PATH")]
    pub offsets: PathBuf,
    /// Moving average for the peak search; 0 uses raw daily values
    #[arg(long, default_value_t = synthctl_core::impact::DEFAULT_SMOOTH_WINDOW)]
    pub peak_smooth: usize,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Baseline {
    Counterfactual,
    Actual,
}

impl From<Baseline> for GapBaseline {
    fn from(b: Baseline) -> Self {
        match b {
            Baseline::Counterfactual => GapBaseline::Counterfactual,
            Baseline::Actual => GapBaseline::Actual,
        }
    }
}

#[derive(Args, Debug, Serialize)]
pub struct GapArgs {
    /// Trajectory CSV written by `predict` or `counterfactual`
    #[arg(long, value_name = "PATH")]
    pub trajectory: PathBuf,
    /// Relative days FROM:TO, end exclusive
    #[arg(long, value_name = "FROM:TO", allow_hyphen_values = true, value_parser = parse_span)]
    pub window: Span,
    /// Total the reduction is expressed against
    #[arg(long, value_enum, default_value = "counterfactual")]
    pub baseline: Baseline,
}

#[derive(Args, Debug, Serialize)]
pub struct SynthGenArgs {
    #[arg(long, default_value_t = 50)]
    pub units: usize,
    #[arg(long, default_value_t = 180)]
    pub days: usize,
    /// Regime templates assigned round-robin: strict, loose, none
    #[arg(long, value_name = "LIST", default_value = "strict,loose", value_parser = parse_list)]
    pub regimes: List,
    /// Relative spread of per-unit parameters
    #[arg(long, default_value_t = 0.1)]
    pub jitter: f64,
    /// Intervention day before jitter
    #[arg(long, default_value_t = 40)]
    pub t0: usize,
    /// Observation noise σ; the template's value by default
    #[arg(long)]
    pub noise: Option<f64>,
    /// Cumulative cases file name; deaths, labels and metadata go next to it
    #[arg(long, default_value = "panel.csv")]
    pub out: PathBuf,
}

#[derive(Clone, Debug, Serialize)]
#[serde(transparent)]
pub struct List(pub Vec<String>);

#[derive(Clone, Debug, Serialize)]
#[serde(transparent)]
pub struct I64List(pub Vec<i64>);

#[derive(Clone, Debug, Serialize)]
#[serde(transparent)]
pub struct F64List(pub Vec<f64>);

#[derive(Clone, Debug, Serialize)]
#[serde(transparent)]
pub struct DateMap(pub std::collections::BTreeMap<String, NaiveDate>);

#[derive(Clone, Debug)]
pub struct PathMap(pub Vec<(String, PathBuf)>);

impl Serialize for PathMap {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_map(self.0.iter().map(|(k, p)| (k, p.display().to_string())))
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Span {
    pub from: i64,
    pub to: i64,
}

impl Serialize for Span {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(&format_args!("{}:{}", self.from, self.to))
    }
}

#[derive(Clone, Copy, Debug)]
pub struct DateSpan {
    pub first: NaiveDate,
    pub last: NaiveDate,
}

impl Serialize for DateSpan {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(&format_args!("{}:{}", self.first, self.last))
    }
}

fn items(s: &str) -> impl Iterator<Item = &str> {
    s.split(',').map(str::trim).filter(|x| !x.is_empty())
}

fn parse_list(s: &str) -> Result<List, String> {
    let v: Vec<String> = items(s).map(str::to_string).collect();
    if v.is_empty() {
        return Err("empty list".into());
    }
    Ok(List(v))
}

fn parse_i64_list(s: &str) -> Result<I64List, String> {
    items(s)
        .map(|x| x.parse().map_err(|_| format!("'{x}' is not an integer")))
        .collect::<Result<_, _>>()
        .map(I64List)
}

fn parse_f64_list(s: &str) -> Result<F64List, String> {
    items(s)
        .map(|x| x.parse().map_err(|_| format!("'{x}' is not a number")))
        .collect::<Result<_, _>>()
        .map(F64List)
}

fn pair(s: &str) -> Result<(&str, &str), String> {
    s.split_once('=')
        .map(|(k, v)| (k.trim(), v.trim()))
        .ok_or_else(|| format!("expected KEY=VALUE, got '{s}'"))
}

fn parse_date_map(s: &str) -> Result<DateMap, String> {
    items(s)
        .map(|x| {
            let (k, v) = pair(x)?;
            let d = v.parse().map_err(|_| format!("'{v}' is not a YYYY-MM-DD date"))?;
            Ok((k.to_string(), d))
        })
        .collect::<Result<_, String>>()
        .map(DateMap)
}

fn parse_path_map(s: &str) -> Result<PathMap, String> {
    items(s)
        .map(|x| pair(x).map(|(k, v)| (k.to_string(), PathBuf::from(v))))
        .collect::<Result<_, String>>()
        .map(PathMap)
}

fn parse_span(s: &str) -> Result<Span, String> {
    let (a, b) = s
        .split_once(':')
        .ok_or_else(|| format!("expected FROM:TO, got '{s}'"))?;
    let num = |x: &str| x.trim().parse::<i64>().map_err(|_| format!("'{x}' is not an integer"));
    let span = Span { from: num(a)?, to: num(b)? };
    if span.from >= span.to {
        return Err(format!("empty range {s}"));
    }
    Ok(span)
}

fn parse_date_span(s: &str) -> Result<DateSpan, String> {
    let (a, b) = s
        .split_once(':')
        .ok_or_else(|| format!("expected FIRST:LAST, got '{s}'"))?;
    let date = |x: &str| x.trim().parse::<NaiveDate>().map_err(|_| format!("'{x}' is not a YYYY-MM-DD date"));
    let span = DateSpan { first: date(a)?, last: date(b)? };
    if span.first > span.last {
        return Err(format!("empty range {s}"));
    }
    Ok(span)
}
