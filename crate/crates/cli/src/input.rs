use std::collections::BTreeMap;
use std::path::Path;

use chrono::NaiveDate;
use synthctl_core::align::{align_by_dates, AlignedPanel};
use synthctl_core::panel::{read_csv, read_meta, CsvSchema, Metric, MetricKind, Panel};

use crate::args::PanelInput;
use crate::output::Run;
use crate::{Failure, Outcome};

/// `# metric LABEL KIND` from the comment block at the top of a panel file.
fn declared_metric(bytes: &[u8]) -> Option<(String, MetricKind)> {
    let text = std::str::from_utf8(bytes).ok()?;
    text.lines()
        .take_while(|l| l.starts_with('#'))
        .find_map(|l| {
            let mut it = l.trim_start_matches('#').split_whitespace();
            (it.next()? == "metric").then_some(())?;
            let label = it.next()?.to_string();
            let kind = it.next()?.parse().ok()?;
            Some((label, kind))
        })
}

pub fn metric_line(m: &Metric) -> String {
    let kind = match m.kind {
        MetricKind::Cumulative => "cumulative",
        MetricKind::Daily => "daily",
        MetricKind::Level => "level",
    };
    format!("# metric {} {kind}\n", m.label.replace(char::is_whitespace, "_"))
}

pub fn read_panel(run: &mut Run, role: &str, path: &Path, schema: CsvSchema, metric: Option<Metric>) -> Outcome<Panel> {
    let bytes = run.read(role, path)?;
    let metric = match metric {
        Some(m) => m,
        None => {
            let (label, kind) = declared_metric(&bytes).ok_or_else(|| {
                Failure::Usage(format!("{}: no '# metric' line, pass --kind", path.display()))
            })?;
            Metric::new(label, kind)
        }
    };
    Ok(read_csv(bytes.as_slice(), schema, metric)?)
}

/// Loads the panel and applies the requested preprocessing.
pub fn load_panel(run: &mut Run, p: &PanelInput) -> Outcome<Panel> {
    let bytes = run.read("panel", &p.panel)?;
    let declared = declared_metric(&bytes);
    let kind = match (p.kind, &declared) {
        (Some(k), _) => k.into(),
        (None, Some((_, k))) => *k,
        (None, None) => {
            return Err(Failure::Usage(format!(
                "{}: no '# metric' line, pass --kind",
                p.panel.display()
            )))
        }
    };
    let label = p
        .metric
        .clone()
        .or(declared.map(|(l, _)| l))
        .unwrap_or_else(|| "value".into());
    let mut panel = read_csv(bytes.as_slice(), p.schema.into(), Metric::new(label, kind))?;
    if let Some(path) = &p.meta {
        let meta = read_meta(run.read("meta", path)?.as_slice())?;
        panel = panel.with_meta(meta);
    }
    if p.daily {
        panel = panel.to_daily()?.0;
    }
    if p.per_million {
        panel = panel.per_million()?;
    }
    if let Some(w) = p.smooth {
        panel = panel.moving_average(w)?;
    }
    Ok(panel)
}

fn csv_reader(bytes: &[u8]) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(bytes)
}

fn parse_error(path: &Path, line: u64, message: String) -> Failure {
    Failure::Data {
        kind: "ParseError",
        message: format!("{} line {line}: {message}", path.display()),
    }
}

/// Re-creates an alignment from an `offsets.csv` written by `align`.
pub fn load_offsets(run: &mut Run, path: &Path, panel: &Panel) -> Outcome<AlignedPanel> {
    let bytes = run.read("offsets", path)?;
    let mut dates = BTreeMap::new();
    for rec in csv_reader(&bytes).records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let unit = rec.get(0).unwrap_or_default();
        let date = rec.get(1).unwrap_or_default();
        let date: NaiveDate = date
            .parse()
            .map_err(|_| parse_error(path, line, format!("malformed date '{date}'")))?;
        dates.insert(unit.to_string(), date);
    }
    Ok(align_by_dates(panel, &dates, "not in offsets file")?)
}

/// `unit,group` rows into group -> members.
pub fn load_groups(run: &mut Run, path: &Path) -> Outcome<BTreeMap<String, Vec<String>>> {
    let bytes = run.read("groups", path)?;
    let mut groups: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for rec in csv_reader(&bytes).records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        match (rec.get(0), rec.get(1)) {
            (Some(u), Some(g)) if !u.is_empty() && !g.is_empty() => {
                groups.entry(g.to_string()).or_default().push(u.to_string())
            }
            _ => return Err(parse_error(path, line, "expected unit,group".into())),
        }
    }
    Ok(groups)
}
