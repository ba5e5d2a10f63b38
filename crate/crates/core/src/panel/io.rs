//! CSV ingestion and export for panels and unit metadata.
//!
//! Wide files carry one row per unit (`unit,YYYY-MM-DD,...`); long files one
//! row per observation (`unit,date,value`). Empty cells are missing. Lines
//! starting with `#` are comments.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::{Metric, Panel, UnitMeta};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CsvSchema {
    Long,
    Wide,
}

impl std::str::FromStr for CsvSchema {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "long" => Ok(CsvSchema::Long),
            "wide" => Ok(CsvSchema::Wide),
            other => Err(Error::InvalidParameter(format!("unknown schema '{other}'"))),
        }
    }
}

pub fn ingest_csv(path: impl AsRef<Path>, schema: CsvSchema, metric: Metric) -> Result<Panel> {
    read_csv(File::open(path)?, schema, metric)
}

pub fn read_csv<R: Read>(reader: R, schema: CsvSchema, metric: Metric) -> Result<Panel> {
    let mut rdr = csv_reader(reader);
    match schema {
        CsvSchema::Wide => read_wide(&mut rdr, metric),
        CsvSchema::Long => read_long(&mut rdr, metric),
    }
}

fn csv_reader<R: Read>(reader: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader)
}

fn records<R: Read>(rdr: &mut csv::Reader<R>) -> Result<Vec<(usize, csv::StringRecord)>> {
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.iter().all(str::is_empty) {
            continue;
        }
        out.push((line, rec));
    }
    Ok(out)
}

fn parse_date(row: usize, s: &str) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(s, "%Y-%m-%d").map_err(|e| Error::Parse {
        row,
        message: format!("malformed date '{s}': {e}"),
    })
}

fn parse_cell(row: usize, s: &str) -> Result<Option<f64>> {
    if s.is_empty() {
        return Ok(None);
    }
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(Some(v)),
        _ => Err(Error::Parse {
            row,
            message: format!("malformed value '{s}'"),
        }),
    }
}

/// Lays observations onto the contiguous calendar spanning all dates seen.
fn assemble(
    units: Vec<String>,
    cells: HashMap<(usize, NaiveDate), Option<f64>>,
    dates: impl Iterator<Item = NaiveDate> + Clone,
    metric: Metric,
) -> Result<Panel> {
    let (Some(first), Some(last)) = (dates.clone().min(), dates.max()) else {
        return Err(Error::EmptyInput);
    };
    if units.is_empty() || cells.values().all(Option::is_none) {
        return Err(Error::EmptyInput);
    }
    let n_days = (last - first).num_days() as usize + 1;
    let mut values = vec![vec![None; n_days]; units.len()];
    for ((u, date), v) in cells {
        values[u][(date - first).num_days() as usize] = v;
    }
    Panel::new(units, first, values, metric)
}

fn read_wide<R: Read>(rdr: &mut csv::Reader<R>, metric: Metric) -> Result<Panel> {
    let recs = records(rdr)?;
    let Some(((header_row, header), body)) = recs.split_first() else {
        return Err(Error::EmptyInput);
    };
    let mut dates = Vec::with_capacity(header.len().saturating_sub(1));
    for field in header.iter().skip(1) {
        let date = parse_date(*header_row, field)?;
        if dates.contains(&date) {
            return Err(Error::Duplicate {
                unit: "<header>".into(),
                date: date.to_string(),
            });
        }
        dates.push(date);
    }
    let mut units: Vec<String> = Vec::new();
    let mut cells = HashMap::new();
    for (row, rec) in body {
        if rec.len() != header.len() {
            return Err(Error::Parse {
                row: *row,
                message: format!("expected {} fields, found {}", header.len(), rec.len()),
            });
        }
        let unit = rec[0].to_string();
        if unit.is_empty() {
            return Err(Error::Parse {
                row: *row,
                message: "empty unit id".into(),
            });
        }
        if units.contains(&unit) {
            return Err(Error::Duplicate {
                unit,
                date: dates.first().map(ToString::to_string).unwrap_or_default(),
            });
        }
        let u = units.len();
        units.push(unit);
        for (date, field) in dates.iter().zip(rec.iter().skip(1)) {
            cells.insert((u, *date), parse_cell(*row, field)?);
        }
    }
    assemble(units, cells, dates.into_iter(), metric)
}

fn read_long<R: Read>(rdr: &mut csv::Reader<R>, metric: Metric) -> Result<Panel> {
    let recs = records(rdr)?;
    let Some(((header_row, header), body)) = recs.split_first() else {
        return Err(Error::EmptyInput);
    };
    if header.len() != 3 {
        return Err(Error::Parse {
            row: *header_row,
            message: "long format header must be unit,date,value".into(),
        });
    }
    let mut units: Vec<String> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut cells = HashMap::new();
    let mut dates = Vec::new();
    for (row, rec) in body {
        if rec.len() != 3 {
            return Err(Error::Parse {
                row: *row,
                message: format!("expected 3 fields, found {}", rec.len()),
            });
        }
        let unit = &rec[0];
        let date = parse_date(*row, &rec[1])?;
        let value = parse_cell(*row, &rec[2])?;
        let u = *index.entry(unit.to_string()).or_insert_with(|| {
            units.push(unit.to_string());
            units.len() - 1
        });
        if cells.insert((u, date), value).is_some() {
            return Err(Error::Duplicate {
                unit: unit.to_string(),
                date: date.to_string(),
            });
        }
        dates.push(date);
    }
    assemble(units, cells, dates.into_iter(), metric)
}

/// Writes `unit,YYYY-MM-DD,...` with shortest round-trip float formatting.
pub fn write_wide<W: Write>(panel: &Panel, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["unit".to_string()];
    header.extend(panel.dates().iter().map(|d| d.format("%Y-%m-%d").to_string()));
    w.write_record(&header)?;
    for (unit, row) in panel.units().iter().zip(panel.rows()) {
        let mut rec = vec![unit.clone()];
        rec.extend(row.iter().map(|c| c.map(|v| v.to_string()).unwrap_or_default()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_meta(path: impl AsRef<Path>) -> Result<BTreeMap<String, UnitMeta>> {
    read_meta(File::open(path)?)
}

/// Reads `unit,population,region,intervention_date`. Several measure dates may
/// be given in one cell separated by `;`.
pub fn read_meta<R: Read>(reader: R) -> Result<BTreeMap<String, UnitMeta>> {
    let mut rdr = csv_reader(reader);
    let recs = records(&mut rdr)?;
    let Some((_, body)) = recs.split_first() else {
        return Err(Error::EmptyInput);
    };
    let mut out = BTreeMap::new();
    for (row, rec) in body {
        let field = |i: usize| rec.get(i).unwrap_or("");
        let unit = field(0).to_string();
        let population = parse_population(*row, field(1))?;
        let region = Some(field(2)).filter(|s| !s.is_empty()).map(str::to_string);
        let intervention_dates = field(3)
            .split(';')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| parse_date(*row, s))
            .collect::<Result<Vec<_>>>()?;
        let meta = UnitMeta {
            population,
            region,
            intervention_dates,
        };
        if out.insert(unit.clone(), meta).is_some() {
            return Err(Error::Duplicate {
                unit,
                date: "metadata".into(),
            });
        }
    }
    Ok(out)
}

fn parse_population(row: usize, s: &str) -> Result<u64> {
    let bad = || Error::Parse {
        row,
        message: format!("population must be a positive integer, got '{s}'"),
    };
    let p = match s.parse::<u64>() {
        Ok(p) => p,
        Err(_) => {
            let f: f64 = s.parse().map_err(|_| bad())?;
            if f.fract() != 0.0 || f < 1.0 || f > u64::MAX as f64 {
                return Err(bad());
            }
            f as u64
        }
    };
    if p == 0 {
        return Err(bad());
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::MetricKind;

    fn metric() -> Metric {
        Metric::new("cumulative-deaths", MetricKind::Cumulative)
    }

    #[test]
    fn wide_three_by_ten() {
        let mut s = String::from("unit");
        for d in 1..=10 {
            s.push_str(&format!(",2020-04-{d:02}"));
        }
        s.push('\n');
        for u in ["a", "b", "c"] {
            s.push_str(u);
            for d in 1..=10 {
                s.push_str(&format!(",{d}"));
            }
            s.push('\n');
        }
        let p = read_csv(s.as_bytes(), CsvSchema::Wide, metric()).unwrap();
        assert_eq!((p.n_units(), p.n_days()), (3, 10));
        assert_eq!(p.mask().observed_fraction, 1.0);
    }

    #[test]
    fn long_with_one_missing_cell() {
        let mut s = String::from("unit,date,value\n");
        for u in ["a", "b", "c"] {
            for d in 1..=10 {
                if u == "b" && d == 4 {
                    continue;
                }
                s.push_str(&format!("{u},2020-04-{d:02},{d}\n"));
            }
        }
        let p = read_csv(s.as_bytes(), CsvSchema::Long, metric()).unwrap();
        assert_eq!(p.row_of("b").unwrap()[3], None);
        assert!((p.mask().observed_fraction - 29.0 / 30.0).abs() < 1e-15);
    }

    #[test]
    fn calendar_gaps_become_missing_cells() {
        let s = "unit,2020-04-01,2020-04-03\na,1,3\n";
        let p = read_csv(s.as_bytes(), CsvSchema::Wide, metric()).unwrap();
        assert_eq!(p.row(0), &[Some(1.0), None, Some(3.0)]);
    }

    #[test]
    fn malformed_date_reports_row() {
        let s = "unit,date,value\na,2020-04-01,1\na,2020-13-01,2\n";
        match read_csv(s.as_bytes(), CsvSchema::Long, metric()) {
            Err(Error::Parse { row, .. }) => assert_eq!(row, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_long_cell() {
        let s = "unit,date,value\na,2020-04-01,1\na,2020-04-01,2\n";
        assert!(matches!(
            read_csv(s.as_bytes(), CsvSchema::Long, metric()),
            Err(Error::Duplicate { .. })
        ));
    }

    #[test]
    fn duplicate_wide_unit() {
        let s = "unit,2020-04-01\na,1\na,2\n";
        assert!(matches!(
            read_csv(s.as_bytes(), CsvSchema::Wide, metric()),
            Err(Error::Duplicate { .. })
        ));
    }

    #[test]
    fn empty_inputs() {
        for s in ["", "unit,date,value\n", "# only a comment\n"] {
            assert!(matches!(
                read_csv(s.as_bytes(), CsvSchema::Long, metric()),
                Err(Error::EmptyInput)
            ));
        }
    }

    #[test]
    fn comments_are_skipped() {
        let s = "# synthctl 0.1.0 ingest\nunit,2020-04-01\na,1\n";
        let p = read_csv(s.as_bytes(), CsvSchema::Wide, metric()).unwrap();
        assert_eq!(p.row(0), &[Some(1.0)]);
    }

    #[test]
    fn meta_with_multiple_measures() {
        let s = "unit,population,region,intervention_date\n\
                 ny,19450000,Northeast,2020-03-16;2020-03-22\n\
                 se,10230000,,\n";
        let m = read_meta(s.as_bytes()).unwrap();
        assert_eq!(
            m["ny"].intervention_date(),
            Some("2020-03-22".parse().unwrap())
        );
        assert_eq!(m["se"].region, None);
        assert!(m["se"].intervention_dates.is_empty());
    }

    #[test]
    fn meta_rejects_zero_population() {
        let s = "unit,population,region,intervention_date\na,0,,\n";
        assert!(read_meta(s.as_bytes()).is_err());
    }
}
