use std::collections::HashMap;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::{is_missing, Column, Dataset, FeatureKind, MISSING};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Numeric,
    Categorical,
    Embedding,
    /// Binary default flag.
    Target,
    /// Statement year.
    Year,
    /// ISO-8601 date kept beside the features.
    Date,
    /// Row identifier.
    Id,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
}

impl ColumnSpec {
    pub fn new(name: impl Into<String>, kind: ColumnKind) -> Self {
        Self {
            name: name.into(),
            kind,
        }
    }
}

/// Ordered column declaration; must match the CSV header exactly.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub columns: Vec<ColumnSpec>,
}

impl Schema {
    pub fn new(columns: Vec<ColumnSpec>) -> Self {
        Self { columns }
    }

    /// The layout [`write_csv`] produces for `ds`.
    pub fn for_dataset(ds: &Dataset) -> Self {
        let mut columns = vec![
            ColumnSpec::new("row_id", ColumnKind::Id),
            ColumnSpec::new("year", ColumnKind::Year),
            ColumnSpec::new("target", ColumnKind::Target),
        ];
        for (n, k) in ds.feature_names().iter().zip(ds.feature_kinds()) {
            let kind = match k {
                FeatureKind::Numeric => ColumnKind::Numeric,
                FeatureKind::Categorical => ColumnKind::Categorical,
                FeatureKind::Embedding => ColumnKind::Embedding,
            };
            columns.push(ColumnSpec::new(n.clone(), kind));
        }
        for d in ds.date_columns() {
            columns.push(ColumnSpec::new(d, ColumnKind::Date));
        }
        Self { columns }
    }

    fn count(&self, kind: ColumnKind) -> usize {
        self.columns.iter().filter(|c| c.kind == kind).count()
    }
}

enum Sink {
    Feature(usize),
    Categorical(usize, HashMap<String, usize>),
    Target,
    Year,
    Date(usize),
    Id,
}

fn parse_real(tok: &str, row: usize, col: &str) -> Result<f64> {
    let t = tok.trim();
    if t.is_empty() {
        return Ok(MISSING);
    }
    match t.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(Error::Ingest {
            row,
            msg: format!("non-numeric token {t:?} in column {col}"),
        }),
    }
}

/// Read a CSV whose header matches `schema`.
///
/// Empty cells become missing markers; categorical labels are coded in order
/// of first appearance. Row numbers in errors count data rows from 1.
pub fn load_csv(path: impl AsRef<Path>, schema: &Schema) -> Result<Dataset> {
    let file = std::fs::File::open(path.as_ref())?;
    read_csv(file, schema)
}

pub fn read_csv<R: std::io::Read>(reader: R, schema: &Schema) -> Result<Dataset> {
    if schema.count(ColumnKind::Target) != 1 || schema.count(ColumnKind::Year) != 1 {
        return Err(Error::Schema(
            "schema needs exactly one target and one year column".into(),
        ));
    }
    if schema.count(ColumnKind::Id) > 1 {
        return Err(Error::Schema("at most one id column".into()));
    }
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .comment(Some(b'#'))
        .from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(|s| s.trim().to_string()).collect();
    let expected: Vec<&str> = schema.columns.iter().map(|c| c.name.as_str()).collect();
    if header != expected {
        return Err(Error::Schema(format!(
            "header {header:?} does not match schema {expected:?}"
        )));
    }

    let mut sinks = Vec::new();
    let mut columns: Vec<Column> = Vec::new();
    let mut date_names = Vec::new();
    for spec in &schema.columns {
        let sink = match spec.kind {
            ColumnKind::Numeric | ColumnKind::Embedding => {
                let kind = if spec.kind == ColumnKind::Numeric {
                    FeatureKind::Numeric
                } else {
                    FeatureKind::Embedding
                };
                columns.push(Column {
                    name: spec.name.clone(),
                    kind,
                    values: Vec::new(),
                    dictionary: None,
                });
                Sink::Feature(columns.len() - 1)
            }
            ColumnKind::Categorical => {
                columns.push(Column::categorical(spec.name.clone(), Vec::new(), Vec::new()));
                Sink::Categorical(columns.len() - 1, HashMap::new())
            }
            ColumnKind::Target => Sink::Target,
            ColumnKind::Year => Sink::Year,
            ColumnKind::Date => {
                date_names.push(spec.name.clone());
                Sink::Date(date_names.len() - 1)
            }
            ColumnKind::Id => Sink::Id,
        };
        sinks.push(sink);
    }

    let mut target = Vec::new();
    let mut year = Vec::new();
    let mut ids = Vec::new();
    let mut dates: Vec<Vec<Option<NaiveDate>>> = vec![Vec::new(); date_names.len()];
    for (r, rec) in rdr.records().enumerate() {
        let row = r + 1;
        let rec = rec?;
        if rec.len() != schema.columns.len() {
            return Err(Error::Ingest {
                row,
                msg: format!("expected {} fields, found {}", schema.columns.len(), rec.len()),
            });
        }
        for ((tok, sink), spec) in rec.iter().zip(sinks.iter_mut()).zip(&schema.columns) {
            match sink {
                Sink::Feature(j) => columns[*j].values.push(parse_real(tok, row, &spec.name)?),
                Sink::Categorical(j, lookup) => {
                    let t = tok.trim();
                    if t.is_empty() {
                        columns[*j].values.push(MISSING);
                    } else {
                        let dict = columns[*j].dictionary.as_mut().expect("categorical dictionary");
                        let code = *lookup.entry(t.to_string()).or_insert_with(|| {
                            dict.push(t.to_string());
                            dict.len() - 1
                        });
                        columns[*j].values.push(code as f64);
                    }
                }
                Sink::Target => match tok.trim() {
                    "0" => target.push(0),
                    "1" => target.push(1),
                    other => {
                        return Err(Error::Ingest {
                            row,
                            msg: format!("target must be 0 or 1, found {other:?}"),
                        })
                    }
                },
                Sink::Year => year.push(tok.trim().parse::<i32>().map_err(|_| Error::Ingest {
                    row,
                    msg: format!("invalid year {tok:?}"),
                })?),
                Sink::Date(k) => {
                    let t = tok.trim();
                    let d = if t.is_empty() {
                        None
                    } else {
                        Some(NaiveDate::parse_from_str(t, "%Y-%m-%d").map_err(|_| {
                            Error::Ingest {
                                row,
                                msg: format!("invalid date {t:?} in column {}", spec.name),
                            }
                        })?)
                    };
                    dates[*k].push(d);
                }
                Sink::Id => ids.push(tok.trim().parse::<u64>().map_err(|_| Error::Ingest {
                    row,
                    msg: format!("invalid row id {tok:?}"),
                })?),
            }
        }
    }

    let mut ds = Dataset::from_columns(columns, target, year)?;
    if schema.count(ColumnKind::Id) == 1 {
        ds = ds.with_row_ids(ids)?;
    }
    for (name, d) in date_names.into_iter().zip(dates) {
        ds = ds.with_dates(name, d)?;
    }
    Ok(ds)
}

fn fmt_real(v: f64) -> String {
    if is_missing(v) {
        String::new()
    } else {
        format!("{v}")
    }
}

/// Write `ds` in the layout of [`Schema::for_dataset`]; `preamble` lines are
/// emitted first as `#` comments.
pub fn write_csv(ds: &Dataset, path: impl AsRef<Path>, preamble: &[String]) -> Result<()> {
    use std::io::Write;
    let mut file = std::io::BufWriter::new(std::fs::File::create(path.as_ref())?);
    for line in preamble {
        writeln!(file, "# {line}")?;
    }
    let mut w = csv::Writer::from_writer(file);
    let schema = Schema::for_dataset(ds);
    w.write_record(schema.columns.iter().map(|c| c.name.as_str()))?;
    let dates: Vec<&[Option<NaiveDate>]> = ds
        .date_columns()
        .map(|n| ds.dates(n).expect("date column"))
        .collect();
    for i in 0..ds.n_rows() {
        let mut rec = vec![
            ds.row_ids()[i].to_string(),
            ds.year()[i].to_string(),
            ds.target()[i].to_string(),
        ];
        for j in 0..ds.n_cols() {
            let cell = match ds.feature_kinds()[j] {
                FeatureKind::Categorical => ds.label(i, j).unwrap_or("").to_string(),
                _ => fmt_real(ds.get(i, j)),
            };
            rec.push(cell);
        }
        for d in &dates {
            rec.push(d[i].map(|d| d.format("%Y-%m-%d").to_string()).unwrap_or_default());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema(cols: &[(&str, ColumnKind)]) -> Schema {
        Schema::new(cols.iter().map(|(n, k)| ColumnSpec::new(*n, *k)).collect())
    }

    #[test]
    fn numeric_column() {
        let s = schema(&[("year", ColumnKind::Year), ("target", ColumnKind::Target), ("x", ColumnKind::Numeric)]);
        let ds = read_csv("year,target,x\n2015,0,1\n2015,1,2\n2016,0,3\n".as_bytes(), &s).unwrap();
        assert_eq!(ds.n_rows(), 3);
        assert_eq!(ds.feature_kinds(), &[FeatureKind::Numeric]);
        assert_eq!(ds.column_vec(0), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn empty_cell_is_missing() {
        let s = schema(&[("year", ColumnKind::Year), ("target", ColumnKind::Target), ("x", ColumnKind::Numeric)]);
        let ds = read_csv("year,target,x\n2015,0,\n2015,1,0\n".as_bytes(), &s).unwrap();
        assert!(is_missing(ds.get(0, 0)));
        assert_eq!(ds.get(1, 0), 0.0);
    }

    #[test]
    fn categorical_first_appearance() {
        let s = schema(&[("year", ColumnKind::Year), ("target", ColumnKind::Target), ("c", ColumnKind::Categorical)]);
        let ds = read_csv("year,target,c\n1,0,a\n1,1,b\n1,0,a\n".as_bytes(), &s).unwrap();
        assert_eq!(ds.column_vec(0), vec![0.0, 1.0, 0.0]);
        assert_eq!(ds.dictionary(0).unwrap(), &["a".to_string(), "b".to_string()]);
    }

    #[test]
    fn ingestion_errors() {
        let s = schema(&[("year", ColumnKind::Year), ("target", ColumnKind::Target), ("x", ColumnKind::Numeric)]);
        let e = read_csv("year,target,x\n1,0,1\n1,0\n".as_bytes(), &s).unwrap_err();
        assert!(matches!(e, Error::Ingest { row: 2, .. }), "{e}");
        let e = read_csv("year,target,x\n1,0,abc\n".as_bytes(), &s).unwrap_err();
        assert!(matches!(e, Error::Ingest { row: 1, .. }));
        let e = read_csv("year,target,x\n1,0,NaN\n".as_bytes(), &s).unwrap_err();
        assert!(matches!(e, Error::Ingest { .. }));
        let e = read_csv("year,target,y\n".as_bytes(), &s).unwrap_err();
        assert!(matches!(e, Error::Schema(_)));
        let e = read_csv("year,target,x\n1,2,3\n".as_bytes(), &s).unwrap_err();
        assert!(matches!(e, Error::Ingest { .. }));
    }

    #[test]
    fn quoted_fields_and_dates() {
        let s = schema(&[
            ("id", ColumnKind::Id),
            ("year", ColumnKind::Year),
            ("target", ColumnKind::Target),
            ("sector", ColumnKind::Categorical),
            ("fsd", ColumnKind::Date),
        ]);
        let ds = read_csv(
            "id,year,target,sector,fsd\n7,2015,0,\"Retail, food\",2015-12-31\n9,2016,1,x,\n".as_bytes(),
            &s,
        )
        .unwrap();
        assert_eq!(ds.row_ids(), &[7, 9]);
        assert_eq!(ds.label(0, 0), Some("Retail, food"));
        assert_eq!(ds.dates("fsd").unwrap()[0], NaiveDate::from_ymd_opt(2015, 12, 31));
        assert_eq!(ds.dates("fsd").unwrap()[1], None);
    }

    #[test]
    fn write_then_read_round_trip() {
        let ds = Dataset::from_columns(
            vec![
                Column::numeric("x", vec![0.1, MISSING, 1e-300]),
                Column::categorical("c", vec![1.0, 0.0, MISSING], vec!["p".into(), "q".into()]),
            ],
            vec![1, 0, 0],
            vec![2011, 2012, 2013],
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        write_csv(&ds, &p, &["config_hash=abc".into()]).unwrap();
        let back = load_csv(&p, &Schema::for_dataset(&ds)).unwrap();
        assert_eq!(back.target(), ds.target());
        assert_eq!(back.get(0, 0), 0.1);
        assert_eq!(back.get(2, 0), 1e-300);
        assert!(is_missing(back.get(1, 0)));
        // codes are re-assigned by first appearance, labels survive
        assert_eq!(back.label(0, 1), Some("q"));
        assert_eq!(back.label(1, 1), Some("p"));
    }
}
