use std::path::Path;

use chrono::{DateTime, NaiveDate, NaiveDateTime};
use ndarray::Array2;

use super::store::slugify;
use super::TimeSeriesDataset;
use crate::{Error, Result};

/// A parsed table before cleaning: optional timestamps plus one column per
/// variable, `None` for missing cells.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RawTable {
    pub var_names: Vec<String>,
    pub timestamps: Option<Vec<String>>,
    pub columns: Vec<Vec<Option<f64>>>,
}

impl RawTable {
    pub fn from_columns(var_names: Vec<String>, columns: Vec<Vec<Option<f64>>>) -> Self {
        Self {
            var_names,
            timestamps: None,
            columns,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }
}

#[derive(Clone, Debug, Default)]
pub struct IngestOptions {
    pub name: String,
    /// Aggregate every `m` consecutive steps into their mean.
    pub resample_factor: Option<usize>,
    /// Fraction of the (resampled) series kept as the training region.
    pub split: Option<f64>,
    pub source: String,
}

const TIME_HEADERS: [&str; 6] = ["timestamp", "time", "date", "datetime", "ts", "index"];

fn is_missing(cell: &str) -> bool {
    matches!(
        cell.trim().to_ascii_lowercase().as_str(),
        "" | "nan" | "na" | "n/a" | "null" | "none"
    )
}

fn parse_time(s: &str) -> Option<f64> {
    let s = s.trim();
    if let Ok(v) = s.parse::<f64>() {
        return Some(v);
    }
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Some(t.timestamp_millis() as f64 / 1000.0);
    }
    for fmt in ["%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M", "%Y/%m/%d %H:%M:%S"] {
        if let Ok(t) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(t.and_utc().timestamp() as f64);
        }
    }
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .ok()
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .map(|t| t.and_utc().timestamp() as f64)
}

/// Read a header-first CSV. A column named like a timestamp, or a first
/// column whose first cell is a date, is taken as the time axis.
pub fn read_csv(path: &Path) -> Result<RawTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Artifact {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::Artifact {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?
        .iter()
        .map(str::to_string)
        .collect();
    let records: Vec<csv::StringRecord> = rdr
        .records()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Artifact {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;

    let mut time_col = headers
        .iter()
        .position(|h| TIME_HEADERS.contains(&h.to_ascii_lowercase().as_str()));
    if time_col.is_none() && headers.len() > 1 {
        if let Some(first) = records.first().and_then(|r| r.get(0)) {
            if first.parse::<f64>().is_err() && parse_time(first).is_some() {
                time_col = Some(0);
            }
        }
    }

    let value_cols: Vec<usize> = (0..headers.len()).filter(|&c| Some(c) != time_col).collect();
    if value_cols.is_empty() {
        return Err(Error::Ingest {
            row: 0,
            message: "table has no value columns".to_string(),
        });
    }
    let mut columns = vec![Vec::with_capacity(records.len()); value_cols.len()];
    let mut timestamps = time_col.map(|_| Vec::with_capacity(records.len()));
    for (r, rec) in records.iter().enumerate() {
        if let (Some(tc), Some(ts)) = (time_col, timestamps.as_mut()) {
            ts.push(rec.get(tc).unwrap_or("").to_string());
        }
        for (j, &c) in value_cols.iter().enumerate() {
            let cell = rec.get(c).unwrap_or("");
            let v = if is_missing(cell) {
                None
            } else {
                Some(cell.parse::<f64>().map_err(|_| Error::Ingest {
                    row: r,
                    message: format!("non-numeric value {cell:?} in column {}", headers[c]),
                })?)
            };
            columns[j].push(v);
        }
    }
    Ok(RawTable {
        var_names: value_cols.iter().map(|&c| headers[c].clone()).collect(),
        timestamps,
        columns,
    })
}

pub(crate) fn step_label(seconds: f64) -> String {
    let s = seconds.round() as i64;
    if s > 0 && s % 3600 == 0 {
        format!("{}h", s / 3600)
    } else if s > 0 && s % 60 == 0 {
        format!("{}min", s / 60)
    } else {
        format!("{}s", seconds)
    }
}

/// Check that timestamps are evenly spaced and return the step in seconds.
fn regular_step(ts: &[String]) -> Result<f64> {
    let times: Vec<f64> = ts
        .iter()
        .enumerate()
        .map(|(i, s)| {
            parse_time(s).ok_or_else(|| Error::Ingest {
                row: i,
                message: format!("unparseable timestamp {s:?}"),
            })
        })
        .collect::<Result<_>>()?;
    if times.len() < 2 {
        return Ok(1.0);
    }
    let step = times[1] - times[0];
    if step <= 0.0 {
        return Err(Error::Ingest {
            row: 1,
            message: "timestamps are not increasing".to_string(),
        });
    }
    for i in 2..times.len() {
        let d = times[i] - times[i - 1];
        if (d - step).abs() > 1e-6 * step.abs().max(1.0) {
            return Err(Error::Ingest {
                row: i,
                message: format!("irregular time step {d} (expected {step})"),
            });
        }
    }
    Ok(step)
}

/// Linear interpolation inside, nearest valid value at the ends.
fn fill_missing(col: &[Option<f64>]) -> Option<Vec<f64>> {
    let known: Vec<usize> = (0..col.len()).filter(|&i| col[i].is_some()).collect();
    let (&first, &last) = (known.first()?, known.last()?);
    let mut out = vec![0.0; col.len()];
    for o in out.iter_mut().take(first + 1) {
        *o = col[first].unwrap_or_default();
    }
    for o in out.iter_mut().skip(last) {
        *o = col[last].unwrap_or_default();
    }
    for pair in known.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        let (va, vb) = (col[a].unwrap_or_default(), col[b].unwrap_or_default());
        out[a] = va;
        for (t, o) in out.iter_mut().enumerate().take(b).skip(a + 1) {
            let f = (t - a) as f64 / (b - a) as f64;
            *o = va + f * (vb - va);
        }
        out[b] = vb;
    }
    Some(out)
}

/// Mean of every `m` consecutive values; a trailing partial block is dropped.
pub(crate) fn block_means(x: &[f64], m: usize) -> Vec<f64> {
    x.chunks_exact(m)
        .map(|c| c.iter().sum::<f64>() / m as f64)
        .collect()
}

/// Clean a raw table into a regular, gap-free dataset.
pub fn ingest(table: &RawTable, opts: &IngestOptions) -> Result<TimeSeriesDataset> {
    if table.columns.is_empty() {
        return Err(Error::Ingest {
            row: 0,
            message: "table has no numeric columns".to_string(),
        });
    }
    let n = table.n_rows();
    if table.columns.iter().any(|c| c.len() != n) {
        return Err(Error::shape("table columns have different lengths"));
    }
    let mut step = match &table.timestamps {
        Some(ts) => Some(regular_step(ts)?),
        None => None,
    };

    let mut cols = Vec::with_capacity(table.columns.len());
    for (j, col) in table.columns.iter().enumerate() {
        let filled = fill_missing(col).ok_or_else(|| Error::Ingest {
            row: 0,
            message: format!("variable {} has no valid values", table.var_names[j]),
        })?;
        cols.push(filled);
    }
    if let Some(m) = opts.resample_factor {
        if m == 0 {
            return Err(Error::invalid("resample factor must be positive"));
        }
        cols = cols.iter().map(|c| block_means(c, m)).collect();
        step = step.map(|s| s * m as f64);
    }
    let t = cols[0].len();
    let v = cols.len();
    let values = Array2::from_shape_fn((t, v), |(i, j)| cols[j][i]);

    let name = if opts.name.is_empty() {
        "dataset".to_string()
    } else {
        opts.name.clone()
    };
    let mut ds = TimeSeriesDataset {
        id: slugify(&name),
        name,
        values,
        var_names: table.var_names.clone(),
        step: match step {
            Some(s) => step_label(s),
            None => opts.resample_factor.unwrap_or(1).to_string(),
        },
        split_point: None,
        source: opts.source.clone(),
    };
    ds.validate()?;
    if let Some(f) = opts.split {
        ds = ds.with_split_fraction(f)?;
    }
    Ok(ds)
}
