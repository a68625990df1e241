//! CSV ingestion with row and column diagnostics.
//!
//! Layout: a header row, an optional leading time column, then the observed
//! series, then the covariate pool.

use std::path::Path;

use nhhmm::TimeSeriesDataset;

use crate::error::{CliError, CliResult};

const TIME_HEADERS: &[&str] = &["date", "time", "t", "period", "month", "year", "index", "timestamp"];

/// A parsed numeric table. `columns[0]` is the observed series when the
/// table is read as a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub time: Option<Vec<String>>,
    pub names: Vec<String>,
    /// Row-major values, `rows x names.len()`.
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.names.iter().position(|n| n == name)?;
        Some(self.rows.iter().map(|r| r[j]).collect())
    }

    /// Rows restricted to `names`, in that order.
    pub fn select(&self, names: &[String], path: &Path) -> CliResult<Vec<Vec<f64>>> {
        let idx = names
            .iter()
            .map(|n| {
                self.names.iter().position(|m| m == n).ok_or_else(|| {
                    CliError::validation(format!("{}: missing column '{n}'", path.display()))
                })
            })
            .collect::<CliResult<Vec<_>>>()?;
        Ok(self.rows.iter().map(|r| idx.iter().map(|&j| r[j]).collect()).collect())
    }
}

fn open(path: &Path) -> CliResult<csv::Reader<std::fs::File>> {
    csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::validation(format!("{}: {e}", path.display())))
}

fn looks_like_time(header: &str, first_cell: Option<&str>) -> bool {
    TIME_HEADERS.contains(&header.to_ascii_lowercase().as_str())
        || first_cell.is_some_and(|c| !c.is_empty() && c.parse::<f64>().is_err())
}

fn check_time_order(labels: &[String], path: &Path) -> CliResult<()> {
    let numeric: Option<Vec<f64>> = labels.iter().map(|l| l.parse().ok()).collect();
    let same_width = labels.iter().all(|l| l.len() == labels[0].len());
    for i in 1..labels.len() {
        let ordered = match &numeric {
            Some(v) => v[i] > v[i - 1],
            None if same_width => labels[i] > labels[i - 1],
            None => true,
        };
        if !ordered {
            return Err(CliError::validation(format!(
                "{}: rows are not strictly time-ordered: row {} ('{}') follows row {} ('{}')",
                path.display(),
                i + 1,
                labels[i],
                i,
                labels[i - 1]
            )));
        }
    }
    Ok(())
}

/// Reads a headed numeric CSV. Blank, non-numeric and non-finite cells are
/// rejected with their 1-based data row and column name.
pub fn read_table(path: &Path) -> CliResult<Table> {
    let mut rdr = open(path)?;
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| CliError::validation(format!("{}: {e}", path.display())))?
        .iter()
        .map(str::to_string)
        .collect();
    if headers.is_empty() || headers.iter().all(String::is_empty) {
        return Err(CliError::validation(format!("{}: missing header row", path.display())));
    }
    for (i, h) in headers.iter().enumerate() {
        if h.is_empty() {
            return Err(CliError::validation(format!("{}: empty header in column {}", path.display(), i + 1)));
        }
        if headers[..i].contains(h) {
            return Err(CliError::validation(format!("{}: duplicate column name '{h}'", path.display())));
        }
    }
    let records = rdr
        .records()
        .enumerate()
        .map(|(i, r)| r.map_err(|e| CliError::validation(format!("{}: row {}: {e}", path.display(), i + 1))))
        .collect::<CliResult<Vec<_>>>()?;
    let has_time = looks_like_time(&headers[0], records.first().and_then(|r| r.get(0)));
    let skip = usize::from(has_time);
    let names: Vec<String> = headers[skip..].to_vec();
    let mut rows = Vec::with_capacity(records.len());
    let mut time = Vec::new();
    for (i, rec) in records.iter().enumerate() {
        if has_time {
            time.push(rec.get(0).unwrap_or_default().to_string());
        }
        let mut row = Vec::with_capacity(names.len());
        for (j, name) in names.iter().enumerate() {
            let cell = rec.get(j + skip).unwrap_or_default();
            let at = || format!("{}: row {}, column '{name}'", path.display(), i + 1);
            if cell.is_empty() {
                return Err(CliError::validation(format!("{}: blank cell", at())));
            }
            let v: f64 = cell
                .parse()
                .map_err(|_| CliError::validation(format!("{}: non-numeric cell '{cell}'", at())))?;
            if !v.is_finite() {
                return Err(CliError::validation(format!("{}: non-finite value '{cell}'", at())));
            }
            row.push(v);
        }
        rows.push(row);
    }
    if has_time {
        check_time_order(&time, path)?;
    }
    Ok(Table {
        time: has_time.then_some(time),
        names,
        rows,
    })
}

/// A dataset read from disk, with the autoregressive columns it gained.
#[derive(Debug, Clone)]
pub struct Ingested {
    pub dataset: TimeSeriesDataset,
    /// Names of the covariates in the file, before lag columns.
    pub base_names: Vec<String>,
    pub ar_columns: Vec<(usize, usize)>,
}

/// First value column is `y`; the rest form the pool. `ar_lags > 0` appends
/// lags `1..=ar_lags` of `y` to the pool.
pub fn ingest_csv(path: &Path, ar_lags: usize) -> CliResult<Ingested> {
    let table = read_table(path)?;
    if table.names.is_empty() {
        return Err(CliError::validation(format!("{}: no value columns", path.display())));
    }
    let y: Vec<f64> = table.rows.iter().map(|r| r[0]).collect();
    let pool: Vec<Vec<f64>> = table.rows.iter().map(|r| r[1..].to_vec()).collect();
    let base_names = table.names[1..].to_vec();
    let mut dataset = TimeSeriesDataset::new(y, pool, base_names.clone())
        .map_err(|e| CliError::validation(format!("{}: {e}", path.display())))?;
    if let Some(t) = table.time {
        dataset = dataset.with_time_index(t)?;
    }
    let (dataset, ar_columns) = dataset
        .with_ar_lags(ar_lags)
        .map_err(|e| CliError::validation(format!("{}: {e}", path.display())))?;
    Ok(Ingested {
        dataset,
        base_names,
        ar_columns,
    })
}

/// Writes `t,y,<names>` with full-precision values.
pub fn write_series_csv<W: std::io::Write>(
    mut w: W,
    t0: usize,
    y: &[f64],
    rows: &[Vec<f64>],
    names: &[String],
) -> std::io::Result<()> {
    writeln!(w, "t,y,{}", names.join(","))?;
    for (i, (v, r)) in y.iter().zip(rows).enumerate() {
        write!(w, "{},{v}", t0 + i)?;
        for x in r {
            write!(w, ",{x}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}
