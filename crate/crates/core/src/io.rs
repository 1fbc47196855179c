//! File formats: response tables, parameter tables, matrices, traces and
//! structured reports.

use std::fmt::Write as _;
use std::fs;
use std::io::Read;
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::engine::FitResult;
use crate::error::{Error, Result};
use crate::model::{ItemParameters, ResponseMatrix};

pub const MISSING: &str = "NA";
const MAX_LISTED: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Format {
    #[default]
    Csv,
    Tsv,
}

impl Format {
    pub fn delimiter(self) -> u8 {
        match self {
            Format::Csv => b',',
            Format::Tsv => b'\t',
        }
    }

    /// Guess from the file extension, defaulting to CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("tsv") => Format::Tsv,
            _ => Format::Csv,
        }
    }
}

impl FromStr for Format {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Format::Csv),
            "tsv" => Ok(Format::Tsv),
            other => Err(Error::Config(format!("unknown format '{other}' (expected csv or tsv)"))),
        }
    }
}

impl std::fmt::Display for Format {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Format::Csv => "csv",
            Format::Tsv => "tsv",
        })
    }
}

/// Round-trip float formatting (17 significant digits).
pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        format!("{x}")
    }
}

fn parse_f64(s: &str, what: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| Error::Load(format!("{what}: '{s}' is not a number")))
}

fn list_offenders<T: std::fmt::Display>(items: &[T]) -> String {
    let mut s = items
        .iter()
        .take(MAX_LISTED)
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(", ");
    if items.len() > MAX_LISTED {
        let _ = write!(s, " and {} more", items.len() - MAX_LISTED);
    }
    s
}

#[derive(Debug, Clone, Default)]
pub struct LoadOptions {
    pub format: Format,
    pub drop_incomplete: bool,
    /// Explicit category counts keyed by item id.
    pub categories: Option<Vec<(String, usize)>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedResponses {
    pub items: Vec<String>,
    pub responses: ResponseMatrix,
    /// Rows removed by listwise deletion.
    pub dropped: usize,
}

pub fn load_responses(path: &Path, format: Format) -> Result<LoadedResponses> {
    load_responses_with(
        path,
        &LoadOptions {
            format,
            ..LoadOptions::default()
        },
    )
}

pub fn load_responses_with(path: &Path, options: &LoadOptions) -> Result<LoadedResponses> {
    let file = fs::File::open(path).map_err(|e| Error::Load(format!("{}: {e}", path.display())))?;
    parse_responses(file, options)
}

/// Parse a response table with a header of item ids.
pub fn parse_responses<R: Read>(reader: R, options: &LoadOptions) -> Result<LoadedResponses> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(options.format.delimiter())
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let items: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if items.is_empty() || items.iter().all(String::is_empty) {
        return Err(Error::Load("missing header row of item identifiers".into()));
    }
    let j = items.len();

    let mut rows: Vec<Vec<Option<usize>>> = Vec::new();
    let mut ragged = Vec::new();
    let mut bad_cells = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = r + 2;
        if rec.len() != j {
            ragged.push(format!("line {line} has {} fields", rec.len()));
            continue;
        }
        let mut row = Vec::with_capacity(j);
        for (c, cell) in rec.iter().enumerate() {
            let cell = cell.trim();
            if cell == MISSING {
                row.push(None);
            } else {
                match cell.parse::<usize>() {
                    Ok(v) => row.push(Some(v)),
                    Err(_) => {
                        bad_cells.push(format!("line {line} item {} value '{cell}'", items[c]));
                        row.push(None);
                    }
                }
            }
        }
        rows.push(row);
    }
    if !ragged.is_empty() {
        return Err(Error::Load(format!(
            "ragged rows (expected {j} fields): {}",
            list_offenders(&ragged)
        )));
    }
    if !bad_cells.is_empty() {
        return Err(Error::Load(format!(
            "non-integer cells: {}",
            list_offenders(&bad_cells)
        )));
    }

    let incomplete: Vec<usize> = rows
        .iter()
        .enumerate()
        .filter(|(_, r)| r.iter().any(Option::is_none))
        .map(|(i, _)| i + 2)
        .collect();
    let dropped = incomplete.len();
    if dropped > 0 {
        if !options.drop_incomplete {
            return Err(Error::Load(format!(
                "{dropped} rows contain missing values (use drop_incomplete to delete them listwise); lines {}",
                list_offenders(&incomplete)
            )));
        }
        rows.retain(|r| r.iter().all(Option::is_some));
    }
    if rows.is_empty() {
        return Err(Error::Load("no complete response rows".into()));
    }
    let rows: Vec<Vec<usize>> = rows
        .into_iter()
        .map(|r| r.into_iter().map(|v| v.expect("complete row")).collect())
        .collect();

    let observed_max: Vec<usize> = (0..j)
        .map(|c| rows.iter().map(|r| r[c]).max().unwrap_or(0))
        .collect();
    let categories: Vec<usize> = match &options.categories {
        None => observed_max.iter().map(|m| m + 1).collect(),
        Some(table) => {
            let mut out = Vec::with_capacity(j);
            for (c, id) in items.iter().enumerate() {
                let k = table
                    .iter()
                    .find(|(name, _)| name == id)
                    .map(|(_, k)| *k)
                    .ok_or_else(|| Error::Load(format!("categories file has no entry for item '{id}'")))?;
                if k <= observed_max[c] {
                    return Err(Error::Load(format!(
                        "item '{id}' declares {k} categories but code {} is observed",
                        observed_max[c]
                    )));
                }
                out.push(k);
            }
            out
        }
    };
    if let Some(c) = (0..j).find(|&c| categories[c] < 2) {
        return Err(Error::Load(format!(
            "item '{}' has fewer than 2 categories",
            items[c]
        )));
    }

    let mut gaps = Vec::new();
    for c in 0..j {
        let mut seen = vec![false; categories[c]];
        for r in &rows {
            seen[r[c]] = true;
        }
        for (k, s) in seen.iter().enumerate().take(categories[c] - 1) {
            if !s {
                gaps.push(format!("(item '{}', category {k})", items[c]));
            }
        }
    }
    if !gaps.is_empty() {
        return Err(Error::Load(format!("category gaps: {}", list_offenders(&gaps))));
    }

    let responses = ResponseMatrix::from_rows(&rows, Some(categories))?;
    Ok(LoadedResponses {
        items,
        responses,
        dropped,
    })
}

/// Sidecar file of `item,categories` lines (header optional).
pub fn load_categories(path: &Path) -> Result<Vec<(String, usize)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::Load(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (id, k) = line
            .split_once([',', '\t'])
            .ok_or_else(|| Error::Load(format!("categories line {}: expected 'item,count'", n + 1)))?;
        match k.trim().parse::<usize>() {
            Ok(k) => out.push((id.trim().to_string(), k)),
            Err(_) if n == 0 => continue,
            Err(_) => {
                return Err(Error::Load(format!(
                    "categories line {}: '{}' is not a count",
                    n + 1,
                    k.trim()
                )))
            }
        }
    }
    Ok(out)
}

/// Default item ids `item1..itemJ`.
pub fn default_item_ids(j: usize) -> Vec<String> {
    (1..=j).map(|c| format!("item{c}")).collect()
}

pub fn save_responses(path: &Path, items: &[String], responses: &ResponseMatrix, format: Format) -> Result<()> {
    if items.len() != responses.n_items() {
        return Err(Error::InvalidArgument("item id count does not match responses".into()));
    }
    let mut w = csv::WriterBuilder::new()
        .delimiter(format.delimiter())
        .from_path(path)?;
    w.write_record(items)?;
    for i in 0..responses.n_examinees() {
        let row: Vec<String> = (0..responses.n_items())
            .map(|j| responses.get(i, j).map_or_else(|| MISSING.to_string(), |v| v.to_string()))
            .collect();
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Parameter table with columns item, a_1..a_D, b_1..b_{K_max−1};
/// thresholds beyond an item's own K_j − 1 are written as NA.
pub fn write_parameters(path: &Path, items: &[String], params: &ItemParameters) -> Result<()> {
    if items.len() != params.n_items() {
        return Err(Error::InvalidArgument("item id count does not match parameters".into()));
    }
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["item".to_string()];
    header.extend((1..=params.dim()).map(|r| format!("a_{r}")));
    header.extend((1..=params.b().ncols()).map(|k| format!("b_{k}")));
    w.write_record(&header)?;
    for (j, id) in items.iter().enumerate() {
        let mut row = vec![id.clone()];
        row.extend(params.a_row(j).into_iter().map(fmt_f64));
        for k in 1..=params.b().ncols() {
            row.push(if k < params.categories()[j] {
                fmt_f64(params.threshold(j, k))
            } else {
                MISSING.to_string()
            });
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_parameters(path: &Path) -> Result<(Vec<String>, ItemParameters)> {
    let mut rdr = csv::Reader::from_path(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let d = header.iter().filter(|h| h.starts_with("a_")).count();
    let kt = header.iter().filter(|h| h.starts_with("b_")).count();
    if header.first().map(String::as_str) != Some("item") || d == 0 || 1 + d + kt != header.len() {
        return Err(Error::Load(format!(
            "{}: expected columns item, a_1..a_D, b_1..b_K",
            path.display()
        )));
    }
    let mut items = Vec::new();
    let mut a_rows = Vec::new();
    let mut b_rows = Vec::new();
    let mut categories = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        if rec.len() != header.len() {
            return Err(Error::Load(format!("{}: ragged parameter row", path.display())));
        }
        items.push(rec[0].to_string());
        for r in 0..d {
            a_rows.push(parse_f64(&rec[1 + r], "discrimination")?);
        }
        let mut k_j = 1;
        for k in 0..kt {
            let cell = rec[1 + d + k].trim();
            if cell == MISSING {
                b_rows.push(0.0);
            } else {
                if k_j != k + 1 {
                    return Err(Error::Load(format!("item '{}': NA before a threshold", &rec[0])));
                }
                b_rows.push(parse_f64(cell, "threshold")?);
                k_j += 1;
            }
        }
        categories.push(k_j);
    }
    let j = items.len();
    let a = DMatrix::from_row_slice(j, d, &a_rows);
    let b = DMatrix::from_row_slice(j, kt, &b_rows);
    Ok((items, ItemParameters::new(a, b, categories)?))
}

/// Headerless numeric matrix.
pub fn write_matrix(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    for r in 0..m.nrows() {
        let row: Vec<String> = m.row(r).iter().map(|v| fmt_f64(*v)).collect();
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).from_path(path)?;
    let mut values = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for rec in rdr.records() {
        let rec = rec?;
        if *cols.get_or_insert(rec.len()) != rec.len() {
            return Err(Error::Load(format!("{}: ragged matrix", path.display())));
        }
        for cell in rec.iter() {
            values.push(parse_f64(cell, "matrix entry")?);
        }
        rows += 1;
    }
    Ok(DMatrix::from_row_slice(rows, cols.unwrap_or(0), &values))
}

/// Per-iteration Ē, ELBO and parameter change.
pub fn write_trace(path: &Path, fit: &FitResult) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["iteration", "surrogate", "elbo", "change"])?;
    for t in 0..fit.surrogate_trace.len() {
        w.write_record([
            (t + 1).to_string(),
            fmt_f64(fit.surrogate_trace[t]),
            fmt_f64(fit.elbo_trace[t]),
            fmt_f64(fit.change_trace[t]),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Structured report header shared by every command.
#[derive(Debug, Clone, Serialize)]
pub struct Report<'a, T: Serialize> {
    pub command: &'a str,
    pub config_digest: &'a str,
    pub seed: u64,
    pub config: &'a std::collections::BTreeMap<String, String>,
    pub result: &'a T,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n")?;
    Ok(())
}
