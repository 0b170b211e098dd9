//! File formats.
//!
//! Inputs are CSV with a header row; lines starting with `#` are ignored.
//!
//! * outcome units: `id, y, [person_years,] x1 .. xp`
//! * intervention units: `id, a, [cost,] z1 .. zq` (blank costs allowed
//!   for `impute-costs`)
//! * interference map: dense `n × J` numbers (optional header), or
//!   triplets with header `i,j,value` and 0-based indices
//!
//! Machine-readable outputs start with `# netpolicy <kind> v1` and carry
//! every number at full precision.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use netpolicy::netdata::{InterferenceMap, InterventionTable, OutcomeTable};

use crate::error::{CliError, CliResult};

pub const FORMAT_VERSION: u32 = 1;

fn reader(path: &Path) -> CliResult<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .has_headers(false)
        .flexible(true)
        .from_reader(file))
}

fn records(path: &Path) -> CliResult<Vec<csv::StringRecord>> {
    reader(path)?
        .records()
        .map(|r| r.map_err(|e| csv_error(path, e)))
        .collect()
}

fn csv_error(path: &Path, e: csv::Error) -> CliError {
    if e.is_io_error() {
        CliError::io(path, e)
    } else {
        CliError::invalid(path, e)
    }
}

fn parse_num(path: &Path, line: usize, column: &str, s: &str) -> CliResult<f64> {
    s.parse::<f64>()
        .map_err(|_| CliError::invalid(path, format!("row {line}, column `{column}`: `{s}` is not a number")))
}

struct Table {
    header: Vec<String>,
    rows: Vec<csv::StringRecord>,
}

fn read_table(path: &Path) -> CliResult<Table> {
    let mut recs = records(path)?;
    if recs.is_empty() {
        return Err(CliError::invalid(path, "empty file"));
    }
    let header: Vec<String> = recs.remove(0).iter().map(str::to_string).collect();
    for (k, r) in recs.iter().enumerate() {
        if r.len() != header.len() {
            return Err(CliError::invalid(
                path,
                format!("row {} has {} fields, header has {}", k + 1, r.len(), header.len()),
            ));
        }
    }
    Ok(Table { header, rows: recs })
}

fn expect_column(path: &Path, header: &[String], at: usize, name: &str) -> CliResult<()> {
    match header.get(at) {
        Some(h) if h == name => Ok(()),
        other => Err(CliError::invalid(
            path,
            format!("column {} must be `{name}`, found `{}`", at + 1, other.map_or("", |s| s.as_str())),
        )),
    }
}

#[derive(Debug, Clone)]
pub struct OutcomeData {
    pub path: PathBuf,
    pub ids: Vec<String>,
    pub covariates: Vec<String>,
    pub table: OutcomeTable<f64>,
}

pub fn read_outcomes(path: &Path) -> CliResult<OutcomeData> {
    let t = read_table(path)?;
    expect_column(path, &t.header, 0, "id")?;
    expect_column(path, &t.header, 1, "y")?;
    let has_py = t.header.get(2).is_some_and(|h| h == "person_years");
    let first_x = if has_py { 3 } else { 2 };
    let covariates = t.header[first_x..].to_vec();
    let (n, p) = (t.rows.len(), covariates.len());
    let mut x = DMatrix::zeros(n, p);
    let mut y = DVector::zeros(n);
    let mut py = DVector::zeros(n);
    let mut ids = Vec::with_capacity(n);
    for (i, r) in t.rows.iter().enumerate() {
        ids.push(r[0].to_string());
        y[i] = parse_num(path, i + 1, "y", &r[1])?;
        if has_py {
            py[i] = parse_num(path, i + 1, "person_years", &r[2])?;
        }
        for c in 0..p {
            x[(i, c)] = parse_num(path, i + 1, &covariates[c], &r[first_x + c])?;
        }
    }
    let table = OutcomeTable::new(x, y, has_py.then_some(py)).map_err(|e| CliError::invalid(path, e))?;
    Ok(OutcomeData { path: path.to_path_buf(), ids, covariates, table })
}

#[derive(Debug, Clone)]
pub struct InterventionData {
    pub path: PathBuf,
    pub ids: Vec<String>,
    pub covariates: Vec<String>,
    pub x: DMatrix<f64>,
    pub a: DVector<f64>,
    /// `None` when the file has no cost column; blank entries are `None`.
    pub costs: Option<Vec<Option<f64>>>,
}

impl InterventionData {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Costs for every unit, or a validation error naming the first gap.
    pub fn complete_costs(&self) -> CliResult<DVector<f64>> {
        let costs = self.costs.as_ref().ok_or_else(|| {
            CliError::invalid(&self.path, "no `cost` column; run `impute-costs` first")
        })?;
        let mut out = DVector::zeros(costs.len());
        for (j, c) in costs.iter().enumerate() {
            out[j] = c.ok_or_else(|| {
                CliError::invalid(&self.path, format!("unit `{}` has no cost; run `impute-costs` first", self.ids[j]))
            })?;
        }
        Ok(out)
    }

    /// Table with costs attached when they are complete.
    pub fn table(&self) -> CliResult<InterventionTable<f64>> {
        let cost = match &self.costs {
            Some(c) if c.iter().all(Option::is_some) => Some(self.complete_costs()?),
            _ => None,
        };
        InterventionTable::new(self.x.clone(), self.a.clone(), cost).map_err(|e| CliError::invalid(&self.path, e))
    }
}

pub fn read_interventions(path: &Path) -> CliResult<InterventionData> {
    let t = read_table(path)?;
    expect_column(path, &t.header, 0, "id")?;
    expect_column(path, &t.header, 1, "a")?;
    let has_cost = t.header.get(2).is_some_and(|h| h == "cost");
    let first_z = if has_cost { 3 } else { 2 };
    let covariates = t.header[first_z..].to_vec();
    let (m, q) = (t.rows.len(), covariates.len());
    let mut x = DMatrix::zeros(m, q);
    let mut a = DVector::zeros(m);
    let mut costs = Vec::with_capacity(m);
    let mut ids = Vec::with_capacity(m);
    for (j, r) in t.rows.iter().enumerate() {
        ids.push(r[0].to_string());
        a[j] = parse_num(path, j + 1, "a", &r[1])?;
        if has_cost {
            costs.push(if r[2].is_empty() { None } else { Some(parse_num(path, j + 1, "cost", &r[2])?) });
        }
        for c in 0..q {
            x[(j, c)] = parse_num(path, j + 1, &covariates[c], &r[first_z + c])?;
        }
    }
    Ok(InterventionData {
        path: path.to_path_buf(),
        ids,
        covariates,
        x,
        a,
        costs: has_cost.then_some(costs),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum MapFormat {
    /// Triplets if the header is `i,j,value`, dense otherwise.
    Auto,
    Dense,
    Triplet,
}

/// Reads the interference map; `n` and `j` fix the shape of triplet input.
pub fn read_map(path: &Path, format: MapFormat, n: usize, j: usize) -> CliResult<InterferenceMap<f64>> {
    let recs = records(path)?;
    let is_triplet_header = |r: &csv::StringRecord| r.iter().collect::<Vec<_>>() == ["i", "j", "value"];
    let triplet = match format {
        MapFormat::Triplet => true,
        MapFormat::Dense => false,
        MapFormat::Auto => recs.first().is_some_and(is_triplet_header),
    };
    let h = if triplet {
        let body = if recs.first().is_some_and(is_triplet_header) { &recs[1..] } else { &recs[..] };
        let mut h = DMatrix::zeros(n, j);
        for (k, r) in body.iter().enumerate() {
            if r.len() != 3 {
                return Err(CliError::invalid(path, format!("triplet row {} needs 3 fields", k + 1)));
            }
            let idx = |s: &str, bound: usize, what: &str| -> CliResult<usize> {
                let v: usize = s
                    .parse()
                    .map_err(|_| CliError::invalid(path, format!("triplet row {}: bad {what} index `{s}`", k + 1)))?;
                if v >= bound {
                    return Err(CliError::invalid(path, format!("triplet row {}: {what} index {v} out of range", k + 1)));
                }
                Ok(v)
            };
            let (i, jj) = (idx(&r[0], n, "i")?, idx(&r[1], j, "j")?);
            h[(i, jj)] += parse_num(path, k + 1, "value", &r[2])?;
        }
        h
    } else {
        let body = match recs.first() {
            Some(r) if r.iter().any(|f| f.parse::<f64>().is_err()) => &recs[1..],
            _ => &recs[..],
        };
        if body.len() != n {
            return Err(CliError::invalid(path, format!("dense map has {} rows, expected {n}", body.len())));
        }
        let mut h = DMatrix::zeros(n, j);
        for (i, r) in body.iter().enumerate() {
            if r.len() != j {
                return Err(CliError::invalid(path, format!("dense row {} has {} columns, expected {j}", i + 1, r.len())));
            }
            for (c, f) in r.iter().enumerate() {
                h[(i, c)] = parse_num(path, i + 1, &format!("{}", c + 1), f)?;
            }
        }
        h
    };
    InterferenceMap::new(h).map_err(|e| CliError::invalid(path, e))
}

/// Full-precision text for a number; empty for `None`.
pub fn num(v: f64) -> String {
    format!("{v}")
}

pub fn opt_num(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

/// CSV writer for a versioned machine-readable file.
pub struct MachineFile {
    path: PathBuf,
    inner: csv::Writer<BufWriter<File>>,
}

impl MachineFile {
    pub fn create(path: &Path, kind: &str, header: &[&str]) -> CliResult<Self> {
        Self::with_comments(path, kind, &[], header)
    }

    /// Like [`Self::create`], with extra `# key=value` lines after the
    /// version line.
    pub fn with_comments(path: &Path, kind: &str, comments: &[(&str, String)], header: &[&str]) -> CliResult<Self> {
        let file = File::create(path).map_err(|e| CliError::io(path, e))?;
        let mut buf = BufWriter::new(file);
        writeln!(buf, "# netpolicy {kind} v{FORMAT_VERSION}").map_err(|e| CliError::io(path, e))?;
        for (k, v) in comments {
            writeln!(buf, "# {k}={v}").map_err(|e| CliError::io(path, e))?;
        }
        let mut inner = csv::Writer::from_writer(buf);
        inner.write_record(header).map_err(|e| CliError::io(path, e))?;
        Ok(Self { path: path.to_path_buf(), inner })
    }

    pub fn row<I, S>(&mut self, fields: I) -> CliResult<()>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.inner.write_record(fields).map_err(|e| CliError::io(&self.path, e))
    }

    pub fn finish(mut self) -> CliResult<()> {
        self.inner.flush().map_err(|e| CliError::io(&self.path, e))
    }
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// A versioned machine file read back.
#[derive(Debug, Clone, PartialEq)]
pub struct MachineTable {
    pub comments: Vec<(String, String)>,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl MachineTable {
    pub fn comment(&self, key: &str) -> Option<&str> {
        self.comments.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }
}

/// Reads a versioned machine file back.
pub fn read_machine(path: &Path, kind: &str) -> CliResult<MachineTable> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let expected = format!("# netpolicy {kind} v{FORMAT_VERSION}");
    if text.lines().next() != Some(expected.as_str()) {
        return Err(CliError::invalid(path, format!("missing `{expected}` header line")));
    }
    let comments = text
        .lines()
        .skip(1)
        .take_while(|l| l.starts_with('#'))
        .filter_map(|l| l.trim_start_matches('#').trim().split_once('='))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
    let mut t = read_table(path)?;
    let rows = t.rows.drain(..).map(|r| r.iter().map(str::to_string).collect()).collect();
    Ok(MachineTable { comments, header: t.header, rows })
}
