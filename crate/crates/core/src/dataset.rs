//! Observational decision datasets: `(decision, cost, features)` records.
//!
//! On disk a dataset is either a CSV file with header `x,y,z1,...,zd` or a JSON
//! array of `{"x": .., "y": .., "z": [..]}` objects. Decisions are dense ids
//! `0..decision_count`; human-readable labels live in an optional sidecar file
//! with one label per line.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Declared support of the cost variable. `hi` doubles as the uninformative
/// fallback limit, so it must be finite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostRange {
    lo: f64,
    hi: f64,
}

impl CostRange {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo < hi) || !hi.is_finite() || lo.is_nan() {
            return Err(Error::InvalidCostRange { lo, hi });
        }
        Ok(Self { lo, hi })
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn contains(&self, y: f64) -> bool {
        y >= self.lo && y <= self.hi
    }

    pub fn clamp(&self, y: f64) -> f64 {
        y.clamp(self.lo, self.hi)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub x: usize,
    pub y: f64,
    pub z: Vec<f64>,
}

/// An immutable set of logged records sharing one feature dimension.
///
/// Costs outside the declared range are permitted at construction so that
/// [`validate_dataset`] can report them; fitting entry points in the CLI refuse
/// datasets whose report is not clean.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    records: Vec<Record>,
    dim: usize,
    decision_count: usize,
    cost_range: CostRange,
}

impl Dataset {
    pub fn new(records: Vec<Record>, decision_count: usize, cost_range: CostRange) -> Result<Self> {
        let dim = records.first().map(|r| r.z.len()).unwrap_or(0);
        Self::with_dim(records, dim, decision_count, cost_range)
    }

    /// Like [`Dataset::new`] but with an explicit dimension, so empty datasets keep one.
    pub fn with_dim(
        records: Vec<Record>,
        dim: usize,
        decision_count: usize,
        cost_range: CostRange,
    ) -> Result<Self> {
        if decision_count == 0 {
            return Err(Error::InvalidParameter("decision_count must be positive".into()));
        }
        for r in &records {
            if r.x >= decision_count {
                return Err(Error::DecisionOutOfRange {
                    decision: r.x,
                    decision_count,
                });
            }
            if r.z.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: r.z.len(),
                });
            }
            if r.y.is_nan() || r.z.iter().any(|v| v.is_nan()) {
                return Err(Error::InvalidParameter("missing (NaN) value in record".into()));
            }
        }
        Ok(Self {
            records,
            dim,
            decision_count,
            cost_range,
        })
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn decision_count(&self) -> usize {
        self.decision_count
    }

    pub fn cost_range(&self) -> CostRange {
        self.cost_range
    }

    /// Same records under a different declared range.
    pub fn with_cost_range(&self, cost_range: CostRange) -> Self {
        Self {
            cost_range,
            ..self.clone()
        }
    }

    pub fn arm_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.decision_count];
        for r in &self.records {
            counts[r.x] += 1;
        }
        counts
    }

    /// Records taking decision `k`, in file order.
    pub fn arm(&self, k: usize) -> impl Iterator<Item = &Record> {
        self.records.iter().filter(move |r| r.x == k)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub arm_counts: Vec<usize>,
    pub out_of_range_costs: usize,
    pub dimension_mismatches: usize,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.out_of_range_costs == 0 && self.dimension_mismatches == 0
    }
}

pub fn validate_dataset(ds: &Dataset, cost_range: CostRange) -> ValidationReport {
    ValidationReport {
        arm_counts: ds.arm_counts(),
        out_of_range_costs: ds.records.iter().filter(|r| !cost_range.contains(r.y)).count(),
        dimension_mismatches: ds.records.iter().filter(|r| r.z.len() != ds.dim).count(),
    }
}

/// Load a CSV (default) or JSON (`.json` extension) dataset.
///
/// `decision_count = None` infers `max(x) + 1`.
pub fn load_dataset(
    path: impl AsRef<Path>,
    cost_range: CostRange,
    decision_count: Option<usize>,
) -> Result<Dataset> {
    let path = path.as_ref();
    let is_json = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("json"));
    let (records, dim) = if is_json {
        read_json_records(path)?
    } else {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        read_csv_records(file)?
    };
    if records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let count = decision_count.unwrap_or_else(|| records.iter().map(|r| r.x).max().unwrap_or(0) + 1);
    Dataset::with_dim(records, dim, count, cost_range)
}

/// Parse the CSV schema from any reader. Returns records and the header dimension.
pub fn read_csv_records<R: std::io::Read>(reader: R) -> Result<(Vec<Record>, usize)> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let dim = check_header(&headers)?;
    let mut records = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        records.push(parse_row(&row, dim, i + 1)?);
    }
    Ok((records, dim))
}

/// Number of feature columns encoded in a header `x,y,z1,...,zd`.
fn check_header(headers: &csv::StringRecord) -> Result<usize> {
    let names: Vec<&str> = headers.iter().map(str::trim).collect();
    if names.len() < 2 || names[0] != "x" || names[1] != "y" {
        return Err(Error::Schema(format!(
            "header must start with `x,y`, found `{}`",
            names.join(",")
        )));
    }
    for (j, name) in names[2..].iter().enumerate() {
        let expected = format!("z{}", j + 1);
        if *name != expected {
            return Err(Error::Schema(format!(
                "column {} must be `{expected}`, found `{name}`",
                j + 3
            )));
        }
    }
    Ok(names.len() - 2)
}

fn parse_row(row: &csv::StringRecord, dim: usize, record: usize) -> Result<Record> {
    if row.len() != dim + 2 {
        return Err(Error::Parse {
            record,
            message: format!("expected {} fields, found {}", dim + 2, row.len()),
        });
    }
    let field = |j: usize| -> Result<f64> {
        let raw = row[j].trim();
        raw.parse::<f64>()
            .ok()
            .filter(|v| !v.is_nan())
            .ok_or_else(|| Error::Parse {
                record,
                message: format!("non-numeric field `{raw}` in column {}", j + 1),
            })
    };
    let x_raw = row[0].trim();
    let x = x_raw.parse::<usize>().map_err(|_| Error::Parse {
        record,
        message: format!("decision `{x_raw}` is not a non-negative integer"),
    })?;
    let y = field(1)?;
    let z = (0..dim).map(|j| field(j + 2)).collect::<Result<Vec<_>>>()?;
    Ok(Record { x, y, z })
}

fn read_json_records(path: &Path) -> Result<(Vec<Record>, usize)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let records: Vec<Record> = serde_json::from_reader(BufReader::new(file))?;
    let dim = records.first().map(|r| r.z.len()).unwrap_or(0);
    Ok((records, dim))
}

pub fn write_csv<W: Write>(ds: &Dataset, mut out: W) -> std::io::Result<()> {
    write!(out, "x,y")?;
    for j in 1..=ds.dim {
        write!(out, ",z{j}")?;
    }
    writeln!(out)?;
    for r in &ds.records {
        write!(out, "{},{}", r.x, r.y)?;
        for v in &r.z {
            write!(out, ",{v}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

pub fn save_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    write_csv(ds, &mut out).map_err(|e| Error::io(path, e))?;
    out.flush().map_err(|e| Error::io(path, e))
}

/// Read a decision-label sidecar: line `k` (0-based) names decision `k`.
pub fn read_decision_labels(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    BufReader::new(file)
        .lines()
        .map(|l| l.map(|s| s.trim().to_string()).map_err(|e| Error::io(path, e)))
        .filter(|l| !matches!(l, Ok(s) if s.is_empty()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn range() -> CostRange {
        CostRange::new(-30.0, 30.0).unwrap()
    }

    fn parse(text: &str) -> Result<Dataset> {
        let (records, dim) = read_csv_records(text.as_bytes())?;
        Dataset::with_dim(records, dim, 2, range())
    }

    #[test]
    fn parses_three_rows() {
        let (records, dim) = read_csv_records("x,y,z1\n0,1.0,2.0\n1,-1.0,3.0\n0,0.5,2.5".as_bytes()).unwrap();
        let ds = Dataset::new(records, 2, range()).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(dim, 1);
        assert_eq!(ds.dim(), 1);
        assert_eq!(ds.decision_count(), 2);
        assert_eq!(ds.records()[1], Record { x: 1, y: -1.0, z: vec![3.0] });
    }

    #[test]
    fn decision_out_of_declared_range_is_rejected() {
        let err = parse("x,y,z1\n0,1.0,2.0\n2,0.0,1.0").unwrap_err();
        assert!(matches!(err, Error::DecisionOutOfRange { decision: 2, decision_count: 2 }));
    }

    #[test]
    fn out_of_range_cost_is_reported_not_rejected() {
        let ds = parse("x,y,z1\n0,31.0,2.0\n1,0.0,1.0").unwrap();
        let report = validate_dataset(&ds, range());
        assert_eq!(report.out_of_range_costs, 1);
        assert!(!report.is_clean());
    }

    #[test]
    fn clean_dataset_report() {
        let ds = parse("x,y,z1\n0,1.0,2.0\n1,-1.0,3.0").unwrap();
        let report = validate_dataset(&ds, range());
        assert!(report.is_clean());
        assert_eq!(report.arm_counts, vec![1, 1]);
    }

    #[test]
    fn empty_arm_counts_zero() {
        let ds = parse("x,y,z1\n0,1.0,2.0\n0,-1.0,3.0").unwrap();
        assert_eq!(validate_dataset(&ds, range()).arm_counts, vec![2, 0]);
    }

    #[test]
    fn schema_and_parse_errors() {
        assert!(matches!(parse("x,cost,z1\n0,1,2"), Err(Error::Schema(_))));
        assert!(matches!(parse("x,y,z2\n0,1,2"), Err(Error::Schema(_))));
        assert!(matches!(parse("x,y,z1\n0,abc,2"), Err(Error::Parse { record: 1, .. })));
        assert!(matches!(parse("x,y,z1\n0,1,"), Err(Error::Parse { .. })));
        assert!(matches!(parse("x,y,z1\n-1,1,2"), Err(Error::Parse { .. })));
        assert!(parse("x,y,z1\n0,1,2,3").is_err());
    }

    #[test]
    fn empty_file_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.csv");
        std::fs::write(&path, "x,y,z1\n").unwrap();
        assert!(matches!(load_dataset(&path, range(), None), Err(Error::EmptyDataset)));
        std::fs::write(&path, "").unwrap();
        assert!(load_dataset(&path, range(), None).is_err());
    }

    #[test]
    fn json_alternative() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.json");
        std::fs::write(&path, r#"[{"x":0,"y":1.5,"z":[1,2]},{"x":1,"y":-2,"z":[3,4]}]"#).unwrap();
        let ds = load_dataset(&path, range(), None).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.dim(), 2);
        assert_eq!(ds.decision_count(), 2);
    }

    #[test]
    fn labels_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("labels.txt");
        std::fs::write(&path, "untreated\ntreated\n\n").unwrap();
        assert_eq!(read_decision_labels(&path).unwrap(), vec!["untreated", "treated"]);
    }

    #[test]
    fn cost_range_requires_finite_upper_bound() {
        assert!(CostRange::new(0.0, f64::INFINITY).is_err());
        assert!(CostRange::new(1.0, 1.0).is_err());
        assert!(CostRange::new(f64::NEG_INFINITY, 1.0).is_ok());
    }
}
