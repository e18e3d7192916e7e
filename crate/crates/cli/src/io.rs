//! File formats: time-series CSV, model JSON, test-report and simulation
//! tables. Every output is written to a temporary file and renamed into place.

use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{bail, Context, Result};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use covgroup::{ConfoundSet, GroupModel, Parametrization, SpdMatrix, TestReport, TimeSeries};

pub const MODEL_SCHEMA_VERSION: u32 = 1;

/// Reads a delimited table: first row holds column names, every other row one
/// time point.
fn read_table(path: &Path) -> Result<(Vec<String>, DMatrix<f64>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("cannot open {}", path.display()))?;
    let names: Vec<String> = reader
        .headers()
        .with_context(|| format!("{}: cannot read header row", path.display()))?
        .iter()
        .map(str::to_string)
        .collect();
    if names.is_empty() || names.iter().all(String::is_empty) {
        bail!("{}: empty header row", path.display());
    }
    let mut values = Vec::new();
    let mut rows = 0;
    for (line, record) in reader.records().enumerate() {
        let record = record.with_context(|| format!("{}: malformed row", path.display()))?;
        if record.len() != names.len() {
            bail!(
                "{}: row {} has {} fields, header has {}",
                path.display(),
                line + 2,
                record.len(),
                names.len()
            );
        }
        for (col, field) in record.iter().enumerate() {
            let v: f64 = field.parse().with_context(|| {
                format!(
                    "{}: row {}, column {}: not a number: {field:?}",
                    path.display(),
                    line + 2,
                    col + 1
                )
            })?;
            values.push(v);
        }
        rows += 1;
    }
    Ok((names.clone(), DMatrix::from_row_slice(rows, names.len(), &values)))
}

pub fn read_time_series(path: &Path) -> Result<TimeSeries> {
    let (names, values) = read_table(path)?;
    TimeSeries::new(values, names).with_context(|| format!("{}: invalid time series", path.display()))
}

pub fn read_confounds(path: &Path) -> Result<ConfoundSet> {
    let (_, values) = read_table(path)?;
    ConfoundSet::new(values).with_context(|| format!("{}: invalid confounds", path.display()))
}

/// Writes `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)
        .with_context(|| format!("cannot create temporary file in {}", dir.display()))?;
    tmp.write_all(bytes)?;
    tmp.flush()?;
    tmp.persist(path)
        .with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}

/// Persisted group model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub schema_version: u32,
    pub parametrization: Parametrization,
    pub n: usize,
    pub region_names: Vec<String>,
    /// Row-major group mean.
    pub sigma_star: Vec<f64>,
    pub sigma: f64,
    pub n_subjects: usize,
}

impl ModelFile {
    pub fn from_model(model: &GroupModel) -> Self {
        let n = model.dim();
        let m = model.sigma_star.as_matrix();
        let sigma_star = (0..n).flat_map(|i| (0..n).map(move |j| m[(i, j)])).collect();
        Self {
            schema_version: MODEL_SCHEMA_VERSION,
            parametrization: model.parametrization,
            n,
            region_names: model.region_names.clone(),
            sigma_star,
            sigma: model.sigma,
            n_subjects: model.n_subjects,
        }
    }

    pub fn to_model(&self) -> Result<GroupModel> {
        if self.schema_version != MODEL_SCHEMA_VERSION {
            bail!("unsupported model schema version {}", self.schema_version);
        }
        if self.sigma_star.len() != self.n * self.n {
            bail!(
                "sigma_star has {} values, expected {}",
                self.sigma_star.len(),
                self.n * self.n
            );
        }
        let star = SpdMatrix::from_row_slice(self.n, &self.sigma_star).context("sigma_star is not SPD")?;
        Ok(GroupModel::from_summary(
            self.parametrization,
            star,
            self.sigma,
            self.n_subjects,
            self.region_names.clone(),
        )?)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_json()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("cannot read model {}", path.display()))?;
        let file: ModelFile =
            serde_json::from_str(&text).with_context(|| format!("{}: invalid model file", path.display()))?;
        file.to_model()
            .with_context(|| format!("{}: invalid model", path.display()))?;
        Ok(file)
    }
}

/// Metadata written alongside a test report.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportMeta {
    pub m: usize,
    pub seed: u64,
    pub parametrization: Parametrization,
}

/// Test report as text: `#`-prefixed metadata lines, a header row, then one
/// row per region pair.
pub fn format_report(report: &TestReport, region_names: &[String], meta: &ReportMeta) -> String {
    let mut out = String::new();
    out.push_str(&format!("# subject_id={}\n", report.subject_id));
    out.push_str(&format!("# alpha={}\n", report.alpha));
    out.push_str(&format!("# m={}\n", meta.m));
    out.push_str(&format!("# seed={}\n", meta.seed));
    out.push_str(&format!("# parametrization={}\n", meta.parametrization));
    out.push_str("region_i,region_j,t,p_raw,p_corrected,direction\n");
    for p in &report.pairs {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            region_names[p.i], region_names[p.j], p.t, p.p_raw, p.p_corrected, p.direction
        ));
    }
    out
}

/// One row of a parsed report file.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub region_i: String,
    pub region_j: String,
    pub t: f64,
    pub p_raw: f64,
    pub p_corrected: f64,
    pub direction: i8,
}

/// `key=value` metadata lines of a report, in file order.
pub type ReportMetadata = Vec<(String, String)>;

/// Parses a report written by [`format_report`]; returns metadata pairs and rows.
pub fn parse_report(text: &str) -> Result<(ReportMetadata, Vec<ReportRow>)> {
    let mut meta = Vec::new();
    let mut lines = text.lines();
    let mut header = None;
    for line in lines.by_ref() {
        if let Some(kv) = line.strip_prefix("# ") {
            let (k, v) = kv.split_once('=').context("malformed metadata line")?;
            meta.push((k.to_string(), v.to_string()));
        } else {
            header = Some(line);
            break;
        }
    }
    if header != Some("region_i,region_j,t,p_raw,p_corrected,direction") {
        bail!("missing report header");
    }
    let rows = lines
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 6 {
                bail!("malformed report row {line:?}");
            }
            Ok(ReportRow {
                region_i: f[0].to_string(),
                region_j: f[1].to_string(),
                t: f[2].parse()?,
                p_raw: f[3].parse()?,
                p_corrected: f[4].parse()?,
                direction: f[5].parse()?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((meta, rows))
}
