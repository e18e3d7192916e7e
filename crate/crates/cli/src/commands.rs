//! The four workflows behind the `covgroup` binary. Each takes its options
//! and a writer for the human-readable summary, so they run the same way
//! from `main` and from tests.

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use serde::Deserialize;

use covgroup::estimation::correlation_estimate;
use covgroup::group_model::{fit_matrices, log_likelihood};
use covgroup::inference::{build_null_from_matrices, ControlGroup};
use covgroup::simulation::{exp_decay_correlation, roc_grid};
use covgroup::{FrechetConfig, GroupModel, NullConfig, Parametrization, SimConfig, SpdMatrix, TestReport};

use crate::io::{self, ModelFile, ReportMeta};

/// One subject's correlation estimate.
#[derive(Debug, Clone)]
pub struct Subject {
    pub id: String,
    pub matrix: SpdMatrix,
    pub region_names: Vec<String>,
}

fn subject_id(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn load_subject(path: &Path, confounds: Option<&Path>) -> Result<Subject> {
    let series = io::read_time_series(path)?;
    let confounds = confounds.map(io::read_confounds).transpose()?;
    let matrix = correlation_estimate(&series, confounds.as_ref())
        .with_context(|| format!("{}: cannot estimate correlation", path.display()))?;
    Ok(Subject {
        id: subject_id(path),
        matrix,
        region_names: series.region_names().to_vec(),
    })
}

/// Loads subjects, pairing confound files with inputs by position.
pub fn load_subjects(paths: &[PathBuf], confounds: &[PathBuf]) -> Result<Vec<Subject>> {
    ensure!(
        confounds.is_empty() || confounds.len() == paths.len(),
        "{} confound files given for {} inputs",
        confounds.len(),
        paths.len()
    );
    let subjects = paths
        .iter()
        .enumerate()
        .map(|(k, p)| load_subject(p, confounds.get(k).map(PathBuf::as_path)))
        .collect::<Result<Vec<_>>>()?;
    if let Some(first) = subjects.first() {
        for (s, p) in subjects.iter().zip(paths) {
            ensure!(
                s.region_names == first.region_names,
                "{}: columns differ from {}",
                p.display(),
                paths[0].display()
            );
        }
    }
    Ok(subjects)
}

fn matrices(subjects: &[Subject]) -> Vec<SpdMatrix> {
    subjects.iter().map(|s| s.matrix.clone()).collect()
}

#[derive(Debug, Clone)]
pub struct FitOptions {
    pub controls: Vec<PathBuf>,
    pub confounds: Vec<PathBuf>,
    pub out: PathBuf,
    pub parametrization: Parametrization,
    pub frechet: FrechetConfig,
}

/// Fits the group model on the controls and writes the model file.
pub fn cmd_fit(opts: &FitOptions, stdout: &mut dyn Write) -> Result<GroupModel> {
    ensure!(opts.controls.len() >= 2, "fit needs at least 2 control files");
    let subjects = load_subjects(&opts.controls, &opts.confounds)?;
    let names = subjects[0].region_names.clone();
    let model = fit_matrices(&matrices(&subjects), Some(names), opts.parametrization, &opts.frechet)?;
    ModelFile::from_model(&model).save(&opts.out)?;
    writeln!(stdout, "subjects: {}", model.n_subjects)?;
    writeln!(stdout, "regions: {}", model.dim())?;
    writeln!(stdout, "parametrization: {}", model.parametrization)?;
    writeln!(stdout, "sigma: {}", model.sigma)?;
    writeln!(stdout, "frechet_iterations: {}", model.iterations)?;
    writeln!(stdout, "gradient_norm: {:e}", model.gradient_norm)?;
    Ok(model)
}

#[derive(Debug, Clone)]
pub struct TestOptions {
    pub controls: Vec<PathBuf>,
    pub confounds: Vec<PathBuf>,
    pub patient: PathBuf,
    pub patient_confounds: Option<PathBuf>,
    pub out: PathBuf,
    pub m: usize,
    pub seed: u64,
    pub alpha: f64,
    pub parametrization: Parametrization,
    pub frechet: FrechetConfig,
}

/// Builds the bootstrap null on the controls, tests the patient and writes
/// the report.
pub fn cmd_test(opts: &TestOptions, stdout: &mut dyn Write) -> Result<TestReport> {
    ensure!(opts.controls.len() >= 3, "test needs at least 3 control files");
    let controls = load_subjects(&opts.controls, &opts.confounds)?;
    let patient = load_subject(&opts.patient, opts.patient_confounds.as_deref())?;
    let names = controls[0].region_names.clone();
    ensure!(
        patient.region_names == names,
        "{}: columns differ from the control files",
        opts.patient.display()
    );
    let mats = matrices(&controls);
    let null_cfg = NullConfig {
        m: opts.m,
        seed: opts.seed,
        parametrization: opts.parametrization,
        frechet: opts.frechet,
    };
    let null = build_null_from_matrices(&mats, &null_cfg)?;
    let group = ControlGroup::fit(&mats, opts.parametrization, &opts.frechet)?;
    let report = group.test(&patient.id, &patient.matrix, &null, opts.alpha)?;
    let meta = ReportMeta {
        m: opts.m,
        seed: opts.seed,
        parametrization: opts.parametrization,
    };
    io::write_atomic(&opts.out, io::format_report(&report, &names, &meta).as_bytes())?;

    writeln!(stdout, "subject: {}", report.subject_id)?;
    writeln!(stdout, "tests: {}", report.pairs.len())?;
    if null.failures > 0 {
        writeln!(stdout, "bootstrap_failures: {}", null.failures)?;
    }
    writeln!(
        stdout,
        "significant pairs at alpha={}: {} corrected, {} uncorrected",
        opts.alpha,
        report.significant_corrected(),
        report.significant_uncorrected()
    )?;
    Ok(report)
}

#[derive(Debug, Clone)]
pub struct LikelihoodOptions {
    pub model: Option<PathBuf>,
    pub subjects: Vec<PathBuf>,
    pub subject_confounds: Vec<PathBuf>,
    pub loo: bool,
    pub controls: Vec<PathBuf>,
    pub confounds: Vec<PathBuf>,
    pub parametrization: Parametrization,
    pub frechet: FrechetConfig,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LikelihoodRow {
    pub subject: String,
    /// `control` for leave-one-out scores, `subject` otherwise.
    pub group: &'static str,
    pub log_likelihood: f64,
}

/// Scores subjects under a stored model, or, with `loo`, scores each control
/// under the model fitted on the other controls and each extra subject by its
/// mean score over those leave-one-out models.
pub fn cmd_likelihood(opts: &LikelihoodOptions, stdout: &mut dyn Write) -> Result<Vec<LikelihoodRow>> {
    let subjects = load_subjects(&opts.subjects, &opts.subject_confounds)?;
    let mut rows = Vec::new();
    if opts.loo {
        ensure!(opts.controls.len() >= 3, "leave-one-out needs at least 3 control files");
        let controls = load_subjects(&opts.controls, &opts.confounds)?;
        let names = &controls[0].region_names;
        for s in &subjects {
            ensure!(
                &s.region_names == names,
                "{}: columns differ from the control files",
                s.id
            );
        }
        let mats = matrices(&controls);
        let mut subject_totals = vec![0.0; subjects.len()];
        for k in 0..mats.len() {
            let rest: Vec<SpdMatrix> = mats
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != k)
                .map(|(_, m)| m.clone())
                .collect();
            let model = fit_matrices(&rest, None, opts.parametrization, &opts.frechet)?;
            rows.push(LikelihoodRow {
                subject: controls[k].id.clone(),
                group: "control",
                log_likelihood: log_likelihood(&model, &mats[k])?,
            });
            for (total, s) in subject_totals.iter_mut().zip(&subjects) {
                *total += log_likelihood(&model, &s.matrix)?;
            }
        }
        for (total, s) in subject_totals.into_iter().zip(&subjects) {
            rows.push(LikelihoodRow {
                subject: s.id.clone(),
                group: "subject",
                log_likelihood: total / mats.len() as f64,
            });
        }
    } else {
        let path = opts
            .model
            .as_ref()
            .context("likelihood needs --model, or --loo with --controls")?;
        ensure!(!subjects.is_empty(), "no subject files given");
        let model = ModelFile::load(path)?.to_model()?;
        for s in &subjects {
            ensure!(
                s.region_names == model.region_names,
                "{}: columns differ from the model regions",
                s.id
            );
            rows.push(LikelihoodRow {
                subject: s.id.clone(),
                group: "subject",
                log_likelihood: log_likelihood(&model, &s.matrix)?,
            });
        }
    }

    let table = format_likelihood(&rows);
    stdout.write_all(table.as_bytes())?;
    for group in ["control", "subject"] {
        let vals: Vec<f64> = rows
            .iter()
            .filter(|r| r.group == group)
            .map(|r| r.log_likelihood)
            .collect();
        if !vals.is_empty() {
            writeln!(
                stdout,
                "# mean {group}: {}",
                vals.iter().sum::<f64>() / vals.len() as f64
            )?;
        }
    }
    if let Some(out) = &opts.out {
        io::write_atomic(out, table.as_bytes())?;
    }
    Ok(rows)
}

fn format_likelihood(rows: &[LikelihoodRow]) -> String {
    let mut s = String::from("subject,group,log_likelihood\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{}", r.subject, r.group, r.log_likelihood);
    }
    s
}

fn default_n_controls() -> Vec<usize> {
    vec![20]
}
fn default_sigma() -> Vec<f64> {
    vec![0.1]
}
fn default_d_sigma() -> Vec<f64> {
    vec![0.0, 0.1, 0.2]
}
fn default_k_diffs() -> usize {
    20
}
fn default_n_patients() -> usize {
    10
}
fn default_m() -> usize {
    1000
}
fn default_rho() -> f64 {
    0.3
}
fn default_alpha() -> f64 {
    0.05
}
fn default_parametrizations() -> Vec<Parametrization> {
    vec![Parametrization::Tangent, Parametrization::Flat]
}

/// Simulation grid. Readable from a JSON config file; missing fields take
/// their defaults.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSpec {
    #[serde(default)]
    pub n: Option<usize>,
    #[serde(default = "default_n_controls")]
    pub n_controls: Vec<usize>,
    #[serde(default = "default_sigma")]
    pub sigma: Vec<f64>,
    #[serde(default = "default_d_sigma")]
    pub d_sigma: Vec<f64>,
    #[serde(default = "default_k_diffs")]
    pub k_diffs: usize,
    #[serde(default = "default_n_patients")]
    pub n_patients: usize,
    #[serde(default = "default_m")]
    pub m: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_parametrizations")]
    pub parametrizations: Vec<Parametrization>,
    /// Decay of the synthetic group matrix `rho^|i−j|`.
    #[serde(default = "default_rho")]
    pub rho: f64,
    /// Model file whose group mean replaces the synthetic one.
    #[serde(default)]
    pub model: Option<PathBuf>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
}

impl Default for SimulateSpec {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults deserialize")
    }
}

impl SimulateSpec {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("{}: invalid simulation config", path.display()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AucRow {
    pub parametrization: Parametrization,
    pub d_sigma: f64,
    pub sigma: f64,
    pub n_controls: usize,
    pub auc: f64,
}

/// Runs every `(S, σ, dΣ, parametrization)` cell and writes the curve table
/// followed by one AUC summary row per cell. Cells that differ only in their
/// parametrization share seed and data.
pub fn cmd_simulate(spec: &SimulateSpec, out: &Path, stdout: &mut dyn Write) -> Result<Vec<AucRow>> {
    ensure!(!spec.parametrizations.is_empty(), "no parametrization requested");
    let (n, sigma_star) = match &spec.model {
        Some(path) => {
            let model = ModelFile::load(path)?.to_model()?;
            if let Some(n) = spec.n {
                ensure!(n == model.dim(), "n = {n} but the model has {} regions", model.dim());
            }
            (model.dim(), model.sigma_star.clone())
        }
        None => {
            let n = spec.n.unwrap_or(33);
            (n, exp_decay_correlation(n, spec.rho)?)
        }
    };

    let mut cells = Vec::new();
    let mut base_index = 0u64;
    for &s in &spec.n_controls {
        for &sigma in &spec.sigma {
            for &d_sigma in &spec.d_sigma {
                for &p in &spec.parametrizations {
                    let mut cfg = SimConfig::new(n, s)?;
                    cfg.sigma_star = sigma_star.clone();
                    cfg.sigma = sigma;
                    cfg.d_sigma = d_sigma;
                    cfg.k_diffs = spec.k_diffs;
                    cfg.n_patients = spec.n_patients;
                    cfg.m = spec.m;
                    cfg.alpha = spec.alpha;
                    cfg.parametrization = p;
                    cfg.seed = spec.seed.wrapping_add(base_index);
                    cfg.validate()?;
                    cells.push(cfg);
                }
                base_index += 1;
            }
        }
    }
    if cells.is_empty() {
        bail!("empty simulation grid");
    }
    let outcomes = roc_grid(&cells)?;

    let mut table = String::from("kind,parametrization,d_sigma,sigma,S,threshold,fpr,tpr,auc\n");
    for (cfg, o) in cells.iter().zip(&outcomes) {
        for p in &o.curve.points {
            let _ = writeln!(
                table,
                "curve,{},{},{},{},{},{},{},",
                cfg.parametrization, cfg.d_sigma, cfg.sigma, cfg.n_controls, p.threshold, p.fpr, p.tpr
            );
        }
    }
    let mut rows = Vec::with_capacity(cells.len());
    for (cfg, o) in cells.iter().zip(&outcomes) {
        let _ = writeln!(
            table,
            "auc,{},{},{},{},,,,{}",
            cfg.parametrization, cfg.d_sigma, cfg.sigma, cfg.n_controls, o.curve.auc
        );
        writeln!(
            stdout,
            "{} d_sigma={} sigma={} S={}: auc={:.4} clipped_patients={}",
            cfg.parametrization, cfg.d_sigma, cfg.sigma, cfg.n_controls, o.curve.auc, o.clipped_patients
        )?;
        rows.push(AucRow {
            parametrization: cfg.parametrization,
            d_sigma: cfg.d_sigma,
            sigma: cfg.sigma,
            n_controls: cfg.n_controls,
            auc: o.curve.auc,
        });
    }
    io::write_atomic(out, table.as_bytes())?;
    Ok(rows)
}
