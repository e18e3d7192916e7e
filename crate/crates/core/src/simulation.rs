//! Synthetic populations under the group variability model and ROC
//! evaluation of coefficient-level detection.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use nalgebra::DMatrix;
use std::f64::consts::SQRT_2;

use crate::error::{Error, Result};
use crate::group_model::{place, FrechetConfig, Parametrization};
use crate::inference::{build_null_from_matrices, ControlGroup, NullConfig, TestReport};
use crate::spd::{pair_count, pairs, tangent_dim, SpdMatrix, TangentVector};

/// Fraction of clipped draws above which a population is rejected.
pub const MAX_CLIP_RATE: f64 = 0.1;

// Random streams of one experiment.
const CONTROL_STREAM: u64 = 1;
const PATIENT_STREAM: u64 = 2;
const NULL_SEED_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

/// Correlation matrix with entries `rho^|i−j|`.
pub fn exp_decay_correlation(n: usize, rho: f64) -> Result<SpdMatrix> {
    if !(rho.abs() < 1.0) {
        return Err(Error::Config(format!("decay rho must satisfy |rho| < 1, got {rho}")));
    }
    let m = DMatrix::from_fn(n, n, |i, j| rho.powi((i as i32 - j as i32).abs()));
    SpdMatrix::new(m)
}

/// Configuration of one simulated detection experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub n: usize,
    /// Number of controls `S`.
    pub n_controls: usize,
    pub n_patients: usize,
    /// Per-coordinate control dispersion.
    pub sigma: f64,
    /// Amplitude added to each modified coefficient of a patient.
    pub d_sigma: f64,
    pub k_diffs: usize,
    pub sigma_star: SpdMatrix,
    pub seed: u64,
    /// Bootstrap draws for the null distribution.
    pub m: usize,
    pub parametrization: Parametrization,
    pub alpha: f64,
    pub frechet: FrechetConfig,
}

impl SimConfig {
    /// Defaults: `ρ^|i−j|` group matrix with `ρ = 0.3`, `σ = 0.1`,
    /// 20 modified coefficients, 10 patients, `m = 1000`.
    pub fn new(n: usize, n_controls: usize) -> Result<Self> {
        Ok(Self {
            n,
            n_controls,
            n_patients: 10,
            sigma: 0.1,
            d_sigma: 0.2,
            k_diffs: 20.min(pair_count(n).max(1)),
            sigma_star: exp_decay_correlation(n, 0.3)?,
            seed: 0,
            m: 1000,
            parametrization: Parametrization::Tangent,
            alpha: 0.05,
            frechet: FrechetConfig::default(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.sigma_star.dim() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                found: self.sigma_star.dim(),
            });
        }
        if !(self.sigma > 0.0) {
            return Err(Error::Config("sigma must be > 0".into()));
        }
        if !(self.d_sigma >= 0.0) {
            return Err(Error::Config("d_sigma must be >= 0".into()));
        }
        if self.k_diffs == 0 || self.k_diffs > pair_count(self.n) {
            return Err(Error::Config(format!(
                "k_diffs must be in 1..={}, got {}",
                pair_count(self.n),
                self.k_diffs
            )));
        }
        if self.n_controls < 3 {
            return Err(Error::Config("at least 3 controls are required".into()));
        }
        if self.n_patients == 0 {
            return Err(Error::Config("at least 1 patient is required".into()));
        }
        self.frechet.validate()
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Residual with i.i.d. `N(0, σ²)` coordinates.
pub fn sample_residual<R: Rng + ?Sized>(n: usize, sigma: f64, rng: &mut R) -> TangentVector {
    let coords: Vec<f64> = (0..tangent_dim(n))
        .map(|_| sigma * rng.sample::<f64, _>(StandardNormal))
        .collect();
    TangentVector::from_vec(coords, n).expect("length matches by construction")
}

/// Draws `count` subjects `Σ*^{1/2}(I + dΣ)Σ*^{1/2}`; returns them with the
/// number of draws that needed eigenvalue clipping.
pub fn sample_subjects<R: Rng + ?Sized>(
    sigma_star: &SpdMatrix,
    sigma: f64,
    count: usize,
    rng: &mut R,
) -> Result<(Vec<SpdMatrix>, usize)> {
    let n = sigma_star.dim();
    let mut clipped = 0;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let (m, c) = place(sigma_star, &sample_residual(n, sigma, rng))?;
        clipped += usize::from(c);
        out.push(m);
    }
    check_clip_rate(clipped, count)?;
    Ok((out, clipped))
}

fn check_clip_rate(clipped: usize, count: usize) -> Result<()> {
    if count > 0 && clipped as f64 > MAX_CLIP_RATE * count as f64 {
        return Err(Error::Config(format!(
            "{clipped} of {count} simulated subjects left the SPD cone; sigma is too large for sigma_star"
        )));
    }
    Ok(())
}

/// Control population of `cfg.n_controls` subjects.
pub fn sample_population(cfg: &SimConfig) -> Result<Vec<SpdMatrix>> {
    cfg.validate()?;
    let mut rng = stream_rng(cfg.seed, CONTROL_STREAM);
    Ok(sample_subjects(&cfg.sigma_star, cfg.sigma, cfg.n_controls, &mut rng)?.0)
}

/// Adds `±d_sigma` (random sign) to `k_diffs` distinct off-diagonal matrix
/// coefficients `(i, j)`, `j < i`, keeping the matrix symmetric. In Vec
/// coordinates each modified entry moves by `√2·d_sigma`.
pub fn inject_differences<R: Rng + ?Sized>(
    base: &TangentVector,
    k_diffs: usize,
    d_sigma: f64,
    rng: &mut R,
) -> Result<(TangentVector, Vec<(usize, usize)>)> {
    let n = base.dim();
    let p = pair_count(n);
    if k_diffs == 0 || k_diffs > p {
        return Err(Error::Config(format!("k_diffs must be in 1..={p}, got {k_diffs}")));
    }
    let all: Vec<(usize, usize)> = pairs(n).collect();
    let mut chosen: Vec<usize> = sample(rng, p, k_diffs).into_vec();
    chosen.sort_unstable();
    let mut coords = base.coords().to_vec();
    let mut truth = Vec::with_capacity(k_diffs);
    for k in chosen {
        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
        if d_sigma != 0.0 {
            coords[k] += SQRT_2 * sign * d_sigma;
        }
        truth.push(all[k]);
    }
    let out = TangentVector::from_vec(coords, n)?;
    Ok((out, truth))
}

/// One ROC point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    /// Detection rule is `p ≤ threshold`.
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

/// Trapezoidal area under `(fpr, tpr)` points sorted by FPR.
pub fn auc(points: &[(f64, f64)]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) * 0.5)
        .sum()
}

/// ROC of p-value scores (smaller = more significant) against labels.
/// Thresholds sweep every distinct score; ties move together.
pub fn roc_curve(scored: &[(f64, bool)]) -> Result<RocCurve> {
    let positives = scored.iter().filter(|(_, l)| *l).count();
    let negatives = scored.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::InvalidInput(
            "ROC needs at least one positive and one negative".into(),
        ));
    }
    let mut sorted: Vec<(f64, bool)> = scored.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut points = vec![RocPoint {
        threshold: 0.0,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut k = 0;
    while k < sorted.len() {
        let threshold = sorted[k].0;
        while k < sorted.len() && sorted[k].0 == threshold {
            if sorted[k].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            k += 1;
        }
        points.push(RocPoint {
            threshold,
            fpr: fp as f64 / negatives as f64,
            tpr: tp as f64 / positives as f64,
        });
    }
    let xy: Vec<(f64, f64)> = points.iter().map(|p| (p.fpr, p.tpr)).collect();
    Ok(RocCurve { auc: auc(&xy), points })
}

/// Simulated patients and their ground truth.
#[derive(Debug, Clone)]
pub struct SimulatedPatients {
    pub matrices: Vec<SpdMatrix>,
    pub truth: Vec<Vec<(usize, usize)>>,
    pub clipped: usize,
}

/// Patients: a control draw plus injected differences. Depends only on
/// `cfg.seed` and the population parameters, never on the parametrization.
/// Patients that leave the SPD cone are clipped and counted, not rejected.
pub fn sample_patients(cfg: &SimConfig) -> Result<SimulatedPatients> {
    cfg.validate()?;
    let mut rng = stream_rng(cfg.seed, PATIENT_STREAM);
    let mut matrices = Vec::with_capacity(cfg.n_patients);
    let mut truth = Vec::with_capacity(cfg.n_patients);
    let mut clipped = 0;
    for _ in 0..cfg.n_patients {
        let base = sample_residual(cfg.n, cfg.sigma, &mut rng);
        let (modified, t) = inject_differences(&base, cfg.k_diffs, cfg.d_sigma, &mut rng)?;
        let (m, c) = place(&cfg.sigma_star, &modified)?;
        clipped += usize::from(c);
        matrices.push(m);
        truth.push(t);
    }
    Ok(SimulatedPatients {
        matrices,
        truth,
        clipped,
    })
}

/// Outcome of one detection experiment.
#[derive(Debug, Clone)]
pub struct RocOutcome {
    pub curve: RocCurve,
    pub reports: Vec<TestReport>,
    /// Mean count of pairs with `p_raw < alpha` per patient.
    pub mean_significant_uncorrected: f64,
    /// Mean count of pairs with `p_corrected < alpha` per patient.
    pub mean_significant_corrected: f64,
    pub null_failures: usize,
    /// Patients whose injected differences needed eigenvalue clipping.
    pub clipped_patients: usize,
}

/// Runs the full detection pipeline on one simulated population and scores
/// the pooled per-pair p-values of all patients against the ground truth.
pub fn roc_experiment(cfg: &SimConfig) -> Result<RocOutcome> {
    cfg.validate()?;
    let controls = sample_population(cfg)?;
    let patients = sample_patients(cfg)?;
    let null_cfg = NullConfig {
        m: cfg.m,
        seed: cfg.seed ^ NULL_SEED_SALT,
        parametrization: cfg.parametrization,
        frechet: cfg.frechet,
    };
    let null = build_null_from_matrices(&controls, &null_cfg)?;
    let group = ControlGroup::fit(&controls, cfg.parametrization, &cfg.frechet)?;

    let mut scored = Vec::with_capacity(cfg.n_patients * pair_count(cfg.n));
    let mut reports = Vec::with_capacity(cfg.n_patients);
    for (k, (patient, truth)) in patients.matrices.iter().zip(&patients.truth).enumerate() {
        let report = group.test(&format!("patient{k}"), patient, &null, cfg.alpha)?;
        for pt in &report.pairs {
            scored.push((pt.p_raw, truth.contains(&(pt.i, pt.j))));
        }
        reports.push(report);
    }
    let count = reports.len() as f64;
    Ok(RocOutcome {
        curve: roc_curve(&scored)?,
        mean_significant_uncorrected: reports.iter().map(|r| r.significant_uncorrected() as f64).sum::<f64>() / count,
        mean_significant_corrected: reports.iter().map(|r| r.significant_corrected() as f64).sum::<f64>() / count,
        reports,
        null_failures: null.failures,
        clipped_patients: patients.clipped,
    })
}

/// Runs independent experiment cells in parallel; output order matches input.
pub fn roc_grid(cells: &[SimConfig]) -> Result<Vec<RocOutcome>> {
    cells.par_iter().map(roc_experiment).collect()
}
