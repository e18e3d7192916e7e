//! Group model over subjects: intrinsic mean, whitened residuals, isotropic
//! dispersion and likelihood scoring.
//!
//! Subjects are modelled as `Σ^s = Σ*^{1/2} (I + dΣ^s) Σ*^{1/2}` with the
//! coordinates of `dΣ^s` i.i.d. `N(0, σ²)`. The flat comparator models
//! `Σ^s = Σ* + dΣ^s` directly in matrix space.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::{correlation_estimate, TimeSeries};
use crate::spd::{self, spd_expm, spd_sqrtm, tangent_dim, SpdMatrix, SymMatrix, TangentVector};

/// Which residual parametrization a model uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Parametrization {
    /// Whitened residuals `Σ*^{-1/2} Σ Σ*^{-1/2} − I` around the intrinsic mean.
    #[default]
    Tangent,
    /// Additive residuals `Σ − Σ*` around the arithmetic mean.
    Flat,
}

impl Parametrization {
    pub fn as_str(&self) -> &'static str {
        match self {
            Parametrization::Tangent => "tangent",
            Parametrization::Flat => "flat",
        }
    }
}

impl std::fmt::Display for Parametrization {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Parametrization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tangent" => Ok(Parametrization::Tangent),
            "flat" => Ok(Parametrization::Flat),
            other => Err(Error::Config(format!("unknown parametrization {other:?}"))),
        }
    }
}

/// Stopping rule for the intrinsic mean iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrechetConfig {
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
}

impl FrechetConfig {
    pub fn new(max_iterations: usize, gradient_tolerance: f64) -> Result<Self> {
        let cfg = Self {
            max_iterations,
            gradient_tolerance,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::Config("max_iterations must be >= 1".into()));
        }
        if !(self.gradient_tolerance > 0.0) {
            return Err(Error::Config("gradient_tolerance must be > 0".into()));
        }
        Ok(())
    }
}

impl Default for FrechetConfig {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            gradient_tolerance: 1e-8,
        }
    }
}

/// Intrinsic mean together with its convergence diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct FrechetMean {
    pub mean: SpdMatrix,
    /// Number of update steps taken.
    pub iterations: usize,
    /// `‖(1/S) Σ_s log(M^{-1/2} Σ^s M^{-1/2})‖_F` at the returned point.
    pub gradient_norm: f64,
}

fn common_dim(mats: &[SpdMatrix]) -> Result<usize> {
    let first = mats
        .first()
        .ok_or_else(|| Error::InvalidInput("empty set of matrices".into()))?;
    let n = first.dim();
    for m in mats {
        if m.dim() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: m.dim(),
            });
        }
    }
    Ok(n)
}

fn arithmetic_mean(mats: &[SpdMatrix], n: usize) -> DMatrix<f64> {
    let mut acc = DMatrix::zeros(n, n);
    for m in mats {
        acc += m.as_matrix();
    }
    acc / mats.len() as f64
}

/// Intrinsic (Fréchet) mean under the affine-invariant metric.
pub fn frechet_mean(mats: &[SpdMatrix], cfg: &FrechetConfig) -> Result<SpdMatrix> {
    Ok(frechet_mean_with_diagnostics(mats, cfg)?.mean)
}

/// Fixed-point iteration `M ← M^{1/2} exp(ḡ) M^{1/2}` where `ḡ` is the mean
/// whitened log, started from the arithmetic mean.
pub fn frechet_mean_with_diagnostics(mats: &[SpdMatrix], cfg: &FrechetConfig) -> Result<FrechetMean> {
    cfg.validate()?;
    let n = common_dim(mats)?;
    let inv_s = 1.0 / mats.len() as f64;
    let mut current = SpdMatrix::new(arithmetic_mean(mats, n))?;
    let mut gradient_norm = f64::INFINITY;

    for iterations in 0..=cfg.max_iterations {
        let (root, inv_root) = spd_sqrtm(&current)?;
        let mut grad = DMatrix::zeros(n, n);
        for m in mats {
            grad += spd::whitened_log(&inv_root, m)?.matrix().as_matrix();
        }
        grad *= inv_s;
        gradient_norm = grad.norm();
        if gradient_norm <= cfg.gradient_tolerance {
            return Ok(FrechetMean {
                mean: current,
                iterations,
                gradient_norm,
            });
        }
        if iterations == cfg.max_iterations {
            break;
        }
        let step = spd_expm(&SymMatrix::new(grad)?)?;
        current = SpdMatrix::new(root.as_matrix() * step.as_matrix() * root.as_matrix())?;
    }
    Err(Error::Convergence {
        iterations: cfg.max_iterations,
        gradient_norm,
    })
}

/// Precomputed `Σ*^{-1/2}` for projecting many subjects onto one mean.
#[derive(Debug, Clone)]
pub(crate) struct Whitener {
    mean: SpdMatrix,
    inv_root: SpdMatrix,
}

impl Whitener {
    pub(crate) fn new(mean: &SpdMatrix) -> Result<Self> {
        let (_, inv_root) = spd_sqrtm(mean)?;
        Ok(Self {
            mean: mean.clone(),
            inv_root,
        })
    }

    pub(crate) fn residual(&self, subject: &SpdMatrix) -> Result<TangentVector> {
        let n = self.inv_root.dim();
        if subject.dim() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: subject.dim(),
            });
        }
        // exact zero for the mean itself instead of rounding noise
        if subject == &self.mean {
            return Ok(TangentVector::zeros(n));
        }
        let w = self.inv_root.as_matrix() * subject.as_matrix() * self.inv_root.as_matrix()
            - DMatrix::<f64>::identity(n, n);
        Ok(TangentVector::from_matrix(SymMatrix::new(w)?))
    }
}

/// Linearized whitened residual `Σ*^{-1/2} Σ^s Σ*^{-1/2} − I`.
pub fn residual(sigma_star: &SpdMatrix, sigma_s: &SpdMatrix) -> Result<TangentVector> {
    if sigma_star.dim() != sigma_s.dim() {
        return Err(Error::DimensionMismatch {
            expected: sigma_star.dim(),
            found: sigma_s.dim(),
        });
    }
    Whitener::new(sigma_star)?.residual(sigma_s)
}

/// Inverse of [`residual`]: `Σ*^{1/2} (I + dΣ) Σ*^{1/2}`. Eigenvalues that
/// fall below the SPD floor are clipped; the flag reports it.
pub fn place(sigma_star: &SpdMatrix, d_sigma: &TangentVector) -> Result<(SpdMatrix, bool)> {
    let n = sigma_star.dim();
    if d_sigma.dim() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: d_sigma.dim(),
        });
    }
    let (root, _) = spd_sqrtm(sigma_star)?;
    let inner = DMatrix::<f64>::identity(n, n) + d_sigma.matrix().as_matrix();
    let (inner, clipped) = SpdMatrix::clipped(inner)?;
    let out = SpdMatrix::from_trusted(root.as_matrix() * inner.as_matrix() * root.as_matrix());
    Ok((out, clipped))
}

fn flat_residual(sigma_star: &SpdMatrix, subject: &SpdMatrix) -> Result<TangentVector> {
    if sigma_star.dim() != subject.dim() {
        return Err(Error::DimensionMismatch {
            expected: sigma_star.dim(),
            found: subject.dim(),
        });
    }
    Ok(TangentVector::from_matrix(SymMatrix::new(
        subject.as_matrix() - sigma_star.as_matrix(),
    )?))
}

/// Per-coordinate dispersion `sqrt(Σ_s ‖Vec(dΣ^s)‖² / (S·d))`.
fn dispersion(residuals: &[TangentVector]) -> f64 {
    let Some(first) = residuals.first() else {
        return 0.0;
    };
    let d = tangent_dim(first.dim()) as f64;
    let total: f64 = residuals.iter().map(TangentVector::norm_squared).sum();
    (total / (residuals.len() as f64 * d)).sqrt()
}

/// Fitted group model.
#[derive(Debug, Clone)]
pub struct GroupModel {
    pub parametrization: Parametrization,
    /// Group mean `Σ*`.
    pub sigma_star: SpdMatrix,
    /// Isotropic per-coordinate dispersion.
    pub sigma: f64,
    pub n_subjects: usize,
    /// Per-subject residuals; empty for models restored from a summary.
    pub residuals: Vec<TangentVector>,
    pub region_names: Vec<String>,
    /// Mean-estimation iterations (0 for the flat model).
    pub iterations: usize,
    pub gradient_norm: f64,
    whitener: Whitener,
}

impl GroupModel {
    /// Rebuilds a model from its persisted summary (no residuals).
    pub fn from_summary(
        parametrization: Parametrization,
        sigma_star: SpdMatrix,
        sigma: f64,
        n_subjects: usize,
        region_names: Vec<String>,
    ) -> Result<Self> {
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return Err(Error::InvalidInput(format!("invalid dispersion {sigma}")));
        }
        if region_names.len() != sigma_star.dim() {
            return Err(Error::DimensionMismatch {
                expected: sigma_star.dim(),
                found: region_names.len(),
            });
        }
        let whitener = Whitener::new(&sigma_star)?;
        Ok(Self {
            parametrization,
            sigma_star,
            sigma,
            n_subjects,
            residuals: Vec::new(),
            region_names,
            iterations: 0,
            gradient_norm: 0.0,
            whitener,
        })
    }

    pub fn dim(&self) -> usize {
        self.sigma_star.dim()
    }

    /// Residual of `subject` in this model's parametrization.
    pub fn project(&self, subject: &SpdMatrix) -> Result<TangentVector> {
        match self.parametrization {
            Parametrization::Tangent => self.whitener.residual(subject),
            Parametrization::Flat => flat_residual(&self.sigma_star, subject),
        }
    }
}

fn default_names(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("r{i}")).collect()
}

fn check_names(names: Option<Vec<String>>, n: usize) -> Result<Vec<String>> {
    match names {
        Some(names) if names.len() != n => Err(Error::DimensionMismatch {
            expected: n,
            found: names.len(),
        }),
        Some(names) => Ok(names),
        None => Ok(default_names(n)),
    }
}

/// Tangent-space group model on precomputed subject matrices.
pub fn tangent_group_model(
    mats: &[SpdMatrix],
    region_names: Option<Vec<String>>,
    cfg: &FrechetConfig,
) -> Result<GroupModel> {
    if mats.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "group model needs at least 2 subjects, got {}",
            mats.len()
        )));
    }
    let n = common_dim(mats)?;
    let region_names = check_names(region_names, n)?;
    let fm = frechet_mean_with_diagnostics(mats, cfg)?;
    let whitener = Whitener::new(&fm.mean)?;
    let residuals = mats.iter().map(|m| whitener.residual(m)).collect::<Result<Vec<_>>>()?;
    Ok(GroupModel {
        parametrization: Parametrization::Tangent,
        sigma_star: fm.mean,
        sigma: dispersion(&residuals),
        n_subjects: mats.len(),
        residuals,
        region_names,
        iterations: fm.iterations,
        gradient_norm: fm.gradient_norm,
        whitener,
    })
}

/// Additive comparator: arithmetic mean and `Σ^s − Σ*` residuals.
pub fn flat_group_model(mats: &[SpdMatrix]) -> Result<GroupModel> {
    flat_group_model_named(mats, None)
}

pub fn flat_group_model_named(mats: &[SpdMatrix], region_names: Option<Vec<String>>) -> Result<GroupModel> {
    if mats.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "group model needs at least 2 subjects, got {}",
            mats.len()
        )));
    }
    let n = common_dim(mats)?;
    let region_names = check_names(region_names, n)?;
    let mean = SpdMatrix::new(arithmetic_mean(mats, n))?;
    let residuals = mats
        .iter()
        .map(|m| flat_residual(&mean, m))
        .collect::<Result<Vec<_>>>()?;
    let whitener = Whitener::new(&mean)?;
    Ok(GroupModel {
        parametrization: Parametrization::Flat,
        sigma_star: mean,
        sigma: dispersion(&residuals),
        n_subjects: mats.len(),
        residuals,
        region_names,
        iterations: 0,
        gradient_norm: 0.0,
        whitener,
    })
}

/// Group model on precomputed matrices in either parametrization.
pub fn fit_matrices(
    mats: &[SpdMatrix],
    region_names: Option<Vec<String>>,
    parametrization: Parametrization,
    cfg: &FrechetConfig,
) -> Result<GroupModel> {
    match parametrization {
        Parametrization::Tangent => tangent_group_model(mats, region_names, cfg),
        Parametrization::Flat => flat_group_model_named(mats, region_names),
    }
}

/// Per-subject correlation estimates for a set of time series with a
/// common region count.
pub fn subject_correlations(series: &[TimeSeries]) -> Result<Vec<SpdMatrix>> {
    let Some(first) = series.first() else {
        return Err(Error::InvalidInput("no subjects".into()));
    };
    let n = first.n_regions();
    series
        .iter()
        .map(|x| {
            if x.n_regions() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    found: x.n_regions(),
                });
            }
            correlation_estimate(x, None)
        })
        .collect()
}

/// Group model from raw subject time series: shrinkage correlation per
/// subject, intrinsic mean, whitened residuals and dispersion.
pub fn fit_group_model(series: &[TimeSeries], cfg: &FrechetConfig) -> Result<GroupModel> {
    if series.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "group model needs at least 2 subjects, got {}",
            series.len()
        )));
    }
    let mats = subject_correlations(series)?;
    tangent_group_model(&mats, Some(series[0].region_names().to_vec()), cfg)
}

/// Gaussian log-density of the subject's residual with per-coordinate
/// variance `σ²` over the `d = n(n+1)/2` coordinates.
pub fn log_likelihood(model: &GroupModel, subject: &SpdMatrix) -> Result<f64> {
    if !(model.sigma > 0.0) {
        return Err(Error::Degenerate("model dispersion is zero".into()));
    }
    let r = model.project(subject)?;
    let d = tangent_dim(model.dim()) as f64;
    let var = model.sigma * model.sigma;
    Ok(-0.5 * d * (2.0 * PI * var).ln() - r.norm_squared() / (2.0 * var))
}
