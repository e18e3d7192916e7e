//! From multivariate time series to well-conditioned correlation matrices.
//!
//! The fixed pipeline is: confound residualization, Ledoit-Wolf shrinkage
//! towards a scaled identity, then diagonal normalization to a correlation
//! matrix.

use std::collections::HashSet;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::spd::{SpdMatrix, SymMatrix};

/// `t × n` samples of `n` regional signals.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    values: DMatrix<f64>,
    region_names: Vec<String>,
}

impl TimeSeries {
    pub fn new(values: DMatrix<f64>, region_names: Vec<String>) -> Result<Self> {
        let (t, n) = values.shape();
        if n == 0 {
            return Err(Error::InvalidInput("time series has no regions".into()));
        }
        if t < 2 {
            return Err(Error::InvalidInput(format!(
                "time series needs at least 2 samples, got {t}"
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("time series has non-finite values".into()));
        }
        if region_names.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: region_names.len(),
            });
        }
        let mut seen = HashSet::new();
        for name in &region_names {
            if !seen.insert(name.as_str()) {
                return Err(Error::InvalidInput(format!("duplicate region name {name:?}")));
            }
        }
        Ok(Self { values, region_names })
    }

    /// Regions named `r0, r1, ...`.
    pub fn unnamed(values: DMatrix<f64>) -> Result<Self> {
        let names = (0..values.ncols()).map(|i| format!("r{i}")).collect();
        Self::new(values, names)
    }

    pub fn n_regions(&self) -> usize {
        self.values.ncols()
    }

    pub fn n_samples(&self) -> usize {
        self.values.nrows()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn region_names(&self) -> &[String] {
        &self.region_names
    }
}

/// `t × c` nuisance regressors paired with a [`TimeSeries`].
#[derive(Debug, Clone, PartialEq)]
pub struct ConfoundSet {
    values: DMatrix<f64>,
}

impl ConfoundSet {
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("confounds have non-finite values".into()));
        }
        Ok(Self { values })
    }

    pub fn empty(t: usize) -> Self {
        Self {
            values: DMatrix::zeros(t, 0),
        }
    }

    pub fn n_samples(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_confounds(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }
}

/// Removes from each column of `x` its least-squares fit on the confounds plus
/// a constant. Rank-deficient designs are handled through the orthonormal
/// basis of the design's column space.
pub fn residualize_confounds(x: &TimeSeries, c: &ConfoundSet) -> Result<TimeSeries> {
    let t = x.n_samples();
    if c.n_samples() != t {
        return Err(Error::DimensionMismatch {
            expected: t,
            found: c.n_samples(),
        });
    }
    let k = c.n_confounds();
    let mut design = DMatrix::zeros(t, k + 1);
    design.columns_mut(0, k).copy_from(c.values());
    design.column_mut(k).fill(1.0);

    let svd = design.svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let s_max = svd.singular_values.max();
    let tol = s_max * (t.max(k + 1) as f64) * f64::EPSILON;
    let keep: Vec<usize> = svd
        .singular_values
        .iter()
        .enumerate()
        .filter(|(_, s)| **s > tol)
        .map(|(i, _)| i)
        .collect();
    let basis = u.select_columns(&keep);
    let fitted = &basis * (basis.transpose() * x.values());
    TimeSeries::new(x.values() - fitted, x.region_names.clone())
}

fn centered(x: &TimeSeries) -> DMatrix<f64> {
    let mut c = x.values().clone();
    for mut col in c.column_iter_mut() {
        let mean = col.mean();
        col.add_scalar_mut(-mean);
    }
    c
}

/// Biased sample covariance `(1/t) Σ_k (x_k − x̄)(x_k − x̄)ᵀ`.
pub fn sample_covariance(x: &TimeSeries) -> Result<SymMatrix> {
    let t = x.n_samples();
    if t < 2 {
        return Err(Error::InvalidInput("sample covariance needs t >= 2".into()));
    }
    let c = centered(x);
    SymMatrix::new(c.transpose() * &c / t as f64)
}

/// Shrinkage estimate together with its intensity.
#[derive(Debug, Clone, PartialEq)]
pub struct Shrinkage {
    pub covariance: SpdMatrix,
    /// Shrinkage intensity in `[0, 1]`.
    pub rho: f64,
    /// Target scale `trace(S)/n`.
    pub mu: f64,
}

/// Ledoit-Wolf shrinkage towards `μI`, returning the intensity as well.
pub fn ledoit_wolf_with_intensity(x: &TimeSeries) -> Result<Shrinkage> {
    let t = x.n_samples();
    let n = x.n_regions();
    if t < 2 {
        return Err(Error::InvalidInput("Ledoit-Wolf needs t >= 2".into()));
    }
    let c = centered(x);
    let s = c.transpose() * &c / t as f64;
    let nf = n as f64;
    let mu = s.trace() / nf;
    if mu <= 0.0 {
        return Err(Error::Degenerate("all series are constant".into()));
    }

    let mut dev = s.clone();
    for i in 0..n {
        dev[(i, i)] -= mu;
    }
    let d2 = dev.norm_squared() / nf;

    // ‖x xᵀ − S‖² = ‖x‖⁴ − 2 xᵀ S x + ‖S‖²
    let s_norm2 = s.norm_squared();
    let sc = &c * &s;
    let mut acc = 0.0;
    for k in 0..t {
        let row = c.row(k);
        let sq = row.norm_squared();
        let quad = row.dot(&sc.row(k));
        acc += sq * sq - 2.0 * quad + s_norm2;
    }
    let b_bar2 = acc / (t as f64 * t as f64) / nf;
    let b2 = b_bar2.min(d2);
    let rho = if d2 > 0.0 { b2 / d2 } else { 1.0 };

    let mut shrunk = s * (1.0 - rho);
    for i in 0..n {
        shrunk[(i, i)] += rho * mu;
    }
    Ok(Shrinkage {
        covariance: SpdMatrix::new(shrunk)?,
        rho,
        mu,
    })
}

/// Ledoit-Wolf shrinkage covariance.
pub fn ledoit_wolf(x: &TimeSeries) -> Result<SpdMatrix> {
    Ok(ledoit_wolf_with_intensity(x)?.covariance)
}

/// `D^{-1/2} S D^{-1/2}` with `D = diag(S)`; the diagonal is set to exactly 1.
pub fn to_correlation(s: &SpdMatrix) -> Result<SpdMatrix> {
    let n = s.dim();
    let m = s.as_matrix();
    let scale: Vec<f64> = (0..n)
        .map(|i| {
            let d = m[(i, i)];
            if d > 0.0 {
                Ok(d.sqrt())
            } else {
                Err(Error::InvalidInput(format!("nonpositive diagonal entry {d} at {i}")))
            }
        })
        .collect::<Result<_>>()?;
    let mut out = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            out[(i, j)] = if i == j { 1.0 } else { m[(i, j)] / (scale[i] * scale[j]) };
        }
    }
    SpdMatrix::new(out)
}

/// Full per-subject pipeline: optional residualization, shrinkage, correlation.
pub fn correlation_estimate(x: &TimeSeries, confounds: Option<&ConfoundSet>) -> Result<SpdMatrix> {
    let cleaned = match confounds {
        Some(c) => residualize_confounds(x, c)?,
        None => x.clone(),
    };
    to_correlation(&ledoit_wolf(&cleaned)?)
}
