//! Coefficient-level tests of one subject against a control group.
//!
//! The null distribution of the per-pair statistic is built by leaving one
//! control out, bootstrapping a surrogate control group from the others,
//! refitting the group model on the surrogates and testing the left-out
//! control against them. Observed statistics are then converted to two-sided
//! empirical p-values and Bonferroni-corrected over the `n(n−1)/2` pairs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::TimeSeries;
use crate::group_model::{fit_matrices, subject_correlations, FrechetConfig, GroupModel, Parametrization};
use crate::spd::{pair_count, pairs, SpdMatrix, TangentVector};

/// Lower bound on the control standard deviation in [`t_statistic`].
pub const SD_FLOOR: f64 = 1e-12;

/// Two-sample statistic of one value against a control sample:
/// `(x − mean) / (sd · sqrt(1 + 1/S))`, with `sd` the unbiased standard
/// deviation floored at [`SD_FLOOR`].
pub fn t_statistic(controls: &[f64], patient_value: f64) -> Result<f64> {
    if controls.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "t statistic needs at least 2 controls, got {}",
            controls.len()
        )));
    }
    Ok(t_from_iter(controls.iter().copied(), controls.len(), patient_value))
}

fn t_from_iter(values: impl Iterator<Item = f64> + Clone, count: usize, patient_value: f64) -> f64 {
    let s = count as f64;
    let mean = values.clone().sum::<f64>() / s;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / (s - 1.0);
    let sd = var.sqrt().max(SD_FLOOR);
    (patient_value - mean) / (sd * (1.0 + 1.0 / s).sqrt())
}

/// Two-sided empirical p-value with add-one smoothing:
/// `(1 + #{|v| ≥ |t|}) / (m + 1)`.
pub fn empirical_pvalue(t: f64, null_values: &[f64]) -> f64 {
    let magnitude = t.abs();
    let exceed = null_values.iter().filter(|v| v.abs() >= magnitude).count();
    (1 + exceed) as f64 / (null_values.len() + 1) as f64
}

/// Bootstrap settings for [`build_null`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NullConfig {
    /// Number of bootstrap draws.
    pub m: usize,
    pub seed: u64,
    pub parametrization: Parametrization,
    pub frechet: FrechetConfig,
}

impl Default for NullConfig {
    fn default() -> Self {
        Self {
            m: 1000,
            seed: 0,
            parametrization: Parametrization::Tangent,
            frechet: FrechetConfig::default(),
        }
    }
}

/// Per-pair bootstrap statistics. `values[k]` holds the `m` statistics of
/// pair `k` in canonical pair order.
#[derive(Debug, Clone, PartialEq)]
pub struct NullDistribution {
    pub n: usize,
    pub m: usize,
    pub values: Vec<Vec<f64>>,
    /// Bootstrap draws discarded because the surrogate fit failed.
    pub failures: usize,
    pub config: NullConfig,
}

impl NullDistribution {
    pub fn pair_values(&self, pair: usize) -> &[f64] {
        &self.values[pair]
    }
}

/// Per-pair statistics of `subject` against the residuals of `members`.
fn pair_statistics(model_residuals: &[&TangentVector], subject: &TangentVector, n: usize) -> Vec<f64> {
    let count = model_residuals.len();
    (0..pair_count(n))
        .map(|k| {
            let values = model_residuals.iter().map(|r| r.coords()[k]);
            t_from_iter(values, count, subject.coords()[k])
        })
        .collect()
}

fn iteration_rng(seed: u64, iteration: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(iteration as u64);
    rng
}

/// One bootstrap draw: returns the left-out statistics and the number of
/// failed attempts before success. Gives up after `max_failures`.
fn bootstrap_draw(
    controls: &[SpdMatrix],
    cfg: &NullConfig,
    iteration: usize,
    max_failures: usize,
) -> std::result::Result<(Vec<f64>, usize), usize> {
    let s = controls.len();
    let n = controls[0].dim();
    let mut rng = iteration_rng(cfg.seed, iteration);
    let mut failures = 0;
    loop {
        let left_out = rng.random_range(0..s);
        let surrogates: Vec<SpdMatrix> = (0..s)
            .map(|_| {
                let k = rng.random_range(0..s - 1);
                let idx = if k >= left_out { k + 1 } else { k };
                controls[idx].clone()
            })
            .collect();
        let fitted = fit_matrices(&surrogates, None, cfg.parametrization, &cfg.frechet)
            .and_then(|model| model.project(&controls[left_out]).map(|r| (model, r)));
        match fitted {
            Ok((model, left)) => {
                let refs: Vec<&TangentVector> = model.residuals.iter().collect();
                return Ok((pair_statistics(&refs, &left, n), failures));
            }
            Err(_) => {
                failures += 1;
                if failures > max_failures {
                    return Err(failures);
                }
            }
        }
    }
}

/// Bootstrap null distribution from precomputed control matrices.
///
/// Draw `k` uses its own random stream derived from `(seed, k)`, so the result
/// does not depend on scheduling.
pub fn build_null_from_matrices(controls: &[SpdMatrix], cfg: &NullConfig) -> Result<NullDistribution> {
    let s = controls.len();
    if s < 3 {
        return Err(Error::InvalidInput(format!(
            "bootstrap null needs at least 3 controls, got {s}"
        )));
    }
    if cfg.m == 0 {
        return Err(Error::Config("bootstrap count m must be >= 1".into()));
    }
    cfg.frechet.validate()?;
    let n = controls[0].dim();
    if let Some(bad) = controls.iter().find(|c| c.dim() != n) {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: bad.dim(),
        });
    }
    let max_failures = cfg.m / 10;

    let draws: Vec<std::result::Result<(Vec<f64>, usize), usize>> = (0..cfg.m)
        .into_par_iter()
        .map(|it| bootstrap_draw(controls, cfg, it, max_failures))
        .collect();

    let mut failures = 0;
    let mut stats = Vec::with_capacity(cfg.m);
    let mut aborted = false;
    for d in draws {
        match d {
            Ok((t, f)) => {
                failures += f;
                stats.push(t);
            }
            Err(f) => {
                failures += f;
                aborted = true;
            }
        }
    }
    if aborted || failures > max_failures {
        return Err(Error::BootstrapFailures {
            failures,
            attempts: cfg.m + failures,
        });
    }

    let p = pair_count(n);
    let mut values = vec![Vec::with_capacity(cfg.m); p];
    for draw in &stats {
        for (k, t) in draw.iter().enumerate() {
            values[k].push(*t);
        }
    }
    Ok(NullDistribution {
        n,
        m: cfg.m,
        values,
        failures,
        config: *cfg,
    })
}

/// Bootstrap null distribution from raw control time series.
pub fn build_null(controls: &[TimeSeries], cfg: &NullConfig) -> Result<NullDistribution> {
    let mats = subject_correlations(controls)?;
    build_null_from_matrices(&mats, cfg)
}

/// Result for one region pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairTest {
    pub i: usize,
    pub j: usize,
    pub t: f64,
    pub p_raw: f64,
    pub p_corrected: f64,
    /// Sign of the subject-minus-controls difference (−1, 0 or 1).
    pub direction: i8,
}

/// All pair tests for one subject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub subject_id: String,
    pub pairs: Vec<PairTest>,
    pub alpha: f64,
    /// Pairs with `p_corrected < alpha`.
    pub significant_pairs: Vec<(usize, usize)>,
}

impl TestReport {
    pub fn significant_corrected(&self) -> usize {
        self.significant_pairs.len()
    }

    pub fn significant_uncorrected(&self) -> usize {
        self.pairs.iter().filter(|p| p.p_raw < self.alpha).count()
    }
}

/// Group model fitted on the complete control group, ready to test subjects.
#[derive(Debug, Clone)]
pub struct ControlGroup {
    model: GroupModel,
}

impl ControlGroup {
    pub fn fit(controls: &[SpdMatrix], parametrization: Parametrization, frechet: &FrechetConfig) -> Result<Self> {
        Ok(Self {
            model: fit_matrices(controls, None, parametrization, frechet)?,
        })
    }

    pub fn model(&self) -> &GroupModel {
        &self.model
    }

    /// Tests one subject against the controls, with p-values read off `null`.
    pub fn test(
        &self,
        subject_id: &str,
        patient: &SpdMatrix,
        null: &NullDistribution,
        alpha: f64,
    ) -> Result<TestReport> {
        let n = self.model.dim();
        if null.n != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: null.n,
            });
        }
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::Config(format!("alpha must be in (0, 1], got {alpha}")));
        }
        if self.model.parametrization != null.config.parametrization {
            return Err(Error::Config(format!(
                "null built with {} parametrization, model uses {}",
                null.config.parametrization, self.model.parametrization
            )));
        }
        let residual = self.model.project(patient)?;
        let refs: Vec<&TangentVector> = self.model.residuals.iter().collect();
        let stats = pair_statistics(&refs, &residual, n);
        let tests = pair_count(n) as f64;

        let pairs: Vec<PairTest> = pairs(n)
            .zip(stats)
            .enumerate()
            .map(|(k, ((i, j), t))| {
                let p_raw = empirical_pvalue(t, null.pair_values(k));
                PairTest {
                    i,
                    j,
                    t,
                    p_raw,
                    p_corrected: (p_raw * tests).min(1.0),
                    direction: if t > 0.0 {
                        1
                    } else if t < 0.0 {
                        -1
                    } else {
                        0
                    },
                }
            })
            .collect();
        let significant_pairs = pairs
            .iter()
            .filter(|p| p.p_corrected < alpha)
            .map(|p| (p.i, p.j))
            .collect();
        Ok(TestReport {
            subject_id: subject_id.to_string(),
            pairs,
            alpha,
            significant_pairs,
        })
    }
}

/// Tests a patient's time series against the control group.
pub fn test_patient(
    controls: &[TimeSeries],
    patient: &TimeSeries,
    null: &NullDistribution,
    alpha: f64,
    subject_id: &str,
) -> Result<TestReport> {
    let mats = subject_correlations(controls)?;
    if patient.n_regions() != mats[0].dim() {
        return Err(Error::DimensionMismatch {
            expected: mats[0].dim(),
            found: patient.n_regions(),
        });
    }
    let patient = crate::estimation::correlation_estimate(patient, None)?;
    let group = ControlGroup::fit(&mats, null.config.parametrization, &null.config.frechet)?;
    group.test(subject_id, &patient, null, alpha)
}
