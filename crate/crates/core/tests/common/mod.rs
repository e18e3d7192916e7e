#![allow(dead_code)]

use covgroup::SpdMatrix;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

pub fn gaussian_matrix<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

pub fn random_orthogonal<R: Rng>(n: usize, rng: &mut R) -> DMatrix<f64> {
    gaussian_matrix(n, n, rng).qr().q()
}

/// Random SPD matrix with eigenvalues log-spaced so that the condition
/// number is exactly `cond`, scaled by `scale`.
pub fn random_spd<R: Rng>(n: usize, cond: f64, scale: f64, rng: &mut R) -> SpdMatrix {
    let q = random_orthogonal(n, rng);
    let eig = DVector::from_fn(n, |i, _| {
        let frac = if n > 1 { i as f64 / (n - 1) as f64 } else { 0.0 };
        scale * cond.powf(frac)
    });
    SpdMatrix::new(&q * DMatrix::from_diagonal(&eig) * q.transpose()).unwrap()
}

pub fn random_invertible<R: Rng>(n: usize, rng: &mut R) -> DMatrix<f64> {
    // Well conditioned: orthogonal times a diagonal in [0.5, 2].
    let q = random_orthogonal(n, rng);
    let d = DVector::from_fn(n, |_, _| rng.random_range(0.5..2.0));
    q * DMatrix::from_diagonal(&d)
}

pub fn rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm()
}
