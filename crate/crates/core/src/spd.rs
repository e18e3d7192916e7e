//! Manifold primitives on symmetric positive definite matrices.
//!
//! Every matrix function is computed through a symmetric eigendecomposition
//! `A = V diag(λ) Vᵀ`, so `f(A) = V diag(f(λ)) Vᵀ`. Inputs are symmetrized at
//! construction, which keeps the decomposition real and orthogonal.
//!
//! The tangent map used throughout the crate maps a pair `(A, B)` to the
//! symmetric matrix `log(A^{-1/2} B A^{-1/2})`, i.e. to the tangent space at the
//! identity after whitening by `A`.

use nalgebra::{DMatrix, SymmetricEigen};
use std::f64::consts::SQRT_2;

use crate::error::{Error, Result};

/// Relative eigenvalue floor: a matrix is accepted as SPD only when
/// `λ_min > EIGEN_FLOOR * λ_max`.
pub const EIGEN_FLOOR: f64 = 1e-10;

/// Largest eigenvalue accepted by [`spd_expm`] before `exp` overflows.
const EXP_MAX_ARG: f64 = 700.0;

fn check_square(m: &DMatrix<f64>) -> Result<usize> {
    let (r, c) = m.shape();
    if r != c {
        return Err(Error::InvalidInput(format!("matrix is {r}x{c}, not square")));
    }
    if r == 0 {
        return Err(Error::InvalidInput("matrix is empty".into()));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("matrix has non-finite entries".into()));
    }
    Ok(r)
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    // IEEE addition commutes, so the result is exactly symmetric.
    (m + m.transpose()) * 0.5
}

/// Rebuilds `V diag(f(λ)) Vᵀ` from an eigendecomposition.
fn reconstruct(eig: &SymmetricEigen<f64, nalgebra::Dyn>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let v = &eig.eigenvectors;
    let mut scaled = v.clone();
    for (k, lambda) in eig.eigenvalues.iter().enumerate() {
        let fk = f(*lambda);
        scaled.column_mut(k).scale_mut(fk);
    }
    symmetrize(&(scaled * v.transpose()))
}

fn eigen(m: &DMatrix<f64>) -> SymmetricEigen<f64, nalgebra::Dyn> {
    SymmetricEigen::new(m.clone())
}

fn extreme_eigenvalues(values: &nalgebra::DVector<f64>) -> (f64, f64) {
    values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
        (lo.min(v), hi.max(v))
    })
}

/// Symmetric `n×n` matrix, stored symmetrized.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    /// Symmetrizes `(M + Mᵀ)/2` and stores the result.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        check_square(&m)?;
        Ok(Self(symmetrize(&m)))
    }

    pub fn zeros(n: usize) -> Self {
        Self(DMatrix::zeros(n, n))
    }

    pub fn identity(n: usize) -> Self {
        Self(DMatrix::identity(n, n))
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        Self(DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(diag)))
    }

    /// Builds from a row-major `n×n` slice.
    pub fn from_row_slice(n: usize, values: &[f64]) -> Result<Self> {
        if values.len() != n * n {
            return Err(Error::DimensionMismatch {
                expected: n * n,
                found: values.len(),
            });
        }
        Self::new(DMatrix::from_row_slice(n, n, values))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.0.norm()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }
}

/// Symmetric positive definite matrix.
///
/// Construction rejects matrices whose smallest eigenvalue does not exceed
/// [`EIGEN_FLOOR`] times the largest one.
#[derive(Debug, Clone, PartialEq)]
pub struct SpdMatrix(DMatrix<f64>);

impl SpdMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        check_square(&m)?;
        let sym = symmetrize(&m);
        let (lo, hi) = extreme_eigenvalues(&eigen(&sym).eigenvalues);
        if hi <= 0.0 || lo <= EIGEN_FLOOR * hi {
            return Err(Error::NotPositiveDefinite {
                min_eigenvalue: lo,
                max_eigenvalue: hi,
            });
        }
        Ok(Self(sym))
    }

    /// Like [`SpdMatrix::new`], but eigenvalues at or below the floor are raised
    /// to `EIGEN_FLOOR * λ_max` instead of rejected. The flag reports whether any
    /// clipping happened.
    pub fn clipped(m: DMatrix<f64>) -> Result<(Self, bool)> {
        check_square(&m)?;
        let sym = symmetrize(&m);
        let eig = eigen(&sym);
        let (lo, hi) = extreme_eigenvalues(&eig.eigenvalues);
        if hi <= 0.0 {
            return Err(Error::NotPositiveDefinite {
                min_eigenvalue: lo,
                max_eigenvalue: hi,
            });
        }
        let floor = EIGEN_FLOOR * hi;
        if lo > floor {
            return Ok((Self(sym), false));
        }
        // Clip slightly above the floor so the result passes `new` again.
        let target = 2.0 * floor;
        Ok((Self(reconstruct(&eig, |l| l.max(target))), true))
    }

    pub fn identity(n: usize) -> Self {
        Self(DMatrix::identity(n, n))
    }

    /// Diagonal SPD matrix; every entry must be positive.
    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(diag)))
    }

    pub fn from_row_slice(n: usize, values: &[f64]) -> Result<Self> {
        if values.len() != n * n {
            return Err(Error::DimensionMismatch {
                expected: n * n,
                found: values.len(),
            });
        }
        Self::new(DMatrix::from_row_slice(n, n, values))
    }

    /// Wraps a matrix that is SPD by construction (congruence of an SPD
    /// matrix, exponential of a symmetric matrix). Only symmetrizes.
    pub(crate) fn from_trusted(m: DMatrix<f64>) -> Self {
        Self(symmetrize(&m))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn to_sym(&self) -> SymMatrix {
        SymMatrix(self.0.clone())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    /// `G · self · Gᵀ` for a square `G` of matching size.
    ///
    /// Formed as `(GL)(GL)ᵀ` from the Cholesky factor `L`, which keeps the
    /// small eigenvalues accurate to about `ε·sqrt(κ)` instead of `ε·κ`.
    pub fn congruence(&self, g: &DMatrix<f64>) -> Result<SpdMatrix> {
        if g.nrows() != self.dim() || g.ncols() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: g.nrows(),
            });
        }
        let product = match self.0.clone().cholesky() {
            Some(c) => {
                let gl = g * c.l();
                &gl * gl.transpose()
            }
            None => g * &self.0 * g.transpose(),
        };
        SpdMatrix::new(symmetrize(&product))
    }
}

/// Element of the tangent space at the identity, with its orthonormal
/// coordinates cached.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector {
    matrix: SymMatrix,
    vec: Vec<f64>,
}

impl TangentVector {
    pub fn from_matrix(matrix: SymMatrix) -> Self {
        let vec = vec_embed(&matrix);
        Self { matrix, vec }
    }

    pub fn from_vec(vec: Vec<f64>, n: usize) -> Result<Self> {
        let matrix = vec_unembed(&vec, n)?;
        Ok(Self { matrix, vec })
    }

    pub fn zeros(n: usize) -> Self {
        Self::from_matrix(SymMatrix::zeros(n))
    }

    pub fn matrix(&self) -> &SymMatrix {
        &self.matrix
    }

    /// Coordinates in canonical order: `√2·w_ij` for `j < i` (row-major over
    /// the strict lower triangle), then the diagonal.
    pub fn coords(&self) -> &[f64] {
        &self.vec
    }

    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }

    pub fn norm(&self) -> f64 {
        self.vec.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn norm_squared(&self) -> f64 {
        self.vec.iter().map(|v| v * v).sum()
    }
}

/// Number of coordinates of a symmetric `n×n` matrix.
pub fn tangent_dim(n: usize) -> usize {
    n * (n + 1) / 2
}

/// Number of off-diagonal pairs `(i, j)`, `j < i`.
pub fn pair_count(n: usize) -> usize {
    n * n.saturating_sub(1) / 2
}

/// Off-diagonal pairs in canonical order. Pair `k` corresponds to coordinate
/// `k` of [`vec_embed`].
pub fn pairs(n: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..n).flat_map(|i| (0..i).map(move |j| (i, j)))
}

/// Principal logarithm of an SPD matrix.
pub fn spd_logm(a: &SpdMatrix) -> Result<SymMatrix> {
    check_square(a.as_matrix())?;
    log_positive(a.as_matrix())
}

fn log_positive(m: &DMatrix<f64>) -> Result<SymMatrix> {
    let eig = eigen(m);
    let (lo, hi) = extreme_eigenvalues(&eig.eigenvalues);
    if lo <= 0.0 {
        return Err(Error::NotPositiveDefinite {
            min_eigenvalue: lo,
            max_eigenvalue: hi,
        });
    }
    Ok(SymMatrix(reconstruct(&eig, f64::ln)))
}

/// Matrix exponential of a symmetric matrix.
pub fn spd_expm(w: &SymMatrix) -> Result<SpdMatrix> {
    check_square(w.as_matrix())?;
    let eig = eigen(w.as_matrix());
    let (_, hi) = extreme_eigenvalues(&eig.eigenvalues);
    if hi > EXP_MAX_ARG {
        return Err(Error::NumericRange(format!(
            "eigenvalue {hi} overflows the exponential"
        )));
    }
    Ok(SpdMatrix(reconstruct(&eig, f64::exp)))
}

/// Square root and inverse square root, from a single eigendecomposition.
pub fn spd_sqrtm(a: &SpdMatrix) -> Result<(SpdMatrix, SpdMatrix)> {
    let eig = eigen(a.as_matrix());
    let (lo, hi) = extreme_eigenvalues(&eig.eigenvalues);
    let floor = EIGEN_FLOOR * hi;
    if hi <= 0.0 || lo <= floor {
        return Err(Error::NearSingular {
            min_eigenvalue: lo,
            floor,
        });
    }
    let root = reconstruct(&eig, f64::sqrt);
    let inv_root = reconstruct(&eig, |l| 1.0 / l.sqrt());
    Ok((SpdMatrix(root), SpdMatrix(inv_root)))
}

fn check_same_dim(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::DimensionMismatch { expected: a, found: b });
    }
    Ok(())
}

/// `log(A^{-1/2} B A^{-1/2})`.
pub fn tangent_map(base: &SpdMatrix, target: &SpdMatrix) -> Result<TangentVector> {
    check_same_dim(base.dim(), target.dim())?;
    let (_, inv_root) = spd_sqrtm(base)?;
    whitened_log(&inv_root, target)
}

/// Tangent map with a precomputed `A^{-1/2}`.
pub(crate) fn whitened_log(inv_root: &SpdMatrix, target: &SpdMatrix) -> Result<TangentVector> {
    check_same_dim(inv_root.dim(), target.dim())?;
    let w = inv_root.as_matrix() * target.as_matrix() * inv_root.as_matrix();
    let log = log_positive(&symmetrize(&w))?;
    Ok(TangentVector::from_matrix(log))
}

/// `A^{1/2} exp(W) A^{1/2}`.
pub fn tangent_inverse_map(base: &SpdMatrix, w: &TangentVector) -> Result<SpdMatrix> {
    check_same_dim(base.dim(), w.dim())?;
    let (root, _) = spd_sqrtm(base)?;
    let e = spd_expm(w.matrix())?;
    Ok(SpdMatrix::from_trusted(
        root.as_matrix() * e.as_matrix() * root.as_matrix(),
    ))
}

/// Orthonormal coordinates of a symmetric matrix; see [`TangentVector::coords`].
pub fn vec_embed(w: &SymMatrix) -> Vec<f64> {
    let n = w.dim();
    let m = w.as_matrix();
    let mut out = Vec::with_capacity(tangent_dim(n));
    out.extend(pairs(n).map(|(i, j)| SQRT_2 * m[(i, j)]));
    out.extend((0..n).map(|i| m[(i, i)]));
    out
}

/// Inverse of [`vec_embed`].
pub fn vec_unembed(v: &[f64], n: usize) -> Result<SymMatrix> {
    let expected = tangent_dim(n);
    if v.len() != expected {
        return Err(Error::DimensionMismatch {
            expected,
            found: v.len(),
        });
    }
    let mut m = DMatrix::zeros(n, n);
    for (k, (i, j)) in pairs(n).enumerate() {
        let x = v[k] / SQRT_2;
        m[(i, j)] = x;
        m[(j, i)] = x;
    }
    let off = pair_count(n);
    for i in 0..n {
        m[(i, i)] = v[off + i];
    }
    Ok(SymMatrix(m))
}

/// Affine-invariant distance `‖log(A^{-1/2} B A^{-1/2})‖_F`.
///
/// The eigenvalues of `A^{-1/2} B A^{-1/2}` are the squared singular values
/// of `L_A^{-1} L_B` for Cholesky factors `L_A`, `L_B`; working on the factors
/// halves the exponent of the condition number in the rounding error.
pub fn geodesic_distance(a: &SpdMatrix, b: &SpdMatrix) -> Result<f64> {
    check_same_dim(a.dim(), b.dim())?;
    let factors = a.0.clone().cholesky().zip(b.0.clone().cholesky());
    let Some((la, lb)) = factors else {
        return Ok(tangent_map(a, b)?.matrix().frobenius_norm());
    };
    let m = la
        .l()
        .solve_lower_triangular(&lb.l())
        .ok_or_else(|| Error::NumericRange("singular Cholesky factor".into()))?;
    let sum: f64 = m.singular_values().iter().map(|s| s.ln().powi(2)).sum();
    Ok(2.0 * sum.sqrt())
}
