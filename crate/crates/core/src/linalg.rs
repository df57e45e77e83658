//! Dense symmetric kernels: Cholesky factorization, log-determinants, Mahalanobis
//! distances and the random matrix constructors used by the scenario generator.
//!
//! Every inverse quadratic form goes through a triangular solve against the cached
//! Cholesky factor of an [`SpdMatrix`]; nothing here forms an explicit inverse.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

use crate::error::{FemdaError, Result};

/// A point in feature space.
pub type Observation = DVector<f64>;

/// Relative ridge added on a failed factorization (scaled by `trace / m`).
pub const RIDGE_DELTA: f64 = 1e-8;

const SYMMETRY_TOL: f64 = 1e-12;

/// Symmetric positive-definite matrix together with its lower Cholesky factor.
#[derive(Debug, Clone, PartialEq)]
pub struct SpdMatrix {
    entries: DMatrix<f64>,
    factor: DMatrix<f64>,
}

impl SpdMatrix {
    /// Validates symmetry (1e-12 relative), symmetrizes exactly and factorizes.
    pub fn new(entries: DMatrix<f64>) -> Result<Self> {
        check_square(&entries)?;
        let asym = relative_asymmetry(&entries);
        if asym > SYMMETRY_TOL {
            return Err(FemdaError::NotSymmetric(asym));
        }
        let entries = symmetrize(&entries);
        let factor = cholesky(&entries)?;
        Ok(Self { entries, factor })
    }

    /// Symmetrizes `(M + Mᵀ)/2` and factorizes, adding a ridge
    /// `RIDGE_DELTA · (trace/m) · I` and retrying once if the first attempt fails.
    pub fn regularized(entries: &DMatrix<f64>) -> Result<Self> {
        check_square(entries)?;
        let sym = symmetrize(entries);
        if let Ok(factor) = cholesky(&sym) {
            return Ok(Self {
                entries: sym,
                factor,
            });
        }
        let m = sym.nrows();
        let mut scale = sym.trace() / m as f64;
        if !(scale.is_finite() && scale > 0.0) {
            scale = 1.0;
        }
        let ridged = &sym + DMatrix::identity(m, m) * (RIDGE_DELTA * scale);
        match cholesky(&ridged) {
            Ok(factor) => Ok(Self {
                entries: ridged,
                factor,
            }),
            Err(e) => Err(FemdaError::NumericalBreakdown(format!(
                "factorization failed after ridge retry: {e}"
            ))),
        }
    }

    pub fn identity(m: usize) -> Self {
        Self {
            entries: DMatrix::identity(m, m),
            factor: DMatrix::identity(m, m),
        }
    }

    pub fn from_row_slice(m: usize, data: &[f64]) -> Result<Self> {
        if data.len() != m * m {
            return Err(FemdaError::DimensionMismatch {
                expected: m * m,
                found: data.len(),
            });
        }
        Self::new(DMatrix::from_row_slice(m, m, data))
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.entries
    }

    /// Lower-triangular `L` with `L·Lᵀ` equal to the matrix.
    pub fn factor(&self) -> &DMatrix<f64> {
        &self.factor
    }

    pub fn trace(&self) -> f64 {
        self.entries.trace()
    }

    pub fn log_det(&self) -> f64 {
        self.factor.diagonal().iter().map(|d| 2.0 * d.ln()).sum()
    }

    /// `c · Σ` for `c > 0`; the factor is rescaled by `√c` rather than recomputed.
    pub fn scaled(&self, c: f64) -> Self {
        debug_assert!(c > 0.0);
        Self {
            entries: &self.entries * c,
            factor: &self.factor * c.sqrt(),
        }
    }

    /// Representative of the ray `{λΣ}` with unit determinant.
    pub fn unit_determinant(&self) -> Self {
        let m = self.dim() as f64;
        self.scaled((-self.log_det() / m).exp())
    }

    /// `(x − mean)ᵀ Σ⁻¹ (x − mean)` by forward substitution.
    pub fn mahalanobis_sq(&self, x: &Observation, mean: &Observation) -> Result<f64> {
        let m = self.dim();
        for v in [x, mean] {
            if v.len() != m {
                return Err(FemdaError::DimensionMismatch {
                    expected: m,
                    found: v.len(),
                });
            }
        }
        Ok(self.quad_form_unchecked(x.iter().zip(mean.iter()).map(|(a, b)| a - b)))
    }

    /// Squared norm of `L⁻¹ d` for a displacement given as an iterator.
    pub(crate) fn quad_form_unchecked(&self, diff: impl Iterator<Item = f64>) -> f64 {
        let l = &self.factor;
        let m = l.nrows();
        let mut y = [0.0f64; 64];
        let mut heap;
        let y: &mut [f64] = if m <= 64 {
            &mut y[..m]
        } else {
            heap = vec![0.0; m];
            &mut heap
        };
        for (slot, d) in y.iter_mut().zip(diff) {
            *slot = d;
        }
        let mut acc = 0.0;
        for i in 0..m {
            let mut s = y[i];
            for j in 0..i {
                s -= l[(i, j)] * y[j];
            }
            let v = s / l[(i, i)];
            y[i] = v;
            acc += v * v;
        }
        acc
    }

    /// `Σ^{1/2} v` with the Cholesky factor as the square root.
    pub fn apply_sqrt(&self, v: &Observation) -> Observation {
        &self.factor * v
    }
}

/// Cholesky-Banachiewicz factorization of a symmetric matrix.
pub fn cholesky(s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_square(s)?;
    let m = s.nrows();
    let mut l = DMatrix::<f64>::zeros(m, m);
    for i in 0..m {
        for j in 0..=i {
            let mut sum = s[(i, j)];
            for k in 0..j {
                sum -= l[(i, k)] * l[(j, k)];
            }
            if i == j {
                if !sum.is_finite() || sum <= 0.0 {
                    return Err(FemdaError::NotPositiveDefinite {
                        pivot: i,
                        value: sum,
                    });
                }
                l[(i, i)] = sum.sqrt();
            } else {
                l[(i, j)] = sum / l[(j, j)];
            }
        }
    }
    Ok(l)
}

pub fn log_det(s: &SpdMatrix) -> f64 {
    s.log_det()
}

pub fn mahalanobis_sq(x: &Observation, mean: &Observation, s: &SpdMatrix) -> Result<f64> {
    s.mahalanobis_sq(x, mean)
}

pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

fn relative_asymmetry(a: &DMatrix<f64>) -> f64 {
    let scale = a.amax();
    if scale == 0.0 {
        return 0.0;
    }
    (a - a.transpose()).amax() / scale
}

fn check_square(a: &DMatrix<f64>) -> Result<()> {
    if a.nrows() != a.ncols() {
        return Err(FemdaError::DimensionMismatch {
            expected: a.nrows(),
            found: a.ncols(),
        });
    }
    if a.nrows() == 0 {
        return Err(FemdaError::DimensionMismatch {
            expected: 1,
            found: 0,
        });
    }
    Ok(())
}

/// Uniform draw on the unit sphere of `R^m` (normalized Gaussian vector).
pub fn sample_unit_sphere<R: Rng + ?Sized>(m: usize, rng: &mut R) -> Observation {
    assert!(m >= 1, "dimension must be positive");
    loop {
        let v = DVector::<f64>::from_fn(m, |_, _| StandardNormal.sample(rng));
        let norm = v.norm();
        if norm > 1e-300 {
            return v / norm;
        }
    }
}

/// Haar-distributed orthogonal matrix: QR of a Gaussian matrix with the signs of
/// `diag(R)` folded into `Q`.
pub fn random_orthogonal<R: Rng + ?Sized>(m: usize, rng: &mut R) -> DMatrix<f64> {
    assert!(m >= 1, "dimension must be positive");
    let g = DMatrix::from_fn(m, m, |_, _| StandardNormal.sample(rng));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..m {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// `Q · diag(λ) · Qᵀ` with `λᵢ ~ U[lo, hi]` and Haar `Q`.
pub fn random_spd<R: Rng + ?Sized>(m: usize, eig_range: (f64, f64), rng: &mut R) -> Result<SpdMatrix> {
    let (lo, hi) = eig_range;
    if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
        return Err(FemdaError::InvalidRange { lo, hi });
    }
    let q = random_orthogonal(m, rng);
    let eig: Vec<f64> = if lo == hi {
        vec![lo; m]
    } else {
        let u = Uniform::new_inclusive(lo, hi).map_err(|_| FemdaError::InvalidRange { lo, hi })?;
        (0..m).map(|_| u.sample(rng)).collect()
    };
    let d = DMatrix::from_diagonal(&DVector::from_vec(eig));
    SpdMatrix::regularized(&(&q * d * q.transpose()))
}
