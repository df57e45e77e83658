//! Per-class parameter estimation.
//!
//! * [`estimate_gaussian`]: sample mean and 1/n covariance.
//! * [`femda_fixed_point`]: the coupled mean/dispersion fixed point with weights `1/t`,
//!   pinned to the unit-determinant gauge after every dispersion update.
//! * [`student_em`]: EM for the multivariate t with a per-class degrees-of-freedom update.
//! * [`robust_plugin`]: the Student M-estimator with ν fixed at 3, used by RGQDA.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, ln_gamma};

use crate::error::{FemdaError, Result};
use crate::linalg::{Observation, SpdMatrix};

pub const DEFAULT_TOL: f64 = 1e-6;
pub const FEMDA_MAX_ITER: usize = 200;
pub const STUDENT_MAX_ITER: usize = 500;
pub const NU_BOUNDS: (f64, f64) = (0.1, 1e6);
/// Degrees of freedom of the robust plug-in M-estimator.
pub const ROBUST_PLUGIN_NU: f64 = 3.0;
const STUDENT_INIT_NU: f64 = 5.0;
const T_CLAMP: f64 = 1e-12;

/// Location and dispersion of one class.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterParams {
    pub mean: Observation,
    pub dispersion: SpdMatrix,
}

impl ClusterParams {
    pub fn new(mean: Observation, dispersion: SpdMatrix) -> Result<Self> {
        if mean.len() != dispersion.dim() {
            return Err(FemdaError::DimensionMismatch {
                expected: dispersion.dim(),
                found: mean.len(),
            });
        }
        Ok(Self { mean, dispersion })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Squared Mahalanobis distance of `x` to this cluster.
    pub fn distance_sq(&self, x: &Observation) -> Result<f64> {
        self.dispersion.mahalanobis_sq(x, &self.mean)
    }
}

/// Outcome of an iterative estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixedPointDiagnostics {
    pub iterations: usize,
    /// Largest relative parameter change over the last iteration.
    pub final_delta: f64,
    pub converged: bool,
}

/// Multivariate t parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct StudentParams {
    pub mean: Observation,
    pub scatter: SpdMatrix,
    pub nu: f64,
}

impl StudentParams {
    pub fn cluster(&self) -> ClusterParams {
        ClusterParams {
            mean: self.mean.clone(),
            dispersion: self.scatter.clone(),
        }
    }
}

/// Options of the Student EM.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StudentEmOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Holds ν at this value instead of re-estimating it.
    pub fixed_nu: Option<f64>,
}

impl Default for StudentEmOptions {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            max_iter: STUDENT_MAX_ITER,
            fixed_nu: None,
        }
    }
}

/// Result of [`fit_student`], including the observed log-likelihood after every iteration
/// (entry 0 is the initial point).
#[derive(Debug, Clone)]
pub struct StudentFit {
    pub params: StudentParams,
    pub diagnostics: FixedPointDiagnostics,
    pub log_likelihood: Vec<f64>,
}

fn check_points(points: &[Observation], needed: usize) -> Result<usize> {
    if points.len() < needed {
        return Err(FemdaError::TooFewPoints {
            needed,
            found: points.len(),
        });
    }
    let m = points[0].len();
    if let Some(p) = points.iter().find(|p| p.len() != m) {
        return Err(FemdaError::DimensionMismatch {
            expected: m,
            found: p.len(),
        });
    }
    Ok(m)
}

/// Sample mean and covariance with 1/n normalization.
pub fn sample_moments(points: &[Observation]) -> (Observation, DMatrix<f64>) {
    let m = points[0].len();
    let n = points.len() as f64;
    let mut mean = DVector::zeros(m);
    for x in points {
        mean += x;
    }
    mean /= n;
    let cov = weighted_scatter(points, &mean, |_| 1.0) / n;
    (mean, cov)
}

/// `Σᵢ wᵢ (xᵢ − c)(xᵢ − c)ᵀ`, accumulated on the lower triangle and mirrored.
fn weighted_scatter(points: &[Observation], center: &Observation, weight: impl Fn(usize) -> f64) -> DMatrix<f64> {
    let m = center.len();
    let mut acc = DMatrix::<f64>::zeros(m, m);
    let mut d = vec![0.0; m];
    for (i, x) in points.iter().enumerate() {
        let w = weight(i);
        for (dj, (a, b)) in d.iter_mut().zip(x.iter().zip(center.iter())) {
            *dj = a - b;
        }
        for r in 0..m {
            let wr = w * d[r];
            for c in 0..=r {
                acc[(r, c)] += wr * d[c];
            }
        }
    }
    for r in 0..m {
        for c in 0..r {
            acc[(c, r)] = acc[(r, c)];
        }
    }
    acc
}

fn weighted_mean(points: &[Observation], weights: &[f64]) -> Observation {
    let m = points[0].len();
    let mut acc = DVector::zeros(m);
    let mut total = 0.0;
    for (x, &w) in points.iter().zip(weights) {
        acc.axpy(w, x, 1.0);
        total += w;
    }
    acc / total
}

/// Coordinatewise median (mean of the two middle values for even n).
pub fn coordinatewise_median(points: &[Observation]) -> Observation {
    let m = points[0].len();
    let n = points.len();
    let mut column = vec![0.0; n];
    DVector::from_fn(m, |j, _| {
        for (c, x) in column.iter_mut().zip(points) {
            *c = x[j];
        }
        column.sort_by(f64::total_cmp);
        if n % 2 == 1 {
            column[n / 2]
        } else {
            0.5 * (column[n / 2 - 1] + column[n / 2])
        }
    })
}

/// Classical Gaussian estimate: sample mean and 1/n covariance (ridge on failure).
pub fn estimate_gaussian(points: &[Observation]) -> Result<ClusterParams> {
    check_points(points, 2)?;
    let (mean, cov) = sample_moments(points);
    let dispersion = SpdMatrix::regularized(&cov)?;
    Ok(ClusterParams { mean, dispersion })
}

/// Lower clamp applied to squared distances before inversion or logarithm.
pub fn distance_floor(dispersion: &SpdMatrix) -> f64 {
    T_CLAMP * dispersion.trace() / dispersion.dim() as f64
}

fn clamped_distances(points: &[Observation], params: &ClusterParams) -> Vec<f64> {
    let floor = distance_floor(&params.dispersion);
    points
        .iter()
        .map(|x| {
            let t = params
                .dispersion
                .quad_form_unchecked(x.iter().zip(params.mean.iter()).map(|(a, b)| a - b));
            t.max(floor)
        })
        .collect()
}

/// FEMDA weights `1/t` at the given parameters.
pub fn femda_weights(points: &[Observation], params: &ClusterParams) -> Vec<f64> {
    clamped_distances(points, params).into_iter().map(|t| 1.0 / t).collect()
}

/// Weighted mean with weights `1/t` evaluated at `params`.
pub fn femda_mean_update(points: &[Observation], params: &ClusterParams) -> Observation {
    weighted_mean(points, &femda_weights(points, params))
}

/// `(m/n) Σ (1/tᵢ)(xᵢ − μ)(xᵢ − μ)ᵀ` with `tᵢ` and `μ` taken from `params`, before any
/// normalization. Homogeneous of degree one in the dispersion.
pub fn femda_scatter_update(points: &[Observation], params: &ClusterParams) -> DMatrix<f64> {
    let w = femda_weights(points, params);
    let m = params.dim() as f64;
    weighted_scatter(points, &params.mean, |i| w[i]) * (m / points.len() as f64)
}

/// Coordinatewise median and unit-determinant (ridge-regularized) sample covariance.
pub fn femda_initial(points: &[Observation]) -> Result<ClusterParams> {
    check_points(points, 2)?;
    let (_, cov) = sample_moments(points);
    Ok(ClusterParams {
        mean: coordinatewise_median(points),
        dispersion: SpdMatrix::regularized(&cov)?.unit_determinant(),
    })
}

fn data_scale(points: &[Observation]) -> f64 {
    let (_, cov) = sample_moments(points);
    let s = (cov.trace() / cov.nrows() as f64).sqrt();
    if s.is_finite() && s > 0.0 {
        s
    } else {
        1.0
    }
}

fn relative_change(old: &DMatrix<f64>, new: &DMatrix<f64>) -> f64 {
    (new - old).norm() / old.norm().max(f64::MIN_POSITIVE)
}

fn mean_change(old: &Observation, new: &Observation, scale: f64) -> f64 {
    (new - old).norm() / new.norm().max(scale)
}

/// Coupled fixed point for the mean and dispersion of one class.
///
/// Each iteration computes `wᵢ = 1/tᵢ` at the current estimate, updates the mean as the
/// weighted average, then the dispersion as `(m/n) Σ wᵢ (xᵢ − μ')(xᵢ − μ')ᵀ`, which is
/// re-symmetrized and rescaled to unit determinant. Non-convergence is reported through
/// the diagnostics, not as an error.
pub fn femda_fixed_point(
    points: &[Observation],
    init: &ClusterParams,
    tol: f64,
    max_iter: usize,
) -> Result<(ClusterParams, FixedPointDiagnostics)> {
    let m = check_points(points, 2)?;
    if points.len() < m + 1 {
        return Err(FemdaError::TooFewPoints {
            needed: m + 1,
            found: points.len(),
        });
    }
    if init.dim() != m {
        return Err(FemdaError::DimensionMismatch {
            expected: m,
            found: init.dim(),
        });
    }
    let scale = data_scale(points);
    let mut current = ClusterParams {
        mean: init.mean.clone(),
        dispersion: init.dispersion.unit_determinant(),
    };
    let mut diagnostics = FixedPointDiagnostics {
        iterations: 0,
        final_delta: f64::INFINITY,
        converged: false,
    };
    let factor = m as f64 / points.len() as f64;
    for iter in 1..=max_iter {
        let w = femda_weights(points, &current);
        let mean = weighted_mean(points, &w);
        let scatter = weighted_scatter(points, &mean, |i| w[i]) * factor;
        let dispersion = SpdMatrix::regularized(&scatter)?.unit_determinant();
        let delta = mean_change(&current.mean, &mean, scale)
            .max(relative_change(current.dispersion.matrix(), dispersion.matrix()));
        if !delta.is_finite() {
            return Err(FemdaError::NumericalBreakdown(
                "non-finite FEMDA update".into(),
            ));
        }
        current = ClusterParams { mean, dispersion };
        diagnostics = FixedPointDiagnostics {
            iterations: iter,
            final_delta: delta,
            converged: delta < tol,
        };
        if diagnostics.converged {
            break;
        }
    }
    Ok((current, diagnostics))
}

/// Convenience wrapper: default initialization, tolerance and iteration cap.
pub fn femda_estimate(points: &[Observation]) -> Result<(ClusterParams, FixedPointDiagnostics)> {
    let init = femda_initial(points)?;
    femda_fixed_point(points, &init, DEFAULT_TOL, FEMDA_MAX_ITER)
}

/// Observed log-likelihood of the multivariate t.
pub fn student_log_likelihood(points: &[Observation], params: &StudentParams) -> f64 {
    let m = params.mean.len() as f64;
    let nu = params.nu;
    let constant = ln_gamma((nu + m) / 2.0)
        - ln_gamma(nu / 2.0)
        - 0.5 * m * (nu * std::f64::consts::PI).ln()
        - 0.5 * params.scatter.log_det();
    let cluster = params.cluster();
    clamped_distances(points, &cluster)
        .into_iter()
        .map(|t| constant - 0.5 * (nu + m) * (t / nu).ln_1p())
        .sum()
}

/// ν-dependent part of the EM surrogate, per point: `(ν/2)ln(ν/2) − lnΓ(ν/2) + (ν/2)·c`.
fn nu_objective(nu: f64, c: f64) -> f64 {
    0.5 * nu * (0.5 * nu).ln() - ln_gamma(0.5 * nu) + 0.5 * nu * c
}

/// Root of `ln(ν/2) − ψ(ν/2) + 1 + c = 0` by bisection on `log ν` over [`NU_BOUNDS`].
fn solve_nu(c: f64) -> f64 {
    let h = |nu: f64| (0.5 * nu).ln() - digamma(0.5 * nu) + 1.0 + c;
    let (lo, hi) = NU_BOUNDS;
    if h(hi) >= 0.0 {
        return hi;
    }
    if h(lo) <= 0.0 {
        return lo;
    }
    let (mut a, mut b) = (lo.ln(), hi.ln());
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if h(mid.exp()) > 0.0 {
            a = mid;
        } else {
            b = mid;
        }
        if b - a < 1e-14 {
            break;
        }
    }
    (0.5 * (a + b)).exp()
}

/// EM (with optionally fixed ν) for the multivariate t distribution.
pub fn fit_student(points: &[Observation], options: StudentEmOptions) -> Result<StudentFit> {
    let m = check_points(points, 2)?;
    if points.len() < m + 2 {
        return Err(FemdaError::TooFewPoints {
            needed: m + 2,
            found: points.len(),
        });
    }
    if let Some(nu) = options.fixed_nu {
        if !(nu > 0.0 && nu.is_finite()) {
            return Err(FemdaError::InvalidShape(nu));
        }
    }
    let n = points.len() as f64;
    let md = m as f64;
    let scale = data_scale(points);
    let (mean, cov) = sample_moments(points);
    let mut params = StudentParams {
        mean,
        scatter: SpdMatrix::regularized(&cov)?,
        nu: options.fixed_nu.unwrap_or(STUDENT_INIT_NU),
    };
    let mut trace = vec![student_log_likelihood(points, &params)];
    let mut diagnostics = FixedPointDiagnostics {
        iterations: 0,
        final_delta: f64::INFINITY,
        converged: false,
    };
    for iter in 1..=options.max_iter {
        // E-step
        let nu = params.nu;
        let t = clamped_distances(points, &params.cluster());
        let u: Vec<f64> = t.iter().map(|&ti| (nu + md) / (nu + ti)).collect();
        // M-step
        let mean = weighted_mean(points, &u);
        let scatter = SpdMatrix::regularized(&(weighted_scatter(points, &mean, |i| u[i]) / n))?;
        let new_nu = match options.fixed_nu {
            Some(fixed) => fixed,
            None => {
                let psi = digamma(0.5 * (nu + md));
                let c = t
                    .iter()
                    .zip(&u)
                    .map(|(&ti, &ui)| psi - (0.5 * (nu + ti)).ln() - ui)
                    .sum::<f64>()
                    / n;
                let candidate = solve_nu(c);
                if nu_objective(candidate, c) >= nu_objective(nu, c) {
                    candidate
                } else {
                    nu
                }
            }
        };
        let delta = mean_change(&params.mean, &mean, scale)
            .max(relative_change(params.scatter.matrix(), scatter.matrix()))
            .max((new_nu - nu).abs() / nu);
        if !delta.is_finite() {
            return Err(FemdaError::NumericalBreakdown("non-finite EM update".into()));
        }
        params = StudentParams {
            mean,
            scatter,
            nu: new_nu,
        };
        trace.push(student_log_likelihood(points, &params));
        diagnostics = FixedPointDiagnostics {
            iterations: iter,
            final_delta: delta,
            converged: delta < options.tol,
        };
        if diagnostics.converged {
            break;
        }
    }
    Ok(StudentFit {
        params,
        diagnostics,
        log_likelihood: trace,
    })
}

/// Multivariate t EM with ν re-estimated every iteration.
pub fn student_em(points: &[Observation], tol: f64, max_iter: usize) -> Result<(StudentParams, FixedPointDiagnostics)> {
    let fit = fit_student(
        points,
        StudentEmOptions {
            tol,
            max_iter,
            fixed_nu: None,
        },
    )?;
    Ok((fit.params, fit.diagnostics))
}

/// Student M-estimator with ν = 3, scatter rescaled to unit determinant.
pub fn robust_plugin(points: &[Observation], tol: f64, max_iter: usize) -> Result<(ClusterParams, FixedPointDiagnostics)> {
    let fit = fit_student(
        points,
        StudentEmOptions {
            tol,
            max_iter,
            fixed_nu: Some(ROBUST_PLUGIN_NU),
        },
    )?;
    Ok((
        ClusterParams {
            mean: fit.params.mean,
            dispersion: fit.params.scatter.unit_determinant(),
        },
        fit.diagnostics,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::random_spd;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn pts(rows: &[&[f64]]) -> Vec<Observation> {
        rows.iter().map(|r| DVector::from_row_slice(r)).collect()
    }

    fn gaussian_cloud(n: usize, mean: &Observation, cov: &SpdMatrix, seed: u64) -> Vec<Observation> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let z = DVector::from_fn(mean.len(), |_, _| StandardNormal.sample(&mut rng));
                mean + cov.apply_sqrt(&z)
            })
            .collect()
    }

    #[test]
    fn gaussian_moments_by_hand() {
        let p = estimate_gaussian(&pts(&[&[0.0, 0.0], &[2.0, 0.0], &[0.0, 2.0], &[2.0, 2.0]])).unwrap();
        assert_eq!(p.mean, DVector::from_vec(vec![1.0, 1.0]));
        assert_eq!(p.dispersion.matrix(), &DMatrix::identity(2, 2));
    }

    #[test]
    fn gaussian_degenerate_input_gets_ridge() {
        let p = estimate_gaussian(&pts(&[&[3.0, 1.0], &[3.0, 1.0], &[3.0, 1.0]])).unwrap();
        assert_eq!(p.mean, DVector::from_vec(vec![3.0, 1.0]));
        assert_relative_eq!(p.dispersion.matrix(), &(DMatrix::identity(2, 2) * crate::linalg::RIDGE_DELTA));
    }

    #[test]
    fn gaussian_too_few_points() {
        assert!(matches!(
            estimate_gaussian(&pts(&[&[1.0]])),
            Err(FemdaError::TooFewPoints { needed: 2, found: 1 })
        ));
    }

    #[test]
    fn gaussian_affine_equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cov = random_spd(3, (1.0, 4.0), &mut rng).unwrap();
        let x = gaussian_cloud(50, &DVector::zeros(3), &cov, 2);
        let a = DMatrix::from_row_slice(3, 3, &[2.0, 0.5, 0.0, 0.0, 1.0, -1.0, 0.3, 0.0, 3.0]);
        let b = DVector::from_vec(vec![1.0, -2.0, 4.0]);
        let y: Vec<_> = x.iter().map(|p| &a * p + &b).collect();
        let px = estimate_gaussian(&x).unwrap();
        let py = estimate_gaussian(&y).unwrap();
        assert_relative_eq!(py.mean, &a * &px.mean + &b, epsilon = 1e-12);
        assert_relative_eq!(
            py.dispersion.matrix(),
            &(&a * px.dispersion.matrix() * a.transpose()),
            epsilon = 1e-11
        );
    }

    #[test]
    fn femda_scatter_update_is_radius_free() {
        for r in [0.1, 1.0, 7.5] {
            let x = pts(&[&[r, 0.0], &[-r, 0.0], &[0.0, r], &[0.0, -r]]);
            let params = ClusterParams::new(DVector::zeros(2), SpdMatrix::identity(2)).unwrap();
            let s = femda_scatter_update(&x, &params);
            assert_relative_eq!(s, DMatrix::identity(2, 2), epsilon = 1e-15);
        }
    }

    #[test]
    fn femda_updates_scale_properly() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cov = random_spd(4, (1.0, 5.0), &mut rng).unwrap();
        let x = gaussian_cloud(60, &DVector::from_element(4, 1.0), &cov, 4);
        let base = ClusterParams::new(DVector::from_element(4, 0.5), random_spd(4, (0.5, 2.0), &mut rng).unwrap()).unwrap();
        let f0 = femda_scatter_update(&x, &base);
        let mu0 = femda_mean_update(&x, &base);
        for lambda in [0.1, 1.0, 17.0] {
            let scaled = ClusterParams::new(base.mean.clone(), base.dispersion.scaled(lambda)).unwrap();
            let f = femda_scatter_update(&x, &scaled);
            assert!((f - &f0 * lambda).norm() <= 1e-10 * (&f0 * lambda).norm());
            let mu = femda_mean_update(&x, &scaled);
            assert!((mu - &mu0).norm() <= 1e-12 * mu0.norm());
        }
    }

    #[test]
    fn femda_converges_with_unit_determinant() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cov = random_spd(3, (1.0, 6.0), &mut rng).unwrap();
        let x = gaussian_cloud(300, &DVector::from_vec(vec![1.0, 2.0, 3.0]), &cov, 6);
        let (p, d) = femda_estimate(&x).unwrap();
        assert!(d.converged, "{d:?}");
        assert!(d.final_delta < DEFAULT_TOL);
        assert!(p.dispersion.log_det().abs() < 1e-8);
        assert!((p.mean - DVector::from_vec(vec![1.0, 2.0, 3.0])).norm() < 0.5);
    }

    #[test]
    fn femda_reports_non_convergence() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cov = random_spd(3, (1.0, 6.0), &mut rng).unwrap();
        let x = gaussian_cloud(100, &DVector::zeros(3), &cov, 7);
        let init = femda_initial(&x).unwrap();
        let (_, d) = femda_fixed_point(&x, &init, 1e-30, 3).unwrap();
        assert_eq!(d.iterations, 3);
        assert!(!d.converged);
    }

    #[test]
    fn femda_too_few_points() {
        let x = pts(&[&[0.0, 1.0], &[1.0, 0.0]]);
        let init = ClusterParams::new(DVector::zeros(2), SpdMatrix::identity(2)).unwrap();
        assert!(matches!(
            femda_fixed_point(&x, &init, 1e-6, 10),
            Err(FemdaError::TooFewPoints { needed: 3, .. })
        ));
    }

    #[test]
    fn femda_survives_point_at_mean() {
        // the median coincides with a data point; the clamp keeps weights finite
        let x = pts(&[&[0.0, 0.0], &[1.0, 0.0], &[-1.0, 0.0], &[0.0, 1.0], &[0.0, -1.0], &[0.5, 0.7]]);
        let (p, _) = femda_estimate(&x).unwrap();
        assert!(p.mean.iter().all(|v| v.is_finite()));
        assert!(p.dispersion.log_det().abs() < 1e-8);
    }

    #[test]
    fn femda_affine_equivariance_at_convergence() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let cov = random_spd(3, (1.0, 3.0), &mut rng).unwrap();
        let x = gaussian_cloud(400, &DVector::zeros(3), &cov, 10);
        let a = DMatrix::from_row_slice(3, 3, &[1.5, 0.2, 0.0, -0.3, 0.8, 0.1, 0.0, 0.4, 2.0]);
        let b = DVector::from_vec(vec![5.0, -1.0, 0.5]);
        let y: Vec<_> = x.iter().map(|p| &a * p + &b).collect();
        let tol = 1e-10;
        let (px, _) = femda_fixed_point(&x, &femda_initial(&x).unwrap(), tol, 2000).unwrap();
        let (py, _) = femda_fixed_point(&y, &femda_initial(&y).unwrap(), tol, 2000).unwrap();
        assert!((&py.mean - (&a * &px.mean + &b)).norm() < 1e-7);
        let mapped = SpdMatrix::regularized(&(&a * px.dispersion.matrix() * a.transpose()))
            .unwrap()
            .unit_determinant();
        assert!(relative_change(mapped.matrix(), py.dispersion.matrix()) < 1e-7);
    }

    #[test]
    fn student_em_monotone_and_positive_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let cov = random_spd(3, (1.0, 4.0), &mut rng).unwrap();
        let mu = DVector::zeros(3);
        let x: Vec<_> = (0..500)
            .map(|_| crate::distributions::sample_multivariate_t(&mu, &cov, 4.0, 1.0, &mut rng).unwrap())
            .collect();
        let fit = fit_student(&x, StudentEmOptions::default()).unwrap();
        for w in fit.log_likelihood.windows(2) {
            assert!(w[1] >= w[0] - 1e-8 * w[0].abs().max(1.0), "{} -> {}", w[0], w[1]);
        }
        assert!(fit.params.nu > 2.0 && fit.params.nu < 8.0, "nu = {}", fit.params.nu);
    }

    #[test]
    fn student_em_gaussian_limit() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let cov = random_spd(3, (1.0, 4.0), &mut rng).unwrap();
        let x = gaussian_cloud(10_000, &DVector::from_vec(vec![1.0, 0.0, -1.0]), &cov, 13);
        let (p, _) = student_em(&x, DEFAULT_TOL, STUDENT_MAX_ITER).unwrap();
        assert!(p.nu >= 50.0, "nu = {}", p.nu);
        let (_, sample_cov) = sample_moments(&x);
        assert!(relative_change(&sample_cov, p.scatter.matrix()) < 0.05);
    }

    #[test]
    fn student_em_symmetric_pair() {
        let x = pts(&[&[1.0, 2.0], &[3.0, 4.0], &[1.0, 4.0], &[3.0, 2.0]]);
        let (p, _) = student_em(&x, 1e-10, 500).unwrap();
        assert!((p.mean - DVector::from_vec(vec![2.0, 3.0])).norm() < 1e-8);
    }

    #[test]
    fn student_em_needs_m_plus_two() {
        let x = pts(&[&[1.0, 2.0], &[3.0, 4.0], &[0.0, 1.0]]);
        assert!(matches!(
            student_em(&x, 1e-6, 10),
            Err(FemdaError::TooFewPoints { needed: 4, .. })
        ));
    }

    #[test]
    fn nu_solver_brackets() {
        // c = -1 is the Gaussian boundary: no finite root
        assert_eq!(solve_nu(-1.0), NU_BOUNDS.1);
        let nu = solve_nu(-1.2);
        let h = (0.5 * nu).ln() - digamma(0.5 * nu) + 1.0 - 1.2;
        assert!(h.abs() < 1e-9);
    }

    #[test]
    fn robust_plugin_unit_determinant() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let cov = random_spd(4, (1.0, 4.0), &mut rng).unwrap();
        let x = gaussian_cloud(300, &DVector::zeros(4), &cov, 15);
        let (p, d) = robust_plugin(&x, DEFAULT_TOL, STUDENT_MAX_ITER).unwrap();
        assert!(d.converged);
        assert!(p.dispersion.log_det().abs() < 1e-8);
    }
}
