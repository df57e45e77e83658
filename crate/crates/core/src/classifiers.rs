//! Trained decision rules: QDA, t-QDA, GQDA, RGQDA and FEMDA.
//!
//! Every rule reduces to a per-class score and predicts the argmin, breaking ties towards
//! the lowest class index. No rule carries a class-prior term.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::datasets::LabeledDataset;
use crate::error::{FemdaError, Result};
use crate::estimators::{
    distance_floor, estimate_gaussian, femda_fixed_point, femda_initial, robust_plugin,
    student_em, ClusterParams, FixedPointDiagnostics, DEFAULT_TOL, FEMDA_MAX_ITER,
    STUDENT_MAX_ITER,
};
use crate::linalg::{Observation, SpdMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "QDA")]
    Qda,
    #[serde(rename = "TQDA")]
    Tqda,
    #[serde(rename = "GQDA")]
    Gqda,
    #[serde(rename = "RGQDA")]
    Rgqda,
    #[serde(rename = "FEMDA")]
    Femda,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Qda,
        Method::Tqda,
        Method::Gqda,
        Method::Rgqda,
        Method::Femda,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Qda => "QDA",
            Method::Tqda => "t-QDA",
            Method::Gqda => "GQDA",
            Method::Rgqda => "RGQDA",
            Method::Femda => "FEMDA",
        }
    }

    pub fn uses_threshold(self) -> bool {
        matches!(self, Method::Gqda | Method::Rgqda)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = FemdaError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "QDA" => Ok(Method::Qda),
            "TQDA" | "T-QDA" => Ok(Method::Tqda),
            "GQDA" => Ok(Method::Gqda),
            "RGQDA" => Ok(Method::Rgqda),
            "FEMDA" => Ok(Method::Femda),
            _ => Err(FemdaError::ConfigInvalid(format!("unknown method '{s}'"))),
        }
    }
}

/// Grid `lo, lo + step, …, hi` searched for the GQDA threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdGrid {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

impl Default for ThresholdGrid {
    fn default() -> Self {
        Self {
            lo: 0.0,
            hi: 3.0,
            step: 0.05,
        }
    }
}

impl ThresholdGrid {
    /// Grid values computed as `lo + i·step` (with `1/step` division when exact, so that
    /// 1.0 is hit exactly on the default grid).
    pub fn values(&self) -> Vec<f64> {
        let n = ((self.hi - self.lo) / self.step + 1e-9).floor() as usize;
        let inv = (1.0 / self.step).round();
        let exact = (inv * self.step - 1.0).abs() < 1e-12;
        (0..=n)
            .map(|i| {
                if exact {
                    self.lo + i as f64 / inv
                } else {
                    self.lo + i as f64 * self.step
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainSettings {
    pub tol: f64,
    pub femda_max_iter: usize,
    pub student_max_iter: usize,
    pub threshold_grid: ThresholdGrid,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            femda_max_iter: FEMDA_MAX_ITER,
            student_max_iter: STUDENT_MAX_ITER,
            threshold_grid: ThresholdGrid::default(),
        }
    }
}

/// A fitted classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    method: Method,
    class_names: Vec<String>,
    params: Vec<ClusterParams>,
    nu: Option<Vec<f64>>,
    gqda_threshold: Option<f64>,
    cached_logdets: Vec<f64>,
    diagnostics: Vec<Option<FixedPointDiagnostics>>,
}

impl TrainedModel {
    /// Assembles a model from explicit parameters (e.g. ground truth).
    pub fn from_parts(
        method: Method,
        class_names: Vec<String>,
        params: Vec<ClusterParams>,
        nu: Option<Vec<f64>>,
        gqda_threshold: Option<f64>,
    ) -> Result<Self> {
        if params.is_empty() || params.len() != class_names.len() {
            return Err(FemdaError::ConfigInvalid(format!(
                "{} parameter sets for {} classes",
                params.len(),
                class_names.len()
            )));
        }
        let m = params[0].dim();
        if let Some(p) = params.iter().find(|p| p.dim() != m) {
            return Err(FemdaError::DimensionMismatch {
                expected: m,
                found: p.dim(),
            });
        }
        match (&nu, method) {
            (Some(v), Method::Tqda) if v.len() == params.len() && v.iter().all(|&n| n > 0.0) => {}
            (None, Method::Tqda) | (Some(_), Method::Tqda) => {
                return Err(FemdaError::ConfigInvalid(
                    "t-QDA needs one positive ν per class".into(),
                ))
            }
            (Some(_), _) => {
                return Err(FemdaError::ConfigInvalid(format!(
                    "degrees of freedom are only used by t-QDA, not {method}"
                )))
            }
            (None, _) => {}
        }
        if method.uses_threshold() != gqda_threshold.is_some() {
            return Err(if method.uses_threshold() {
                FemdaError::MissingThreshold
            } else {
                FemdaError::ConfigInvalid(format!("{method} takes no threshold"))
            });
        }
        let cached_logdets = params.iter().map(|p| p.dispersion.log_det()).collect();
        let diagnostics = vec![None; params.len()];
        Ok(Self {
            method,
            class_names,
            params,
            nu,
            gqda_threshold,
            cached_logdets,
            diagnostics,
        })
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn num_classes(&self) -> usize {
        self.params.len()
    }

    pub fn dim(&self) -> usize {
        self.params[0].dim()
    }

    pub fn params(&self) -> &[ClusterParams] {
        &self.params
    }

    pub fn nu(&self) -> Option<&[f64]> {
        self.nu.as_deref()
    }

    pub fn gqda_threshold(&self) -> Option<f64> {
        self.gqda_threshold
    }

    pub fn cached_logdets(&self) -> &[f64] {
        &self.cached_logdets
    }

    /// Convergence record per class (None for closed-form estimators).
    pub fn diagnostics(&self) -> &[Option<FixedPointDiagnostics>] {
        &self.diagnostics
    }

    /// Number of classes whose iterative estimator hit its iteration cap.
    pub fn convergence_failures(&self) -> usize {
        self.diagnostics
            .iter()
            .filter(|d| matches!(d, Some(d) if !d.converged))
            .count()
    }

    /// Copy with every dispersion rescaled by a per-class positive factor.
    pub fn with_rescaled_dispersions(&self, factors: &[f64]) -> Result<Self> {
        if factors.len() != self.num_classes() {
            return Err(FemdaError::DimensionMismatch {
                expected: self.num_classes(),
                found: factors.len(),
            });
        }
        let params = self
            .params
            .iter()
            .zip(factors)
            .map(|(p, &c)| ClusterParams {
                mean: p.mean.clone(),
                dispersion: p.dispersion.scaled(c),
            })
            .collect();
        let mut out = Self::from_parts(
            self.method,
            self.class_names.clone(),
            params,
            self.nu.clone(),
            self.gqda_threshold,
        )?;
        out.diagnostics = self.diagnostics.clone();
        Ok(out)
    }

    /// Squared Mahalanobis distance of `x` to every class.
    pub fn distances(&self, x: &Observation) -> Result<Vec<f64>> {
        self.params.iter().map(|p| p.distance_sq(x)).collect()
    }

    /// Per-class scores of the model's own rule.
    pub fn scores(&self, x: &Observation) -> Result<Vec<f64>> {
        match self.method {
            Method::Qda => qda_score(x, self),
            Method::Tqda => tqda_score(x, self),
            Method::Gqda | Method::Rgqda => gqda_score(x, self),
            Method::Femda => femda_score(x, self),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&ModelDocument::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ModelDocument = serde_json::from_str(text)?;
        doc.into_model()
    }
}

fn check_method(model: &TrainedModel, allowed: &[Method]) -> Result<()> {
    if allowed.contains(&model.method) {
        Ok(())
    } else {
        Err(FemdaError::ConfigInvalid(format!(
            "score function does not apply to a {} model",
            model.method
        )))
    }
}

/// `(1/m)·log|Σ_k| + log(max(t_k, ε))`.
pub fn femda_score(x: &Observation, model: &TrainedModel) -> Result<Vec<f64>> {
    check_method(model, &[Method::Femda])?;
    let m = model.dim() as f64;
    model
        .params
        .iter()
        .zip(&model.cached_logdets)
        .map(|(p, &ld)| {
            let t = p.distance_sq(x)?;
            Ok(ld / m + t.max(distance_floor(&p.dispersion)).ln())
        })
        .collect()
}

/// `log|Σ_k| + t_k`.
pub fn qda_score(x: &Observation, model: &TrainedModel) -> Result<Vec<f64>> {
    check_method(model, &[Method::Qda])?;
    model
        .params
        .iter()
        .zip(&model.cached_logdets)
        .map(|(p, &ld)| Ok(ld + p.distance_sq(x)?))
        .collect()
}

/// Negative log density of the multivariate t with per-class ν.
pub fn tqda_score(x: &Observation, model: &TrainedModel) -> Result<Vec<f64>> {
    check_method(model, &[Method::Tqda])?;
    let nu = model.nu.as_ref().expect("validated at construction");
    let m = model.dim() as f64;
    model
        .params
        .iter()
        .zip(&model.cached_logdets)
        .zip(nu)
        .map(|((p, &ld), &nu)| {
            let t = p.distance_sq(x)?;
            Ok(student_neg_log_density(t, ld, nu, m))
        })
        .collect()
}

fn student_neg_log_density(t: f64, log_det: f64, nu: f64, m: f64) -> f64 {
    -ln_gamma(0.5 * (nu + m)) + ln_gamma(0.5 * nu) + 0.5 * m * (nu * std::f64::consts::PI).ln()
        + 0.5 * log_det
        + 0.5 * (nu + m) * (t / nu).ln_1p()
}

/// `t_k + c·log|Σ_k|`.
pub fn gqda_score(x: &Observation, model: &TrainedModel) -> Result<Vec<f64>> {
    check_method(model, &[Method::Gqda, Method::Rgqda])?;
    let c = model.gqda_threshold.ok_or(FemdaError::MissingThreshold)?;
    model
        .params
        .iter()
        .zip(&model.cached_logdets)
        .map(|(p, &ld)| Ok(p.distance_sq(x)? + c * ld))
        .collect()
}

/// Index of the smallest score; ties go to the lowest index.
pub fn argmin(scores: &[f64]) -> usize {
    let mut best = 0;
    for (k, &s) in scores.iter().enumerate().skip(1) {
        if s < scores[best] {
            best = k;
        }
    }
    best
}

pub fn classify(model: &TrainedModel, x: &Observation) -> Result<usize> {
    Ok(argmin(&model.scores(x)?))
}

pub fn classify_batch(model: &TrainedModel, points: &[Observation]) -> Result<Vec<usize>> {
    points.iter().map(|x| classify(model, x)).collect()
}

/// Fraction of correctly classified points.
pub fn accuracy(model: &TrainedModel, data: &LabeledDataset) -> Result<f64> {
    if data.is_empty() {
        return Err(FemdaError::EmptyDataset);
    }
    if data.num_classes() != model.num_classes() {
        return Err(FemdaError::DimensionMismatch {
            expected: model.num_classes(),
            found: data.num_classes(),
        });
    }
    let predicted = classify_batch(model, data.points())?;
    let correct = predicted
        .iter()
        .zip(data.labels())
        .filter(|(p, l)| p == l)
        .count();
    Ok(correct as f64 / data.len() as f64)
}

/// Threshold maximizing training accuracy of `t_k + c·log|Σ_k|` over the grid; ties go to
/// the smallest `c`.
pub fn select_gqda_threshold(
    train: &LabeledDataset,
    params: &[ClusterParams],
    grid: &ThresholdGrid,
) -> Result<f64> {
    let logdets: Vec<f64> = params.iter().map(|p| p.dispersion.log_det()).collect();
    let distances: Vec<Vec<f64>> = train
        .points()
        .iter()
        .map(|x| params.iter().map(|p| p.distance_sq(x)).collect())
        .collect::<Result<_>>()?;
    let values = grid.values();
    let mut best = (values[0], usize::MAX);
    let mut scores = vec![0.0; params.len()];
    for &c in &values {
        let errors = distances
            .iter()
            .zip(train.labels())
            .filter(|(t, &label)| {
                for ((s, &tk), &ld) in scores.iter_mut().zip(t.iter()).zip(&logdets) {
                    *s = tk + c * ld;
                }
                argmin(&scores) != label
            })
            .count();
        if errors < best.1 {
            best = (c, errors);
        }
    }
    Ok(best.0)
}

/// Fits one parameter set per class with the estimator of `method`.
pub fn train(method: Method, data: &LabeledDataset, settings: &TrainSettings) -> Result<TrainedModel> {
    if data.is_empty() {
        return Err(FemdaError::EmptyDataset);
    }
    let m = data.dim();
    let needed = m + 2;
    let counts = data.class_counts();
    for (c, &count) in counts.iter().enumerate() {
        if count < needed {
            return Err(FemdaError::ClassTooSmall {
                label: data.class_names()[c].clone(),
                count,
                needed,
            });
        }
    }
    let mut params = Vec::with_capacity(counts.len());
    let mut nus = Vec::new();
    let mut diagnostics = Vec::with_capacity(counts.len());
    for c in 0..counts.len() {
        let points = data.class_points(c);
        let wrap = |e: FemdaError| FemdaError::EstimationFailed {
            label: data.class_names()[c].clone(),
            source: Box::new(e),
        };
        let (p, d) = match method {
            Method::Qda | Method::Gqda => (estimate_gaussian(&points).map_err(wrap)?, None),
            Method::Tqda => {
                let (sp, d) = student_em(&points, settings.tol, settings.student_max_iter).map_err(wrap)?;
                nus.push(sp.nu);
                (sp.cluster(), Some(d))
            }
            Method::Rgqda => {
                let (p, d) = robust_plugin(&points, settings.tol, settings.student_max_iter).map_err(wrap)?;
                (p, Some(d))
            }
            Method::Femda => {
                let init = femda_initial(&points).map_err(wrap)?;
                let (p, d) = femda_fixed_point(&points, &init, settings.tol, settings.femda_max_iter)
                    .map_err(wrap)?;
                (p, Some(d))
            }
        };
        params.push(p);
        diagnostics.push(d);
    }
    let threshold = if method.uses_threshold() {
        Some(select_gqda_threshold(data, &params, &settings.threshold_grid)?)
    } else {
        None
    };
    let nu = (method == Method::Tqda).then_some(nus);
    let mut model = TrainedModel::from_parts(method, data.class_names().to_vec(), params, nu, threshold)?;
    model.diagnostics = diagnostics;
    Ok(model)
}

const MODEL_FORMAT: &str = "femda-model";
const MODEL_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct ModelDocument {
    format: String,
    version: u32,
    method: Method,
    dim: usize,
    classes: Vec<String>,
    params: Vec<ParamDocument>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    nu: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gqda_threshold: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ParamDocument {
    mean: Vec<f64>,
    /// Row-major `dim × dim`.
    dispersion: Vec<f64>,
}

impl From<&TrainedModel> for ModelDocument {
    fn from(model: &TrainedModel) -> Self {
        let m = model.dim();
        Self {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            method: model.method,
            dim: m,
            classes: model.class_names.clone(),
            params: model
                .params
                .iter()
                .map(|p| ParamDocument {
                    mean: p.mean.iter().copied().collect(),
                    dispersion: (0..m)
                        .flat_map(|r| (0..m).map(move |c| (r, c)))
                        .map(|(r, c)| p.dispersion.matrix()[(r, c)])
                        .collect(),
                })
                .collect(),
            nu: model.nu.clone(),
            gqda_threshold: model.gqda_threshold,
        }
    }
}

impl ModelDocument {
    fn into_model(self) -> Result<TrainedModel> {
        if self.format != MODEL_FORMAT {
            return Err(FemdaError::ConfigInvalid(format!("not a model document: '{}'", self.format)));
        }
        if self.version != MODEL_VERSION {
            return Err(FemdaError::ConfigInvalid(format!(
                "unsupported model version {}",
                self.version
            )));
        }
        let m = self.dim;
        let params = self
            .params
            .into_iter()
            .map(|p| {
                if p.mean.len() != m {
                    return Err(FemdaError::DimensionMismatch {
                        expected: m,
                        found: p.mean.len(),
                    });
                }
                if p.dispersion.len() != m * m {
                    return Err(FemdaError::DimensionMismatch {
                        expected: m * m,
                        found: p.dispersion.len(),
                    });
                }
                ClusterParams::new(
                    DVector::from_vec(p.mean),
                    SpdMatrix::new(DMatrix::from_row_slice(m, m, &p.dispersion))?,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        TrainedModel::from_parts(self.method, self.classes, params, self.nu, self.gqda_threshold)
    }
}
