//! Samplers for the generalized Gaussian and multivariate Student families, and the
//! synthetic scenario generator built on top of them.

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::datasets::LabeledDataset;
use crate::error::{FemdaError, Result};
use crate::estimators::ClusterParams;
use crate::linalg::{random_spd, sample_unit_sphere, Observation, SpdMatrix};

/// Elliptical family used to draw a point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Family {
    GeneralizedGaussian,
    StudentT,
}

/// A family together with its shape parameter (β for GG, ν for Student).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub family: Family,
    pub shape: f64,
}

impl GeneratorSpec {
    pub fn sample<R: Rng + ?Sized>(
        &self,
        mean: &Observation,
        dispersion: &SpdMatrix,
        tau: f64,
        rng: &mut R,
    ) -> Result<Observation> {
        match self.family {
            Family::GeneralizedGaussian => {
                sample_generalized_gaussian(mean, dispersion, self.shape, tau, rng)
            }
            Family::StudentT => sample_multivariate_t(mean, dispersion, self.shape, tau, rng),
        }
    }
}

/// Whether shape parameters are shared inside a cluster ("green") or drawn per point ("red").
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sharing {
    PerCluster,
    PerPoint,
}

impl Sharing {
    pub fn color(self) -> &'static str {
        match self {
            Sharing::PerCluster => "green",
            Sharing::PerPoint => "red",
        }
    }
}

/// Closed real interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    fn validate(&self, name: &str) -> Result<()> {
        if !(self.lo.is_finite() && self.hi.is_finite() && self.lo <= self.hi) {
            return Err(FemdaError::ConfigInvalid(format!(
                "{name} interval [{}, {}] is not ordered",
                self.lo, self.hi
            )));
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.lo == self.hi {
            return self.lo;
        }
        Uniform::new_inclusive(self.lo, self.hi)
            .expect("validated interval")
            .sample(rng)
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{}", self.lo, self.hi)
    }
}

impl FromStr for Interval {
    type Err = FemdaError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || FemdaError::ConfigInvalid(format!("cannot parse interval '{s}'"));
        let (lo, hi) = s.split_once(',').ok_or_else(bad)?;
        Ok(Self::new(
            lo.trim().parse().map_err(|_| bad())?,
            hi.trim().parse().map_err(|_| bad())?,
        ))
    }
}

/// Mixture description `<color>:<pGG>GG-<pT>T`, e.g. `green:0.6GG-0.4T`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub sharing: Sharing,
    pub p_gg: f64,
}

impl Scenario {
    pub fn new(sharing: Sharing, p_gg: f64) -> Self {
        Self { sharing, p_gg }
    }

    /// The six clean scenarios of the benchmark table.
    pub fn benchmark_set() -> Vec<Scenario> {
        vec![
            Scenario::new(Sharing::PerCluster, 1.0),
            Scenario::new(Sharing::PerCluster, 0.0),
            Scenario::new(Sharing::PerPoint, 1.0),
            Scenario::new(Sharing::PerPoint, 0.0),
            Scenario::new(Sharing::PerCluster, 0.5),
            Scenario::new(Sharing::PerPoint, 0.5),
        ]
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}:{}GG-{}T",
            self.sharing.color(),
            self.p_gg,
            // rounded so that 1 - 0.6 prints as 0.4
            (1e12 * (1.0 - self.p_gg)).round() / 1e12
        )
    }
}

impl FromStr for Scenario {
    type Err = FemdaError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = |why: &str| FemdaError::ConfigInvalid(format!("scenario '{s}': {why}"));
        let (color, mix) = s
            .split_once(':')
            .ok_or_else(|| bad("expected <color>:<pGG>GG-<pT>T"))?;
        let sharing = match color.trim() {
            "green" => Sharing::PerCluster,
            "red" => Sharing::PerPoint,
            _ => return Err(bad("color must be 'green' or 'red'")),
        };
        let (gg, t) = mix
            .trim()
            .split_once("GG-")
            .ok_or_else(|| bad("missing 'GG-'"))?;
        let t = t.strip_suffix('T').ok_or_else(|| bad("missing trailing 'T'"))?;
        let p_gg: f64 = gg.parse().map_err(|_| bad("bad GG fraction"))?;
        let p_t: f64 = t.parse().map_err(|_| bad("bad T fraction"))?;
        if !(0.0..=1.0).contains(&p_gg) || !(0.0..=1.0).contains(&p_t) {
            return Err(bad("fractions must lie in [0, 1]"));
        }
        if (p_gg + p_t - 1.0).abs() > 1e-9 {
            return Err(bad("fractions must sum to 1"));
        }
        Ok(Self { sharing, p_gg })
    }
}

/// Full description of one synthetic experiment draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub m: usize,
    pub k: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub p_gg: f64,
    pub sharing: Sharing,
    pub beta_range: Interval,
    pub nu_range: Interval,
    pub tau_range: Interval,
    pub eig_range: Interval,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self::full_scale(Scenario::new(Sharing::PerCluster, 1.0))
    }
}

impl ScenarioConfig {
    /// m = 10, K = 5, 5000 training and 20000 test points, τ ~ U(1, m), eigenvalues in
    /// [0.05, 10].
    pub fn full_scale(scenario: Scenario) -> Self {
        let m = 10;
        Self {
            m,
            k: 5,
            n_train: 5000,
            n_test: 20000,
            p_gg: scenario.p_gg,
            sharing: scenario.sharing,
            beta_range: Interval::new(0.25, 10.0),
            nu_range: Interval::new(1.0, 10.0),
            tau_range: Interval::new(1.0, m as f64),
            eig_range: Interval::new(0.05, 10.0),
            seed: 0,
        }
    }

    pub fn scenario(&self) -> Scenario {
        Scenario::new(self.sharing, self.p_gg)
    }

    pub fn set_scenario(&mut self, scenario: Scenario) {
        self.sharing = scenario.sharing;
        self.p_gg = scenario.p_gg;
    }

    pub fn validate(&self) -> Result<()> {
        let err = |s: String| Err(FemdaError::ConfigInvalid(s));
        if self.m == 0 || self.k == 0 {
            return err("m and k must be positive".into());
        }
        let min_n = self.k * (self.m + 2);
        if self.n_train < min_n || self.n_test < min_n {
            return err(format!(
                "n_train and n_test must be at least K·(m+2) = {min_n}"
            ));
        }
        if !(0.0..=1.0).contains(&self.p_gg) {
            return err(format!("p_gg = {} outside [0, 1]", self.p_gg));
        }
        self.beta_range.validate("beta_range")?;
        self.nu_range.validate("nu_range")?;
        self.tau_range.validate("tau_range")?;
        self.eig_range.validate("eig_range")?;
        if self.beta_range.lo <= 0.0 || self.nu_range.lo <= 0.0 || self.tau_range.lo <= 0.0 {
            return err("shape and scale ranges must be strictly positive".into());
        }
        if self.eig_range.lo <= 0.0 {
            return err("eig_range must be strictly positive".into());
        }
        Ok(())
    }
}

/// How a single synthetic point was drawn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointProvenance {
    pub generator: GeneratorSpec,
    pub tau: f64,
}

/// Train/test draw with the ground-truth cluster parameters it came from.
#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub train: LabeledDataset,
    pub test: LabeledDataset,
    pub truth: Vec<ClusterParams>,
    /// Per-point generator record, aligned with `train`.
    pub train_provenance: Vec<PointProvenance>,
    /// Per-point generator record, aligned with `test`.
    pub test_provenance: Vec<PointProvenance>,
}

/// `mean + √τ · G^{1/(2β)} · Σ^{1/2} u` with `G ~ Gamma(m/(2β), 2)` and `u` uniform on the sphere.
pub fn sample_generalized_gaussian<R: Rng + ?Sized>(
    mean: &Observation,
    dispersion: &SpdMatrix,
    beta: f64,
    tau: f64,
    rng: &mut R,
) -> Result<Observation> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(FemdaError::InvalidShape(beta));
    }
    check_tau(tau)?;
    let m = dispersion.dim();
    check_mean(mean, m)?;
    let gamma = Gamma::new(m as f64 / (2.0 * beta), 2.0).map_err(|_| FemdaError::InvalidShape(beta))?;
    let g: f64 = gamma.sample(rng);
    let radius = g.powf(1.0 / (2.0 * beta));
    let u = sample_unit_sphere(m, rng);
    Ok(mean + dispersion.apply_sqrt(&u) * (tau.sqrt() * radius))
}

/// `mean + √τ · z / √g` with `z ~ N(0, Σ)` and `g ~ Gamma(ν/2, 2/ν)`.
pub fn sample_multivariate_t<R: Rng + ?Sized>(
    mean: &Observation,
    dispersion: &SpdMatrix,
    nu: f64,
    tau: f64,
    rng: &mut R,
) -> Result<Observation> {
    if !(nu > 0.0 && nu.is_finite()) {
        return Err(FemdaError::InvalidShape(nu));
    }
    check_tau(tau)?;
    let m = dispersion.dim();
    check_mean(mean, m)?;
    let n = DVector::from_fn(m, |_, _| StandardNormal.sample(rng));
    let gamma = Gamma::new(nu / 2.0, 2.0 / nu).map_err(|_| FemdaError::InvalidShape(nu))?;
    let g: f64 = gamma.sample(rng);
    Ok(mean + dispersion.apply_sqrt(&n) * (tau.sqrt() / g.sqrt()))
}

fn check_tau(tau: f64) -> Result<()> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(FemdaError::ConfigInvalid(format!("scale factor τ = {tau} must be positive")));
    }
    Ok(())
}

fn check_mean(mean: &Observation, m: usize) -> Result<()> {
    if mean.len() != m {
        return Err(FemdaError::DimensionMismatch {
            expected: m,
            found: mean.len(),
        });
    }
    Ok(())
}

/// K unit-norm means and K random dispersions with spectrum in `eig_range`.
pub fn generate_cluster_params<R: Rng + ?Sized>(
    config: &ScenarioConfig,
    rng: &mut R,
) -> Result<Vec<ClusterParams>> {
    config.validate()?;
    (0..config.k)
        .map(|_| {
            let mean = sample_unit_sphere(config.m, rng);
            let dispersion = random_spd(config.m, (config.eig_range.lo, config.eig_range.hi), rng)?;
            Ok(ClusterParams { mean, dispersion })
        })
        .collect()
}

/// Draws cluster parameters and then a train/test pair from them.
pub fn generate_scenario<R: Rng + ?Sized>(
    config: &ScenarioConfig,
    rng: &mut R,
) -> Result<SyntheticDataset> {
    let truth = generate_cluster_params(config, rng)?;
    generate_scenario_with_params(config, truth, rng)
}

/// Shape parameters drawn once per cluster (shared by its train and test points).
struct ClusterShapes {
    beta: f64,
    nu: f64,
}

/// Same as [`generate_scenario`] but with fixed ground-truth parameters.
pub fn generate_scenario_with_params<R: Rng + ?Sized>(
    config: &ScenarioConfig,
    truth: Vec<ClusterParams>,
    rng: &mut R,
) -> Result<SyntheticDataset> {
    config.validate()?;
    if truth.len() != config.k {
        return Err(FemdaError::ConfigInvalid(format!(
            "expected {} cluster parameter sets, got {}",
            config.k,
            truth.len()
        )));
    }
    if let Some(p) = truth.iter().find(|p| p.dim() != config.m) {
        return Err(FemdaError::DimensionMismatch {
            expected: config.m,
            found: p.dim(),
        });
    }
    let shapes: Vec<ClusterShapes> = (0..config.k)
        .map(|_| ClusterShapes {
            beta: config.beta_range.sample(rng),
            nu: config.nu_range.sample(rng),
        })
        .collect();
    let (train, train_provenance) = draw_split(config, &truth, &shapes, config.n_train, rng)?;
    let (test, test_provenance) = draw_split(config, &truth, &shapes, config.n_test, rng)?;
    Ok(SyntheticDataset {
        train,
        test,
        truth,
        train_provenance,
        test_provenance,
    })
}

/// Balanced cluster sizes summing to `n` (differences at most one).
pub fn balanced_counts(n: usize, k: usize) -> Vec<usize> {
    (0..k).map(|j| n / k + usize::from(j < n % k)).collect()
}

fn draw_split<R: Rng + ?Sized>(
    config: &ScenarioConfig,
    truth: &[ClusterParams],
    shapes: &[ClusterShapes],
    n: usize,
    rng: &mut R,
) -> Result<(LabeledDataset, Vec<PointProvenance>)> {
    let mut points = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    let mut provenance = Vec::with_capacity(n);
    for (k, n_k) in balanced_counts(n, config.k).into_iter().enumerate() {
        let n_gg = (config.p_gg * n_k as f64).round() as usize;
        let mut families: Vec<Family> = std::iter::repeat_n(Family::GeneralizedGaussian, n_gg)
            .chain(std::iter::repeat_n(Family::StudentT, n_k - n_gg))
            .collect();
        families.shuffle(rng);
        for family in families {
            let shape = match (config.sharing, family) {
                (Sharing::PerCluster, Family::GeneralizedGaussian) => shapes[k].beta,
                (Sharing::PerCluster, Family::StudentT) => shapes[k].nu,
                (Sharing::PerPoint, Family::GeneralizedGaussian) => config.beta_range.sample(rng),
                (Sharing::PerPoint, Family::StudentT) => config.nu_range.sample(rng),
            };
            let tau = config.tau_range.sample(rng);
            let generator = GeneratorSpec { family, shape };
            points.push(generator.sample(&truth[k].mean, &truth[k].dispersion, tau, rng)?);
            labels.push(k);
            provenance.push(PointProvenance { generator, tau });
        }
    }
    let class_names = (1..=config.k).map(|k| k.to_string()).collect();
    let feature_names = (1..=config.m).map(|j| format!("x{j}")).collect();
    let data = LabeledDataset::new(points, labels, class_names, feature_names)?;
    Ok((data, provenance))
}
