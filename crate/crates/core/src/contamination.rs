//! Radial scale noise: selected points move to `μ_k + λ(x − μ_k)`.

use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datasets::LabeledDataset;
use crate::error::{FemdaError, Result};
use crate::linalg::Observation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CenterSource {
    GroundTruth,
    EmpiricalClassMean,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContaminationSpec {
    pub fraction: f64,
    pub lambda: f64,
    pub center_source: CenterSource,
    pub seed: u64,
    /// Also contaminate the test split.
    #[serde(default)]
    pub apply_to_test: bool,
}

impl ContaminationSpec {
    pub fn new(fraction: f64, lambda: f64) -> Result<Self> {
        let spec = Self {
            fraction,
            lambda,
            center_source: CenterSource::GroundTruth,
            seed: 0,
            apply_to_test: false,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.fraction) {
            return Err(FemdaError::ConfigInvalid(format!(
                "contamination fraction {} outside [0, 1]",
                self.fraction
            )));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(FemdaError::ConfigInvalid(format!(
                "contamination factor {} must be positive",
                self.lambda
            )));
        }
        Ok(())
    }

    /// Points altered in a class of `n` points.
    pub fn count_for(&self, n: usize) -> usize {
        ((self.fraction * n as f64).round() as usize).min(n)
    }
}

/// `<fraction>:<lambda>`.
impl fmt::Display for ContaminationSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.fraction, self.lambda)
    }
}

impl FromStr for ContaminationSpec {
    type Err = FemdaError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || FemdaError::ConfigInvalid(format!("expected '<fraction>:<lambda>', found '{s}'"));
        let (f, l) = s.split_once(':').ok_or_else(bad)?;
        let fraction = f.trim().parse().map_err(|_| bad())?;
        let lambda = l.trim().parse().map_err(|_| bad())?;
        Self::new(fraction, lambda)
    }
}

/// Moves `x` radially about `center` by the factor `lambda`.
pub fn scale_about(x: &Observation, center: &Observation, lambda: f64) -> Observation {
    center + (x - center) * lambda
}

/// Contaminates exactly `round(fraction·n_k)` points of every class, chosen uniformly
/// without replacement. Returns the new dataset and the sorted altered indices.
pub fn contaminate<R: Rng + ?Sized>(
    data: &LabeledDataset,
    centers: &[Option<Observation>],
    spec: &ContaminationSpec,
    rng: &mut R,
) -> Result<(LabeledDataset, Vec<usize>)> {
    spec.validate()?;
    let by_class = data.class_indices();
    for (c, members) in by_class.iter().enumerate() {
        if !members.is_empty() && centers.get(c).is_none_or(|m| m.is_none()) {
            return Err(FemdaError::MissingCenter(data.class_names()[c].clone()));
        }
    }
    let mut altered = Vec::new();
    for members in &by_class {
        let count = spec.count_for(members.len());
        altered.extend(sample(rng, members.len(), count).into_iter().map(|j| members[j]));
    }
    altered.sort_unstable();
    let out = rescale_indices(data, centers, &altered, spec.lambda)?;
    Ok((out, altered))
}

/// Applies the radial map to the given indices only.
pub fn rescale_indices(
    data: &LabeledDataset,
    centers: &[Option<Observation>],
    indices: &[usize],
    lambda: f64,
) -> Result<LabeledDataset> {
    let mut points = data.points().to_vec();
    for &i in indices {
        let label = data.labels()[i];
        let center = centers
            .get(label)
            .and_then(Option::as_ref)
            .ok_or_else(|| FemdaError::MissingCenter(data.class_names()[label].clone()))?;
        if lambda != 1.0 {
            points[i] = scale_about(&points[i], center, lambda);
        }
    }
    data.with_points(points)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::random_spd;
    use nalgebra::DVector;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn data(n_per: &[usize], seed: u64) -> LabeledDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut points = Vec::new();
        let mut labels = Vec::new();
        for (c, &n) in n_per.iter().enumerate() {
            for _ in 0..n {
                points.push(DVector::from_fn(3, |_, _| StandardNormal.sample(&mut rng)) + DVector::repeat(3, c as f64));
                labels.push(c);
            }
        }
        let names = (0..n_per.len()).map(|c| c.to_string()).collect();
        LabeledDataset::new(points, labels, names, vec!["a".into(), "b".into(), "c".into()]).unwrap()
    }

    #[test]
    fn fraction_lambda_parsing() {
        let s: ContaminationSpec = "0.25:8".parse().unwrap();
        assert_eq!((s.fraction, s.lambda), (0.25, 8.0));
        assert!("1.5:2".parse::<ContaminationSpec>().is_err());
        assert!("0.1:0".parse::<ContaminationSpec>().is_err());
        assert!("0.1".parse::<ContaminationSpec>().is_err());
    }

    #[test]
    fn trivial_cases_are_identity() {
        let d = data(&[50, 40], 1);
        let centers = d.class_means();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (out, altered) = contaminate(&d, &centers, &ContaminationSpec::new(0.0, 8.0).unwrap(), &mut rng).unwrap();
        assert!(altered.is_empty());
        assert_eq!(out, d);
        let (out, altered) = contaminate(&d, &centers, &ContaminationSpec::new(0.7, 1.0).unwrap(), &mut rng).unwrap();
        assert_eq!(altered.len(), 35 + 28);
        assert_eq!(out, d);
    }

    #[test]
    fn quarter_at_eight_scales_radius_exactly() {
        let d = data(&[1000, 1000], 3);
        let centers = d.class_means();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let spec = ContaminationSpec::new(0.25, 8.0).unwrap();
        let (out, altered) = contaminate(&d, &centers, &spec, &mut rng).unwrap();
        assert_eq!(altered.len(), 500);
        let mut per_class = [0; 2];
        let sigma = random_spd(3, (0.5, 4.0), &mut rng).unwrap();
        for &i in &altered {
            let c = d.labels()[i];
            per_class[c] += 1;
            let mu = centers[c].as_ref().unwrap();
            let before = sigma.mahalanobis_sq(&d.points()[i], mu).unwrap();
            let after = sigma.mahalanobis_sq(&out.points()[i], mu).unwrap();
            assert!((after.sqrt() / before.sqrt() - 8.0).abs() < 1e-9);
        }
        assert_eq!(per_class, [250, 250]);
        for i in (0..d.len()).filter(|i| altered.binary_search(i).is_err()) {
            assert_eq!(out.points()[i], d.points()[i]);
        }
        assert_eq!(out.labels(), d.labels());
    }

    #[test]
    fn inverse_factor_restores() {
        let d = data(&[30, 31, 9], 5);
        let centers = d.class_means();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (out, altered) = contaminate(&d, &centers, &ContaminationSpec::new(0.4, 5.0).unwrap(), &mut rng).unwrap();
        assert_eq!(altered.len(), 12 + 12 + 4);
        let back = rescale_indices(&out, &centers, &altered, 0.2).unwrap();
        for (a, b) in back.points().iter().zip(d.points()) {
            assert!((a - b).amax() < 1e-12);
        }
    }

    #[test]
    fn missing_center_is_reported() {
        let d = data(&[10, 10], 7);
        let mut centers = d.class_means();
        centers[1] = None;
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let err = contaminate(&d, &centers, &ContaminationSpec::new(0.5, 2.0).unwrap(), &mut rng).unwrap_err();
        assert!(matches!(err, FemdaError::MissingCenter(ref l) if l == "1"));
    }
}
