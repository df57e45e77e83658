//! Robust discriminant analysis under per-observation scale heterogeneity.
//!
//! FEMDA fits each class with a scale-free fixed-point M-estimator and classifies with a
//! rule that ignores the unknown per-point scale. QDA, t-QDA, GQDA and RGQDA are provided
//! as baselines, together with scenario generators, contamination, UCI loaders and a
//! reproducible benchmark runner.

pub mod bench;
pub mod classifiers;
pub mod contamination;
pub mod datasets;
pub mod distributions;
pub mod error;
pub mod estimators;
pub mod kv;
pub mod linalg;

pub use classifiers::{accuracy, classify, classify_batch, train, Method, TrainSettings, TrainedModel};
pub use contamination::{contaminate, CenterSource, ContaminationSpec};
pub use datasets::{stratified_split, LabeledDataset, PreprocessPolicy};
pub use distributions::{generate_scenario, Scenario, ScenarioConfig, SyntheticDataset};
pub use error::{FemdaError, Result};
pub use estimators::{ClusterParams, FixedPointDiagnostics};
pub use linalg::{Observation, SpdMatrix};
