//! Repeated experiments, aggregation and reports.
//!
//! Seeds are derived as `derive_seed(master, tag, index)`: a splitmix64 chain over the
//! master seed, a stream tag and an index. Data, splits, contamination and parameter draws
//! use separate tags, so the method list never influences the data a repetition sees.
//! Every method in a repetition is trained and evaluated on the same split.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifiers::{accuracy, train, Method, TrainSettings};
use crate::contamination::{contaminate, CenterSource, ContaminationSpec};
use crate::datasets::{load_with_schema, stratified_split, DatasetSchema, LabeledDataset};
use crate::distributions::{
    generate_cluster_params, generate_scenario_with_params, Interval, Scenario, ScenarioConfig,
};
use crate::error::{FemdaError, Result};
use crate::kv::KeyValues;
use crate::linalg::Observation;

pub const TAG_DATA: u64 = 1;
pub const TAG_SPLIT: u64 = 2;
pub const TAG_CONTAMINATION: u64 = 3;
pub const TAG_PARAMS: u64 = 4;

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(master: u64, tag: u64, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(master) ^ tag) ^ index)
}

/// FNV-1a, used to give each scenario its own seed stream.
fn label_hash(label: &str) -> u64 {
    label.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Synthetic,
    Real,
}

/// Contamination fractions evaluated at a fixed factor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub fractions: Vec<f64>,
    pub lambda: f64,
}

impl Sweep {
    /// Parses `f0:f1:step`.
    pub fn parse_range(range: &str, lambda: f64) -> Result<Self> {
        let bad = || FemdaError::ConfigInvalid(format!("expected '<from>:<to>:<step>', found '{range}'"));
        let parts: Vec<f64> = range
            .split(':')
            .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
            .collect::<Result<_>>()?;
        let [lo, hi, step] = parts[..] else {
            return Err(bad());
        };
        if step.is_nan() || step <= 0.0 || hi < lo {
            return Err(bad());
        }
        let n = ((hi - lo) / step + 1e-9).floor() as usize;
        let fractions = (0..=n)
            .map(|i| ((lo + i as f64 * step) * 1e9).round() / 1e9)
            .collect();
        let sweep = Self { fractions, lambda };
        sweep.validate()?;
        Ok(sweep)
    }

    pub fn validate(&self) -> Result<()> {
        if self.fractions.is_empty() {
            return Err(FemdaError::ConfigInvalid("empty sweep".into()));
        }
        for &f in &self.fractions {
            ContaminationSpec::new(f, self.lambda)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub mode: Mode,
    /// Template for synthetic draws; the sharing and GG proportion come from `scenarios`.
    pub scenario: ScenarioConfig,
    pub scenarios: Vec<Scenario>,
    pub dataset_path: Option<PathBuf>,
    pub schema_path: Option<PathBuf>,
    pub train_fraction: f64,
    pub methods: Vec<Method>,
    pub contamination: Option<ContaminationSpec>,
    pub sweep: Option<Sweep>,
    pub repetitions: usize,
    pub resplit_every: usize,
    pub master_seed: u64,
    /// Draw cluster parameters once and reuse them across repetitions.
    pub fixed_params: bool,
    pub settings: TrainSettings,
    pub output_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let scenario = ScenarioConfig {
            n_train: 2000,
            n_test: 5000,
            ..ScenarioConfig::default()
        };
        Self {
            mode: Mode::Synthetic,
            scenarios: vec![scenario.scenario()],
            scenario,
            dataset_path: None,
            schema_path: None,
            train_fraction: 0.7,
            methods: Method::ALL.to_vec(),
            contamination: None,
            sweep: None,
            repetitions: 5,
            resplit_every: 10,
            master_seed: 0,
            fixed_params: false,
            settings: TrainSettings::default(),
            output_dir: None,
        }
    }
}

/// Keys accepted by [`ExperimentConfig::from_kv`].
pub const CONFIG_KEYS: &[&str] = &[
    "mode",
    "scenario",
    "m",
    "k",
    "n_train",
    "n_test",
    "beta_range",
    "nu_range",
    "tau_range",
    "eig_range",
    "full_scale",
    "data",
    "schema",
    "train_fraction",
    "methods",
    "contamination",
    "contaminate_test",
    "sweep",
    "lambda",
    "reps",
    "resplit_every",
    "seed",
    "fixed_params",
    "tol",
    "max_iter",
    "student_max_iter",
    "out",
];

impl ExperimentConfig {
    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        kv.reject_unknown(CONFIG_KEYS)?;
        let mode = match kv.get("mode").unwrap_or("synthetic") {
            "synthetic" | "simulate" => Mode::Synthetic,
            "real" => Mode::Real,
            other => return Err(FemdaError::ConfigInvalid(format!("unknown mode '{other}'"))),
        };
        let mut c = Self { mode, ..Self::default() };
        let scenarios = kv.list("scenario");
        if scenarios.iter().any(|s| s == "all") {
            c.scenarios = Scenario::benchmark_set();
        } else if !scenarios.is_empty() {
            c.scenarios = scenarios.iter().map(|s| s.parse()).collect::<Result<_>>()?;
        }
        if kv.parse_or("full_scale", false)? {
            c.scenario = ScenarioConfig::full_scale(c.scenarios[0]);
        }
        let s = &mut c.scenario;
        s.m = kv.parse_or("m", s.m)?;
        s.k = kv.parse_or("k", s.k)?;
        s.n_train = kv.parse_or("n_train", s.n_train)?;
        s.n_test = kv.parse_or("n_test", s.n_test)?;
        s.beta_range = kv.parse_or("beta_range", s.beta_range)?;
        s.nu_range = kv.parse_or("nu_range", s.nu_range)?;
        s.tau_range = match kv.get("tau_range") {
            Some(v) => v.parse()?,
            None => Interval::new(1.0, s.m as f64),
        };
        s.eig_range = kv.parse_or("eig_range", s.eig_range)?;
        c.scenario.set_scenario(c.scenarios[0]);

        c.dataset_path = kv.get("data").map(PathBuf::from);
        c.schema_path = kv.get("schema").map(PathBuf::from);
        c.train_fraction = kv.parse_or("train_fraction", c.train_fraction)?;
        let methods = kv.list("methods");
        if !methods.is_empty() && !methods.iter().any(|m| m == "all") {
            c.methods = methods.iter().map(|m| m.parse()).collect::<Result<_>>()?;
        }
        let center_source = match c.mode {
            Mode::Synthetic => CenterSource::GroundTruth,
            Mode::Real => CenterSource::EmpiricalClassMean,
        };
        let contaminate_test = kv.parse_or("contaminate_test", false)?;
        if let Some(spec) = kv.get("contamination") {
            let mut spec: ContaminationSpec = spec.parse()?;
            spec.center_source = center_source;
            spec.apply_to_test = contaminate_test;
            c.contamination = Some(spec);
        }
        if let Some(range) = kv.get("sweep") {
            let lambda = kv
                .parse_opt("lambda")?
                .ok_or_else(|| FemdaError::ConfigInvalid("sweep needs lambda".into()))?;
            c.sweep = Some(Sweep::parse_range(range, lambda)?);
        }
        c.repetitions = kv.parse_or("reps", c.repetitions)?;
        c.resplit_every = kv.parse_or("resplit_every", c.resplit_every)?;
        c.master_seed = kv.parse_or("seed", c.master_seed)?;
        c.fixed_params = kv.parse_or("fixed_params", c.fixed_params)?;
        c.settings.tol = kv.parse_or("tol", c.settings.tol)?;
        c.settings.femda_max_iter = kv.parse_or("max_iter", c.settings.femda_max_iter)?;
        c.settings.student_max_iter = kv.parse_or("student_max_iter", c.settings.student_max_iter)?;
        c.output_dir = kv.get("out").map(PathBuf::from);
        if c.sweep.is_some() && c.contamination.is_some() {
            return Err(FemdaError::ConfigInvalid(
                "give either contamination or sweep, not both".into(),
            ));
        }
        c.validate()?;
        Ok(c)
    }

    /// Flat key-value form readable by [`ExperimentConfig::from_kv`].
    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.set("mode", match self.mode {
            Mode::Synthetic => "synthetic",
            Mode::Real => "real",
        });
        let join = |v: Vec<String>| v.join(", ");
        kv.set("scenario", join(self.scenarios.iter().map(ToString::to_string).collect()));
        let s = &self.scenario;
        kv.set("m", s.m);
        kv.set("k", s.k);
        kv.set("n_train", s.n_train);
        kv.set("n_test", s.n_test);
        kv.set("beta_range", s.beta_range);
        kv.set("nu_range", s.nu_range);
        kv.set("tau_range", s.tau_range);
        kv.set("eig_range", s.eig_range);
        if let Some(p) = &self.dataset_path {
            kv.set("data", p.display());
        }
        if let Some(p) = &self.schema_path {
            kv.set("schema", p.display());
        }
        kv.set("train_fraction", self.train_fraction);
        kv.set("methods", join(self.methods.iter().map(|m| m.name().to_string()).collect()));
        if let Some(spec) = &self.contamination {
            kv.set("contamination", spec);
            kv.set("contaminate_test", spec.apply_to_test);
        }
        if let Some(sweep) = &self.sweep {
            let f = &sweep.fractions;
            let step = if f.len() > 1 { f[1] - f[0] } else { 1.0 };
            kv.set("sweep", format!("{}:{}:{}", f[0], f[f.len() - 1], step));
            kv.set("lambda", sweep.lambda);
        }
        kv.set("reps", self.repetitions);
        kv.set("resplit_every", self.resplit_every);
        kv.set("seed", self.master_seed);
        kv.set("fixed_params", self.fixed_params);
        kv.set("tol", self.settings.tol);
        kv.set("max_iter", self.settings.femda_max_iter);
        kv.set("student_max_iter", self.settings.student_max_iter);
        if let Some(p) = &self.output_dir {
            kv.set("out", p.display());
        }
        kv
    }

    pub fn validate(&self) -> Result<()> {
        let err = |s: &str| Err(FemdaError::ConfigInvalid(s.into()));
        if self.repetitions == 0 {
            return err("repetitions must be at least 1");
        }
        if self.resplit_every == 0 {
            return err("resplit_every must be at least 1");
        }
        if self.methods.is_empty() {
            return err("no methods selected");
        }
        if self.scenarios.is_empty() {
            return err("no scenarios selected");
        }
        if let Some(spec) = &self.contamination {
            spec.validate()?;
        }
        if let Some(sweep) = &self.sweep {
            sweep.validate()?;
        }
        match self.mode {
            Mode::Synthetic => {
                for &sc in &self.scenarios {
                    let mut s = self.scenario.clone();
                    s.set_scenario(sc);
                    s.validate()?;
                }
            }
            Mode::Real => {
                if self.dataset_path.is_none() && self.schema_path.is_none() {
                    return err("real mode needs a dataset or schema path");
                }
                if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
                    return err("train_fraction must lie in (0, 1)");
                }
            }
        }
        Ok(())
    }

    /// `(fraction, lambda)` pairs evaluated in each repetition.
    fn contamination_points(&self) -> Vec<(f64, f64)> {
        match (&self.sweep, &self.contamination) {
            (Some(s), _) => s.fractions.iter().map(|&f| (f, s.lambda)).collect(),
            (None, Some(c)) => vec![(c.fraction, c.lambda)],
            (None, None) => vec![(0.0, 1.0)],
        }
    }

    fn contamination_template(&self) -> ContaminationSpec {
        self.contamination.unwrap_or(ContaminationSpec {
            fraction: 0.0,
            lambda: 1.0,
            center_source: match self.mode {
                Mode::Synthetic => CenterSource::GroundTruth,
                Mode::Real => CenterSource::EmpiricalClassMean,
            },
            seed: 0,
            apply_to_test: false,
        })
    }
}

/// Outcome of one method in one repetition at one contamination level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepRecord {
    pub scenario: String,
    pub method: Method,
    pub repetition: usize,
    pub split: usize,
    pub fraction: f64,
    pub lambda: f64,
    pub accuracy: Option<f64>,
    pub fit_seconds: f64,
    pub convergence_failures: usize,
    pub data_seed: u64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub scenario: String,
    pub method: Method,
    pub fraction: f64,
    pub lambda: f64,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub median_accuracy: f64,
    pub repetitions: usize,
    pub failed_repetitions: usize,
    pub mean_fit_seconds: f64,
    pub convergence_failures: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ResultsTable {
    pub rows: Vec<ResultRow>,
    pub records: Vec<RepRecord>,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (zero for a single value).
fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let mu = mean(xs);
    (xs.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

impl ResultsTable {
    /// Aggregates per-repetition records; rows follow the first appearance of each
    /// (scenario, fraction, λ, method) group.
    pub fn from_records(records: Vec<RepRecord>) -> Self {
        let mut order: Vec<(String, u64, u64, Method)> = Vec::new();
        let mut groups: BTreeMap<usize, Vec<&RepRecord>> = BTreeMap::new();
        for r in &records {
            let key = (r.scenario.clone(), r.fraction.to_bits(), r.lambda.to_bits(), r.method);
            let idx = match order.iter().position(|k| *k == key) {
                Some(i) => i,
                None => {
                    order.push(key);
                    order.len() - 1
                }
            };
            groups.entry(idx).or_default().push(r);
        }
        let rows = groups
            .into_values()
            .map(|g| {
                let ok: Vec<f64> = g.iter().filter_map(|r| r.accuracy).collect();
                let times: Vec<f64> = g.iter().filter(|r| r.accuracy.is_some()).map(|r| r.fit_seconds).collect();
                let nan_if_empty = |f: fn(&[f64]) -> f64, v: &[f64]| if v.is_empty() { f64::NAN } else { f(v) };
                ResultRow {
                    scenario: g[0].scenario.clone(),
                    method: g[0].method,
                    fraction: g[0].fraction,
                    lambda: g[0].lambda,
                    mean_accuracy: nan_if_empty(mean, &ok),
                    std_accuracy: nan_if_empty(std_dev, &ok),
                    median_accuracy: nan_if_empty(median, &ok),
                    repetitions: ok.len(),
                    failed_repetitions: g.len() - ok.len(),
                    mean_fit_seconds: nan_if_empty(mean, &times),
                    convergence_failures: g.iter().map(|r| r.convergence_failures).sum(),
                }
            })
            .collect();
        Self { rows, records }
    }

    pub fn row(&self, scenario: &str, method: Method, fraction: f64) -> Option<&ResultRow> {
        self.rows
            .iter()
            .find(|r| r.scenario == scenario && r.method == method && r.fraction == fraction)
    }

    pub fn append(&mut self, other: ResultsTable) {
        let mut records = std::mem::take(&mut self.records);
        records.extend(other.records);
        *self = Self::from_records(records);
    }
}

/// Trains and scores every method on one (train, test) pair.
fn evaluate_methods(
    config: &ExperimentConfig,
    train_set: &LabeledDataset,
    test_set: &LabeledDataset,
    template: RepRecord,
) -> Vec<RepRecord> {
    config
        .methods
        .iter()
        .map(|&method| {
            let start = Instant::now();
            let fitted = train(method, train_set, &config.settings);
            let fit_seconds = start.elapsed().as_secs_f64();
            let outcome = fitted.and_then(|model| Ok((accuracy(&model, test_set)?, model.convergence_failures())));
            let (accuracy, convergence_failures, error) = match outcome {
                Ok((a, f)) => (Some(a), f, None),
                Err(e) => (None, 0, Some(tagged(template.repetition, e))),
            };
            RepRecord {
                method,
                accuracy,
                fit_seconds,
                convergence_failures,
                error,
                ..template.clone()
            }
        })
        .collect()
}

fn tagged(rep: usize, e: FemdaError) -> String {
    FemdaError::Repetition {
        rep,
        source: Box::new(e),
    }
    .to_string()
}

fn failed_records(config: &ExperimentConfig, template: RepRecord, message: String) -> Vec<RepRecord> {
    config
        .contamination_points()
        .into_iter()
        .flat_map(|(fraction, lambda)| {
            let message = message.clone();
            let template = template.clone();
            config.methods.iter().map(move |&method| RepRecord {
                method,
                fraction,
                lambda,
                error: Some(message.clone()),
                ..template.clone()
            })
        })
        .collect()
}

/// Contaminates the training split (and the test split if requested) at each level and
/// evaluates every method.
fn run_levels(
    config: &ExperimentConfig,
    train_set: &LabeledDataset,
    test_set: &LabeledDataset,
    centers: &[Option<Observation>],
    contamination_seed: u64,
    template: RepRecord,
) -> Vec<RepRecord> {
    let base = config.contamination_template();
    let mut out = Vec::new();
    for (fraction, lambda) in config.contamination_points() {
        let template = RepRecord {
            fraction,
            lambda,
            ..template.clone()
        };
        let spec = ContaminationSpec {
            fraction,
            lambda,
            ..base
        };
        let mut rng = ChaCha8Rng::seed_from_u64(contamination_seed ^ spec.seed);
        let sets = if fraction == 0.0 || lambda == 1.0 {
            Ok((train_set.clone(), test_set.clone()))
        } else {
            contaminate(train_set, centers, &spec, &mut rng).and_then(|(tr, _)| {
                let te = if spec.apply_to_test {
                    contaminate(test_set, centers, &spec, &mut rng)?.0
                } else {
                    test_set.clone()
                };
                Ok((tr, te))
            })
        };
        match sets {
            Ok((tr, te)) => out.extend(evaluate_methods(config, &tr, &te, template)),
            Err(e) => {
                let message = tagged(template.repetition, e);
                out.extend(config.methods.iter().map(|&method| RepRecord {
                    method,
                    error: Some(message.clone()),
                    ..template.clone()
                }))
            }
        }
    }
    out
}

/// Synthetic benchmark: a fresh scenario draw per repetition (or fixed parameters),
/// optional contamination of the training split, evaluation on the clean test split.
pub fn run_synthetic(config: &ExperimentConfig) -> Result<ResultsTable> {
    config.validate()?;
    let tasks: Vec<(Scenario, usize)> = config
        .scenarios
        .iter()
        .flat_map(|&s| (0..config.repetitions).map(move |r| (s, r)))
        .collect();
    let per_task: Vec<Vec<RepRecord>> = tasks
        .par_iter()
        .map(|&(scenario, rep)| synthetic_repetition(config, scenario, rep))
        .collect();
    Ok(ResultsTable::from_records(per_task.into_iter().flatten().collect()))
}

fn synthetic_repetition(config: &ExperimentConfig, scenario: Scenario, rep: usize) -> Vec<RepRecord> {
    let label = scenario.to_string();
    let stream = config.master_seed ^ label_hash(&label);
    let data_seed = derive_seed(stream, TAG_DATA, rep as u64);
    let template = RepRecord {
        scenario: label,
        method: config.methods[0],
        repetition: rep,
        split: rep,
        fraction: 0.0,
        lambda: 1.0,
        accuracy: None,
        fit_seconds: 0.0,
        convergence_failures: 0,
        data_seed,
        error: None,
    };
    let mut sc = config.scenario.clone();
    sc.set_scenario(scenario);
    sc.seed = data_seed;
    let params_seed = if config.fixed_params {
        derive_seed(stream, TAG_PARAMS, 0)
    } else {
        derive_seed(stream, TAG_PARAMS, rep as u64)
    };
    let drawn = generate_cluster_params(&sc, &mut ChaCha8Rng::seed_from_u64(params_seed))
        .and_then(|truth| generate_scenario_with_params(&sc, truth, &mut ChaCha8Rng::seed_from_u64(data_seed)));
    match drawn {
        Ok(data) => {
            let centers: Vec<Option<Observation>> = match config.contamination_template().center_source {
                CenterSource::GroundTruth => data.truth.iter().map(|p| Some(p.mean.clone())).collect(),
                CenterSource::EmpiricalClassMean => data.train.class_means(),
            };
            let contamination_seed = derive_seed(stream, TAG_CONTAMINATION, rep as u64);
            run_levels(config, &data.train, &data.test, &centers, contamination_seed, template)
        }
        Err(e) => {
            let message = tagged(rep, e);
            failed_records(config, template, message)
        }
    }
}

/// Real-data benchmark on an already preprocessed dataset. Repetitions `b·B … b·B + B − 1`
/// share split `b`, where `B = resplit_every`.
pub fn run_real_on(config: &ExperimentConfig, name: &str, data: &LabeledDataset) -> Result<ResultsTable> {
    config.validate()?;
    let splits = config.repetitions.div_ceil(config.resplit_every);
    let split_sets: Vec<Result<(LabeledDataset, LabeledDataset)>> = (0..splits)
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.master_seed, TAG_SPLIT, b as u64));
            stratified_split(data, config.train_fraction, &mut rng)
        })
        .collect();
    let per_rep: Vec<Vec<RepRecord>> = (0..config.repetitions)
        .into_par_iter()
        .map(|rep| {
            let split = rep / config.resplit_every;
            let template = RepRecord {
                scenario: name.to_string(),
                method: config.methods[0],
                repetition: rep,
                split,
                fraction: 0.0,
                lambda: 1.0,
                accuracy: None,
                fit_seconds: 0.0,
                convergence_failures: 0,
                data_seed: derive_seed(config.master_seed, TAG_SPLIT, split as u64),
                error: None,
            };
            match &split_sets[split] {
                Ok((train_set, test_set)) => {
                    let centers = train_set.class_means();
                    let seed = derive_seed(config.master_seed, TAG_CONTAMINATION, rep as u64);
                    run_levels(config, train_set, test_set, &centers, seed, template)
                }
                Err(e) => failed_records(config, template, format!("repetition {rep}: {e}")),
            }
        })
        .collect();
    Ok(ResultsTable::from_records(per_rep.into_iter().flatten().collect()))
}

/// Loads the dataset named by the config's schema (or raw CSV path) and runs it.
pub fn run_real(config: &ExperimentConfig) -> Result<ResultsTable> {
    config.validate()?;
    let (data, name) = load_real(config)?;
    run_real_on(config, &name, &data)
}

/// Resolves the dataset of a real-mode config.
pub fn load_real(config: &ExperimentConfig) -> Result<(LabeledDataset, String)> {
    let schema = match &config.schema_path {
        Some(p) => DatasetSchema::from_file(p)?,
        None => DatasetSchema::from_kv(&KeyValues::new())?,
    };
    let path = match (&config.dataset_path, &config.schema_path) {
        (Some(d), _) => d.clone(),
        (None, Some(s)) => schema
            .resolve_data_path(s)
            .ok_or_else(|| FemdaError::ConfigInvalid("schema names no data file".into()))?,
        (None, None) => return Err(FemdaError::ConfigInvalid("no dataset given".into())),
    };
    let (data, _) = load_with_schema(&path, &schema)?;
    let name = if config.schema_path.is_none() {
        path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
    } else {
        schema.name.clone()
    };
    Ok((data, name))
}

pub fn run(config: &ExperimentConfig) -> Result<ResultsTable> {
    match config.mode {
        Mode::Synthetic => run_synthetic(config),
        Mode::Real => run_real(config),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Markdown,
    JsonPlot,
}

impl std::str::FromStr for ReportFormat {
    type Err = FemdaError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Self::Csv),
            "markdown" | "md" => Ok(Self::Markdown),
            "json-plot" | "json" => Ok(Self::JsonPlot),
            _ => Err(FemdaError::ConfigInvalid(format!("unknown report format '{s}'"))),
        }
    }
}

pub const REPS_FILE: &str = "reps.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const CONFIG_FILE: &str = "config.kv";

fn opt_f64(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

pub fn write_records_csv(records: &[RepRecord], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "scenario",
        "method",
        "repetition",
        "split",
        "fraction",
        "lambda",
        "accuracy",
        "fit_seconds",
        "convergence_failures",
        "data_seed",
        "error",
    ])?;
    for r in records {
        w.write_record([
            r.scenario.clone(),
            r.method.name().to_string(),
            r.repetition.to_string(),
            r.split.to_string(),
            r.fraction.to_string(),
            r.lambda.to_string(),
            opt_f64(r.accuracy),
            r.fit_seconds.to_string(),
            r.convergence_failures.to_string(),
            r.data_seed.to_string(),
            r.error.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records_csv(path: &Path) -> Result<Vec<RepRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for (i, row) in r.records().enumerate() {
        let row = row?;
        let line = i + 2;
        let field = |j: usize| row.get(j).unwrap_or("");
        let num = |j: usize| -> Result<f64> {
            field(j).parse().map_err(|_| FemdaError::Parse {
                line,
                column: j + 1,
                message: format!("not a number: '{}'", field(j)),
            })
        };
        let int = |j: usize| -> Result<u64> {
            field(j).parse().map_err(|_| FemdaError::Parse {
                line,
                column: j + 1,
                message: format!("not an integer: '{}'", field(j)),
            })
        };
        out.push(RepRecord {
            scenario: field(0).to_string(),
            method: field(1).parse()?,
            repetition: int(2)? as usize,
            split: int(3)? as usize,
            fraction: num(4)?,
            lambda: num(5)?,
            accuracy: if field(6).is_empty() { None } else { Some(num(6)?) },
            fit_seconds: num(7)?,
            convergence_failures: int(8)? as usize,
            data_seed: int(9)?,
            error: Some(field(10)).filter(|e| !e.is_empty()).map(str::to_string),
        });
    }
    Ok(out)
}

pub fn write_summary_csv(rows: &[ResultRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "scenario",
        "method",
        "fraction",
        "lambda",
        "mean_accuracy",
        "std_accuracy",
        "median_accuracy",
        "repetitions",
        "failed_repetitions",
        "mean_fit_seconds",
        "convergence_failures",
    ])?;
    for r in rows {
        w.write_record([
            r.scenario.clone(),
            r.method.name().to_string(),
            r.fraction.to_string(),
            r.lambda.to_string(),
            r.mean_accuracy.to_string(),
            r.std_accuracy.to_string(),
            r.median_accuracy.to_string(),
            r.repetitions.to_string(),
            r.failed_repetitions.to_string(),
            r.mean_fit_seconds.to_string(),
            r.convergence_failures.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_summary_csv(path: &Path) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for (i, row) in r.records().enumerate() {
        let row = row?;
        let field = |j: usize| row.get(j).unwrap_or("");
        let num = |j: usize| -> Result<f64> {
            field(j).parse().map_err(|_| FemdaError::Parse {
                line: i + 2,
                column: j + 1,
                message: format!("not a number: '{}'", field(j)),
            })
        };
        out.push(ResultRow {
            scenario: field(0).to_string(),
            method: field(1).parse()?,
            fraction: num(2)?,
            lambda: num(3)?,
            mean_accuracy: num(4)?,
            std_accuracy: num(5)?,
            median_accuracy: num(6)?,
            repetitions: num(7)? as usize,
            failed_repetitions: num(8)? as usize,
            mean_fit_seconds: num(9)?,
            convergence_failures: num(10)? as usize,
        });
    }
    Ok(out)
}

/// Tables in percentage points: per (fraction, λ) block one line per scenario, the best
/// method's mean accuracy in bold and every other method as a signed difference.
pub fn markdown_report(rows: &[ResultRow]) -> String {
    let mut methods: Vec<Method> = Vec::new();
    let mut blocks: Vec<(u64, u64)> = Vec::new();
    let mut scenarios: Vec<&str> = Vec::new();
    for r in rows {
        if !methods.contains(&r.method) {
            methods.push(r.method);
        }
        let b = (r.fraction.to_bits(), r.lambda.to_bits());
        if !blocks.contains(&b) {
            blocks.push(b);
        }
        if !scenarios.contains(&r.scenario.as_str()) {
            scenarios.push(&r.scenario);
        }
    }
    let mut out = String::new();
    for (fb, lb) in blocks {
        let (fraction, lambda) = (f64::from_bits(fb), f64::from_bits(lb));
        if fraction == 0.0 || lambda == 1.0 {
            let _ = writeln!(out, "### clean\n");
        } else {
            let _ = writeln!(out, "### contamination {:.0}% at λ = {}\n", 100.0 * fraction, lambda);
        }
        let _ = write!(out, "| scenario |");
        for m in &methods {
            let _ = write!(out, " {m} |");
        }
        let _ = write!(out, "\n|---|");
        for _ in &methods {
            let _ = write!(out, "---:|");
        }
        out.push('\n');
        for s in &scenarios {
            let cells: Vec<Option<f64>> = methods
                .iter()
                .map(|&m| {
                    rows.iter()
                        .find(|r| r.scenario == *s && r.method == m && r.fraction.to_bits() == fb && r.lambda.to_bits() == lb)
                        .map(|r| 100.0 * r.mean_accuracy)
                        .filter(|a| a.is_finite())
                })
                .collect();
            let best = cells.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
            let _ = write!(out, "| {s} |");
            for c in &cells {
                match c {
                    None => {
                        let _ = write!(out, " n/a |");
                    }
                    Some(a) if *a == best => {
                        let _ = write!(out, " **{a:.2}** |");
                    }
                    Some(a) => {
                        let _ = write!(out, " {:+.2} |", a - best);
                    }
                }
            }
            out.push('\n');
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotSeries {
    pub scenario: String,
    pub lambda: f64,
    pub fractions: Vec<f64>,
    /// Mean and median accuracy per fraction, keyed by method name.
    pub mean: BTreeMap<String, Vec<f64>>,
    pub median: BTreeMap<String, Vec<f64>>,
}

/// Accuracy-versus-fraction series per scenario and λ.
pub fn plot_series(rows: &[ResultRow]) -> Vec<PlotSeries> {
    let mut out: Vec<PlotSeries> = Vec::new();
    for r in rows {
        let idx = match out.iter().position(|p| p.scenario == r.scenario && p.lambda == r.lambda) {
            Some(i) => i,
            None => {
                out.push(PlotSeries {
                    scenario: r.scenario.clone(),
                    lambda: r.lambda,
                    fractions: Vec::new(),
                    mean: BTreeMap::new(),
                    median: BTreeMap::new(),
                });
                out.len() - 1
            }
        };
        let p = &mut out[idx];
        if !p.fractions.contains(&r.fraction) {
            p.fractions.push(r.fraction);
        }
        p.mean.entry(r.method.name().to_string()).or_default().push(r.mean_accuracy);
        p.median.entry(r.method.name().to_string()).or_default().push(r.median_accuracy);
    }
    out
}

/// Writes the requested report into `dir` and returns its path.
pub fn emit_report(table: &ResultsTable, format: ReportFormat, dir: &Path) -> Result<PathBuf> {
    if table.rows.is_empty() {
        return Err(FemdaError::EmptyDataset);
    }
    std::fs::create_dir_all(dir)?;
    let path = match format {
        ReportFormat::Csv => {
            let path = dir.join(SUMMARY_FILE);
            write_summary_csv(&table.rows, &path)?;
            if !table.records.is_empty() {
                write_records_csv(&table.records, &dir.join(REPS_FILE))?;
            }
            path
        }
        ReportFormat::Markdown => {
            let path = dir.join("summary.md");
            std::fs::write(&path, markdown_report(&table.rows))?;
            path
        }
        ReportFormat::JsonPlot => {
            let path = dir.join("plot.json");
            std::fs::write(&path, serde_json::to_string_pretty(&plot_series(&table.rows))?)?;
            path
        }
    };
    Ok(path)
}

/// Writes reps.csv, summary.csv, summary.md and the config used.
pub fn write_outputs(table: &ResultsTable, config: &ExperimentConfig, dir: &Path) -> Result<()> {
    emit_report(table, ReportFormat::Csv, dir)?;
    emit_report(table, ReportFormat::Markdown, dir)?;
    if config.sweep.is_some() {
        emit_report(table, ReportFormat::JsonPlot, dir)?;
    }
    std::fs::write(dir.join(CONFIG_FILE), config.to_kv().to_string())?;
    Ok(())
}

/// Re-aggregates the per-repetition CSV in `dir`.
pub fn load_results(dir: &Path) -> Result<ResultsTable> {
    Ok(ResultsTable::from_records(read_records_csv(&dir.join(REPS_FILE))?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(scenario: &str, method: Method, rep: usize, acc: Option<f64>) -> RepRecord {
        RepRecord {
            scenario: scenario.into(),
            method,
            repetition: rep,
            split: rep,
            fraction: 0.0,
            lambda: 1.0,
            accuracy: acc,
            fit_seconds: 0.5,
            convergence_failures: 0,
            data_seed: 7,
            error: acc.is_none().then(|| "boom".to_string()),
        }
    }

    #[test]
    fn seeds_are_stable_and_distinct() {
        assert_eq!(derive_seed(1, TAG_DATA, 0), derive_seed(1, TAG_DATA, 0));
        assert_ne!(derive_seed(1, TAG_DATA, 0), derive_seed(1, TAG_DATA, 1));
        assert_ne!(derive_seed(1, TAG_DATA, 0), derive_seed(1, TAG_SPLIT, 0));
        assert_ne!(derive_seed(1, TAG_DATA, 0), derive_seed(2, TAG_DATA, 0));
        // reference value of splitmix64 from seed 0
        assert_eq!(splitmix64(0), 0xE220_A839_7B1D_CDAF);
    }

    #[test]
    fn sweep_range_parsing() {
        let s = Sweep::parse_range("0:0.6:0.1", 5.0).unwrap();
        assert_eq!(s.fractions, vec![0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6]);
        assert!(Sweep::parse_range("0:1.5:0.5", 5.0).is_err());
        assert!(Sweep::parse_range("0:1", 5.0).is_err());
        assert!(Sweep::parse_range("0:0.5:0.1", 0.0).is_err());
    }

    #[test]
    fn aggregation() {
        let records = vec![
            record("a", Method::Qda, 0, Some(0.5)),
            record("a", Method::Femda, 0, Some(0.7)),
            record("a", Method::Qda, 1, Some(0.7)),
            record("a", Method::Femda, 1, None),
            record("a", Method::Qda, 2, Some(0.9)),
        ];
        let t = ResultsTable::from_records(records);
        assert_eq!(t.rows.len(), 2);
        let q = &t.rows[0];
        assert_eq!(q.method, Method::Qda);
        assert!((q.mean_accuracy - 0.7).abs() < 1e-15);
        assert!((q.std_accuracy - 0.2).abs() < 1e-15);
        assert_eq!(q.median_accuracy, 0.7);
        let f = &t.rows[1];
        assert_eq!((f.repetitions, f.failed_repetitions), (1, 1));
    }

    #[test]
    fn markdown_marks_best_and_deltas() {
        let t = ResultsTable::from_records(vec![
            record("green:1GG-0T", Method::Tqda, 0, Some(0.7627)),
            record("green:1GG-0T", Method::Femda, 0, Some(0.7625)),
        ]);
        let md = markdown_report(&t.rows);
        assert!(md.contains("**76.27**"), "{md}");
        assert!(md.contains("-0.02"), "{md}");
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let records = vec![
            record("x", Method::Gqda, 0, Some(0.123_456_789_012_345_68)),
            record("x", Method::Rgqda, 0, None),
        ];
        let path = dir.path().join(REPS_FILE);
        write_records_csv(&records, &path).unwrap();
        assert_eq!(read_records_csv(&path).unwrap(), records);
        let t = ResultsTable::from_records(records);
        let spath = dir.path().join(SUMMARY_FILE);
        write_summary_csv(&t.rows, &spath).unwrap();
        let back = read_summary_csv(&spath).unwrap();
        assert_eq!(back[0], t.rows[0]);
        assert_eq!(back[1].repetitions, 0);
        assert!(back[1].mean_accuracy.is_nan());
    }

    #[test]
    fn config_kv_round_trip() {
        let kv: KeyValues = "mode = synthetic\nscenario = red:0.5GG-0.5T, green:1GG-0T\nm = 4\nk = 3\nn_train = 300\nn_test = 500\nsweep = 0:0.4:0.2\nlambda = 5\nreps = 2\nseed = 11\nmethods = QDA, FEMDA\n"
            .parse()
            .unwrap();
        let c = ExperimentConfig::from_kv(&kv).unwrap();
        assert_eq!(c.scenarios.len(), 2);
        assert_eq!(c.scenario.tau_range, Interval::new(1.0, 4.0));
        assert_eq!(c.sweep.as_ref().unwrap().fractions, vec![0.0, 0.2, 0.4]);
        let again = ExperimentConfig::from_kv(&c.to_kv()).unwrap();
        assert_eq!(again, c);
        let bad: KeyValues = "reps = 0".parse().unwrap();
        assert!(ExperimentConfig::from_kv(&bad).is_err());
        let unknown: KeyValues = "colour = red".parse().unwrap();
        assert!(ExperimentConfig::from_kv(&unknown).is_err());
    }
}
