//! Acceptance suite. Every test writes one `criterion N: PASS|FAIL ...` line to stderr
//! (bypassing output capture) and then asserts.

use std::io::Write;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use femda::bench::{
    load_results, read_summary_csv, run_real, run_synthetic, write_outputs, ExperimentConfig,
    Mode, RepRecord, Sweep, REPS_FILE, SUMMARY_FILE,
};
use femda::classifiers::{argmin, classify, qda_score, tqda_score};
use femda::contamination::{CenterSource, ContaminationSpec};
use femda::distributions::{
    sample_generalized_gaussian, sample_multivariate_t, Scenario, ScenarioConfig,
};
use femda::estimators::{fit_student, femda_mean_update, femda_scatter_update, StudentEmOptions};
use femda::linalg::{random_spd, sample_unit_sphere};
use femda::{train, ClusterParams, LabeledDataset, Method, Observation, SpdMatrix, TrainSettings, TrainedModel};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn report(criterion: u32, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "criterion {criterion}: {verdict} {detail}");
}

fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

fn gaussian_cloud(rng: &mut ChaCha8Rng, mean: &Observation, cov: &SpdMatrix, n: usize) -> Vec<Observation> {
    (0..n)
        .map(|_| {
            let z = DVector::from_fn(mean.len(), |_, _| StandardNormal.sample(rng));
            mean + cov.apply_sqrt(&z)
        })
        .collect()
}

/// Heavy-tailed labelled data with K classes in dimension m.
fn heavy_tailed_classes(rng: &mut ChaCha8Rng, k: usize, m: usize, n_per: usize) -> LabeledDataset {
    let mut points = Vec::new();
    let mut labels = Vec::new();
    for c in 0..k {
        let mean = sample_unit_sphere(m, rng) * 2.0;
        let cov = random_spd(m, (0.2, 3.0), rng).unwrap();
        for _ in 0..n_per {
            let tau = rng.random_range(1.0..m as f64);
            points.push(sample_multivariate_t(&mean, &cov, 3.0, tau, rng).unwrap());
            labels.push(c);
        }
    }
    LabeledDataset::new(
        points,
        labels,
        (1..=k).map(|c| c.to_string()).collect(),
        (1..=m).map(|j| format!("x{j}")).collect(),
    )
    .unwrap()
}

#[test]
fn criterion_1_scale_invariance() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let m = 6;
    let mut failures = Vec::new();

    // μ-update under Σ → cΣ; powers of four keep every rescaling exact in binary
    let mut worst_mu = 0.0f64;
    for trial in 0..20 {
        let sigma = random_spd(m, (0.1, 5.0), &mut rng).unwrap();
        let mean = sample_unit_sphere(m, &mut rng);
        let points = gaussian_cloud(&mut rng, &mean, &sigma, 200);
        let params = ClusterParams::new(mean.clone(), sigma.clone()).unwrap();
        let base = femda_mean_update(&points, &params);
        for c in [0.25, 4.0, 1024.0] {
            let scaled = ClusterParams::new(mean.clone(), sigma.scaled(c)).unwrap();
            if femda_mean_update(&points, &scaled) != base {
                failures.push(format!("mean update changed at trial {trial}, c = {c}"));
            }
        }
        for c in [0.37, 3.1, 17.0] {
            let scaled = ClusterParams::new(mean.clone(), sigma.scaled(c)).unwrap();
            let diff = (femda_mean_update(&points, &scaled) - &base).norm() / base.norm().max(1.0);
            worst_mu = worst_mu.max(diff);
        }
    }
    if worst_mu > 1e-12 {
        failures.push(format!("mean update drift {worst_mu:e} for non-dyadic c"));
    }

    // Σ-update homogeneity F(λΣ) = λ F(Σ)
    let mut worst_sigma = 0.0f64;
    for _ in 0..20 {
        let sigma = random_spd(m, (0.1, 5.0), &mut rng).unwrap();
        let mean = sample_unit_sphere(m, &mut rng);
        let points = gaussian_cloud(&mut rng, &mean, &sigma, 200);
        let base = femda_scatter_update(&points, &ClusterParams::new(mean.clone(), sigma.clone()).unwrap());
        for lambda in [0.1, 1.0, 17.0] {
            let p = ClusterParams::new(mean.clone(), sigma.scaled(lambda)).unwrap();
            let rel = (femda_scatter_update(&points, &p) - &base * lambda).norm() / (&base * lambda).norm();
            worst_sigma = worst_sigma.max(rel);
        }
    }
    if worst_sigma > 1e-10 {
        failures.push(format!("scatter homogeneity error {worst_sigma:e}"));
    }

    // decisions unchanged by per-class rescaling of the dispersions
    let data = heavy_tailed_classes(&mut rng, 4, m, 150);
    let model = train(Method::Femda, &data, &TrainSettings::default()).unwrap();
    let factors: Vec<f64> = (0..4).map(|_| rng.random_range(-6.0f64..6.0).exp()).collect();
    let rescaled = model.with_rescaled_dispersions(&factors).unwrap();
    let mut flips = 0;
    for _ in 0..1000 {
        let x = DVector::from_fn(m, |_, _| rng.random_range(-6.0..6.0));
        if classify(&model, &x).unwrap() != classify(&rescaled, &x).unwrap() {
            flips += 1;
        }
    }
    if flips > 0 {
        failures.push(format!("{flips} decision flips"));
    }

    let elapsed = start.elapsed();
    if elapsed > Duration::from_secs(10) {
        failures.push(format!("took {:.1}s", elapsed.as_secs_f64()));
    }
    report(
        1,
        failures.is_empty(),
        &format!(
            "mean drift {worst_mu:.1e}, scatter homogeneity {worst_sigma:.1e}, {flips}/1000 flips, {:.2}s {}",
            elapsed.as_secs_f64(),
            failures.join("; ")
        ),
    );
    assert!(failures.is_empty(), "{failures:?}");
}

#[test]
fn criterion_2_oracle_equivalences() {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let m = 5;
    let data = heavy_tailed_classes(&mut rng, 3, m, 200);
    let qda = train(Method::Qda, &data, &TrainSettings::default()).unwrap();
    let gqda = TrainedModel::from_parts(
        Method::Gqda,
        qda.class_names().to_vec(),
        qda.params().to_vec(),
        None,
        Some(1.0),
    )
    .unwrap();
    let mut gqda_disagreements = 0;
    for _ in 0..10_000 {
        let x = DVector::from_fn(m, |_, _| 4.0 * rng.sample::<f64, _>(StandardNormal));
        if classify(&qda, &x).unwrap() != classify(&gqda, &x).unwrap() {
            gqda_disagreements += 1;
        }
    }

    let mut tqda_disagreements = 0;
    for _ in 0..100 {
        let k = rng.random_range(2..6);
        let dim = rng.random_range(1..8);
        let params: Vec<ClusterParams> = (0..k)
            .map(|_| {
                ClusterParams::new(
                    DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal)),
                    random_spd(dim, (0.2, 5.0), &mut rng).unwrap(),
                )
                .unwrap()
            })
            .collect();
        let names: Vec<String> = (0..k).map(|c| c.to_string()).collect();
        let q = TrainedModel::from_parts(Method::Qda, names.clone(), params.clone(), None, None).unwrap();
        let t = TrainedModel::from_parts(Method::Tqda, names, params, Some(vec![1e6; k]), None).unwrap();
        let x = DVector::from_fn(dim, |_, _| 2.0 * rng.sample::<f64, _>(StandardNormal));
        if argmin(&qda_score(&x, &q).unwrap()) != argmin(&tqda_score(&x, &t).unwrap()) {
            tqda_disagreements += 1;
        }
    }

    let mut em_runs = 0;
    let mut em_violations = 0;
    for run in 0..24 {
        let dim = 2 + run % 5;
        let mean = sample_unit_sphere(dim, &mut rng);
        let cov = random_spd(dim, (0.1, 4.0), &mut rng).unwrap();
        let points: Vec<Observation> = (0..300)
            .map(|i| match run % 3 {
                0 => sample_multivariate_t(&mean, &cov, 1.0 + run as f64 / 3.0, 1.0, &mut rng).unwrap(),
                1 => sample_generalized_gaussian(&mean, &cov, 0.3 + run as f64 / 4.0, 1.0, &mut rng).unwrap(),
                _ => {
                    let x = sample_multivariate_t(&mean, &cov, 30.0, 1.0, &mut rng).unwrap();
                    if i % 4 == 0 {
                        &mean + (x - &mean) * 8.0
                    } else {
                        x
                    }
                }
            })
            .collect();
        let fit = fit_student(&points, StudentEmOptions::default()).unwrap();
        em_runs += 1;
        let ll = &fit.log_likelihood;
        if ll.windows(2).any(|w| w[1] < w[0] - 1e-8 * w[0].abs().max(1.0)) {
            em_violations += 1;
        }
    }

    let pass = gqda_disagreements == 0 && tqda_disagreements == 0 && em_violations == 0;
    report(
        2,
        pass,
        &format!(
            "GQDA(c=1) vs QDA {gqda_disagreements}/10000 disagreements, t-QDA(ν=1e6) vs QDA {tqda_disagreements}/100, EM monotonicity violated in {em_violations}/{em_runs} runs"
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_3_sampler_statistics() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let m = 10;
    let zero = DVector::zeros(m);
    let identity = SpdMatrix::identity(m);
    let draws = 100_000;
    let gg_mean = (0..draws)
        .map(|_| sample_generalized_gaussian(&zero, &identity, 1.0, 1.0, &mut rng).unwrap().norm_squared())
        .sum::<f64>()
        / draws as f64;
    let nu = 5.0;
    let t_mean = (0..draws)
        .map(|_| sample_multivariate_t(&zero, &identity, nu, 1.0, &mut rng).unwrap().norm_squared())
        .sum::<f64>()
        / draws as f64;
    let gg_err = (gg_mean / m as f64 - 1.0).abs();
    let t_target = m as f64 * nu / (nu - 2.0);
    let t_err = (t_mean / t_target - 1.0).abs();
    let elapsed = start.elapsed();
    let pass = gg_err < 0.02 && t_err < 0.03 && elapsed < Duration::from_secs(30);
    report(
        3,
        pass,
        &format!(
            "GG(β=1) mean t {gg_mean:.3} vs {m} ({:.2}%), t(ν=5) mean t {t_mean:.3} vs {t_target:.3} ({:.2}%), {:.1}s",
            100.0 * gg_err,
            100.0 * t_err,
            elapsed.as_secs_f64()
        ),
    );
    assert!(pass);
}

fn full_scale_config(contamination: Option<ContaminationSpec>) -> ExperimentConfig {
    let scenarios = Scenario::benchmark_set();
    ExperimentConfig {
        mode: Mode::Synthetic,
        scenario: ScenarioConfig::full_scale(scenarios[0]),
        scenarios,
        methods: vec![Method::Tqda, Method::Femda],
        contamination,
        repetitions: 5,
        ..ExperimentConfig::default()
    }
}

fn mean_of(table: &femda::bench::ResultsTable, scenario: &str, method: Method, fraction: f64) -> f64 {
    table.row(scenario, method, fraction).expect("row present").mean_accuracy * 100.0
}

#[test]
fn criterion_4_clean_scenarios() {
    let start = Instant::now();
    let table = run_synthetic(&full_scale_config(None)).unwrap();
    let elapsed = start.elapsed();
    let green = Scenario::benchmark_set()[0].to_string();
    let tqda_green = mean_of(&table, &green, Method::Tqda, 0.0);
    let level_ok = (tqda_green - 76.27).abs() <= 2.0;
    let mut gaps = Vec::new();
    for s in Scenario::benchmark_set() {
        let label = s.to_string();
        let gap = mean_of(&table, &label, Method::Femda, 0.0) - mean_of(&table, &label, Method::Tqda, 0.0);
        gaps.push((label, gap));
    }
    let gaps_ok = gaps.iter().all(|(_, g)| g.abs() <= 1.0);
    let time_ok = elapsed < Duration::from_secs(15 * 60);
    let pass = level_ok && gaps_ok && time_ok;
    let gap_text: Vec<String> = gaps.iter().map(|(s, g)| format!("{s} {g:+.2}")).collect();
    report(
        4,
        pass,
        &format!(
            "t-QDA green 1-0 {tqda_green:.2}% (target 76.27 ± 2.0: {}), FEMDA - t-QDA [{}] (|gap| ≤ 1: {}), {:.0}s",
            if level_ok { "ok" } else { "out" },
            gap_text.join(", "),
            if gaps_ok { "ok" } else { "out" },
            elapsed.as_secs_f64()
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_5_contaminated_scenarios() {
    let start = Instant::now();
    let spec = ContaminationSpec {
        center_source: CenterSource::GroundTruth,
        ..ContaminationSpec::new(0.25, 8.0).unwrap()
    };
    let table = run_synthetic(&full_scale_config(Some(spec))).unwrap();
    let elapsed = start.elapsed();
    let mut diffs = Vec::new();
    for s in Scenario::benchmark_set() {
        let label = s.to_string();
        let d = mean_of(&table, &label, Method::Femda, 0.25) - mean_of(&table, &label, Method::Tqda, 0.25);
        diffs.push((label, d));
    }
    let never_far_behind = diffs.iter().all(|(_, d)| *d >= -0.1);
    let strictly_ahead = diffs.iter().filter(|(_, d)| *d > 0.0).count();
    let time_ok = elapsed < Duration::from_secs(20 * 60);
    let pass = never_far_behind && strictly_ahead >= 4 && time_ok;
    let text: Vec<String> = diffs.iter().map(|(s, d)| format!("{s} {d:+.2}")).collect();
    report(
        5,
        pass,
        &format!(
            "FEMDA - t-QDA at 25% / λ=8 [{}], ahead in {strictly_ahead}/6 (need ≥ 4), none below -0.1: {}, {:.0}s",
            text.join(", "),
            never_far_behind,
            elapsed.as_secs_f64()
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_6_real_data() {
    let start = Instant::now();
    let breast = ExperimentConfig {
        mode: Mode::Real,
        schema_path: Some(data_dir().join("breast-cancer-wisconsin.schema")),
        methods: vec![Method::Femda],
        repetitions: 100,
        resplit_every: 10,
        ..ExperimentConfig::default()
    };
    let table = run_real(&breast).unwrap();
    let median = table.row("breast-cancer", Method::Femda, 0.0).unwrap().median_accuracy;
    let median_ok = (0.92..=0.97).contains(&median);

    let iono = ExperimentConfig {
        mode: Mode::Real,
        schema_path: Some(data_dir().join("ionosphere.schema")),
        methods: vec![Method::Rgqda, Method::Femda],
        sweep: Some(Sweep::parse_range("0:0.6:0.1", 5.0).unwrap()),
        repetitions: 100,
        resplit_every: 10,
        ..ExperimentConfig::default()
    };
    let table = run_real(&iono).unwrap();
    let drop = |method: Method| {
        let clean = table.row("ionosphere", method, 0.0).unwrap().mean_accuracy;
        let dirty = table.row("ionosphere", method, 0.4).unwrap().mean_accuracy;
        100.0 * (clean - dirty)
    };
    let (femda_drop, rgqda_drop) = (drop(Method::Femda), drop(Method::Rgqda));
    let sweep_ok = femda_drop < rgqda_drop;
    let elapsed = start.elapsed();
    let time_ok = elapsed < Duration::from_secs(10 * 60);
    let pass = median_ok && sweep_ok && time_ok;
    report(
        6,
        pass,
        &format!(
            "breast cancer FEMDA median {:.2}% (target [92, 97]: {}), ionosphere drop at 40% / λ=5: FEMDA {femda_drop:+.2} vs RGQDA {rgqda_drop:+.2} points ({}), {:.0}s",
            100.0 * median,
            if median_ok { "ok" } else { "out" },
            if sweep_ok { "ok" } else { "out" },
            elapsed.as_secs_f64()
        ),
    );
    assert!(pass);
}

fn without_timing(records: &[RepRecord]) -> Vec<RepRecord> {
    records
        .iter()
        .map(|r| RepRecord {
            fit_seconds: 0.0,
            ..r.clone()
        })
        .collect()
}

#[test]
fn criterion_7_determinism() {
    let synthetic = ExperimentConfig {
        scenario: ScenarioConfig {
            m: 4,
            k: 3,
            n_train: 300,
            n_test: 600,
            ..ScenarioConfig::full_scale(Scenario::benchmark_set()[5])
        },
        scenarios: vec![Scenario::benchmark_set()[5], Scenario::benchmark_set()[0]],
        sweep: Some(Sweep::parse_range("0:0.3:0.15", 6.0).unwrap()),
        repetitions: 3,
        master_seed: 77,
        ..ExperimentConfig::default()
    };
    let synthetic = ExperimentConfig {
        scenario: ScenarioConfig {
            tau_range: femda::distributions::Interval::new(1.0, 4.0),
            ..synthetic.scenario.clone()
        },
        ..synthetic
    };
    let real = ExperimentConfig {
        mode: Mode::Real,
        schema_path: Some(data_dir().join("ecoli.schema")),
        contamination: Some(ContaminationSpec {
            center_source: CenterSource::EmpiricalClassMean,
            ..ContaminationSpec::new(0.2, 4.0).unwrap()
        }),
        repetitions: 6,
        resplit_every: 2,
        master_seed: 78,
        ..ExperimentConfig::default()
    };
    let mut problems = Vec::new();
    let mut checked = 0;
    for config in [&synthetic, &real] {
        let run = |c: &ExperimentConfig| if c.mode == Mode::Real { run_real(c) } else { run_synthetic(c) };
        let first = run(config).unwrap();
        let second = run(config).unwrap();
        if without_timing(&first.records) != without_timing(&second.records) {
            problems.push(format!("{:?} run not reproducible", config.mode));
        }
        let dir = tempfile::tempdir().unwrap();
        write_outputs(&first, config, dir.path()).unwrap();
        let reloaded = load_results(dir.path()).unwrap();
        let summary = read_summary_csv(&dir.path().join(SUMMARY_FILE)).unwrap();
        assert!(dir.path().join(REPS_FILE).exists());
        for (a, b) in reloaded.rows.iter().zip(&summary) {
            checked += 1;
            let close = |x: f64, y: f64| (x.is_nan() && y.is_nan()) || (x - y).abs() <= 1e-12;
            if a.method != b.method
                || a.repetitions != b.repetitions
                || !close(a.mean_accuracy, b.mean_accuracy)
                || !close(a.std_accuracy, b.std_accuracy)
                || !close(a.median_accuracy, b.median_accuracy)
            {
                problems.push(format!("summary mismatch for {} {}", a.scenario, a.method));
            }
        }
        if reloaded.rows.len() != summary.len() {
            problems.push("row count mismatch".into());
        }
    }
    let pass = problems.is_empty();
    report(
        7,
        pass,
        &format!("repeat runs bit-identical and {checked} summary rows re-aggregated within 1e-12 {}", problems.join("; ")),
    );
    assert!(pass, "{problems:?}");
}
