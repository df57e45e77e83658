//! Prints a full-scale table for the six benchmark scenarios.
//!
//! `cargo run --release -p femda --example table -- [reps] [fraction:lambda|-] [eig_lo,eig_hi] [scenario,...]`

use femda::bench::{markdown_report, run_synthetic, ExperimentConfig};
use femda::distributions::{Scenario, ScenarioConfig};
use femda::ContaminationSpec;

fn main() -> femda::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mut config = ExperimentConfig::default();
    config.scenarios = Scenario::benchmark_set();
    config.scenario = ScenarioConfig::full_scale(config.scenarios[0]);
    config.repetitions = args.first().map_or(Ok(5), |s| s.parse()).expect("reps");
    if let Some(list) = args.get(3) {
        config.scenarios = list.split(',').map(str::parse).collect::<femda::Result<_>>()?;
    }
    if let Some(eig) = args.get(2) {
        config.scenario.eig_range = eig.parse()?;
    }
    if let Some(spec) = args.get(1).filter(|s| *s != "-") {
        config.contamination = Some(spec.parse::<ContaminationSpec>()?);
    }
    let start = std::time::Instant::now();
    let table = run_synthetic(&config)?;
    println!("{}", markdown_report(&table.rows));
    for r in &table.rows {
        println!(
            "{:<16} {:<6} mean {:.4} std {:.4} fit {:.3}s nonconv {} failed {}",
            r.scenario, r.method, r.mean_accuracy, r.std_accuracy, r.mean_fit_seconds, r.convergence_failures, r.failed_repetitions
        );
    }
    eprintln!("elapsed {:.1}s", start.elapsed().as_secs_f64());
    Ok(())
}
