use std::path::Path;

use log::info;

use somnus::continual::Strategy;
use somnus::ep_model::{clamped_phase, free_phase, one_hot, relax, EpHyperParams, NetworkParams, NeuronState};
use somnus::hyperopt::{ga_optimize, sphere, tune_sleep, write_ga_log, GaConfig, GaOutcome, SleepTuning};
use somnus::numerics::Rng;
use somnus::src_sleep::{poisson_input, InputRates};

use crate::config::{sleep_section, to_toml, LoadedConfig};
use crate::run::{create_dir, plans, write_text};
use crate::CliError;

const GA_STREAM: u64 = 9;

/// Genome norm the sphere self-test must get below.
pub const SPHERE_TOLERANCE: f64 = 0.5;

pub fn sphere_config() -> GaConfig {
    GaConfig::with_bounds(vec![[-5.0, 5.0]; 7])
}

/// Whether best-so-far and per-generation best never decrease.
pub fn monotone(ga: &GaOutcome) -> bool {
    ga.history
        .windows(2)
        .all(|w| w[1].best >= w[0].best && w[1].best_ever >= w[0].best_ever)
}

/// GA on the sphere objective: returns the best genome norm.
pub fn sphere_selftest(seed: u64) -> Result<f64, CliError> {
    let ga = ga_optimize(sphere, &sphere_config(), &mut Rng::seeded(seed).fork(GA_STREAM))?;
    let norm = ga.best.genome.iter().map(|x| x * x).sum::<f64>().sqrt();
    info!(
        "sphere: best genome norm {norm:.4} after {} generations, {} evaluations",
        ga.history.len(),
        ga.evaluations
    );
    if !monotone(&ga) {
        return Err(CliError::SelfTest("best fitness decreased between generations".into()));
    }
    if norm >= SPHERE_TOLERANCE {
        return Err(CliError::SelfTest(format!(
            "sphere best norm {norm} not below {SPHERE_TOLERANCE}"
        )));
    }
    Ok(norm)
}

pub fn cmd_tune(config: Option<&Path>, fast: bool, selftest_ga: bool, flat_fitness: bool) -> Result<(), CliError> {
    if selftest_ga {
        let norm = sphere_selftest(0)?;
        println!("sphere self-test passed: best norm {norm:.4}");
        return Ok(());
    }
    let config = config.ok_or_else(|| CliError::Config("tune needs a config file".into()))?;
    let loaded = LoadedConfig::load(config, fast)?;
    let tune = loaded.config.tune.clone().unwrap_or_default();
    let ga_cfg = tune.ga.clone().unwrap_or_default();
    let mut rng = Rng::seeded(loaded.seed()).fork(GA_STREAM);
    let out = loaded.output_dir().join("tune");
    let meta = loaded.meta();

    if flat_fitness {
        create_dir(&out)?;
        let ga = ga_optimize(|_: &[f64]| Ok(0.0), &ga_cfg, &mut rng)?;
        write_ga_log(out.join("ga_log.csv"), &format!("{meta} fitness=flat"), &ga.history)?;
        println!("flat fitness: stopped after {} generations", ga.history.len());
        return Ok(());
    }

    let data = loaded.load_data()?;
    let plan = plans(&loaded, data.num_classes())?
        .into_iter()
        .find(|p| p.strategy.uses_sleep())
        .ok_or_else(|| CliError::Config("tune needs a sleep strategy in experiment.strategies".into()))?;
    info!(
        "tuning sleep for {} with {} search epochs per task",
        plan.strategy, tune.search_epochs
    );
    let tuning = SleepTuning::new(&plan, &data, tune.search_epochs)?;
    let outcome = tune_sleep(&tuning, &ga_cfg, &mut rng)?;
    info!("best search score {:.4}: {:?}", outcome.search_score, outcome.best);
    let full = SleepTuning::new(&plan, &data, plan.ep.epochs_per_task)?.validation_score(&outcome.best)?;
    info!("re-validated at {} epochs per task: {full:.4}", plan.ep.epochs_per_task);

    create_dir(&out)?;
    let tmeta = format!("{meta} search_score={} full_score={full}", outcome.search_score);
    write_ga_log(out.join("ga_log.csv"), &tmeta, &outcome.ga.history)?;
    write_text(
        &out.join("tuned_sleep.toml"),
        &format!("# {tmeta}\n{}", sleep_section(&outcome.best)),
    )?;
    let mut tuned = loaded.effective();
    tuned.sleep = Some(outcome.best);
    if !tuned.experiment.strategies.contains(&Strategy::Src) {
        tuned.experiment.strategies.push(Strategy::Src);
    }
    write_text(
        &out.join("tuned_config.toml"),
        &format!("# {tmeta}\n{}", to_toml(&tuned)),
    )?;
    println!("tuned sleep parameters written to {}", out.display());
    Ok(())
}

/// Seconds-scale checks on synthetic inputs.
pub fn cmd_selftest() -> Result<(), CliError> {
    let fail = |m: String| Err(CliError::SelfTest(m));
    let mut rng = Rng::seeded(1);

    for rate in [0.0, 0.3, 1.0] {
        let rates = InputRates::new(vec![rate; 100].into())?;
        let fired: usize = (0..100)
            .map(|_| poisson_input(&rates, &mut rng).iter().filter(|&&s| s).count())
            .sum();
        let empirical = fired as f64 / 10_000.0;
        if (empirical - rate).abs() > 0.02 {
            return fail(format!("poisson rate {rate}: empirical {empirical}"));
        }
    }
    println!("poisson generator: ok");

    let h = EpHyperParams::mnist();
    let p = NetworkParams::glorot(20, 16, 10, &mut rng);
    let x: Vec<f64> = (0..20).map(|_| rng.uniform()).collect();
    let free = free_phase(&x, &p, &h, &NeuronState::for_params(&p))?;
    let zero = relax(
        &x,
        Some((one_hot(3, 10).as_slice(), 0.0)),
        &p,
        &h,
        &free.state,
        h.clamped_steps,
    )?;
    let cont = relax(&x, None, &p, &h, &free.state, h.clamped_steps)?;
    if zero.state != cont.state {
        return fail("clamped phase with beta 0 differs from the free phase".into());
    }
    println!("beta=0 clamped phase: ok");

    let long = relax(&x, None, &p, &h, &NeuronState::for_params(&p), 1000)?;
    if long.last_step_norm() >= 1e-3 {
        return fail(format!(
            "free phase did not settle: last step norm {}",
            long.last_step_norm()
        ));
    }
    let clamped = clamped_phase(&x, one_hot(3, 10).as_slice(), &p, &h, &free.state)?;
    if !clamped.state.s_o.is_finite() {
        return fail("clamped phase diverged".into());
    }
    println!("relaxation: ok");

    let norm = sphere_selftest(0)?;
    println!("GA sphere: ok (best norm {norm:.4})");
    Ok(())
}
