//! Generational genetic algorithm, and its use for tuning sleep parameters
//! against held-out validation accuracy.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::analysis::write_csv;
use crate::continual::{init_params, run_order, run_rng, split_rng, train_first_task, ExperimentPlan, RunSpec};
use crate::data::{split_tasks, LabeledSet, TaskSequence};
use crate::ep_model::NetworkParams;
use crate::error::{Error, Result};
use crate::numerics::Rng;
use crate::src_sleep::SleepParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaConfig {
    pub population: usize,
    pub crossover_prob: f64,
    pub mutation_prob: f64,
    pub elite_fraction: f64,
    pub parent_fraction: f64,
    pub tournament_size: usize,
    /// Stop after this many generations without a strict improvement.
    pub max_stall_generations: usize,
    /// Optional hard cap on generations after the initial one.
    #[serde(default)]
    pub max_generations: Option<usize>,
    /// `[lo, hi]` per gene.
    pub bounds: Vec<[f64; 2]>,
}

impl Default for GaConfig {
    fn default() -> Self {
        Self::with_bounds(sleep_bounds())
    }
}

impl GaConfig {
    pub fn with_bounds(bounds: Vec<[f64; 2]>) -> Self {
        Self {
            population: 100,
            crossover_prob: 0.75,
            mutation_prob: 0.1,
            elite_fraction: 0.01,
            parent_fraction: 0.2,
            tournament_size: 3,
            max_stall_generations: 15,
            max_generations: None,
            bounds,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.population == 0 {
            return bad("GA population must be positive".into());
        }
        if self.tournament_size == 0 {
            return bad("tournament size must be positive".into());
        }
        for (name, f) in [
            ("elite_fraction", self.elite_fraction),
            ("parent_fraction", self.parent_fraction),
        ] {
            if !(f > 0.0 && f <= 1.0) {
                return bad(format!("{name} must lie in (0, 1]"));
            }
        }
        for (name, f) in [
            ("crossover_prob", self.crossover_prob),
            ("mutation_prob", self.mutation_prob),
        ] {
            if !(0.0..=1.0).contains(&f) {
                return bad(format!("{name} must lie in [0, 1]"));
            }
        }
        if self.bounds.is_empty() {
            return bad("GA needs at least one gene".into());
        }
        for (g, [lo, hi]) in self.bounds.iter().enumerate() {
            if !(lo < hi && lo.is_finite() && hi.is_finite()) {
                return bad(format!(
                    "gene {g}: bounds [{lo}, {hi}] are not an increasing finite pair"
                ));
            }
        }
        Ok(())
    }

    fn elite_count(&self) -> usize {
        ((self.elite_fraction * self.population as f64).ceil() as usize).clamp(1, self.population)
    }

    fn parent_count(&self) -> usize {
        ((self.parent_fraction * self.population as f64).round() as usize).clamp(1, self.population)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub genome: Vec<f64>,
    /// `None` until evaluated.
    pub fitness: Option<f64>,
}

impl Candidate {
    fn score(&self) -> f64 {
        self.fitness.unwrap_or(f64::NEG_INFINITY)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationStats {
    pub generation: usize,
    pub best: f64,
    /// Mean over finite fitness values.
    pub mean: f64,
    pub best_ever: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaOutcome {
    pub best: Candidate,
    pub history: Vec<GenerationStats>,
    pub evaluations: usize,
}

fn evaluate<F>(fitness: &F, genomes: &[Vec<f64>]) -> Vec<f64>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    let score = |g: &Vec<f64>| match fitness(g) {
        Ok(f) if !f.is_nan() => f,
        Ok(_) => {
            log::warn!("fitness returned NaN for {g:?}; scored as -inf");
            f64::NEG_INFINITY
        }
        Err(e) => {
            log::warn!("fitness failed for {g:?}: {e}; scored as -inf");
            f64::NEG_INFINITY
        }
    };
    let threads = std::thread::available_parallelism()
        .map_or(1, |n| n.get())
        .min(genomes.len());
    if threads <= 1 {
        return genomes.iter().map(score).collect();
    }
    let chunk = genomes.len().div_ceil(threads);
    std::thread::scope(|s| {
        let handles: Vec<_> = genomes
            .chunks(chunk)
            .map(|part| s.spawn(move || part.iter().map(score).collect::<Vec<f64>>()))
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("fitness worker panicked"))
            .collect()
    })
}

fn tournament<'a>(pop: &'a [Candidate], size: usize, rng: &mut Rng) -> &'a Candidate {
    let mut best = &pop[rng.below(pop.len())];
    for _ in 1..size {
        let c = &pop[rng.below(pop.len())];
        if c.score() > best.score() {
            best = c;
        }
    }
    best
}

fn stats(generation: usize, pop: &[Candidate], best_ever: f64) -> GenerationStats {
    let finite: Vec<f64> = pop.iter().map(Candidate::score).filter(|f| f.is_finite()).collect();
    GenerationStats {
        generation,
        best: pop.iter().map(Candidate::score).fold(f64::NEG_INFINITY, f64::max),
        mean: if finite.is_empty() {
            f64::NEG_INFINITY
        } else {
            finite.iter().sum::<f64>() / finite.len() as f64
        },
        best_ever,
    }
}

/// Maximises `fitness` over the box `cfg.bounds`. Failed evaluations score
/// −∞. Within a generation evaluations may run on several threads; results
/// are collected by candidate index, so the trajectory depends only on `rng`.
pub fn ga_optimize<F>(fitness: F, cfg: &GaConfig, rng: &mut Rng) -> Result<GaOutcome>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    cfg.validate()?;
    let sample = |rng: &mut Rng, g: usize| rng.range(cfg.bounds[g][0], cfg.bounds[g][1]);
    let genes = cfg.bounds.len();
    let genomes: Vec<Vec<f64>> = (0..cfg.population)
        .map(|_| (0..genes).map(|g| sample(rng, g)).collect())
        .collect();
    let scores = evaluate(&fitness, &genomes);
    let mut evaluations = genomes.len();
    let mut pop: Vec<Candidate> = genomes
        .into_iter()
        .zip(scores)
        .map(|(genome, f)| Candidate {
            genome,
            fitness: Some(f),
        })
        .collect();

    let mut best = pop
        .iter()
        .max_by(|a, b| a.score().total_cmp(&b.score()))
        .cloned()
        .expect("non-empty");
    let mut history = vec![stats(0, &pop, best.score())];
    let mut stall = 0;
    let mut generation = 0;

    while stall < cfg.max_stall_generations && cfg.max_generations.is_none_or(|m| generation < m) {
        generation += 1;
        // Stable sort keeps index order among ties.
        pop.sort_by(|a, b| b.score().total_cmp(&a.score()));
        let elites: Vec<Candidate> = pop[..cfg.elite_count()].to_vec();
        let parents: Vec<Candidate> = (0..cfg.parent_count())
            .map(|_| tournament(&pop, cfg.tournament_size, rng).clone())
            .collect();

        let children: Vec<Vec<f64>> = (0..cfg.population - elites.len())
            .map(|_| {
                let a = &parents[rng.below(parents.len())].genome;
                let b = &parents[rng.below(parents.len())].genome;
                let mut child = if rng.bernoulli(cfg.crossover_prob) {
                    a.iter()
                        .zip(b)
                        .map(|(&x, &y)| if rng.bernoulli(0.5) { x } else { y })
                        .collect()
                } else {
                    a.clone()
                };
                for (g, v) in child.iter_mut().enumerate() {
                    if rng.bernoulli(cfg.mutation_prob) {
                        *v = sample(rng, g);
                    }
                }
                child
            })
            .collect();
        let scores = evaluate(&fitness, &children);
        evaluations += children.len();

        pop = elites;
        pop.extend(children.into_iter().zip(scores).map(|(genome, f)| Candidate {
            genome,
            fitness: Some(f),
        }));

        let gen_best = pop
            .iter()
            .max_by(|a, b| a.score().total_cmp(&b.score()))
            .expect("non-empty");
        if gen_best.score() > best.score() {
            best = gen_best.clone();
            stall = 0;
        } else {
            stall += 1;
        }
        history.push(stats(generation, &pop, best.score()));
        log::debug!(
            "generation {generation}: best {:.4} (ever {:.4})",
            gen_best.score(),
            best.score()
        );
    }
    Ok(GaOutcome {
        best,
        history,
        evaluations,
    })
}

/// Gene order of the sleep genome.
pub const SLEEP_GENES: [&str; 7] = [
    "scale_ih",
    "scale_ho",
    "threshold_h",
    "threshold_o",
    "inc",
    "dec",
    "duration",
];

pub fn sleep_bounds() -> Vec<[f64; 2]> {
    vec![
        [0.1, 10.0],
        [0.1, 10.0],
        [0.1, 64.0],
        [0.1, 64.0],
        [0.0, 0.01],
        [0.0, 0.01],
        [100.0, 10000.0],
    ]
}

pub fn decode_sleep(genome: &[f64], feedback: bool) -> Result<SleepParams> {
    if genome.len() != SLEEP_GENES.len() {
        return Err(Error::DimensionMismatch {
            context: "sleep genome",
            expected: SLEEP_GENES.len(),
            found: genome.len(),
        });
    }
    let sp = SleepParams {
        scale_ih: genome[0],
        scale_ho: genome[1],
        threshold_h: genome[2],
        threshold_o: genome[3],
        inc: genome[4],
        dec: genome[5],
        duration: genome[6].round().max(1.0) as usize,
        feedback,
    };
    sp.validate()?;
    Ok(sp)
}

pub fn encode_sleep(sp: &SleepParams) -> Vec<f64> {
    vec![
        sp.scale_ih,
        sp.scale_ho,
        sp.threshold_h,
        sp.threshold_o,
        sp.inc,
        sp.dec,
        sp.duration as f64,
    ]
}

/// Midpoint of every gene's bounds: the untuned reference genome.
pub fn midpoint(bounds: &[[f64; 2]]) -> Vec<f64> {
    bounds.iter().map(|[lo, hi]| 0.5 * (lo + hi)).collect()
}

/// The tuning problem: a task sequence with validation rows carved from its
/// training data, and the shared first-task prefix already trained.
pub struct SleepTuning {
    pub seq: TaskSequence,
    pub validation: Vec<LabeledSet>,
    spec: RunSpec,
    init: NetworkParams,
    run: Rng,
    first_task: NetworkParams,
    feedback: bool,
}

impl SleepTuning {
    /// Uses the plan's first task order, trains with `epochs_per_task`
    /// epochs per task and validates on 10% of each task's training rows.
    pub fn new(plan: &ExperimentPlan, data: &LabeledSet, epochs_per_task: usize) -> Result<Self> {
        plan.validate()?;
        if !plan.strategy.uses_sleep() {
            return Err(Error::InvalidArgument(format!(
                "strategy {} does not sleep",
                plan.strategy
            )));
        }
        let mut seq = split_tasks(
            data,
            plan.labels_per_task,
            &plan.task_orders[0],
            &mut split_rng(plan.seed),
        )?;
        let validation = seq.carve_validation(0.1, &mut split_rng(plan.seed).fork(7));
        let mut spec = RunSpec::from(plan);
        spec.ep.epochs_per_task = epochs_per_task;
        let init = init_params(data.dim(), plan.hidden, data.num_classes(), plan.seed, 0);
        let run = run_rng(plan.seed, 0);
        let first_task = train_first_task(&spec, &seq, &init, &run)?;
        let feedback = plan.sleep.as_ref().is_none_or(|s| s.feedback);
        Ok(Self {
            seq,
            validation,
            spec,
            init,
            run,
            first_task,
            feedback,
        })
    }

    /// Mean validation accuracy over tasks after the full T/S sequence.
    pub fn validation_score(&self, sp: &SleepParams) -> Result<f64> {
        let mut spec = self.spec.clone();
        spec.sleep = Some(sp.clone());
        let run = run_order(
            &spec,
            &self.seq,
            &self.validation,
            &self.init,
            &self.run,
            Some(&self.first_task),
            0,
            &mut |_| Ok(()),
        )?;
        Ok(run.final_score)
    }

    pub fn fitness(&self, genome: &[f64]) -> Result<f64> {
        self.validation_score(&decode_sleep(genome, self.feedback)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuneOutcome {
    pub best: SleepParams,
    /// Validation score of `best` during search.
    pub search_score: f64,
    pub ga: GaOutcome,
}

/// Runs the GA over the sleep genome on `tuning`.
pub fn tune_sleep(tuning: &SleepTuning, cfg: &GaConfig, rng: &mut Rng) -> Result<TuneOutcome> {
    if cfg.bounds.len() != SLEEP_GENES.len() {
        return Err(Error::DimensionMismatch {
            context: "sleep GA bounds",
            expected: SLEEP_GENES.len(),
            found: cfg.bounds.len(),
        });
    }
    let ga = ga_optimize(|g: &[f64]| tuning.fitness(g), cfg, rng)?;
    let best = decode_sleep(&ga.best.genome, tuning.feedback)?;
    Ok(TuneOutcome {
        best,
        search_score: ga.best.score(),
        ga,
    })
}

/// Per-generation best, mean and best-so-far fitness.
pub fn write_ga_log(path: impl AsRef<Path>, meta: &str, history: &[GenerationStats]) -> Result<()> {
    let rows: Vec<Vec<String>> = history
        .iter()
        .map(|s| {
            vec![
                s.generation.to_string(),
                s.best.to_string(),
                s.mean.to_string(),
                s.best_ever.to_string(),
            ]
        })
        .collect();
    write_csv(path, meta, &["generation", "best", "mean", "best_ever"], &rows)
}

/// Sphere objective `−Σx²`, maximised at the origin; used to check the GA.
pub fn sphere(genome: &[f64]) -> Result<f64> {
    Ok(-genome.iter().map(|x| x * x).sum::<f64>())
}
