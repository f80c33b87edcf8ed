//! Class-incremental protocol: train on each task in turn, optionally sleep
//! after each one and rehearse a stored fraction of earlier data, then score
//! every task on its held-out split.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::analysis::{confusion, write_csv, write_matrix_csv, ConfusionMatrix};
use crate::data::{rehearsal_mix, split_tasks, LabeledSet, RehearsalMemory, RunningMean, TaskSequence};
use crate::ep_model::{predict_set, train_epochs, EpHyperParams, NetworkParams};
use crate::error::{Error, Result};
use crate::numerics::{mean, sample_std, Rng};
use crate::src_sleep::{src_phase, InputRates, SleepParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Sequential,
    Src,
    Rehearsal,
    SrcRehearsal,
    Parallel,
}

impl Strategy {
    pub fn uses_sleep(self) -> bool {
        matches!(self, Strategy::Src | Strategy::SrcRehearsal)
    }

    pub fn uses_rehearsal(self) -> bool {
        matches!(self, Strategy::Rehearsal | Strategy::SrcRehearsal)
    }

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Sequential => "sequential",
            Strategy::Src => "src",
            Strategy::Rehearsal => "rehearsal",
            Strategy::SrcRehearsal => "src_rehearsal",
            Strategy::Parallel => "parallel",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Everything needed to run one strategy over a set of task orders.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub strategy: Strategy,
    pub task_orders: Vec<Vec<usize>>,
    pub ep: EpHyperParams,
    pub sleep: Option<SleepParams>,
    pub rehearsal_fraction: f64,
    pub labels_per_task: usize,
    pub hidden: usize,
    pub seed: u64,
}

impl ExperimentPlan {
    pub fn validate(&self) -> Result<()> {
        self.ep.validate()?;
        if self.task_orders.is_empty() {
            return Err(Error::InvalidArgument("no task orders".into()));
        }
        if self.hidden == 0 {
            return Err(Error::InvalidArgument(
                "hidden layer must have at least one unit".into(),
            ));
        }
        if self.strategy.uses_sleep() {
            match &self.sleep {
                Some(sp) => sp.validate()?,
                None => {
                    return Err(Error::InvalidArgument(format!(
                        "strategy {} needs sleep parameters",
                        self.strategy
                    )))
                }
            }
        }
        if self.strategy.uses_rehearsal() && !(0.0..=1.0).contains(&self.rehearsal_fraction) {
            return Err(Error::InvalidArgument(format!(
                "rehearsal fraction {} outside [0, 1]",
                self.rehearsal_fraction
            )));
        }
        Ok(())
    }
}

/// The identity order followed by distinct seeded permutations of
/// `0..n_tasks`, `count` in total (fewer if `n_tasks!` is smaller).
pub fn default_task_orders(n_tasks: usize, count: usize, seed: u64) -> Vec<Vec<usize>> {
    let limit = (1..=n_tasks)
        .try_fold(1usize, |acc, k| acc.checked_mul(k))
        .unwrap_or(usize::MAX);
    let target = count.min(limit);
    let mut orders: Vec<Vec<usize>> = Vec::with_capacity(target);
    if target == 0 {
        return orders;
    }
    orders.push((0..n_tasks).collect());
    let mut rng = Rng::seeded(seed).fork(11);
    while orders.len() < target {
        let perm = rng.permutation(n_tasks);
        if !orders.contains(&perm) {
            orders.push(perm);
        }
    }
    orders
}

/// Accuracies after one T# or S# phase.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseRecord {
    pub label: String,
    /// Test accuracy of each task, indexed by position in the training order.
    pub task_accuracy: Vec<f64>,
    /// Accuracy over the union of all task test sets.
    pub joint_accuracy: f64,
    pub confusion: ConfusionMatrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrderRun {
    pub order: Vec<usize>,
    pub phases: Vec<PhaseRecord>,
    /// Mean task accuracy after the last phase (joint accuracy for parallel runs).
    pub final_score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseMetrics {
    pub strategy: Strategy,
    pub runs: Vec<OrderRun>,
}

impl PhaseMetrics {
    pub fn final_scores(&self) -> Vec<f64> {
        self.runs.iter().map(|r| r.final_score).collect()
    }

    pub fn final_mean(&self) -> f64 {
        mean(&self.final_scores())
    }

    /// Sample standard deviation across task orders.
    pub fn final_std(&self) -> f64 {
        sample_std(&self.final_scores())
    }

    /// Phase labels in execution order (identical across orders).
    pub fn phase_labels(&self) -> Vec<String> {
        self.runs
            .first()
            .map(|r| r.phases.iter().map(|p| p.label.clone()).collect())
            .unwrap_or_default()
    }

    /// Confusion counts of one phase summed over every task order.
    pub fn summed_confusion(&self, label: &str) -> Option<ConfusionMatrix> {
        let mut it = self
            .runs
            .iter()
            .filter_map(|r| r.phases.iter().find(|p| p.label == label));
        let first = it.next()?.confusion.clone();
        Some(it.fold(first, |acc, p| acc.merged(&p.confusion)))
    }

    pub fn summary(&self) -> StrategySummary {
        StrategySummary {
            strategy: self.strategy,
            orders: self.runs.len(),
            final_mean: self.final_mean(),
            final_std: self.final_std(),
            final_scores: self.final_scores(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategySummary {
    pub strategy: Strategy,
    pub orders: usize,
    pub final_mean: f64,
    pub final_std: f64,
    pub final_scores: Vec<f64>,
}

/// Handed to observers after each phase, for snapshotting.
pub struct PhaseEvent<'a> {
    pub order_id: usize,
    pub label: &'a str,
    pub params: &'a NetworkParams,
}

/// Training settings shared by every order of a plan.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub strategy: Strategy,
    pub ep: EpHyperParams,
    pub sleep: Option<SleepParams>,
    pub rehearsal_fraction: f64,
}

impl From<&ExperimentPlan> for RunSpec {
    fn from(p: &ExperimentPlan) -> Self {
        Self {
            strategy: p.strategy,
            ep: p.ep.clone(),
            sleep: p.sleep.clone(),
            rehearsal_fraction: p.rehearsal_fraction,
        }
    }
}

// Independent random streams, so that a prefix of a run can be cached and
// resumed without changing what follows.
const STREAM_SPLIT: u64 = 1;
const STREAM_INIT: u64 = 1_000;
const STREAM_TRAIN: u64 = 10_000;
const STREAM_SLEEP: u64 = 20_000;
const STREAM_MEMORY: u64 = 30_000;
const STREAM_MIX: u64 = 40_000;

/// The split stream for a plan seed. Every order uses the same one, so the
/// train/test rows do not depend on the order.
pub fn split_rng(seed: u64) -> Rng {
    Rng::seeded(seed).fork(STREAM_SPLIT)
}

pub fn init_params(n_in: usize, hidden: usize, n_out: usize, seed: u64, order_id: usize) -> NetworkParams {
    NetworkParams::glorot(
        n_in,
        hidden,
        n_out,
        &mut Rng::seeded(seed).fork(STREAM_INIT + order_id as u64),
    )
}

/// Trains the first task only: the shared prefix of every sleep setting.
pub fn train_first_task(spec: &RunSpec, seq: &TaskSequence, init: &NetworkParams, run: &Rng) -> Result<NetworkParams> {
    let task = seq.tasks.first().ok_or(Error::Empty("task sequence"))?;
    train_epochs(
        &task.train,
        init,
        &spec.ep,
        spec.ep.epochs_per_task,
        &mut run.fork(STREAM_TRAIN),
    )
}

/// Runs one task order. `eval[k]` scores task `k`. When `first_task` is given
/// it must be the result of [`train_first_task`] with the same arguments; it
/// replaces the T1 training.
#[allow(clippy::too_many_arguments)]
pub fn run_order(
    spec: &RunSpec,
    seq: &TaskSequence,
    eval: &[LabeledSet],
    init: &NetworkParams,
    run: &Rng,
    first_task: Option<&NetworkParams>,
    order_id: usize,
    observe: &mut dyn FnMut(&PhaseEvent<'_>) -> Result<()>,
) -> Result<OrderRun> {
    if seq.is_empty() {
        return Err(Error::Empty("task sequence"));
    }
    if eval.len() != seq.len() {
        return Err(Error::DimensionMismatch {
            context: "evaluation sets per task",
            expected: seq.len(),
            found: eval.len(),
        });
    }
    let sleep = match (spec.strategy.uses_sleep(), &spec.sleep) {
        (true, Some(sp)) => Some(sp),
        (true, None) => return Err(Error::InvalidArgument("sleep strategy without sleep parameters".into())),
        (false, _) => None,
    };
    let first = &seq.tasks[0].train;
    let mut memory = RehearsalMemory::new(
        if spec.strategy.uses_rehearsal() {
            spec.rehearsal_fraction
        } else {
            0.0
        },
        first.dim(),
        first.num_classes(),
    )?;
    let joint_eval = LabeledSet::concat(&eval.iter().collect::<Vec<_>>())?;
    let mut rates = RunningMean::default();
    let mut p = init.clone();
    let mut phases = Vec::new();

    for (k, task) in seq.tasks.iter().enumerate() {
        let k64 = k as u64;
        p = match (k, first_task) {
            (0, Some(cached)) => cached.clone(),
            _ => {
                let train = if memory.is_empty() {
                    task.train.clone()
                } else {
                    rehearsal_mix(&task.train, &memory, &mut run.fork(STREAM_MIX + k64))?
                };
                train_epochs(
                    &train,
                    &p,
                    &spec.ep,
                    spec.ep.epochs_per_task,
                    &mut run.fork(STREAM_TRAIN + k64),
                )?
            }
        };
        let label = format!("T{}", k + 1);
        phases.push(score_phase(&label, &p, &spec.ep, eval, &joint_eval)?);
        observe(&PhaseEvent {
            order_id,
            label: &label,
            params: &p,
        })?;

        rates.add_set(&task.train)?;
        if let Some(sp) = sleep {
            let r = InputRates::new(rates.mean()?)?;
            p = src_phase(&p, &r, sp, &mut run.fork(STREAM_SLEEP + k64))?.after;
            let label = format!("S{}", k + 1);
            phases.push(score_phase(&label, &p, &spec.ep, eval, &joint_eval)?);
            observe(&PhaseEvent {
                order_id,
                label: &label,
                params: &p,
            })?;
        }
        if spec.strategy.uses_rehearsal() {
            memory.remember(&task.train, &mut run.fork(STREAM_MEMORY + k64))?;
        }
    }
    let final_score = mean(&phases.last().expect("at least one phase").task_accuracy);
    Ok(OrderRun {
        order: seq.order.clone(),
        phases,
        final_score,
    })
}

fn score_phase(
    label: &str,
    p: &NetworkParams,
    h: &EpHyperParams,
    eval: &[LabeledSet],
    joint: &LabeledSet,
) -> Result<PhaseRecord> {
    let preds = predict_set(joint, p, h)?;
    let k = p.n_out().max(joint.num_classes());
    let cm = confusion(&preds, joint.labels(), k)?;
    let mut task_accuracy = Vec::with_capacity(eval.len());
    let mut start = 0;
    for set in eval {
        let end = start + set.len();
        let correct = preds[start..end]
            .iter()
            .zip(set.labels())
            .filter(|(a, b)| a == b)
            .count();
        task_accuracy.push(if set.is_empty() {
            0.0
        } else {
            correct as f64 / set.len() as f64
        });
        start = end;
    }
    Ok(PhaseRecord {
        label: label.to_string(),
        task_accuracy,
        joint_accuracy: cm.accuracy(),
        confusion: cm,
    })
}

/// Runs every task order of `plan` on `data` (the pooled training file).
pub fn run_sequence(
    plan: &ExperimentPlan,
    data: &LabeledSet,
    observe: &mut dyn FnMut(&PhaseEvent<'_>) -> Result<()>,
) -> Result<PhaseMetrics> {
    plan.validate()?;
    if plan.strategy == Strategy::Parallel {
        return run_parallel(plan, data, observe);
    }
    let spec = RunSpec::from(plan);
    let mut runs = Vec::with_capacity(plan.task_orders.len());
    for (o, order) in plan.task_orders.iter().enumerate() {
        let seq = split_tasks(data, plan.labels_per_task, order, &mut split_rng(plan.seed))?;
        let eval: Vec<LabeledSet> = seq.tasks.iter().map(|t| t.test.clone()).collect();
        let init = init_params(data.dim(), plan.hidden, data.num_classes(), plan.seed, o);
        let run = run_rng(plan.seed, o);
        runs.push(run_order(&spec, &seq, &eval, &init, &run, None, o, observe)?);
    }
    Ok(PhaseMetrics {
        strategy: plan.strategy,
        runs,
    })
}

pub fn run_rng(seed: u64, order_id: usize) -> Rng {
    Rng::seeded(seed).fork(100 + order_id as u64)
}

/// Joint training on the union of all tasks; one phase labelled `P`.
pub fn run_parallel(
    plan: &ExperimentPlan,
    data: &LabeledSet,
    observe: &mut dyn FnMut(&PhaseEvent<'_>) -> Result<()>,
) -> Result<PhaseMetrics> {
    plan.validate()?;
    let order = &plan.task_orders[0];
    let seq = split_tasks(data, plan.labels_per_task, order, &mut split_rng(plan.seed))?;
    let eval: Vec<LabeledSet> = seq.tasks.iter().map(|t| t.test.clone()).collect();
    let joint = seq.all_test()?;
    let train = seq.all_train()?;
    let init = init_params(data.dim(), plan.hidden, data.num_classes(), plan.seed, 0);
    let mut rng = run_rng(plan.seed, 0).fork(STREAM_TRAIN);
    let p = train_epochs(&train, &init, &plan.ep, plan.ep.epochs_per_task, &mut rng)?;
    let rec = score_phase("P", &p, &plan.ep, &eval, &joint)?;
    observe(&PhaseEvent {
        order_id: 0,
        label: "P",
        params: &p,
    })?;
    let final_score = rec.joint_accuracy;
    Ok(PhaseMetrics {
        strategy: Strategy::Parallel,
        runs: vec![OrderRun {
            order: order.clone(),
            phases: vec![rec],
            final_score,
        }],
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub fraction: f64,
    pub without_src: f64,
    pub with_src: f64,
}

/// Final accuracy against rehearsal fraction, with and without sleep, on the
/// plan's first task order.
pub fn rehearsal_sweep(plan: &ExperimentPlan, data: &LabeledSet, fractions: &[f64]) -> Result<Vec<SweepPoint>> {
    if let Some(f) = fractions.iter().find(|f| !(0.0..=1.0).contains(*f)) {
        return Err(Error::InvalidArgument(format!("rehearsal fraction {f} outside [0, 1]")));
    }
    let mut base = plan.clone();
    base.task_orders.truncate(1);
    let mut out = Vec::with_capacity(fractions.len());
    for &fraction in fractions {
        let score = |strategy| -> Result<f64> {
            let mut p = base.clone();
            p.strategy = strategy;
            p.rehearsal_fraction = fraction;
            Ok(run_sequence(&p, data, &mut |_| Ok(()))?.final_mean())
        };
        out.push(SweepPoint {
            fraction,
            without_src: score(Strategy::Rehearsal)?,
            with_src: score(Strategy::SrcRehearsal)?,
        });
    }
    Ok(out)
}

/// `metrics.csv`: one row per (order, phase, task).
pub fn write_metrics_csv(path: impl AsRef<Path>, meta: &str, m: &PhaseMetrics) -> Result<()> {
    let mut rows = Vec::new();
    for (o, run) in m.runs.iter().enumerate() {
        for ph in &run.phases {
            for (t, acc) in ph.task_accuracy.iter().enumerate() {
                rows.push(vec![
                    o.to_string(),
                    ph.label.clone(),
                    (t + 1).to_string(),
                    format!("{acc:.6}"),
                ]);
            }
        }
    }
    write_csv(path, meta, &["order_id", "phase", "task_id", "accuracy"], &rows)
}

/// `confusion_<phase>.csv` in `dir` for every phase, counts summed over orders.
pub fn write_confusion_csvs(dir: impl AsRef<Path>, meta: &str, m: &PhaseMetrics) -> Result<()> {
    for label in m.phase_labels() {
        if let Some(cm) = m.summed_confusion(&label) {
            let meta = format!("{meta} phase={label} orders={} rows=true cols=predicted", m.runs.len());
            write_matrix_csv(dir.as_ref().join(format!("confusion_{label}.csv")), &meta, cm.counts())?;
        }
    }
    Ok(())
}

pub fn write_sweep_csv(path: impl AsRef<Path>, meta: &str, points: &[SweepPoint]) -> Result<()> {
    let rows: Vec<Vec<String>> = points
        .iter()
        .map(|p| {
            vec![
                p.fraction.to_string(),
                format!("{:.6}", p.without_src),
                format!("{:.6}", p.with_src),
            ]
        })
        .collect();
    write_csv(path, meta, &["fraction", "without_src", "with_src"], &rows)
}
