use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use log::info;

use somnus::analysis::{
    cosine_similarity, hidden_correlation, synaptic_importance, weight_diff_histogram, write_csv, write_matrix_csv,
    write_weight_diff_csv,
};
use somnus::continual::{split_rng, Strategy};
use somnus::data::{split_tasks, LabeledSet, TaskSequence};
use somnus::ep_model::{EpHyperParams, NetworkParams};

use crate::config::LoadedConfig;
use crate::run::{create_dir, plans, snapshot_name, MANIFEST, RESOLVED_CONFIG, SNAPSHOT_DIR};
use crate::{io_err, CliError};

/// Phase labels recorded for `order` in a strategy's `metrics.csv`, in run order.
pub fn recorded_phases(metrics: &Path, order: usize) -> Result<Vec<String>, CliError> {
    let text =
        fs::read_to_string(metrics).map_err(|e| CliError::MissingSnapshots(format!("{}: {e}", metrics.display())))?;
    let mut seen = Vec::new();
    for line in text.lines().filter(|l| !l.starts_with('#')).skip(1) {
        let mut cols = line.split(',');
        let (Some(o), Some(label)) = (cols.next(), cols.next()) else {
            continue;
        };
        if o.parse::<usize>().ok() == Some(order) && !seen.iter().any(|s| s == label) {
            seen.push(label.to_string());
        }
    }
    Ok(seen)
}

/// Parses `A:B` phase pairs.
pub fn parse_pairs(pairs: &[String]) -> Result<Vec<(String, String)>, CliError> {
    pairs
        .iter()
        .map(|p| match p.split_once(':') {
            Some((a, b)) if !a.is_empty() && !b.is_empty() => Ok((a.to_string(), b.to_string())),
            _ => Err(CliError::Config(format!("phase pair {p:?} is not of the form A:B"))),
        })
        .collect()
}

/// Every `T#:S#` pair among `phases`.
pub fn default_pairs(phases: &[String]) -> Vec<(String, String)> {
    phases
        .iter()
        .filter_map(|s| {
            let t = format!("T{}", s.strip_prefix('S')?);
            phases.contains(&t).then(|| (t, s.clone()))
        })
        .collect()
}

struct StrategyRun {
    strategy: Strategy,
    snaps: PathBuf,
    phases: Vec<String>,
}

impl StrategyRun {
    fn load(&self, order: usize, label: &str) -> Result<NetworkParams, CliError> {
        Ok(NetworkParams::load(self.snaps.join(snapshot_name(order, label)))?)
    }
}

/// Errors with every phase in `wanted` whose snapshot file is absent.
fn require(run: &StrategyRun, order: usize, wanted: &BTreeSet<String>) -> Result<(), CliError> {
    let missing: Vec<&str> = wanted
        .iter()
        .filter(|l| !run.snaps.join(snapshot_name(order, l)).is_file())
        .map(String::as_str)
        .collect();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(CliError::MissingSnapshots(format!(
            "{} order {order}: {}",
            run.strategy,
            missing.join(", ")
        )))
    }
}

pub fn cmd_analyze(run_dir: &Path, pairs: &[String], order: usize, bins: usize) -> Result<(), CliError> {
    let requested = parse_pairs(pairs)?;
    let loaded = LoadedConfig::load(&run_dir.join(RESOLVED_CONFIG), false)?;
    let config_copy = run_dir.join("config.toml");
    let meta = fs::read_to_string(&config_copy)
        .map_err(io_err(&config_copy))?
        .lines()
        .next()
        .and_then(|l| l.strip_prefix("# "))
        .unwrap_or_default()
        .to_string();

    let mut runs = Vec::new();
    for &strategy in &loaded.config.experiment.strategies {
        let dir = run_dir.join(strategy.name());
        let snaps = dir.join(SNAPSHOT_DIR);
        if !snaps.join(MANIFEST).is_file() {
            return Err(CliError::MissingSnapshots(format!(
                "{}: no snapshot manifest",
                dir.display()
            )));
        }
        let phases = recorded_phases(&dir.join("metrics.csv"), order)?;
        if phases.is_empty() {
            return Err(CliError::MissingSnapshots(format!(
                "{strategy}: no phases recorded for order {order}"
            )));
        }
        let run = StrategyRun {
            strategy,
            snaps,
            phases,
        };
        let mut wanted: BTreeSet<String> = run.phases.iter().cloned().collect();
        for (a, b) in &requested {
            wanted.insert(a.clone());
            wanted.insert(b.clone());
        }
        require(&run, order, &wanted)?;
        runs.push(run);
    }

    let data = loaded.load_data()?;
    let plans = plans(&loaded, data.num_classes())?;
    let h = &loaded.config.ep;
    for (run, plan) in runs.iter().zip(&plans) {
        let task_order = plan.task_orders.get(order).ok_or_else(|| {
            CliError::Config(format!(
                "order {order} out of range ({} orders)",
                plan.task_orders.len()
            ))
        })?;
        let seq = split_tasks(&data, plan.labels_per_task, task_order, &mut split_rng(plan.seed))?;
        let out = run_dir.join("analysis").join(run.strategy.name());
        create_dir(&out)?;
        let smeta = format!("{meta} strategy={} order={order}", run.strategy);

        let pairs = if requested.is_empty() {
            default_pairs(&run.phases)
        } else {
            requested.clone()
        };
        for (a, b) in &pairs {
            let d = weight_diff_histogram(&run.load(order, a)?, &run.load(order, b)?, bins)?;
            let path = out.join(format!("weight_diff_{a}_{b}.csv"));
            write_weight_diff_csv(&path, &format!("{smeta} before={a} after={b}"), &d)?;
            info!(
                "{} {a}->{b}: mean w_ih diff {:.3e}, mean w_ho diff {:.3e}",
                run.strategy, d.w_ih.mean, d.w_ho.mean
            );
        }

        correlations(run, order, h, &seq, &out, &smeta)?;
        importance(run, order, h, &seq, &out, &smeta)?;
    }
    Ok(())
}

/// Hidden-correlation matrices at the last training and last sleep phase.
fn correlations(
    run: &StrategyRun,
    order: usize,
    h: &EpHyperParams,
    seq: &TaskSequence,
    out: &Path,
    meta: &str,
) -> Result<(), CliError> {
    let test = seq.all_test()?;
    let last = |prefix: char| run.phases.iter().rev().find(|l| l.starts_with(prefix)).cloned();
    let mut rows = Vec::new();
    for label in [last('T'), last('S'), last('P')].into_iter().flatten() {
        let report = hidden_correlation(&run.load(order, &label)?, h, &test)?;
        let m = report.mean_abs_off_diagonal();
        write_matrix_csv(
            out.join(format!("correlation_{label}.csv")),
            &format!("{meta} phase={label}"),
            &report.matrix,
        )?;
        info!(
            "{} {label}: mean |off-diagonal| hidden correlation {m:.4}",
            run.strategy
        );
        let degenerate: Vec<String> = report.degenerate.iter().map(|c| c.to_string()).collect();
        rows.push(vec![label, m.to_string(), degenerate.join(" ")]);
    }
    write_csv(
        out.join("correlation_summary.csv"),
        meta,
        &["phase", "mean_abs_off_diagonal", "degenerate_classes"],
        &rows,
    )?;
    Ok(())
}

/// Importance cosines between T1, T2 and S2 for every class of the first two tasks.
fn importance(
    run: &StrategyRun,
    order: usize,
    h: &EpHyperParams,
    seq: &TaskSequence,
    out: &Path,
    meta: &str,
) -> Result<(), CliError> {
    let phases = ["T1", "T2", "S2"];
    if seq.len() < 2 || !phases.iter().all(|p| run.phases.iter().any(|l| l == p)) {
        return Ok(());
    }
    let nets: BTreeMap<&str, NetworkParams> = phases
        .iter()
        .map(|&l| Ok((l, run.load(order, l)?)))
        .collect::<Result<_, CliError>>()?;
    let test = seq.all_test()?;
    let mut rows = Vec::new();
    for (task, t) in seq.tasks.iter().take(2).enumerate() {
        for &c in &t.labels {
            let samples: LabeledSet = test.filter_classes(&[c]);
            let u: BTreeMap<&str, Vec<f64>> = nets
                .iter()
                .map(|(&l, p)| Ok((l, synaptic_importance(p, h, &samples, c)?.into_inner())))
                .collect::<Result<_, CliError>>()?;
            let cos = |a: &str, b: &str| cosine_similarity(&u[a], &u[b]).unwrap_or(f64::NAN);
            let (t1t2, t1s2, t2s2) = (cos("T1", "T2"), cos("T1", "S2"), cos("T2", "S2"));
            info!(
                "{} class {c} (task {}): cos(T1,T2) {t1t2:.3} cos(T1,S2) {t1s2:.3} cos(T2,S2) {t2s2:.3}",
                run.strategy,
                task + 1
            );
            rows.push(vec![
                c.to_string(),
                (task + 1).to_string(),
                t1t2.to_string(),
                t1s2.to_string(),
                t2s2.to_string(),
            ]);
        }
    }
    write_csv(
        out.join("importance_cosine.csv"),
        meta,
        &["class", "task", "cos_t1_t2", "cos_t1_s2", "cos_t2_s2"],
        &rows,
    )?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_pairs_match_training_to_following_sleep() {
        let phases: Vec<String> = ["T1", "S1", "T2", "T3", "S3"].iter().map(|s| s.to_string()).collect();
        let pairs = default_pairs(&phases);
        assert_eq!(pairs, vec![("T1".into(), "S1".into()), ("T3".into(), "S3".into())]);
    }

    #[test]
    fn pair_syntax() {
        assert_eq!(
            parse_pairs(&["T5:S5".into()]).unwrap(),
            vec![("T5".into(), "S5".into())]
        );
        assert!(parse_pairs(&["T5".into()]).is_err());
        assert!(parse_pairs(&[":S5".into()]).is_err());
    }
}
