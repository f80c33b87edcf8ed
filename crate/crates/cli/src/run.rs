use std::fs;
use std::path::Path;

use log::info;
use serde::Serialize;

use somnus::analysis::write_csv;
use somnus::continual::{
    rehearsal_sweep, run_sequence, write_confusion_csvs, write_metrics_csv, write_sweep_csv, ExperimentPlan,
    PhaseEvent, StrategySummary,
};
use somnus::data::label_groups;

use crate::config::{sha256_hex, to_toml, LoadedConfig};
use crate::{io_err, CliError};

pub const SNAPSHOT_DIR: &str = "snapshots";
pub const MANIFEST: &str = "manifest.csv";
pub const RESOLVED_CONFIG: &str = "resolved.toml";

/// Snapshot file name for one phase of one order.
pub fn snapshot_name(order_id: usize, label: &str) -> String {
    format!("o{order_id}_{label}.net")
}

#[derive(Debug, Serialize)]
pub struct RunSummary {
    pub config_hash: String,
    pub seed: u64,
    pub fast: bool,
    pub strategies: Vec<SummaryLine>,
}

#[derive(Debug, Serialize)]
pub struct SummaryLine {
    #[serde(flatten)]
    pub summary: StrategySummary,
    /// `mean ± std` in percent.
    pub display: String,
}

impl From<StrategySummary> for SummaryLine {
    fn from(summary: StrategySummary) -> Self {
        let display = format!("{:.2} ± {:.2}", 100.0 * summary.final_mean, 100.0 * summary.final_std);
        Self { summary, display }
    }
}

/// Validated plans for every configured strategy.
pub fn plans(loaded: &LoadedConfig, num_classes: usize) -> Result<Vec<ExperimentPlan>, CliError> {
    let lpt = loaded.config.data.labels_per_task;
    let n_tasks = label_groups(num_classes, lpt)
        .map_err(|e| CliError::Config(format!("labels_per_task {lpt}: {e}")))?
        .len();
    loaded
        .config
        .experiment
        .strategies
        .iter()
        .map(|&s| {
            let plan = loaded.plan(s, n_tasks);
            plan.validate()
                .map_err(|e| CliError::Config(format!("strategy {s}: {e}")))?;
            Ok(plan)
        })
        .collect()
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(io_err(path))
}

pub(crate) fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(io_err(path))
}

pub fn cmd_run(config: &Path, fast: bool) -> Result<(), CliError> {
    let loaded = LoadedConfig::load(config, fast)?;
    let data = loaded.load_data()?;
    let plans = plans(&loaded, data.num_classes())?;
    if let Some(c) = data.class_counts().iter().position(|&n| n == 0) {
        return Err(CliError::Data(format!("class {c} has no rows")));
    }
    let out = loaded.output_dir();
    let meta = loaded.meta();
    info!(
        "{} rows, {} classes, output {}",
        data.len(),
        data.num_classes(),
        out.display()
    );

    create_dir(&out)?;
    write_text(&out.join("config.toml"), &format!("# {meta}\n{}", loaded.source))?;
    write_text(
        &out.join(RESOLVED_CONFIG),
        &format!("# {meta}\n{}", to_toml(&loaded.effective())),
    )?;

    let mut lines = Vec::new();
    for plan in &plans {
        let dir = out.join(plan.strategy.name());
        let snaps = dir.join(SNAPSHOT_DIR);
        create_dir(&snaps)?;
        let mut manifest: Vec<Vec<String>> = Vec::new();
        let mut observe = |ev: &PhaseEvent<'_>| -> somnus::Result<()> {
            let name = snapshot_name(ev.order_id, ev.label);
            let bytes = ev.params.to_bytes();
            fs::write(snaps.join(&name), &bytes)?;
            manifest.push(vec![
                ev.order_id.to_string(),
                ev.label.to_string(),
                name,
                sha256_hex(&bytes),
            ]);
            info!("{} order {} phase {} done", plan.strategy, ev.order_id, ev.label);
            Ok(())
        };
        let metrics = run_sequence(plan, &data, &mut observe)?;
        let smeta = format!("{meta} strategy={}", plan.strategy);
        write_csv(
            snaps.join(MANIFEST),
            &smeta,
            &["order_id", "phase", "file", "sha256"],
            &manifest,
        )?;
        write_metrics_csv(dir.join("metrics.csv"), &smeta, &metrics)?;
        write_confusion_csvs(&dir, &smeta, &metrics)?;
        let line = SummaryLine::from(metrics.summary());
        info!("{}: final average accuracy {}%", plan.strategy, line.display);
        write_json(
            &dir.join("summary.json"),
            &summary(&loaded, vec![line.summary.clone().into()]),
        )?;
        lines.push(line);
    }

    if let Some(fractions) = &loaded.config.experiment.rehearsal_sweep {
        let base = plans.first().expect("validated non-empty strategies");
        let points = rehearsal_sweep(base, &data, fractions)?;
        for p in &points {
            info!(
                "rehearsal {}: without {:.4} with {:.4}",
                p.fraction, p.without_src, p.with_src
            );
        }
        write_sweep_csv(out.join("rehearsal_sweep.csv"), &meta, &points)?;
    }
    write_json(&out.join("summary.json"), &summary(&loaded, lines))
}

fn summary(loaded: &LoadedConfig, strategies: Vec<SummaryLine>) -> RunSummary {
    RunSummary {
        config_hash: loaded.hash.clone(),
        seed: loaded.seed(),
        fast: loaded.fast,
        strategies,
    }
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("summary serializes");
    write_text(path, &(text + "\n"))
}
