use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use somnus::continual::{default_task_orders, ExperimentPlan, Strategy};
use somnus::data::{load_features, load_idx, LabeledSet};
use somnus::ep_model::EpHyperParams;
use somnus::hyperopt::GaConfig;
use somnus::numerics::Rng;
use somnus::src_sleep::SleepParams;

use crate::CliError;

/// Hidden size and data fraction of the `--fast` tier.
pub const FAST_HIDDEN: usize = 256;
pub const FAST_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataSection,
    pub experiment: ExperimentSection,
    pub ep: EpHyperParams,
    #[serde(default)]
    pub sleep: Option<SleepParams>,
    #[serde(default)]
    pub tune: Option<TuneSection>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataFormat {
    Idx,
    Features,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub format: DataFormat,
    /// IDX image file (format = "idx").
    #[serde(default)]
    pub images: Option<PathBuf>,
    /// IDX label file (format = "idx").
    #[serde(default)]
    pub labels: Option<PathBuf>,
    /// Feature file (format = "features").
    #[serde(default)]
    pub features: Option<PathBuf>,
    pub labels_per_task: usize,
    /// Stratified fraction of the file to use.
    #[serde(default = "one")]
    pub fraction: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub strategies: Vec<Strategy>,
    /// Number of task orders: the identity followed by seeded permutations.
    #[serde(default = "six")]
    pub orders: usize,
    /// Explicit task orders; overrides `orders` when present.
    #[serde(default)]
    pub task_orders: Option<Vec<Vec<usize>>>,
    pub seed: u64,
    pub hidden: usize,
    #[serde(default)]
    pub rehearsal_fraction: f64,
    /// Fractions for the rehearsal sweep; skipped when absent.
    #[serde(default)]
    pub rehearsal_sweep: Option<Vec<f64>>,
    pub output_dir: PathBuf,
}

fn six() -> usize {
    6
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuneSection {
    /// Training epochs per task while searching.
    #[serde(default = "one_epoch")]
    pub search_epochs: usize,
    #[serde(default)]
    pub ga: Option<GaConfig>,
}

fn one_epoch() -> usize {
    1
}

impl Default for TuneSection {
    fn default() -> Self {
        Self {
            search_epochs: one_epoch(),
            ga: None,
        }
    }
}

/// A parsed, validated config together with its provenance.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub source: String,
    pub path: PathBuf,
    /// Hex SHA-256 of the config bytes plus the tier marker.
    pub hash: String,
    pub fast: bool,
}

impl LoadedConfig {
    pub fn load(path: &Path, fast: bool) -> Result<Self, CliError> {
        let source = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut config: ExperimentConfig =
            toml::from_str(&source).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let abs = fs::canonicalize(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        config.data.resolve(abs.parent().unwrap_or(Path::new("/")));
        config.validate()?;
        let mut bytes = source.clone().into_bytes();
        if fast {
            bytes.extend_from_slice(b"\n#fast");
        }
        let hash = sha256_hex(&bytes);
        Ok(Self {
            config,
            source,
            path: path.to_path_buf(),
            hash,
            fast,
        })
    }

    pub fn seed(&self) -> u64 {
        self.config.experiment.seed
    }

    /// `config_hash=… seed=…`, the provenance carried by every output.
    pub fn meta(&self) -> String {
        format!("config_hash={} seed={} fast={}", self.hash, self.seed(), self.fast)
    }

    pub fn hidden(&self) -> usize {
        if self.fast {
            FAST_HIDDEN
        } else {
            self.config.experiment.hidden
        }
    }

    pub fn fraction(&self) -> f64 {
        if self.fast {
            self.config.data.fraction * FAST_FRACTION
        } else {
            self.config.data.fraction
        }
    }

    /// Output directory, relative paths resolved against `SOMNUS_OUTPUT_ROOT`
    /// when set.
    pub fn output_dir(&self) -> PathBuf {
        let dir = &self.config.experiment.output_dir;
        match std::env::var_os("SOMNUS_OUTPUT_ROOT") {
            Some(root) if dir.is_relative() => Path::new(&root).join(dir),
            _ => dir.clone(),
        }
    }

    /// The config as actually run: data paths absolute and the `--fast`
    /// scaling applied.
    pub fn effective(&self) -> ExperimentConfig {
        let mut c = self.config.clone();
        c.experiment.hidden = self.hidden();
        c.data.fraction = self.fraction();
        c
    }

    pub fn load_data(&self) -> Result<LabeledSet, CliError> {
        let d = &self.config.data;
        let set = match d.format {
            DataFormat::Idx => load_idx(d.images.as_ref().unwrap(), d.labels.as_ref().unwrap()),
            DataFormat::Features => load_features(d.features.as_ref().unwrap()),
        }
        .map_err(|e| CliError::Data(e.to_string()))?;
        let fraction = self.fraction();
        Ok(if fraction < 1.0 {
            set.stratified_fraction(fraction, &mut Rng::seeded(self.seed()).fork(3))
        } else {
            set
        })
    }

    pub fn task_orders(&self, n_tasks: usize) -> Vec<Vec<usize>> {
        let e = &self.config.experiment;
        e.task_orders
            .clone()
            .unwrap_or_else(|| default_task_orders(n_tasks, e.orders, e.seed))
    }

    pub fn plan(&self, strategy: Strategy, n_tasks: usize) -> ExperimentPlan {
        let e = &self.config.experiment;
        ExperimentPlan {
            strategy,
            task_orders: self.task_orders(n_tasks),
            ep: self.config.ep.clone(),
            sleep: self.config.sleep.clone(),
            rehearsal_fraction: e.rehearsal_fraction,
            labels_per_task: self.config.data.labels_per_task,
            hidden: self.hidden(),
            seed: e.seed,
        }
    }
}

impl DataSection {
    fn resolve(&mut self, base: &Path) {
        for p in [&mut self.images, &mut self.labels, &mut self.features]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    fn validate(&self) -> Result<(), CliError> {
        let need = |p: &Option<PathBuf>, key: &str| -> Result<(), CliError> {
            match p {
                None => Err(CliError::Config(format!(
                    "data.{key} is required for format {:?}",
                    self.format
                ))),
                Some(p) if !p.is_file() => Err(CliError::Config(format!("data.{key}: {} does not exist", p.display()))),
                Some(_) => Ok(()),
            }
        };
        match self.format {
            DataFormat::Idx => {
                need(&self.images, "images")?;
                need(&self.labels, "labels")?;
            }
            DataFormat::Features => need(&self.features, "features")?,
        }
        if !(self.fraction > 0.0 && self.fraction <= 1.0) {
            return Err(CliError::Config("data.fraction must lie in (0, 1]".into()));
        }
        if self.labels_per_task == 0 {
            return Err(CliError::Config("data.labels_per_task must be positive".into()));
        }
        Ok(())
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        let cfg = |e: somnus::Error| CliError::Config(e.to_string());
        self.data.validate()?;
        self.ep.validate().map_err(cfg)?;
        let e = &self.experiment;
        if e.strategies.is_empty() {
            return Err(CliError::Config("experiment.strategies is empty".into()));
        }
        if e.hidden == 0 {
            return Err(CliError::Config("experiment.hidden must be positive".into()));
        }
        if e.orders == 0 && e.task_orders.is_none() {
            return Err(CliError::Config("experiment.orders must be positive".into()));
        }
        if !(0.0..=1.0).contains(&e.rehearsal_fraction) {
            return Err(CliError::Config(
                "experiment.rehearsal_fraction must lie in [0, 1]".into(),
            ));
        }
        if let Some(f) = e.rehearsal_sweep.iter().flatten().find(|f| !(0.0..=1.0).contains(*f)) {
            return Err(CliError::Config(format!("rehearsal_sweep fraction {f} outside [0, 1]")));
        }
        let needs_sleep = e.strategies.iter().any(|s| s.uses_sleep()) || e.rehearsal_sweep.is_some();
        match &self.sleep {
            Some(sp) => sp.validate().map_err(cfg)?,
            None if needs_sleep => return Err(CliError::Config("a sleep strategy needs a [sleep] section".into())),
            None => {}
        }
        if let Some(ga) = self.tune.as_ref().and_then(|t| t.ga.as_ref()) {
            ga.validate().map_err(cfg)?;
        }
        Ok(())
    }
}

/// Renders `sleep` as a `[sleep]` TOML section.
pub fn sleep_section(sleep: &SleepParams) -> String {
    #[derive(Serialize)]
    struct Wrap<'a> {
        sleep: &'a SleepParams,
    }
    toml::to_string(&Wrap { sleep }).expect("sleep params serialize")
}

pub fn to_toml(config: &ExperimentConfig) -> String {
    toml::to_string(config).expect("config serializes")
}

/// Hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
