//! Run configuration: a sectioned TOML file plus `section.key=value`
//! overrides from the command line.

use std::path::{Path, PathBuf};

use pingpong::channel::{AngleRange, Geometry, LinkMode};
use pingpong::harness::{ExperimentSpec, PolicyId, TrainConfig};
use pingpong::policies::NetConfig;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub system: System,
    pub experiment: Experiment,
    #[serde(default)]
    pub network: Network,
    #[serde(default)]
    pub training: Training,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct System {
    /// `direct` or `ris`.
    pub mode: String,
    pub mt: usize,
    pub mr: usize,
    #[serde(default)]
    pub ris_elements: usize,
    #[serde(default)]
    pub ris_horizontal: usize,
    #[serde(default = "default_paths")]
    pub paths: usize,
    #[serde(default = "default_ris_paths")]
    pub ris_tx_paths: usize,
    #[serde(default = "default_ris_paths")]
    pub ris_rx_paths: usize,
    /// [min, max] in degrees.
    #[serde(default = "default_range")]
    pub azimuth_deg: [f64; 2],
    #[serde(default = "default_range")]
    pub elevation_deg: [f64; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Experiment {
    pub policy: String,
    #[serde(default = "default_rounds")]
    pub rounds: Vec<usize>,
    #[serde(default = "default_snr")]
    pub snr_db: Vec<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_episodes")]
    pub eval_episodes: usize,
    /// 0 uses every core.
    #[serde(default)]
    pub workers: usize,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Network {
    pub hidden_a: usize,
    pub hidden_b: usize,
    pub head: Vec<usize>,
    pub batch_norm: bool,
}

impl Default for Network {
    fn default() -> Self {
        let n = NetConfig::default();
        Self {
            hidden_a: n.hidden_a,
            hidden_b: n.hidden_b,
            head: n.head,
            batch_norm: n.batch_norm,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Training {
    pub batch_size: usize,
    pub steps_per_epoch: usize,
    pub max_epochs: usize,
    pub validation_size: usize,
    pub patience: usize,
    pub lr: f64,
    pub lr_decay: f64,
    pub lr_drops: usize,
    pub seed: u64,
}

impl Default for Training {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            batch_size: t.batch_size,
            steps_per_epoch: t.steps_per_epoch,
            max_epochs: t.max_epochs,
            validation_size: t.validation_size,
            patience: t.patience,
            lr: t.lr,
            lr_decay: t.lr_decay,
            lr_drops: t.lr_drops,
            seed: t.seed,
        }
    }
}

fn default_paths() -> usize {
    3
}
fn default_ris_paths() -> usize {
    2
}
fn default_range() -> [f64; 2] {
    [-60.0, 60.0]
}
fn default_rounds() -> Vec<usize> {
    vec![4]
}
fn default_snr() -> Vec<f64> {
    vec![0.0]
}
fn default_episodes() -> usize {
    10_000
}
fn default_output() -> PathBuf {
    PathBuf::from("out")
}

/// Parses an override value as TOML, falling back to a bare string.
fn parse_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.into()),
    }
}

/// Applies `section.key=value` to the raw document.
pub fn apply_override(doc: &mut toml::Table, spec: &str) -> Result<(), String> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| format!("override `{spec}` is not of the form section.key=value"))?;
    let (section, key) = path
        .trim()
        .split_once('.')
        .ok_or_else(|| format!("override key `{}` must be section.key", path.trim()))?;
    let entry = doc
        .entry(section.to_string())
        .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    let table = entry
        .as_table_mut()
        .ok_or_else(|| format!("`{section}` is not a section"))?;
    table.insert(key.to_string(), parse_value(raw.trim()));
    Ok(())
}

pub fn parse(text: &str, overrides: &[String]) -> Result<RunConfig, String> {
    let mut doc: toml::Table = text.parse().map_err(|e: toml::de::Error| e.message().to_string())?;
    for o in overrides {
        apply_override(&mut doc, o)?;
    }
    RunConfig::deserialize(doc).map_err(|e| e.message().to_string())
}

pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig, String> {
    let text = match path {
        Some(p) => std::fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?,
        None => String::new(),
    };
    parse(&text, overrides)
}

impl RunConfig {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn spec(&self) -> Result<ExperimentSpec, String> {
        let s = &self.system;
        let mode: LinkMode = s.mode.parse().map_err(|e: pingpong::Error| e.to_string())?;
        let geometry = match mode {
            LinkMode::Direct => Geometry::direct(s.mt, s.mr),
            LinkMode::Ris => Geometry::with_ris(s.mt, s.mr, s.ris_elements, s.ris_horizontal),
        };
        let policy: PolicyId = self.experiment.policy.parse().map_err(|e: pingpong::Error| e.to_string())?;
        let t = &self.training;
        let spec = ExperimentSpec {
            geometry,
            mode,
            paths: s.paths,
            ris_tx_paths: s.ris_tx_paths,
            ris_rx_paths: s.ris_rx_paths,
            azimuth: AngleRange::degrees(s.azimuth_deg[0], s.azimuth_deg[1]),
            elevation: AngleRange::degrees(s.elevation_deg[0], s.elevation_deg[1]),
            snr_db: self.experiment.snr_db.clone(),
            rounds: self.experiment.rounds.clone(),
            policy,
            net: NetConfig {
                hidden_a: self.network.hidden_a,
                hidden_b: self.network.hidden_b,
                head: self.network.head.clone(),
                batch_norm: self.network.batch_norm,
            },
            train: TrainConfig {
                batch_size: t.batch_size,
                steps_per_epoch: t.steps_per_epoch,
                max_epochs: t.max_epochs,
                validation_size: t.validation_size,
                patience: t.patience,
                lr: t.lr,
                lr_decay: t.lr_decay,
                lr_drops: t.lr_drops,
                seed: t.seed,
            },
            eval_episodes: self.experiment.eval_episodes,
            seed: self.experiment.seed,
            workers: self.experiment.workers,
            output_dir: self.experiment.output_dir.clone(),
        };
        spec.validate().map_err(|e| e.to_string())?;
        Ok(spec)
    }
}
