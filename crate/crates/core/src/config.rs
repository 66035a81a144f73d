//! Run configuration: one TOML or JSON file holding every knob, with
//! dotted-path overrides and validation that names the offending field.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::comm::DEFAULT_COMM_RANGE;
use crate::dqn::TrainConfig;
use crate::error::{Error, Result};
use crate::obs::WARM_UP_ROUNDS;
use crate::policy::PolicyArch;
use crate::sim::{CongestionMode, ObservationMode, DEFAULT_TTL};
use crate::traj::PredictorConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldConfig {
    /// Number of synthetic maps; one is held out.
    pub maps: usize,
    /// Index of the held-out map.
    pub holdout: usize,
    pub grid_cols: usize,
    pub grid_rows: usize,
    pub cell_size: f64,
    pub perturbation: f64,
    /// Vehicles kept on the road on average.
    pub target_vehicles: f64,
    /// Trace length in seconds.
    pub duration: usize,
    pub comm_range: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            maps: 6,
            holdout: 5,
            grid_cols: 6,
            grid_rows: 6,
            cell_size: 600.0,
            perturbation: 0.3,
            target_vehicles: 55.0,
            duration: 600,
            comm_range: DEFAULT_COMM_RANGE,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Dqn,
    Oracle,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalMode {
    pub observation: ObservationMode,
    pub congestion: CongestionMode,
}

impl EvalMode {
    pub fn label(&self) -> String {
        let obs = match self.observation {
            ObservationMode::Complete => "complete".to_string(),
            ObservationMode::Partial { f } => format!("partial_f{f}"),
        };
        let con = match self.congestion {
            CongestionMode::NoCongestion => "no_congestion",
            CongestionMode::Congestion => "congestion",
        };
        format!("{obs}/{con}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub episodes: usize,
    pub ttl: u32,
    pub policy: PolicyKind,
    pub modes: Vec<EvalMode>,
    /// Roll stale knowledge forward with the trained predictor under partial
    /// observation.
    pub use_predictor: bool,
    pub warm_up_rounds: usize,
    pub background_packets: usize,
    pub checkpoint: Option<PathBuf>,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            episodes: 300,
            ttl: DEFAULT_TTL,
            policy: PolicyKind::Dqn,
            modes: vec![EvalMode {
                observation: ObservationMode::Complete,
                congestion: CongestionMode::NoCongestion,
            }],
            use_predictor: true,
            warm_up_rounds: WARM_UP_ROUNDS,
            background_packets: 8,
            checkpoint: None,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    /// Where data, checkpoints and reports go.
    pub output_dir: PathBuf,
    pub world: WorldConfig,
    pub predictor: PredictorConfig,
    pub policy: PolicyArch,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            output_dir: PathBuf::from("runs/default"),
            world: WorldConfig::default(),
            predictor: PredictorConfig::default(),
            policy: PolicyArch::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

fn field(path: &str, ok: bool, what: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Validation(format!("{path}: {what}")))
    }
}

fn within(path: &str, r: Result<()>) -> Result<()> {
    r.map_err(|e| Error::Validation(format!("{path}: {e}")))
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let w = &self.world;
        field("world.maps", w.maps >= 3, "need at least 2 training maps and 1 held-out map")?;
        field("world.holdout", w.holdout < w.maps, "must index one of the maps")?;
        field("world.grid_cols", w.grid_cols >= 2, "must be at least 2")?;
        field("world.grid_rows", w.grid_rows >= 2, "must be at least 2")?;
        field("world.cell_size", w.cell_size > 0.0 && w.cell_size.is_finite(), "must be positive")?;
        field("world.perturbation", (0.0..=1.0).contains(&w.perturbation), "must lie in [0, 1]")?;
        field("world.target_vehicles", w.target_vehicles > 0.0, "must be positive")?;
        field("world.duration", w.duration > 0, "must be positive")?;
        field("world.comm_range", w.comm_range > 0.0 && w.comm_range.is_finite(), "must be positive")?;

        let a = &self.policy.actions;
        field("policy.actions.k_max", a.k_max >= 1, "must be at least 1")?;
        field("policy.actions.unpruned_cap", a.unpruned_cap >= 1, "must be at least 1")?;
        field("policy.heads", self.policy.heads >= 1, "must be at least 1")?;
        within("policy", self.policy.validate())?;

        let t = &self.train;
        field("train.gamma", t.gamma > 0.0 && t.gamma < 1.0, "must lie in (0, 1)")?;
        field("train.batch_size", t.batch_size >= 1, "must be at least 1")?;
        field("train.buffer_capacity", t.buffer_capacity >= t.batch_size, "must hold at least one batch")?;
        field("train.target_sync_every", t.target_sync_every >= 1, "must be at least 1")?;
        field("train.ttl", t.ttl >= 1, "must be at least 1")?;
        within("train", t.validate())?;
        within("predictor", self.predictor.validate())?;

        let e = &self.eval;
        field("eval.episodes", e.episodes >= 1, "must be at least 1")?;
        field("eval.ttl", e.ttl >= 1, "must be at least 1")?;
        field("eval.modes", !e.modes.is_empty(), "list at least one mode")?;
        for (i, m) in e.modes.iter().enumerate() {
            if let ObservationMode::Partial { f } = m.observation {
                field(&format!("eval.modes[{i}].observation.f"), f >= 1, "must be at least 1")?;
            }
        }
        let lead_in = (e.warm_up_rounds as i64).max(10);
        field(
            "world.duration",
            w.duration as i64 > lead_in + e.ttl.max(t.ttl) as i64 + 2,
            "trace too short for the warm-up and hop budget",
        )?;
        Ok(())
    }

    /// Loads a `.json` or `.toml` file (by extension), without validating.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        if is_json {
            serde_json::from_str(&text).map_err(|e| Error::Validation(format!("{}: {e}", path.display())))
        } else {
            toml::from_str(&text).map_err(|e| Error::Validation(format!("{}: {e}", path.display())))
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    /// Applies `key=value` where `key` is a dotted path such as
    /// `train.gamma` and `value` is a TOML literal (bare words are strings).
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Validation(format!("override `{assignment}` is not key=value")))?;
        let key = key.trim();
        let raw = raw.trim();
        let value: toml::Value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(raw.to_string()));
        let mut root = toml::Value::try_from(&*self)
            .map_err(|e| Error::Validation(format!("config cannot be edited: {e}")))?;
        let mut slot = &mut root;
        let parts: Vec<&str> = key.split('.').collect();
        for (i, part) in parts.iter().enumerate() {
            let table = slot
                .as_table_mut()
                .ok_or_else(|| Error::Validation(format!("{key}: `{}` is not a table", parts[..i].join("."))))?;
            if i + 1 == parts.len() {
                table.insert((*part).to_string(), value.clone());
                break;
            }
            slot = table
                .entry((*part).to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        }
        *self = root
            .try_into()
            .map_err(|e: toml::de::Error| Error::Validation(format!("{key}: {}", e.message())))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn zero_k_max_names_the_field() {
        let mut cfg = RunConfig::default();
        cfg.apply_override("policy.actions.k_max=0").unwrap();
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("policy.actions.k_max"), "{err}");
    }

    #[test]
    fn overrides_reach_nested_fields() {
        let mut cfg = RunConfig::default();
        cfg.apply_override("train.gamma=0.9").unwrap();
        cfg.apply_override("eval.policy=oracle").unwrap();
        cfg.apply_override("output_dir=out/x").unwrap();
        assert_eq!(cfg.train.gamma, 0.9);
        assert_eq!(cfg.eval.policy, PolicyKind::Oracle);
        assert_eq!(cfg.output_dir, PathBuf::from("out/x"));
        assert!(cfg.apply_override("train.no_such_knob=1").is_err());
    }

    #[test]
    fn json_round_trip() {
        let cfg = RunConfig::default();
        let back: RunConfig = serde_json::from_str(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
    }
}
