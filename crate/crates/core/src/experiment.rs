//! Leave-one-map-out experiments: synthetic cities, predictor and policy
//! training on all maps but one, and evaluation on the held-out map.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::config::{EvalMode, PolicyKind, RunConfig};
use crate::dqn::{run_training, write_training_log, TrainOutcome};
use crate::error::{Error, Result};
use crate::policy::{ActionSpace, DqnPolicy, OraclePolicy, PolicyArch, QNet, RandomPolicy, RoutingPolicy};
use crate::road::{
    calibrate_density, generate_map, load_trace, save_routes, save_trace, simulate_traffic, RoadNetwork, TrafficParams,
};
use crate::sim::{evaluate, write_results_csv, EpisodeConfig, Evaluation, MetricsSummary, ObservationMode, World};
use crate::traj::{evaluate_predictor, train_predictor, write_error_report, ErrorBucket, Predictor, PredictorLogRow};

/// Independent seed for stream `stream` of a run seeded with `base`.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    // splitmix64 finaliser
    let mut z = base ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn map_name(i: usize) -> String {
    format!("city{i}")
}

/// The maps and traces of one run, as radio-ready worlds.
#[derive(Debug, Clone)]
pub struct Experiment {
    cfg: RunConfig,
    worlds: Vec<Arc<World>>,
}

impl Experiment {
    /// Generates every map and trace in memory.
    pub fn generate(cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        let w = &cfg.world;
        let mut worlds = Vec::with_capacity(w.maps);
        for i in 0..w.maps {
            let (map, traffic) = generate_city(&cfg, i)?;
            worlds.push(Arc::new(World::new(
                map_name(i),
                Arc::new(map),
                Arc::new(traffic.frames),
                w.comm_range,
                cfg.policy.actions.k_max,
            )?));
        }
        Ok(Self { cfg, worlds })
    }

    /// Loads the files written by [`write_data`] from `dir`.
    pub fn load(cfg: RunConfig, dir: &Path) -> Result<Self> {
        cfg.validate()?;
        let w = &cfg.world;
        let mut worlds = Vec::with_capacity(w.maps);
        for i in 0..w.maps {
            let (map_path, trace_path, routes_path) = data_paths(dir, i);
            let map = RoadNetwork::load(&map_path)?;
            let frames = load_trace(&trace_path, &routes_path, &map)?;
            worlds.push(Arc::new(World::new(
                map_name(i),
                Arc::new(map),
                Arc::new(frames),
                w.comm_range,
                cfg.policy.actions.k_max,
            )?));
        }
        Ok(Self { cfg, worlds })
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn worlds(&self) -> &[Arc<World>] {
        &self.worlds
    }

    pub fn holdout(&self) -> &Arc<World> {
        &self.worlds[self.cfg.world.holdout]
    }

    pub fn training_worlds(&self) -> Vec<Arc<World>> {
        self.worlds
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != self.cfg.world.holdout)
            .map(|(_, w)| Arc::clone(w))
            .collect()
    }

    pub fn train_predictor(&self) -> Result<(Predictor, Vec<PredictorLogRow>)> {
        let train = self.training_worlds();
        let data: Vec<(&RoadNetwork, &[crate::road::TraceFrame])> =
            train.iter().map(|w| (&*w.map, w.frames.as_slice())).collect();
        let mut pcfg = self.cfg.predictor;
        pcfg.seed = derive_seed(self.cfg.seed ^ pcfg.seed, 11);
        train_predictor(&data, &pcfg)
    }

    /// Prediction error on the held-out map for 1..=`max_steps` missing steps.
    pub fn predictor_errors(&self, predictor: &Predictor, max_steps: usize, samples: usize) -> Result<Vec<ErrorBucket>> {
        let h = self.holdout();
        evaluate_predictor(predictor, &h.map, &h.frames, max_steps, samples, derive_seed(self.cfg.seed, 12))
    }

    pub fn train_policy(&self, arch: PolicyArch, checkpoint_dir: Option<&Path>) -> Result<TrainOutcome> {
        run_training(
            &self.training_worlds(),
            arch,
            &self.cfg.train,
            derive_seed(self.cfg.seed, 21),
            checkpoint_dir,
        )
    }

    pub fn episode_config(&self, mode: &EvalMode, predictor: Option<Arc<Predictor>>) -> EpisodeConfig {
        let e = &self.cfg.eval;
        EpisodeConfig {
            ttl: e.ttl,
            observation: mode.observation,
            congestion: mode.congestion,
            graph_every: 1,
            background_packets: e.background_packets,
            warm_up_rounds: e.warm_up_rounds,
            predictor: if e.use_predictor { predictor } else { None },
            record_experience: false,
            ..EpisodeConfig::default()
        }
    }

    /// Evaluates on the held-out map; the same episodes are drawn for every
    /// policy and mode.
    pub fn evaluate(&self, policy: &dyn RoutingPolicy, mode: &EvalMode, predictor: Option<Arc<Predictor>>) -> Result<Evaluation> {
        let e = &self.cfg.eval;
        evaluate(
            self.holdout(),
            policy,
            e.episodes,
            &self.episode_config(mode, predictor),
            derive_seed(self.cfg.seed ^ e.seed, 31),
        )
    }
}

/// Builds map `index` of a run and its traffic.
pub fn generate_city(cfg: &RunConfig, index: usize) -> Result<(RoadNetwork, crate::road::Traffic)> {
    let w = &cfg.world;
    let seed = derive_seed(cfg.seed, 1000 + index as u64);
    let map = generate_map(seed, w.grid_cols, w.grid_rows, w.cell_size, w.perturbation)?;
    let density = calibrate_density(&map, w.target_vehicles, seed);
    let traffic = simulate_traffic(
        &map,
        &TrafficParams {
            seed: derive_seed(seed, 1),
            duration: w.duration,
            density,
            burn_in: None,
        },
    )?;
    Ok((map, traffic))
}

fn data_paths(dir: &Path, i: usize) -> (PathBuf, PathBuf, PathBuf) {
    let name = map_name(i);
    (
        dir.join(format!("{name}_map.json")),
        dir.join(format!("{name}_trace.csv")),
        dir.join(format!("{name}_routes.json")),
    )
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes map JSON, trace CSV and route JSON for every map of `cfg`.
pub fn write_data(cfg: &RunConfig, dir: &Path) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    create_dir(dir)?;
    let mut written = Vec::new();
    for i in 0..cfg.world.maps {
        let (map, traffic) = generate_city(cfg, i)?;
        let (map_path, trace_path, routes_path) = data_paths(dir, i);
        map.save(&map_path)?;
        save_trace(&trace_path, &traffic.frames)?;
        save_routes(&routes_path, &traffic.routes)?;
        written.extend([map_path, trace_path, routes_path]);
    }
    Ok(written)
}

pub fn data_dir(cfg: &RunConfig) -> PathBuf {
    cfg.output_dir.join("data")
}

fn write_echo(cfg: &RunConfig) -> Result<()> {
    create_dir(&cfg.output_dir)?;
    write_text(&cfg.output_dir.join("config.echo.json"), &cfg.to_json())
}

/// Loads the run's data, generating and writing it first if absent.
pub fn open_experiment(cfg: &RunConfig) -> Result<Experiment> {
    let dir = data_dir(cfg);
    let complete = (0..cfg.world.maps).all(|i| {
        let (a, b, c) = data_paths(&dir, i);
        a.exists() && b.exists() && c.exists()
    });
    if !complete {
        write_data(cfg, &dir)?;
    }
    Experiment::load(cfg.clone(), &dir)
}

pub fn cmd_generate(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    write_echo(cfg)?;
    write_data(cfg, &data_dir(cfg))
}

pub fn predictor_path(cfg: &RunConfig) -> PathBuf {
    cfg.output_dir.join("predictor.json")
}

pub fn policy_path(cfg: &RunConfig) -> PathBuf {
    cfg.output_dir.join("qnet.json")
}

pub fn cmd_train_predictor(cfg: &RunConfig) -> Result<Vec<ErrorBucket>> {
    write_echo(cfg)?;
    let exp = open_experiment(cfg)?;
    let (predictor, log) = exp.train_predictor()?;
    predictor.save(&predictor_path(cfg))?;
    let mut text = String::from("epoch,loss\n");
    for row in &log {
        text.push_str(&format!("{},{:.6}\n", row.epoch, row.loss));
    }
    write_text(&cfg.output_dir.join("predictor_log.csv"), &text)?;
    let buckets = exp.predictor_errors(&predictor, 5, 1000)?;
    write_error_report(&cfg.output_dir.join("predictor_errors.csv"), &buckets)?;
    Ok(buckets)
}

fn train_and_save(exp: &Experiment, arch: PolicyArch, tag: &str) -> Result<(QNet, PathBuf)> {
    let cfg = exp.config();
    let ckpt_dir = cfg.output_dir.join("checkpoints").join(tag);
    create_dir(&ckpt_dir)?;
    let out = exp.train_policy(arch, Some(&ckpt_dir))?;
    let path = if tag == "full" {
        policy_path(cfg)
    } else {
        cfg.output_dir.join(format!("qnet_{tag}.json"))
    };
    out.net.save(&path)?;
    let log_name = if tag == "full" {
        "train_log.csv".to_string()
    } else {
        format!("train_log_{tag}.csv")
    };
    write_training_log(&cfg.output_dir.join(log_name), &out.log)?;
    Ok((out.net, path))
}

pub fn cmd_train_policy(cfg: &RunConfig) -> Result<PathBuf> {
    write_echo(cfg)?;
    let exp = open_experiment(cfg)?;
    Ok(train_and_save(&exp, cfg.policy, "full")?.1)
}

/// The four pruning/attention combinations, full model first.
pub fn ablation_variants(base: PolicyArch) -> Vec<(String, PolicyArch)> {
    let with = |use_pruning: bool, use_attention: bool| PolicyArch {
        use_attention,
        actions: ActionSpace {
            use_pruning,
            ..base.actions
        },
        ..base
    };
    vec![
        ("full".into(), with(true, true)),
        ("attention_only".into(), with(false, true)),
        ("pruning_only".into(), with(true, false)),
        ("neither".into(), with(false, false)),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub variant: String,
    pub policy: String,
    pub mode: EvalMode,
    pub use_pruning: bool,
    pub use_attention: bool,
    pub summary: MetricsSummary,
    pub skipped: usize,
    pub results_file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub config: RunConfig,
    pub holdout: String,
    pub cells: Vec<Cell>,
}

fn load_predictor_if_needed(cfg: &RunConfig) -> Result<Option<Arc<Predictor>>> {
    let partial = cfg
        .eval
        .modes
        .iter()
        .any(|m| matches!(m.observation, ObservationMode::Partial { .. }));
    if !(partial && cfg.eval.use_predictor) {
        return Ok(None);
    }
    let path = predictor_path(cfg);
    if !path.exists() {
        return Err(Error::Configuration(format!(
            "partial observation needs a trained predictor at {}; run train-predictor first",
            path.display()
        )));
    }
    Ok(Some(Arc::new(Predictor::load(cfg.predictor.hidden, cfg.predictor.window, &path)?)))
}

fn eval_cells(
    exp: &Experiment,
    variant: &str,
    arch: PolicyArch,
    policy: &dyn RoutingPolicy,
    predictor: &Option<Arc<Predictor>>,
    cells: &mut Vec<Cell>,
) -> Result<()> {
    let cfg = exp.config();
    for mode in &cfg.eval.modes {
        let ev = exp.evaluate(policy, mode, predictor.clone())?;
        let file = format!("results_{variant}_{}.csv", mode.label().replace('/', "_"));
        write_results_csv(&cfg.output_dir.join(&file), &ev.results)?;
        cells.push(Cell {
            variant: variant.to_string(),
            policy: policy.name().to_string(),
            mode: *mode,
            use_pruning: arch.actions.use_pruning,
            use_attention: arch.use_attention,
            summary: ev.summary,
            skipped: ev.skipped,
            results_file: file,
        });
    }
    Ok(())
}

fn write_summary(cfg: &RunConfig, exp: &Experiment, cells: Vec<Cell>) -> Result<RunSummary> {
    let summary = RunSummary {
        config: cfg.clone(),
        holdout: exp.holdout().name.clone(),
        cells,
    };
    let text = serde_json::to_string_pretty(&summary)?;
    write_text(&cfg.output_dir.join("summary.json"), &text)?;
    Ok(summary)
}

/// Evaluates one policy on the held-out map in every configured mode.
pub fn cmd_eval(cfg: &RunConfig) -> Result<RunSummary> {
    let mut cfg = cfg.clone();
    if cfg.eval.policy == PolicyKind::Dqn && cfg.eval.checkpoint.is_none() {
        cfg.eval.checkpoint = Some(policy_path(&cfg));
    }
    write_echo(&cfg)?;
    let exp = open_experiment(&cfg)?;
    let predictor = load_predictor_if_needed(&cfg)?;
    let arch = cfg.policy;
    let policy: Box<dyn RoutingPolicy> = match cfg.eval.policy {
        PolicyKind::Dqn => {
            let path = cfg.eval.checkpoint.clone().expect("set above");
            Box::new(DqnPolicy::greedy(Arc::new(QNet::load(arch, &path)?)))
        }
        PolicyKind::Oracle => Box::new(OraclePolicy { actions: arch.actions }),
        PolicyKind::Random => Box::new(RandomPolicy { actions: arch.actions }),
    };
    let mut cells = Vec::new();
    eval_cells(&exp, "configured", arch, policy.as_ref(), &predictor, &mut cells)?;
    write_summary(&cfg, &exp, cells)
}

/// Trains every pruning/attention variant and evaluates each.
pub fn cmd_ablate(cfg: &RunConfig) -> Result<RunSummary> {
    write_echo(cfg)?;
    let exp = open_experiment(cfg)?;
    let predictor = load_predictor_if_needed(cfg)?;
    let mut cells = Vec::new();
    for (tag, arch) in ablation_variants(cfg.policy) {
        let (net, _) = train_and_save(&exp, arch, &tag)?;
        let policy = DqnPolicy::greedy(Arc::new(net));
        eval_cells(&exp, &tag, arch, &policy, &predictor, &mut cells)?;
    }
    write_summary(cfg, &exp, cells)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_seeds_differ_per_stream() {
        assert_ne!(derive_seed(1, 0), derive_seed(1, 1));
        assert_eq!(derive_seed(5, 9), derive_seed(5, 9));
    }

    #[test]
    fn four_variants_full_first() {
        let v = ablation_variants(PolicyArch::default());
        assert_eq!(v.len(), 4);
        assert_eq!(v[0].0, "full");
        assert!(v[0].1.use_attention && v[0].1.actions.use_pruning);
        assert!(!v[3].1.use_attention && !v[3].1.actions.use_pruning);
    }
}
