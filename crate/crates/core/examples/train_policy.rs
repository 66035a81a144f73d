//! Trains the full routing policy (pruning + cross-attention) on the
//! training cities of a small run and compares it with shortest-path and
//! random routing on the held-out city.
//!
//! cargo run --release --example train_policy -- [episodes]

use std::sync::Arc;

use trajaware::config::{EvalMode, RunConfig};
use trajaware::experiment::Experiment;
use trajaware::policy::{DqnPolicy, OraclePolicy, RandomPolicy, RoutingPolicy};
use trajaware::sim::{CongestionMode, ObservationMode};

fn main() -> trajaware::Result<()> {
    let episodes = std::env::args().nth(1).map_or(1500, |s| s.parse().expect("episodes"));
    let mut cfg = RunConfig::default();
    cfg.world.maps = 4;
    cfg.world.holdout = 3;
    cfg.world.duration = 300;
    cfg.policy.hidden = 32;
    cfg.policy.d_h = 32;
    cfg.train.episodes = episodes;
    cfg.train.batch_size = 32;
    cfg.train.epsilon.decay_steps = (episodes as u64) * 5;
    cfg.train.target_sync_every = 250;
    cfg.eval.episodes = 200;
    let exp = Experiment::generate(cfg)?;

    let out = exp.train_policy(exp.config().policy, None)?;
    for row in out.log.iter().step_by((episodes / 10).max(1)) {
        println!(
            "episode {:>5} steps {:>6} epsilon {:.2} loss {}",
            row.episode,
            row.steps,
            row.epsilon,
            row.loss.map_or("-".into(), |l| format!("{l:.3}"))
        );
    }

    let mode = EvalMode {
        observation: ObservationMode::Complete,
        congestion: CongestionMode::NoCongestion,
    };
    let actions = exp.config().policy.actions;
    let policies: Vec<Box<dyn RoutingPolicy>> = vec![
        Box::new(DqnPolicy::greedy(Arc::new(out.net))),
        Box::new(OraclePolicy { actions }),
        Box::new(RandomPolicy { actions }),
    ];
    for p in &policies {
        let s = exp.evaluate(p.as_ref(), &mode, None)?.summary;
        println!(
            "{:<11} spr {:<7} pspr {:.4} rr {:.4}",
            p.name(),
            s.avg_spr.map_or("n/a".into(), |v| format!("{v:.4}")),
            s.avg_pspr,
            s.rr
        );
    }
    Ok(())
}
