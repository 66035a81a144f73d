//! Trains the four pruning/attention variants on identical data and
//! evaluates them on the same held-out episodes.
//!
//! cargo run --release --example evaluate_ablation -- [episodes]

use std::sync::Arc;

use trajaware::config::{EvalMode, RunConfig};
use trajaware::experiment::{ablation_variants, Experiment};
use trajaware::policy::DqnPolicy;
use trajaware::sim::{CongestionMode, ObservationMode};

fn main() -> trajaware::Result<()> {
    let episodes = std::env::args().nth(1).map_or(1000, |s| s.parse().expect("episodes"));
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
    let mode = EvalMode {
        observation: ObservationMode::Complete,
        congestion: CongestionMode::NoCongestion,
    };

    println!("{:<15} {:>8} {:>8} {:>6}", "variant", "spr", "pspr", "rr");
    for (name, arch) in ablation_variants(exp.config().policy) {
        let net = exp.train_policy(arch, None)?.net;
        let s = exp.evaluate(&DqnPolicy::greedy(Arc::new(net)), &mode, None)?.summary;
        println!(
            "{name:<15} {:>8} {:>8.4} {:>6.3}",
            s.avg_spr.map_or("n/a".into(), |v| format!("{v:.4}")),
            s.avg_pspr,
            s.rr
        );
    }
    Ok(())
}
