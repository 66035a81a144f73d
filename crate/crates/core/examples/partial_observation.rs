//! Routing on each holder's own knowledge instead of the true graph:
//! shortest-path routing on estimated topologies at several broadcast
//! frequencies, with and without trajectory prediction, and with link
//! congestion.
//!
//! cargo run --release --example partial_observation

use std::sync::Arc;

use trajaware::config::{EvalMode, RunConfig};
use trajaware::experiment::Experiment;
use trajaware::policy::OraclePolicy;
use trajaware::sim::{CongestionMode, ObservationMode};

fn main() -> trajaware::Result<()> {
    let mut cfg = RunConfig::default();
    cfg.world.maps = 4;
    cfg.world.holdout = 3;
    cfg.world.duration = 300;
    cfg.predictor.hidden = 32;
    cfg.predictor.epochs = 6;
    cfg.eval.episodes = 200;
    let exp = Experiment::generate(cfg)?;
    let (predictor, _) = exp.train_predictor()?;
    let predictor = Arc::new(predictor);
    let policy = OraclePolicy {
        actions: exp.config().policy.actions,
    };

    let modes = [
        (ObservationMode::Complete, CongestionMode::NoCongestion),
        (ObservationMode::Partial { f: 1 }, CongestionMode::NoCongestion),
        (ObservationMode::Partial { f: 2 }, CongestionMode::NoCongestion),
        (ObservationMode::Partial { f: 4 }, CongestionMode::NoCongestion),
        (ObservationMode::Partial { f: 4 }, CongestionMode::Congestion),
    ];
    for (observation, congestion) in modes {
        let mode = EvalMode { observation, congestion };
        for (label, pred) in [("predicted", Some(Arc::clone(&predictor))), ("last seen", None)] {
            if observation == ObservationMode::Complete && pred.is_none() {
                continue;
            }
            let ev = exp.evaluate(&policy, &mode, pred)?;
            let s = ev.summary;
            println!(
                "{:<26} {:<9} spr {:<7} pspr {:.4} rr {:.3} max link load {:.2}",
                mode.label(),
                label,
                s.avg_spr.map_or("n/a".into(), |v| format!("{v:.4}")),
                s.avg_pspr,
                s.rr,
                ev.max_link_load
            );
        }
    }
    Ok(())
}
