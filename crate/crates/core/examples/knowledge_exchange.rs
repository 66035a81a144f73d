//! Proactive knowledge exchange on a line of vehicles: how stale each
//! vehicle's knowledge of the others is, against the missing-steps formula,
//! for several broadcast frequencies.
//!
//! cargo run --release --example knowledge_exchange

use trajaware::comm::Topology;
use trajaware::obs::{exchange_second, KnowledgeBases, DEFAULT_EVICTION_AGE};
use trajaware::road::{TraceFrame, VehicleId, VehicleState};
use trajaware::traj::missing_steps;
use trajaware::Point;

fn main() -> trajaware::Result<()> {
    let n = 13;
    let frames: Vec<TraceFrame> = (0..20)
        .map(|t| TraceFrame {
            time_step: t,
            vehicles: (0..n)
                .map(|i| VehicleState {
                    vehicle_id: i as VehicleId,
                    position: Point::new(700.0 * i as f64, 0.0),
                    speed: 0.0,
                    planned_path: vec![0],
                })
                .collect(),
        })
        .collect();
    let topo = Topology::from_frame(&frames[0], 800.0)?;

    println!("hops    f=1    f=2    f=4  (simulated/formula)");
    let mut rows = vec![String::new(); n - 1];
    for f in [1u32, 2, 4] {
        let mut bases = KnowledgeBases::new();
        for frame in &frames {
            exchange_second(frame, &mut bases, &topo, f as usize, DEFAULT_EVICTION_AGE)?;
        }
        for hop in 1..n {
            let seen = bases[&0].staleness(hop as VehicleId).unwrap_or(-1);
            let formula = missing_steps(hop as u32, f)?;
            rows[hop - 1].push_str(&format!("  {seen:>2}/{formula:<2}"));
        }
    }
    for (i, r) in rows.iter().enumerate() {
        println!("{:>4}{r}", i + 1);
    }
    Ok(())
}
