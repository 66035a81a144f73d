//! Action-space pruning on dense traffic: the radio degree of every vehicle
//! before and after keeping at most eight neighbours that cover the two-hop
//! set.
//!
//! cargo run --release --example prune_actions

use trajaware::comm::{two_hop_set, Topology};
use trajaware::pruning::{degree_histogram, prune_actions};
use trajaware::road::{calibrate_density, generate_map, simulate_traffic, TrafficParams};

fn main() -> trajaware::Result<()> {
    let map = generate_map(7, 6, 6, 600.0, 0.3)?;
    let density = calibrate_density(&map, 55.0, 7);
    let traffic = simulate_traffic(
        &map,
        &TrafficParams {
            seed: 7,
            duration: 120,
            density,
            burn_in: None,
        },
    )?;

    let (before, after) = degree_histogram(&traffic.frames, 800.0, 8)?;
    let max = |h: &std::collections::BTreeMap<usize, usize>| h.keys().next_back().copied().unwrap_or(0);
    println!("max degree before pruning {}, after {}", max(&before), max(&after));
    println!("degree  before  after");
    for d in 0..=max(&before) {
        let b = before.get(&d).copied().unwrap_or(0);
        let a = after.get(&d).copied().unwrap_or(0);
        if b + a > 0 {
            println!("{d:>6}  {b:>6}  {a:>5}");
        }
    }

    // The busiest vehicle of the busiest frame, in detail.
    let frame = traffic
        .frames
        .iter()
        .max_by_key(|f| Topology::from_frame(f, 800.0).map(|t| t.max_degree()).unwrap_or(0))
        .expect("frames");
    let topo = Topology::from_frame(frame, 800.0)?;
    let holder = (0..topo.len()).max_by_key(|&i| topo.degree(i)).expect("vehicles");
    let id = topo.node_ids()[holder];
    let kept = prune_actions(&topo, id, 8, 0)?;
    let two_hop = two_hop_set(&topo, id)?;
    println!(
        "t={} vehicle {id}: {} neighbours -> kept {:?}, covering {}/{} two-hop neighbours{}",
        frame.time_step,
        topo.degree(holder),
        kept.retained,
        kept.covered_two_hop.len(),
        two_hop.len(),
        if kept.coverage_loss { " (cover had to be cut)" } else { "" }
    );
    Ok(())
}
