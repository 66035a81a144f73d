//! Builds one synthetic city with calibrated traffic and writes its map,
//! trace and routes to a directory (default `out/city`).
//!
//! cargo run --release --example generate_city -- [dir]

use std::path::PathBuf;

use trajaware::comm::Topology;
use trajaware::road::{calibrate_density, generate_map, save_routes, save_trace, simulate_traffic, TrafficParams};

fn main() -> trajaware::Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "out/city".into()));
    std::fs::create_dir_all(&dir).map_err(|e| trajaware::Error::io(&dir, e))?;

    let map = generate_map(42, 6, 6, 600.0, 0.3)?;
    let density = calibrate_density(&map, 55.0, 42);
    let traffic = simulate_traffic(
        &map,
        &TrafficParams {
            seed: 42,
            duration: 300,
            density,
            burn_in: None,
        },
    )?;

    let (w, h) = map.bounds();
    println!(
        "map: {} segment nodes, {} segments, {} junctions, {w:.0} x {h:.0} m, mean segment {:.1} m",
        map.nodes().len(),
        map.segments().len(),
        map.junctions().len(),
        map.mean_segment_length()
    );
    println!("spawn density {density:.3} vehicles/s, {} trips", traffic.routes.len());

    let mut active = 0usize;
    let mut max_degree = 0usize;
    for frame in &traffic.frames {
        active += frame.vehicles.len();
        max_degree = max_degree.max(Topology::from_frame(frame, 800.0)?.max_degree());
    }
    println!(
        "{} frames, {:.1} vehicles on average, radio max degree {max_degree}",
        traffic.frames.len(),
        active as f64 / traffic.frames.len() as f64
    );

    map.save(&dir.join("map.json"))?;
    save_trace(&dir.join("trace.csv"), &traffic.frames)?;
    save_routes(&dir.join("routes.json"), &traffic.routes)?;
    println!("wrote {}", dir.display());
    Ok(())
}
