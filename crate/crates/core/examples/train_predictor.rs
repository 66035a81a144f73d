//! Trains the GRU trajectory predictor on two cities and reports its error
//! on a third, per number of missing steps.
//!
//! cargo run --release --example train_predictor -- [epochs]

use trajaware::road::{calibrate_density, generate_map, simulate_traffic, RoadNetwork, TraceFrame, TrafficParams};
use trajaware::traj::{evaluate_predictor, train_predictor, PredictorConfig};

fn city(seed: u64) -> trajaware::Result<(RoadNetwork, Vec<TraceFrame>)> {
    let map = generate_map(seed, 5, 5, 600.0, 0.3)?;
    let density = calibrate_density(&map, 40.0, seed);
    let traffic = simulate_traffic(
        &map,
        &TrafficParams {
            seed,
            duration: 300,
            density,
            burn_in: None,
        },
    )?;
    Ok((map, traffic.frames))
}

fn main() -> trajaware::Result<()> {
    let epochs = std::env::args().nth(1).map_or(8, |s| s.parse().expect("epochs"));
    let cities = [city(1)?, city(2)?];
    let (test_map, test_frames) = city(3)?;
    let data: Vec<_> = cities.iter().map(|(m, f)| (m, f.as_slice())).collect();
    let cfg = PredictorConfig {
        hidden: 32,
        epochs,
        ..PredictorConfig::default()
    };
    let (predictor, log) = train_predictor(&data, &cfg)?;
    for row in &log {
        println!("epoch {:>3} loss {:.5}", row.epoch, row.loss);
    }
    println!(
        "held-out city, mean segment {:.1} m",
        test_map.mean_segment_length()
    );
    for b in evaluate_predictor(&predictor, &test_map, &test_frames, 5, 1000, 9)? {
        println!(
            "missing steps {} : {:>7.2} m over {} samples (max off-road {:.1e} m)",
            b.missing_steps, b.mean_error_m, b.count, b.max_off_road_m
        );
    }
    Ok(())
}
