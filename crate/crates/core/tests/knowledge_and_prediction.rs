mod common;

use proptest::prelude::*;
use rand::Rng;

use common::{relay_timestamps, rng};
use trajaware::comm::Topology;
use trajaware::obs::{exchange_second, warm_up_schedule, KnowledgeBases, DEFAULT_EVICTION_AGE};
use trajaware::road::{generate_map, generate_traffic, TraceFrame, VehicleId, VehicleState};
use trajaware::traj::{collect_samples, missing_steps, project_to_road, Observation, Predictor};
use trajaware::Point;

fn chain_frame(t: i64, n: usize) -> TraceFrame {
    TraceFrame {
        time_step: t,
        vehicles: (0..n)
            .map(|i| VehicleState {
                vehicle_id: i as VehicleId,
                position: Point::new(700.0 * i as f64, 0.0),
                speed: 0.0,
                planned_path: vec![0],
            })
            .collect(),
    }
}

#[test]
fn chain_staleness_equals_missing_steps() {
    let n = 21;
    let seconds = 30;
    let frames: Vec<TraceFrame> = (0..seconds).map(|t| chain_frame(t, n)).collect();
    let topo = Topology::from_frame(&frames[0], 800.0).unwrap();
    for f in [1u32, 2, 4] {
        let mut bases = KnowledgeBases::new();
        for frame in &frames {
            exchange_second(frame, &mut bases, &topo, f as usize, DEFAULT_EVICTION_AGE).unwrap();
        }
        let owner = &bases[&0];
        for hop in 1..=20u32 {
            let staleness = owner.staleness(hop as VehicleId).unwrap();
            assert_eq!(
                staleness,
                i64::from(missing_steps(hop, f).unwrap()),
                "n_hop={hop} f={f}"
            );
        }
    }
}

#[test]
fn exchange_matches_direct_relay_on_random_graphs() {
    let mut r = rng(17);
    for case in 0..40 {
        let n = r.gen_range(2..20);
        let nodes = (0..n)
            .map(|i| (i as VehicleId, Point::new(r.gen_range(0.0..3000.0), r.gen_range(0.0..800.0))))
            .collect::<Vec<_>>();
        let topo = Topology::from_positions(nodes.clone(), 800.0).unwrap();
        let rounds = r.gen_range(1..4);
        let seconds = r.gen_range(1..8);
        let frames: Vec<TraceFrame> = (0..seconds)
            .map(|t| TraceFrame {
                time_step: t,
                vehicles: nodes
                    .iter()
                    .map(|&(id, p)| VehicleState {
                        vehicle_id: id,
                        position: p,
                        speed: 0.0,
                        planned_path: vec![0],
                    })
                    .collect(),
            })
            .collect();
        let mut bases = KnowledgeBases::new();
        for frame in &frames {
            exchange_second(frame, &mut bases, &topo, rounds, DEFAULT_EVICTION_AGE).unwrap();
        }
        let adj = topo.neighbour_lists().to_vec();
        let expect = relay_timestamps(&adj, seconds, rounds);
        for i in 0..n {
            let base = &bases[&(i as VehicleId)];
            let got: Vec<Option<i64>> = (0..n)
                .map(|k| base.entries.get(&(k as VehicleId)).map(|e| e.last_seen_t))
                .collect();
            assert_eq!(got, expect[i], "case {case} owner {i}");
        }
    }
}

#[test]
fn knowledge_bases_hold_fresh_self_and_no_future_entries() {
    let map = generate_map(3, 4, 4, 500.0, 0.3).unwrap();
    let frames = generate_traffic(&map, 3, 60, 0.6).unwrap();
    let mut bases = KnowledgeBases::new();
    for frame in &frames {
        let topo = Topology::from_frame(frame, 800.0).unwrap();
        exchange_second(frame, &mut bases, &topo, 2, DEFAULT_EVICTION_AGE).unwrap();
        let t = frame.time_step;
        assert_eq!(bases.len(), frame.vehicles.len());
        for (&owner, base) in &bases {
            assert_eq!(base.staleness(owner), Some(0));
            for e in base.entries.values() {
                assert!(e.last_seen_t <= t);
                assert!(t - e.last_seen_t <= DEFAULT_EVICTION_AGE);
                assert!(!e.history.is_empty());
            }
        }
    }
}

proptest! {
    #[test]
    fn warm_up_runs_exactly_the_requested_rounds(t0 in 20i64..200, f in 1u32..6, rounds in 1usize..30) {
        let s = warm_up_schedule(t0, f, rounds);
        prop_assert_eq!(s.iter().map(|&(_, k)| k).sum::<usize>(), rounds);
        prop_assert_eq!(s.last().unwrap().0, t0);
        prop_assert!(s.iter().all(|&(_, k)| k >= 1 && k <= f as usize));
        prop_assert!(s.windows(2).all(|w| w[1].0 == w[0].0 + 1));
        prop_assert!(s[1..].iter().all(|&(_, k)| k == f as usize));
    }

    #[test]
    fn missing_steps_is_ceil_minus_one(n in 1u32..200, f in 1u32..10) {
        let m = missing_steps(n, f).unwrap();
        prop_assert!(m * f < n && n <= (m + 1) * f);
    }
}

fn brute_force_projection(p: Point, map: &trajaware::road::RoadNetwork) -> f64 {
    let mut best = f64::INFINITY;
    for s in 0..map.segments().len() {
        let (a, b) = map.segment_points(s);
        let steps = 4000;
        for i in 0..=steps {
            let q = a.lerp(b, i as f64 / steps as f64);
            best = best.min(p.dist(q));
        }
    }
    best
}

#[test]
fn projection_matches_dense_sampling() {
    let map = generate_map(5, 4, 4, 400.0, 0.3).unwrap();
    let (w, h) = map.bounds();
    let mut r = rng(5);
    for _ in 0..100 {
        let p = Point::new(r.gen_range(-100.0..w + 100.0), r.gen_range(-100.0..h + 100.0));
        let q = project_to_road(p, &map).unwrap();
        let bd = brute_force_projection(p, &map);
        assert!(p.dist(q) <= bd + 1e-9);
        assert!((p.dist(q) - bd).abs() < 0.1, "{} vs {}", p.dist(q), bd);
        assert!(map.distance_to_network(q).0 < 1e-9);
    }
}

#[test]
fn rollouts_stay_on_the_road_and_zero_steps_is_exact() {
    let map = generate_map(8, 4, 4, 500.0, 0.3).unwrap();
    let frames = generate_traffic(&map, 8, 80, 0.5).unwrap();
    let samples = collect_samples(&frames, 5, 1).unwrap();
    assert!(!samples.is_empty());
    let predictor = Predictor::new(16, 5, 2).unwrap();
    for s in samples.iter().step_by(7).take(60) {
        let last = s.history.last().unwrap().position;
        let p0 = predictor.rollout(&map, &s.history, &s.planned_path, 0).unwrap();
        assert_eq!(p0, last);
        for steps in 1..=5 {
            let p = predictor.rollout(&map, &s.history, &s.planned_path, steps).unwrap();
            assert!(p.is_finite());
            assert!(map.distance_to_network(p).0 < 1e-9, "steps {steps}");
        }
    }
}

#[test]
fn rollout_is_deterministic_and_rejects_empty_history() {
    let map = generate_map(9, 3, 3, 500.0, 0.2).unwrap();
    let frames = generate_traffic(&map, 9, 40, 0.5).unwrap();
    let s = &collect_samples(&frames, 5, 1).unwrap()[0];
    let a = Predictor::new(8, 5, 4).unwrap();
    let b = Predictor::new(8, 5, 4).unwrap();
    let pa = a.rollout(&map, &s.history, &s.planned_path, 3).unwrap();
    let pb = b.rollout(&map, &s.history, &s.planned_path, 3).unwrap();
    assert_eq!(pa, pb);
    let empty: Vec<Observation> = Vec::new();
    assert!(a.rollout(&map, &empty, &s.planned_path, 1).is_err());
}
