//! Perturbed-grid city maps.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::network::{NodeId, RoadNetwork, SegmentNode, MAX_SEGMENT_LENGTH};
use crate::error::{Error, Result};
use crate::geom::Point;

/// Builds a connected grid city of `grid_cols × grid_rows` junctions spaced
/// `cell_size` metres apart.
///
/// Junctions are jittered by up to `perturbation × cell_size / 4` on each axis
/// and a fraction `perturbation / 4` of the roads is removed where doing so
/// keeps the map connected. Roads longer than [`MAX_SEGMENT_LENGTH`] are split
/// into equal pieces by extra segment nodes. Junction ids are
/// `row * grid_cols + col`; split nodes follow.
pub fn generate_map(
    seed: u64,
    grid_cols: usize,
    grid_rows: usize,
    cell_size: f64,
    perturbation: f64,
) -> Result<RoadNetwork> {
    if grid_cols < 2 || grid_rows < 2 {
        return Err(Error::Parameter(format!(
            "grid must be at least 2x2, got {grid_cols}x{grid_rows}"
        )));
    }
    if !(cell_size > 0.0) || !cell_size.is_finite() {
        return Err(Error::Parameter(format!("cell_size must be positive, got {cell_size}")));
    }
    if !(0.0..=1.0).contains(&perturbation) {
        return Err(Error::Parameter(format!(
            "perturbation must lie in [0, 1], got {perturbation}"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let width = (grid_cols - 1) as f64 * cell_size;
    let height = (grid_rows - 1) as f64 * cell_size;
    let jitter = perturbation * cell_size / 4.0;

    let mut nodes = Vec::with_capacity(grid_cols * grid_rows);
    for r in 0..grid_rows {
        for c in 0..grid_cols {
            let jx: f64 = rng.gen_range(-1.0..=1.0);
            let jy: f64 = rng.gen_range(-1.0..=1.0);
            let x = (c as f64 * cell_size + jx * jitter).clamp(0.0, width);
            let y = (r as f64 * cell_size + jy * jitter).clamp(0.0, height);
            nodes.push(SegmentNode {
                id: (r * grid_cols + c) as NodeId,
                position: Point::new(x, y),
            });
        }
    }
    let junctions: Vec<NodeId> = nodes.iter().map(|n| n.id).collect();

    let mut roads = Vec::new();
    for r in 0..grid_rows {
        for c in 0..grid_cols {
            let id = r * grid_cols + c;
            if c + 1 < grid_cols {
                roads.push((id, id + 1));
            }
            if r + 1 < grid_rows {
                roads.push((id, id + grid_cols));
            }
        }
    }

    let drop_p = perturbation / 4.0;
    if drop_p > 0.0 {
        let mut order: Vec<usize> = (0..roads.len()).collect();
        order.shuffle(&mut rng);
        let mut keep = vec![true; roads.len()];
        for i in order {
            if rng.gen::<f64>() >= drop_p {
                continue;
            }
            keep[i] = false;
            if !grid_connected(grid_cols * grid_rows, &roads, &keep) {
                keep[i] = true;
            }
        }
        roads = roads
            .into_iter()
            .zip(keep)
            .filter_map(|(r, k)| k.then_some(r))
            .collect();
    }

    let mut segments = Vec::new();
    let mut next_id = (grid_cols * grid_rows) as NodeId;
    for (a, b) in roads {
        let pa = nodes[a].position;
        let pb = nodes[b].position;
        let mut pieces = (pa.dist(pb) / MAX_SEGMENT_LENGTH).ceil().max(1.0) as usize;
        // rounding can leave a piece a hair above the cap
        while (1..=pieces).any(|k| {
            pa.lerp(pb, (k - 1) as f64 / pieces as f64)
                .dist(pa.lerp(pb, k as f64 / pieces as f64))
                > MAX_SEGMENT_LENGTH
        }) {
            pieces += 1;
        }
        let mut prev = a as NodeId;
        for k in 1..pieces {
            let id = next_id;
            next_id += 1;
            nodes.push(SegmentNode {
                id,
                position: pa.lerp(pb, k as f64 / pieces as f64),
            });
            segments.push((prev, id));
            prev = id;
        }
        segments.push((prev, b as NodeId));
    }

    RoadNetwork::new(nodes, segments, junctions)
}

fn grid_connected(n: usize, roads: &[(usize, usize)], keep: &[bool]) -> bool {
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    let mut components = n;
    for (&(a, b), &k) in roads.iter().zip(keep) {
        if !k {
            continue;
        }
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra != rb {
            parent[ra] = rb;
            components -= 1;
        }
    }
    components == 1
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_dimensions() {
        assert!(matches!(generate_map(1, 1, 4, 100.0, 0.0), Err(Error::Parameter(_))));
        assert!(matches!(generate_map(1, 3, 3, 0.0, 0.0), Err(Error::Parameter(_))));
        assert!(matches!(generate_map(1, 3, 3, 10.0, 1.5), Err(Error::Parameter(_))));
    }

    #[test]
    fn unperturbed_square() {
        let net = generate_map(1, 2, 2, 1000.0, 0.0).unwrap();
        let corners: Vec<Point> = net
            .junctions()
            .iter()
            .map(|&j| net.position(j).unwrap())
            .collect();
        assert_eq!(
            corners,
            vec![
                Point::new(0.0, 0.0),
                Point::new(1000.0, 0.0),
                Point::new(0.0, 1000.0),
                Point::new(1000.0, 1000.0)
            ]
        );
        // four 1000 m roads, each split into five 200 m pieces
        assert_eq!(net.segments().len(), 20);
        assert_eq!(net.nodes().len(), 4 + 16);
    }
}
