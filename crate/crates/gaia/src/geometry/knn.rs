//! Exact k-nearest-neighbor graph construction.
//!
//! Small or high-fan-out inputs take a direct O(N²) scan; otherwise a
//! uniform hash grid with expanding Chebyshev rings prunes candidates.
//! Both paths return exactly the same graph: ties in distance are broken
//! by the lower point index, so the result is unique.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::geometry::{KnnGraph, PointCloud};

/// Below this size (or above this fan-out fraction) the grid overhead
/// outweighs the direct scan.
const BRUTE_FORCE_N: usize = 512;

#[inline]
fn d2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

#[inline]
fn by_dist_then_index(a: &(f64, u32), b: &(f64, u32)) -> std::cmp::Ordering {
    a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1))
}

/// Builds the exact k-NN graph over `cloud.coords` (self excluded).
/// Requires k < N; neighbor lists come back sorted by distance with
/// index tie-breaks.
pub fn build_knn_graph(cloud: &PointCloud, k: usize) -> Result<KnnGraph> {
    let n = cloud.len();
    if k >= n {
        return Err(Error::FanOutExceedsCloud);
    }
    if k == 0 {
        return Ok(KnnGraph { k, neighbors: vec![Vec::new(); n], dists: vec![Vec::new(); n] });
    }
    if n <= BRUTE_FORCE_N || k * 4 >= n {
        return Ok(brute_force(cloud, k));
    }
    Ok(grid_search(cloud, k))
}

fn brute_force(cloud: &PointCloud, k: usize) -> KnnGraph {
    let n = cloud.len();
    let mut neighbors = Vec::with_capacity(n);
    let mut dists = Vec::with_capacity(n);
    let mut cands: Vec<(f64, u32)> = Vec::with_capacity(n - 1);
    for i in 0..n {
        cands.clear();
        for j in 0..n {
            if j != i {
                cands.push((d2(&cloud.coords[i], &cloud.coords[j]), j as u32));
            }
        }
        cands.select_nth_unstable_by(k - 1, by_dist_then_index);
        cands.truncate(k);
        cands.sort_unstable_by(by_dist_then_index);
        neighbors.push(cands.iter().map(|c| c.1).collect());
        dists.push(cands.iter().map(|c| c.0.sqrt()).collect());
    }
    KnnGraph { k, neighbors, dists }
}

fn grid_search(cloud: &PointCloud, k: usize) -> KnnGraph {
    let n = cloud.len();
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for c in &cloud.coords {
        for a in 0..3 {
            lo[a] = lo[a].min(c[a]);
            hi[a] = hi[a].max(c[a]);
        }
    }
    let max_extent = (0..3).map(|a| hi[a] - lo[a]).fold(0.0, f64::max);
    if max_extent <= 0.0 {
        // All points coincide; every distance ties and indices decide.
        return brute_force(cloud, k);
    }
    // Cube cells sized so the bounding cube splits into ~N cells.
    let cell = max_extent / (n as f64).cbrt().ceil();

    let key_of = |c: &[f64; 3]| -> [i32; 3] {
        let mut key = [0i32; 3];
        for a in 0..3 {
            key[a] = ((c[a] - lo[a]) / cell).floor() as i32;
        }
        key
    };
    let mut grid: HashMap<[i32; 3], Vec<u32>> = HashMap::new();
    for (i, c) in cloud.coords.iter().enumerate() {
        grid.entry(key_of(c)).or_default().push(i as u32);
    }
    // From any cell, a ring index beyond this covers the whole grid.
    let r_cap = (max_extent / cell).ceil() as i32 + 2;

    let mut neighbors = Vec::with_capacity(n);
    let mut dists = Vec::with_capacity(n);
    let mut cands: Vec<(f64, u32)> = Vec::new();
    for i in 0..n {
        let q = &cloud.coords[i];
        let ck = key_of(q);
        cands.clear();
        for r in 0..=r_cap {
            for dx in -r..=r {
                for dy in -r..=r {
                    for dz in -r..=r {
                        // Visit only the shell at Chebyshev radius r.
                        if dx.abs().max(dy.abs()).max(dz.abs()) != r {
                            continue;
                        }
                        let key = [ck[0] + dx, ck[1] + dy, ck[2] + dz];
                        if let Some(bucket) = grid.get(&key) {
                            for &j in bucket {
                                if j as usize != i {
                                    cands.push((d2(q, &cloud.coords[j as usize]), j));
                                }
                            }
                        }
                    }
                }
            }
            // Any point not yet seen sits at Chebyshev ring ≥ r+1 and thus
            // at Euclidean distance ≥ r·cell. Strict < keeps equality cases
            // (where an unseen point could still win a tie on index) open.
            if cands.len() >= k {
                let kth = cands
                    .select_nth_unstable_by(k - 1, by_dist_then_index)
                    .1
                     .0
                    .sqrt();
                if kth < r as f64 * cell {
                    break;
                }
            }
        }
        cands.select_nth_unstable_by(k - 1, by_dist_then_index);
        cands.truncate(k);
        cands.sort_unstable_by(by_dist_then_index);
        neighbors.push(cands.iter().map(|c| c.1).collect::<Vec<u32>>());
        dists.push(cands.iter().map(|c| c.0.sqrt()).collect::<Vec<f64>>());
    }
    KnnGraph { k, neighbors, dists }
}
