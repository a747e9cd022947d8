//! Voxel-grid downsampling.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::geometry::PointCloud;

/// Per-voxel running sums while scanning the cloud.
struct Cell {
    coord_sum: [f64; 3],
    color_sum: [f64; 3],
    count: usize,
    /// Label votes from annotated members only.
    votes: Vec<u32>,
    first_member: usize,
}

/// Collapses the cloud onto a grid of cubic voxels with edge `voxel`:
/// one output point per occupied voxel, carrying the mean coordinates
/// and colors of its members. The label is the majority label among
/// annotated members (ties go to the lowest class id); the output point
/// is annotated iff any member was. Output order is by each voxel's
/// first member index, so results are deterministic.
pub fn voxel_downsample(cloud: &PointCloud, voxel: f64) -> Result<PointCloud> {
    if cloud.is_empty() {
        return Err(Error::EmptyInput);
    }
    assert!(voxel > 0.0, "voxel size must be positive");

    let y = cloud.n_classes;
    let mut index: HashMap<[i64; 3], usize> = HashMap::new();
    let mut cells: Vec<Cell> = Vec::new();

    for i in 0..cloud.len() {
        let c = cloud.coords[i];
        let key = [
            (c[0] / voxel).floor() as i64,
            (c[1] / voxel).floor() as i64,
            (c[2] / voxel).floor() as i64,
        ];
        let slot = *index.entry(key).or_insert_with(|| {
            cells.push(Cell {
                coord_sum: [0.0; 3],
                color_sum: [0.0; 3],
                count: 0,
                votes: vec![0; y],
                first_member: i,
            });
            cells.len() - 1
        });
        let cell = &mut cells[slot];
        for a in 0..3 {
            cell.coord_sum[a] += c[a];
            cell.color_sum[a] += cloud.colors[i][a];
        }
        cell.count += 1;
        if cloud.annotated[i] {
            cell.votes[cloud.labels[i] as usize] += 1;
        }
    }

    // Cells were pushed in first-member order because the scan above runs
    // in point order, so this is already the documented output order.
    let mut order: Vec<usize> = (0..cells.len()).collect();
    order.sort_by_key(|&s| cells[s].first_member);

    let mut out = PointCloud {
        coords: Vec::with_capacity(cells.len()),
        colors: Vec::with_capacity(cells.len()),
        labels: Vec::with_capacity(cells.len()),
        annotated: Vec::with_capacity(cells.len()),
        n_classes: y,
    };
    for slot in order {
        let cell = &cells[slot];
        let inv = 1.0 / cell.count as f64;
        out.coords.push([
            cell.coord_sum[0] * inv,
            cell.coord_sum[1] * inv,
            cell.coord_sum[2] * inv,
        ]);
        out.colors.push([
            cell.color_sum[0] * inv,
            cell.color_sum[1] * inv,
            cell.color_sum[2] * inv,
        ]);
        let mut label = -1i32;
        let mut best = 0u32;
        for (cls, &v) in cell.votes.iter().enumerate() {
            // Strict > keeps the lowest class id on ties.
            if v > best {
                best = v;
                label = cls as i32;
            }
        }
        out.labels.push(label);
        out.annotated.push(best > 0);
    }
    Ok(out)
}
