//! Geometry tests: voxel downsampling, exact k-NN against a brute-force
//! oracle, and the two augmentation families.

use rand::Rng;

use gaia::geometry::{
    affine_augment, build_knn_graph, elastic_distort, voxel_downsample, AugmentParams, PointCloud,
    RotationAxis,
};
use gaia::seeding::rng_for;
use gaia::Error;

/// Cloud with gray colors, all points labeled 0 and annotated.
fn cloud_from_coords(coords: Vec<[f64; 3]>, n_classes: usize) -> PointCloud {
    let n = coords.len();
    PointCloud {
        coords,
        colors: vec![[0.5, 0.5, 0.5]; n],
        labels: vec![0; n],
        annotated: vec![true; n],
        n_classes,
    }
}

/// Uniform random cloud in a cube of the given side length.
fn random_cloud(n: usize, side: f64, seed: u64) -> PointCloud {
    let mut rng = rng_for(seed, "test-cloud", 0);
    let coords = (0..n)
        .map(|_| {
            [
                rng.random_range(0.0..side),
                rng.random_range(0.0..side),
                rng.random_range(0.0..side),
            ]
        })
        .collect();
    cloud_from_coords(coords, 2)
}

/// O(N²) reference: all pairwise distances, sorted by (distance², index).
fn brute_knn(cloud: &PointCloud, k: usize) -> (Vec<Vec<u32>>, Vec<Vec<f64>>) {
    let n = cloud.len();
    let mut neighbors = Vec::with_capacity(n);
    let mut dists = Vec::with_capacity(n);
    for i in 0..n {
        let mut cand: Vec<(f64, u32)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| {
                let a = cloud.coords[i];
                let b = cloud.coords[j];
                let d2 = (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2);
                (d2, j as u32)
            })
            .collect();
        cand.sort_by(|x, y| x.partial_cmp(y).unwrap());
        cand.truncate(k);
        neighbors.push(cand.iter().map(|&(_, j)| j).collect());
        dists.push(cand.iter().map(|&(d2, _)| d2.sqrt()).collect());
    }
    (neighbors, dists)
}

// ---------------------------------------------------------------- voxel

#[test]
fn voxel_merges_cube_corners_to_centroid() {
    let s = 0.01;
    let coords = (0..8)
        .map(|c| [(c & 1) as f64 * s, ((c >> 1) & 1) as f64 * s, ((c >> 2) & 1) as f64 * s])
        .collect();
    let cloud = cloud_from_coords(coords, 2);
    let out = voxel_downsample(&cloud, 0.02).unwrap();
    assert_eq!(out.len(), 1);
    for a in 0..3 {
        assert!((out.coords[0][a] - s / 2.0).abs() < 1e-12, "centroid axis {a}");
    }
    assert_eq!(out.labels[0], 0);
    assert!(out.annotated[0]);
}

#[test]
fn voxel_keeps_distant_points_apart() {
    let cloud = cloud_from_coords(vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]], 2);
    let out = voxel_downsample(&cloud, 0.02).unwrap();
    assert_eq!(out.len(), 2);
    assert_eq!(out.coords, cloud.coords);
    assert_eq!(out.colors, cloud.colors);
}

#[test]
fn voxel_count_matches_bucket_oracle() {
    let cloud = random_cloud(1000, 0.1, 3);
    let v = 0.02;
    let out = voxel_downsample(&cloud, v).unwrap();
    let occupied: std::collections::HashSet<[i64; 3]> = cloud
        .coords
        .iter()
        .map(|c| [(c[0] / v).floor() as i64, (c[1] / v).floor() as i64, (c[2] / v).floor() as i64])
        .collect();
    assert_eq!(out.len(), occupied.len());
}

#[test]
fn voxel_downsample_is_idempotent() {
    for seed in 0..5 {
        let mut cloud = random_cloud(400, 0.5, seed);
        // Mix in unannotated points so the label path is exercised too.
        for i in 0..cloud.len() {
            if i % 3 == 0 {
                cloud.annotated[i] = false;
                cloud.labels[i] = -1;
            } else {
                cloud.labels[i] = (i % 2) as i32;
            }
        }
        let once = voxel_downsample(&cloud, 0.07).unwrap();
        let twice = voxel_downsample(&once, 0.07).unwrap();
        assert_eq!(once, twice, "seed {seed}");
    }
}

#[test]
fn voxel_majority_vote_and_tie_break() {
    // One cell: two annotated class-1 points, one annotated class-0.
    let mut cloud = cloud_from_coords(
        vec![[0.001, 0.0, 0.0], [0.002, 0.0, 0.0], [0.003, 0.0, 0.0]],
        3,
    );
    cloud.labels = vec![1, 1, 0];
    let out = voxel_downsample(&cloud, 0.02).unwrap();
    assert_eq!(out.labels, vec![1]);

    // Tie between classes 0 and 2 goes to the lower class id.
    cloud.labels = vec![2, 0, -1];
    cloud.annotated = vec![true, true, false];
    let out = voxel_downsample(&cloud, 0.02).unwrap();
    assert_eq!(out.labels, vec![0]);
    assert!(out.annotated[0]);

    // No annotated member: unlabeled, unannotated output.
    cloud.labels = vec![-1, -1, -1];
    cloud.annotated = vec![false, false, false];
    let out = voxel_downsample(&cloud, 0.02).unwrap();
    assert_eq!(out.labels, vec![-1]);
    assert!(!out.annotated[0]);
}

#[test]
fn voxel_rejects_empty_cloud() {
    let cloud = cloud_from_coords(Vec::new(), 2);
    let err = voxel_downsample(&cloud, 0.02).unwrap_err();
    assert!(matches!(err, Error::EmptyInput));
    assert_eq!(err.to_string(), "empty input");
}

// ----------------------------------------------------------------- knn

#[test]
fn knn_collinear_example() {
    let cloud = cloud_from_coords(vec![[0.0; 3], [1.0, 0.0, 0.0], [3.0, 0.0, 0.0]], 2);
    let g = build_knn_graph(&cloud, 1).unwrap();
    assert_eq!(g.neighbors, vec![vec![1], vec![0], vec![1]]);
    assert_eq!(g.dists, vec![vec![1.0], vec![1.0], vec![2.0]]);
}

#[test]
fn knn_complete_graph_is_permutation() {
    let cloud = random_cloud(40, 1.0, 4);
    let g = build_knn_graph(&cloud, 39).unwrap();
    for i in 0..40 {
        let mut seen: Vec<u32> = g.neighbors[i].clone();
        seen.push(i as u32);
        seen.sort_unstable();
        let all: Vec<u32> = (0..40).collect();
        assert_eq!(seen, all, "row {i} must cover every other index");
        for w in g.dists[i].windows(2) {
            assert!(w[0] <= w[1], "distances sorted ascending");
        }
    }
}

#[test]
fn knn_matches_brute_force_on_500_points() {
    let cloud = random_cloud(500, 1.0, 5);
    let g = build_knn_graph(&cloud, 16).unwrap();
    let (nb, nd) = brute_knn(&cloud, 16);
    assert_eq!(g.neighbors, nb);
    for (row, oracle) in g.dists.iter().zip(&nd) {
        for (a, b) in row.iter().zip(oracle) {
            assert!((a - b).abs() <= 1e-9 * b.max(1.0), "distance {a} vs oracle {b}");
        }
    }
}

#[test]
fn knn_grid_path_matches_brute_force() {
    // Large enough that the grid index (not brute force) handles it,
    // including duplicated coordinates to stress tie-breaking.
    let mut cloud = random_cloud(1500, 2.0, 6);
    for i in 0..50 {
        cloud.coords[i + 600] = cloud.coords[i];
    }
    for &k in &[1, 5, 16] {
        let g = build_knn_graph(&cloud, k).unwrap();
        let (nb, _) = brute_knn(&cloud, k);
        assert_eq!(g.neighbors, nb, "k = {k}");
    }
}

#[test]
fn knn_skewed_extents_match_brute_force() {
    // A thin slab: grid cells are cubic, so most are empty along one axis.
    let mut cloud = random_cloud(900, 1.0, 7);
    for c in cloud.coords.iter_mut() {
        c[2] *= 0.01;
    }
    let g = build_knn_graph(&cloud, 8).unwrap();
    let (nb, _) = brute_knn(&cloud, 8);
    assert_eq!(g.neighbors, nb);
}

#[test]
fn knn_ties_resolve_to_lower_index() {
    // Four corners of a square: each corner's two nearest neighbors are
    // the equidistant adjacent corners; the lower index must come first
    // only via the (distance, index) order.
    let cloud = cloud_from_coords(
        vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [1.0, 1.0, 0.0]],
        2,
    );
    let g = build_knn_graph(&cloud, 2).unwrap();
    assert_eq!(g.neighbors[0], vec![1, 2]);
    assert_eq!(g.neighbors[3], vec![1, 2]);
}

#[test]
fn knn_rejects_excess_fan_out() {
    let cloud = random_cloud(8, 1.0, 8);
    let err = build_knn_graph(&cloud, 8).unwrap_err();
    assert!(matches!(err, Error::FanOutExceedsCloud));
    assert_eq!(err.to_string(), "fan-out exceeds cloud");
    assert!(build_knn_graph(&cloud, 7).is_ok());
}

#[test]
fn knn_no_self_loops_and_exact_distances() {
    let cloud = random_cloud(800, 1.0, 9);
    let g = build_knn_graph(&cloud, 12).unwrap();
    for i in 0..cloud.len() {
        for (slot, &j) in g.neighbors[i].iter().enumerate() {
            assert_ne!(j as usize, i, "self loop at {i}");
            let a = cloud.coords[i];
            let b = cloud.coords[j as usize];
            let d = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt();
            assert!((g.dists[i][slot] - d).abs() <= 1e-9 * d.max(1.0));
        }
    }
}

// --------------------------------------------------------- augmentation

#[test]
fn affine_zero_params_is_identity() {
    let cloud = random_cloud(100, 1.0, 10);
    let mut p = AugmentParams::none();
    p.rot_axis = RotationAxis::Z;
    let out = affine_augment(&cloud, &p, 123);
    assert_eq!(out.coords, cloud.coords);
    assert_eq!(out, cloud);
}

#[test]
fn affine_forced_x_flip_negates_x() {
    let cloud = cloud_from_coords(vec![[1.0, 2.0, 3.0]], 2);
    let mut p = AugmentParams::none();
    p.flip_x = 1.0;
    let out = affine_augment(&cloud, &p, 99);
    assert_eq!(out.coords[0], [-1.0, 2.0, 3.0]);
}

#[test]
fn affine_noise_mean_displacement_is_small() {
    let n = 10_000;
    let cloud = random_cloud(n, 1.0, 11);
    let sigma = 0.01;
    let mut p = AugmentParams::none();
    p.noise_sigma = sigma;
    let out = affine_augment(&cloud, &p, 42);
    let bound = 3.0 * sigma / (n as f64).sqrt();
    for a in 0..3 {
        let mean: f64 = out
            .coords
            .iter()
            .zip(&cloud.coords)
            .map(|(o, c)| o[a] - c[a])
            .sum::<f64>()
            / n as f64;
        assert!(mean.abs() < bound, "axis {a}: |{mean}| >= {bound}");
    }
}

#[test]
fn affine_rotation_preserves_axis_coordinate() {
    let cloud = random_cloud(50, 1.0, 12);
    for (axis, keep) in [(RotationAxis::X, 0), (RotationAxis::Y, 1), (RotationAxis::Z, 2)] {
        let mut p = AugmentParams::none();
        p.rot_angle_range = std::f64::consts::TAU;
        p.rot_axis = axis;
        let out = affine_augment(&cloud, &p, 7);
        for (o, c) in out.coords.iter().zip(&cloud.coords) {
            assert!((o[keep] - c[keep]).abs() < 1e-12, "{axis:?} leaves axis {keep} fixed");
            let on: f64 = o.iter().map(|v| v * v).sum();
            let cn: f64 = c.iter().map(|v| v * v).sum();
            assert!((on - cn).abs() < 1e-9, "rotation preserves norms");
        }
    }
}

#[test]
fn augmentations_never_touch_labels_or_counts() {
    let mut cloud = random_cloud(200, 1.0, 13);
    for i in 0..cloud.len() {
        cloud.labels[i] = (i % 2) as i32;
        cloud.annotated[i] = i % 5 == 0;
        if !cloud.annotated[i] {
            cloud.labels[i] = -1;
        }
    }
    let p = AugmentParams::default();
    for seed in 0..10 {
        let a = affine_augment(&cloud, &p, seed);
        let e = elastic_distort(&cloud, &p, seed);
        for out in [&a, &e] {
            assert_eq!(out.len(), cloud.len());
            assert_eq!(out.labels, cloud.labels);
            assert_eq!(out.annotated, cloud.annotated);
            assert_eq!(out.colors, cloud.colors);
        }
    }
}

#[test]
fn elastic_zero_magnitude_is_identity() {
    let cloud = random_cloud(100, 1.0, 14);
    let mut p = AugmentParams::none();
    p.elastic_magnitude = 0.0;
    p.elastic_granularity = 0.2;
    let out = elastic_distort(&cloud, &p, 55);
    assert_eq!(out.coords, cloud.coords);
}

#[test]
fn elastic_displacement_bounded_over_100_seeds() {
    let cloud = random_cloud(200, 1.0, 15);
    let p = AugmentParams::default();
    let bound = 4.0 * p.elastic_magnitude;
    let mut distinct = std::collections::HashSet::new();
    for seed in 0..100 {
        let out = elastic_distort(&cloud, &p, seed);
        let mut max_disp = 0.0f64;
        for (o, c) in out.coords.iter().zip(&cloud.coords) {
            for a in 0..3 {
                max_disp = max_disp.max((o[a] - c[a]).abs());
            }
        }
        assert!(max_disp <= bound, "seed {seed}: {max_disp} > {bound}");
        distinct.insert(format!("{:.17e}", out.coords[0][0]));
    }
    assert!(distinct.len() > 90, "seeds must produce distinct fields ({})", distinct.len());
}

#[test]
fn elastic_single_point_bounded() {
    let cloud = cloud_from_coords(vec![[0.3, 0.4, 0.5]], 2);
    let p = AugmentParams::default();
    let bound = 4.0 * p.elastic_magnitude;
    for seed in 0..100 {
        let out = elastic_distort(&cloud, &p, seed);
        for a in 0..3 {
            let disp = (out.coords[0][a] - cloud.coords[0][a]).abs();
            assert!(disp <= bound, "seed {seed} axis {a}: {disp}");
        }
    }
}

#[test]
fn augment_params_validation() {
    let mut p = AugmentParams::default();
    assert!(p.validate().is_ok());
    p.noise_sigma = -0.1;
    assert!(p.validate().is_err());
    p = AugmentParams::default();
    p.flip_x = 1.5;
    assert!(p.validate().is_err());
}

#[test]
fn cloud_validation_catches_bad_invariants() {
    let mut cloud = random_cloud(10, 1.0, 16);
    assert!(cloud.validate().is_ok());

    cloud.colors[3] = [1.2, 0.0, 0.0];
    assert!(cloud.validate().is_err());
    cloud.colors[3] = [0.2, 0.0, 0.0];

    // Annotated point without a label.
    cloud.labels[4] = -1;
    cloud.annotated[4] = true;
    assert!(cloud.validate().is_err());
}
