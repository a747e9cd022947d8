//! Synthetic-scene tests: spec validation, determinism, class balance,
//! and the geometric promises of each layout.

use gaia::synth::{generate, Layout, SceneSpec};
use gaia::Error;

/// Spec with the given layout, size, and seed; defaults elsewhere.
fn spec(layout: Layout, n_points: usize, n_classes: usize, seed: u64) -> SceneSpec {
    SceneSpec { layout, n_points, n_classes, seed, ..Default::default() }
}

/// Per-class centroids of a fully labeled cloud.
fn centroids(cloud: &gaia::geometry::PointCloud, y: usize) -> Vec<[f64; 3]> {
    let mut sums = vec![[0.0; 3]; y];
    let mut counts = vec![0usize; y];
    for (p, &l) in cloud.coords.iter().zip(&cloud.labels) {
        let c = l as usize;
        for a in 0..3 {
            sums[c][a] += p[a];
        }
        counts[c] += 1;
    }
    for c in 0..y {
        for a in 0..3 {
            sums[c][a] /= counts[c] as f64;
        }
    }
    sums
}

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    (0..3).map(|i| (a[i] - b[i]) * (a[i] - b[i])).sum::<f64>().sqrt()
}

#[test]
fn every_layout_generates_a_valid_fully_annotated_cloud() {
    for layout in [Layout::SeparableBlobs, Layout::TouchingPlanes, Layout::MixedRoom] {
        let cloud = generate(&spec(layout, 600, 4, 3)).unwrap();
        cloud.validate().unwrap();
        assert_eq!(cloud.coords.len(), 600, "{layout:?} point count");
        assert!(cloud.annotated.iter().all(|&a| a), "{layout:?} scenes are fully labeled");
        assert!(cloud.labels.iter().all(|&l| l >= 0 && (l as usize) < 4), "{layout:?} labels");
    }
}

#[test]
fn identical_specs_give_identical_clouds() {
    for layout in [Layout::SeparableBlobs, Layout::TouchingPlanes, Layout::MixedRoom] {
        let a = generate(&spec(layout, 300, 3, 11)).unwrap();
        let b = generate(&spec(layout, 300, 3, 11)).unwrap();
        assert_eq!(a, b, "{layout:?} generation is a pure function of the spec");
    }
}

#[test]
fn different_seeds_move_the_points() {
    let a = generate(&spec(Layout::TouchingPlanes, 300, 3, 1)).unwrap();
    let b = generate(&spec(Layout::TouchingPlanes, 300, 3, 2)).unwrap();
    assert_ne!(a.coords, b.coords, "the seed drives the sampling");
}

#[test]
fn class_sizes_are_balanced_within_one_point() {
    // 301 over 4 classes can only split 76/75/75/75.
    let cloud = generate(&spec(Layout::MixedRoom, 301, 4, 5)).unwrap();
    let mut counts = vec![0usize; 4];
    for &l in &cloud.labels {
        counts[l as usize] += 1;
    }
    assert_eq!(counts.iter().sum::<usize>(), 301);
    let (min, max) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
    assert!(max - min <= 1, "counts {counts:?} must differ by at most one");
    assert!(counts.iter().all(|&c| c > 0), "every class is present");
}

#[test]
fn one_point_per_class_at_the_minimum_size() {
    let cloud = generate(&spec(Layout::SeparableBlobs, 3, 3, 7)).unwrap();
    let mut seen = vec![0usize; 3];
    for &l in &cloud.labels {
        seen[l as usize] += 1;
    }
    assert_eq!(seen, vec![1, 1, 1], "n = Y puts exactly one point on each class");
}

#[test]
fn separable_blobs_keep_clusters_far_apart() {
    let y = 3;
    let cloud = generate(&spec(Layout::SeparableBlobs, 300, y, 9)).unwrap();
    let centers = centroids(&cloud, y);
    // Cluster radius: farthest member from its own centroid.
    let mut radius: f64 = 0.0;
    for (p, &l) in cloud.coords.iter().zip(&cloud.labels) {
        radius = radius.max(dist(*p, centers[l as usize]));
    }
    for a in 0..y {
        for b in a + 1..y {
            let sep = dist(centers[a], centers[b]);
            assert!(
                sep > 3.0 * radius,
                "centroids {a},{b} at {sep:.3} vs cluster radius {radius:.3}"
            );
        }
    }
}

#[test]
fn blob_colors_are_constant_per_class_without_noise() {
    let mut s = spec(Layout::SeparableBlobs, 120, 4, 13);
    s.color_noise = 0.0;
    let cloud = generate(&s).unwrap();
    let mut class_color = vec![None; 4];
    for (col, &l) in cloud.colors.iter().zip(&cloud.labels) {
        match &class_color[l as usize] {
            None => class_color[l as usize] = Some(*col),
            Some(c) => assert_eq!(c, col, "noise-free class colors are uniform"),
        }
    }
    for a in 0..4 {
        for b in a + 1..4 {
            assert_ne!(class_color[a], class_color[b], "palette colors are distinct");
        }
    }
}

#[test]
fn touching_planes_assign_strips_by_x() {
    let y = 4;
    let s = SceneSpec { room_size: 2.0, ..spec(Layout::TouchingPlanes, 800, y, 17) };
    let cloud = generate(&s).unwrap();
    let w = 2.0 / y as f64;
    for (p, &l) in cloud.coords.iter().zip(&cloud.labels) {
        let c = l as f64;
        assert!(
            p[0] >= c * w && p[0] < (c + 1.0) * w,
            "x {} outside strip {} of width {w}",
            p[0],
            l
        );
    }
}

#[test]
fn mixed_room_puts_floor_and_wall_on_their_slabs() {
    let s = SceneSpec { room_size: 2.0, ..spec(Layout::MixedRoom, 500, 5, 19) };
    let cloud = generate(&s).unwrap();
    let thin = 0.02 * 2.0;
    for (p, &l) in cloud.coords.iter().zip(&cloud.labels) {
        match l {
            0 => assert!(p[2] >= 0.0 && p[2] < thin, "floor point off the floor: {p:?}"),
            1 => assert!(p[1] >= 0.0 && p[1] < thin, "wall point off the wall: {p:?}"),
            _ => {}
        }
    }
}

#[test]
fn noisy_colors_stay_inside_the_unit_cube() {
    let mut s = spec(Layout::TouchingPlanes, 2000, 4, 23);
    s.color_noise = 0.5;
    let cloud = generate(&s).unwrap();
    for col in &cloud.colors {
        for &c in col {
            assert!((0.0..=1.0).contains(&c), "channel {c} escaped [0,1]");
        }
    }
}

#[test]
fn bad_specs_are_rejected() {
    let base = SceneSpec::default();
    let cases = [
        SceneSpec { n_classes: 1, ..base.clone() },
        SceneSpec { n_points: 2, n_classes: 3, ..base.clone() },
        SceneSpec { room_size: 0.0, ..base.clone() },
        SceneSpec { room_size: -1.0, ..base.clone() },
        SceneSpec { room_size: f64::NAN, ..base.clone() },
        SceneSpec { color_noise: -0.1, ..base.clone() },
    ];
    for (i, s) in cases.iter().enumerate() {
        assert!(
            matches!(generate(s).unwrap_err(), Error::InvalidSpec(_)),
            "case {i} must fail validation"
        );
    }
}
