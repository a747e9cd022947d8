//! Stochastic augmentations: rigid affine jitter and elastic distortion.
//!
//! Both are pure functions of (cloud, params, seed); colors, labels,
//! annotation flags, and point count are never touched.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};

use crate::geometry::{AugmentParams, PointCloud, RotationAxis};

/// Rotates by a uniform angle in [0, rot_angle_range) about the
/// configured axis, optionally negates the x and/or y coordinates (each
/// with its own probability), then adds i.i.d. Gaussian noise with
/// std-dev `noise_sigma` to every coordinate.
pub fn affine_augment(cloud: &PointCloud, params: &AugmentParams, seed: u64) -> PointCloud {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let angle = if params.rot_angle_range > 0.0 {
        rng.random_range(0.0..params.rot_angle_range)
    } else {
        0.0
    };
    let flip_x = rng.random::<f64>() < params.flip_x;
    let flip_y = rng.random::<f64>() < params.flip_y;
    let (sin, cos) = angle.sin_cos();

    let mut out = cloud.clone();
    let noise = if params.noise_sigma > 0.0 {
        Some(Normal::new(0.0, params.noise_sigma).unwrap())
    } else {
        None
    };
    for c in out.coords.iter_mut() {
        let [x, y, z] = *c;
        let mut p = match params.rot_axis {
            RotationAxis::X => [x, y * cos - z * sin, y * sin + z * cos],
            RotationAxis::Y => [x * cos + z * sin, y, -x * sin + z * cos],
            RotationAxis::Z => [x * cos - y * sin, x * sin + y * cos, z],
        };
        if flip_x {
            p[0] = -p[0];
        }
        if flip_y {
            p[1] = -p[1];
        }
        if let Some(n) = &noise {
            for v in p.iter_mut() {
                *v += n.sample(&mut rng);
            }
        }
        *c = p;
    }
    out
}

/// Displaces coordinates by a smooth random field: uniform(−1,1) noise on
/// a grid with spacing `elastic_granularity`, blurred twice per axis with
/// a [1,2,1]/4 kernel, trilinearly interpolated at each point, and scaled
/// by `elastic_magnitude`. The kernel averages, so no displacement ever
/// exceeds the magnitude.
pub fn elastic_distort(cloud: &PointCloud, params: &AugmentParams, seed: u64) -> PointCloud {
    assert!(params.elastic_granularity > 0.0, "elastic granularity must be positive");
    let mut out = cloud.clone();
    if params.elastic_magnitude == 0.0 || cloud.is_empty() {
        return out;
    }

    let g = params.elastic_granularity;
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for c in &cloud.coords {
        for a in 0..3 {
            lo[a] = lo[a].min(c[a]);
            hi[a] = hi[a].max(c[a]);
        }
    }
    // One cell of margin on each side keeps every sample's 8 corners on
    // the grid: a point maps to grid coordinate in [1, 1 + extent/g].
    let origin = [lo[0] - g, lo[1] - g, lo[2] - g];
    let mut nv = [0usize; 3];
    for a in 0..3 {
        nv[a] = ((hi[a] - lo[a]) / g).ceil() as usize + 3;
    }
    let idx = |ix: usize, iy: usize, iz: usize, ch: usize| ((ix * nv[1] + iy) * nv[2] + iz) * 3 + ch;

    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut field: Vec<f64> = (0..nv[0] * nv[1] * nv[2] * 3)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();

    // Two separable blur passes over each axis.
    let mut scratch = field.clone();
    for _pass in 0..2 {
        for axis in 0..3 {
            for ix in 0..nv[0] {
                for iy in 0..nv[1] {
                    for iz in 0..nv[2] {
                        for ch in 0..3 {
                            let at = |p: isize| -> f64 {
                                let mut q = [ix as isize, iy as isize, iz as isize];
                                q[axis] = p.clamp(0, nv[axis] as isize - 1);
                                field[idx(q[0] as usize, q[1] as usize, q[2] as usize, ch)]
                            };
                            let p = [ix, iy, iz][axis] as isize;
                            scratch[idx(ix, iy, iz, ch)] =
                                0.25 * at(p - 1) + 0.5 * at(p) + 0.25 * at(p + 1);
                        }
                    }
                }
            }
            std::mem::swap(&mut field, &mut scratch);
        }
    }

    for c in out.coords.iter_mut() {
        let t = [
            (c[0] - origin[0]) / g,
            (c[1] - origin[1]) / g,
            (c[2] - origin[2]) / g,
        ];
        let i0 = [t[0].floor() as usize, t[1].floor() as usize, t[2].floor() as usize];
        let f = [t[0] - i0[0] as f64, t[1] - i0[1] as f64, t[2] - i0[2] as f64];
        for ch in 0..3 {
            let mut acc = 0.0;
            for corner in 0..8 {
                let dx = corner & 1;
                let dy = (corner >> 1) & 1;
                let dz = (corner >> 2) & 1;
                let w = (if dx == 1 { f[0] } else { 1.0 - f[0] })
                    * (if dy == 1 { f[1] } else { 1.0 - f[1] })
                    * (if dz == 1 { f[2] } else { 1.0 - f[2] });
                acc += w * field[idx(i0[0] + dx, i0[1] + dy, i0[2] + dz, ch)];
            }
            c[ch] += params.elastic_magnitude * acc;
        }
    }
    out
}
