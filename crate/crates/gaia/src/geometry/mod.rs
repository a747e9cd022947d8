//! Point-cloud container, voxel downsampling, exact k-NN graphs, and
//! stochastic augmentations.

mod augment;
mod knn;
mod voxel;

pub use augment::{affine_augment, elastic_distort};
pub use knn::build_knn_graph;
pub use voxel::voxel_downsample;

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// A labeled point set: 3D coordinates in meters, RGB in [0,1], class
/// labels (−1 = unknown), and per-point annotation flags marking the
/// sparse supervision actually visible to training.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub coords: Vec<[f64; 3]>,
    pub colors: Vec<[f64; 3]>,
    pub labels: Vec<i32>,
    pub annotated: Vec<bool>,
    /// Number of classes Y the labels refer to.
    pub n_classes: usize,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    /// Checks the container invariants: parallel lengths, finite coords,
    /// colors in [0,1], labels in {−1} ∪ {0..Y−1}, and a label on every
    /// annotated point.
    pub fn validate(&self) -> Result<()> {
        let n = self.coords.len();
        if self.colors.len() != n || self.labels.len() != n || self.annotated.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "cloud arrays disagree: {} coords, {} colors, {} labels, {} flags",
                n,
                self.colors.len(),
                self.labels.len(),
                self.annotated.len()
            )));
        }
        for i in 0..n {
            if self.coords[i].iter().any(|v| !v.is_finite()) {
                return Err(Error::ShapeMismatch(format!("non-finite coordinate at point {i}")));
            }
            if self.colors[i].iter().any(|&c| !(0.0..=1.0).contains(&c)) {
                return Err(Error::ShapeMismatch(format!("color out of [0,1] at point {i}")));
            }
            let l = self.labels[i];
            if l < -1 || l >= self.n_classes as i32 {
                return Err(Error::ShapeMismatch(format!("label {l} out of range at point {i}")));
            }
            if self.annotated[i] && l < 0 {
                return Err(Error::ShapeMismatch(format!("annotated point {i} has no label")));
            }
        }
        Ok(())
    }

    /// Indices of annotated points.
    pub fn annotated_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.annotated[i]).collect()
    }
}

/// Fixed-fan-out neighbor index over a cloud: `neighbors[i]` holds the k
/// nearest other points of point i, `dists[i]` the matching Euclidean
/// distances sorted ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct KnnGraph {
    pub k: usize,
    pub neighbors: Vec<Vec<u32>>,
    pub dists: Vec<Vec<f64>>,
}

impl KnnGraph {
    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }
}

/// Rotation axis for the affine augmentation.
///
/// Defaults to X. Scene-level augmentation more commonly rotates about
/// the gravity (Z) axis; that stays one config field away.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RotationAxis {
    #[default]
    X,
    Y,
    Z,
}

/// Knobs for the stochastic augmentations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentParams {
    /// Std-dev of i.i.d. Gaussian coordinate noise, meters.
    pub noise_sigma: f64,
    /// Probability of negating the x coordinate.
    pub flip_x: f64,
    /// Probability of negating the y coordinate.
    pub flip_y: f64,
    /// Rotation angle is drawn uniformly from [0, rot_angle_range).
    pub rot_angle_range: f64,
    /// Axis the rotation is taken about.
    pub rot_axis: RotationAxis,
    /// Grid spacing of the elastic displacement field, meters.
    pub elastic_granularity: f64,
    /// Scale of the elastic displacement field, meters.
    pub elastic_magnitude: f64,
}

impl Default for AugmentParams {
    fn default() -> Self {
        AugmentParams {
            noise_sigma: 0.005,
            flip_x: 0.5,
            flip_y: 0.5,
            rot_angle_range: std::f64::consts::TAU,
            rot_axis: RotationAxis::X,
            elastic_granularity: 0.2,
            elastic_magnitude: 0.08,
        }
    }
}

impl AugmentParams {
    /// Identity augmentation: all randomness off.
    pub fn none() -> Self {
        AugmentParams {
            noise_sigma: 0.0,
            flip_x: 0.0,
            flip_y: 0.0,
            rot_angle_range: 0.0,
            rot_axis: RotationAxis::X,
            elastic_granularity: 0.2,
            elastic_magnitude: 0.0,
        }
    }

    /// Checks that magnitudes are nonnegative and probabilities are in [0,1].
    pub fn validate(&self) -> Result<()> {
        let ok = self.noise_sigma >= 0.0
            && (0.0..=1.0).contains(&self.flip_x)
            && (0.0..=1.0).contains(&self.flip_y)
            && self.rot_angle_range >= 0.0
            && self.elastic_granularity > 0.0
            && self.elastic_magnitude >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidSpec("augmentation parameters out of range".into()))
        }
    }
}
