//! Segmentation metrics and uncertainty analyses: mIoU with confusion
//! counts, prediction-entropy histograms split by correctness, and
//! anchor/point cosine-similarity matrices.

use crate::arcpoint::{self, ClassPrototypes};
use crate::error::{Error, Result};
use crate::field::{FeatureField, ProbField};
use crate::uncertainty::point_entropy;

/// Fixed histogram resolution for entropy analyses.
pub const ENTROPY_BINS: usize = 50;

/// Per-class intersection-over-union plus the confusion matrix behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct IoUReport {
    /// IoU per class; 0 for classes absent from both preds and truth.
    pub per_class_iou: Vec<f64>,
    /// Mean over included classes (present in truth or predictions).
    pub miou: f64,
    /// Row = truth class, column = predicted class.
    pub confusion: Vec<u64>,
    /// Whether the class entered the mean.
    pub included: Vec<bool>,
}

/// IoU_y = TP/(TP+FP+FN) per class. Classes absent from both truth and
/// predictions are excluded from the mean; classes predicted but never
/// true count as 0 and are included, penalizing hallucinated classes.
pub fn miou(preds: &[usize], truth: &[usize], n_classes: usize) -> Result<IoUReport> {
    if preds.len() != truth.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} predictions vs {} truth labels",
            preds.len(),
            truth.len()
        )));
    }
    let y = n_classes;
    if preds.iter().chain(truth).any(|&c| c >= y) {
        return Err(Error::ShapeMismatch(format!("class id out of range (Y = {y})")));
    }
    let mut confusion = vec![0u64; y * y];
    for (&p, &t) in preds.iter().zip(truth) {
        confusion[t * y + p] += 1;
    }
    let mut per_class_iou = vec![0.0; y];
    let mut included = vec![false; y];
    let mut sum = 0.0;
    let mut n_included = 0usize;
    for c in 0..y {
        let tp = confusion[c * y + c];
        let row: u64 = (0..y).map(|p| confusion[c * y + p]).sum();
        let col: u64 = (0..y).map(|t| confusion[t * y + c]).sum();
        let denom = row + col - tp;
        if denom > 0 {
            per_class_iou[c] = tp as f64 / denom as f64;
            included[c] = true;
            sum += per_class_iou[c];
            n_included += 1;
        }
    }
    let miou = if n_included > 0 { sum / n_included as f64 } else { 0.0 };
    Ok(IoUReport { per_class_iou, miou, confusion, included })
}

/// Prediction-entropy histograms per true class, split by correctness.
/// Bins are fixed: [`ENTROPY_BINS`] equal bins over [0, ln Y].
#[derive(Debug, Clone, PartialEq)]
pub struct EntropyAnalysis {
    pub n_bins: usize,
    /// Upper edge of the last bin (= ln Y).
    pub max_entropy: f64,
    /// `correct[class][bin]` counts correctly predicted points.
    pub correct: Vec<Vec<u64>>,
    /// Same layout for mispredicted points.
    pub incorrect: Vec<Vec<u64>>,
}

/// Buckets each point's prediction entropy by its true class and whether
/// the argmax prediction was right.
pub fn entropy_by_correctness(
    probs: &ProbField,
    preds: &[usize],
    truth: &[usize],
) -> Result<EntropyAnalysis> {
    if probs.n != preds.len() || probs.n != truth.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} probability rows vs {} preds / {} truth",
            probs.n,
            preds.len(),
            truth.len()
        )));
    }
    let y = probs.y;
    if preds.iter().chain(truth).any(|&c| c >= y) {
        return Err(Error::ShapeMismatch(format!("class id out of range (Y = {y})")));
    }
    let max_entropy = (y as f64).ln();
    let h = point_entropy(probs)?;
    let mut correct = vec![vec![0u64; ENTROPY_BINS]; y];
    let mut incorrect = vec![vec![0u64; ENTROPY_BINS]; y];
    for i in 0..probs.n {
        let mut bin = ((h[i] / max_entropy) * ENTROPY_BINS as f64).floor() as usize;
        if bin >= ENTROPY_BINS {
            bin = ENTROPY_BINS - 1;
        }
        if preds[i] == truth[i] {
            correct[truth[i]][bin] += 1;
        } else {
            incorrect[truth[i]][bin] += 1;
        }
    }
    Ok(EntropyAnalysis { n_bins: ENTROPY_BINS, max_entropy, correct, incorrect })
}

/// Cosine similarities with anchors as rows and query points as columns.
pub fn similarity_matrix(anchors: &FeatureField, points: &FeatureField) -> Result<FeatureField> {
    if anchors.d != points.d {
        return Err(Error::ShapeMismatch(format!(
            "anchors are {}-wide but points are {}-wide",
            anchors.d, points.d
        )));
    }
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let a_norms: Vec<f64> = (0..anchors.n).map(|i| norm(anchors.row(i))).collect();
    let p_norms: Vec<f64> = (0..points.n).map(|i| norm(points.row(i))).collect();
    if a_norms.iter().chain(&p_norms).any(|&n| n <= 0.0) {
        return Err(Error::DegenerateEmbedding);
    }
    let mut out = FeatureField::zeros(anchors.n, points.n);
    for a in 0..anchors.n {
        let arow = anchors.row(a);
        let orow = out.row_mut(a);
        for p in 0..points.n {
            let dot: f64 = arow.iter().zip(points.row(p)).map(|(x, y)| x * y).sum();
            orow[p] = dot / (a_norms[a] * p_norms[p]);
        }
    }
    Ok(out)
}

/// Histograms of the angle between each embedding and every class
/// prototype: `hist[class][bin]` over [0, π].
pub fn angle_histograms(
    feats: &FeatureField,
    protos: &ClassPrototypes,
    n_bins: usize,
) -> Result<Vec<Vec<u64>>> {
    assert!(n_bins > 0, "need at least one bin");
    let cosines = arcpoint::cosine_logits(feats, protos, 1.0)?;
    let mut hist = vec![vec![0u64; n_bins]; protos.y];
    for i in 0..cosines.n {
        for (class, &c) in cosines.row(i).iter().enumerate() {
            let angle = c.clamp(-1.0, 1.0).acos();
            let bin = ((angle / std::f64::consts::PI) * n_bins as f64) as usize;
            hist[class][bin.min(n_bins - 1)] += 1;
        }
    }
    Ok(hist)
}
