//! The entropy block: per-point Shannon entropy of projected class
//! probabilities, distance-calibrated neighborhood entropy, graphical
//! information gain (GI), and the GI-driven feature update
//! X̃ ← X̃ + X̃⊗GI + X̃ᴺ, all differentiable end to end.
//!
//! A point whose own entropy deviates strongly from its neighborhood's
//! gets a large GI; the update amplifies such points and mixes in a
//! GI-weighted neighbor aggregate, sharpening features near decision
//! boundaries.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{FeatureField, ProbField};
use crate::geometry::KnnGraph;
use crate::nn::{softmax, softmax_backward, Linear};

/// Distances below this are clamped before the inverse-square weighting
/// so coincident points cannot produce infinite weight.
const MIN_DIST: f64 = 1e-6;

/// Per-point entropy diagnostics exposed by the block.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropyField {
    /// Own entropy H, nats.
    pub h: Vec<f64>,
    /// Neighborhood-calibrated entropy H̃, nats.
    pub h_cal: Vec<f64>,
    /// Graphical information gain |H − H̃|.
    pub gi: Vec<f64>,
}

/// How neighbor entropies are aggregated into H̃.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Calibration {
    /// Inverse-square-distance weighted mean (weights normalized to 1).
    #[default]
    InverseSquare,
    /// Unnormalized plain sum of neighbor entropies (ablation variant).
    PlainSum,
}

/// Which feature update the block applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum UpdateRule {
    /// X̃ + X̃⊗GI + X̃ᴺ.
    #[default]
    Full,
    /// X̃ + X̃⊗GI only (ablation variant without neighbor aggregation).
    AttentionOnly,
}

/// Entropy-block behavior switches.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct EntropyBlockOptions {
    pub calibration: Calibration,
    pub update: UpdateRule,
    /// Rescale GI by its per-cloud maximum before the update. GI is used
    /// raw by default; this is an experiment knob.
    pub normalize_gi: bool,
}

/// Natural-log Shannon entropy of each probability row; 0·ln 0 counts
/// as 0. Rows are re-checked to be distributions.
pub fn point_entropy(probs: &ProbField) -> Result<Vec<f64>> {
    probs.validate()?;
    let mut h = Vec::with_capacity(probs.n);
    for i in 0..probs.n {
        let mut acc = 0.0;
        for &p in probs.row(i) {
            if p > 0.0 {
                acc -= p * p.ln();
            }
        }
        h.push(acc);
    }
    Ok(h)
}

/// Normalized inverse-square-distance weights per graph row; each row
/// sums to 1. Distances are clamped to at least 1e-6 m first.
pub fn calibration_weights(graph: &KnnGraph) -> Vec<Vec<f64>> {
    graph
        .dists
        .iter()
        .map(|row| {
            let mut w: Vec<f64> = row
                .iter()
                .map(|&d| {
                    let dc = d.max(MIN_DIST);
                    1.0 / (dc * dc)
                })
                .collect();
            let sum: f64 = w.iter().sum();
            if sum > 0.0 {
                for v in w.iter_mut() {
                    *v /= sum;
                }
            }
            w
        })
        .collect()
}

/// Distance-calibrated neighborhood entropy H̃ under the default
/// inverse-square weighting.
pub fn calibrated_entropy(h: &[f64], graph: &KnnGraph) -> Vec<f64> {
    calibrated_entropy_with(h, graph, Calibration::InverseSquare)
}

/// H̃ under an explicit aggregation rule.
pub fn calibrated_entropy_with(h: &[f64], graph: &KnnGraph, rule: Calibration) -> Vec<f64> {
    assert_eq!(h.len(), graph.len(), "entropy/graph length mismatch");
    match rule {
        Calibration::InverseSquare => {
            let weights = calibration_weights(graph);
            (0..h.len())
                .map(|i| {
                    graph.neighbors[i]
                        .iter()
                        .zip(&weights[i])
                        .map(|(&j, &w)| w * h[j as usize])
                        .sum()
                })
                .collect()
        }
        Calibration::PlainSum => (0..h.len())
            .map(|i| graph.neighbors[i].iter().map(|&j| h[j as usize]).sum())
            .collect(),
    }
}

/// GI_i = |H_i − H̃_i|.
pub fn graphical_information_gain(h: &[f64], h_cal: &[f64]) -> Vec<f64> {
    assert_eq!(h.len(), h_cal.len(), "entropy length mismatch");
    h.iter().zip(h_cal).map(|(a, b)| (a - b).abs()).collect()
}

/// Neighbor aggregation X̃ᴺ: row i is the mean over i's neighbors of the
/// neighbor's feature row scaled by the neighbor's GI.
pub fn gi_neighbor_aggregate(feats: &FeatureField, gi: &[f64], graph: &KnnGraph) -> FeatureField {
    assert_eq!(feats.n, graph.len(), "feature/graph length mismatch");
    assert_eq!(feats.n, gi.len(), "feature/gi length mismatch");
    let mut out = FeatureField::zeros(feats.n, feats.d);
    for i in 0..feats.n {
        let nbrs = &graph.neighbors[i];
        if nbrs.is_empty() {
            continue;
        }
        let inv_k = 1.0 / nbrs.len() as f64;
        let row = out.row_mut(i);
        for &j in nbrs {
            let fj = feats.row(j as usize);
            let s = gi[j as usize] * inv_k;
            for (o, &v) in row.iter_mut().zip(fj) {
                *o += s * v;
            }
        }
    }
    out
}

/// Everything the forward pass stores for [`entropy_block_backward`].
#[derive(Debug, Clone)]
pub struct EntropyBlockCache {
    pub opts: EntropyBlockOptions,
    /// Input field (d-wide).
    pub x: FeatureField,
    /// Projected field T = proj_in(x), Y-wide.
    pub t: FeatureField,
    /// Softmax rows of T.
    pub p: ProbField,
    pub h: Vec<f64>,
    pub h_cal: Vec<f64>,
    /// sign(H − H̃) with 0 at the kink.
    pub sign: Vec<f64>,
    /// Raw GI = |H − H̃|.
    pub gi: Vec<f64>,
    /// GI as used by the update (max-normalized when the option is set).
    pub gi_used: Vec<f64>,
    /// Max of raw GI and its first argmax, when normalization is active.
    pub gi_max: f64,
    pub gi_argmax: usize,
    /// Updated field U before the output projection.
    pub u: FeatureField,
    /// Normalized calibration weights (empty rows under PlainSum).
    pub weights: Vec<Vec<f64>>,
}

/// Forward pass of the entropy block, keeping intermediates for the
/// backward pass. `proj_in` maps d→Y, `proj_out` maps Y→d.
pub fn entropy_block_forward(
    x: &FeatureField,
    graph: &KnnGraph,
    proj_in: &Linear,
    proj_out: &Linear,
    opts: EntropyBlockOptions,
) -> Result<(FeatureField, EntropyBlockCache)> {
    if x.n != graph.len() {
        return Err(Error::ShapeMismatch(format!(
            "entropy block got {} feature rows but a {}-point graph",
            x.n,
            graph.len()
        )));
    }
    if graph.k == 0 {
        return Err(Error::ShapeMismatch(
            "entropy block requires graph fan-out of at least 1".into(),
        ));
    }
    let t = proj_in.forward(x);
    let p = softmax(&t);
    let h = point_entropy(&p)?;
    let weights = match opts.calibration {
        Calibration::InverseSquare => calibration_weights(graph),
        Calibration::PlainSum => Vec::new(),
    };
    let h_cal = calibrated_entropy_with(&h, graph, opts.calibration);
    let mut sign = Vec::with_capacity(x.n);
    let mut gi = Vec::with_capacity(x.n);
    for i in 0..x.n {
        let diff = h[i] - h_cal[i];
        sign.push(if diff > 0.0 {
            1.0
        } else if diff < 0.0 {
            -1.0
        } else {
            0.0
        });
        gi.push(diff.abs());
    }
    let (gi_used, gi_max, gi_argmax) = if opts.normalize_gi {
        let mut m = 0.0;
        let mut am = 0;
        for (i, &g) in gi.iter().enumerate() {
            if g > m {
                m = g;
                am = i;
            }
        }
        if m > 0.0 {
            (gi.iter().map(|&g| g / m).collect(), m, am)
        } else {
            (gi.clone(), 0.0, 0)
        }
    } else {
        (gi.clone(), 0.0, 0)
    };

    let mut u = t.clone();
    for i in 0..u.n {
        let scale = 1.0 + gi_used[i];
        for v in u.row_mut(i) {
            *v *= scale;
        }
    }
    if opts.update == UpdateRule::Full {
        let xn = gi_neighbor_aggregate(&t, &gi_used, graph);
        for (o, &v) in u.data.iter_mut().zip(&xn.data) {
            *o += v;
        }
    }
    let out = proj_out.forward(&u);
    let cache = EntropyBlockCache {
        opts,
        x: x.clone(),
        t,
        p,
        h,
        h_cal,
        sign,
        gi,
        gi_used,
        gi_max,
        gi_argmax,
        u,
        weights,
    };
    Ok((out, cache))
}

/// Convenience forward without gradient bookkeeping: returns the output
/// field and the entropy diagnostics.
pub fn entropy_block(
    x: &FeatureField,
    graph: &KnnGraph,
    proj_in: &Linear,
    proj_out: &Linear,
    opts: EntropyBlockOptions,
) -> Result<(FeatureField, EntropyField)> {
    let (out, cache) = entropy_block_forward(x, graph, proj_in, proj_out, opts)?;
    Ok((out, EntropyField { h: cache.h, h_cal: cache.h_cal, gi: cache.gi }))
}

/// Reverse-mode pass of the entropy block. Accumulates parameter
/// gradients into the `d*` buffers and input-feature gradients into `dx`.
/// Graph distances are constants (geometry is input, not parameter); the
/// |·| kink uses subgradient 0; the GI-max normalization, when active,
/// backpropagates through both the numerator and the max entry.
#[allow(clippy::too_many_arguments)]
pub fn entropy_block_backward(
    dout: &FeatureField,
    cache: &EntropyBlockCache,
    graph: &KnnGraph,
    proj_in: &Linear,
    proj_out: &Linear,
    dproj_in_w: &mut [f64],
    dproj_in_b: &mut [f64],
    dproj_out_w: &mut [f64],
    dproj_out_b: &mut [f64],
    dx: &mut FeatureField,
) {
    let n = cache.x.n;
    let y = cache.t.d;

    // Output projection.
    let mut du = FeatureField::zeros(n, y);
    proj_out.backward(&cache.u, dout, dproj_out_w, dproj_out_b, &mut du);

    // Update rule: U_i = T_i·(1 + G_i) (+ Σ_j T_j G_j / K over neighbors).
    let mut dt = FeatureField::zeros(n, y);
    let mut dgi_used = vec![0.0; n];
    for i in 0..n {
        let dui = du.row(i);
        let ti = cache.t.row(i);
        let scale = 1.0 + cache.gi_used[i];
        let dti = dt.row_mut(i);
        let mut acc = 0.0;
        for j in 0..y {
            dti[j] += dui[j] * scale;
            acc += dui[j] * ti[j];
        }
        dgi_used[i] += acc;
    }
    if cache.opts.update == UpdateRule::Full {
        for i in 0..n {
            let nbrs = &graph.neighbors[i];
            if nbrs.is_empty() {
                continue;
            }
            let inv_k = 1.0 / nbrs.len() as f64;
            let dui = du.row(i);
            for &jn in nbrs {
                let j = jn as usize;
                let g = cache.gi_used[j] * inv_k;
                let tj = cache.t.row(j);
                let mut acc = 0.0;
                for (q, &duv) in dui.iter().enumerate() {
                    acc += duv * tj[q];
                }
                dgi_used[j] += acc * inv_k;
                let dtj = dt.row_mut(j);
                for (q, &duv) in dui.iter().enumerate() {
                    dtj[q] += duv * g;
                }
            }
        }
    }

    // Optional max-normalization: Gn_i = G_i / M with M = G_m.
    let mut dgi = dgi_used;
    if cache.opts.normalize_gi && cache.gi_max > 0.0 {
        let m = cache.gi_max;
        let total: f64 = dgi.iter().zip(&cache.gi).map(|(dg, g)| dg * g).sum();
        for v in dgi.iter_mut() {
            *v /= m;
        }
        dgi[cache.gi_argmax] -= total / (m * m);
    }

    // G = |H − H̃|.
    let mut dh = vec![0.0; n];
    let mut dh_cal = vec![0.0; n];
    for i in 0..n {
        dh[i] += cache.sign[i] * dgi[i];
        dh_cal[i] -= cache.sign[i] * dgi[i];
    }

    // H̃ scatters back onto neighbor entropies.
    match cache.opts.calibration {
        Calibration::InverseSquare => {
            for i in 0..n {
                for (slot, &jn) in graph.neighbors[i].iter().enumerate() {
                    dh[jn as usize] += cache.weights[i][slot] * dh_cal[i];
                }
            }
        }
        Calibration::PlainSum => {
            for i in 0..n {
                for &jn in &graph.neighbors[i] {
                    dh[jn as usize] += dh_cal[i];
                }
            }
        }
    }

    // H = −Σ p ln p; the p = 0 corner keeps the 0·ln 0 = 0 convention.
    let mut dp = FeatureField::zeros(n, y);
    for i in 0..n {
        let pi = cache.p.row(i);
        let dpi = dp.row_mut(i);
        for j in 0..y {
            if pi[j] > 0.0 {
                dpi[j] = -(pi[j].ln() + 1.0) * dh[i];
            }
        }
    }
    softmax_backward(&cache.p, &dp, &mut dt);

    // Input projection.
    proj_in.backward(&cache.x, &dt, dproj_in_w, dproj_in_b, dx);
}
