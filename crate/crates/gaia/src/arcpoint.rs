//! ArcPoint: hypersphere logits with an additive angular margin applied
//! to annotated points (anchors) and to quantile-selected high-entropy
//! unlabeled points, which are first routed to the class of their most
//! cosine-similar anchor. Includes the cross-entropy and Siamese L2
//! losses and a cached forward/backward for training.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{FeatureField, ProbField};
use crate::nn::softmax;

/// Cosines are clamped to [−1+ε, 1−ε] before arccos so the margin path
/// keeps a finite gradient at perfect (anti-)alignment.
const COS_EPS: f64 = 1e-7;

/// Class-prototypical weight matrix: one d-vector per class, stored
/// column-contiguous (`w[y*d..(y+1)*d]` is class y).
#[derive(Debug, Clone, PartialEq)]
pub struct ClassPrototypes {
    pub d: usize,
    pub y: usize,
    pub w: Vec<f64>,
}

impl ClassPrototypes {
    pub fn zeros(d: usize, y: usize) -> Self {
        ClassPrototypes { d, y, w: vec![0.0; d * y] }
    }

    #[inline]
    pub fn col(&self, y: usize) -> &[f64] {
        &self.w[y * self.d..(y + 1) * self.d]
    }

    /// Column norms; errors if any class direction is degenerate.
    pub fn col_norms(&self) -> Result<Vec<f64>> {
        (0..self.y)
            .map(|y| {
                let n = norm(self.col(y));
                if n > 0.0 {
                    Ok(n)
                } else {
                    Err(Error::DegenerateEmbedding)
                }
            })
            .collect()
    }
}

/// Margin-loss hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArcConfig {
    /// Logit re-scaler applied to cosines.
    pub s: f64,
    /// Additive angular margin, radians.
    pub m: f64,
    /// Entropy quantile: unlabeled points with H > F(gamma) get margined.
    pub gamma: f64,
}

impl Default for ArcConfig {
    fn default() -> Self {
        ArcConfig { s: 16.0, m: 0.1, gamma: 0.7 }
    }
}

impl ArcConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.s > 0.0
            && (0.0..std::f64::consts::FRAC_PI_2).contains(&self.m)
            && (0.0..=1.0).contains(&self.gamma);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidSpec("arc config out of range".into()))
        }
    }
}

/// Which classification head/loss the model trains with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    /// Full anchor-based margin: annotated points plus routed
    /// high-entropy unlabeled points.
    #[default]
    ArcPoint,
    /// Plain linear logits Wᵀx with softmax cross-entropy.
    SoftmaxCe,
    /// Cosine logits with the margin on annotated points only.
    ArcFaceOnly,
}

/// Per-point logits plus a record of where margins were applied.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitField {
    pub n: usize,
    pub y: usize,
    pub rows: Vec<f64>,
    /// True where the margin fired (annotated, or selected unlabeled).
    pub margin_applied: Vec<bool>,
    /// Nearest-anchor class for margined unlabeled points.
    pub routed_class: Vec<Option<usize>>,
}

impl LogitField {
    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.y..(i + 1) * self.y]
    }

    /// Logit rows as a plain feature field (for softmax etc.).
    pub fn as_field(&self) -> FeatureField {
        FeatureField { n: self.n, d: self.y, data: self.rows.clone() }
    }
}

#[inline]
fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// s-scaled cosine similarities between every feature row and every class
/// prototype: entry (i, y) = s · cos(feat_i, W_y).
pub fn cosine_logits(feats: &FeatureField, protos: &ClassPrototypes, s: f64) -> Result<FeatureField> {
    if feats.d != protos.d {
        return Err(Error::ShapeMismatch(format!(
            "features are {}-wide but prototypes are {}-wide",
            feats.d, protos.d
        )));
    }
    let wnorm = protos.col_norms()?;
    let mut out = FeatureField::zeros(feats.n, protos.y);
    for i in 0..feats.n {
        let xi = feats.row(i);
        let nx = norm(xi);
        if nx <= 0.0 {
            return Err(Error::DegenerateEmbedding);
        }
        let row = out.row_mut(i);
        for y in 0..protos.y {
            row[y] = s * dot(xi, protos.col(y)) / (nx * wnorm[y]);
        }
    }
    Ok(out)
}

/// Margined logit s·cos(θ + m) where θ is the angle between `feat` and
/// `proto`, with the cosine clamped before arccos.
pub fn margined_logit(feat: &[f64], proto: &[f64], s: f64, m: f64) -> Result<f64> {
    let nf = norm(feat);
    let np = norm(proto);
    if nf <= 0.0 || np <= 0.0 {
        return Err(Error::DegenerateEmbedding);
    }
    let cos = dot(feat, proto) / (nf * np);
    Ok(margined_from_cosine(cos, s, m))
}

/// The margin formula on a raw cosine: clamp, then
/// s·cos(acos(c)+m) = s·(c·cos m − √(1−c²)·sin m).
#[inline]
pub fn margined_from_cosine(cos: f64, s: f64, m: f64) -> f64 {
    let c = cos.clamp(COS_EPS - 1.0, 1.0 - COS_EPS);
    s * (c * m.cos() - (1.0 - c * c).sqrt() * m.sin())
}

/// d(margined logit)/d(raw cosine); zero where the clamp is active.
#[inline]
fn margined_dcos(cos: f64, s: f64, m: f64) -> f64 {
    let lo = COS_EPS - 1.0;
    let hi = 1.0 - COS_EPS;
    if cos <= lo || cos >= hi {
        return 0.0;
    }
    s * (m.cos() + cos * m.sin() / (1.0 - cos * cos).sqrt())
}

/// Linear-interpolation quantile of a sample (the `gamma·(n−1)` position
/// between order statistics).
pub fn quantile_linear(values: &[f64], gamma: f64) -> f64 {
    assert!(!values.is_empty(), "quantile of empty sample");
    let mut sorted = values.to_vec();
    sorted.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
    let pos = gamma * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let frac = pos - lo as f64;
    if lo + 1 < sorted.len() {
        sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
    } else {
        sorted[lo]
    }
}

/// Indices with value strictly above the sample's gamma-quantile.
pub fn select_by_quantile(values: &[f64], gamma: f64) -> Vec<usize> {
    if values.is_empty() {
        return Vec::new();
    }
    let f = quantile_linear(values, gamma);
    values
        .iter()
        .enumerate()
        .filter_map(|(i, &v)| if v > f { Some(i) } else { None })
        .collect()
}

/// High-entropy selection over unannotated points: entropies of the
/// probability rows are compared against their own gamma-quantile,
/// strictly. Empty input yields an empty selection.
pub fn select_high_entropy(probs_u: &ProbField, gamma: f64) -> Result<Vec<usize>> {
    if probs_u.n == 0 {
        return Ok(Vec::new());
    }
    let h = crate::uncertainty::point_entropy(probs_u)?;
    Ok(select_by_quantile(&h, gamma))
}

/// Class of the anchor most cosine-similar to `point`; ties go to the
/// lowest anchor index.
pub fn nearest_anchor(anchors: &FeatureField, anchor_labels: &[usize], point: &[f64]) -> Result<usize> {
    if anchors.n == 0 {
        return Err(Error::NoLabeledPoints);
    }
    assert_eq!(anchors.n, anchor_labels.len(), "anchor label count mismatch");
    let np = norm(point);
    if np <= 0.0 {
        return Err(Error::DegenerateEmbedding);
    }
    let mut best_sim = f64::NEG_INFINITY;
    let mut best = 0usize;
    for a in 0..anchors.n {
        let row = anchors.row(a);
        let na = norm(row);
        if na <= 0.0 {
            return Err(Error::DegenerateEmbedding);
        }
        let sim = dot(row, point) / (na * np);
        if sim > best_sim {
            best_sim = sim;
            best = a;
        }
    }
    Ok(anchor_labels[best])
}

/// Cache kept by [`head_forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct HeadCache {
    pub mode: LossMode,
    pub cfg: ArcConfig,
    pub feats: FeatureField,
    pub protos: ClassPrototypes,
    pub xnorm: Vec<f64>,
    pub wnorm: Vec<f64>,
    /// Raw (unscaled) cosines, unused under SoftmaxCe.
    pub cosine: FeatureField,
    /// Column that received the margin per point, if any.
    pub margin_col: Vec<Option<usize>>,
}

/// Runs the configured classification head and records everything the
/// backward pass needs. Margin placement follows the loss mode; the
/// selection entropy always comes from the unmargined s-scaled cosines.
pub fn head_forward(
    feats: &FeatureField,
    protos: &ClassPrototypes,
    labels: &[i32],
    annotated: &[bool],
    cfg: ArcConfig,
    mode: LossMode,
) -> Result<(LogitField, HeadCache)> {
    let n = feats.n;
    if labels.len() != n || annotated.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "{} feature rows vs {} labels / {} flags",
            n,
            labels.len(),
            annotated.len()
        )));
    }
    let mut margin_applied = vec![false; n];
    let mut routed_class = vec![None; n];
    let mut margin_col = vec![None; n];

    if mode == LossMode::SoftmaxCe {
        // Plain linear logits; no normalization, margin, or rescale.
        let mut rows = vec![0.0; n * protos.y];
        for i in 0..n {
            let xi = feats.row(i);
            for y in 0..protos.y {
                rows[i * protos.y + y] = dot(xi, protos.col(y));
            }
        }
        let logits = LogitField { n, y: protos.y, rows, margin_applied, routed_class };
        let cache = HeadCache {
            mode,
            cfg,
            feats: feats.clone(),
            protos: protos.clone(),
            xnorm: Vec::new(),
            wnorm: Vec::new(),
            cosine: FeatureField::zeros(0, 0),
            margin_col,
        };
        return Ok((logits, cache));
    }

    let wnorm = protos.col_norms()?;
    let mut xnorm = Vec::with_capacity(n);
    let mut cosine = FeatureField::zeros(n, protos.y);
    for i in 0..n {
        let xi = feats.row(i);
        let nx = norm(xi);
        if nx <= 0.0 {
            return Err(Error::DegenerateEmbedding);
        }
        xnorm.push(nx);
        let row = cosine.row_mut(i);
        for y in 0..protos.y {
            row[y] = dot(xi, protos.col(y)) / (nx * wnorm[y]);
        }
    }

    let mut rows = vec![0.0; n * protos.y];
    for i in 0..n {
        for y in 0..protos.y {
            rows[i * protos.y + y] = cfg.s * cosine.row(i)[y];
        }
    }

    // Anchors: annotated points get the margin at their true class.
    for i in 0..n {
        if annotated[i] {
            let c = labels[i] as usize;
            rows[i * protos.y + c] = margined_from_cosine(cosine.row(i)[c], cfg.s, cfg.m);
            margin_applied[i] = true;
            margin_col[i] = Some(c);
        }
    }

    if mode == LossMode::ArcPoint {
        // Unlabeled side: softmax the unmargined s-scaled cosines of the
        // unannotated points, select the high-entropy quantile tail, and
        // route each selected point to its nearest anchor's class.
        let unannotated: Vec<usize> = (0..n).filter(|&i| !annotated[i]).collect();
        if !unannotated.is_empty() {
            let mut udata = Vec::with_capacity(unannotated.len() * protos.y);
            for &u in &unannotated {
                for y in 0..protos.y {
                    udata.push(cfg.s * cosine.row(u)[y]);
                }
            }
            let ufield = FeatureField::from_vec(unannotated.len(), protos.y, udata)?;
            let probs_u = softmax(&ufield);
            let picked = select_high_entropy(&probs_u, cfg.gamma)?;
            if !picked.is_empty() {
                let anchor_idx: Vec<usize> = (0..n).filter(|&i| annotated[i]).collect();
                if anchor_idx.is_empty() {
                    return Err(Error::NoLabeledPoints);
                }
                let mut adata = Vec::with_capacity(anchor_idx.len() * feats.d);
                let mut alabels = Vec::with_capacity(anchor_idx.len());
                for &a in &anchor_idx {
                    adata.extend_from_slice(feats.row(a));
                    alabels.push(labels[a] as usize);
                }
                let anchors = FeatureField::from_vec(anchor_idx.len(), feats.d, adata)?;
                for sel in picked {
                    let u = unannotated[sel];
                    let routed = nearest_anchor(&anchors, &alabels, feats.row(u))?;
                    rows[u * protos.y + routed] =
                        margined_from_cosine(cosine.row(u)[routed], cfg.s, cfg.m);
                    margin_applied[u] = true;
                    routed_class[u] = Some(routed);
                    margin_col[u] = Some(routed);
                }
            }
        }
    }

    let logits = LogitField { n, y: protos.y, rows, margin_applied, routed_class };
    let cache = HeadCache {
        mode,
        cfg,
        feats: feats.clone(),
        protos: protos.clone(),
        xnorm,
        wnorm,
        cosine,
        margin_col,
    };
    Ok((logits, cache))
}

/// Full anchor-based margin logits (Algorithm: margin on anchors at the
/// true class, and on quantile-selected high-entropy unlabeled points at
/// their nearest anchor's class).
pub fn arcpoint_logits(
    feats: &FeatureField,
    protos: &ClassPrototypes,
    labels: &[i32],
    annotated: &[bool],
    cfg: ArcConfig,
) -> Result<LogitField> {
    head_forward(feats, protos, labels, annotated, cfg, LossMode::ArcPoint).map(|(l, _)| l)
}

/// Backward of [`head_forward`]: scatters d(loss)/d(logits) onto the
/// features (returned) and prototypes (accumulated into `dprotos`, same
/// layout as `ClassPrototypes::w`). Selection and routing are discrete
/// and carry no gradient; the cosine clamp zeroes the margin path
/// outside its band.
pub fn head_backward(dlogits: &FeatureField, cache: &HeadCache, dprotos: &mut [f64]) -> FeatureField {
    let n = cache.feats.n;
    let d = cache.feats.d;
    let y = cache.protos.y;
    assert_eq!(dlogits.n, n, "gradient row count mismatch");
    assert_eq!(dlogits.d, y, "gradient class count mismatch");
    assert_eq!(dprotos.len(), cache.protos.w.len(), "prototype gradient length mismatch");
    let mut dfeats = FeatureField::zeros(n, d);

    if cache.mode == LossMode::SoftmaxCe {
        for i in 0..n {
            let xi = cache.feats.row(i);
            let gi = dlogits.row(i);
            let di = dfeats.row_mut(i);
            for (cls, &g) in gi.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                let wy = cache.protos.col(cls);
                let dw = &mut dprotos[cls * d..(cls + 1) * d];
                for k in 0..d {
                    di[k] += g * wy[k];
                    dw[k] += g * xi[k];
                }
            }
        }
        return dfeats;
    }

    let s = cache.cfg.s;
    let m = cache.cfg.m;
    for i in 0..n {
        let xi = cache.feats.row(i);
        let nx = cache.xnorm[i];
        let gi = dlogits.row(i);
        let di = dfeats.row_mut(i);
        for (cls, &g) in gi.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            let cos = cache.cosine.row(i)[cls];
            // d(logit)/d(cos): plain entries are s·cos, margined entries
            // go through the clamp + angle-margin chain.
            let dcos = if cache.margin_col[i] == Some(cls) {
                margined_dcos(cos, s, m)
            } else {
                s
            };
            let coeff = g * dcos;
            if coeff == 0.0 {
                continue;
            }
            let nw = cache.wnorm[cls];
            let wy = cache.protos.col(cls);
            let dw = &mut dprotos[cls * d..(cls + 1) * d];
            let inv = 1.0 / (nx * nw);
            for k in 0..d {
                di[k] += coeff * (wy[k] * inv - cos * xi[k] / (nx * nx));
                dw[k] += coeff * (xi[k] * inv - cos * wy[k] / (nw * nw));
            }
        }
    }
    dfeats
}

/// Mean over annotated points of −log softmax at the true class, using
/// the (margined) logit rows.
pub fn loss_ce(logits: &LogitField, labels: &[i32], annotated: &[bool]) -> Result<f64> {
    loss_ce_with_grad(logits, labels, annotated).map(|(l, _)| l)
}

/// [`loss_ce`] plus d(loss)/d(logits).
pub fn loss_ce_with_grad(
    logits: &LogitField,
    labels: &[i32],
    annotated: &[bool],
) -> Result<(f64, FeatureField)> {
    let n = logits.n;
    if labels.len() != n || annotated.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "{} logit rows vs {} labels / {} flags",
            n,
            labels.len(),
            annotated.len()
        )));
    }
    let a = annotated.iter().filter(|&&f| f).count();
    if a == 0 {
        return Err(Error::NoSupervision);
    }
    let inv_a = 1.0 / a as f64;
    let mut loss = 0.0;
    let mut dlogits = FeatureField::zeros(n, logits.y);
    for i in 0..n {
        if !annotated[i] {
            continue;
        }
        let row = logits.row(i);
        let target = labels[i] as usize;
        let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for &v in row {
            sum += (v - mx).exp();
        }
        let lse = mx + sum.ln();
        loss += (lse - row[target]) * inv_a;
        let drow = dlogits.row_mut(i);
        for (yv, &v) in drow.iter_mut().zip(row) {
            *yv = ((v - lse).exp()) * inv_a;
        }
        drow[target] -= inv_a;
    }
    Ok((loss, dlogits))
}

/// Averaging convention for the Siamese L2 loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SiameseMode {
    /// ‖P − P′‖_F / N over the per-point probability fields.
    #[default]
    PerPointField,
    /// ‖mean(P) − mean(P′)‖₂ between the point-averaged distributions.
    MeanField,
}

/// L2 distance between two probability fields under the configured
/// averaging convention.
pub fn loss_siamese(p: &ProbField, q: &ProbField, mode: SiameseMode) -> Result<f64> {
    loss_siamese_with_grad(p, q, mode).map(|(l, _, _)| l)
}

/// [`loss_siamese`] plus gradients w.r.t. both fields.
pub fn loss_siamese_with_grad(
    p: &ProbField,
    q: &ProbField,
    mode: SiameseMode,
) -> Result<(f64, FeatureField, FeatureField)> {
    if p.n != q.n || p.y != q.y {
        return Err(Error::ShapeMismatch(format!(
            "probability fields disagree: {}x{} vs {}x{}",
            p.n, p.y, q.n, q.y
        )));
    }
    let n = p.n;
    let y = p.y;
    let nf = n as f64;
    let mut dp = FeatureField::zeros(n, y);
    let mut dq = FeatureField::zeros(n, y);
    match mode {
        SiameseMode::PerPointField => {
            let mut sq = 0.0;
            for (a, b) in p.data.iter().zip(&q.data) {
                let diff = a - b;
                sq += diff * diff;
            }
            let fro = sq.sqrt();
            let loss = fro / nf;
            if fro > 0.0 {
                let scale = 1.0 / (fro * nf);
                for ((a, b), (da, db)) in
                    p.data.iter().zip(&q.data).zip(dp.data.iter_mut().zip(dq.data.iter_mut()))
                {
                    let g = (a - b) * scale;
                    *da = g;
                    *db = -g;
                }
            }
            Ok((loss, dp, dq))
        }
        SiameseMode::MeanField => {
            let mut mean_p = vec![0.0; y];
            let mut mean_q = vec![0.0; y];
            for i in 0..n {
                for (j, (&a, &b)) in p.row(i).iter().zip(q.row(i)).enumerate() {
                    mean_p[j] += a;
                    mean_q[j] += b;
                }
            }
            let mut sq = 0.0;
            for j in 0..y {
                mean_p[j] /= nf;
                mean_q[j] /= nf;
                let diff = mean_p[j] - mean_q[j];
                sq += diff * diff;
            }
            let dist = sq.sqrt();
            if dist > 0.0 {
                let scale = 1.0 / (dist * nf);
                for i in 0..n {
                    let da = dp.row_mut(i);
                    for j in 0..y {
                        da[j] = (mean_p[j] - mean_q[j]) * scale;
                    }
                    let db = dq.row_mut(i);
                    for j in 0..y {
                        db[j] = -(mean_p[j] - mean_q[j]) * scale;
                    }
                }
            }
            Ok((dist, dp, dq))
        }
    }
}
