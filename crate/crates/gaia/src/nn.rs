//! Small neural-net pieces with hand-written forward/backward passes:
//! linear maps, feature standardization, ReLU, and row softmax.
//!
//! Backward functions take the forward inputs/outputs they need
//! explicitly; gradients are accumulated with `+=` so several loss paths
//! can share one buffer.

use crate::field::{FeatureField, ProbField};
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Variance floor inside the standardization denominator.
const STD_EPS: f64 = 1e-5;

/// Dense affine map y = x·Wᵀ + b with W stored row-major n_out×n_in.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub n_in: usize,
    pub n_out: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Linear {
    pub fn zeros(n_in: usize, n_out: usize) -> Self {
        Linear { n_in, n_out, w: vec![0.0; n_out * n_in], b: vec![0.0; n_out] }
    }

    /// He-style init: w ~ N(0, 2/n_in), b = 0.
    pub fn init<R: Rng>(n_in: usize, n_out: usize, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, (2.0 / n_in as f64).sqrt()).unwrap();
        let w = (0..n_out * n_in).map(|_| normal.sample(rng)).collect();
        Linear { n_in, n_out, w, b: vec![0.0; n_out] }
    }

    pub fn forward(&self, x: &FeatureField) -> FeatureField {
        debug_assert_eq!(x.d, self.n_in);
        let mut out = FeatureField::zeros(x.n, self.n_out);
        for i in 0..x.n {
            let xi = x.row(i);
            let oi = out.row_mut(i);
            for (o, out_v) in oi.iter_mut().enumerate() {
                let wrow = &self.w[o * self.n_in..(o + 1) * self.n_in];
                let mut acc = self.b[o];
                for (xv, wv) in xi.iter().zip(wrow) {
                    acc += xv * wv;
                }
                *out_v = acc;
            }
        }
        out
    }

    /// Accumulates dW/db into `dw`/`db` and input gradients into `dx`.
    pub fn backward(
        &self,
        x: &FeatureField,
        dy: &FeatureField,
        dw: &mut [f64],
        db: &mut [f64],
        dx: &mut FeatureField,
    ) {
        debug_assert_eq!(dw.len(), self.w.len());
        debug_assert_eq!(db.len(), self.b.len());
        for i in 0..x.n {
            let xi = x.row(i);
            let dyi = dy.row(i);
            let dxi = dx.row_mut(i);
            for (o, &g) in dyi.iter().enumerate() {
                db[o] += g;
                let wrow = &self.w[o * self.n_in..(o + 1) * self.n_in];
                let dwrow = &mut dw[o * self.n_in..(o + 1) * self.n_in];
                for k in 0..self.n_in {
                    dwrow[k] += g * xi[k];
                    dxi[k] += g * wrow[k];
                }
            }
        }
    }
}

/// Per-column mean/deviation recorded by [`standardize`] for its backward.
#[derive(Debug, Clone)]
pub struct StdCache {
    pub mean: Vec<f64>,
    pub sigma: Vec<f64>,
}

/// Standardizes each feature column over the points: z = (x − μ)/σ with
/// σ = sqrt(var + eps). Stands in for batch statistics and stays defined
/// for a single point (z = 0 there).
pub fn standardize(x: &FeatureField) -> (FeatureField, StdCache) {
    let (n, d) = (x.n, x.d);
    let mut mean = vec![0.0; d];
    let mut sigma = vec![0.0; d];
    for i in 0..n {
        for (j, &v) in x.row(i).iter().enumerate() {
            mean[j] += v;
        }
    }
    for m in mean.iter_mut() {
        *m /= n as f64;
    }
    for i in 0..n {
        for (j, &v) in x.row(i).iter().enumerate() {
            let c = v - mean[j];
            sigma[j] += c * c;
        }
    }
    for s in sigma.iter_mut() {
        *s = (*s / n as f64 + STD_EPS).sqrt();
    }
    let mut z = FeatureField::zeros(n, d);
    for i in 0..n {
        let xi = x.row(i);
        let zi = z.row_mut(i);
        for j in 0..d {
            zi[j] = (xi[j] - mean[j]) / sigma[j];
        }
    }
    (z, StdCache { mean, sigma })
}

/// Backward of [`standardize`]: accumulates into `dx` given the forward
/// output `z` and upstream `dz`.
pub fn standardize_backward(z: &FeatureField, cache: &StdCache, dz: &FeatureField, dx: &mut FeatureField) {
    let (n, d) = (z.n, z.d);
    let nf = n as f64;
    // Column means of dz and of dz⊙z, needed because μ and σ couple rows.
    let mut mean_dz = vec![0.0; d];
    let mut mean_dzz = vec![0.0; d];
    for i in 0..n {
        let zi = z.row(i);
        let gi = dz.row(i);
        for j in 0..d {
            mean_dz[j] += gi[j];
            mean_dzz[j] += gi[j] * zi[j];
        }
    }
    for j in 0..d {
        mean_dz[j] /= nf;
        mean_dzz[j] /= nf;
    }
    for i in 0..n {
        let zi = z.row(i);
        let gi = dz.row(i);
        let di = dx.row_mut(i);
        for j in 0..d {
            di[j] += (gi[j] - mean_dz[j] - zi[j] * mean_dzz[j]) / cache.sigma[j];
        }
    }
}

/// Elementwise max(0, x).
pub fn relu(x: &FeatureField) -> FeatureField {
    let mut out = x.clone();
    for v in out.data.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    out
}

/// Backward of [`relu`]; the subgradient at 0 is 0.
pub fn relu_backward(y: &FeatureField, dy: &FeatureField, dx: &mut FeatureField) {
    for ((&yv, &gv), dv) in y.data.iter().zip(&dy.data).zip(dx.data.iter_mut()) {
        if yv > 0.0 {
            *dv += gv;
        }
    }
}

/// Row-wise softmax with max-shift for stability.
pub fn softmax(x: &FeatureField) -> ProbField {
    let mut data = vec![0.0; x.n * x.d];
    for i in 0..x.n {
        let xi = x.row(i);
        let out = &mut data[i * x.d..(i + 1) * x.d];
        let mx = xi.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (o, &v) in out.iter_mut().zip(xi) {
            *o = (v - mx).exp();
            sum += *o;
        }
        for o in out.iter_mut() {
            *o /= sum;
        }
    }
    ProbField { n: x.n, y: x.d, data }
}

/// Backward of [`softmax`]: dx_i += p_i ⊙ (dp_i − ⟨dp_i, p_i⟩).
pub fn softmax_backward(p: &ProbField, dp: &FeatureField, dx: &mut FeatureField) {
    for i in 0..p.n {
        let pi = p.row(i);
        let gi = dp.row(i);
        let di = dx.row_mut(i);
        let dot: f64 = pi.iter().zip(gi).map(|(a, b)| a * b).sum();
        for j in 0..p.y {
            di[j] += pi[j] * (gi[j] - dot);
        }
    }
}
