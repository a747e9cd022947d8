//! Desk-scale differentiable point network: two standardize→ReLU→linear
//! encoder blocks with an entropy block after each, then the class
//! prototypes as classification head. Gradients are hand-written
//! structured reverse-mode over cached activations.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::arcpoint::ClassPrototypes;
use crate::error::{Error, Result};
use crate::field::FeatureField;
use crate::geometry::{KnnGraph, PointCloud};
use crate::nn::{relu, relu_backward, standardize, standardize_backward, Linear, StdCache};
use crate::uncertainty::{
    entropy_block_backward, entropy_block_forward, EntropyBlockCache, EntropyBlockOptions,
    EntropyField,
};

/// Input width: 3 coordinates + 3 colors.
pub const D_IN: usize = 6;

/// Architecture hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Width after the first encoder block.
    pub d1: usize,
    /// Embedding width after the second block.
    pub d2: usize,
    /// Number of classes Y.
    pub n_classes: usize,
    /// Whether the entropy blocks run at all (ablation switch).
    pub entropy_block: bool,
    pub eb_options: EntropyBlockOptions,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d1: 16,
            d2: 16,
            n_classes: 4,
            entropy_block: true,
            eb_options: EntropyBlockOptions::default(),
        }
    }
}

/// All trainable parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub enc1: Linear,
    pub eb1_in: Linear,
    pub eb1_out: Linear,
    pub enc2: Linear,
    pub eb2_in: Linear,
    pub eb2_out: Linear,
    pub protos: ClassPrototypes,
}

impl ModelParams {
    /// Random init: He-scaled encoder/projection weights, prototype
    /// columns ~ N(0, 1/√d2).
    pub fn init<R: Rng>(cfg: &ModelConfig, rng: &mut R) -> Self {
        use rand_distr::{Distribution, Normal};
        let y = cfg.n_classes;
        let enc1 = Linear::init(D_IN, cfg.d1, rng);
        let eb1_in = Linear::init(cfg.d1, y, rng);
        let eb1_out = Linear::init(y, cfg.d1, rng);
        let enc2 = Linear::init(cfg.d1, cfg.d2, rng);
        let eb2_in = Linear::init(cfg.d2, y, rng);
        let eb2_out = Linear::init(y, cfg.d2, rng);
        let normal = Normal::new(0.0, 1.0 / (cfg.d2 as f64).sqrt()).unwrap();
        let w = (0..cfg.d2 * y).map(|_| normal.sample(rng)).collect();
        let protos = ClassPrototypes { d: cfg.d2, y, w };
        ModelParams { enc1, eb1_in, eb1_out, enc2, eb2_in, eb2_out, protos }
    }

    /// All-zero parameters with the same shapes.
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let y = cfg.n_classes;
        ModelParams {
            enc1: Linear::zeros(D_IN, cfg.d1),
            eb1_in: Linear::zeros(cfg.d1, y),
            eb1_out: Linear::zeros(y, cfg.d1),
            enc2: Linear::zeros(cfg.d1, cfg.d2),
            eb2_in: Linear::zeros(cfg.d2, y),
            eb2_out: Linear::zeros(y, cfg.d2),
            protos: ClassPrototypes::zeros(cfg.d2, y),
        }
    }

    /// Total scalar parameter count.
    pub fn count(&self) -> usize {
        self.flatten().len()
    }

    /// Concatenates every parameter into one vector (fixed field order).
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in [&self.enc1, &self.eb1_in, &self.eb1_out, &self.enc2, &self.eb2_in, &self.eb2_out]
        {
            out.extend_from_slice(&l.w);
            out.extend_from_slice(&l.b);
        }
        out.extend_from_slice(&self.protos.w);
        out
    }

    /// Writes a flat vector (from [`flatten`](Self::flatten)) back into
    /// the parameter fields.
    pub fn unflatten(&mut self, flat: &[f64]) {
        let mut at = 0;
        for l in
            [&mut self.enc1, &mut self.eb1_in, &mut self.eb1_out, &mut self.enc2, &mut self.eb2_in,
                &mut self.eb2_out]
        {
            let nw = l.w.len();
            l.w.copy_from_slice(&flat[at..at + nw]);
            at += nw;
            let nb = l.b.len();
            l.b.copy_from_slice(&flat[at..at + nb]);
            at += nb;
        }
        let np = self.protos.w.len();
        self.protos.w.copy_from_slice(&flat[at..at + np]);
        at += np;
        assert_eq!(at, flat.len(), "flat parameter vector has wrong length");
    }
}

/// Accumulated partials, shape-congruent with [`ModelParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientTape {
    pub enc1_w: Vec<f64>,
    pub enc1_b: Vec<f64>,
    pub eb1_in_w: Vec<f64>,
    pub eb1_in_b: Vec<f64>,
    pub eb1_out_w: Vec<f64>,
    pub eb1_out_b: Vec<f64>,
    pub enc2_w: Vec<f64>,
    pub enc2_b: Vec<f64>,
    pub eb2_in_w: Vec<f64>,
    pub eb2_in_b: Vec<f64>,
    pub eb2_out_w: Vec<f64>,
    pub eb2_out_b: Vec<f64>,
    pub protos_w: Vec<f64>,
}

impl GradientTape {
    /// Zeroed tape matching the parameter shapes.
    pub fn zeros_like(params: &ModelParams) -> Self {
        GradientTape {
            enc1_w: vec![0.0; params.enc1.w.len()],
            enc1_b: vec![0.0; params.enc1.b.len()],
            eb1_in_w: vec![0.0; params.eb1_in.w.len()],
            eb1_in_b: vec![0.0; params.eb1_in.b.len()],
            eb1_out_w: vec![0.0; params.eb1_out.w.len()],
            eb1_out_b: vec![0.0; params.eb1_out.b.len()],
            enc2_w: vec![0.0; params.enc2.w.len()],
            enc2_b: vec![0.0; params.enc2.b.len()],
            eb2_in_w: vec![0.0; params.eb2_in.w.len()],
            eb2_in_b: vec![0.0; params.eb2_in.b.len()],
            eb2_out_w: vec![0.0; params.eb2_out.w.len()],
            eb2_out_b: vec![0.0; params.eb2_out.b.len()],
            protos_w: vec![0.0; params.protos.w.len()],
        }
    }

    /// Same field order as [`ModelParams::flatten`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        out.extend_from_slice(&self.enc1_w);
        out.extend_from_slice(&self.enc1_b);
        out.extend_from_slice(&self.eb1_in_w);
        out.extend_from_slice(&self.eb1_in_b);
        out.extend_from_slice(&self.eb1_out_w);
        out.extend_from_slice(&self.eb1_out_b);
        out.extend_from_slice(&self.enc2_w);
        out.extend_from_slice(&self.enc2_b);
        out.extend_from_slice(&self.eb2_in_w);
        out.extend_from_slice(&self.eb2_in_b);
        out.extend_from_slice(&self.eb2_out_w);
        out.extend_from_slice(&self.eb2_out_b);
        out.extend_from_slice(&self.protos_w);
        out
    }

    /// Adds another tape elementwise (for gradient accumulation across
    /// scenes; deterministic because the order is the caller's).
    pub fn add(&mut self, other: &GradientTape) {
        fn axpy(a: &mut [f64], b: &[f64]) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        axpy(&mut self.enc1_w, &other.enc1_w);
        axpy(&mut self.enc1_b, &other.enc1_b);
        axpy(&mut self.eb1_in_w, &other.eb1_in_w);
        axpy(&mut self.eb1_in_b, &other.eb1_in_b);
        axpy(&mut self.eb1_out_w, &other.eb1_out_w);
        axpy(&mut self.eb1_out_b, &other.eb1_out_b);
        axpy(&mut self.enc2_w, &other.enc2_w);
        axpy(&mut self.enc2_b, &other.enc2_b);
        axpy(&mut self.eb2_in_w, &other.eb2_in_w);
        axpy(&mut self.eb2_in_b, &other.eb2_in_b);
        axpy(&mut self.eb2_out_w, &other.eb2_out_w);
        axpy(&mut self.eb2_out_b, &other.eb2_out_b);
        axpy(&mut self.protos_w, &other.protos_w);
    }
}

/// Activations recorded by [`forward_cached`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub x0: FeatureField,
    pub z1: FeatureField,
    pub std1: StdCache,
    pub r1: FeatureField,
    pub t1: FeatureField,
    pub eb1: Option<EntropyBlockCache>,
    pub e1: FeatureField,
    pub z2: FeatureField,
    pub std2: StdCache,
    pub r2: FeatureField,
    pub t2: FeatureField,
    pub eb2: Option<EntropyBlockCache>,
    pub emb: FeatureField,
}

/// Concatenates coordinates and colors into the N×6 input field.
pub fn input_features(cloud: &PointCloud) -> FeatureField {
    let n = cloud.len();
    let mut data = Vec::with_capacity(n * D_IN);
    for i in 0..n {
        data.extend_from_slice(&cloud.coords[i]);
        data.extend_from_slice(&cloud.colors[i]);
    }
    FeatureField { n, d: D_IN, data }
}

fn check_graphs(cloud: &PointCloud, graphs: &[KnnGraph]) -> Result<()> {
    if graphs.len() != 2 {
        return Err(Error::ShapeMismatch(format!(
            "model wants one graph per encoder block (2), got {}",
            graphs.len()
        )));
    }
    for (b, g) in graphs.iter().enumerate() {
        if g.len() != cloud.len() {
            return Err(Error::ShapeMismatch(format!(
                "graph {} covers {} points but the cloud has {}",
                b,
                g.len(),
                cloud.len()
            )));
        }
    }
    Ok(())
}

/// Forward pass keeping every activation needed by [`backward`].
pub fn forward_cached(
    cloud: &PointCloud,
    graphs: &[KnnGraph],
    params: &ModelParams,
    cfg: &ModelConfig,
) -> Result<(Vec<EntropyField>, ForwardCache)> {
    check_graphs(cloud, graphs)?;
    let x0 = input_features(cloud);
    let (z1, std1) = standardize(&x0);
    let r1 = relu(&z1);
    let t1 = params.enc1.forward(&r1);
    let mut fields = Vec::new();
    let (e1, eb1) = if cfg.entropy_block {
        let (out, cache) =
            entropy_block_forward(&t1, &graphs[0], &params.eb1_in, &params.eb1_out, cfg.eb_options)?;
        fields.push(EntropyField {
            h: cache.h.clone(),
            h_cal: cache.h_cal.clone(),
            gi: cache.gi.clone(),
        });
        (out, Some(cache))
    } else {
        (t1.clone(), None)
    };
    let (z2, std2) = standardize(&e1);
    let r2 = relu(&z2);
    let t2 = params.enc2.forward(&r2);
    let (emb, eb2) = if cfg.entropy_block {
        let (out, cache) =
            entropy_block_forward(&t2, &graphs[1], &params.eb2_in, &params.eb2_out, cfg.eb_options)?;
        fields.push(EntropyField {
            h: cache.h.clone(),
            h_cal: cache.h_cal.clone(),
            gi: cache.gi.clone(),
        });
        (out, Some(cache))
    } else {
        (t2.clone(), None)
    };
    let cache = ForwardCache { x0, z1, std1, r1, t1, eb1, e1, z2, std2, r2, t2, eb2, emb: emb.clone() };
    Ok((fields, cache))
}

/// Embeddings plus per-block entropy diagnostics, without the cache.
pub fn forward(
    cloud: &PointCloud,
    graphs: &[KnnGraph],
    params: &ModelParams,
    cfg: &ModelConfig,
) -> Result<(FeatureField, Vec<EntropyField>)> {
    let (fields, cache) = forward_cached(cloud, graphs, params, cfg)?;
    Ok((cache.emb, fields))
}

/// Reverse pass from d(loss)/d(embeddings); accumulates into `tape`.
pub fn backward(
    demb: &FeatureField,
    cache: &ForwardCache,
    graphs: &[KnnGraph],
    params: &ModelParams,
    tape: &mut GradientTape,
) {
    // Block 2.
    let mut dt2 = FeatureField::zeros(cache.t2.n, cache.t2.d);
    if let Some(eb) = &cache.eb2 {
        entropy_block_backward(
            demb,
            eb,
            &graphs[1],
            &params.eb2_in,
            &params.eb2_out,
            &mut tape.eb2_in_w,
            &mut tape.eb2_in_b,
            &mut tape.eb2_out_w,
            &mut tape.eb2_out_b,
            &mut dt2,
        );
    } else {
        for (d, g) in dt2.data.iter_mut().zip(&demb.data) {
            *d += g;
        }
    }
    let mut dr2 = FeatureField::zeros(cache.r2.n, cache.r2.d);
    params.enc2.backward(&cache.r2, &dt2, &mut tape.enc2_w, &mut tape.enc2_b, &mut dr2);
    let mut dz2 = FeatureField::zeros(cache.z2.n, cache.z2.d);
    relu_backward(&cache.r2, &dr2, &mut dz2);
    let mut de1 = FeatureField::zeros(cache.e1.n, cache.e1.d);
    standardize_backward(&cache.z2, &cache.std2, &dz2, &mut de1);

    // Block 1.
    let mut dt1 = FeatureField::zeros(cache.t1.n, cache.t1.d);
    if let Some(eb) = &cache.eb1 {
        entropy_block_backward(
            &de1,
            eb,
            &graphs[0],
            &params.eb1_in,
            &params.eb1_out,
            &mut tape.eb1_in_w,
            &mut tape.eb1_in_b,
            &mut tape.eb1_out_w,
            &mut tape.eb1_out_b,
            &mut dt1,
        );
    } else {
        for (d, g) in dt1.data.iter_mut().zip(&de1.data) {
            *d += g;
        }
    }
    let mut dr1 = FeatureField::zeros(cache.r1.n, cache.r1.d);
    params.enc1.backward(&cache.r1, &dt1, &mut tape.enc1_w, &mut tape.enc1_b, &mut dr1);
    let mut dz1 = FeatureField::zeros(cache.z1.n, cache.z1.d);
    relu_backward(&cache.r1, &dr1, &mut dz1);
    // Input gradients stop here: coordinates/colors are data, not
    // parameters.
    let mut dx0 = FeatureField::zeros(cache.x0.n, cache.x0.d);
    standardize_backward(&cache.z1, &cache.std1, &dz1, &mut dx0);
}

/// Stateful forward/backward pair: `backward` is only valid after a
/// recorded `forward` and consumes the recording.
pub struct Network {
    pub cfg: ModelConfig,
    pub params: ModelParams,
    recorded: Option<(ForwardCache, Vec<KnnGraph>)>,
}

impl Network {
    pub fn new(cfg: ModelConfig, params: ModelParams) -> Self {
        Network { cfg, params, recorded: None }
    }

    /// Forward pass that records activations for a following backward.
    pub fn forward(
        &mut self,
        cloud: &PointCloud,
        graphs: &[KnnGraph],
    ) -> Result<(FeatureField, Vec<EntropyField>)> {
        let (fields, cache) = forward_cached(cloud, graphs, &self.params, &self.cfg)?;
        let emb = cache.emb.clone();
        self.recorded = Some((cache, graphs.to_vec()));
        Ok((emb, fields))
    }

    /// Backward from d(loss)/d(embeddings); errors when no forward is
    /// recorded.
    pub fn backward(&mut self, demb: &FeatureField) -> Result<GradientTape> {
        let (cache, graphs) = self.recorded.take().ok_or(Error::BackwardWithoutForward)?;
        let mut tape = GradientTape::zeros_like(&self.params);
        backward(demb, &cache, &graphs, &self.params, &mut tape);
        Ok(tape)
    }
}

/// First/second-moment state for Adam.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(param_count: usize) -> Self {
        AdamState { m: vec![0.0; param_count], v: vec![0.0; param_count], t: 0 }
    }
}

/// One Adam update (β1 = 0.9, β2 = 0.999, ε = 1e−8) with decoupled
/// weight decay applied to every parameter.
pub fn adam_step(
    params: &mut ModelParams,
    tape: &GradientTape,
    lr: f64,
    weight_decay: f64,
    state: &mut AdamState,
) {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;
    let g = tape.flatten();
    let mut p = params.flatten();
    assert_eq!(g.len(), p.len(), "tape does not match parameters");
    assert_eq!(g.len(), state.m.len(), "optimizer state does not match parameters");
    state.t += 1;
    let bc1 = 1.0 - BETA1.powi(state.t as i32);
    let bc2 = 1.0 - BETA2.powi(state.t as i32);
    for i in 0..p.len() {
        state.m[i] = BETA1 * state.m[i] + (1.0 - BETA1) * g[i];
        state.v[i] = BETA2 * state.v[i] + (1.0 - BETA2) * g[i] * g[i];
        let mhat = state.m[i] / bc1;
        let vhat = state.v[i] / bc2;
        p[i] -= lr * (mhat / (vhat.sqrt() + EPS) + weight_decay * p[i]);
    }
    params.unflatten(&p);
}
