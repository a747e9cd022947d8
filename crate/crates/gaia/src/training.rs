//! Two-phase training: cross-entropy warmup, then a Siamese consistency
//! branch over an augmented view, with the margin head and entropy
//! blocks switchable for ablations. Also sparse-annotation sampling and
//! inference helpers.

use serde::{Deserialize, Serialize};

use crate::arcpoint::{
    cosine_logits, head_backward, head_forward, loss_ce_with_grad, loss_siamese_with_grad,
    ArcConfig, LossMode, SiameseMode,
};
use crate::error::{Error, Result};
use crate::field::ProbField;
use crate::geometry::{
    affine_augment, build_knn_graph, elastic_distort, AugmentParams, KnnGraph, PointCloud,
};
use crate::model::{
    adam_step, backward, forward_cached, AdamState, GradientTape, ModelConfig, ModelParams,
};
use crate::nn::{softmax, softmax_backward};
use crate::seeding::{derive_seed, rng_for};
use crate::uncertainty::{point_entropy, EntropyBlockOptions};

/// How many points per scene get their annotation flag set.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelScheme {
    /// One point per present class.
    #[default]
    OnePt,
    /// A fixed point budget distributed round-robin over present classes.
    Pts { count: usize },
    /// A fraction of each class (at least one point).
    Percent { p: f64 },
}

/// Every knob of a training run. The `version` field gates the on-disk
/// config format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub version: u32,
    pub total_epochs: usize,
    /// Warmup length; kept equal to `siamese_enabled_after` by default.
    pub phase1_epochs: usize,
    /// First epoch index at which the Siamese branch contributes.
    pub siamese_enabled_after: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub arc: ArcConfig,
    /// Graph fan-out per encoder block (two blocks at this scale).
    pub k_schedule: Vec<usize>,
    pub label_scheme: LabelScheme,
    pub seed: u64,
    /// Ablation: run the entropy blocks at all.
    pub entropy_block: bool,
    /// Ablation: full margin head vs plain CE vs anchor-only margin.
    pub loss_mode: LossMode,
    pub siamese_mode: SiameseMode,
    pub eb_options: EntropyBlockOptions,
    pub d1: usize,
    pub d2: usize,
    pub augment: AugmentParams,
    /// Apply elastic distortion on top of the affine view.
    pub elastic: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            version: 1,
            total_epochs: 300,
            phase1_epochs: 100,
            siamese_enabled_after: 100,
            lr: 0.01,
            weight_decay: 1e-4,
            arc: ArcConfig::default(),
            k_schedule: vec![16, 12],
            label_scheme: LabelScheme::OnePt,
            seed: 0,
            entropy_block: true,
            loss_mode: LossMode::ArcPoint,
            siamese_mode: SiameseMode::PerPointField,
            eb_options: EntropyBlockOptions::default(),
            d1: 16,
            d2: 16,
            augment: AugmentParams::default(),
            elastic: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.version != 1 {
            return Err(Error::Format(format!("unknown config version {}", self.version)));
        }
        if self.phase1_epochs > self.total_epochs || self.siamese_enabled_after > self.total_epochs
        {
            return Err(Error::InvalidSpec("phase split exceeds total epochs".into()));
        }
        if self.k_schedule.len() != 2 || self.k_schedule.contains(&0) {
            return Err(Error::InvalidSpec("k schedule needs two nonzero entries".into()));
        }
        if let LabelScheme::Percent { p } = self.label_scheme {
            if !(p > 0.0 && p <= 1.0) {
                return Err(Error::InvalidSpec("label percentage outside (0,1]".into()));
            }
        }
        if let LabelScheme::Pts { count } = self.label_scheme {
            if count == 0 {
                return Err(Error::InvalidSpec("label budget must be positive".into()));
            }
        }
        let lr_ok = self.lr.is_finite() && self.lr > 0.0;
        let wd_ok = self.weight_decay.is_finite() && self.weight_decay >= 0.0;
        if !lr_ok || !wd_ok {
            return Err(Error::InvalidSpec("bad optimizer settings".into()));
        }
        self.arc.validate()?;
        self.augment.validate()
    }

    /// Architecture settings implied by this config.
    pub fn model_config(&self, n_classes: usize) -> ModelConfig {
        ModelConfig {
            d1: self.d1,
            d2: self.d2,
            n_classes,
            entropy_block: self.entropy_block,
            eb_options: self.eb_options,
        }
    }
}

/// One row of the per-epoch log.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss_ce: f64,
    pub loss_ce_aff: f64,
    pub loss_sia: f64,
    /// Mean inference-entropy over the training scenes.
    pub mean_entropy: f64,
    /// Mean mIoU over the validation scenes, when any were given.
    pub val_miou: Option<f64>,
    /// Unlabeled points that received the margin this epoch.
    pub margin_selected: usize,
}

impl EpochRecord {
    pub fn total(&self) -> f64 {
        self.loss_ce + self.loss_ce_aff + self.loss_sia
    }
}

/// Append-only training history, one record per epoch.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunLog {
    pub epochs: Vec<EpochRecord>,
}

/// Keeps every label but sets `annotated` on only a sparse sample:
/// uniform without replacement within each class, sized by the scheme.
/// Classes smaller than their request are fully annotated with a
/// warning.
pub fn sample_sparse_labels(cloud: &PointCloud, scheme: LabelScheme, seed: u64) -> Result<PointCloud> {
    use rand::seq::SliceRandom;
    if cloud.is_empty() {
        return Err(Error::EmptyInput);
    }
    if cloud.labels.iter().any(|&l| l < 0) {
        return Err(Error::InvalidSpec("sparse labeling needs a fully labeled cloud".into()));
    }
    let y = cloud.n_classes;
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); y];
    for (i, &l) in cloud.labels.iter().enumerate() {
        members[l as usize].push(i);
    }
    let present: Vec<usize> = (0..y).filter(|&c| !members[c].is_empty()).collect();
    let mut wanted = vec![0usize; y];
    match scheme {
        LabelScheme::OnePt => {
            for &c in &present {
                wanted[c] = 1;
            }
        }
        LabelScheme::Pts { count } => {
            let base = count / present.len();
            let extra = count % present.len();
            for (rank, &c) in present.iter().enumerate() {
                wanted[c] = base + usize::from(rank < extra);
            }
        }
        LabelScheme::Percent { p } => {
            for &c in &present {
                wanted[c] = ((p * members[c].len() as f64).floor() as usize).max(1);
            }
        }
    }
    let mut rng = rng_for(seed, "sparse-labels", 0);
    let mut out = cloud.clone();
    out.annotated.iter_mut().for_each(|a| *a = false);
    for &c in &present {
        let mut idx = members[c].clone();
        if wanted[c] > idx.len() {
            log::warn!(
                "class {c} has {} points but {} were requested; annotating all of it",
                idx.len(),
                wanted[c]
            );
        }
        idx.shuffle(&mut rng);
        for &i in idx.iter().take(wanted[c].min(idx.len())) {
            out.annotated[i] = true;
        }
    }
    Ok(out)
}

/// Loss values for one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossComponents {
    pub total: f64,
    pub ce: f64,
    pub ce_aff: f64,
    pub sia: f64,
    /// Unlabeled points margined in the original view.
    pub margin_selected: usize,
}

/// Builds the per-block graphs for a cloud under the config's fan-outs.
pub fn build_graphs(cloud: &PointCloud, k_schedule: &[usize]) -> Result<Vec<KnnGraph>> {
    k_schedule.iter().map(|&k| build_knn_graph(cloud, k)).collect()
}

/// L = L_ce before the Siamese gate; afterwards L_ce + L_ce^aff + L_sia,
/// where the affine view is re-augmented (and its graphs rebuilt) every
/// epoch. Returns the loss pieces and the full parameter gradient.
pub fn total_loss_with_grad(
    cloud: &PointCloud,
    graphs: &[KnnGraph],
    params: &ModelParams,
    cfg: &TrainConfig,
    epoch: usize,
    scene_index: usize,
) -> Result<(LossComponents, GradientTape)> {
    let mcfg = cfg.model_config(cloud.n_classes);
    let mut tape = GradientTape::zeros_like(params);

    let (_fields, cache) = forward_cached(cloud, graphs, params, &mcfg)?;
    let (logits, head) = head_forward(
        &cache.emb,
        &params.protos,
        &cloud.labels,
        &cloud.annotated,
        cfg.arc,
        cfg.loss_mode,
    )?;
    let (ce, mut dlogits) = loss_ce_with_grad(&logits, &cloud.labels, &cloud.annotated)?;
    let margin_selected = logits
        .margin_applied
        .iter()
        .zip(&cloud.annotated)
        .filter(|&(&m, &a)| m && !a)
        .count();

    if epoch < cfg.siamese_enabled_after {
        let dfeats = head_backward(&dlogits, &head, &mut tape.protos_w);
        backward(&dfeats, &cache, graphs, params, &mut tape);
        let comps =
            LossComponents { total: ce, ce, ce_aff: 0.0, sia: 0.0, margin_selected };
        return Ok((comps, tape));
    }

    // Augmented view: affine (plus optional elastic), fresh graphs.
    let step = (epoch as u64) << 20 | scene_index as u64;
    let mut aff = affine_augment(cloud, &cfg.augment, derive_seed(cfg.seed, "affine", step));
    if cfg.elastic {
        aff = elastic_distort(&aff, &cfg.augment, derive_seed(cfg.seed, "elastic", step));
    }
    let aff_graphs = build_graphs(&aff, &cfg.k_schedule)?;
    let (_fields_a, cache_a) = forward_cached(&aff, &aff_graphs, params, &mcfg)?;
    let (logits_a, head_a) = head_forward(
        &cache_a.emb,
        &params.protos,
        &aff.labels,
        &aff.annotated,
        cfg.arc,
        cfg.loss_mode,
    )?;
    let (ce_aff, mut dlogits_a) = loss_ce_with_grad(&logits_a, &aff.labels, &aff.annotated)?;

    // Consistency between the two (margined) probability fields.
    let p = softmax(&logits.as_field());
    let q = softmax(&logits_a.as_field());
    let (sia, dp, dq) = loss_siamese_with_grad(&p, &q, cfg.siamese_mode)?;
    softmax_backward(&p, &dp, &mut dlogits);
    softmax_backward(&q, &dq, &mut dlogits_a);

    let dfeats = head_backward(&dlogits, &head, &mut tape.protos_w);
    backward(&dfeats, &cache, graphs, params, &mut tape);
    let dfeats_a = head_backward(&dlogits_a, &head_a, &mut tape.protos_w);
    backward(&dfeats_a, &cache_a, &aff_graphs, params, &mut tape);

    let comps = LossComponents {
        total: ce + ce_aff + sia,
        ce,
        ce_aff,
        sia,
        margin_selected,
    };
    Ok((comps, tape))
}

/// Loss pieces only (same computation as the gradient path).
pub fn total_loss(
    cloud: &PointCloud,
    graphs: &[KnnGraph],
    params: &ModelParams,
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<LossComponents> {
    total_loss_with_grad(cloud, graphs, params, cfg, epoch, 0).map(|(c, _)| c)
}

/// Class-probability rows at inference: no margin anywhere, logits per
/// the loss mode (s-scaled cosines, or plain dots under SoftmaxCe).
pub fn prediction_probs(
    cloud: &PointCloud,
    graphs: &[KnnGraph],
    params: &ModelParams,
    cfg: &TrainConfig,
) -> Result<ProbField> {
    let mcfg = cfg.model_config(cloud.n_classes);
    let (_f, cache) = forward_cached(cloud, graphs, params, &mcfg)?;
    let logits = match cfg.loss_mode {
        LossMode::SoftmaxCe => {
            let mut rows = vec![0.0; cache.emb.n * params.protos.y];
            for i in 0..cache.emb.n {
                let xi = cache.emb.row(i);
                for y in 0..params.protos.y {
                    rows[i * params.protos.y + y] =
                        xi.iter().zip(params.protos.col(y)).map(|(a, b)| a * b).sum();
                }
            }
            crate::field::FeatureField { n: cache.emb.n, d: params.protos.y, data: rows }
        }
        _ => cosine_logits(&cache.emb, &params.protos, cfg.arc.s)?,
    };
    Ok(softmax(&logits))
}

/// Argmax class per point from [`prediction_probs`].
pub fn predict(
    cloud: &PointCloud,
    graphs: &[KnnGraph],
    params: &ModelParams,
    cfg: &TrainConfig,
) -> Result<Vec<usize>> {
    let probs = prediction_probs(cloud, graphs, params, cfg)?;
    Ok((0..probs.n)
        .map(|i| {
            let row = probs.row(i);
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect())
}

/// Mean entropy of the inference distribution over one or more scenes.
pub fn mean_prediction_entropy(
    scenes: &[PointCloud],
    graphs: &[Vec<KnnGraph>],
    params: &ModelParams,
    cfg: &TrainConfig,
) -> Result<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for (scene, g) in scenes.iter().zip(graphs) {
        let probs = prediction_probs(scene, g, params, cfg)?;
        let h = point_entropy(&probs)?;
        sum += h.iter().sum::<f64>();
        count += h.len();
    }
    Ok(sum / count as f64)
}

/// Runs the two-phase schedule over fully labeled scenes: samples sparse
/// annotations, steps Adam once per scene per epoch, logs losses,
/// training-entropy, and validation mIoU, and returns the best
/// checkpoint by validation mIoU (the final parameters when no
/// validation scenes are given) together with the log.
pub fn train(
    cfg: &TrainConfig,
    scenes: &[PointCloud],
    val_scenes: &[PointCloud],
) -> Result<(ModelParams, RunLog)> {
    cfg.validate()?;
    if scenes.is_empty() {
        return Err(Error::EmptyInput);
    }
    let n_classes = scenes[0].n_classes;
    for s in scenes.iter().chain(val_scenes) {
        if s.n_classes != n_classes {
            return Err(Error::ShapeMismatch("scenes disagree on class count".into()));
        }
    }
    let mcfg = cfg.model_config(n_classes);
    let mut params = ModelParams::init(&mcfg, &mut rng_for(cfg.seed, "init", 0));
    let mut adam = AdamState::new(params.count());

    let train_scenes: Vec<PointCloud> = scenes
        .iter()
        .enumerate()
        .map(|(i, s)| sample_sparse_labels(s, cfg.label_scheme, derive_seed(cfg.seed, "labels", i as u64)))
        .collect::<Result<_>>()?;
    let train_graphs: Vec<Vec<KnnGraph>> = train_scenes
        .iter()
        .map(|s| build_graphs(s, &cfg.k_schedule))
        .collect::<Result<_>>()?;
    let val_graphs: Vec<Vec<KnnGraph>> = val_scenes
        .iter()
        .map(|s| build_graphs(s, &cfg.k_schedule))
        .collect::<Result<_>>()?;

    let mut log = RunLog::default();
    let mut best_params = params.clone();
    let mut best_miou = f64::NEG_INFINITY;
    let mut has_best = false;

    for epoch in 0..cfg.total_epochs {
        let mut ce = 0.0;
        let mut ce_aff = 0.0;
        let mut sia = 0.0;
        let mut margin_selected = 0usize;
        for (si, scene) in train_scenes.iter().enumerate() {
            let (comps, tape) =
                total_loss_with_grad(scene, &train_graphs[si], &params, cfg, epoch, si)?;
            adam_step(&mut params, &tape, cfg.lr, cfg.weight_decay, &mut adam);
            ce += comps.ce;
            ce_aff += comps.ce_aff;
            sia += comps.sia;
            margin_selected += comps.margin_selected;
        }
        let inv = 1.0 / train_scenes.len() as f64;
        let mean_entropy = mean_prediction_entropy(&train_scenes, &train_graphs, &params, cfg)?;
        let val_miou = if val_scenes.is_empty() {
            None
        } else {
            let mut acc = 0.0;
            for (vi, scene) in val_scenes.iter().enumerate() {
                let preds = predict(scene, &val_graphs[vi], &params, cfg)?;
                // Score only points that carry a ground-truth label.
                let mut p = Vec::with_capacity(preds.len());
                let mut t = Vec::with_capacity(preds.len());
                for (&pred, &l) in preds.iter().zip(&scene.labels) {
                    if l >= 0 {
                        p.push(pred);
                        t.push(l as usize);
                    }
                }
                acc += crate::evaluation::miou(&p, &t, n_classes)?.miou;
            }
            Some(acc / val_scenes.len() as f64)
        };
        if let Some(vm) = val_miou {
            if vm > best_miou {
                best_miou = vm;
                best_params = params.clone();
                has_best = true;
            }
        }
        log.epochs.push(EpochRecord {
            epoch,
            loss_ce: ce * inv,
            loss_ce_aff: ce_aff * inv,
            loss_sia: sia * inv,
            mean_entropy,
            val_miou,
            margin_selected,
        });
    }
    Ok((if has_best { best_params } else { params }, log))
}
