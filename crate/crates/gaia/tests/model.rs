//! Network tests: pipeline forward properties, a finite-difference check
//! of the full training gradient under every ablation toggle, and the
//! Adam optimizer.

use rand::Rng;

use gaia::arcpoint::{ArcConfig, LossMode, SiameseMode};
use gaia::geometry::{KnnGraph, PointCloud};
use gaia::model::{
    adam_step, forward, forward_cached, input_features, AdamState, GradientTape, ModelConfig,
    ModelParams, Network,
};
use gaia::nn::{relu, standardize, Linear};
use gaia::seeding::rng_for;
use gaia::training::{build_graphs, total_loss, total_loss_with_grad, TrainConfig};
use gaia::uncertainty::{Calibration, EntropyBlockOptions, UpdateRule};
use gaia::Error;

/// Fully labeled random scene with `y` classes striped over the points.
fn random_scene(n: usize, y: usize, seed: u64) -> PointCloud {
    let mut rng = rng_for(seed, "model-scene", 0);
    PointCloud {
        coords: (0..n)
            .map(|_| {
                [
                    rng.random_range(0.0..1.0),
                    rng.random_range(0.0..1.0),
                    rng.random_range(0.0..1.0),
                ]
            })
            .collect(),
        colors: (0..n)
            .map(|_| {
                [
                    rng.random_range(0.0..1.0),
                    rng.random_range(0.0..1.0),
                    rng.random_range(0.0..1.0),
                ]
            })
            .collect(),
        labels: (0..n).map(|i| (i % y) as i32).collect(),
        annotated: (0..n).map(|i| i < y).collect(),
        n_classes: y,
    }
}

fn small_cfg() -> ModelConfig {
    ModelConfig { d1: 6, d2: 6, n_classes: 3, ..Default::default() }
}

// ------------------------------------------------------------- forward

#[test]
fn zero_parameters_give_zero_embeddings() {
    let cloud = random_scene(20, 3, 1);
    let graphs = build_graphs(&cloud, &[4, 3]).unwrap();
    let cfg = small_cfg();
    let params = ModelParams::zeros(&cfg);
    let (emb, fields) = forward(&cloud, &graphs, &params, &cfg).unwrap();
    assert!(emb.data.iter().all(|&v| v == 0.0), "zero weights must produce zero output");
    // Zero input projections make every distribution uniform.
    for f in &fields {
        for &h in &f.h {
            assert!((h - 3.0f64.ln()).abs() < 1e-12);
        }
        for &g in &f.gi {
            assert!(g < 1e-12);
        }
    }
}

#[test]
fn forward_is_deterministic() {
    let cloud = random_scene(30, 3, 2);
    let graphs = build_graphs(&cloud, &[5, 4]).unwrap();
    let cfg = small_cfg();
    let params = ModelParams::init(&cfg, &mut rng_for(7, "init", 0));
    let (a, _) = forward(&cloud, &graphs, &params, &cfg).unwrap();
    let (b, _) = forward(&cloud, &graphs, &params, &cfg).unwrap();
    assert_eq!(a.data, b.data, "same inputs must give bit-identical embeddings");
}

#[test]
fn model_rejects_bad_graphs() {
    let cloud = random_scene(10, 3, 3);
    let cfg = small_cfg();
    let params = ModelParams::zeros(&cfg);
    let one_graph = build_graphs(&cloud, &[3, 3]).unwrap()[..1].to_vec();
    assert!(matches!(
        forward(&cloud, &one_graph, &params, &cfg).unwrap_err(),
        Error::ShapeMismatch(_)
    ));

    let empty = KnnGraph { k: 0, neighbors: vec![vec![]; 10], dists: vec![vec![]; 10] };
    let graphs = vec![empty.clone(), empty];
    assert!(matches!(
        forward(&cloud, &graphs, &params, &cfg).unwrap_err(),
        Error::ShapeMismatch(_)
    ));
}

#[test]
fn backward_without_forward_is_an_error() {
    let cfg = small_cfg();
    let params = ModelParams::init(&cfg, &mut rng_for(8, "init", 0));
    let mut net = Network::new(cfg, params);
    let demb = gaia::field::FeatureField::zeros(5, 6);
    assert!(matches!(net.backward(&demb).unwrap_err(), Error::BackwardWithoutForward));
}

#[test]
fn input_features_interleave_coords_and_colors() {
    let cloud = random_scene(4, 2, 4);
    let x = input_features(&cloud);
    assert_eq!(x.n, 4);
    assert_eq!(x.d, 6);
    for i in 0..4 {
        assert_eq!(&x.row(i)[..3], &cloud.coords[i]);
        assert_eq!(&x.row(i)[3..], &cloud.colors[i]);
    }
}

// -------------------------------------------------- small nn components

#[test]
fn linear_layer_matches_closed_form() {
    // y = x·Wᵀ + b with W = [[1,2],[3,4],[5,6]], b = [10,20,30].
    let l = Linear {
        n_in: 2,
        n_out: 3,
        w: vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0],
        b: vec![10.0, 20.0, 30.0],
    };
    let x = gaia::field::FeatureField::from_vec(1, 2, vec![1.0, -1.0]).unwrap();
    let y = l.forward(&x);
    assert_eq!(y.row(0), &[10.0 - 1.0, 20.0 - 1.0, 30.0 - 1.0]);
}

#[test]
fn standardize_centers_and_scales_columns() {
    let x = gaia::field::FeatureField::from_vec(2, 1, vec![0.0, 2.0]).unwrap();
    let (z, cache) = standardize(&x);
    assert_eq!(cache.mean, vec![1.0]);
    let sigma = (1.0f64 + 1e-5).sqrt();
    assert!((cache.sigma[0] - sigma).abs() < 1e-12);
    assert!((z.data[0] + 1.0 / sigma).abs() < 1e-12);
    assert!((z.data[1] - 1.0 / sigma).abs() < 1e-12);

    // A constant column stays finite: z = 0 everywhere.
    let x = gaia::field::FeatureField::from_vec(3, 1, vec![5.0, 5.0, 5.0]).unwrap();
    let (z, _) = standardize(&x);
    assert!(z.data.iter().all(|&v| v == 0.0));
}

#[test]
fn relu_clamps_negatives_only() {
    let x = gaia::field::FeatureField::from_vec(1, 4, vec![-1.0, 0.0, 0.5, 2.0]).unwrap();
    let y = relu(&x);
    assert_eq!(y.data, vec![0.0, 0.0, 0.5, 2.0]);
}

// ------------------------------------------------- end-to-end gradients

/// Training configs covering every ablation toggle combination that
/// changes the gradient path.
fn fd_variants() -> Vec<(TrainConfig, usize, &'static str)> {
    let base = TrainConfig {
        d1: 6,
        d2: 6,
        k_schedule: vec![3, 2],
        arc: ArcConfig { s: 8.0, m: 0.1, gamma: 0.5 },
        ..Default::default()
    };
    vec![
        // Phase 1: CE only.
        (base.clone(), 0, "phase1 arcpoint"),
        // Phase 2: CE + affine CE + Siamese.
        (base.clone(), 150, "phase2 arcpoint per-point"),
        (
            TrainConfig { siamese_mode: SiameseMode::MeanField, ..base.clone() },
            150,
            "phase2 mean-field",
        ),
        (TrainConfig { entropy_block: false, ..base.clone() }, 150, "no entropy block"),
        (TrainConfig { loss_mode: LossMode::SoftmaxCe, ..base.clone() }, 150, "plain softmax"),
        (TrainConfig { loss_mode: LossMode::ArcFaceOnly, ..base.clone() }, 0, "anchor margin only"),
        (
            TrainConfig {
                eb_options: EntropyBlockOptions {
                    calibration: Calibration::PlainSum,
                    update: UpdateRule::AttentionOnly,
                    normalize_gi: true,
                },
                ..base.clone()
            },
            150,
            "ablation entropy options",
        ),
    ]
}

#[test]
fn training_gradient_matches_finite_differences() {
    let cloud = random_scene(8, 3, 5);
    for (cfg, epoch, name) in fd_variants() {
        let graphs = build_graphs(&cloud, &cfg.k_schedule).unwrap();
        let mcfg = cfg.model_config(3);
        let params = ModelParams::init(&mcfg, &mut rng_for(11, "init", 0));
        let (comps, tape) =
            total_loss_with_grad(&cloud, &graphs, &params, &cfg, epoch, 0).unwrap();
        assert!(comps.total.is_finite(), "{name}: loss must be finite");
        let grad = tape.flatten();
        let flat = params.flatten();
        let h = 1e-5;
        let mut worst = 0.0f64;
        let mut worst_idx = 0;
        for idx in 0..flat.len() {
            let eval = |v: f64| {
                let mut f = flat.clone();
                f[idx] = v;
                let mut p = params.clone();
                p.unflatten(&f);
                total_loss(&cloud, &graphs, &p, &cfg, epoch).unwrap().total
            };
            let fd = (eval(flat[idx] + h) - eval(flat[idx] - h)) / (2.0 * h);
            let denom = grad[idx].abs().max(fd.abs()).max(1e-6);
            let rel = (grad[idx] - fd).abs() / denom;
            if rel > worst {
                worst = rel;
                worst_idx = idx;
            }
            assert!(
                rel < 1e-4,
                "{name}: parameter {idx}: analytic {} vs fd {fd} (rel {rel})",
                grad[idx]
            );
        }
        println!("{name}: worst rel err {worst:.2e} at parameter {worst_idx}");
    }
}

#[test]
fn degenerate_scene_keeps_gradients_finite() {
    // Identical coordinates and colors put every entropy difference at
    // the |·| kink (all distributions equal, so H = H̃ exactly) and every
    // standardized column at zero; the backward pass must stay finite
    // (the kink subgradient is 0). Nonzero biases keep the embeddings
    // away from zero norm so the cosine head stays defined.
    let n = 6;
    let cloud = PointCloud {
        coords: vec![[0.5, 0.5, 0.5]; n],
        colors: vec![[0.3, 0.3, 0.3]; n],
        labels: (0..n).map(|i| (i % 3) as i32).collect(),
        annotated: vec![true; n],
        n_classes: 3,
    };
    let cfg = TrainConfig {
        d1: 6,
        d2: 6,
        k_schedule: vec![2, 2],
        ..Default::default()
    };
    let graphs = build_graphs(&cloud, &cfg.k_schedule).unwrap();
    let mut params = ModelParams::init(&cfg.model_config(3), &mut rng_for(12, "init", 0));
    for (j, b) in params.enc2.b.iter_mut().enumerate() {
        *b = 0.2 + 0.07 * j as f64;
    }
    let (comps, tape) = total_loss_with_grad(&cloud, &graphs, &params, &cfg, 0, 0).unwrap();
    assert!(comps.total.is_finite());
    assert!(tape.flatten().iter().all(|v| v.is_finite()), "gradients must stay finite");
}

// ---------------------------------------------------------------- adam

/// Copies a flat gradient vector into a tape (flatten order).
fn tape_from_flat(params: &ModelParams, flat: &[f64]) -> GradientTape {
    let mut tape = GradientTape::zeros_like(params);
    let mut at = 0;
    let mut take = |buf: &mut Vec<f64>| {
        let n = buf.len();
        buf.copy_from_slice(&flat[at..at + n]);
        at += n;
    };
    take(&mut tape.enc1_w);
    take(&mut tape.enc1_b);
    take(&mut tape.eb1_in_w);
    take(&mut tape.eb1_in_b);
    take(&mut tape.eb1_out_w);
    take(&mut tape.eb1_out_b);
    take(&mut tape.enc2_w);
    take(&mut tape.enc2_b);
    take(&mut tape.eb2_in_w);
    take(&mut tape.eb2_in_b);
    take(&mut tape.eb2_out_w);
    take(&mut tape.eb2_out_b);
    take(&mut tape.protos_w);
    assert_eq!(at, flat.len());
    tape
}

#[test]
fn adam_with_zero_gradient_and_no_decay_is_identity() {
    let cfg = small_cfg();
    let mut params = ModelParams::init(&cfg, &mut rng_for(13, "init", 0));
    let before = params.flatten();
    let tape = GradientTape::zeros_like(&params);
    let mut state = AdamState::new(params.count());
    adam_step(&mut params, &tape, 0.01, 0.0, &mut state);
    assert_eq!(params.flatten(), before, "nothing should move");
    assert_eq!(state.t, 1);
}

#[test]
fn adam_first_step_moves_by_learning_rate() {
    // With g = 1 everywhere, bias correction makes m̂ = 1 and v̂ = 1, so
    // the first step is lr/(1+ε) ≈ lr.
    let cfg = small_cfg();
    let mut params = ModelParams::zeros(&cfg);
    let ones = vec![1.0; params.count()];
    params.unflatten(&ones);
    let tape = tape_from_flat(&params, &ones);
    let mut state = AdamState::new(params.count());
    adam_step(&mut params, &tape, 0.01, 0.0, &mut state);
    for &v in &params.flatten() {
        assert!((v - 0.99).abs() < 1e-9, "got {v}");
    }
}

#[test]
fn decoupled_weight_decay_shrinks_parameters() {
    let cfg = small_cfg();
    let mut params = ModelParams::zeros(&cfg);
    let ones = vec![1.0; params.count()];
    params.unflatten(&ones);
    let tape = GradientTape::zeros_like(&params);
    let mut state = AdamState::new(params.count());
    adam_step(&mut params, &tape, 0.1, 0.5, &mut state);
    // No gradient: p ← p − lr·wd·p = 1 − 0.05.
    for &v in &params.flatten() {
        assert!((v - 0.95).abs() < 1e-12, "got {v}");
    }
}

#[test]
fn adam_descends_a_convex_quadratic() {
    // f(p) = ½‖p − 3‖²; gradient p − 3. Far from the minimizer Adam's
    // steps are ≈ lr toward it, so the loss must fall monotonically
    // after a short warmup and end well below where it started.
    let cfg = small_cfg();
    let mut params = ModelParams::zeros(&cfg);
    let mut state = AdamState::new(params.count());
    let f = |p: &ModelParams| -> f64 {
        p.flatten().iter().map(|v| 0.5 * (v - 3.0) * (v - 3.0)).sum()
    };
    let mut losses = Vec::new();
    for _ in 0..100 {
        let grad: Vec<f64> = params.flatten().iter().map(|v| v - 3.0).collect();
        let tape = tape_from_flat(&params, &grad);
        adam_step(&mut params, &tape, 0.01, 0.0, &mut state);
        losses.push(f(&params));
    }
    assert!(losses[99] < 0.6 * losses[0], "final {} vs start {}", losses[99], losses[0]);
    for w in losses[10..].windows(2) {
        assert!(w[1] <= w[0] + 1e-12, "loss must not rise after warmup: {} -> {}", w[0], w[1]);
    }
}

#[test]
fn flatten_unflatten_roundtrip() {
    let cfg = small_cfg();
    let params = ModelParams::init(&cfg, &mut rng_for(14, "init", 0));
    let flat = params.flatten();
    assert_eq!(flat.len(), params.count());
    let mut other = ModelParams::zeros(&cfg);
    other.unflatten(&flat);
    assert_eq!(other, params, "roundtrip must reproduce every field");
}

#[test]
fn network_records_and_consumes_the_forward() {
    let cloud = random_scene(12, 3, 15);
    let cfg = small_cfg();
    let graphs = build_graphs(&cloud, &[3, 3]).unwrap();
    let params = ModelParams::init(&cfg, &mut rng_for(16, "init", 0));
    let mut net = Network::new(cfg, params.clone());
    let (emb, _) = net.forward(&cloud, &graphs).unwrap();
    // Same numbers as the free function.
    let (_, cache) = forward_cached(&cloud, &graphs, &params, &cfg).unwrap();
    assert_eq!(emb.data, cache.emb.data);
    let demb = gaia::field::FeatureField::zeros(12, cfg.d2);
    assert!(net.backward(&demb).is_ok());
    // The recording is consumed.
    assert!(matches!(net.backward(&demb).unwrap_err(), Error::BackwardWithoutForward));
}
