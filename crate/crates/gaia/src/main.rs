//! Command-line harness: generate synthetic scenes, train, evaluate, and
//! dump analysis CSVs (entropy fields, anchor similarities, angle
//! histograms).

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use gaia::arcpoint::{self, ArcConfig, ClassPrototypes};
use gaia::evaluation;
use gaia::field::FeatureField;
use gaia::geometry::{voxel_downsample, PointCloud};
use gaia::io;
use gaia::model::forward_cached;
use gaia::nn::softmax;
use gaia::synth::SceneSpec;
use gaia::training::{build_graphs, predict, train};
use gaia::{Error, Result};

#[derive(Parser)]
#[command(name = "gaia", version, about = "Weakly supervised point-cloud segmentation toolbox")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic labeled scene and write it as a binary cloud.
    Synth {
        /// Scene spec TOML; defaults apply when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Override the spec's sampling seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Voxel edge for optional downsampling.
        #[arg(long)]
        voxel: Option<f64>,
        /// Output cloud path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on fully labeled scenes (annotations are re-sampled sparsely
    /// according to the config) and write checkpoint + run log.
    Train {
        /// Training config TOML.
        #[arg(long)]
        config: PathBuf,
        /// Training scene(s), repeatable.
        #[arg(long = "scene", required = true)]
        scenes: Vec<PathBuf>,
        /// Validation scene(s), repeatable.
        #[arg(long = "val")]
        vals: Vec<PathBuf>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint: per-scene IoU report and entropy/correctness
    /// histograms.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long = "scene", required = true)]
        scenes: Vec<PathBuf>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Inspection dumps for a trained checkpoint.
    Analyze {
        #[command(subcommand)]
        what: AnalyzeCmd,
    },
}

#[derive(Subcommand)]
enum AnalyzeCmd {
    /// Per-point entropy, calibrated entropy, and information gain for
    /// each entropy block.
    Entropy {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        scene: PathBuf,
        /// Output directory (one CSV per block).
        #[arg(long)]
        out: PathBuf,
    },
    /// Anchor × high-entropy-point cosine-similarity matrix.
    Similarity {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        scene: PathBuf,
        /// Selection quantile; the checkpoint's value when omitted.
        #[arg(long)]
        gamma: Option<f64>,
        /// Redraw sparse annotations the way training did (useful on
        /// fully annotated synthetic scenes, which have no unlabeled
        /// points to select from).
        #[arg(long)]
        resample_labels: bool,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-class histograms of angles between embeddings and prototypes.
    Angles {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        scene: PathBuf,
        #[arg(long, default_value_t = 36)]
        bins: usize,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Synth { spec, seed, voxel, out } => cmd_synth(spec.as_deref(), seed, voxel, &out),
        Cmd::Train { config, scenes, vals, out } => cmd_train(&config, &scenes, &vals, &out),
        Cmd::Eval { checkpoint, scenes, out } => cmd_eval(&checkpoint, &scenes, &out),
        Cmd::Analyze { what } => match what {
            AnalyzeCmd::Entropy { checkpoint, scene, out } => cmd_entropy(&checkpoint, &scene, &out),
            AnalyzeCmd::Similarity { checkpoint, scene, gamma, resample_labels, out } => {
                cmd_similarity(&checkpoint, &scene, gamma, resample_labels, &out)
            }
            AnalyzeCmd::Angles { checkpoint, scene, bins, out } => {
                cmd_angles(&checkpoint, &scene, bins, &out)
            }
        },
    }
}

fn cmd_synth(spec: Option<&Path>, seed: Option<u64>, voxel: Option<f64>, out: &Path) -> Result<()> {
    let mut spec = match spec {
        Some(p) => {
            let text = std::fs::read_to_string(p)?;
            toml::from_str::<SceneSpec>(&text).map_err(|e| Error::Format(format!("spec: {e}")))?
        }
        None => SceneSpec::default(),
    };
    if let Some(s) = seed {
        spec.seed = s;
    }
    let mut cloud = gaia::synth::generate(&spec)?;
    if let Some(v) = voxel {
        let before = cloud.len();
        cloud = voxel_downsample(&cloud, v)?;
        log::info!("voxel {v}: {before} -> {} points", cloud.len());
    }
    io::write_cloud(out, &cloud)?;
    println!("wrote {} points, {} classes to {}", cloud.len(), cloud.n_classes, out.display());
    Ok(())
}

fn cmd_train(config: &Path, scenes: &[PathBuf], vals: &[PathBuf], out: &Path) -> Result<()> {
    let mut cfg = io::load_train_config(config)?;
    if let Ok(v) = std::env::var("GAIA_SEED") {
        cfg.seed = v
            .parse()
            .map_err(|_| Error::Format(format!("GAIA_SEED must be an unsigned integer, got {v:?}")))?;
        log::info!("seed overridden from environment: {}", cfg.seed);
    }
    let load = |paths: &[PathBuf]| -> Result<Vec<PointCloud>> {
        paths.iter().map(|p| io::read_cloud(p)).collect()
    };
    let train_scenes = load(scenes)?;
    let val_scenes = load(vals)?;
    let (params, log) = train(&cfg, &train_scenes, &val_scenes)?;

    std::fs::create_dir_all(out)?;
    let n_classes = train_scenes[0].n_classes;
    io::write_checkpoint(&out.join("checkpoint.bin"), &cfg, n_classes, &params, None)?;
    io::write_run_log_csv(&out.join("runlog.csv"), &log)?;
    let echo = toml::to_string(&cfg).map_err(|e| Error::Format(format!("config echo: {e}")))?;
    std::fs::write(out.join("config.toml"), echo)?;

    if let Some(last) = log.epochs.last() {
        println!(
            "epoch {}: loss {:.6} (ce {:.6} aff {:.6} sia {:.6}), entropy {:.4}",
            last.epoch,
            last.total(),
            last.loss_ce,
            last.loss_ce_aff,
            last.loss_sia,
            last.mean_entropy
        );
    }
    let best = log.epochs.iter().filter_map(|e| e.val_miou).fold(f64::NEG_INFINITY, f64::max);
    if best.is_finite() {
        println!("best validation mIoU {best:.4}");
    }
    println!("checkpoint written to {}", out.join("checkpoint.bin").display());
    Ok(())
}

fn cmd_eval(checkpoint: &Path, scenes: &[PathBuf], out: &Path) -> Result<()> {
    let ckpt = io::read_checkpoint(checkpoint)?;
    std::fs::create_dir_all(out)?;
    for (i, path) in scenes.iter().enumerate() {
        let cloud = io::read_cloud(path)?;
        if cloud.n_classes != ckpt.n_classes {
            return Err(Error::ShapeMismatch(format!(
                "scene has {} classes but the checkpoint was trained for {}",
                cloud.n_classes, ckpt.n_classes
            )));
        }
        let graphs = build_graphs(&cloud, &ckpt.cfg.k_schedule)?;
        let preds = predict(&cloud, &graphs, &ckpt.params, &ckpt.cfg)?;
        let probs = gaia::training::prediction_probs(&cloud, &graphs, &ckpt.params, &ckpt.cfg)?;

        // Score only points that carry a ground-truth label.
        let mut p = Vec::new();
        let mut t = Vec::new();
        let mut kept_rows = Vec::new();
        for (j, &label) in cloud.labels.iter().enumerate() {
            if label >= 0 {
                p.push(preds[j]);
                t.push(label as usize);
                kept_rows.push(j);
            }
        }
        if p.is_empty() {
            return Err(Error::NoLabeledPoints);
        }
        let report = evaluation::miou(&p, &t, cloud.n_classes)?;
        let mut kept_probs = FeatureField::zeros(kept_rows.len(), probs.y);
        for (r, &j) in kept_rows.iter().enumerate() {
            kept_probs.row_mut(r).copy_from_slice(probs.row(j));
        }
        let kept_probs = gaia::field::ProbField::from_vec(kept_rows.len(), probs.y, kept_probs.data)?;
        let analysis = evaluation::entropy_by_correctness(&kept_probs, &p, &t)?;

        io::write_iou_json(&out.join(format!("iou_{i}.json")), &report)?;
        io::write_entropy_analysis_csv(&out.join(format!("entropy_correctness_{i}.csv")), &analysis)?;
        println!("{}: mIoU {:.4}", path.display(), report.miou);
    }
    Ok(())
}

fn embed(
    ckpt: &io::Checkpoint,
    cloud: &PointCloud,
) -> Result<(FeatureField, Vec<gaia::uncertainty::EntropyField>)> {
    let graphs = build_graphs(cloud, &ckpt.cfg.k_schedule)?;
    let mcfg = ckpt.cfg.model_config(cloud.n_classes);
    let (fields, cache) = forward_cached(cloud, &graphs, &ckpt.params, &mcfg)?;
    Ok((cache.emb, fields))
}

fn cmd_entropy(checkpoint: &Path, scene: &Path, out: &Path) -> Result<()> {
    let ckpt = io::read_checkpoint(checkpoint)?;
    let cloud = io::read_cloud(scene)?;
    let (_emb, fields) = embed(&ckpt, &cloud)?;
    if fields.is_empty() {
        println!("entropy blocks are disabled in this checkpoint; nothing to dump");
        return Ok(());
    }
    std::fs::create_dir_all(out)?;
    for (b, field) in fields.iter().enumerate() {
        let path = out.join(format!("entropy_block{b}.csv"));
        io::write_entropy_csv(&path, b, field)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn cmd_similarity(
    checkpoint: &Path,
    scene: &Path,
    gamma: Option<f64>,
    resample_labels: bool,
    out: &Path,
) -> Result<()> {
    let ckpt = io::read_checkpoint(checkpoint)?;
    let mut cloud = io::read_cloud(scene)?;
    if resample_labels {
        let seed = gaia::seeding::derive_seed(ckpt.cfg.seed, "labels", 0);
        cloud = gaia::training::sample_sparse_labels(&cloud, ckpt.cfg.label_scheme, seed)?;
    }
    let (emb, _fields) = embed(&ckpt, &cloud)?;
    let arc = ArcConfig { gamma: gamma.unwrap_or(ckpt.cfg.arc.gamma), ..ckpt.cfg.arc };
    arc.validate()?;

    let anchor_ids = cloud.annotated_indices();
    if anchor_ids.is_empty() {
        return Err(Error::NoLabeledPoints);
    }
    let unannotated: Vec<usize> = (0..cloud.len()).filter(|&i| !cloud.annotated[i]).collect();
    let take_rows = |ids: &[usize]| {
        let mut f = FeatureField::zeros(ids.len(), emb.d);
        for (r, &i) in ids.iter().enumerate() {
            f.row_mut(r).copy_from_slice(emb.row(i));
        }
        f
    };
    let anchors = take_rows(&anchor_ids);

    // Same selection the margin head uses: softmax entropy of the scaled
    // unmargined cosines over unannotated points, thresholded at γ.
    let protos = protos_of(&ckpt);
    let feats_u = take_rows(&unannotated);
    let selected: Vec<usize> = if feats_u.n == 0 {
        Vec::new()
    } else {
        let probs_u = softmax(&arcpoint::cosine_logits(&feats_u, &protos, arc.s)?);
        arcpoint::select_high_entropy(&probs_u, arc.gamma)?
            .into_iter()
            .map(|r| unannotated[r])
            .collect()
    };
    if selected.is_empty() {
        println!("no points exceed the entropy quantile; nothing to write");
        return Ok(());
    }
    let matrix = evaluation::similarity_matrix(&anchors, &take_rows(&selected))?;
    io::write_matrix_csv(out, &matrix, &anchor_ids)?;
    println!("wrote {} anchors x {} points to {}", matrix.n, matrix.d, out.display());
    Ok(())
}

fn cmd_angles(checkpoint: &Path, scene: &Path, bins: usize, out: &Path) -> Result<()> {
    let ckpt = io::read_checkpoint(checkpoint)?;
    let cloud = io::read_cloud(scene)?;
    let (emb, _fields) = embed(&ckpt, &cloud)?;
    let protos = protos_of(&ckpt);
    let hist = evaluation::angle_histograms(&emb, &protos, bins)?;
    io::write_angle_histograms_csv(out, &protos, &hist)?;
    println!("wrote {} classes x {bins} bins to {}", protos.y, out.display());
    Ok(())
}

fn protos_of(ckpt: &io::Checkpoint) -> ClassPrototypes {
    ckpt.params.protos.clone()
}
