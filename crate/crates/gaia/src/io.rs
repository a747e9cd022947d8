//! On-disk formats: the binary cloud format, an S3DIS-style text loader,
//! versioned checkpoints, the training-config TOML, and CSV exports for
//! logs and analyses.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::arcpoint::ClassPrototypes;
use crate::error::{Error, Result};
use crate::evaluation::{EntropyAnalysis, IoUReport};
use crate::field::FeatureField;
use crate::geometry::PointCloud;
use crate::model::{AdamState, ModelParams};
use crate::seeding::fnv1a64;
use crate::training::{RunLog, TrainConfig};
use crate::uncertainty::EntropyField;

const CLOUD_MAGIC: &[u8; 4] = b"GAIA";
const CKPT_MAGIC: &[u8; 8] = b"GAIACKPT";
const CKPT_VERSION: u32 = 1;

fn read_exact<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    Ok(u32::from_le_bytes(read_exact::<4>(r)?))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    Ok(u64::from_le_bytes(read_exact::<8>(r)?))
}

fn read_f32(r: &mut impl Read) -> Result<f32> {
    Ok(f32::from_le_bytes(read_exact::<4>(r)?))
}

fn read_i32(r: &mut impl Read) -> Result<i32> {
    Ok(i32::from_le_bytes(read_exact::<4>(r)?))
}

fn read_f64(r: &mut impl Read) -> Result<f64> {
    Ok(f64::from_le_bytes(read_exact::<8>(r)?))
}

/// Writes the little-endian binary cloud format: magic "GAIA", point and
/// class counts, then per point f32 coords, f32 colors, i32 label
/// (−1 = none), u8 annotated.
pub fn write_cloud(path: &Path, cloud: &PointCloud) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(CLOUD_MAGIC)?;
    w.write_all(&(cloud.len() as u32).to_le_bytes())?;
    w.write_all(&(cloud.n_classes as u32).to_le_bytes())?;
    for i in 0..cloud.len() {
        for &v in &cloud.coords[i] {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
        for &v in &cloud.colors[i] {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
        w.write_all(&cloud.labels[i].to_le_bytes())?;
        w.write_all(&[u8::from(cloud.annotated[i])])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads the binary cloud format written by [`write_cloud`].
pub fn read_cloud(path: &Path) -> Result<PointCloud> {
    let mut r = BufReader::new(File::open(path)?);
    if &read_exact::<4>(&mut r)? != CLOUD_MAGIC {
        return Err(Error::Format("not a cloud file (bad magic)".into()));
    }
    let n = read_u32(&mut r)? as usize;
    let y = read_u32(&mut r)? as usize;
    let mut cloud = PointCloud {
        coords: Vec::with_capacity(n),
        colors: Vec::with_capacity(n),
        labels: Vec::with_capacity(n),
        annotated: Vec::with_capacity(n),
        n_classes: y,
    };
    for _ in 0..n {
        let mut coord = [0.0; 3];
        for v in coord.iter_mut() {
            *v = read_f32(&mut r)? as f64;
        }
        let mut color = [0.0; 3];
        for v in color.iter_mut() {
            *v = read_f32(&mut r)? as f64;
        }
        cloud.coords.push(coord);
        cloud.colors.push(color);
        cloud.labels.push(read_i32(&mut r)?);
        cloud.annotated.push(read_exact::<1>(&mut r)?[0] != 0);
    }
    cloud.validate()?;
    Ok(cloud)
}

/// Loads plain-text "x y z r g b" lines (S3DIS convention, colors in
/// 0–255). Labels come back unknown and nothing is annotated.
pub fn load_s3dis_text(path: &Path, n_classes: usize) -> Result<PointCloud> {
    let r = BufReader::new(File::open(path)?);
    let mut cloud = PointCloud {
        coords: Vec::new(),
        colors: Vec::new(),
        labels: Vec::new(),
        annotated: Vec::new(),
        n_classes,
    };
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        let fields: Vec<&str> = t.split_whitespace().collect();
        if fields.len() < 6 {
            return Err(Error::Format(format!("line {}: want 6 columns, got {}", lineno + 1, fields.len())));
        }
        let parse = |s: &str| -> Result<f64> {
            s.parse::<f64>().map_err(|_| Error::Format(format!("line {}: bad number {s:?}", lineno + 1)))
        };
        cloud.coords.push([parse(fields[0])?, parse(fields[1])?, parse(fields[2])?]);
        cloud.colors.push([
            (parse(fields[3])? / 255.0).clamp(0.0, 1.0),
            (parse(fields[4])? / 255.0).clamp(0.0, 1.0),
            (parse(fields[5])? / 255.0).clamp(0.0, 1.0),
        ]);
        cloud.labels.push(-1);
        cloud.annotated.push(false);
    }
    if cloud.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(cloud)
}

/// Parses and validates a TOML [`TrainConfig`].
pub fn load_train_config(path: &Path) -> Result<TrainConfig> {
    let text = std::fs::read_to_string(path)?;
    let cfg: TrainConfig =
        toml::from_str(&text).map_err(|e| Error::Format(format!("config: {e}")))?;
    cfg.validate()?;
    Ok(cfg)
}

/// FNV-1a hash of the config's canonical JSON encoding; stamped into
/// checkpoints so mismatched configs are detectable.
pub fn config_hash(cfg: &TrainConfig) -> u64 {
    let json = serde_json::to_string(cfg).expect("config serializes");
    fnv1a64(json.as_bytes())
}

/// Checkpoint payload: the config that produced it, the class count the
/// model was built for, parameters, and optionally optimizer state.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub cfg: TrainConfig,
    pub cfg_hash: u64,
    pub n_classes: usize,
    pub params: ModelParams,
    pub adam: Option<AdamState>,
}

/// Writes the versioned binary checkpoint.
pub fn write_checkpoint(
    path: &Path,
    cfg: &TrainConfig,
    n_classes: usize,
    params: &ModelParams,
    adam: Option<&AdamState>,
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(CKPT_MAGIC)?;
    w.write_all(&CKPT_VERSION.to_le_bytes())?;
    w.write_all(&config_hash(cfg).to_le_bytes())?;
    let json = serde_json::to_vec(cfg).expect("config serializes");
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    w.write_all(&(n_classes as u32).to_le_bytes())?;
    let flat = params.flatten();
    w.write_all(&(flat.len() as u32).to_le_bytes())?;
    for v in &flat {
        w.write_all(&v.to_le_bytes())?;
    }
    match adam {
        Some(state) => {
            w.write_all(&[1u8])?;
            w.write_all(&state.t.to_le_bytes())?;
            for v in state.m.iter().chain(&state.v) {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        None => w.write_all(&[0u8])?,
    }
    w.flush()?;
    Ok(())
}

/// Reads a checkpoint back; errors on magic/version mismatch or when the
/// stored config hash does not match the stored config (corruption).
pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut r = BufReader::new(File::open(path)?);
    if &read_exact::<8>(&mut r)? != CKPT_MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let version = read_u32(&mut r)?;
    if version != CKPT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let cfg_hash = read_u64(&mut r)?;
    let json_len = read_u32(&mut r)? as usize;
    let mut json = vec![0u8; json_len];
    r.read_exact(&mut json)?;
    let cfg: TrainConfig =
        serde_json::from_slice(&json).map_err(|e| Error::Format(format!("checkpoint config: {e}")))?;
    if fnv1a64(&json) != cfg_hash {
        return Err(Error::Format("checkpoint config hash mismatch".into()));
    }
    let n_classes = read_u32(&mut r)? as usize;
    let count = read_u32(&mut r)? as usize;
    let mcfg = cfg.model_config(n_classes);
    let mut params = ModelParams::zeros(&mcfg);
    if params.count() != count {
        return Err(Error::Format(format!(
            "checkpoint holds {count} parameters but the config implies {}",
            params.count()
        )));
    }
    let mut flat = vec![0.0; count];
    for v in flat.iter_mut() {
        *v = read_f64(&mut r)?;
    }
    params.unflatten(&flat);
    let adam = if read_exact::<1>(&mut r)?[0] != 0 {
        let t = read_u64(&mut r)?;
        let mut m = vec![0.0; count];
        let mut v = vec![0.0; count];
        for x in m.iter_mut() {
            *x = read_f64(&mut r)?;
        }
        for x in v.iter_mut() {
            *x = read_f64(&mut r)?;
        }
        Some(AdamState { m, v, t })
    } else {
        None
    };
    Ok(Checkpoint { cfg, cfg_hash, n_classes, params, adam })
}

fn fmt_f64(v: f64) -> String {
    // Shortest round-trip representation keeps CSVs exact and compact.
    format!("{v}")
}

/// Writes the per-epoch training log as CSV.
pub fn write_run_log_csv(path: &Path, log: &RunLog) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "epoch,loss_ce,loss_ce_aff,loss_sia,mean_entropy,val_miou,margin_selected")?;
    for e in &log.epochs {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            e.epoch,
            fmt_f64(e.loss_ce),
            fmt_f64(e.loss_ce_aff),
            fmt_f64(e.loss_sia),
            fmt_f64(e.mean_entropy),
            e.val_miou.map(fmt_f64).unwrap_or_default(),
            e.margin_selected
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Dumps per-point entropy diagnostics (one block per call) as CSV.
pub fn write_entropy_csv(path: &Path, block: usize, field: &EntropyField) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "block,point_id,h,h_cal,gi")?;
    for i in 0..field.h.len() {
        writeln!(
            w,
            "{},{},{},{},{}",
            block,
            i,
            fmt_f64(field.h[i]),
            fmt_f64(field.h_cal[i]),
            fmt_f64(field.gi[i])
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Writes a similarity (or any) matrix wide-form: one row per anchor,
/// one column per point.
pub fn write_matrix_csv(path: &Path, matrix: &FeatureField, row_ids: &[usize]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "anchor_id")?;
    for j in 0..matrix.d {
        write!(w, ",p{j}")?;
    }
    writeln!(w)?;
    for i in 0..matrix.n {
        write!(w, "{}", row_ids.get(i).copied().unwrap_or(i))?;
        for &v in matrix.row(i) {
            write!(w, ",{}", fmt_f64(v))?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

/// Serializes an [`IoUReport`] as JSON.
pub fn write_iou_json(path: &Path, report: &IoUReport) -> Result<()> {
    #[derive(serde::Serialize)]
    struct Row<'a> {
        miou: f64,
        per_class_iou: &'a [f64],
        included: &'a [bool],
        confusion: &'a [u64],
    }
    let row = Row {
        miou: report.miou,
        per_class_iou: &report.per_class_iou,
        included: &report.included,
        confusion: &report.confusion,
    };
    let json = serde_json::to_string_pretty(&row).expect("report serializes");
    std::fs::write(path, json)?;
    Ok(())
}

/// Writes the correctness-split entropy histograms as long-form CSV.
pub fn write_entropy_analysis_csv(path: &Path, analysis: &EntropyAnalysis) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "class,correct,bin_lo,bin_hi,count")?;
    let width = analysis.max_entropy / analysis.n_bins as f64;
    for (split, table) in [(1u8, &analysis.correct), (0u8, &analysis.incorrect)] {
        for (class, bins) in table.iter().enumerate() {
            for (b, &count) in bins.iter().enumerate() {
                writeln!(
                    w,
                    "{},{},{},{},{}",
                    class,
                    split,
                    fmt_f64(b as f64 * width),
                    fmt_f64((b + 1) as f64 * width),
                    count
                )?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes per-class angle histograms (rows: class, bin, count).
pub fn write_angle_histograms_csv(
    path: &Path,
    protos: &ClassPrototypes,
    hist: &[Vec<u64>],
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "class,bin_lo,bin_hi,count")?;
    let n_bins = hist.first().map(|h| h.len()).unwrap_or(0);
    let width = std::f64::consts::PI / n_bins.max(1) as f64;
    for (class, bins) in hist.iter().enumerate().take(protos.y) {
        for (b, &count) in bins.iter().enumerate() {
            writeln!(
                w,
                "{},{},{},{}",
                class,
                fmt_f64(b as f64 * width),
                fmt_f64((b + 1) as f64 * width),
                count
            )?;
        }
    }
    w.flush()?;
    Ok(())
}
