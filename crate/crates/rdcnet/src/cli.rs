//! Command implementations behind the `rdcnet` binary. Each command maps
//! its failures onto the documented exit codes: 0 ok, 2 config, 3 I/O,
//! 4 numeric failure, 5 missing inputs.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use image::{GrayImage, Rgb, RgbImage};

use crate::augment::hsv_to_rgb;
use crate::config::RunConfig;
use crate::data::{
    generate_synthetic, load_checkpoint, load_image, load_label_png, load_manifest,
    save_label_png, save_manifest, save_sample, DataError, ManifestEntry, Split,
};
use crate::decoder::vote_histogram;
use crate::label::LabelMap;
use crate::metrics::{evaluate_image, EvalReport};
use crate::model::{build, coord_grid, forward, ModelParams};
use crate::rng::{Rng, Stream};
use crate::tensor::ops::select_batch;
use crate::tensor::{Tensor, TensorError};
use crate::trainer::{self, image_tensor, predict_sample, TrainError};

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

fn config_err(msg: impl Into<String>) -> CliError {
    CliError {
        code: 2,
        message: msg.into(),
    }
}

fn io_err(msg: impl Into<String>) -> CliError {
    CliError {
        code: 3,
        message: msg.into(),
    }
}

impl From<TensorError> for CliError {
    fn from(e: TensorError) -> Self {
        config_err(e.to_string())
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::Generation(_) => config_err(e.to_string()),
            _ => io_err(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Engine(inner) => inner.into(),
            TrainError::Data(inner) => inner.into(),
            TrainError::Io { .. } => io_err(e.to_string()),
            TrainError::NonFinite { .. } => CliError {
                code: 4,
                message: e.to_string(),
            },
            TrainError::MissingSplit(_) => CliError {
                code: 5,
                message: e.to_string(),
            },
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "rdcnet", version, about = "Recurrent instance segmentation on 2D images")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic ellipse dataset with a manifest.
    Generate {
        #[arg(long)]
        config: PathBuf,
        /// Output directory for images, labels and manifest.tsv.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 200)]
        n_train: usize,
        #[arg(long, default_value_t = 32)]
        n_val: usize,
        #[arg(long, default_value_t = 32)]
        n_test: usize,
    },
    /// Train on a generated dataset.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Continue from an existing checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Segment images with a trained checkpoint.
    Predict {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Override the recurrent iteration count at inference time.
        /// (The reference experiments retrained per iteration count; this
        /// flag instead re-runs the same weights with a different count.)
        #[arg(long)]
        iterations: Option<usize>,
        /// Override the decoder's local-maximum window (odd, pixels).
        #[arg(long)]
        window: Option<usize>,
        /// Input PNG images.
        images: Vec<PathBuf>,
    },
    /// Score predicted label maps against a manifest split.
    Eval {
        #[arg(long)]
        config: PathBuf,
        /// Directory of predicted label PNGs named like the input images.
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long, default_value_t = 0.5)]
        iou: f64,
        /// Report file to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Render per-iteration foreground, embedding and vote-histogram panels.
    Inspect {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        iterations: Option<usize>,
    },
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Generate {
            config,
            out,
            n_train,
            n_val,
            n_test,
        } => cmd_generate(&config, &out, n_train, n_val, n_test),
        Command::Train {
            config,
            manifest,
            resume,
        } => cmd_train(&config, &manifest, resume.as_deref()),
        Command::Predict {
            config,
            checkpoint,
            out,
            iterations,
            window,
            images,
        } => cmd_predict(&config, &checkpoint, &images, &out, iterations, window),
        Command::Eval {
            config,
            pred,
            manifest,
            split,
            iou,
            out,
        } => cmd_eval(&config, &pred, &manifest, &split, iou, &out),
        Command::Inspect {
            config,
            checkpoint,
            image,
            out,
            iterations,
        } => cmd_inspect(&config, &checkpoint, &image, &out, iterations),
    }
}

fn load_config(path: &Path) -> Result<RunConfig, CliError> {
    RunConfig::load(path).map_err(|e| config_err(e.to_string()))
}

pub fn cmd_generate(
    config_path: &Path,
    out_dir: &Path,
    n_train: usize,
    n_val: usize,
    n_test: usize,
) -> Result<(), CliError> {
    let cfg = load_config(config_path)?;
    let size = cfg.trainer.patch_size;
    let mut rng = Rng::new(cfg.trainer.seed, Stream::Data);
    let samples = generate_synthetic(
        n_train + n_val + n_test,
        size,
        cfg.data.min_instances,
        cfg.data.max_instances,
        cfg.data.radius_range,
        cfg.data.overlap_fraction,
        cfg.data.noise_level,
        &mut rng,
    )?;
    fs::create_dir_all(out_dir).map_err(|e| io_err(format!("{}: {e}", out_dir.display())))?;
    let mut entries = Vec::with_capacity(samples.len());
    let mut instances = 0usize;
    for (i, s) in samples.iter().enumerate() {
        let (split, local) = if i < n_train {
            (Split::Train, i)
        } else if i < n_train + n_val {
            (Split::Val, i - n_train)
        } else {
            (Split::Test, i - n_train - n_val)
        };
        let image_path = PathBuf::from(format!("{split}_{local:04}.png"));
        let label_path = PathBuf::from(format!("{split}_{local:04}_labels.png"));
        save_sample(s, &out_dir.join(&image_path), &out_dir.join(&label_path))?;
        instances += s.labels.instance_ids().len();
        entries.push(ManifestEntry {
            split,
            image_path,
            label_path,
        });
    }
    let manifest = out_dir.join("manifest.tsv");
    save_manifest(&manifest, &entries)?;
    println!(
        "wrote {} samples ({n_train} train / {n_val} val / {n_test} test), \
         {size}x{size} px, {instances} instances total -> {}",
        entries.len(),
        manifest.display()
    );
    Ok(())
}

pub fn cmd_train(
    config_path: &Path,
    manifest: &Path,
    resume: Option<&Path>,
) -> Result<(), CliError> {
    let cfg = load_config(config_path)?;
    let outcome = trainer::train(&cfg, manifest, resume)?;
    if let Some(last) = outcome.records.last() {
        println!(
            "trained {} epochs; final loss {:.4}, best val F1@0.5 {:.3}",
            outcome.records.len(),
            last.loss,
            outcome.best_val_f1
        );
    }
    println!("last checkpoint: {}", outcome.last_checkpoint.display());
    println!("metrics log: {}", outcome.metrics_path.display());
    Ok(())
}

/// Restore a model from a checkpoint file; the checkpoint's own config
/// defines the topology.
pub fn model_from_checkpoint(path: &Path) -> Result<(RunConfig, ModelParams<f32>), CliError> {
    let ckpt = load_checkpoint(path)?;
    let mut run = RunConfig::default();
    run.model = ckpt.config.clone();
    let mut model = build::<f32>(&ckpt.config, &mut Rng::new(0, Stream::Init))?;
    crate::data::apply_checkpoint(&ckpt, &mut model)?;
    Ok((run, model))
}

pub fn cmd_predict(
    config_path: &Path,
    checkpoint: &Path,
    images: &[PathBuf],
    out_dir: &Path,
    iterations: Option<usize>,
    window: Option<usize>,
) -> Result<(), CliError> {
    let mut cfg = load_config(config_path)?;
    let ckpt = load_checkpoint(checkpoint)?;
    cfg.model = ckpt.config.clone();
    if let Some(w) = window {
        cfg.decoder.window = w;
    }
    cfg.validate()?;
    let mut model = build::<f32>(&cfg.model, &mut Rng::new(0, Stream::Init))?;
    crate::data::apply_checkpoint(&ckpt, &mut model)?;
    let iterations = iterations.unwrap_or(cfg.model.iterations);
    fs::create_dir_all(out_dir).map_err(|e| io_err(format!("{}: {e}", out_dir.display())))?;
    for path in images {
        let sample = load_image(path)?;
        let labels = predict_sample(&sample, &model, &cfg, iterations)?;
        let name = path
            .file_name()
            .ok_or_else(|| io_err(format!("not a file: {}", path.display())))?;
        let out = out_dir.join(name);
        save_label_png(&labels, &out)?;
        println!(
            "{} -> {} ({} instances)",
            path.display(),
            out.display(),
            labels.instance_ids().len()
        );
    }
    Ok(())
}

pub fn cmd_eval(
    config_path: &Path,
    pred_dir: &Path,
    manifest: &Path,
    split: &str,
    iou: f64,
    out: &Path,
) -> Result<(), CliError> {
    let _cfg = load_config(config_path)?;
    let split: Split = split.parse()?;
    let entries = load_manifest(manifest)?;
    let base = manifest.parent().unwrap_or(Path::new("."));
    let mut pairs: Vec<(String, LabelMap, LabelMap)> = Vec::new();
    for e in entries.iter().filter(|e| e.split == split) {
        let name = e
            .image_path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| e.image_path.display().to_string());
        let pred_path = pred_dir.join(&name);
        if !pred_path.exists() {
            return Err(CliError {
                code: 5,
                message: format!("missing prediction for {name}: {}", pred_path.display()),
            });
        }
        let pred = load_label_png(&pred_path)?;
        let gt = load_label_png(&base.join(&e.label_path))?;
        pairs.push((name, pred, gt));
    }
    if pairs.is_empty() {
        return Err(CliError {
            code: 5,
            message: format!("manifest has no '{split}' entries"),
        });
    }

    let records = pairs
        .iter()
        .map(|(name, pred, gt)| evaluate_image(name, pred, gt, iou))
        .collect();
    let report = EvalReport::from_records(iou, records);

    let mut text = String::new();
    writeln!(text, "# iou_threshold\t{iou}").unwrap();
    writeln!(text, "# image\ttp\tfp\tfn\tprecision\trecall\tf1\tsbd\taji").unwrap();
    for r in &report.images {
        writeln!(
            text,
            "{}\t{}\t{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
            r.name, r.tp, r.fp, r.fn_, r.precision, r.recall, r.f1, r.sbd, r.aji
        )
        .unwrap();
    }
    writeln!(
        text,
        "aggregate\t-\t-\t-\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
        report.precision, report.recall, report.f1, report.sbd, report.aji
    )
    .unwrap();
    writeln!(text, "# f1_vs_iou").unwrap();
    for i in 0..9 {
        let t = 0.5 + 0.05 * i as f64;
        let mean_f1: f64 = pairs
            .iter()
            .map(|(n, p, g)| evaluate_image(n, p, g, t).f1)
            .sum::<f64>()
            / pairs.len() as f64;
        writeln!(text, "{t:.2}\t{mean_f1:.6}").unwrap();
    }
    fs::write(out, &text).map_err(|e| io_err(format!("{}: {e}", out.display())))?;
    println!(
        "{} images: precision {:.3}, recall {:.3}, F1@{iou} {:.3}, SBD {:.3}, AJI {:.3}",
        report.images.len(),
        report.precision,
        report.recall,
        report.f1,
        report.sbd,
        report.aji
    );
    println!("report: {}", out.display());
    Ok(())
}

fn save_gray(path: &Path, values: &[f64], h: usize, w: usize) -> Result<(), CliError> {
    let mut img = GrayImage::new(w as u32, h as u32);
    for r in 0..h {
        for c in 0..w {
            let v = (values[r * w + c].clamp(0.0, 1.0) * 255.0).round() as u8;
            img.put_pixel(c as u32, r as u32, image::Luma([v]));
        }
    }
    img.save(path)
        .map_err(|e| io_err(format!("{}: {e}", path.display())))
}

/// Pseudocolor for a 2D displacement field: direction as hue on a cyclic
/// color wheel, magnitude (relative to the margin) as saturation.
fn save_embedding_panel(
    path: &Path,
    emb: &Tensor<f32>,
    coords: &Tensor<f32>,
    margin: f64,
) -> Result<(), CliError> {
    let shape = emb.shape();
    let (h, w) = (shape[1], shape[2]);
    let plane = h * w;
    let e = emb.data();
    let co = coords.data();
    let mut img = RgbImage::new(w as u32, h as u32);
    for r in 0..h {
        for c in 0..w {
            let p = r * w + c;
            let dy = (e[p] - co[p]) as f64;
            let dx = (e[plane + p] - co[plane + p]) as f64;
            let hue = dy.atan2(dx) / std::f64::consts::TAU + 0.5;
            let sat = (dx.hypot(dy) / margin).clamp(0.0, 1.0);
            let (rr, gg, bb) = hsv_to_rgb(hue, sat, 1.0);
            img.put_pixel(
                c as u32,
                r as u32,
                Rgb([
                    (rr * 255.0).round() as u8,
                    (gg * 255.0).round() as u8,
                    (bb * 255.0).round() as u8,
                ]),
            );
        }
    }
    img.save(path)
        .map_err(|e| io_err(format!("{}: {e}", path.display())))
}

pub fn cmd_inspect(
    config_path: &Path,
    checkpoint: &Path,
    image: &Path,
    out_dir: &Path,
    iterations: Option<usize>,
) -> Result<(), CliError> {
    let mut cfg = load_config(config_path)?;
    let ckpt = load_checkpoint(checkpoint)?;
    cfg.model = ckpt.config.clone();
    if let Some(i) = iterations {
        cfg.model.iterations = i;
    }
    cfg.validate()?;
    let mut model = build::<f32>(&cfg.model, &mut Rng::new(0, Stream::Init))?;
    crate::data::apply_checkpoint(&ckpt, &mut model)?;

    let sample = load_image(image)?;
    let (h, w) = (sample.height(), sample.width());
    let x = image_tensor(&[&sample]);
    let mut rng = Rng::new(0, Stream::Dropout);
    let outputs = forward(&x, &model, &cfg.model, false, &mut rng)?;
    fs::create_dir_all(out_dir).map_err(|e| io_err(format!("{}: {e}", out_dir.display())))?;
    let coords = coord_grid::<f32>(1, h, w);
    let coords0 = select_batch(&coords, 0)?;
    let plane = h * w;
    for (i, (semantic, embeddings)) in outputs.iter().enumerate() {
        let sem = select_batch(semantic, 0)?;
        let emb = select_batch(embeddings, 0)?;
        let iter = i + 1;

        let fg: Vec<f64> = sem.data()[plane..2 * plane].iter().map(|&v| v as f64).collect();
        save_gray(&out_dir.join(format!("iter{iter:02}_fg.png")), &fg, h, w)?;

        save_embedding_panel(
            &out_dir.join(format!("iter{iter:02}_embedding.png")),
            &emb,
            &coords0,
            cfg.loss.margin,
        )?;

        let thr = 0.5f32;
        let fg_mask: Vec<bool> = sem.data()[plane..2 * plane].iter().map(|&v| v > thr).collect();
        let hist = vote_histogram(&emb, &fg_mask);
        let peak = hist.iter().copied().max().unwrap_or(0).max(1) as f64;
        let hist_img: Vec<f64> = hist.iter().map(|&v| v as f64 / peak).collect();
        save_gray(&out_dir.join(format!("iter{iter:02}_votes.png")), &hist_img, h, w)?;
    }
    println!(
        "wrote {} panels ({} iterations x 3) to {}",
        outputs.len() * 3,
        outputs.len(),
        out_dir.display()
    );
    Ok(())
}
