//! Training loop: augmented mini-batches, Adam with a cosine schedule,
//! per-epoch validation F1 and checkpointing.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::augment;
use crate::config::RunConfig;
use crate::data::{
    apply_checkpoint, checkpoint_from_model, load_checkpoint, load_manifest, load_sample,
    save_checkpoint, DataError, ManifestEntry, Sample, Split,
};
use crate::decoder::decode;
use crate::label::LabelMap;
use crate::loss::esj_total;
use crate::metrics::evaluate_image;
use crate::model::{build, forward, infer, ModelParams};
use crate::rng::{Rng, Stream};
use crate::tensor::ops::select_batch;
use crate::tensor::{adam_step, cosine_lr, AdamConfig, Tensor, TensorError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Engine(#[from] TensorError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("non-finite loss at step {step} (epoch {epoch})")]
    NonFinite { step: u64, epoch: usize },
    #[error("manifest has no '{0}' split")]
    MissingSplit(&'static str),
}

#[derive(Debug, Clone)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub val_f1: f64,
    pub first_lr: f64,
    pub last_lr: f64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub records: Vec<EpochRecord>,
    pub best_val_f1: f64,
    pub last_checkpoint: PathBuf,
    pub best_checkpoint: PathBuf,
    pub metrics_path: PathBuf,
}

/// Manifest paths are interpreted relative to the manifest file itself.
fn resolve(manifest_path: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        manifest_path.parent().unwrap_or(Path::new(".")).join(p)
    }
}

pub fn load_split(manifest_path: &Path, split: Split) -> Result<Vec<Sample>, DataError> {
    let entries = load_manifest(manifest_path)?;
    entries
        .iter()
        .filter(|e| e.split == split)
        .map(|e| {
            load_sample(
                &resolve(manifest_path, &e.image_path),
                &resolve(manifest_path, &e.label_path),
            )
        })
        .collect()
}

pub fn split_entries(entries: &[ManifestEntry], split: Split) -> Vec<&ManifestEntry> {
    entries.iter().filter(|e| e.split == split).collect()
}

/// Stacks samples into an untracked NCHW input tensor.
pub fn image_tensor(samples: &[&Sample]) -> Tensor<f32> {
    let (h, w, c) = (samples[0].height(), samples[0].width(), samples[0].channels);
    let mut data = Vec::with_capacity(samples.len() * c * h * w);
    for s in samples {
        data.extend_from_slice(&s.image);
    }
    Tensor::from_vec(vec![samples.len(), c, h, w], data)
}

/// Run inference on one sample and decode to a label map.
pub fn predict_sample(
    sample: &Sample,
    params: &ModelParams<f32>,
    cfg: &RunConfig,
    iterations: usize,
) -> Result<LabelMap, TensorError> {
    let x = image_tensor(&[sample]);
    let (semantic, embeddings) = infer(&x, params, &cfg.model, iterations)?;
    let sem = select_batch(&semantic, 0)?;
    let emb = select_batch(&embeddings, 0)?;
    Ok(decode(&sem, &emb, &cfg.decoder, cfg.loss.margin))
}

/// Mean instance F1 at IoU 0.5 over a validation set.
pub fn validation_f1(
    samples: &[Sample],
    params: &ModelParams<f32>,
    cfg: &RunConfig,
    iterations: usize,
) -> Result<f64, TensorError> {
    if samples.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for s in samples {
        let pred = predict_sample(s, params, cfg, iterations)?;
        total += evaluate_image("val", &pred, &s.labels, 0.5).f1;
    }
    Ok(total / samples.len() as f64)
}

fn append_line(path: &Path, line: &str) -> Result<(), TrainError> {
    use std::io::Write;
    let mut f = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|source| TrainError::Io {
            path: path.to_path_buf(),
            source,
        })?;
    writeln!(f, "{line}").map_err(|source| TrainError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn train(
    cfg: &RunConfig,
    manifest_path: &Path,
    resume: Option<&Path>,
) -> Result<TrainOutcome, TrainError> {
    train_limited(cfg, manifest_path, resume, None)
}

/// As [`train`] but optionally stopping after `stop_after` epochs while
/// keeping the learning-rate schedule of the full `cfg.trainer.epochs` run
/// (used to exercise interruption + resume).
pub fn train_limited(
    cfg: &RunConfig,
    manifest_path: &Path,
    resume: Option<&Path>,
    stop_after: Option<usize>,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    let train_set = load_split(manifest_path, Split::Train)?;
    let val_set = load_split(manifest_path, Split::Val)?;
    if train_set.is_empty() {
        return Err(TrainError::MissingSplit("train"));
    }
    if val_set.is_empty() {
        return Err(TrainError::MissingSplit("val"));
    }

    let seed = cfg.trainer.seed;
    let mut init_rng = Rng::new(seed, Stream::Init);
    let mut model = build::<f32>(&cfg.model, &mut init_rng)?;
    if let Some(path) = resume {
        let ckpt = load_checkpoint(path)?;
        apply_checkpoint(&ckpt, &mut model)?;
    }

    let batch = cfg.trainer.batch_size;
    let steps_per_epoch = train_set.len().div_ceil(batch) as u64;
    let total_steps = cfg.trainer.epochs as u64 * steps_per_epoch;
    let start_epoch = (model.group.step_count() / steps_per_epoch) as usize;

    let dir = &cfg.trainer.checkpoint_dir;
    fs::create_dir_all(dir).map_err(|source| TrainError::Io {
        path: dir.clone(),
        source,
    })?;
    let metrics_path = dir.join("metrics.tsv");
    if resume.is_none() && metrics_path.exists() {
        fs::remove_file(&metrics_path).map_err(|source| TrainError::Io {
            path: metrics_path.clone(),
            source,
        })?;
    }
    let last_path = dir.join("last.ckpt");
    let best_path = dir.join("best.ckpt");

    let shuffle_rng = Rng::new(seed, Stream::Trainer);
    let augment_rng = Rng::new(seed, Stream::Augment);
    let adam = AdamConfig::default();
    let mut records = Vec::new();
    let mut best_val_f1 = f64::NEG_INFINITY;

    for epoch in start_epoch..cfg.trainer.epochs {
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        shuffle_rng.derive(epoch as u64).shuffle(&mut order);

        let mut epoch_loss = 0.0;
        let mut first_lr = f64::NAN;
        let mut last_lr = f64::NAN;
        let mut dropout_rng = Rng::new(seed, Stream::Dropout).derive(epoch as u64);
        for (b, chunk) in order.chunks(batch).enumerate() {
            let augmented: Vec<Sample> = chunk
                .iter()
                .map(|&i| {
                    let mut r = augment_rng.derive((epoch * train_set.len() + i) as u64);
                    augment::pipeline(train_set[i].clone(), &cfg.augment, &mut r)
                })
                .collect();
            let refs: Vec<&Sample> = augmented.iter().collect();
            let x = image_tensor(&refs);
            let outputs = forward(&x, &model, &cfg.model, true, &mut dropout_rng)?;
            let labels: Vec<LabelMap> = augmented.iter().map(|s| s.labels.clone()).collect();
            let loss = esj_total(&outputs, &labels, &cfg.loss)?;
            let value = loss.item() as f64;
            let step = model.group.step_count();
            if !value.is_finite() {
                return Err(TrainError::NonFinite { step, epoch });
            }
            loss.backward()?;
            let lr = cosine_lr(step, total_steps, cfg.trainer.lr_max, cfg.trainer.lr_min)?;
            adam_step(&mut model.group, lr, adam)?;
            epoch_loss += value;
            if b == 0 {
                first_lr = lr;
            }
            last_lr = lr;
        }
        epoch_loss /= steps_per_epoch as f64;

        let val_f1 = validation_f1(&val_set, &model, cfg, cfg.model.iterations)?;
        let mut line = String::new();
        write!(line, "{epoch}\t{epoch_loss}\t{val_f1}").unwrap();
        append_line(&metrics_path, &line)?;
        eprintln!("epoch {epoch}: loss {epoch_loss:.4}, val F1@0.5 {val_f1:.3}, lr {last_lr:.2e}");

        let ckpt = checkpoint_from_model(&cfg.model, &model);
        save_checkpoint(&last_path, &ckpt)?;
        if val_f1 > best_val_f1 {
            best_val_f1 = val_f1;
            save_checkpoint(&best_path, &ckpt)?;
        }
        records.push(EpochRecord {
            epoch,
            loss: epoch_loss,
            val_f1,
            first_lr,
            last_lr,
        });
        if cfg.trainer.early_stop_f1 > 0.0 && val_f1 >= cfg.trainer.early_stop_f1 {
            break;
        }
        if stop_after.is_some_and(|n| epoch + 1 >= n) {
            break;
        }
    }

    Ok(TrainOutcome {
        records,
        best_val_f1,
        last_checkpoint: last_path,
        best_checkpoint: best_path,
        metrics_path,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, save_manifest, save_sample};

    fn tiny_run_config(dir: &Path) -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.model.groups = 2;
        cfg.model.group_channels = 4;
        cfg.model.dilation_rates = vec![1, 2];
        cfg.model.iterations = 2;
        cfg.model.scale = 2;
        cfg.model.stem_channels = 4;
        cfg.trainer.epochs = 1;
        cfg.trainer.patch_size = 16;
        cfg.trainer.seed = 3;
        cfg.trainer.checkpoint_dir = dir.join("ckpt");
        cfg.loss.margin = 4.0;
        // keep the tiny smoke test cheap
        cfg.augment.warp.enabled = false;
        cfg.augment.blur.p_active = 0.0;
        cfg.data.min_instances = 1;
        cfg.data.max_instances = 2;
        cfg.data.radius_range = [2.0, 3.0];
        cfg.data.overlap_fraction = 0.2;
        cfg
    }

    fn write_dataset(dir: &Path, cfg: &RunConfig, n_train: usize, n_val: usize) -> PathBuf {
        let mut rng = Rng::new(cfg.trainer.seed, Stream::Data);
        let samples = generate_synthetic(
            n_train + n_val,
            16,
            cfg.data.min_instances,
            cfg.data.max_instances,
            cfg.data.radius_range,
            cfg.data.overlap_fraction,
            cfg.data.noise_level,
            &mut rng,
        )
        .unwrap();
        let mut entries = Vec::new();
        for (i, s) in samples.iter().enumerate() {
            let split = if i < n_train { Split::Train } else { Split::Val };
            let image_path = PathBuf::from(format!("{i}.png"));
            let label_path = PathBuf::from(format!("{i}_labels.png"));
            save_sample(s, &dir.join(&image_path), &dir.join(&label_path)).unwrap();
            entries.push(ManifestEntry {
                split,
                image_path,
                label_path,
            });
        }
        let manifest = dir.join("manifest.tsv");
        save_manifest(&manifest, &entries).unwrap();
        manifest
    }

    #[test]
    fn one_epoch_smoke() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_run_config(dir.path());
        let manifest = write_dataset(dir.path(), &cfg, 4, 2);
        let out = train(&cfg, &manifest, None).unwrap();
        assert_eq!(out.records.len(), 1);
        assert!(out.records[0].loss.is_finite());
        assert!(out.last_checkpoint.exists());
        assert!(out.best_checkpoint.exists());
        let ckpt = load_checkpoint(&out.last_checkpoint).unwrap();
        assert_eq!(ckpt.step, 2); // 4 samples / batch 2
        let metrics = fs::read_to_string(&out.metrics_path).unwrap();
        assert_eq!(metrics.lines().count(), 1);
        assert_eq!(metrics.lines().next().unwrap().split('\t').count(), 3);
    }

    #[test]
    fn cosine_endpoints_logged() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_run_config(dir.path());
        cfg.trainer.epochs = 2;
        let manifest = write_dataset(dir.path(), &cfg, 4, 2);
        let out = train(&cfg, &manifest, None).unwrap();
        assert_eq!(out.records[0].first_lr, 1e-3);
        let final_lr = out.records.last().unwrap().last_lr;
        assert!(final_lr < 2e-4, "final lr {final_lr}");
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let dir_a = tempfile::tempdir().unwrap();
        let mut cfg_a = tiny_run_config(dir_a.path());
        cfg_a.trainer.epochs = 2;
        let manifest_a = write_dataset(dir_a.path(), &cfg_a, 4, 2);
        let full = train(&cfg_a, &manifest_a, None).unwrap();

        let dir_b = tempfile::tempdir().unwrap();
        let mut cfg_b = tiny_run_config(dir_b.path());
        cfg_b.trainer.epochs = 2;
        let manifest_b = write_dataset(dir_b.path(), &cfg_b, 4, 2);
        let part = train_limited(&cfg_b, &manifest_b, None, Some(1)).unwrap();
        let resumed = train(&cfg_b, &manifest_b, Some(&part.last_checkpoint)).unwrap();

        assert_eq!(resumed.records.len(), 1);
        let a = &full.records[1];
        let b = &resumed.records[0];
        assert_eq!(a.loss, b.loss);
        assert_eq!(a.val_f1, b.val_f1);
    }
}
