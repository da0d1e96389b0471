//! Train a small model on a tiny synthetic dataset, then show how the
//! instance F1 improves with the number of recurrent iterations.
//!
//! Run with: cargo run --release --example train_tiny

use std::path::PathBuf;

use rdcnet::config::RunConfig;
use rdcnet::data::{
    apply_checkpoint, generate_synthetic, load_checkpoint, save_manifest, save_sample,
    ManifestEntry, Split,
};
use rdcnet::metrics::evaluate_image;
use rdcnet::model::build;
use rdcnet::rng::{Rng, Stream};
use rdcnet::trainer::{predict_sample, train};

fn main() {
    let dir = std::env::temp_dir().join("rdcnet_train_tiny");
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();

    let mut cfg = RunConfig::default();
    cfg.model.groups = 4;
    cfg.model.group_channels = 32;
    cfg.model.stem_channels = 16;
    cfg.model.dilation_rates = vec![1, 2, 4];
    cfg.model.iterations = 4;
    cfg.trainer.patch_size = 48;
    cfg.trainer.epochs = 12;
    cfg.trainer.batch_size = 2;
    cfg.trainer.early_stop_f1 = 0.85;
    cfg.trainer.checkpoint_dir = dir.join("checkpoints");
    cfg.augment.affine.enabled = false;
    cfg.augment.warp.enabled = false;
    cfg.validate().unwrap();

    let mut rng = Rng::new(cfg.trainer.seed, Stream::Data);
    let mut entries = Vec::new();
    let mut test_samples = Vec::new();
    for (split, n) in [(Split::Train, 24), (Split::Val, 4), (Split::Test, 4)] {
        let samples =
            generate_synthetic(n, 48, 3, 6, [4.0, 7.0], 0.1, 0.02, &mut rng).unwrap();
        for (i, s) in samples.into_iter().enumerate() {
            let image = dir.join(format!("{split}_{i:02}.png"));
            let label = dir.join(format!("{split}_{i:02}_labels.png"));
            save_sample(&s, &image, &label).unwrap();
            entries.push(ManifestEntry {
                split,
                image_path: PathBuf::from(image.file_name().unwrap()),
                label_path: PathBuf::from(label.file_name().unwrap()),
            });
            if split == Split::Test {
                test_samples.push(s);
            }
        }
    }
    let manifest = dir.join("manifest.tsv");
    save_manifest(&manifest, &entries).unwrap();

    let outcome = train(&cfg, &manifest, None).unwrap();
    println!(
        "trained {} epochs, best val F1 {:.3}",
        outcome.records.len(),
        outcome.best_val_f1
    );

    let ckpt = load_checkpoint(&outcome.best_checkpoint).unwrap();
    let mut params = build::<f32>(&ckpt.config, &mut Rng::new(0, Stream::Init)).unwrap();
    apply_checkpoint(&ckpt, &mut params).unwrap();

    for iterations in [1, 2, 4] {
        let mut f1 = 0.0;
        for s in &test_samples {
            let pred = predict_sample(s, &params, &cfg, iterations).unwrap();
            f1 += evaluate_image("test", &pred, &s.labels, 0.5).f1;
        }
        println!("test F1 with {iterations} iteration(s): {:.3}", f1 / test_samples.len() as f64);
    }
}
