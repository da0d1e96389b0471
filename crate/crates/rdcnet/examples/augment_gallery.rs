//! Apply the augmentation pipeline to one synthetic sample several times
//! and save the variants as PNG pairs.
//!
//! Run with: cargo run --example augment_gallery

use rdcnet::augment::AugmentConfig;
use rdcnet::augment::pipeline;
use rdcnet::data::{generate_synthetic, save_sample};
use rdcnet::rng::{Rng, Stream};

fn main() {
    let mut data_rng = Rng::new(11, Stream::Data);
    let sample = generate_synthetic(1, 96, 5, 9, [6.0, 12.0], 0.15, 0.02, &mut data_rng)
        .unwrap()
        .remove(0);

    let dir = std::env::temp_dir().join("rdcnet_augment_gallery");
    std::fs::create_dir_all(&dir).unwrap();
    save_sample(&sample, &dir.join("original.png"), &dir.join("original_labels.png")).unwrap();

    let cfg = AugmentConfig::default();
    for i in 0..4u64 {
        let mut rng = Rng::new(100 + i, Stream::Augment);
        let aug = pipeline(sample.clone(), &cfg, &mut rng);
        let image = dir.join(format!("augmented_{i}.png"));
        let labels = dir.join(format!("augmented_{i}_labels.png"));
        save_sample(&aug, &image, &labels).unwrap();
        println!("{}", image.display());
    }
    println!("original and 4 augmented variants written to {}", dir.display());
}
