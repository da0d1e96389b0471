//! Generate a few synthetic ellipse samples and save them as PNG pairs.
//!
//! Run with: cargo run --example generate_data

use rdcnet::data::{generate_synthetic, save_sample};
use rdcnet::rng::{Rng, Stream};

fn main() {
    let mut rng = Rng::new(7, Stream::Data);
    let samples = generate_synthetic(4, 96, 4, 9, [6.0, 12.0], 0.15, 0.03, &mut rng).unwrap();

    let dir = std::env::temp_dir().join("rdcnet_generate_data");
    std::fs::create_dir_all(&dir).unwrap();
    for (i, s) in samples.iter().enumerate() {
        let image = dir.join(format!("sample_{i}.png"));
        let labels = dir.join(format!("sample_{i}_labels.png"));
        save_sample(s, &image, &labels).unwrap();
        let n = s.labels.instance_ids().len();
        println!("{}: {n} instances", image.display());
    }
}
