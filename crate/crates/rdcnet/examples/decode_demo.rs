//! Hough-voting decoder on hand-built embeddings: two clusters of pixels
//! voting for their own centers become two instances.
//!
//! Run with: cargo run --example decode_demo

use rdcnet::decoder::{decode, DecoderConfig};
use rdcnet::tensor::Tensor;

fn main() {
    let (h, w) = (8usize, 12usize);
    let centers = [(3.0f32, 3.0f32), (4.0f32, 9.0f32)];

    // Foreground where the pixel is within 2.5 px of a center; every
    // foreground pixel's embedding points at its center.
    let mut fg = vec![0.0f32; h * w];
    let mut emb = vec![0.0f32; 2 * h * w];
    for r in 0..h {
        for c in 0..w {
            for &(cy, cx) in &centers {
                if (r as f32 - cy).hypot(c as f32 - cx) <= 2.5 {
                    fg[r * w + c] = 1.0;
                    emb[r * w + c] = cy;
                    emb[h * w + r * w + c] = cx;
                }
            }
        }
    }
    let bg: Vec<f32> = fg.iter().map(|v| 1.0 - v).collect();
    let semantic = Tensor::from_vec(vec![2, h, w], [bg, fg].concat());
    let embeddings = Tensor::from_vec(vec![2, h, w], emb);

    let cfg = DecoderConfig::default();
    let labels = decode(&semantic, &embeddings, &cfg, 1.0);

    println!("decoded {} instances:", labels.instance_ids().len());
    for r in 0..h {
        let row: String = (0..w)
            .map(|c| match labels.get(r, c) {
                0 => '.',
                v => char::from_digit(v as u32, 10).unwrap_or('#'),
            })
            .collect();
        println!("{row}");
    }
}
