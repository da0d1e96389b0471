//! Instance segmentation metrics on a small hand-made prediction.
//!
//! Run with: cargo run --example metrics_demo

use rdcnet::label::LabelMap;
use rdcnet::metrics::{evaluate_image, EvalReport};

fn main() {
    // Ground truth: two instances. Prediction: instance 1 matched well,
    // instance 2 under-segmented, plus one spurious blob.
    #[rustfmt::skip]
    let gt = LabelMap::from_vec(6, 8, vec![
        0, 1, 1, 1, 0, 0, 0, 0,
        0, 1, 1, 1, 0, 0, 2, 2,
        0, 1, 1, 1, 0, 0, 2, 2,
        0, 0, 0, 0, 0, 0, 2, 2,
        0, 0, 0, 0, 0, 0, 0, 0,
        0, 0, 0, 0, 0, 0, 0, 0,
    ]);
    #[rustfmt::skip]
    let pred = LabelMap::from_vec(6, 8, vec![
        0, 5, 5, 5, 0, 0, 0, 0,
        0, 5, 5, 5, 0, 0, 9, 9,
        0, 5, 5, 0, 0, 0, 0, 0,
        0, 0, 0, 0, 0, 0, 0, 0,
        0, 0, 0, 0, 3, 3, 0, 0,
        0, 0, 0, 0, 3, 3, 0, 0,
    ]);

    for t in [0.5, 0.75] {
        let rec = evaluate_image("demo", &pred, &gt, t);
        println!(
            "IoU>{t}: precision {:.3}  recall {:.3}  F1 {:.3}  SBD {:.3}  AJI {:.3}",
            rec.precision, rec.recall, rec.f1, rec.sbd, rec.aji
        );
    }

    let records = vec![
        evaluate_image("demo", &pred, &gt, 0.5),
        evaluate_image("perfect", &gt, &gt, 0.5),
    ];
    let n = records.len();
    let report = EvalReport::from_records(0.5, records);
    println!("mean over {n} images: F1 {:.3}  AJI {:.3}", report.f1, report.aji);
}
