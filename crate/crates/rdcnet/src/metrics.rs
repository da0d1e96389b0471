//! Instance-level evaluation: precision/recall/F1 at an IoU threshold,
//! Symmetric Best Dice, and the Aggregated Jaccard Index. Pixels that are
//! undefined in the ground truth are excluded everywhere.

use serde::Serialize;

use crate::label::{LabelMap, UNDEFINED};

#[derive(Debug, Clone, Serialize)]
pub struct ImageRecord {
    pub name: String,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub sbd: f64,
    pub aji: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub iou_threshold: f64,
    pub images: Vec<ImageRecord>,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub sbd: f64,
    pub aji: f64,
}

impl EvalReport {
    pub fn from_records(iou_threshold: f64, images: Vec<ImageRecord>) -> Self {
        let n = images.len().max(1) as f64;
        let mean = |f: fn(&ImageRecord) -> f64| images.iter().map(f).sum::<f64>() / n;
        EvalReport {
            iou_threshold,
            precision: mean(|r| r.precision),
            recall: mean(|r| r.recall),
            f1: mean(|r| r.f1),
            sbd: mean(|r| r.sbd),
            aji: mean(|r| r.aji),
            images,
        }
    }
}

/// Per-instance pixel sets with undefined gt pixels removed from both maps.
fn instance_regions(pred: &LabelMap, gt: &LabelMap) -> (Vec<Vec<usize>>, Vec<Vec<usize>>) {
    let valid: Vec<bool> = gt.data().iter().map(|&v| v != UNDEFINED).collect();
    let collect = |m: &LabelMap| -> Vec<Vec<usize>> {
        m.instance_ids()
            .iter()
            .map(|&id| {
                m.data()
                    .iter()
                    .enumerate()
                    .filter(|(p, &v)| v == id && valid[*p])
                    .map(|(p, _)| p)
                    .collect()
            })
            .collect()
    };
    (collect(pred), collect(gt))
}

fn intersection_size(a: &[usize], b: &[usize]) -> usize {
    // pixel lists are sorted by construction
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

/// IoU of every (pred, gt) instance pair, indexed by ascending instance id.
pub fn iou_matrix(pred: &LabelMap, gt: &LabelMap) -> Vec<Vec<f64>> {
    let (preds, gts) = instance_regions(pred, gt);
    preds
        .iter()
        .map(|p| {
            gts.iter()
                .map(|g| {
                    let inter = intersection_size(p, g);
                    let union = p.len() + g.len() - inter;
                    if union == 0 {
                        0.0
                    } else {
                        inter as f64 / union as f64
                    }
                })
                .collect()
        })
        .collect()
}

/// Greedy one-to-one matching by descending IoU among pairs with IoU > t;
/// ties break by (pred index, gt index).
pub fn match_at_threshold(ious: &[Vec<f64>], t: f64) -> Vec<(usize, usize)> {
    let mut pairs: Vec<(usize, usize, f64)> = Vec::new();
    for (pi, row) in ious.iter().enumerate() {
        for (gi, &iou) in row.iter().enumerate() {
            if iou > t {
                pairs.push((pi, gi, iou));
            }
        }
    }
    pairs.sort_by(|a, b| {
        b.2.partial_cmp(&a.2)
            .unwrap()
            .then(a.0.cmp(&b.0))
            .then(a.1.cmp(&b.1))
    });
    let n_pred = ious.len();
    let n_gt = ious.first().map_or(0, |r| r.len());
    let mut pred_used = vec![false; n_pred];
    let mut gt_used = vec![false; n_gt];
    let mut matching = Vec::new();
    for (pi, gi, _) in pairs {
        if !pred_used[pi] && !gt_used[gi] {
            pred_used[pi] = true;
            gt_used[gi] = true;
            matching.push((pi, gi));
        }
    }
    matching
}

/// (precision, recall, f1); 0/0 ratios are defined as 1, empty harmonic
/// mean of two ones is 1.
pub fn prf1(n_matched: usize, n_pred: usize, n_gt: usize) -> (f64, f64, f64) {
    let precision = if n_pred == 0 {
        1.0
    } else {
        n_matched as f64 / n_pred as f64
    };
    let recall = if n_gt == 0 {
        1.0
    } else {
        n_matched as f64 / n_gt as f64
    };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    (precision, recall, f1)
}

fn best_dice(from: &[Vec<usize>], to: &[Vec<usize>]) -> f64 {
    if from.is_empty() {
        return if to.is_empty() { 1.0 } else { 0.0 };
    }
    if to.is_empty() {
        return 0.0;
    }
    let mut acc = 0.0;
    for a in from {
        let mut best: f64 = 0.0;
        for b in to {
            let inter = intersection_size(a, b);
            let dice = 2.0 * inter as f64 / (a.len() + b.len()) as f64;
            best = best.max(dice);
        }
        acc += best;
    }
    acc / from.len() as f64
}

/// Symmetric Best Dice: min of the two directional mean best-Dice scores.
pub fn sbd(pred: &LabelMap, gt: &LabelMap) -> f64 {
    let (preds, gts) = instance_regions(pred, gt);
    best_dice(&preds, &gts).min(best_dice(&gts, &preds))
}

/// Aggregated Jaccard Index. Ground-truth instances are processed in
/// ascending id order; each picks the unused prediction with the highest
/// IoU. Unmatched prediction areas are added to the denominator.
pub fn aji(pred: &LabelMap, gt: &LabelMap) -> f64 {
    let (preds, gts) = instance_regions(pred, gt);
    if gts.is_empty() && preds.is_empty() {
        return 1.0;
    }
    let mut pred_used = vec![false; preds.len()];
    let mut inter_sum = 0usize;
    let mut union_sum = 0usize;
    for g in &gts {
        let mut best: Option<(usize, f64, usize, usize)> = None;
        for (pi, p) in preds.iter().enumerate() {
            if pred_used[pi] {
                continue;
            }
            let inter = intersection_size(p, g);
            let union = p.len() + g.len() - inter;
            let iou = if union == 0 { 0.0 } else { inter as f64 / union as f64 };
            let better = match best {
                None => true,
                Some((_, biou, _, _)) => iou > biou,
            };
            if better {
                best = Some((pi, iou, inter, union));
            }
        }
        match best {
            Some((pi, iou, inter, union)) if iou > 0.0 => {
                pred_used[pi] = true;
                inter_sum += inter;
                union_sum += union;
            }
            _ => {
                union_sum += g.len();
            }
        }
    }
    for (pi, p) in preds.iter().enumerate() {
        if !pred_used[pi] {
            union_sum += p.len();
        }
    }
    if union_sum == 0 {
        return if inter_sum == 0 { 1.0 } else { 0.0 };
    }
    inter_sum as f64 / union_sum as f64
}

/// Full per-image evaluation at one IoU threshold.
pub fn evaluate_image(name: &str, pred: &LabelMap, gt: &LabelMap, iou_threshold: f64) -> ImageRecord {
    let ious = iou_matrix(pred, gt);
    let n_pred = ious.len();
    let n_gt = gt.instance_ids().len();
    let matching = match_at_threshold(&ious, iou_threshold);
    let tp = matching.len();
    let (precision, recall, f1) = prf1(tp, n_pred, n_gt);
    ImageRecord {
        name: name.to_string(),
        tp,
        fp: n_pred - tp,
        fn_: n_gt - tp,
        precision,
        recall,
        f1,
        sbd: sbd(pred, gt),
        aji: aji(pred, gt),
    }
}
