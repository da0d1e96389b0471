//! Hough-voting decoder: foreground pixels vote for their rounded
//! embedding position, local maxima of the vote histogram become instance
//! centres, and each foreground pixel joins its nearest centre in
//! embedding space.

use serde::{Deserialize, Serialize};

use crate::label::LabelMap;
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct DecoderConfig {
    pub fg_threshold: f64,
    /// Odd local-maximum window in pixels; 0 means "derive from margin"
    /// (2 * margin rounded up to odd) at config resolution time.
    pub window: usize,
    pub min_votes: u32,
    /// Disc radius for label-wise morphological opening; 0 disables it.
    pub opening_radius: f64,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        DecoderConfig {
            fg_threshold: 0.5,
            window: 0,
            min_votes: 2,
            opening_radius: 0.0,
        }
    }
}

pub fn round_to_odd(x: f64) -> usize {
    let r = x.round().max(1.0) as usize;
    if r % 2 == 1 {
        r
    } else {
        r + 1
    }
}

impl DecoderConfig {
    /// Resolves the window default from the loss margin.
    pub fn resolved_window(&self, margin: f64) -> usize {
        if self.window == 0 {
            round_to_odd(2.0 * margin)
        } else {
            self.window
        }
    }

    pub fn validate(&self) -> Result<(), crate::tensor::TensorError> {
        if !(0.0 < self.fg_threshold && self.fg_threshold < 1.0) {
            return Err(crate::tensor::TensorError::Config(format!(
                "fg_threshold must be in (0,1), got {}",
                self.fg_threshold
            )));
        }
        if self.window != 0 && self.window % 2 == 0 {
            return Err(crate::tensor::TensorError::Config(format!(
                "window must be odd, got {}",
                self.window
            )));
        }
        if self.min_votes == 0 {
            return Err(crate::tensor::TensorError::Config(
                "min_votes must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

fn round_half_up(x: f64) -> isize {
    (x + 0.5).floor() as isize
}

/// Each foreground pixel casts one vote at its rounded embedding
/// coordinate; out-of-image votes clamp to the border bin.
pub fn vote_histogram<T: Scalar>(embeddings: &Tensor<T>, fg_mask: &[bool]) -> Vec<u32> {
    let shape = embeddings.shape();
    assert_eq!(shape.len(), 3, "vote_histogram expects [2,H,W]");
    let (h, w) = (shape[1], shape[2]);
    assert_eq!(fg_mask.len(), h * w);
    let mut hist = vec![0u32; h * w];
    let data = embeddings.data();
    for (pix, &fg) in fg_mask.iter().enumerate() {
        if !fg {
            continue;
        }
        let r = round_half_up(data[pix].to_f64_()).clamp(0, h as isize - 1) as usize;
        let c = round_half_up(data[h * w + pix].to_f64_()).clamp(0, w as isize - 1) as usize;
        hist[r * w + c] += 1;
    }
    hist
}

/// A bin is a centre iff its count reaches `min_votes` and strictly
/// dominates its window x window neighborhood. Tied plateaus yield only the
/// lexicographically smallest coordinate.
pub fn local_maxima(hist: &[u32], h: usize, w: usize, window: usize, min_votes: u32) -> Vec<(usize, usize)> {
    assert!(window % 2 == 1, "window must be odd");
    let half = (window / 2) as isize;
    let mut centres = Vec::new();
    for r in 0..h {
        for c in 0..w {
            let v = hist[r * w + c];
            if v < min_votes {
                continue;
            }
            let mut is_max = true;
            'scan: for dr in -half..=half {
                for dc in -half..=half {
                    if dr == 0 && dc == 0 {
                        continue;
                    }
                    let nr = r as isize + dr;
                    let nc = c as isize + dc;
                    if nr < 0 || nr >= h as isize || nc < 0 || nc >= w as isize {
                        continue;
                    }
                    let nv = hist[nr as usize * w + nc as usize];
                    if nv > v {
                        is_max = false;
                        break 'scan;
                    }
                    if nv == v {
                        // plateau tie-break: only the lexicographically
                        // smallest coordinate wins
                        if (nr as usize, nc as usize) < (r, c) {
                            is_max = false;
                            break 'scan;
                        }
                    }
                }
            }
            if is_max {
                centres.push((r, c));
            }
        }
    }
    centres
}

/// Nearest-centre assignment in embedding space; ties go to the lowest
/// centre index; background stays 0.
pub fn assign<T: Scalar>(
    embeddings: &Tensor<T>,
    fg_mask: &[bool],
    centres: &[(usize, usize)],
) -> LabelMap {
    let shape = embeddings.shape();
    let (h, w) = (shape[1], shape[2]);
    let mut out = LabelMap::new(h, w);
    if centres.is_empty() {
        return out;
    }
    let data = embeddings.data();
    for pix in 0..h * w {
        if !fg_mask[pix] {
            continue;
        }
        let ey = data[pix].to_f64_();
        let ex = data[h * w + pix].to_f64_();
        let mut best = 0usize;
        let mut best_d = f64::INFINITY;
        for (ci, &(cr, cc)) in centres.iter().enumerate() {
            let d = (ey - cr as f64).powi(2) + (ex - cc as f64).powi(2);
            if d < best_d {
                best_d = d;
                best = ci;
            }
        }
        out.data_mut()[pix] = (best + 1) as u16;
    }
    out
}

/// Morphological opening (erosion then dilation) with a disc, applied per
/// label; pixels opened away become background.
pub fn labelwise_opening(labels: &LabelMap, radius: f64) -> LabelMap {
    if radius <= 0.0 {
        return labels.clone();
    }
    let (h, w) = (labels.height(), labels.width());
    let ri = radius.floor() as isize;
    let mut disc = Vec::new();
    for dr in -ri..=ri {
        for dc in -ri..=ri {
            if (dr * dr + dc * dc) as f64 <= radius * radius {
                disc.push((dr, dc));
            }
        }
    }
    let mut out = LabelMap::new(h, w);
    for id in labels.instance_ids() {
        // erode
        let mut eroded = vec![false; h * w];
        for r in 0..h {
            'pix: for c in 0..w {
                if labels.get(r, c) != id {
                    continue;
                }
                for &(dr, dc) in &disc {
                    let nr = r as isize + dr;
                    let nc = c as isize + dc;
                    if nr < 0 || nr >= h as isize || nc < 0 || nc >= w as isize {
                        continue 'pix;
                    }
                    if labels.get(nr as usize, nc as usize) != id {
                        continue 'pix;
                    }
                }
                eroded[r * w + c] = true;
            }
        }
        // dilate
        for r in 0..h {
            for c in 0..w {
                if !eroded[r * w + c] {
                    continue;
                }
                for &(dr, dc) in &disc {
                    let nr = r as isize + dr;
                    let nc = c as isize + dc;
                    if nr < 0 || nr >= h as isize || nc < 0 || nc >= w as isize {
                        continue;
                    }
                    // only restore pixels the instance originally owned
                    if labels.get(nr as usize, nc as usize) == id {
                        out.set(nr as usize, nc as usize, id);
                    }
                }
            }
        }
    }
    out
}

/// Full decode: threshold the foreground probability, vote, find centres,
/// assign, optionally open.
pub fn decode<T: Scalar>(
    semantic_probs: &Tensor<T>,
    embeddings: &Tensor<T>,
    cfg: &DecoderConfig,
    margin: f64,
) -> LabelMap {
    let shape = embeddings.shape();
    let (h, w) = (shape[1], shape[2]);
    // semantic_probs is [classes,H,W]; foreground is class 1.
    let plane = h * w;
    let sem = semantic_probs.data();
    let thr = T::from_f64(cfg.fg_threshold);
    let fg_mask: Vec<bool> = (0..plane).map(|p| sem[plane + p] > thr).collect();
    let hist = vote_histogram(embeddings, &fg_mask);
    let window = cfg.resolved_window(margin);
    let centres = local_maxima(&hist, h, w, window, cfg.min_votes);
    let labels = assign(embeddings, &fg_mask, &centres);
    if cfg.opening_radius > 0.0 {
        labelwise_opening(&labels, cfg.opening_radius)
    } else {
        labels
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::coord_grid;
    use crate::rng::{Rng, Stream};

    #[test]
    fn empty_foreground_empty_histogram() {
        let emb = Tensor::from_vec(vec![2, 3, 3], vec![1.0f64; 18]);
        let hist = vote_histogram(&emb, &[false; 9]);
        assert!(hist.iter().all(|&v| v == 0));
    }

    #[test]
    fn votes_round_half_up_and_accumulate() {
        // 5 fg pixels all embedding to (3.2, 4.1) -> bin (3,4) holds 5
        let (h, w) = (6, 6);
        let mut data = vec![0.0f64; 2 * h * w];
        let mut fg = vec![false; h * w];
        for p in 0..5 {
            data[p] = 3.2;
            data[h * w + p] = 4.1;
            fg[p] = true;
        }
        let emb = Tensor::from_vec(vec![2, h, w], data);
        let hist = vote_histogram(&emb, &fg);
        assert_eq!(hist[3 * w + 4], 5);
        assert_eq!(hist.iter().sum::<u32>(), 5);
    }

    #[test]
    fn identity_embeddings_vote_for_themselves() {
        let (h, w) = (4, 5);
        let emb = coord_grid::<f64>(1, h, w);
        let emb = Tensor::from_vec(vec![2, h, w], emb.data().to_vec());
        let fg: Vec<bool> = (0..h * w).map(|p| p % 3 == 0).collect();
        let hist = vote_histogram(&emb, &fg);
        for p in 0..h * w {
            assert_eq!(hist[p], u32::from(fg[p]));
        }
    }

    #[test]
    fn out_of_image_votes_clamp_to_border() {
        let (h, w) = (4, 4);
        let mut data = vec![0.0f64; 2 * h * w];
        data[0] = -7.3; // row -> clamps to 0
        data[h * w] = 9.9; // col -> clamps to 3
        let emb = Tensor::from_vec(vec![2, h, w], data);
        let mut fg = vec![false; h * w];
        fg[0] = true;
        let hist = vote_histogram(&emb, &fg);
        assert_eq!(hist[3], 1); // bin (0, 3)
    }

    #[test]
    fn single_peak_detected() {
        let mut hist = vec![0u32; 25];
        hist[12] = 3;
        assert_eq!(local_maxima(&hist, 5, 5, 3, 2), vec![(2, 2)]);
        // below min_votes: nothing
        assert!(local_maxima(&hist, 5, 5, 3, 4).is_empty());
    }

    #[test]
    fn two_separated_peaks_detected() {
        let mut hist = vec![0u32; 8 * 8];
        hist[1 * 8 + 1] = 5;
        hist[6 * 8 + 6] = 5;
        let centres = local_maxima(&hist, 8, 8, 3, 2);
        assert_eq!(centres, vec![(1, 1), (6, 6)]);
    }

    #[test]
    fn plateau_tie_break_is_lexicographic() {
        let mut hist = vec![0u32; 5 * 5];
        hist[2 * 5 + 1] = 4;
        hist[2 * 5 + 2] = 4;
        let centres = local_maxima(&hist, 5, 5, 3, 2);
        assert_eq!(centres, vec![(2, 1)]);
    }

    fn brute_force_maxima(
        hist: &[u32],
        h: usize,
        w: usize,
        window: usize,
        min_votes: u32,
    ) -> Vec<(usize, usize)> {
        let half = (window / 2) as isize;
        let mut out = Vec::new();
        for r in 0..h {
            for c in 0..w {
                let v = hist[r * w + c];
                if v < min_votes {
                    continue;
                }
                let mut ok = true;
                for nr in 0..h {
                    for nc in 0..w {
                        if (nr, nc) == (r, c) {
                            continue;
                        }
                        let inside = (nr as isize - r as isize).abs() <= half
                            && (nc as isize - c as isize).abs() <= half;
                        if !inside {
                            continue;
                        }
                        let nv = hist[nr * w + nc];
                        if nv > v || (nv == v && (nr, nc) < (r, c)) {
                            ok = false;
                        }
                    }
                }
                if ok {
                    out.push((r, c));
                }
            }
        }
        out
    }

    #[test]
    fn random_histogram_matches_bruteforce() {
        let mut rng = Rng::new(77, Stream::Other(9));
        for _ in 0..50 {
            let (h, w) = (16, 16);
            let hist: Vec<u32> = (0..h * w).map(|_| rng.uniform_usize(6) as u32).collect();
            for &window in &[3usize, 5, 7] {
                assert_eq!(
                    local_maxima(&hist, h, w, window, 2),
                    brute_force_maxima(&hist, h, w, window, 2)
                );
            }
        }
    }

    #[test]
    fn assignment_nearest_and_ties() {
        let (h, w) = (1, 3);
        // pixel embeddings: (2,2), (5,5), (10,10)
        let emb = Tensor::from_vec(vec![2, h, w], vec![2.0f64, 5.0, 10.0, 2.0, 5.0, 10.0]);
        let fg = vec![true; 3];
        let centres = vec![(0usize, 0usize), (10usize, 10usize)];
        let lab = assign(&emb, &fg, &centres);
        assert_eq!(lab.data(), &[1, 1, 2]); // (5,5) ties -> lowest index
        // empty centres -> all background
        let lab = assign(&emb, &fg, &[]);
        assert_eq!(lab.data(), &[0, 0, 0]);
    }

    #[test]
    fn uniform_half_probability_decodes_empty() {
        // threshold comparison is strict, so exactly-0.5 stays background
        let (h, w) = (4, 4);
        let sem = Tensor::from_vec(vec![2, h, w], vec![0.5f64; 2 * h * w]);
        let emb = Tensor::from_vec(vec![2, h, w], vec![0.0f64; 2 * h * w]);
        let lab = decode(&sem, &emb, &DecoderConfig::default(), 3.0);
        assert!(lab.data().iter().all(|&v| v == 0));
    }

    #[test]
    fn two_clusters_decode_to_two_instances() {
        let (h, w) = (8, 8);
        let plane = h * w;
        let mut sem = vec![1.0f64; plane]; // background prob channel
        let mut emb = vec![0.0f64; 2 * plane];
        let mut fgprob = vec![0.0f64; plane];
        // left half points to (2,2), right half to (6,6)
        for r in 0..h {
            for c in 0..w {
                let p = r * w + c;
                fgprob[p] = 1.0;
                sem[p] = 0.0;
                if c < 4 {
                    emb[p] = 2.0;
                    emb[plane + p] = 2.0;
                } else {
                    emb[p] = 6.0;
                    emb[plane + p] = 6.0;
                }
            }
        }
        let mut semantic = sem;
        semantic.extend(fgprob);
        let semantic = Tensor::from_vec(vec![2, h, w], semantic);
        let emb = Tensor::from_vec(vec![2, h, w], emb);
        let cfg = DecoderConfig {
            window: 3,
            ..Default::default()
        };
        let lab = decode(&semantic, &emb, &cfg, 3.0);
        let ids = lab.instance_ids();
        assert_eq!(ids.len(), 2);
        // partition follows cluster membership
        for r in 0..h {
            for c in 0..w {
                let expect = if c < 4 { lab.get(0, 0) } else { lab.get(0, 7) };
                assert_eq!(lab.get(r, c), expect);
            }
        }
        // idempotence / determinism
        let lab2 = decode(&semantic, &emb, &cfg, 3.0);
        assert_eq!(lab, lab2);
    }

    #[test]
    fn opening_removes_thin_protrusions() {
        // a 4x4 square with a 1px tail; radius-1 opening removes the tail
        let (h, w) = (8, 8);
        let mut lab = LabelMap::new(h, w);
        for r in 1..5 {
            for c in 1..5 {
                lab.set(r, c, 1);
            }
        }
        lab.set(2, 6, 1); // isolated protrusion
        let opened = labelwise_opening(&lab, 1.0);
        assert_eq!(opened.get(2, 6), 0);
        assert_eq!(opened.get(2, 2), 1);
    }
}
