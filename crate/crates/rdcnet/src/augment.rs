//! Training-time augmentation applied jointly to image and label map.
//! Geometric transforms resample labels nearest-neighbour and fill
//! out-of-bounds pixels with the undefined sentinel so fabricated border
//! content never reaches the loss.

use serde::{Deserialize, Serialize};

use crate::data::Sample;
use crate::label::{LabelMap, UNDEFINED};
use crate::rng::Rng;
use crate::tensor::TensorError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct FlipConfig {
    pub p_flip: f64,
    pub axes: Vec<Axis>,
}

impl Default for FlipConfig {
    fn default() -> Self {
        FlipConfig {
            p_flip: 0.5,
            axes: vec![Axis::X, Axis::Y],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct OffsetConfig {
    pub mu: f64,
    pub sigma: f64,
}

impl Default for OffsetConfig {
    fn default() -> Self {
        OffsetConfig { mu: 0.0, sigma: 0.2 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    pub enabled: bool,
    pub mu: f64,
    pub sigma: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            enabled: false,
            mu: 0.05,
            sigma: 0.3,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct HsvConfig {
    pub enabled: bool,
    pub hue_delta: f64,
    pub sat_range: [f64; 2],
    pub val_range: [f64; 2],
}

impl Default for HsvConfig {
    fn default() -> Self {
        HsvConfig {
            enabled: true,
            hue_delta: 0.3,
            sat_range: [0.8, 1.2],
            val_range: [0.8, 1.2],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct BlurConfig {
    pub p_active: f64,
    pub sigma_range: [f64; 2],
}

impl Default for BlurConfig {
    fn default() -> Self {
        BlurConfig {
            p_active: 0.5,
            sigma_range: [0.5, 3.0],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct AffineConfig {
    pub enabled: bool,
    pub zoom_range: [f64; 2],
    pub shear_deg: f64,
    pub rot_deg: f64,
}

impl Default for AffineConfig {
    fn default() -> Self {
        AffineConfig {
            enabled: true,
            zoom_range: [0.9, 1.1],
            shear_deg: 5.0,
            rot_deg: 10.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct WarpConfig {
    pub enabled: bool,
    pub amplitude: f64,
}

impl Default for WarpConfig {
    fn default() -> Self {
        WarpConfig {
            enabled: true,
            amplitude: 20.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ClipConfig {
    pub enabled: bool,
    pub mu_min: f64,
    pub mu_max: f64,
    pub sigma: f64,
}

impl Default for ClipConfig {
    fn default() -> Self {
        ClipConfig {
            enabled: true,
            mu_min: -1.0,
            mu_max: 1.0,
            sigma: 0.3,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub flip: FlipConfig,
    pub offset: OffsetConfig,
    pub noise: NoiseConfig,
    pub hsv: HsvConfig,
    pub blur: BlurConfig,
    pub affine: AffineConfig,
    pub warp: WarpConfig,
    pub clip: ClipConfig,
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<(), TensorError> {
        let prob = |name: &str, p: f64| {
            if (0.0..=1.0).contains(&p) {
                Ok(())
            } else {
                Err(TensorError::Config(format!("{name} must be in [0,1], got {p}")))
            }
        };
        prob("flip.p_flip", self.flip.p_flip)?;
        prob("blur.p_active", self.blur.p_active)?;
        for (name, r) in [
            ("hsv.sat_range", self.hsv.sat_range),
            ("hsv.val_range", self.hsv.val_range),
            ("blur.sigma_range", self.blur.sigma_range),
            ("affine.zoom_range", self.affine.zoom_range),
        ] {
            if r[0] > r[1] {
                return Err(TensorError::Config(format!(
                    "{name} must be ordered low <= high, got [{}, {}]",
                    r[0], r[1]
                )));
            }
        }
        if self.warp.amplitude < 0.0 {
            return Err(TensorError::Config(format!(
                "warp.amplitude must be >= 0, got {}",
                self.warp.amplitude
            )));
        }
        Ok(())
    }
}

pub fn random_flip(mut sample: Sample, axes: &[Axis], p: f64, rng: &mut Rng) -> Sample {
    let (h, w, c) = (sample.height(), sample.width(), sample.channels);
    for &axis in axes {
        if !rng.bernoulli(p) {
            continue;
        }
        match axis {
            Axis::X => {
                for ch in 0..c {
                    for r in 0..h {
                        sample.image[(ch * h + r) * w..(ch * h + r + 1) * w].reverse();
                    }
                }
                for r in 0..h {
                    sample.labels.data_mut()[r * w..(r + 1) * w].reverse();
                }
            }
            Axis::Y => {
                for ch in 0..c {
                    for r in 0..h / 2 {
                        for col in 0..w {
                            sample
                                .image
                                .swap((ch * h + r) * w + col, (ch * h + h - 1 - r) * w + col);
                        }
                    }
                }
                for r in 0..h / 2 {
                    for col in 0..w {
                        sample.labels.data_mut().swap(r * w + col, (h - 1 - r) * w + col);
                    }
                }
            }
        }
    }
    sample
}

pub fn random_offset(image: &mut [f32], mu: f64, sigma: f64, rng: &mut Rng) {
    let off = rng.normal(mu, sigma) as f32;
    for v in image.iter_mut() {
        *v += off;
    }
}

pub fn random_noise(image: &mut [f32], mu: f64, sigma: f64, rng: &mut Rng) {
    for v in image.iter_mut() {
        *v += rng.normal(mu, sigma) as f32;
    }
}

fn rgb_to_hsv(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let h = if delta == 0.0 {
        0.0
    } else if max == r {
        (((g - b) / delta).rem_euclid(6.0)) / 6.0
    } else if max == g {
        ((b - r) / delta + 2.0) / 6.0
    } else {
        ((r - g) / delta + 4.0) / 6.0
    };
    let s = if max == 0.0 { 0.0 } else { delta / max };
    (h, s, max)
}

pub(crate) fn hsv_to_rgb(h: f64, s: f64, v: f64) -> (f64, f64, f64) {
    let h6 = h.rem_euclid(1.0) * 6.0;
    let c = v * s;
    let x = c * (1.0 - (h6.rem_euclid(2.0) - 1.0).abs());
    let m = v - c;
    let (r, g, b) = match h6 as usize {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    (r + m, g + m, b + m)
}

fn apply_hsv(image: &mut [f32], hue_shift: f64, sat_mul: f64, val_mul: f64) {
    let plane = image.len() / 3;
    for p in 0..plane {
        let (h, s, v) = rgb_to_hsv(
            image[p] as f64,
            image[plane + p] as f64,
            image[2 * plane + p] as f64,
        );
        let (r, g, b) = hsv_to_rgb(
            (h + hue_shift).rem_euclid(1.0),
            (s * sat_mul).clamp(0.0, 1.0),
            (v * val_mul).clamp(0.0, 1.0),
        );
        image[p] = r as f32;
        image[plane + p] = g as f32;
        image[2 * plane + p] = b as f32;
    }
}

pub fn hsv_shift(
    image: &mut [f32],
    channels: usize,
    hue_delta: f64,
    sat_range: [f64; 2],
    val_range: [f64; 2],
    rng: &mut Rng,
) -> Result<(), TensorError> {
    if channels != 3 {
        return Err(TensorError::Usage(format!(
            "hsv shift needs a 3-channel image, got {channels} channels"
        )));
    }
    let hue = rng.uniform(-hue_delta, hue_delta);
    let sat = rng.uniform(sat_range[0], sat_range[1]);
    let val = rng.uniform(val_range[0], val_range[1]);
    apply_hsv(image, hue, sat, val);
    Ok(())
}

/// Truncated (±3σ) normalized Gaussian taps.
fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil().max(0.0) as usize;
    let mut k: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let d = i as f64 - radius as f64;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let sum: f64 = k.iter().sum();
    for v in &mut k {
        *v /= sum;
    }
    k
}

/// Separable smoothing with edge renormalization: at the border the kernel
/// is re-weighted over in-bounds taps, so output stays a convex combination
/// of inputs.
fn smooth_plane(plane: &mut [f64], h: usize, w: usize, kernel: &[f64]) {
    let radius = kernel.len() / 2;
    let mut tmp = vec![0.0f64; h * w];
    for r in 0..h {
        for c in 0..w {
            let (mut acc, mut wsum) = (0.0, 0.0);
            for (t, &k) in kernel.iter().enumerate() {
                let cc = c as isize + t as isize - radius as isize;
                if cc >= 0 && (cc as usize) < w {
                    acc += k * plane[r * w + cc as usize];
                    wsum += k;
                }
            }
            tmp[r * w + c] = acc / wsum;
        }
    }
    for r in 0..h {
        for c in 0..w {
            let (mut acc, mut wsum) = (0.0, 0.0);
            for (t, &k) in kernel.iter().enumerate() {
                let rr = r as isize + t as isize - radius as isize;
                if rr >= 0 && (rr as usize) < h {
                    acc += k * tmp[rr as usize * w + c];
                    wsum += k;
                }
            }
            plane[r * w + c] = acc / wsum;
        }
    }
}

pub fn gaussian_blur(
    image: &mut [f32],
    channels: usize,
    h: usize,
    w: usize,
    p_active: f64,
    sigma_range: [f64; 2],
    rng: &mut Rng,
) {
    if !rng.bernoulli(p_active) {
        return;
    }
    let sigma = rng.uniform(sigma_range[0], sigma_range[1]);
    let kernel = gaussian_kernel(sigma);
    let mut plane = vec![0.0f64; h * w];
    for ch in 0..channels {
        let base = ch * h * w;
        for (dst, src) in plane.iter_mut().zip(&image[base..base + h * w]) {
            *dst = *src as f64;
        }
        smooth_plane(&mut plane, h, w, &kernel);
        for (dst, src) in image[base..base + h * w].iter_mut().zip(&plane) {
            *dst = *src as f32;
        }
    }
}

/// Resample a sample through an inverse mapping from output pixel to source
/// coordinates (row, col). Image taps outside the grid read 0; labels go
/// nearest-neighbour with undefined fill.
fn resample<F: Fn(usize, usize) -> (f64, f64)>(sample: &Sample, src_of: F) -> Sample {
    let (h, w, c) = (sample.height(), sample.width(), sample.channels);
    let mut image = vec![0.0f32; c * h * w];
    let mut labels = LabelMap::new(h, w);
    for r in 0..h {
        for col in 0..w {
            let (sy, sx) = src_of(r, col);
            let (ry, rx) = (sy.round(), sx.round());
            let label = if ry >= 0.0 && ry < h as f64 && rx >= 0.0 && rx < w as f64 {
                sample.labels.get(ry as usize, rx as usize)
            } else {
                UNDEFINED
            };
            labels.set(r, col, label);
            let y0 = sy.floor();
            let x0 = sx.floor();
            let (fy, fx) = (sy - y0, sx - x0);
            for ch in 0..c {
                let tap = |yy: f64, xx: f64| -> f64 {
                    if yy >= 0.0 && yy < h as f64 && xx >= 0.0 && xx < w as f64 {
                        sample.image[(ch * h + yy as usize) * w + xx as usize] as f64
                    } else {
                        0.0
                    }
                };
                let v = tap(y0, x0) * (1.0 - fy) * (1.0 - fx)
                    + tap(y0, x0 + 1.0) * (1.0 - fy) * fx
                    + tap(y0 + 1.0, x0) * fy * (1.0 - fx)
                    + tap(y0 + 1.0, x0 + 1.0) * fy * fx;
                image[(ch * h + r) * w + col] = v as f32;
            }
        }
    }
    Sample::new(image, c, labels)
}

/// Forward 2x2 matrix zoom·shear·rotation in (x, y) = (col, row) coords.
fn affine_matrix(zoom: f64, shear_deg: f64, rot_deg: f64) -> [f64; 4] {
    let sh = shear_deg.to_radians().tan();
    let (sin, cos) = rot_deg.to_radians().sin_cos();
    // Z·Sh = [[z, z*sh],[0, z]], then ·R
    [
        zoom * cos + zoom * sh * sin,
        -zoom * sin + zoom * sh * cos,
        zoom * sin,
        zoom * cos,
    ]
}

fn apply_affine(sample: &Sample, m: [f64; 4]) -> Sample {
    let det = m[0] * m[3] - m[1] * m[2];
    let inv = [m[3] / det, -m[1] / det, -m[2] / det, m[0] / det];
    let cy = (sample.height() as f64 - 1.0) / 2.0;
    let cx = (sample.width() as f64 - 1.0) / 2.0;
    resample(sample, |r, c| {
        let dx = c as f64 - cx;
        let dy = r as f64 - cy;
        (cy + inv[2] * dx + inv[3] * dy, cx + inv[0] * dx + inv[1] * dy)
    })
}

pub fn random_affine(
    sample: Sample,
    zoom_range: [f64; 2],
    shear_deg: f64,
    rot_deg: f64,
    rng: &mut Rng,
) -> Sample {
    let zoom = rng.uniform(zoom_range[0], zoom_range[1]);
    let shear = rng.uniform(-shear_deg, shear_deg);
    let rot = rng.uniform(-rot_deg, rot_deg);
    apply_affine(&sample, affine_matrix(zoom, shear, rot))
}

pub fn random_warp(sample: Sample, amplitude: f64, rng: &mut Rng) -> Sample {
    if amplitude == 0.0 {
        return sample;
    }
    let (h, w) = (sample.height(), sample.width());
    let mut dy: Vec<f64> = (0..h * w).map(|_| rng.uniform(-amplitude, amplitude)).collect();
    let mut dx: Vec<f64> = (0..h * w).map(|_| rng.uniform(-amplitude, amplitude)).collect();
    let kernel = gaussian_kernel(2.0 * amplitude);
    smooth_plane(&mut dy, h, w, &kernel);
    smooth_plane(&mut dx, h, w, &kernel);
    resample(&sample, |r, c| {
        (r as f64 + dy[r * w + c], c as f64 + dx[r * w + c])
    })
}

pub fn random_clip(image: &mut [f32], mu_min: f64, mu_max: f64, sigma: f64, rng: &mut Rng) {
    let mut lo = rng.normal(mu_min, sigma);
    let mut hi = rng.normal(mu_max, sigma);
    if lo > hi {
        std::mem::swap(&mut lo, &mut hi);
    }
    for v in image.iter_mut() {
        *v = v.clamp(lo as f32, hi as f32);
    }
}

/// Full pipeline in table row order:
/// flip → offset → noise → hsv → blur → affine → warp → clip.
pub fn pipeline(mut sample: Sample, cfg: &AugmentConfig, rng: &mut Rng) -> Sample {
    sample = random_flip(sample, &cfg.flip.axes, cfg.flip.p_flip, rng);
    random_offset(&mut sample.image, cfg.offset.mu, cfg.offset.sigma, rng);
    if cfg.noise.enabled {
        random_noise(&mut sample.image, cfg.noise.mu, cfg.noise.sigma, rng);
    }
    if cfg.hsv.enabled && sample.channels == 3 {
        hsv_shift(
            &mut sample.image,
            sample.channels,
            cfg.hsv.hue_delta,
            cfg.hsv.sat_range,
            cfg.hsv.val_range,
            rng,
        )
        .expect("channel count checked above");
    }
    let (h, w) = (sample.height(), sample.width());
    gaussian_blur(
        &mut sample.image,
        sample.channels,
        h,
        w,
        cfg.blur.p_active,
        cfg.blur.sigma_range,
        rng,
    );
    if cfg.affine.enabled {
        sample = random_affine(
            sample,
            cfg.affine.zoom_range,
            cfg.affine.shear_deg,
            cfg.affine.rot_deg,
            rng,
        );
    }
    if cfg.warp.enabled {
        sample = random_warp(sample, cfg.warp.amplitude, rng);
    }
    if cfg.clip.enabled {
        random_clip(&mut sample.image, cfg.clip.mu_min, cfg.clip.mu_max, cfg.clip.sigma, rng);
    }
    sample
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Stream;

    fn rng(seed: u64) -> Rng {
        Rng::new(seed, Stream::Augment)
    }

    fn checker_sample(h: usize, w: usize) -> Sample {
        let mut labels = LabelMap::new(h, w);
        let mut image = vec![0.0f32; 3 * h * w];
        for r in 0..h {
            for c in 0..w {
                let v = ((r * w + c) % 7) as f32 / 7.0;
                for ch in 0..3 {
                    image[(ch * h + r) * w + c] = v;
                }
                labels.set(r, c, ((r / 3 + c / 3) % 3) as u16);
            }
        }
        Sample::new(image, 3, labels)
    }

    #[test]
    fn flip_identity_and_involution() {
        let s = checker_sample(6, 5);
        let out = random_flip(s.clone(), &[Axis::X, Axis::Y], 0.0, &mut rng(1));
        assert_eq!(out.image, s.image);
        assert_eq!(out.labels.data(), s.labels.data());
        // p=1 twice on the same axis is an involution
        let once = random_flip(s.clone(), &[Axis::X], 1.0, &mut rng(2));
        let twice = random_flip(once, &[Axis::X], 1.0, &mut rng(3));
        assert_eq!(twice.image, s.image);
        assert_eq!(twice.labels.data(), s.labels.data());
    }

    #[test]
    fn flip_moves_content() {
        let s = checker_sample(4, 4);
        let out = random_flip(s.clone(), &[Axis::X], 1.0, &mut rng(4));
        assert_eq!(out.labels.get(0, 0), s.labels.get(0, 3));
        assert_eq!(out.image[0], s.image[3]);
        let out = random_flip(s.clone(), &[Axis::Y], 1.0, &mut rng(5));
        assert_eq!(out.labels.get(0, 0), s.labels.get(3, 0));
    }

    #[test]
    fn offset_identity_and_mean() {
        let mut img = vec![0.25f32; 16];
        random_offset(&mut img, 0.0, 0.0, &mut rng(6));
        assert!(img.iter().all(|&v| v == 0.25));
        let mut r = rng(7);
        let mean: f64 = (0..10_000)
            .map(|_| {
                let mut one = vec![0.0f32; 1];
                random_offset(&mut one, 0.0, 0.2, &mut r);
                one[0] as f64
            })
            .sum::<f64>()
            / 10_000.0;
        assert!(mean.abs() < 3.0 * 0.2 / 100.0, "mean {mean}");
    }

    #[test]
    fn noise_identity_and_std() {
        let mut img = vec![0.5f32; 8];
        random_noise(&mut img, 0.0, 0.0, &mut rng(8));
        assert!(img.iter().all(|&v| v == 0.5));
        let mut img = vec![0.0f32; 100_000];
        random_noise(&mut img, 0.05, 0.3, &mut rng(9));
        let mean: f64 = img.iter().map(|&v| v as f64).sum::<f64>() / img.len() as f64;
        let var: f64 =
            img.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / img.len() as f64;
        assert!((var.sqrt() - 0.3).abs() / 0.3 < 0.05);
        assert!((mean - 0.05).abs() < 0.01);
    }

    #[test]
    fn hsv_identity_and_hue_rotation() {
        let s = checker_sample(4, 4);
        let mut img = s.image.clone();
        hsv_shift(&mut img, 3, 0.0, [1.0, 1.0], [1.0, 1.0], &mut rng(10)).unwrap();
        for (a, b) in img.iter().zip(&s.image) {
            assert!((a - b).abs() < 1e-6);
        }
        // pure red shifted by +1/3 becomes pure green
        let mut red = vec![1.0f32, 0.0, 0.0];
        apply_hsv(&mut red, 1.0 / 3.0, 1.0, 1.0);
        assert!((red[0]).abs() < 1e-6 && (red[1] - 1.0).abs() < 1e-6 && red[2].abs() < 1e-6);
        // wrong channel count is a usage error
        let mut gray = vec![0.5f32; 4];
        assert!(hsv_shift(&mut gray, 1, 0.1, [1.0, 1.0], [1.0, 1.0], &mut rng(11)).is_err());
    }

    #[test]
    fn blur_inactive_and_constant_preserving() {
        let mut img = vec![0.3f32; 3 * 8 * 8];
        let orig = img.clone();
        gaussian_blur(&mut img, 3, 8, 8, 0.0, [0.5, 3.0], &mut rng(12));
        assert_eq!(img, orig);
        gaussian_blur(&mut img, 3, 8, 8, 1.0, [1.0, 2.0], &mut rng(13));
        for &v in &img {
            assert!((v - 0.3).abs() < 1e-6);
        }
        let k = gaussian_kernel(1.7);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn blur_reduces_variance() {
        let s = checker_sample(12, 12);
        let mut img = s.image.clone();
        gaussian_blur(&mut img, 3, 12, 12, 1.0, [2.0, 2.0], &mut rng(14));
        let var = |d: &[f32]| {
            let m = d.iter().sum::<f32>() / d.len() as f32;
            d.iter().map(|&v| (v - m).powi(2)).sum::<f32>() / d.len() as f32
        };
        assert!(var(&img) < var(&s.image));
    }

    #[test]
    fn affine_identity_params() {
        let s = checker_sample(6, 6);
        let out = random_affine(s.clone(), [1.0, 1.0], 0.0, 0.0, &mut rng(15));
        for (a, b) in out.image.iter().zip(&s.image) {
            assert!((a - b).abs() < 1e-6);
        }
        assert_eq!(out.labels.data(), s.labels.data());
    }

    #[test]
    fn affine_quarter_turn_is_exact() {
        let s = checker_sample(6, 6);
        let out = apply_affine(&s, affine_matrix(1.0, 0.0, 90.0));
        // forward rotation by 90° maps (x,y)->(-y,x) about the center:
        // output(r,c) = input(h-1-c, r)
        let h = 6;
        for r in 0..h {
            for c in 0..h {
                assert_eq!(out.labels.get(r, c), s.labels.get(h - 1 - c, r), "({r},{c})");
                assert!(
                    (out.image[r * h + c] - s.image[(h - 1 - c) * h + r]).abs() < 1e-5,
                    "({r},{c})"
                );
            }
        }
    }

    #[test]
    fn affine_fills_labels_with_undefined() {
        let s = checker_sample(8, 8);
        // zoom out: borders come from outside the source grid
        let out = apply_affine(&s, affine_matrix(0.5, 0.0, 0.0));
        assert_eq!(out.labels.get(0, 0), UNDEFINED);
        assert_ne!(out.labels.get(4, 4), UNDEFINED);
    }

    #[test]
    fn warp_identity_and_bounded() {
        let s = checker_sample(8, 8);
        let out = random_warp(s.clone(), 0.0, &mut rng(16));
        assert_eq!(out.image, s.image);
        // smoothed offsets stay within the amplitude
        let a = 3.0;
        let mut field: Vec<f64> = {
            let mut r = rng(17);
            (0..64).map(|_| r.uniform(-a, a)).collect()
        };
        smooth_plane(&mut field, 8, 8, &gaussian_kernel(2.0 * a));
        assert!(field.iter().all(|v| v.abs() <= a + 1e-9));
    }

    #[test]
    fn warp_labels_are_existing_or_undefined() {
        let s = checker_sample(10, 10);
        let out = random_warp(s.clone(), 4.0, &mut rng(18));
        let mut allowed: Vec<u16> = s.labels.data().to_vec();
        allowed.push(UNDEFINED);
        for &v in out.labels.data() {
            assert!(allowed.contains(&v));
        }
    }

    #[test]
    fn clip_identity_and_bounds() {
        let mut img = vec![0.2f32, 0.8, -0.5];
        let orig = img.clone();
        random_clip(&mut img, -1.0, 1.0, 0.0, &mut rng(19));
        assert_eq!(img, orig);
        let mut img: Vec<f32> = (-10..10).map(|v| v as f32).collect();
        let mut r = rng(20);
        random_clip(&mut img, -1.0, 1.0, 0.3, &mut r);
        let lo = img.iter().cloned().fold(f32::INFINITY, f32::min);
        let hi = img.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        assert!(lo >= -2.5 && hi <= 2.5 && lo < hi);
    }

    #[test]
    fn pipeline_deterministic_and_label_safe() {
        let cfg = AugmentConfig::default();
        cfg.validate().unwrap();
        let s = checker_sample(16, 16);
        let a = pipeline(s.clone(), &cfg, &mut rng(21));
        let b = pipeline(s.clone(), &cfg, &mut rng(21));
        assert_eq!(a.image, b.image);
        assert_eq!(a.labels.data(), b.labels.data());
        let mut allowed: Vec<u16> = s.labels.data().to_vec();
        allowed.push(UNDEFINED);
        for &v in a.labels.data() {
            assert!(allowed.contains(&v));
        }
    }

    #[test]
    fn pipeline_disabled_is_identity() {
        let cfg = AugmentConfig {
            flip: FlipConfig { p_flip: 0.0, axes: vec![Axis::X, Axis::Y] },
            offset: OffsetConfig { mu: 0.0, sigma: 0.0 },
            noise: NoiseConfig { enabled: false, ..Default::default() },
            hsv: HsvConfig { enabled: false, ..Default::default() },
            blur: BlurConfig { p_active: 0.0, sigma_range: [0.5, 3.0] },
            affine: AffineConfig { enabled: false, ..Default::default() },
            warp: WarpConfig { enabled: false, amplitude: 20.0 },
            clip: ClipConfig { enabled: false, ..Default::default() },
        };
        let s = checker_sample(8, 8);
        let out = pipeline(s.clone(), &cfg, &mut rng(22));
        assert_eq!(out.image, s.image);
        assert_eq!(out.labels.data(), s.labels.data());
    }

    #[test]
    fn validate_rejects_bad_config() {
        let mut cfg = AugmentConfig::default();
        cfg.flip.p_flip = 1.5;
        assert!(cfg.validate().is_err());
        let mut cfg = AugmentConfig::default();
        cfg.affine.zoom_range = [1.2, 0.8];
        assert!(cfg.validate().is_err());
        let mut cfg = AugmentConfig::default();
        cfg.warp.amplitude = -1.0;
        assert!(cfg.validate().is_err());
    }
}
