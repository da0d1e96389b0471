//! Samples, synthetic data generation, PNG/manifest I/O and checkpointing.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use image::{ImageBuffer, Luma, Rgb, RgbImage};
use thiserror::Error;

use crate::label::LabelMap;
use crate::model::{parameter_shapes, ModelParams, RDCNetConfig};
use crate::rng::Rng;
use crate::tensor::Scalar;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Format(String),
    #[error("shape mismatch for parameter {name}: checkpoint has {found:?}, model expects {expected:?}")]
    Shape {
        name: String,
        found: Vec<usize>,
        expected: Vec<usize>,
    },
    #[error("generation failed: {0}")]
    Generation(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// An image/label pair. The image is channel-major [C,H,W] with values in
/// [0,1]; the label map shares the same spatial extent.
#[derive(Debug, Clone)]
pub struct Sample {
    pub image: Vec<f32>,
    pub channels: usize,
    pub labels: LabelMap,
}

impl Sample {
    pub fn new(image: Vec<f32>, channels: usize, labels: LabelMap) -> Self {
        assert_eq!(image.len(), channels * labels.height() * labels.width());
        Sample {
            image,
            channels,
            labels,
        }
    }

    pub fn height(&self) -> usize {
        self.labels.height()
    }

    pub fn width(&self) -> usize {
        self.labels.width()
    }
}

// ---------------------------------------------------------------------------
// Synthetic data

#[derive(Debug, Clone)]
struct Ellipse {
    cy: f64,
    cx: f64,
    a: f64,
    b: f64,
    theta: f64,
}

impl Ellipse {
    fn contains(&self, r: usize, c: usize) -> bool {
        let dy = r as f64 - self.cy;
        let dx = c as f64 - self.cx;
        let (sin, cos) = self.theta.sin_cos();
        let u = (dx * cos + dy * sin) / self.a;
        let v = (-dx * sin + dy * cos) / self.b;
        u * u + v * v <= 1.0
    }

    fn pixels(&self, size: usize) -> Vec<usize> {
        let r0 = (self.cy - self.a.max(self.b)).floor().max(0.0) as usize;
        let r1 = ((self.cy + self.a.max(self.b)).ceil() as usize).min(size - 1);
        let c0 = (self.cx - self.a.max(self.b)).floor().max(0.0) as usize;
        let c1 = ((self.cx + self.a.max(self.b)).ceil() as usize).min(size - 1);
        let mut out = Vec::new();
        for r in r0..=r1 {
            for c in c0..=c1 {
                if self.contains(r, c) {
                    out.push(r * size + c);
                }
            }
        }
        out
    }
}

fn overlap_count(a: &[usize], b: &[usize]) -> usize {
    // both sorted by construction
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

/// Randomly colored ellipses on a smoothly textured background. Later
/// ellipses occlude earlier ones in the label map; pairwise overlap of the
/// underlying masks is bounded by `overlap_fraction` of the smaller mask.
#[allow(clippy::too_many_arguments)]
pub fn generate_synthetic(
    n: usize,
    size: usize,
    min_instances: usize,
    max_instances: usize,
    radius_range: [f64; 2],
    overlap_fraction: f64,
    noise_level: f64,
    rng: &mut Rng,
) -> Result<Vec<Sample>, DataError> {
    if min_instances > max_instances {
        return Err(DataError::Generation(format!(
            "min_instances {min_instances} > max_instances {max_instances}"
        )));
    }
    if radius_range[0] <= 0.0 || radius_range[0] > radius_range[1] {
        return Err(DataError::Generation(format!(
            "radius_range must be ordered and positive, got {radius_range:?}"
        )));
    }
    if radius_range[1] * 2.0 >= size as f64 {
        return Err(DataError::Generation(format!(
            "maximum radius {} does not fit in image size {size}",
            radius_range[1]
        )));
    }
    let mut samples = Vec::with_capacity(n);
    for _ in 0..n {
        let k = min_instances + rng.uniform_usize(max_instances - min_instances + 1);

        // low-frequency sinusoidal texture per channel over a dim base
        let mut image = vec![0.0f32; 3 * size * size];
        for ch in 0..3 {
            let base = rng.uniform(0.1, 0.35);
            let amp = rng.uniform(0.02, 0.06);
            let fy = rng.uniform(0.5, 2.0) / size as f64;
            let fx = rng.uniform(0.5, 2.0) / size as f64;
            let phase = rng.uniform(0.0, std::f64::consts::TAU);
            for r in 0..size {
                for c in 0..size {
                    let t = std::f64::consts::TAU * (fy * r as f64 + fx * c as f64) + phase;
                    image[(ch * size + r) * size + c] = (base + amp * t.sin()) as f32;
                }
            }
        }

        let mut labels = LabelMap::new(size, size);
        let mut placed: Vec<Vec<usize>> = Vec::new();
        for id in 1..=k {
            let mut accepted = None;
            for _try in 0..100 {
                let a = rng.uniform(radius_range[0], radius_range[1]);
                let b = rng.uniform(radius_range[0], radius_range[1]);
                let margin = a.max(b);
                let e = Ellipse {
                    cy: rng.uniform(margin, size as f64 - 1.0 - margin),
                    cx: rng.uniform(margin, size as f64 - 1.0 - margin),
                    a,
                    b,
                    theta: rng.uniform(0.0, std::f64::consts::PI),
                };
                let pix = e.pixels(size);
                if pix.is_empty() {
                    continue;
                }
                let ok = placed.iter().all(|prev| {
                    let limit = (overlap_fraction * prev.len().min(pix.len()) as f64).floor();
                    overlap_count(prev, &pix) as f64 <= limit
                });
                if ok {
                    accepted = Some(pix);
                    break;
                }
            }
            let pix = accepted.ok_or_else(|| {
                DataError::Generation(format!(
                    "could not place instance {id} of {k} after 100 tries \
                     (size {size}, radii {radius_range:?}, overlap {overlap_fraction})"
                ))
            })?;
            let color = [
                rng.uniform(0.35, 0.95) as f32,
                rng.uniform(0.35, 0.95) as f32,
                rng.uniform(0.35, 0.95) as f32,
            ];
            for &p in &pix {
                labels.data_mut()[p] = id as u16;
                for ch in 0..3 {
                    image[ch * size * size + p] = color[ch];
                }
            }
            placed.push(pix);
        }

        if noise_level > 0.0 {
            for v in image.iter_mut() {
                *v += rng.normal(0.0, noise_level) as f32;
            }
        }
        for v in image.iter_mut() {
            *v = v.clamp(0.0, 1.0);
        }
        samples.push(Sample::new(image, 3, labels));
    }
    Ok(samples)
}

// ---------------------------------------------------------------------------
// Sample I/O

/// 8-bit RGB PNG for the image, 16-bit grayscale PNG for the labels.
pub fn save_sample(sample: &Sample, image_path: &Path, label_path: &Path) -> Result<(), DataError> {
    if sample.channels != 3 {
        return Err(DataError::Format(format!(
            "can only save 3-channel images, got {}",
            sample.channels
        )));
    }
    let (h, w) = (sample.height(), sample.width());
    let plane = h * w;
    let mut img = RgbImage::new(w as u32, h as u32);
    for r in 0..h {
        for c in 0..w {
            let px = |ch: usize| {
                (sample.image[ch * plane + r * w + c].clamp(0.0, 1.0) * 255.0).round() as u8
            };
            img.put_pixel(c as u32, r as u32, Rgb([px(0), px(1), px(2)]));
        }
    }
    img.save(image_path)
        .map_err(|e| DataError::Format(format!("writing {}: {e}", image_path.display())))?;

    save_label_png(&sample.labels, label_path)
}

/// 16-bit grayscale PNG of a label map.
pub fn save_label_png(labels: &LabelMap, path: &Path) -> Result<(), DataError> {
    let (h, w) = (labels.height(), labels.width());
    let mut lbl: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::new(w as u32, h as u32);
    for r in 0..h {
        for c in 0..w {
            lbl.put_pixel(c as u32, r as u32, Luma([labels.get(r, c)]));
        }
    }
    lbl.save(path)
        .map_err(|e| DataError::Format(format!("writing {}: {e}", path.display())))
}

pub fn load_label_png(path: &Path) -> Result<LabelMap, DataError> {
    let lbl = image::open(path)
        .map_err(|e| DataError::Format(format!("reading {}: {e}", path.display())))?
        .to_luma16();
    let (w, h) = (lbl.width() as usize, lbl.height() as usize);
    let mut labels = LabelMap::new(h, w);
    for r in 0..h {
        for c in 0..w {
            labels.set(r, c, lbl.get_pixel(c as u32, r as u32)[0]);
        }
    }
    Ok(labels)
}

/// Loads an RGB PNG as a [3,H,W] float image with an all-background label
/// map (for prediction inputs without annotations).
pub fn load_image(path: &Path) -> Result<Sample, DataError> {
    let img = image::open(path)
        .map_err(|e| DataError::Format(format!("reading {}: {e}", path.display())))?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let plane = h * w;
    let mut image = vec![0.0f32; 3 * plane];
    for r in 0..h {
        for c in 0..w {
            let px = img.get_pixel(c as u32, r as u32);
            for ch in 0..3 {
                image[ch * plane + r * w + c] = px[ch] as f32 / 255.0;
            }
        }
    }
    Ok(Sample::new(image, 3, LabelMap::new(h, w)))
}

pub fn load_sample(image_path: &Path, label_path: &Path) -> Result<Sample, DataError> {
    let img = image::open(image_path)
        .map_err(|e| DataError::Format(format!("reading {}: {e}", image_path.display())))?
        .to_rgb8();
    let lbl = image::open(label_path)
        .map_err(|e| DataError::Format(format!("reading {}: {e}", label_path.display())))?
        .to_luma16();
    let (w, h) = (img.width() as usize, img.height() as usize);
    if (lbl.width() as usize, lbl.height() as usize) != (w, h) {
        return Err(DataError::Format(format!(
            "image {} is {w}x{h} but labels {} are {}x{}",
            image_path.display(),
            label_path.display(),
            lbl.width(),
            lbl.height()
        )));
    }
    let plane = h * w;
    let mut image = vec![0.0f32; 3 * plane];
    for r in 0..h {
        for c in 0..w {
            let px = img.get_pixel(c as u32, r as u32);
            for ch in 0..3 {
                image[ch * plane + r * w + c] = px[ch] as f32 / 255.0;
            }
        }
    }
    let mut labels = LabelMap::new(h, w);
    for r in 0..h {
        for c in 0..w {
            labels.set(r, c, lbl.get_pixel(c as u32, r as u32)[0]);
        }
    }
    Ok(Sample::new(image, 3, labels))
}

// ---------------------------------------------------------------------------
// Manifest

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Split {
    type Err = DataError;
    fn from_str(s: &str) -> Result<Self, DataError> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(DataError::Format(format!("unknown split tag {other:?}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ManifestEntry {
    pub split: Split,
    pub image_path: PathBuf,
    pub label_path: PathBuf,
}

/// Line-oriented text file: `split<TAB>image_path<TAB>label_path`.
pub fn save_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<(), DataError> {
    let mut out = String::new();
    for e in entries {
        out.push_str(&format!(
            "{}\t{}\t{}\n",
            e.split,
            e.image_path.display(),
            e.label_path.display()
        ));
    }
    fs::write(path, out).map_err(io_err(path))
}

pub fn load_manifest(path: &Path) -> Result<Vec<ManifestEntry>, DataError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut entries = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split('\t').collect();
        if parts.len() != 3 {
            return Err(DataError::Format(format!(
                "{}:{}: expected 3 tab-separated fields, got {}",
                path.display(),
                i + 1,
                parts.len()
            )));
        }
        entries.push(ManifestEntry {
            split: parts[0].parse()?,
            image_path: PathBuf::from(parts[1]),
            label_path: PathBuf::from(parts[2]),
        });
    }
    Ok(entries)
}

// ---------------------------------------------------------------------------
// Checkpoints

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"RDCNETCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct ParamRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
    pub m: Vec<f32>,
    pub v: Vec<f32>,
}

/// Little-endian binary layout: magic, version, TOML-encoded config
/// (length-prefixed), step counter, then per parameter its name, shape and
/// raw f32 values followed by the two Adam moment buffers.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub version: u32,
    pub config: RDCNetConfig,
    pub step: u64,
    pub params: Vec<ParamRecord>,
}

pub fn checkpoint_from_model<T: Scalar>(
    config: &RDCNetConfig,
    params: &ModelParams<T>,
) -> Checkpoint {
    let shapes = parameter_shapes(config);
    let records = params
        .group
        .entries()
        .iter()
        .zip(&shapes)
        .map(|(e, (name, shape))| {
            debug_assert_eq!(&e.name, name);
            ParamRecord {
                name: e.name.clone(),
                shape: shape.clone(),
                data: e.tensor.data().iter().map(|v| v.to_f32_()).collect(),
                m: e.m.iter().map(|v| v.to_f32_()).collect(),
                v: e.v.iter().map(|v| v.to_f32_()).collect(),
            }
        })
        .collect();
    Checkpoint {
        version: CHECKPOINT_VERSION,
        config: config.clone(),
        step: params.group.step_count(),
        params: records,
    }
}

/// Copies weights, moments and step counter into an existing model, checking
/// names and shapes against the model's config-derived topology.
pub fn apply_checkpoint<T: Scalar>(
    ckpt: &Checkpoint,
    params: &mut ModelParams<T>,
) -> Result<(), DataError> {
    let expected = parameter_shapes(&ckpt.config);
    if ckpt.params.len() != expected.len() {
        return Err(DataError::Format(format!(
            "checkpoint has {} parameters, model expects {}",
            ckpt.params.len(),
            expected.len()
        )));
    }
    for (rec, (name, shape)) in ckpt.params.iter().zip(&expected) {
        if &rec.name != name {
            return Err(DataError::Format(format!(
                "unexpected parameter {:?} where {name:?} should be",
                rec.name
            )));
        }
        if &rec.shape != shape {
            return Err(DataError::Shape {
                name: name.clone(),
                found: rec.shape.clone(),
                expected: shape.clone(),
            });
        }
    }
    for (entry, rec) in params.group.entries_mut().iter_mut().zip(&ckpt.params) {
        let model_shape = entry.tensor.shape().to_vec();
        if rec.shape != model_shape {
            return Err(DataError::Shape {
                name: rec.name.clone(),
                found: rec.shape.clone(),
                expected: model_shape,
            });
        }
        let data: Vec<T> = rec.data.iter().map(|&v| T::from_f32(v)).collect();
        entry.tensor.set_data(&data);
        entry.m = rec.m.iter().map(|&v| T::from_f32(v)).collect();
        entry.v = rec.v.iter().map(|&v| T::from_f32(v)).collect();
    }
    params.group.set_step_count(ckpt.step);
    Ok(())
}

fn push_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn push_f32s(buf: &mut Vec<u8>, vals: &[f32]) {
    for v in vals {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Result<Vec<u8>, DataError> {
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    push_u32(&mut buf, ckpt.version);
    let config = toml::to_string(&ckpt.config)
        .map_err(|e| DataError::Format(format!("config serialization: {e}")))?;
    push_u32(&mut buf, config.len() as u32);
    buf.extend_from_slice(config.as_bytes());
    buf.extend_from_slice(&ckpt.step.to_le_bytes());
    push_u32(&mut buf, ckpt.params.len() as u32);
    for p in &ckpt.params {
        push_u32(&mut buf, p.name.len() as u32);
        buf.extend_from_slice(p.name.as_bytes());
        push_u32(&mut buf, p.shape.len() as u32);
        for &d in &p.shape {
            push_u32(&mut buf, d as u32);
        }
        let n: usize = p.shape.iter().product();
        if p.data.len() != n || p.m.len() != n || p.v.len() != n {
            return Err(DataError::Format(format!(
                "parameter {} buffers do not match its shape",
                p.name
            )));
        }
        push_f32s(&mut buf, &p.data);
        push_f32s(&mut buf, &p.m);
        push_f32s(&mut buf, &p.v);
    }
    Ok(buf)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], DataError> {
        if self.pos + n > self.buf.len() {
            return Err(DataError::Format(format!(
                "truncated checkpoint: unexpected end of file while reading {what}"
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32, DataError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64, DataError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>, DataError> {
        let raw = self.take(4 * n, what)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn decode_checkpoint(buf: &[u8]) -> Result<Checkpoint, DataError> {
    let mut cur = Cursor { buf, pos: 0 };
    let magic = cur.take(8, "magic")?;
    if magic != CHECKPOINT_MAGIC {
        return Err(DataError::Format("not a checkpoint file (bad magic)".into()));
    }
    let version = cur.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(DataError::Format(format!(
            "unsupported checkpoint version {version}, expected {CHECKPOINT_VERSION}"
        )));
    }
    let config_len = cur.u32("config length")? as usize;
    let config_bytes = cur.take(config_len, "config")?;
    let config_str = std::str::from_utf8(config_bytes)
        .map_err(|e| DataError::Format(format!("config block is not utf-8: {e}")))?;
    let config: RDCNetConfig =
        toml::from_str(config_str).map_err(|e| DataError::Format(format!("config block: {e}")))?;
    let step = cur.u64("step counter")?;
    let n_params = cur.u32("parameter count")? as usize;
    let mut params = Vec::with_capacity(n_params);
    for _ in 0..n_params {
        let name_len = cur.u32("name length")? as usize;
        let name = std::str::from_utf8(cur.take(name_len, "name")?)
            .map_err(|e| DataError::Format(format!("parameter name: {e}")))?
            .to_string();
        let ndim = cur.u32("rank")? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(cur.u32("shape")? as usize);
        }
        let n: usize = shape.iter().product();
        let data = cur.f32s(n, &format!("{name} data"))?;
        let m = cur.f32s(n, &format!("{name} first moment"))?;
        let v = cur.f32s(n, &format!("{name} second moment"))?;
        params.push(ParamRecord {
            name,
            shape,
            data,
            m,
            v,
        });
    }
    if cur.pos != buf.len() {
        return Err(DataError::Format(format!(
            "{} trailing bytes after checkpoint payload",
            buf.len() - cur.pos
        )));
    }
    Ok(Checkpoint {
        version,
        config,
        step,
        params,
    })
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<(), DataError> {
    fs::write(path, encode_checkpoint(ckpt)?).map_err(io_err(path))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, DataError> {
    decode_checkpoint(&fs::read(path).map_err(io_err(path))?)
}
