//! The recurrent dilated convolution network.
//!
//! A strided stem downsamples the image, a small residual block is applied
//! iteratively at the reduced resolution (Y^i = f(X, Y^{i-1}) + Y^{i-1},
//! with Y^0 = 0), and a transposed-convolution head restores full
//! resolution, splitting into semantic probabilities and a displacement
//! field. Adding each pixel's own coordinates to the displacement yields
//! the semi-convolutional instance embeddings.

use serde::{Deserialize, Serialize};

use crate::rng::Rng;
use crate::tensor::conv::{conv2d, conv2d_transpose, Conv2dSpec};
use crate::tensor::ops::{add, concat_channels, leaky_relu, narrow_channels, softmax, spatial_dropout};
use crate::tensor::{ParamGroup, Scalar, Tensor, TensorError};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RDCNetConfig {
    pub groups: usize,
    pub group_channels: usize,
    pub dilation_rates: Vec<usize>,
    pub iterations: usize,
    pub scale: usize,
    pub stem_channels: usize,
    pub input_channels: usize,
    pub embedding_dim: usize,
    pub semantic_classes: usize,
    pub dropout_p: f64,
    pub leaky_slope: f64,
}

impl Default for RDCNetConfig {
    fn default() -> Self {
        RDCNetConfig {
            groups: 8,
            group_channels: 64,
            dilation_rates: vec![1, 2, 4],
            iterations: 5,
            scale: 4,
            stem_channels: 32,
            input_channels: 3,
            embedding_dim: 2,
            semantic_classes: 2,
            dropout_p: 0.1,
            leaky_slope: 0.01,
        }
    }
}

impl RDCNetConfig {
    /// Width of the recurrent state Y.
    pub fn state_width(&self) -> usize {
        self.groups * self.group_channels
    }

    pub fn head_channels(&self) -> usize {
        self.stem_channels
    }

    pub fn validate(&self) -> Result<(), TensorError> {
        let cfg = |field: &str, msg: String| Err(TensorError::Config(format!("{field}: {msg}")));
        if self.groups == 0 {
            return cfg("groups", "must be >= 1".into());
        }
        if self.group_channels == 0 {
            return cfg("group_channels", "must be >= 1".into());
        }
        if self.dilation_rates.is_empty() {
            return cfg("dilation_rates", "must be nonempty".into());
        }
        if self.dilation_rates[0] < 1 {
            return cfg("dilation_rates", "first element must be >= 1".into());
        }
        if !self.dilation_rates.windows(2).all(|w| w[0] < w[1]) {
            return cfg(
                "dilation_rates",
                format!("must be strictly increasing, got {:?}", self.dilation_rates),
            );
        }
        if self.iterations == 0 {
            return cfg("iterations", "must be >= 1".into());
        }
        if self.scale == 0 || self.scale % 2 != 0 {
            // The head's transposed convolution (kernel 2s, stride s) only
            // restores full resolution with padding s/2, which needs even s.
            return cfg("scale", format!("must be a positive even integer, got {}", self.scale));
        }
        if self.stem_channels == 0 {
            return cfg("stem_channels", "must be >= 1".into());
        }
        if self.input_channels == 0 {
            return cfg("input_channels", "must be >= 1".into());
        }
        if self.embedding_dim != 2 {
            return cfg("embedding_dim", "only 2D embeddings are supported".into());
        }
        if self.semantic_classes < 2 {
            return cfg("semantic_classes", "must be >= 2".into());
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return cfg("dropout_p", format!("must be in [0,1), got {}", self.dropout_p));
        }
        if !(0.0..1.0).contains(&self.leaky_slope) || self.leaky_slope <= 0.0 {
            return cfg("leaky_slope", format!("must be in (0,1), got {}", self.leaky_slope));
        }
        Ok(())
    }
}

/// Learned weights, held as a named parameter group in a fixed order.
#[derive(Debug)]
pub struct ModelParams<T: Scalar> {
    pub group: ParamGroup<T>,
}

impl<T: Scalar> ModelParams<T> {
    pub fn get(&self, name: &str) -> Tensor<T> {
        self.group
            .get(name)
            .unwrap_or_else(|| panic!("missing parameter {name}"))
            .clone()
    }

    pub fn total_elements(&self) -> usize {
        self.group.total_elements()
    }
}

/// Shapes of every parameter tensor, a pure function of the config.
pub fn parameter_shapes(config: &RDCNetConfig) -> Vec<(String, Vec<usize>)> {
    let c = config.state_width();
    let g = config.groups;
    let r = config.dilation_rates.len();
    let s = config.scale;
    let head = config.head_channels();
    let out_ch = config.semantic_classes + config.embedding_dim;
    vec![
        ("stem.w".into(), vec![config.stem_channels, config.input_channels, s, s]),
        ("stem.b".into(), vec![config.stem_channels]),
        ("mix.w".into(), vec![c, config.stem_channels + c, 1, 1]),
        ("mix.b".into(), vec![c]),
        ("ssdc.w".into(), vec![c, c / g, 3, 3]),
        ("ssdc.b".into(), vec![c]),
        ("proj.w".into(), vec![c, r * c, 1, 1]),
        ("proj.b".into(), vec![c]),
        ("head.w".into(), vec![c, head, 2 * s, 2 * s]),
        ("head.b".into(), vec![head]),
        ("out.w".into(), vec![out_ch, head, 1, 1]),
        ("out.b".into(), vec![out_ch]),
    ]
}

/// He initialization (fan-in, adjusted for the leaky slope), zero biases.
pub fn build<T: Scalar>(config: &RDCNetConfig, rng: &mut Rng) -> Result<ModelParams<T>, TensorError> {
    config.validate()?;
    let mut group = ParamGroup::new();
    for (name, shape) in parameter_shapes(config) {
        let n: usize = shape.iter().product();
        let tensor = if name.ends_with(".b") {
            Tensor::zeros(shape).tracked()
        } else {
            // fan-in = per-output input patch size; the transposed head uses
            // its input-channel dim times the kernel area as well.
            let fan_in: usize = if name == "head.w" {
                shape[0] * shape[2] * shape[3]
            } else {
                shape[1..].iter().product()
            };
            let gain = 2.0 / (1.0 + config.leaky_slope * config.leaky_slope);
            let std = (gain / fan_in as f64).sqrt();
            let data = (0..n).map(|_| T::from_f64(rng.normal(0.0, std))).collect();
            Tensor::from_vec(shape, data).tracked()
        };
        group.push(name, tensor)?;
    }
    Ok(ModelParams { group })
}

/// Stacked dilated convolutions with shared weights: the same grouped 3x3
/// kernel at every dilation rate, outputs concatenated, then a point-wise
/// projection back to the state width. Both convolutions are pre-activated.
pub fn ssdc<T: Scalar>(
    x: &Tensor<T>,
    params: &ModelParams<T>,
    config: &RDCNetConfig,
) -> Result<Tensor<T>, TensorError> {
    let c = config.state_width();
    if x.shape().len() != 4 || x.shape()[1] != c {
        return Err(TensorError::Usage(format!(
            "ssdc expects {c} channels, got shape {:?}",
            x.shape()
        )));
    }
    let slope = T::from_f64(config.leaky_slope);
    let a = leaky_relu(x, slope);
    let w = params.get("ssdc.w");
    let b = params.get("ssdc.b");
    let mut stacked = Vec::with_capacity(config.dilation_rates.len());
    for &d in &config.dilation_rates {
        let spec = Conv2dSpec {
            dilation: (d, d),
            groups: config.groups,
            padding: (d, d),
            ..Default::default()
        };
        stacked.push(conv2d(&a, &w, Some(&b), spec)?);
    }
    let cat = concat_channels(&stacked)?;
    let proj_in = leaky_relu(&cat, slope);
    conv2d(
        &proj_in,
        &params.get("proj.w"),
        Some(&params.get("proj.b")),
        Conv2dSpec::default(),
    )
}

/// One residual refinement: Y^i = f(X, Y^{i-1}) + Y^{i-1}.
pub fn recurrent_step<T: Scalar>(
    x_feat: &Tensor<T>,
    y_prev: &Tensor<T>,
    params: &ModelParams<T>,
    config: &RDCNetConfig,
    training: bool,
    rng: &mut Rng,
) -> Result<Tensor<T>, TensorError> {
    if x_feat.shape()[2..] != y_prev.shape()[2..] || y_prev.shape()[1] != config.state_width() {
        return Err(TensorError::Usage(format!(
            "recurrent_step shape mismatch: x_feat {:?}, y_prev {:?}",
            x_feat.shape(),
            y_prev.shape()
        )));
    }
    let slope = T::from_f64(config.leaky_slope);
    let z = concat_channels(&[x_feat.clone(), y_prev.clone()])?;
    let z = spatial_dropout(&z, config.dropout_p, training, rng)?;
    let z = leaky_relu(&z, slope);
    let z = conv2d(
        &z,
        &params.get("mix.w"),
        Some(&params.get("mix.b")),
        Conv2dSpec::default(),
    )?;
    let f = ssdc(&z, params, config)?;
    add(&f, y_prev)
}

/// Upsampling head: restores full resolution, splits into semantic
/// probabilities (softmax over classes) and a raw displacement field.
pub fn heads<T: Scalar>(
    y: &Tensor<T>,
    params: &ModelParams<T>,
    config: &RDCNetConfig,
) -> Result<(Tensor<T>, Tensor<T>), TensorError> {
    let slope = T::from_f64(config.leaky_slope);
    let s = config.scale;
    let a = leaky_relu(y, slope);
    let up = conv2d_transpose(
        &a,
        &params.get("head.w"),
        Some(&params.get("head.b")),
        (s, s),
        (s / 2, s / 2),
    )?;
    let a2 = leaky_relu(&up, slope);
    let raw = conv2d(
        &a2,
        &params.get("out.w"),
        Some(&params.get("out.b")),
        Conv2dSpec::default(),
    )?;
    let logits = narrow_channels(&raw, 0, config.semantic_classes)?;
    let displacement = narrow_channels(&raw, config.semantic_classes, config.embedding_dim)?;
    let semantic = softmax(&logits, 1)?;
    Ok((semantic, displacement))
}

/// Coordinate grid [N,2,H,W] in pixel units: channel 0 holds each pixel's
/// row index, channel 1 its column index (origin at the top-left pixel
/// center).
pub fn coord_grid<T: Scalar>(n: usize, h: usize, w: usize) -> Tensor<T> {
    let plane = h * w;
    let mut data = vec![T::zero(); n * 2 * plane];
    for b in 0..n {
        for i in 0..h {
            for j in 0..w {
                data[(b * 2) * plane + i * w + j] = T::from_f64(i as f64);
                data[(b * 2 + 1) * plane + i * w + j] = T::from_f64(j as f64);
            }
        }
    }
    Tensor::from_vec(vec![n, 2, h, w], data)
}

/// embeddings = displacement + per-pixel coordinates.
pub fn semi_conv<T: Scalar>(
    displacement: &Tensor<T>,
    coords: &Tensor<T>,
) -> Result<Tensor<T>, TensorError> {
    add(displacement, coords)
}

/// Full forward pass; returns the head outputs of every iteration.
pub fn forward<T: Scalar>(
    image: &Tensor<T>,
    params: &ModelParams<T>,
    config: &RDCNetConfig,
    training: bool,
    rng: &mut Rng,
) -> Result<Vec<(Tensor<T>, Tensor<T>)>, TensorError> {
    let (y, x_feat) = stem_and_state(image, params, config)?;
    let mut y = y;
    let shape = image.shape();
    let coords = coord_grid::<T>(shape[0], shape[2], shape[3]);
    let mut outputs = Vec::with_capacity(config.iterations);
    for _ in 0..config.iterations {
        y = recurrent_step(&x_feat, &y, params, config, training, rng)?;
        let (semantic, displacement) = heads(&y, params, config)?;
        let embeddings = semi_conv(&displacement, &coords)?;
        outputs.push((semantic, embeddings));
    }
    Ok(outputs)
}

/// Inference pass: recurrent state buffers are reused and only the final
/// iteration goes through the head, so peak memory does not depend on the
/// iteration count.
pub fn infer<T: Scalar>(
    image: &Tensor<T>,
    params: &ModelParams<T>,
    config: &RDCNetConfig,
    iterations: usize,
) -> Result<(Tensor<T>, Tensor<T>), TensorError> {
    if iterations == 0 {
        return Err(TensorError::Usage("iterations must be >= 1".into()));
    }
    let _guard = crate::tensor::no_grad();
    let image = if image.track_grad() { image.detach() } else { image.clone() };
    let (mut y, x_feat) = stem_and_state(&image, params, config)?;
    let mut rng = Rng::new(0, crate::rng::Stream::Dropout); // unused: training=false
    for _ in 0..iterations {
        y = recurrent_step(&x_feat, &y, params, config, false, &mut rng)?;
    }
    let (semantic, displacement) = heads(&y, params, config)?;
    let shape = image.shape();
    let coords = coord_grid::<T>(shape[0], shape[2], shape[3]);
    let embeddings = semi_conv(&displacement, &coords)?;
    Ok((semantic, embeddings))
}

fn stem_and_state<T: Scalar>(
    image: &Tensor<T>,
    params: &ModelParams<T>,
    config: &RDCNetConfig,
) -> Result<(Tensor<T>, Tensor<T>), TensorError> {
    config.validate()?;
    let shape = image.shape();
    if shape.len() != 4 || shape[1] != config.input_channels {
        return Err(TensorError::Usage(format!(
            "expected NCHW image with {} channels, got {:?}",
            config.input_channels, shape
        )));
    }
    let s = config.scale;
    if shape[2] % s != 0 || shape[3] % s != 0 {
        return Err(TensorError::Usage(format!(
            "image extent {}x{} not divisible by scale {s}; pad the input first",
            shape[2], shape[3]
        )));
    }
    // The stem is the one convolution without pre-activation.
    let x_feat = conv2d(
        image,
        &params.get("stem.w"),
        Some(&params.get("stem.b")),
        Conv2dSpec {
            stride: (s, s),
            ..Default::default()
        },
    )?;
    let y0 = Tensor::zeros(vec![shape[0], config.state_width(), shape[2] / s, shape[3] / s]);
    Ok((y0, x_feat))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Stream;

    fn small_config() -> RDCNetConfig {
        RDCNetConfig {
            groups: 2,
            group_channels: 4,
            dilation_rates: vec![1, 2],
            iterations: 3,
            scale: 2,
            stem_channels: 6,
            input_channels: 3,
            ..Default::default()
        }
    }

    fn zero_weights(params: &ModelParams<f64>, names: &[&str]) {
        for e in params.group.entries() {
            if names.contains(&e.name.as_str()) {
                e.tensor.set_data(&vec![0.0; e.tensor.len()]);
            }
        }
    }

    #[test]
    fn build_is_deterministic() {
        let cfg = small_config();
        let a: ModelParams<f64> = build(&cfg, &mut Rng::new(1, Stream::Init)).unwrap();
        let b: ModelParams<f64> = build(&cfg, &mut Rng::new(1, Stream::Init)).unwrap();
        for (ea, eb) in a.group.entries().iter().zip(b.group.entries()) {
            assert_eq!(ea.tensor.data(), eb.tensor.data(), "{}", ea.name);
        }
    }

    #[test]
    fn shared_weights_param_count() {
        // The 3x3 SSDC tensor does not grow with the number of dilation
        // rates; only the projection does.
        let mut cfg = small_config();
        cfg.dilation_rates = vec![1];
        let n1: usize = parameter_shapes(&cfg)
            .iter()
            .map(|(_, s)| s.iter().product::<usize>())
            .sum();
        cfg.dilation_rates = vec![1, 2, 4];
        let n3: usize = parameter_shapes(&cfg)
            .iter()
            .map(|(_, s)| s.iter().product::<usize>())
            .sum();
        let c = cfg.state_width();
        assert_eq!(n3 - n1, 2 * c * c); // projection grows by (3-1) * C * C
        // ssdc.w itself is identical in both
        let ssdc_shape = parameter_shapes(&cfg)
            .into_iter()
            .find(|(n, _)| n == "ssdc.w")
            .unwrap()
            .1;
        assert_eq!(ssdc_shape, vec![c, c / cfg.groups, 3, 3]);
    }

    #[test]
    fn parameter_count_matches_hand_tally() {
        // groups=2, group_channels=16, scale=2, embedding_dim=2.
        let cfg = RDCNetConfig {
            groups: 2,
            group_channels: 16,
            dilation_rates: vec![1, 2, 4],
            scale: 2,
            stem_channels: 32,
            input_channels: 3,
            ..Default::default()
        };
        let c = 32; // state width
        let expected =
            // stem: 32 out, 3 in, 2x2 kernel + bias
            32 * 3 * 2 * 2 + 32
            // mix: C out, (32 + C) in, 1x1 + bias
            + c * (32 + c) + c
            // ssdc: C out, C/groups in, 3x3 + bias
            + c * (c / 2) * 9 + c
            // proj: C out, 3C in, 1x1 + bias
            + c * 3 * c + c
            // head: C in, 32 out, 4x4 + bias
            + c * 32 * 16 + 32
            // out: 4 out, 32 in, 1x1 + bias
            + 4 * 32 + 4;
        let total: usize = parameter_shapes(&cfg)
            .iter()
            .map(|(_, s)| s.iter().product::<usize>())
            .sum();
        assert_eq!(total, expected);
        let params: ModelParams<f64> = build(&cfg, &mut Rng::new(0, Stream::Init)).unwrap();
        assert_eq!(params.total_elements(), expected);
    }

    #[test]
    fn invalid_config_names_field() {
        let mut cfg = small_config();
        cfg.dilation_rates = vec![2, 2];
        let err = build::<f64>(&cfg, &mut Rng::new(0, Stream::Init)).unwrap_err();
        assert!(err.to_string().contains("dilation_rates"), "{err}");
        let mut cfg = small_config();
        cfg.scale = 3;
        let err = build::<f64>(&cfg, &mut Rng::new(0, Stream::Init)).unwrap_err();
        assert!(err.to_string().contains("scale"), "{err}");
    }

    #[test]
    fn ssdc_zero_weights_zero_output() {
        let cfg = small_config();
        let params: ModelParams<f64> = build(&cfg, &mut Rng::new(2, Stream::Init)).unwrap();
        zero_weights(&params, &["ssdc.w", "ssdc.b", "proj.w", "proj.b"]);
        let x = Tensor::from_vec(vec![1, 8, 4, 4], (0..128).map(|i| i as f64 * 0.1).collect());
        let y = ssdc(&x, &params, &cfg).unwrap();
        assert!(y.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn ssdc_single_rate_degenerates() {
        let mut cfg = small_config();
        cfg.dilation_rates = vec![1];
        let params: ModelParams<f64> = build(&cfg, &mut Rng::new(3, Stream::Init)).unwrap();
        let x = Tensor::from_vec(
            vec![1, 8, 5, 5],
            (0..200).map(|i| ((i * 7) % 13) as f64 * 0.1 - 0.5).collect(),
        );
        let got = ssdc(&x, &params, &cfg).unwrap();
        // Same composition spelled out directly.
        let slope = cfg.leaky_slope;
        let a = leaky_relu(&x, slope);
        let c1 = conv2d(
            &a,
            &params.get("ssdc.w"),
            Some(&params.get("ssdc.b")),
            Conv2dSpec {
                groups: cfg.groups,
                padding: (1, 1),
                ..Default::default()
            },
        )
        .unwrap();
        let want = conv2d(
            &leaky_relu(&c1, slope),
            &params.get("proj.w"),
            Some(&params.get("proj.b")),
            Conv2dSpec::default(),
        )
        .unwrap();
        assert_eq!(got.data(), want.data());
    }

    #[test]
    fn ssdc_matches_direct_two_rate_oracle() {
        // rates {1,2} on a 1x8x6x6 input against a nested-loop oracle for
        // each dilation, concatenated and projected.
        let cfg = small_config();
        let params: ModelParams<f64> = build(&cfg, &mut Rng::new(4, Stream::Init)).unwrap();
        let mut rng = Rng::new(5, Stream::Other(3));
        let x = Tensor::from_vec(
            vec![1, 8, 6, 6],
            (0..8 * 36).map(|_| rng.normal(0.0, 1.0)).collect(),
        );
        let got = ssdc(&x, &params, &cfg).unwrap();

        // oracle: pre-activation
        let slope = cfg.leaky_slope;
        let act: Vec<f64> = x
            .data()
            .iter()
            .map(|v| if *v >= 0.0 { *v } else { v * slope })
            .collect();
        let (h, w) = (6usize, 6usize);
        let c = cfg.state_width();
        let gch = cfg.group_channels;
        let wt = params.get("ssdc.w");
        let bt = params.get("ssdc.b");
        let mut cat = vec![0.0f64; 2 * c * h * w];
        for (ri, &d) in cfg.dilation_rates.iter().enumerate() {
            for oc in 0..c {
                let gi = oc / gch;
                for oy in 0..h {
                    for ox in 0..w {
                        let mut acc = bt.data()[oc];
                        for icl in 0..gch {
                            let ic = gi * gch + icl;
                            for ky in 0..3usize {
                                for kx in 0..3usize {
                                    let iy = oy as isize + (ky as isize - 1) * d as isize;
                                    let ix = ox as isize + (kx as isize - 1) * d as isize;
                                    if iy < 0 || iy >= h as isize || ix < 0 || ix >= w as isize {
                                        continue;
                                    }
                                    acc += act[(ic * h + iy as usize) * w + ix as usize]
                                        * wt.data()[((oc * gch + icl) * 3 + ky) * 3 + kx];
                                }
                            }
                        }
                        cat[((ri * c + oc) * h + oy) * w + ox] = acc;
                    }
                }
            }
        }
        // projection on pre-activated concat
        let pw = params.get("proj.w");
        let pb = params.get("proj.b");
        let cat_act: Vec<f64> = cat
            .iter()
            .map(|v| if *v >= 0.0 { *v } else { v * slope })
            .collect();
        for oc in 0..c {
            for pix in 0..h * w {
                let mut acc = pb.data()[oc];
                for ic in 0..2 * c {
                    acc += cat_act[ic * h * w + pix] * pw.data()[oc * 2 * c + ic];
                }
                let got_v = got.data()[oc * h * w + pix];
                assert!(
                    (got_v - acc).abs() < 1e-9,
                    "mismatch at channel {oc} pixel {pix}: {got_v} vs {acc}"
                );
            }
        }
    }

    #[test]
    fn residual_identity_with_zero_weights() {
        let cfg = small_config();
        let params: ModelParams<f64> = build(&cfg, &mut Rng::new(6, Stream::Init)).unwrap();
        zero_weights(
            &params,
            &["mix.w", "mix.b", "ssdc.w", "ssdc.b", "proj.w", "proj.b"],
        );
        let x_feat = Tensor::from_vec(vec![1, 6, 4, 4], (0..96).map(|i| i as f64 * 0.01).collect());
        let y_prev = Tensor::from_vec(vec![1, 8, 4, 4], (0..128).map(|i| i as f64 * 0.02).collect());
        let mut rng = Rng::new(0, Stream::Dropout);
        let y = recurrent_step(&x_feat, &y_prev, &params, &cfg, false, &mut rng).unwrap();
        assert_eq!(y.data(), y_prev.data());
    }

    #[test]
    fn recurrent_step_deterministic() {
        let cfg = small_config();
        let params: ModelParams<f64> = build(&cfg, &mut Rng::new(7, Stream::Init)).unwrap();
        let x_feat = Tensor::from_vec(vec![1, 6, 4, 4], (0..96).map(|i| (i as f64).sin()).collect());
        let y_prev = Tensor::zeros(vec![1, 8, 4, 4]);
        let a = recurrent_step(&x_feat, &y_prev, &params, &cfg, true, &mut Rng::new(3, Stream::Dropout)).unwrap();
        let b = recurrent_step(&x_feat, &y_prev, &params, &cfg, true, &mut Rng::new(3, Stream::Dropout)).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn heads_probabilities_sum_to_one_and_full_resolution() {
        let cfg = small_config();
        let params: ModelParams<f64> = build(&cfg, &mut Rng::new(8, Stream::Init)).unwrap();
        let mut rng = Rng::new(9, Stream::Other(4));
        let image = Tensor::from_vec(
            vec![1, 3, 8, 8],
            (0..192).map(|_| rng.uniform(0.0, 1.0)).collect(),
        );
        let outputs = forward(&image, &params, &cfg, false, &mut Rng::new(0, Stream::Dropout)).unwrap();
        assert_eq!(outputs.len(), cfg.iterations);
        let (semantic, embeddings) = &outputs[0];
        assert_eq!(semantic.shape(), &[1, 2, 8, 8]);
        assert_eq!(embeddings.shape(), &[1, 2, 8, 8]);
        for pix in 0..64 {
            let s: f64 = (0..2).map(|c| semantic.data()[c * 64 + pix]).sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_head_weights_give_uniform_probs_and_coordinate_embeddings() {
        let cfg = small_config();
        let params: ModelParams<f64> = build(&cfg, &mut Rng::new(10, Stream::Init)).unwrap();
        zero_weights(&params, &["head.w", "head.b", "out.w", "out.b"]);
        let image = Tensor::from_vec(vec![1, 3, 4, 4], vec![0.3; 48]);
        let (semantic, embeddings) = infer(&image, &params, &cfg, 2).unwrap();
        for v in semantic.data() {
            assert!((*v - 0.5).abs() < 1e-12);
        }
        // zero displacement -> embeddings equal the coordinate grid
        let coords = coord_grid::<f64>(1, 4, 4);
        assert_eq!(embeddings.data(), coords.data());
    }

    #[test]
    fn zero_recurrent_weights_make_all_iterations_identical() {
        let cfg = small_config();
        let params: ModelParams<f64> = build(&cfg, &mut Rng::new(11, Stream::Init)).unwrap();
        zero_weights(
            &params,
            &["mix.w", "mix.b", "ssdc.w", "ssdc.b", "proj.w", "proj.b"],
        );
        let image = Tensor::from_vec(vec![1, 3, 4, 4], (0..48).map(|i| i as f64 * 0.01).collect());
        let outputs = forward(&image, &params, &cfg, false, &mut Rng::new(0, Stream::Dropout)).unwrap();
        let first = &outputs[0];
        for (sem, emb) in &outputs[1..] {
            assert_eq!(sem.data(), first.0.data());
            assert_eq!(emb.data(), first.1.data());
        }
    }

    #[test]
    fn indivisible_extent_is_usage_error() {
        let cfg = small_config();
        let params: ModelParams<f64> = build(&cfg, &mut Rng::new(12, Stream::Init)).unwrap();
        let image = Tensor::zeros(vec![1, 3, 5, 4]);
        let err = forward(&image, &params, &cfg, false, &mut Rng::new(0, Stream::Dropout)).unwrap_err();
        assert!(err.to_string().contains("pad"), "{err}");
    }

    #[test]
    fn semi_conv_constant_shift_and_roundtrip() {
        let coords = coord_grid::<f64>(1, 3, 3);
        let mut disp = vec![0.0; 18];
        for v in disp.iter_mut().take(9) {
            *v = 2.0;
        }
        for v in disp.iter_mut().skip(9) {
            *v = -3.0;
        }
        let displacement = Tensor::from_vec(vec![1, 2, 3, 3], disp);
        let emb = semi_conv(&displacement, &coords).unwrap();
        for i in 0..9 {
            assert_eq!(emb.data()[i], coords.data()[i] + 2.0);
            assert_eq!(emb.data()[9 + i], coords.data()[9 + i] - 3.0);
        }
        // round trip
        for i in 0..18 {
            assert_eq!(emb.data()[i] - coords.data()[i], displacement.data()[i]);
        }
    }
}
