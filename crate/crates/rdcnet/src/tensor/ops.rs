//! Differentiable elementwise, reduction and shape operations.

use super::{Scalar, Tensor, TensorError};
use crate::rng::Rng;

fn same_shape<T: Scalar>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    what: &'static str,
) -> Result<(), TensorError> {
    if a.shape() != b.shape() {
        return Err(TensorError::ShapeMismatch {
            what,
            expected: a.shape().to_vec(),
            got: b.shape().to_vec(),
        });
    }
    Ok(())
}

pub fn add<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
    same_shape(a, b, "add")?;
    let data = a.data().iter().zip(b.data()).map(|(x, y)| *x + *y).collect();
    Ok(Tensor::from_op(
        a.shape().to_vec(),
        data,
        vec![a.clone(), b.clone()],
        Box::new(|g| vec![Some(g.to_vec()), Some(g.to_vec())]),
    ))
}

pub fn sub<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
    same_shape(a, b, "sub")?;
    let data = a.data().iter().zip(b.data()).map(|(x, y)| *x - *y).collect();
    Ok(Tensor::from_op(
        a.shape().to_vec(),
        data,
        vec![a.clone(), b.clone()],
        Box::new(|g| {
            vec![
                Some(g.to_vec()),
                Some(g.iter().map(|v| -*v).collect()),
            ]
        }),
    ))
}

pub fn mul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
    same_shape(a, b, "mul")?;
    let data = a.data().iter().zip(b.data()).map(|(x, y)| *x * *y).collect();
    let (ac, bc) = (a.clone(), b.clone());
    Ok(Tensor::from_op(
        a.shape().to_vec(),
        data,
        vec![a.clone(), b.clone()],
        Box::new(move |g| {
            let da = g.iter().zip(bc.data()).map(|(g, y)| *g * *y).collect();
            let db = g.iter().zip(ac.data()).map(|(g, x)| *g * *x).collect();
            vec![Some(da), Some(db)]
        }),
    ))
}

pub fn div<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
    same_shape(a, b, "div")?;
    let data = a.data().iter().zip(b.data()).map(|(x, y)| *x / *y).collect();
    let (ac, bc) = (a.clone(), b.clone());
    Ok(Tensor::from_op(
        a.shape().to_vec(),
        data,
        vec![a.clone(), b.clone()],
        Box::new(move |g| {
            let da = g.iter().zip(bc.data()).map(|(g, y)| *g / *y).collect();
            let db = g
                .iter()
                .zip(ac.data().iter().zip(bc.data()))
                .map(|(g, (x, y))| -*g * *x / (*y * *y))
                .collect();
            vec![Some(da), Some(db)]
        }),
    ))
}

pub fn scale<T: Scalar>(x: &Tensor<T>, c: T) -> Tensor<T> {
    let data = x.data().iter().map(|v| *v * c).collect();
    Tensor::from_op(
        x.shape().to_vec(),
        data,
        vec![x.clone()],
        Box::new(move |g| vec![Some(g.iter().map(|v| *v * c).collect())]),
    )
}

pub fn add_const<T: Scalar>(x: &Tensor<T>, c: T) -> Tensor<T> {
    let data = x.data().iter().map(|v| *v + c).collect();
    Tensor::from_op(
        x.shape().to_vec(),
        data,
        vec![x.clone()],
        Box::new(|g| vec![Some(g.to_vec())]),
    )
}

pub fn exp<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let data: Vec<T> = x.data().iter().map(|v| v.exp()).collect();
    let out = data.clone();
    Tensor::from_op(
        x.shape().to_vec(),
        data,
        vec![x.clone()],
        Box::new(move |g| vec![Some(g.iter().zip(&out).map(|(g, y)| *g * *y).collect())]),
    )
}

/// Elementwise multiply by a constant (non-differentiated) weight vector.
pub fn mul_weights<T: Scalar>(x: &Tensor<T>, weights: &[T]) -> Tensor<T> {
    assert_eq!(x.len(), weights.len(), "mul_weights length mismatch");
    let data = x.data().iter().zip(weights).map(|(v, w)| *v * *w).collect();
    let w = weights.to_vec();
    Tensor::from_op(
        x.shape().to_vec(),
        data,
        vec![x.clone()],
        Box::new(move |g| vec![Some(g.iter().zip(&w).map(|(g, w)| *g * *w).collect())]),
    )
}

pub fn leaky_relu<T: Scalar>(x: &Tensor<T>, slope: T) -> Tensor<T> {
    let data = x
        .data()
        .iter()
        .map(|v| if *v >= T::zero() { *v } else { *v * slope })
        .collect();
    let input = x.data().to_vec();
    Tensor::from_op(
        x.shape().to_vec(),
        data,
        vec![x.clone()],
        Box::new(move |g| {
            let dx = g
                .iter()
                .zip(&input)
                .map(|(g, v)| if *v >= T::zero() { *g } else { *g * slope })
                .collect();
            vec![Some(dx)]
        }),
    )
}

/// Softmax along `axis`, stabilized by max subtraction.
pub fn softmax<T: Scalar>(x: &Tensor<T>, axis: usize) -> Result<Tensor<T>, TensorError> {
    let shape = x.shape().to_vec();
    if axis >= shape.len() {
        return Err(TensorError::Usage(format!(
            "softmax axis {axis} out of range for shape {shape:?}"
        )));
    }
    let axis_len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let src = x.data();
    let mut data = vec![T::zero(); src.len()];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * axis_len * inner + i;
            let mut max = T::neg_infinity();
            for a in 0..axis_len {
                max = max.max(src[base + a * inner]);
            }
            let mut sum = T::zero();
            for a in 0..axis_len {
                let e = (src[base + a * inner] - max).exp();
                data[base + a * inner] = e;
                sum += e;
            }
            for a in 0..axis_len {
                data[base + a * inner] /= sum;
            }
        }
    }
    let y = data.clone();
    Ok(Tensor::from_op(
        shape,
        data,
        vec![x.clone()],
        Box::new(move |g| {
            // dx = y * (g - sum(g * y along axis))
            let mut dx = vec![T::zero(); g.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let base = o * axis_len * inner + i;
                    let mut dot = T::zero();
                    for a in 0..axis_len {
                        let idx = base + a * inner;
                        dot += g[idx] * y[idx];
                    }
                    for a in 0..axis_len {
                        let idx = base + a * inner;
                        dx[idx] = y[idx] * (g[idx] - dot);
                    }
                }
            }
            vec![Some(dx)]
        }),
    ))
}

/// Channel-plane dropout for NCHW tensors: whole (sample, channel) planes
/// are zeroed with probability `p`; survivors are scaled by 1/(1-p).
pub fn spatial_dropout<T: Scalar>(
    x: &Tensor<T>,
    p: f64,
    training: bool,
    rng: &mut Rng,
) -> Result<Tensor<T>, TensorError> {
    if !(0.0..1.0).contains(&p) {
        return Err(TensorError::Config(format!(
            "dropout probability must be in [0,1), got {p}"
        )));
    }
    if !training || p == 0.0 {
        return Ok(Tensor::from_op(
            x.shape().to_vec(),
            x.data().to_vec(),
            vec![x.clone()],
            Box::new(|g| vec![Some(g.to_vec())]),
        ));
    }
    let shape = x.shape();
    assert_eq!(shape.len(), 4, "spatial_dropout expects NCHW");
    let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    let plane = h * w;
    let keep_scale = T::from_f64(1.0 / (1.0 - p));
    let mut plane_scale = vec![T::zero(); n * c];
    for s in plane_scale.iter_mut() {
        *s = if rng.bernoulli(p) { T::zero() } else { keep_scale };
    }
    let mut data = vec![T::zero(); x.len()];
    for pc in 0..n * c {
        let s = plane_scale[pc];
        let base = pc * plane;
        for i in 0..plane {
            data[base + i] = x.data()[base + i] * s;
        }
    }
    Ok(Tensor::from_op(
        x.shape().to_vec(),
        data,
        vec![x.clone()],
        Box::new(move |g| {
            let mut dx = vec![T::zero(); g.len()];
            for pc in 0..n * c {
                let s = plane_scale[pc];
                let base = pc * plane;
                for i in 0..plane {
                    dx[base + i] = g[base + i] * s;
                }
            }
            vec![Some(dx)]
        }),
    ))
}

pub fn sum_all<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let total = x.data().iter().fold(T::zero(), |acc, v| acc + *v);
    let n = x.len();
    Tensor::from_op(
        vec![1],
        vec![total],
        vec![x.clone()],
        Box::new(move |g| vec![Some(vec![g[0]; n])]),
    )
}

/// Weighted sum against constant weights, yielding a scalar.
pub fn weighted_sum<T: Scalar>(x: &Tensor<T>, weights: &[T]) -> Tensor<T> {
    assert_eq!(x.len(), weights.len());
    let total = x
        .data()
        .iter()
        .zip(weights)
        .fold(T::zero(), |acc, (v, w)| acc + *v * *w);
    let w = weights.to_vec();
    Tensor::from_op(
        vec![1],
        vec![total],
        vec![x.clone()],
        Box::new(move |g| vec![Some(w.iter().map(|w| g[0] * *w).collect())]),
    )
}

/// Sums a [C,H,W] tensor over its spatial axes, producing [C].
pub fn sum_spatial<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let shape = x.shape();
    assert_eq!(shape.len(), 3, "sum_spatial expects [C,H,W]");
    let (c, plane) = (shape[0], shape[1] * shape[2]);
    let mut data = vec![T::zero(); c];
    for ch in 0..c {
        for i in 0..plane {
            data[ch] += x.data()[ch * plane + i];
        }
    }
    Tensor::from_op(
        vec![c],
        data,
        vec![x.clone()],
        Box::new(move |g| {
            let mut dx = vec![T::zero(); c * plane];
            for ch in 0..c {
                for i in 0..plane {
                    dx[ch * plane + i] = g[ch];
                }
            }
            vec![Some(dx)]
        }),
    )
}

/// Sums a [C,H,W] tensor over channels, producing [H,W].
pub fn sum_channels<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let shape = x.shape();
    assert_eq!(shape.len(), 3, "sum_channels expects [C,H,W]");
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    let plane = h * w;
    let mut data = vec![T::zero(); plane];
    for ch in 0..c {
        for i in 0..plane {
            data[i] += x.data()[ch * plane + i];
        }
    }
    Tensor::from_op(
        vec![h, w],
        data,
        vec![x.clone()],
        Box::new(move |g| {
            let mut dx = vec![T::zero(); c * plane];
            for ch in 0..c {
                dx[ch * plane..(ch + 1) * plane].copy_from_slice(g);
            }
            vec![Some(dx)]
        }),
    )
}

/// Broadcasts a [C] vector over the spatial plane, producing [C,H,W].
pub fn broadcast_channels<T: Scalar>(x: &Tensor<T>, h: usize, w: usize) -> Tensor<T> {
    assert_eq!(x.shape().len(), 1, "broadcast_channels expects [C]");
    let c = x.shape()[0];
    let plane = h * w;
    let mut data = vec![T::zero(); c * plane];
    for ch in 0..c {
        let v = x.data()[ch];
        for i in 0..plane {
            data[ch * plane + i] = v;
        }
    }
    Tensor::from_op(
        vec![c, h, w],
        data,
        vec![x.clone()],
        Box::new(move |g| {
            let mut dx = vec![T::zero(); c];
            for ch in 0..c {
                for i in 0..plane {
                    dx[ch] += g[ch * plane + i];
                }
            }
            vec![Some(dx)]
        }),
    )
}

/// Concatenates NCHW tensors along the channel axis.
pub fn concat_channels<T: Scalar>(parts: &[Tensor<T>]) -> Result<Tensor<T>, TensorError> {
    assert!(!parts.is_empty());
    let first = parts[0].shape();
    assert_eq!(first.len(), 4, "concat_channels expects NCHW");
    let (n, h, w) = (first[0], first[2], first[3]);
    let mut channels = Vec::with_capacity(parts.len());
    for p in parts {
        let s = p.shape();
        if s.len() != 4 || s[0] != n || s[2] != h || s[3] != w {
            return Err(TensorError::ShapeMismatch {
                what: "concat_channels",
                expected: first.to_vec(),
                got: s.to_vec(),
            });
        }
        channels.push(s[1]);
    }
    let c_total: usize = channels.iter().sum();
    let plane = h * w;
    let mut data = vec![T::zero(); n * c_total * plane];
    for b in 0..n {
        let mut off = 0;
        for (p, &pc) in parts.iter().zip(&channels) {
            let src = &p.data()[b * pc * plane..(b + 1) * pc * plane];
            let dst = &mut data[(b * c_total + off) * plane..(b * c_total + off + pc) * plane];
            dst.copy_from_slice(src);
            off += pc;
        }
    }
    let ch = channels.clone();
    Ok(Tensor::from_op(
        vec![n, c_total, h, w],
        data,
        parts.to_vec(),
        Box::new(move |g| {
            let mut grads = Vec::with_capacity(ch.len());
            for (i, &pc) in ch.iter().enumerate() {
                let off: usize = ch[..i].iter().sum();
                let mut dp = vec![T::zero(); n * pc * plane];
                for b in 0..n {
                    let src = &g[(b * c_total + off) * plane..(b * c_total + off + pc) * plane];
                    dp[b * pc * plane..(b + 1) * pc * plane].copy_from_slice(src);
                }
                grads.push(Some(dp));
            }
            grads
        }),
    ))
}

/// Extracts channels [start, start+len) of an NCHW tensor.
pub fn narrow_channels<T: Scalar>(
    x: &Tensor<T>,
    start: usize,
    len: usize,
) -> Result<Tensor<T>, TensorError> {
    let s = x.shape();
    assert_eq!(s.len(), 4, "narrow_channels expects NCHW");
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    if start + len > c {
        return Err(TensorError::Usage(format!(
            "narrow_channels [{start}, {}) out of range for {c} channels",
            start + len
        )));
    }
    let plane = h * w;
    let mut data = vec![T::zero(); n * len * plane];
    for b in 0..n {
        let src = &x.data()[(b * c + start) * plane..(b * c + start + len) * plane];
        data[b * len * plane..(b + 1) * len * plane].copy_from_slice(src);
    }
    Ok(Tensor::from_op(
        vec![n, len, h, w],
        data,
        vec![x.clone()],
        Box::new(move |g| {
            let mut dx = vec![T::zero(); n * c * plane];
            for b in 0..n {
                let dst = &mut dx[(b * c + start) * plane..(b * c + start + len) * plane];
                dst.copy_from_slice(&g[b * len * plane..(b + 1) * len * plane]);
            }
            vec![Some(dx)]
        }),
    ))
}

/// Selects one batch item of an NCHW tensor, producing [C,H,W].
pub fn select_batch<T: Scalar>(x: &Tensor<T>, index: usize) -> Result<Tensor<T>, TensorError> {
    let s = x.shape();
    assert_eq!(s.len(), 4, "select_batch expects NCHW");
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    if index >= n {
        return Err(TensorError::Usage(format!(
            "batch index {index} out of range for {n}"
        )));
    }
    let item = c * h * w;
    let data = x.data()[index * item..(index + 1) * item].to_vec();
    Ok(Tensor::from_op(
        vec![c, h, w],
        data,
        vec![x.clone()],
        Box::new(move |g| {
            let mut dx = vec![T::zero(); n * item];
            dx[index * item..(index + 1) * item].copy_from_slice(g);
            vec![Some(dx)]
        }),
    ))
}

/// Mean of scalar tensors.
pub fn mean_scalars<T: Scalar>(items: &[Tensor<T>]) -> Result<Tensor<T>, TensorError> {
    assert!(!items.is_empty());
    let mut acc = items[0].clone();
    for item in &items[1..] {
        acc = add(&acc, item)?;
    }
    Ok(scale(&acc, T::from_f64(1.0 / items.len() as f64)))
}
