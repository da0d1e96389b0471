//! Grouped, dilated 2D convolution and its transposed counterpart.
//!
//! conv2d gathers patches into a column matrix (im2col) and multiplies with
//! the kernel matrix. conv2d_transpose is the exact linear adjoint of
//! conv2d with the same stride/padding, which the adjoint identity tests
//! pin down.

use rayon::prelude::*;

use super::{ParentGrads, Scalar, Tensor, TensorError};

/// out = a (m x k) * b (k x n), rows computed independently so the result
/// is bitwise deterministic regardless of thread count.
fn matmul<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    let row = |(i, out_row): (usize, &mut [T])| {
        for v in out_row.iter_mut() {
            *v = T::zero();
        }
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, bv) in out_row.iter_mut().zip(brow) {
                *o += av * *bv;
            }
        }
    };
    if m * n * k >= 32 * 1024 {
        out.par_chunks_mut(n).enumerate().for_each(row);
    } else {
        out.chunks_mut(n).enumerate().for_each(row);
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Conv2dSpec {
    pub stride: (usize, usize),
    pub dilation: (usize, usize),
    pub groups: usize,
    pub padding: (usize, usize),
}

impl Default for Conv2dSpec {
    fn default() -> Self {
        Conv2dSpec {
            stride: (1, 1),
            dilation: (1, 1),
            groups: 1,
            padding: (0, 0),
        }
    }
}

fn out_extent(
    input: usize,
    pad: usize,
    kernel: usize,
    dilation: usize,
    stride: usize,
) -> Option<usize> {
    let eff = (kernel - 1) * dilation + 1;
    let padded = input + 2 * pad;
    if padded < eff {
        return None;
    }
    Some((padded - eff) / stride + 1)
}

/// Gathers input patches of one (image, group) into a column matrix of
/// shape [cg*kh*kw, oh*ow].
#[allow(clippy::too_many_arguments)]
fn im2col<T: Scalar>(
    x: &[T],
    cg: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    spec: &Conv2dSpec,
    oh: usize,
    ow: usize,
    col: &mut [T],
) {
    let (sh, sw) = spec.stride;
    let (dh, dw) = spec.dilation;
    let (ph, pw) = spec.padding;
    for c in 0..cg {
        for ky in 0..kh {
            for kx in 0..kw {
                let row = ((c * kh + ky) * kw + kx) * oh * ow;
                for oy in 0..oh {
                    let iy = (oy * sh + ky * dh) as isize - ph as isize;
                    let dst = &mut col[row + oy * ow..row + (oy + 1) * ow];
                    if iy < 0 || iy >= h as isize {
                        for v in dst.iter_mut() {
                            *v = T::zero();
                        }
                        continue;
                    }
                    let src_row = &x[c * h * w + iy as usize * w..c * h * w + (iy as usize + 1) * w];
                    for (ox, v) in dst.iter_mut().enumerate() {
                        let ix = (ox * sw + kx * dw) as isize - pw as isize;
                        *v = if ix < 0 || ix >= w as isize {
                            T::zero()
                        } else {
                            src_row[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Scatter-adds a column matrix back into the input layout (adjoint of
/// im2col).
#[allow(clippy::too_many_arguments)]
fn col2im<T: Scalar>(
    col: &[T],
    cg: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    spec: &Conv2dSpec,
    oh: usize,
    ow: usize,
    x: &mut [T],
) {
    let (sh, sw) = spec.stride;
    let (dh, dw) = spec.dilation;
    let (ph, pw) = spec.padding;
    for c in 0..cg {
        for ky in 0..kh {
            for kx in 0..kw {
                let row = ((c * kh + ky) * kw + kx) * oh * ow;
                for oy in 0..oh {
                    let iy = (oy * sh + ky * dh) as isize - ph as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..ow {
                        let ix = (ox * sw + kx * dw) as isize - pw as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        x[c * h * w + iy as usize * w + ix as usize] += col[row + oy * ow + ox];
                    }
                }
            }
        }
    }
}

struct ConvDims {
    n: usize,
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
}

fn check_conv_shapes<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    spec: &Conv2dSpec,
) -> Result<ConvDims, TensorError> {
    let xs = x.shape();
    let ws = weight.shape();
    if xs.len() != 4 {
        return Err(TensorError::Config(format!(
            "conv2d input must be NCHW, got shape {xs:?}"
        )));
    }
    if ws.len() != 4 {
        return Err(TensorError::Config(format!(
            "conv2d weight must be [out,in/groups,kh,kw], got shape {ws:?}"
        )));
    }
    let (n, c_in, h, w) = (xs[0], xs[1], xs[2], xs[3]);
    let (c_out, wc, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
    let g = spec.groups;
    if g == 0 || spec.stride.0 == 0 || spec.stride.1 == 0 || spec.dilation.0 == 0 || spec.dilation.1 == 0
    {
        return Err(TensorError::Config(
            "stride, dilation and groups must be positive".into(),
        ));
    }
    if c_in % g != 0 {
        return Err(TensorError::Config(format!(
            "input channels {c_in} not divisible by groups {g}"
        )));
    }
    if c_out % g != 0 {
        return Err(TensorError::Config(format!(
            "output channels {c_out} not divisible by groups {g}"
        )));
    }
    if wc != c_in / g {
        return Err(TensorError::Config(format!(
            "weight in-channel dim {wc} does not match input channels {c_in} / groups {g}"
        )));
    }
    if let Some(b) = bias {
        if b.shape() != [c_out] {
            return Err(TensorError::ShapeMismatch {
                what: "conv2d bias",
                expected: vec![c_out],
                got: b.shape().to_vec(),
            });
        }
    }
    let oh = out_extent(h, spec.padding.0, kh, spec.dilation.0, spec.stride.0);
    let ow = out_extent(w, spec.padding.1, kw, spec.dilation.1, spec.stride.1);
    match (oh, ow) {
        (Some(oh), Some(ow)) if oh > 0 && ow > 0 => Ok(ConvDims {
            n,
            c_in,
            h,
            w,
            c_out,
            kh,
            kw,
            oh,
            ow,
        }),
        _ => Err(TensorError::Config(format!(
            "zero-size convolution output for input {h}x{w}, kernel {kh}x{kw}, spec {spec:?}"
        ))),
    }
}

fn conv2d_forward<T: Scalar>(
    x: &[T],
    weight: &[T],
    bias: Option<&[T]>,
    d: &ConvDims,
    spec: &Conv2dSpec,
    out: &mut [T],
) {
    let g = spec.groups;
    let (cg_in, cg_out) = (d.c_in / g, d.c_out / g);
    let k = cg_in * d.kh * d.kw;
    let plane_out = d.oh * d.ow;
    let mut col = vec![T::zero(); k * plane_out];
    for b in 0..d.n {
        for gi in 0..g {
            let x_group = &x[(b * d.c_in + gi * cg_in) * d.h * d.w
                ..(b * d.c_in + (gi + 1) * cg_in) * d.h * d.w];
            im2col(x_group, cg_in, d.h, d.w, d.kh, d.kw, spec, d.oh, d.ow, &mut col);
            let w_group = &weight[gi * cg_out * k..(gi + 1) * cg_out * k];
            let out_group = &mut out[(b * d.c_out + gi * cg_out) * plane_out
                ..(b * d.c_out + (gi + 1) * cg_out) * plane_out];
            matmul(w_group, &col, cg_out, k, plane_out, out_group);
        }
    }
    if let Some(bias) = bias {
        for b in 0..d.n {
            for c in 0..d.c_out {
                let bv = bias[c];
                for v in &mut out[(b * d.c_out + c) * plane_out..(b * d.c_out + c + 1) * plane_out]
                {
                    *v += bv;
                }
            }
        }
    }
}

/// dX and dW for conv2d, given dY.
#[allow(clippy::too_many_arguments)]
fn conv2d_backward<T: Scalar>(
    x: &[T],
    weight: &[T],
    grad_out: &[T],
    d: &ConvDims,
    spec: &Conv2dSpec,
    dx: &mut [T],
    dw: &mut [T],
) {
    let g = spec.groups;
    let (cg_in, cg_out) = (d.c_in / g, d.c_out / g);
    let k = cg_in * d.kh * d.kw;
    let plane_out = d.oh * d.ow;
    let mut col = vec![T::zero(); k * plane_out];
    let mut col_grad = vec![T::zero(); k * plane_out];
    // dW[g] += dY[g] * col^T; dX[g] = col2im(W[g]^T * dY[g])
    let mut wt = vec![T::zero(); k * cg_out];
    for b in 0..d.n {
        for gi in 0..g {
            let x_group = &x[(b * d.c_in + gi * cg_in) * d.h * d.w
                ..(b * d.c_in + (gi + 1) * cg_in) * d.h * d.w];
            im2col(x_group, cg_in, d.h, d.w, d.kh, d.kw, spec, d.oh, d.ow, &mut col);
            let go_group = &grad_out[(b * d.c_out + gi * cg_out) * plane_out
                ..(b * d.c_out + (gi + 1) * cg_out) * plane_out];
            // dW: [cg_out, k] += go [cg_out, plane] * col^T [plane, k]
            let dw_group = &mut dw[gi * cg_out * k..(gi + 1) * cg_out * k];
            for oc in 0..cg_out {
                let go_row = &go_group[oc * plane_out..(oc + 1) * plane_out];
                let dw_row = &mut dw_group[oc * k..(oc + 1) * k];
                for p in 0..k {
                    let col_row = &col[p * plane_out..(p + 1) * plane_out];
                    let mut acc = T::zero();
                    for (gv, cv) in go_row.iter().zip(col_row) {
                        acc += *gv * *cv;
                    }
                    dw_row[p] += acc;
                }
            }
            // col_grad = W^T [k, cg_out] * go [cg_out, plane]
            let w_group = &weight[gi * cg_out * k..(gi + 1) * cg_out * k];
            for p in 0..k {
                for oc in 0..cg_out {
                    wt[p * cg_out + oc] = w_group[oc * k + p];
                }
            }
            matmul(&wt, go_group, k, cg_out, plane_out, &mut col_grad);
            let dx_group = &mut dx[(b * d.c_in + gi * cg_in) * d.h * d.w
                ..(b * d.c_in + (gi + 1) * cg_in) * d.h * d.w];
            col2im(
                &col_grad, cg_in, d.h, d.w, d.kh, d.kw, spec, d.oh, d.ow, dx_group,
            );
        }
    }
}

/// Grouped, dilated 2D convolution over an NCHW tensor.
pub fn conv2d<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    spec: Conv2dSpec,
) -> Result<Tensor<T>, TensorError> {
    let d = check_conv_shapes(x, weight, bias, &spec)?;
    let mut out = vec![T::zero(); d.n * d.c_out * d.oh * d.ow];
    conv2d_forward(
        x.data(),
        weight.data(),
        bias.map(|b| b.data()),
        &d,
        &spec,
        &mut out,
    );
    let shape = vec![d.n, d.c_out, d.oh, d.ow];
    let mut parents = vec![x.clone(), weight.clone()];
    if let Some(b) = bias {
        parents.push(b.clone());
    }
    let (xc, wc) = (x.clone(), weight.clone());
    let has_bias = bias.is_some();
    Ok(Tensor::from_op(
        shape,
        out,
        parents,
        Box::new(move |g| {
            let d = ConvDims { ..conv_dims_copy(&d) };
            let mut dx = vec![T::zero(); xc.len()];
            let mut dw = vec![T::zero(); wc.len()];
            conv2d_backward(xc.data(), wc.data(), g, &d, &spec, &mut dx, &mut dw);
            let mut grads: ParentGrads<T> = vec![Some(dx), Some(dw)];
            if has_bias {
                let plane_out = d.oh * d.ow;
                let mut db = vec![T::zero(); d.c_out];
                for b in 0..d.n {
                    for c in 0..d.c_out {
                        for v in &g[(b * d.c_out + c) * plane_out..(b * d.c_out + c + 1) * plane_out]
                        {
                            db[c] += *v;
                        }
                    }
                }
                grads.push(Some(db));
            }
            grads
        }),
    ))
}

fn conv_dims_copy(d: &ConvDims) -> ConvDims {
    ConvDims {
        n: d.n,
        c_in: d.c_in,
        h: d.h,
        w: d.w,
        c_out: d.c_out,
        kh: d.kh,
        kw: d.kw,
        oh: d.oh,
        ow: d.ow,
    }
}

/// Transposed convolution. The weight uses the conv2d convention
/// [conv_out, conv_in, kh, kw]: this op maps a tensor with `conv_out`
/// channels back to `conv_in` channels and is the linear adjoint of
/// [`conv2d`] with the same stride and padding (groups 1, dilation 1).
pub fn conv2d_transpose<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: (usize, usize),
    padding: (usize, usize),
) -> Result<Tensor<T>, TensorError> {
    let xs = x.shape();
    let ws = weight.shape();
    if xs.len() != 4 || ws.len() != 4 {
        return Err(TensorError::Config(format!(
            "conv2d_transpose expects NCHW input and 4D weight, got {xs:?} / {ws:?}"
        )));
    }
    let (n, c_in, h, w) = (xs[0], xs[1], xs[2], xs[3]);
    let (wc_in, c_out, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
    if wc_in != c_in {
        return Err(TensorError::Config(format!(
            "conv2d_transpose weight expects {wc_in} input channels, tensor has {c_in}"
        )));
    }
    let (sh, sw) = stride;
    let (ph, pw) = padding;
    if sh == 0 || sw == 0 {
        return Err(TensorError::Config("stride must be positive".into()));
    }
    let oh = ((h - 1) * sh + kh).checked_sub(2 * ph);
    let ow = ((w - 1) * sw + kw).checked_sub(2 * pw);
    let (oh, ow) = match (oh, ow) {
        (Some(oh), Some(ow)) if oh > 0 && ow > 0 => (oh, ow),
        _ => {
            return Err(TensorError::Config(format!(
                "zero-size transposed convolution output for input {h}x{w}, kernel {kh}x{kw}"
            )))
        }
    };
    if let Some(b) = bias {
        if b.shape() != [c_out] {
            return Err(TensorError::ShapeMismatch {
                what: "conv2d_transpose bias",
                expected: vec![c_out],
                got: b.shape().to_vec(),
            });
        }
    }

    let mut out = vec![T::zero(); n * c_out * oh * ow];
    let xd = x.data();
    let wd = weight.data();
    // Scatter each input pixel through the kernel.
    for b in 0..n {
        for ic in 0..c_in {
            let x_plane = &xd[(b * c_in + ic) * h * w..(b * c_in + ic + 1) * h * w];
            for oc in 0..c_out {
                let w_plane = &wd[(ic * c_out + oc) * kh * kw..(ic * c_out + oc + 1) * kh * kw];
                let out_plane =
                    &mut out[(b * c_out + oc) * oh * ow..(b * c_out + oc + 1) * oh * ow];
                for iy in 0..h {
                    for ix in 0..w {
                        let v = x_plane[iy * w + ix];
                        if v == T::zero() {
                            continue;
                        }
                        for ky in 0..kh {
                            let oy = (iy * sh + ky) as isize - ph as isize;
                            if oy < 0 || oy >= oh as isize {
                                continue;
                            }
                            for kx in 0..kw {
                                let ox = (ix * sw + kx) as isize - pw as isize;
                                if ox < 0 || ox >= ow as isize {
                                    continue;
                                }
                                out_plane[oy as usize * ow + ox as usize] +=
                                    v * w_plane[ky * kw + kx];
                            }
                        }
                    }
                }
            }
        }
    }
    if let Some(b) = bias {
        for bi in 0..n {
            for oc in 0..c_out {
                let bv = b.data()[oc];
                for v in &mut out[(bi * c_out + oc) * oh * ow..(bi * c_out + oc + 1) * oh * ow] {
                    *v += bv;
                }
            }
        }
    }

    let shape = vec![n, c_out, oh, ow];
    let mut parents = vec![x.clone(), weight.clone()];
    if let Some(b) = bias {
        parents.push(b.clone());
    }
    let (xc, wcl) = (x.clone(), weight.clone());
    let has_bias = bias.is_some();
    Ok(Tensor::from_op(
        shape,
        out,
        parents,
        Box::new(move |g| {
            let xd = xc.data();
            let wd = wcl.data();
            let mut dx = vec![T::zero(); xc.len()];
            let mut dw = vec![T::zero(); wcl.len()];
            // dX: gather (a conv2d of dY with the same kernel).
            for b in 0..n {
                for ic in 0..c_in {
                    let dx_plane =
                        &mut dx[(b * c_in + ic) * h * w..(b * c_in + ic + 1) * h * w];
                    for oc in 0..c_out {
                        let w_plane =
                            &wd[(ic * c_out + oc) * kh * kw..(ic * c_out + oc + 1) * kh * kw];
                        let g_plane =
                            &g[(b * c_out + oc) * oh * ow..(b * c_out + oc + 1) * oh * ow];
                        for iy in 0..h {
                            for ix in 0..w {
                                let mut acc = T::zero();
                                for ky in 0..kh {
                                    let oy = (iy * sh + ky) as isize - ph as isize;
                                    if oy < 0 || oy >= oh as isize {
                                        continue;
                                    }
                                    for kx in 0..kw {
                                        let ox = (ix * sw + kx) as isize - pw as isize;
                                        if ox < 0 || ox >= ow as isize {
                                            continue;
                                        }
                                        acc += g_plane[oy as usize * ow + ox as usize]
                                            * w_plane[ky * kw + kx];
                                    }
                                }
                                dx_plane[iy * w + ix] += acc;
                            }
                        }
                    }
                }
            }
            // dW
            for b in 0..n {
                for ic in 0..c_in {
                    let x_plane = &xd[(b * c_in + ic) * h * w..(b * c_in + ic + 1) * h * w];
                    for oc in 0..c_out {
                        let dw_plane = &mut dw
                            [(ic * c_out + oc) * kh * kw..(ic * c_out + oc + 1) * kh * kw];
                        let g_plane =
                            &g[(b * c_out + oc) * oh * ow..(b * c_out + oc + 1) * oh * ow];
                        for iy in 0..h {
                            for ix in 0..w {
                                let v = x_plane[iy * w + ix];
                                if v == T::zero() {
                                    continue;
                                }
                                for ky in 0..kh {
                                    let oy = (iy * sh + ky) as isize - ph as isize;
                                    if oy < 0 || oy >= oh as isize {
                                        continue;
                                    }
                                    for kx in 0..kw {
                                        let ox = (ix * sw + kx) as isize - pw as isize;
                                        if ox < 0 || ox >= ow as isize {
                                            continue;
                                        }
                                        dw_plane[ky * kw + kx] +=
                                            v * g_plane[oy as usize * ow + ox as usize];
                                    }
                                }
                            }
                        }
                    }
                }
            }
            let mut grads: ParentGrads<T> = vec![Some(dx), Some(dw)];
            if has_bias {
                let mut db = vec![T::zero(); c_out];
                for b in 0..n {
                    for oc in 0..c_out {
                        for v in &g[(b * c_out + oc) * oh * ow..(b * c_out + oc + 1) * oh * ow] {
                            db[oc] += *v;
                        }
                    }
                }
                grads.push(Some(db));
            }
            grads
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::ops::sum_all;

    #[test]
    fn pointwise_identity_kernel() {
        // 1x1 kernel = identity matrix over channels -> output equals input.
        let x = Tensor::from_vec(vec![1, 2, 3, 3], (0..18).map(|i| i as f64).collect());
        let w = Tensor::from_vec(vec![2, 2, 1, 1], vec![1.0, 0.0, 0.0, 1.0]);
        let y = conv2d(&x, &w, None, Conv2dSpec::default()).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn ones_kernel_interior_sum() {
        // 3x3 all-ones kernel on constant input, zero padding 1: interior 9c.
        let c = 2.5f64;
        let x = Tensor::full(vec![1, 1, 5, 5], c);
        let w = Tensor::full(vec![1, 1, 3, 3], 1.0);
        let spec = Conv2dSpec {
            padding: (1, 1),
            ..Default::default()
        };
        let y = conv2d(&x, &w, None, spec).unwrap();
        assert_eq!(y.shape(), &[1, 1, 5, 5]);
        // interior pixel
        assert!((y.data()[2 * 5 + 2] - 9.0 * c).abs() < 1e-12);
        // corner pixel sees a 2x2 window
        assert!((y.data()[0] - 4.0 * c).abs() < 1e-12);
    }

    #[test]
    fn dilation_shape_formula() {
        // dilation 2, kernel 3 -> effective extent 5.
        let x = Tensor::<f64>::zeros(vec![1, 1, 7, 7]);
        let w = Tensor::<f64>::zeros(vec![1, 1, 3, 3]);
        let spec = Conv2dSpec {
            dilation: (2, 2),
            ..Default::default()
        };
        let y = conv2d(&x, &w, None, spec).unwrap();
        assert_eq!(y.shape(), &[1, 1, 3, 3]);
    }

    #[test]
    fn zero_output_is_config_error() {
        let x = Tensor::<f64>::zeros(vec![1, 1, 2, 2]);
        let w = Tensor::<f64>::zeros(vec![1, 1, 5, 5]);
        assert!(matches!(
            conv2d(&x, &w, None, Conv2dSpec::default()),
            Err(TensorError::Config(_))
        ));
    }

    #[test]
    fn group_mismatch_is_config_error() {
        let x = Tensor::<f64>::zeros(vec![1, 3, 4, 4]);
        let w = Tensor::<f64>::zeros(vec![2, 1, 3, 3]);
        let spec = Conv2dSpec {
            groups: 2,
            ..Default::default()
        };
        let err = conv2d(&x, &w, None, spec).unwrap_err();
        assert!(err.to_string().contains("divisible"), "{err}");
    }

    #[test]
    fn transpose_shape_formula() {
        // H=8, stride=2, kh=4, pad=1 -> output H=16.
        let x = Tensor::<f64>::zeros(vec![1, 3, 8, 8]);
        let w = Tensor::<f64>::zeros(vec![3, 2, 4, 4]);
        let y = conv2d_transpose(&x, &w, None, (2, 2), (1, 1)).unwrap();
        assert_eq!(y.shape(), &[1, 2, 16, 16]);
        assert!(y.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn adjoint_identity() {
        // <conv2d(x,w), y> == <x, conv2d_transpose(y,w)> on random inputs.
        let mut rng = crate::rng::Rng::new(11, crate::rng::Stream::Other(1));
        for &(cin, cout, h, w, kh, stride, pad) in &[
            (1usize, 1usize, 5usize, 5usize, 3usize, 1usize, 1usize),
            (2, 4, 9, 9, 3, 2, 1),
            (2, 3, 8, 6, 4, 2, 1),
            (3, 2, 8, 8, 2, 2, 0),
        ] {
            let x = Tensor::from_vec(
                vec![1, cin, h, w],
                (0..cin * h * w).map(|_| rng.normal(0.0, 1.0)).collect(),
            );
            let weight = Tensor::from_vec(
                vec![cout, cin, kh, kh],
                (0..cout * cin * kh * kh)
                    .map(|_| rng.normal(0.0, 1.0))
                    .collect(),
            );
            let spec = Conv2dSpec {
                stride: (stride, stride),
                padding: (pad, pad),
                ..Default::default()
            };
            let cx = conv2d(&x, &weight, None, spec).unwrap();
            let y = Tensor::from_vec(
                cx.shape().to_vec(),
                (0..cx.len()).map(|_| rng.normal(0.0, 1.0)).collect(),
            );
            let ty = conv2d_transpose(&y, &weight, None, (stride, stride), (pad, pad)).unwrap();
            assert_eq!(ty.shape(), x.shape());
            let lhs: f64 = cx.data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
            let rhs: f64 = x.data().iter().zip(ty.data()).map(|(a, b)| a * b).sum();
            let denom = lhs.abs().max(rhs.abs()).max(1e-12);
            assert!(
                ((lhs - rhs) / denom).abs() < 1e-5,
                "adjoint identity violated: {lhs} vs {rhs}"
            );
        }
    }

    #[test]
    fn grouped_dilated_matches_direct_loop() {
        // Independent nested-loop oracle over a grouped dilated conv.
        let (n, cin, cout, h, w, g, kh, dil) = (1usize, 4usize, 4usize, 6, 6, 2usize, 3, 2);
        let mut rng = crate::rng::Rng::new(5, crate::rng::Stream::Other(2));
        let x = Tensor::from_vec(
            vec![n, cin, h, w],
            (0..cin * h * w).map(|_| rng.normal(0.0, 1.0)).collect(),
        );
        let weight = Tensor::from_vec(
            vec![cout, cin / g, kh, kh],
            (0..cout * (cin / g) * kh * kh)
                .map(|_| rng.normal(0.0, 1.0))
                .collect(),
        );
        let bias = Tensor::from_vec(vec![cout], (0..cout).map(|_| rng.normal(0.0, 1.0)).collect());
        let pad = dil; // "same" for k=3
        let spec = Conv2dSpec {
            dilation: (dil, dil),
            groups: g,
            padding: (pad, pad),
            ..Default::default()
        };
        let yt = conv2d(&x, &weight, Some(&bias), spec).unwrap();
        assert_eq!(yt.shape(), &[n, cout, h, w]);
        let cg_in = cin / g;
        let cg_out = cout / g;
        for oc in 0..cout {
            let gi = oc / cg_out;
            for oy in 0..h {
                for ox in 0..w {
                    let mut acc = bias.data()[oc];
                    for icl in 0..cg_in {
                        let ic = gi * cg_in + icl;
                        for ky in 0..kh {
                            for kx in 0..kh {
                                let iy = oy as isize + (ky as isize) * dil as isize - pad as isize;
                                let ix = ox as isize + (kx as isize) * dil as isize - pad as isize;
                                if iy < 0 || iy >= h as isize || ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                acc += x.data()[(ic * h + iy as usize) * w + ix as usize]
                                    * weight.data()[((oc * cg_in + icl) * kh + ky) * kh + kx];
                            }
                        }
                    }
                    let got = yt.data()[(oc * h + oy) * w + ox];
                    assert!((got - acc).abs() < 1e-9, "mismatch at {oc},{oy},{ox}");
                }
            }
        }
    }

    #[test]
    fn conv_backward_flows_to_all_parents() {
        let x = Tensor::from_vec(vec![1, 1, 3, 3], (0..9).map(|i| i as f64).collect()).tracked();
        let w = Tensor::full(vec![1, 1, 2, 2], 1.0f64).tracked();
        let b = Tensor::from_vec(vec![1], vec![0.5f64]).tracked();
        let y = conv2d(&x, &w, Some(&b), Conv2dSpec::default()).unwrap();
        sum_all(&y).backward().unwrap();
        assert!(x.grad().iter().any(|v| *v != 0.0));
        assert!(w.grad().iter().all(|v| *v != 0.0));
        assert_eq!(b.grad(), vec![4.0]); // 2x2 output positions
    }
}
