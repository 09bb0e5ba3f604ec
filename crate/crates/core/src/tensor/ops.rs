//! Forward and backward kernels. Every function here is pure: it reads its
//! inputs and returns fresh buffers, except for the batch-norm running
//! statistics which train mode updates in place.
//!
//! Convolutions go through im2col/col2im and a single GEMM over the whole
//! batch. Layouts are row-major NCHW; conv weights are `[Cout, Cin, kh, kw]`
//! and transposed-conv weights `[Cin, Cout, kh, kw]`.

use serde::{Deserialize, Serialize};

use super::gemm::{gemm, MatMut, MatRef};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

fn dims4<T: Scalar>(op: &'static str, t: &Tensor<T>) -> Result<[usize; 4]> {
    match *t.shape() {
        [a, b, c, d] => Ok([a, b, c, d]),
        ref s => Err(Error::shape(op, format!("expected a 4-d tensor, got {s:?}"))),
    }
}

fn tensor<T: Scalar>(shape: &[usize], data: Vec<T>) -> Tensor<T> {
    Tensor::new(shape.to_vec(), data).expect("kernel produced consistent shape")
}

// ---------------------------------------------------------------- linear

/// `y[i, j] = sum_k x[i, k] * w[j, k] + b[j]`.
pub fn linear_forward<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (batch, fan_in, fan_out) = linear_dims(x, w, b)?;
    let mut y = Vec::with_capacity(batch * fan_out);
    for _ in 0..batch {
        y.extend_from_slice(b.data());
    }
    gemm(
        T::ONE,
        MatRef::row_major(x.data(), batch, fan_in),
        MatRef::row_major(w.data(), fan_out, fan_in).t(),
        T::ONE,
        MatMut::row_major(&mut y, batch, fan_out),
    );
    Ok(tensor(&[batch, fan_out], y))
}

/// Returns `(dx, dw, db)`.
pub fn linear_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dy: &[T],
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let batch = x.shape()[0];
    let fan_in = x.shape()[1];
    let fan_out = w.shape()[0];
    let mut dx = vec![T::ZERO; batch * fan_in];
    gemm(
        T::ONE,
        MatRef::row_major(dy, batch, fan_out),
        MatRef::row_major(w.data(), fan_out, fan_in),
        T::ZERO,
        MatMut::row_major(&mut dx, batch, fan_in),
    );
    let mut dw = vec![T::ZERO; fan_out * fan_in];
    gemm(
        T::ONE,
        MatRef::row_major(dy, batch, fan_out).t(),
        MatRef::row_major(x.data(), batch, fan_in),
        T::ZERO,
        MatMut::row_major(&mut dw, fan_out, fan_in),
    );
    let mut db = vec![T::ZERO; fan_out];
    for row in dy.chunks_exact(fan_out) {
        for (acc, &g) in db.iter_mut().zip(row) {
            *acc += g;
        }
    }
    (dx, dw, db)
}

fn linear_dims<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<(usize, usize, usize)> {
    let (&[batch, fan_in], &[fan_out, w_in]) = (x.shape(), w.shape()) else {
        return Err(Error::shape(
            "linear",
            format!("expected x [B,in] and W [out,in], got {:?} and {:?}", x.shape(), w.shape()),
        ));
    };
    if fan_in != w_in {
        return Err(Error::shape(
            "linear",
            format!("input width {fan_in} does not match weight width {w_in}"),
        ));
    }
    if b.shape() != [fan_out] {
        return Err(Error::shape(
            "linear",
            format!("bias shape {:?}, expected [{fan_out}]", b.shape()),
        ));
    }
    Ok((batch, fan_in, fan_out))
}

// ----------------------------------------------------------- convolution

/// Kernel size, stride and zero padding, shared by both spatial axes
/// (the kernel itself may be rectangular).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvGeometry {
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeometry {
    pub fn square(kernel: usize, stride: usize, pad: usize) -> Self {
        Self {
            kernel_h: kernel,
            kernel_w: kernel,
            stride,
            pad,
        }
    }

    /// Output size of a cross-correlation over an input of `size`.
    pub fn conv_out(&self, op: &'static str, h: usize, w: usize) -> Result<(usize, usize)> {
        if self.stride == 0 {
            return Err(Error::shape(op, "stride must be positive"));
        }
        let (ph, pw) = (h + 2 * self.pad, w + 2 * self.pad);
        if ph < self.kernel_h || pw < self.kernel_w {
            return Err(Error::shape(
                op,
                format!(
                    "padded input {ph}x{pw} smaller than kernel {}x{}",
                    self.kernel_h, self.kernel_w
                ),
            ));
        }
        Ok((
            (ph - self.kernel_h) / self.stride + 1,
            (pw - self.kernel_w) / self.stride + 1,
        ))
    }

    /// Output size of the transposed convolution over an input of `size`.
    pub fn transpose_out(&self, op: &'static str, h: usize, w: usize) -> Result<(usize, usize)> {
        if self.stride == 0 {
            return Err(Error::shape(op, "stride must be positive"));
        }
        let out = |n: usize, k: usize| -> Option<usize> {
            ((n - 1) * self.stride + k).checked_sub(2 * self.pad).filter(|&o| o > 0)
        };
        match (out(h, self.kernel_h), out(w, self.kernel_w)) {
            (Some(oh), Some(ow)) => {
                // The transposed map must be the exact adjoint of a conv over
                // the output size, otherwise the geometry is ambiguous.
                if self.conv_out(op, oh, ow)? != (h, w) {
                    return Err(Error::shape(op, format!("geometry {self:?} is not invertible for {h}x{w}")));
                }
                Ok((oh, ow))
            }
            _ => Err(Error::shape(
                op,
                format!("geometry {self:?} gives an empty output for {h}x{w}"),
            )),
        }
    }
}

/// `[B, C, H, W]` image batch to `[C*kh*kw, B*Ho*Wo]` patch columns.
fn im2col<T: Scalar>(
    x: &[T],
    [batch, channels, h, w]: [usize; 4],
    g: ConvGeometry,
    (ho, wo): (usize, usize),
) -> Vec<T> {
    let ncols = batch * ho * wo;
    let mut cols = vec![T::ZERO; channels * g.kernel_h * g.kernel_w * ncols];
    let (s, p) = (g.stride as isize, g.pad as isize);
    for c in 0..channels {
        for ki in 0..g.kernel_h {
            for kj in 0..g.kernel_w {
                let row = (c * g.kernel_h + ki) * g.kernel_w + kj;
                let dst_row = &mut cols[row * ncols..(row + 1) * ncols];
                for b in 0..batch {
                    let plane = &x[(b * channels + c) * h * w..][..h * w];
                    for oy in 0..ho {
                        let iy = oy as isize * s + ki as isize - p;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let src = &plane[iy as usize * w..][..w];
                        let dst = &mut dst_row[(b * ho + oy) * wo..][..wo];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = ox as isize * s + kj as isize - p;
                            if ix >= 0 && ix < w as isize {
                                *d = src[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-add patch columns back into an image batch.
fn col2im<T: Scalar>(
    cols: &[T],
    [batch, channels, h, w]: [usize; 4],
    g: ConvGeometry,
    (ho, wo): (usize, usize),
) -> Vec<T> {
    let ncols = batch * ho * wo;
    let mut x = vec![T::ZERO; batch * channels * h * w];
    let (s, p) = (g.stride as isize, g.pad as isize);
    for c in 0..channels {
        for ki in 0..g.kernel_h {
            for kj in 0..g.kernel_w {
                let row = (c * g.kernel_h + ki) * g.kernel_w + kj;
                let src_row = &cols[row * ncols..(row + 1) * ncols];
                for b in 0..batch {
                    let plane = &mut x[(b * channels + c) * h * w..][..h * w];
                    for oy in 0..ho {
                        let iy = oy as isize * s + ki as isize - p;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * w..][..w];
                        let src = &src_row[(b * ho + oy) * wo..][..wo];
                        for (ox, &v) in src.iter().enumerate() {
                            let ix = ox as isize * s + kj as isize - p;
                            if ix >= 0 && ix < w as isize {
                                dst[ix as usize] += v;
                            }
                        }
                    }
                }
            }
        }
    }
    x
}

/// `[B, C, HW]` to `[C, B*HW]`.
fn to_channel_major<T: Scalar>(x: &[T], batch: usize, channels: usize, hw: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(x.len());
    for c in 0..channels {
        for b in 0..batch {
            out.extend_from_slice(&x[(b * channels + c) * hw..][..hw]);
        }
    }
    out
}

/// `[C, B*HW]` to `[B, C, HW]`, adding a per-channel bias.
fn from_channel_major<T: Scalar>(
    x: &[T],
    batch: usize,
    channels: usize,
    hw: usize,
    bias: Option<&[T]>,
) -> Vec<T> {
    let mut out = Vec::with_capacity(x.len());
    for b in 0..batch {
        for c in 0..channels {
            let src = &x[(c * batch + b) * hw..][..hw];
            match bias {
                Some(bias) => out.extend(src.iter().map(|&v| v + bias[c])),
                None => out.extend_from_slice(src),
            }
        }
    }
    out
}

fn channel_sums<T: Scalar>(dy: &[T], batch: usize, channels: usize, hw: usize) -> Vec<T> {
    let mut db = vec![T::ZERO; channels];
    for b in 0..batch {
        for (c, acc) in db.iter_mut().enumerate() {
            for &g in &dy[(b * channels + c) * hw..][..hw] {
                *acc += g;
            }
        }
    }
    db
}

fn check_bias<T: Scalar>(op: &'static str, bias: Option<&Tensor<T>>, channels: usize) -> Result<()> {
    match bias {
        Some(b) if b.shape() != [channels] => Err(Error::shape(
            op,
            format!("bias shape {:?}, expected [{channels}]", b.shape()),
        )),
        _ => Ok(()),
    }
}

/// Standard cross-correlation with zero padding.
pub fn conv2d_forward<T: Scalar>(
    x: &Tensor<T>,
    k: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    g: ConvGeometry,
) -> Result<Tensor<T>> {
    let [batch, cin, h, w] = dims4("conv2d", x)?;
    let [cout, kcin, kh, kw] = dims4("conv2d", k)?;
    if kcin != cin || kh != g.kernel_h || kw != g.kernel_w {
        return Err(Error::shape(
            "conv2d",
            format!("kernel {:?} incompatible with input {:?} and {g:?}", k.shape(), x.shape()),
        ));
    }
    check_bias("conv2d", bias, cout)?;
    let (ho, wo) = g.conv_out("conv2d", h, w)?;
    let cols = im2col(x.data(), [batch, cin, h, w], g, (ho, wo));
    let kdim = cin * kh * kw;
    let ncols = batch * ho * wo;
    let mut y = vec![T::ZERO; cout * ncols];
    gemm(
        T::ONE,
        MatRef::row_major(k.data(), cout, kdim),
        MatRef::row_major(&cols, kdim, ncols),
        T::ZERO,
        MatMut::row_major(&mut y, cout, ncols),
    );
    let y = from_channel_major(&y, batch, cout, ho * wo, bias.map(|b| b.data()));
    Ok(tensor(&[batch, cout, ho, wo], y))
}

/// Returns `(dx, dk, dbias)`.
pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    k: &Tensor<T>,
    dy: &[T],
    g: ConvGeometry,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let [batch, cin, h, w] = dims4("conv2d", x).expect("checked in forward");
    let cout = k.shape()[0];
    let (ho, wo) = g.conv_out("conv2d", h, w).expect("checked in forward");
    let kdim = cin * g.kernel_h * g.kernel_w;
    let ncols = batch * ho * wo;
    let dy_cm = to_channel_major(dy, batch, cout, ho * wo);
    let cols = im2col(x.data(), [batch, cin, h, w], g, (ho, wo));

    let mut dk = vec![T::ZERO; cout * kdim];
    gemm(
        T::ONE,
        MatRef::row_major(&dy_cm, cout, ncols),
        MatRef::row_major(&cols, kdim, ncols).t(),
        T::ZERO,
        MatMut::row_major(&mut dk, cout, kdim),
    );
    drop(cols);
    let mut dcols = vec![T::ZERO; kdim * ncols];
    gemm(
        T::ONE,
        MatRef::row_major(k.data(), cout, kdim).t(),
        MatRef::row_major(&dy_cm, cout, ncols),
        T::ZERO,
        MatMut::row_major(&mut dcols, kdim, ncols),
    );
    let dx = col2im(&dcols, [batch, cin, h, w], g, (ho, wo));
    let db = channel_sums(dy, batch, cout, ho * wo);
    (dx, dk, db)
}

/// Transposed convolution: the adjoint of [`conv2d_forward`] with the same
/// geometry, mapping `H` to `(H - 1) * stride - 2 * pad + kernel`.
pub fn conv_transpose2d_forward<T: Scalar>(
    x: &Tensor<T>,
    k: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    g: ConvGeometry,
) -> Result<Tensor<T>> {
    let [batch, cin, h, w] = dims4("conv_transpose2d", x)?;
    let [kcin, cout, kh, kw] = dims4("conv_transpose2d", k)?;
    if kcin != cin || kh != g.kernel_h || kw != g.kernel_w {
        return Err(Error::shape(
            "conv_transpose2d",
            format!("kernel {:?} incompatible with input {:?} and {g:?}", k.shape(), x.shape()),
        ));
    }
    check_bias("conv_transpose2d", bias, cout)?;
    let (ho, wo) = g.transpose_out("conv_transpose2d", h, w)?;
    let kdim = cout * kh * kw;
    let ncols = batch * h * w;
    let x_cm = to_channel_major(x.data(), batch, cin, h * w);
    let mut cols = vec![T::ZERO; kdim * ncols];
    gemm(
        T::ONE,
        MatRef::row_major(k.data(), cin, kdim).t(),
        MatRef::row_major(&x_cm, cin, ncols),
        T::ZERO,
        MatMut::row_major(&mut cols, kdim, ncols),
    );
    let mut y = col2im(&cols, [batch, cout, ho, wo], g, (h, w));
    if let Some(bias) = bias {
        for (i, plane) in y.chunks_exact_mut(ho * wo).enumerate() {
            let bc = bias.data()[i % cout];
            plane.iter_mut().for_each(|v| *v += bc);
        }
    }
    Ok(tensor(&[batch, cout, ho, wo], y))
}

/// Returns `(dx, dk, dbias)`.
pub fn conv_transpose2d_backward<T: Scalar>(
    x: &Tensor<T>,
    k: &Tensor<T>,
    dy: &[T],
    g: ConvGeometry,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let [batch, cin, h, w] = dims4("conv_transpose2d", x).expect("checked in forward");
    let cout = k.shape()[1];
    let (ho, wo) = g.transpose_out("conv_transpose2d", h, w).expect("checked in forward");
    let kdim = cout * g.kernel_h * g.kernel_w;
    let ncols = batch * h * w;
    let dcols = im2col(dy, [batch, cout, ho, wo], g, (h, w));
    let x_cm = to_channel_major(x.data(), batch, cin, h * w);

    let mut dk = vec![T::ZERO; cin * kdim];
    gemm(
        T::ONE,
        MatRef::row_major(&x_cm, cin, ncols),
        MatRef::row_major(&dcols, kdim, ncols).t(),
        T::ZERO,
        MatMut::row_major(&mut dk, cin, kdim),
    );
    let mut dx_cm = vec![T::ZERO; cin * ncols];
    gemm(
        T::ONE,
        MatRef::row_major(k.data(), cin, kdim),
        MatRef::row_major(&dcols, kdim, ncols),
        T::ZERO,
        MatMut::row_major(&mut dx_cm, cin, ncols),
    );
    let dx = from_channel_major(&dx_cm, batch, cin, h * w, None);
    let db = channel_sums(dy, batch, cout, ho * wo);
    (dx, dk, db)
}

// ------------------------------------------------------------ batch norm

/// Values kept from a train-mode forward pass for the backward pass.
#[derive(Clone, Debug)]
pub struct BatchNormSaved<T> {
    pub xhat: Vec<T>,
    pub inv_std: Vec<T>,
}

fn bn_check<T: Scalar>(x: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>, stats: [usize; 2]) -> Result<[usize; 4]> {
    let dims = dims4("batchnorm2d", x)?;
    let c = dims[1];
    if gamma.shape() != [c] || beta.shape() != [c] || stats != [c, c] {
        return Err(Error::shape(
            "batchnorm2d",
            format!("per-channel parameters must have length {c}"),
        ));
    }
    Ok(dims)
}

/// Normalizes each channel by its batch statistics and folds them into the
/// running estimates: `running = (1 - momentum) * running + momentum * batch`,
/// with the unbiased variance for the running estimate.
#[allow(clippy::too_many_arguments)]
pub fn batchnorm2d_train<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running_mean: &mut [T],
    running_var: &mut [T],
    momentum: T,
    eps: T,
) -> Result<(Tensor<T>, BatchNormSaved<T>)> {
    let [batch, channels, h, w] = bn_check(x, gamma, beta, [running_mean.len(), running_var.len()])?;
    let hw = h * w;
    let count = batch * hw;
    if count < 2 {
        return Err(Error::DegenerateVariance { count });
    }
    let data = x.data();
    let mut xhat = vec![T::ZERO; data.len()];
    let mut y = vec![T::ZERO; data.len()];
    let mut inv_std = vec![T::ZERO; channels];
    for c in 0..channels {
        let planes = || (0..batch).map(move |b| (b * channels + c) * hw);
        let mut sum = 0.0f64;
        for off in planes() {
            sum += data[off..off + hw].iter().map(|v| v.to_f64()).sum::<f64>();
        }
        let mean = sum / count as f64;
        let mut sq = 0.0f64;
        for off in planes() {
            sq += data[off..off + hw]
                .iter()
                .map(|v| {
                    let d = v.to_f64() - mean;
                    d * d
                })
                .sum::<f64>();
        }
        let var = sq / count as f64;
        let istd = T::from_f64(1.0 / (var + eps.to_f64()).sqrt());
        inv_std[c] = istd;
        let mean_t = T::from_f64(mean);
        let (g, bt) = (gamma.data()[c], beta.data()[c]);
        for off in planes() {
            for i in off..off + hw {
                let xh = (data[i] - mean_t) * istd;
                xhat[i] = xh;
                y[i] = g * xh + bt;
            }
        }
        let unbiased = var * count as f64 / (count - 1) as f64;
        running_mean[c] = (T::ONE - momentum) * running_mean[c] + momentum * mean_t;
        running_var[c] = (T::ONE - momentum) * running_var[c] + momentum * T::from_f64(unbiased);
    }
    Ok((tensor(x.shape(), y), BatchNormSaved { xhat, inv_std }))
}

pub fn batchnorm2d_eval<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running_mean: &[T],
    running_var: &[T],
    eps: T,
) -> Result<Tensor<T>> {
    let [batch, channels, h, w] = bn_check(x, gamma, beta, [running_mean.len(), running_var.len()])?;
    let hw = h * w;
    let mut y = x.data().to_vec();
    for b in 0..batch {
        for c in 0..channels {
            let scale = gamma.data()[c] / (running_var[c] + eps).sqrt();
            let shift = beta.data()[c] - running_mean[c] * scale;
            for v in &mut y[(b * channels + c) * hw..][..hw] {
                *v = *v * scale + shift;
            }
        }
    }
    Ok(tensor(x.shape(), y))
}

/// Returns `(dx, dgamma, dbeta)` for a train-mode forward pass.
pub fn batchnorm2d_backward<T: Scalar>(
    shape: &[usize],
    gamma: &Tensor<T>,
    saved: &BatchNormSaved<T>,
    dy: &[T],
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let (batch, channels, hw) = (shape[0], shape[1], shape[2] * shape[3]);
    let n = (batch * hw) as f64;
    let mut dx = vec![T::ZERO; dy.len()];
    let mut dgamma = vec![T::ZERO; channels];
    let mut dbeta = vec![T::ZERO; channels];
    for c in 0..channels {
        let planes = || (0..batch).map(move |b| (b * channels + c) * hw);
        let (mut sum_dy, mut sum_dy_xhat) = (0.0f64, 0.0f64);
        for off in planes() {
            for i in off..off + hw {
                sum_dy += dy[i].to_f64();
                sum_dy_xhat += (dy[i] * saved.xhat[i]).to_f64();
            }
        }
        dgamma[c] = T::from_f64(sum_dy_xhat);
        dbeta[c] = T::from_f64(sum_dy);
        let scale = T::from_f64(gamma.data()[c].to_f64() * saved.inv_std[c].to_f64() / n);
        let (mean_dy, mean_dy_xhat) = (T::from_f64(sum_dy), T::from_f64(sum_dy_xhat));
        let nt = T::from_f64(n);
        for off in planes() {
            for i in off..off + hw {
                dx[i] = scale * (nt * dy[i] - mean_dy - saved.xhat[i] * mean_dy_xhat);
            }
        }
    }
    (dx, dgamma, dbeta)
}

// ------------------------------------------------------ pointwise / loss

pub fn relu_forward<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let data = x.data().iter().map(|&v| if v > T::ZERO { v } else { T::ZERO }).collect();
    tensor(x.shape(), data)
}

pub fn relu_backward<T: Scalar>(x: &Tensor<T>, dy: &[T]) -> Vec<T> {
    x.data()
        .iter()
        .zip(dy)
        .map(|(&v, &g)| if v > T::ZERO { g } else { T::ZERO })
        .collect()
}

/// Mean of squared elementwise differences, accumulated in double precision.
pub fn mse_forward<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<T> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            "mse",
            format!("shapes differ: {:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    Ok(T::from_f64(mse_slices(a.data(), b.data())))
}

pub fn mse_slices<T: Scalar>(a: &[T], b: &[T]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let sum: f64 = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x.to_f64() - y.to_f64();
            d * d
        })
        .sum();
    sum / a.len() as f64
}

/// Returns `(da, db)` scaled by the upstream gradient `dloss`.
pub fn mse_backward<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, dloss: T) -> (Vec<T>, Vec<T>) {
    let scale = T::from_f64(2.0 / a.numel() as f64) * dloss;
    let da: Vec<T> = a.data().iter().zip(b.data()).map(|(&x, &y)| scale * (x - y)).collect();
    let db = da.iter().map(|&v| -v).collect();
    (da, db)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t64(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    /// Six-loop direct cross-correlation.
    fn conv_reference(x: &Tensor<f64>, k: &Tensor<f64>, stride: usize, pad: usize) -> Tensor<f64> {
        let [b, cin, h, w] = dims4("ref", x).unwrap();
        let [cout, _, kh, kw] = dims4("ref", k).unwrap();
        let ho = (h + 2 * pad - kh) / stride + 1;
        let wo = (w + 2 * pad - kw) / stride + 1;
        let mut out = vec![0.0; b * cout * ho * wo];
        for n in 0..b {
            for co in 0..cout {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = 0.0;
                        for ci in 0..cin {
                            for i in 0..kh {
                                for j in 0..kw {
                                    let iy = (oy * stride + i) as isize - pad as isize;
                                    let ix = (ox * stride + j) as isize - pad as isize;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                        acc += x.data()[((n * cin + ci) * h + iy as usize) * w + ix as usize]
                                            * k.data()[((co * cin + ci) * kh + i) * kw + j];
                                    }
                                }
                            }
                        }
                        out[((n * cout + co) * ho + oy) * wo + ox] = acc;
                    }
                }
            }
        }
        t64(&[b, cout, ho, wo], &out)
    }

    /// Scatter-add transposed convolution.
    fn conv_t_reference(x: &Tensor<f64>, k: &Tensor<f64>, stride: usize, pad: usize) -> Tensor<f64> {
        let [b, cin, h, w] = dims4("ref", x).unwrap();
        let [_, cout, kh, kw] = dims4("ref", k).unwrap();
        let ho = (h - 1) * stride + kh - 2 * pad;
        let wo = (w - 1) * stride + kw - 2 * pad;
        let mut out = vec![0.0; b * cout * ho * wo];
        for n in 0..b {
            for ci in 0..cin {
                for iy in 0..h {
                    for ix in 0..w {
                        let v = x.data()[((n * cin + ci) * h + iy) * w + ix];
                        for co in 0..cout {
                            for i in 0..kh {
                                for j in 0..kw {
                                    let oy = (iy * stride + i) as isize - pad as isize;
                                    let ox = (ix * stride + j) as isize - pad as isize;
                                    if oy >= 0 && ox >= 0 && (oy as usize) < ho && (ox as usize) < wo {
                                        out[((n * cout + co) * ho + oy as usize) * wo + ox as usize] +=
                                            v * k.data()[((ci * cout + co) * kh + i) * kw + j];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        t64(&[b, cout, ho, wo], &out)
    }

    #[test]
    fn linear_examples() {
        let y = linear_forward(
            &t64(&[1, 2], &[1.0, 2.0]),
            &t64(&[2, 2], &[1.0, 0.0, 0.0, 1.0]),
            &t64(&[2], &[0.0, 0.0]),
        )
        .unwrap();
        assert_eq!(y.data(), &[1.0, 2.0]);

        let y = linear_forward(
            &t64(&[1, 2], &[0.0, 0.0]),
            &t64(&[2, 2], &[5.0, -1.0, 7.0, 2.0]),
            &t64(&[2], &[3.0, 4.0]),
        )
        .unwrap();
        assert_eq!(y.data(), &[3.0, 4.0]);

        let y = linear_forward(
            &t64(&[1, 2], &[1.0, 1.0]),
            &t64(&[1, 2], &[2.0, 3.0]),
            &t64(&[1], &[1.0]),
        )
        .unwrap();
        assert_eq!(y.data(), &[6.0]);
    }

    #[test]
    fn linear_shape_mismatch() {
        let err = linear_forward(
            &t64(&[1, 3], &[1.0, 2.0, 3.0]),
            &t64(&[2, 2], &[1.0; 4]),
            &t64(&[2], &[0.0; 2]),
        );
        assert!(matches!(err, Err(Error::Shape { .. })));
    }

    #[test]
    fn conv2d_zero_input_gives_zero() {
        let x = Tensor::<f64>::zeros(&[2, 3, 5, 5]);
        let k = Tensor::<f64>::from_fn(&[4, 3, 3, 3], |i| i as f64 * 0.1);
        let y = conv2d_forward(&x, &k, None, ConvGeometry::square(3, 1, 1)).unwrap();
        assert_eq!(y.shape(), &[2, 4, 5, 5]);
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv2d_ones_stride2_matches_direct_loops() {
        let x = Tensor::<f64>::full(&[1, 1, 4, 4], 1.0);
        let k = Tensor::<f64>::full(&[1, 1, 4, 4], 1.0);
        let y = conv2d_forward(&x, &k, None, ConvGeometry::square(4, 2, 1)).unwrap();
        let want = conv_reference(&x, &k, 2, 1);
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        assert_eq!(y.data(), want.data());
        // Each window covers a 3x3 corner of the ones.
        assert_eq!(want.data(), &[9.0, 9.0, 9.0, 9.0]);
    }

    #[test]
    fn conv2d_identity_kernel() {
        let x = Tensor::<f64>::from_fn(&[2, 1, 3, 4], |i| (i as f64).sin());
        let k = t64(&[1, 1, 1, 1], &[1.0]);
        let y = conv2d_forward(&x, &k, None, ConvGeometry::square(1, 1, 0)).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn conv2d_random_matches_reference() {
        let x = Tensor::<f64>::from_fn(&[2, 3, 7, 6], |i| ((i * 37 % 11) as f64 - 5.0) / 3.0);
        let k = Tensor::<f64>::from_fn(&[4, 3, 3, 2], |i| ((i * 13 % 7) as f64 - 3.0) / 2.0);
        let g = ConvGeometry {
            kernel_h: 3,
            kernel_w: 2,
            stride: 2,
            pad: 1,
        };
        let y = conv2d_forward(&x, &k, None, g).unwrap();
        let want = conv_reference(&x, &k, 2, 1);
        assert_eq!(y.shape(), want.shape());
        for (a, b) in y.data().iter().zip(want.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn conv2d_invalid_geometry() {
        let x = Tensor::<f64>::zeros(&[1, 1, 2, 2]);
        let k = Tensor::<f64>::zeros(&[1, 1, 5, 5]);
        assert!(matches!(
            conv2d_forward(&x, &k, None, ConvGeometry::square(5, 1, 0)),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn conv_transpose_examples() {
        let g = ConvGeometry::square(4, 2, 1);
        let k = Tensor::<f64>::full(&[1, 1, 4, 4], 1.0);
        let y = conv_transpose2d_forward(&Tensor::zeros(&[1, 1, 2, 2]), &k, None, g).unwrap();
        assert_eq!(y.shape(), &[1, 1, 4, 4]);
        assert!(y.data().iter().all(|&v| v == 0.0));

        let x = Tensor::<f64>::full(&[1, 1, 2, 2], 1.0);
        let y = conv_transpose2d_forward(&x, &k, None, g).unwrap();
        let want = conv_t_reference(&x, &k, 2, 1);
        assert_eq!(y.data(), want.data());
        // Interior pixels receive two taps per axis from every input pixel.
        #[rustfmt::skip]
        assert_eq!(want.data(), &[
            1.0, 2.0, 2.0, 1.0,
            2.0, 4.0, 4.0, 2.0,
            2.0, 4.0, 4.0, 2.0,
            1.0, 2.0, 2.0, 1.0,
        ]);

        let x = Tensor::<f64>::zeros(&[2, 3, 4, 4]);
        let k = Tensor::<f64>::zeros(&[3, 5, 4, 4]);
        let y = conv_transpose2d_forward(&x, &k, None, g).unwrap();
        assert_eq!(y.shape(), &[2, 5, 8, 8]);
    }

    #[test]
    fn conv_transpose_random_matches_reference() {
        let x = Tensor::<f64>::from_fn(&[2, 3, 3, 5], |i| ((i * 31 % 13) as f64 - 6.0) / 4.0);
        let k = Tensor::<f64>::from_fn(&[3, 2, 4, 4], |i| ((i * 17 % 9) as f64 - 4.0) / 3.0);
        let y = conv_transpose2d_forward(&x, &k, None, ConvGeometry::square(4, 2, 1)).unwrap();
        let want = conv_t_reference(&x, &k, 2, 1);
        assert_eq!(y.shape(), &[2, 2, 6, 10]);
        for (a, b) in y.data().iter().zip(want.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_transpose_bad_geometry() {
        let x = Tensor::<f64>::zeros(&[1, 1, 1, 1]);
        let k = Tensor::<f64>::zeros(&[1, 1, 1, 1]);
        // (1-1)*1 + 1 - 2 < 1
        assert!(conv_transpose2d_forward(&x, &k, None, ConvGeometry::square(1, 1, 1)).is_err());
    }

    #[test]
    fn batchnorm_train_normalizes() {
        let x = Tensor::<f64>::from_fn(&[4, 2, 3, 3], |i| ((i * 7919) % 101) as f64 / 10.0);
        let (gamma, beta) = (Tensor::full(&[2], 1.0), Tensor::zeros(&[2]));
        let (mut rm, mut rv) = (vec![0.0; 2], vec![1.0; 2]);
        let (y, _) = batchnorm2d_train(&x, &gamma, &beta, &mut rm, &mut rv, 0.1, 1e-5).unwrap();
        for c in 0..2 {
            let vals: Vec<f64> = (0..4)
                .flat_map(|b| y.data()[(b * 2 + c) * 9..][..9].to_vec())
                .collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(mean.abs() < 1e-5);
            assert!((var - 1.0).abs() < 1e-5);
        }
        assert!(rm.iter().all(|&m| m != 0.0));
    }

    #[test]
    fn batchnorm_gamma_zero_gives_beta() {
        let x = Tensor::<f32>::from_fn(&[2, 3, 2, 2], |i| i as f32);
        let gamma = Tensor::zeros(&[3]);
        let beta = Tensor::full(&[3], 0.7);
        let (mut rm, mut rv) = (vec![0.0; 3], vec![1.0; 3]);
        let (y, _) = batchnorm2d_train(&x, &gamma, &beta, &mut rm, &mut rv, 0.1, 1e-5).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.7));
    }

    #[test]
    fn batchnorm_eval_closed_form() {
        let x = Tensor::<f64>::from_fn(&[1, 2, 2, 2], |i| i as f64 - 3.0);
        let y = batchnorm2d_eval(&x, &Tensor::full(&[2], 1.0), &Tensor::zeros(&[2]), &[0.0; 2], &[1.0; 2], 1e-5)
            .unwrap();
        let scale = 1.0 / (1.0f64 + 1e-5).sqrt();
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - b * scale).abs() < 1e-15);
        }
    }

    #[test]
    fn batchnorm_single_element_rejected() {
        let x = Tensor::<f32>::zeros(&[1, 2, 1, 1]);
        let (mut rm, mut rv) = (vec![0.0; 2], vec![1.0; 2]);
        let r = batchnorm2d_train(&x, &Tensor::full(&[2], 1.0), &Tensor::zeros(&[2]), &mut rm, &mut rv, 0.1, 1e-5);
        assert!(matches!(r, Err(Error::DegenerateVariance { count: 1 })));
    }

    #[test]
    fn relu_examples() {
        let y = relu_forward(&t64(&[3], &[-1.0, 0.0, 2.0]));
        assert_eq!(y.data(), &[0.0, 0.0, 2.0]);
        let y = relu_forward(&t64(&[2], &[-3.0, -0.5]));
        assert!(y.data().iter().all(|&v| v == 0.0));
        let x = t64(&[3], &[0.0, 1.5, 9.0]);
        assert_eq!(relu_forward(&x).data(), x.data());
    }

    #[test]
    fn mse_examples() {
        let a = t64(&[2], &[0.3, 0.9]);
        assert_eq!(mse_forward(&a, &a).unwrap(), 0.0);
        assert_eq!(mse_forward(&Tensor::zeros(&[3]), &Tensor::full(&[3], 1.0)).unwrap(), 1.0);
        assert_eq!(mse_forward(&t64(&[2], &[0.0, 0.5]), &t64(&[2], &[1.0, 0.5])).unwrap(), 0.5);
        assert!(mse_forward(&t64(&[2], &[0.0, 0.5]), &t64(&[1], &[1.0])).is_err());
    }
}
