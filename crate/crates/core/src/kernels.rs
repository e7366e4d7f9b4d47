//! Forward and backward kernels for 1D convolution, dense layers, max-pooling
//! with switches, switch unpooling and nearest up-sampling.
//!
//! Convolution is cross-correlation with symmetric zero padding, so the output
//! length always equals the input length. Tensors are channel-major.

use crate::error::{Error, Result};
use crate::scalar::{gemm, MatRef, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Linear,
}

impl Activation {
    #[inline]
    fn apply<T: Scalar>(self, v: T) -> T {
        match self {
            Activation::Relu if v > T::zero() => v,
            Activation::Relu => T::zero(),
            Activation::Linear => v,
        }
    }

    /// Masks `grad` in place using the activation output. ReLU output is
    /// positive exactly where the pre-activation was, so the derivative at 0
    /// comes out as 0.
    fn mask_grad<T: Scalar>(self, output: &[T], grad: &mut [T]) {
        if self == Activation::Relu {
            for (g, &y) in grad.iter_mut().zip(output) {
                if y <= T::zero() {
                    *g = T::zero();
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor1D<T> {
    channels: usize,
    length: usize,
    data: Vec<T>,
}

impl<T: Scalar> Tensor1D<T> {
    pub fn new(channels: usize, length: usize, data: Vec<T>) -> Result<Self> {
        if channels == 0 || length == 0 {
            return Err(Error::shape("tensor needs at least one channel and one slot"));
        }
        if data.len() != channels * length {
            return Err(Error::shape(format!(
                "tensor data has {} values, expected {channels}×{length}",
                data.len()
            )));
        }
        Ok(Tensor1D {
            channels,
            length,
            data,
        })
    }

    pub fn zeros(channels: usize, length: usize) -> Self {
        Tensor1D {
            channels,
            length,
            data: vec![T::zero(); channels * length],
        }
    }

    /// Single-channel tensor from a signal.
    pub fn from_signal(signal: &[T]) -> Result<Self> {
        Self::new(1, signal.len(), signal.to_vec())
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn length(&self) -> usize {
        self.length
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn channel(&self, c: usize) -> &[T] {
        &self.data[c * self.length..(c + 1) * self.length]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Borrowed convolution filters: `weights` is `out × in × kernel_len`.
#[derive(Clone, Copy, Debug)]
pub struct ConvParams<'a, T> {
    pub out_channels: usize,
    pub in_channels: usize,
    pub kernel_len: usize,
    pub weights: &'a [T],
    pub bias: &'a [T],
}

impl<'a, T> ConvParams<'a, T> {
    pub fn new(
        out_channels: usize,
        in_channels: usize,
        kernel_len: usize,
        weights: &'a [T],
        bias: &'a [T],
    ) -> Result<Self> {
        if out_channels == 0 || in_channels == 0 || kernel_len == 0 {
            return Err(Error::config("convolution dimensions must be positive"));
        }
        if kernel_len % 2 == 0 {
            return Err(Error::config(format!("kernel length {kernel_len} is even")));
        }
        if weights.len() != out_channels * in_channels * kernel_len || bias.len() != out_channels {
            return Err(Error::shape(format!(
                "conv params hold {}+{} scalars, expected {}×{}×{} + {}",
                weights.len(),
                bias.len(),
                out_channels,
                in_channels,
                kernel_len,
                out_channels
            )));
        }
        Ok(ConvParams {
            out_channels,
            in_channels,
            kernel_len,
            weights,
            bias,
        })
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel_len
    }
}

/// Borrowed dense layer: `weights` is `in_dim × out_dim`, row-major.
#[derive(Clone, Copy, Debug)]
pub struct DenseParams<'a, T> {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: &'a [T],
    pub bias: &'a [T],
}

impl<'a, T> DenseParams<'a, T> {
    pub fn new(in_dim: usize, out_dim: usize, weights: &'a [T], bias: &'a [T]) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::config("dense dimensions must be positive"));
        }
        if weights.len() != in_dim * out_dim || bias.len() != out_dim {
            return Err(Error::shape(format!(
                "dense params hold {}+{} scalars, expected {in_dim}×{out_dim} + {out_dim}",
                weights.len(),
                bias.len()
            )));
        }
        Ok(DenseParams {
            in_dim,
            out_dim,
            weights,
            bias,
        })
    }
}

/// Gradient of a convolution's filters and biases.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvGrads<T> {
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseGrads<T> {
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

/// Argmax positions recorded by max-pooling, one per channel per pooled slot.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SwitchMask {
    channels: usize,
    pooled_length: usize,
    input_length: usize,
    pool: usize,
    indices: Vec<usize>,
}

impl SwitchMask {
    /// Builds a mask from raw indices, checking that each index lies inside
    /// its pooling window and below `input_length`.
    pub fn new(
        channels: usize,
        input_length: usize,
        pool: usize,
        indices: Vec<usize>,
    ) -> Result<Self> {
        if pool == 0 {
            return Err(Error::config("pool size must be at least 1"));
        }
        let pooled_length = input_length.div_ceil(pool);
        if indices.len() != channels * pooled_length {
            return Err(Error::shape(format!(
                "switch mask has {} indices, expected {channels}×{pooled_length}",
                indices.len()
            )));
        }
        for (i, &idx) in indices.iter().enumerate() {
            let slot = i % pooled_length;
            if idx >= input_length || idx / pool != slot {
                return Err(Error::Corruption(format!(
                    "switch {idx} at slot {slot} is outside its window"
                )));
            }
        }
        Ok(SwitchMask {
            channels,
            pooled_length,
            input_length,
            pool,
            indices,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pooled_length(&self) -> usize {
        self.pooled_length
    }

    pub fn input_length(&self) -> usize {
        self.input_length
    }

    pub fn pool(&self) -> usize {
        self.pool
    }

    /// Positions in the pre-pool channel, laid out `channel × pooled slot`.
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }
}

fn im2col<T: Scalar>(x: &Tensor1D<T>, kernel_len: usize) -> Vec<T> {
    let len = x.length;
    let pad = kernel_len / 2;
    let mut cols = vec![T::zero(); x.channels * kernel_len * len];
    for c in 0..x.channels {
        let src = x.channel(c);
        for k in 0..kernel_len {
            let row = &mut cols[(c * kernel_len + k) * len..][..len];
            // row[t] = src[t + k - pad]
            let (dst_lo, src_lo) = if k < pad { (pad - k, 0) } else { (0, k - pad) };
            let n = len.saturating_sub(dst_lo.max(src_lo));
            row[dst_lo..dst_lo + n].copy_from_slice(&src[src_lo..src_lo + n]);
        }
    }
    cols
}

fn col2im_add<T: Scalar>(cols: &[T], channels: usize, kernel_len: usize, grad_x: &mut [T]) {
    let len = grad_x.len() / channels;
    let pad = kernel_len / 2;
    for c in 0..channels {
        let dst = &mut grad_x[c * len..(c + 1) * len];
        for k in 0..kernel_len {
            let row = &cols[(c * kernel_len + k) * len..][..len];
            let (row_lo, dst_lo) = if k < pad { (pad - k, 0) } else { (0, k - pad) };
            let n = len.saturating_sub(row_lo.max(dst_lo));
            for (d, &r) in dst[dst_lo..dst_lo + n].iter_mut().zip(&row[row_lo..row_lo + n]) {
                *d += r;
            }
        }
    }
}

fn check_conv_input<T: Scalar>(x: &Tensor1D<T>, p: &ConvParams<'_, T>) -> Result<()> {
    if x.channels != p.in_channels {
        return Err(Error::shape(format!(
            "input has {} channels, filters expect {}",
            x.channels, p.in_channels
        )));
    }
    if p.kernel_len % 2 == 0 {
        return Err(Error::config(format!("kernel length {} is even", p.kernel_len)));
    }
    Ok(())
}

pub fn conv1d_forward<T: Scalar>(
    x: &Tensor1D<T>,
    p: &ConvParams<'_, T>,
    activation: Activation,
) -> Result<Tensor1D<T>> {
    check_conv_input(x, p)?;
    let len = x.length;
    let cols = im2col(x, p.kernel_len);
    let mut out = Vec::with_capacity(p.out_channels * len);
    for &b in p.bias {
        out.extend(std::iter::repeat_n(b, len));
    }
    gemm(
        p.out_channels,
        p.patch_len(),
        len,
        MatRef::row_major(p.weights, p.patch_len()),
        MatRef::row_major(&cols, len),
        T::one(),
        &mut out,
    );
    if activation == Activation::Relu {
        out.iter_mut().for_each(|v| *v = activation.apply(*v));
    }
    Ok(Tensor1D {
        channels: p.out_channels,
        length: len,
        data: out,
    })
}

/// Backward pass of a convolution given the forward output `y`.
///
/// Accumulates parameter gradients into `grad_w`/`grad_b` and returns the
/// input gradient when `want_input_grad` is set.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv1d_backward_into<T: Scalar>(
    x: &Tensor1D<T>,
    p: &ConvParams<'_, T>,
    activation: Activation,
    y: &Tensor1D<T>,
    grad_out: &Tensor1D<T>,
    grad_w: &mut [T],
    grad_b: &mut [T],
    want_input_grad: bool,
) -> Result<Option<Tensor1D<T>>> {
    check_conv_input(x, p)?;
    let len = x.length;
    if grad_out.channels != p.out_channels
        || grad_out.length != len
        || y.data.len() != grad_out.data.len()
    {
        return Err(Error::shape("conv output gradient does not match forward output"));
    }
    if grad_w.len() != p.weights.len() || grad_b.len() != p.bias.len() {
        return Err(Error::shape("conv gradient buffers do not match filters"));
    }
    let mut g = grad_out.data.clone();
    activation.mask_grad(&y.data, &mut g);

    for (gb, row) in grad_b.iter_mut().zip(g.chunks_exact(len)) {
        *gb += row.iter().copied().sum::<T>();
    }

    let cols = im2col(x, p.kernel_len);
    gemm(
        p.out_channels,
        len,
        p.patch_len(),
        MatRef::row_major(&g, len),
        MatRef::transposed(&cols, len),
        T::one(),
        grad_w,
    );

    if !want_input_grad {
        return Ok(None);
    }
    let mut grad_cols = vec![T::zero(); p.patch_len() * len];
    gemm(
        p.patch_len(),
        p.out_channels,
        len,
        MatRef::transposed(p.weights, p.patch_len()),
        MatRef::row_major(&g, len),
        T::zero(),
        &mut grad_cols,
    );
    let mut grad_x = Tensor1D::zeros(p.in_channels, len);
    col2im_add(&grad_cols, p.in_channels, p.kernel_len, &mut grad_x.data);
    Ok(Some(grad_x))
}

/// Gradients of a convolution with respect to its input, filters and biases.
pub fn conv1d_backward<T: Scalar>(
    x: &Tensor1D<T>,
    p: &ConvParams<'_, T>,
    activation: Activation,
    grad_out: &Tensor1D<T>,
) -> Result<(Tensor1D<T>, ConvGrads<T>)> {
    let y = conv1d_forward(x, p, activation)?;
    let mut grads = ConvGrads {
        weights: vec![T::zero(); p.weights.len()],
        bias: vec![T::zero(); p.bias.len()],
    };
    let grad_x = conv1d_backward_into(
        x,
        p,
        activation,
        &y,
        grad_out,
        &mut grads.weights,
        &mut grads.bias,
        true,
    )?
    .expect("input gradient requested");
    Ok((grad_x, grads))
}

/// Max-pooling in ceil mode. A trailing partial window behaves as if padded
/// with −∞; ties go to the lowest index.
pub fn maxpool_forward<T: Scalar>(
    x: &Tensor1D<T>,
    pool: usize,
) -> Result<(Tensor1D<T>, SwitchMask)> {
    if pool == 0 {
        return Err(Error::config("pool size must be at least 1"));
    }
    let len = x.length;
    let pooled_len = len.div_ceil(pool);
    let mut pooled = Vec::with_capacity(x.channels * pooled_len);
    let mut indices = Vec::with_capacity(x.channels * pooled_len);
    for c in 0..x.channels {
        let ch = x.channel(c);
        for (slot, window) in ch.chunks(pool).enumerate() {
            let mut best = 0;
            for (i, &v) in window.iter().enumerate().skip(1) {
                if v > window[best] {
                    best = i;
                }
            }
            pooled.push(window[best]);
            indices.push(slot * pool + best);
        }
    }
    let mask = SwitchMask {
        channels: x.channels,
        pooled_length: pooled_len,
        input_length: len,
        pool,
        indices,
    };
    Ok((
        Tensor1D {
            channels: x.channels,
            length: pooled_len,
            data: pooled,
        },
        mask,
    ))
}

/// Places each pooled value back at its recorded switch position.
pub fn unpool_switch<T: Scalar>(
    pooled: &Tensor1D<T>,
    switches: &SwitchMask,
    out_length: usize,
) -> Result<Tensor1D<T>> {
    if pooled.channels != switches.channels || pooled.length != switches.pooled_length {
        return Err(Error::shape(format!(
            "pooled tensor {}×{} does not match switch mask {}×{}",
            pooled.channels, pooled.length, switches.channels, switches.pooled_length
        )));
    }
    let mut out = Tensor1D::zeros(pooled.channels, out_length);
    for c in 0..pooled.channels {
        let row = &mut out.data[c * out_length..(c + 1) * out_length];
        let sw = &switches.indices[c * pooled.length..(c + 1) * pooled.length];
        for (&idx, &v) in sw.iter().zip(pooled.channel(c)) {
            if idx >= out_length {
                return Err(Error::Corruption(format!(
                    "switch index {idx} outside output length {out_length}"
                )));
            }
            row[idx] = v;
        }
    }
    Ok(out)
}

/// Gradient of max-pooling: routes each pooled gradient to its switch.
pub fn maxpool_backward<T: Scalar>(
    grad_pooled: &Tensor1D<T>,
    switches: &SwitchMask,
) -> Result<Tensor1D<T>> {
    unpool_switch(grad_pooled, switches, switches.input_length)
}

/// Gradient of switch unpooling: gathers the gradient at each switch.
pub fn unpool_backward<T: Scalar>(
    grad_out: &Tensor1D<T>,
    switches: &SwitchMask,
) -> Result<Tensor1D<T>> {
    if grad_out.channels != switches.channels {
        return Err(Error::shape("unpool gradient channel count does not match switches"));
    }
    let len = grad_out.length;
    let mut data = Vec::with_capacity(switches.indices.len());
    for (i, &idx) in switches.indices.iter().enumerate() {
        if idx >= len {
            return Err(Error::Corruption(format!(
                "switch index {idx} outside gradient length {len}"
            )));
        }
        let c = i / switches.pooled_length;
        data.push(grad_out.data[c * len + idx]);
    }
    Ok(Tensor1D {
        channels: switches.channels,
        length: switches.pooled_length,
        data,
    })
}

/// Repeats each pooled value `factor` times and truncates to `out_length`.
pub fn upsample_nearest<T: Scalar>(
    pooled: &Tensor1D<T>,
    factor: usize,
    out_length: usize,
) -> Result<Tensor1D<T>> {
    if factor == 0 {
        return Err(Error::config("up-sampling factor must be at least 1"));
    }
    let n = pooled.length;
    let lo = factor * (n - 1) + 1;
    let hi = factor * n;
    if out_length < lo || out_length > hi {
        return Err(Error::shape(format!(
            "up-sampled length {out_length} outside [{lo}, {hi}]"
        )));
    }
    let mut data = Vec::with_capacity(pooled.channels * out_length);
    for c in 0..pooled.channels {
        let ch = pooled.channel(c);
        data.extend((0..out_length).map(|t| ch[t / factor]));
    }
    Ok(Tensor1D {
        channels: pooled.channels,
        length: out_length,
        data,
    })
}

pub fn dense_forward<T: Scalar>(
    z: &[T],
    d: &DenseParams<'_, T>,
    activation: Activation,
) -> Result<Vec<T>> {
    if z.len() != d.in_dim {
        return Err(Error::shape(format!(
            "dense input has {} values, expected {}",
            z.len(),
            d.in_dim
        )));
    }
    let mut out = d.bias.to_vec();
    gemm(
        1,
        d.in_dim,
        d.out_dim,
        MatRef::row_major(z, d.in_dim),
        MatRef::row_major(d.weights, d.out_dim),
        T::one(),
        &mut out,
    );
    if activation == Activation::Relu {
        out.iter_mut().for_each(|v| *v = activation.apply(*v));
    }
    Ok(out)
}

/// Backward pass of a dense layer given its forward output `y`. Returns the
/// masked output gradient (the pre-activation gradient) and, optionally, the
/// input gradient. Weight gradients are left to the caller so they can be
/// batched.
pub(crate) fn dense_backward_pre<T: Scalar>(
    d: &DenseParams<'_, T>,
    activation: Activation,
    y: &[T],
    grad_out: &[T],
    want_input_grad: bool,
) -> Result<(Vec<T>, Option<Vec<T>>)> {
    if grad_out.len() != d.out_dim || y.len() != d.out_dim {
        return Err(Error::shape(format!(
            "dense output gradient has {} values, expected {}",
            grad_out.len(),
            d.out_dim
        )));
    }
    let mut g = grad_out.to_vec();
    activation.mask_grad(y, &mut g);
    let grad_z = want_input_grad.then(|| {
        let mut gz = vec![T::zero(); d.in_dim];
        gemm(
            d.in_dim,
            d.out_dim,
            1,
            MatRef::row_major(d.weights, d.out_dim),
            MatRef::row_major(&g, 1),
            T::zero(),
            &mut gz,
        );
        gz
    });
    Ok((g, grad_z))
}

/// Gradients of a dense layer with respect to its input, weights and bias.
pub fn dense_backward<T: Scalar>(
    z: &[T],
    d: &DenseParams<'_, T>,
    activation: Activation,
    grad_out: &[T],
) -> Result<(Vec<T>, DenseGrads<T>)> {
    let y = dense_forward(z, d, activation)?;
    let (g, grad_z) = dense_backward_pre(d, activation, &y, grad_out, true)?;
    let mut weights = vec![T::zero(); d.weights.len()];
    gemm(
        d.in_dim,
        1,
        d.out_dim,
        MatRef::row_major(z, 1),
        MatRef::row_major(&g, d.out_dim),
        T::zero(),
        &mut weights,
    );
    Ok((
        grad_z.expect("input gradient requested"),
        DenseGrads { weights, bias: g },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t1(v: &[f64]) -> Tensor1D<f64> {
        Tensor1D::from_signal(v).unwrap()
    }

    #[test]
    fn conv_delta_kernel_is_identity() {
        let w = [0.0, 1.0, 0.0];
        let p = ConvParams::new(1, 1, 3, &w, &[0.0]).unwrap();
        let y = conv1d_forward(&t1(&[1.0, 2.0, 3.0, 4.0]), &p, Activation::Linear).unwrap();
        assert_eq!(y.data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn conv_zero_input_passes_bias() {
        let w = [0.3, -2.0, 7.0];
        let p = ConvParams::new(1, 1, 3, &w, &[0.5]).unwrap();
        let y = conv1d_forward(&t1(&[0.0; 4]), &p, Activation::Linear).unwrap();
        assert_eq!(y.data(), &[0.5; 4]);
    }

    #[test]
    fn conv_zero_padded_cross_correlation() {
        let w = [1.0, 2.0, 3.0];
        let p = ConvParams::new(1, 1, 3, &w, &[0.0]).unwrap();
        let y = conv1d_forward(&t1(&[1.0, 0.0, 2.0]), &p, Activation::Linear).unwrap();
        assert_eq!(y.data(), &[2.0, 7.0, 4.0]);
    }

    #[test]
    fn conv_relu_clamps() {
        let w = [0.0, -1.0, 0.0];
        let p = ConvParams::new(1, 1, 3, &w, &[0.0]).unwrap();
        let y = conv1d_forward(&t1(&[1.0, -2.0, 0.0]), &p, Activation::Relu).unwrap();
        assert_eq!(y.data(), &[0.0, 2.0, 0.0]);
    }

    #[test]
    fn conv_rejects_bad_shapes() {
        let w = [0.0; 6];
        let p = ConvParams::new(1, 2, 3, &w, &[0.0]).unwrap();
        assert!(matches!(
            conv1d_forward(&t1(&[1.0, 2.0]), &p, Activation::Linear),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            ConvParams::new(1, 1, 2, &[0.0, 0.0], &[0.0]),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn conv_backward_delta_kernel_passes_gradient() {
        let w = [0.0, 1.0, 0.0];
        let p = ConvParams::new(1, 1, 3, &w, &[0.0]).unwrap();
        let g = t1(&[0.5, -1.0, 2.0, 3.0]);
        let (gx, grads) =
            conv1d_backward(&t1(&[1.0, 2.0, 3.0, 4.0]), &p, Activation::Linear, &g).unwrap();
        assert_eq!(gx.data(), g.data());
        assert_eq!(grads.bias, vec![4.5]);
    }

    #[test]
    fn conv_bias_gradient_is_channel_sum() {
        let w = [0.1, 0.2, 0.3, -0.1, 0.4, 0.0];
        let p = ConvParams::new(2, 1, 3, &w, &[0.0, 1.0]).unwrap();
        let g = Tensor1D::new(2, 3, vec![1.0, 2.0, 3.0, -1.0, 0.5, 0.25]).unwrap();
        let (_, grads) = conv1d_backward(&t1(&[1.0, 2.0, 3.0]), &p, Activation::Linear, &g).unwrap();
        assert_eq!(grads.bias, vec![6.0, -0.25]);
    }

    #[test]
    fn maxpool_examples() {
        let (p, s) = maxpool_forward(&t1(&[3.0, 1.0, 4.0, 1.0, 5.0, 9.0]), 2).unwrap();
        assert_eq!(p.data(), &[3.0, 4.0, 9.0]);
        assert_eq!(s.indices(), &[0, 2, 5]);

        let (p, s) = maxpool_forward(&t1(&[2.0, 2.0]), 2).unwrap();
        assert_eq!(p.data(), &[2.0]);
        assert_eq!(s.indices(), &[0]);

        let (p, s) = maxpool_forward(&t1(&[7.0, 1.0, 5.0]), 2).unwrap();
        assert_eq!(p.data(), &[7.0, 5.0]);
        assert_eq!(s.indices(), &[0, 2]);

        assert!(matches!(maxpool_forward(&t1(&[1.0]), 0), Err(Error::Config(_))));
    }

    #[test]
    fn unpool_examples() {
        let s = SwitchMask::new(1, 6, 2, vec![0, 2, 4]).unwrap();
        let out = unpool_switch(&t1(&[3.0, 4.0, 9.0]), &s, 6).unwrap();
        assert_eq!(out.data(), &[3.0, 0.0, 4.0, 0.0, 9.0, 0.0]);

        let out = unpool_switch(&t1(&[0.0; 3]), &s, 6).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));

        assert!(matches!(
            unpool_switch(&t1(&[3.0, 4.0, 9.0]), &s, 4),
            Err(Error::Corruption(_))
        ));
    }

    #[test]
    fn switch_mask_rejects_index_outside_window() {
        assert!(matches!(
            SwitchMask::new(1, 4, 2, vec![2, 3]),
            Err(Error::Corruption(_))
        ));
    }

    #[test]
    fn upsample_examples() {
        let up = upsample_nearest(&t1(&[1.0, 2.0]), 2, 4).unwrap();
        assert_eq!(up.data(), &[1.0, 1.0, 2.0, 2.0]);
        let up = upsample_nearest(&t1(&[5.0]), 2, 1).unwrap();
        assert_eq!(up.data(), &[5.0]);
        let up = upsample_nearest(&t1(&[1.0, 2.0, 3.0]), 2, 5).unwrap();
        assert_eq!(up.data(), &[1.0, 1.0, 2.0, 2.0, 3.0]);
        assert!(matches!(
            upsample_nearest(&t1(&[1.0, 2.0]), 2, 2),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn dense_examples() {
        let eye = [1.0, 0.0, 0.0, 1.0];
        let d = DenseParams::new(2, 2, &eye, &[1.0, 1.0]).unwrap();
        assert_eq!(dense_forward(&[1.0, 2.0], &d, Activation::Linear).unwrap(), vec![2.0, 3.0]);
        assert_eq!(dense_forward(&[0.0, 0.0], &d, Activation::Linear).unwrap(), vec![1.0, 1.0]);

        let ones = [1.0; 4];
        let d = DenseParams::new(2, 2, &ones, &[0.0, 0.0]).unwrap();
        assert_eq!(dense_forward(&[1.0, -1.0], &d, Activation::Relu).unwrap(), vec![0.0, 0.0]);

        assert!(matches!(
            dense_forward(&[1.0], &d, Activation::Linear),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn dense_backward_identity() {
        let eye = [1.0, 0.0, 0.0, 1.0];
        let d = DenseParams::new(2, 2, &eye, &[0.0, 0.0]).unwrap();
        let g = [0.25, -3.0];
        let (gz, grads) = dense_backward(&[4.0, 5.0], &d, Activation::Linear, &g).unwrap();
        assert_eq!(gz, g.to_vec());
        assert_eq!(grads.bias, g.to_vec());
        assert_eq!(grads.weights, vec![1.0, -12.0, 1.25, -15.0]);
    }
}
