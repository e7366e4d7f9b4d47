//! Forward pass, loss and full gradient of the convolutional autoencoder.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::kernels::{
    conv1d_backward_into, conv1d_forward, dense_backward_pre, dense_forward, maxpool_backward,
    maxpool_forward, unpool_backward, unpool_switch, upsample_nearest, Activation, SwitchMask,
    Tensor1D,
};
use crate::model::params::{Block, GradDelta, ParamBundle};
use crate::scalar::{gemm, MatRef, Scalar};

/// Everything the backward pass needs from a forward evaluation.
#[derive(Clone, Debug)]
pub struct ForwardTrace<T> {
    /// Input of every encoder stage; entry 0 is the signal itself.
    pub encoder_inputs: Vec<Tensor1D<T>>,
    /// Post-ReLU output of every encoder convolution.
    pub encoder_conv: Vec<Tensor1D<T>>,
    pub switches: Vec<SwitchMask>,
    /// Encoder-top post-pool feature map (`Z`).
    pub top: Tensor1D<T>,
    /// Hidden code (`H`).
    pub hidden: Vec<T>,
    /// Decoder dense head output reshaped to the top shape (`Z'`).
    pub top_recon: Tensor1D<T>,
    /// Unpooled input of every decoder convolution.
    pub decoder_inputs: Vec<Tensor1D<T>>,
    /// Output of every decoder convolution; the last one is the reconstruction.
    pub decoder_conv: Vec<Tensor1D<T>>,
}

impl<T: Scalar> ForwardTrace<T> {
    pub fn reconstruction(&self) -> &[T] {
        self.decoder_conv.last().expect("decoder has layers").data()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossParts {
    pub total: f64,
    pub recon: f64,
    pub reg: f64,
}

fn check_signal<T: Scalar>(params: &ParamBundle<T>, x: &[T]) -> Result<()> {
    let t = params.config().input_length;
    if x.len() != t {
        return Err(Error::shape(format!("signal has {} points, model expects {t}", x.len())));
    }
    Ok(())
}

struct Encoded<T> {
    inputs: Vec<Tensor1D<T>>,
    convs: Vec<Tensor1D<T>>,
    switches: Vec<SwitchMask>,
    top: Tensor1D<T>,
    hidden: Vec<T>,
}

fn run_encoder<T: Scalar>(params: &ParamBundle<T>, x: &[T]) -> Result<Encoded<T>> {
    check_signal(params, x)?;
    let cfg = params.config();
    let n = cfg.encoder.len();
    let mut inputs = Vec::with_capacity(n);
    let mut convs = Vec::with_capacity(n);
    let mut switches = Vec::with_capacity(n);
    let mut a = Tensor1D::from_signal(x)?;
    for i in 0..n {
        let y = conv1d_forward(&a, &params.conv(Block::EncoderConv(i)), Activation::Relu)?;
        let (pooled, sw) = maxpool_forward(&y, cfg.pool)?;
        inputs.push(std::mem::replace(&mut a, pooled));
        convs.push(y);
        switches.push(sw);
    }
    let hidden = dense_forward(a.data(), &params.dense(Block::EncoderDense), Activation::Linear)?;
    Ok(Encoded {
        inputs,
        convs,
        switches,
        top: a,
        hidden,
    })
}

fn decoder_head<T: Scalar>(params: &ParamBundle<T>, h: &[T]) -> Result<Tensor1D<T>> {
    let cfg = params.config();
    let zr = dense_forward(h, &params.dense(Block::DecoderDense), Activation::Relu)?;
    let top_len = *cfg.stage_lengths().last().unwrap();
    Tensor1D::new(cfg.top_channels(), top_len, zr)
}

pub fn forward<T: Scalar>(params: &ParamBundle<T>, x: &[T]) -> Result<ForwardTrace<T>> {
    let enc = run_encoder(params, x)?;
    let cfg = params.config();
    let n = cfg.decoder.len();
    let top_recon = decoder_head(params, &enc.hidden)?;
    let mut decoder_inputs = Vec::with_capacity(n);
    let mut decoder_conv: Vec<Tensor1D<T>> = Vec::with_capacity(n);
    for j in 0..n {
        let e = n - 1 - j;
        let b = decoder_conv.last().unwrap_or(&top_recon);
        let u = unpool_switch(b, &enc.switches[e], enc.convs[e].length())?;
        let slot = params.layout().slot(Block::DecoderConv(j));
        let y = conv1d_forward(&u, &params.conv(Block::DecoderConv(j)), slot.activation)?;
        decoder_inputs.push(u);
        decoder_conv.push(y);
    }
    Ok(ForwardTrace {
        encoder_inputs: enc.inputs,
        encoder_conv: enc.convs,
        switches: enc.switches,
        top: enc.top,
        hidden: enc.hidden,
        top_recon,
        decoder_inputs,
        decoder_conv,
    })
}

/// `½‖x − x̂‖² + ½λ‖Z − Z'‖²`, accumulated in f64.
pub fn loss<T: Scalar>(x: &[T], trace: &ForwardTrace<T>, lambda: f64) -> LossParts {
    let recon = 0.5
        * x.iter()
            .zip(trace.reconstruction())
            .map(|(&a, &b)| (a.as_f64() - b.as_f64()).powi(2))
            .sum::<f64>();
    let reg = 0.5
        * lambda
        * trace
            .top
            .data()
            .iter()
            .zip(trace.top_recon.data())
            .map(|(&a, &b)| (a.as_f64() - b.as_f64()).powi(2))
            .sum::<f64>();
    LossParts {
        total: recon + reg,
        recon,
        reg,
    }
}

/// Per-example dense-layer terms kept for a batched weight-gradient product.
struct DenseTerms<T> {
    enc_in: Vec<T>,
    enc_grad: Vec<T>,
    dec_in: Vec<T>,
    dec_grad: Vec<T>,
}

/// Backpropagates one example, accumulating every gradient except the dense
/// weight matrices into `delta`; those terms are returned for batching.
fn backward_example<T: Scalar>(
    params: &ParamBundle<T>,
    x: &[T],
    trace: &ForwardTrace<T>,
    lambda: T,
    delta: &mut GradDelta<T>,
) -> Result<DenseTerms<T>> {
    check_signal(params, x)?;
    if !Arc::ptr_eq(delta.layout(), params.layout()) && **delta.layout() != **params.layout() {
        return Err(Error::shape("gradient layout does not match parameters"));
    }
    let layout = params.layout().clone();
    let cfg = layout.config();
    let n = cfg.encoder.len();
    let grads = delta.values_mut();

    let mut g = {
        let recon = trace.reconstruction();
        let data = recon.iter().zip(x).map(|(&r, &v)| r - v).collect();
        Tensor1D::new(1, x.len(), data)?
    };

    for j in (0..n).rev() {
        let slot = layout.slot(Block::DecoderConv(j));
        let (gw, gb) = split_slot(grads, slot);
        let gu = conv1d_backward_into(
            &trace.decoder_inputs[j],
            &params.conv(Block::DecoderConv(j)),
            slot.activation,
            &trace.decoder_conv[j],
            &g,
            gw,
            gb,
            true,
        )?
        .expect("input gradient requested");
        g = unpool_backward(&gu, &trace.switches[n - 1 - j])?;
    }

    // g is now dL/dZ' from the decoder path; add the regularizer's share.
    let mut g_zr = g.into_data();
    for ((gz, &zr), &z) in g_zr.iter_mut().zip(trace.top_recon.data()).zip(trace.top.data()) {
        *gz += lambda * (zr - z);
    }

    let dec_slot = layout.slot(Block::DecoderDense);
    let (dec_pre, g_h) = dense_backward_pre(
        &params.dense(Block::DecoderDense),
        dec_slot.activation,
        trace.top_recon.data(),
        &g_zr,
        true,
    )?;
    add_into(&mut grads[dec_slot.bias.clone()], &dec_pre);

    let enc_slot = layout.slot(Block::EncoderDense);
    let (enc_pre, g_z) = dense_backward_pre(
        &params.dense(Block::EncoderDense),
        enc_slot.activation,
        &trace.hidden,
        &g_h.expect("input gradient requested"),
        true,
    )?;
    add_into(&mut grads[enc_slot.bias.clone()], &enc_pre);

    let mut g_top = g_z.expect("input gradient requested");
    for ((gz, &z), &zr) in g_top.iter_mut().zip(trace.top.data()).zip(trace.top_recon.data()) {
        *gz += lambda * (z - zr);
    }
    let mut g_pooled = Tensor1D::new(trace.top.channels(), trace.top.length(), g_top)?;

    for i in (0..n).rev() {
        let slot = layout.slot(Block::EncoderConv(i));
        let g_conv = maxpool_backward(&g_pooled, &trace.switches[i])?;
        let (gw, gb) = split_slot(grads, slot);
        let g_in = conv1d_backward_into(
            &trace.encoder_inputs[i],
            &params.conv(Block::EncoderConv(i)),
            slot.activation,
            &trace.encoder_conv[i],
            &g_conv,
            gw,
            gb,
            i > 0,
        )?;
        if let Some(g_in) = g_in {
            g_pooled = g_in;
        }
    }

    delta.sample_count += 1;
    Ok(DenseTerms {
        enc_in: trace.top.data().to_vec(),
        enc_grad: enc_pre,
        dec_in: trace.hidden.clone(),
        dec_grad: dec_pre,
    })
}

fn split_slot<'a, T>(
    grads: &'a mut [T],
    slot: &crate::model::params::LayerSlot,
) -> (&'a mut [T], &'a mut [T]) {
    let (w, b) = grads[slot.range()].split_at_mut(slot.weights.len());
    (w, b)
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Adds `Σ_b inputs[b]ᵀ · grads[b]` into a row-major `in × out` weight gradient.
fn accumulate_outer<T: Scalar>(
    dst: &mut [T],
    in_dim: usize,
    out_dim: usize,
    inputs: &[T],
    grads: &[T],
    batch: usize,
) {
    gemm(
        in_dim,
        batch,
        out_dim,
        MatRef::transposed(inputs, in_dim),
        MatRef::row_major(grads, out_dim),
        T::one(),
        dst,
    );
}

fn flush_dense_terms<T: Scalar>(delta: &mut GradDelta<T>, terms: &[DenseTerms<T>]) {
    if terms.is_empty() {
        return;
    }
    let layout = delta.layout().clone();
    let b = terms.len();
    for (block, pick) in [
        (Block::EncoderDense, 0usize),
        (Block::DecoderDense, 1usize),
    ] {
        let slot = layout.slot(block);
        let (in_dim, out_dim) = (slot.dims.0, slot.dims.1);
        let mut inputs = Vec::with_capacity(b * in_dim);
        let mut grads = Vec::with_capacity(b * out_dim);
        for t in terms {
            let (i, g) = if pick == 0 {
                (&t.enc_in, &t.enc_grad)
            } else {
                (&t.dec_in, &t.dec_grad)
            };
            inputs.extend_from_slice(i);
            grads.extend_from_slice(g);
        }
        accumulate_outer(
            &mut delta.values_mut()[slot.weights.clone()],
            in_dim,
            out_dim,
            &inputs,
            &grads,
            b,
        );
    }
}

/// Exact gradient of the loss for one example, given its forward trace.
pub fn backward<T: Scalar>(
    params: &ParamBundle<T>,
    x: &[T],
    trace: &ForwardTrace<T>,
    lambda: f64,
) -> Result<GradDelta<T>> {
    let mut delta = GradDelta::zeros(params.layout().clone());
    let terms = backward_example(params, x, trace, T::of(lambda), &mut delta)?;
    flush_dense_terms(&mut delta, std::slice::from_ref(&terms));
    Ok(delta)
}

/// Summed gradient over a batch of signals, plus the per-example losses.
///
/// Examples are processed one at a time; the dense weight gradients are
/// formed with a single matrix product over the batch.
pub fn batch_gradient<T: Scalar, S: AsRef<[T]>>(
    params: &ParamBundle<T>,
    batch: &[S],
) -> Result<(GradDelta<T>, Vec<LossParts>)> {
    let lambda = params.config().lambda_reg;
    let mut delta = GradDelta::zeros(params.layout().clone());
    let mut terms = Vec::with_capacity(batch.len());
    let mut losses = Vec::with_capacity(batch.len());
    for x in batch {
        let x = x.as_ref();
        let trace = forward(params, x)?;
        losses.push(loss(x, &trace, lambda));
        terms.push(backward_example(params, x, &trace, T::of(lambda), &mut delta)?);
    }
    flush_dense_terms(&mut delta, &terms);
    Ok((delta, losses))
}

/// Hidden code of a signal.
pub fn encode<T: Scalar>(params: &ParamBundle<T>, x: &[T]) -> Result<Vec<T>> {
    Ok(run_encoder(params, x)?.hidden)
}

/// Runs the decoder on an external hidden code. No switches exist for such
/// codes, so nearest up-sampling stands in for unpooling.
pub fn decode_from_hidden<T: Scalar>(params: &ParamBundle<T>, h: &[T]) -> Result<Vec<T>> {
    let cfg = params.config();
    if h.len() != cfg.hidden_dim {
        return Err(Error::shape(format!(
            "hidden code has {} values, expected {}",
            h.len(),
            cfg.hidden_dim
        )));
    }
    let lens = cfg.stage_lengths();
    let n = cfg.decoder.len();
    let mut b = decoder_head(params, h)?;
    for j in 0..n {
        let e = n - 1 - j;
        let u = upsample_nearest(&b, cfg.pool, lens[e])?;
        let slot = params.layout().slot(Block::DecoderConv(j));
        b = conv1d_forward(&u, &params.conv(Block::DecoderConv(j)), slot.activation)?;
    }
    Ok(b.into_data())
}

/// Runs the decoder on a hidden code, unpooling with the switches of some
/// earlier forward pass (one mask per encoder stage, as in
/// [`ForwardTrace::switches`]).
pub fn decode_with_switches<T: Scalar>(
    params: &ParamBundle<T>,
    h: &[T],
    switches: &[SwitchMask],
) -> Result<Vec<T>> {
    let cfg = params.config();
    if h.len() != cfg.hidden_dim {
        return Err(Error::shape(format!(
            "hidden code has {} values, expected {}",
            h.len(),
            cfg.hidden_dim
        )));
    }
    let n = cfg.decoder.len();
    if switches.len() != n {
        return Err(Error::shape(format!("{} switch masks for {n} stages", switches.len())));
    }
    let lens = cfg.stage_lengths();
    let mut b = decoder_head(params, h)?;
    for j in 0..n {
        let e = n - 1 - j;
        let u = unpool_switch(&b, &switches[e], lens[e])?;
        let slot = params.layout().slot(Block::DecoderConv(j));
        b = conv1d_forward(&u, &params.conv(Block::DecoderConv(j)), slot.activation)?;
    }
    Ok(b.into_data())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::config::ModelConfig;
    use crate::model::params::{build_model, ParamLayout};

    fn signal(t: usize, phase: f64) -> Vec<f64> {
        (0..t).map(|i| ((i as f64) * 0.37 + phase).sin()).collect()
    }

    #[test]
    fn zero_params_reconstruct_zero() {
        let layout = Arc::new(ParamLayout::new(&ModelConfig::default()).unwrap());
        let p = ParamBundle::<f64>::zeros(layout);
        let x = signal(284, 0.0);
        let tr = forward(&p, &x).unwrap();
        assert!(tr.hidden.iter().all(|&v| v == 0.0));
        assert!(tr.reconstruction().iter().all(|&v| v == 0.0));
        assert_eq!(encode(&p, &x).unwrap(), vec![0.0; 284]);
        assert_eq!(decode_from_hidden(&p, &[0.0; 284]).unwrap(), vec![0.0; 284]);
    }

    #[test]
    fn trace_shapes_follow_layer_plan() {
        let p = build_model::<f32>(&ModelConfig::default(), 3).unwrap();
        let x: Vec<f32> = signal(284, 0.5).iter().map(|&v| v as f32).collect();
        let tr = forward(&p, &x).unwrap();
        let pooled: Vec<usize> = tr.switches.iter().map(|s| s.pooled_length()).collect();
        assert_eq!(pooled, vec![142, 71, 36, 18]);
        assert_eq!(tr.reconstruction().len(), 284);
        assert_eq!(tr.hidden.len(), 284);
        assert_eq!(tr.top.channels(), 256);
        assert_eq!(tr.top_recon.channels(), 256);
        assert_eq!(decode_from_hidden(&p, &tr.hidden).unwrap().len(), 284);
        assert!(forward(&p, &x[..100]).is_err());
    }

    #[test]
    fn encode_matches_forward() {
        let p = build_model::<f64>(&ModelConfig::tiny(32, 4, 2, 5), 8).unwrap();
        let x = signal(32, 1.0);
        assert_eq!(encode(&p, &x).unwrap(), forward(&p, &x).unwrap().hidden);
    }

    #[test]
    fn loss_hand_computed() {
        // Build a trace by hand: x − x̂ = [1, 0], Z − Z' = [2].
        let t = |v: &[f64]| Tensor1D::from_signal(v).unwrap();
        let trace = ForwardTrace {
            encoder_inputs: vec![],
            encoder_conv: vec![],
            switches: vec![],
            top: t(&[3.0]),
            hidden: vec![],
            top_recon: t(&[1.0]),
            decoder_inputs: vec![],
            decoder_conv: vec![t(&[0.0, 5.0])],
        };
        let l = loss(&[1.0, 5.0], &trace, 0.006);
        assert!((l.total - 0.512).abs() < 1e-12);
        assert!((l.recon - 0.5).abs() < 1e-12);
        let l0 = loss(&[1.0, 5.0], &trace, 0.0);
        assert_eq!(l0.total, l0.recon);
    }

    #[test]
    fn zero_loss_gives_zero_gradient() {
        let layout = Arc::new(ParamLayout::new(&ModelConfig::tiny(8, 2, 1, 3)).unwrap());
        let p = ParamBundle::<f64>::zeros(layout);
        let x = vec![0.0; 8];
        let tr = forward(&p, &x).unwrap();
        assert_eq!(loss(&x, &tr, 0.006).total, 0.0);
        let g = backward(&p, &x, &tr, 0.006).unwrap();
        assert!(g.values().iter().all(|&v| v == 0.0));
        assert_eq!(g.sample_count, 1);
    }

    #[test]
    fn loss_scales_quadratically_with_zero_params() {
        let layout = Arc::new(ParamLayout::new(&ModelConfig::tiny(16, 2, 2, 3)).unwrap());
        let p = ParamBundle::<f64>::zeros(layout);
        let x = signal(16, 0.2);
        let ax: Vec<f64> = x.iter().map(|v| 3.0 * v).collect();
        let l1 = loss(&x, &forward(&p, &x).unwrap(), 0.006).total;
        let l3 = loss(&ax, &forward(&p, &ax).unwrap(), 0.006).total;
        assert!((l3 - 9.0 * l1).abs() < 1e-9 * l3);
    }

    #[test]
    fn batch_gradient_sums_examples() {
        let p = build_model::<f64>(&ModelConfig::tiny(16, 3, 2, 3), 2).unwrap();
        let xs = [signal(16, 0.0), signal(16, 1.3)];
        let (sum, losses) = batch_gradient(&p, &xs).unwrap();
        assert_eq!(sum.sample_count, 2);
        assert_eq!(losses.len(), 2);
        let mut manual = GradDelta::zeros(p.layout().clone());
        for x in &xs {
            let tr = forward(&p, x).unwrap();
            manual.merge(&backward(&p, x, &tr, 0.006).unwrap()).unwrap();
        }
        for (a, b) in sum.values().iter().zip(manual.values()) {
            assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
        }
    }
}
