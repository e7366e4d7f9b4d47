use std::ops::Range;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::kernels::{Activation, ConvParams, DenseParams};
use crate::model::config::ModelConfig;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Block {
    EncoderConv(usize),
    EncoderDense,
    DecoderDense,
    DecoderConv(usize),
}

/// Where one layer's weights and biases live in the flat parameter vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerSlot {
    pub block: Block,
    /// `(out, in, kernel_len)` for convolutions, `(in, out, 1)` for dense layers.
    pub dims: (usize, usize, usize),
    pub weights: Range<usize>,
    pub bias: Range<usize>,
    pub activation: Activation,
}

impl LayerSlot {
    pub fn len(&self) -> usize {
        self.bias.end - self.weights.start
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> Range<usize> {
        self.weights.start..self.bias.end
    }

    fn fan_in(&self) -> usize {
        match self.block {
            Block::EncoderConv(_) | Block::DecoderConv(_) => self.dims.1 * self.dims.2,
            Block::EncoderDense | Block::DecoderDense => self.dims.0,
        }
    }
}

/// Shape map of every trainable tensor, in a fixed order: encoder convs,
/// encoder dense head, decoder dense head, decoder convs. Each layer stores
/// its weights followed by its bias.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamLayout {
    config: ModelConfig,
    slots: Vec<LayerSlot>,
    total: usize,
}

impl ParamLayout {
    pub fn new(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut slots = Vec::new();
        let mut offset = 0;
        let mut push = |block, dims: (usize, usize, usize), activation| {
            let w = dims.0 * dims.1 * dims.2;
            let b = match block {
                Block::EncoderDense | Block::DecoderDense => dims.1,
                _ => dims.0,
            };
            slots.push(LayerSlot {
                block,
                dims,
                weights: offset..offset + w,
                bias: offset + w..offset + w + b,
                activation,
            });
            offset += w + b;
        };
        let mut in_ch = 1;
        for (i, l) in config.encoder.iter().enumerate() {
            push(
                Block::EncoderConv(i),
                (l.feature_maps, in_ch, l.kernel_len),
                Activation::Relu,
            );
            in_ch = l.feature_maps;
        }
        let flat = config.flatten_dim();
        push(Block::EncoderDense, (flat, config.hidden_dim, 1), Activation::Linear);
        push(Block::DecoderDense, (config.hidden_dim, flat, 1), Activation::Relu);
        let n = config.decoder.len();
        for (j, l) in config.decoder.iter().enumerate() {
            let act = if j + 1 == n {
                Activation::Linear
            } else {
                Activation::Relu
            };
            push(Block::DecoderConv(j), (l.feature_maps, in_ch, l.kernel_len), act);
            in_ch = l.feature_maps;
        }
        Ok(ParamLayout {
            config: config.clone(),
            slots,
            total: offset,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn slots(&self) -> &[LayerSlot] {
        &self.slots
    }

    /// Total number of scalars.
    pub fn len(&self) -> usize {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn slot(&self, block: Block) -> &LayerSlot {
        let n = self.config.encoder.len();
        let idx = match block {
            Block::EncoderConv(i) => i,
            Block::EncoderDense => n,
            Block::DecoderDense => n + 1,
            Block::DecoderConv(j) => n + 2 + j,
        };
        &self.slots[idx]
    }

    /// Splits `0..len` into `shards` contiguous ranges whose sizes differ by
    /// at most one.
    pub fn shard_ranges(&self, shards: usize) -> Vec<Range<usize>> {
        split_even(self.total, shards.max(1))
    }
}

pub(crate) fn split_even(n: usize, parts: usize) -> Vec<Range<usize>> {
    let base = n / parts;
    let extra = n % parts;
    let mut start = 0;
    (0..parts)
        .map(|i| {
            let len = base + usize::from(i < extra);
            let r = start..start + len;
            start += len;
            r
        })
        .collect()
}

fn conv_view<'a, T>(slot: &LayerSlot, values: &'a [T]) -> ConvParams<'a, T> {
    ConvParams {
        out_channels: slot.dims.0,
        in_channels: slot.dims.1,
        kernel_len: slot.dims.2,
        weights: &values[slot.weights.clone()],
        bias: &values[slot.bias.clone()],
    }
}

fn dense_view<'a, T>(slot: &LayerSlot, values: &'a [T]) -> DenseParams<'a, T> {
    DenseParams {
        in_dim: slot.dims.0,
        out_dim: slot.dims.1,
        weights: &values[slot.weights.clone()],
        bias: &values[slot.bias.clone()],
    }
}

/// All trainable parameters of the autoencoder, versioned.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamBundle<T> {
    pub version: u64,
    layout: Arc<ParamLayout>,
    values: Vec<T>,
}

impl<T: Scalar> ParamBundle<T> {
    pub fn from_values(layout: Arc<ParamLayout>, version: u64, values: Vec<T>) -> Result<Self> {
        if values.len() != layout.len() {
            return Err(Error::shape(format!(
                "parameter vector has {} scalars, layout needs {}",
                values.len(),
                layout.len()
            )));
        }
        Ok(ParamBundle {
            version,
            layout,
            values,
        })
    }

    pub fn zeros(layout: Arc<ParamLayout>) -> Self {
        let values = vec![T::zero(); layout.len()];
        ParamBundle {
            version: 0,
            layout,
            values,
        }
    }

    pub fn layout(&self) -> &Arc<ParamLayout> {
        &self.layout
    }

    pub fn config(&self) -> &ModelConfig {
        self.layout.config()
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn conv(&self, block: Block) -> ConvParams<'_, T> {
        conv_view(self.layout.slot(block), &self.values)
    }

    pub fn dense(&self, block: Block) -> DenseParams<'_, T> {
        dense_view(self.layout.slot(block), &self.values)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Deterministic initialization: zero-mean normal weights with standard
/// deviation √(2/fan_in) for ReLU layers and √(1/fan_in) for linear ones;
/// zero biases.
pub fn build_model<T: Scalar>(cfg: &ModelConfig, seed: u64) -> Result<ParamBundle<T>> {
    let layout = Arc::new(ParamLayout::new(cfg)?);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = vec![T::zero(); layout.len()];
    for slot in layout.slots() {
        let gain = match slot.activation {
            Activation::Relu => 2.0,
            Activation::Linear => 1.0,
        };
        let std = (gain / slot.fan_in() as f64).sqrt();
        let normal = Normal::new(0.0, std).map_err(|e| Error::config(e.to_string()))?;
        for v in &mut values[slot.weights.clone()] {
            *v = T::of(normal.sample(&mut rng));
        }
    }
    ParamBundle::from_values(layout, 0, values)
}

/// Gradient accumulator with the same shape map as a [`ParamBundle`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradDelta<T> {
    layout: Arc<ParamLayout>,
    values: Vec<T>,
    pub sample_count: u64,
}

impl<T: Scalar> GradDelta<T> {
    pub fn zeros(layout: Arc<ParamLayout>) -> Self {
        let values = vec![T::zero(); layout.len()];
        GradDelta {
            layout,
            values,
            sample_count: 0,
        }
    }

    pub fn from_values(layout: Arc<ParamLayout>, values: Vec<T>, sample_count: u64) -> Result<Self> {
        if values.len() != layout.len() {
            return Err(Error::shape(format!(
                "gradient vector has {} scalars, layout needs {}",
                values.len(),
                layout.len()
            )));
        }
        Ok(GradDelta {
            layout,
            values,
            sample_count,
        })
    }

    pub fn layout(&self) -> &Arc<ParamLayout> {
        &self.layout
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn block(&self, block: Block) -> &[T] {
        &self.values[self.layout.slot(block).range()]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Adds another delta computed against the same shape map.
    pub fn merge(&mut self, other: &GradDelta<T>) -> Result<()> {
        if *self.layout != *other.layout {
            return Err(Error::shape("cannot merge gradients of different layouts"));
        }
        for (a, &b) in self.values.iter_mut().zip(&other.values) {
            *a += b;
        }
        self.sample_count += other.sample_count;
        Ok(())
    }
}
