use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One convolutional stage: number of feature maps and filter length.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub feature_maps: usize,
    pub kernel_len: usize,
}

impl LayerSpec {
    pub const fn new(feature_maps: usize, kernel_len: usize) -> Self {
        LayerSpec {
            feature_maps,
            kernel_len,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub input_length: usize,
    pub encoder: Vec<LayerSpec>,
    pub decoder: Vec<LayerSpec>,
    pub pool: usize,
    pub hidden_dim: usize,
    pub lambda_reg: f64,
}

impl Default for ModelConfig {
    /// The 4+4 layer plan: encoder 32/21, 64/9, 128/9, 256/9 and decoder
    /// 128/9, 64/9, 32/9, 1/21 over 284-point signals.
    fn default() -> Self {
        ModelConfig {
            input_length: 284,
            encoder: vec![
                LayerSpec::new(32, 21),
                LayerSpec::new(64, 9),
                LayerSpec::new(128, 9),
                LayerSpec::new(256, 9),
            ],
            decoder: vec![
                LayerSpec::new(128, 9),
                LayerSpec::new(64, 9),
                LayerSpec::new(32, 9),
                LayerSpec::new(1, 21),
            ],
            pool: 2,
            hidden_dim: 284,
            lambda_reg: 0.006,
        }
    }
}

impl ModelConfig {
    /// Small mirrored model, mostly for tests and gradient checks.
    pub fn tiny(input_length: usize, filters: usize, layers: usize, kernel_len: usize) -> Self {
        let encoder = vec![LayerSpec::new(filters, kernel_len); layers];
        let mut decoder = vec![LayerSpec::new(filters, kernel_len); layers];
        *decoder.last_mut().unwrap() = LayerSpec::new(1, kernel_len);
        ModelConfig {
            input_length,
            encoder,
            decoder,
            pool: 2,
            hidden_dim: input_length,
            lambda_reg: 0.006,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.encoder.len();
        if n == 0 {
            return Err(Error::config("encoder needs at least one layer"));
        }
        if self.decoder.len() != n {
            return Err(Error::config(format!(
                "decoder has {} layers, encoder has {n}; unpooling pairs them one to one",
                self.decoder.len()
            )));
        }
        if self.input_length == 0 || self.pool == 0 {
            return Err(Error::config("input length and pool size must be positive"));
        }
        if self.hidden_dim != self.input_length {
            return Err(Error::config(format!(
                "hidden_dim {} must equal input_length {}",
                self.hidden_dim, self.input_length
            )));
        }
        if !(self.lambda_reg >= 0.0 && self.lambda_reg.is_finite()) {
            return Err(Error::config("lambda_reg must be finite and nonnegative"));
        }
        for l in self.encoder.iter().chain(&self.decoder) {
            if l.feature_maps == 0 || l.kernel_len == 0 {
                return Err(Error::config("layer dimensions must be positive"));
            }
            if l.kernel_len % 2 == 0 {
                return Err(Error::config(format!("kernel length {} is even", l.kernel_len)));
            }
        }
        // Decoder stage j unpools with the switches of encoder stage n-1-j, so
        // its input must have that stage's channel count.
        for j in 1..n {
            let want = self.encoder[n - 1 - j].feature_maps;
            if self.decoder[j - 1].feature_maps != want {
                return Err(Error::config(format!(
                    "decoder layer {} emits {} maps but encoder layer {} switches cover {want}",
                    j - 1,
                    self.decoder[j - 1].feature_maps,
                    n - 1 - j
                )));
            }
        }
        let last = self.decoder[n - 1];
        if last.feature_maps != 1 {
            return Err(Error::config("decoder output layer must have one feature map"));
        }
        if last.kernel_len != self.encoder[0].kernel_len {
            return Err(Error::config(
                "decoder output kernel must mirror the first encoder kernel",
            ));
        }
        Ok(())
    }

    /// Signal length entering each encoder stage, plus the top pooled length.
    pub fn stage_lengths(&self) -> Vec<usize> {
        let mut lens = vec![self.input_length];
        for _ in &self.encoder {
            let l = *lens.last().unwrap();
            lens.push(l.div_ceil(self.pool));
        }
        lens
    }

    /// Encoder post-pool lengths, one per stage.
    pub fn pooled_lengths(&self) -> Vec<usize> {
        self.stage_lengths()[1..].to_vec()
    }

    pub fn top_channels(&self) -> usize {
        self.encoder.last().map_or(0, |l| l.feature_maps)
    }

    /// Size of the flattened encoder-top feature map feeding the dense head.
    pub fn flatten_dim(&self) -> usize {
        self.top_channels() * *self.stage_lengths().last().unwrap()
    }
}

/// Scalars in a convolution with `out` filters over `inp` channels.
pub const fn conv_param_count(out: usize, inp: usize, kernel_len: usize) -> usize {
    out * inp * kernel_len + out
}

pub const fn dense_param_count(in_dim: usize, out_dim: usize) -> usize {
    in_dim * out_dim + out_dim
}

/// Closed-form trainable scalar count for a model configuration.
pub fn param_count(cfg: &ModelConfig) -> usize {
    let mut total = 0;
    let mut in_ch = 1;
    for l in &cfg.encoder {
        total += conv_param_count(l.feature_maps, in_ch, l.kernel_len);
        in_ch = l.feature_maps;
    }
    let flat = cfg.flatten_dim();
    total += dense_param_count(flat, cfg.hidden_dim);
    total += dense_param_count(cfg.hidden_dim, flat);
    for l in &cfg.decoder {
        total += conv_param_count(l.feature_maps, in_ch, l.kernel_len);
        in_ch = l.feature_maps;
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        ModelConfig::default().validate().unwrap();
        ModelConfig::tiny(8, 2, 2, 3).validate().unwrap();
    }

    #[test]
    fn pooled_lengths_use_ceil_mode() {
        assert_eq!(ModelConfig::default().pooled_lengths(), vec![142, 71, 36, 18]);
        assert_eq!(ModelConfig::default().flatten_dim(), 256 * 18);
    }

    #[test]
    fn encoder_conv_counts() {
        let cfg = ModelConfig::default();
        let mut in_ch = 1;
        let counts: Vec<usize> = cfg
            .encoder
            .iter()
            .map(|l| {
                let c = conv_param_count(l.feature_maps, in_ch, l.kernel_len);
                in_ch = l.feature_maps;
                c
            })
            .collect();
        assert_eq!(counts, vec![704, 18_496, 73_856, 295_168]);
        assert_eq!(counts.iter().sum::<usize>(), 388_224);
    }

    #[test]
    fn single_filter_layer_has_two_scalars() {
        assert_eq!(conv_param_count(1, 1, 1), 2);
    }

    #[test]
    fn rejects_mismatched_plans() {
        let mut cfg = ModelConfig::default();
        cfg.decoder[0].feature_maps = 100;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));

        let mut cfg = ModelConfig::default();
        cfg.hidden_dim = 100;
        assert!(cfg.validate().is_err());

        let mut cfg = ModelConfig::default();
        cfg.decoder[3].kernel_len = 9;
        assert!(cfg.validate().is_err());

        let mut cfg = ModelConfig::default();
        cfg.encoder[1].kernel_len = 8;
        assert!(cfg.validate().is_err());
    }
}
