use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{GradDelta, ParamBundle};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ServerConfig {
    /// Constant scaling factor shared by every per-parameter rate.
    pub gamma: f64,
    /// Added to the root of the accumulator so the first step is defined.
    pub epsilon: f64,
    pub shard_count: usize,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            gamma: 0.01,
            epsilon: 1e-8,
            shard_count: 1,
        }
    }
}

impl ServerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::config("gamma must be positive"));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::config("epsilon must be positive"));
        }
        if self.shard_count == 0 {
            return Err(Error::config("shard_count must be at least 1"));
        }
        Ok(())
    }
}

/// Running sum of squared (mean) gradients per parameter. Kept in f64
/// regardless of the run precision.
#[derive(Clone, Debug, PartialEq)]
pub struct AdagradState {
    pub accum: Vec<f64>,
    pub step: u64,
}

impl AdagradState {
    pub fn new(len: usize) -> Self {
        AdagradState {
            accum: vec![0.0; len],
            step: 0,
        }
    }

    /// Current effective rate `γ / (√accum_i + ε)` of one parameter.
    pub fn rate(&self, i: usize, cfg: &ServerConfig) -> f64 {
        cfg.gamma / (self.accum[i].sqrt() + cfg.epsilon)
    }
}

/// Applies one Adagrad update to a contiguous slice of parameters.
/// `grads` holds summed gradients over `sample_count` examples.
pub(crate) fn adagrad_update<T: Scalar>(
    accum: &mut [f64],
    params: &mut [T],
    grads: &[T],
    sample_count: u64,
    cfg: &ServerConfig,
) {
    let count = sample_count.max(1) as f64;
    for ((a, p), &g) in accum.iter_mut().zip(params.iter_mut()).zip(grads) {
        let g = g.as_f64() / count;
        *a += g * g;
        let eta = cfg.gamma / (a.sqrt() + cfg.epsilon);
        *p = T::of(p.as_f64() - eta * g);
    }
}

/// One server-side update: mean gradient, accumulate squares, step every
/// parameter at its own rate, bump the version.
///
/// A delta with any non-finite entry is rejected before anything changes.
pub fn apply_delta<T: Scalar>(
    state: &mut AdagradState,
    params: &mut ParamBundle<T>,
    delta: &GradDelta<T>,
    cfg: &ServerConfig,
) -> Result<()> {
    if **delta.layout() != **params.layout() || state.accum.len() != params.values().len() {
        return Err(Error::protocol(0, "gradient shape map does not match parameters"));
    }
    if !delta.is_finite() {
        return Err(Error::Numeric("non-finite gradient rejected".into()));
    }
    adagrad_update(
        &mut state.accum,
        params.values_mut(),
        delta.values(),
        delta.sample_count,
        cfg,
    );
    state.step += 1;
    params.version += 1;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelConfig, ParamLayout};
    use std::sync::Arc;

    fn setup(g: f64) -> (AdagradState, ParamBundle<f64>, GradDelta<f64>) {
        let layout = Arc::new(ParamLayout::new(&ModelConfig::tiny(4, 1, 1, 1)).unwrap());
        let p = ParamBundle::zeros(layout.clone());
        let n = layout.len();
        let d = GradDelta::from_values(layout, vec![g; n], 1).unwrap();
        (AdagradState::new(n), p, d)
    }

    #[test]
    fn first_step_moves_by_gamma() {
        let cfg = ServerConfig::default();
        let (mut s, mut p, d) = setup(0.5);
        apply_delta(&mut s, &mut p, &d, &cfg).unwrap();
        assert!((p.values()[0] + 0.01).abs() < 1e-9);
        assert_eq!(p.version, 1);
        assert!((s.rate(0, &cfg) - 0.02).abs() < 1e-9);
    }

    #[test]
    fn second_push_shrinks_rate() {
        let cfg = ServerConfig::default();
        let (mut s, mut p, d) = setup(0.5);
        apply_delta(&mut s, &mut p, &d, &cfg).unwrap();
        apply_delta(&mut s, &mut p, &d, &cfg).unwrap();
        assert!((s.rate(0, &cfg) - 0.01 / 0.5f64.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let cfg = ServerConfig::default();
        let (mut s, mut p, d) = setup(0.0);
        apply_delta(&mut s, &mut p, &d, &cfg).unwrap();
        assert!(p.values().iter().all(|&v| v == 0.0));
        assert!(s.accum.iter().all(|&a| a == 0.0));
    }

    #[test]
    fn mean_gradient_over_samples() {
        let cfg = ServerConfig::default();
        let (mut s, mut p, mut d) = setup(2.0);
        d.sample_count = 4;
        apply_delta(&mut s, &mut p, &d, &cfg).unwrap();
        assert!((s.accum[0] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn non_finite_delta_is_rejected_untouched() {
        let cfg = ServerConfig::default();
        let (mut s, mut p, mut d) = setup(1.0);
        d.values_mut()[0] = f64::NAN;
        assert!(matches!(apply_delta(&mut s, &mut p, &d, &cfg), Err(Error::Numeric(_))));
        assert_eq!(p.version, 0);
        assert!(s.accum.iter().all(|&a| a == 0.0));
    }
}
