use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::datagen::design::{design_regressors, TaskDesign};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Row-major `n × length` matrix of time series.
#[derive(Clone, Debug, PartialEq)]
pub struct SignalBatch<T> {
    length: usize,
    data: Vec<T>,
}

impl<T: Scalar> SignalBatch<T> {
    pub fn new(length: usize, data: Vec<T>) -> Result<Self> {
        if length == 0 || data.len() % length != 0 {
            return Err(Error::shape(format!(
                "{} values do not form rows of length {length}",
                data.len()
            )));
        }
        Ok(SignalBatch { length, data })
    }

    pub fn empty(length: usize) -> Self {
        SignalBatch {
            length,
            data: Vec::new(),
        }
    }

    pub fn from_rows<R: AsRef<[T]>>(length: usize, rows: &[R]) -> Result<Self> {
        let mut data = Vec::with_capacity(rows.len() * length);
        for r in rows {
            let r = r.as_ref();
            if r.len() != length {
                return Err(Error::shape(format!("row of length {} in batch of {length}", r.len())));
            }
            data.extend_from_slice(r);
        }
        Ok(SignalBatch { length, data })
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.length
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn length(&self) -> usize {
        self.length
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.length..(i + 1) * self.length]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[T]> {
        self.data.chunks_exact(self.length)
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn push(&mut self, row: &[T]) -> Result<()> {
        if row.len() != self.length {
            return Err(Error::shape("row length does not match batch"));
        }
        self.data.extend_from_slice(row);
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> SignalBatch<U> {
        SignalBatch {
            length: self.length,
            data: self.data.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub n_signals: usize,
    /// Each signal activates between 0 and this many events.
    pub max_active_events: usize,
    /// Range of the nonnegative mixing weight drawn for an active event.
    pub weight_range: (f64, f64),
    pub noise_sigma: f64,
    /// Maximum absolute end-to-end excursion of the linear drift.
    pub drift_amplitude: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_signals: 2000,
            max_active_events: 2,
            weight_range: (0.5, 1.5),
            noise_sigma: 0.3,
            drift_amplitude: 0.2,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self, events: usize) -> Result<()> {
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return Err(Error::config("noise_sigma must be finite and nonnegative"));
        }
        let (lo, hi) = self.weight_range;
        if !(lo >= 0.0 && hi >= lo && hi.is_finite()) {
            return Err(Error::config("weight_range must be finite, nonnegative and ordered"));
        }
        if !(self.drift_amplitude >= 0.0 && self.drift_amplitude.is_finite()) {
            return Err(Error::config("drift_amplitude must be finite and nonnegative"));
        }
        if self.max_active_events > events {
            return Err(Error::config(format!(
                "max_active_events {} exceeds the {events} designed events",
                self.max_active_events
            )));
        }
        Ok(())
    }
}

/// Raw synthetic signals with the ground truth used to build them.
#[derive(Clone, Debug)]
pub struct GeneratedData {
    pub signals: SignalBatch<f64>,
    /// Noise-free part: weighted regressors plus drift.
    pub clean: SignalBatch<f64>,
    /// Per-signal mixing weight of each event (`n × E`).
    pub weights: Vec<Vec<f64>>,
    pub regressors: Vec<Vec<f64>>,
}

/// Draws `Σ_e w_e · regressor_e + drift + N(0, σ²)` per signal. The same
/// design and config always give the same bits.
pub fn generate_dataset(d: &TaskDesign, s: &SyntheticConfig) -> Result<GeneratedData> {
    let regressors = design_regressors(d)?;
    s.validate(regressors.len())?;
    let t_len = d.length;
    let e = regressors.len();
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    let noise = Normal::new(0.0, s.noise_sigma).map_err(|e| Error::config(e.to_string()))?;
    let mut signals = Vec::with_capacity(s.n_signals * t_len);
    let mut clean = Vec::with_capacity(s.n_signals * t_len);
    let mut weights = Vec::with_capacity(s.n_signals);
    let denom = (t_len.max(2) - 1) as f64;
    for _ in 0..s.n_signals {
        let active = rng.random_range(0..=s.max_active_events);
        let mut w = vec![0.0; e];
        for idx in sample(&mut rng, e, active) {
            w[idx] = rng.random_range(s.weight_range.0..=s.weight_range.1);
        }
        let slope = if s.drift_amplitude > 0.0 {
            rng.random_range(-s.drift_amplitude..=s.drift_amplitude)
        } else {
            0.0
        };
        for t in 0..t_len {
            let mut c: f64 = w.iter().zip(&regressors).map(|(&wi, r)| wi * r[t]).sum();
            c += slope * (2.0 * t as f64 / denom - 1.0);
            clean.push(c);
            let n = if s.noise_sigma > 0.0 {
                noise.sample(&mut rng)
            } else {
                0.0
            };
            signals.push(c + n);
        }
        weights.push(w);
    }
    Ok(GeneratedData {
        signals: SignalBatch::new(t_len, signals)?,
        clean: SignalBatch::new(t_len, clean)?,
        weights,
        regressors,
    })
}

/// A z-scored signal and the statistics used to produce it.
#[derive(Clone, Debug, PartialEq)]
pub struct Normalized {
    pub values: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

/// Zero-mean, unit-variance (population) rescaling of one signal.
pub fn normalize(x: &[f64]) -> Result<Normalized> {
    if x.is_empty() {
        return Err(Error::Domain("cannot normalize an empty signal".into()));
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if !(std > 1e-12 * (1.0 + mean.abs())) || !std.is_finite() {
        return Err(Error::Domain("signal has zero variance".into()));
    }
    Ok(Normalized {
        values: x.iter().map(|v| (v - mean) / std).collect(),
        mean,
        std,
    })
}

/// Normalized rows that survived, with their source indices and scales.
#[derive(Clone, Debug)]
pub struct NormalizedBatch {
    pub signals: SignalBatch<f64>,
    pub kept: Vec<usize>,
    pub stds: Vec<f64>,
    pub rejected: usize,
}

/// Normalizes every row, dropping zero-variance ones.
pub fn normalize_batch(batch: &SignalBatch<f64>) -> NormalizedBatch {
    let mut out = SignalBatch::empty(batch.length());
    let mut kept = Vec::new();
    let mut stds = Vec::new();
    let mut rejected = 0;
    for (i, row) in batch.rows().enumerate() {
        match normalize(row) {
            Ok(n) => {
                out.data.extend_from_slice(&n.values);
                kept.push(i);
                stds.push(n.std);
            }
            Err(_) => rejected += 1,
        }
    }
    NormalizedBatch {
        signals: out,
        kept,
        stds,
        rejected,
    }
}
