use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

const PEAK_SHAPE: f64 = 6.0;
const UNDERSHOOT_SHAPE: f64 = 16.0;
const UNDERSHOOT_RATIO: f64 = 1.0 / 6.0;
/// Γ(6) and Γ(16).
const GAMMA_6: f64 = 120.0;
const GAMMA_16: f64 = 1_307_674_368_000.0;
/// Support used when sampling the response for convolution.
pub const HRF_SUPPORT_SECS: f64 = 32.0;

fn double_gamma(t: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    let peak = t.powf(PEAK_SHAPE - 1.0) * (-t).exp() / GAMMA_6;
    let under = t.powf(UNDERSHOOT_SHAPE - 1.0) * (-t).exp() / GAMMA_16;
    peak - UNDERSHOOT_RATIO * under
}

fn hrf_peak() -> f64 {
    static PEAK: std::sync::OnceLock<f64> = std::sync::OnceLock::new();
    *PEAK.get_or_init(|| {
        (1..=20_000)
            .map(|i| double_gamma(i as f64 * 1e-3))
            .fold(f64::MIN, f64::max)
    })
}

/// Canonical double-gamma hemodynamic response (peak near 5 s, undershoot
/// near 15 s at one sixth of the peak), scaled so its maximum is 1.
pub fn hrf(t: f64) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(Error::Domain(format!("hrf evaluated at negative time {t}")));
    }
    Ok(double_gamma(t) / hrf_peak())
}

/// Timing of one task condition, in scan units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventTiming {
    pub onsets: Vec<f64>,
    pub durations: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskDesign {
    pub tr: f64,
    pub length: usize,
    pub events: Vec<EventTiming>,
}

impl Default for TaskDesign {
    fn default() -> Self {
        Self::motor()
    }
}

impl TaskDesign {
    /// Motor-task-like block design over 284 scans at TR 0.72 s: a visual
    /// cue precedes each of ten 17-scan movement blocks, and five movement
    /// conditions appear twice each.
    pub fn motor() -> Self {
        let order = [1, 2, 3, 4, 5, 3, 1, 5, 4, 2];
        let mut events = vec![
            EventTiming {
                onsets: vec![],
                durations: vec![],
            };
            6
        ];
        for (k, &cond) in order.iter().enumerate() {
            let start = 8.0 + 27.0 * k as f64;
            events[0].onsets.push(start);
            events[0].durations.push(4.0);
            events[cond].onsets.push(start + 4.0);
            events[cond].durations.push(17.0);
        }
        TaskDesign {
            tr: 0.72,
            length: 284,
            events,
        }
    }

    pub fn event_count(&self) -> usize {
        self.events.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.events.is_empty() {
            return Err(Error::config("design needs at least one event"));
        }
        if !(self.tr > 0.0) || self.length == 0 {
            return Err(Error::config("design needs positive TR and length"));
        }
        for (e, ev) in self.events.iter().enumerate() {
            if ev.onsets.is_empty() {
                return Err(Error::config(format!("event {e} has no onsets")));
            }
            if ev.onsets.len() != ev.durations.len() {
                return Err(Error::config(format!(
                    "event {e} has {} onsets but {} durations",
                    ev.onsets.len(),
                    ev.durations.len()
                )));
            }
            for (&on, &dur) in ev.onsets.iter().zip(&ev.durations) {
                if !(on >= 0.0 && dur >= 0.0 && on + dur <= self.length as f64) {
                    return Err(Error::config(format!(
                        "event {e} block [{on}, {}) leaves [0, {})",
                        on + dur,
                        self.length
                    )));
                }
            }
        }
        Ok(())
    }

    /// Stable 64-bit digest of the design.
    pub fn fingerprint(&self) -> u64 {
        let mut h = Sha256::new();
        h.update(self.tr.to_le_bytes());
        h.update((self.length as u64).to_le_bytes());
        for ev in &self.events {
            h.update((ev.onsets.len() as u64).to_le_bytes());
            for (&o, &d) in ev.onsets.iter().zip(&ev.durations) {
                h.update(o.to_le_bytes());
                h.update(d.to_le_bytes());
            }
        }
        let digest = h.finalize();
        u64::from_le_bytes(digest[..8].try_into().unwrap())
    }
}

/// Box-car of one event, sampled per scan. A scan counts as active for the
/// fraction of it covered by a block.
fn boxcar(ev: &EventTiming, length: usize) -> Vec<f64> {
    let mut b = vec![0.0; length];
    for (&on, &dur) in ev.onsets.iter().zip(&ev.durations) {
        let end = on + dur;
        for (t, v) in b.iter_mut().enumerate() {
            let lo = (t as f64).max(on);
            let hi = ((t + 1) as f64).min(end);
            if hi > lo {
                *v += hi - lo;
            }
        }
    }
    b
}

/// Task regressors: each event's box-car convolved with the response sampled
/// at TR, truncated to the run length and scaled to a maximum of 1. Events
/// with zero total duration give an all-zero row.
pub fn design_regressors(d: &TaskDesign) -> Result<Vec<Vec<f64>>> {
    d.validate()?;
    let taps = (HRF_SUPPORT_SECS / d.tr).ceil() as usize + 1;
    let kernel: Vec<f64> = (0..taps)
        .map(|k| hrf(k as f64 * d.tr))
        .collect::<Result<_>>()?;
    Ok(d.events
        .iter()
        .map(|ev| {
            let b = boxcar(ev, d.length);
            let mut r: Vec<f64> = (0..d.length)
                .map(|t| {
                    kernel
                        .iter()
                        .enumerate()
                        .take(t + 1)
                        .map(|(k, &h)| h * b[t - k])
                        .sum()
                })
                .collect();
            let max = r.iter().copied().fold(0.0, f64::max);
            if max > 0.0 {
                r.iter_mut().for_each(|v| *v /= max);
            }
            r
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hrf_boundaries() {
        assert_eq!(hrf(0.0).unwrap(), 0.0);
        assert!(matches!(hrf(-0.1), Err(Error::Domain(_))));
        assert!(hrf(30.0).unwrap().abs() < 0.01);
    }

    #[test]
    fn zero_duration_event_gives_zero_row() {
        let d = TaskDesign {
            tr: 0.72,
            length: 50,
            events: vec![EventTiming {
                onsets: vec![10.0],
                durations: vec![0.0],
            }],
        };
        assert!(design_regressors(&d).unwrap()[0].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn empty_event_is_rejected() {
        let d = TaskDesign {
            tr: 0.72,
            length: 50,
            events: vec![EventTiming {
                onsets: vec![],
                durations: vec![],
            }],
        };
        assert!(matches!(design_regressors(&d), Err(Error::Config(_))));
    }

    #[test]
    fn motor_design_is_valid() {
        let d = TaskDesign::motor();
        d.validate().unwrap();
        assert_eq!(d.event_count(), 6);
        let r = design_regressors(&d).unwrap();
        assert_eq!(r.len(), 6);
        for row in &r {
            assert_eq!(row.len(), 284);
            let max = row.iter().copied().fold(f64::MIN, f64::max);
            assert!((max - 1.0).abs() < 1e-12);
        }
        assert_eq!(d.fingerprint(), TaskDesign::motor().fingerprint());
    }
}
