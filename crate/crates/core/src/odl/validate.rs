use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datagen::SignalBatch;
use crate::error::{Error, Result};
use crate::model::{decode_from_hidden, decode_with_switches, encode, forward, ParamBundle};
use crate::odl::dictionary::{odl_fit, Dictionary, OdlConfig, OdlFit};
use crate::scalar::Scalar;

/// Pearson correlation of two equal-length, non-constant vectors.
pub fn pearson_corr(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape(format!("lengths {} and {} differ", a.len(), b.len())));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if !(saa > 0.0 && sbb > 0.0) {
        return Err(Error::UndefinedCorrelation(
            "one of the vectors is constant".into(),
        ));
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// How setup-1 atoms, which live in hidden-code space, are carried back to
/// signal space.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Projection {
    /// The decoder applied to the atom itself, up-sampling in place of
    /// unpooling.
    #[default]
    Direct,
    /// Central difference of the up-sampling decoder around the mean code,
    /// stepped along the atom by the typical code scale.
    Linearized,
    /// Central difference around the code of the signal loading most
    /// strongly on the atom, unpooling with that signal's switches.
    Switches,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidationConfig {
    pub odl: OdlConfig,
    pub projection: Projection,
}

/// Best-matching atom for one task event in one setup.
#[derive(Clone, Debug, PartialEq)]
pub struct EventMatch {
    pub event_id: usize,
    pub atom_id: usize,
    /// |PCC|; the atom's sign is arbitrary.
    pub pcc: f64,
    pub signed_pcc: f64,
    /// The matched atom's coefficient for every signal.
    pub spatial_map: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct ValidationReport {
    /// Hidden-feature setup, scored on the projected atoms.
    pub setup1: Vec<EventMatch>,
    /// Raw-signal setup.
    pub setup2: Vec<EventMatch>,
    pub setup1_atoms: Dictionary,
    pub setup1_projected: Vec<Vec<f64>>,
    pub setup2_atoms: Dictionary,
}

fn mean_pcc(m: &[EventMatch]) -> f64 {
    m.iter().map(|e| e.pcc).sum::<f64>() / m.len().max(1) as f64
}

impl ValidationReport {
    pub fn setup1_mean_pcc(&self) -> f64 {
        mean_pcc(&self.setup1)
    }

    pub fn setup2_mean_pcc(&self) -> f64 {
        mean_pcc(&self.setup2)
    }

    /// Writes `validation.csv` plus the atom matrices and spatial maps.
    pub fn write_csvs(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let mut w = csv::Writer::from_path(dir.join("validation.csv"))?;
        w.write_record(["event_id", "setup", "atom_id", "pcc"])?;
        for (setup, matches) in [(1, &self.setup1), (2, &self.setup2)] {
            for m in matches {
                w.write_record([
                    m.event_id.to_string(),
                    setup.to_string(),
                    m.atom_id.to_string(),
                    m.pcc.to_string(),
                ])?;
            }
        }
        w.flush()?;
        write_matrix(dir.join("atoms_setup1_hidden.csv"), self.setup1_atoms.atoms())?;
        write_matrix(dir.join("atoms_setup1_projected.csv"), &self.setup1_projected)?;
        write_matrix(dir.join("atoms_setup2.csv"), self.setup2_atoms.atoms())?;
        let mut w = csv::Writer::from_path(dir.join("spatial_maps.csv"))?;
        for (setup, matches) in [(1, &self.setup1), (2, &self.setup2)] {
            for m in matches {
                let mut row = vec![m.event_id.to_string(), setup.to_string(), m.atom_id.to_string()];
                row.extend(m.spatial_map.iter().map(f64::to_string));
                w.write_record(&row)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// One atom per row, one time point per column.
fn write_matrix(path: impl AsRef<Path>, rows: &[Vec<f64>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    if let Some(first) = rows.first() {
        let mut header = vec!["atom_id".to_string()];
        header.extend((0..first.len()).map(|t| format!("t{t}")));
        w.write_record(&header)?;
    }
    for (k, r) in rows.iter().enumerate() {
        let mut rec = vec![k.to_string()];
        rec.extend(r.iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// For each design, the atom with the largest |PCC|. Constant atoms are
/// skipped.
pub fn match_designs(atoms: &[Vec<f64>], designs: &[Vec<f64>], fit: &OdlFit) -> Result<Vec<EventMatch>> {
    designs
        .iter()
        .enumerate()
        .map(|(e, design)| {
            let mut best: Option<(usize, f64)> = None;
            for (k, atom) in atoms.iter().enumerate() {
                match pearson_corr(atom, design) {
                    Ok(r) if best.is_none_or(|(_, b)| r.abs() > b.abs()) => best = Some((k, r)),
                    Ok(_) | Err(Error::UndefinedCorrelation(_)) => {}
                    Err(e) => return Err(e),
                }
            }
            let (atom_id, r) = best.ok_or_else(|| {
                Error::Validation(format!("no atom correlates with design {e}"))
            })?;
            Ok(EventMatch {
                event_id: e,
                atom_id,
                pcc: r.abs(),
                signed_pcc: r,
                spatial_map: fit.codes.atom_row(atom_id),
            })
        })
        .collect()
}

fn zscore(v: &[f64]) -> Option<(Vec<f64>, f64)> {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    let s = var.sqrt();
    (s > 1e-12).then(|| (v.iter().map(|x| (x - m) / s).collect(), s))
}

/// Hidden codes of every signal with the mean code removed, each then
/// scaled to unit variance; plus the mean code and the mean scale.
struct HiddenSet {
    codes: Vec<Vec<f64>>,
    /// Signal index behind each entry of `codes`.
    kept: Vec<usize>,
    mean_code: Vec<f64>,
    scale: f64,
}

fn hidden_set<T: Scalar>(params: &ParamBundle<T>, signals: &SignalBatch<T>) -> Result<HiddenSet> {
    let t = params.config().hidden_dim;
    let mut raw = Vec::with_capacity(signals.len());
    let mut mean_code = vec![0.0; t];
    for x in signals.rows() {
        let h: Vec<f64> = encode(params, x)?.iter().map(|v| v.as_f64()).collect();
        if !h.iter().all(|v| v.is_finite()) {
            return Err(Error::Validation("encoder produced non-finite codes".into()));
        }
        mean_code.iter_mut().zip(&h).for_each(|(m, v)| *m += v);
        raw.push(h);
    }
    let n = raw.len().max(1) as f64;
    mean_code.iter_mut().for_each(|m| *m /= n);
    let mut codes = Vec::with_capacity(raw.len());
    let mut kept = Vec::with_capacity(raw.len());
    let mut scale = 0.0;
    for (i, mut h) in raw.into_iter().enumerate() {
        h.iter_mut().zip(&mean_code).for_each(|(v, m)| *v -= m);
        if let Some((z, s)) = zscore(&h) {
            scale += s;
            codes.push(z);
            kept.push(i);
        }
    }
    if codes.is_empty() {
        return Err(Error::Validation(
            "hidden codes have no variance; the model looks untrained".into(),
        ));
    }
    scale /= codes.len() as f64;
    Ok(HiddenSet {
        codes,
        kept,
        mean_code,
        scale,
    })
}

fn project<T: Scalar>(
    params: &ParamBundle<T>,
    signals: &SignalBatch<T>,
    fit: &OdlFit,
    hidden: &HiddenSet,
    how: Projection,
) -> Result<Vec<Vec<f64>>> {
    let to_t = |h: Vec<f64>| -> Vec<T> { h.into_iter().map(T::of).collect() };
    let to_f64 = |v: Vec<T>| -> Vec<f64> { v.iter().map(|x| x.as_f64()).collect() };
    let s = hidden.scale;
    let along = |base: &[f64], d: &[f64], sign: f64| -> Vec<f64> {
        base.iter().zip(d).map(|(m, v)| m + sign * s * v).collect()
    };
    fit.dictionary
        .atoms()
        .iter()
        .enumerate()
        .map(|(k, d)| match how {
            Projection::Direct => Ok(to_f64(decode_from_hidden(params, &to_t(d.clone()))?)),
            Projection::Linearized => {
                let plus = decode_from_hidden(params, &to_t(along(&hidden.mean_code, d, 1.0)))?;
                let minus = decode_from_hidden(params, &to_t(along(&hidden.mean_code, d, -1.0)))?;
                Ok(plus.iter().zip(&minus).map(|(a, b)| (*a - *b).as_f64()).collect())
            }
            Projection::Switches => {
                let row = fit.codes.atom_row(k);
                let best = (0..row.len())
                    .max_by(|&a, &b| row[a].abs().total_cmp(&row[b].abs()))
                    .unwrap_or(0);
                let trace = forward(params, signals.row(hidden.kept[best]))?;
                let h: Vec<f64> = trace.hidden.iter().map(|v| v.as_f64()).collect();
                let plus = decode_with_switches(params, &to_t(along(&h, d, 1.0)), &trace.switches)?;
                let minus = decode_with_switches(params, &to_t(along(&h, d, -1.0)), &trace.switches)?;
                Ok(plus.iter().zip(&minus).map(|(a, b)| (*a - *b).as_f64()).collect())
            }
        })
        .collect()
}

/// Runs dictionary learning on the raw signals and on their hidden codes,
/// then scores each setup's atoms against the task designs. Setup-1 atoms
/// are projected through the decoder before scoring.
pub fn run_validation<T: Scalar>(
    params: &ParamBundle<T>,
    signals: &SignalBatch<T>,
    designs: &[Vec<f64>],
    cfg: &ValidationConfig,
) -> Result<ValidationReport> {
    if designs.is_empty() {
        return Err(Error::config("no designs to validate against"));
    }
    let t = params.config().input_length;
    if signals.length() != t || designs.iter().any(|d| d.len() != t) {
        return Err(Error::shape(format!("signals and designs must have length {t}")));
    }
    let raw: Vec<Vec<f64>> = signals
        .rows()
        .map(|r| r.iter().map(|v| v.as_f64()).collect())
        .collect();
    let fit2 = odl_fit(&raw, &cfg.odl)?;
    let setup2 = match_designs(fit2.dictionary.atoms(), designs, &fit2)?;

    let hidden = hidden_set(params, signals)?;
    let fit1 = odl_fit(&hidden.codes, &cfg.odl)?;
    let projected = project(params, signals, &fit1, &hidden, cfg.projection)?;
    let setup1 = match_designs(&projected, designs, &fit1)?;

    Ok(ValidationReport {
        setup1,
        setup2,
        setup1_atoms: fit1.dictionary,
        setup1_projected: projected,
        setup2_atoms: fit2.dictionary,
    })
}
