use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const CD_TOL: f64 = 1e-6;
const CD_MAX_SWEEPS: usize = 1000;
const MIN_DIAG: f64 = 1e-10;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `K` atoms of length `T`, each with L2 norm at most one.
#[derive(Clone, Debug, PartialEq)]
pub struct Dictionary {
    length: usize,
    atoms: Vec<Vec<f64>>,
}

impl Dictionary {
    /// Builds a dictionary from columns, scaling each to unit norm.
    pub fn from_atoms(atoms: Vec<Vec<f64>>) -> Result<Self> {
        let length = atoms.first().map_or(0, Vec::len);
        if atoms.is_empty() || length == 0 {
            return Err(Error::config("dictionary needs at least one non-empty atom"));
        }
        let mut out = Vec::with_capacity(atoms.len());
        for (k, mut a) in atoms.into_iter().enumerate() {
            if a.len() != length {
                return Err(Error::shape(format!("atom {k} has length {}, expected {length}", a.len())));
            }
            let n = norm(&a);
            if !n.is_finite() || n == 0.0 {
                return Err(Error::Domain(format!("atom {k} has no direction")));
            }
            a.iter_mut().for_each(|v| *v /= n);
            out.push(a);
        }
        Ok(Dictionary { length, atoms: out })
    }

    pub fn atom_length(&self) -> usize {
        self.length
    }

    pub fn atom_count(&self) -> usize {
        self.atoms.len()
    }

    pub fn atom(&self, k: usize) -> &[f64] {
        &self.atoms[k]
    }

    pub fn atoms(&self) -> &[Vec<f64>] {
        &self.atoms
    }

    /// `DᵀD`, row-major `K × K`.
    pub fn gram(&self) -> Vec<f64> {
        let k = self.atoms.len();
        let mut g = vec![0.0; k * k];
        for i in 0..k {
            for j in i..k {
                let v = dot(&self.atoms[i], &self.atoms[j]);
                g[i * k + j] = v;
                g[j * k + i] = v;
            }
        }
        g
    }

    /// `Dᵀx`.
    pub fn correlate(&self, x: &[f64]) -> Vec<f64> {
        self.atoms.iter().map(|a| dot(a, x)).collect()
    }

    /// `Dα`.
    pub fn reconstruct(&self, alpha: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.length];
        for (a, &c) in self.atoms.iter().zip(alpha) {
            if c != 0.0 {
                out.iter_mut().zip(a).for_each(|(o, &v)| *o += c * v);
            }
        }
        out
    }
}

/// How sparse each code must be.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sparsity {
    /// Lasso weight on the L1 term.
    Lambda(f64),
    /// Smallest lasso weight that leaves at most this fraction of atoms
    /// active, found by bisection.
    NonzeroFraction(f64),
}

impl Sparsity {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Sparsity::Lambda(l) if l > 0.0 && l.is_finite() => Ok(()),
            Sparsity::NonzeroFraction(f) if f > 0.0 && f <= 1.0 => Ok(()),
            other => Err(Error::config(format!("invalid sparsity {other:?}"))),
        }
    }
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// Cyclic coordinate descent on ½‖x − Dα‖² + λ‖α‖₁ given `Dᵀx` and the
/// Gram matrix, warm-started from `alpha`.
fn lasso_cd(dtx: &[f64], gram: &[f64], lambda: f64, alpha: &mut [f64]) {
    let k = dtx.len();
    // r = Dᵀx − DᵀDα
    let mut r = dtx.to_vec();
    for (j, &a) in alpha.iter().enumerate() {
        if a != 0.0 {
            for i in 0..k {
                r[i] -= gram[i * k + j] * a;
            }
        }
    }
    for _ in 0..CD_MAX_SWEEPS {
        let mut max_change = 0.0f64;
        for j in 0..k {
            let gjj = gram[j * k + j];
            if gjj <= MIN_DIAG {
                continue;
            }
            let new = soft_threshold(r[j] + gjj * alpha[j], lambda) / gjj;
            let d = new - alpha[j];
            if d != 0.0 {
                for i in 0..k {
                    r[i] -= gram[i * k + j] * d;
                }
                alpha[j] = new;
                max_change = max_change.max(d.abs());
            }
        }
        if max_change < CD_TOL {
            break;
        }
    }
}

fn code_with(dtx: &[f64], gram: &[f64], sparsity: Sparsity) -> Vec<f64> {
    let k = dtx.len();
    let mut alpha = vec![0.0; k];
    match sparsity {
        Sparsity::Lambda(l) => lasso_cd(dtx, gram, l, &mut alpha),
        Sparsity::NonzeroFraction(f) => {
            let target = ((f * k as f64).round() as usize).max(1);
            let nnz = |a: &[f64]| a.iter().filter(|v| **v != 0.0).count();
            let (mut lo, mut hi) = (0.0, dtx.iter().fold(0.0f64, |m, v| m.max(v.abs())));
            let mut best = vec![0.0; k];
            for _ in 0..40 {
                let mid = 0.5 * (lo + hi);
                lasso_cd(dtx, gram, mid, &mut alpha);
                if nnz(&alpha) <= target {
                    best.copy_from_slice(&alpha);
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            alpha = best;
        }
    }
    alpha
}

/// Sparse code of one signal against a column-normalized dictionary.
pub fn sparse_code(x: &[f64], d: &Dictionary, lambda: f64) -> Result<Vec<f64>> {
    code_signal(x, d, Sparsity::Lambda(lambda))
}

pub fn code_signal(x: &[f64], d: &Dictionary, sparsity: Sparsity) -> Result<Vec<f64>> {
    sparsity.validate()?;
    if x.len() != d.atom_length() {
        return Err(Error::shape(format!(
            "signal has length {}, atoms have {}",
            x.len(),
            d.atom_length()
        )));
    }
    if !x.iter().all(|v| v.is_finite()) {
        return Err(Error::Domain("signal contains non-finite values".into()));
    }
    Ok(code_with(&d.correlate(x), &d.gram(), sparsity))
}

/// ½‖x − Dα‖² + λ‖α‖₁.
pub fn lasso_objective(x: &[f64], d: &Dictionary, alpha: &[f64], lambda: f64) -> f64 {
    let r = d.reconstruct(alpha);
    let e: f64 = x.iter().zip(&r).map(|(a, b)| (a - b) * (a - b)).sum();
    0.5 * e + lambda * alpha.iter().map(|a| a.abs()).sum::<f64>()
}

/// Running sums `A = Σ ααᵀ` (row-major `K × K`) and `B = Σ xαᵀ` (one
/// length-`T` column per atom).
#[derive(Clone, Debug, PartialEq)]
pub struct Accumulators {
    pub a: Vec<f64>,
    pub b: Vec<Vec<f64>>,
}

impl Accumulators {
    pub fn new(atom_count: usize, atom_length: usize) -> Self {
        Accumulators {
            a: vec![0.0; atom_count * atom_count],
            b: vec![vec![0.0; atom_length]; atom_count],
        }
    }

    pub fn add(&mut self, x: &[f64], alpha: &[f64]) {
        let k = alpha.len();
        for (i, &ai) in alpha.iter().enumerate() {
            if ai == 0.0 {
                continue;
            }
            for (j, &aj) in alpha.iter().enumerate() {
                self.a[i * k + j] += ai * aj;
            }
            self.b[i].iter_mut().zip(x).for_each(|(b, &v)| *b += ai * v);
        }
    }
}

/// One sweep of block coordinate descent over the columns, each projected
/// back onto the unit ball. Columns whose `A_jj` is negligible are kept.
pub fn dict_update(d: &Dictionary, a: &[f64], b: &[Vec<f64>]) -> Result<Dictionary> {
    let k = d.atom_count();
    let t = d.atom_length();
    if a.len() != k * k || b.len() != k || b.iter().any(|c| c.len() != t) {
        return Err(Error::shape(format!(
            "accumulators do not match a dictionary of {k} atoms of length {t}"
        )));
    }
    let mut atoms = d.atoms.clone();
    let mut u = vec![0.0; t];
    for j in 0..k {
        let ajj = a[j * k + j];
        if ajj < MIN_DIAG {
            continue;
        }
        // u = (b_j − D a_j) / A_jj + d_j
        u.copy_from_slice(&b[j]);
        for (m, atom) in atoms.iter().enumerate() {
            let c = a[m * k + j];
            if c != 0.0 {
                u.iter_mut().zip(atom).for_each(|(o, &v)| *o -= c * v);
            }
        }
        u.iter_mut().zip(&atoms[j]).for_each(|(o, &v)| *o = *o / ajj + v);
        let n = norm(&u).max(1.0);
        atoms[j].iter_mut().zip(&u).for_each(|(o, &v)| *o = v / n);
    }
    Ok(Dictionary { length: t, atoms })
}

/// ½tr(DᵀDA) − tr(DᵀB), the quantity each update sweep decreases.
pub fn surrogate_objective(d: &Dictionary, a: &[f64], b: &[Vec<f64>]) -> f64 {
    let k = d.atom_count();
    let g = d.gram();
    let quad: f64 = g.iter().zip(a).map(|(x, y)| x * y).sum();
    let lin: f64 = (0..k).map(|j| dot(d.atom(j), &b[j])).sum();
    0.5 * quad - lin
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OdlConfig {
    pub atoms: usize,
    pub sparsity: Sparsity,
    pub passes: usize,
    /// Signals coded between dictionary updates.
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for OdlConfig {
    fn default() -> Self {
        OdlConfig {
            atoms: 20,
            sparsity: Sparsity::Lambda(0.7),
            passes: 5,
            batch_size: 8,
            seed: 0,
        }
    }
}

impl OdlConfig {
    pub fn validate(&self) -> Result<()> {
        if self.atoms == 0 || self.passes == 0 || self.batch_size == 0 {
            return Err(Error::config("atoms, passes and batch_size must be positive"));
        }
        self.sparsity.validate()
    }
}

/// Per-signal sparse codes, stored as `(atom, coefficient)` pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseCodes {
    pub atom_count: usize,
    pub codes: Vec<Vec<(usize, f64)>>,
}

impl SparseCodes {
    fn from_dense(atom_count: usize, dense: &[Vec<f64>]) -> Self {
        let codes = dense
            .iter()
            .map(|a| {
                a.iter()
                    .enumerate()
                    .filter(|(_, v)| **v != 0.0)
                    .map(|(j, &v)| (j, v))
                    .collect()
            })
            .collect();
        SparseCodes { atom_count, codes }
    }

    pub fn signal_count(&self) -> usize {
        self.codes.len()
    }

    pub fn dense(&self, i: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.atom_count];
        for &(j, v) in &self.codes[i] {
            out[j] = v;
        }
        out
    }

    /// Coefficient of atom `k` for every signal: the atom's spatial map.
    pub fn atom_row(&self, k: usize) -> Vec<f64> {
        self.codes
            .iter()
            .map(|c| c.iter().find(|(j, _)| *j == k).map_or(0.0, |&(_, v)| v))
            .collect()
    }

    pub fn mean_nonzeros(&self) -> f64 {
        let total: usize = self.codes.iter().map(Vec::len).sum();
        total as f64 / self.codes.len().max(1) as f64
    }
}

#[derive(Clone, Debug)]
pub struct OdlFit {
    pub dictionary: Dictionary,
    pub codes: SparseCodes,
    /// Σ‖x − Dα‖² of each streaming pass, coded against the dictionary of
    /// the moment.
    pub pass_errors: Vec<f64>,
}

impl OdlFit {
    /// Σ‖x − Dα‖² of the final codes.
    pub fn reconstruction_error<S: AsRef<[f64]>>(&self, signals: &[S]) -> f64 {
        signals
            .iter()
            .enumerate()
            .map(|(i, x)| {
                let r = self.dictionary.reconstruct(&self.codes.dense(i));
                x.as_ref().iter().zip(&r).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
            })
            .sum()
    }
}

/// Streaming dictionary learning. The dictionary starts from `K` distinct
/// signals picked by the seed; each pass visits the signals in a seeded
/// order, codes them, accumulates `A` and `B`, and updates the dictionary
/// after every batch. All signals are coded again at the end.
pub fn odl_fit<S: AsRef<[f64]>>(signals: &[S], cfg: &OdlConfig) -> Result<OdlFit> {
    cfg.validate()?;
    let n = signals.len();
    if n < cfg.atoms {
        return Err(Error::config(format!("{n} signals cannot seed {} atoms", cfg.atoms)));
    }
    let t = signals[0].as_ref().len();
    for (i, s) in signals.iter().enumerate() {
        let s = s.as_ref();
        if s.len() != t {
            return Err(Error::shape(format!("signal {i} has length {}, expected {t}", s.len())));
        }
        if !s.iter().all(|v| v.is_finite()) {
            return Err(Error::Domain(format!("signal {i} contains non-finite values")));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let picks = index::sample(&mut rng, n, cfg.atoms);
    let mut d = Dictionary::from_atoms(picks.iter().map(|i| signals[i].as_ref().to_vec()).collect())?;
    let mut acc = Accumulators::new(cfg.atoms, t);
    let mut order: Vec<usize> = (0..n).collect();
    let mut pass_errors = Vec::with_capacity(cfg.passes);
    for _ in 0..cfg.passes {
        order.shuffle(&mut rng);
        let mut err = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let gram = d.gram();
            for &i in batch {
                let x = signals[i].as_ref();
                let alpha = code_with(&d.correlate(x), &gram, cfg.sparsity);
                let r = d.reconstruct(&alpha);
                err += x.iter().zip(&r).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
                acc.add(x, &alpha);
            }
            d = dict_update(&d, &acc.a, &acc.b)?;
        }
        pass_errors.push(err);
    }
    let gram = d.gram();
    let dense: Vec<Vec<f64>> = signals
        .iter()
        .map(|x| code_with(&d.correlate(x.as_ref()), &gram, cfg.sparsity))
        .collect();
    Ok(OdlFit {
        codes: SparseCodes::from_dense(cfg.atoms, &dense),
        dictionary: d,
        pass_errors,
    })
}
