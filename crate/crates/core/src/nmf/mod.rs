//! Supervised Itakura-Saito NMF.
//!
//! Each landmark source is modelled as a zero-mean complex Gaussian whose
//! per-bin variance is `Σ_l w_{lf} h_{lt}`. Landmark dictionaries are learned
//! once from isolated recordings ([`train_basis`]); at localization time the
//! mixture power is explained by the frozen landmark dictionaries plus a small
//! free dictionary for everything else ([`decompose`]). Sources are recovered
//! with per-bin Wiener gains, which sum to one across sources, so the
//! estimates always add back up to the mixture.

use ndarray::{s, Array2, ArrayView2, Axis, Zip};
use ndarray::linalg::general_mat_mul;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::{FeatureKind, FeatureVector, Spectrogram};
use crate::error::{Error, Result};

pub const DEFAULT_FLOOR: f64 = 1e-12;

/// Power floor relative to the mean power of the analysed spectrogram.
pub const RELATIVE_FLOOR: f64 = 1e-6;

/// Initial noise activations relative to the landmark ones.
const NOISE_START: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NmfConfig {
    /// Basis count per landmark source.
    pub landmark_bases: usize,
    /// Free basis count for the residual (noise) source.
    pub noise_bases: usize,
    pub iterations: usize,
    pub floor: f64,
}

impl Default for NmfConfig {
    fn default() -> Self {
        Self {
            landmark_bases: 5,
            noise_bases: 4,
            iterations: 100,
            floor: DEFAULT_FLOOR,
        }
    }
}

impl NmfConfig {
    pub fn validate(&self) -> Result<()> {
        if self.landmark_bases == 0 {
            return Err(Error::Config("nmf.landmark_bases must be at least 1".into()));
        }
        if !(self.floor > 0.0 && self.floor.is_finite()) {
            return Err(Error::Config("nmf.floor must be positive".into()));
        }
        Ok(())
    }
}

/// Nonnegative `F × L` spectral dictionary of one source (`source_id` 0 is the noise source).
#[derive(Clone, Debug, PartialEq)]
pub struct BasisMatrix {
    w: Array2<f64>,
    source_id: usize,
}

impl BasisMatrix {
    pub fn new(w: Array2<f64>, source_id: usize) -> Result<Self> {
        if w.ncols() == 0 || w.nrows() == 0 {
            return Err(Error::invalid("basis matrix must be non-empty"));
        }
        if w.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::invalid("basis entries must be positive and finite"));
        }
        Ok(Self { w, source_id })
    }

    pub fn w(&self) -> &Array2<f64> {
        &self.w
    }

    pub fn source_id(&self) -> usize {
        self.source_id
    }

    pub fn n_bases(&self) -> usize {
        self.w.ncols()
    }

    pub fn n_freqs(&self) -> usize {
        self.w.nrows()
    }
}

/// Nonnegative `L × T` activations of one source.
#[derive(Clone, Debug, PartialEq)]
pub struct ActivationMatrix {
    h: Array2<f64>,
}

impl ActivationMatrix {
    pub fn new(h: Array2<f64>) -> Result<Self> {
        if h.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::invalid("activations must be nonnegative and finite"));
        }
        Ok(Self { h })
    }

    pub fn h(&self) -> &Array2<f64> {
        &self.h
    }
}

/// Frozen landmark dictionaries plus inference settings.
#[derive(Clone, Debug, PartialEq)]
pub struct NmfModel {
    landmark_bases: Vec<BasisMatrix>,
    config: NmfConfig,
}

impl NmfModel {
    pub fn new(landmark_bases: Vec<BasisMatrix>, config: NmfConfig) -> Result<Self> {
        config.validate()?;
        let first = landmark_bases
            .first()
            .ok_or_else(|| Error::invalid("model needs at least one landmark source"))?;
        let f = first.n_freqs();
        for b in &landmark_bases {
            if b.n_freqs() != f {
                return Err(Error::DimensionMismatch {
                    what: "basis frequency bins",
                    expected: f,
                    got: b.n_freqs(),
                });
            }
        }
        Ok(Self {
            landmark_bases,
            config,
        })
    }

    /// Learns one dictionary per isolated landmark recording. Source ids are
    /// assigned 1..=K in input order.
    pub fn train(isolated: &[Spectrogram], config: NmfConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let bases = isolated
            .iter()
            .enumerate()
            .map(|(i, spec)| {
                let seed = crate::seed::derive(seed, &[0x7261_696e, i as u64]);
                let mut basis = train_basis_with(spec, config.landmark_bases, config.iterations, config.floor, seed, None)?;
                basis.source_id = i + 1;
                Ok(basis)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(bases, config)
    }

    pub fn landmark_bases(&self) -> &[BasisMatrix] {
        &self.landmark_bases
    }

    pub fn config(&self) -> &NmfConfig {
        &self.config
    }

    pub fn n_sources(&self) -> usize {
        self.landmark_bases.len()
    }

    pub fn n_freqs(&self) -> usize {
        self.landmark_bases[0].n_freqs()
    }

    /// Same dictionaries in a different order (`order[i]` is the old index of new source `i`).
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        let bases = order
            .iter()
            .map(|&i| {
                self.landmark_bases
                    .get(i)
                    .cloned()
                    .ok_or_else(|| Error::invalid(format!("source index {i} out of range")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(bases, self.config)
    }
}

/// Itakura-Saito divergence `Σ v/m − ln(v/m) − 1`.
pub fn is_divergence(v: &Array2<f64>, model: &Array2<f64>) -> f64 {
    Zip::from(v)
        .and(model)
        .fold(0.0, |acc, &v, &m| {
            let r = v / m;
            acc + r - r.ln() - 1.0
        })
}

/// `|Y|²` floored at `floor` and at `RELATIVE_FLOOR` times its mean.
fn power_spectrogram(spec: &Spectrogram, floor: f64) -> Array2<f64> {
    let power = spec.power();
    let floor = floor.max(RELATIVE_FLOOR * power.mean().unwrap_or(0.0));
    power.mapv(|v| v.max(floor))
}

fn uniform_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    // (0, 1]
    Array2::from_shape_simple_fn((rows, cols), || 1.0 - rng.gen::<f64>())
}

fn normalize_columns(w: &mut Array2<f64>, mut h: Option<&mut Array2<f64>>, floor: f64) {
    for (l, mut col) in w.axis_iter_mut(Axis(1)).enumerate() {
        let sum = col.sum();
        col.mapv_inplace(|v| (v / sum).max(floor));
        if let Some(h) = h.as_deref_mut() {
            h.row_mut(l).mapv_inplace(|v| (v * sum).max(floor));
        }
    }
}

/// Rescales `h` so the initial model has the same mean power as the data.
fn match_scale(v: &Array2<f64>, w: &Array2<f64>, h: &mut Array2<f64>, floor: f64) {
    let model = w.dot(&*h);
    let ratio = v.mean().unwrap_or(1.0) / model.mean().unwrap_or(1.0);
    if ratio.is_finite() && ratio > 0.0 {
        h.mapv_inplace(|x| (x * ratio).max(floor));
    }
}

/// Fills `a = v ⊙ m^-2` and `b = m^-1`.
fn fill_ratios(v: &Array2<f64>, m: &Array2<f64>, a: &mut Array2<f64>, b: &mut Array2<f64>) {
    Zip::from(a).and(b).and(v).and(m).for_each(|a, b, &v, &m| {
        let inv = 1.0 / m;
        *b = inv;
        *a = v * inv * inv;
    });
}

/// Multiplicative IS-NMF updates. All of `h` is updated; only the first
/// `trainable` columns of `w` are. Returns the objective after every
/// iteration (index 0 is the initial value) when `trace` is set.
fn multiplicative_updates(
    v: &Array2<f64>,
    w: &mut Array2<f64>,
    h: &mut Array2<f64>,
    trainable: usize,
    iterations: usize,
    floor: f64,
    trace: Option<&mut Vec<f64>>,
) {
    let (f, t) = v.dim();
    let mut model = Array2::zeros((f, t));
    let mut a = Array2::zeros((f, t));
    let mut b = Array2::zeros((f, t));
    let mut trace = trace;
    if let Some(trace) = trace.as_deref_mut() {
        general_mat_mul(1.0, &*w, &*h, 0.0, &mut model);
        trace.push(is_divergence(v, &model));
    }
    for _ in 0..iterations {
        general_mat_mul(1.0, &*w, &*h, 0.0, &mut model);
        fill_ratios(v, &model, &mut a, &mut b);
        let num = w.t().dot(&a);
        let den = w.t().dot(&b);
        Zip::from(&mut *h).and(&num).and(&den).for_each(|h, &n, &d| {
            *h = (*h * n / d).max(floor);
        });

        if trainable > 0 {
            general_mat_mul(1.0, &*w, &*h, 0.0, &mut model);
            fill_ratios(v, &model, &mut a, &mut b);
            let active = h.slice(s![..trainable, ..]);
            let num = a.dot(&active.t());
            let den = b.dot(&active.t());
            Zip::from(w.slice_mut(s![.., ..trainable]))
                .and(&num)
                .and(&den)
                .for_each(|w, &n, &d| {
                    *w = (*w * n / d).max(floor);
                });
        }

        if let Some(trace) = trace.as_deref_mut() {
            general_mat_mul(1.0, &*w, &*h, 0.0, &mut model);
            trace.push(is_divergence(v, &model));
        }
    }
}

/// Learns an `F × L` dictionary from an isolated recording. Columns are
/// normalized to unit ℓ1 norm. The returned basis has `source_id` 0.
pub fn train_basis(isolated: &Spectrogram, l: usize, n_iter: usize, seed: u64) -> Result<BasisMatrix> {
    train_basis_with(isolated, l, n_iter, DEFAULT_FLOOR, seed, None)
}

/// [`train_basis`] that also returns the IS objective per iteration.
pub fn train_basis_traced(
    isolated: &Spectrogram,
    l: usize,
    n_iter: usize,
    seed: u64,
) -> Result<(BasisMatrix, Vec<f64>)> {
    let mut trace = Vec::with_capacity(n_iter + 1);
    let basis = train_basis_with(isolated, l, n_iter, DEFAULT_FLOOR, seed, Some(&mut trace))?;
    Ok((basis, trace))
}

fn train_basis_with(
    isolated: &Spectrogram,
    l: usize,
    n_iter: usize,
    floor: f64,
    seed: u64,
    trace: Option<&mut Vec<f64>>,
) -> Result<BasisMatrix> {
    if l == 0 {
        return Err(Error::invalid("basis count must be at least 1"));
    }
    if isolated.energy() == 0.0 {
        return Err(Error::ZeroEnergy("isolated recording"));
    }
    let v = power_spectrogram(isolated, floor);
    let (f, t) = v.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = uniform_matrix(&mut rng, f, l);
    let mut h = uniform_matrix(&mut rng, l, t);
    normalize_columns(&mut w, None, floor);
    match_scale(&v, &w, &mut h, floor);
    multiplicative_updates(&v, &mut w, &mut h, l, n_iter, floor, trace);
    normalize_columns(&mut w, Some(&mut h), floor);
    BasisMatrix::new(w, 0)
}

/// Fitted parameters of the mixture model for one spectrogram.
#[derive(Clone, Debug)]
pub struct Decomposition {
    bases: Vec<BasisMatrix>,
    activations: Vec<ActivationMatrix>,
    mixture: Spectrogram,
}

impl Decomposition {
    /// Assembles a decomposition from explicit parameters; index 0 is the noise source.
    pub fn from_parts(
        bases: Vec<BasisMatrix>,
        activations: Vec<ActivationMatrix>,
        mixture: Spectrogram,
    ) -> Result<Self> {
        if bases.len() < 2 || bases.len() != activations.len() {
            return Err(Error::invalid(
                "decomposition needs a noise source and at least one landmark, with matching activations",
            ));
        }
        for (b, a) in bases.iter().zip(&activations) {
            if b.n_freqs() != mixture.n_freqs() {
                return Err(Error::DimensionMismatch {
                    what: "basis frequency bins",
                    expected: mixture.n_freqs(),
                    got: b.n_freqs(),
                });
            }
            if a.h.dim() != (b.n_bases(), mixture.n_frames()) {
                return Err(Error::invalid("activation shape does not match basis and mixture"));
            }
        }
        Ok(Self {
            bases,
            activations,
            mixture,
        })
    }

    pub fn bases(&self) -> &[BasisMatrix] {
        &self.bases
    }

    pub fn activations(&self) -> &[ActivationMatrix] {
        &self.activations
    }

    pub fn mixture(&self) -> &Spectrogram {
        &self.mixture
    }

    /// Number of landmark sources (excluding noise).
    pub fn n_landmarks(&self) -> usize {
        self.bases.len() - 1
    }

    /// `W_k H_k` for source `k` (0 = noise).
    pub fn source_variance(&self, k: usize) -> Array2<f64> {
        self.bases[k].w.dot(&self.activations[k].h)
    }

    pub fn total_variance(&self) -> Array2<f64> {
        let mut total = self.source_variance(0);
        for k in 1..self.bases.len() {
            total += &self.source_variance(k);
        }
        total
    }

    /// Energy-weighted fraction of model variance assigned to source `k`.
    pub fn variance_share(&self, k: usize) -> f64 {
        let total = self.total_variance();
        let part = self.source_variance(k);
        let power = self.mixture.power();
        let num = Zip::from(&power)
            .and(&part)
            .and(&total)
            .fold(0.0, |acc, &p, &s, &t| acc + p * s / t);
        num / power.sum()
    }

    fn wiener_with_total(&self, k: usize, total: &Array2<f64>) -> Spectrogram {
        let part = self.source_variance(k);
        let mut out = Array2::<Complex64>::zeros(total.dim());
        Zip::from(&mut out)
            .and(self.mixture.values())
            .and(&part)
            .and(total)
            .for_each(|o, &y, &s, &t| *o = y * (s / t));
        self.mixture.with_values(out)
    }

    /// Wiener estimate of source `k` (0 = noise, 1..=K landmarks).
    pub fn wiener_extract(&self, k: usize) -> Result<Spectrogram> {
        if k >= self.bases.len() {
            return Err(Error::invalid(format!(
                "source index {k} out of range 0..={}",
                self.n_landmarks()
            )));
        }
        Ok(self.wiener_with_total(k, &self.total_variance()))
    }

    /// `½·ln Σ|ŝ_k|²` for every landmark.
    pub fn wiener_features(&self) -> Result<FeatureVector> {
        let total = self.total_variance();
        let power = self.mixture.power();
        let values = (1..self.bases.len())
            .map(|k| {
                let part = self.source_variance(k);
                let energy = Zip::from(&power)
                    .and(&part)
                    .and(&total)
                    .fold(0.0, |acc, &p, &s, &t| {
                        let g = s / t;
                        acc + g * g * p
                    });
                0.5 * energy.max(f64::MIN_POSITIVE).ln()
            })
            .collect();
        FeatureVector::new(values, FeatureKind::SnmfWf)
    }

    /// `ln(mean_t Σ_l h_{k,lt})` for every landmark.
    pub fn activation_features(&self) -> Result<FeatureVector> {
        let values = self.activations[1..]
            .iter()
            .map(|a| {
                let per_frame = a.h.sum_axis(Axis(0));
                per_frame.mean().unwrap_or(0.0).max(f64::MIN_POSITIVE).ln()
            })
            .collect();
        FeatureVector::new(values, FeatureKind::SnmfAct)
    }
}

/// Fits noise dictionary and all activations to `mixture` with the landmark
/// dictionaries of `model` held fixed.
pub fn decompose(mixture: &Spectrogram, model: &NmfModel, seed: u64) -> Result<Decomposition> {
    decompose_with(mixture, model, seed, None)
}

/// [`decompose`] that also returns the IS objective per iteration.
pub fn decompose_traced(
    mixture: &Spectrogram,
    model: &NmfModel,
    seed: u64,
) -> Result<(Decomposition, Vec<f64>)> {
    let mut trace = Vec::with_capacity(model.config.iterations + 1);
    let dec = decompose_with(mixture, model, seed, Some(&mut trace))?;
    Ok((dec, trace))
}

fn decompose_with(
    mixture: &Spectrogram,
    model: &NmfModel,
    seed: u64,
    trace: Option<&mut Vec<f64>>,
) -> Result<Decomposition> {
    if mixture.n_freqs() != model.n_freqs() {
        return Err(Error::DimensionMismatch {
            what: "mixture frequency bins",
            expected: model.n_freqs(),
            got: mixture.n_freqs(),
        });
    }
    if mixture.energy() == 0.0 {
        return Err(Error::ZeroEnergy("mixture"));
    }
    let config = model.config;
    let floor = config.floor;
    let v = power_spectrogram(mixture, floor);
    let (f, t) = v.dim();
    let l0 = config.noise_bases;
    let sizes: Vec<usize> = std::iter::once(l0)
        .chain(model.landmark_bases.iter().map(BasisMatrix::n_bases))
        .collect();
    let total: usize = sizes.iter().sum();

    // Each source draws its initial activations from its own stream keyed by
    // source id, so reordering the landmarks reorders the result.
    let mut w = Array2::zeros((f, total));
    let mut h = Array2::zeros((total, t));
    let mut noise_rng = ChaCha8Rng::seed_from_u64(crate::seed::derive(seed, &[0]));
    if l0 > 0 {
        let mut w0 = uniform_matrix(&mut noise_rng, f, l0);
        normalize_columns(&mut w0, None, floor);
        w.slice_mut(s![.., ..l0]).assign(&w0);
        h.slice_mut(s![..l0, ..]).assign(&uniform_matrix(&mut noise_rng, l0, t));
    }
    let mut offset = l0;
    for b in &model.landmark_bases {
        let l = b.n_bases();
        let mut rng = ChaCha8Rng::seed_from_u64(crate::seed::derive(seed, &[1 + b.source_id as u64]));
        w.slice_mut(s![.., offset..offset + l]).assign(&b.w);
        h.slice_mut(s![offset..offset + l, ..]).assign(&uniform_matrix(&mut rng, l, t));
        offset += l;
    }
    match_scale(&v, &w, &mut h, floor);
    h.slice_mut(s![..l0, ..]).mapv_inplace(|x| (x * NOISE_START).max(floor));
    multiplicative_updates(&v, &mut w, &mut h, l0, config.iterations, floor, trace);

    split(&w.view(), &h.view(), &sizes, mixture.clone(), floor)
}

fn split(
    w: &ArrayView2<f64>,
    h: &ArrayView2<f64>,
    sizes: &[usize],
    mixture: Spectrogram,
    floor: f64,
) -> Result<Decomposition> {
    let mut bases = Vec::with_capacity(sizes.len());
    let mut activations = Vec::with_capacity(sizes.len());
    let mut offset = 0;
    for (k, &l) in sizes.iter().enumerate() {
        if l == 0 {
            // A source without bases contributes floor-level variance.
            bases.push(BasisMatrix::new(Array2::from_elem((w.nrows(), 1), floor), k)?);
            activations.push(ActivationMatrix::new(Array2::from_elem((1, h.ncols()), floor))?);
            continue;
        }
        bases.push(BasisMatrix::new(w.slice(s![.., offset..offset + l]).to_owned(), k)?);
        activations.push(ActivationMatrix::new(h.slice(s![offset..offset + l, ..]).to_owned())?);
        offset += l;
    }
    Decomposition::from_parts(bases, activations, mixture)
}

/// Log root-sum-square energies of the Wiener landmark estimates.
pub fn extract_features(mixture: &Spectrogram, model: &NmfModel, seed: u64) -> Result<FeatureVector> {
    decompose(mixture, model, seed)?.wiener_features()
}

/// Log mean activations of each landmark.
pub fn extract_activation_features(
    mixture: &Spectrogram,
    model: &NmfModel,
    seed: u64,
) -> Result<FeatureVector> {
    decompose(mixture, model, seed)?.activation_features()
}
