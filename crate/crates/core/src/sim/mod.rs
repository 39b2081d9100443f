//! Synthetic rooms: stationary landmark sources with signature spectra,
//! free-field attenuation and grid-sampled mixture recordings.

use std::path::Path;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::dsp::{wav, window_clip, AudioClip, DEFAULT_SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::eval::{DatasetManifest, ManifestEntry, Role};
use crate::localize::Point;
use crate::seed;

/// Attenuation distances are clamped to at least this many metres.
pub const MIN_DISTANCE: f64 = 0.5;

// seed stream tags
const POOL: u64 = 1;
const ISOLATED: u64 = 2;
const OFFSET: u64 = 3;

/// One spectral ingredient of a source signature.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Component {
    /// Sinusoid with random phase; `amplitude` is its RMS.
    Tone { freq_hz: f64, amplitude: f64 },
    /// Gaussian noise with a flat spectrum on `[low_hz, high_hz]`;
    /// `amplitude` is its RMS.
    Band { low_hz: f64, high_hz: f64, amplitude: f64 },
}

impl Component {
    fn validate(&self, sample_rate: u32) -> Result<()> {
        let nyquist = sample_rate as f64 / 2.0;
        let ok = match *self {
            Component::Tone { freq_hz, amplitude } => {
                freq_hz > 0.0 && freq_hz < nyquist && amplitude > 0.0 && amplitude.is_finite()
            }
            Component::Band {
                low_hz,
                high_hz,
                amplitude,
            } => low_hz >= 0.0 && low_hz < high_hz && high_hz <= nyquist && amplitude > 0.0 && amplitude.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid signature component {self:?} at {sample_rate} Hz")))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceConfig {
    pub name: String,
    /// Emitter positions in metres. Every emitter radiates an independent
    /// realization of the same signature (e.g. several ceiling units of
    /// one air-conditioning system).
    pub emitters: Vec<Point>,
    pub signature: Vec<Component>,
    /// RMS amplitude at 1 m from each emitter.
    pub power: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneConfig {
    /// Room extent `(x, y)` in metres; the floor is `[0, x] × [0, y]`.
    pub room: (f64, f64),
    pub sources: Vec<SourceConfig>,
    pub grid_spacing: f64,
    pub window_seconds: f64,
    pub windows_per_point: usize,
    /// Length of each isolated training recording.
    pub isolated_seconds: f64,
    pub sample_rate: u32,
    pub seed: u64,
}

fn band(low_hz: f64, high_hz: f64, amplitude: f64) -> Component {
    Component::Band {
        low_hz,
        high_hz,
        amplitude,
    }
}

fn tone(freq_hz: f64, amplitude: f64) -> Component {
    Component::Tone { freq_hz, amplitude }
}

fn source(name: &str, emitters: &[(f64, f64)], signature: Vec<Component>, power: f64) -> SourceConfig {
    SourceConfig {
        name: name.into(),
        emitters: emitters.iter().map(|&(x, y)| Point::new(x, y)).collect(),
        signature,
        power,
    }
}

impl Default for SceneConfig {
    /// A 30 × 12 m room with five landmark sources.
    fn default() -> Self {
        Self {
            room: (30.0, 12.0),
            sources: vec![
                source(
                    "air_conditioner",
                    &[(4.0, 11.5), (24.0, 11.5)],
                    vec![band(100.0, 500.0, 1.0), tone(120.0, 0.5)],
                    1.0,
                ),
                source("refrigerator", &[(1.0, 1.0)], vec![band(700.0, 1400.0, 1.0), tone(1000.0, 0.3)], 0.7),
                source("projector", &[(15.0, 6.0)], vec![band(2000.0, 4000.0, 1.0)], 0.5),
                source("server_rack", &[(29.0, 0.5)], vec![band(5000.0, 8000.0, 1.0), tone(6000.0, 0.2)], 1.0),
                source("pc_fan", &[(10.0, 10.0)], vec![band(9000.0, 13000.0, 1.0)], 0.4),
            ],
            grid_spacing: 2.0,
            window_seconds: 1.0,
            windows_per_point: 30,
            isolated_seconds: 10.0,
            sample_rate: DEFAULT_SAMPLE_RATE,
            seed: 0,
        }
    }
}

impl SceneConfig {
    /// A scene whose sound field is mirror-symmetric about `x = 15`, so
    /// every location has an acoustically identical twin.
    pub fn symmetric() -> Self {
        Self {
            sources: vec![
                source("pair_low", &[(6.0, 9.0), (24.0, 9.0)], vec![band(100.0, 500.0, 1.0)], 1.0),
                source("pair_mid", &[(9.0, 2.0), (21.0, 2.0)], vec![band(700.0, 1400.0, 1.0)], 0.7),
                source("center", &[(15.0, 6.0)], vec![band(2000.0, 4000.0, 1.0)], 0.5),
                source("pair_high", &[(2.0, 4.0), (28.0, 4.0)], vec![band(5000.0, 8000.0, 1.0)], 1.0),
            ],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (w, d) = self.room;
        if !(w > 0.0 && d > 0.0 && w.is_finite() && d.is_finite()) {
            return Err(Error::Config(format!("room extent must be positive, got {:?}", self.room)));
        }
        if !(self.grid_spacing > 0.0 && self.grid_spacing.is_finite()) {
            return Err(Error::Config("grid_spacing must be positive".into()));
        }
        if !(self.window_seconds > 0.0 && self.window_seconds.is_finite()) {
            return Err(Error::Config("window_seconds must be positive".into()));
        }
        if self.windows_per_point == 0 {
            return Err(Error::Config("windows_per_point must be at least 1".into()));
        }
        if !(self.isolated_seconds > 0.0 && self.isolated_seconds.is_finite()) {
            return Err(Error::Config("isolated_seconds must be positive".into()));
        }
        if self.sample_rate == 0 {
            return Err(Error::Config("sample_rate must be positive".into()));
        }
        for s in &self.sources {
            if s.emitters.is_empty() || s.signature.is_empty() {
                return Err(Error::Config(format!("source {:?} needs emitters and a signature", s.name)));
            }
            if !(s.power > 0.0 && s.power.is_finite()) {
                return Err(Error::Config(format!("source {:?} power must be positive", s.name)));
            }
            if let Some(p) = s.emitters.iter().find(|p| !self.contains(p)) {
                return Err(Error::Config(format!("source {:?} emitter {p} lies outside the room", s.name)));
            }
            for c in &s.signature {
                c.validate(self.sample_rate)?;
            }
        }
        Ok(())
    }

    pub fn contains(&self, p: &Point) -> bool {
        (0.0..=self.room.0).contains(&p.x) && (0.0..=self.room.1).contains(&p.y)
    }

    pub fn n_sources(&self) -> usize {
        self.sources.len()
    }

    /// Grid nodes `{0, s, 2s, …} × {0, s, …}` inside the room, `y` outer.
    pub fn grid_points(&self) -> Vec<Point> {
        let count = |extent: f64| (extent / self.grid_spacing + 1e-9).floor() as usize + 1;
        let (nx, ny) = (count(self.room.0), count(self.room.1));
        (0..ny)
            .flat_map(|iy| (0..nx).map(move |ix| (ix, iy)))
            .map(|(ix, iy)| Point::new(ix as f64 * self.grid_spacing, iy as f64 * self.grid_spacing))
            .collect()
    }

    fn samples(&self, seconds: f64) -> usize {
        (seconds * self.sample_rate as f64).round() as usize
    }

    /// Samples per grid-node recording.
    pub fn clip_len(&self) -> usize {
        self.samples(self.window_seconds) * self.windows_per_point
    }
}

/// Free-field amplitude gain `1 / max(d, 0.5 m)`.
pub fn attenuation(distance: f64) -> f64 {
    1.0 / distance.max(MIN_DISTANCE)
}

fn inverse_real_fft(spectrum: &mut [Complex64]) -> Vec<f64> {
    let n = spectrum.len();
    FftPlanner::new().plan_fft_inverse(n).process(spectrum);
    spectrum.iter().map(|c| c.re).collect()
}

fn band_noise(low_hz: f64, high_hz: f64, n: usize, sample_rate: u32, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let df = sample_rate as f64 / n as f64;
    let first = ((low_hz / df).ceil() as usize).max(1);
    let last = ((high_hz / df).floor() as usize).min((n - 1) / 2);
    let mut spectrum = vec![Complex64::new(0.0, 0.0); n];
    for f in first..=last {
        let v = Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal));
        spectrum[f] = v;
        spectrum[n - f] = v.conj();
    }
    inverse_real_fft(&mut spectrum)
}

/// Stationary unit-RMS signal with the long-term spectrum of `signature`.
/// Band components are synthesized in the frequency domain, so the result
/// is periodic in its own length.
pub fn synthesize_source(signature: &[Component], seconds: f64, sample_rate: u32, seed: u64) -> Result<AudioClip> {
    if signature.is_empty() {
        return Err(Error::invalid("empty source signature"));
    }
    for c in signature {
        c.validate(sample_rate)?;
    }
    let n = (seconds * sample_rate as f64).round() as usize;
    if n < 4 {
        return Err(Error::InsufficientSamples { needed: 4, got: n });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![0.0; n];
    for c in signature {
        let (part, amplitude) = match *c {
            Component::Tone { freq_hz, amplitude } => {
                let phase = rng.gen_range(0.0..std::f64::consts::TAU);
                let w = std::f64::consts::TAU * freq_hz / sample_rate as f64;
                ((0..n).map(|i| (w * i as f64 + phase).cos()).collect::<Vec<_>>(), amplitude)
            }
            Component::Band {
                low_hz,
                high_hz,
                amplitude,
            } => (band_noise(low_hz, high_hz, n, sample_rate, &mut rng), amplitude),
        };
        let r = crate::dsp::rms(&part);
        if r == 0.0 {
            return Err(Error::invalid(format!("component {c:?} has no frequency bins at this length")));
        }
        for (o, p) in out.iter_mut().zip(&part) {
            *o += amplitude * p / r;
        }
    }
    let r = crate::dsp::rms(&out);
    if r == 0.0 {
        return Err(Error::ZeroEnergy("synthesized source"));
    }
    AudioClip::new(out.into_iter().map(|v| v / r).collect(), sample_rate)
}

/// Unit-RMS pink (1/f power) noise.
pub fn pink_noise(seconds: f64, sample_rate: u32, seed: u64) -> Result<AudioClip> {
    let n = (seconds * sample_rate as f64).round() as usize;
    if n < 4 {
        return Err(Error::InsufficientSamples { needed: 4, got: n });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut spectrum = vec![Complex64::new(0.0, 0.0); n];
    for f in 1..=(n - 1) / 2 {
        let g = 1.0 / (f as f64).sqrt();
        let v = Complex64::new(rng.sample::<f64, _>(StandardNormal) * g, rng.sample::<f64, _>(StandardNormal) * g);
        spectrum[f] = v;
        spectrum[n - f] = v.conj();
    }
    let out = inverse_real_fft(&mut spectrum);
    let r = crate::dsp::rms(&out);
    AudioClip::new(out.into_iter().map(|v| v / r).collect(), sample_rate)
}

/// One periodic realization per emitter. Recordings read these with a
/// circular offset, so different offsets give different excerpts of the
/// same stationary process.
#[derive(Clone, Debug)]
pub struct SourceBank {
    /// `[source][emitter]` unit-RMS realizations.
    pools: Vec<Vec<AudioClip>>,
    len: usize,
}

impl SourceBank {
    pub fn new(scene: &SceneConfig, len: usize, seed: u64) -> Result<Self> {
        let seconds = len as f64 / scene.sample_rate as f64;
        let pools = scene
            .sources
            .iter()
            .enumerate()
            .map(|(k, s)| {
                (0..s.emitters.len())
                    .map(|e| synthesize_source(&s.signature, seconds, scene.sample_rate, seed::derive(seed, &[POOL, k as u64, e as u64])))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { pools, len })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Contribution of source `k` at `at`, reading emitter `e` from
    /// `offsets[e]` onwards (wrapping).
    pub fn render_source(&self, scene: &SceneConfig, k: usize, at: &Point, offsets: &[usize], len: usize) -> Vec<f64> {
        let mut out = vec![0.0; len];
        let src = &scene.sources[k];
        for (e, (pos, pool)) in src.emitters.iter().zip(&self.pools[k]).enumerate() {
            let g = src.power * attenuation(at.distance(pos));
            let s = pool.samples();
            let start = offsets.get(e).copied().unwrap_or(0) % self.len;
            for (i, o) in out.iter_mut().enumerate() {
                *o += g * s[(start + i) % self.len];
            }
        }
        out
    }
}

fn check_inside(scene: &SceneConfig, at: &Point) -> Result<()> {
    if scene.contains(at) {
        Ok(())
    } else {
        Err(Error::OutsideRoom { x: at.x, y: at.y })
    }
}

/// The signal of source `k` alone as heard at `at`.
pub fn render_source(scene: &SceneConfig, k: usize, at: &Point, seconds: f64, seed: u64) -> Result<AudioClip> {
    scene.validate()?;
    check_inside(scene, at)?;
    if k >= scene.n_sources() {
        return Err(Error::invalid(format!("source index {k} out of range")));
    }
    let len = scene.samples(seconds);
    let bank = SourceBank::new(scene, len, seed)?;
    AudioClip::new(bank.render_source(scene, k, at, &[], len), scene.sample_rate)
}

/// Sum over all sources of their attenuated signals at `at`.
pub fn render_mixture(scene: &SceneConfig, at: &Point, seconds: f64, seed: u64) -> Result<AudioClip> {
    scene.validate()?;
    check_inside(scene, at)?;
    let len = scene.samples(seconds);
    if scene.sources.is_empty() {
        return Ok(AudioClip::silence(len, scene.sample_rate));
    }
    let bank = SourceBank::new(scene, len, seed)?;
    let mut out = vec![0.0; len];
    for k in 0..scene.n_sources() {
        for (o, s) in out.iter_mut().zip(bank.render_source(scene, k, at, &[], len)) {
            *o += s;
        }
    }
    AudioClip::new(out, scene.sample_rate)
}

/// Grid-sampled recordings of a scene plus isolated per-source clips.
/// Node recordings are rendered on demand from a shared [`SourceBank`].
#[derive(Clone, Debug)]
pub struct SyntheticDataset {
    scene: SceneConfig,
    nodes: Vec<Point>,
    bank: SourceBank,
    isolated: Vec<AudioClip>,
}

pub fn build_dataset(scene: &SceneConfig) -> Result<SyntheticDataset> {
    scene.validate()?;
    let len = scene.clip_len();
    let bank = SourceBank::new(scene, len.max(4), scene.seed)?;
    let isolated = scene
        .sources
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let clip = synthesize_source(
                &s.signature,
                scene.isolated_seconds,
                scene.sample_rate,
                seed::derive(scene.seed, &[ISOLATED, k as u64]),
            )?;
            Ok(clip.scaled(s.power * attenuation(1.0)))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SyntheticDataset {
        nodes: scene.grid_points(),
        scene: scene.clone(),
        bank,
        isolated,
    })
}

impl SyntheticDataset {
    pub fn scene(&self) -> &SceneConfig {
        &self.scene
    }

    pub fn nodes(&self) -> &[Point] {
        &self.nodes
    }

    /// Clean near-source recordings, one per source, at 1 m.
    pub fn isolated(&self) -> &[AudioClip] {
        &self.isolated
    }

    fn offsets(&self, node: usize, k: usize) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(self.scene.seed, &[OFFSET, node as u64, k as u64]));
        (0..self.scene.sources[k].emitters.len())
            .map(|_| rng.gen_range(0..self.bank.len()))
            .collect()
    }

    /// Full recording at grid node `node`.
    pub fn node_clip(&self, node: usize) -> AudioClip {
        let len = self.scene.clip_len();
        let at = self.nodes[node];
        let mut out = vec![0.0; len];
        for k in 0..self.scene.n_sources() {
            let part = self.bank.render_source(&self.scene, k, &at, &self.offsets(node, k), len);
            for (o, s) in out.iter_mut().zip(part) {
                *o += s;
            }
        }
        AudioClip::new(out, self.scene.sample_rate).expect("rendered samples are finite")
    }

    pub fn node_windows(&self, node: usize) -> Vec<AudioClip> {
        window_clip(&self.node_clip(node), self.scene.window_seconds)
    }

    pub fn manifest(&self) -> DatasetManifest {
        let mut entries: Vec<ManifestEntry> = self
            .nodes
            .iter()
            .enumerate()
            .map(|(i, p)| ManifestEntry {
                wav_path: format!("node_{i:04}.wav"),
                x: p.x,
                y: p.y,
                role: Role::Train,
                source_id: None,
            })
            .collect();
        for (k, s) in self.scene.sources.iter().enumerate() {
            let at = s.emitters[0];
            entries.push(ManifestEntry {
                wav_path: format!("isolated_{:02}.wav", k + 1),
                x: at.x,
                y: at.y,
                role: Role::Isolated,
                source_id: Some(k + 1),
            });
        }
        DatasetManifest {
            sample_rate: self.scene.sample_rate,
            window_seconds: self.scene.window_seconds,
            entries,
        }
    }

    /// Writes every recording as 32-bit float WAV plus `manifest.json`.
    pub fn write(&self, dir: &Path) -> Result<DatasetManifest> {
        std::fs::create_dir_all(dir).map_err(|e| Error::from(e).in_file(dir))?;
        let manifest = self.manifest();
        for (i, entry) in manifest.entries.iter().enumerate() {
            let clip = match entry.source_id {
                Some(k) => self.isolated[k - 1].clone(),
                None => self.node_clip(i),
            };
            wav::write_wav(dir.join(&entry.wav_path), &clip)?;
        }
        crate::io::write_json(&dir.join(DatasetManifest::FILE_NAME), &manifest)?;
        Ok(manifest)
    }
}
