use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dsp::{wav, window_clip, AudioClip};
use crate::error::{Error, Result};
use crate::localize::Point;
use crate::sim::SyntheticDataset;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    /// Mixture recorded at a sampling location.
    Train,
    /// Clean near-source recording of one landmark.
    Isolated,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    /// Relative to the manifest's directory.
    pub wav_path: String,
    pub x: f64,
    pub y: f64,
    pub role: Role,
    /// 1-based landmark index; present on isolated entries.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_id: Option<usize>,
}

impl ManifestEntry {
    pub fn location(&self) -> Point {
        Point::new(self.x, self.y)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub sample_rate: u32,
    pub window_seconds: f64,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub const FILE_NAME: &'static str = "manifest.json";

    /// Distinct training locations in order of first appearance.
    pub fn locations(&self) -> Vec<Point> {
        let mut out: Vec<Point> = Vec::new();
        for e in self.entries.iter().filter(|e| e.role == Role::Train) {
            let p = e.location();
            if !out.contains(&p) {
                out.push(p);
            }
        }
        out
    }

    /// Isolated entries sorted by source id; ids must be exactly `1..=K`.
    pub fn isolated(&self) -> Result<Vec<&ManifestEntry>> {
        let mut iso: Vec<&ManifestEntry> = self.entries.iter().filter(|e| e.role == Role::Isolated).collect();
        iso.sort_by_key(|e| e.source_id);
        for (i, e) in iso.iter().enumerate() {
            if e.source_id != Some(i + 1) {
                return Err(Error::invalid(format!(
                    "isolated entry {:?} must carry source_id {}",
                    e.wav_path,
                    i + 1
                )));
            }
        }
        Ok(iso)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sample_rate == 0 || !(self.window_seconds > 0.0) {
            return Err(Error::invalid("manifest needs a positive sample rate and window length"));
        }
        if let Some(e) = self.entries.iter().find(|e| !(e.x.is_finite() && e.y.is_finite())) {
            return Err(Error::invalid(format!("entry {:?} has non-finite coordinates", e.wav_path)));
        }
        self.isolated()?;
        Ok(())
    }
}

/// Evaluation windows grouped by sampling location.
pub trait WindowSource: Sync {
    fn locations(&self) -> Vec<Point>;
    fn windows(&self, location: usize) -> Result<Vec<AudioClip>>;
    fn isolated(&self) -> Result<Vec<AudioClip>>;
    fn sample_rate(&self) -> u32;
}

impl WindowSource for SyntheticDataset {
    fn locations(&self) -> Vec<Point> {
        self.nodes().to_vec()
    }

    fn windows(&self, location: usize) -> Result<Vec<AudioClip>> {
        Ok(self.node_windows(location))
    }

    fn isolated(&self) -> Result<Vec<AudioClip>> {
        Ok(SyntheticDataset::isolated(self).to_vec())
    }

    fn sample_rate(&self) -> u32 {
        self.scene().sample_rate
    }
}

/// A manifest on disk; WAV files are read lazily.
#[derive(Clone, Debug)]
pub struct ManifestDataset {
    pub manifest: DatasetManifest,
    pub dir: PathBuf,
}

impl ManifestDataset {
    /// Loads `manifest.json` from a dataset directory.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        let manifest: DatasetManifest = crate::io::read_json(&dir.join(DatasetManifest::FILE_NAME))?;
        manifest.validate()?;
        Ok(Self { manifest, dir })
    }

    fn read(&self, entry: &ManifestEntry) -> Result<AudioClip> {
        let path = self.dir.join(&entry.wav_path);
        wav::read_wav_at_rate(&path, self.manifest.sample_rate).map_err(|e| e.in_file(path))
    }
}

impl WindowSource for ManifestDataset {
    fn locations(&self) -> Vec<Point> {
        self.manifest.locations()
    }

    fn windows(&self, location: usize) -> Result<Vec<AudioClip>> {
        let at = self.manifest.locations()[location];
        let mut out = Vec::new();
        for e in self.manifest.entries.iter().filter(|e| e.role == Role::Train && e.location() == at) {
            out.extend(window_clip(&self.read(e)?, self.manifest.window_seconds));
        }
        Ok(out)
    }

    fn isolated(&self) -> Result<Vec<AudioClip>> {
        self.manifest.isolated()?.into_iter().map(|e| self.read(e)).collect()
    }

    fn sample_rate(&self) -> u32 {
        self.manifest.sample_rate
    }
}
