//! Mono WAV reading (16/24/32-bit integer PCM, 32-bit float) and 32-bit float writing.

use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use super::AudioClip;
use crate::error::{Error, Result};

pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioClip> {
    let path = path.as_ref();
    read_wav_inner(path).map_err(|e| e.in_file(path))
}

fn read_wav_inner(path: &Path) -> Result<AudioClip> {
    let reader = WavReader::open(path)?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::invalid(format!(
            "expected mono audio, found {} channels",
            spec.channels
        )));
    }
    let samples: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<Result<_, _>>()?,
        (SampleFormat::Int, bits @ (16 | 24 | 32)) => {
            let scale = 1.0 / (1u64 << (bits - 1)) as f64;
            reader
                .into_samples::<i32>()
                .map(|s| s.map(|v| v as f64 * scale))
                .collect::<Result<_, _>>()?
        }
        (format, bits) => {
            return Err(Error::invalid(format!(
                "unsupported WAV encoding: {bits}-bit {format:?}"
            )))
        }
    };
    AudioClip::new(samples, spec.sample_rate)
}

/// Reads a WAV and checks its sample rate; resampling is not supported.
pub fn read_wav_at_rate(path: impl AsRef<Path>, sample_rate: u32) -> Result<AudioClip> {
    let path = path.as_ref();
    let clip = read_wav(path)?;
    if clip.sample_rate() != sample_rate {
        return Err(Error::SampleRateMismatch(clip.sample_rate(), sample_rate).in_file(path));
    }
    Ok(clip)
}

pub fn write_wav(path: impl AsRef<Path>, clip: &AudioClip) -> Result<()> {
    let path = path.as_ref();
    let spec = WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate(),
        bits_per_sample: 32,
        sample_format: SampleFormat::Float,
    };
    let write = || -> Result<()> {
        let mut writer = WavWriter::create(path, spec)?;
        for &s in clip.samples() {
            writer.write_sample(s as f32)?;
        }
        writer.finalize()?;
        Ok(())
    };
    write().map_err(|e| e.in_file(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_round_trip_is_exact_for_f32_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.wav");
        let samples: Vec<f64> = (0..100).map(|i| (i as f32 * 0.01 - 0.5) as f64).collect();
        let clip = AudioClip::new(samples, 48_000).unwrap();
        write_wav(&path, &clip).unwrap();
        assert_eq!(read_wav(&path).unwrap(), clip);
    }

    #[test]
    fn reads_integer_pcm() {
        let dir = tempfile::tempdir().unwrap();
        for bits in [16u16, 24, 32] {
            let path = dir.path().join(format!("i{bits}.wav"));
            let spec = WavSpec {
                channels: 1,
                sample_rate: 16_000,
                bits_per_sample: bits,
                sample_format: SampleFormat::Int,
            };
            let mut w = WavWriter::create(&path, spec).unwrap();
            let half = 1i32 << (bits - 2);
            w.write_sample(half).unwrap();
            w.write_sample(-half).unwrap();
            w.finalize().unwrap();
            let clip = read_wav(&path).unwrap();
            assert_eq!(clip.samples(), &[0.5, -0.5]);
            assert!(read_wav_at_rate(&path, 48_000).is_err());
        }
    }

    #[test]
    fn rejects_stereo() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.wav");
        let spec = WavSpec {
            channels: 2,
            sample_rate: 48_000,
            bits_per_sample: 16,
            sample_format: SampleFormat::Int,
        };
        let mut w = WavWriter::create(&path, spec).unwrap();
        w.write_sample(0i16).unwrap();
        w.write_sample(0i16).unwrap();
        w.finalize().unwrap();
        assert!(read_wav(&path).is_err());
    }
}
