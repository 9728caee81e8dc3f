//! File formats: WAV audio, CTF containers, noise profiles and solver
//! problem files. Everything except audio is JSON.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};
use num_complex::Complex64;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::ctf::{CtfSet, Normalization, Sampling};
use crate::error::{input, Result};
use crate::inverse::{NoiseProfile, NoiseSource};
use crate::solver::{ConvexProblem, FitMatrix};

/// Multichannel audio, one vector per channel, samples in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Audio {
    pub sample_rate: u32,
    pub channels: Vec<Vec<f64>>,
}

impl Audio {
    pub fn new(sample_rate: u32, channels: Vec<Vec<f64>>) -> Result<Self> {
        if channels.is_empty() {
            return input("audio needs at least one channel");
        }
        if channels.iter().any(|c| c.len() != channels[0].len()) {
            return input("audio channels differ in length");
        }
        Ok(Audio {
            sample_rate,
            channels,
        })
    }

    pub fn len(&self) -> usize {
        self.channels.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }
}

/// Sample encoding for written files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WavEncoding {
    Pcm16,
    #[default]
    Float32,
}

/// Reads integer PCM (8 to 32 bit) or 32-bit float WAV files.
pub fn read_wav(path: impl AsRef<Path>) -> Result<Audio> {
    let mut reader = WavReader::open(path)?;
    let spec = reader.spec();
    let m = spec.channels as usize;
    if m == 0 {
        return input("wav file declares zero channels");
    }
    let interleaved: Vec<f64> = match spec.sample_format {
        SampleFormat::Float => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()?,
        SampleFormat::Int => {
            let scale = 2f64.powi(spec.bits_per_sample as i32 - 1);
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f64 / scale))
                .collect::<std::result::Result<_, _>>()?
        }
    };
    let frames = interleaved.len() / m;
    let channels = (0..m)
        .map(|c| (0..frames).map(|i| interleaved[i * m + c]).collect())
        .collect();
    Audio::new(spec.sample_rate, channels)
}

/// Writes interleaved audio. PCM output is clipped to full scale.
pub fn write_wav(path: impl AsRef<Path>, audio: &Audio, encoding: WavEncoding) -> Result<()> {
    let spec = WavSpec {
        channels: audio.num_channels() as u16,
        sample_rate: audio.sample_rate,
        bits_per_sample: match encoding {
            WavEncoding::Pcm16 => 16,
            WavEncoding::Float32 => 32,
        },
        sample_format: match encoding {
            WavEncoding::Pcm16 => SampleFormat::Int,
            WavEncoding::Float32 => SampleFormat::Float,
        },
    };
    let mut writer = WavWriter::create(path, spec)?;
    for i in 0..audio.len() {
        for ch in &audio.channels {
            match encoding {
                WavEncoding::Pcm16 => {
                    let v = (ch[i] * 32768.0).round().clamp(-32768.0, 32767.0);
                    writer.write_sample(v as i16)?;
                }
                WavEncoding::Float32 => writer.write_sample(ch[i] as f32)?,
            }
        }
    }
    writer.finalize()?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let file = File::open(path)?;
    Ok(serde_json::from_reader(BufReader::new(file))?)
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let file = File::create(path)?;
    serde_json::to_writer_pretty(BufWriter::new(file), value)?;
    Ok(())
}

const CTF_FORMAT: &str = "ctf-dereverb/ctf";
const NOISE_FORMAT: &str = "ctf-dereverb/noise";
const FORMAT_VERSION: u32 = 1;

/// Self-describing CTF container. Taps are `[band][channel][tap]` pairs
/// `[re, im]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CtfFile {
    pub format: String,
    pub version: u32,
    pub frame_length: usize,
    /// Tap spacing in samples: the frame step when oversampled, the frame
    /// length when critical.
    pub tap_step: usize,
    pub noncausal: usize,
    pub taps: usize,
    pub channels: usize,
    pub normalization: Normalization,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub degenerate: Vec<usize>,
    pub bands: Vec<Vec<Vec<Complex64>>>,
}

impl CtfFile {
    pub fn from_set(set: &CtfSet) -> Result<Self> {
        set.validate()?;
        Ok(CtfFile {
            format: CTF_FORMAT.into(),
            version: FORMAT_VERSION,
            frame_length: set.frame_length,
            tap_step: match set.sampling {
                Sampling::Oversampled { step } => step,
                Sampling::Critical => set.frame_length,
            },
            noncausal: set.noncausal,
            taps: set.tap_count(),
            channels: set.channels(),
            normalization: set.normalization,
            degenerate: set.degenerate.clone(),
            bands: set.taps.clone(),
        })
    }

    pub fn into_set(self) -> Result<CtfSet> {
        if self.format != CTF_FORMAT {
            return input(format!("not a CTF file (format {:?})", self.format));
        }
        if self.version != FORMAT_VERSION {
            return input(format!("unsupported CTF file version {}", self.version));
        }
        if self.tap_step == 0 || self.tap_step > self.frame_length {
            return input(format!(
                "tap step {} is outside 1..={}",
                self.tap_step, self.frame_length
            ));
        }
        if self.bands.len() != self.frame_length / 2 + 1 {
            return input(format!(
                "{} bands stored for frame length {}",
                self.bands.len(),
                self.frame_length
            ));
        }
        let sampling = if self.tap_step == self.frame_length {
            Sampling::Critical
        } else {
            Sampling::Oversampled {
                step: self.tap_step,
            }
        };
        let set = CtfSet {
            frame_length: self.frame_length,
            sampling,
            noncausal: self.noncausal,
            normalization: self.normalization,
            taps: self.bands,
            degenerate: self.degenerate,
        };
        set.validate()?;
        if set.channels() != self.channels || set.tap_count() != self.taps {
            return input(format!(
                "header says {} channels x {} taps, data has {} x {}",
                self.channels,
                self.taps,
                set.channels(),
                set.tap_count()
            ));
        }
        if set.degenerate.iter().any(|&k| k >= set.bands()) {
            return input("degenerate band index out of range");
        }
        Ok(set)
    }
}

pub fn export_ctf(path: impl AsRef<Path>, set: &CtfSet) -> Result<()> {
    write_json(path, &CtfFile::from_set(set)?)
}

pub fn import_ctf(path: impl AsRef<Path>) -> Result<CtfSet> {
    read_json::<CtfFile>(path)?.into_set()
}

/// Noise profile with the frame length it was measured for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseFile {
    pub format: String,
    pub version: u32,
    pub frame_length: usize,
    pub source: NoiseSource,
    /// `[band][channel]`
    pub psd: Vec<Vec<f64>>,
}

impl NoiseFile {
    pub fn new(profile: &NoiseProfile, frame_length: usize) -> Self {
        NoiseFile {
            format: NOISE_FORMAT.into(),
            version: FORMAT_VERSION,
            frame_length,
            source: profile.source,
            psd: profile.psd.clone(),
        }
    }

    pub fn into_profile(self) -> Result<NoiseProfile> {
        if self.format != NOISE_FORMAT {
            return input(format!("not a noise file (format {:?})", self.format));
        }
        if self.psd.len() != self.frame_length / 2 + 1 {
            return input(format!(
                "{} bands stored for frame length {}",
                self.psd.len(),
                self.frame_length
            ));
        }
        let profile = NoiseProfile {
            psd: self.psd,
            source: self.source,
        };
        profile.validate()?;
        Ok(profile)
    }
}

pub fn write_noise(path: impl AsRef<Path>, profile: &NoiseProfile, frame_length: usize) -> Result<()> {
    write_json(path, &NoiseFile::new(profile, frame_length))
}

pub fn read_noise(path: impl AsRef<Path>) -> Result<NoiseProfile> {
    read_json::<NoiseFile>(path)?.into_profile()
}

/// Dense solver problem: `matrix` is row-major, `delta` selects the ball
/// shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemFile {
    pub matrix: Vec<Vec<f64>>,
    pub target: Vec<f64>,
    #[serde(default)]
    pub delta: Option<f64>,
}

impl ProblemFile {
    pub fn to_problem(&self) -> Result<ConvexProblem> {
        let fit = FitMatrix::dense(self.matrix.clone())?;
        let nnls = ConvexProblem::nnls(fit, self.target.clone())?;
        match self.delta {
            Some(d) => nnls.with_ball(d),
            None => Ok(nnls),
        }
    }
}
