//! Audio ingest: WAV decoding, resampling, fixed-length segmentation without
//! padding, and log-mel features.

mod manifest;
mod mel;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use manifest::{load_manifest, write_manifest, Manifest, ManifestRow};
pub use mel::{
    band_center_hz, hz_to_mel, mel_spectrogram, mel_to_hz, MelExtractor, MelSpec, HOP_LENGTH,
    LOG_FLOOR, N_FFT, N_MELS,
};

/// Working sample rate for every feature computation.
pub const TARGET_RATE: u32 = 22_050;

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("cannot read {path}: {reason}")]
    Unreadable { path: PathBuf, reason: String },
    #[error("unsupported encoding in {path}: {what}")]
    Unsupported { path: PathBuf, what: String },
    #[error("{0} contains no audio")]
    Empty(PathBuf),
    #[error("overlap {overlap_s}s must be smaller than segment duration {duration_s}s")]
    InvalidSegmentation { duration_s: u32, overlap_s: u32 },
    #[error("segment has {got} samples, at least {needed} are required")]
    TooShort { needed: usize, got: usize },
    #[error("bad sample rate {0}")]
    BadRate(u32),
    #[error("manifest {path}: {reason}")]
    Manifest { path: PathBuf, reason: String },
    #[error("duplicate song_id `{0}` in manifest")]
    DuplicateSong(String),
    #[error("cannot write {path}: {reason}")]
    Write { path: PathBuf, reason: String },
}

/// Mono audio with amplitudes in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
    pub source_id: String,
}

impl Waveform {
    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Decodes a PCM WAV file (16-bit integer or 32-bit float, any channel
/// count), averages channels to mono and resamples to `target_rate`.
pub fn load_audio(path: &Path, target_rate: u32) -> Result<Waveform, AudioError> {
    if target_rate == 0 {
        return Err(AudioError::BadRate(target_rate));
    }
    let reader = hound::WavReader::open(path).map_err(|e| match e {
        hound::Error::Unsupported => AudioError::Unsupported {
            path: path.to_path_buf(),
            what: "non-PCM WAV".into(),
        },
        other => AudioError::Unreadable {
            path: path.to_path_buf(),
            reason: other.to_string(),
        },
    })?;
    let spec = reader.spec();
    let channels = spec.channels.max(1) as usize;
    let interleaved: Vec<f32> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| v as f32 / 32768.0))
            .collect::<Result<_, _>>(),
        (hound::SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| {
                s.map(|v| {
                    if v.is_finite() {
                        v.clamp(-1.0, 1.0)
                    } else {
                        0.0
                    }
                })
            })
            .collect::<Result<_, _>>(),
        (fmt, bits) => {
            return Err(AudioError::Unsupported {
                path: path.to_path_buf(),
                what: format!("{bits}-bit {fmt:?} samples"),
            })
        }
    }
    .map_err(|e| AudioError::Unreadable {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    if interleaved.len() < channels {
        return Err(AudioError::Empty(path.to_path_buf()));
    }
    let mono: Vec<f32> = if channels == 1 {
        interleaved
    } else {
        interleaved
            .chunks_exact(channels)
            .map(|frame| frame.iter().sum::<f32>() / channels as f32)
            .collect()
    };
    Ok(Waveform {
        samples: resample_linear(&mono, spec.sample_rate, target_rate),
        sample_rate: target_rate,
        source_id: path.display().to_string(),
    })
}

/// Linear-interpolation resampler. Output length is
/// `round(len · to / from)`; equal rates return the input unchanged.
pub fn resample_linear(x: &[f32], from: u32, to: u32) -> Vec<f32> {
    if from == to || x.is_empty() {
        return x.to_vec();
    }
    let n_out = ((x.len() as u64 * to as u64 + from as u64 / 2) / from as u64) as usize;
    let step = from as f64 / to as f64;
    (0..n_out)
        .map(|i| {
            let pos = i as f64 * step;
            let lo = pos.floor() as usize;
            if lo + 1 >= x.len() {
                return x[x.len() - 1];
            }
            let frac = (pos - lo as f64) as f32;
            if frac == 0.0 {
                x[lo]
            } else {
                x[lo] + frac * (x[lo + 1] - x[lo])
            }
        })
        .collect()
}

/// Fixed-length slice of a clip.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub song_id: String,
    pub start_s: f64,
    pub duration_s: f64,
    pub sample_rate: u32,
    pub samples: Vec<f32>,
}

/// Number of segments of `duration_s` with hop `duration_s − overlap_s`
/// that fit in `n_samples` without padding.
pub fn segment_count(n_samples: usize, sample_rate: u32, duration_s: u32, overlap_s: u32) -> usize {
    let seg = duration_s as usize * sample_rate as usize;
    let hop = (duration_s - overlap_s) as usize * sample_rate as usize;
    if n_samples < seg || hop == 0 {
        0
    } else {
        (n_samples - seg) / hop + 1
    }
}

/// Cuts `w` into segments starting at 0 with hop `duration_s − overlap_s`.
/// Trailing audio shorter than a full segment is dropped; clips shorter
/// than one segment produce nothing.
pub fn segment(w: &Waveform, duration_s: u32, overlap_s: u32) -> Result<Vec<Segment>, AudioError> {
    if duration_s == 0 || overlap_s >= duration_s {
        return Err(AudioError::InvalidSegmentation {
            duration_s,
            overlap_s,
        });
    }
    let seg = duration_s as usize * w.sample_rate as usize;
    let hop_s = duration_s - overlap_s;
    let hop = hop_s as usize * w.sample_rate as usize;
    let count = segment_count(w.samples.len(), w.sample_rate, duration_s, overlap_s);
    Ok((0..count)
        .map(|i| Segment {
            song_id: w.source_id.clone(),
            start_s: (i as u64 * hop_s as u64) as f64,
            duration_s: duration_s as f64,
            sample_rate: w.sample_rate,
            samples: w.samples[i * hop..i * hop + seg].to_vec(),
        })
        .collect())
}
