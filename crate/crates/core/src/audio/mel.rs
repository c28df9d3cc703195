use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::{AudioError, Segment};

pub const N_FFT: usize = 1024;
pub const HOP_LENGTH: usize = 512;
pub const N_MELS: usize = 128;
/// Added before the logarithm so silence maps to `ln(LOG_FLOOR)`.
pub const LOG_FLOOR: f64 = 1e-10;

/// HTK mel scale.
pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Log-mel spectrogram, stored mel-major: `values[m * n_frames + t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpec {
    pub values: Vec<f64>,
    pub n_mels: usize,
    pub n_frames: usize,
    pub song_id: String,
    pub start_s: f64,
}

impl MelSpec {
    pub fn at(&self, mel: usize, frame: usize) -> f64 {
        self.values[mel * self.n_frames + frame]
    }
}

/// Reusable Hann window, FFT plan and triangular filterbank for one sample rate.
pub struct MelExtractor {
    sample_rate: u32,
    window: Vec<f64>,
    /// `N_MELS` rows of `N_FFT / 2 + 1` weights.
    filters: Vec<Vec<f64>>,
    fft: Arc<dyn Fft<f64>>,
}

impl MelExtractor {
    pub fn new(sample_rate: u32) -> Self {
        let window = (0..N_FFT)
            .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / N_FFT as f64).cos())
            .collect();
        let fft = FftPlanner::new().plan_fft_forward(N_FFT);
        Self {
            sample_rate,
            window,
            filters: filterbank(sample_rate),
            fft,
        }
    }

    pub fn filters(&self) -> &[Vec<f64>] {
        &self.filters
    }

    /// Frame count for a signal of `n` samples (no centering).
    pub fn frames(n: usize) -> usize {
        if n < N_FFT {
            0
        } else {
            (n - N_FFT) / HOP_LENGTH + 1
        }
    }

    /// Mel-band power before the logarithm, mel-major.
    pub fn mel_power(&self, samples: &[f32]) -> Result<Vec<f64>, AudioError> {
        let frames = Self::frames(samples.len());
        if frames == 0 {
            return Err(AudioError::TooShort {
                needed: N_FFT,
                got: samples.len(),
            });
        }
        let bins = N_FFT / 2 + 1;
        let mut out = vec![0.0; N_MELS * frames];
        let mut buf = vec![Complex::new(0.0, 0.0); N_FFT];
        let mut power = vec![0.0; bins];
        for t in 0..frames {
            let frame = &samples[t * HOP_LENGTH..t * HOP_LENGTH + N_FFT];
            for ((b, &s), w) in buf.iter_mut().zip(frame).zip(&self.window) {
                *b = Complex::new(s as f64 * w, 0.0);
            }
            self.fft.process(&mut buf);
            for (p, c) in power.iter_mut().zip(&buf[..bins]) {
                *p = c.norm_sqr();
            }
            for (m, filt) in self.filters.iter().enumerate() {
                out[m * frames + t] = filt.iter().zip(&power).map(|(w, p)| w * p).sum();
            }
        }
        Ok(out)
    }

    pub fn extract(&self, seg: &Segment) -> Result<MelSpec, AudioError> {
        if seg.sample_rate != self.sample_rate {
            return Err(AudioError::BadRate(seg.sample_rate));
        }
        let power = self.mel_power(&seg.samples)?;
        Ok(MelSpec {
            n_mels: N_MELS,
            n_frames: power.len() / N_MELS,
            values: power.into_iter().map(|p| (p + LOG_FLOOR).ln()).collect(),
            song_id: seg.song_id.clone(),
            start_s: seg.start_s,
        })
    }
}

/// `N_MELS` unit-peak triangles with edges equally spaced on the mel scale
/// from 0 Hz to Nyquist.
fn filterbank(sample_rate: u32) -> Vec<Vec<f64>> {
    let bins = N_FFT / 2 + 1;
    let nyquist = sample_rate as f64 / 2.0;
    let top = hz_to_mel(nyquist);
    let edges: Vec<f64> = (0..N_MELS + 2)
        .map(|i| mel_to_hz(top * i as f64 / (N_MELS + 1) as f64))
        .collect();
    let bin_hz = |k: usize| k as f64 * sample_rate as f64 / N_FFT as f64;
    (0..N_MELS)
        .map(|m| {
            let (lo, center, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            (0..bins)
                .map(|k| {
                    let f = bin_hz(k);
                    let up = (f - lo) / (center - lo);
                    let down = (hi - f) / (hi - center);
                    up.min(down).max(0.0)
                })
                .collect()
        })
        .collect()
}

/// Center frequency of mel band `m` for the given sample rate.
pub fn band_center_hz(m: usize, sample_rate: u32) -> f64 {
    let top = hz_to_mel(sample_rate as f64 / 2.0);
    mel_to_hz(top * (m + 1) as f64 / (N_MELS + 1) as f64)
}

/// One-shot log-mel spectrogram of a segment.
pub fn mel_spectrogram(seg: &Segment) -> Result<MelSpec, AudioError> {
    MelExtractor::new(seg.sample_rate).extract(seg)
}
