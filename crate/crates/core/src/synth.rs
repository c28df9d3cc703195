//! Synthetic corpora with exact-count label noise: Gaussian clusters in
//! feature space, and tonal WAV files that go through the audio path.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::{write_manifest, TARGET_RATE};
use crate::dataset::SegmentSet;
use crate::nn::{rng_from_seed, RngState};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synth config: {0}")]
    InvalidConfig(String),
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot write {path}: {reason}")]
    Wav { path: PathBuf, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub classes: usize,
    pub songs_per_class: usize,
    /// Feature corpus only.
    pub segments_per_song: usize,
    /// Audio corpus only.
    pub song_duration_s: u32,
    pub feature_dim: usize,
    /// Distance between any two class centers.
    pub separation: f64,
    /// Standard deviation of a per-song offset shared by all its segments.
    pub song_spread: f64,
    pub noise_rate: f64,
    pub drift: bool,
    /// Fraction of each song's segments (or seconds) drawn from other classes.
    pub drift_fraction: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            classes: 4,
            songs_per_class: 50,
            segments_per_song: 10,
            song_duration_s: 10,
            feature_dim: 16,
            separation: 4.0,
            song_spread: 0.0,
            noise_rate: 0.0,
            drift: false,
            drift_fraction: 0.2,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidConfig(m));
        if self.classes < 2 {
            return bad(format!("need at least 2 classes, got {}", self.classes));
        }
        if !(0.0..1.0).contains(&self.noise_rate) {
            return bad(format!(
                "noise_rate must be in [0, 1), got {}",
                self.noise_rate
            ));
        }
        if !(0.0..=1.0).contains(&self.drift_fraction) {
            return bad(format!(
                "drift_fraction must be in [0, 1], got {}",
                self.drift_fraction
            ));
        }
        if self.songs_per_class == 0 || self.segments_per_song == 0 || self.song_duration_s == 0 {
            return bad("song and segment counts must be positive".into());
        }
        if self.feature_dim < self.classes {
            return bad(format!(
                "feature_dim {} must be at least the class count {}",
                self.feature_dim, self.classes
            ));
        }
        if !(self.separation >= 0.0 && self.separation.is_finite())
            || !(self.song_spread >= 0.0 && self.song_spread.is_finite())
        {
            return bad("separation and song_spread must be non-negative".into());
        }
        Ok(())
    }

    pub fn songs(&self) -> usize {
        self.classes * self.songs_per_class
    }
}

/// Flips exactly `round(rho·n)` labels, chosen without replacement, each to
/// a uniformly drawn different class. Returns the noisy labels and the flip mask.
pub fn inject_label_noise(
    labels: &[usize],
    rho: f64,
    classes: usize,
    seed: u64,
) -> (Vec<usize>, Vec<bool>) {
    let mut rng = rng_from_seed(seed);
    inject_with(labels, rho, classes, &mut rng)
}

fn inject_with(
    labels: &[usize],
    rho: f64,
    classes: usize,
    rng: &mut RngState,
) -> (Vec<usize>, Vec<bool>) {
    let n = labels.len();
    let count = ((rho * n as f64).round() as usize).min(n);
    let mut noisy = labels.to_vec();
    let mut mask = vec![false; n];
    if classes < 2 {
        return (noisy, mask);
    }
    let mut picked = sample(rng, n, count).into_vec();
    picked.sort_unstable();
    for i in picked {
        noisy[i] = other_class(labels[i], classes, rng);
        mask[i] = true;
    }
    (noisy, mask)
}

fn other_class(c: usize, classes: usize, rng: &mut RngState) -> usize {
    let r = rng.gen_range(0..classes - 1);
    if r >= c {
        r + 1
    } else {
        r
    }
}

/// Labels carried by the first `songs_per_class` songs are class 0, and so on.
fn song_classes(cfg: &SynthConfig) -> Vec<usize> {
    (0..cfg.songs()).map(|s| s / cfg.songs_per_class).collect()
}

pub fn song_name(i: usize) -> String {
    format!("song_{i:04}")
}

/// Feature-space corpus. Segment labels are the (possibly flipped) song labels.
#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub data: SegmentSet,
    /// True class of every segment (differs from the song class when drifted).
    pub segment_truth: Vec<usize>,
    pub song_ids: Vec<String>,
    pub song_true: Vec<usize>,
    pub song_noisy: Vec<usize>,
    pub flipped: Vec<bool>,
}

impl SynthCorpus {
    /// Per segment: does the training label match the segment's true class.
    pub fn clean_mask(&self) -> Vec<bool> {
        self.data
            .labels
            .iter()
            .zip(&self.segment_truth)
            .map(|(a, b)| a == b)
            .collect()
    }

    /// The corpus with training labels replaced by true segment classes.
    pub fn with_true_labels(&self) -> SegmentSet {
        let mut set = self.data.clone();
        set.labels = self.segment_truth.clone();
        set
    }

    pub fn flipped_count(&self) -> usize {
        self.flipped.iter().filter(|&&f| f).count()
    }
}

pub fn gen_feature_corpus(cfg: &SynthConfig) -> Result<SynthCorpus, SynthError> {
    cfg.validate()?;
    let mut rng = rng_from_seed(cfg.seed);
    let song_true = song_classes(cfg);
    let (song_noisy, flipped) = inject_with(&song_true, cfg.noise_rate, cfg.classes, &mut rng);
    let radius = cfg.separation / std::f64::consts::SQRT_2;
    let drifted = if cfg.drift {
        (cfg.drift_fraction * cfg.segments_per_song as f64).round() as usize
    } else {
        0
    };
    let mut data = SegmentSet::new(vec![cfg.feature_dim], cfg.classes);
    let mut segment_truth = Vec::with_capacity(cfg.songs() * cfg.segments_per_song);
    let song_ids: Vec<String> = (0..cfg.songs()).map(song_name).collect();
    let mut x = vec![0.0; cfg.feature_dim];
    for (s, id) in song_ids.iter().enumerate() {
        let offset: Vec<f64> = (0..cfg.feature_dim)
            .map(|_| cfg.song_spread * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let mut truth = vec![song_true[s]; cfg.segments_per_song];
        for i in sample(&mut rng, cfg.segments_per_song, drifted).into_vec() {
            truth[i] = other_class(song_true[s], cfg.classes, &mut rng);
        }
        for (j, &c) in truth.iter().enumerate() {
            for (d, v) in x.iter_mut().enumerate() {
                let center = if d == c { radius } else { 0.0 };
                *v = center + offset[d] + rng.sample::<f64, _>(StandardNormal);
            }
            data.push(&x, song_noisy[s], id, j as f64);
        }
        segment_truth.extend(truth);
    }
    Ok(SynthCorpus {
        data,
        segment_truth,
        song_ids,
        song_true,
        song_noisy,
        flipped,
    })
}

/// Partial frequency ratios and amplitudes of every class chord.
const PARTIALS: [(f64, f64); 3] = [(1.0, 1.0), (1.25, 0.6), (1.5, 0.4)];
const NOISE_FLOOR: f64 = 0.01;
const PEAK: f64 = 0.35;

/// Fundamental of class `c`: half-octave steps from 150 Hz.
pub fn class_fundamental(c: usize) -> f64 {
    150.0 * 2f64.powf(c as f64 / 2.0)
}

/// One second-long block of class `c`'s chord starting at sample `t0`.
fn render_block(
    out: &mut [f32],
    class: usize,
    t0: usize,
    detune: f64,
    phases: &[f64; 3],
    rng: &mut RngState,
) {
    let f0 = class_fundamental(class) * detune;
    for (i, o) in out.iter_mut().enumerate() {
        let t = (t0 + i) as f64 / TARGET_RATE as f64;
        let tone: f64 = PARTIALS
            .iter()
            .zip(phases)
            .map(|((ratio, amp), ph)| amp * (2.0 * PI * f0 * ratio * t + ph).sin())
            .sum();
        let noise = NOISE_FLOOR * (rng.gen::<f64>() * 2.0 - 1.0);
        *o = (PEAK * tone + noise) as f32;
    }
}

/// Ground truth for one generated audio file.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioSong {
    pub song_id: String,
    pub path: PathBuf,
    pub true_class: usize,
    pub manifest_class: usize,
    pub flipped: bool,
    /// True class of every one-second block.
    pub block_truth: Vec<usize>,
}

pub fn class_name(c: usize) -> String {
    format!("c{c}")
}

/// Renders one song's samples; deterministic in `(seed, index)`.
pub fn render_song(cfg: &SynthConfig, index: usize, class: usize) -> (Vec<f32>, Vec<usize>) {
    let mut rng = rng_from_seed(cfg.seed ^ (index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let blocks = cfg.song_duration_s as usize;
    let mut truth = vec![class; blocks];
    if cfg.drift {
        let n = (cfg.drift_fraction * blocks as f64).round() as usize;
        for b in sample(&mut rng, blocks, n).into_vec() {
            truth[b] = other_class(class, cfg.classes, &mut rng);
        }
    }
    let detune = 1.0 + rng.gen_range(-0.02..0.02);
    let phases = [
        rng.gen::<f64>() * 2.0 * PI,
        rng.gen::<f64>() * 2.0 * PI,
        rng.gen::<f64>() * 2.0 * PI,
    ];
    let rate = TARGET_RATE as usize;
    let mut samples = vec![0.0f32; blocks * rate];
    for (b, chunk) in samples.chunks_mut(rate).enumerate() {
        render_block(chunk, truth[b], b * rate, detune, &phases, &mut rng);
    }
    (samples, truth)
}

/// Writes `audio/song_XXXX.wav` (16-bit PCM, 22,050 Hz), `manifest.csv` and
/// `truth.csv` under `out_dir`.
pub fn gen_audio_corpus(cfg: &SynthConfig, out_dir: &Path) -> Result<Vec<AudioSong>, SynthError> {
    cfg.validate()?;
    let io_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source| SynthError::Io { path, source }
    };
    let audio_dir = out_dir.join("audio");
    fs::create_dir_all(&audio_dir).map_err(io_err(&audio_dir))?;
    let song_true = song_classes(cfg);
    let mut rng = rng_from_seed(cfg.seed);
    let (song_noisy, flipped) = inject_with(&song_true, cfg.noise_rate, cfg.classes, &mut rng);
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: TARGET_RATE,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut songs = Vec::with_capacity(cfg.songs());
    for (i, &class) in song_true.iter().enumerate() {
        let (samples, block_truth) = render_song(cfg, i, class);
        let id = song_name(i);
        let rel = PathBuf::from("audio").join(format!("{id}.wav"));
        let path = out_dir.join(&rel);
        let wav_err = |e: hound::Error| SynthError::Wav {
            path: path.clone(),
            reason: e.to_string(),
        };
        let mut w = hound::WavWriter::create(&path, spec).map_err(wav_err)?;
        for s in &samples {
            w.write_sample((s.clamp(-1.0, 1.0) * 32767.0).round() as i16)
                .map_err(wav_err)?;
        }
        w.finalize().map_err(wav_err)?;
        songs.push(AudioSong {
            song_id: id,
            path: rel,
            true_class: class,
            manifest_class: song_noisy[i],
            flipped: flipped[i],
            block_truth,
        });
    }
    let rows: Vec<(String, String, String)> = songs
        .iter()
        .map(|s| {
            (
                s.path.display().to_string(),
                s.song_id.clone(),
                class_name(s.manifest_class),
            )
        })
        .collect();
    let manifest = out_dir.join("manifest.csv");
    let mut buf = Vec::new();
    write_manifest(&mut buf, &rows).map_err(io_err(&manifest))?;
    fs::write(&manifest, buf).map_err(io_err(&manifest))?;
    let truth = out_dir.join("truth.csv");
    let mut body = String::from("song_id,true_label,manifest_label,flipped\n");
    for s in &songs {
        body.push_str(&format!(
            "{},{},{},{}\n",
            s.song_id,
            class_name(s.true_class),
            class_name(s.manifest_class),
            u8::from(s.flipped)
        ));
    }
    fs::write(&truth, body).map_err(io_err(&truth))?;
    Ok(songs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_flip_counts() {
        let labels: Vec<usize> = (0..100).map(|i| i % 4).collect();
        let (noisy, mask) = inject_label_noise(&labels, 0.3, 4, 5);
        assert_eq!(mask.iter().filter(|&&m| m).count(), 30);
        for i in 0..100 {
            assert_eq!(mask[i], noisy[i] != labels[i]);
        }
        assert_eq!(inject_label_noise(&labels, 0.0, 4, 5).0, labels);
        let bin: Vec<usize> = (0..10).map(|i| i % 2).collect();
        let (noisy, mask) = inject_label_noise(&bin, 0.5, 2, 1);
        assert_eq!(mask.iter().filter(|&&m| m).count(), 5);
        for i in 0..10 {
            if mask[i] {
                assert_eq!(noisy[i], 1 - bin[i]);
            }
        }
    }

    #[test]
    fn drift_counts_per_song() {
        let cfg = SynthConfig {
            drift: true,
            drift_fraction: 0.2,
            songs_per_class: 5,
            ..Default::default()
        };
        let c = gen_feature_corpus(&cfg).unwrap();
        for (s, chunk) in c.segment_truth.chunks(10).enumerate() {
            assert_eq!(chunk.iter().filter(|&&t| t != c.song_true[s]).count(), 2);
        }
    }

    #[test]
    fn corpus_is_deterministic() {
        let cfg = SynthConfig {
            noise_rate: 0.3,
            songs_per_class: 25,
            ..Default::default()
        };
        let (a, b) = (
            gen_feature_corpus(&cfg).unwrap(),
            gen_feature_corpus(&cfg).unwrap(),
        );
        assert_eq!(a.data, b.data);
        assert_eq!(a.flipped, b.flipped);
        assert_eq!(a.flipped_count(), 30);
    }

    #[test]
    fn config_errors() {
        for bad in [
            SynthConfig {
                classes: 1,
                ..Default::default()
            },
            SynthConfig {
                noise_rate: 1.0,
                ..Default::default()
            },
            SynthConfig {
                noise_rate: 1.2,
                ..Default::default()
            },
            SynthConfig {
                feature_dim: 2,
                ..Default::default()
            },
        ] {
            assert!(bad.validate().is_err());
        }
    }
}
