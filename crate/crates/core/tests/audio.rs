use std::path::Path;

use proptest::prelude::*;
use sssl::audio::{
    band_center_hz, load_audio, resample_linear, segment, segment_count, AudioError, MelExtractor,
    Segment, Waveform, HOP_LENGTH, N_FFT, N_MELS, TARGET_RATE,
};

fn write_wav(path: &Path, spec: hound::WavSpec, samples: &[f32]) {
    let mut w = hound::WavWriter::create(path, spec).unwrap();
    for &s in samples {
        match (spec.sample_format, spec.bits_per_sample) {
            (hound::SampleFormat::Float, _) => w.write_sample(s).unwrap(),
            (_, 8) => w.write_sample((s * 127.0) as i8).unwrap(),
            (_, 16) => w.write_sample((s * 32768.0) as i16).unwrap(),
            (_, bits) => w
                .write_sample((s * (1 << (bits - 1)) as f32) as i32)
                .unwrap(),
        }
    }
    w.finalize().unwrap();
}

fn spec(channels: u16, rate: u32, bits: u16, format: hound::SampleFormat) -> hound::WavSpec {
    hound::WavSpec {
        channels,
        sample_rate: rate,
        bits_per_sample: bits,
        sample_format: format,
    }
}

fn tone(freq: f64, seconds: f64, rate: u32) -> Vec<f32> {
    let n = (seconds * rate as f64) as usize;
    (0..n)
        .map(|i| (0.5 * (2.0 * std::f64::consts::PI * freq * i as f64 / rate as f64).sin()) as f32)
        .collect()
}

fn one_second(samples: Vec<f32>) -> Segment {
    Segment {
        song_id: "t".into(),
        start_s: 0.0,
        duration_s: 1.0,
        sample_rate: TARGET_RATE,
        samples,
    }
}

proptest! {
    #[test]
    fn segment_count_law(len in 0usize..4000, d in 1u32..10, o in 0u32..10) {
        prop_assume!(o < d);
        let rate = 100;
        let w = Waveform { samples: vec![0.25; len], sample_rate: rate, source_id: "w".into() };
        let segs = segment(&w, d, o).unwrap();
        let (dl, hop) = ((d * rate) as usize, ((d - o) * rate) as usize);
        let expected = if len < dl { 0 } else { (len - dl) / hop + 1 };
        prop_assert_eq!(segs.len(), expected);
        prop_assert_eq!(segment_count(len, rate, d, o), expected);
        for (i, s) in segs.iter().enumerate() {
            prop_assert_eq!(s.samples.len(), dl);
            prop_assert_eq!(s.start_s, (i as u32 * (d - o)) as f64);
        }
    }

    #[test]
    fn mel_power_scales_quadratically(seed in any::<u64>()) {
        use rand::Rng;
        let mut rng = sssl::nn::rng_from_seed(seed);
        let x: Vec<f32> = (0..N_FFT + 3 * HOP_LENGTH).map(|_| rng.gen_range(-0.5f32..0.5)).collect();
        let doubled: Vec<f32> = x.iter().map(|v| v * 2.0).collect();
        let ex = MelExtractor::new(TARGET_RATE);
        let a = ex.mel_power(&x).unwrap();
        let b = ex.mel_power(&doubled).unwrap();
        for (p, q) in a.iter().zip(&b) {
            prop_assert!((q - 4.0 * p).abs() <= 1e-9 * q.abs().max(1e-12));
        }
    }
}

#[test]
fn invalid_segmentation_is_rejected() {
    let w = Waveform {
        samples: vec![0.0; 1000],
        sample_rate: 100,
        source_id: "w".into(),
    };
    assert!(matches!(
        segment(&w, 0, 0),
        Err(AudioError::InvalidSegmentation { .. })
    ));
    assert!(matches!(
        segment(&w, 2, 2),
        Err(AudioError::InvalidSegmentation { .. })
    ));
}

#[test]
fn one_second_segment_has_42_frames() {
    let spec = MelExtractor::new(TARGET_RATE)
        .extract(&one_second(tone(440.0, 1.0, TARGET_RATE)))
        .unwrap();
    assert_eq!((spec.n_mels, spec.n_frames), (N_MELS, 42));
    assert_eq!(spec.values.len(), N_MELS * 42);
}

#[test]
fn pure_tone_peaks_in_the_band_covering_it() {
    let ex = MelExtractor::new(TARGET_RATE);
    for freq in [220.0, 440.0, 1000.0, 3150.0, 8000.0] {
        let spec = ex
            .extract(&one_second(tone(freq, 1.0, TARGET_RATE)))
            .unwrap();
        for t in 0..spec.n_frames {
            let best = (0..N_MELS)
                .max_by(|&a, &b| spec.at(a, t).total_cmp(&spec.at(b, t)))
                .unwrap();
            let lo = if best == 0 {
                0.0
            } else {
                band_center_hz(best - 1, TARGET_RATE)
            };
            let hi = band_center_hz(best + 1, TARGET_RATE);
            assert!(
                lo < freq && freq < hi,
                "{freq} Hz frame {t}: peak band {best} spans {lo}..{hi}"
            );
        }
    }
}

#[test]
fn silence_hits_the_log_floor() {
    let spec = MelExtractor::new(TARGET_RATE)
        .extract(&one_second(vec![0.0; TARGET_RATE as usize]))
        .unwrap();
    assert!(spec
        .values
        .iter()
        .all(|&v| (v - 1e-10f64.ln()).abs() < 1e-12));
}

#[test]
fn too_short_input_is_an_error() {
    let ex = MelExtractor::new(TARGET_RATE);
    assert!(matches!(
        ex.mel_power(&[0.0; N_FFT - 1]),
        Err(AudioError::TooShort { .. })
    ));
}

#[test]
fn stereo_is_averaged_to_mono() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("st.wav");
    write_wav(
        &path,
        spec(2, TARGET_RATE, 16, hound::SampleFormat::Int),
        &[0.5, -0.25, 0.5, -0.25, -1.0, 0.0],
    );
    let w = load_audio(&path, TARGET_RATE).unwrap();
    assert_eq!(w.samples, vec![0.125, 0.125, -0.5]);
}

#[test]
fn float_wav_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("f.wav");
    let x = tone(300.0, 0.1, TARGET_RATE);
    write_wav(
        &path,
        spec(1, TARGET_RATE, 32, hound::SampleFormat::Float),
        &x,
    );
    assert_eq!(load_audio(&path, TARGET_RATE).unwrap().samples, x);
}

#[test]
fn downsampling_by_two_keeps_every_other_sample() {
    let x: Vec<f32> = (0..44_100).map(|i| (i % 7) as f32 / 7.0).collect();
    let y = resample_linear(&x, 44_100, TARGET_RATE);
    assert_eq!(y.len(), 22_050);
    assert!(y.iter().enumerate().all(|(i, &v)| v == x[2 * i]));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("hi.wav");
    write_wav(
        &path,
        spec(1, 44_100, 32, hound::SampleFormat::Float),
        &tone(500.0, 2.0, 44_100),
    );
    let w = load_audio(&path, TARGET_RATE).unwrap();
    assert_eq!((w.sample_rate, w.samples.len()), (TARGET_RATE, 44_100));
}

#[test]
fn upsampling_interpolates_between_samples() {
    let y = resample_linear(&[0.0, 1.0, 0.0], 1, 2);
    assert_eq!(y, vec![0.0, 0.5, 1.0, 0.5, 0.0, 0.0]);
}

#[test]
fn unsupported_and_broken_files_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let eight = dir.path().join("8.wav");
    write_wav(
        &eight,
        spec(1, 8000, 8, hound::SampleFormat::Int),
        &[0.1, 0.2],
    );
    assert!(matches!(
        load_audio(&eight, TARGET_RATE),
        Err(AudioError::Unsupported { .. })
    ));

    let empty = dir.path().join("empty.wav");
    write_wav(
        &empty,
        spec(1, TARGET_RATE, 16, hound::SampleFormat::Int),
        &[],
    );
    assert!(matches!(
        load_audio(&empty, TARGET_RATE),
        Err(AudioError::Empty(_))
    ));

    let junk = dir.path().join("junk.wav");
    std::fs::write(&junk, b"definitely not a riff file").unwrap();
    assert!(matches!(
        load_audio(&junk, TARGET_RATE),
        Err(AudioError::Unreadable { .. })
    ));

    let missing = dir.path().join("missing.wav");
    assert!(matches!(
        load_audio(&missing, TARGET_RATE),
        Err(AudioError::Unreadable { .. })
    ));
    assert!(matches!(load_audio(&junk, 0), Err(AudioError::BadRate(0))));
}
