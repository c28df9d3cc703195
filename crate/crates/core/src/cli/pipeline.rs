//! Steps shared by several commands.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{anyhow, Context, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::RunConfig;
use crate::aggregate::{self, LinearSongModel, SegmentProbSeq, SongFeature, STATS_PER_CLASS};
use crate::audio::{self, Manifest, MelExtractor, N_MELS, TARGET_RATE};
use crate::dataset::SegmentSet;
use crate::model::{input_stats, normalize, ModelHeader, SegmentModel};
use crate::nn::{ModelParams, NetworkConfig};
use crate::train::{self, EpochReport};

/// Log-mel features of every song in the manifest, in manifest order.
/// Songs shorter than one segment are skipped with a warning, or rejected
/// when `allow_short` is false. Returns the set and the skipped song ids.
pub fn featurize_manifest(
    manifest: &Manifest,
    duration_s: u32,
    overlap_s: u32,
    allow_short: bool,
) -> Result<(SegmentSet, Vec<String>)> {
    let frames = MelExtractor::frames((duration_s * TARGET_RATE) as usize);
    let extractor = MelExtractor::new(TARGET_RATE);
    let per_song: Vec<Vec<(Vec<f64>, f64)>> = manifest
        .rows
        .par_iter()
        .map(|row| -> Result<Vec<(Vec<f64>, f64)>> {
            let mut wave = audio::load_audio(&row.path, TARGET_RATE)?;
            wave.source_id = row.song_id.clone();
            audio::segment(&wave, duration_s, overlap_s)?
                .iter()
                .map(|seg| Ok(extractor.extract(seg).map(|m| (m.values, m.start_s))?))
                .collect()
        })
        .collect::<Result<_>>()?;
    let mut set = SegmentSet::new(vec![1, N_MELS, frames], manifest.classes());
    let mut skipped = Vec::new();
    for (row, segs) in manifest.rows.iter().zip(per_song) {
        if segs.is_empty() {
            if !allow_short {
                return Err(anyhow!(
                    "song `{}` is shorter than the {duration_s} s segment duration",
                    row.song_id
                ));
            }
            log::warn!("skipping `{}`: shorter than {duration_s} s", row.song_id);
            skipped.push(row.song_id.clone());
            continue;
        }
        for (values, start) in segs {
            set.push(&values, row.label, &row.song_id, start);
        }
    }
    Ok((set, skipped))
}

pub fn build_network(cfg: &RunConfig, shape: &[usize], classes: usize) -> Result<NetworkConfig> {
    Ok(match &cfg.arch {
        Some(a) => NetworkConfig::from_arch(shape.to_vec(), a, classes)?,
        None => NetworkConfig::default_for(shape.to_vec(), classes)?,
    })
}

/// Normalizes with statistics of `train_set`, trains, and calls `on_epoch`
/// after every epoch with the report and a model snapshot.
pub fn fit_segment_model<F>(
    cfg: &RunConfig,
    train_set: &SegmentSet,
    label_names: &[String],
    held_out: Option<&SegmentSet>,
    mut on_epoch: F,
) -> Result<(SegmentModel, Vec<EpochReport>)>
where
    F: FnMut(&EpochReport, &dyn Fn() -> SegmentModel) -> Result<()>,
{
    let net = build_network(cfg, &train_set.sample_shape, train_set.classes)?;
    let (mean, std) = input_stats(train_set);
    let header = ModelHeader {
        network: net.clone(),
        label_names: label_names.to_vec(),
        input_mean: mean,
        input_std: std,
        segment_duration_s: Some(cfg.segment_duration),
        overlap_s: Some(cfg.overlap),
    };
    let mut data = train_set.clone();
    normalize(&mut data, mean, std);
    let held = held_out.map(|h| {
        let mut h = h.clone();
        normalize(&mut h, mean, std);
        h
    });
    let mut failure = None;
    let outcome = train::train(&cfg.train, &net, &data, held.as_ref(), |snap| {
        if failure.is_some() {
            return;
        }
        let snapshot = || SegmentModel {
            header: header.clone(),
            params: snap.params.clone(),
        };
        if let Err(e) = on_epoch(snap.report, &snapshot) {
            failure = Some(e);
        }
    })?;
    if let Some(e) = failure {
        return Err(e);
    }
    Ok((
        SegmentModel {
            header,
            params: outcome.params,
        },
        outcome.reports,
    ))
}

/// Probability sequences for every song of `set` (already normalized), in
/// first-appearance order, segments sorted by start time, with the song label.
pub fn song_sequences(
    params: &ModelParams,
    net: &NetworkConfig,
    set: &SegmentSet,
    batch_size: usize,
) -> Result<Vec<(SegmentProbSeq, usize, Vec<f64>)>> {
    let probs = train::predict_probs(params, net, set, batch_size)?;
    Ok(set
        .songs()
        .into_iter()
        .map(|(song, mut idx)| {
            idx.sort_by(|&a, &b| set.starts[a].total_cmp(&set.starts[b]));
            let label = set.labels[idx[0]];
            let starts = idx.iter().map(|&i| set.starts[i]).collect();
            let seq = SegmentProbSeq {
                song_id: song,
                probs: idx.iter().map(|&i| probs[i].clone()).collect(),
            };
            (seq, label, starts)
        })
        .collect())
}

/// Song features and labels of every song in a raw (un-normalized) set.
pub fn song_table(
    model: &SegmentModel,
    raw: &SegmentSet,
    theta: f64,
    batch_size: usize,
) -> Result<Vec<(SongFeature, usize)>> {
    let set = model.prepare(raw);
    song_sequences(&model.params, &model.header.network, &set, batch_size)?
        .into_iter()
        .map(|(seq, label, _)| Ok((aggregate::song_features(&seq, theta)?, label)))
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SongModelFile {
    pub theta: f64,
    pub label_names: Vec<String>,
    pub model: LinearSongModel,
}

impl SongModelFile {
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)
            .with_context(|| format!("writing {}", path.display()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_slice(&bytes).with_context(|| format!("parsing {}", path.display()))
    }
}

pub fn fit_song_model(
    cfg: &RunConfig,
    table: &[(SongFeature, usize)],
    classes: usize,
    label_names: &[String],
) -> Result<SongModelFile> {
    let feats: Vec<SongFeature> = table.iter().map(|(f, _)| f.clone()).collect();
    let labels: Vec<usize> = table.iter().map(|(_, l)| *l).collect();
    Ok(SongModelFile {
        theta: cfg.theta,
        label_names: label_names.to_vec(),
        model: aggregate::train_song_classifier(&feats, &labels, classes, &cfg.song)?,
    })
}

pub fn song_features_csv(table: &[(SongFeature, usize)], classes: usize) -> String {
    let mut s = String::from("song_id");
    for c in 0..classes {
        for j in 1..=STATS_PER_CLASS {
            let _ = write!(s, ",f{j}_c{c}");
        }
    }
    s.push_str(",label\n");
    for (f, label) in table {
        s.push_str(&f.song_id);
        for v in &f.values {
            let _ = write!(s, ",{v}");
        }
        let _ = writeln!(s, ",{label}");
    }
    s
}

/// `song_id,predicted,margin_c0,…`; `predicted` is the class name.
pub fn predictions_csv(rows: &[(String, usize, Vec<f64>)], label_names: &[String]) -> String {
    let mut s = String::from("song_id,predicted");
    for c in 0..label_names.len() {
        let _ = write!(s, ",margin_c{c}");
    }
    s.push('\n');
    for (song, pred, margins) in rows {
        let _ = write!(s, "{song},{}", label_names[*pred]);
        for m in margins {
            let _ = write!(s, ",{m}");
        }
        s.push('\n');
    }
    s
}

pub fn write_file(path: &Path, body: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    std::fs::write(path, body).with_context(|| format!("writing {}", path.display()))
}
