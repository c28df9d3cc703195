use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use serde::Serialize;

use super::pipeline::{self, SongModelFile};
use super::{usage, CliError, RunConfig, SynthMode};
use crate::aggregate::{self, kfold_split};
use crate::audio::{self, Manifest, ManifestRow};
use crate::cache;
use crate::dataset::SegmentSet;
use crate::metrics::{mean_std, MetricsReport};
use crate::model::SegmentModel;
use crate::synth::{self, class_name};
use crate::train::{self, EpochReport};

type CmdResult = Result<(), CliError>;

fn required<'a>(p: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path, CliError> {
    p.as_deref()
        .map_or_else(|| usage(format!("missing required --{flag}")), Ok)
}

fn existing<'a>(p: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path, CliError> {
    let path = required(p, flag)?;
    if !path.exists() {
        return usage(format!("--{flag}: {} does not exist", path.display()));
    }
    Ok(path)
}

fn load_manifest_checked(path: &Path) -> Result<Manifest, CliError> {
    let m = audio::load_manifest(path).map_err(|e| CliError::Usage(e.to_string()))?;
    let missing: Vec<String> = m
        .rows
        .iter()
        .filter(|r| !r.path.exists())
        .map(|r| r.path.display().to_string())
        .collect();
    if !missing.is_empty() {
        return usage(format!(
            "manifest references missing files: {}",
            missing.join(", ")
        ));
    }
    Ok(m)
}

fn load_cache(dir: &Path) -> Result<(SegmentSet, Vec<String>), CliError> {
    let (_, set, names) =
        cache::load_dir(dir).with_context(|| format!("loading feature cache {}", dir.display()))?;
    Ok((set, names))
}

fn to_json<T: Serialize>(v: &T) -> anyhow::Result<String> {
    Ok(serde_json::to_string_pretty(v)? + "\n")
}

fn jsonl(reports: &[EpochReport]) -> anyhow::Result<String> {
    let mut s = String::new();
    for r in reports {
        s.push_str(&serde_json::to_string(r)?);
        s.push('\n');
    }
    Ok(s)
}

pub fn synth(cfg: &RunConfig) -> CmdResult {
    cfg.synth
        .validate()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let out = required(&cfg.out, "out")?;
    let s = &cfg.synth;
    let flipped = match cfg.synth_mode {
        SynthMode::Audio => {
            let songs = synth::gen_audio_corpus(s, out).map_err(anyhow::Error::from)?;
            songs.iter().filter(|x| x.flipped).count()
        }
        SynthMode::Features => {
            let corpus = synth::gen_feature_corpus(s).map_err(anyhow::Error::from)?;
            let names: Vec<String> = (0..s.classes).map(class_name).collect();
            cache::save_dir(out, &corpus.data, &names).map_err(anyhow::Error::from)?;
            let mut truth = String::from("song_id,true_label,manifest_label,flipped\n");
            for (i, id) in corpus.song_ids.iter().enumerate() {
                truth.push_str(&format!(
                    "{id},{},{},{}\n",
                    class_name(corpus.song_true[i]),
                    class_name(corpus.song_noisy[i]),
                    u8::from(corpus.flipped[i])
                ));
            }
            pipeline::write_file(&out.join("truth.csv"), truth)?;
            let mut seg = String::from("song_id,start_s,true_label\n");
            for i in 0..corpus.data.len() {
                seg.push_str(&format!(
                    "{},{},{}\n",
                    corpus.data.song_ids[i],
                    corpus.data.starts[i],
                    class_name(corpus.segment_truth[i])
                ));
            }
            pipeline::write_file(&out.join("segment_truth.csv"), seg)?;
            corpus.flipped_count()
        }
    };
    let n = s.songs();
    println!(
        "synthesized {n} songs in {} classes at {}; injected label noise on {flipped} songs ({:.1}%)",
        s.classes,
        out.display(),
        100.0 * flipped as f64 / n as f64
    );
    Ok(())
}

pub fn featurize(cfg: &RunConfig) -> CmdResult {
    let manifest = load_manifest_checked(existing(&cfg.manifest, "manifest")?)?;
    let out = required(&cfg.out, "out")?;
    let (set, skipped) =
        pipeline::featurize_manifest(&manifest, cfg.segment_duration, cfg.overlap, true)?;
    cache::save_dir(out, &set, &manifest.label_names).map_err(anyhow::Error::from)?;
    println!(
        "cached {} segments from {} songs ({} skipped) in {}",
        set.len(),
        manifest.rows.len() - skipped.len(),
        skipped.len(),
        out.display()
    );
    Ok(())
}

pub fn train_segment(cfg: &RunConfig, held_out: Option<&Path>) -> CmdResult {
    let cache_dir = existing(&cfg.cache, "cache")?;
    let model_path = required(&cfg.model, "model")?.to_path_buf();
    if let Some(h) = held_out {
        if !h.exists() {
            return usage(format!("--held-out: {} does not exist", h.display()));
        }
    }
    let metrics_path = cfg
        .metrics
        .clone()
        .unwrap_or_else(|| model_path.with_extension("metrics.jsonl"));
    let (set, names) = load_cache(cache_dir)?;
    let held = held_out.map(load_cache).transpose()?.map(|(s, _)| s);
    if let Some(dir) = metrics_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let file = File::create(&metrics_path)
        .with_context(|| format!("creating {}", metrics_path.display()))?;
    let mut metrics = BufWriter::new(file);
    let every = cfg.checkpoint_every;
    let (model, reports) =
        pipeline::fit_segment_model(cfg, &set, &names, held.as_ref(), |report, snapshot| {
            writeln!(metrics, "{}", serde_json::to_string(report)?)?;
            if every > 0 && (report.epoch + 1) % every == 0 {
                let ckpt = PathBuf::from(format!(
                    "{}.epoch{}",
                    model_path.display(),
                    report.epoch + 1
                ));
                snapshot().save(&ckpt)?;
            }
            Ok(())
        })?;
    metrics.flush().context("flushing metrics")?;
    model.save(&model_path).context("saving model")?;
    let last = reports.last().expect("at least one epoch");
    println!(
        "trained {} epochs on {} segments; final loss {:.4}; model {}",
        reports.len(),
        set.len(),
        last.total,
        model_path.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct EvalSummary<'a> {
    segment: &'a MetricsReport,
    song: &'a MetricsReport,
}

pub fn eval(cfg: &RunConfig, train_cache: Option<&Path>) -> CmdResult {
    let model_path = existing(&cfg.model, "model")?;
    let cache_dir = existing(&cfg.cache, "cache")?;
    let song_model_path = cfg.song_model.as_deref();
    match (song_model_path, train_cache) {
        (Some(p), _) if !p.exists() => {
            return usage(format!("--song-model: {} does not exist", p.display()))
        }
        (None, None) => return usage("eval needs --song-model or --train-cache"),
        (None, Some(p)) if !p.exists() => {
            return usage(format!("--train-cache: {} does not exist", p.display()))
        }
        _ => {}
    }
    let model = SegmentModel::load(model_path)
        .with_context(|| format!("loading {}", model_path.display()))?;
    let k = model.header.network.classes;
    let (set, _) = load_cache(cache_dir)?;
    if set.classes != k {
        return usage(format!(
            "model has {k} classes but {} has {}",
            cache_dir.display(),
            set.classes
        ));
    }
    let bs = cfg.train.batch_size;
    let seg_pred = train::predict_classes(
        &model.params,
        &model.header.network,
        &model.prepare(&set),
        bs,
    )?;
    let seg_report = MetricsReport::from_predictions(&set.labels, &seg_pred, k);

    let song_model = match song_model_path {
        Some(p) => SongModelFile::load(p)?,
        None => {
            let (train_set, _) = load_cache(train_cache.expect("checked above"))?;
            if train_set.classes != k {
                return usage(format!(
                    "model has {k} classes but the training cache has {}",
                    train_set.classes
                ));
            }
            let table = pipeline::song_table(&model, &train_set, cfg.theta, bs)?;
            pipeline::fit_song_model(cfg, &table, k, &model.header.label_names)?
        }
    };
    let table = pipeline::song_table(&model, &set, song_model.theta, bs)?;
    let mut rows = Vec::with_capacity(table.len());
    for (f, _) in &table {
        let (pred, margins) = aggregate::predict_song(&song_model.model, f)?;
        rows.push((f.song_id.clone(), pred, margins));
    }
    let truth: Vec<usize> = table.iter().map(|(_, l)| *l).collect();
    let pred: Vec<usize> = rows.iter().map(|r| r.1).collect();
    let song_report = MetricsReport::from_predictions(&truth, &pred, k);

    if let Some(out) = &cfg.out {
        pipeline::write_file(&out.join("segment_metrics.json"), to_json(&seg_report)?)?;
        pipeline::write_file(&out.join("song_metrics.json"), to_json(&song_report)?)?;
        pipeline::write_file(
            &out.join("song_features.csv"),
            pipeline::song_features_csv(&table, k),
        )?;
        pipeline::write_file(
            &out.join("predictions.csv"),
            pipeline::predictions_csv(&rows, &song_model.label_names),
        )?;
        if song_model_path.is_none() {
            song_model.save(&out.join("song_model.json"))?;
        }
    } else {
        print!(
            "{}",
            to_json(&EvalSummary {
                segment: &seg_report,
                song: &song_report
            })?
        );
    }
    println!(
        "segment accuracy {:.4} macro-F1 {:.4}; song accuracy {:.4} macro-F1 {:.4}",
        seg_report.accuracy, seg_report.macro_f1, song_report.accuracy, song_report.macro_f1
    );
    Ok(())
}

#[derive(Serialize)]
struct FoldResult {
    fold: usize,
    train_songs: usize,
    test_songs: usize,
    segment: MetricsReport,
    song: MetricsReport,
}

#[derive(Serialize)]
struct CvSummary {
    k: usize,
    folds: Vec<FoldResult>,
    mean_accuracy: f64,
    std_accuracy: f64,
    mean_macro_f1: f64,
    std_macro_f1: f64,
    mean_segment_accuracy: f64,
}

pub fn cv(cfg: &RunConfig) -> CmdResult {
    let (set, names) = match (&cfg.cache, &cfg.manifest) {
        (Some(_), _) => load_cache(existing(&cfg.cache, "cache")?)?,
        (None, Some(_)) => {
            let m = load_manifest_checked(existing(&cfg.manifest, "manifest")?)?;
            let (set, _) =
                pipeline::featurize_manifest(&m, cfg.segment_duration, cfg.overlap, true)?;
            (set, m.label_names)
        }
        (None, None) => return usage("cv needs --cache or --manifest"),
    };
    let songs: Vec<String> = set.songs().into_iter().map(|(s, _)| s).collect();
    let folds = kfold_split(songs.len(), cfg.folds, cfg.train.seed)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let k = set.classes;
    let bs = cfg.train.batch_size;
    let mut results = Vec::with_capacity(folds.len());
    for (f, test_idx) in folds.iter().enumerate() {
        let mut in_test = vec![false; songs.len()];
        test_idx.iter().for_each(|&i| in_test[i] = true);
        let pick = |want: bool| -> Vec<String> {
            (0..songs.len())
                .filter(|&i| in_test[i] == want)
                .map(|i| songs[i].clone())
                .collect()
        };
        let (train_songs, test_songs) = (pick(false), pick(true));
        let train_set = set.select_songs(&train_songs);
        let test_set = set.select_songs(&test_songs);
        let (model, reports) =
            pipeline::fit_segment_model(cfg, &train_set, &names, None, |_, _| Ok(()))?;
        let seg_pred = train::predict_classes(
            &model.params,
            &model.header.network,
            &model.prepare(&test_set),
            bs,
        )?;
        let segment = MetricsReport::from_predictions(&test_set.labels, &seg_pred, k).with_fold(f);
        let train_table = pipeline::song_table(&model, &train_set, cfg.theta, bs)?;
        let song_model = pipeline::fit_song_model(cfg, &train_table, k, &names)?;
        let test_table = pipeline::song_table(&model, &test_set, cfg.theta, bs)?;
        let mut truth = Vec::new();
        let mut pred = Vec::new();
        for (feat, label) in &test_table {
            truth.push(*label);
            pred.push(aggregate::predict_song(&song_model.model, feat)?.0);
        }
        let song = MetricsReport::from_predictions(&truth, &pred, k).with_fold(f);
        println!(
            "fold {f}: song accuracy {:.4} macro-F1 {:.4}; segment accuracy {:.4}",
            song.accuracy, song.macro_f1, segment.accuracy
        );
        if let Some(out) = &cfg.out {
            pipeline::write_file(
                &out.join(format!("fold_{f}_epochs.jsonl")),
                jsonl(&reports)?,
            )?;
        }
        results.push(FoldResult {
            fold: f,
            train_songs: train_songs.len(),
            test_songs: test_songs.len(),
            segment,
            song,
        });
    }
    let accs: Vec<f64> = results.iter().map(|r| r.song.accuracy).collect();
    let f1s: Vec<f64> = results.iter().map(|r| r.song.macro_f1).collect();
    let segs: Vec<f64> = results.iter().map(|r| r.segment.accuracy).collect();
    let (ma, sa) = mean_std(&accs);
    let (mf, sf) = mean_std(&f1s);
    let summary = CvSummary {
        k: folds.len(),
        folds: results,
        mean_accuracy: ma,
        std_accuracy: sa,
        mean_macro_f1: mf,
        std_macro_f1: sf,
        mean_segment_accuracy: mean_std(&segs).0,
    };
    println!("mean: song accuracy {ma:.4} ± {sa:.4}, macro-F1 {mf:.4} ± {sf:.4}");
    if let Some(out) = &cfg.out {
        pipeline::write_file(&out.join("cv_summary.json"), to_json(&summary)?)?;
    }
    Ok(())
}

pub fn predict(cfg: &RunConfig, input: Option<&Path>, dump: Option<&Path>) -> CmdResult {
    let model_path = existing(&cfg.model, "model")?;
    let song_path = existing(&cfg.song_model, "song-model")?;
    let input = match input {
        Some(p) if p.exists() => p,
        Some(p) => return usage(format!("--input: {} does not exist", p.display())),
        None => return usage("missing required --input"),
    };
    let manifest = if input
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"))
    {
        load_manifest_checked(input)?
    } else {
        let song_id = input
            .file_stem()
            .map_or_else(|| "song".to_string(), |s| s.to_string_lossy().into_owned());
        Manifest {
            rows: vec![ManifestRow {
                path: input.to_path_buf(),
                song_id,
                label: 0,
            }],
            label_names: vec![String::new()],
        }
    };
    let model = SegmentModel::load(model_path)
        .with_context(|| format!("loading {}", model_path.display()))?;
    let song_model = SongModelFile::load(song_path)?;
    let k = model.header.network.classes;
    if song_model.model.classes != k {
        return usage(format!(
            "segment model has {k} classes, song model has {}",
            song_model.model.classes
        ));
    }
    let (mut set, _) =
        pipeline::featurize_manifest(&manifest, cfg.segment_duration, cfg.overlap, false)?;
    if set.sample_shape != model.header.network.input_shape {
        return Err(CliError::Runtime(anyhow!(
            "features of shape {:?} do not fit the model input {:?}; check the segment duration",
            set.sample_shape,
            model.header.network.input_shape
        )));
    }
    set.classes = k;
    let prepared = model.prepare(&set);
    let seqs = pipeline::song_sequences(
        &model.params,
        &model.header.network,
        &prepared,
        cfg.train.batch_size,
    )?;
    let mut rows = Vec::with_capacity(seqs.len());
    let mut dump_csv = String::from("song_id,start_s");
    for c in 0..k {
        dump_csv.push_str(&format!(",p_c{c}"));
    }
    dump_csv.push('\n');
    for (seq, _, starts) in &seqs {
        let f = aggregate::song_features(seq, song_model.theta)?;
        let (pred, margins) = aggregate::predict_song(&song_model.model, &f)?;
        rows.push((seq.song_id.clone(), pred, margins));
        for (p, s) in seq.probs.iter().zip(starts) {
            dump_csv.push_str(&format!("{},{s}", seq.song_id));
            for v in p {
                dump_csv.push_str(&format!(",{v}"));
            }
            dump_csv.push('\n');
        }
    }
    let csv = pipeline::predictions_csv(&rows, &song_model.label_names);
    match &cfg.out {
        Some(out) => pipeline::write_file(out, csv)?,
        None => print!("{csv}"),
    }
    if let Some(d) = dump {
        pipeline::write_file(d, dump_csv)?;
    }
    Ok(())
}
