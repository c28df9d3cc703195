use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::aggregate::{SongTrainConfig, DEFAULT_THETA};
use crate::synth::SynthConfig;
use crate::train::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthMode {
    Audio,
    Features,
}

impl FromStr for SynthMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "audio" => Ok(Self::Audio),
            "features" => Ok(Self::Features),
            other => Err(format!(
                "synth_mode must be `audio` or `features`, got `{other}`"
            )),
        }
    }
}

/// Everything a command may need; every field has a default.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub synth: SynthConfig,
    pub synth_mode: SynthMode,
    pub segment_duration: u32,
    pub overlap: u32,
    pub theta: f64,
    pub arch: Option<String>,
    pub song: SongTrainConfig,
    pub folds: usize,
    pub checkpoint_every: usize,
    pub threads: usize,
    pub manifest: Option<PathBuf>,
    pub cache: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub metrics: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub song_model: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            synth: SynthConfig::default(),
            synth_mode: SynthMode::Audio,
            segment_duration: 1,
            overlap: 0,
            theta: DEFAULT_THETA,
            arch: None,
            song: SongTrainConfig::default(),
            folds: 10,
            checkpoint_every: 0,
            threads: 0,
            manifest: None,
            cache: None,
            model: None,
            metrics: None,
            out: None,
            song_model: None,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| format!("bad value `{value}` for `{key}`: {e}"))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, String> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(format!(
            "bad value `{value}` for `{key}`: expected true or false"
        )),
    }
}

impl RunConfig {
    /// Sets one key. Unknown keys are errors.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<(), String> {
        let v = value;
        match key {
            "epochs" => self.train.epochs = parse(key, v)?,
            "warm_up_epochs" => self.train.warm_up_epochs = parse(key, v)?,
            "batch_size" => self.train.batch_size = parse(key, v)?,
            "lr" => self.train.lr = parse(key, v)?,
            "momentum" => self.train.momentum = parse(key, v)?,
            "lr_decay" => self.train.lr_decay = parse(key, v)?,
            "lr_milestones" => {
                self.train.lr_milestones = v
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| parse(key, s))
                    .collect::<Result<_, _>>()?
            }
            "temperature" => self.train.temperature = parse(key, v)?,
            "tau" => self.train.tau = parse(key, v)?,
            "lambda" => self.train.lambda = parse(key, v)?,
            "alpha" => self.train.alpha = parse(key, v)?,
            "baseline" => self.train.baseline = parse_bool(key, v)?,
            "pseudo_refresh" => {
                self.train.pseudo_refresh = v.parse().map_err(|e| format!("{e}"))?
            }
            "gmm_max_iter" => self.train.gmm_max_iter = parse(key, v)?,
            "gmm_tol" => self.train.gmm_tol = parse(key, v)?,
            "seed" => {
                let s: u64 = parse(key, v)?;
                self.train.seed = s;
                self.synth.seed = s;
            }
            "segment_duration" => self.segment_duration = parse(key, v)?,
            "overlap" => self.overlap = parse(key, v)?,
            "theta" => self.theta = parse(key, v)?,
            "arch" => self.arch = Some(v.to_string()),
            "svm_reg" => self.song.reg = parse(key, v)?,
            "svm_epochs" => self.song.epochs = parse(key, v)?,
            "svm_lr" => self.song.lr = parse(key, v)?,
            "folds" => self.folds = parse(key, v)?,
            "checkpoint_every" => self.checkpoint_every = parse(key, v)?,
            "threads" => self.threads = parse(key, v)?,
            "classes" => self.synth.classes = parse(key, v)?,
            "songs_per_class" => self.synth.songs_per_class = parse(key, v)?,
            "segments_per_song" => self.synth.segments_per_song = parse(key, v)?,
            "song_duration" => self.synth.song_duration_s = parse(key, v)?,
            "feature_dim" => self.synth.feature_dim = parse(key, v)?,
            "separation" => self.synth.separation = parse(key, v)?,
            "song_spread" => self.synth.song_spread = parse(key, v)?,
            "noise_rate" => self.synth.noise_rate = parse(key, v)?,
            "drift" => self.synth.drift = parse_bool(key, v)?,
            "drift_fraction" => self.synth.drift_fraction = parse(key, v)?,
            "synth_mode" => self.synth_mode = v.parse()?,
            "manifest" => self.manifest = Some(v.into()),
            "cache" => self.cache = Some(v.into()),
            "model" => self.model = Some(v.into()),
            "metrics" => self.metrics = Some(v.into()),
            "out" => self.out = Some(v.into()),
            "song_model" => self.song_model = Some(v.into()),
            other => return Err(format!("unknown config key `{other}`")),
        }
        Ok(())
    }

    /// Applies a `key = value` file; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str, origin: &Path) -> Result<(), String> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| format!("{}:{}: expected `key = value`", origin.display(), n + 1))?;
            self.apply(k.trim(), v.trim())
                .map_err(|e| format!("{}:{}: {e}", origin.display(), n + 1))?;
        }
        Ok(())
    }

    /// Applies a `key=value` override from the command line.
    pub fn apply_pair(&mut self, pair: &str) -> Result<(), String> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| format!("--set expects key=value, got `{pair}`"))?;
        self.apply(k.trim(), v.trim())
    }

    pub fn validate(&self) -> Result<(), String> {
        self.train.validate().map_err(|e| e.to_string())?;
        if self.segment_duration == 0 || self.overlap >= self.segment_duration {
            return Err(format!(
                "overlap {} must be smaller than segment_duration {}",
                self.overlap, self.segment_duration
            ));
        }
        if !(self.theta > 0.0 && self.theta < 1.0) {
            return Err(format!("theta must lie in (0, 1), got {}", self.theta));
        }
        if !(0.0..).contains(&self.song.reg) || !(self.song.lr > 0.0 && self.song.lr.is_finite()) {
            return Err("svm_reg must be non-negative and svm_lr positive".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_then_override() {
        let mut c = RunConfig::default();
        c.apply_text(
            "# comment\nepochs = 7  # trailing\n\nlambda=0\nbaseline = true\n",
            Path::new("x"),
        )
        .unwrap();
        assert_eq!(c.train.epochs, 7);
        assert_eq!(c.train.lambda, 0.0);
        assert!(c.train.baseline);
        c.apply_pair("epochs=3").unwrap();
        assert_eq!(c.train.epochs, 3);
        c.apply_text("lr_milestones = 0.5, 0.9\n", Path::new("x"))
            .unwrap();
        assert_eq!(c.train.lr_milestones, vec![0.5, 0.9]);
    }

    #[test]
    fn errors_name_the_line() {
        let mut c = RunConfig::default();
        let e = c
            .apply_text("epochs = 3\nbogus = 1\n", Path::new("run.cfg"))
            .unwrap_err();
        assert!(e.contains("run.cfg:2"), "{e}");
        assert!(c.apply_text("epochs 3\n", Path::new("r")).is_err());
        assert!(c.apply("epochs", "many").is_err());
    }

    #[test]
    fn validation() {
        assert!(RunConfig::default().validate().is_ok());
        let c = RunConfig {
            overlap: 1,
            ..RunConfig::default()
        };
        assert!(c.validate().is_err());
    }
}
