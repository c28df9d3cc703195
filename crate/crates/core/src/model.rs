//! Saved segment classifier: network, parameters, input normalization and
//! the label names it was trained with.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::SegmentSet;
use crate::nn::{io, ModelParams, NetworkConfig, NnError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelHeader {
    pub network: NetworkConfig,
    pub label_names: Vec<String>,
    /// Scalar standardization applied to every input value.
    pub input_mean: f64,
    pub input_std: f64,
    #[serde(default)]
    pub segment_duration_s: Option<u32>,
    #[serde(default)]
    pub overlap_s: Option<u32>,
}

#[derive(Debug, Clone)]
pub struct SegmentModel {
    pub header: ModelHeader,
    pub params: ModelParams,
}

/// Mean and standard deviation over every stored feature value.
pub fn input_stats(set: &SegmentSet) -> (f64, f64) {
    let xs = set.features();
    if xs.is_empty() {
        return (0.0, 1.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, if var > 1e-24 { var.sqrt() } else { 1.0 })
}

/// Applies `(x − mean) / std` in place.
pub fn normalize(set: &mut SegmentSet, mean: f64, std: f64) {
    for v in set.features_mut() {
        *v = (*v - mean) / std;
    }
}

impl SegmentModel {
    pub fn save(&self, path: &Path) -> Result<(), NnError> {
        let mut w = BufWriter::new(File::create(path)?);
        io::write_model(&mut w, &self.header, &self.params)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, NnError> {
        let mut r = BufReader::new(File::open(path)?);
        let (header, params): (ModelHeader, ModelParams) = io::read_model(&mut r)?;
        params.check_matches(&header.network)?;
        Ok(Self { header, params })
    }

    /// Copy of `set` normalized the way the model's inputs were.
    pub fn prepare(&self, set: &SegmentSet) -> SegmentSet {
        let mut s = set.clone();
        normalize(&mut s, self.header.input_mean, self.header.input_std);
        s
    }
}
