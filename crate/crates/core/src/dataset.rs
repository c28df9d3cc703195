use std::collections::{BTreeMap, HashSet};

use crate::nn::{NnError, Tensor};

/// Flat store of segment features with their inherited labels and the song
/// each segment came from.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SegmentSet {
    /// Per-sample network input shape, e.g. `[1, 128, 42]` or `[d]`.
    pub sample_shape: Vec<usize>,
    pub classes: usize,
    features: Vec<f64>,
    pub labels: Vec<usize>,
    pub song_ids: Vec<String>,
    pub starts: Vec<f64>,
}

impl SegmentSet {
    pub fn new(sample_shape: Vec<usize>, classes: usize) -> Self {
        Self {
            sample_shape,
            classes,
            ..Default::default()
        }
    }

    pub fn sample_len(&self) -> usize {
        self.sample_shape.iter().product()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn push(&mut self, features: &[f64], label: usize, song_id: &str, start_s: f64) {
        assert_eq!(features.len(), self.sample_len(), "feature length");
        self.features.extend_from_slice(features);
        self.labels.push(label);
        self.song_ids.push(song_id.to_string());
        self.starts.push(start_s);
    }

    pub fn feature(&self, i: usize) -> &[f64] {
        let n = self.sample_len();
        &self.features[i * n..(i + 1) * n]
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn features_mut(&mut self) -> &mut [f64] {
        &mut self.features
    }

    /// Stacks the given samples into a `[batch, sample_shape..]` tensor.
    pub fn batch(&self, idx: &[usize]) -> Result<Tensor, NnError> {
        let n = self.sample_len();
        let mut data = Vec::with_capacity(idx.len() * n);
        for &i in idx {
            data.extend_from_slice(self.feature(i));
        }
        let mut shape = vec![idx.len()];
        shape.extend_from_slice(&self.sample_shape);
        Tensor::new(shape, data)
    }

    pub fn subset(&self, idx: &[usize]) -> SegmentSet {
        let mut out = SegmentSet::new(self.sample_shape.clone(), self.classes);
        for &i in idx {
            out.push(
                self.feature(i),
                self.labels[i],
                &self.song_ids[i],
                self.starts[i],
            );
        }
        out
    }

    /// Song ids in first-appearance order, each with its segment indices.
    pub fn songs(&self) -> Vec<(String, Vec<usize>)> {
        let mut order: Vec<String> = Vec::new();
        let mut map: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, s) in self.song_ids.iter().enumerate() {
            map.entry(s.as_str())
                .or_insert_with(|| {
                    order.push(s.clone());
                    Vec::new()
                })
                .push(i);
        }
        order
            .into_iter()
            .map(|s| {
                let idx = map.remove(s.as_str()).unwrap_or_default();
                (s, idx)
            })
            .collect()
    }

    /// All segments belonging to the listed songs, in storage order.
    pub fn select_songs(&self, songs: &[String]) -> SegmentSet {
        let keep: HashSet<&str> = songs.iter().map(String::as_str).collect();
        let idx: Vec<usize> = (0..self.len())
            .filter(|&i| keep.contains(self.song_ids[i].as_str()))
            .collect();
        self.subset(&idx)
    }
}
