//! Binary feature cache.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic "SSFC" | version u32 | K u32 | n_mels u32 | n_frames u32 | count u32
//! count × ( song_id_len u32 | song_id UTF-8 | start_s f32 | label u16 |
//!           n_mels·n_frames × f32, mel-major )
//! ```
//!
//! A companion `index.csv` lists `song_id,label,label_name,segments`.
//! Vector features are stored with `n_frames = 1`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::dataset::SegmentSet;

pub const CACHE_MAGIC: &[u8; 4] = b"SSFC";
pub const CACHE_VERSION: u32 = 1;
pub const CACHE_FILE: &str = "features.ssfc";
pub const INDEX_FILE: &str = "index.csv";

#[derive(Debug, Error)]
pub enum CacheError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed feature cache: {0}")]
    Format(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CacheHeader {
    pub classes: u32,
    pub n_mels: u32,
    pub n_frames: u32,
    pub count: u32,
}

impl CacheHeader {
    pub fn sample_shape(&self) -> Vec<usize> {
        if self.n_frames == 1 {
            vec![self.n_mels as usize]
        } else {
            vec![1, self.n_mels as usize, self.n_frames as usize]
        }
    }
}

/// `(n_mels, n_frames)` for a sample shape `[d]` or `[1, mels, frames]`.
pub fn layout_of(shape: &[usize]) -> Result<(u32, u32), CacheError> {
    match shape {
        [d] => Ok((*d as u32, 1)),
        [1, m, f] => Ok((*m as u32, *f as u32)),
        other => Err(CacheError::Format(format!(
            "cannot store samples of shape {other:?}"
        ))),
    }
}

pub fn write_cache<W: Write>(w: &mut W, set: &SegmentSet) -> std::io::Result<()> {
    let (n_mels, n_frames) = layout_of(&set.sample_shape).map_err(std::io::Error::other)?;
    w.write_all(CACHE_MAGIC)?;
    for v in [
        CACHE_VERSION,
        set.classes as u32,
        n_mels,
        n_frames,
        set.len() as u32,
    ] {
        w.write_all(&v.to_le_bytes())?;
    }
    for i in 0..set.len() {
        let id = set.song_ids[i].as_bytes();
        w.write_all(&(id.len() as u32).to_le_bytes())?;
        w.write_all(id)?;
        w.write_all(&(set.starts[i] as f32).to_le_bytes())?;
        w.write_all(&(set.labels[i] as u16).to_le_bytes())?;
        for &v in set.feature(i) {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_cache<R: Read>(r: &mut R) -> Result<(CacheHeader, SegmentSet), CacheError> {
    let fmt = |m: &str| CacheError::Format(m.to_string());
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| fmt("truncated header"))?;
    if &magic != CACHE_MAGIC {
        return Err(fmt("bad magic"));
    }
    let mut u32s = [0u32; 5];
    for v in u32s.iter_mut() {
        *v = read_u32(r).map_err(|_| fmt("truncated header"))?;
    }
    let [version, classes, n_mels, n_frames, count] = u32s;
    if version != CACHE_VERSION {
        return Err(CacheError::Format(format!("unsupported version {version}")));
    }
    let header = CacheHeader {
        classes,
        n_mels,
        n_frames,
        count,
    };
    let mut set = SegmentSet::new(header.sample_shape(), classes as usize);
    let len = n_mels as usize * n_frames as usize;
    let mut raw = vec![0u8; len * 4];
    let mut feat = vec![0.0f64; len];
    for i in 0..count {
        let trunc = |_| CacheError::Format(format!("record {i} truncated"));
        let id_len = read_u32(r).map_err(trunc)? as usize;
        let mut id = vec![0u8; id_len];
        r.read_exact(&mut id).map_err(trunc)?;
        let id = String::from_utf8(id)
            .map_err(|_| CacheError::Format(format!("record {i}: song_id is not UTF-8")))?;
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4).map_err(trunc)?;
        let start = f32::from_le_bytes(b4);
        let mut b2 = [0u8; 2];
        r.read_exact(&mut b2).map_err(trunc)?;
        let label = u16::from_le_bytes(b2) as usize;
        if label >= classes as usize {
            return Err(CacheError::Format(format!(
                "record {i}: label {label} >= K {classes}"
            )));
        }
        r.read_exact(&mut raw).map_err(trunc)?;
        for (f, c) in feat.iter_mut().zip(raw.chunks_exact(4)) {
            *f = f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64;
        }
        set.push(&feat, label, &id, start as f64);
    }
    Ok((header, set))
}

fn read_u32<R: Read>(r: &mut R) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// Writes `features.ssfc` and `index.csv` into `dir`.
pub fn save_dir(dir: &Path, set: &SegmentSet, label_names: &[String]) -> Result<(), CacheError> {
    let io = |path: PathBuf| move |source| CacheError::Io { path, source };
    std::fs::create_dir_all(dir).map_err(io(dir.to_path_buf()))?;
    let path = dir.join(CACHE_FILE);
    let mut w = BufWriter::new(File::create(&path).map_err(io(path.clone()))?);
    write_cache(&mut w, set).map_err(io(path.clone()))?;
    w.flush().map_err(io(path))?;
    let path = dir.join(INDEX_FILE);
    let mut body = String::from("song_id,label,label_name,segments\n");
    for (song, idx) in set.songs() {
        let label = set.labels[idx[0]];
        let name = label_names
            .get(label)
            .map_or_else(|| label.to_string(), Clone::clone);
        body.push_str(&format!("{song},{label},{name},{}\n", idx.len()));
    }
    std::fs::write(&path, body).map_err(io(path))
}

/// Loads a cache directory; returns the header, segments and label names
/// (from the index, falling back to numeric names).
pub fn load_dir(dir: &Path) -> Result<(CacheHeader, SegmentSet, Vec<String>), CacheError> {
    let path = dir.join(CACHE_FILE);
    let file = File::open(&path).map_err(|source| CacheError::Io {
        path: path.clone(),
        source,
    })?;
    let (header, set) = read_cache(&mut BufReader::new(file))?;
    let mut names: Vec<String> = (0..header.classes).map(|c| c.to_string()).collect();
    let index = dir.join(INDEX_FILE);
    if let Ok(body) = std::fs::read_to_string(&index) {
        for line in body.lines().skip(1) {
            let cols: Vec<&str> = line.split(',').collect();
            if let [_, label, name, _] = cols[..] {
                if let Some(slot) = label.parse::<usize>().ok().and_then(|l| names.get_mut(l)) {
                    *slot = name.to_string();
                }
            }
        }
    }
    Ok((header, set, names))
}
