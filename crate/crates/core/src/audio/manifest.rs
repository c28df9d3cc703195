use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::AudioError;

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRow {
    /// Audio path, resolved against the manifest's directory when relative.
    pub path: PathBuf,
    pub song_id: String,
    pub label: usize,
}

/// Parsed `path,song_id,label` listing with densified label ids.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Manifest {
    pub rows: Vec<ManifestRow>,
    pub label_names: Vec<String>,
}

impl Manifest {
    pub fn classes(&self) -> usize {
        self.label_names.len()
    }
}

/// Reads a manifest. Labels are numbered in first-seen order. Missing audio
/// files are not detected here.
pub fn load_manifest(path: &Path) -> Result<Manifest, AudioError> {
    let err = |reason: String| AudioError::Manifest {
        path: path.to_path_buf(),
        reason,
    };
    let file = File::open(path).map_err(|e| err(e.to_string()))?;
    let mut reader = csv::ReaderBuilder::new()
        .quoting(false)
        .trim(csv::Trim::All)
        .from_reader(file);
    let headers = reader.headers().map_err(|e| err(e.to_string()))?.clone();
    if headers.iter().collect::<Vec<_>>() != ["path", "song_id", "label"] {
        return Err(err(format!(
            "expected header `path,song_id,label`, found `{}`",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let base = path.parent().unwrap_or_else(|| Path::new(""));
    let mut manifest = Manifest::default();
    let mut ids: HashMap<String, usize> = HashMap::new();
    let mut seen: HashSet<String> = HashSet::new();
    for (line, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| err(e.to_string()))?;
        let field = |i: usize| rec.get(i).unwrap_or("");
        let (audio, song, label) = (field(0), field(1), field(2));
        if audio.is_empty() || song.is_empty() {
            return Err(err(format!("row {}: empty path or song_id", line + 2)));
        }
        if label.is_empty() {
            return Err(err(format!("row {}: empty label", line + 2)));
        }
        if !seen.insert(song.to_string()) {
            return Err(AudioError::DuplicateSong(song.to_string()));
        }
        let next = ids.len();
        let id = *ids.entry(label.to_string()).or_insert_with(|| {
            manifest.label_names.push(label.to_string());
            next
        });
        let p = PathBuf::from(audio);
        manifest.rows.push(ManifestRow {
            path: if p.is_relative() { base.join(p) } else { p },
            song_id: song.to_string(),
            label: id,
        });
    }
    Ok(manifest)
}

/// Writes rows as `path,song_id,label` with label names; paths are written
/// as given.
pub fn write_manifest<W: Write>(
    w: &mut W,
    rows: &[(String, String, String)],
) -> std::io::Result<()> {
    writeln!(w, "path,song_id,label")?;
    for (p, s, l) in rows {
        writeln!(w, "{p},{s},{l}")?;
    }
    Ok(())
}
