//! Dataset types, on-disk formats, assembly, and the synthetic generator.
//!
//! Embedding payloads are stored in a little-endian binary format (see
//! [`format`]); segment metadata travels in a JSON-lines manifest. After
//! [`assemble_dataset`], audio row `i`, video row `i`, and manifest entry `i`
//! all refer to the same `(video_id, segment_index)`.

mod format;
mod synth;

pub use format::{read_embeddings, write_embeddings, FormatError, EMBEDDING_MAGIC, EMBEDDING_VERSION};
pub use synth::{generate_synthetic, SynthSpec};

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ValidationError {
    #[error("row {row} contains a non-finite value")]
    NonFiniteRow { row: usize },
    #[error("duplicate id {id} at row {row}")]
    DuplicateId { row: usize, id: SegmentId },
    #[error("table has {rows} rows but {ids} ids")]
    IdCountMismatch { rows: usize, ids: usize },
    #[error("embedding dim must be positive")]
    ZeroDim,
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Validation(#[from] ValidationError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("manifest line {line}: {source}")]
    ManifestParse {
        line: usize,
        source: serde_json::Error,
    },
    #[error("video {video_id} appears in more than one split")]
    SplitInconsistent { video_id: String },
    #[error("ids missing from {side}: {}", format_ids(.ids))]
    UnmatchedIds { side: &'static str, ids: Vec<SegmentId> },
    #[error("manifest is missing ids present in the tables: {}", format_ids(.ids))]
    MissingFromManifest { ids: Vec<SegmentId> },
    #[error("only {available} distinct tags in the train split, need {requested}")]
    NotEnoughTags { available: usize, requested: usize },
    #[error("no tag annotations in the train split")]
    NoTags,
    #[error("invalid synthetic spec: {0}")]
    BadSynthSpec(String),
}

fn format_ids(ids: &[SegmentId]) -> String {
    let head: Vec<String> = ids.iter().take(8).map(|id| id.to_string()).collect();
    if ids.len() > 8 {
        format!("{} ... ({} total)", head.join(", "), ids.len())
    } else {
        head.join(", ")
    }
}

/// One `(video_id, segment_index)` pair.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SegmentId {
    pub video_id: String,
    pub segment_index: u32,
}

impl SegmentId {
    pub fn new(video_id: impl Into<String>, segment_index: u32) -> Self {
        Self {
            video_id: video_id.into(),
            segment_index,
        }
    }
}

impl fmt::Display for SegmentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", self.video_id, self.segment_index)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Split::Train => write!(f, "train"),
            Split::Val => write!(f, "val"),
            Split::Test => write!(f, "test"),
        }
    }
}

/// A `count x dim` block of 32-bit embedding rows with their segment ids.
///
/// Invariants (enforced at construction): ids are unique, every row is
/// finite, and the id list length equals the row count.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    ids: Vec<SegmentId>,
    data: Array2<f32>,
}

impl EmbeddingTable {
    pub fn new(ids: Vec<SegmentId>, data: Array2<f32>) -> Result<Self, ValidationError> {
        if data.ncols() == 0 {
            return Err(ValidationError::ZeroDim);
        }
        if ids.len() != data.nrows() {
            return Err(ValidationError::IdCountMismatch {
                rows: data.nrows(),
                ids: ids.len(),
            });
        }
        for (row, r) in data.rows().into_iter().enumerate() {
            if r.iter().any(|v| !v.is_finite()) {
                return Err(ValidationError::NonFiniteRow { row });
            }
        }
        let mut seen = HashMap::with_capacity(ids.len());
        for (row, id) in ids.iter().enumerate() {
            if seen.insert(id.clone(), row).is_some() {
                return Err(ValidationError::DuplicateId {
                    row,
                    id: id.clone(),
                });
            }
        }
        Ok(Self { ids, data })
    }

    pub fn count(&self) -> usize {
        self.data.nrows()
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    pub fn ids(&self) -> &[SegmentId] {
        &self.ids
    }

    pub fn data(&self) -> &Array2<f32> {
        &self.data
    }

    /// Row `i` widened to f64 (all in-memory arithmetic is 64-bit).
    pub fn row_f64(&self, i: usize) -> Array1<f64> {
        self.data.row(i).mapv(f64::from)
    }

    /// The whole table widened to f64.
    pub fn to_f64(&self) -> Array2<f64> {
        self.data.mapv(f64::from)
    }

    /// Selected rows widened to f64, in the order given.
    pub fn rows_f64(&self, rows: &[usize]) -> Array2<f64> {
        let mut out = Array2::zeros((rows.len(), self.dim()));
        for (i, &r) in rows.iter().enumerate() {
            for (j, v) in self.data.row(r).iter().enumerate() {
                out[[i, j]] = f64::from(*v);
            }
        }
        out
    }
}

/// Per-segment metadata entry. One JSON object per line on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub video_id: String,
    pub segment_index: u32,
    pub split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub genre: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tags: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration_s: Option<f64>,
}

impl ManifestEntry {
    pub fn id(&self) -> SegmentId {
        SegmentId::new(self.video_id.clone(), self.segment_index)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    /// Errors if any video's segments disagree on split.
    pub fn validate_splits(&self) -> Result<(), DataError> {
        let mut split_of: HashMap<&str, Split> = HashMap::new();
        for e in &self.entries {
            match split_of.insert(&e.video_id, e.split) {
                Some(prev) if prev != e.split => {
                    return Err(DataError::SplitInconsistent {
                        video_id: e.video_id.clone(),
                    })
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn read_jsonl(path: &Path) -> Result<Self, DataError> {
        let reader = BufReader::new(File::open(path)?);
        let mut entries = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: ManifestEntry = serde_json::from_str(&line)
                .map_err(|source| DataError::ManifestParse { line: i + 1, source })?;
            entries.push(entry);
        }
        let manifest = Self { entries };
        manifest.validate_splits()?;
        Ok(manifest)
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<(), DataError> {
        let mut w = BufWriter::new(File::create(path)?);
        for e in &self.entries {
            let line = serde_json::to_string(e).expect("manifest entry serializes");
            writeln!(w, "{line}")?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Audio and video tables row-aligned with the manifest.
#[derive(Debug, Clone)]
pub struct PairedDataset {
    pub audio: EmbeddingTable,
    pub video: EmbeddingTable,
    pub manifest: Manifest,
}

impl PairedDataset {
    pub fn len(&self) -> usize {
        self.manifest.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.manifest.entries.is_empty()
    }

    /// Row indices belonging to `split`, in manifest order.
    pub fn rows_for_split(&self, split: Split) -> Vec<usize> {
        self.manifest
            .entries
            .iter()
            .enumerate()
            .filter(|(_, e)| e.split == split)
            .map(|(i, _)| i)
            .collect()
    }

    /// Number of distinct videos among the given rows.
    pub fn distinct_videos(&self, rows: &[usize]) -> usize {
        rows.iter()
            .map(|&r| self.manifest.entries[r].video_id.as_str())
            .collect::<BTreeSet<_>>()
            .len()
    }

    /// Dense group index per row (same video -> same group), over `rows`.
    pub fn video_groups(&self, rows: &[usize]) -> Vec<usize> {
        let mut next = 0usize;
        let mut group_of: HashMap<&str, usize> = HashMap::new();
        rows.iter()
            .map(|&r| {
                let vid = self.manifest.entries[r].video_id.as_str();
                *group_of.entry(vid).or_insert_with(|| {
                    let g = next;
                    next += 1;
                    g
                })
            })
            .collect()
    }
}

/// Pairs the three inputs by exact `(video_id, segment_index)` match and
/// reorders both tables into manifest order.
pub fn assemble_dataset(
    audio_path: &Path,
    video_path: &Path,
    manifest_path: &Path,
) -> Result<PairedDataset, DataError> {
    let audio = read_embeddings(audio_path)?;
    let video = read_embeddings(video_path)?;
    let manifest = Manifest::read_jsonl(manifest_path)?;
    assemble_from_parts(audio, video, manifest)
}

/// Same pairing logic over already-loaded parts.
pub fn assemble_from_parts(
    audio: EmbeddingTable,
    video: EmbeddingTable,
    manifest: Manifest,
) -> Result<PairedDataset, DataError> {
    manifest.validate_splits()?;

    let audio_rows: HashMap<&SegmentId, usize> =
        audio.ids().iter().enumerate().map(|(i, id)| (id, i)).collect();
    let video_rows: HashMap<&SegmentId, usize> =
        video.ids().iter().enumerate().map(|(i, id)| (id, i)).collect();

    let mut missing_audio = Vec::new();
    let mut missing_video = Vec::new();
    for e in &manifest.entries {
        let id = e.id();
        if !audio_rows.contains_key(&id) {
            missing_audio.push(id.clone());
        }
        if !video_rows.contains_key(&id) {
            missing_video.push(id);
        }
    }
    if !missing_audio.is_empty() {
        return Err(DataError::UnmatchedIds {
            side: "audio table",
            ids: missing_audio,
        });
    }
    if !missing_video.is_empty() {
        return Err(DataError::UnmatchedIds {
            side: "video table",
            ids: missing_video,
        });
    }

    let manifest_ids: BTreeSet<SegmentId> =
        manifest.entries.iter().map(ManifestEntry::id).collect();
    let mut orphans: Vec<SegmentId> = audio
        .ids()
        .iter()
        .chain(video.ids())
        .filter(|id| !manifest_ids.contains(id))
        .cloned()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if !orphans.is_empty() {
        orphans.sort();
        return Err(DataError::MissingFromManifest { ids: orphans });
    }

    let reorder = |table: &EmbeddingTable, rows: &HashMap<&SegmentId, usize>| {
        let mut data = Array2::zeros((manifest.entries.len(), table.dim()));
        let mut ids = Vec::with_capacity(manifest.entries.len());
        for (i, e) in manifest.entries.iter().enumerate() {
            let id = e.id();
            let src = rows[&id];
            data.row_mut(i).assign(&table.data().row(src));
            ids.push(id);
        }
        EmbeddingTable::new(ids, data)
    };

    let audio = reorder(&audio, &audio_rows)?;
    let video = reorder(&video, &video_rows)?;
    Ok(PairedDataset {
        audio,
        video,
        manifest,
    })
}

/// The `k` tags with the highest train-split video frequency.
///
/// Counting is per video (a tag on several segments of one video counts
/// once); ties break lexicographically.
pub fn select_top_tags(manifest: &Manifest, k: usize) -> Result<Vec<String>, DataError> {
    let mut tags_of_video: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for e in manifest.entries.iter().filter(|e| e.split == Split::Train) {
        let set = tags_of_video.entry(&e.video_id).or_default();
        for t in &e.tags {
            set.insert(t);
        }
    }
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for tags in tags_of_video.values() {
        for t in tags {
            *counts.entry(t).or_insert(0) += 1;
        }
    }
    if counts.is_empty() {
        return Err(DataError::NoTags);
    }
    if counts.len() < k {
        return Err(DataError::NotEnoughTags {
            available: counts.len(),
            requested: k,
        });
    }
    let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    Ok(ranked.into_iter().take(k).map(|(t, _)| t.to_string()).collect())
}
