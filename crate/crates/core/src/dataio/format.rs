//! Binary embedding file format.
//!
//! Little-endian layout:
//! - bytes 0-3: magic `MVEB`
//! - bytes 4-7: format version u32 = 1
//! - bytes 8-15: count u64
//! - bytes 16-19: dim u32
//! - bytes 20-23: reserved u32 = 0
//! - count x dim IEEE-754 binary32 values, row-major
//!
//! Row ids live in a sidecar text file at `<path>.ids`, one
//! `video_id<TAB>segment_index` line per row, in row order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use thiserror::Error;

use super::{EmbeddingTable, SegmentId, ValidationError};

pub const EMBEDDING_MAGIC: [u8; 4] = *b"MVEB";
pub const EMBEDDING_VERSION: u32 = 1;

const HEADER_LEN: u64 = 24;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic bytes {found:02x?}, expected 'MVEB'")]
    BadMagic { found: [u8; 4] },
    #[error("unsupported format version {found}, supported {supported}")]
    UnsupportedVersion { found: u32, supported: u32 },
    #[error("file truncated: expected {expected} bytes after the header, got {got}")]
    Truncated { expected: u64, got: u64 },
    #[error("{extra} trailing bytes after the payload")]
    TrailingBytes { extra: u64 },
    #[error("count {count} x dim {dim} overflows the addressable payload size")]
    SizeOverflow { count: u64, dim: u32 },
    #[error("missing ids sidecar {0}")]
    MissingSidecar(PathBuf),
    #[error("ids sidecar has {got} lines, embedding file has {expected} rows")]
    SidecarCountMismatch { expected: u64, got: u64 },
    #[error("ids sidecar line {line} is malformed: {text:?}")]
    SidecarParse { line: usize, text: String },
    #[error(transparent)]
    Validation(#[from] ValidationError),
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut os = path.as_os_str().to_owned();
    os.push(".ids");
    PathBuf::from(os)
}

/// Writes the table to `path` and its ids to `<path>.ids`.
///
/// Re-validates the table invariants first; round-trips bit-exactly through
/// [`read_embeddings`].
pub fn write_embeddings(table: &EmbeddingTable, path: &Path) -> Result<(), FormatError> {
    // Re-check invariants so a table mutated through unsafe means cannot
    // produce an invalid file.
    EmbeddingTable::new(table.ids().to_vec(), table.data().clone())?;

    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&EMBEDDING_MAGIC)?;
    w.write_all(&EMBEDDING_VERSION.to_le_bytes())?;
    w.write_all(&(table.count() as u64).to_le_bytes())?;
    w.write_all(&(table.dim() as u32).to_le_bytes())?;
    w.write_all(&0u32.to_le_bytes())?;
    for &v in table.data().iter() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;

    let mut ids = BufWriter::new(File::create(sidecar_path(path))?);
    for id in table.ids() {
        writeln!(ids, "{}\t{}", id.video_id, id.segment_index)?;
    }
    ids.flush()?;
    Ok(())
}

/// Reads a table written by [`write_embeddings`], validating all invariants.
pub fn read_embeddings(path: &Path) -> Result<EmbeddingTable, FormatError> {
    let file = File::open(path)?;
    let file_len = file.metadata()?.len();
    let mut r = BufReader::new(file);

    let mut header = [0u8; HEADER_LEN as usize];
    if file_len < HEADER_LEN {
        return Err(FormatError::Truncated {
            expected: HEADER_LEN,
            got: file_len,
        });
    }
    r.read_exact(&mut header)?;

    let magic: [u8; 4] = header[0..4].try_into().unwrap();
    if magic != EMBEDDING_MAGIC {
        return Err(FormatError::BadMagic { found: magic });
    }
    let version = u32::from_le_bytes(header[4..8].try_into().unwrap());
    if version != EMBEDDING_VERSION {
        return Err(FormatError::UnsupportedVersion {
            found: version,
            supported: EMBEDDING_VERSION,
        });
    }
    let count = u64::from_le_bytes(header[8..16].try_into().unwrap());
    let dim = u32::from_le_bytes(header[16..20].try_into().unwrap());

    let n_values = count
        .checked_mul(u64::from(dim))
        .ok_or(FormatError::SizeOverflow { count, dim })?;
    let payload_len = n_values
        .checked_mul(4)
        .filter(|&len| len <= i64::MAX as u64)
        .ok_or(FormatError::SizeOverflow { count, dim })?;

    let body_len = file_len - HEADER_LEN;
    if body_len < payload_len {
        return Err(FormatError::Truncated {
            expected: payload_len,
            got: body_len,
        });
    }
    if body_len > payload_len {
        return Err(FormatError::TrailingBytes {
            extra: body_len - payload_len,
        });
    }

    let mut raw = vec![0u8; payload_len as usize];
    r.read_exact(&mut raw)?;
    let values: Vec<f32> = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let data = Array2::from_shape_vec((count as usize, dim as usize), values)
        .expect("shape matches payload length");

    let sidecar = sidecar_path(path);
    if !sidecar.exists() {
        return Err(FormatError::MissingSidecar(sidecar));
    }
    let mut ids = Vec::with_capacity(count as usize);
    let text = std::fs::read_to_string(&sidecar)?;
    for (i, line) in text.lines().enumerate() {
        let (vid, seg) = line
            .split_once('\t')
            .ok_or_else(|| FormatError::SidecarParse {
                line: i + 1,
                text: line.to_string(),
            })?;
        let segment_index: u32 = seg.parse().map_err(|_| FormatError::SidecarParse {
            line: i + 1,
            text: line.to_string(),
        })?;
        ids.push(SegmentId::new(vid, segment_index));
    }
    if ids.len() as u64 != count {
        return Err(FormatError::SidecarCountMismatch {
            expected: count,
            got: ids.len() as u64,
        });
    }

    Ok(EmbeddingTable::new(ids, data)?)
}
