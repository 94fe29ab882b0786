//! Exact nearest-neighbour index over database embeddings.

use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{RelocError, Result};
use crate::pose::Pose;

pub const DEFAULT_DIM: usize = 64;

const INDEX_MAGIC: &[u8; 4] = b"RFIX";
const INDEX_VERSION: u32 = 1;

/// Embeddings and poses are held at `f32` precision, the precision of the
/// index file, so a loaded index answers queries bit-identically.
#[derive(Clone, Debug, PartialEq)]
pub struct IndexEntry {
    pub frame_id: String,
    embedding: Vec<f32>,
    pose_raw: [f32; 7],
    pose: Pose,
}

impl IndexEntry {
    pub fn new(frame_id: impl Into<String>, embedding: &[f64], pose: &Pose) -> Result<Self> {
        let embedding: Vec<f32> = embedding.iter().map(|v| *v as f32).collect();
        let pose_raw = pose.to_array().map(|v| v as f32);
        Self::from_raw(frame_id.into(), embedding, pose_raw)
    }

    fn from_raw(frame_id: String, embedding: Vec<f32>, pose_raw: [f32; 7]) -> Result<Self> {
        if embedding.iter().any(|v| !v.is_finite()) {
            return Err(RelocError::Domain(format!("non-finite embedding for {frame_id}")));
        }
        let pose = Pose::from_array(pose_raw.map(f64::from))?;
        Ok(Self {
            frame_id,
            embedding,
            pose_raw,
            pose,
        })
    }

    pub fn embedding(&self) -> &[f32] {
        &self.embedding
    }

    pub fn embedding_f64(&self) -> Vec<f64> {
        self.embedding.iter().map(|v| f64::from(*v)).collect()
    }

    pub fn pose(&self) -> &Pose {
        &self.pose
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Neighbor<'a> {
    pub entry: &'a IndexEntry,
    pub distance: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RetrievalIndex {
    dim: usize,
    entries: Vec<IndexEntry>,
    ids: HashSet<String>,
}

impl RetrievalIndex {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(RelocError::Domain("index dimension must be positive".into()));
        }
        Ok(Self {
            dim,
            entries: Vec::new(),
            ids: HashSet::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    pub fn insert(&mut self, entry: IndexEntry) -> Result<()> {
        if entry.embedding.len() != self.dim {
            return Err(RelocError::DimensionMismatch {
                expected: self.dim,
                actual: entry.embedding.len(),
            });
        }
        if self.ids.contains(&entry.frame_id) {
            return Err(RelocError::DuplicateId(entry.frame_id));
        }
        self.ids.insert(entry.frame_id.clone());
        self.entries.push(entry);
        Ok(())
    }

    /// The `k` nearest entries by Euclidean distance, ascending, ties broken
    /// by frame id.
    pub fn query_knn(&self, query: &[f64], k: usize) -> Result<Vec<Neighbor<'_>>> {
        if self.entries.is_empty() {
            return Err(RelocError::EmptyIndex);
        }
        if k == 0 {
            return Err(RelocError::Domain("k must be at least 1".into()));
        }
        if query.len() != self.dim {
            return Err(RelocError::DimensionMismatch {
                expected: self.dim,
                actual: query.len(),
            });
        }
        let mut scored: Vec<(f64, &IndexEntry)> = self
            .entries
            .iter()
            .map(|e| (squared_distance(query, &e.embedding), e))
            .collect();
        let order = |a: &(f64, &IndexEntry), b: &(f64, &IndexEntry)| {
            a.0.total_cmp(&b.0).then_with(|| a.1.frame_id.cmp(&b.1.frame_id))
        };
        let k = k.min(scored.len());
        if k < scored.len() {
            scored.select_nth_unstable_by(k - 1, order);
            scored.truncate(k);
        }
        scored.sort_by(order);
        Ok(scored
            .into_iter()
            .map(|(d2, entry)| Neighbor {
                entry,
                distance: d2.sqrt(),
            })
            .collect())
    }

    pub fn nearest(&self, query: &[f64]) -> Result<Neighbor<'_>> {
        Ok(self.query_knn(query, 1)?.remove(0))
    }

    /// Translation (m) and rotation (deg) error of the top-1 neighbour's pose
    /// against the query's ground truth.
    pub fn retrieval_error(&self, query: &[f64], gt: &Pose) -> Result<(f64, f64)> {
        let n = self.nearest(query)?;
        Ok((
            n.entry.pose.translation_error(gt),
            n.entry.pose.rotation_error_degrees(gt),
        ))
    }

    /// ```text
    /// "RFIX" | u32 version | u32 dim | u64 count
    ///        | count × (u32 id_len | id utf-8 | dim × f32 | 7 × f32 pose)
    /// ```
    /// Little-endian throughout; pose is `tx ty tz qw qx qy qz`.
    pub fn write_to<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        out.write_all(INDEX_MAGIC)?;
        out.write_all(&INDEX_VERSION.to_le_bytes())?;
        out.write_all(&(self.dim as u32).to_le_bytes())?;
        out.write_all(&(self.entries.len() as u64).to_le_bytes())?;
        for e in &self.entries {
            out.write_all(&(e.frame_id.len() as u32).to_le_bytes())?;
            out.write_all(e.frame_id.as_bytes())?;
            for v in e.embedding.iter().chain(&e.pose_raw) {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        out.flush()
    }

    pub fn read_from<R: Read>(mut input: R) -> std::io::Result<Self> {
        use std::io::{Error, ErrorKind};
        let bad = |m: String| Error::new(ErrorKind::InvalidData, m);
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic)?;
        if &magic != INDEX_MAGIC {
            return Err(bad("not an index file (bad magic)".into()));
        }
        let version = read_u32(&mut input)?;
        if version != INDEX_VERSION {
            return Err(bad(format!("unsupported index version {version}")));
        }
        let dim = read_u32(&mut input)? as usize;
        let mut count = [0u8; 8];
        input.read_exact(&mut count)?;
        let count = u64::from_le_bytes(count);
        let mut index = Self::new(dim).map_err(|e| bad(e.to_string()))?;
        for _ in 0..count {
            let id_len = read_u32(&mut input)? as usize;
            let mut id = vec![0u8; id_len];
            input.read_exact(&mut id)?;
            let id = String::from_utf8(id).map_err(|e| bad(e.to_string()))?;
            let mut floats = vec![0u8; (dim + 7) * 4];
            input.read_exact(&mut floats)?;
            let values: Vec<f32> = floats
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            let pose_raw: [f32; 7] = values[dim..].try_into().expect("seven pose floats");
            let entry = IndexEntry::from_raw(id, values[..dim].to_vec(), pose_raw)
                .map_err(|e| bad(e.to_string()))?;
            index.insert(entry).map_err(|e| bad(e.to_string()))?;
        }
        Ok(index)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| RelocError::io(path, e))?;
        self.write_to(std::io::BufWriter::new(file))
            .map_err(|e| RelocError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| RelocError::io(path, e))?;
        Self::read_from(std::io::BufReader::new(file)).map_err(|e| match e.kind() {
            std::io::ErrorKind::InvalidData | std::io::ErrorKind::UnexpectedEof => {
                RelocError::format(path, e.to_string())
            }
            _ => RelocError::io(path, e),
        })
    }
}

fn read_u32<R: Read>(input: &mut R) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    input.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn squared_distance(query: &[f64], embedding: &[f32]) -> f64 {
    query
        .iter()
        .zip(embedding)
        .map(|(q, e)| {
            let d = q - f64::from(*e);
            d * d
        })
        .sum()
}
