//! Euclidean distance matrices of closed contours and the algebra of their
//! re-indexings.
//!
//! A closed outline of `N` points has `2N` equally valid listings (any origin,
//! either direction of travel). Re-listing the points permutes the distance
//! matrix entries as
//!
//! ```text
//! d'[i][j] = d[(i*o + k) mod N][(j*o + k) mod N]
//! ```
//!
//! for origin `k` and direction `o` in `{-1, +1}`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::contour::Point;
use crate::error::{Error, Result};

/// Direction of travel along the outline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Direction {
    Forward,
    Reverse,
}

impl Direction {
    pub fn sign(self) -> i64 {
        match self {
            Direction::Forward => 1,
            Direction::Reverse => -1,
        }
    }

    pub fn from_sign(o: i64) -> Result<Self> {
        match o {
            1 => Ok(Direction::Forward),
            -1 => Ok(Direction::Reverse),
            _ => Err(Error::Config(format!("direction must be +1 or -1, got {o}"))),
        }
    }
}

/// Choice of origin and direction selecting one member of the equivalence
/// class of a distance matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Reindexing {
    pub origin: usize,
    pub direction: Direction,
}

impl Reindexing {
    pub const IDENTITY: Reindexing = Reindexing {
        origin: 0,
        direction: Direction::Forward,
    };

    pub fn new(origin: usize, direction: Direction) -> Self {
        Self { origin, direction }
    }

    /// All `2N` reindexings in the fixed enumeration order: forward
    /// direction first, then reverse, each with origin ascending.
    pub fn enumerate(n: usize) -> impl Iterator<Item = Reindexing> {
        [Direction::Forward, Direction::Reverse]
            .into_iter()
            .flat_map(move |d| (0..n).map(move |k| Reindexing::new(k, d)))
    }

    /// Source index for position `i`: `(i*o + k) mod n`.
    #[inline]
    pub fn source(&self, i: usize, n: usize) -> usize {
        (i as i64 * self.direction.sign() + self.origin as i64).rem_euclid(n as i64) as usize
    }

    /// Lookup table of [`Reindexing::source`] for all positions.
    pub fn index_map(&self, n: usize) -> Vec<usize> {
        (0..n).map(|i| self.source(i, n)).collect()
    }

    fn check(&self, n: usize) -> Result<()> {
        if self.origin >= n {
            return Err(Error::Config(format!(
                "origin {} out of range for N = {n}",
                self.origin
            )));
        }
        Ok(())
    }
}

/// Symmetric, zero-diagonal, non-negative square matrix stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    entries: Vec<f64>,
    frobenius_norm: Option<f64>,
}

/// Unconstrained square matrix, e.g. a decoder output before sanitization.
#[derive(Debug, Clone, PartialEq)]
pub struct RawMatrix {
    n: usize,
    entries: Vec<f64>,
}

impl RawMatrix {
    pub fn new(n: usize, entries: Vec<f64>) -> Result<Self> {
        if entries.len() != n * n {
            return Err(Error::Shape(format!(
                "expected {} entries for N = {n}, got {}",
                n * n,
                entries.len()
            )));
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::Precondition("raw matrix has non-finite entries".into()));
        }
        Ok(Self { n, entries })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n + j]
    }

    pub fn mirror_both(&self) -> RawMatrix {
        RawMatrix {
            n: self.n,
            entries: mirror_entries(&self.entries),
        }
    }
}

impl From<DistanceMatrix> for RawMatrix {
    fn from(d: DistanceMatrix) -> Self {
        RawMatrix {
            n: d.n,
            entries: d.entries,
        }
    }
}

impl DistanceMatrix {
    /// Validates the distance-matrix invariants.
    pub fn new(n: usize, entries: Vec<f64>) -> Result<Self> {
        if entries.len() != n * n {
            return Err(Error::Shape(format!(
                "expected {} entries for N = {n}, got {}",
                n * n,
                entries.len()
            )));
        }
        for i in 0..n {
            if entries[i * n + i] != 0.0 {
                return Err(Error::Precondition(format!("nonzero diagonal at {i}")));
            }
            for j in 0..n {
                let v = entries[i * n + j];
                if !(v >= 0.0) || !v.is_finite() {
                    return Err(Error::Precondition(format!(
                        "entry ({i},{j}) = {v} is not a finite non-negative distance"
                    )));
                }
                if v != entries[j * n + i] {
                    return Err(Error::Precondition(format!("asymmetric at ({i},{j})")));
                }
            }
        }
        Ok(Self {
            n,
            entries,
            frobenius_norm: None,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n + j]
    }

    /// Norm of the raw matrix recorded by [`normalize`], if normalized.
    pub fn frobenius_norm(&self) -> Option<f64> {
        self.frobenius_norm
    }

    pub fn with_frobenius_norm(mut self, norm: Option<f64>) -> Self {
        self.frobenius_norm = norm;
        self
    }

    /// Frobenius norm of the current entries.
    pub fn norm(&self) -> f64 {
        frobenius(&self.entries)
    }

    pub fn to_f32(&self) -> Vec<f32> {
        self.entries.iter().map(|&v| v as f32).collect()
    }

    pub fn mirror_both(&self) -> DistanceMatrix {
        mirror_both(self)
    }
}

fn frobenius(entries: &[f64]) -> f64 {
    entries.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Pairwise Euclidean distances of a point list (raw, unnormalized).
pub fn edm(points: impl AsRef<[Point]>) -> DistanceMatrix {
    let points = points.as_ref();
    let n = points.len();
    let mut entries = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let dx = points[i][0] - points[j][0];
                let dy = points[i][1] - points[j][1];
                entries[i * n + j] = (dx * dx + dy * dy).sqrt();
            }
        }
    }
    DistanceMatrix {
        n,
        entries,
        frobenius_norm: None,
    }
}

/// Divides by the Frobenius norm and records the divisor.
pub fn normalize(d: &DistanceMatrix) -> Result<DistanceMatrix> {
    let norm = frobenius(&d.entries);
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(Error::DegenerateShape(
            "distance matrix has zero Frobenius norm".into(),
        ));
    }
    Ok(DistanceMatrix {
        n: d.n,
        entries: d.entries.iter().map(|v| v / norm).collect(),
        frobenius_norm: Some(norm),
    })
}

pub(crate) fn reindex_entries<T: Copy>(entries: &[T], n: usize, r: Reindexing) -> Vec<T> {
    let map = r.index_map(n);
    let mut out = Vec::with_capacity(n * n);
    for &si in &map {
        let row = &entries[si * n..(si + 1) * n];
        out.extend(map.iter().map(|&sj| row[sj]));
    }
    out
}

/// Applies a reindexing; a pure permutation of entries.
pub fn reindex(d: &DistanceMatrix, r: Reindexing) -> Result<DistanceMatrix> {
    r.check(d.n)?;
    Ok(DistanceMatrix {
        n: d.n,
        entries: reindex_entries(&d.entries, d.n, r),
        frobenius_norm: d.frobenius_norm,
    })
}

/// All `2N` equivalent matrices, in [`Reindexing::enumerate`] order.
pub fn equivalence_class(d: &DistanceMatrix) -> Vec<DistanceMatrix> {
    Reindexing::enumerate(d.n)
        .map(|r| DistanceMatrix {
            n: d.n,
            entries: reindex_entries(&d.entries, d.n, r),
            frobenius_norm: d.frobenius_norm,
        })
        .collect()
}

pub(crate) fn mirror_entries<T: Copy>(entries: &[T]) -> Vec<T> {
    let mut out = entries.to_vec();
    out.reverse();
    out
}

/// Maps entry `(i, j)` to `(N-1-i, N-1-j)`: the matrix flipped horizontally
/// and vertically.
pub fn mirror_both(d: &DistanceMatrix) -> DistanceMatrix {
    DistanceMatrix {
        n: d.n,
        entries: mirror_entries(&d.entries),
        frobenius_norm: d.frobenius_norm,
    }
}

/// Symmetrizes, zeroes the diagonal and clamps negatives to zero.
pub fn sanitize(m: &RawMatrix) -> DistanceMatrix {
    let n = m.n;
    let mut entries = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let v = 0.5 * (m.entries[i * n + j] + m.entries[j * n + i]);
            entries[i * n + j] = v.max(0.0);
        }
    }
    DistanceMatrix {
        n,
        entries,
        frobenius_norm: None,
    }
}

const SEDM_MAGIC: &[u8; 4] = b"SEDM";
const SEDM_VERSION: u32 = 1;
const SEDM_ID_BYTES: usize = 64;

/// One record of a matrix container file.
#[derive(Debug, Clone, PartialEq)]
pub struct SedmRecord {
    pub object_id: String,
    pub frobenius_norm: f32,
    pub entries: Vec<f32>,
}

impl SedmRecord {
    /// Packs a normalized matrix (its stored norm is required).
    pub fn from_normalized(object_id: &str, d: &DistanceMatrix) -> Result<Self> {
        let norm = d.frobenius_norm.ok_or_else(|| {
            Error::Precondition(format!("matrix for {object_id} is not normalized"))
        })?;
        Ok(Self {
            object_id: object_id.to_string(),
            frobenius_norm: norm as f32,
            entries: d.to_f32(),
        })
    }

    /// Widens back to a normalized `DistanceMatrix`.
    pub fn to_matrix(&self, n: usize) -> Result<DistanceMatrix> {
        let entries: Vec<f64> = self.entries.iter().map(|&v| v as f64).collect();
        Ok(DistanceMatrix::new(n, entries)?.with_frobenius_norm(Some(self.frobenius_norm as f64)))
    }
}

/// Matrix container: `SEDM`, version, `N`, count, then per record a 64-byte
/// zero-padded id, the f32 Frobenius norm and `N*N` f32 entries, all
/// little-endian.
#[derive(Debug, Clone, PartialEq)]
pub struct SedmFile {
    pub n: usize,
    pub records: Vec<SedmRecord>,
}

impl SedmFile {
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(SEDM_MAGIC)?;
        w.write_u32::<LittleEndian>(SEDM_VERSION)?;
        w.write_u32::<LittleEndian>(self.n as u32)?;
        w.write_u32::<LittleEndian>(self.records.len() as u32)?;
        for rec in &self.records {
            let id = rec.object_id.as_bytes();
            if id.len() > SEDM_ID_BYTES {
                return Err(Error::Format(format!(
                    "object id {:?} longer than {SEDM_ID_BYTES} bytes",
                    rec.object_id
                )));
            }
            if rec.entries.len() != self.n * self.n {
                return Err(Error::Shape(format!(
                    "record {} has {} entries, expected {}",
                    rec.object_id,
                    rec.entries.len(),
                    self.n * self.n
                )));
            }
            let mut padded = [0u8; SEDM_ID_BYTES];
            padded[..id.len()].copy_from_slice(id);
            w.write_all(&padded)?;
            w.write_f32::<LittleEndian>(rec.frobenius_norm)?;
            for &v in &rec.entries {
                w.write_f32::<LittleEndian>(v)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != SEDM_MAGIC {
            return Err(Error::Format("not a SEDM container (bad magic)".into()));
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != SEDM_VERSION {
            return Err(Error::Format(format!("unsupported SEDM version {version}")));
        }
        let n = r.read_u32::<LittleEndian>()? as usize;
        let count = r.read_u32::<LittleEndian>()? as usize;
        let mut records = Vec::with_capacity(count);
        for _ in 0..count {
            let mut id = [0u8; SEDM_ID_BYTES];
            r.read_exact(&mut id)?;
            let end = id.iter().position(|&b| b == 0).unwrap_or(SEDM_ID_BYTES);
            let object_id = String::from_utf8(id[..end].to_vec())
                .map_err(|e| Error::Format(format!("object id is not UTF-8: {e}")))?;
            let frobenius_norm = r.read_f32::<LittleEndian>()?;
            let mut entries = vec![0f32; n * n];
            r.read_f32_into::<LittleEndian>(&mut entries)?;
            records.push(SedmRecord {
                object_id,
                frobenius_norm,
                entries,
            });
        }
        Ok(Self { n, records })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}
