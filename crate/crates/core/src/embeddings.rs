//! Concept vectors and the derived per-group vectors.
//!
//! A table is either loaded from a text file (one row per concept) or
//! produced by [`pseudo_embeddings`], a seeded stand-in for a pretrained
//! encoder that keeps same-group concepts closer than cross-group ones.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::kg::{read_file, write_file, ConceptIdx, GroupIdx, KnowledgeGraph};

/// Weight of the shared group direction relative to the unit-norm
/// per-concept component in [`pseudo_embeddings`].
pub const PSEUDO_GROUP_BIAS: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    data: Vec<f64>,
}

impl EmbeddingTable {
    /// Builds a table from one row per graph concept (in index order),
    /// normalizing every row to unit length.
    pub fn from_rows(kg: &KnowledgeGraph, rows: Vec<Vec<f64>>) -> Result<Self> {
        if rows.len() != kg.concept_count() {
            return Err(Error::Shape(format!(
                "{} rows for {} concepts",
                rows.len(),
                kg.concept_count()
            )));
        }
        let dim = rows.first().map_or(0, Vec::len);
        if dim == 0 {
            return Err(Error::Empty("embedding dimension"));
        }
        let mut data = Vec::with_capacity(dim * rows.len());
        for (c, mut row) in kg.concepts().zip(rows) {
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: row.len(),
                });
            }
            normalize_in_place(&mut row)
                .ok_or_else(|| Error::ZeroVector(kg.id(c).to_string()))?;
            data.extend_from_slice(&row);
        }
        Ok(Self { dim, data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn vector(&self, c: ConceptIdx) -> &[f64] {
        let start = c.index() * self.dim;
        &self.data[start..start + self.dim]
    }

    pub fn write(&self, kg: &KnowledgeGraph, path: &Path) -> Result<()> {
        let mut out = format!("dim={}\n", self.dim);
        for c in kg.concepts() {
            out.push_str(kg.id(c).as_str());
            out.push('\t');
            for (i, x) in self.vector(c).iter().enumerate() {
                if i > 0 {
                    out.push(' ');
                }
                write!(out, "{x}").expect("writing to a String cannot fail");
            }
            out.push('\n');
        }
        write_file(path, &out)
    }
}

fn normalize_in_place(v: &mut [f64]) -> Option<()> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return None;
    }
    v.iter_mut().for_each(|x| *x /= norm);
    Some(())
}

/// Loads an embedding file: `dim=<d>` then `concept_id\tf1 ... fd` rows.
/// Rows for concepts absent from the graph are ignored.
pub fn load_embeddings(path: &Path, kg: &KnowledgeGraph) -> Result<EmbeddingTable> {
    let text = read_file(path)?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::at(path, 1, Error::Malformed("missing `dim=` header".into())))?;
    let dim: usize = header
        .trim()
        .strip_prefix("dim=")
        .and_then(|d| d.parse().ok())
        .filter(|&d| d > 0)
        .ok_or_else(|| Error::at(path, 1, Error::Malformed(format!("bad header `{header}`"))))?;

    let mut rows: Vec<Option<Vec<f64>>> = vec![None; kg.concept_count()];
    for (i, line) in lines.enumerate() {
        let n = i + 2;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let (id, values) = line
            .split_once('\t')
            .ok_or_else(|| Error::at(path, n, Error::Malformed("expected `id<TAB>values`".into())))?;
        let Ok(c) = kg.concept(id) else { continue };
        let row = values
            .split_whitespace()
            .map(|v| match v.parse::<f64>() {
                Ok(x) if x.is_finite() => Ok(x),
                _ => Err(Error::NonFinite(v.to_string())),
            })
            .collect::<Result<Vec<f64>>>()
            .map_err(|e| Error::at(path, n, e))?;
        if row.len() != dim {
            return Err(Error::at(
                path,
                n,
                Error::DimensionMismatch {
                    expected: dim,
                    found: row.len(),
                },
            ));
        }
        rows[c.index()] = Some(row);
    }

    let rows = kg
        .concepts()
        .map(|c| rows[c.index()].take().ok_or_else(|| Error::MissingEmbedding(kg.id(c).to_string())))
        .collect::<Result<Vec<_>>>()?;
    EmbeddingTable::from_rows(kg, rows)
}

fn keyed_rng(parts: &[&[u8]]) -> ChaCha8Rng {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    ChaCha8Rng::from_seed(h.finalize().into())
}

fn unit_noise(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    loop {
        let mut v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        if normalize_in_place(&mut v).is_some() {
            return v;
        }
    }
}

/// Deterministic stand-in for encoder output. Each concept vector is a
/// hashed unit vector keyed by (seed, concept, group) plus a hashed group
/// direction scaled by [`PSEUDO_GROUP_BIAS`], renormalized.
pub fn pseudo_embeddings(kg: &KnowledgeGraph, d: usize, seed: u64) -> Result<EmbeddingTable> {
    if d < 2 {
        return Err(Error::Config(format!("embedding dimension must be at least 2, got {d}")));
    }
    let seed_bytes = seed.to_le_bytes();
    let group_dirs: Vec<Vec<f64>> = kg
        .groups()
        .map(|g| {
            let mut rng = keyed_rng(&[b"group", &seed_bytes, kg.group_id(g).as_str().as_bytes()]);
            unit_noise(&mut rng, d)
        })
        .collect();
    let rows = kg
        .concepts()
        .map(|c| {
            let g = kg.group_of_idx(c);
            let mut rng = keyed_rng(&[
                b"concept",
                &seed_bytes,
                kg.id(c).as_str().as_bytes(),
                kg.group_id(g).as_str().as_bytes(),
            ]);
            let mut v = unit_noise(&mut rng, d);
            for (x, b) in v.iter_mut().zip(&group_dirs[g.index()]) {
                *x += PSEUDO_GROUP_BIAS * b;
            }
            v
        })
        .collect();
    EmbeddingTable::from_rows(kg, rows)
}

/// Arithmetic mean of the concept vectors, not renormalized.
pub fn avg_embedding<I>(table: &EmbeddingTable, concepts: I) -> Result<Vec<f64>>
where
    I: IntoIterator<Item = ConceptIdx>,
{
    let mut sum = vec![0.0; table.dim()];
    let mut n = 0usize;
    for c in concepts {
        for (s, x) in sum.iter_mut().zip(table.vector(c)) {
            *s += x;
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::Empty("concept set"));
    }
    let inv = n as f64;
    sum.iter_mut().for_each(|s| *s /= inv);
    Ok(sum)
}

/// Cosine similarity, clamped to [-1, 1]. Zero-norm input yields 0.
pub fn cosine(u: &[f64], v: &[f64]) -> f64 {
    debug_assert_eq!(u.len(), v.len());
    let mut dot = 0.0;
    let mut nu = 0.0;
    let mut nv = 0.0;
    for (a, b) in u.iter().zip(v) {
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == 0.0 || nv == 0.0 {
        return 0.0;
    }
    (dot / (nu.sqrt() * nv.sqrt())).clamp(-1.0, 1.0)
}

/// `[mean ‖ component-wise max]` of the group's member vectors, length 2d.
pub fn group_vector(kg: &KnowledgeGraph, table: &EmbeddingTable, g: GroupIdx) -> Result<Vec<f64>> {
    let members = kg.members(g);
    if members.is_empty() {
        return Err(Error::Empty("semantic group"));
    }
    let d = table.dim();
    let mut out = avg_embedding(table, members.iter().copied())?;
    out.resize(2 * d, f64::NEG_INFINITY);
    for &c in members {
        for (m, x) in out[d..].iter_mut().zip(table.vector(c)) {
            *m = m.max(*x);
        }
    }
    Ok(out)
}

/// Group vectors for every group, precomputed once per (graph, table).
#[derive(Debug, Clone)]
pub struct GroupVectors {
    width: usize,
    data: Vec<f64>,
}

impl GroupVectors {
    pub fn build(kg: &KnowledgeGraph, table: &EmbeddingTable) -> Result<Self> {
        let width = 2 * table.dim();
        let mut data = Vec::with_capacity(width * kg.group_count());
        for g in kg.groups() {
            data.extend(group_vector(kg, table, g)?);
        }
        Ok(Self { width, data })
    }

    /// Builds directly from rows; used by fixtures with hand-picked vectors.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let width = rows.first().map_or(0, Vec::len);
        if width == 0 || !width.is_multiple_of(2) || rows.iter().any(|r| r.len() != width) {
            return Err(Error::Shape("group vectors must share one even width".into()));
        }
        Ok(Self {
            width,
            data: rows.concat(),
        })
    }

    /// Length of each group vector (2d).
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.width
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, g: GroupIdx) -> &[f64] {
        let start = g.index() * self.width;
        &self.data[start..start + self.width]
    }
}
