//! Precomputed ad-embedding index.
//!
//! Ads are embedded once, offline; scoring a candidate list then costs one
//! query embedding plus a dot product per candidate — ad text is never
//! touched on the scoring path. Rows are stored as float32 with per-row
//! norms; dot products accumulate in float64, keeping agreement with the
//! direct forward pass within 1e-6.
//!
//! File format: magic `CMAX`, version u32, L u32, rowCount u64, fingerprint
//! (32 bytes), length-prefixed UTF-8 id table, row-major float32 embeddings,
//! float32 norms. All integers little-endian.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::clsm::ClsmModel;
use crate::error::{CmaError, Result};
use crate::synth::Document;

const MAGIC: &[u8; 4] = b"CMAX";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingIndex {
    model_fingerprint: [u8; 32],
    dim: usize,
    ids: Vec<String>,
    /// Row-major `ids.len() × dim`.
    matrix: Vec<f32>,
    norms: Vec<f32>,
    by_id: HashMap<String, usize>,
}

/// Ads skipped during a build, with the reason.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkippedAd {
    pub ad_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CandidateScore {
    Scored(f64),
    UnknownId,
}

impl EmbeddingIndex {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn fingerprint(&self) -> &[u8; 32] {
        &self.model_fingerprint
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.matrix[i * self.dim..(i + 1) * self.dim]
    }

    pub fn norm(&self, i: usize) -> f32 {
        self.norms[i]
    }
}

/// Embed every ad title into an index. Ads whose title normalizes to nothing
/// are skipped and reported.
pub fn build_index(
    model: &ClsmModel,
    ads: &[Document],
) -> Result<(EmbeddingIndex, Vec<SkippedAd>)> {
    let dim = model.config.semantic_dim;

    let embedded: Vec<(String, Result<Vec<f64>>)> = ads
        .par_iter()
        .map(|ad| {
            let title = ad.components.as_ref().map(|c| &c.title).unwrap_or(&ad.text);
            if title.is_empty() {
                return (ad.id.clone(), Err(CmaError::Embedding("empty title".to_owned())));
            }
            (ad.id.clone(), model.forward(title).map(|acts| acts.y))
        })
        .collect();

    let mut ids = Vec::with_capacity(ads.len());
    let mut matrix = Vec::with_capacity(ads.len() * dim);
    let mut norms = Vec::with_capacity(ads.len());
    let mut skipped = Vec::new();
    for (ad_id, outcome) in embedded {
        match outcome {
            Ok(y) => {
                let norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
                ids.push(ad_id);
                matrix.extend(y.iter().map(|&v| v as f32));
                norms.push(norm as f32);
            }
            Err(err) => skipped.push(SkippedAd { ad_id, reason: err.to_string() }),
        }
    }

    let by_id = ids.iter().enumerate().map(|(i, id)| (id.clone(), i)).collect();
    Ok((
        EmbeddingIndex {
            model_fingerprint: model.fingerprint(),
            dim,
            ids,
            matrix,
            norms,
            by_id,
        },
        skipped,
    ))
}

/// Cosine-score a candidate list against one query.
///
/// The query is embedded exactly once. Unknown candidate ids come back as
/// [`CandidateScore::UnknownId`]; a fingerprint mismatch between index and
/// model is a hard error.
pub fn score_candidates(
    index: &EmbeddingIndex,
    model: &ClsmModel,
    query_tokens: &[String],
    candidate_ids: &[String],
) -> Result<Vec<(String, CandidateScore)>> {
    if index.model_fingerprint != model.fingerprint() {
        return Err(CmaError::Index(
            "index fingerprint does not match the model".to_owned(),
        ));
    }
    let query = model.forward(query_tokens)?.y;
    let q_norm = query.iter().map(|v| v * v).sum::<f64>().sqrt();

    Ok(candidate_ids
        .iter()
        .map(|id| {
            let Some(&row_idx) = index.by_id.get(id) else {
                return (id.clone(), CandidateScore::UnknownId);
            };
            let row = index.row(row_idx);
            let r_norm = index.norms[row_idx] as f64;
            if q_norm == 0.0 || r_norm == 0.0 {
                return (id.clone(), CandidateScore::Scored(0.0));
            }
            let dot: f64 = query.iter().zip(row).map(|(&q, &r)| q * r as f64).sum();
            (id.clone(), CandidateScore::Scored(dot / (q_norm * r_norm)))
        })
        .collect())
}

impl EmbeddingIndex {
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        w.write_all(&(self.ids.len() as u64).to_le_bytes())?;
        w.write_all(&self.model_fingerprint)?;
        for id in &self.ids {
            let bytes = id.as_bytes();
            w.write_all(&(bytes.len() as u32).to_le_bytes())?;
            w.write_all(bytes)?;
        }
        let mut buf = Vec::with_capacity(64 * 1024);
        for v in &self.matrix {
            buf.extend_from_slice(&v.to_le_bytes());
            if buf.len() >= 64 * 1024 {
                w.write_all(&buf)?;
                buf.clear();
            }
        }
        for v in &self.norms {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(CmaError::Format(format!("bad index magic {magic:?}")));
        }
        let mut u32buf = [0u8; 4];
        r.read_exact(&mut u32buf)?;
        let version = u32::from_le_bytes(u32buf);
        if version != VERSION {
            return Err(CmaError::Format(format!("unsupported index version {version}")));
        }
        r.read_exact(&mut u32buf)?;
        let dim = u32::from_le_bytes(u32buf) as usize;
        let mut u64buf = [0u8; 8];
        r.read_exact(&mut u64buf)?;
        let rows = u64::from_le_bytes(u64buf) as usize;
        let mut model_fingerprint = [0u8; 32];
        r.read_exact(&mut model_fingerprint)?;

        let mut ids = Vec::with_capacity(rows);
        for _ in 0..rows {
            r.read_exact(&mut u32buf)?;
            let len = u32::from_le_bytes(u32buf) as usize;
            let mut bytes = vec![0u8; len];
            r.read_exact(&mut bytes)?;
            ids.push(String::from_utf8(bytes).map_err(|_| {
                CmaError::Format("index id table holds invalid UTF-8".to_owned())
            })?);
        }

        let read_f32s = |r: &mut R, len: usize| -> Result<Vec<f32>> {
            let mut bytes = vec![0u8; len * 4];
            r.read_exact(&mut bytes)?;
            Ok(bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect())
        };
        let matrix = read_f32s(&mut r, rows * dim)?;
        let norms = read_f32s(&mut r, rows)?;
        let by_id = ids.iter().enumerate().map(|(i, id)| (id.clone(), i)).collect();
        Ok(EmbeddingIndex { model_fingerprint, dim, ids, matrix, norms, by_id })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(f))
    }
}
