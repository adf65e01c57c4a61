//! λ-weighted fusion of the two classifiers' similarity vectors and the
//! final nearest-prototype classification.

use crate::error::{Error, Result};
use crate::memory::{score_embedded, ExplicitMemory, MemoryEntry, NetSelector};
use crate::model::NetworkParams;
use crate::tensor::Tensor;

/// Ensemble weight λ ∈ [0, 1]: the combined score is λ·S_rhd + (1−λ)·S_tkn.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnsembleConfig {
    pub lambda: f64,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        EnsembleConfig { lambda: 0.8 }
    }
}

impl EnsembleConfig {
    pub fn new(lambda: f64) -> Result<Self> {
        let cfg = EnsembleConfig { lambda };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) || self.lambda.is_nan() {
            return Err(Error::Config(format!(
                "lambda must lie in [0, 1], got {}",
                self.lambda
            )));
        }
        Ok(())
    }
}

/// Elementwise convex combination of two same-order score vectors.
pub fn combine(s_rhd: &Tensor, s_tkn: &Tensor, cfg: &EnsembleConfig) -> Result<Tensor> {
    if s_rhd.shape() != s_tkn.shape() {
        return Err(Error::ShapeMismatch {
            op: "combine",
            lhs: s_rhd.shape().to_vec(),
            rhs: s_tkn.shape().to_vec(),
        });
    }
    cfg.validate()?;
    let data = combine_slices(s_rhd.data(), s_tkn.data(), cfg.lambda);
    Tensor::new(s_rhd.shape().to_vec(), data)
}

pub(crate) fn combine_slices(s_rhd: &[f64], s_tkn: &[f64], lambda: f64) -> Vec<f64> {
    s_rhd
        .iter()
        .zip(s_tkn)
        .map(|(r, t)| lambda * r + (1.0 - lambda) * t)
        .collect()
}

/// Argmax over scores with ties broken by the smallest class id.
/// Returns (class id, top score).
pub(crate) fn pick_class(entries: &[MemoryEntry], scores: &[f64]) -> (u32, f64) {
    debug_assert_eq!(entries.len(), scores.len());
    let mut best_id = entries[0].class_id;
    let mut best_score = scores[0];
    for (entry, &score) in entries.iter().zip(scores).skip(1) {
        if score > best_score || (score == best_score && entry.class_id < best_id) {
            best_id = entry.class_id;
            best_score = score;
        }
    }
    (best_id, best_score)
}

/// Classifies a raw query by its nearest prototype under the λ-combined
/// similarity. Returns the winning class id and the combined score vector
/// (in stored class order) for inspection.
pub fn classify(
    em: &ExplicitMemory,
    rhd: &NetworkParams,
    tkn: &NetworkParams,
    cfg: &EnsembleConfig,
    query: &[f64],
) -> Result<(u32, Tensor)> {
    cfg.validate()?;
    let s_rhd = em.score(NetSelector::Rhd, rhd, query)?;
    let s_tkn = em.score(NetSelector::Tkn, tkn, query)?;
    let combined = combine_slices(s_rhd.data(), s_tkn.data(), cfg.lambda);
    let (class_id, _) = pick_class(em.entries(), &combined);
    Ok((class_id, Tensor::from_vec(combined)))
}

/// Classification from pre-computed (pre-tanh) embeddings; the harness uses
/// this to score cached embeddings against a memory prefix.
pub(crate) fn classify_embedded(
    entries: &[MemoryEntry],
    emb_rhd: &[f64],
    emb_tkn: &[f64],
    lambda: f64,
) -> Result<(u32, f64)> {
    let s_rhd = score_embedded(entries, NetSelector::Rhd, emb_rhd)?;
    let s_tkn = score_embedded(entries, NetSelector::Tkn, emb_tkn)?;
    let combined = combine_slices(&s_rhd, &s_tkn, lambda);
    Ok(pick_class(entries, &combined))
}
