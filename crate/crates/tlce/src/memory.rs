//! The explicit memory (EM): one prototype vector per class per classifier,
//! appended once per session and never mutated afterwards.
//!
//! Prototypes are stored pre-tanh; the tanh regulation is applied at scoring
//! time, which keeps prototype computation and similarity scoring
//! independently testable.

use crate::data::SessionDataset;
use crate::error::{Error, Result};
use crate::model::NetworkParams;
use crate::tensor::{cosine_slices, Tensor};

/// Which classifier's prototypes to score against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NetSelector {
    Rhd,
    Tkn,
}

/// One class entry: both prototypes plus the session that introduced it.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryEntry {
    pub class_id: u32,
    pub session_introduced: u32,
    pub proto_rhd: Tensor,
    pub proto_tkn: Tensor,
}

impl MemoryEntry {
    /// Canonical byte serialization of this entry, used both by checkpoint
    /// files and by the append-only invariant checks.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&self.class_id.to_le_bytes());
        out.extend_from_slice(&self.session_introduced.to_le_bytes());
        out.extend_from_slice(&(self.proto_rhd.numel() as u32).to_le_bytes());
        for v in self.proto_rhd.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&(self.proto_tkn.numel() as u32).to_le_bytes());
        for v in self.proto_tkn.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }
}

/// Append-only ordered store of class prototypes.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExplicitMemory {
    entries: Vec<MemoryEntry>,
}

impl ExplicitMemory {
    pub fn new() -> Self {
        ExplicitMemory::default()
    }

    /// Rebuilds a memory from entries (checkpoint loading, constructed
    /// scenarios). Ids must be unique and sessions non-decreasing.
    pub fn from_entries(entries: Vec<MemoryEntry>) -> Result<Self> {
        let mut seen = Vec::new();
        let mut last_session = 0u32;
        for e in &entries {
            if seen.contains(&e.class_id) {
                return Err(Error::Protocol(format!(
                    "class {} appears twice in memory",
                    e.class_id
                )));
            }
            if e.session_introduced < last_session {
                return Err(Error::Protocol(
                    "memory entries out of session order".into(),
                ));
            }
            last_session = e.session_introduced;
            seen.push(e.class_id);
        }
        Ok(ExplicitMemory { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[MemoryEntry] {
        &self.entries
    }

    pub fn class_ids(&self) -> Vec<u32> {
        self.entries.iter().map(|e| e.class_id).collect()
    }

    pub fn contains(&self, class_id: u32) -> bool {
        self.entries.iter().any(|e| e.class_id == class_id)
    }

    /// Appends one entry per class of the session, computed with both frozen
    /// networks. The session's classes must be disjoint from every stored
    /// class; on error the memory is left untouched.
    pub fn update(
        &mut self,
        session: &SessionDataset,
        rhd: &NetworkParams,
        tkn: &NetworkParams,
    ) -> Result<()> {
        for class in &session.classes {
            if self.contains(class.class_id) {
                return Err(Error::Protocol(format!(
                    "class {} already has a prototype in memory",
                    class.class_id
                )));
            }
        }
        let mut fresh = Vec::with_capacity(session.classes.len());
        for class in &session.classes {
            fresh.push(MemoryEntry {
                class_id: class.class_id,
                session_introduced: session.session_id,
                proto_rhd: compute_prototype(rhd, &class.train)?,
                proto_tkn: compute_prototype(tkn, &class.train)?,
            });
        }
        self.entries.extend(fresh);
        Ok(())
    }

    /// Similarity of a raw query against every stored class, in stored
    /// order.
    pub fn score(
        &self,
        which: NetSelector,
        net: &NetworkParams,
        query: &[f64],
    ) -> Result<Tensor> {
        score_entries(&self.entries, which, net, query)
    }
}

/// Mean embedding of the samples: p = (1/|S|) Σ G(F(x)), stored pre-tanh.
pub fn compute_prototype(net: &NetworkParams, samples: &[Vec<f64>]) -> Result<Tensor> {
    if samples.is_empty() {
        return Err(Error::Data(
            "cannot compute a prototype from zero samples".into(),
        ));
    }
    let x = Tensor::from_rows(samples)?;
    let (_, mu2) = net.forward_embed(&x)?;
    let d = mu2.shape()[1];
    let mut mean = vec![0.0; d];
    for i in 0..samples.len() {
        for (m, v) in mean.iter_mut().zip(mu2.row(i)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= samples.len() as f64);
    Ok(Tensor::from_vec(mean))
}

/// Scores a query against a slice of entries (a prefix of the memory during
/// earlier sessions, or the whole memory).
pub fn score_entries(
    entries: &[MemoryEntry],
    which: NetSelector,
    net: &NetworkParams,
    query: &[f64],
) -> Result<Tensor> {
    if entries.is_empty() {
        return Err(Error::Contract("memory holds no prototypes".into()));
    }
    if query.len() != net.arch.input_dim {
        return Err(Error::ShapeMismatch {
            op: "score",
            lhs: vec![query.len()],
            rhs: vec![net.arch.input_dim],
        });
    }
    let embedding = net.embed_one(query)?;
    let scores = score_embedded(entries, which, embedding.data())?;
    Ok(Tensor::from_vec(scores))
}

/// Scores a pre-computed (pre-tanh) embedding against entries. All
/// evaluation paths funnel through here so batched and one-at-a-time
/// scoring agree exactly.
pub(crate) fn score_embedded(
    entries: &[MemoryEntry],
    which: NetSelector,
    embedding: &[f64],
) -> Result<Vec<f64>> {
    let tq: Vec<f64> = embedding.iter().map(|v| v.tanh()).collect();
    entries
        .iter()
        .map(|e| {
            let proto = match which {
                NetSelector::Rhd => &e.proto_rhd,
                NetSelector::Tkn => &e.proto_tkn,
            };
            let tp: Vec<f64> = proto.data().iter().map(|v| v.tanh()).collect();
            cosine_slices(&tq, &tp)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ClassData;
    use crate::model::{init_params, ArchitectureSpec, HeadSpec};

    fn identity_net(d: usize) -> NetworkParams {
        let arch = ArchitectureSpec::new(d, vec![], d, d).unwrap();
        let mut p = init_params(&arch, HeadSpec::None, 0).unwrap();
        let mut eye = vec![0.0; d * d];
        for i in 0..d {
            eye[i * d + i] = 1.0;
        }
        p.backbone[0].weight = Tensor::new(vec![d, d], eye.clone()).unwrap();
        p.backbone[0].bias = Tensor::zeros(vec![d]).unwrap();
        p.projection.weight = Tensor::new(vec![d, d], eye).unwrap();
        p.projection.bias = Tensor::zeros(vec![d]).unwrap();
        p
    }

    fn session(id: u32, dim: usize, classes: Vec<(u32, Vec<Vec<f64>>)>) -> SessionDataset {
        SessionDataset {
            session_id: id,
            feature_dim: dim,
            classes: classes
                .into_iter()
                .map(|(class_id, train)| ClassData {
                    class_id,
                    train,
                    test: vec![],
                })
                .collect(),
        }
    }

    #[test]
    fn prototype_of_one_sample_is_its_embedding() {
        let net = identity_net(3);
        let sample = vec![0.4, -1.0, 2.5];
        let p = compute_prototype(&net, std::slice::from_ref(&sample)).unwrap();
        assert_eq!(p.data(), sample.as_slice());
    }

    #[test]
    fn opposite_samples_cancel() {
        let net = identity_net(2);
        let p = compute_prototype(&net, &[vec![1.5, -0.5], vec![-1.5, 0.5]]).unwrap();
        assert_eq!(p.data(), &[0.0, 0.0]);
    }

    #[test]
    fn prototype_matches_accumulate_then_divide_oracle() {
        let arch = ArchitectureSpec::new(4, vec![6], 6, 5).unwrap();
        let net = init_params(&arch, HeadSpec::None, 8).unwrap();
        let samples: Vec<Vec<f64>> = (0..5)
            .map(|i| (0..4).map(|j| ((i * 4 + j) as f64 * 0.37).sin()).collect())
            .collect();
        let p = compute_prototype(&net, &samples).unwrap();

        let mut acc = vec![0.0; 5];
        for s in &samples {
            let e = net.embed_one(s).unwrap();
            for (a, v) in acc.iter_mut().zip(e.data()) {
                *a += v;
            }
        }
        acc.iter_mut().for_each(|a| *a /= 5.0);
        for (got, want) in p.data().iter().zip(&acc) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_sample_list_is_a_data_error() {
        let net = identity_net(2);
        assert!(matches!(
            compute_prototype(&net, &[]),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn update_appends_one_entry_per_class() {
        let net = identity_net(2);
        let mut em = ExplicitMemory::new();
        let classes = (0..10u32)
            .map(|i| (i, vec![vec![i as f64, 1.0]]))
            .collect();
        em.update(&session(1, 2, classes), &net, &net).unwrap();
        assert_eq!(em.len(), 10);
        assert_eq!(em.class_ids(), (0..10).collect::<Vec<u32>>());
    }

    #[test]
    fn repeated_update_is_a_protocol_error_and_leaves_memory_intact() {
        let net = identity_net(2);
        let mut em = ExplicitMemory::new();
        let s = session(1, 2, vec![(0, vec![vec![1.0, 0.0]]), (1, vec![vec![0.0, 1.0]])]);
        em.update(&s, &net, &net).unwrap();
        let snapshot = em.clone();
        let err = em.update(&s, &net, &net).unwrap_err();
        assert!(matches!(err, Error::Protocol(_)));
        assert!(err.to_string().contains('0'));
        assert_eq!(em, snapshot);
    }

    #[test]
    fn old_entries_serialize_identically_after_updates() {
        let net = identity_net(2);
        let mut em = ExplicitMemory::new();
        em.update(
            &session(1, 2, vec![(0, vec![vec![1.0, 2.0]]), (1, vec![vec![3.0, 4.0]])]),
            &net,
            &net,
        )
        .unwrap();
        let before: Vec<Vec<u8>> = em.entries().iter().map(MemoryEntry::to_bytes).collect();
        em.update(
            &session(2, 2, vec![(2, vec![vec![5.0, 6.0]])]),
            &net,
            &net,
        )
        .unwrap();
        for (entry, bytes) in em.entries().iter().zip(&before) {
            assert_eq!(&entry.to_bytes(), bytes);
        }
        assert_eq!(em.len(), 3);
    }

    #[test]
    fn self_match_scores_one() {
        let net = identity_net(3);
        let mut em = ExplicitMemory::new();
        em.update(
            &session(
                1,
                3,
                vec![
                    (0, vec![vec![2.0, 0.0, 0.0]]),
                    (1, vec![vec![0.0, 2.0, 0.0]]),
                ],
            ),
            &net,
            &net,
        )
        .unwrap();
        let scores = em.score(NetSelector::Rhd, &net, &[2.0, 0.0, 0.0]).unwrap();
        assert!((scores.data()[0] - 1.0).abs() < 1e-12);
        let best = scores
            .data()
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(best, scores.data()[0]);
    }

    #[test]
    fn orthogonal_prototypes_stay_near_zero_for_aligned_queries() {
        let d = 6;
        let net = identity_net(d);
        let mut em = ExplicitMemory::new();
        let classes = (0..d)
            .map(|i| {
                let mut v = vec![0.0; d];
                v[i] = 3.0;
                (i as u32, vec![v])
            })
            .collect();
        em.update(&session(1, d, classes), &net, &net).unwrap();

        let mut query = vec![0.0; d];
        query[0] = 2.9;
        let scores = em.score(NetSelector::Tkn, &net, &query).unwrap();
        assert!(scores.data()[0] > 0.99);
        for &s in &scores.data()[1..] {
            assert!(s.abs() < 0.05, "off-class score {s}");
        }
    }

    #[test]
    fn batched_and_single_scoring_agree() {
        let arch = ArchitectureSpec::new(4, vec![5], 5, 6).unwrap();
        let net = init_params(&arch, HeadSpec::None, 3).unwrap();
        let mut em = ExplicitMemory::new();
        let classes = (0..3u32)
            .map(|i| {
                (
                    i,
                    vec![vec![i as f64, 1.0, -0.5, 0.25], vec![0.1, i as f64, 0.2, 0.3]],
                )
            })
            .collect();
        em.update(&session(1, 4, classes), &net, &net).unwrap();

        let queries = vec![
            vec![0.3, 0.7, -0.1, 0.9],
            vec![1.2, -0.2, 0.5, 0.0],
            vec![0.0, 0.0, 1.0, 1.0],
        ];
        // Batched: embed all queries at once, score each row.
        let x = Tensor::from_rows(&queries).unwrap();
        let (_, mu2) = net.forward_embed(&x).unwrap();
        for (i, q) in queries.iter().enumerate() {
            let single = em.score(NetSelector::Rhd, &net, q).unwrap();
            let batched = score_embedded(em.entries(), NetSelector::Rhd, mu2.row(i)).unwrap();
            for (a, b) in single.data().iter().zip(&batched) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn query_dimension_mismatch_is_reported() {
        let net = identity_net(3);
        let mut em = ExplicitMemory::new();
        em.update(&session(1, 3, vec![(0, vec![vec![1.0, 0.0, 0.0]])]), &net, &net)
            .unwrap();
        assert!(matches!(
            em.score(NetSelector::Rhd, &net, &[1.0, 0.0]),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn scoring_an_empty_memory_is_rejected() {
        let net = identity_net(2);
        let em = ExplicitMemory::new();
        assert!(em.score(NetSelector::Rhd, &net, &[1.0, 0.0]).is_err());
    }
}
