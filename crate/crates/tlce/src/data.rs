//! Dataset containers, the synthetic Gaussian-cluster generator, and the
//! session splitter that turns one labeled dataset into an incremental
//! class stream.

use crate::error::{Error, Result};
use crate::harness::ProtocolSpec;
use crate::seeds;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};

/// All samples of one class, split into disjoint train and test sets.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassData {
    pub class_id: u32,
    pub train: Vec<Vec<f64>>,
    pub test: Vec<Vec<f64>>,
}

/// A labeled dataset with a per-class train/test split.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub feature_dim: usize,
    pub classes: Vec<ClassData>,
}

impl LabeledDataset {
    pub fn class_ids(&self) -> Vec<u32> {
        self.classes.iter().map(|c| c.class_id).collect()
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = Vec::new();
        for class in &self.classes {
            if seen.contains(&class.class_id) {
                return Err(Error::Data(format!(
                    "duplicate class id {} in dataset",
                    class.class_id
                )));
            }
            seen.push(class.class_id);
            for sample in class.train.iter().chain(&class.test) {
                if sample.len() != self.feature_dim {
                    return Err(Error::Data(format!(
                        "class {}: sample dim {} != dataset dim {}",
                        class.class_id,
                        sample.len(),
                        self.feature_dim
                    )));
                }
            }
        }
        Ok(())
    }
}

/// One session of the incremental stream: its classes with training samples
/// (trimmed to K shots for incremental sessions) and full test splits.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionDataset {
    /// 1-based session index; session 1 is the base session.
    pub session_id: u32,
    pub feature_dim: usize,
    pub classes: Vec<ClassData>,
}

impl SessionDataset {
    pub fn class_ids(&self) -> Vec<u32> {
        self.classes.iter().map(|c| c.class_id).collect()
    }

    pub fn num_train_samples(&self) -> usize {
        self.classes.iter().map(|c| c.train.len()).sum()
    }
}

/// Parameters of the synthetic Gaussian-cluster generator.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub num_classes: usize,
    pub feature_dim: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub cluster_std: f64,
    /// Minimum pairwise center distance, in units of `cluster_std`.
    pub min_center_separation: f64,
    pub seed: u64,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0
            || self.feature_dim == 0
            || self.train_per_class == 0
            || self.test_per_class == 0
        {
            return Err(Error::Config("all synthetic counts must be positive".into()));
        }
        if self.cluster_std <= 0.0 {
            return Err(Error::Config("cluster_std must be positive".into()));
        }
        if self.min_center_separation <= 0.0 {
            return Err(Error::Config(
                "min_center_separation must be positive".into(),
            ));
        }
        Ok(())
    }
}

const CENTER_RETRY_BUDGET: usize = 10_000;

/// Generates isotropic Gaussian clusters with rejection-sampled centers.
/// Deterministic given the seed.
pub fn generate_synth(spec: &SynthSpec) -> Result<LabeledDataset> {
    spec.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    let threshold = spec.min_center_separation * spec.cluster_std;
    // Centers are drawn at the separation scale so that typical pairwise
    // distances (≈ threshold·sqrt(2·dim)) clear the rejection threshold.
    let center_dist = Normal::new(0.0, threshold).expect("positive std");
    let noise = Normal::new(0.0, spec.cluster_std).expect("positive std");

    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(spec.num_classes);
    for _ in 0..spec.num_classes {
        let mut attempts = 0;
        loop {
            let candidate: Vec<f64> = (0..spec.feature_dim)
                .map(|_| center_dist.sample(&mut rng))
                .collect();
            let ok = centers.iter().all(|c| {
                let d2: f64 = c
                    .iter()
                    .zip(&candidate)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                d2.sqrt() >= threshold
            });
            if ok {
                centers.push(candidate);
                break;
            }
            attempts += 1;
            if attempts >= CENTER_RETRY_BUDGET {
                return Err(Error::Data(format!(
                    "could not place {} cluster centers at separation {}σ; \
                     try a larger feature dim or a smaller separation",
                    spec.num_classes, spec.min_center_separation
                )));
            }
        }
    }

    let mut classes = Vec::with_capacity(spec.num_classes);
    for (id, center) in centers.iter().enumerate() {
        let mut draw = |count: usize| -> Vec<Vec<f64>> {
            (0..count)
                .map(|_| {
                    center
                        .iter()
                        .map(|&c| c + noise.sample(&mut rng))
                        .collect()
                })
                .collect()
        };
        let train = draw(spec.train_per_class);
        let test = draw(spec.test_per_class);
        classes.push(ClassData {
            class_id: id as u32,
            train,
            test,
        });
    }

    Ok(LabeledDataset {
        feature_dim: spec.feature_dim,
        classes,
    })
}

/// Splits a dataset into the base session plus N-way K-shot incremental
/// sessions under a seeded class shuffle. Incremental sessions keep exactly
/// K training samples per class (seeded choice) and the full test split.
pub fn split_sessions(data: &LabeledDataset, spec: &ProtocolSpec) -> Result<Vec<SessionDataset>> {
    spec.validate()?;
    data.validate()?;
    let expected = spec.num_base_classes + spec.num_novel_classes;
    if data.num_classes() != expected {
        return Err(Error::Protocol(format!(
            "dataset has {} classes, protocol wants {} base + {} novel",
            data.num_classes(),
            spec.num_base_classes,
            spec.num_novel_classes
        )));
    }

    let mut order: Vec<usize> = (0..data.num_classes()).collect();
    let mut shuffle_rng = ChaCha20Rng::seed_from_u64(seeds::derive(spec.seed, "session-split"));
    order.shuffle(&mut shuffle_rng);

    let mut shot_rng = ChaCha20Rng::seed_from_u64(seeds::derive(spec.seed, "kshot-select"));
    let mut sessions = Vec::with_capacity(spec.num_sessions);

    let base = SessionDataset {
        session_id: 1,
        feature_dim: data.feature_dim,
        classes: order[..spec.num_base_classes]
            .iter()
            .map(|&i| data.classes[i].clone())
            .collect(),
    };
    sessions.push(base);

    for t in 1..spec.num_sessions {
        let start = spec.num_base_classes + (t - 1) * spec.way;
        let mut classes = Vec::with_capacity(spec.way);
        for &i in &order[start..start + spec.way] {
            let class = &data.classes[i];
            if class.train.len() < spec.shot {
                return Err(Error::Data(format!(
                    "class {} has {} train samples, {} shots requested",
                    class.class_id,
                    class.train.len(),
                    spec.shot
                )));
            }
            let mut idx: Vec<usize> = (0..class.train.len()).collect();
            idx.shuffle(&mut shot_rng);
            idx.truncate(spec.shot);
            classes.push(ClassData {
                class_id: class.class_id,
                train: idx.iter().map(|&j| class.train[j].clone()).collect(),
                test: class.test.clone(),
            });
        }
        sessions.push(SessionDataset {
            session_id: (t + 1) as u32,
            feature_dim: data.feature_dim,
            classes,
        });
    }

    Ok(sessions)
}
