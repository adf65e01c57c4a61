//! The three training procedures behind the two classifiers:
//!
//! 1. plain cross-entropy pretraining of the embedding (RHD stage one, and
//!    the baseline transfer network),
//! 2. episodic meta-training that sharpens prototype attention until base
//!    classes land on quasi-orthogonal directions (RHD stage two),
//! 3. cosine cross-entropy training of the transferable knowledge network.
//!
//! All trainers are deterministic functions of (params, data, seed) and run
//! plain SGD, optionally with momentum.

use crate::data::SessionDataset;
use crate::error::{Error, Result};
use crate::model::{
    ce_logits_on_tape, cosine_logits_on_tape, embed_on_tape, register_params, Head, NetworkParams,
};
use crate::tape::Tape;
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use std::io::Write;
use std::time::{SystemTime, UNIX_EPOCH};

/// Optimizer settings shared by all trainers.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// SGD momentum coefficient; `None` runs plain SGD.
    pub momentum: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            batch_size: 128,
            epochs: 120,
            seed: 0,
            momentum: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if let Some(m) = self.momentum {
            if !(0.0..1.0).contains(&m) {
                return Err(Error::Config("momentum must lie in [0, 1)".into()));
            }
        }
        Ok(())
    }
}

/// Stiffness of the sharpening function.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SharpeningConfig {
    pub beta: f64,
}

impl Default for SharpeningConfig {
    fn default() -> Self {
        SharpeningConfig { beta: 10.0 }
    }
}

impl SharpeningConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beta <= 0.0 {
            return Err(Error::Config("beta must be positive".into()));
        }
        Ok(())
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Soft absolute sharpening: ε(c) = σ(β(c−0.5)) + σ(β(−c−0.5)).
///
/// Even, strictly positive, and increasing in |c|; its minimum at c = 0 is
/// what pushes non-target similarities toward zero during meta-training.
pub fn sharpening(c: f64, beta: f64) -> f64 {
    sigmoid(beta * (c - 0.5)) + sigmoid(beta * (-c - 0.5))
}

/// dε/dc, used by the tape's episodic-loss backward rule.
pub(crate) fn sharpening_deriv(c: f64, beta: f64) -> f64 {
    let s1 = sigmoid(beta * (c - 0.5));
    let s2 = sigmoid(beta * (-c - 0.5));
    beta * s1 * (1.0 - s1) - beta * s2 * (1.0 - s2)
}

/// Softabs attention: h_i = ε(s_i) / Σ_j ε(s_j).
///
/// Always a valid probability vector since ε > 0 everywhere.
pub fn softabs_attention(scores: &[f64], cfg: &SharpeningConfig) -> Vec<f64> {
    let eps: Vec<f64> = scores.iter().map(|&s| sharpening(s, cfg.beta)).collect();
    let denom: f64 = eps.iter().sum();
    eps.into_iter().map(|e| e / denom).collect()
}

/// One episodic task: disjoint support and query samples drawn from every
/// class of the base session.
#[derive(Debug, Clone)]
pub struct Episode {
    pub class_ids: Vec<u32>,
    /// (classes·k_support)×input_dim support samples.
    pub support_x: Tensor,
    /// Per support row, the index of its class in `class_ids`.
    pub support_class_idx: Vec<usize>,
    pub query_x: Tensor,
    pub query_class_idx: Vec<usize>,
}

/// Draws an episode covering all session classes with `k_support` support
/// and `k_query` query samples per class, disjoint within a class.
pub fn sample_episode(
    session: &SessionDataset,
    k_support: usize,
    k_query: usize,
    rng: &mut ChaCha20Rng,
) -> Result<Episode> {
    let mut class_ids = Vec::with_capacity(session.classes.len());
    let mut support_rows = Vec::new();
    let mut support_class_idx = Vec::new();
    let mut query_rows = Vec::new();
    let mut query_class_idx = Vec::new();

    for (ci, class) in session.classes.iter().enumerate() {
        if class.train.len() < k_support + k_query {
            return Err(Error::Data(format!(
                "class {} has {} train samples; an episode needs {}",
                class.class_id,
                class.train.len(),
                k_support + k_query
            )));
        }
        class_ids.push(class.class_id);
        let mut idx: Vec<usize> = (0..class.train.len()).collect();
        idx.shuffle(rng);
        for &i in &idx[..k_support] {
            support_rows.push(class.train[i].clone());
            support_class_idx.push(ci);
        }
        for &i in &idx[k_support..k_support + k_query] {
            query_rows.push(class.train[i].clone());
            query_class_idx.push(ci);
        }
    }

    Ok(Episode {
        class_ids,
        support_x: Tensor::from_rows(&support_rows)?,
        support_class_idx,
        query_x: Tensor::from_rows(&query_rows)?,
        query_class_idx,
    })
}

/// Plain-text training log: one `key=value` line per epoch or episode block.
pub struct TrainLogger {
    sink: Option<Box<dyn Write>>,
}

impl TrainLogger {
    pub fn stderr() -> Self {
        TrainLogger {
            sink: Some(Box::new(std::io::stderr())),
        }
    }

    pub fn disabled() -> Self {
        TrainLogger { sink: None }
    }

    pub fn to_writer(w: Box<dyn Write>) -> Self {
        TrainLogger { sink: Some(w) }
    }

    fn record(&mut self, stage: &str, unit: &str, index: usize, loss: f64) {
        if let Some(sink) = &mut self.sink {
            let ts = SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0);
            let _ = writeln!(sink, "stage={stage} {unit}={index} loss={loss:.6} ts={ts}");
        }
    }
}

// ── SGD ───────────────────────────────────────────────────────────────

struct Sgd {
    lr: f64,
    momentum: Option<f64>,
    velocity: Vec<Vec<f64>>,
}

impl Sgd {
    fn new(cfg: &TrainConfig, params: &NetworkParams) -> Self {
        let velocity = params
            .param_tensors()
            .iter()
            .map(|t| vec![0.0; t.numel()])
            .collect();
        Sgd {
            lr: cfg.learning_rate,
            momentum: cfg.momentum,
            velocity,
        }
    }

    fn step(&mut self, params: &mut NetworkParams, grads: &[Option<Vec<f64>>]) {
        let tensors = params.param_tensors_mut();
        debug_assert_eq!(tensors.len(), grads.len());
        for ((tensor, grad), vel) in tensors.into_iter().zip(grads).zip(&mut self.velocity) {
            let Some(grad) = grad else { continue };
            match self.momentum {
                Some(mu) => {
                    for ((w, g), v) in tensor.data_mut().iter_mut().zip(grad).zip(vel.iter_mut()) {
                        *v = mu * *v + g;
                        *w -= self.lr * *v;
                    }
                }
                None => {
                    for (w, g) in tensor.data_mut().iter_mut().zip(grad) {
                        *w -= self.lr * g;
                    }
                }
            }
        }
    }
}

// ── Supervised trainers ───────────────────────────────────────────────

/// Which supervised loss to run: plain-head cross-entropy or cross-entropy
/// over cosine logits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    PlainCe,
    CosineCe,
}

/// Loss and per-tensor gradients (in [`NetworkParams::param_tensors`]
/// order) of one supervised batch. This is the single training step's core,
/// exposed for gradient checking and custom optimizers.
pub fn batch_loss_and_grads(
    params: &NetworkParams,
    x: &Tensor,
    targets: &[usize],
    kind: LossKind,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let mut tape = Tape::new();
    let pv = register_params(&mut tape, params, true);
    let xv = tape.constant(x);
    let (_, mu2) = embed_on_tape(&mut tape, &pv, xv)?;
    let logits = match kind {
        LossKind::PlainCe => ce_logits_on_tape(&mut tape, &pv, mu2)?,
        LossKind::CosineCe => cosine_logits_on_tape(&mut tape, &pv, mu2)?,
    };
    let loss = tape.cross_entropy_mean(logits, targets)?;
    tape.backward(loss)?;
    let grads = pv
        .all()
        .iter()
        .zip(params.param_tensors())
        .map(|(v, t)| {
            tape.grad(*v)
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| vec![0.0; t.numel()])
        })
        .collect();
    Ok((tape.value(loss).item()?, grads))
}

#[derive(Clone, Copy, PartialEq)]
enum LogitKind {
    Plain,
    Cosine,
}

/// Collects (class index, sample) pairs in session class order.
fn flatten_train_set(data: &SessionDataset) -> Result<Vec<(usize, &Vec<f64>)>> {
    let samples: Vec<(usize, &Vec<f64>)> = data
        .classes
        .iter()
        .enumerate()
        .flat_map(|(ci, class)| class.train.iter().map(move |s| (ci, s)))
        .collect();
    if samples.is_empty() {
        return Err(Error::Data("training session has no samples".into()));
    }
    Ok(samples)
}

fn supervised_train(
    mut params: NetworkParams,
    data: &SessionDataset,
    cfg: &TrainConfig,
    kind: LogitKind,
    stage: &str,
    logger: &mut TrainLogger,
) -> Result<NetworkParams> {
    match (&params.head, kind) {
        (Some(Head::PlainCe { .. }), LogitKind::Plain) => {}
        (Some(Head::Cosine { .. }), LogitKind::Cosine) => {}
        _ => {
            return Err(Error::Config(format!(
                "{stage} requires a matching classification head"
            )))
        }
    }
    let classes = params.num_classes().unwrap_or(0);
    if classes != data.classes.len() {
        return Err(Error::Config(format!(
            "head has {classes} classes but the session has {}",
            data.classes.len()
        )));
    }
    let samples = flatten_train_set(data)?;

    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let mut sgd = Sgd::new(cfg, &params);
    let mut order: Vec<usize> = (0..samples.len()).collect();

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let rows: Vec<Vec<f64>> = chunk.iter().map(|&i| samples[i].1.clone()).collect();
            let targets: Vec<usize> = chunk.iter().map(|&i| samples[i].0).collect();
            let x = Tensor::from_rows(&rows)?;

            let mut tape = Tape::new();
            let pv = register_params(&mut tape, &params, true);
            let xv = tape.constant(&x);
            let (_, mu2) = embed_on_tape(&mut tape, &pv, xv)?;
            let logits = match kind {
                LogitKind::Plain => ce_logits_on_tape(&mut tape, &pv, mu2)?,
                LogitKind::Cosine => cosine_logits_on_tape(&mut tape, &pv, mu2)?,
            };
            let loss = tape.cross_entropy_mean(logits, &targets)?;
            tape.backward(loss)?;

            let grads: Vec<Option<Vec<f64>>> = pv
                .all()
                .iter()
                .map(|v| tape.grad(*v).map(<[f64]>::to_vec))
                .collect();
            sgd.step(&mut params, &grads);
            epoch_loss += tape.value(loss).item()? * chunk.len() as f64;
        }
        logger.record(stage, "epoch", epoch + 1, epoch_loss / samples.len() as f64);
    }
    Ok(params)
}

/// Stage-one supervised pretraining with the plain cross-entropy head.
/// Also trains the baseline transfer network.
pub fn pretrain_ce(
    params: NetworkParams,
    base_data: &SessionDataset,
    cfg: &TrainConfig,
    logger: &mut TrainLogger,
) -> Result<NetworkParams> {
    supervised_train(params, base_data, cfg, LogitKind::Plain, "pretrain_ce", logger)
}

/// Trains the transferable knowledge network: cross-entropy over bias-free
/// cosine logits.
pub fn train_tkn(
    params: NetworkParams,
    base_data: &SessionDataset,
    cfg: &TrainConfig,
    logger: &mut TrainLogger,
) -> Result<NetworkParams> {
    supervised_train(params, base_data, cfg, LogitKind::Cosine, "train_tkn", logger)
}

// ── Episodic meta-training ────────────────────────────────────────────

/// Per-tensor gradients in [`NetworkParams::param_tensors`] order; `None`
/// for tensors the loss does not reach.
type ParamGrads = Vec<Option<Vec<f64>>>;

/// Computes the episodic loss for one episode on a fresh tape and returns
/// (loss value, per-parameter gradients) when `train` is set.
fn episode_loss(
    params: &NetworkParams,
    episode: &Episode,
    beta: f64,
    train: bool,
) -> Result<(f64, Option<ParamGrads>)> {
    let num_classes = episode.class_ids.len();
    let mut tape = Tape::new();
    let pv = register_params(&mut tape, params, train);
    let sx = tape.constant(&episode.support_x);
    let qx = tape.constant(&episode.query_x);

    let (_, support_mu2) = embed_on_tape(&mut tape, &pv, sx)?;
    let prototypes = tape.class_mean_pool(support_mu2, &episode.support_class_idx, num_classes)?;
    let (_, query_mu2) = embed_on_tape(&mut tape, &pv, qx)?;

    // Same similarity the memory uses at test time: cosine between
    // tanh-regulated embeddings and tanh-regulated prototypes.
    let tq = tape.tanh(query_mu2);
    let tp = tape.tanh(prototypes);
    let nq = tape.row_l2_normalize(tq)?;
    let np = tape.row_l2_normalize(tp)?;
    let scores = tape.matmul_tb(nq, np)?;

    let loss = tape.softabs_nll(scores, &episode.query_class_idx, beta)?;
    let value = tape.value(loss).item()?;
    if !train {
        return Ok((value, None));
    }
    tape.backward(loss)?;
    let grads = pv
        .all()
        .iter()
        .map(|v| tape.grad(*v).map(<[f64]>::to_vec))
        .collect();
    Ok((value, Some(grads)))
}

/// Episodic meta-training of the RHD embedding. The classification head is
/// replaced by prototype attention, so it is dropped from the returned
/// parameters. Each episode recomputes prototypes from its own support set,
/// simulating the test-time procedure.
pub fn meta_train_rhd(
    mut params: NetworkParams,
    base_data: &SessionDataset,
    cfg: &TrainConfig,
    sharp: &SharpeningConfig,
    shot: usize,
    episodes: usize,
    logger: &mut TrainLogger,
) -> Result<NetworkParams> {
    sharp.validate()?;
    if base_data.classes.len() < 2 {
        return Err(Error::Protocol(
            "meta-training needs at least 2 base classes".into(),
        ));
    }
    if shot == 0 {
        return Err(Error::Config("shot must be at least 1".into()));
    }
    params.strip_head();
    if episodes == 0 {
        return Ok(params);
    }

    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let mut sgd = Sgd::new(cfg, &params);
    let log_every = (episodes / 10).max(1);
    let mut block_loss = 0.0;

    for ep in 0..episodes {
        // Query size per class mirrors the shot count.
        let episode = sample_episode(base_data, shot, shot, &mut rng)?;
        let (value, grads) = episode_loss(&params, &episode, sharp.beta, true)?;
        sgd.step(&mut params, &grads.expect("training pass returns gradients"));
        block_loss += value;
        if (ep + 1) % log_every == 0 {
            logger.record("meta_train_rhd", "episode", ep + 1, block_loss / log_every as f64);
            block_loss = 0.0;
        }
    }
    Ok(params)
}

/// Loss of a frozen probe episode without updating parameters.
pub fn probe_episode_loss(
    params: &NetworkParams,
    episode: &Episode,
    sharp: &SharpeningConfig,
) -> Result<f64> {
    Ok(episode_loss(params, episode, sharp.beta, false)?.0)
}
