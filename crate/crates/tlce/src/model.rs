//! The shared embedding architecture: a multilayer-perceptron backbone
//! followed by a linear projection into the embedding space, plus an
//! optional classification head.
//!
//! The two classifiers (RHD and TKN) are built from the same
//! [`ArchitectureSpec`]; only their parameter values differ. The plain
//! cross-entropy head carries a bias, the cosine head is bias-free and its
//! rows are consumed only after unit normalization.

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};

/// Layer widths of the shared backbone + projection architecture.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArchitectureSpec {
    pub input_dim: usize,
    /// Hidden widths of the backbone; rectifiers sit between backbone layers.
    pub hidden_layers: Vec<usize>,
    /// Backbone output width.
    pub feature_dim: usize,
    /// Projection output width.
    pub embedding_dim: usize,
}

impl ArchitectureSpec {
    pub fn new(
        input_dim: usize,
        hidden_layers: Vec<usize>,
        feature_dim: usize,
        embedding_dim: usize,
    ) -> Result<Self> {
        let spec = ArchitectureSpec {
            input_dim,
            hidden_layers,
            feature_dim,
            embedding_dim,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let mut widths = vec![self.input_dim, self.feature_dim, self.embedding_dim];
        widths.extend(&self.hidden_layers);
        if widths.contains(&0) {
            return Err(Error::Config(
                "architecture widths must all be positive".into(),
            ));
        }
        Ok(())
    }

    /// (in, out) dimensions of each backbone layer in order.
    pub fn backbone_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_layers.len() + 1);
        let mut prev = self.input_dim;
        for &h in &self.hidden_layers {
            dims.push((prev, h));
            prev = h;
        }
        dims.push((prev, self.feature_dim));
        dims
    }
}

/// One dense layer; `weight` is out×in, `bias` is out.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearLayer {
    pub weight: Tensor,
    pub bias: Tensor,
}

/// The optional final classification layer.
#[derive(Debug, Clone, PartialEq)]
pub enum Head {
    /// Plain logits μ₂·Wᵀ + b, used for standard supervised pretraining.
    PlainCe { weight: Tensor, bias: Tensor },
    /// Bias-free cosine logits between unit-normalized μ₂ and rows of W.
    Cosine { weight: Tensor },
}

impl Head {
    pub fn num_classes(&self) -> usize {
        match self {
            Head::PlainCe { weight, .. } | Head::Cosine { weight } => weight.shape()[0],
        }
    }
}

/// Head requested at initialization time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadSpec {
    None,
    PlainCe { classes: usize },
    Cosine { classes: usize },
}

/// Learnable parameters of one embedding network.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub arch: ArchitectureSpec,
    /// Backbone layers (θ₁).
    pub backbone: Vec<LinearLayer>,
    /// Projection layer (θ₂).
    pub projection: LinearLayer,
    pub head: Option<Head>,
}

/// Draws fresh parameters: zero-mean weights with variance 2/fan_in,
/// zero biases. Deterministic given the seed.
pub fn init_params(arch: &ArchitectureSpec, head: HeadSpec, seed: u64) -> Result<NetworkParams> {
    arch.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut draw_layer = |fan_in: usize, fan_out: usize| -> Result<LinearLayer> {
        let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt())
            .map_err(|e| Error::Config(format!("bad init distribution: {e}")))?;
        let weight: Vec<f64> = (0..fan_out * fan_in).map(|_| normal.sample(&mut rng)).collect();
        Ok(LinearLayer {
            weight: Tensor::new(vec![fan_out, fan_in], weight)?,
            bias: Tensor::zeros(vec![fan_out])?,
        })
    };

    let mut backbone = Vec::new();
    for (fan_in, fan_out) in arch.backbone_dims() {
        backbone.push(draw_layer(fan_in, fan_out)?);
    }
    let projection = draw_layer(arch.feature_dim, arch.embedding_dim)?;

    let head = match head {
        HeadSpec::None => None,
        HeadSpec::PlainCe { classes } => {
            if classes == 0 {
                return Err(Error::Config("head needs at least one class".into()));
            }
            let layer = draw_layer(arch.embedding_dim, classes)?;
            Some(Head::PlainCe {
                weight: layer.weight,
                bias: layer.bias,
            })
        }
        HeadSpec::Cosine { classes } => {
            if classes == 0 {
                return Err(Error::Config("head needs at least one class".into()));
            }
            let layer = draw_layer(arch.embedding_dim, classes)?;
            Some(Head::Cosine {
                weight: layer.weight,
            })
        }
    };

    Ok(NetworkParams {
        arch: arch.clone(),
        backbone,
        projection,
        head,
    })
}

impl NetworkParams {
    /// Checks that all tensor shapes are consistent with the architecture.
    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        let dims = self.arch.backbone_dims();
        if dims.len() != self.backbone.len() {
            return Err(Error::Config(format!(
                "backbone has {} layers, architecture wants {}",
                self.backbone.len(),
                dims.len()
            )));
        }
        for (layer, (fan_in, fan_out)) in self.backbone.iter().zip(dims) {
            if layer.weight.shape() != [fan_out, fan_in] || layer.bias.shape() != [fan_out] {
                return Err(Error::Config("backbone layer shape mismatch".into()));
            }
        }
        let (pi, po) = (self.arch.feature_dim, self.arch.embedding_dim);
        if self.projection.weight.shape() != [po, pi] || self.projection.bias.shape() != [po] {
            return Err(Error::Config("projection layer shape mismatch".into()));
        }
        if let Some(head) = &self.head {
            let classes = head.num_classes();
            let want = [classes, self.arch.embedding_dim];
            let ok = match head {
                Head::PlainCe { weight, bias } => {
                    weight.shape() == want && bias.shape() == [classes]
                }
                Head::Cosine { weight } => weight.shape() == want,
            };
            if !ok {
                return Err(Error::Config("head shape mismatch".into()));
            }
        }
        Ok(())
    }

    pub fn num_classes(&self) -> Option<usize> {
        self.head.as_ref().map(Head::num_classes)
    }

    /// Removes the classification head, keeping only the embedding layers.
    pub fn strip_head(&mut self) {
        self.head = None;
    }

    /// Runs the embedding forward pass on a batch×input_dim matrix.
    /// Returns (μ₁, μ₂): the backbone features and the projected embeddings.
    pub fn forward_embed(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let mut tape = Tape::new();
        let pv = register_params(&mut tape, self, false);
        let xv = check_and_register_input(&mut tape, self, x)?;
        let (mu1, mu2) = embed_on_tape(&mut tape, &pv, xv)?;
        Ok((tape.value(mu1).clone(), tape.value(mu2).clone()))
    }

    /// Embeds one feature vector; returns μ₂ as a vector.
    pub fn embed_one(&self, x: &[f64]) -> Result<Tensor> {
        let batch = Tensor::new(vec![1, x.len()], x.to_vec())?;
        let (_, mu2) = self.forward_embed(&batch)?;
        Ok(Tensor::from_vec(mu2.row(0).to_vec()))
    }

    /// Plain head logits μ₂·Wᵀ + b for a batch.
    pub fn forward_logits_ce(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let pv = register_params(&mut tape, self, false);
        let xv = check_and_register_input(&mut tape, self, x)?;
        let (_, mu2) = embed_on_tape(&mut tape, &pv, xv)?;
        let logits = ce_logits_on_tape(&mut tape, &pv, mu2)?;
        Ok(tape.value(logits).clone())
    }

    /// Cosine head logits: cos between unit-normalized μ₂ and head rows.
    pub fn forward_logits_cosine(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let pv = register_params(&mut tape, self, false);
        let xv = check_and_register_input(&mut tape, self, x)?;
        let (_, mu2) = embed_on_tape(&mut tape, &pv, xv)?;
        let logits = cosine_logits_on_tape(&mut tape, &pv, mu2)?;
        Ok(tape.value(logits).clone())
    }

    /// Flat list of all learnable tensors, in serialization order.
    pub fn param_tensors(&self) -> Vec<&Tensor> {
        let mut v: Vec<&Tensor> = Vec::new();
        for layer in &self.backbone {
            v.push(&layer.weight);
            v.push(&layer.bias);
        }
        v.push(&self.projection.weight);
        v.push(&self.projection.bias);
        match &self.head {
            Some(Head::PlainCe { weight, bias }) => {
                v.push(weight);
                v.push(bias);
            }
            Some(Head::Cosine { weight }) => v.push(weight),
            None => {}
        }
        v
    }

    /// Mutable variant of [`NetworkParams::param_tensors`], same order.
    /// This is the hook optimizers use to apply updates.
    pub fn param_tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v: Vec<&mut Tensor> = Vec::new();
        for layer in &mut self.backbone {
            v.push(&mut layer.weight);
            v.push(&mut layer.bias);
        }
        v.push(&mut self.projection.weight);
        v.push(&mut self.projection.bias);
        match &mut self.head {
            Some(Head::PlainCe { weight, bias }) => {
                v.push(weight);
                v.push(bias);
            }
            Some(Head::Cosine { weight }) => v.push(weight),
            None => {}
        }
        v
    }
}

fn check_and_register_input(tape: &mut Tape, p: &NetworkParams, x: &Tensor) -> Result<Var> {
    if x.rank() != 2 || x.shape()[1] != p.arch.input_dim {
        return Err(Error::ShapeMismatch {
            op: "forward",
            lhs: x.shape().to_vec(),
            rhs: vec![x.shape().first().copied().unwrap_or(1), p.arch.input_dim],
        });
    }
    Ok(tape.constant(x))
}

// ── Tape plumbing shared by inference and training ───────────────────

pub(crate) enum HeadVars {
    PlainCe { weight: Var, bias: Var },
    Cosine { weight: Var },
}

pub(crate) struct ParamVars {
    pub backbone: Vec<(Var, Var)>,
    pub projection: (Var, Var),
    pub head: Option<HeadVars>,
}

impl ParamVars {
    /// Vars in the same order as [`NetworkParams::param_tensors`].
    pub fn all(&self) -> Vec<Var> {
        let mut v = Vec::new();
        for (w, b) in &self.backbone {
            v.push(*w);
            v.push(*b);
        }
        v.push(self.projection.0);
        v.push(self.projection.1);
        match &self.head {
            Some(HeadVars::PlainCe { weight, bias }) => {
                v.push(*weight);
                v.push(*bias);
            }
            Some(HeadVars::Cosine { weight }) => v.push(*weight),
            None => {}
        }
        v
    }
}

pub(crate) fn register_params(tape: &mut Tape, p: &NetworkParams, trainable: bool) -> ParamVars {
    let mut reg = |t: &Tensor| if trainable { tape.param(t) } else { tape.constant(t) };
    let backbone = p
        .backbone
        .iter()
        .map(|l| (reg(&l.weight), reg(&l.bias)))
        .collect();
    let projection = (reg(&p.projection.weight), reg(&p.projection.bias));
    let head = p.head.as_ref().map(|h| match h {
        Head::PlainCe { weight, bias } => HeadVars::PlainCe {
            weight: reg(weight),
            bias: reg(bias),
        },
        Head::Cosine { weight } => HeadVars::Cosine {
            weight: reg(weight),
        },
    });
    ParamVars {
        backbone,
        projection,
        head,
    }
}

/// μ₁ = F(x), μ₂ = G(μ₁) with rectifiers between backbone layers only.
pub(crate) fn embed_on_tape(tape: &mut Tape, pv: &ParamVars, x: Var) -> Result<(Var, Var)> {
    let mut h = x;
    for (i, (w, b)) in pv.backbone.iter().enumerate() {
        if i > 0 {
            h = tape.relu(h);
        }
        h = tape.matmul_tb(h, *w)?;
        h = tape.add_row_bias(h, *b)?;
    }
    let mu1 = h;
    let mut mu2 = tape.matmul_tb(mu1, pv.projection.0)?;
    mu2 = tape.add_row_bias(mu2, pv.projection.1)?;
    Ok((mu1, mu2))
}

pub(crate) fn ce_logits_on_tape(tape: &mut Tape, pv: &ParamVars, mu2: Var) -> Result<Var> {
    match &pv.head {
        Some(HeadVars::PlainCe { weight, bias }) => {
            let logits = tape.matmul_tb(mu2, *weight)?;
            tape.add_row_bias(logits, *bias)
        }
        Some(HeadVars::Cosine { .. }) => Err(Error::Config(
            "plain logits requested but the configured head is cosine".into(),
        )),
        None => Err(Error::Config(
            "plain logits requested but no head is configured".into(),
        )),
    }
}

pub(crate) fn cosine_logits_on_tape(tape: &mut Tape, pv: &ParamVars, mu2: Var) -> Result<Var> {
    match &pv.head {
        Some(HeadVars::Cosine { weight }) => {
            let nq = tape.row_l2_normalize(mu2)?;
            let nw = tape.row_l2_normalize(*weight)?;
            tape.matmul_tb(nq, nw)
        }
        Some(HeadVars::PlainCe { .. }) => Err(Error::Config(
            "cosine logits requested but the configured head is plain".into(),
        )),
        None => Err(Error::Config(
            "cosine logits requested but no head is configured".into(),
        )),
    }
}
