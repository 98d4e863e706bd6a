use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diff::{sigmoid, Activation, NodeId, Param, Tape, Tensor2D};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    /// Tanh attention pooling followed by a bag classifier.
    Amil,
    /// LeakyReLU attention with additive per-patch scoring.
    Admil,
    /// Additive per-patch scoring behind tanh attention.
    Hybrid,
}

impl Architecture {
    pub const ALL: [Architecture; 3] = [Architecture::Amil, Architecture::Admil, Architecture::Hybrid];

    pub fn is_additive(self) -> bool {
        !matches!(self, Architecture::Amil)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Architecture::Amil => "amil",
            Architecture::Admil => "admil",
            Architecture::Hybrid => "hybrid",
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "amil" => Ok(Architecture::Amil),
            "admil" => Ok(Architecture::Admil),
            "hybrid" => Ok(Architecture::Hybrid),
            other => Err(Error::Config(format!("unknown architecture `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    /// Instance embedding width (M).
    pub embed_dim: usize,
    /// Attention hidden width (L).
    pub attn_dim: usize,
    /// Hidden widths of the classifier / patch-score head; empty means a single linear layer.
    #[serde(default)]
    pub head_hidden: Vec<usize>,
}

impl ModelDims {
    pub fn new(embed_dim: usize, attn_dim: usize) -> Self {
        Self {
            embed_dim,
            attn_dim,
            head_hidden: Vec::new(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.attn_dim == 0 || self.head_hidden.contains(&0) {
            return Err(Error::Config(format!("model dimensions must be positive: {self:?}")));
        }
        Ok(())
    }
}

/// `w^T tanh(V h^T)` scoring. `v` holds V transposed (M x L) so rows of H multiply directly.
#[derive(Debug, Clone, PartialEq)]
pub struct TanhAttentionParams {
    pub v: Param,
    pub w: Param,
}

/// Two fully-connected layers with a LeakyReLU between them.
#[derive(Debug, Clone, PartialEq)]
pub struct LeakyAttentionParams {
    pub w1: Param,
    pub b1: Param,
    pub w2: Param,
    pub b2: Param,
}

#[derive(Debug, Clone, PartialEq)]
pub enum AttentionParams {
    Tanh(TanhAttentionParams),
    Leaky(LeakyAttentionParams),
}

/// Stack of affine layers with LeakyReLU between them and none after the last.
///
/// Ends in one logit for the bag classifier and in two class logits for the
/// patch-score head.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    pub layers: Vec<(Param, Param)>,
}

impl HeadParams {
    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, |(w, _)| w.shape().1)
    }
}

pub type BagClassifierParams = HeadParams;
pub type PatchScoreParams = HeadParams;

/// Result of one forward pass over a bag.
#[derive(Debug, Clone, PartialEq)]
pub struct BagOutput {
    pub bag_prob: f64,
    pub attention: Vec<f64>,
    /// `n x 2` class logits per patch, additive models only.
    pub patch_logits: Option<Tensor2D>,
    /// Pre-softmax bag class scores, additive models only.
    pub class_scores: Option<[f64; 2]>,
    /// Sigmoid of each patch's positive-class logit, additive models only.
    pub bounded_contribs: Option<Vec<f64>>,
}

impl BagOutput {
    pub fn positive_logits(&self) -> Option<Vec<f64>> {
        self.patch_logits
            .as_ref()
            .map(|t| (0..t.rows()).map(|i| t.get(i, 1)).collect())
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Recorded {
    pub prob: NodeId,
    pub attention: NodeId,
    pub patch_logits: Option<NodeId>,
    pub class_scores: Option<NodeId>,
}

/// One of the three bag classifiers with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct MilModel {
    pub arch: Architecture,
    pub dims: ModelDims,
    pub attention: AttentionParams,
    pub head: HeadParams,
}

fn uniform_param(rng: &mut ChaCha8Rng, rows: usize, cols: usize, fan_in: usize) -> Param {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let values = (0..rows * cols).map(|_| rng.random_range(-bound..=bound)).collect();
    Param::new(Tensor2D::from_vec(rows, cols, values).expect("finite init"))
}

fn init_head(rng: &mut ChaCha8Rng, input: usize, hidden: &[usize], out: usize) -> HeadParams {
    let mut layers = Vec::with_capacity(hidden.len() + 1);
    let mut fan_in = input;
    for &width in hidden.iter().chain(std::iter::once(&out)) {
        let w = uniform_param(rng, fan_in, width, fan_in);
        let b = uniform_param(rng, 1, width, fan_in);
        layers.push((w, b));
        fan_in = width;
    }
    HeadParams { layers }
}

impl MilModel {
    /// Fresh parameters drawn uniformly in `±1/sqrt(fan_in)`.
    pub fn new(arch: Architecture, dims: ModelDims, seed: u64) -> Result<Self> {
        dims.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (m, l) = (dims.embed_dim, dims.attn_dim);
        let attention = match arch {
            Architecture::Amil | Architecture::Hybrid => AttentionParams::Tanh(TanhAttentionParams {
                v: uniform_param(&mut rng, m, l, m),
                w: uniform_param(&mut rng, l, 1, l),
            }),
            Architecture::Admil => AttentionParams::Leaky(LeakyAttentionParams {
                w1: uniform_param(&mut rng, m, l, m),
                b1: uniform_param(&mut rng, 1, l, m),
                w2: uniform_param(&mut rng, l, 1, l),
                b2: uniform_param(&mut rng, 1, 1, l),
            }),
        };
        let out = if arch.is_additive() { 2 } else { 1 };
        let head = init_head(&mut rng, m, &dims.head_hidden, out);
        Ok(Self {
            arch,
            dims,
            attention,
            head,
        })
    }

    /// Parameters in a fixed order: attention tensors, then head layers.
    pub fn params(&self) -> Vec<&Param> {
        let mut out: Vec<&Param> = match &self.attention {
            AttentionParams::Tanh(p) => vec![&p.v, &p.w],
            AttentionParams::Leaky(p) => vec![&p.w1, &p.b1, &p.w2, &p.b2],
        };
        for (w, b) in &self.head.layers {
            out.push(w);
            out.push(b);
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out: Vec<&mut Param> = match &mut self.attention {
            AttentionParams::Tanh(p) => vec![&mut p.v, &mut p.w],
            AttentionParams::Leaky(p) => vec![&mut p.w1, &mut p.b1, &mut p.w2, &mut p.b2],
        };
        for (w, b) in &mut self.head.layers {
            out.push(w);
            out.push(b);
        }
        out
    }

    /// Records the forward pass; `leaves` are tape nodes for [`Self::params`], in order.
    pub(crate) fn record(&self, tape: &mut Tape, leaves: &[NodeId], h: NodeId) -> Result<Recorded> {
        let (n, m) = tape.value(h).shape();
        if n == 0 {
            return Err(Error::EmptyBag);
        }
        if m != self.dims.embed_dim {
            return Err(Error::Dimension(format!(
                "bag has {m}-dim instances, model expects {}",
                self.dims.embed_dim
            )));
        }
        let (attention, head_leaves) = match &self.attention {
            AttentionParams::Tanh(_) => (record_tanh_attention(tape, h, leaves[0], leaves[1])?, &leaves[2..]),
            AttentionParams::Leaky(_) => (
                record_leaky_attention(tape, h, [leaves[0], leaves[1], leaves[2], leaves[3]])?,
                &leaves[4..],
            ),
        };
        let attended = tape.scale_rows(attention, h)?;
        if self.arch.is_additive() {
            let patch = record_head(tape, attended, head_leaves)?;
            let scores = tape.sum_rows(patch)?;
            let classes = tape.softmax(scores)?;
            let prob = tape.pick(classes, 0, 1)?;
            Ok(Recorded {
                prob,
                attention,
                patch_logits: Some(patch),
                class_scores: Some(scores),
            })
        } else {
            let pooled = tape.sum_rows(attended)?;
            let logit = record_head(tape, pooled, head_leaves)?;
            let prob = tape.activate(logit, Activation::Sigmoid);
            Ok(Recorded {
                prob,
                attention,
                patch_logits: None,
                class_scores: None,
            })
        }
    }

    fn record_with_params(&self, tape: &mut Tape, instances: &Tensor2D) -> Result<(Vec<NodeId>, Recorded)> {
        let leaves: Vec<NodeId> = self.params().into_iter().map(|p| tape.param(p)).collect();
        let h = tape.leaf(instances.clone());
        let rec = self.record(tape, &leaves, h)?;
        Ok((leaves, rec))
    }

    pub fn forward(&self, instances: &Tensor2D) -> Result<BagOutput> {
        let mut tape = Tape::new();
        let (_, rec) = self.record_with_params(&mut tape, instances)?;
        Ok(output_from(&tape, rec))
    }

    /// Forward, BCE against `label`, and backward; gradients are added to each `Param::grad`.
    pub fn accumulate_gradients(&mut self, instances: &Tensor2D, label: f64) -> Result<f64> {
        let mut tape = Tape::new();
        let (leaves, rec) = self.record_with_params(&mut tape, instances)?;
        let loss = tape.bce(rec.prob, label)?;
        let grads = tape.backward(loss)?;
        for (leaf, param) in leaves.iter().zip(self.params_mut()) {
            grads.accumulate_into(*leaf, param);
        }
        Ok(tape.value(loss).item())
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }
}

fn record_tanh_attention(tape: &mut Tape, h: NodeId, v: NodeId, w: NodeId) -> Result<NodeId> {
    let hv = tape.matmul(h, v)?;
    let act = tape.activate(hv, Activation::Tanh);
    let scores = tape.matmul(act, w)?;
    tape.softmax(scores)
}

fn record_leaky_attention(tape: &mut Tape, h: NodeId, p: [NodeId; 4]) -> Result<NodeId> {
    let z1 = tape.linear(h, p[0], p[1])?;
    let act = tape.activate(z1, Activation::LeakyRelu);
    let scores = tape.linear(act, p[2], p[3])?;
    tape.softmax(scores)
}

fn record_head(tape: &mut Tape, x: NodeId, leaves: &[NodeId]) -> Result<NodeId> {
    let mut cur = x;
    let layers = leaves.len() / 2;
    for (i, pair) in leaves.chunks(2).enumerate() {
        cur = tape.linear(cur, pair[0], pair[1])?;
        if i + 1 < layers {
            cur = tape.activate(cur, Activation::LeakyRelu);
        }
    }
    Ok(cur)
}

fn output_from(tape: &Tape, rec: Recorded) -> BagOutput {
    let patch_logits = rec.patch_logits.map(|id| tape.value(id).clone());
    let bounded_contribs = patch_logits
        .as_ref()
        .map(|t| (0..t.rows()).map(|i| sigmoid(t.get(i, 1))).collect());
    BagOutput {
        bag_prob: tape.value(rec.prob).item(),
        attention: tape.value(rec.attention).values().to_vec(),
        patch_logits,
        class_scores: rec.class_scores.map(|id| {
            let v = tape.value(id).values();
            [v[0], v[1]]
        }),
        bounded_contribs,
    }
}

fn leaves_for(tape: &mut Tape, params: &[&Param]) -> Vec<NodeId> {
    params.iter().map(|p| tape.param(p)).collect()
}

/// Attention weights from tanh scoring.
pub fn attention_tanh(instances: &Tensor2D, params: &TanhAttentionParams) -> Result<Vec<f64>> {
    if instances.rows() == 0 {
        return Err(Error::EmptyBag);
    }
    let mut tape = Tape::new();
    let l = leaves_for(&mut tape, &[&params.v, &params.w]);
    let h = tape.leaf(instances.clone());
    let a = record_tanh_attention(&mut tape, h, l[0], l[1])?;
    Ok(tape.value(a).values().to_vec())
}

/// Attention weights from the LeakyReLU scorer.
pub fn attention_leaky(instances: &Tensor2D, params: &LeakyAttentionParams) -> Result<Vec<f64>> {
    if instances.rows() == 0 {
        return Err(Error::EmptyBag);
    }
    let mut tape = Tape::new();
    let l = leaves_for(&mut tape, &[&params.w1, &params.b1, &params.w2, &params.b2]);
    let h = tape.leaf(instances.clone());
    let a = record_leaky_attention(&mut tape, h, [l[0], l[1], l[2], l[3]])?;
    Ok(tape.value(a).values().to_vec())
}

fn assemble(arch: Architecture, attention: AttentionParams, head: &HeadParams, embed_dim: usize) -> MilModel {
    let attn_dim = match &attention {
        AttentionParams::Tanh(p) => p.v.shape().1,
        AttentionParams::Leaky(p) => p.w1.shape().1,
    };
    let head_hidden = head.layers[..head.layers.len().saturating_sub(1)]
        .iter()
        .map(|(w, _)| w.shape().1)
        .collect();
    MilModel {
        arch,
        dims: ModelDims {
            embed_dim,
            attn_dim,
            head_hidden,
        },
        attention,
        head: head.clone(),
    }
}

fn check_head(head: &HeadParams, out: usize) -> Result<()> {
    if head.layers.is_empty() || head.out_dim() != out {
        return Err(Error::Dimension(format!(
            "head must end in {out} output unit(s), has {}",
            head.out_dim()
        )));
    }
    Ok(())
}

/// Attention pooling followed by the bag classifier.
pub fn amil_forward(instances: &Tensor2D, attn: &TanhAttentionParams, clf: &BagClassifierParams) -> Result<BagOutput> {
    check_head(clf, 1)?;
    let model = assemble(
        Architecture::Amil,
        AttentionParams::Tanh(attn.clone()),
        clf,
        attn.v.shape().0,
    );
    model.forward(instances)
}

/// Per-patch class logits of attention-weighted embeddings, summed into the bag score.
pub fn admil_forward(instances: &Tensor2D, attn: &LeakyAttentionParams, ps: &PatchScoreParams) -> Result<BagOutput> {
    check_head(ps, 2)?;
    let model = assemble(
        Architecture::Admil,
        AttentionParams::Leaky(attn.clone()),
        ps,
        attn.w1.shape().0,
    );
    model.forward(instances)
}

pub fn hybrid_forward(instances: &Tensor2D, attn: &TanhAttentionParams, ps: &PatchScoreParams) -> Result<BagOutput> {
    check_head(ps, 2)?;
    let model = assemble(
        Architecture::Hybrid,
        AttentionParams::Tanh(attn.clone()),
        ps,
        attn.v.shape().0,
    );
    model.forward(instances)
}
