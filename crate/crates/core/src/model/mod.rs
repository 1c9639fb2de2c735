//! The models: a seven-layer 1D-CNN baseline over raw waveforms, and the
//! two-headed adversarial variant that shares the extractor between a
//! 10-way digit classifier and a gradient-reversed domain classifier.
//!
//! Parameters are plain named tensors living outside any graph; a fresh
//! graph is built per mini-batch. The adversarial objective over a source
//! (healthy) and target (dysarthric) batch is
//!
//!   E = L_y^s + α·L_y^t − λ·(L_d^s + L_d^t)
//!
//! with α ∈ {0,1} gating the target label loss. Training backpropagates
//! the companion node L_y^s + α·L_y^t + (L_d^s + L_d^t) in which both
//! domain losses sit behind the gradient reversal layer: the GRL's −λ
//! factor turns plain descent on that node into descent of E for the
//! extractor and label head while the domain classifier still descends its
//! own loss. The E-form value is exposed separately for reporting.

pub mod checkpoint;

use std::collections::BTreeMap;
use std::fmt;

use crate::autodiff::{Bindings, Graph, GraphError, NodeId};
use crate::nn::{self, Conv1dSpec, GrlSpec};
use crate::rng::{derive_seed, fnv1a, SplitMix64};
use crate::tensor::Tensor;

#[derive(Debug)]
pub enum ModelError {
    InvalidConfig(String),
    MissingTargetLabels,
    EmptyBatch(&'static str),
    Graph(GraphError),
    BadCheckpoint(String),
    Io(std::io::Error),
}

impl fmt::Display for ModelError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelError::InvalidConfig(msg) => write!(f, "invalid model config: {msg}"),
            ModelError::MissingTargetLabels => {
                write!(f, "alpha = 1 requires word labels on the target batch")
            }
            ModelError::EmptyBatch(which) => write!(f, "{which} batch is empty"),
            ModelError::Graph(e) => write!(f, "graph error: {e}"),
            ModelError::BadCheckpoint(msg) => write!(f, "bad checkpoint: {msg}"),
            ModelError::Io(e) => write!(f, "i/o error: {e}"),
        }
    }
}

impl std::error::Error for ModelError {}

impl From<GraphError> for ModelError {
    fn from(e: GraphError) -> Self {
        ModelError::Graph(e)
    }
}

impl From<std::io::Error> for ModelError {
    fn from(e: std::io::Error) -> Self {
        ModelError::Io(e)
    }
}

// ── parameter store ──────────────────────────────────────────────────

/// Named parameter tensors in insertion order. Ordering is part of the
/// checkpoint format and of run determinism, so it is fixed at build time.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    entries: Vec<(String, Tensor)>,
    index: BTreeMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn insert(&mut self, name: &str, tensor: Tensor) {
        assert!(
            self.index.insert(name.to_string(), self.entries.len()).is_none(),
            "duplicate parameter {name}"
        );
        self.entries.push((name.to_string(), tensor));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.entries[i].1)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index.get(name).map(|&i| &mut self.entries[i].1)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.entries.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// FNV-1a over names, shapes and little-endian payloads; equal digests
    /// mean bit-identical parameters in identical order.
    pub fn digest(&self) -> u64 {
        let mut bytes = Vec::new();
        for (name, t) in &self.entries {
            bytes.extend_from_slice(name.as_bytes());
            bytes.push(0);
            for &d in t.shape() {
                bytes.extend_from_slice(&(d as u64).to_le_bytes());
            }
            bytes.extend_from_slice(&t.le_bytes());
        }
        fnv1a(&bytes)
    }
}

// ── configuration ────────────────────────────────────────────────────

/// Architecture hyperparameters for the shared extractor and heads.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub input_length: usize,
    /// Exactly seven convolution layers.
    pub conv_layers: Vec<Conv1dSpec>,
    /// Whether a max-pool follows each conv layer.
    pub pool_after: Vec<bool>,
    pub pool_window: usize,
    pub pool_stride: usize,
    pub hidden_dim: usize,
    pub num_classes: usize,
    /// Sigmoid on the hidden dense layer before the linear 10-way head.
    pub sigmoid_hidden: bool,
}

fn conv_chain(channels: &[usize], kernels: &[usize], stride: usize) -> Vec<Conv1dSpec> {
    let mut layers = Vec::with_capacity(channels.len());
    let mut in_ch = 1;
    for (&out_ch, &k) in channels.iter().zip(kernels) {
        layers.push(Conv1dSpec {
            in_channels: in_ch,
            out_channels: out_ch,
            kernel_size: k,
            stride,
            padding: 0,
        });
        in_ch = out_ch;
    }
    layers
}

impl ModelConfig {
    /// Full-scale architecture for 16 kHz word-length audio (1.5 s).
    pub fn paper_scale() -> ModelConfig {
        ModelConfig {
            input_length: 24000,
            conv_layers: conv_chain(
                &[16, 32, 32, 64, 64, 128, 128],
                &[64, 32, 16, 8, 8, 4, 4],
                2,
            ),
            pool_after: vec![false; 7],
            pool_window: 2,
            pool_stride: 2,
            hidden_dim: 128,
            num_classes: 10,
            sigmoid_hidden: true,
        }
    }

    /// Scaled-down architecture for the synthetic corpus (2 kHz, 0.4 s).
    /// Same seven-layer shape; sized so a full experiment table fits in a
    /// few CPU-minutes rather than hours.
    pub fn desk_scale() -> ModelConfig {
        ModelConfig {
            input_length: 800,
            conv_layers: conv_chain(&[4, 6, 8, 8, 10, 12, 16], &[8, 8, 6, 4, 4, 3, 3], 2),
            pool_after: vec![false; 7],
            pool_window: 2,
            pool_stride: 2,
            hidden_dim: 32,
            num_classes: 10,
            sigmoid_hidden: true,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.conv_layers.len() != 7 {
            return Err(ModelError::InvalidConfig(format!(
                "expected exactly 7 conv layers, got {}",
                self.conv_layers.len()
            )));
        }
        if self.pool_after.len() != self.conv_layers.len() {
            return Err(ModelError::InvalidConfig(
                "pool_after must have one flag per conv layer".to_string(),
            ));
        }
        if self.num_classes != 10 {
            return Err(ModelError::InvalidConfig(format!(
                "num_classes must be 10, got {}",
                self.num_classes
            )));
        }
        if self.hidden_dim == 0 {
            return Err(ModelError::InvalidConfig("hidden_dim must be positive".to_string()));
        }
        let mut in_ch = 1;
        for (i, spec) in self.conv_layers.iter().enumerate() {
            if spec.in_channels != in_ch {
                return Err(ModelError::InvalidConfig(format!(
                    "conv layer {} expects in_channels {}, got {}",
                    i + 1,
                    in_ch,
                    spec.in_channels
                )));
            }
            in_ch = spec.out_channels;
        }
        match self.feature_len() {
            Some(len) if len >= 1 => Ok(()),
            _ => Err(ModelError::InvalidConfig(
                "feature length collapses to zero for this input length".to_string(),
            )),
        }
    }

    /// Temporal length remaining after all conv and pool layers.
    pub fn feature_len(&self) -> Option<usize> {
        let mut len = self.input_length;
        for (spec, &pool) in self.conv_layers.iter().zip(&self.pool_after) {
            len = spec.output_len(len)?;
            if pool {
                if self.pool_window > len || self.pool_stride == 0 {
                    return None;
                }
                len = (len - self.pool_window) / self.pool_stride + 1;
            }
        }
        Some(len)
    }

    /// Channel count after the last conv layer; the feature dimension seen
    /// by both heads after global averaging over time.
    pub fn feature_dim(&self) -> usize {
        self.conv_layers.last().map(|s| s.out_channels).unwrap_or(0)
    }

    /// Canonical `key = value` rendering; the checkpoint digest is FNV-1a
    /// over these bytes.
    pub fn canonical_text(&self) -> String {
        let join = |xs: &[usize]| {
            xs.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
        };
        let channels: Vec<usize> = self.conv_layers.iter().map(|s| s.out_channels).collect();
        let kernels: Vec<usize> = self.conv_layers.iter().map(|s| s.kernel_size).collect();
        let strides: Vec<usize> = self.conv_layers.iter().map(|s| s.stride).collect();
        let paddings: Vec<usize> = self.conv_layers.iter().map(|s| s.padding).collect();
        let pools: Vec<usize> = self.pool_after.iter().map(|&b| b as usize).collect();
        format!(
            "input_length = {}\nconv_channels = {}\nconv_kernels = {}\nconv_strides = {}\nconv_paddings = {}\npool_after = {}\npool_window = {}\npool_stride = {}\nhidden_dim = {}\nnum_classes = {}\nsigmoid_hidden = {}\n",
            self.input_length,
            join(&channels),
            join(&kernels),
            join(&strides),
            join(&paddings),
            join(&pools),
            self.pool_window,
            self.pool_stride,
            self.hidden_dim,
            self.num_classes,
            self.sigmoid_hidden as usize,
        )
    }

    pub fn digest(&self) -> u64 {
        fnv1a(self.canonical_text().as_bytes())
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::paper_scale()
    }
}

// ── batches ──────────────────────────────────────────────────────────

/// One mini-batch of fixed-length waveforms with optional word labels and
/// per-utterance domain labels (0 healthy, 1 dysarthric).
#[derive(Debug, Clone)]
pub struct Minibatch {
    pub waveforms: Tensor,
    pub labels: Option<Vec<usize>>,
    pub domains: Vec<usize>,
}

impl Minibatch {
    pub fn batch_size(&self) -> usize {
        self.waveforms.shape()[0]
    }
}

// ── initialization ───────────────────────────────────────────────────

fn glorot(rng: &mut SplitMix64, shape: &[usize], fan_in: usize, fan_out: usize) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.uniform(-bound, bound)).collect())
}

fn init_extractor_and_label(config: &ModelConfig, rng: &mut SplitMix64) -> ParamStore {
    let mut params = ParamStore::new();
    for (i, spec) in config.conv_layers.iter().enumerate() {
        let fan_in = spec.in_channels * spec.kernel_size;
        let fan_out = spec.out_channels * spec.kernel_size;
        params.insert(
            &format!("feat.conv{}.w", i + 1),
            glorot(rng, &spec.weight_shape(), fan_in, fan_out),
        );
        params.insert(&format!("feat.conv{}.b", i + 1), Tensor::zeros(&[spec.out_channels]));
    }
    // The dense+sigmoid stage belongs to the shared trunk: both heads read
    // its bounded output, and the label head is a single linear layer (the
    // classifier that SA fine-tuning unfreezes). Bounded shared features
    // also keep the adversarial game from running away: an extractor
    // maximizing the domain loss on an unbounded feature space can push
    // feature norms to infinity instead of learning invariance.
    let f = config.feature_dim();
    let h = config.hidden_dim;
    let c = config.num_classes;
    params.insert("feat.hidden.w", glorot(rng, &[f, h], f, h));
    params.insert("feat.hidden.b", Tensor::zeros(&[h]));
    params.insert("label.out.w", glorot(rng, &[h, c], h, c));
    params.insert("label.out.b", Tensor::zeros(&[c]));
    params
}

// The domain head starts at zero: its logits are neutral and it sends no
// gradient into the shared trunk until it has learned something to
// discriminate with, so label learning starts unimpeded and the
// adversarial pressure ramps in as the head trains, with λ constant.
// (A Glorot-initialized head wins the minimax race at fixed λ and crushes
// the extractor into a constant-feature collapse before the label task
// can shape it.) Zero weights are not a symmetry trap here: the head's
// own gradient (p − y)·fᵀ is nonzero from the first step.
fn init_domain_head(config: &ModelConfig, params: &mut ParamStore) {
    let h = config.hidden_dim;
    params.insert("domain.out.w", Tensor::zeros(&[h, 2]));
    params.insert("domain.out.b", Tensor::zeros(&[2]));
}

// ── graph assembly ───────────────────────────────────────────────────

fn bind_params(g: &mut Graph, params: &ParamStore) -> Vec<(String, NodeId)> {
    params.iter().map(|(name, t)| (name.to_string(), g.parameter(t.clone()))).collect()
}

fn node_of(ids: &[(String, NodeId)], name: &str) -> NodeId {
    ids.iter().find(|(n, _)| n == name).map(|&(_, id)| id).expect("parameter present")
}

/// Shared feature extractor: seven conv→relu (optionally pooled) stages,
/// a global average over time, then the dense stage with its sigmoid.
/// [batch, 1, len] → [batch, hidden_dim] in (0, 1) when sigmoid_hidden.
fn extractor(
    g: &mut Graph,
    ids: &[(String, NodeId)],
    config: &ModelConfig,
    x: NodeId,
) -> Result<NodeId, GraphError> {
    let mut h = x;
    for (i, spec) in config.conv_layers.iter().enumerate() {
        let w = node_of(ids, &format!("feat.conv{}.w", i + 1));
        let b = node_of(ids, &format!("feat.conv{}.b", i + 1));
        h = nn::conv1d(g, h, w, b, spec)?;
        h = g.relu(h);
        if config.pool_after[i] {
            h = nn::maxpool1d(g, h, config.pool_window, config.pool_stride)?;
        }
    }
    let pooled = g.mean(h)?;
    let hw = node_of(ids, "feat.hidden.w");
    let hb = node_of(ids, "feat.hidden.b");
    let mut feats = nn::dense(g, pooled, hw, hb)?;
    if config.sigmoid_hidden {
        feats = g.sigmoid(feats);
    }
    Ok(feats)
}

/// The linear 10-way classifier.
fn label_head(
    g: &mut Graph,
    ids: &[(String, NodeId)],
    _config: &ModelConfig,
    feats: NodeId,
) -> Result<NodeId, GraphError> {
    let ow = node_of(ids, "label.out.w");
    let ob = node_of(ids, "label.out.b");
    nn::dense(g, feats, ow, ob)
}

/// GRL followed by one dense layer to two domain logits.
fn domain_head(
    g: &mut Graph,
    ids: &[(String, NodeId)],
    feats: NodeId,
    lambda: f64,
) -> Result<NodeId, GraphError> {
    let reversed = nn::grl(g, feats, &GrlSpec { lambda });
    let w = node_of(ids, "domain.out.w");
    let b = node_of(ids, "domain.out.b");
    nn::dense(g, reversed, w, b)
}

fn check_waveforms(t: &Tensor, input_length: usize, which: &'static str) -> Result<(), ModelError> {
    let s = t.shape();
    if s.len() != 3 || s[1] != 1 || s[2] != input_length {
        return Err(ModelError::Graph(GraphError::ShapeMismatch(format!(
            "{which} waveforms must be [batch, 1, {input_length}], got {s:?}"
        ))));
    }
    if s[0] == 0 {
        return Err(ModelError::EmptyBatch(which));
    }
    Ok(())
}

// ── baseline model ───────────────────────────────────────────────────

/// Extractor plus label head only; the SI/SD/SA scenarios train this.
#[derive(Debug, Clone)]
pub struct BaselineModel {
    pub config: ModelConfig,
    pub params: ParamStore,
}

/// A training graph for one labeled batch.
pub struct BaselineGraph {
    pub graph: Graph,
    pub input: NodeId,
    pub logits: NodeId,
    pub loss: NodeId,
    pub param_ids: Vec<(String, NodeId)>,
}

/// Builds the baseline with parameters drawn deterministically from the
/// seed; identical seeds yield bit-identical parameters.
pub fn build_baseline(config: &ModelConfig, seed: u64) -> Result<BaselineModel, ModelError> {
    config.validate()?;
    let mut rng = SplitMix64::new(derive_seed(seed, &[0x6d6f64656c]));
    let params = init_extractor_and_label(config, &mut rng);
    Ok(BaselineModel { config: config.clone(), params })
}

impl BaselineModel {
    /// Digit logits for a waveform tensor [n, 1, input_length].
    pub fn logits(&self, waveforms: &Tensor) -> Result<Tensor, ModelError> {
        check_waveforms(waveforms, self.config.input_length, "eval")?;
        let mut g = Graph::new();
        let ids = bind_params(&mut g, &self.params);
        let x = g.input(waveforms.shape());
        let feats = extractor(&mut g, &ids, &self.config, x)?;
        let logits = label_head(&mut g, &ids, &self.config, feats)?;
        let mut bindings = Bindings::new();
        bindings.insert(x, waveforms.clone());
        g.forward(&bindings)?;
        Ok(g.value_of(logits).unwrap().clone())
    }

    /// Builds the label cross-entropy training graph for one batch.
    pub fn loss_graph(&self, batch: &Minibatch) -> Result<BaselineGraph, ModelError> {
        check_waveforms(&batch.waveforms, self.config.input_length, "train")?;
        let labels = batch.labels.as_ref().ok_or(ModelError::MissingTargetLabels)?;
        let mut g = Graph::new();
        let ids = bind_params(&mut g, &self.params);
        let x = g.input(batch.waveforms.shape());
        let feats = extractor(&mut g, &ids, &self.config, x)?;
        let logits = label_head(&mut g, &ids, &self.config, feats)?;
        let loss = nn::softmax_cross_entropy(&mut g, logits, labels)?;
        Ok(BaselineGraph { graph: g, input: x, logits, loss, param_ids: ids })
    }

    pub fn digest(&self) -> u64 {
        self.params.digest()
    }
}

// ── adversarial model ────────────────────────────────────────────────

/// Shared extractor with a label head and a gradient-reversed domain head.
/// λ > 0 is the adversarial configuration, λ < 0 the multi-task one, and
/// α enables the target-domain label loss.
#[derive(Debug, Clone)]
pub struct DannModel {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub lambda: f64,
    pub alpha: bool,
}

/// Per-part values of the adversarial objective for one source/target
/// batch pair. `total` is the E-form value; the invariant
/// `total = label_source + α·label_target − λ·(domain_source + domain_target)`
/// always holds.
#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    pub label_source: f64,
    /// None when α = 0: target word labels are ignored even if present.
    pub label_target: Option<f64>,
    pub domain_source: f64,
    pub domain_target: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn total_from_parts(
        label_source: f64,
        label_target: Option<f64>,
        domain_source: f64,
        domain_target: f64,
        alpha: bool,
        lambda: f64,
    ) -> f64 {
        let target_term = if alpha { label_target.unwrap_or(0.0) } else { 0.0 };
        label_source + target_term - lambda * (domain_source + domain_target)
    }
}

/// Training graph over one source/target batch pair.
pub struct DannGraph {
    pub graph: Graph,
    pub source_input: NodeId,
    pub target_input: NodeId,
    /// Node to backpropagate: label terms plus unit-weighted GRL'd domain
    /// terms (see the module docs).
    pub train_node: NodeId,
    /// E-form objective value for reporting; never backpropagated.
    pub objective_node: NodeId,
    pub label_source: NodeId,
    pub label_target: Option<NodeId>,
    pub domain_source: NodeId,
    pub domain_target: NodeId,
    /// Label terms alone (L_y^s, plus L_y^t when α = 1).
    pub label_sum: NodeId,
    /// Sum of the two domain losses; isolates domain-only gradients.
    pub domain_sum: NodeId,
    pub param_ids: Vec<(String, NodeId)>,
}

/// Builds the two-headed model. The extractor and label head use the same
/// seed stream as [`build_baseline`], so they start from identical values.
pub fn build_dann(
    config: &ModelConfig,
    lambda: f64,
    alpha: bool,
    seed: u64,
) -> Result<DannModel, ModelError> {
    config.validate()?;
    let mut rng = SplitMix64::new(derive_seed(seed, &[0x6d6f64656c]));
    let mut params = init_extractor_and_label(config, &mut rng);
    init_domain_head(config, &mut params);
    Ok(DannModel { config: config.clone(), params, lambda, alpha })
}

impl DannModel {
    pub fn logits(&self, waveforms: &Tensor) -> Result<Tensor, ModelError> {
        check_waveforms(waveforms, self.config.input_length, "eval")?;
        let mut g = Graph::new();
        let ids = bind_params(&mut g, &self.params);
        let x = g.input(waveforms.shape());
        let feats = extractor(&mut g, &ids, &self.config, x)?;
        let logits = label_head(&mut g, &ids, &self.config, feats)?;
        let mut bindings = Bindings::new();
        bindings.insert(x, waveforms.clone());
        g.forward(&bindings)?;
        Ok(g.value_of(logits).unwrap().clone())
    }

    /// Builds the paired training graph. Source utterances must carry word
    /// labels; target utterances must when α = 1.
    pub fn adversarial_graph(
        &self,
        source: &Minibatch,
        target: &Minibatch,
    ) -> Result<DannGraph, ModelError> {
        check_waveforms(&source.waveforms, self.config.input_length, "source")?;
        check_waveforms(&target.waveforms, self.config.input_length, "target")?;
        let source_labels = source.labels.as_ref().ok_or(ModelError::MissingTargetLabels)?;
        if self.alpha && target.labels.is_none() {
            return Err(ModelError::MissingTargetLabels);
        }

        let mut g = Graph::new();
        let ids = bind_params(&mut g, &self.params);

        let x_s = g.input(source.waveforms.shape());
        let feats_s = extractor(&mut g, &ids, &self.config, x_s)?;
        let logits_ys = label_head(&mut g, &ids, &self.config, feats_s)?;
        let l_ys = nn::softmax_cross_entropy(&mut g, logits_ys, source_labels)?;
        let logits_ds = domain_head(&mut g, &ids, feats_s, self.lambda)?;
        let l_ds = nn::domain_cross_entropy(&mut g, logits_ds, &source.domains)?;

        let x_t = g.input(target.waveforms.shape());
        let feats_t = extractor(&mut g, &ids, &self.config, x_t)?;
        let l_yt = if self.alpha {
            let logits_yt = label_head(&mut g, &ids, &self.config, feats_t)?;
            Some(nn::softmax_cross_entropy(&mut g, logits_yt, target.labels.as_ref().unwrap())?)
        } else {
            None
        };
        let logits_dt = domain_head(&mut g, &ids, feats_t, self.lambda)?;
        let l_dt = nn::domain_cross_entropy(&mut g, logits_dt, &target.domains)?;

        let domain_sum = g.add(l_ds, l_dt)?;
        let label_sum = match l_yt {
            Some(t) => g.add(l_ys, t)?,
            None => l_ys,
        };
        let train_node = g.add(label_sum, domain_sum)?;

        // E-form value: label terms − λ·(domain terms). Shares the loss
        // subgraphs but is never the backpropagation root.
        let neg = g.scale(domain_sum, -self.lambda);
        let objective_node = g.add(label_sum, neg)?;

        Ok(DannGraph {
            graph: g,
            source_input: x_s,
            target_input: x_t,
            train_node,
            objective_node,
            label_source: l_ys,
            label_target: l_yt,
            domain_source: l_ds,
            domain_target: l_dt,
            label_sum,
            domain_sum,
            param_ids: ids,
        })
    }

    /// Forward-only evaluation of the objective for one batch pair.
    pub fn adversarial_loss(
        &self,
        source: &Minibatch,
        target: &Minibatch,
    ) -> Result<LossBreakdown, ModelError> {
        let mut built = self.adversarial_graph(source, target)?;
        let mut bindings = Bindings::new();
        bindings.insert(built.source_input, source.waveforms.clone());
        bindings.insert(built.target_input, target.waveforms.clone());
        built.graph.forward(&bindings)?;
        Ok(breakdown_of(&built))
    }

    pub fn digest(&self) -> u64 {
        self.params.digest()
    }
}

/// Reads the loss parts out of an evaluated adversarial graph.
pub fn breakdown_of(built: &DannGraph) -> LossBreakdown {
    let at = |id: NodeId| built.graph.value_of(id).expect("forward ran").item();
    LossBreakdown {
        label_source: at(built.label_source),
        label_target: built.label_target.map(at),
        domain_source: at(built.domain_source),
        domain_target: at(built.domain_target),
        total: at(built.objective_node),
    }
}

/// Converts a node-id gradient map into a name-keyed one.
pub fn grads_by_name(
    param_ids: &[(String, NodeId)],
    grads: &BTreeMap<NodeId, Tensor>,
) -> BTreeMap<String, Tensor> {
    param_ids
        .iter()
        .map(|(name, id)| (name.clone(), grads[id].clone()))
        .collect()
}

// ── adaptation freeze ────────────────────────────────────────────────

/// Which parameters fine-tuning may update.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnfreezeSet {
    /// Last convolution layer plus the label head.
    LastConvAndLabelHead,
    /// Degenerate view equal to ordinary training.
    All,
}

/// A view marking parameters as trainable; everything else stays
/// bit-identical through any number of optimizer steps.
#[derive(Debug, Clone)]
pub struct FreezeMask {
    trainable: std::collections::BTreeSet<String>,
}

impl FreezeMask {
    pub fn is_trainable(&self, name: &str) -> bool {
        self.trainable.contains(name)
    }

    pub fn trainable_names(&self) -> impl Iterator<Item = &str> {
        self.trainable.iter().map(|s| s.as_str())
    }
}

pub fn freeze_for_adaptation(model: &BaselineModel, unfreeze: UnfreezeSet) -> FreezeMask {
    let last = model.config.conv_layers.len();
    let trainable = model
        .params
        .iter()
        .map(|(name, _)| name.to_string())
        .filter(|name| match unfreeze {
            UnfreezeSet::All => true,
            UnfreezeSet::LastConvAndLabelHead => {
                name.starts_with(&format!("feat.conv{last}.")) || name.starts_with("label.")
            }
        })
        .collect();
    FreezeMask { trainable }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn desk() -> ModelConfig {
        ModelConfig::desk_scale()
    }

    fn batch(config: &ModelConfig, n: usize, seed: u64, domain: usize) -> Minibatch {
        let mut rng = SplitMix64::new(seed);
        let len = config.input_length;
        let data: Vec<f64> = (0..n * len).map(|_| rng.uniform(-1.0, 1.0)).collect();
        Minibatch {
            waveforms: Tensor::from_vec(&[n, 1, len], data),
            labels: Some((0..n).map(|i| i % 10).collect()),
            domains: vec![domain; n],
        }
    }

    #[test]
    fn build_is_deterministic() {
        let a = build_baseline(&desk(), 7).unwrap();
        let b = build_baseline(&desk(), 7).unwrap();
        assert_eq!(a.digest(), b.digest());
        let c = build_baseline(&desk(), 8).unwrap();
        assert_ne!(a.digest(), c.digest());
    }

    #[test]
    fn paper_scale_config_is_valid() {
        let config = ModelConfig::paper_scale();
        config.validate().unwrap();
        assert_eq!(config.feature_len(), Some(183));
        assert_eq!(config.feature_dim(), 128);
    }

    #[test]
    fn zero_waveforms_give_identical_logit_rows() {
        let config = desk();
        let model = build_baseline(&config, 7).unwrap();
        let x = Tensor::zeros(&[2, 1, config.input_length]);
        let logits = model.logits(&x).unwrap();
        let (a, b) = logits.data().split_at(10);
        assert_eq!(a, b);
    }

    #[test]
    fn logits_shape_is_batch_by_ten() {
        let config = desk();
        let model = build_baseline(&config, 7).unwrap();
        let x = Tensor::zeros(&[32, 1, config.input_length]);
        let logits = model.logits(&x).unwrap();
        assert_eq!(logits.shape(), &[32, 10]);
    }

    #[test]
    fn invalid_config_is_rejected() {
        let mut config = desk();
        config.input_length = 16; // collapses before layer 7
        assert!(matches!(build_baseline(&config, 1), Err(ModelError::InvalidConfig(_))));

        let mut config = desk();
        config.conv_layers.pop();
        config.pool_after.pop();
        assert!(matches!(build_baseline(&config, 1), Err(ModelError::InvalidConfig(_))));
    }

    #[test]
    fn dann_shares_extractor_initialization_with_baseline() {
        let config = desk();
        let baseline = build_baseline(&config, 7).unwrap();
        let dann = build_dann(&config, 1.5, true, 7).unwrap();
        for (name, t) in baseline.params.iter() {
            assert_eq!(Some(t), dann.params.get(name), "{name} differs");
        }
        assert!(dann.params.get("domain.out.w").is_some());
    }

    #[test]
    fn parameter_prefixes_are_disjoint() {
        let dann = build_dann(&desk(), 1.5, true, 7).unwrap();
        for (name, _) in dann.params.iter() {
            let prefixes = ["feat.", "label.", "domain."];
            assert_eq!(prefixes.iter().filter(|p| name.starts_with(**p)).count(), 1);
        }
    }

    #[test]
    fn total_from_parts_examples() {
        // direct substitutions into the objective
        let t = LossBreakdown::total_from_parts(0.5, Some(0.7), 0.6, 0.8, true, 1.5);
        assert!((t - -0.9).abs() < 1e-15);
        let t = LossBreakdown::total_from_parts(0.5, Some(0.7), 0.6, 0.8, false, 1.5);
        assert!((t - -1.6).abs() < 1e-15);
        let t = LossBreakdown::total_from_parts(0.5, Some(0.7), 0.6, 0.8, true, 0.0);
        assert!((t - 1.2).abs() < 1e-15);
    }

    #[test]
    fn objective_node_matches_hand_formula() {
        let config = desk();
        for (lambda, alpha, seed) in [(1.5, true, 1), (-0.5, false, 2), (0.7, true, 3)] {
            let model = build_dann(&config, lambda, alpha, seed).unwrap();
            let source = batch(&config, 3, 10 + seed, 0);
            let target = batch(&config, 2, 20 + seed, 1);
            let b = model.adversarial_loss(&source, &target).unwrap();
            let hand = LossBreakdown::total_from_parts(
                b.label_source,
                b.label_target,
                b.domain_source,
                b.domain_target,
                alpha,
                lambda,
            );
            assert!((b.total - hand).abs() < 1e-12, "{} vs {}", b.total, hand);
        }
    }

    #[test]
    fn alpha_zero_ignores_target_labels_in_gradients() {
        let config = desk();
        let model = build_dann(&config, 1.5, false, 5).unwrap();
        let source = batch(&config, 3, 31, 0);
        let mut target = batch(&config, 3, 32, 1);

        let run = |target: &Minibatch| {
            let mut built = model.adversarial_graph(&source, target).unwrap();
            let mut bindings = Bindings::new();
            bindings.insert(built.source_input, source.waveforms.clone());
            bindings.insert(built.target_input, target.waveforms.clone());
            built.graph.forward(&bindings).unwrap();
            let grads = built.graph.backward(built.train_node).unwrap();
            grads_by_name(&built.param_ids, &grads)
        };

        let before = run(&target);
        target.labels = Some(vec![9, 9, 9]); // corrupted
        let after = run(&target);
        for (name, g) in &before {
            assert_eq!(g.data(), after[name].data(), "{name} gradient changed");
        }
        // breakdown reports no target label loss under α = 0
        let b = model.adversarial_loss(&source, &target).unwrap();
        assert_eq!(b.label_target, None);
    }

    #[test]
    fn lambda_zero_kills_domain_gradients_into_extractor() {
        let config = desk();
        let model = build_dann(&config, 0.0, true, 6).unwrap();
        let source = batch(&config, 3, 41, 0);
        let target = batch(&config, 2, 42, 1);
        let mut built = model.adversarial_graph(&source, &target).unwrap();
        let mut bindings = Bindings::new();
        bindings.insert(built.source_input, source.waveforms.clone());
        bindings.insert(built.target_input, target.waveforms.clone());
        built.graph.forward(&bindings).unwrap();
        // isolate the domain contribution by backpropagating the domain sum
        let grads = built.graph.backward(built.domain_sum).unwrap();
        let named = grads_by_name(&built.param_ids, &grads);
        for (name, g) in &named {
            if name.starts_with("feat.") {
                assert!(g.data().iter().all(|&v| v == 0.0), "{name} has nonzero grad");
            }
        }
        assert!(named["domain.out.w"].data().iter().any(|&v| v != 0.0));
    }

    #[test]
    fn grl_gradient_direction_is_minus_lambda() {
        // Power-of-two λ makes the scaling exact; a non-dyadic λ is checked
        // to 1e-12 relative.
        let config = desk();
        let source = batch(&config, 2, 51, 0);
        let target = batch(&config, 2, 52, 1);

        let domain_grads = |lambda: f64| {
            let model = build_dann(&config, lambda, false, 9).unwrap();
            let mut built = model.adversarial_graph(&source, &target).unwrap();
            let mut bindings = Bindings::new();
            bindings.insert(built.source_input, source.waveforms.clone());
            bindings.insert(built.target_input, target.waveforms.clone());
            built.graph.forward(&bindings).unwrap();
            let grads = built.graph.backward(built.domain_sum).unwrap();
            grads_by_name(&built.param_ids, &grads)
        };

        // "without grl" reference: λ = −1 makes the grl a unit pass-through
        let reference = domain_grads(-1.0);
        let exact = domain_grads(2.0);
        for (name, g) in &exact {
            if name.starts_with("feat.") {
                for (a, r) in g.data().iter().zip(reference[name].data()) {
                    assert_eq!(*a, -2.0 * r, "{name}");
                }
            } else if name.starts_with("domain.") {
                assert_eq!(g.data(), reference[name].data(), "{name}");
            }
        }
        let close = domain_grads(1.5);
        for (name, g) in &close {
            if name.starts_with("feat.") {
                for (a, r) in g.data().iter().zip(reference[name].data()) {
                    let want = -1.5 * r;
                    assert!(
                        (a - want).abs() <= 1e-12 * want.abs().max(1.0),
                        "{name}: {a} vs {want}"
                    );
                }
            }
        }
    }

    #[test]
    fn freeze_mask_selects_last_conv_and_linear_classifier() {
        let model = build_baseline(&desk(), 7).unwrap();
        let mask = freeze_for_adaptation(&model, UnfreezeSet::LastConvAndLabelHead);
        assert!(mask.is_trainable("feat.conv7.w"));
        assert!(mask.is_trainable("feat.conv7.b"));
        assert!(mask.is_trainable("label.out.w"));
        assert!(mask.is_trainable("label.out.b"));
        assert!(!mask.is_trainable("feat.hidden.w"));
        for i in 1..=6 {
            assert!(!mask.is_trainable(&format!("feat.conv{i}.w")));
        }
        let all = freeze_for_adaptation(&model, UnfreezeSet::All);
        assert_eq!(all.trainable_names().count(), model.params.len());
    }

    #[test]
    fn missing_target_labels_under_alpha_one() {
        let config = desk();
        let model = build_dann(&config, 1.5, true, 7).unwrap();
        let source = batch(&config, 2, 61, 0);
        let mut target = batch(&config, 2, 62, 1);
        target.labels = None;
        assert!(matches!(
            model.adversarial_loss(&source, &target),
            Err(ModelError::MissingTargetLabels)
        ));
    }

    #[test]
    fn empty_batch_is_rejected() {
        let config = desk();
        let model = build_dann(&config, 1.5, false, 7).unwrap();
        let source = batch(&config, 2, 71, 0);
        let empty = Minibatch {
            waveforms: Tensor::zeros(&[0, 1, config.input_length]),
            labels: Some(vec![]),
            domains: vec![],
        };
        assert!(matches!(
            model.adversarial_loss(&empty, &source),
            Err(ModelError::EmptyBatch("source"))
        ));
        assert!(matches!(
            model.adversarial_loss(&source, &empty),
            Err(ModelError::EmptyBatch("target"))
        ));
    }
}
