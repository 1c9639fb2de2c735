//! The experiment harness: mini-batch training with early stopping, the
//! five scenario runners, three-rotation averaging, and the speaker ×
//! scenario table driver.
//!
//! Every run is deterministic in its seed: parameter initialization, batch
//! shuffles and the synthetic corpus all derive from it through fixed
//! stream paths. Independent scenario runs execute in parallel; results
//! are assembled in fixed speaker order regardless of completion order.

pub mod adam;

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use rayon::prelude::*;

use crate::corpus::split::scenario_split;
pub use crate::corpus::split::{ScenarioKind, ScenarioSpec, SplitOptions};
use crate::corpus::{Corpus, CorpusError, Severity};
use crate::model::{
    build_baseline, build_dann, freeze_for_adaptation, grads_by_name, BaselineModel, DannModel,
    FreezeMask, Minibatch, ModelConfig, ModelError, UnfreezeSet,
};
use crate::report::{self, ReportError};
use crate::rng::{derive_seed, SplitMix64};
use crate::tensor::Tensor;

use adam::{adam_step, sgd_step, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};

#[derive(Debug)]
pub enum ExperimentError {
    EmptySplit(&'static str),
    Invalid(String),
    Model(ModelError),
    Corpus(CorpusError),
    Report(ReportError),
    Io(std::io::Error),
}

impl fmt::Display for ExperimentError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExperimentError::EmptySplit(which) => write!(f, "{which} set is empty"),
            ExperimentError::Invalid(msg) => write!(f, "{msg}"),
            ExperimentError::Model(e) => write!(f, "{e}"),
            ExperimentError::Corpus(e) => write!(f, "{e}"),
            ExperimentError::Report(e) => write!(f, "{e}"),
            ExperimentError::Io(e) => write!(f, "i/o error: {e}"),
        }
    }
}

impl std::error::Error for ExperimentError {}

impl From<ModelError> for ExperimentError {
    fn from(e: ModelError) -> Self {
        ExperimentError::Model(e)
    }
}

impl From<crate::autodiff::GraphError> for ExperimentError {
    fn from(e: crate::autodiff::GraphError) -> Self {
        ExperimentError::Model(ModelError::Graph(e))
    }
}

impl From<CorpusError> for ExperimentError {
    fn from(e: CorpusError) -> Self {
        ExperimentError::Corpus(e)
    }
}

impl From<ReportError> for ExperimentError {
    fn from(e: ReportError) -> Self {
        ExperimentError::Report(e)
    }
}

impl From<std::io::Error> for ExperimentError {
    fn from(e: std::io::Error) -> Self {
        ExperimentError::Io(e)
    }
}

// ── configuration ────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Optimizer {
    Adam,
    Sgd,
}

impl Optimizer {
    pub fn parse(s: &str) -> Option<Optimizer> {
        match s {
            "adam" => Some(Optimizer::Adam),
            "sgd" => Some(Optimizer::Sgd),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Optimizer::Adam => "adam",
            Optimizer::Sgd => "sgd",
        }
    }
}

/// Training hyperparameters shared by every scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Learning rate of the SA fine-tuning phase.
    pub finetune_learning_rate: f64,
    pub optimizer: Optimizer,
    /// Early stopping patience on validation WRR; ties are not
    /// improvements.
    pub patience: usize,
    pub seed: u64,
    /// Domain-loss coefficient for the adversarial (DANN) scenarios; > 0.
    pub lambda: f64,
    /// Domain-loss coefficient for the multi-task scenarios; < 0.
    pub lambda_mtl: f64,
    /// Target-domain label loss gate when training a two-head model
    /// directly; scenario runners override it from the scenario.
    pub alpha: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 32,
            learning_rate: 1e-3,
            finetune_learning_rate: 1e-4,
            optimizer: Optimizer::Adam,
            patience: 5,
            seed: 7,
            lambda: 1.5,
            lambda_mtl: -0.5,
            alpha: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.epochs < 1 || self.batch_size < 1 || self.patience < 1 {
            return Err(ExperimentError::Invalid(
                "epochs, batch_size and patience must all be at least 1".to_string(),
            ));
        }
        Ok(())
    }
}

/// One column of the experiment table: a scenario kind plus, for the
/// two-head models, whether target word labels are used (α).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TableScenario {
    pub kind: ScenarioKind,
    pub supervised: bool,
}

impl TableScenario {
    pub fn label(&self) -> String {
        match self.kind {
            ScenarioKind::Si | ScenarioKind::Sd | ScenarioKind::Sa => self.kind.to_string(),
            ScenarioKind::Dann | ScenarioKind::Mtl => {
                format!("{}-{}", self.kind, if self.supervised { "sup" } else { "unsup" })
            }
        }
    }

    pub fn parse_label(s: &str) -> Option<TableScenario> {
        match s {
            "si" => Some(TableScenario { kind: ScenarioKind::Si, supervised: false }),
            "sd" => Some(TableScenario { kind: ScenarioKind::Sd, supervised: false }),
            "sa" => Some(TableScenario { kind: ScenarioKind::Sa, supervised: false }),
            "dann-unsup" => Some(TableScenario { kind: ScenarioKind::Dann, supervised: false }),
            "dann-sup" => Some(TableScenario { kind: ScenarioKind::Dann, supervised: true }),
            "mtl-unsup" => Some(TableScenario { kind: ScenarioKind::Mtl, supervised: false }),
            "mtl-sup" => Some(TableScenario { kind: ScenarioKind::Mtl, supervised: true }),
            _ => None,
        }
    }
}

// ── early stopping ───────────────────────────────────────────────────

#[derive(Debug, Clone, Copy)]
pub struct StopDecision {
    pub improved: bool,
    pub stop: bool,
}

/// Maximizes validation WRR; stops after `patience` consecutive epochs
/// without strict improvement.
#[derive(Debug)]
pub struct EarlyStopper {
    patience: usize,
    best: Option<f64>,
    best_epoch: usize,
    stale: usize,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> Self {
        EarlyStopper { patience, best: None, best_epoch: 0, stale: 0 }
    }

    pub fn observe(&mut self, epoch: usize, val_wrr: f64) -> StopDecision {
        let improved = self.best.map_or(true, |b| val_wrr > b);
        if improved {
            self.best = Some(val_wrr);
            self.best_epoch = epoch;
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        StopDecision { improved, stop: self.stale >= self.patience }
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best_val_wrr(&self) -> f64 {
        self.best.unwrap_or(0.0)
    }
}

// ── batching and evaluation ──────────────────────────────────────────

/// A seeded permutation of the ids, chunked; every id appears exactly
/// once per epoch, the final short chunk included.
fn epoch_order(ids: &[usize], seed: u64, stream: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = ids.to_vec();
    let mut rng = SplitMix64::new(derive_seed(seed, &[stream, epoch as u64]));
    rng.shuffle(&mut order);
    order
}

/// Assembles a mini-batch from corpus utterances.
pub fn minibatch(corpus: &Corpus, ids: &[usize], with_labels: bool) -> Minibatch {
    let len = corpus.input_length;
    let mut data = Vec::with_capacity(ids.len() * len);
    let mut labels = Vec::with_capacity(ids.len());
    let mut domains = Vec::with_capacity(ids.len());
    for &i in ids {
        let u = &corpus.utterances[i];
        data.extend_from_slice(&u.waveform);
        labels.push(u.digit);
        domains.push(u.domain);
    }
    Minibatch {
        waveforms: Tensor::from_vec(&[ids.len(), 1, len], data),
        labels: if with_labels { Some(labels) } else { None },
        domains,
    }
}

/// Anything that maps waveforms to digit logits.
pub trait Classifier {
    fn class_logits(&self, waveforms: &Tensor) -> Result<Tensor, ModelError>;
}

impl Classifier for BaselineModel {
    fn class_logits(&self, waveforms: &Tensor) -> Result<Tensor, ModelError> {
        self.logits(waveforms)
    }
}

impl Classifier for DannModel {
    fn class_logits(&self, waveforms: &Tensor) -> Result<Tensor, ModelError> {
        self.logits(waveforms)
    }
}

const EVAL_CHUNK: usize = 128;

/// Word recognition rate of argmax predictions over the given utterances.
pub fn evaluate_wrr(
    model: &impl Classifier,
    corpus: &Corpus,
    ids: &[usize],
) -> Result<f64, ExperimentError> {
    if ids.is_empty() {
        return Err(ExperimentError::EmptySplit("evaluation"));
    }
    let mut correct = 0usize;
    for chunk in ids.chunks(EVAL_CHUNK) {
        let mb = minibatch(corpus, chunk, false);
        let logits = model.class_logits(&mb.waveforms)?;
        let classes = logits.shape()[1];
        for (row, &id) in chunk.iter().enumerate() {
            let scores = &logits.data()[row * classes..(row + 1) * classes];
            let mut best = 0;
            for (c, &s) in scores.iter().enumerate() {
                if s > scores[best] {
                    best = c;
                }
            }
            let _ = row;
            if best == corpus.utterances[id].digit {
                correct += 1;
            }
        }
    }
    Ok(report::wrr(correct, ids.len())?)
}

// ── optimizer dispatch ───────────────────────────────────────────────

struct Stepper {
    optimizer: Optimizer,
    adam: AdamState,
    lr: f64,
}

impl Stepper {
    fn new(optimizer: Optimizer, lr: f64) -> Self {
        Stepper { optimizer, adam: AdamState::new(), lr }
    }

    fn apply(
        &mut self,
        params: &mut crate::model::ParamStore,
        grads: &BTreeMap<String, Tensor>,
    ) -> Result<(), ExperimentError> {
        match self.optimizer {
            Optimizer::Adam => adam_step(
                params,
                grads,
                &mut self.adam,
                self.lr,
                ADAM_BETA1,
                ADAM_BETA2,
                ADAM_EPS,
            ),
            Optimizer::Sgd => sgd_step(params, grads, self.lr),
        }
    }
}

fn apply_mask(
    grads: BTreeMap<String, Tensor>,
    mask: Option<&FreezeMask>,
) -> BTreeMap<String, Tensor> {
    match mask {
        None => grads,
        Some(m) => grads.into_iter().filter(|(name, _)| m.is_trainable(name)).collect(),
    }
}

// ── history ──────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean objective value over the epoch's steps (label loss for the
    /// baseline, the E-form total for the two-head models).
    pub train_loss: f64,
    pub label_source: f64,
    pub label_target: Option<f64>,
    pub domain_source: Option<f64>,
    pub domain_target: Option<f64>,
    pub val_wrr: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub history: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_val_wrr: f64,
}

// ── training loops ───────────────────────────────────────────────────

const STREAM_BASELINE: u64 = 10;
const STREAM_SOURCE: u64 = 10; // shared with baseline: same source order
const STREAM_TARGET: u64 = 11;
const STREAM_SA_HOLDOUT: u64 = 12;

/// Trains the baseline (or an SA fine-tune when `mask`/`lr_override` are
/// given) with early stopping on validation WRR; the model is left at the
/// best-validation epoch's weights.
pub fn train_baseline(
    model: &mut BaselineModel,
    train: &[usize],
    validation: &[usize],
    corpus: &Corpus,
    cfg: &TrainConfig,
    mask: Option<&FreezeMask>,
    lr_override: Option<f64>,
) -> Result<TrainOutcome, ExperimentError> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(ExperimentError::EmptySplit("train"));
    }
    if validation.is_empty() {
        return Err(ExperimentError::EmptySplit("validation"));
    }
    let mut stepper = Stepper::new(cfg.optimizer, lr_override.unwrap_or(cfg.learning_rate));
    let mut stopper = EarlyStopper::new(cfg.patience);
    let mut best_params = model.params.clone();
    let mut history = Vec::new();

    for epoch in 1..=cfg.epochs {
        let order = epoch_order(train, cfg.seed, STREAM_BASELINE, epoch);
        let mut consumed = 0usize;
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let mb = minibatch(corpus, chunk, true);
            let mut built = model.loss_graph(&mb)?;
            let mut bindings = crate::autodiff::Bindings::new();
            bindings.insert(built.input, mb.waveforms.clone());
            built.graph.forward(&bindings)?;
            let loss = built.graph.value_of(built.loss).unwrap().item();
            let grads = built.graph.backward(built.loss)?;
            let named = apply_mask(grads_by_name(&built.param_ids, &grads), mask);
            stepper.apply(&mut model.params, &named)?;
            loss_sum += loss * chunk.len() as f64;
            consumed += chunk.len();
        }
        debug_assert_eq!(consumed, train.len());
        let val_wrr = evaluate_wrr(model, corpus, validation)?;
        let train_loss = loss_sum / train.len() as f64;
        history.push(EpochStats {
            epoch,
            train_loss,
            label_source: train_loss,
            label_target: None,
            domain_source: None,
            domain_target: None,
            val_wrr,
        });
        let decision = stopper.observe(epoch, val_wrr);
        if decision.improved {
            best_params = model.params.clone();
        }
        if decision.stop {
            break;
        }
    }
    model.params = best_params;
    Ok(TrainOutcome {
        history,
        best_epoch: stopper.best_epoch(),
        best_val_wrr: stopper.best_val_wrr(),
    })
}

/// Target-stream batcher: a fresh seeded shuffle per epoch, re-shuffled
/// and recycled when exhausted; epoch length is the source stream's.
struct TargetStream<'a> {
    ids: &'a [usize],
    seed: u64,
    epoch: usize,
    cycle: u64,
    order: Vec<usize>,
    pos: usize,
}

impl<'a> TargetStream<'a> {
    fn new(ids: &'a [usize], seed: u64, epoch: usize) -> Self {
        let mut s = TargetStream { ids, seed, epoch, cycle: 0, order: Vec::new(), pos: 0 };
        s.reshuffle();
        s
    }

    fn reshuffle(&mut self) {
        self.order = self.ids.to_vec();
        let mut rng = SplitMix64::new(derive_seed(
            self.seed,
            &[STREAM_TARGET, self.epoch as u64, self.cycle],
        ));
        rng.shuffle(&mut self.order);
        self.cycle += 1;
        self.pos = 0;
    }

    fn next_batch(&mut self, size: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(size);
        while out.len() < size {
            if self.pos == self.order.len() {
                self.reshuffle();
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

/// Trains the two-head model on paired source/target mini-batches.
pub fn train_dann(
    model: &mut DannModel,
    source: &[usize],
    target: &[usize],
    validation: &[usize],
    corpus: &Corpus,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, ExperimentError> {
    cfg.validate()?;
    if source.is_empty() {
        return Err(ExperimentError::EmptySplit("source train"));
    }
    if target.is_empty() {
        return Err(ExperimentError::EmptySplit("target train"));
    }
    if validation.is_empty() {
        return Err(ExperimentError::EmptySplit("validation"));
    }
    let target_bs = cfg.batch_size.min(target.len());
    let mut stepper = Stepper::new(cfg.optimizer, cfg.learning_rate);
    let mut stopper = EarlyStopper::new(cfg.patience);
    let mut best_params = model.params.clone();
    let mut history = Vec::new();

    for epoch in 1..=cfg.epochs {
        let order = epoch_order(source, cfg.seed, STREAM_SOURCE, epoch);
        let mut targets = TargetStream::new(target, cfg.seed, epoch);
        let mut sums = [0.0f64; 5]; // total, l_ys, l_yt, l_ds, l_dt
        let mut steps = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let src = minibatch(corpus, chunk, true);
            let tgt_ids = targets.next_batch(target_bs);
            let tgt = minibatch(corpus, &tgt_ids, model.alpha);
            let mut built = model.adversarial_graph(&src, &tgt)?;
            let mut bindings = crate::autodiff::Bindings::new();
            bindings.insert(built.source_input, src.waveforms.clone());
            bindings.insert(built.target_input, tgt.waveforms.clone());
            built.graph.forward(&bindings)?;
            let breakdown = crate::model::breakdown_of(&built);
            let grads = built.graph.backward(built.train_node)?;
            let named = grads_by_name(&built.param_ids, &grads);
            stepper.apply(&mut model.params, &named)?;
            sums[0] += breakdown.total;
            sums[1] += breakdown.label_source;
            sums[2] += breakdown.label_target.unwrap_or(0.0);
            sums[3] += breakdown.domain_source;
            sums[4] += breakdown.domain_target;
            steps += 1;
        }
        let val_wrr = evaluate_wrr(model, corpus, validation)?;
        let n = steps as f64;
        history.push(EpochStats {
            epoch,
            train_loss: sums[0] / n,
            label_source: sums[1] / n,
            label_target: if model.alpha { Some(sums[2] / n) } else { None },
            domain_source: Some(sums[3] / n),
            domain_target: Some(sums[4] / n),
            val_wrr,
        });
        let decision = stopper.observe(epoch, val_wrr);
        if decision.improved {
            best_params = model.params.clone();
        }
        if decision.stop {
            break;
        }
    }
    model.params = best_params;
    Ok(TrainOutcome {
        history,
        best_epoch: stopper.best_epoch(),
        best_val_wrr: stopper.best_val_wrr(),
    })
}

// ── scenario runners ─────────────────────────────────────────────────

/// The speaker-adaptive base: trained on control speech only, with early
/// stopping on a held-out tenth of the control utterances, so the phase-1
/// checkpoint depends only on the control data and the seed — identical
/// across rotations and test speakers.
pub fn sa_base_model(
    corpus: &Corpus,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<(BaselineModel, TrainOutcome), ExperimentError> {
    let controls: Vec<usize> = corpus
        .utterances
        .iter()
        .enumerate()
        .filter(|(_, u)| u.domain == 0)
        .map(|(i, _)| i)
        .collect();
    if controls.is_empty() {
        return Err(ExperimentError::EmptySplit("control"));
    }
    let mut order = controls;
    let mut rng = SplitMix64::new(derive_seed(cfg.seed, &[STREAM_SA_HOLDOUT]));
    rng.shuffle(&mut order);
    let n_val = (order.len() / 10).max(1);
    let (val, train) = order.split_at(n_val);
    let mut model = build_baseline(model_cfg, cfg.seed)?;
    let outcome =
        train_baseline(&mut model, train, val, corpus, cfg, None, Some(cfg.learning_rate))?;
    Ok((model, outcome))
}

#[derive(Debug, Clone)]
pub struct RotationOutcome {
    pub rotation: usize,
    pub test_wrr: f64,
    pub best_epoch: usize,
    pub best_val_wrr: f64,
    pub history: Vec<EpochStats>,
}

/// Result of one scenario on one test speaker: one outcome per rotation
/// and their mean WRR.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub scenario: TableScenario,
    pub speaker: String,
    pub rotations: Vec<RotationOutcome>,
}

impl RunResult {
    pub fn per_rotation_wrr(&self) -> Vec<f64> {
        self.rotations.iter().map(|r| r.test_wrr).collect()
    }

    pub fn mean_wrr(&self) -> f64 {
        let v = self.per_rotation_wrr();
        v.iter().sum::<f64>() / v.len() as f64
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions<'a> {
    pub split: SplitOptions,
    /// When set, per-rotation history files and checkpoints are written
    /// under this directory.
    pub artifacts_dir: Option<&'a Path>,
    /// Shared SA base; computed on demand when absent.
    pub sa_base: Option<&'a BaselineModel>,
}

fn lambda_for(scenario: TableScenario, cfg: &TrainConfig) -> Result<f64, ExperimentError> {
    match scenario.kind {
        ScenarioKind::Dann => {
            if cfg.lambda <= 0.0 {
                return Err(ExperimentError::Invalid(format!(
                    "dann requires lambda > 0, got {}",
                    cfg.lambda
                )));
            }
            Ok(cfg.lambda)
        }
        ScenarioKind::Mtl => {
            if cfg.lambda_mtl >= 0.0 {
                return Err(ExperimentError::Invalid(format!(
                    "mtl requires lambda < 0, got {}",
                    cfg.lambda_mtl
                )));
            }
            Ok(cfg.lambda_mtl)
        }
        _ => Ok(0.0),
    }
}

/// Runs one scenario for one test speaker over rotations 1–3 and reports
/// per-rotation and mean WRR.
pub fn run_scenario(
    corpus: &Corpus,
    scenario: TableScenario,
    test_speaker: &str,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    opts: &RunOptions,
) -> Result<RunResult, ExperimentError> {
    cfg.validate()?;
    model_cfg.validate()?;
    if corpus.input_length != model_cfg.input_length {
        return Err(ExperimentError::Invalid(format!(
            "corpus input length {} does not match model input length {}",
            corpus.input_length, model_cfg.input_length
        )));
    }
    let lambda = lambda_for(scenario, cfg)?;

    // SA shares one base model across rotations (and speakers, when the
    // caller passes it in): it depends only on control data and the seed.
    let computed_base;
    let sa_base: Option<&BaselineModel> = match (scenario.kind, opts.sa_base) {
        (ScenarioKind::Sa, Some(base)) => Some(base),
        (ScenarioKind::Sa, None) => {
            computed_base = sa_base_model(corpus, model_cfg, cfg)?.0;
            Some(&computed_base)
        }
        _ => None,
    };

    let mut rotations = Vec::with_capacity(3);
    for rotation in 1..=3 {
        let spec = ScenarioSpec {
            kind: scenario.kind,
            supervised_target: scenario.supervised,
            test_speaker: test_speaker.to_string(),
            rotation,
        };
        let split = scenario_split(corpus, &spec, &opts.split)?;
        let (outcome, test_wrr, params, digest) = match scenario.kind {
            ScenarioKind::Si | ScenarioKind::Sd => {
                let mut model = build_baseline(model_cfg, cfg.seed)?;
                let outcome = train_baseline(
                    &mut model,
                    &split.train_source,
                    &split.validation,
                    corpus,
                    cfg,
                    None,
                    None,
                )?;
                let wrr = evaluate_wrr(&model, corpus, &split.test)?;
                (outcome, wrr, model.params.clone(), model_cfg.digest())
            }
            ScenarioKind::Sa => {
                let mut model = sa_base.unwrap().clone();
                let mask = freeze_for_adaptation(&model, UnfreezeSet::LastConvAndLabelHead);
                let outcome = train_baseline(
                    &mut model,
                    &split.adaptation,
                    &split.validation,
                    corpus,
                    cfg,
                    Some(&mask),
                    Some(cfg.finetune_learning_rate),
                )?;
                let wrr = evaluate_wrr(&model, corpus, &split.test)?;
                (outcome, wrr, model.params.clone(), model_cfg.digest())
            }
            ScenarioKind::Dann | ScenarioKind::Mtl => {
                let mut model = build_dann(model_cfg, lambda, scenario.supervised, cfg.seed)?;
                let outcome = train_dann(
                    &mut model,
                    &split.train_source,
                    &split.train_target,
                    &split.validation,
                    corpus,
                    cfg,
                )?;
                let wrr = evaluate_wrr(&model, corpus, &split.test)?;
                (outcome, wrr, model.params.clone(), model_cfg.digest())
            }
        };

        if let Some(dir) = opts.artifacts_dir {
            let run_dir = dir.join(scenario.label()).join(test_speaker);
            std::fs::create_dir_all(&run_dir)?;
            let history_text = render_history(
                &scenario.label(),
                test_speaker,
                rotation,
                cfg.seed,
                &outcome,
                test_wrr,
            );
            std::fs::write(run_dir.join(format!("rotation{rotation}.history.txt")), history_text)?;
            crate::model::checkpoint::save(
                &run_dir.join(format!("rotation{rotation}.ckpt")),
                &params,
                digest,
            )?;
        }

        rotations.push(RotationOutcome {
            rotation,
            test_wrr,
            best_epoch: outcome.best_epoch,
            best_val_wrr: outcome.best_val_wrr,
            history: outcome.history,
        });
    }
    Ok(RunResult { scenario, speaker: test_speaker.to_string(), rotations })
}

/// Line-oriented structured history of one training run.
pub fn render_history(
    scenario: &str,
    speaker: &str,
    rotation: usize,
    seed: u64,
    outcome: &TrainOutcome,
    test_wrr: f64,
) -> String {
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_else(|| "-".to_string());
    let mut out = String::new();
    out.push_str("# run history v1\n");
    out.push_str(&format!("scenario = {scenario}\n"));
    out.push_str(&format!("speaker = {speaker}\n"));
    out.push_str(&format!("rotation = {rotation}\n"));
    out.push_str(&format!("seed = {seed}\n"));
    out.push_str("columns = epoch,train_loss,label_source,label_target,domain_source,domain_target,val_wrr\n");
    for e in &outcome.history {
        out.push_str(&format!(
            "{},{:.6},{:.6},{},{},{},{:.4}\n",
            e.epoch,
            e.train_loss,
            e.label_source,
            opt(e.label_target),
            opt(e.domain_source),
            opt(e.domain_target),
            e.val_wrr
        ));
    }
    out.push_str(&format!("best_epoch = {}\n", outcome.best_epoch));
    out.push_str(&format!("best_val_wrr = {:.4}\n", outcome.best_val_wrr));
    out.push_str(&format!("test_wrr = {test_wrr:.4}\n"));
    out
}

// ── the table driver ─────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct TableResult {
    pub scenario_labels: Vec<String>,
    pub speakers: Vec<(String, Severity)>,
    /// Mean WRR per `[speaker][scenario]`, full precision.
    pub values: Vec<Vec<f64>>,
    pub runs: Vec<RunResult>,
}

/// Runs every requested scenario for every requested dysarthric speaker
/// (all of them by default). Independent runs execute in parallel; the
/// matrix is assembled in fixed speaker order. With a results directory,
/// writes per-run artifacts, the WRR matrix and the three report formats.
pub fn run_table(
    corpus: &Corpus,
    scenarios: &[TableScenario],
    speakers: Option<&[String]>,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    split: SplitOptions,
    results_dir: Option<&Path>,
) -> Result<TableResult, ExperimentError> {
    cfg.validate()?;
    if scenarios.is_empty() {
        return Err(ExperimentError::Invalid("no scenarios requested".to_string()));
    }
    let speakers: Vec<(String, Severity)> = match speakers {
        Some(list) => list
            .iter()
            .map(|id| {
                corpus
                    .speaker(id)
                    .map(|r| (r.id.clone(), r.severity))
                    .ok_or_else(|| ExperimentError::Corpus(CorpusError::UnknownSpeaker(id.clone())))
            })
            .collect::<Result<_, _>>()?,
        None => corpus.dysarthric_speakers().map(|r| (r.id.clone(), r.severity)).collect(),
    };
    if speakers.is_empty() {
        return Err(ExperimentError::EmptySplit("speaker list"));
    }

    // One shared SA base per table.
    let sa_base = if scenarios.iter().any(|s| s.kind == ScenarioKind::Sa) {
        let (base, outcome) = sa_base_model(corpus, model_cfg, cfg)?;
        if let Some(dir) = results_dir {
            let run_dir = dir.join("runs").join("sa");
            std::fs::create_dir_all(&run_dir)?;
            let text = render_history("sa-base", "-", 0, cfg.seed, &outcome, f64::NAN);
            std::fs::write(run_dir.join("base.history.txt"), text)?;
            crate::model::checkpoint::save(
                &run_dir.join("base.ckpt"),
                &base.params,
                model_cfg.digest(),
            )?;
        }
        Some(base)
    } else {
        None
    };

    let jobs: Vec<(usize, usize)> = (0..speakers.len())
        .flat_map(|s| (0..scenarios.len()).map(move |c| (s, c)))
        .collect();
    let artifacts = results_dir.map(|d| d.join("runs"));
    let runs: Result<Vec<RunResult>, ExperimentError> = jobs
        .par_iter()
        .map(|&(s, c)| {
            let opts = RunOptions {
                split,
                artifacts_dir: artifacts.as_deref(),
                sa_base: sa_base.as_ref(),
            };
            run_scenario(corpus, scenarios[c], &speakers[s].0, model_cfg, cfg, &opts)
        })
        .collect();
    let runs = runs?;

    let mut values = vec![vec![0.0; scenarios.len()]; speakers.len()];
    for (job, run) in jobs.iter().zip(&runs) {
        values[job.0][job.1] = run.mean_wrr();
    }
    let result = TableResult {
        scenario_labels: scenarios.iter().map(|s| s.label()).collect(),
        speakers,
        values,
        runs,
    };

    if let Some(dir) = results_dir {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("wrr_matrix.csv"), render_matrix_csv(&result))?;
        let rows: Vec<(String, Severity, Vec<f64>)> = result
            .speakers
            .iter()
            .zip(&result.values)
            .map(|((id, sev), vals)| (id.clone(), *sev, vals.clone()))
            .collect();
        let rep = report::build_report(
            result.scenario_labels.clone(),
            rows,
            report::SelectionPolicy::BestScenario,
        )?;
        report::emit_to_file(&rep, report::ReportFormat::Text, &dir.join("report.txt"))?;
        report::emit_to_file(&rep, report::ReportFormat::Csv, &dir.join("report.csv"))?;
        report::emit_to_file(&rep, report::ReportFormat::Json, &dir.join("report.json"))?;
    }
    Ok(result)
}

/// The WRR matrix consumed by the report tooling.
pub fn render_matrix_csv(result: &TableResult) -> String {
    let mut out = String::from("speaker,severity");
    for label in &result.scenario_labels {
        out.push(',');
        out.push_str(label);
    }
    out.push('\n');
    for ((id, sev), vals) in result.speakers.iter().zip(&result.values) {
        out.push_str(&format!("{id},{sev}"));
        for v in vals {
            out.push(',');
            out.push_str(&report::format2(*v));
        }
        out.push('\n');
    }
    out
}

/// Parses a WRR matrix file back into report rows.
pub fn parse_matrix_csv(
    text: &str,
) -> Result<(Vec<String>, Vec<(String, Severity, Vec<f64>)>), ExperimentError> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| ExperimentError::Invalid("empty matrix file".to_string()))?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 3 || cols[0] != "speaker" || cols[1] != "severity" {
        return Err(ExperimentError::Invalid("unexpected matrix header".to_string()));
    }
    let labels: Vec<String> = cols[2..].iter().map(|s| s.to_string()).collect();
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != labels.len() + 2 {
            return Err(ExperimentError::Invalid(format!(
                "matrix line {}: expected {} fields, got {}",
                i + 2,
                labels.len() + 2,
                f.len()
            )));
        }
        let severity = Severity::parse(f[1]).ok_or_else(|| {
            ExperimentError::Invalid(format!("matrix line {}: bad severity `{}`", i + 2, f[1]))
        })?;
        let values: Result<Vec<f64>, _> = f[2..]
            .iter()
            .map(|v| {
                v.parse::<f64>().map_err(|_| {
                    ExperimentError::Invalid(format!("matrix line {}: bad value `{v}`", i + 2))
                })
            })
            .collect();
        rows.push((f[0].to_string(), severity, values?));
    }
    Ok((labels, rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::synth::{synth_corpus, SynthGeometry};
    use crate::nn::Conv1dSpec;

    fn tiny_corpus() -> Corpus {
        let geom = SynthGeometry {
            n_control: 2,
            n_mild: 1,
            n_moderate: 0,
            n_high: 0,
            sample_rate: 500,
            input_length: 64,
        };
        synth_corpus(&geom, 11).unwrap()
    }

    fn tiny_model() -> ModelConfig {
        let channels = [2usize, 2, 3, 3, 3, 4, 4];
        let kernels = [4usize, 4, 3, 3, 3, 2, 2];
        let strides = [2usize, 2, 1, 1, 1, 1, 1];
        let mut conv_layers = Vec::new();
        let mut in_ch = 1;
        for i in 0..7 {
            conv_layers.push(Conv1dSpec {
                in_channels: in_ch,
                out_channels: channels[i],
                kernel_size: kernels[i],
                stride: strides[i],
                padding: 0,
            });
            in_ch = channels[i];
        }
        ModelConfig {
            input_length: 64,
            conv_layers,
            pool_after: vec![false; 7],
            pool_window: 2,
            pool_stride: 2,
            hidden_dim: 8,
            num_classes: 10,
            sigmoid_hidden: true,
        }
    }

    fn tiny_train(epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size: 16,
            learning_rate: 1e-3,
            finetune_learning_rate: 1e-4,
            optimizer: Optimizer::Adam,
            patience: 2,
            seed: 5,
            lambda: 1.5,
            lambda_mtl: -0.5,
            alpha: false,
        }
    }

    #[test]
    fn early_stopper_follows_spec_trace() {
        // sequence [60, 70, 68, 69, 70] with patience 3: stop after epoch
        // 5, best at epoch 2 (the tie at 70 is not an improvement)
        let mut s = EarlyStopper::new(3);
        let seq = [60.0, 70.0, 68.0, 69.0, 70.0];
        let mut stopped_at = None;
        for (i, &wrr) in seq.iter().enumerate() {
            let d = s.observe(i + 1, wrr);
            if d.stop {
                stopped_at = Some(i + 1);
                break;
            }
        }
        assert_eq!(stopped_at, Some(5));
        assert_eq!(s.best_epoch(), 2);
        assert_eq!(s.best_val_wrr(), 70.0);
    }

    #[test]
    fn config_validation_rejects_zeroes() {
        let mut cfg = TrainConfig::default();
        cfg.epochs = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = TrainConfig::default();
        cfg.batch_size = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = TrainConfig::default();
        cfg.patience = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn epoch_order_is_a_seeded_permutation() {
        let ids: Vec<usize> = (100..150).collect();
        let a = epoch_order(&ids, 9, STREAM_BASELINE, 1);
        let b = epoch_order(&ids, 9, STREAM_BASELINE, 1);
        assert_eq!(a, b);
        let c = epoch_order(&ids, 9, STREAM_BASELINE, 2);
        assert_ne!(a, c);
        let mut sorted = a.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, ids);
    }

    #[test]
    fn batcher_consumes_every_utterance_once() {
        let ids: Vec<usize> = (0..37).collect();
        let order = epoch_order(&ids, 1, STREAM_BASELINE, 1);
        let total: usize = order.chunks(16).map(|c| c.len()).sum();
        assert_eq!(total, 37);
        let sizes: Vec<usize> = order.chunks(16).map(|c| c.len()).collect();
        assert_eq!(sizes, vec![16, 16, 5]);
    }

    #[test]
    fn training_is_deterministic() {
        let corpus = tiny_corpus();
        let model_cfg = tiny_model();
        let cfg = tiny_train(2);
        let spec = ScenarioSpec {
            kind: ScenarioKind::Si,
            supervised_target: false,
            test_speaker: "D01".to_string(),
            rotation: 1,
        };
        let split = scenario_split(&corpus, &spec, &SplitOptions::default()).unwrap();
        let run = || {
            let mut model = build_baseline(&model_cfg, cfg.seed).unwrap();
            train_baseline(&mut model, &split.train_source, &split.validation, &corpus, &cfg, None, None)
                .unwrap();
            model.digest()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn patience_beyond_epochs_runs_all_epochs() {
        let corpus = tiny_corpus();
        let model_cfg = tiny_model();
        let mut cfg = tiny_train(3);
        cfg.patience = 99;
        let spec = ScenarioSpec {
            kind: ScenarioKind::Si,
            supervised_target: false,
            test_speaker: "D01".to_string(),
            rotation: 1,
        };
        let split = scenario_split(&corpus, &spec, &SplitOptions::default()).unwrap();
        let mut model = build_baseline(&model_cfg, cfg.seed).unwrap();
        let outcome = train_baseline(
            &mut model,
            &split.train_source,
            &split.validation,
            &corpus,
            &cfg,
            None,
            None,
        )
        .unwrap();
        assert_eq!(outcome.history.len(), 3);
    }

    #[test]
    fn finetune_freeze_keeps_early_convs_bit_identical() {
        let corpus = tiny_corpus();
        let model_cfg = tiny_model();
        let cfg = tiny_train(2);
        let (base, _) = sa_base_model(&corpus, &model_cfg, &cfg).unwrap();
        let spec = ScenarioSpec {
            kind: ScenarioKind::Sa,
            supervised_target: false,
            test_speaker: "D01".to_string(),
            rotation: 1,
        };
        let split = scenario_split(&corpus, &spec, &SplitOptions::default()).unwrap();

        let mut tuned = base.clone();
        let mask = freeze_for_adaptation(&tuned, UnfreezeSet::LastConvAndLabelHead);
        train_baseline(
            &mut tuned,
            &split.adaptation,
            &split.validation,
            &corpus,
            &cfg,
            Some(&mask),
            Some(cfg.finetune_learning_rate),
        )
        .unwrap();
        for name in (1..=6)
            .flat_map(|i| [format!("feat.conv{i}.w"), format!("feat.conv{i}.b")])
            .chain(["feat.hidden.w".to_string(), "feat.hidden.b".to_string()])
        {
            assert_eq!(
                base.params.get(&name).unwrap(),
                tuned.params.get(&name).unwrap(),
                "{name} changed"
            );
        }
        // something must actually have trained
        assert_ne!(base.digest(), tuned.digest());

        // zero learning rate changes nothing at all
        let mut frozen = base.clone();
        train_baseline(
            &mut frozen,
            &split.adaptation,
            &split.validation,
            &corpus,
            &cfg,
            Some(&mask),
            Some(0.0),
        )
        .unwrap();
        assert_eq!(base.digest(), frozen.digest());
    }

    #[test]
    fn unfreeze_all_equals_ordinary_training() {
        let corpus = tiny_corpus();
        let model_cfg = tiny_model();
        let cfg = tiny_train(1);
        let spec = ScenarioSpec {
            kind: ScenarioKind::Sd,
            supervised_target: false,
            test_speaker: "D01".to_string(),
            rotation: 1,
        };
        let split = scenario_split(&corpus, &spec, &SplitOptions::default()).unwrap();
        let run = |mask: Option<FreezeMask>| {
            let mut model = build_baseline(&model_cfg, cfg.seed).unwrap();
            train_baseline(
                &mut model,
                &split.train_source,
                &split.validation,
                &corpus,
                &cfg,
                mask.as_ref(),
                None,
            )
            .unwrap();
            model.digest()
        };
        let model = build_baseline(&model_cfg, cfg.seed).unwrap();
        let all = freeze_for_adaptation(&model, UnfreezeSet::All);
        assert_eq!(run(None), run(Some(all)));
    }

    #[test]
    fn dann_step_equals_passthrough_with_trunk_coefficient() {
        // One optimizer step of the λ = −0.5 model must match the no-GRL
        // construction where the domain loss reaches the trunk with
        // coefficient +0.5 and the domain head with coefficient 1.
        let corpus = tiny_corpus();
        let model_cfg = tiny_model();
        let mu = 0.5;
        let source_ids: Vec<usize> = corpus
            .utterances
            .iter()
            .enumerate()
            .filter(|(_, u)| u.domain == 0)
            .map(|(i, _)| i)
            .take(8)
            .collect();
        let target_ids: Vec<usize> = corpus
            .utterances
            .iter()
            .enumerate()
            .filter(|(_, u)| u.domain == 1)
            .map(|(i, _)| i)
            .take(8)
            .collect();
        let src = minibatch(&corpus, &source_ids, true);
        let tgt = minibatch(&corpus, &target_ids, true);

        // Route A: gradient reversal with λ = −μ, one Adam step.
        let mut model_a = build_dann(&model_cfg, -mu, true, 3).unwrap();
        let mut built = model_a.adversarial_graph(&src, &tgt).unwrap();
        let mut bindings = crate::autodiff::Bindings::new();
        bindings.insert(built.source_input, src.waveforms.clone());
        bindings.insert(built.target_input, tgt.waveforms.clone());
        built.graph.forward(&bindings).unwrap();
        let grads_a = grads_by_name(&built.param_ids, &built.graph.backward(built.train_node).unwrap());
        let mut state_a = AdamState::new();
        adam_step(&mut model_a.params, &grads_a, &mut state_a, 1e-3, ADAM_BETA1, ADAM_BETA2, ADAM_EPS)
            .unwrap();

        // Route B: unit pass-through in the GRL slot (λ = −1 makes the
        // backward factor exactly +1), label and domain gradients taken
        // separately and combined by hand.
        let mut model_b = build_dann(&model_cfg, -1.0, true, 3).unwrap();
        let mut built_b = model_b.adversarial_graph(&src, &tgt).unwrap();
        let mut bindings_b = crate::autodiff::Bindings::new();
        bindings_b.insert(built_b.source_input, src.waveforms.clone());
        bindings_b.insert(built_b.target_input, tgt.waveforms.clone());
        built_b.graph.forward(&bindings_b).unwrap();
        let g_label = grads_by_name(&built_b.param_ids, &built_b.graph.backward(built_b.label_sum).unwrap());
        let g_domain = grads_by_name(&built_b.param_ids, &built_b.graph.backward(built_b.domain_sum).unwrap());
        let combined: BTreeMap<String, Tensor> = g_label
            .iter()
            .map(|(name, gl)| {
                let gd = &g_domain[name];
                let data: Vec<f64> = if name.starts_with("domain.") {
                    gd.data().to_vec()
                } else {
                    gl.data().iter().zip(gd.data()).map(|(a, b)| a + mu * b).collect()
                };
                (name.clone(), Tensor::from_vec(gl.shape(), data))
            })
            .collect();
        let mut state_b = AdamState::new();
        adam_step(&mut model_b.params, &combined, &mut state_b, 1e-3, ADAM_BETA1, ADAM_BETA2, ADAM_EPS)
            .unwrap();

        // Head parameters see literally the same arithmetic: bit-identical.
        for (name, t) in model_a.params.iter() {
            if name.starts_with("label.") || name.starts_with("domain.") {
                assert_eq!(Some(t), model_b.params.get(name), "{name}");
            } else {
                // trunk sums are reassociated between routes; μ = 0.5 is
                // dyadic so the only difference is addition order
                let other = model_b.params.get(name).unwrap();
                for (x, y) in t.data().iter().zip(other.data()) {
                    assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0), "{name}: {x} vs {y}");
                }
            }
        }
    }

    #[test]
    fn supervision_flag_does_not_change_step_zero_source_loss() {
        let corpus = tiny_corpus();
        let model_cfg = tiny_model();
        let sup = build_dann(&model_cfg, 1.5, true, 5).unwrap();
        let unsup = build_dann(&model_cfg, 1.5, false, 5).unwrap();
        let source_ids: Vec<usize> = (0..8).collect();
        let target_ids: Vec<usize> = corpus
            .utterances
            .iter()
            .enumerate()
            .filter(|(_, u)| u.domain == 1)
            .map(|(i, _)| i)
            .take(8)
            .collect();
        let src = minibatch(&corpus, &source_ids, true);
        let tgt = minibatch(&corpus, &target_ids, true);
        let a = sup.adversarial_loss(&src, &tgt).unwrap();
        let b = unsup.adversarial_loss(&src, &tgt).unwrap();
        assert_eq!(a.label_source, b.label_source);
        assert_eq!(a.domain_source, b.domain_source);
        assert!(a.label_target.is_some() && b.label_target.is_none());
    }

    #[test]
    fn lambda_sign_is_validated_per_scenario() {
        let cfg = tiny_train(1);
        let mut bad_dann = cfg.clone();
        bad_dann.lambda = -1.0;
        assert!(lambda_for(TableScenario { kind: ScenarioKind::Dann, supervised: false }, &bad_dann).is_err());
        let mut bad_mtl = cfg.clone();
        bad_mtl.lambda_mtl = 0.5;
        assert!(lambda_for(TableScenario { kind: ScenarioKind::Mtl, supervised: true }, &bad_mtl).is_err());
        assert_eq!(lambda_for(TableScenario { kind: ScenarioKind::Si, supervised: false }, &cfg).unwrap(), 0.0);
    }

    #[test]
    fn sa_base_is_deterministic_and_shared() {
        let corpus = tiny_corpus();
        let model_cfg = tiny_model();
        let cfg = tiny_train(2);
        let (a, _) = sa_base_model(&corpus, &model_cfg, &cfg).unwrap();
        let (b, _) = sa_base_model(&corpus, &model_cfg, &cfg).unwrap();
        assert_eq!(a.digest(), b.digest());
    }

    #[test]
    fn run_scenario_si_structure() {
        let corpus = tiny_corpus();
        let model_cfg = tiny_model();
        let cfg = tiny_train(1);
        let result = run_scenario(
            &corpus,
            TableScenario { kind: ScenarioKind::Si, supervised: false },
            "D01",
            &model_cfg,
            &cfg,
            &RunOptions::default(),
        )
        .unwrap();
        assert_eq!(result.rotations.len(), 3);
        let per: Vec<f64> = result.per_rotation_wrr();
        let mean = per.iter().sum::<f64>() / 3.0;
        assert!((result.mean_wrr() - mean).abs() < 1e-12);
        for (i, r) in result.rotations.iter().enumerate() {
            assert_eq!(r.rotation, i + 1);
            assert!((0.0..=100.0).contains(&r.test_wrr));
        }
    }

    #[test]
    fn run_table_single_cell_matches_run_scenario() {
        let corpus = tiny_corpus();
        let model_cfg = tiny_model();
        let cfg = tiny_train(1);
        let scenario = TableScenario { kind: ScenarioKind::Si, supervised: false };
        let table = run_table(
            &corpus,
            &[scenario],
            None,
            &model_cfg,
            &cfg,
            SplitOptions::default(),
            None,
        )
        .unwrap();
        assert_eq!(table.speakers.len(), 1);
        assert_eq!(table.values.len(), 1);
        let direct =
            run_scenario(&corpus, scenario, "D01", &model_cfg, &cfg, &RunOptions::default())
                .unwrap();
        assert_eq!(table.values[0][0], direct.mean_wrr());
    }

    #[test]
    fn run_table_writes_artifacts_and_is_deterministic() {
        let corpus = tiny_corpus();
        let model_cfg = tiny_model();
        let cfg = tiny_train(1);
        let scenarios = [
            TableScenario { kind: ScenarioKind::Si, supervised: false },
            TableScenario { kind: ScenarioKind::Sa, supervised: false },
        ];
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let run = |dir: &std::path::Path| {
            run_table(
                &corpus,
                &scenarios,
                None,
                &model_cfg,
                &cfg,
                SplitOptions::default(),
                Some(dir),
            )
            .unwrap()
        };
        let a = run(dir_a.path());
        let b = run(dir_b.path());
        assert_eq!(a.values, b.values);
        for rel in [
            "wrr_matrix.csv",
            "report.txt",
            "report.csv",
            "report.json",
            "runs/si/D01/rotation1.history.txt",
            "runs/si/D01/rotation2.ckpt",
            "runs/sa/base.ckpt",
            "runs/sa/D01/rotation3.history.txt",
        ] {
            let pa = std::fs::read(dir_a.path().join(rel)).unwrap_or_else(|_| panic!("missing {rel}"));
            let pb = std::fs::read(dir_b.path().join(rel)).unwrap();
            assert_eq!(pa, pb, "{rel} differs between identical runs");
        }
    }

    #[test]
    fn matrix_csv_round_trips() {
        let corpus = tiny_corpus();
        let model_cfg = tiny_model();
        let cfg = tiny_train(1);
        let table = run_table(
            &corpus,
            &[TableScenario { kind: ScenarioKind::Si, supervised: false }],
            None,
            &model_cfg,
            &cfg,
            SplitOptions::default(),
            None,
        )
        .unwrap();
        let text = render_matrix_csv(&table);
        let (labels, rows) = parse_matrix_csv(&text).unwrap();
        assert_eq!(labels, table.scenario_labels);
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].0, "D01");
        assert_eq!(rows[0].2.len(), 1);
    }

    #[test]
    fn empty_split_errors() {
        let corpus = tiny_corpus();
        let model_cfg = tiny_model();
        let cfg = tiny_train(1);
        let mut model = build_baseline(&model_cfg, 1).unwrap();
        assert!(matches!(
            train_baseline(&mut model, &[], &[0], &corpus, &cfg, None, None),
            Err(ExperimentError::EmptySplit("train"))
        ));
        assert!(matches!(
            train_baseline(&mut model, &[0], &[], &corpus, &cfg, None, None),
            Err(ExperimentError::EmptySplit("validation"))
        ));
    }
}
