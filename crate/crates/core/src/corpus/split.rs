//! Scenario splits: which utterances train, validate, adapt and test.
//!
//! Evaluation rotates over the three batches of iterations: rotation `r`
//! gives batch `r` the validation role (or the adaptation role for SA and
//! the in-training role for SD); the remaining batches take each
//! scenario's stated places, in cyclic order where two roles must be
//! filled. Training never sees the test speaker's validation or test
//! batches, which the tests check by identity.

use super::{Corpus, CorpusError, BATCHES};

/// The five training scenarios.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScenarioKind {
    /// Speaker-independent baseline: control speech only.
    Si,
    /// Speaker-dependent baseline: control speech plus one batch of the
    /// test speaker.
    Sd,
    /// Speaker-adaptive: SI base, then fine-tuning on one batch.
    Sa,
    /// Domain-adversarial two-head model (λ > 0).
    Dann,
    /// Multi-task two-head model (λ < 0).
    Mtl,
}

impl ScenarioKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ScenarioKind::Si => "si",
            ScenarioKind::Sd => "sd",
            ScenarioKind::Sa => "sa",
            ScenarioKind::Dann => "dann",
            ScenarioKind::Mtl => "mtl",
        }
    }

    pub fn parse(s: &str) -> Option<ScenarioKind> {
        match s {
            "si" => Some(ScenarioKind::Si),
            "sd" => Some(ScenarioKind::Sd),
            "sa" => Some(ScenarioKind::Sa),
            "dann" => Some(ScenarioKind::Dann),
            "mtl" => Some(ScenarioKind::Mtl),
            _ => None,
        }
    }

    /// Whether the scenario trains the two-headed adversarial model.
    pub fn is_adversarial(&self) -> bool {
        matches!(self, ScenarioKind::Dann | ScenarioKind::Mtl)
    }
}

impl std::fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One scenario run: the kind, whether target word labels are used
/// (maps to α for DANN/MTL), the held-out dysarthric speaker, and which
/// batch plays the rotated role.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScenarioSpec {
    pub kind: ScenarioKind,
    pub supervised_target: bool,
    pub test_speaker: String,
    /// 1-based rotation index.
    pub rotation: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SplitOptions {
    /// SI only: test on all three batches of the test speaker (the
    /// unsupervised-table protocol) instead of the two held-out ones.
    pub test_on_all_batches: bool,
}

/// Utterance index sets for one scenario run. `train_target` is non-empty
/// only for the adversarial scenarios; `adaptation` only for SA.
#[derive(Debug, Clone, Default)]
pub struct Split {
    pub train_source: Vec<usize>,
    pub train_target: Vec<usize>,
    pub adaptation: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

pub fn scenario_split(
    corpus: &Corpus,
    spec: &ScenarioSpec,
    opts: &SplitOptions,
) -> Result<Split, CorpusError> {
    let rec = corpus
        .speaker(&spec.test_speaker)
        .ok_or_else(|| CorpusError::UnknownSpeaker(spec.test_speaker.clone()))?;
    if rec.is_control {
        return Err(CorpusError::NotDysarthric(spec.test_speaker.clone()));
    }
    if !(1..=BATCHES).contains(&spec.rotation) {
        return Err(CorpusError::InvalidGeometry(format!(
            "rotation index {} out of range 1-{BATCHES}",
            spec.rotation
        )));
    }

    // Test speaker's utterances, per batch.
    let mut per_batch: Vec<Vec<usize>> = vec![Vec::new(); BATCHES + 1];
    for (i, u) in corpus.utterances.iter().enumerate() {
        if u.speaker == spec.test_speaker {
            per_batch[u.batch].push(i);
        }
    }
    let missing: Vec<String> =
        (1..=BATCHES).filter(|&b| per_batch[b].is_empty()).map(|b| format!("batch {b}")).collect();
    if !missing.is_empty() {
        return Err(CorpusError::IncompleteSpeaker {
            id: spec.test_speaker.clone(),
            missing: missing.join(", "),
        });
    }

    let controls: Vec<usize> = corpus
        .utterances
        .iter()
        .enumerate()
        .filter(|(_, u)| u.domain == 0)
        .map(|(i, _)| i)
        .collect();
    let other_dysarthric: Vec<usize> = corpus
        .utterances
        .iter()
        .enumerate()
        .filter(|(_, u)| u.domain == 1 && u.speaker != spec.test_speaker)
        .map(|(i, _)| i)
        .collect();

    // Rotation r holds out batch r; the other two follow cyclically.
    let rotated = spec.rotation;
    let next = rotated % BATCHES + 1;
    let last = next % BATCHES + 1;

    let mut split = Split::default();
    match spec.kind {
        ScenarioKind::Si => {
            split.train_source = controls;
            split.validation = per_batch[rotated].clone();
            split.test = if opts.test_on_all_batches {
                let mut all: Vec<usize> =
                    per_batch[1..].iter().flatten().copied().collect();
                all.sort_unstable();
                all
            } else {
                two_batches(&per_batch, next, last)
            };
        }
        ScenarioKind::Dann | ScenarioKind::Mtl => {
            split.train_source = controls;
            split.train_target = other_dysarthric;
            split.validation = per_batch[rotated].clone();
            split.test = two_batches(&per_batch, next, last);
        }
        ScenarioKind::Sd => {
            let mut train = controls;
            train.extend_from_slice(&per_batch[rotated]);
            train.sort_unstable();
            split.train_source = train;
            split.validation = per_batch[next].clone();
            split.test = per_batch[last].clone();
        }
        ScenarioKind::Sa => {
            split.train_source = controls;
            split.adaptation = per_batch[rotated].clone();
            split.validation = per_batch[next].clone();
            split.test = per_batch[last].clone();
        }
    }
    Ok(split)
}

fn two_batches(per_batch: &[Vec<usize>], a: usize, b: usize) -> Vec<usize> {
    let mut out: Vec<usize> = per_batch[a].iter().chain(&per_batch[b]).copied().collect();
    out.sort_unstable();
    out
}
