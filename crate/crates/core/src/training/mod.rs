//! Supervised and reinforcement training regimes, and greedy decoding.

mod decode;
mod rl;
mod schedule;
mod supervised;

use std::io::Write;
use std::ops::ControlFlow;
use std::path::PathBuf;

use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use decode::{decode, decode_all, evaluate, Decoded};
pub use rl::{select_action, train_rl};
pub use schedule::{schedule_defaults, ExplorationSchedule};
pub use supervised::train_supervised;

use crate::corpus::Sentence;
use crate::eval::Metrics;
use crate::machine::{Machine, MachineKind, TagSet};
use crate::neural::{read_word_vectors, Model, NetDims, OptimizerConfig};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    /// Supervised, static oracle first then dynamic oracle; no BACK.
    Sup,
    /// Q-learning without BACK.
    Rl,
    /// Q-learning with BACK.
    RlBacktrack,
}

impl Regime {
    pub fn name(self) -> &'static str {
        match self {
            Regime::Sup => "sup",
            Regime::Rl => "rl",
            Regime::RlBacktrack => "rl-backtrack",
        }
    }
}

impl std::str::FromStr for Regime {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sup" => Ok(Regime::Sup),
            "rl" => Ok(Regime::Rl),
            "rl-backtrack" => Ok(Regime::RlBacktrack),
            other => Err(format!("unknown regime '{other}'")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub machine: MachineKind,
    pub regime: Regime,
    /// BACK budget per word; only meaningful for `rl-backtrack`.
    pub k: u32,
    pub gamma: f64,
    pub optimizer: OptimizerConfig,
    pub epochs: usize,
    pub seed: u64,
    /// Examples per gradient step in supervised training.
    pub batch_size: usize,
    pub dims: NetDims,
    pub schedule: ExplorationSchedule,
    /// Supervised epochs trained on static-oracle sequences.
    pub static_epochs: usize,
    /// Supervised: re-label the training set with the dynamic oracle every
    /// this many epochs.
    pub relabel_every: usize,
    /// Pretrained word vectors (`word v1 v2 ...` per line) copied into the
    /// word table when their dimension matches `dims.word_dim`.
    pub word_vectors: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            machine: MachineKind::Tagger,
            regime: Regime::Sup,
            k: 0,
            gamma: 0.9,
            optimizer: OptimizerConfig::sgd(0.01),
            epochs: 200,
            seed: 0,
            batch_size: 1,
            dims: NetDims::default(),
            schedule: ExplorationSchedule::default(),
            static_epochs: 2,
            relabel_every: 2,
            word_vectors: None,
        }
    }
}

impl TrainConfig {
    /// Epoch budget used when none is given: 300 for the tagparser, 200 otherwise.
    pub fn default_epochs(kind: MachineKind) -> usize {
        if kind == MachineKind::TagParser {
            300
        } else {
            200
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1]");
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1");
        }
        if self.regime != Regime::RlBacktrack && self.k > 0 {
            return bad("a BACK budget k > 0 requires the rl-backtrack regime");
        }
        if !(self.optimizer.lr() > 0.0) {
            return bad("learning rate must be positive");
        }
        if !(0.0..1.0).contains(&self.dims.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if self.dims.hidden == 0 || self.dims.word_dim == 0 || self.dims.embed_dim == 0 {
            return bad("layer sizes must be positive");
        }
        if self.relabel_every == 0 {
            return bad("relabel interval must be at least 1");
        }
        Ok(())
    }

    /// Topology trained under this configuration.
    pub fn machine(&self, tags: &TagSet) -> Machine {
        match self.regime {
            Regime::RlBacktrack => Machine::backtracking(self.machine, tags.len(), self.k),
            _ => Machine::plain(self.machine, tags.len()),
        }
    }

    /// Fresh model for `train`, with vocabularies from `train` only.
    pub fn new_model(&self, train: &[Sentence], rng: &mut StdRng) -> Result<Model> {
        let tags = TagSet::from_sentences(train);
        let machine = self.machine(&tags);
        let mut model = Model::new(machine, tags, train, self.dims, self.gamma, self.regime.name(), rng);
        if let Some(path) = &self.word_vectors {
            let set = model.load_word_vectors(&read_word_vectors(path)?);
            log::info!("initialized {set} word embeddings from {}", path.display());
        }
        Ok(model)
    }
}

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss: f64,
    pub updates: usize,
    pub epsilon: f64,
    pub beta: f64,
    pub dev: Metrics,
    /// BACK actions taken while training this epoch.
    pub train_backs: usize,
    /// BACK actions taken while decoding the dev set.
    pub dev_backs: usize,
    /// Sentences stopped at the action bound.
    pub aborted: usize,
}

pub struct TrainOutcome {
    /// Parameters of the epoch with the best dev score.
    pub best: Model,
    pub best_epoch: usize,
    /// Parameters after the last epoch.
    pub last: Model,
    pub metrics: Vec<EpochMetrics>,
}

/// Writes one JSON object per epoch.
pub struct MetricsLog<W: Write> {
    out: W,
}

impl<W: Write> MetricsLog<W> {
    pub fn new(out: W) -> Self {
        MetricsLog { out }
    }

    pub fn write(&mut self, m: &EpochMetrics) -> std::io::Result<()> {
        serde_json::to_writer(&mut self.out, m)?;
        self.out.write_all(b"\n")?;
        self.out.flush()
    }
}

/// Tracks the best model by dev UAS (parsing machines) or UPOS (tagger).
pub(crate) struct Checkpoint {
    pub model: Option<Model>,
    pub epoch: usize,
    score: f64,
}

impl Checkpoint {
    pub fn new() -> Self {
        Checkpoint { model: None, epoch: 0, score: f64::NEG_INFINITY }
    }

    pub fn offer(&mut self, model: &Model, epoch: usize, dev: &Metrics) {
        let score = if model.machine.kind.parses() { dev.uas } else { dev.upos_accuracy };
        if score > self.score {
            self.score = score;
            self.epoch = epoch;
            self.model = Some(model.clone());
        }
    }
}

/// Dispatches on the regime. `on_epoch` sees the metrics of every epoch
/// and may stop training early.
pub fn train(
    train: &[Sentence],
    dev: &[Sentence],
    config: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochMetrics) -> ControlFlow<()>,
) -> Result<TrainOutcome> {
    match config.regime {
        Regime::Sup => train_supervised(train, dev, config, on_epoch),
        Regime::Rl | Regime::RlBacktrack => train_rl(train, dev, config, on_epoch),
    }
}

pub(crate) fn shuffled(len: usize, rng: &mut StdRng) -> Vec<usize> {
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(rng);
    order
}
