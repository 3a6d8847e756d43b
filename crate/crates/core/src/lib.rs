//! Backtracking reading machines.
//!
//! Transition-based POS tagging and unlabeled arc-eager dependency parsing
//! where the machine may undo the analysis of the previous word with a
//! `BACK` action once it has seen the next one. Machines are trained either
//! with supervision from static and dynamic oracles or with deep Q-learning.
//!
//! ```
//! use brm_core::{Action, Configuration, Machine, MachineKind, TagSet};
//!
//! let tags = TagSet::new(["DET", "NOUN"]);
//! let machine = Machine::backtracking(MachineKind::Tagger, tags.len(), 1);
//! let mut c = Configuration::initial(2, &machine);
//! c.apply(&machine, Action::NoBack).unwrap();
//! c.apply(&machine, Action::Tag(tags.id("NOUN"))).unwrap();
//! // The second word is visible now: reconsider the first one.
//! c.apply(&machine, Action::Back).unwrap();
//! assert_eq!(c.word_index(), 1);
//! assert_eq!(c.frontier(), 2);
//! ```

pub mod corpus;
pub mod eval;
pub mod machine;
pub mod neural;
pub mod oracle;
pub mod reward;
pub mod synthetic;
pub mod training;

use thiserror::Error;

pub use corpus::{CorpusError, CorpusSplit, Sentence, Token};
pub use eval::{BackStats, EvalError, Metrics};
pub use machine::{Action, Cell, Configuration, Machine, MachineError, MachineKind, State, TagId, TagSet};
pub use neural::{Model, NetDims, NeuralError, OptimizerConfig, QNetwork};
pub use oracle::{OracleError, OracleVerdict};
pub use reward::RewardError;
pub use training::{Decoded, EpochMetrics, ExplorationSchedule, Regime, TrainConfig, TrainOutcome};

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Machine(#[from] MachineError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{0}")]
    Training(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
