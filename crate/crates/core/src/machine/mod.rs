//! Reading machines: automaton topologies, actions and configurations.
//!
//! Three task topologies are supported (tagger, parser, tagparser), each with
//! or without the extra `BACK` state. Parsing uses unlabeled arc-eager
//! transitions over a stack of word indices; there is no explicit root on the
//! stack. Once the last word has been pushed the machine drains the stack with
//! mandatory `REDUCE` actions, attaching still-ungoverned words to the root.

mod config;
mod trace;

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use config::{BackRecord, Configuration, Entry, Step, Undo};
pub use trace::{render_trace, TraceFile};

/// Identifier of a tag in a [`TagSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TagId(pub u32);

impl TagId {
    pub const UNKNOWN: TagId = TagId(0);

    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Tag inventory. Id 0 is the reserved unknown tag `_`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct TagSet {
    tags: Vec<String>,
    index: HashMap<String, TagId>,
}

impl From<Vec<String>> for TagSet {
    fn from(tags: Vec<String>) -> Self {
        TagSet::from_ordered(tags)
    }
}

impl From<TagSet> for Vec<String> {
    fn from(set: TagSet) -> Self {
        set.tags
    }
}

impl TagSet {
    pub fn new<I, S>(tags: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut names: Vec<String> = tags.into_iter().map(Into::into).collect();
        names.retain(|t| t != crate::corpus::UNKNOWN_UPOS);
        names.sort();
        names.dedup();
        let mut all = vec![crate::corpus::UNKNOWN_UPOS.to_string()];
        all.extend(names);
        Self::from_ordered(all)
    }

    /// Builds the inventory from the tags observed in `sentences`.
    pub fn from_sentences<'a>(sentences: impl IntoIterator<Item = &'a crate::corpus::Sentence>) -> Self {
        Self::new(
            sentences
                .into_iter()
                .flat_map(|s| s.tokens.iter().map(|t| t.upos.clone())),
        )
    }

    /// Rebuilds an inventory whose first entry must be the unknown tag.
    pub fn from_ordered(tags: Vec<String>) -> Self {
        let index = tags
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), TagId(i as u32)))
            .collect();
        TagSet { tags, index }
    }

    pub fn id(&self, tag: &str) -> TagId {
        self.index.get(tag).copied().unwrap_or(TagId::UNKNOWN)
    }

    pub fn get(&self, tag: &str) -> Option<TagId> {
        self.index.get(tag).copied()
    }

    pub fn name(&self, id: TagId) -> &str {
        &self.tags[id.index()]
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.tags
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MachineKind {
    Tagger,
    Parser,
    #[serde(rename = "tagparser")]
    TagParser,
}

impl MachineKind {
    pub fn tags(self) -> bool {
        matches!(self, MachineKind::Tagger | MachineKind::TagParser)
    }

    pub fn parses(self) -> bool {
        matches!(self, MachineKind::Parser | MachineKind::TagParser)
    }

    pub fn name(self) -> &'static str {
        match self {
            MachineKind::Tagger => "tagger",
            MachineKind::Parser => "parser",
            MachineKind::TagParser => "tagparser",
        }
    }
}

impl fmt::Display for MachineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for MachineKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tagger" => Ok(MachineKind::Tagger),
            "parser" => Ok(MachineKind::Parser),
            "tagparser" => Ok(MachineKind::TagParser),
            other => Err(format!("unknown machine kind '{other}'")),
        }
    }
}

/// Automaton states.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum State {
    Back,
    Pos,
    Synt,
}

/// Maximum number of BACK actions per word.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackBudget {
    pub k: u32,
}

/// A machine: task topology, tag inventory size and, for backtracking
/// machines, the BACK budget.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Machine {
    pub kind: MachineKind,
    pub n_tags: u32,
    pub budget: Option<BackBudget>,
}

impl Machine {
    /// Machine without the BACK state.
    pub fn plain(kind: MachineKind, n_tags: usize) -> Self {
        Machine { kind, n_tags: n_tags as u32, budget: None }
    }

    /// Machine with the BACK state and `k` BACK actions per word.
    pub fn backtracking(kind: MachineKind, n_tags: usize, k: u32) -> Self {
        Machine { kind, n_tags: n_tags as u32, budget: Some(BackBudget { k }) }
    }

    pub fn is_backtracking(&self) -> bool {
        self.budget.is_some()
    }

    pub fn k(&self) -> u32 {
        self.budget.map_or(0, |b| b.k)
    }

    /// Same topology with a different budget (used to override k at decode time).
    pub fn with_k(self, k: u32) -> Self {
        match self.budget {
            Some(_) => Machine { budget: Some(BackBudget { k }), ..self },
            None => self,
        }
    }

    pub fn initial_state(&self) -> State {
        if self.is_backtracking() {
            State::Back
        } else if self.kind.tags() {
            State::Pos
        } else {
            State::Synt
        }
    }

    /// Upper bound on the number of actions for a sentence of length `n`.
    pub fn max_actions(&self, n: usize) -> usize {
        max_actions(n, self.k(), self.kind)
    }
}

/// `3nk+2n` (tagger), `4nk+3n` (parser), `5nk+4n` (tagparser).
pub fn max_actions(n: usize, k: u32, kind: MachineKind) -> usize {
    let k = k as usize;
    match kind {
        MachineKind::Tagger => 3 * n * k + 2 * n,
        MachineKind::Parser => 4 * n * k + 3 * n,
        MachineKind::TagParser => 5 * n * k + 4 * n,
    }
}

/// Parsing transitions in head order.
pub const PARSE_ACTIONS: [Action; 4] = [Action::Left, Action::Right, Action::Shift, Action::Reduce];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    Tag(TagId),
    Left,
    Right,
    Shift,
    Reduce,
    Back,
    NoBack,
}

impl Action {
    pub fn is_parse(self) -> bool {
        matches!(self, Action::Left | Action::Right | Action::Shift | Action::Reduce)
    }

    /// Index of this action in the output layer of its decision head.
    pub fn head_index(self) -> usize {
        match self {
            Action::Tag(t) => t.index(),
            Action::Left => 0,
            Action::Right => 1,
            Action::Shift => 2,
            Action::Reduce => 3,
            Action::NoBack => 0,
            Action::Back => 1,
        }
    }

    /// Inverse of [`Action::head_index`] for the head serving `state`.
    pub fn from_head_index(state: State, index: usize) -> Action {
        match state {
            State::Pos => Action::Tag(TagId(index as u32)),
            State::Synt => PARSE_ACTIONS[index],
            State::Back => {
                if index == 0 {
                    Action::NoBack
                } else {
                    Action::Back
                }
            }
        }
    }

    pub fn display<'a>(&'a self, tags: &'a TagSet) -> ActionDisplay<'a> {
        ActionDisplay { action: self, tags }
    }

    /// Parses the textual form produced by [`Action::display`].
    pub fn parse(text: &str, tags: &TagSet) -> Option<Action> {
        Some(match text {
            "LEFT" => Action::Left,
            "RIGHT" => Action::Right,
            "SHIFT" => Action::Shift,
            "REDUCE" => Action::Reduce,
            "BACK" => Action::Back,
            "NOBACK" => Action::NoBack,
            t => {
                let inner = t.strip_prefix("TAG(")?.strip_suffix(')')?;
                Action::Tag(tags.get(inner)?)
            }
        })
    }
}

pub struct ActionDisplay<'a> {
    action: &'a Action,
    tags: &'a TagSet,
}

impl fmt::Display for ActionDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.action {
            Action::Tag(t) => write!(f, "TAG({})", self.tags.name(*t)),
            Action::Left => f.write_str("LEFT"),
            Action::Right => f.write_str("RIGHT"),
            Action::Shift => f.write_str("SHIFT"),
            Action::Reduce => f.write_str("REDUCE"),
            Action::Back => f.write_str("BACK"),
            Action::NoBack => f.write_str("NOBACK"),
        }
    }
}

/// An output tape cell. `Erased` only results from a BACK action.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Cell<T> {
    Empty,
    Value(T),
    Erased,
}

impl<T: Copy> Cell<T> {
    pub fn value(self) -> Option<T> {
        match self {
            Cell::Value(v) => Some(v),
            _ => None,
        }
    }

    pub fn is_set(self) -> bool {
        matches!(self, Cell::Value(_))
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MachineError {
    #[error("configuration is terminal")]
    Terminal,
    #[error("illegal action {action:?}: {reason}")]
    Illegal { action: Action, reason: &'static str },
    #[error("history is empty")]
    EmptyHistory,
    #[error("last history action is {found:?}, not {expected:?}")]
    HistoryMismatch { expected: Action, found: Action },
    #[error("action count {count} exceeds bound {bound}")]
    BoundExceeded { count: usize, bound: usize },
}
