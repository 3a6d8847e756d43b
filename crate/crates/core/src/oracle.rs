//! Static and dynamic oracles for tagging and arc-eager parsing.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{is_projective, Sentence};
use crate::machine::{Action, Configuration, Machine, MachineError, State, TagSet, PARSE_ACTIONS};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum OracleError {
    #[error("sentence is not projective")]
    NonProjective,
    #[error("no zero-loss action in a configuration at word {0}")]
    NoOptimalAction(usize),
    #[error(transparent)]
    Machine(#[from] MachineError),
}

/// Judgement of one action in one configuration.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleVerdict {
    /// Gold arcs lost by the action (1 for a wrong tag).
    pub loss: usize,
    pub optimal: bool,
}

/// Gold action sequence: eager attachment, `NOBACK` in every BACK state.
/// Replaying it yields the gold POS and governor tapes.
pub fn static_oracle(
    sentence: &Sentence,
    tags: &TagSet,
    machine: &Machine,
) -> Result<Vec<Action>, OracleError> {
    if machine.kind.parses() && !is_projective(sentence) {
        return Err(OracleError::NonProjective);
    }
    let heads = sentence.heads();
    let mut c = Configuration::initial(sentence.n(), machine);
    let mut actions = Vec::new();
    while !c.is_terminal() {
        let a = match c.state() {
            State::Back => Action::NoBack,
            State::Pos => Action::Tag(tags.id(&sentence.tokens[c.word_index() - 1].upos)),
            State::Synt => static_parse_action(&c, &heads),
        };
        c.apply(machine, a)?;
        actions.push(a);
    }
    Ok(actions)
}

fn static_parse_action(c: &Configuration, heads: &[usize]) -> Action {
    let b = c.word_index();
    let Some(&s) = c.stack().last() else {
        return Action::Shift;
    };
    if b > c.n() {
        return Action::Reduce;
    }
    if heads[s - 1] == b {
        return Action::Left;
    }
    if heads[b - 1] == s {
        return Action::Right;
    }
    let pending = (b..=c.n()).any(|d| heads[d - 1] == s);
    if c.gov(s).is_set() && !pending {
        return Action::Reduce;
    }
    Action::Shift
}

/// Number of gold arcs some continuation of `c` can still produce.
///
/// Arc-eager is arc-decomposable, so this is the sum of per-arc
/// reachability. Erased governors count as unset.
pub fn reachable_gold_arcs(c: &Configuration, heads: &[usize]) -> usize {
    let b = c.word_index();
    let stack = c.stack();
    (1..=c.n())
        .filter(|&d| {
            let h = heads[d - 1];
            if let Some(g) = c.gov(d).value() {
                return g == h;
            }
            if h == 0 || h >= b {
                return true;
            }
            // h has been read; only a RIGHT from h on the stack remains.
            d >= b && stack.contains(&h)
        })
        .count()
}

/// Loss and optimality of `action` in `c`.
pub fn dynamic_oracle(
    c: &Configuration,
    machine: &Machine,
    action: Action,
    sentence: &Sentence,
    tags: &TagSet,
) -> Result<OracleVerdict, OracleError> {
    c.check(machine, action)?;
    Ok(match action {
        Action::NoBack => OracleVerdict { loss: 0, optimal: true },
        Action::Back => OracleVerdict { loss: 0, optimal: false },
        Action::Tag(t) => {
            let gold = tags.id(&sentence.tokens[c.word_index() - 1].upos);
            let ok = t == gold;
            OracleVerdict { loss: usize::from(!ok), optimal: ok }
        }
        _ => {
            let loss = parse_loss(c, machine, action, &sentence.heads())?;
            OracleVerdict { loss, optimal: loss == 0 }
        }
    })
}

/// Gold arcs lost by the legal parsing action `action`.
pub fn parse_loss(
    c: &Configuration,
    machine: &Machine,
    action: Action,
    heads: &[usize],
) -> Result<usize, MachineError> {
    let before = reachable_gold_arcs(c, heads);
    let mut next = c.clone();
    next.apply(machine, action)?;
    Ok(before - reachable_gold_arcs(&next, heads))
}

/// The action the oracle recommends: `NOBACK` in the BACK state, the gold
/// tag in the POS state and, when parsing, the first zero-loss action in the
/// order LEFT, RIGHT, REDUCE, SHIFT.
pub fn optimal_action(
    c: &Configuration,
    machine: &Machine,
    sentence: &Sentence,
    tags: &TagSet,
) -> Result<Action, OracleError> {
    match c.state() {
        State::Back => Ok(Action::NoBack),
        State::Pos => Ok(Action::Tag(tags.id(&sentence.tokens[c.word_index() - 1].upos))),
        State::Synt => {
            let heads = sentence.heads();
            for a in [Action::Left, Action::Right, Action::Reduce, Action::Shift] {
                if c.check(machine, a).is_ok() && parse_loss(c, machine, a, &heads)? == 0 {
                    return Ok(a);
                }
            }
            Err(OracleError::NoOptimalAction(c.word_index()))
        }
    }
}

/// Losses of every parsing action, `None` where illegal, in head order.
pub fn parse_losses(c: &Configuration, machine: &Machine, heads: &[usize]) -> [Option<usize>; 4] {
    PARSE_ACTIONS.map(|a| {
        if c.check(machine, a).is_ok() {
            parse_loss(c, machine, a, heads).ok()
        } else {
            None
        }
    })
}
