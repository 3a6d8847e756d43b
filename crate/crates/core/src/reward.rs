//! Immediate rewards for tagging, parsing, BACK and NOBACK actions.

use thiserror::Error;

use crate::corpus::Sentence;
use crate::machine::{Action, Configuration, Machine, TagId, TagSet};
use crate::oracle::parse_loss;

/// Reward for any action the machine cannot execute.
pub const ILLEGAL_REWARD: f64 = -1.5;

#[derive(Debug, Error, PartialEq)]
pub enum RewardError {
    #[error("undone actions carry a positive total reward ({0}); rewards are never positive")]
    NegativeErrorMass(f64),
}

/// 0 for the gold tag, -1 otherwise.
pub fn tag_reward(predicted: TagId, gold: TagId) -> f64 {
    if predicted == gold {
        0.0
    } else {
        -1.0
    }
}

/// Minus the number of gold arcs lost, or [`ILLEGAL_REWARD`].
pub fn parse_reward(c: &Configuration, machine: &Machine, action: Action, heads: &[usize]) -> f64 {
    match parse_loss(c, machine, action, heads) {
        Ok(loss) => -(loss as f64),
        Err(_) => ILLEGAL_REWARD,
    }
}

/// `-1` when nothing was wrong, `ln(E + 1)` otherwise.
pub fn phi(e: f64) -> f64 {
    if e == 0.0 {
        -1.0
    } else {
        (e + 1.0).ln()
    }
}

/// BACK reward from the rewards of the actions it undoes, with
/// `E = -sum(rewards)`.
pub fn back_reward(undone_rewards: &[f64]) -> Result<f64, RewardError> {
    let e = -undone_rewards.iter().sum::<f64>();
    if e < 0.0 {
        return Err(RewardError::NegativeErrorMass(-e));
    }
    Ok(phi(e))
}

pub fn noback_reward() -> f64 {
    0.0
}

/// Reward of `action` in `c`, using the rewards stored on the live history
/// for BACK.
pub fn reward(
    c: &Configuration,
    machine: &Machine,
    action: Action,
    sentence: &Sentence,
    tags: &TagSet,
) -> Result<f64, RewardError> {
    if c.check(machine, action).is_err() {
        return Ok(ILLEGAL_REWARD);
    }
    Ok(match action {
        Action::NoBack => noback_reward(),
        Action::Back => {
            let undone: Vec<f64> = c.back_span().iter().map(|e| e.reward).collect();
            back_reward(&undone)?
        }
        Action::Tag(t) => tag_reward(t, tags.id(&sentence.tokens[c.word_index() - 1].upos)),
        _ => parse_reward(c, machine, action, &sentence.heads()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::machine::MachineKind;
    use approx::assert_abs_diff_eq;

    #[test]
    fn phi_values() {
        assert_eq!(back_reward(&[0.0, 0.0, 0.0]), Ok(-1.0));
        assert_abs_diff_eq!(back_reward(&[-1.0]).unwrap(), 2f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(back_reward(&[-1.0, -2.0, 0.0]).unwrap(), 4f64.ln(), epsilon = 1e-12);
        assert!(matches!(back_reward(&[0.5]), Err(RewardError::NegativeErrorMass(_))));
    }

    #[test]
    fn phi_shape() {
        let es: Vec<f64> = (0..50).map(|i| i as f64 * 0.5).collect();
        for w in es.windows(2) {
            assert!(phi(w[0]) <= phi(w[1]));
            if w[0] >= 1.0 {
                assert!(phi(w[1]) / w[1] < phi(w[0]) / w[0]);
            }
        }
    }

    #[test]
    fn tag_rewards() {
        assert_eq!(tag_reward(TagId(3), TagId(3)), 0.0);
        assert_eq!(tag_reward(TagId(2), TagId(3)), -1.0);
        assert_eq!(tag_reward(TagId::UNKNOWN, TagId::UNKNOWN), 0.0);
    }

    #[test]
    fn parse_rewards() {
        let s = Sentence::from_triples([("a", "X", 2), ("b", "Y", 0), ("c", "X", 2)]);
        let tags = TagSet::from_sentences([&s]);
        let m = Machine::plain(MachineKind::Parser, tags.len());
        let mut c = Configuration::initial(3, &m);
        let heads = s.heads();
        assert_eq!(parse_reward(&c, &m, Action::Reduce, &heads), ILLEGAL_REWARD);
        assert_eq!(parse_reward(&c, &m, Action::Shift, &heads), 0.0);
        c.apply(&m, Action::Shift).unwrap();
        assert_eq!(parse_reward(&c, &m, Action::Right, &heads), -2.0);
        assert_eq!(reward(&c, &m, Action::Back, &s, &tags), Ok(ILLEGAL_REWARD));
    }

    #[test]
    fn back_uses_stored_rewards() {
        let s = Sentence::from_triples([("a", "X", 0), ("b", "Y", 1)]);
        let tags = TagSet::from_sentences([&s]);
        let m = Machine::backtracking(MachineKind::Tagger, tags.len(), 1);
        let mut c = Configuration::initial(2, &m);
        for a in [Action::NoBack, Action::Tag(tags.id("Y"))] {
            let r = reward(&c, &m, a, &s, &tags).unwrap();
            c.apply_rewarded(&m, a, r).unwrap();
        }
        assert_abs_diff_eq!(reward(&c, &m, Action::Back, &s, &tags).unwrap(), 2f64.ln());
        assert_eq!(reward(&c, &m, Action::NoBack, &s, &tags), Ok(0.0));
    }
}
