use rayon::prelude::*;

use crate::corpus::Sentence;
use crate::eval::{score, Metrics};
use crate::machine::{Action, Configuration, MachineError, TagId};
use crate::neural::Model;
use crate::Result;

/// Result of greedily decoding one sentence.
#[derive(Clone, Debug, PartialEq)]
pub struct Decoded {
    /// Input sentence with predicted tags and/or heads filled in.
    pub sentence: Sentence,
    /// Every action taken, BACK included.
    pub actions: Vec<Action>,
    pub back_counts: Vec<u32>,
    pub config: Configuration,
}

impl Decoded {
    pub fn n_backs(&self) -> usize {
        self.actions.iter().filter(|&&a| a == Action::Back).count()
    }
}

/// Greedy decoding: best legal action at every step, no dropout. `k`
/// overrides the BACK budget of backtracking machines.
pub fn decode(model: &Model, sentence: &Sentence, k: Option<u32>) -> Result<Decoded> {
    let machine = match k {
        Some(k) => model.machine.with_k(k),
        None => model.machine,
    };
    let n = sentence.n();
    let bound = machine.max_actions(n);
    let mut c = Configuration::initial(n, &machine);
    while !c.is_terminal() {
        if c.history().len() >= bound {
            return Err(MachineError::BoundExceeded { count: c.history().len() + 1, bound }.into());
        }
        let a = model.greedy_action(&c, sentence, &machine)?;
        c.apply(&machine, a)?;
    }
    let mut out = sentence.clone();
    for (i, tok) in out.tokens.iter_mut().enumerate() {
        if machine.kind.tags() {
            let tag = c.pos(i + 1).value().unwrap_or(TagId::UNKNOWN);
            tok.upos = model.tags.name(tag).to_string();
        }
        if machine.kind.parses() {
            tok.head = c.gov(i + 1).value().unwrap_or(0);
        }
    }
    Ok(Decoded {
        sentence: out,
        actions: c.history().iter().map(|s| s.action).collect(),
        back_counts: c.back_counts().to_vec(),
        config: c,
    })
}

/// Decodes sentences in parallel; output order follows the input.
pub fn decode_all(model: &Model, sentences: &[Sentence], k: Option<u32>) -> Result<Vec<Decoded>> {
    sentences.par_iter().map(|s| decode(model, s, k)).collect()
}

/// Scores of `model` on `gold`, with the number of BACK actions taken.
pub fn evaluate(model: &Model, gold: &[Sentence], k: Option<u32>) -> Result<(Metrics, usize)> {
    let decoded = decode_all(model, gold, k)?;
    let backs = decoded.iter().map(Decoded::n_backs).sum();
    let pred: Vec<Sentence> = decoded.into_iter().map(|d| d.sentence).collect();
    Ok((score(&pred, gold)?, backs))
}
