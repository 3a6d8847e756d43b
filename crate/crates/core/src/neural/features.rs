use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::corpus::Sentence;
use crate::machine::{Action, Cell, Configuration, Machine, MachineKind, TagId, TagSet};

/// Embedding space of a feature slot.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Space {
    Word,
    Pos,
    Letter,
    Action,
}

impl Space {
    pub const ALL: [Space; 4] = [Space::Word, Space::Pos, Space::Letter, Space::Action];

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Symbols shared by every space. Real symbols start at [`FIRST_SYMBOL`].
pub mod symbol {
    pub const OUT_OF_BOUNDS: u32 = 0;
    pub const EMPTY_STACK: u32 = 1;
    pub const NO_DEP_GOV: u32 = 2;
    pub const NOT_SEEN: u32 = 3;
    pub const ERASED: u32 = 4;
    /// Padding: missing history entries and letters of short words.
    pub const NULL: u32 = 5;
    /// Out-of-vocabulary word or letter.
    pub const UNKNOWN: u32 = 6;
    pub const FIRST_SYMBOL: u32 = 7;
}

use symbol::*;

pub const WINDOW: std::ops::RangeInclusive<isize> = -2..=2;
pub const STACK_DEPTH: usize = 3;
pub const HISTORY: usize = 10;
pub const AFFIX: usize = 4;

/// One extracted input: a symbol per slot plus the dense back-allowed flag.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVector {
    pub ids: Vec<u32>,
    pub dense: Vec<f32>,
}

/// Vocabularies and slot layout for one machine.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureEncoder {
    pub kind: MachineKind,
    pub backtracking: bool,
    pub n_tags: u32,
    words: BTreeMap<String, u32>,
    letters: BTreeMap<char, u32>,
    #[serde(skip)]
    word_index: HashMap<String, u32>,
}

impl FeatureEncoder {
    /// Vocabularies from the training sentences only.
    pub fn new(machine: &Machine, tags: &TagSet, training: &[Sentence]) -> Self {
        let mut words = BTreeMap::new();
        let mut letters = BTreeMap::new();
        for tok in training.iter().flat_map(|s| &s.tokens) {
            let next = FIRST_SYMBOL + words.len() as u32;
            words.entry(tok.form.clone()).or_insert(next);
            for ch in tok.form.chars() {
                let next = FIRST_SYMBOL + letters.len() as u32;
                letters.entry(ch).or_insert(next);
            }
        }
        let mut enc = FeatureEncoder {
            kind: machine.kind,
            backtracking: machine.is_backtracking(),
            n_tags: tags.len() as u32,
            words,
            letters,
            word_index: HashMap::new(),
        };
        enc.rebuild_index();
        enc
    }

    /// Restores the lookup index after deserialization.
    pub fn rebuild_index(&mut self) {
        self.word_index = self.words.iter().map(|(w, &i)| (w.clone(), i)).collect();
    }

    pub fn words(&self) -> impl Iterator<Item = (&str, u32)> {
        self.words.iter().map(|(w, &i)| (w.as_str(), i))
    }

    /// Number of rows of each embedding table.
    pub fn table_sizes(&self) -> [usize; 4] {
        let f = FIRST_SYMBOL as usize;
        [
            f + self.words.len(),
            f + self.n_tags as usize,
            f + self.letters.len(),
            f + self.n_tags as usize + 6,
        ]
    }

    /// Space of every slot, in extraction order.
    pub fn layout(&self) -> Vec<Space> {
        let mut layout = Vec::new();
        for _ in WINDOW {
            layout.extend([Space::Word, Space::Pos]);
        }
        if self.kind.parses() {
            for _ in 0..STACK_DEPTH {
                layout.extend([Space::Word, Space::Pos, Space::Pos, Space::Pos, Space::Pos]);
            }
        }
        layout.extend([Space::Action; HISTORY]);
        layout.extend([Space::Letter; 2 * AFFIX]);
        layout
    }

    /// Number of dense (non-embedded) inputs.
    pub fn dense_len(&self) -> usize {
        usize::from(self.backtracking)
    }

    pub fn word_symbol(&self, form: &str) -> u32 {
        self.word_index.get(form).copied().unwrap_or(UNKNOWN)
    }

    fn letter_symbol(&self, ch: char) -> u32 {
        self.letters.get(&ch).copied().unwrap_or(UNKNOWN)
    }

    pub fn action_symbol(&self, action: Action) -> u32 {
        let t = self.n_tags;
        FIRST_SYMBOL
            + match action {
                Action::Tag(tag) => tag.0,
                Action::Left => t,
                Action::Right => t + 1,
                Action::Shift => t + 2,
                Action::Reduce => t + 3,
                Action::Back => t + 4,
                Action::NoBack => t + 5,
            }
    }

    fn tag_symbol(tag: TagId) -> u32 {
        FIRST_SYMBOL + tag.0
    }

    /// Features of `c`. Words right of the frontier are not seen yet; the
    /// parser reads POS from the input sentence, the other machines from
    /// their own POS tape.
    pub fn extract(
        &self,
        c: &Configuration,
        sentence: &Sentence,
        tags: &TagSet,
        machine: &Machine,
    ) -> FeatureVector {
        let n = c.n() as isize;
        let w = c.word_index() as isize;
        let frontier = c.frontier() as isize;
        let visible = |i: isize| -> Result<usize, u32> {
            if i < 1 || i > n {
                Err(OUT_OF_BOUNDS)
            } else if i > frontier {
                Err(NOT_SEEN)
            } else {
                Ok(i as usize)
            }
        };
        let form = |i: isize| match visible(i) {
            Ok(i) => self.word_symbol(&sentence.tokens[i - 1].form),
            Err(s) => s,
        };
        let pos = |i: isize| match visible(i) {
            Ok(i) if self.kind == MachineKind::Parser => {
                Self::tag_symbol(tags.id(&sentence.tokens[i - 1].upos))
            }
            Ok(i) => match c.pos(i) {
                Cell::Value(t) => Self::tag_symbol(t),
                Cell::Erased => ERASED,
                Cell::Empty => NOT_SEEN,
            },
            Err(s) => s,
        };

        let mut ids = Vec::with_capacity(48);
        for d in WINDOW {
            ids.push(form(w + d));
            ids.push(pos(w + d));
        }
        if self.kind.parses() {
            let stack = c.stack();
            let govs = c.gov_tape();
            for j in 0..STACK_DEPTH {
                let Some(&s) = stack.len().checked_sub(j + 1).map(|k| &stack[k]) else {
                    ids.extend([EMPTY_STACK; 5]);
                    continue;
                };
                ids.push(form(s as isize));
                ids.push(pos(s as isize));
                ids.push(match c.gov(s) {
                    Cell::Value(0) => OUT_OF_BOUNDS,
                    Cell::Value(g) => pos(g as isize),
                    Cell::Empty => NO_DEP_GOV,
                    Cell::Erased => ERASED,
                });
                let is_dep = |d: &usize| govs[*d - 1] == Cell::Value(s);
                let mut deps = (1..=c.n()).filter(is_dep);
                let left = deps.next();
                let right = deps.last().or(left);
                ids.push(left.map_or(NO_DEP_GOV, |d| pos(d as isize)));
                ids.push(right.map_or(NO_DEP_GOV, |d| pos(d as isize)));
            }
        }
        let history = c.history();
        for j in 0..HISTORY {
            ids.push(match history.len().checked_sub(j + 1) {
                Some(k) => self.action_symbol(history[k].action),
                None => NULL,
            });
        }
        if w <= n {
            let chars: Vec<char> = sentence.tokens[w as usize - 1].form.chars().collect();
            for j in 0..AFFIX {
                ids.push(chars.get(j).map_or(NULL, |&ch| self.letter_symbol(ch)));
            }
            for j in 0..AFFIX {
                let k = chars.len().checked_sub(j + 1);
                ids.push(k.map_or(NULL, |k| self.letter_symbol(chars[k])));
            }
        } else {
            ids.extend([OUT_OF_BOUNDS; 2 * AFFIX]);
        }
        let mut dense = Vec::new();
        if self.backtracking {
            dense.push(if c.back_allowed(machine).is_ok() { 1.0 } else { 0.0 });
        }
        FeatureVector { ids, dense }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Sentence;

    fn setup(kind: MachineKind) -> (Sentence, TagSet, Machine, FeatureEncoder) {
        let s = Sentence::from_triples([("the", "DET", 2), ("cat", "NOUN", 0)]);
        let tags = TagSet::from_sentences([&s]);
        let m = Machine::backtracking(kind, tags.len(), 1);
        let enc = FeatureEncoder::new(&m, &tags, std::slice::from_ref(&s));
        (s, tags, m, enc)
    }

    #[test]
    fn initial_window_and_padding() {
        let (s, tags, m, enc) = setup(MachineKind::TagParser);
        let c = Configuration::initial(2, &m);
        let f = enc.extract(&c, &s, &tags, &m);
        assert_eq!(f.ids.len(), enc.layout().len());
        assert_eq!(&f.ids[..4], &[OUT_OF_BOUNDS; 4]);
        assert_eq!(f.ids[4], enc.word_symbol("the"));
        assert_eq!(f.ids[5], NOT_SEEN);
        assert_eq!(&f.ids[6..10], &[NOT_SEEN, NOT_SEEN, OUT_OF_BOUNDS, OUT_OF_BOUNDS]);
        assert_eq!(&f.ids[10..25], &[EMPTY_STACK; 15]);
        assert_eq!(&f.ids[25..35], &[NULL; 10]);
        // Prefix t, h, e, pad and suffix e, h, t, pad.
        assert_eq!(f.ids[38], NULL);
        assert_eq!(f.ids[42], NULL);
        assert_eq!(f.ids[35], f.ids[41]);
        assert_ne!(f.ids[35], f.ids[36]);
        assert_eq!(f.dense, vec![0.0]);
    }

    #[test]
    fn erased_cells_are_marked() {
        let (s, tags, m, enc) = setup(MachineKind::Tagger);
        let mut c = Configuration::initial(2, &m);
        for a in [Action::NoBack, Action::Tag(tags.id("NOUN"))] {
            c.apply(&m, a).unwrap();
        }
        let f = enc.extract(&c, &s, &tags, &m);
        assert_eq!(f.ids[3], FeatureEncoder::tag_symbol(tags.id("NOUN")));
        assert_eq!(f.dense, vec![1.0]);
        c.apply(&m, Action::Back).unwrap();
        let f = enc.extract(&c, &s, &tags, &m);
        // Back on word 1: its tag is erased and word 2 is now visible.
        assert_eq!(f.ids[5], ERASED);
        assert_eq!(f.ids[6], enc.word_symbol("cat"));
        assert_eq!(f.ids[10], enc.action_symbol(Action::Back));
    }

    #[test]
    fn parser_reads_input_tags_and_stack() {
        let (s, tags, _, _) = setup(MachineKind::Parser);
        let m = Machine::plain(MachineKind::Parser, tags.len());
        let enc = FeatureEncoder::new(&m, &tags, std::slice::from_ref(&s));
        let c = Configuration::replay(2, &m, &[Action::Shift, Action::Left]).unwrap();
        let f = enc.extract(&c, &s, &tags, &m);
        assert_eq!(f.ids[5], FeatureEncoder::tag_symbol(tags.id("NOUN")));
        assert_eq!(f.ids[3], FeatureEncoder::tag_symbol(tags.id("DET")));
        assert_eq!(&f.ids[10..25], &[EMPTY_STACK; 15]);
        assert!(f.dense.is_empty());
        let c = Configuration::replay(2, &m, &[Action::Shift, Action::Right]).unwrap();
        let f = enc.extract(&c, &s, &tags, &m);
        // s0 = 2 governed by 1, s1 = 1 with rightmost dependent 2.
        assert_eq!(f.ids[12], FeatureEncoder::tag_symbol(tags.id("DET")));
        assert_eq!(&f.ids[13..15], &[NO_DEP_GOV, NO_DEP_GOV]);
        assert_eq!(f.ids[17], NO_DEP_GOV);
        assert_eq!(f.ids[19], FeatureEncoder::tag_symbol(tags.id("NOUN")));
        assert_eq!(&f.ids[20..25], &[EMPTY_STACK; 5]);
    }
}
