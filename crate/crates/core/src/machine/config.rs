use serde::{Deserialize, Serialize};

use super::{Action, Cell, Machine, MachineError, MachineKind, State, TagId};

/// Class-specific data needed to revert an action exactly.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Undo {
    NoBack,
    Tag { prev: Cell<TagId> },
    Left { popped: usize, prev_gov: Cell<usize> },
    Right { prev_gov: Cell<usize> },
    Shift,
    Reduce { popped: usize, prev_gov: Cell<usize> },
}

/// A non-BACK action still in effect, with the data to undo it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Entry {
    pub action: Action,
    /// Word index when the action was applied.
    pub word_index: usize,
    pub prev_state: State,
    pub prev_frontier: usize,
    pub undo: Undo,
    /// Immediate reward granted at apply time (training only).
    pub reward: f64,
}

/// Payload of a BACK action: the entries it retracted, oldest first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackRecord {
    pub retracted: Vec<Entry>,
    /// 1-based position whose counter was incremented.
    pub budget_pos: usize,
    pub prev_word_index: usize,
    pub prev_frontier: usize,
    pub reward: f64,
}

/// One step of the chronological history.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub action: Action,
    pub word_index: usize,
    pub state: State,
    pub reward: f64,
}

/// Full machine state for one sentence.
///
/// `history` lists every action ever applied, BACK included, so folding
/// [`Configuration::apply`] over it reproduces the configuration. The actions
/// still in effect are kept separately on a LIFO of [`Entry`] values, and
/// every BACK keeps a [`BackRecord`] so it can itself be undone.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Configuration {
    n: usize,
    state: State,
    word_index: usize,
    stack: Vec<usize>,
    pos_tape: Vec<Cell<TagId>>,
    gov_tape: Vec<Cell<usize>>,
    history: Vec<Step>,
    live: Vec<Entry>,
    backs: Vec<BackRecord>,
    back_counts: Vec<u32>,
    frontier: usize,
    terminal: bool,
}

impl Configuration {
    pub fn initial(n: usize, machine: &Machine) -> Self {
        let mut c = Configuration {
            n,
            state: machine.initial_state(),
            word_index: 1,
            stack: Vec::new(),
            pos_tape: vec![Cell::Empty; n],
            gov_tape: vec![Cell::Empty; n],
            history: Vec::new(),
            live: Vec::new(),
            backs: Vec::new(),
            back_counts: vec![0; n],
            frontier: 1,
            terminal: false,
        };
        c.terminal = c.reached_end(machine);
        c
    }

    /// Folds [`Configuration::apply`] over `actions` from the initial configuration.
    pub fn replay(n: usize, machine: &Machine, actions: &[Action]) -> Result<Self, MachineError> {
        let mut c = Configuration::initial(n, machine);
        for &a in actions {
            c.apply(machine, a)?;
        }
        Ok(c)
    }

    /// Equality on everything except the history bookkeeping.
    pub fn same_state(&self, other: &Configuration) -> bool {
        self.state == other.state
            && self.word_index == other.word_index
            && self.stack == other.stack
            && self.pos_tape == other.pos_tape
            && self.gov_tape == other.gov_tape
            && self.back_counts == other.back_counts
            && self.frontier == other.frontier
            && self.terminal == other.terminal
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn state(&self) -> State {
        self.state
    }

    pub fn word_index(&self) -> usize {
        self.word_index
    }

    pub fn stack(&self) -> &[usize] {
        &self.stack
    }

    pub fn frontier(&self) -> usize {
        self.frontier
    }

    pub fn is_terminal(&self) -> bool {
        self.terminal
    }

    pub fn history(&self) -> &[Step] {
        &self.history
    }

    /// Actions currently in effect, oldest first.
    pub fn live(&self) -> &[Entry] {
        &self.live
    }

    /// Live entries a BACK applied now would retract: the suffix through
    /// the most recent NOBACK (empty if there is none).
    pub fn back_span(&self) -> &[Entry] {
        match self.live.iter().rposition(|e| e.action == Action::NoBack) {
            Some(i) => &self.live[i..],
            None => &[],
        }
    }

    pub fn back_records(&self) -> &[BackRecord] {
        &self.backs
    }

    /// Per-word BACK counters, indexed by `position - 1`.
    pub fn back_counts(&self) -> &[u32] {
        &self.back_counts
    }

    /// POS cell of 1-based word `i`.
    pub fn pos(&self, i: usize) -> Cell<TagId> {
        self.pos_tape[i - 1]
    }

    /// Governor cell of 1-based word `i`.
    pub fn gov(&self, i: usize) -> Cell<usize> {
        self.gov_tape[i - 1]
    }

    pub fn pos_tape(&self) -> &[Cell<TagId>] {
        &self.pos_tape
    }

    pub fn gov_tape(&self) -> &[Cell<usize>] {
        &self.gov_tape
    }

    /// Final heads: unset governors are read as the root.
    pub fn heads(&self) -> Vec<usize> {
        self.gov_tape.iter().map(|c| c.value().unwrap_or(0)).collect()
    }

    fn in_drain(&self) -> bool {
        self.word_index == self.n + 1
    }

    /// Position whose counter a BACK predicted now would use.
    fn budget_pos(&self) -> usize {
        self.word_index.min(self.n)
    }

    /// Whether the live history holds a complete word span to undo.
    pub fn has_undoable_span(&self) -> bool {
        self.live.iter().any(|e| e.action == Action::NoBack)
    }

    /// Checks every BACK precondition: budget, something to undo, and room
    /// left under the action bound for the worst-case continuation.
    pub fn back_allowed(&self, machine: &Machine) -> Result<(), &'static str> {
        let Some(budget) = machine.budget else {
            return Err("machine has no BACK state");
        };
        if self.state != State::Back {
            return Err("BACK is only predicted in the BACK state");
        }
        let pos = self.budget_pos();
        if pos == 0 || self.back_counts[pos - 1] >= budget.k {
            return Err("BACK budget exhausted for this word");
        }
        // Where would the BACK land?
        let mut stack_len = self.stack.len() as isize;
        let mut landing = None;
        for e in self.live.iter().rev() {
            match e.action {
                Action::Right | Action::Shift => stack_len -= 1,
                Action::Left | Action::Reduce => stack_len += 1,
                Action::NoBack => {
                    landing = Some(e.word_index);
                    break;
                }
                _ => {}
            }
        }
        let Some(landing) = landing else {
            return Err("no previous word to undo");
        };
        let after = self.history.len()
            + 1
            + remaining_bound(machine, self.n, State::Back, landing, stack_len as usize);
        if after > machine.max_actions(self.n) {
            return Err("BACK would exceed the action bound");
        }
        Ok(())
    }

    /// Checks the preconditions of `action` without applying it.
    pub fn check(&self, machine: &Machine, action: Action) -> Result<(), MachineError> {
        if self.terminal {
            return Err(MachineError::Terminal);
        }
        let illegal = |reason| Err(MachineError::Illegal { action, reason });
        match (self.state, action) {
            (State::Back, Action::Back) => match self.back_allowed(machine) {
                Ok(()) => Ok(()),
                Err(reason) => illegal(reason),
            },
            (State::Back, Action::NoBack) => Ok(()),
            (State::Pos, Action::Tag(t)) => {
                if t.0 < machine.n_tags {
                    Ok(())
                } else {
                    illegal("tag outside the inventory")
                }
            }
            (State::Synt, a) if a.is_parse() => self.check_parse(action),
            _ => illegal("action not available in the current state"),
        }
    }

    /// Arc-eager structural preconditions.
    pub fn check_parse(&self, action: Action) -> Result<(), MachineError> {
        let illegal = |reason| Err(MachineError::Illegal { action, reason });
        let top = self.stack.last().copied();
        if self.in_drain() {
            return match (action, top) {
                (Action::Reduce, Some(_)) => Ok(()),
                (Action::Reduce, None) => illegal("REDUCE on an empty stack"),
                _ => illegal("only REDUCE is possible once every word is read"),
            };
        }
        match (action, top) {
            (Action::Shift, _) => Ok(()),
            (Action::Left | Action::Right | Action::Reduce, None) => illegal("empty stack"),
            (Action::Left, Some(s)) if self.gov(s).is_set() => illegal("LEFT on a governed word"),
            (Action::Reduce, Some(s)) if !self.gov(s).is_set() => {
                illegal("REDUCE on an ungoverned word")
            }
            (Action::Left | Action::Right | Action::Reduce, Some(_)) => Ok(()),
            _ => illegal("not a parsing action"),
        }
    }

    pub fn is_legal(&self, machine: &Machine, action: Action) -> bool {
        self.check(machine, action).is_ok()
    }

    /// Every action legal in this configuration.
    pub fn legal_actions(&self, machine: &Machine) -> Result<Vec<Action>, MachineError> {
        if self.terminal {
            return Err(MachineError::Terminal);
        }
        let candidates: Vec<Action> = match self.state {
            State::Back => vec![Action::NoBack, Action::Back],
            State::Pos => (0..machine.n_tags).map(|t| Action::Tag(TagId(t))).collect(),
            State::Synt => super::PARSE_ACTIONS.to_vec(),
        };
        Ok(candidates
            .into_iter()
            .filter(|&a| self.is_legal(machine, a))
            .collect())
    }

    pub fn apply(&mut self, machine: &Machine, action: Action) -> Result<(), MachineError> {
        self.apply_rewarded(machine, action, 0.0)
    }

    /// Applies `action`, attaching `reward` to its history entry.
    pub fn apply_rewarded(
        &mut self,
        machine: &Machine,
        action: Action,
        reward: f64,
    ) -> Result<(), MachineError> {
        self.check(machine, action)?;
        let step = Step { action, word_index: self.word_index, state: self.state, reward };
        if action == Action::Back {
            self.apply_back(reward);
        } else {
            let prev_state = self.state;
            let prev_frontier = self.frontier;
            let word_index = self.word_index;
            let undo = self.perform(machine.kind, action);
            self.state = self.next_state(machine, action);
            self.frontier = self.frontier.max(self.word_index);
            self.live.push(Entry {
                action,
                word_index,
                prev_state,
                prev_frontier,
                undo,
                reward,
            });
        }
        self.history.push(step);
        self.terminal = if action == Action::NoBack && self.in_drain() {
            true
        } else {
            self.reached_end(machine)
        };
        Ok(())
    }

    /// Undoes the last applied action, restoring the previous configuration
    /// exactly (tapes, stack, counters and frontier).
    pub fn undo_last(&mut self) -> Result<Action, MachineError> {
        let step = self.history.pop().ok_or(MachineError::EmptyHistory)?;
        if step.action == Action::Back {
            let rec = self.backs.pop().expect("BACK step without record");
            self.back_counts[rec.budget_pos - 1] -= 1;
            for entry in rec.retracted {
                self.word_index = entry.word_index;
                self.perform_replay(&entry);
                self.live.push(entry);
            }
            self.word_index = rec.prev_word_index;
            self.frontier = rec.prev_frontier;
        } else {
            let entry = self.live.pop().expect("history and live entries out of sync");
            self.revert(&entry);
            self.frontier = entry.prev_frontier;
        }
        self.state = step.state;
        self.word_index = step.word_index;
        self.terminal = false;
        Ok(step.action)
    }

    /// Undoes `action`, which must be the last history entry.
    pub fn undo(&mut self, action: Action) -> Result<(), MachineError> {
        match self.history.last() {
            None => Err(MachineError::EmptyHistory),
            Some(step) if step.action != action => Err(MachineError::HistoryMismatch {
                expected: action,
                found: step.action,
            }),
            Some(_) => self.undo_last().map(|_| ()),
        }
    }

    fn apply_back(&mut self, reward: f64) {
        let budget_pos = self.budget_pos();
        self.back_counts[budget_pos - 1] += 1;
        let prev_word_index = self.word_index;
        let prev_frontier = self.frontier;
        let mut retracted = Vec::new();
        while let Some(entry) = self.live.pop() {
            self.retract(&entry);
            let done = entry.action == Action::NoBack;
            retracted.push(entry);
            if done {
                break;
            }
        }
        retracted.reverse();
        self.backs.push(BackRecord {
            retracted,
            budget_pos,
            prev_word_index,
            prev_frontier,
            reward,
        });
    }

    /// Writes the effect of `action` on tapes, stack and word index.
    fn perform(&mut self, kind: MachineKind, action: Action) -> Undo {
        let w = self.word_index;
        match action {
            Action::NoBack | Action::Back => Undo::NoBack,
            Action::Tag(t) => {
                let prev = self.pos_tape[w - 1];
                self.pos_tape[w - 1] = Cell::Value(t);
                if kind == MachineKind::Tagger {
                    self.word_index += 1;
                }
                Undo::Tag { prev }
            }
            Action::Left => {
                let popped = self.stack.pop().expect("LEFT on empty stack");
                let prev_gov = self.gov_tape[popped - 1];
                self.gov_tape[popped - 1] = Cell::Value(w);
                Undo::Left { popped, prev_gov }
            }
            Action::Right => {
                let top = *self.stack.last().expect("RIGHT on empty stack");
                let prev_gov = self.gov_tape[w - 1];
                self.gov_tape[w - 1] = Cell::Value(top);
                self.stack.push(w);
                self.word_index += 1;
                Undo::Right { prev_gov }
            }
            Action::Shift => {
                self.stack.push(w);
                self.word_index += 1;
                Undo::Shift
            }
            Action::Reduce => {
                let popped = self.stack.pop().expect("REDUCE on empty stack");
                let prev_gov = self.gov_tape[popped - 1];
                if !prev_gov.is_set() {
                    // Only reachable while draining: attach to the root.
                    self.gov_tape[popped - 1] = Cell::Value(0);
                }
                Undo::Reduce { popped, prev_gov }
            }
        }
    }

    /// Re-executes a retracted entry. The caller positions the word index,
    /// so whether TAG advances it does not matter here.
    fn perform_replay(&mut self, entry: &Entry) {
        let _ = self.perform(MachineKind::TagParser, entry.action);
    }

    /// Exact inverse of [`Configuration::perform`] plus state restoration.
    fn revert(&mut self, entry: &Entry) {
        match entry.undo {
            Undo::NoBack => {}
            Undo::Shift => {
                self.stack.pop();
            }
            Undo::Tag { prev } => self.pos_tape[entry.word_index - 1] = prev,
            Undo::Left { popped, prev_gov } | Undo::Reduce { popped, prev_gov } => {
                self.gov_tape[popped - 1] = prev_gov;
                self.stack.push(popped);
            }
            Undo::Right { prev_gov } => {
                self.stack.pop();
                self.gov_tape[entry.word_index - 1] = prev_gov;
            }
        }
        self.state = entry.prev_state;
        self.word_index = entry.word_index;
    }

    /// Undo as performed by BACK: every cell the action wrote becomes
    /// `Erased`, and the frontier is left untouched.
    fn retract(&mut self, entry: &Entry) {
        match entry.undo {
            Undo::NoBack => {}
            Undo::Shift => {
                self.stack.pop();
            }
            Undo::Tag { .. } => self.pos_tape[entry.word_index - 1] = Cell::Erased,
            Undo::Left { popped, .. } => {
                self.gov_tape[popped - 1] = Cell::Erased;
                self.stack.push(popped);
            }
            Undo::Reduce { popped, prev_gov } => {
                if !prev_gov.is_set() {
                    self.gov_tape[popped - 1] = Cell::Erased;
                }
                self.stack.push(popped);
            }
            Undo::Right { .. } => {
                self.stack.pop();
                self.gov_tape[entry.word_index - 1] = Cell::Erased;
            }
        }
        self.state = entry.prev_state;
        self.word_index = entry.word_index;
    }

    /// Automaton transition, evaluated after the action's effect.
    fn next_state(&self, machine: &Machine, action: Action) -> State {
        let bt = machine.is_backtracking();
        let kind = machine.kind;
        match action {
            Action::Back => State::Back,
            Action::NoBack => {
                if self.in_drain() {
                    State::Back
                } else if kind.tags() {
                    State::Pos
                } else {
                    State::Synt
                }
            }
            Action::Tag(_) => match kind {
                MachineKind::TagParser => State::Synt,
                _ if bt => State::Back,
                _ => State::Pos,
            },
            Action::Left => State::Synt,
            Action::Reduce => {
                if self.in_drain() && self.stack.is_empty() && bt {
                    State::Back
                } else {
                    State::Synt
                }
            }
            Action::Right | Action::Shift => {
                if self.in_drain() {
                    State::Synt
                } else if bt {
                    State::Back
                } else if kind.tags() {
                    State::Pos
                } else {
                    State::Synt
                }
            }
        }
    }

    fn reached_end(&self, machine: &Machine) -> bool {
        if !self.in_drain() {
            return false;
        }
        match self.state {
            State::Back => self.back_allowed(machine).is_err(),
            _ => self.stack.is_empty(),
        }
    }
}

/// Largest number of actions still needed from a configuration in `state`
/// at word `w` with `stack_len` stacked words, assuming no further BACK.
pub(crate) fn remaining_bound(
    machine: &Machine,
    n: usize,
    state: State,
    w: usize,
    stack_len: usize,
) -> usize {
    let kind = machine.kind;
    let bt = machine.is_backtracking();
    let tag = kind.tags() as usize;
    let push = kind.parses() as usize;
    let per_word = bt as usize + tag + push;
    let final_noback = (bt && machine.k() >= 1) as usize;
    let pops = |unpushed: usize| if kind.parses() { stack_len + unpushed } else { 0 };
    if w > n {
        return match state {
            State::Back => final_noback,
            State::Synt => stack_len + final_noback,
            State::Pos => 0,
        };
    }
    let later = n - w;
    match state {
        State::Back => per_word * (later + 1) + pops(later + 1) + final_noback,
        State::Pos => tag + push + per_word * later + pops(later + 1) + final_noback,
        State::Synt => push + per_word * later + pops(later + 1) + final_noback,
    }
}
