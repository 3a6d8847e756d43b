use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{Action, Cell, Configuration, Machine, MachineError, MachineKind, State, TagSet};

/// Machine-readable decode traces: the chronological action sequence of
/// every sentence, with enough metadata to replay them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceFile {
    pub machine: MachineKind,
    pub backtracking: bool,
    pub k: u32,
    pub tags: TagSet,
    pub sentences: Vec<Vec<String>>,
}

impl TraceFile {
    pub fn new(machine: &Machine, tags: &TagSet) -> Self {
        TraceFile {
            machine: machine.kind,
            backtracking: machine.is_backtracking(),
            k: machine.k(),
            tags: tags.clone(),
            sentences: Vec::new(),
        }
    }

    pub fn machine(&self) -> Machine {
        if self.backtracking {
            Machine::backtracking(self.machine, self.tags.len(), self.k)
        } else {
            Machine::plain(self.machine, self.tags.len())
        }
    }

    pub fn push(&mut self, actions: &[Action]) {
        let tags = &self.tags;
        let line = actions.iter().map(|a| a.display(tags).to_string()).collect();
        self.sentences.push(line);
    }

    /// Parsed action sequences.
    pub fn actions(&self) -> Result<Vec<Vec<Action>>, String> {
        self.sentences
            .iter()
            .map(|s| {
                s.iter()
                    .map(|a| Action::parse(a, &self.tags).ok_or_else(|| format!("unknown action '{a}'")))
                    .collect()
            })
            .collect()
    }
}

/// Renders one block per visit of the BACK state (per word for machines
/// without it): governor tape, POS tape, words with the current one starred,
/// BACK counters, followed by the actions leading to the next block.
pub fn render_trace(
    forms: &[&str],
    tags: &TagSet,
    machine: &Machine,
    actions: &[Action],
) -> Result<String, MachineError> {
    let mut config = Configuration::initial(forms.len(), machine);
    let mut out = String::new();
    let mut pending: Vec<String> = Vec::new();
    let visit = |c: &Configuration| {
        if machine.is_backtracking() {
            c.state() == State::Back
        } else {
            true
        }
    };
    render_block(&mut out, &config, forms, tags);
    let mut last_word = config.word_index();
    for &action in actions {
        config.apply(machine, action)?;
        pending.push(action.display(tags).to_string());
        let boundary = if machine.is_backtracking() {
            visit(&config)
        } else {
            config.word_index() != last_word || config.is_terminal()
        };
        if boundary {
            let _ = writeln!(out, "{}", pending.join(", "));
            pending.clear();
            render_block(&mut out, &config, forms, tags);
        }
        last_word = config.word_index();
    }
    if !pending.is_empty() {
        let _ = writeln!(out, "{}", pending.join(", "));
        render_block(&mut out, &config, forms, tags);
    }
    Ok(out)
}

fn render_block(out: &mut String, c: &Configuration, forms: &[&str], tags: &TagSet) {
    let n = forms.len();
    let govs: Vec<String> = (1..=n)
        .map(|i| match c.gov(i) {
            Cell::Empty => String::new(),
            Cell::Erased => "-".into(),
            Cell::Value(h) => h.to_string(),
        })
        .collect();
    let pos: Vec<String> = (1..=n)
        .map(|i| match c.pos(i) {
            Cell::Empty => String::new(),
            Cell::Erased => "-".into(),
            Cell::Value(t) => tags.name(t).to_string(),
        })
        .collect();
    let words: Vec<String> = forms
        .iter()
        .enumerate()
        .map(|(i, f)| {
            if i + 1 == c.word_index() {
                format!("*{f}*")
            } else {
                f.to_string()
            }
        })
        .collect();
    let counts: Vec<String> = c.back_counts().iter().map(u32::to_string).collect();
    let width = govs
        .iter()
        .chain(&pos)
        .chain(&words)
        .map(|s| s.chars().count())
        .max()
        .unwrap_or(1)
        .max(1);
    for row in [&govs, &pos, &words, &counts] {
        let line: Vec<String> = row.iter().map(|s| format!("{s:<width$}")).collect();
        let _ = writeln!(out, "| {} |", line.join(" | "));
    }
    out.push('\n');
}
