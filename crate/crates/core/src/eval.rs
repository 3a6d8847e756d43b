//! Scoring, significance testing and statistics about BACK actions.

use std::fmt::Write as _;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Sentence;
use crate::machine::{Action, Configuration, Machine, TagSet};
use crate::oracle::dynamic_oracle;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("corpora are not aligned: {0}")]
    Misaligned(String),
    #[error("trace step {step} ({action}) has no correctness annotation")]
    Unannotated { step: usize, action: String },
    #[error("malformed trace: {0}")]
    Trace(String),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub tokens: usize,
    pub upos_correct: usize,
    pub head_correct: usize,
    pub upos_accuracy: f64,
    pub uas: f64,
}

impl Metrics {
    fn from_counts(tokens: usize, upos_correct: usize, head_correct: usize) -> Self {
        let ratio = |c: usize| if tokens == 0 { 0.0 } else { c as f64 / tokens as f64 };
        Metrics {
            tokens,
            upos_correct,
            head_correct,
            upos_accuracy: ratio(upos_correct),
            uas: ratio(head_correct),
        }
    }
}

/// Which accuracy a comparison is about.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Measure {
    Upos,
    Uas,
}

fn check_aligned(pred: &[Sentence], gold: &[Sentence]) -> Result<(), EvalError> {
    if pred.len() != gold.len() {
        return Err(EvalError::Misaligned(format!(
            "{} predicted sentences, {} gold",
            pred.len(),
            gold.len()
        )));
    }
    for (i, (p, g)) in pred.iter().zip(gold).enumerate() {
        if p.n() != g.n() {
            return Err(EvalError::Misaligned(format!(
                "sentence {} has {} tokens, gold has {}",
                i + 1,
                p.n(),
                g.n()
            )));
        }
        if let Some(t) = p.tokens.iter().zip(&g.tokens).position(|(a, b)| a.form != b.form) {
            return Err(EvalError::Misaligned(format!("sentence {} differs at token {}", i + 1, t + 1)));
        }
    }
    Ok(())
}

/// Per-sentence `(tokens, correct tags, correct heads)`.
fn sentence_counts(pred: &Sentence, gold: &Sentence) -> (usize, usize, usize) {
    let mut upos = 0;
    let mut heads = 0;
    for (p, g) in pred.tokens.iter().zip(&gold.tokens) {
        upos += usize::from(p.upos == g.upos);
        heads += usize::from(p.head == g.head);
    }
    (gold.n(), upos, heads)
}

/// UPOS accuracy and unlabeled attachment score.
pub fn score(pred: &[Sentence], gold: &[Sentence]) -> Result<Metrics, EvalError> {
    check_aligned(pred, gold)?;
    let (mut t, mut u, mut h) = (0, 0, 0);
    for (p, g) in pred.iter().zip(gold) {
        let (a, b, c) = sentence_counts(p, g);
        t += a;
        u += b;
        h += c;
    }
    Ok(Metrics::from_counts(t, u, h))
}

/// Paired bootstrap over sentences: the fraction of resampled corpora on
/// which system B scores at least as well as system A. Small values mean
/// A is significantly better.
pub fn paired_bootstrap(
    pred_a: &[Sentence],
    pred_b: &[Sentence],
    gold: &[Sentence],
    measure: Measure,
    resamples: usize,
    seed: u64,
) -> Result<f64, EvalError> {
    check_aligned(pred_a, gold)?;
    check_aligned(pred_b, gold)?;
    if gold.is_empty() || resamples == 0 {
        return Ok(1.0);
    }
    let pick = |(_, u, h): (usize, usize, usize)| match measure {
        Measure::Upos => u as i64,
        Measure::Uas => h as i64,
    };
    let diffs: Vec<i64> = pred_a
        .iter()
        .zip(pred_b)
        .zip(gold)
        .map(|((a, b), g)| pick(sentence_counts(a, g)) - pick(sentence_counts(b, g)))
        .collect();
    let mut rng = StdRng::seed_from_u64(seed);
    let n = diffs.len();
    let mut b_wins = 0usize;
    for _ in 0..resamples {
        // Same token total for both systems, so comparing correct counts suffices.
        let delta: i64 = (0..n).map(|_| diffs[rng.gen_range(0..n)]).sum();
        if delta <= 0 {
            b_wins += 1;
        }
    }
    Ok(b_wins as f64 / resamples as f64)
}

/// One decoded action with its correctness against the gold annotation.
/// BACK and NOBACK carry no correctness.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub action: Action,
    pub word_index: usize,
    pub correct: Option<bool>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedTrace {
    pub steps: Vec<TraceStep>,
}

/// Replays `actions` and marks every tagging and parsing action as correct
/// (gold tag, or no gold arc lost) or not.
pub fn annotate_trace(
    sentence: &Sentence,
    tags: &TagSet,
    machine: &Machine,
    actions: &[Action],
) -> Result<AnnotatedTrace, crate::Error> {
    let mut c = Configuration::initial(sentence.n(), machine);
    let mut steps = Vec::with_capacity(actions.len());
    for &a in actions {
        let correct = match a {
            Action::Back | Action::NoBack => None,
            _ => Some(dynamic_oracle(&c, machine, a, sentence, tags)?.optimal),
        };
        steps.push(TraceStep { action: a, word_index: c.word_index(), correct });
        c.apply(machine, a)?;
    }
    Ok(AnnotatedTrace { steps })
}

/// Behaviour of BACK actions over a set of traces.
///
/// A span is the run of actions following a NOBACK; it is erroneous if one
/// of them is incorrect. Every BACK undoes one span and is later followed by
/// a re-prediction span for the same word, which gives its category.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BackStats {
    pub n_actions: usize,
    /// Incorrect tagging and parsing actions.
    pub n_errors: usize,
    /// Spans containing at least one incorrect action.
    pub n_error_spans: usize,
    /// Words whose surviving span (never undone) holds an incorrect action.
    pub n_word_errors: usize,
    pub n_backs: usize,
    pub b_prec: f64,
    pub b_rec: f64,
    pub cc: f64,
    pub ee: f64,
    pub ce: f64,
    pub ec: f64,
    /// True when there is no BACK (or no erroneous span) and the
    /// corresponding ratios are reported as 0.
    pub undefined: bool,
}

#[derive(Default)]
struct Span {
    word: usize,
    error: bool,
    undone: bool,
}

struct Event {
    undone: usize,
    redo: Option<usize>,
}

pub fn back_stats(traces: &[AnnotatedTrace]) -> Result<BackStats, EvalError> {
    let mut stats = BackStats::default();
    let mut counts = [0usize; 4];
    let mut backs_after_error = 0;
    let mut undone_error_spans = 0;
    for trace in traces {
        let mut spans: Vec<Span> = Vec::new();
        let mut live: Vec<usize> = Vec::new();
        let mut events: Vec<Event> = Vec::new();
        let mut current: Option<usize> = None;
        for (i, step) in trace.steps.iter().enumerate() {
            stats.n_actions += 1;
            match step.action {
                Action::NoBack => {
                    let id = spans.len();
                    spans.push(Span { word: step.word_index, ..Span::default() });
                    live.push(id);
                    current = Some(id);
                    for e in events.iter_mut().filter(|e| e.redo.is_none()) {
                        if spans[e.undone].word == step.word_index {
                            e.redo = Some(id);
                        }
                    }
                }
                Action::Back => {
                    current = None;
                    let id = live
                        .pop()
                        .ok_or_else(|| EvalError::Trace(format!("BACK at step {i} with nothing to undo")))?;
                    spans[id].undone = true;
                    events.push(Event { undone: id, redo: None });
                }
                action => {
                    let correct = step.correct.ok_or_else(|| EvalError::Unannotated {
                        step: i,
                        action: format!("{action:?}"),
                    })?;
                    if !correct {
                        stats.n_errors += 1;
                        if let Some(id) = current {
                            spans[id].error = true;
                        }
                    }
                }
            }
        }
        for s in &spans {
            if s.error {
                stats.n_error_spans += 1;
                undone_error_spans += usize::from(s.undone);
                stats.n_word_errors += usize::from(!s.undone);
            }
        }
        for e in &events {
            let redo = e
                .redo
                .ok_or_else(|| EvalError::Trace("BACK without a re-prediction of its word".into()))?;
            let before = spans[e.undone].error;
            let after = spans[redo].error;
            backs_after_error += usize::from(before);
            counts[match (before, after) {
                (false, false) => 0,
                (true, true) => 1,
                (false, true) => 2,
                (true, false) => 3,
            }] += 1;
        }
        stats.n_backs += events.len();
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    stats.b_prec = ratio(backs_after_error, stats.n_backs);
    stats.b_rec = ratio(undone_error_spans, stats.n_error_spans);
    stats.cc = ratio(counts[0], stats.n_backs);
    stats.ee = ratio(counts[1], stats.n_backs);
    stats.ce = ratio(counts[2], stats.n_backs);
    stats.ec = ratio(counts[3], stats.n_backs);
    stats.undefined = stats.n_backs == 0 || stats.n_error_spans == 0;
    Ok(stats)
}

/// Aligned text table of accuracy rows.
pub fn metrics_table(rows: &[(String, Metrics)]) -> String {
    let width = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max(6);
    let mut out = format!("{:<width$}  {:>7}  {:>7}  {:>7}\n", "system", "tokens", "UPOS", "UAS");
    for (name, m) in rows {
        let _ = writeln!(
            out,
            "{:<width$}  {:>7}  {:>7.2}  {:>7.2}",
            name,
            m.tokens,
            100.0 * m.upos_accuracy,
            100.0 * m.uas
        );
    }
    out
}

/// Aligned text table of BACK statistics, percentages for the ratios.
pub fn back_stats_table(rows: &[(String, BackStats)]) -> String {
    let width = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max(6);
    let mut out = format!(
        "{:<width$}  {:>8}  {:>7}  {:>7}  {:>7}  {:>6}  {:>6}  {:>6}  {:>6}  {:>6}  {:>6}  {:>6}\n",
        "system", "actions", "errors", "spans", "words", "backs", "bPrec", "bRec", "C->C", "E->E", "C->E", "E->C"
    );
    for (name, s) in rows {
        let _ = write!(
            out,
            "{:<width$}  {:>8}  {:>7}  {:>7}  {:>7}  {:>6}  {:>6.2}  {:>6.2}  {:>6.2}  {:>6.2}  {:>6.2}  {:>6.2}",
            name,
            s.n_actions,
            s.n_errors,
            s.n_error_spans,
            s.n_word_errors,
            s.n_backs,
            100.0 * s.b_prec,
            100.0 * s.b_rec,
            100.0 * s.cc,
            100.0 * s.ee,
            100.0 * s.ce,
            100.0 * s.ec
        );
        out.push_str(if s.undefined { "  (undefined ratios shown as 0)\n" } else { "\n" });
    }
    out
}
