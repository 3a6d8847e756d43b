//! CoNLL-U ingestion, tree validation, projectivity and k-fold splitting.
//!
//! Only the ID, FORM, UPOS and HEAD columns are retained. Multiword token
//! ranges (`3-4`) and empty nodes (`3.1`) are skipped, as are comment lines.

use std::fmt::Write as _;
use std::io::BufRead;

use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tag written for missing UPOS values.
pub const UNKNOWN_UPOS: &str = "_";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("sentence ending at line {line}: {message}")]
    Validation { line: usize, message: String },
    #[error("cannot split {sentences} sentences into {folds} folds")]
    TooSmall { sentences: usize, folds: usize },
    #[error("invalid split parameters: {0}")]
    InvalidSplit(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One word of a sentence.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    /// 1-based position in the sentence.
    pub id: usize,
    pub form: String,
    pub upos: String,
    /// Governor position, 0 for the root.
    pub head: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub tokens: Vec<Token>,
}

impl Sentence {
    /// Builds a sentence from `(form, upos, head)` triples, numbering tokens from 1.
    pub fn from_triples<S: Into<String>, T: Into<String>>(
        words: impl IntoIterator<Item = (S, T, usize)>,
    ) -> Self {
        let tokens = words
            .into_iter()
            .enumerate()
            .map(|(i, (form, upos, head))| Token {
                id: i + 1,
                form: form.into(),
                upos: upos.into(),
                head,
            })
            .collect();
        Sentence { tokens }
    }

    /// Sentence length.
    pub fn n(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Gold heads indexed by `id - 1`.
    pub fn heads(&self) -> Vec<usize> {
        self.tokens.iter().map(|t| t.head).collect()
    }

    pub fn forms(&self) -> impl Iterator<Item = &str> {
        self.tokens.iter().map(|t| t.form.as_str())
    }

    /// Checks the structural invariants: contiguous ids, heads in range,
    /// no self-loops and no cycles (every token reaches the root).
    pub fn validate(&self) -> Result<(), String> {
        let n = self.n();
        for (i, tok) in self.tokens.iter().enumerate() {
            if tok.id != i + 1 {
                return Err(format!("token ids are not contiguous at position {}", i + 1));
            }
            if tok.head > n {
                return Err(format!("head {} of token {} is out of range 0..={n}", tok.head, tok.id));
            }
            if tok.head == tok.id {
                return Err(format!("token {} is its own head", tok.id));
            }
        }
        // Walk up from every token; more than n steps means a cycle.
        for start in 1..=n {
            let mut cur = start;
            let mut steps = 0;
            while cur != 0 {
                cur = self.tokens[cur - 1].head;
                steps += 1;
                if steps > n {
                    return Err(format!("token {start} is part of a cycle"));
                }
            }
        }
        Ok(())
    }
}

/// Parses CoNLL-U text into sentences, validating each one.
pub fn parse_conllu<R: BufRead>(reader: R) -> Result<Vec<Sentence>, CorpusError> {
    let mut sentences = Vec::new();
    let mut current: Vec<Token> = Vec::new();
    let mut line_no = 0;

    let finish = |tokens: &mut Vec<Token>, line: usize, out: &mut Vec<Sentence>| {
        if tokens.is_empty() {
            return Ok(());
        }
        let sentence = Sentence { tokens: std::mem::take(tokens) };
        sentence
            .validate()
            .map_err(|message| CorpusError::Validation { line, message })?;
        out.push(sentence);
        Ok::<(), CorpusError>(())
    };

    for line in reader.lines() {
        let line = line?;
        line_no += 1;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.trim().is_empty() {
            finish(&mut current, line_no, &mut sentences)?;
            continue;
        }
        if line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 10 {
            return Err(CorpusError::Parse {
                line: line_no,
                message: format!("expected 10 tab-separated columns, found {}", cols.len()),
            });
        }
        if cols[0].contains('-') || cols[0].contains('.') {
            continue;
        }
        let id: usize = cols[0].parse().map_err(|_| CorpusError::Parse {
            line: line_no,
            message: format!("invalid ID '{}'", cols[0]),
        })?;
        let head: usize = cols[6].parse().map_err(|_| CorpusError::Parse {
            line: line_no,
            message: format!("invalid HEAD '{}'", cols[6]),
        })?;
        current.push(Token {
            id,
            form: cols[1].to_string(),
            upos: cols[3].to_string(),
            head,
        });
    }
    finish(&mut current, line_no + 1, &mut sentences)?;
    Ok(sentences)
}

pub fn parse_conllu_str(text: &str) -> Result<Vec<Sentence>, CorpusError> {
    parse_conllu(text.as_bytes())
}

pub fn read_conllu_file(path: impl AsRef<std::path::Path>) -> Result<Vec<Sentence>, CorpusError> {
    let file = std::fs::File::open(path)?;
    parse_conllu(std::io::BufReader::new(file))
}

/// Writes sentences as 10-column CoNLL-U; unretained columns are `_`.
pub fn to_conllu(sentences: &[Sentence]) -> String {
    let mut out = String::new();
    for sentence in sentences {
        for tok in &sentence.tokens {
            let _ = writeln!(
                out,
                "{}\t{}\t_\t{}\t_\t_\t{}\t_\t_\t_",
                tok.id, tok.form, tok.upos, tok.head
            );
        }
        out.push('\n');
    }
    out
}

/// True iff no two arcs cross when drawn above the sentence, the root
/// sitting at position 0.
pub fn is_projective(sentence: &Sentence) -> bool {
    let arcs: Vec<(usize, usize)> = sentence
        .tokens
        .iter()
        .map(|t| (t.head.min(t.id), t.head.max(t.id)))
        .collect();
    for (i, &(a, b)) in arcs.iter().enumerate() {
        for &(c, d) in &arcs[i + 1..] {
            if (a < c && c < b && b < d) || (c < a && a < d && d < b) {
                return false;
            }
        }
    }
    true
}

/// One fold of the shuffled k-fold protocol. Indices refer to the input corpus.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusSplit {
    pub fold_id: usize,
    pub train: Vec<usize>,
    pub dev: Vec<usize>,
    pub test: Vec<usize>,
}

impl CorpusSplit {
    pub fn select<'a>(indices: &[usize], corpus: &'a [Sentence]) -> Vec<&'a Sentence> {
        indices.iter().map(|&i| &corpus[i]).collect()
    }
}

/// Split proportions `(train, dev, test)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Proportions {
    pub train: f64,
    pub dev: f64,
    pub test: f64,
}

impl Default for Proportions {
    fn default() -> Self {
        Proportions { train: 0.8, dev: 0.1, test: 0.1 }
    }
}

/// JSON manifest listing the sentence indices of every split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub seed: u64,
    pub folds: usize,
    pub proportions: Proportions,
    pub corpus_size: usize,
    pub splits: Vec<CorpusSplit>,
}

/// Shuffles the corpus once with `seed`, then carves `folds` disjoint test
/// blocks of `round(len * test)` sentences. Each fold takes its dev set from
/// the sentences following its test block (cyclically) and trains on the rest.
pub fn kfold_split(
    corpus_len: usize,
    folds: usize,
    seed: u64,
    proportions: Proportions,
) -> Result<Vec<CorpusSplit>, CorpusError> {
    if folds < 2 {
        return Err(CorpusError::InvalidSplit(format!("need at least 2 folds, got {folds}")));
    }
    let Proportions { train, dev, test } = proportions;
    if [train, dev, test].iter().any(|p| !(0.0..=1.0).contains(p))
        || ((train + dev + test) - 1.0).abs() > 1e-9
    {
        return Err(CorpusError::InvalidSplit(format!(
            "proportions ({train}, {dev}, {test}) must lie in [0,1] and sum to 1"
        )));
    }
    if corpus_len < folds {
        return Err(CorpusError::TooSmall { sentences: corpus_len, folds });
    }
    let test_size = ((corpus_len as f64) * test).round() as usize;
    let dev_size = ((corpus_len as f64) * dev).round() as usize;
    if test_size == 0 || test_size * folds > corpus_len || test_size + dev_size > corpus_len {
        return Err(CorpusError::TooSmall { sentences: corpus_len, folds });
    }

    let mut order: Vec<usize> = (0..corpus_len).collect();
    order.shuffle(&mut StdRng::seed_from_u64(seed));

    let splits = (0..folds)
        .map(|fold| {
            let start = fold * test_size;
            let pick = |offset: usize, len: usize| -> Vec<usize> {
                (0..len).map(|i| order[(start + offset + i) % corpus_len]).collect()
            };
            let test = pick(0, test_size);
            let dev = pick(test_size, dev_size);
            let train = pick(test_size + dev_size, corpus_len - test_size - dev_size);
            CorpusSplit { fold_id: fold, train, dev, test }
        })
        .collect();
    Ok(splits)
}
