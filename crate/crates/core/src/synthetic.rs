//! Small generated corpora with known structure.

use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};

use crate::corpus::Sentence;

/// Uniformly shaped random projective tree over `n` words with a single
/// root-attached word. Returns 1-based heads (0 = root).
pub fn random_projective_heads(n: usize, rng: &mut impl Rng) -> Vec<usize> {
    fn build(l: usize, r: usize, parent: usize, heads: &mut [usize], rng: &mut impl Rng) {
        if l > r {
            return;
        }
        let root = rng.gen_range(l..=r);
        heads[root - 1] = parent;
        build(l, root - 1, root, heads, rng);
        build(root + 1, r, root, heads, rng);
    }
    let mut heads = vec![0; n];
    build(1, n, 0, &mut heads, rng);
    heads
}

/// Random (not necessarily projective) tree: every word picks an earlier
/// attached node, in random order.
pub fn random_heads(n: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut order: Vec<usize> = (1..=n).collect();
    order.shuffle(rng);
    let mut heads = vec![0; n];
    for (i, &w) in order.iter().enumerate() {
        heads[w - 1] = if i == 0 { 0 } else { order[rng.gen_range(0..i)] };
    }
    heads
}

/// Random projective trees with forms `w1..wn` and tags drawn from `T0..T3`.
pub fn random_trees(count: usize, max_len: usize, seed: u64) -> Vec<Sentence> {
    let mut rng = StdRng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let n = rng.gen_range(1..=max_len);
            let heads = random_projective_heads(n, &mut rng);
            Sentence::from_triples(
                heads
                    .into_iter()
                    .enumerate()
                    .map(|(i, h)| (format!("w{}", i + 1), format!("T{}", rng.gen_range(0..4)), h)),
            )
        })
        .collect()
}

const DETS: [&str; 3] = ["the", "a", "this"];
const ADJS: [&str; 4] = ["old", "red", "small", "happy"];
const NOUNS: [&str; 8] = ["man", "boat", "dog", "cat", "house", "tree", "child", "river"];
const VERBS: [&str; 5] = ["sees", "likes", "builds", "paints", "follows"];
const ADPS: [&str; 3] = ["near", "with", "under"];

/// Appends a noun phrase governed by `gov`; returns the noun's position.
fn noun_phrase(words: &mut Vec<(String, String, usize)>, gov: usize, rng: &mut StdRng) -> usize {
    let start = words.len() + 1;
    let adjs = rng.gen_range(0..=2);
    let noun = start + 1 + adjs;
    words.push((DETS.choose(rng).unwrap().to_string(), "DET".into(), noun));
    for _ in 0..adjs {
        words.push((ADJS.choose(rng).unwrap().to_string(), "ADJ".into(), noun));
    }
    words.push((NOUNS.choose(rng).unwrap().to_string(), "NOUN".into(), gov));
    noun
}

/// Projective sentences from a tiny unambiguous grammar:
/// `NP VERB NP (ADP NP)?`, every form having a single tag.
pub fn toy_corpus(count: usize, seed: u64) -> Vec<Sentence> {
    let mut rng = StdRng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let mut words = Vec::new();
            // The subject attaches to the verb, whose position depends on the NP length.
            let subject = noun_phrase(&mut words, 0, &mut rng);
            let verb = words.len() + 1;
            words[subject - 1].2 = verb;
            words.push((VERBS.choose(&mut rng).unwrap().to_string(), "VERB".into(), 0));
            noun_phrase(&mut words, verb, &mut rng);
            if rng.gen_bool(0.5) {
                let adp = words.len() + 1;
                words.push((ADPS.choose(&mut rng).unwrap().to_string(), "ADP".into(), 0));
                let noun = noun_phrase(&mut words, verb, &mut rng);
                words[adp - 1].2 = noun;
            }
            Sentence::from_triples(words)
        })
        .collect()
}

/// Tags alternate `A`, `B`, `A`, ... from the first word; forms carry no
/// information about the tag.
pub fn alternation_corpus(count: usize, seed: u64) -> Vec<Sentence> {
    let mut rng = StdRng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let n = rng.gen_range(3..=8);
            Sentence::from_triples((0..n).map(|i| {
                let form = format!("x{}", rng.gen_range(0..6));
                let tag = if i % 2 == 0 { "A" } else { "B" };
                (form, tag, i)
            }))
        })
        .collect()
}

/// Every tag is decided by the following word: `L` before a `p*` form,
/// `R` before a `q*` form, `E` on the last word. A reader that cannot see
/// ahead is at chance on all words but the last.
pub fn right_context_corpus(count: usize, seed: u64) -> Vec<Sentence> {
    let mut rng = StdRng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let n = rng.gen_range(3..=7);
            let forms: Vec<String> = (0..n)
                .map(|_| {
                    let class = if rng.gen_bool(0.5) { 'p' } else { 'q' };
                    format!("{class}{}", rng.gen_range(0..3))
                })
                .collect();
            Sentence::from_triples((0..n).map(|i| {
                let tag = match forms.get(i + 1) {
                    None => "E",
                    Some(next) if next.starts_with('p') => "L",
                    Some(_) => "R",
                };
                (forms[i].clone(), tag, i)
            }))
        })
        .collect()
}
