//! Fixtures shared by the benchmarks: a random corpus and untrained models
//! of a given hidden size for each machine.

use brm_core::synthetic::random_trees;
use brm_core::{Machine, MachineKind, Model, NetDims, Sentence, TagSet};
use rand::rngs::StdRng;
use rand::SeedableRng;

pub fn corpus(count: usize, max_len: usize) -> Vec<Sentence> {
    random_trees(count, max_len, 17)
}

pub fn model(kind: MachineKind, k: Option<u32>, hidden: usize, training: &[Sentence]) -> Model {
    let tags = TagSet::from_sentences(training);
    let machine = match k {
        Some(k) => Machine::backtracking(kind, tags.len(), k),
        None => Machine::plain(kind, tags.len()),
    };
    let dims = NetDims { word_dim: 64, embed_dim: 32, hidden, dropout: 0.0 };
    Model::new(machine, tags, training, dims, 0.9, "bench", &mut StdRng::seed_from_u64(3))
}
