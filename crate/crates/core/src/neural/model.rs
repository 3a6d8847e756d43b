use std::collections::HashMap;
use std::io::{BufRead, Read, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::features::{FeatureEncoder, FeatureVector, Space};
use super::network::{head_slot, NetDims, NetShape, QNetwork, Scalar};
use super::NeuralError;
use crate::corpus::Sentence;
use crate::machine::{Action, Configuration, Machine, MachineError, TagSet};

pub const MODEL_FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"BRMMODEL";

/// A trained machine: topology, vocabularies and network parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub machine: Machine,
    pub tags: TagSet,
    pub encoder: FeatureEncoder,
    pub net: QNetwork<f32>,
    pub gamma: f64,
    pub regime: String,
}

/// JSON header stored in front of the tensor payload.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelHeader {
    pub format_version: u32,
    pub machine: Machine,
    pub tags: TagSet,
    pub encoder: FeatureEncoder,
    pub shape: NetShape,
    pub gamma: f64,
    pub regime: String,
    pub k: u32,
    pub dtype: String,
    /// Tensor names and element counts, in payload order.
    pub tensors: Vec<(String, usize)>,
}

impl Model {
    pub fn new(
        machine: Machine,
        tags: TagSet,
        training: &[Sentence],
        dims: NetDims,
        gamma: f64,
        regime: &str,
        rng: &mut impl Rng,
    ) -> Self {
        let encoder = FeatureEncoder::new(&machine, &tags, training);
        let n_tags = if machine.kind.tags() { tags.len() } else { 0 };
        let shape = NetShape {
            dims,
            table_rows: encoder.table_sizes(),
            layout: encoder.layout(),
            dense_inputs: encoder.dense_len(),
            heads: [
                n_tags,
                if machine.kind.parses() { 4 } else { 0 },
                if machine.is_backtracking() { 2 } else { 0 },
            ],
        };
        let net = QNetwork::new(shape, rng);
        Model { machine, tags, encoder, net, gamma, regime: regime.to_string() }
    }

    pub fn features(&self, c: &Configuration, sentence: &Sentence) -> FeatureVector {
        self.encoder.extract(c, sentence, &self.tags, &self.machine)
    }

    /// Q-values of the head serving the state of `c`, dropout off.
    pub fn q_values(&self, f: &FeatureVector, c: &Configuration) -> Result<Vec<f32>, NeuralError> {
        self.net.forward(f, c.state())
    }

    /// Highest-scoring legal action of `c` under `machine`.
    pub fn greedy_action(
        &self,
        c: &Configuration,
        sentence: &Sentence,
        machine: &Machine,
    ) -> Result<Action, crate::Error> {
        let f = self.features(c, sentence);
        let q = self.q_values(&f, c)?;
        let legal = c.legal_actions(machine)?;
        best_legal(&q, &legal).ok_or_else(|| MachineError::Terminal.into())
    }

    /// Copies pretrained vectors into the word table for every known form
    /// whose vector has the right dimension; returns how many were set.
    pub fn load_word_vectors(&mut self, vectors: &HashMap<String, Vec<f32>>) -> usize {
        let dim = self.net.shape.dims.word_dim;
        let table = &mut self.net.tables[Space::Word.index()];
        let mut set = 0;
        for (form, id) in self.encoder.words() {
            if let Some(v) = vectors.get(form).filter(|v| v.len() == dim) {
                table[id as usize * dim..(id as usize + 1) * dim].copy_from_slice(v);
                set += 1;
            }
        }
        set
    }

    pub fn header(&self) -> ModelHeader {
        ModelHeader {
            format_version: MODEL_FORMAT_VERSION,
            machine: self.machine,
            tags: self.tags.clone(),
            encoder: self.encoder.clone(),
            shape: self.net.shape.clone(),
            gamma: self.gamma,
            regime: self.regime.clone(),
            k: self.machine.k(),
            dtype: f32::DTYPE.to_string(),
            tensors: self.net.tensor_names(),
        }
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<(), NeuralError> {
        let header = serde_json::to_vec(&self.header())?;
        w.write_all(MAGIC)?;
        w.write_all(&(header.len() as u64).to_le_bytes())?;
        w.write_all(&header)?;
        let mut buf = Vec::new();
        for tensor in self.net.params() {
            buf.clear();
            tensor.iter().for_each(|v| v.write_le(&mut buf));
            w.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self, NeuralError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(NeuralError::Format("not a model file".into()));
        }
        let mut len = [0u8; 8];
        r.read_exact(&mut len)?;
        let mut header = vec![0u8; u64::from_le_bytes(len) as usize];
        r.read_exact(&mut header)?;
        let header: ModelHeader = serde_json::from_slice(&header)?;
        if header.format_version != MODEL_FORMAT_VERSION {
            return Err(NeuralError::Format(format!("unsupported version {}", header.format_version)));
        }
        if header.dtype != f32::DTYPE {
            return Err(NeuralError::Format(format!("unsupported dtype {}", header.dtype)));
        }
        let mut encoder = header.encoder;
        encoder.rebuild_index();
        // Zero-initialized network of the declared shape, then overwritten.
        let mut net = QNetwork::<f32>::new(header.shape, &mut ZeroRng);
        if net.tensor_names() != header.tensors {
            return Err(NeuralError::Format("tensor list does not match the network shape".into()));
        }
        let mut bytes = [0u8; 4];
        for tensor in net.params_mut() {
            for v in tensor.iter_mut() {
                r.read_exact(&mut bytes)?;
                *v = f32::read_le(&bytes);
            }
        }
        if r.read(&mut [0u8; 1])? != 0 {
            return Err(NeuralError::Format("trailing bytes after the payload".into()));
        }
        Ok(Model {
            machine: header.machine,
            tags: header.tags,
            encoder,
            net,
            gamma: header.gamma,
            regime: header.regime,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), NeuralError> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, NeuralError> {
        Self::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }

    pub fn head_len(&self, c: &Configuration) -> usize {
        self.net.shape.heads[head_slot(c.state())]
    }
}

/// Legal action with the highest Q-value (first one on ties).
pub(crate) fn best_legal(q: &[f32], legal: &[Action]) -> Option<Action> {
    let mut best: Option<(Action, f32)> = None;
    for &a in legal {
        let v = q[a.head_index()];
        if best.map_or(true, |(_, b)| v > b) {
            best = Some((a, v));
        }
    }
    best.map(|(a, _)| a)
}

/// Deterministic all-zero generator used to allocate before loading.
struct ZeroRng;

impl rand::RngCore for ZeroRng {
    fn next_u32(&mut self) -> u32 {
        0
    }
    fn next_u64(&mut self) -> u64 {
        0
    }
    fn fill_bytes(&mut self, dest: &mut [u8]) {
        dest.fill(0);
    }
    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> Result<(), rand::Error> {
        dest.fill(0);
        Ok(())
    }
}

/// Reads word vectors in the plain text format (`word v1 v2 ...` per line,
/// with an optional `count dim` first line).
pub fn read_word_vectors(path: impl AsRef<Path>) -> Result<HashMap<String, Vec<f32>>, NeuralError> {
    let reader = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = HashMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let mut parts = line.split_whitespace();
        let Some(word) = parts.next() else { continue };
        let values: Result<Vec<f32>, _> = parts.map(str::parse::<f32>).collect();
        let values = values.map_err(|e| NeuralError::Format(format!("vectors line {}: {e}", i + 1)))?;
        if i == 0 && values.len() == 1 {
            continue;
        }
        out.insert(word.to_string(), values);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::machine::MachineKind;
    use rand::rngs::StdRng;
    use rand::SeedableRng;

    fn model() -> (Model, Sentence) {
        let s = Sentence::from_triples([("the", "DET", 2), ("cat", "NOUN", 3), ("sleeps", "VERB", 0)]);
        let tags = TagSet::from_sentences([&s]);
        let m = Machine::backtracking(MachineKind::TagParser, tags.len(), 1);
        let dims = NetDims { word_dim: 6, embed_dim: 4, hidden: 12, dropout: 0.3 };
        let model = Model::new(m, tags, std::slice::from_ref(&s), dims, 0.9, "rl-backtrack", &mut StdRng::seed_from_u64(9));
        (model, s)
    }

    #[test]
    fn round_trip_preserves_everything() {
        let (model, s) = model();
        let mut bytes = Vec::new();
        model.write_to(&mut bytes).unwrap();
        let back = Model::read_from(bytes.as_slice()).unwrap();
        assert_eq!(back, model);
        let c = Configuration::initial(s.n(), &model.machine);
        let f = model.features(&c, &s);
        assert_eq!(back.q_values(&f, &c).unwrap(), model.q_values(&f, &c).unwrap());
        assert_eq!(model.head_len(&c), 2);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let (model, _) = model();
        let mut bytes = Vec::new();
        model.write_to(&mut bytes).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Model::read_from(bad.as_slice()), Err(NeuralError::Format(_))));
        assert!(Model::read_from(&bytes[..bytes.len() - 1]).is_err());
        bytes.push(0);
        assert!(matches!(Model::read_from(bytes.as_slice()), Err(NeuralError::Format(_))));
    }

    #[test]
    fn greedy_action_is_legal() {
        let (model, s) = model();
        let mut c = Configuration::initial(s.n(), &model.machine);
        while !c.is_terminal() {
            let a = model.greedy_action(&c, &s, &model.machine).unwrap();
            c.apply(&model.machine, a).unwrap();
        }
        assert!(c.history().len() <= model.machine.max_actions(s.n()));
    }

    #[test]
    fn best_legal_ignores_illegal_actions() {
        let q = [5.0, 1.0, 3.0, 2.0];
        assert_eq!(best_legal(&q, &[Action::Right, Action::Reduce]), Some(Action::Reduce));
        assert_eq!(best_legal(&q, &[]), None);
    }
}
