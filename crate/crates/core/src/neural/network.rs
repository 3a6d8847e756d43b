use std::collections::BTreeMap;
use std::fmt::Debug;

use num_traits::{Float, FromPrimitive, ToPrimitive};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::features::{FeatureVector, Space};
use super::NeuralError;
use crate::machine::State;

/// Floating point type the network computes in.
pub trait Scalar: Float + FromPrimitive + ToPrimitive + Debug + Default + Send + Sync + 'static {
    const DTYPE: &'static str;
    const BYTES: usize;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;

    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("representable constant")
    }
}

impl Scalar for f32 {
    const DTYPE: &'static str = "f32";
    const BYTES: usize = 4;
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4 bytes"))
    }
}

impl Scalar for f64 {
    const DTYPE: &'static str = "f64";
    const BYTES: usize = 8;
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8 bytes"))
    }
}

/// Layer sizes. Defaults follow the reference architecture; small values
/// are handy for tests and toy corpora.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetDims {
    pub word_dim: usize,
    pub embed_dim: usize,
    pub hidden: usize,
    pub dropout: f64,
}

impl Default for NetDims {
    fn default() -> Self {
        NetDims { word_dim: 300, embed_dim: 128, hidden: 3200, dropout: 0.3 }
    }
}

impl NetDims {
    pub fn dim(&self, space: Space) -> usize {
        if space == Space::Word {
            self.word_dim
        } else {
            self.embed_dim
        }
    }
}

/// Sizes a network is built from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetShape {
    pub dims: NetDims,
    pub table_rows: [usize; 4],
    pub layout: Vec<Space>,
    pub dense_inputs: usize,
    /// Output width per head (tags, parse actions, back decision); 0 = absent.
    pub heads: [usize; 3],
}

impl NetShape {
    pub fn input_dim(&self) -> usize {
        self.layout.iter().map(|&s| self.dims.dim(s)).sum::<usize>() + self.dense_inputs
    }
}

pub fn head_slot(state: State) -> usize {
    match state {
        State::Pos => 0,
        State::Synt => 1,
        State::Back => 2,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dense<F> {
    pub rows: usize,
    pub cols: usize,
    /// Row-major `rows x cols`.
    pub w: Vec<F>,
    pub b: Vec<F>,
}

impl<F: Scalar> Dense<F> {
    fn random(rows: usize, cols: usize, rng: &mut impl Rng) -> Self {
        let a = 1.0 / (cols.max(1) as f64).sqrt();
        Dense {
            rows,
            cols,
            w: (0..rows * cols).map(|_| F::of(rng.gen_range(-a..a))).collect(),
            b: (0..rows).map(|_| F::of(rng.gen_range(-a..a))).collect(),
        }
    }

    fn apply(&self, x: &[F]) -> Vec<F> {
        self.w
            .chunks_exact(self.cols)
            .zip(&self.b)
            .map(|(row, &b)| row.iter().zip(x).fold(b, |acc, (&w, &v)| acc + w * v))
            .collect()
    }
}

/// Embeddings, one ReLU hidden layer and a linear decision head per state.
#[derive(Clone, Debug, PartialEq)]
pub struct QNetwork<F> {
    pub shape: NetShape,
    /// Row-major `rows x dim` per space.
    pub tables: [Vec<F>; 4],
    pub hidden: Dense<F>,
    pub heads: [Option<Dense<F>>; 3],
}

/// Activations kept for backpropagation.
#[derive(Clone, Debug)]
pub struct ForwardCache<F> {
    pub head: usize,
    /// Input after dropout.
    pub x: Vec<F>,
    /// Input dropout multipliers (empty when dropout is off).
    pub x_mask: Vec<F>,
    /// Hidden dropout multipliers (empty when dropout is off).
    pub h_mask: Vec<F>,
    /// ReLU output.
    pub h: Vec<F>,
    pub q: Vec<F>,
}

impl<F: Scalar> QNetwork<F> {
    pub fn new(shape: NetShape, rng: &mut impl Rng) -> Self {
        let tables = std::array::from_fn(|i| {
            let dim = shape.dims.dim(Space::ALL[i]);
            (0..shape.table_rows[i] * dim).map(|_| F::of(rng.gen_range(-1.0..1.0))).collect()
        });
        let hidden = Dense::random(shape.dims.hidden, shape.input_dim(), rng);
        let heads = std::array::from_fn(|i| {
            (shape.heads[i] > 0).then(|| Dense::random(shape.heads[i], shape.dims.hidden, rng))
        });
        QNetwork { shape, tables, hidden, heads }
    }

    pub fn head_len(&self, state: State) -> usize {
        self.shape.heads[head_slot(state)]
    }

    fn embed(&self, f: &FeatureVector) -> Result<Vec<F>, NeuralError> {
        if f.ids.len() != self.shape.layout.len() || f.dense.len() != self.shape.dense_inputs {
            return Err(NeuralError::Layout {
                expected: self.shape.layout.len(),
                found: f.ids.len(),
            });
        }
        let mut x = Vec::with_capacity(self.shape.input_dim());
        for (&space, &id) in self.shape.layout.iter().zip(&f.ids) {
            let dim = self.shape.dims.dim(space);
            let rows = self.shape.table_rows[space.index()];
            if id as usize >= rows {
                return Err(NeuralError::Symbol { space, id, rows });
            }
            let start = id as usize * dim;
            x.extend_from_slice(&self.tables[space.index()][start..start + dim]);
        }
        x.extend(f.dense.iter().map(|&v| F::of(v as f64)));
        Ok(x)
    }

    /// Raw Q-values of the head serving `state`, without dropout.
    pub fn forward(&self, f: &FeatureVector, state: State) -> Result<Vec<F>, NeuralError> {
        Ok(self.forward_cached(f, state, None::<&mut rand::rngs::StdRng>)?.q)
    }

    /// Forward pass; dropout is applied when `dropout_rng` is given.
    pub fn forward_cached<R: Rng>(
        &self,
        f: &FeatureVector,
        state: State,
        dropout_rng: Option<&mut R>,
    ) -> Result<ForwardCache<F>, NeuralError> {
        let slot = head_slot(state);
        let head = self.heads[slot].as_ref().ok_or(NeuralError::NoHead(state))?;
        let mut x = self.embed(f)?;
        let p = self.shape.dims.dropout;
        let mut x_mask = Vec::new();
        let mut h_mask = Vec::new();
        let mut h = match dropout_rng {
            Some(rng) if p > 0.0 => {
                let keep = F::of(1.0 / (1.0 - p));
                let mut mask = |n: usize| -> Vec<F> {
                    (0..n).map(|_| if rng.gen_bool(p) { F::zero() } else { keep }).collect()
                };
                x_mask = mask(x.len());
                x.iter_mut().zip(&x_mask).for_each(|(v, &m)| *v = *v * m);
                let mut h = self.hidden.apply(&x);
                h_mask = mask(h.len());
                h.iter_mut().zip(&h_mask).for_each(|(v, &m)| *v = *v * m);
                h
            }
            _ => self.hidden.apply(&x),
        };
        h.iter_mut().for_each(|v| *v = v.max(F::zero()));
        let q = head.apply(&h);
        Ok(ForwardCache { head: slot, x, x_mask, h_mask, h, q })
    }

    /// Accumulates the gradient of a loss whose derivative with respect to
    /// the head outputs is `dq`.
    pub fn backward(&self, f: &FeatureVector, cache: &ForwardCache<F>, dq: &[F], grads: &mut Gradients<F>) {
        let head = self.heads[cache.head].as_ref().expect("cached head exists");
        let hidden = self.shape.dims.hidden;
        let mut dh = vec![F::zero(); hidden];
        let (gw, gb) = grads.heads[cache.head]
            .get_or_insert_with(|| (vec![F::zero(); head.w.len()], vec![F::zero(); head.b.len()]));
        for (a, &g) in dq.iter().enumerate() {
            if g == F::zero() {
                continue;
            }
            gb[a] = gb[a] + g;
            let row = &head.w[a * hidden..(a + 1) * hidden];
            let grow = &mut gw[a * hidden..(a + 1) * hidden];
            for j in 0..hidden {
                grow[j] = grow[j] + g * cache.h[j];
                dh[j] = dh[j] + g * row[j];
            }
        }
        // Through ReLU then hidden dropout.
        for j in 0..hidden {
            if cache.h[j] <= F::zero() {
                dh[j] = F::zero();
            } else if !cache.h_mask.is_empty() {
                dh[j] = dh[j] * cache.h_mask[j];
            }
        }
        let cols = self.hidden.cols;
        let mut dx = vec![F::zero(); cols];
        for (j, &g) in dh.iter().enumerate() {
            if g == F::zero() {
                continue;
            }
            let row = &self.hidden.w[j * cols..(j + 1) * cols];
            for (d, &w) in dx.iter_mut().zip(row) {
                *d = *d + g * w;
            }
        }
        grads.hidden.push((dh, cache.x.clone()));
        if !cache.x_mask.is_empty() {
            dx.iter_mut().zip(&cache.x_mask).for_each(|(d, &m)| *d = *d * m);
        }
        let mut offset = 0;
        for (&space, &id) in self.shape.layout.iter().zip(&f.ids) {
            let dim = self.shape.dims.dim(space);
            let row = grads.tables[space.index()]
                .entry(id)
                .or_insert_with(|| vec![F::zero(); dim]);
            for (r, &d) in row.iter_mut().zip(&dx[offset..offset + dim]) {
                *r = *r + d;
            }
            offset += dim;
        }
    }

    /// Number of scalar parameters.
    pub fn param_count(&self) -> usize {
        self.tables.iter().map(Vec::len).sum::<usize>()
            + self.hidden.w.len()
            + self.hidden.b.len()
            + self.heads.iter().flatten().map(|h| h.w.len() + h.b.len()).sum::<usize>()
    }

    /// Every parameter, in serialization order.
    pub fn params(&self) -> Vec<&[F]> {
        let mut out: Vec<&[F]> = self.tables.iter().map(Vec::as_slice).collect();
        out.push(&self.hidden.w);
        out.push(&self.hidden.b);
        for h in self.heads.iter().flatten() {
            out.push(&h.w);
            out.push(&h.b);
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut [F]> {
        let mut out: Vec<&mut [F]> = self.tables.iter_mut().map(Vec::as_mut_slice).collect();
        out.push(&mut self.hidden.w);
        out.push(&mut self.hidden.b);
        for h in self.heads.iter_mut().flatten() {
            out.push(&mut h.w);
            out.push(&mut h.b);
        }
        out
    }

    /// Names and lengths of the parameter tensors, in [`QNetwork::params`] order.
    pub fn tensor_names(&self) -> Vec<(String, usize)> {
        let mut names: Vec<(String, usize)> = Space::ALL
            .iter()
            .map(|s| (format!("embed.{s:?}").to_lowercase(), self.tables[s.index()].len()))
            .collect();
        names.push(("hidden.w".into(), self.hidden.w.len()));
        names.push(("hidden.b".into(), self.hidden.b.len()));
        for (i, h) in self.heads.iter().enumerate() {
            if let Some(h) = h {
                let name = ["pos", "synt", "back"][i];
                names.push((format!("head.{name}.w"), h.w.len()));
                names.push((format!("head.{name}.b"), h.b.len()));
            }
        }
        names
    }

    /// Full gradient in [`QNetwork::params`] order (dense; for checks).
    pub fn flatten_grads(&self, grads: &Gradients<F>) -> Vec<F> {
        let mut out = Vec::with_capacity(self.param_count());
        for (i, space) in Space::ALL.iter().enumerate() {
            let dim = self.shape.dims.dim(*space);
            let mut t = vec![F::zero(); self.tables[i].len()];
            for (&id, row) in &grads.tables[i] {
                t[id as usize * dim..(id as usize + 1) * dim].copy_from_slice(row);
            }
            out.extend(t);
        }
        let (rows, cols) = (self.hidden.rows, self.hidden.cols);
        let mut gw = vec![F::zero(); rows * cols];
        let mut gb = vec![F::zero(); rows];
        for (dh, x) in &grads.hidden {
            for j in 0..rows {
                gb[j] = gb[j] + dh[j];
                for i in 0..cols {
                    gw[j * cols + i] = gw[j * cols + i] + dh[j] * x[i];
                }
            }
        }
        out.extend(gw);
        out.extend(gb);
        for (i, h) in self.heads.iter().enumerate() {
            if let Some(h) = h {
                match &grads.heads[i] {
                    Some((w, b)) => {
                        out.extend_from_slice(w);
                        out.extend_from_slice(b);
                    }
                    None => out.extend(std::iter::repeat(F::zero()).take(h.w.len() + h.b.len())),
                }
            }
        }
        out
    }
}

/// Accumulated gradients. The hidden layer gradient is kept as a list of
/// rank-one terms `dh x^T`; embedding gradients only for touched rows.
#[derive(Clone, Debug)]
pub struct Gradients<F> {
    pub tables: [BTreeMap<u32, Vec<F>>; 4],
    pub hidden: Vec<(Vec<F>, Vec<F>)>,
    pub heads: [Option<(Vec<F>, Vec<F>)>; 3],
}

impl<F: Scalar> Default for Gradients<F> {
    fn default() -> Self {
        Gradients { tables: Default::default(), hidden: Vec::new(), heads: [None, None, None] }
    }
}

impl<F: Scalar> Gradients<F> {
    pub fn is_finite(&self) -> bool {
        let ok = |v: &[F]| v.iter().all(|x| x.is_finite());
        self.tables.iter().all(|t| t.values().all(|r| ok(r)))
            && self.hidden.iter().all(|(d, x)| ok(d) && ok(x))
            && self.heads.iter().flatten().all(|(w, b)| ok(w) && ok(b))
    }
}

/// Huber loss with threshold 1 and its derivative with respect to `pred`.
pub fn smooth_l1<F: Scalar>(pred: F, target: F) -> (F, F) {
    let d = pred - target;
    if d.abs() < F::one() {
        (F::of(0.5) * d * d, d)
    } else {
        (d.abs() - F::of(0.5), d.signum())
    }
}

/// Softmax cross-entropy of `logits` against class `gold`, with the
/// gradient with respect to the logits.
pub fn cross_entropy<F: Scalar>(logits: &[F], gold: usize) -> (F, Vec<F>) {
    let max = logits.iter().copied().fold(F::neg_infinity(), F::max);
    let exps: Vec<F> = logits.iter().map(|&l| (l - max).exp()).collect();
    let z = exps.iter().copied().fold(F::zero(), |a, b| a + b);
    let loss = z.ln() - (logits[gold] - max);
    let mut grad: Vec<F> = exps.iter().map(|&e| e / z).collect();
    grad[gold] = grad[gold] - F::one();
    (loss, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::rngs::StdRng;
    use rand::SeedableRng;

    fn shape(dropout: f64) -> NetShape {
        NetShape {
            dims: NetDims { word_dim: 3, embed_dim: 2, hidden: 8, dropout },
            table_rows: [10, 9, 8, 11],
            layout: vec![Space::Word, Space::Pos, Space::Word, Space::Letter, Space::Action],
            dense_inputs: 1,
            heads: [3, 4, 2],
        }
    }

    fn input() -> FeatureVector {
        FeatureVector { ids: vec![7, 3, 7, 5, 10], dense: vec![1.0] }
    }

    fn weighted_loss(net: &QNetwork<f64>, state: State, w: &[f64], seed: Option<u64>) -> f64 {
        let mut rng = seed.map(StdRng::seed_from_u64);
        let cache = net.forward_cached(&input(), state, rng.as_mut()).unwrap();
        cache.q.iter().zip(w).map(|(q, w)| q * w).sum()
    }

    fn check_gradient(state: State, dropout: f64, seed: Option<u64>) {
        let mut net = QNetwork::<f64>::new(shape(dropout), &mut StdRng::seed_from_u64(3));
        let w: Vec<f64> = (0..net.head_len(state)).map(|i| 0.3 * i as f64 - 0.4).collect();
        let mut rng = seed.map(StdRng::seed_from_u64);
        let cache = net.forward_cached(&input(), state, rng.as_mut()).unwrap();
        let mut grads = Gradients::default();
        net.backward(&input(), &cache, &w, &mut grads);
        let analytic = net.flatten_grads(&grads);

        let eps = 1e-6;
        let mut k = 0;
        let mut worst: f64 = 0.0;
        for t in 0..net.params().len() {
            for i in 0..net.params()[t].len() {
                let orig = net.params()[t][i];
                net.params_mut()[t][i] = orig + eps;
                let up = weighted_loss(&net, state, &w, seed);
                net.params_mut()[t][i] = orig - eps;
                let down = weighted_loss(&net, state, &w, seed);
                net.params_mut()[t][i] = orig;
                let numeric = (up - down) / (2.0 * eps);
                let err = (numeric - analytic[k]).abs() / (numeric.abs() + analytic[k].abs()).max(1e-3);
                worst = worst.max(err);
                k += 1;
            }
        }
        assert_eq!(k, analytic.len());
        assert!(worst < 1e-4, "relative gradient error {worst}");
    }

    #[test]
    fn gradient_matches_central_differences() {
        for state in [State::Pos, State::Synt, State::Back] {
            check_gradient(state, 0.0, None);
        }
    }

    #[test]
    fn gradient_with_fixed_dropout_masks() {
        check_gradient(State::Synt, 0.3, Some(11));
    }

    #[test]
    fn zero_head_gives_zero_q() {
        let mut net = QNetwork::<f32>::new(shape(0.0), &mut StdRng::seed_from_u64(1));
        let head = net.heads[2].as_mut().unwrap();
        head.w.fill(0.0);
        head.b.fill(0.0);
        assert_eq!(net.forward(&input(), State::Back).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn forward_is_deterministic_without_dropout() {
        let a = QNetwork::<f32>::new(shape(0.5), &mut StdRng::seed_from_u64(5));
        let b = QNetwork::<f32>::new(shape(0.5), &mut StdRng::seed_from_u64(5));
        assert_eq!(a, b);
        let q = a.forward(&input(), State::Pos).unwrap();
        assert_eq!(q.len(), 3);
        assert_eq!(q, a.forward(&input(), State::Pos).unwrap());
        assert_eq!(a.forward(&input(), State::Back).unwrap().len(), 2);
    }

    #[test]
    fn missing_head_and_bad_symbols_are_errors() {
        let mut s = shape(0.0);
        s.heads[2] = 0;
        let net = QNetwork::<f32>::new(s, &mut StdRng::seed_from_u64(1));
        assert!(matches!(net.forward(&input(), State::Back), Err(NeuralError::NoHead(State::Back))));
        let bad = FeatureVector { ids: vec![7, 3, 7, 5, 99], dense: vec![1.0] };
        assert!(matches!(net.forward(&bad, State::Pos), Err(NeuralError::Symbol { .. })));
        let short = FeatureVector { ids: vec![7], dense: vec![1.0] };
        assert!(matches!(net.forward(&short, State::Pos), Err(NeuralError::Layout { .. })));
    }

    #[test]
    fn loss_values() {
        assert_eq!(smooth_l1(0.5f64, 0.0), (0.125, 0.5));
        assert_eq!(smooth_l1(3.0f64, 0.0), (2.5, 1.0));
        assert_eq!(smooth_l1(-3.0f64, 0.0), (2.5, -1.0));
        let (loss, grad) = cross_entropy(&[0.7f64; 4], 2);
        assert_abs_diff_eq!(loss, 4f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(grad[2], -0.75, epsilon = 1e-12);
        assert_abs_diff_eq!(grad.iter().sum::<f64>(), 0.0, epsilon = 1e-12);
    }
}
