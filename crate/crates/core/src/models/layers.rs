//! Building blocks expressed as graph operations.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Inverted dropout with masks drawn from a seeded stream.
pub struct Dropout {
    p: f64,
    rng: ChaCha8Rng,
}

impl Dropout {
    pub fn new(p: f64, rng: ChaCha8Rng) -> Self {
        Self { p, rng }
    }

    pub fn apply(&mut self, g: &mut Graph, x: Var) -> Result<Var> {
        if self.p == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - self.p);
        let n = g.value(x).len();
        let mask = (0..n)
            .map(|_| if self.rng.gen::<f64>() < self.p { 0.0 } else { keep })
            .collect();
        let m = g.constant(g.shape(x).to_vec(), mask)?;
        g.mul(x, m)
    }
}

pub(crate) fn apply_dropout(g: &mut Graph, x: Var, dropout: &mut Option<&mut Dropout>) -> Result<Var> {
    match dropout {
        Some(d) => d.apply(g, x),
        None => Ok(x),
    }
}

/// `x · w + b` for `x` of shape rows×in.
pub fn linear(g: &mut Graph, x: Var, w: Var, b: Var) -> Result<Var> {
    let y = g.matmul(x, w)?;
    g.broadcast_add_bias(y, b)
}

/// Softmax-weighted sum of hidden rows with scores `h_t · v + b`.
/// `v` has shape dim×1 and `b` shape [1]; the result is 1×dim.
pub fn attention_pool(g: &mut Graph, hidden: Var, v: Var, b: Var) -> Result<Var> {
    let scores = g.matmul(hidden, v)?;
    let scores = g.broadcast_add_bias(scores, b)?;
    let alpha = g.softmax(scores, 0)?;
    let alpha_t = g.transpose(alpha)?;
    g.matmul(alpha_t, hidden)
}

/// Value-level attention pooling over a T×dim tensor.
pub fn attention_pool_values(hidden: &Tensor, v: &[f64], b: f64) -> Result<Vec<f64>> {
    if hidden.shape().len() != 2 || hidden.shape()[0] == 0 {
        return Err(Error::Contract("attention_pool needs a nonempty T×dim matrix".into()));
    }
    let dim = hidden.shape()[1];
    if v.len() != dim {
        return Err(Error::shape("attention_pool", &[dim], &[v.len()]));
    }
    let mut g = Graph::new();
    let h = g.leaf(hidden);
    let v = g.constant(vec![dim, 1], v.to_vec())?;
    let b = g.constant(vec![1], vec![b])?;
    let out = attention_pool(&mut g, h, v, b)?;
    Ok(g.value(out).to_vec())
}

/// Sinusoidal encoding: even columns `sin(t / 10000^(2i/dim))`, odd columns
/// the matching cosine.
pub fn sinusoidal_encoding(frames: usize, dim: usize) -> Vec<f64> {
    let mut pe = vec![0.0; frames * dim];
    for t in 0..frames {
        for j in 0..dim {
            let i = (j / 2) as f64;
            let angle = t as f64 / 10000f64.powf(2.0 * i / dim as f64);
            pe[t * dim + j] = if j % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    pe
}

/// `(weight, bias)` pairs of the four attention projections.
pub struct AttentionWeights {
    pub q: (Var, Var),
    pub k: (Var, Var),
    pub v: (Var, Var),
    pub o: (Var, Var),
}

/// Single-head scaled dot-product self-attention over T×d input.
pub fn self_attention(g: &mut Graph, x: Var, w: &AttentionWeights) -> Result<Var> {
    let d = g.shape(x)[1];
    let q = linear(g, x, w.q.0, w.q.1)?;
    let k = linear(g, x, w.k.0, w.k.1)?;
    let v = linear(g, x, w.v.0, w.v.1)?;
    let kt = g.transpose(k)?;
    let scores = g.matmul(q, kt)?;
    let scores = g.scale(scores, 1.0 / (d as f64).sqrt());
    let attn = g.softmax(scores, 1)?;
    let ctx = g.matmul(attn, v)?;
    linear(g, ctx, w.o.0, w.o.1)
}

/// One direction of an LSTM over the rows of `x` (T×in), zero initial
/// state. Returns the hidden state per timestep in input order.
pub fn lstm_direction(g: &mut Graph, x: Var, w: Var, b: Var, units: usize, reverse: bool) -> Result<Vec<Var>> {
    let (frames, input) = (g.shape(x)[0], g.shape(x)[1]);
    let mut h = g.constant(vec![1, units], vec![0.0; units])?;
    let mut c = g.constant(vec![1, units], vec![0.0; units])?;
    let mut out = vec![h; frames];
    let order: Vec<usize> = if reverse { (0..frames).rev().collect() } else { (0..frames).collect() };
    for t in order {
        let xt = g.slice(x, &[t..t + 1, 0..input])?;
        let z = g.concat(&[xt, h], 1)?;
        let gates = linear(g, z, w, b)?;
        let gate = |g: &mut Graph, k: usize| g.slice(gates, &[0..1, k * units..(k + 1) * units]);
        let (i, f, cand, o) = (gate(g, 0)?, gate(g, 1)?, gate(g, 2)?, gate(g, 3)?);
        let i = g.sigmoid(i);
        let f = g.sigmoid(f);
        let cand = g.tanh(cand);
        let o = g.sigmoid(o);
        let keep = g.mul(f, c)?;
        let write = g.mul(i, cand)?;
        c = g.add(keep, write)?;
        let squashed = g.tanh(c);
        h = g.mul(o, squashed)?;
        out[t] = h;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn oracle_pool(rows: &[Vec<f64>], v: &[f64], b: f64) -> Vec<f64> {
        let s: Vec<f64> = rows.iter().map(|r| r.iter().zip(v).map(|(x, y)| x * y).sum::<f64>() + b).collect();
        let m = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = s.iter().map(|x| (x - m).exp()).collect();
        let z: f64 = e.iter().sum();
        (0..v.len()).map(|j| rows.iter().zip(&e).map(|(r, w)| w / z * r[j]).sum()).collect()
    }

    fn tensor(rows: &[Vec<f64>]) -> Tensor {
        Tensor::matrix(rows.len(), rows[0].len(), rows.concat()).unwrap()
    }

    #[test]
    fn singleton_pool_returns_the_row() {
        let row = vec![0.5, -1.5, 2.0];
        let out = attention_pool_values(&tensor(&[row.clone()]), &[3.0, 1.0, -7.0], 4.0).unwrap();
        assert_eq!(out, row);
    }

    #[test]
    fn zero_scores_give_the_mean() {
        let rows = vec![vec![1.0, 2.0], vec![3.0, -2.0], vec![5.0, 3.0]];
        let out = attention_pool_values(&tensor(&rows), &[0.0, 0.0], 0.7).unwrap();
        assert!((out[0] - 3.0).abs() < 1e-12 && (out[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn random_pool_matches_direct_formula() {
        let mut rng = <ChaCha8Rng as rand::SeedableRng>::seed_from_u64(3);
        let rows: Vec<Vec<f64>> = (0..3).map(|_| (0..64).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let v: Vec<f64> = (0..64).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let out = attention_pool_values(&tensor(&rows), &v, 0.3).unwrap();
        for (a, b) in out.iter().zip(oracle_pool(&rows, &v, 0.3)) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn encoding_first_rows() {
        let pe = sinusoidal_encoding(2, 4);
        assert_eq!(&pe[..4], &[0.0, 1.0, 0.0, 1.0]);
        assert!((pe[4] - 1f64.sin()).abs() < 1e-15);
        assert!((pe[6] - (1.0 / 100.0f64).sin()).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn pool_stays_in_convex_hull(
            rows in prop::collection::vec(prop::collection::vec(-1e3f64..1e3, 4), 1..8),
            v in prop::collection::vec(-5.0f64..5.0, 4),
            b in -5.0f64..5.0,
        ) {
            let out = attention_pool_values(&tensor(&rows), &v, b).unwrap();
            for j in 0..4 {
                let lo = rows.iter().map(|r| r[j]).fold(f64::INFINITY, f64::min);
                let hi = rows.iter().map(|r| r[j]).fold(f64::NEG_INFINITY, f64::max);
                let slack = 1e-9 * (1.0 + lo.abs().max(hi.abs()));
                prop_assert!(out[j] >= lo - slack && out[j] <= hi + slack);
            }
        }
    }
}
