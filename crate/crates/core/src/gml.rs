//! Single-query attention of the global token over trunk features, and the
//! pointwise readout that broadcasts the resulting context to every grid point.
//!
//! The softmax over grid points is the midpoint-rule discretization of
//! `A = ∫ w(y) V(f(y)) dy / ∫ w(y) dy` with `w = exp(⟨q, k(y)⟩/√d_a)`; the
//! cell volume cancels between numerator and denominator.

use rand_chacha::ChaCha8Rng;

use crate::autodiff::{softmax_in_place, Tape, Var};
use crate::nn::{Bound, Linear, ParamStore};
use crate::tensor::{Result, TensorError};

/// `R(f, c) = S[f; c] + W₂ GELU(W₁[f; c] + b₁) + b₂`.
#[derive(Clone, Debug)]
pub struct Readout {
    pub skip: Linear,
    pub hidden: Linear,
    pub out: Linear,
}

#[derive(Clone, Debug)]
pub struct Gml {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub readout: Readout,
    pub attn_dim: usize,
    pub feature_dim: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct AttentionVars {
    pub scores: Var,
    pub weights: Var,
    pub context: Var,
}

impl Gml {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, token_dim: usize, feature_dim: usize, attn_dim: usize) -> Self {
        let joint = feature_dim + attn_dim;
        Gml {
            query: Linear::new(store, rng, "gml.query", token_dim, attn_dim, true),
            key: Linear::new(store, rng, "gml.key", feature_dim, attn_dim, true),
            value: Linear::new(store, rng, "gml.value", feature_dim, attn_dim, true),
            readout: Readout {
                skip: Linear::new(store, rng, "gml.readout.skip", joint, feature_dim, false),
                hidden: Linear::new(store, rng, "gml.readout.hidden", joint, feature_dim, true),
                out: Linear::new(store, rng, "gml.readout.out", feature_dim, feature_dim, true),
            },
            attn_dim,
            feature_dim,
        }
    }

    /// `s_j = ⟨Q t, K f_j⟩ / √d_a` as a `[1, N]` row; `features` is `[N, C_fno]`.
    pub fn scores(&self, tape: &mut Tape, bound: &Bound, token: Var, features: Var) -> Result<Var> {
        let t_len = tape.value(token).numel();
        let t = tape.reshape(token, &[1, t_len])?;
        let q = self.query.apply(tape, bound, t)?;
        let k = self.key.apply(tape, bound, features)?;
        let kt = tape.transpose(k, &[1, 0])?;
        let s = tape.matmul(q, kt)?;
        tape.scale(s, 1.0 / (self.attn_dim as f64).sqrt())
    }

    /// Softmax weights over grid points and the context `Σ_j α_j V f_j` (`[1, d_a]`).
    pub fn attend(&self, tape: &mut Tape, bound: &Bound, scores: Var, features: Var) -> Result<(Var, Var)> {
        let weights = tape.softmax(scores)?;
        let v = self.value.apply(tape, bound, features)?;
        let context = tape.matmul(weights, v)?;
        Ok((weights, context))
    }

    pub fn attention(&self, tape: &mut Tape, bound: &Bound, token: Var, features: Var) -> Result<AttentionVars> {
        let scores = self.scores(tape, bound, token, features)?;
        let (weights, context) = self.attend(tape, bound, scores, features)?;
        Ok(AttentionVars {
            scores,
            weights,
            context,
        })
    }

    /// Readout applied at every grid point with the same context: `[N, C_fno]`.
    pub fn fuse(&self, tape: &mut Tape, bound: &Bound, features: Var, context: Var) -> Result<Var> {
        let n = tape.value(features).shape()[0];
        if tape.value(context).shape() != [1, self.attn_dim] {
            return Err(TensorError::mismatch("gml_fuse", tape.value(context).shape(), &[1, self.attn_dim]));
        }
        let c = tape.broadcast_to(context, &[n, self.attn_dim])?;
        let joint = tape.concat(&[features, c], 1)?;
        let skip = self.readout.skip.apply(tape, bound, joint)?;
        let h = self.readout.hidden.apply(tape, bound, joint)?;
        let h = tape.gelu(h)?;
        let mlp = self.readout.out.apply(tape, bound, h)?;
        tape.add(skip, mlp)
    }
}

/// Max-subtracted softmax.
pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let mut out = scores.to_vec();
    softmax_in_place(&mut out);
    out
}

/// `Σ_j w_j g_j / Σ_j w_j` for positive node weights and vector-valued `g`.
pub fn normalized_average(weights: &[f64], values: &[Vec<f64>]) -> Vec<f64> {
    let total: f64 = weights.iter().sum();
    let dim = values.first().map_or(0, Vec::len);
    let mut out = vec![0.0; dim];
    for (w, v) in weights.iter().zip(values) {
        for (o, x) in out.iter_mut().zip(v) {
            *o += w * x;
        }
    }
    out.iter_mut().for_each(|o| *o /= total);
    out
}

/// Quadrature nodes on `[0,1]²` with `n` cells per side: cell centres, or lower-left corners.
pub fn quadrature_nodes(n: usize, centered: bool) -> Vec<(f64, f64)> {
    let off = if centered { 0.5 } else { 0.0 };
    let h = 1.0 / n as f64;
    (0..n)
        .flat_map(|i| (0..n).map(move |j| ((i as f64 + off) * h, (j as f64 + off) * h)))
        .collect()
}

/// Discrete attention at resolution `n`: softmax of `ln w` at the nodes weighting `g`.
pub fn discrete_attention_on_grid<W, G>(w: W, g: G, n: usize, centered: bool) -> Vec<f64>
where
    W: Fn(f64, f64) -> f64,
    G: Fn(f64, f64) -> Vec<f64>,
{
    let nodes = quadrature_nodes(n, centered);
    let scores: Vec<f64> = nodes.iter().map(|&(x, y)| w(x, y).ln()).collect();
    let alpha = softmax(&scores);
    let values: Vec<Vec<f64>> = nodes.iter().map(|&(x, y)| g(x, y)).collect();
    normalized_average(&alpha, &values)
}

/// High-resolution midpoint evaluation of `∫ w g / ∫ w` on `[0,1]²`.
pub fn continuous_attention_reference<W, G>(w: W, g: G, n: usize) -> Vec<f64>
where
    W: Fn(f64, f64) -> f64,
    G: Fn(f64, f64) -> Vec<f64>,
{
    let nodes = quadrature_nodes(n, true);
    let weights: Vec<f64> = nodes.iter().map(|&(x, y)| w(x, y)).collect();
    let values: Vec<Vec<f64>> = nodes.iter().map(|&(x, y)| g(x, y)).collect();
    normalized_average(&weights, &values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::uniform_tensor;
    use crate::tensor::Tensor;
    use rand::{Rng, SeedableRng};

    fn setup(seed: u64, token: usize, feat: usize, attn: usize) -> (ParamStore, Gml, ChaCha8Rng) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let gml = Gml::new(&mut store, &mut rng, token, feat, attn);
        (store, gml, rng)
    }

    fn zero(store: &mut ParamStore, lin: &Linear) {
        store.get_mut(lin.weight).data_mut().iter_mut().for_each(|v| *v = 0.0);
        if let Some(b) = lin.bias {
            store.get_mut(b).data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }

    #[test]
    fn scores_match_loop_oracle() {
        let (store, gml, mut rng) = setup(1, 3, 4, 5);
        let token: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let feats = uniform_tensor(&mut rng, vec![6, 4], 1.0);
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let t = tape.leaf(Tensor::vector(token.clone()));
        let f = tape.leaf(feats.clone());
        let s = gml.scores(&mut tape, &bound, t, f).unwrap();
        let q = gml.query.eval(&store, &token);
        for j in 0..6 {
            let k = gml.key.eval(&store, &feats.data()[j * 4..(j + 1) * 4]);
            let dot: f64 = q.iter().zip(&k).map(|(a, b)| a * b).sum::<f64>() / 5f64.sqrt();
            assert!((tape.value(s).data()[j] - dot).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_key_map_gives_equal_scores_and_mean_context() {
        let (mut store, gml, mut rng) = setup(2, 2, 3, 3);
        zero(&mut store, &gml.key);
        let feats = uniform_tensor(&mut rng, vec![5, 3], 1.0);
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let t = tape.leaf(Tensor::vector(vec![0.4, -0.3]));
        let f = tape.leaf(feats.clone());
        let att = gml.attention(&mut tape, &bound, t, f).unwrap();
        assert!(tape.value(att.scores).data().iter().all(|&s| s == 0.0));
        let values: Vec<Vec<f64>> = (0..5).map(|j| gml.value.eval(&store, &feats.data()[j * 3..(j + 1) * 3])).collect();
        let mean = normalized_average(&[1.0; 5], &values);
        for (a, b) in tape.value(att.context).data().iter().zip(&mean) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn softmax_closed_forms_and_saturation() {
        let a = softmax(&[0.0, 2f64.ln(), 0.0, 0.0]);
        for (x, y) in a.iter().zip(&[0.2, 0.4, 0.2, 0.2]) {
            assert!((x - y).abs() < 1e-15);
        }
        let mut s = vec![-1e4; 9];
        s[4] = 1e4;
        let a = softmax(&s);
        assert_eq!(a[4], 1.0);
        assert_eq!(a.iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn saturated_context_selects_argmax_value() {
        let (store, gml, mut rng) = setup(3, 2, 3, 4);
        let feats = uniform_tensor(&mut rng, vec![6, 3], 1.0);
        let mut scores = vec![-1e4; 6];
        scores[2] = 1e4;
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let s = tape.leaf(Tensor::new(vec![1, 6], scores).unwrap());
        let f = tape.leaf(feats.clone());
        let (_, ctx) = gml.attend(&mut tape, &bound, s, f).unwrap();
        let v2 = gml.value.eval(&store, &feats.data()[6..9]);
        for (a, b) in tape.value(ctx).data().iter().zip(&v2) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn readout_projections() {
        let (mut store, gml, mut rng) = setup(4, 2, 3, 3);
        zero(&mut store, &gml.readout.hidden);
        zero(&mut store, &gml.readout.out);
        let feats = uniform_tensor(&mut rng, vec![4, 3], 1.0);
        let ctx = uniform_tensor(&mut rng, vec![1, 3], 1.0);
        let run = |store: &ParamStore| {
            let mut tape = Tape::new();
            let bound = store.bind(&mut tape);
            let f = tape.leaf(feats.clone());
            let c = tape.leaf(ctx.clone());
            let out = gml.fuse(&mut tape, &bound, f, c).unwrap();
            tape.value(out).clone()
        };
        let set_skip = |store: &mut ParamStore, offset: usize| {
            let w = store.get_mut(gml.readout.skip.weight).data_mut();
            w.iter_mut().for_each(|v| *v = 0.0);
            for i in 0..3 {
                w[(offset + i) * 3 + i] = 1.0;
            }
        };
        set_skip(&mut store, 0);
        assert!(run(&store).max_abs_diff(&feats) < 1e-15);
        set_skip(&mut store, 3);
        let out = run(&store);
        for row in out.data().chunks(3) {
            assert_eq!(row, ctx.data());
        }
    }

    #[test]
    fn quadrature_reference_cases() {
        let c = continuous_attention_reference(|_, _| 2.5, |_, _| vec![0.7], 16);
        assert!((c[0] - 0.7).abs() < 1e-15);
        let c = continuous_attention_reference(|x, _| 1.0 + x, |x, _| vec![x], 512);
        assert!((c[0] - 5.0 / 9.0).abs() < 1e-5);
        let coarse: Vec<f64> = [8, 16, 32, 64]
            .iter()
            .map(|&n| (discrete_attention_on_grid(|x, _| 1.0 + x, |x, _| vec![x], n, true)[0] - 5.0 / 9.0).abs())
            .collect();
        assert!(coarse.windows(2).all(|w| w[1] < w[0]));
    }
}
