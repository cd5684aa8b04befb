//! Spline-edged KAN encoder producing the global token.
//!
//! Each edge is `φ(x) = w_b·SiLU(x) + w_s·Σ_r c_r B_r(x)` on a fixed knot
//! vector; a layer sums its incoming edges per output node.

use std::sync::Arc;

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{silu, silu_prime, Tape, Var};
use crate::bspline::{KnotVector, SplineError};
use crate::nn::{Bound, ParamId, ParamStore};
use crate::tensor::{Result, Tensor, TensorError};

/// Upper bound on `sup |SiLU'|` (≈ 1.0998).
pub const SILU_LIPSCHITZ: f64 = 1.1;

#[derive(Clone, Debug, PartialEq)]
pub struct KanEdge {
    pub knots: KnotVector,
    pub coef: Vec<f64>,
    pub w_b: f64,
    pub w_s: f64,
}

impl KanEdge {
    pub fn new(knots: KnotVector, coef: Vec<f64>, w_b: f64, w_s: f64) -> Result<Self, SplineError> {
        if coef.len() != knots.num_basis() {
            return Err(SplineError::CoefficientCount {
                expected: knots.num_basis(),
                got: coef.len(),
            });
        }
        Ok(KanEdge { knots, coef, w_b, w_s })
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.w_b * silu(x) + self.w_s * self.knots.evaluate(&self.coef, x)
    }

    pub fn derivative(&self, x: f64) -> f64 {
        self.w_b * silu_prime(x) + self.w_s * self.knots.evaluate_derivative(&self.coef, x)
    }

    /// `|w_b|·L_b + |w_s|·(2/h_min)·‖c‖₁`.
    pub fn lipschitz_bound(&self) -> f64 {
        let c1: f64 = self.coef.iter().map(|c| c.abs()).sum();
        self.w_b.abs() * SILU_LIPSCHITZ + self.w_s.abs() * 2.0 / self.knots.min_spacing() * c1
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoolMode {
    Mean,
    Center,
}

impl std::str::FromStr for PoolMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "mean" => Ok(PoolMode::Mean),
            "center" => Ok(PoolMode::Center),
            other => Err(format!("unknown pooling mode '{other}' (expected mean or center)")),
        }
    }
}

impl std::fmt::Display for PoolMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PoolMode::Mean => "mean",
            PoolMode::Center => "center",
        })
    }
}

/// Summary `z` of a history stacked as `[X, Y, frames·C]` (frame-major channels).
pub fn pool_history(tape: &mut Tape, history: Var, mode: PoolMode) -> Result<Var> {
    let shape = tape.value(history).shape().to_vec();
    if shape.len() != 3 || shape.iter().any(|&e| e == 0) {
        return Err(TensorError::contract("pool_history", format!("empty or malformed history {shape:?}")));
    }
    match mode {
        PoolMode::Mean => tape.mean_pool(history),
        PoolMode::Center => {
            let row = tape.slice(history, 0, shape[0] / 2, 1)?;
            let cell = tape.slice(row, 1, shape[1] / 2, 1)?;
            tape.reshape(cell, &[shape[2]])
        }
    }
}

#[derive(Clone, Debug)]
pub struct KanLayer {
    pub coef: ParamId,
    pub w_b: ParamId,
    pub w_s: ParamId,
    pub knots: Arc<[KnotVector]>,
    pub d_in: usize,
    pub d_out: usize,
}

impl KanLayer {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        d_in: usize,
        d_out: usize,
        grid: usize,
        order: usize,
    ) -> std::result::Result<Self, SplineError> {
        let knots: Vec<KnotVector> = (0..d_in)
            .map(|_| KnotVector::uniform(-1.0, 1.0, grid, order))
            .collect::<std::result::Result<_, _>>()?;
        let r = knots[0].num_basis();
        let normal = Normal::new(0.0, 0.1).expect("valid normal");
        let coef = (0..d_out * d_in * r).map(|_| normal.sample(rng)).collect();
        let coef = store.add(format!("{name}.coef"), Tensor::new(vec![d_out, d_in, r], coef).expect("coef shape"));
        let w_b = store.add(format!("{name}.w_b"), Tensor::full(vec![d_out, d_in], 1.0));
        let w_s = store.add(format!("{name}.w_s"), Tensor::full(vec![d_out, d_in], 1.0));
        Ok(KanLayer {
            coef,
            w_b,
            w_s,
            knots: knots.into(),
            d_in,
            d_out,
        })
    }

    pub fn apply(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<Var> {
        tape.kan_layer(
            x,
            bound.var(self.coef),
            bound.var(self.w_b),
            bound.var(self.w_s),
            self.knots.clone(),
        )
    }

    /// Edge `(j, i)` as a standalone function.
    pub fn edge(&self, store: &ParamStore, j: usize, i: usize) -> KanEdge {
        let r = self.knots[i].num_basis();
        let e = j * self.d_in + i;
        KanEdge {
            knots: self.knots[i].clone(),
            coef: store.get(self.coef).data()[e * r..(e + 1) * r].to_vec(),
            w_b: store.get(self.w_b).data()[e],
            w_s: store.get(self.w_s).data()[e],
        }
    }

    /// Matrix `Λ[j][i]` of per-edge Lipschitz bounds.
    pub fn edge_bounds(&self, store: &ParamStore) -> Vec<Vec<f64>> {
        (0..self.d_out)
            .map(|j| (0..self.d_in).map(|i| self.edge(store, j, i).lipschitz_bound()).collect())
            .collect()
    }
}

/// Input normalization followed by a chain of KAN layers.
#[derive(Clone, Debug)]
pub struct KanNet {
    pub layers: Vec<KanLayer>,
    /// Per-coordinate affine map `z ↦ scale·z + shift` into `[-1, 1]`.
    pub scale: Vec<f64>,
    pub shift: Vec<f64>,
}

impl KanNet {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        dims: &[usize],
        grid: usize,
        order: usize,
    ) -> std::result::Result<Self, SplineError> {
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(l, w)| KanLayer::new(store, rng, &format!("kan.layer{l}"), w[0], w[1], grid, order))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(KanNet {
            layers,
            scale: vec![1.0; dims[0]],
            shift: vec![0.0; dims[0]],
        })
    }

    pub fn input_dim(&self) -> usize {
        self.scale.len()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(self.input_dim(), |l| l.d_out)
    }

    /// Sets the input map so that `[lo_i, hi_i]` lands on `[-1, 1]`.
    pub fn fit_input_range(&mut self, lo: &[f64], hi: &[f64]) {
        for i in 0..self.scale.len() {
            let half = 0.5 * (hi[i] - lo[i]);
            let mid = 0.5 * (hi[i] + lo[i]);
            let s = if half > 1e-12 { 1.0 / half } else { 1.0 };
            self.scale[i] = s;
            self.shift[i] = -mid * s;
        }
    }

    pub fn apply(&self, tape: &mut Tape, bound: &Bound, z: Var) -> Result<Var> {
        let n = self.input_dim();
        if tape.value(z).shape() != [n] {
            return Err(TensorError::mismatch("kan_forward", tape.value(z).shape(), &[n]));
        }
        let s = tape.leaf(Tensor::vector(self.scale.clone()));
        let b = tape.leaf(Tensor::vector(self.shift.clone()));
        let zs = tape.mul(z, s)?;
        let mut x = tape.add(zs, b)?;
        for layer in &self.layers {
            x = layer.apply(tape, bound, x)?;
        }
        Ok(x)
    }

    /// Direct evaluation outside a tape.
    pub fn eval(&self, store: &ParamStore, z: &[f64]) -> Vec<f64> {
        let mut x: Vec<f64> = z
            .iter()
            .zip(self.scale.iter().zip(&self.shift))
            .map(|(v, (s, b))| v * s + b)
            .collect();
        for layer in &self.layers {
            x = (0..layer.d_out)
                .map(|j| (0..layer.d_in).map(|i| layer.edge(store, j, i).eval(x[i])).sum())
                .collect();
        }
        x
    }

    /// Largest input scale factor, the Lipschitz constant of the input normalization.
    pub fn input_gain(&self) -> f64 {
        self.scale.iter().fold(0.0, |m, s| m.max(s.abs()))
    }

    /// `∏_ℓ ‖Λ_ℓ‖_∞` (max row sum): Lipschitz constant in the max norm on the normalized input.
    pub fn lipschitz_inf(&self, store: &ParamStore) -> f64 {
        self.layers
            .iter()
            .map(|l| {
                l.edge_bounds(store)
                    .iter()
                    .map(|row| row.iter().sum::<f64>())
                    .fold(0.0, f64::max)
            })
            .product()
    }

    /// `∏_ℓ √(‖Λ_ℓ‖₁‖Λ_ℓ‖_∞)`: Lipschitz constant in the Euclidean norm on the normalized input.
    pub fn lipschitz_l2(&self, store: &ParamStore) -> f64 {
        self.layers
            .iter()
            .map(|l| {
                let b = l.edge_bounds(store);
                let rows = b.iter().map(|r| r.iter().sum::<f64>()).fold(0.0, f64::max);
                let cols = (0..l.d_in).map(|i| b.iter().map(|r| r[i]).sum::<f64>()).fold(0.0, f64::max);
                (rows * cols).sqrt()
            })
            .product()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bspline::fit_least_squares;
    use rand::{Rng, SeedableRng};

    fn eval_net(store: &ParamStore, net: &KanNet, z: &[f64]) -> Vec<f64> {
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let zv = tape.leaf(Tensor::vector(z.to_vec()));
        let t = net.apply(&mut tape, &bound, zv).unwrap();
        tape.value(t).data().to_vec()
    }

    #[test]
    fn edge_special_cases() {
        let knots = KnotVector::uniform(-1.0, 1.0, 8, 3).unwrap();
        let base = KanEdge::new(knots.clone(), vec![0.3; 11], 1.0, 0.0).unwrap();
        assert_eq!(base.eval(0.0), 0.0);
        let ones = KanEdge::new(knots.clone(), vec![1.0; 11], 0.0, 1.0).unwrap();
        for i in 0..50 {
            let x = -0.98 + 1.96 * i as f64 / 49.0;
            assert!((ones.eval(x) - 1.0).abs() < 1e-12);
        }
        let zero = KanEdge::new(knots, vec![0.0; 11], 0.0, 0.0).unwrap();
        assert_eq!(zero.lipschitz_bound(), 0.0);
        assert_eq!(zero.eval(0.4), zero.eval(-0.7));
    }

    #[test]
    fn silu_constant_bounds_derivative() {
        let sup = (0..100_001)
            .map(|i| -20.0 + 40.0 * i as f64 / 100_000.0)
            .map(|x| silu_prime(x).abs())
            .fold(0.0, f64::max);
        assert!(sup <= SILU_LIPSCHITZ && sup > 1.09, "{sup}");
    }

    #[test]
    fn spline_fit_converges_at_fourth_order() {
        let target = |x: f64| (2.0 * std::f64::consts::PI * x).sin();
        let xs: Vec<f64> = (0..2000).map(|i| i as f64 / 1999.0).collect();
        let ys: Vec<f64> = xs.iter().map(|&x| target(x)).collect();
        let err = |g: usize| {
            let kv = KnotVector::uniform(0.0, 1.0, g, 3).unwrap();
            let c = fit_least_squares(&kv, &xs, &ys).unwrap();
            (0..20_000)
                .map(|i| i as f64 / 19_999.0)
                .map(|x| (kv.evaluate(&c, x) - target(x)).abs())
                .fold(0.0, f64::max)
        };
        let e16 = err(16);
        let e32 = err(32);
        let h: f64 = 1.0 / 16.0;
        assert!(e16 < 10.0 * h.powi(4), "{e16}");
        assert!((e16 / e32).log2() >= 3.5, "order {}", (e16 / e32).log2());
    }

    #[test]
    fn single_edge_network_is_the_edge() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let net = KanNet::new(&mut store, &mut rng, &[1, 1], 8, 3).unwrap();
        let edge = net.layers[0].edge(&store, 0, 0);
        for x in [-0.9, -0.1, 0.35, 0.8] {
            assert!((eval_net(&store, &net, &[x])[0] - edge.eval(x)).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_parameters_give_zero_token() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut store = ParamStore::new();
        let net = KanNet::new(&mut store, &mut rng, &[3, 2], 8, 3).unwrap();
        let ids: Vec<ParamId> = store.ids().collect();
        for id in ids {
            store.get_mut(id).data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        assert!(eval_net(&store, &net, &[0.2, -0.4, 0.9]).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matches_literal_edge_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::new();
        let net = KanNet::new(&mut store, &mut rng, &[2, 3, 2], 8, 3).unwrap();
        for id in store.ids().collect::<Vec<_>>() {
            store.get_mut(id).data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
        }
        let z = [0.37, -0.61];
        let mut x = z.to_vec();
        for layer in &net.layers {
            let mut next = vec![0.0; layer.d_out];
            for (j, n) in next.iter_mut().enumerate() {
                for (i, &xi) in x.iter().enumerate() {
                    let e = layer.edge(&store, j, i);
                    let basis = e.knots.basis(xi);
                    let spline: f64 = (0..basis.len()).map(|r| e.coef[r] * basis[r]).sum();
                    *n += e.w_b * xi / (1.0 + (-xi).exp()) + e.w_s * spline;
                }
            }
            x = next;
        }
        let fast = eval_net(&store, &net, &z);
        let direct = net.eval(&store, &z);
        for ((a, b), c) in fast.iter().zip(&x).zip(&direct) {
            assert!((a - b).abs() < 1e-12);
            assert!((c - b).abs() < 1e-12);
        }
    }

    #[test]
    fn network_respects_lipschitz_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut store = ParamStore::new();
        let net = KanNet::new(&mut store, &mut rng, &[4, 8, 3], 8, 3).unwrap();
        let l_inf = net.lipschitz_inf(&store);
        let l_2 = net.lipschitz_l2(&store);
        for _ in 0..200 {
            let a: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let b: Vec<f64> = a.iter().map(|v| v + rng.gen_range(-0.2..0.2)).collect();
            let (ya, yb) = (eval_net(&store, &net, &a), eval_net(&store, &net, &b));
            let dz_inf = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            let dy_inf = ya.iter().zip(&yb).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            let dz_2 = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            let dy_2 = ya.iter().zip(&yb).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            assert!(dy_inf <= l_inf * dz_inf + 1e-12);
            assert!(dy_2 <= l_2 * dz_2 + 1e-12);
        }
    }

    #[test]
    fn pooling_modes() {
        let mut tape = Tape::new();
        let constant = tape.leaf(Tensor::new(vec![4, 4, 2], (0..32).map(|i| (i % 2) as f64 + 1.0).collect()).unwrap());
        let z = pool_history(&mut tape, constant, PoolMode::Mean).unwrap();
        assert_eq!(tape.value(z).data(), &[1.0, 2.0]);

        let mut one_hot = Tensor::zeros(vec![5, 4, 1]);
        one_hot.data_mut()[2 * 4 + 2] = 1.0;
        let v = tape.leaf(one_hot);
        let z = pool_history(&mut tape, v, PoolMode::Center).unwrap();
        assert_eq!(tape.value(z).data(), &[1.0]);

        let empty = tape.leaf(Tensor::zeros(vec![0, 4, 1]));
        assert!(pool_history(&mut tape, empty, PoolMode::Mean).is_err());
    }

    #[test]
    fn input_range_maps_to_unit_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut store = ParamStore::new();
        let mut net = KanNet::new(&mut store, &mut rng, &[2, 1], 4, 2).unwrap();
        net.fit_input_range(&[0.0, -4.0], &[2.0, 0.0]);
        assert_eq!(net.scale[0] * 0.0 + net.shift[0], -1.0);
        assert_eq!(net.scale[1] * 0.0 + net.shift[1], 1.0);
    }
}
