//! Named parameter storage and the pointwise linear map.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Gradients, Tape, Var};
use crate::tensor::{Result, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered collection of trainable tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.names
            .iter()
            .zip(&self.values)
            .enumerate()
            .map(|(i, (n, v))| (ParamId(i), n.as_str(), v))
    }

    /// Total raw scalar count (complex entries count twice).
    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|v| v.data().len()).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.values.iter().flat_map(|v| v.data().iter().copied()).collect()
    }

    /// Overwrites every parameter from a flat vector produced by [`flatten`](Self::flatten).
    pub fn load_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.num_scalars(), "flat parameter length");
        let mut offset = 0;
        for v in &mut self.values {
            let n = v.data().len();
            v.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
    }

    /// Registers every parameter as a tape leaf.
    pub fn bind(&self, tape: &mut Tape) -> Bound {
        Bound(self.values.iter().map(|v| tape.leaf(v.clone())).collect())
    }

    /// Flat gradient in [`flatten`](Self::flatten) order (zeros for unused parameters).
    pub fn flat_gradient(&self, grads: &Gradients, bound: &Bound) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_scalars());
        for (v, var) in self.values.iter().zip(&bound.0) {
            match grads.get(*var) {
                Some(g) => out.extend_from_slice(g.data()),
                None => out.extend(std::iter::repeat(0.0).take(v.data().len())),
            }
        }
        out
    }
}

/// Tape variables for every parameter of a store, indexed by [`ParamId`].
#[derive(Clone, Debug)]
pub struct Bound(Vec<Var>);

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.0[id.0]
    }
}

pub fn uniform_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>, bound: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-bound..=bound)).collect();
    Tensor::new(shape, data).expect("shape and data agree")
}

/// `x W + b` applied to the rows of `x [N, in]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    /// Weights and bias drawn from `U(-1/√fan_in, 1/√fan_in)`.
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, fan_in: usize, fan_out: usize, bias: bool) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let weight = store.add(format!("{name}.weight"), uniform_tensor(rng, vec![fan_in, fan_out], bound));
        let bias = bias.then(|| store.add(format!("{name}.bias"), uniform_tensor(rng, vec![1, fan_out], bound)));
        Linear {
            weight,
            bias,
            fan_in,
            fan_out,
        }
    }

    pub fn apply(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<Var> {
        let y = tape.matmul(x, bound.var(self.weight))?;
        match self.bias {
            Some(b) => tape.add(y, bound.var(b)),
            None => Ok(y),
        }
    }

    /// Pointwise application to an `[X, Y, in]` field.
    pub fn apply_field(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<Var> {
        let shape = tape.value(x).shape().to_vec();
        let n = shape[0] * shape[1];
        let flat = tape.reshape(x, &[n, shape[2]])?;
        let y = self.apply(tape, bound, flat)?;
        tape.reshape(y, &[shape[0], shape[1], self.fan_out])
    }

    /// Direct evaluation outside a tape on row vectors.
    pub fn eval(&self, store: &ParamStore, x: &[f64]) -> Vec<f64> {
        let w = store.get(self.weight).data();
        let mut out = match self.bias {
            Some(b) => store.get(b).data().to_vec(),
            None => vec![0.0; self.fan_out],
        };
        for (i, xi) in x.iter().enumerate() {
            for (o, wv) in out.iter_mut().zip(&w[i * self.fan_out..(i + 1) * self.fan_out]) {
                *o += xi * wv;
            }
        }
        out
    }

    /// Matrix entries as `[fan_in][fan_out]` rows.
    pub fn weight_rows<'a>(&self, store: &'a ParamStore) -> impl Iterator<Item = &'a [f64]> {
        store.get(self.weight).data().chunks(self.fan_out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn flatten_roundtrip() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let lin = Linear::new(&mut store, &mut rng, "l", 3, 2, true);
        let flat = store.flatten();
        assert_eq!(flat.len(), 8);
        let mut other = store.clone();
        other.load_flat(&vec![0.0; 8]);
        assert!(other.get(lin.weight).data().iter().all(|&v| v == 0.0));
        other.load_flat(&flat);
        assert_eq!(other, store);
        assert_eq!(store.find("l.bias"), lin.bias);
    }

    #[test]
    fn tape_and_direct_linear_agree() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let lin = Linear::new(&mut store, &mut rng, "l", 3, 4, true);
        let x = vec![0.3, -1.2, 0.5];
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let xv = tape.leaf(Tensor::new(vec![1, 3], x.clone()).unwrap());
        let y = lin.apply(&mut tape, &bound, xv).unwrap();
        let direct = lin.eval(&store, &x);
        for (a, b) in tape.value(y).data().iter().zip(&direct) {
            assert!((a - b).abs() < 1e-14);
        }
    }
}
