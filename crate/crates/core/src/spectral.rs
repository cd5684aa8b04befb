//! Multi-scale spectral trunk: gated axial spectral layers with
//! squeeze–excitation, a fine stack on the native grid and a coarse stack on a
//! block-averaged grid, fused by addition.
//!
//! Features are `[X, Y, d]` tensors. A spectral layer transforms the y axis
//! first and then the x axis; an axis of extent 1 is left untouched.

use std::cell::RefCell;
use std::collections::HashSet;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::nn::{uniform_tensor, Bound, Linear, ParamId, ParamStore};
use crate::tensor::{Result, Tensor, TensorError};

thread_local! {
    static WARNED: RefCell<HashSet<(usize, usize)>> = RefCell::new(HashSet::new());
}

/// Number of modes actually mixed on an axis of length `n`.
///
/// Only `n/2 + 1` modes of a real signal are independent, so larger requests
/// are truncated (with a one-time warning per `(m, n)` pair).
pub fn effective_modes(m: usize, n: usize) -> usize {
    let limit = n / 2 + 1;
    if m > limit {
        WARNED.with(|w| {
            if w.borrow_mut().insert((m, n)) {
                log::warn!("{m} spectral modes requested on an axis of length {n}; using {limit}");
            }
        });
        limit
    } else {
        m
    }
}

/// Mode mixers `W(k)` (`[m, d, d]`, complex, row-vector convention: entry
/// `[k][i][j]` maps input channel `i` to output channel `j`) and gates `γ(k)`.
#[derive(Clone, Debug)]
pub struct SpectralAxis {
    pub weight: ParamId,
    pub gate: ParamId,
    pub modes: usize,
    pub width: usize,
}

impl SpectralAxis {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, modes: usize, width: usize) -> Self {
        let scale = 1.0 / width as f64;
        let data = (0..2 * modes * width * width).map(|_| rng.gen_range(-scale..=scale)).collect();
        let weight = store.add(
            format!("{name}.weight"),
            Tensor::new_complex(vec![modes, width, width], data).expect("mode weight shape"),
        );
        let gate = store.add(format!("{name}.gate"), Tensor::full(vec![modes], 1.0));
        SpectralAxis {
            weight,
            gate,
            modes,
            width,
        }
    }

    fn apply_complex(&self, tape: &mut Tape, bound: &Bound, v: Var, axis: usize) -> Result<Var> {
        let shape = tape.value(v).shape().to_vec();
        if shape.len() != 3 || shape[2] != self.width {
            return Err(TensorError::mismatch("spectral_axis", &shape, &[0, 0, self.width]));
        }
        let n = shape[axis];
        let m = effective_modes(self.modes, n);
        let spec = tape.dft_1d(v, axis)?;
        let low = tape.slice(spec, axis, 0, m)?;
        // bring the mode axis to the front so each mode is one batch entry
        let batched = if axis == 0 { low } else { tape.transpose(low, &[1, 0, 2])? };
        let mut w = bound.var(self.weight);
        let mut gate = bound.var(self.gate);
        if m < self.modes {
            w = tape.slice(w, 0, 0, m)?;
            gate = tape.slice(gate, 0, 0, m)?;
        }
        let mixed = tape.complex_matmul(batched, w)?;
        let gate = tape.reshape(gate, &[m, 1, 1])?;
        let gated = tape.mul(mixed, gate)?;
        let back = if axis == 0 { gated } else { tape.transpose(gated, &[1, 0, 2])? };
        let full = tape.hermitian_pad(back, axis, n)?;
        tape.idft_1d(full, axis)
    }

    /// Spectral filtering of `v [X, Y, d]` along `axis` (0 = x, 1 = y).
    pub fn apply(&self, tape: &mut Tape, bound: &Bound, v: Var, axis: usize) -> Result<Var> {
        if tape.value(v).shape().get(axis) == Some(&1) {
            return Ok(v);
        }
        let c = self.apply_complex(tape, bound, v, axis)?;
        tape.real_part(c)
    }
}

#[derive(Clone, Debug)]
pub struct SpectralLayer {
    pub y: SpectralAxis,
    pub x: SpectralAxis,
}

impl SpectralLayer {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, modes: usize, width: usize) -> Self {
        let y = SpectralAxis::new(store, rng, &format!("{name}.y"), modes, width);
        let x = SpectralAxis::new(store, rng, &format!("{name}.x"), modes, width);
        SpectralLayer { y, x }
    }

    /// Gated axial spectral convolution: y axis, then x axis.
    pub fn apply(&self, tape: &mut Tape, bound: &Bound, v: Var) -> Result<Var> {
        let vy = self.y.apply(tape, bound, v, 1)?;
        self.x.apply(tape, bound, vy, 0)
    }
}

/// Channel gate `a = σ(W2 ReLU(W1 s))` from the spatial mean `s`.
#[derive(Clone, Debug)]
pub struct SqueezeExcite {
    pub w1: ParamId,
    pub w2: ParamId,
    pub width: usize,
    pub hidden: usize,
}

impl SqueezeExcite {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, width: usize, reduction: usize) -> Self {
        let hidden = (width / reduction).max(1);
        let w1 = store.add(
            format!("{name}.w1"),
            uniform_tensor(rng, vec![width, hidden], 1.0 / (width as f64).sqrt()),
        );
        let w2 = store.add(
            format!("{name}.w2"),
            uniform_tensor(rng, vec![hidden, width], 1.0 / (hidden as f64).sqrt()),
        );
        SqueezeExcite {
            w1,
            w2,
            width,
            hidden,
        }
    }

    /// The gate vector `a` as a `[1, d]` variable.
    pub fn gate(&self, tape: &mut Tape, bound: &Bound, v: Var) -> Result<Var> {
        let s = tape.mean_pool(v)?;
        let s = tape.reshape(s, &[1, self.width])?;
        let h = tape.matmul(s, bound.var(self.w1))?;
        let h = tape.relu(h)?;
        let a = tape.matmul(h, bound.var(self.w2))?;
        tape.sigmoid(a)
    }

    pub fn apply(&self, tape: &mut Tape, bound: &Bound, v: Var) -> Result<Var> {
        let a = self.gate(tape, bound, v)?;
        let a = tape.reshape(a, &[1, 1, self.width])?;
        tape.mul(v, a)
    }
}

/// `v ↦ GELU(SE(S(v)) + W v + b)`; the final layer of a stack skips the GELU.
#[derive(Clone, Debug)]
pub struct TrunkLayer {
    pub spectral: SpectralLayer,
    pub se: SqueezeExcite,
    pub residual: Linear,
}

impl TrunkLayer {
    pub fn apply(&self, tape: &mut Tape, bound: &Bound, v: Var, activate: bool) -> Result<Var> {
        let s = self.spectral.apply(tape, bound, v)?;
        let s = self.se.apply(tape, bound, s)?;
        let r = self.residual.apply_field(tape, bound, v)?;
        let sum = tape.add(s, r)?;
        if activate {
            tape.gelu(sum)
        } else {
            Ok(sum)
        }
    }
}

#[derive(Clone, Debug)]
pub struct Branch {
    pub lift: Linear,
    pub layers: Vec<TrunkLayer>,
}

pub struct BranchSpec {
    pub in_channels: usize,
    pub width: usize,
    pub depth: usize,
    pub modes: usize,
    pub reduction: usize,
}

impl Branch {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, spec: &BranchSpec) -> Self {
        let lift = Linear::new(store, rng, &format!("{name}.lift"), spec.in_channels, spec.width, true);
        let layers = (0..spec.depth)
            .map(|l| {
                let prefix = format!("{name}.layer{l}");
                TrunkLayer {
                    spectral: SpectralLayer::new(store, rng, &format!("{prefix}.spectral"), spec.modes, spec.width),
                    se: SqueezeExcite::new(store, rng, &format!("{prefix}.se"), spec.width, spec.reduction),
                    residual: Linear::new(store, rng, &format!("{prefix}.residual"), spec.width, spec.width, true),
                }
            })
            .collect();
        Branch { lift, layers }
    }

    pub fn apply(&self, tape: &mut Tape, bound: &Bound, input: Var) -> Result<Var> {
        let mut v = self.lift.apply_field(tape, bound, input)?;
        let depth = self.layers.len();
        for (l, layer) in self.layers.iter().enumerate() {
            v = layer.apply(tape, bound, v, l + 1 < depth)?;
        }
        Ok(v)
    }
}

/// Fine stack plus a coarse stack run on the grid block-averaged by `factor`.
#[derive(Clone, Debug)]
pub struct Amfno {
    pub fine: Branch,
    pub coarse: Branch,
    pub factor: usize,
}

impl Amfno {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, fine: &BranchSpec, coarse: &BranchSpec, factor: usize) -> Self {
        Amfno {
            fine: Branch::new(store, rng, "trunk.fine", fine),
            coarse: Branch::new(store, rng, "trunk.coarse", coarse),
            factor,
        }
    }

    /// Pooling factors per axis; degenerate axes are not pooled.
    pub fn factors(&self, x: usize, y: usize) -> (usize, usize) {
        let f = |n: usize| if n == 1 { 1 } else { self.factor };
        (f(x), f(y))
    }

    /// Checks that a grid can be pooled by the coarse branch.
    pub fn check_grid(&self, x: usize, y: usize) -> Result<()> {
        let (sx, sy) = self.factors(x, y);
        if x % sx != 0 || y % sy != 0 {
            return Err(TensorError::contract(
                "amfno",
                format!("grid {x}x{y} is not divisible by downsample factor {}", self.factor),
            ));
        }
        Ok(())
    }

    /// `f(u) = f_fine + U_s(F_coarse(D_s u))` on an `[X, Y, c_in]` input.
    pub fn apply(&self, tape: &mut Tape, bound: &Bound, input: Var) -> Result<Var> {
        let shape = tape.value(input).shape().to_vec();
        self.check_grid(shape[0], shape[1])?;
        let (sx, sy) = self.factors(shape[0], shape[1]);
        let fine = self.fine.apply(tape, bound, input)?;
        let pooled = tape.avg_pool(input, sx, sy)?;
        let coarse = self.coarse.apply(tape, bound, pooled)?;
        let up = tape.upsample(coarse, sx, sy)?;
        tape.add(fine, up)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fft::dft_naive;
    use num_complex::Complex64;
    use rand::SeedableRng;

    fn random_field(rng: &mut ChaCha8Rng, shape: [usize; 3]) -> Tensor {
        uniform_tensor(rng, shape.to_vec(), 1.0)
    }

    fn set_identity(store: &mut ParamStore, axis: &SpectralAxis) {
        let (m, d) = (axis.modes, axis.width);
        let w = store.get_mut(axis.weight).data_mut();
        w.iter_mut().for_each(|v| *v = 0.0);
        for k in 0..m {
            for i in 0..d {
                w[2 * ((k * d + i) * d + i)] = 1.0;
            }
        }
    }

    fn run_layer(store: &ParamStore, layer: &SpectralLayer, field: &Tensor) -> Tensor {
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let v = tape.leaf(field.clone());
        let out = layer.apply(&mut tape, &bound, v).unwrap();
        tape.value(out).clone()
    }

    /// Literal per-line evaluation with explicit O(N²) transforms.
    fn naive_axis(store: &ParamStore, axis: &SpectralAxis, field: &[f64], shape: [usize; 3], dim: usize) -> Vec<f64> {
        let [nx, ny, d] = shape;
        let n = shape[dim];
        if n == 1 {
            return field.to_vec();
        }
        let m = axis.modes.min(n / 2 + 1);
        let w = store.get(axis.weight).data();
        let g = store.get(axis.gate).data();
        let idx = |i: usize, j: usize, c: usize| (i * ny + j) * d + c;
        let mut out = vec![0.0; field.len()];
        let lines = if dim == 0 { ny } else { nx };
        for line in 0..lines {
            let at = |p: usize, c: usize| if dim == 0 { idx(p, line, c) } else { idx(line, p, c) };
            let spectra: Vec<Vec<Complex64>> = (0..d)
                .map(|c| {
                    let x: Vec<Complex64> = (0..n).map(|p| Complex64::new(field[at(p, c)], 0.0)).collect();
                    dft_naive(&x, false)
                })
                .collect();
            let mut full = vec![vec![Complex64::new(0.0, 0.0); n]; d];
            for k in 0..m {
                for j in 0..d {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for i in 0..d {
                        let e = 2 * ((k * d + i) * d + j);
                        acc += spectra[i][k] * Complex64::new(w[e], w[e + 1]);
                    }
                    acc *= g[k];
                    if k == 0 || 2 * k == n {
                        full[j][k] = Complex64::new(acc.re, 0.0);
                    } else {
                        full[j][k] = acc;
                        full[j][n - k] = acc.conj();
                    }
                }
            }
            for (c, spec) in full.iter().enumerate() {
                let back = dft_naive(spec, true);
                for p in 0..n {
                    out[at(p, c)] = back[p].re / n as f64;
                }
            }
        }
        out
    }

    #[test]
    fn matches_naive_oracle_on_random_fields() {
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut store = ParamStore::new();
            let layer = SpectralLayer::new(&mut store, &mut rng, "s", 3, 4);
            for id in [layer.y.gate, layer.x.gate] {
                store.get_mut(id).data_mut().iter_mut().for_each(|g| *g = rng.gen_range(-2.0..2.0));
            }
            let field = random_field(&mut rng, [8, 8, 4]);
            let fast = run_layer(&store, &layer, &field);
            let mid = naive_axis(&store, &layer.y, field.data(), [8, 8, 4], 1);
            let slow = naive_axis(&store, &layer.x, &mid, [8, 8, 4], 0);
            let dev = fast.data().iter().zip(&slow).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(dev < 1e-9, "seed {seed}: {dev}");
        }
    }

    #[test]
    fn identity_filter_with_all_modes_reproduces_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let layer = SpectralLayer::new(&mut store, &mut rng, "s", 5, 3);
        set_identity(&mut store, &layer.x);
        set_identity(&mut store, &layer.y);
        let field = random_field(&mut rng, [8, 8, 3]);
        let out = run_layer(&store, &layer, &field);
        assert!(out.max_abs_diff(&field) < 1e-10);
    }

    #[test]
    fn zero_gates_annihilate() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::new();
        let layer = SpectralLayer::new(&mut store, &mut rng, "s", 3, 2);
        store.get_mut(layer.y.gate).data_mut().iter_mut().for_each(|g| *g = 0.0);
        let field = random_field(&mut rng, [8, 4, 2]);
        let out = run_layer(&store, &layer, &field);
        assert_eq!(out.max_abs(), 0.0);
    }

    #[test]
    fn inverse_transform_is_real() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let axis = SpectralAxis::new(&mut store, &mut rng, "a", 4, 3);
        store.get_mut(axis.gate).data_mut().iter_mut().for_each(|g| *g = rng.gen_range(-1.0..1.0));
        for dim in [0, 1] {
            let mut tape = Tape::new();
            let bound = store.bind(&mut tape);
            let v = tape.leaf(random_field(&mut rng, [8, 6, 3]));
            let c = axis.apply_complex(&mut tape, &bound, v, dim).unwrap();
            let imag = tape.value(c).data().chunks(2).map(|z| z[1].abs()).fold(0.0, f64::max);
            assert!(imag < 1e-10, "{imag}");
        }
    }

    #[test]
    fn truncation_error_decreases_with_modes() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let field = random_field(&mut rng, [16, 16, 2]);
        let mut last = f64::INFINITY;
        for m in 1..=9 {
            let mut store = ParamStore::new();
            let layer = SpectralLayer::new(&mut store, &mut rng, "s", m, 2);
            set_identity(&mut store, &layer.x);
            set_identity(&mut store, &layer.y);
            let out = run_layer(&store, &layer, &field);
            let err: f64 = out.data().iter().zip(field.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            assert!(err < last || err < 1e-10, "m={m}");
            last = err;
        }
        assert!(last < 1e-10);
    }

    #[test]
    fn requests_above_nyquist_are_truncated() {
        assert_eq!(effective_modes(12, 8), 5);
        assert_eq!(effective_modes(3, 8), 3);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::new();
        let layer = SpectralLayer::new(&mut store, &mut rng, "s", 12, 2);
        let field = random_field(&mut rng, [4, 4, 2]);
        assert!(run_layer(&store, &layer, &field).is_finite());
    }

    #[test]
    fn degenerate_axis_passes_through() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut store = ParamStore::new();
        let layer = SpectralLayer::new(&mut store, &mut rng, "s", 9, 2);
        set_identity(&mut store, &layer.x);
        let field = random_field(&mut rng, [16, 1, 2]);
        let out = run_layer(&store, &layer, &field);
        assert!(out.max_abs_diff(&field) < 1e-12);
    }

    #[test]
    fn squeeze_excite_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut store = ParamStore::new();
        let se = SqueezeExcite::new(&mut store, &mut rng, "se", 4, 2);
        let field = random_field(&mut rng, [4, 4, 4]);
        let shifted = {
            let mut t = field.clone();
            for i in 0..4 {
                for j in 0..4 {
                    for c in 0..4 {
                        t.data_mut()[(i * 4 + j) * 4 + c] = field.data()[(((i + 1) % 4) * 4 + (j + 3) % 4) * 4 + c];
                    }
                }
            }
            t
        };
        let gate_of = |store: &ParamStore, f: &Tensor| {
            let mut tape = Tape::new();
            let bound = store.bind(&mut tape);
            let v = tape.leaf(f.clone());
            let a = se.gate(&mut tape, &bound, v).unwrap();
            tape.value(a).clone()
        };
        assert!(gate_of(&store, &field).max_abs_diff(&gate_of(&store, &shifted)) < 1e-14);

        for id in [se.w1, se.w2] {
            store.get_mut(id).data_mut().iter_mut().for_each(|w| *w = 0.0);
        }
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let v = tape.leaf(field.clone());
        let out = se.apply(&mut tape, &bound, v).unwrap();
        for (o, f) in tape.value(out).data().iter().zip(field.data()) {
            assert!((o - f / 2.0).abs() < 1e-15);
        }

        let constant = Tensor::new(vec![2, 2, 4], (0..16).map(|i| (i % 4) as f64).collect()).unwrap();
        let mut tape = Tape::new();
        let v = tape.leaf(constant);
        let s = tape.mean_pool(v).unwrap();
        assert_eq!(tape.value(s).data(), &[0.0, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn coarse_branch_runs_at_half_resolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut store = ParamStore::new();
        let spec = BranchSpec {
            in_channels: 2,
            width: 4,
            depth: 1,
            modes: 4,
            reduction: 2,
        };
        let amfno = Amfno::new(&mut store, &mut rng, &spec, &spec, 2);
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let u = tape.leaf(random_field(&mut rng, [32, 32, 2]));
        let out = amfno.apply(&mut tape, &bound, u).unwrap();
        assert_eq!(tape.value(out).shape(), &[32, 32, 4]);
        let pooled = tape.avg_pool(u, 2, 2).unwrap();
        assert_eq!(tape.value(pooled).shape(), &[16, 16, 2]);
        assert!(amfno.check_grid(30, 31).is_err());
    }
}
