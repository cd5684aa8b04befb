//! Synthetic trajectory generation: periodic 1D diffusion–reaction and 2D
//! shallow water with reflective walls, plus dataset splitting and storage.

use std::collections::BTreeMap;
use std::path::Path;

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use thiserror::Error;

use crate::fft;
use crate::seed;
use crate::skds::{Container, Dtype, SkdsError};
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("sample {sample}: state became non-finite at t={time:.4}")]
    Unstable { sample: usize, time: f64 },
    #[error("sample {sample}: CFL number {cfl:.3} exceeds 1 (h={h:.4}, w={w:.5}, xi={xi:.4}, zeta={zeta:.4})")]
    Cfl {
        sample: usize,
        cfl: f64,
        h: f64,
        w: f64,
        xi: f64,
        zeta: f64,
    },
    #[error("sample {sample}: depth became non-positive at step {step} (h={h:.4}, w={w:.5}, xi={xi:.4}, zeta={zeta:.4})")]
    Positivity {
        sample: usize,
        step: usize,
        h: f64,
        w: f64,
        xi: f64,
        zeta: f64,
    },
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("split fraction {fraction} of {samples} samples selects nothing")]
    EmptySplit { fraction: f64, samples: usize },
    #[error(transparent)]
    Container(#[from] SkdsError),
    #[error("dataset file is malformed: {0}")]
    Malformed(String),
}

/// Trajectories stored as `[samples, frames, X, Y, C]`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectorySet {
    shape: [usize; 5],
    data: Vec<f64>,
    pub dt: f64,
    pub meta: BTreeMap<String, String>,
}

impl TrajectorySet {
    pub fn new(shape: [usize; 5], data: Vec<f64>, dt: f64) -> Result<Self, DataError> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(DataError::Malformed(format!("{} values for shape {shape:?}", data.len())));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(DataError::Malformed("non-finite values".into()));
        }
        Ok(TrajectorySet {
            shape,
            data,
            dt,
            meta: BTreeMap::new(),
        })
    }

    pub fn shape(&self) -> [usize; 5] {
        self.shape
    }

    pub fn samples(&self) -> usize {
        self.shape[0]
    }

    pub fn frames(&self) -> usize {
        self.shape[1]
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.shape[2], self.shape[3])
    }

    pub fn channels(&self) -> usize {
        self.shape[4]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    fn frame_len(&self) -> usize {
        self.shape[2] * self.shape[3] * self.shape[4]
    }

    /// Frame `t` of sample `s` as `[X·Y·C]` values.
    pub fn frame(&self, s: usize, t: usize) -> &[f64] {
        let n = self.frame_len();
        let start = (s * self.shape[1] + t) * n;
        &self.data[start..start + n]
    }

    pub fn frame_tensor(&self, s: usize, t: usize) -> Tensor {
        Tensor::new(vec![self.shape[2], self.shape[3], self.shape[4]], self.frame(s, t).to_vec()).expect("frame shape")
    }

    /// Frames `end-ℓ .. end` of sample `s` stacked along channels, oldest first: `[X, Y, ℓ·C]`.
    pub fn history(&self, s: usize, end: usize, ell: usize) -> Tensor {
        let frames: Vec<&[f64]> = (end - ell..end).map(|t| self.frame(s, t)).collect();
        stack_frames(&frames, self.shape[2], self.shape[3], self.shape[4])
    }

    pub fn sample(&self, s: usize) -> TrajectorySet {
        self.select(&[s])
    }

    pub fn select(&self, indices: &[usize]) -> TrajectorySet {
        let n = self.shape[1] * self.frame_len();
        let mut data = Vec::with_capacity(indices.len() * n);
        for &s in indices {
            data.extend_from_slice(&self.data[s * n..(s + 1) * n]);
        }
        let mut shape = self.shape;
        shape[0] = indices.len();
        TrajectorySet {
            shape,
            data,
            dt: self.dt,
            meta: self.meta.clone(),
        }
    }

    /// Block average over `factor × factor` cells (degenerate axes untouched).
    pub fn coarsen(&self, factor: usize) -> Result<TrajectorySet, DataError> {
        let [s, t, x, y, c] = self.shape;
        let fx = if x == 1 { 1 } else { factor };
        let fy = if y == 1 { 1 } else { factor };
        if factor == 0 || x % fx != 0 || y % fy != 0 {
            return Err(DataError::Parameter(format!("grid {x}x{y} not divisible by {factor}")));
        }
        let (cx, cy) = (x / fx, y / fy);
        let w = 1.0 / (fx * fy) as f64;
        let mut out = vec![0.0; s * t * cx * cy * c];
        for st in 0..s * t {
            let src = &self.data[st * x * y * c..(st + 1) * x * y * c];
            let dst = &mut out[st * cx * cy * c..(st + 1) * cx * cy * c];
            for i in 0..x {
                for j in 0..y {
                    for ch in 0..c {
                        dst[((i / fx) * cy + j / fy) * c + ch] += w * src[(i * y + j) * c + ch];
                    }
                }
            }
        }
        let mut ts = TrajectorySet::new([s, t, cx, cy, c], out, self.dt)?;
        ts.meta = self.meta.clone();
        ts.meta.insert("coarsened_by".into(), factor.to_string());
        Ok(ts)
    }

    pub fn to_container(&self, dtype: Dtype) -> Container {
        let mut c = Container::new(dtype, self.shape.to_vec(), self.data.clone()).expect("consistent shape");
        c.push_meta("layout", "samples,frames,x,y,channels");
        c.push_meta("dt", self.dt);
        for (k, v) in &self.meta {
            c.push_meta(k.clone(), v);
        }
        c
    }

    pub fn from_container(c: Container) -> Result<Self, DataError> {
        if c.shape.len() != 5 {
            return Err(DataError::Malformed(format!("expected rank 5, got {:?}", c.shape)));
        }
        let dt = c
            .meta("dt")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| DataError::Malformed("missing dt".into()))?;
        let shape = [c.shape[0], c.shape[1], c.shape[2], c.shape[3], c.shape[4]];
        let mut ts = TrajectorySet::new(shape, c.data, dt)?;
        for (k, v) in c.meta {
            if k != "dt" && k != "layout" {
                ts.meta.insert(k, v);
            }
        }
        Ok(ts)
    }

    pub fn save(&self, path: &Path, dtype: Dtype) -> Result<(), DataError> {
        Ok(self.to_container(dtype).write(path)?)
    }

    pub fn load(path: &Path) -> Result<Self, DataError> {
        TrajectorySet::from_container(Container::read(path)?)
    }
}

/// Interleaves frames into `[X, Y, frames·C]` with frame-major channels.
pub fn stack_frames(frames: &[&[f64]], x: usize, y: usize, c: usize) -> Tensor {
    let ell = frames.len();
    let mut data = vec![0.0; x * y * ell * c];
    for p in 0..x * y {
        for (f, frame) in frames.iter().enumerate() {
            data[(p * ell + f) * c..(p * ell + f + 1) * c].copy_from_slice(&frame[p * c..(p + 1) * c]);
        }
    }
    Tensor::new(vec![x, y, ell * c], data).expect("stack shape")
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiffusionReactionParams {
    pub nu: f64,
    pub rho: f64,
    pub grid: usize,
    pub frames: usize,
    pub frame_dt: f64,
    pub samples: usize,
    /// Highest Fourier mode in the initial condition.
    pub ic_modes: usize,
    pub seed: u64,
}

impl Default for DiffusionReactionParams {
    fn default() -> Self {
        DiffusionReactionParams {
            nu: 0.01,
            rho: 1.0,
            grid: 64,
            frames: 50,
            frame_dt: 0.02,
            samples: 200,
            ic_modes: 4,
            seed: 0,
        }
    }
}

fn dr_rhs(u: &[f64], nu: f64, rho: f64, wavenumber_sq: &[f64], buf: &mut [Complex64], out: &mut [f64]) {
    for (b, &v) in buf.iter_mut().zip(u) {
        *b = Complex64::new(v, 0.0);
    }
    fft::fft(buf);
    for (b, k2) in buf.iter_mut().zip(wavenumber_sq) {
        *b *= -k2;
    }
    fft::ifft(buf);
    for ((o, b), &v) in out.iter_mut().zip(buf.iter()).zip(u) {
        *o = nu * b.re + rho * v * (1.0 - v);
    }
}

/// RK4 integration of `u_t = ν u_xx + ρ u(1-u)` on the periodic unit interval.
/// Returns `frames` states spaced by `frame_dt`, starting with `u0`.
pub fn integrate_diffusion_reaction(u0: &[f64], nu: f64, rho: f64, frame_dt: f64, frames: usize) -> Option<Vec<Vec<f64>>> {
    let n = u0.len();
    let wavenumber_sq: Vec<f64> = (0..n)
        .map(|k| {
            let f = 2.0 * std::f64::consts::PI * fft::signed_frequency(k, n) as f64;
            f * f
        })
        .collect();
    let stiffness = nu * wavenumber_sq.iter().copied().fold(0.0, f64::max) + rho.abs();
    let dt_max = 0.8 * 2.5 / stiffness.max(1e-12);
    let substeps = (frame_dt / dt_max).ceil().max(1.0) as usize;
    let h = frame_dt / substeps as f64;
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut tmp = vec![0.0; n];
    let mut u = u0.to_vec();
    let mut out = vec![u.clone()];
    for _ in 1..frames {
        for _ in 0..substeps {
            dr_rhs(&u, nu, rho, &wavenumber_sq, &mut buf, &mut k1);
            tmp.iter_mut().zip(&u).zip(&k1).for_each(|((t, v), k)| *t = v + 0.5 * h * k);
            dr_rhs(&tmp, nu, rho, &wavenumber_sq, &mut buf, &mut k2);
            tmp.iter_mut().zip(&u).zip(&k2).for_each(|((t, v), k)| *t = v + 0.5 * h * k);
            dr_rhs(&tmp, nu, rho, &wavenumber_sq, &mut buf, &mut k3);
            tmp.iter_mut().zip(&u).zip(&k3).for_each(|((t, v), k)| *t = v + h * k);
            dr_rhs(&tmp, nu, rho, &wavenumber_sq, &mut buf, &mut k4);
            for i in 0..n {
                u[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
        }
        if u.iter().any(|v| !v.is_finite()) {
            return None;
        }
        out.push(u.clone());
    }
    Some(out)
}

/// Random band-limited Fourier series squashed into (0, 1) by the logistic map.
pub fn diffusion_reaction_ic(rng: &mut impl Rng, grid: usize, modes: usize) -> Vec<f64> {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let offset = rng.gen_range(-1.0..1.0);
    let coeffs: Vec<(f64, f64)> = (1..=modes)
        .map(|k| {
            let s = 1.5 / k as f64;
            (s * normal.sample(rng), s * normal.sample(rng))
        })
        .collect();
    (0..grid)
        .map(|i| {
            let x = i as f64 / grid as f64;
            let series: f64 = coeffs
                .iter()
                .enumerate()
                .map(|(k, (a, b))| {
                    let arg = 2.0 * std::f64::consts::PI * (k + 1) as f64 * x;
                    a * arg.cos() + b * arg.sin()
                })
                .sum();
            1.0 / (1.0 + (-(offset + series)).exp())
        })
        .collect()
}

pub fn gen_diffusion_reaction(p: &DiffusionReactionParams) -> Result<TrajectorySet, DataError> {
    if p.nu <= 0.0 || p.grid == 0 || p.frames == 0 || p.frame_dt <= 0.0 {
        return Err(DataError::Parameter("need nu > 0, grid > 0, frames > 0, frame_dt > 0".into()));
    }
    let samples: Vec<Vec<Vec<f64>>> = (0..p.samples)
        .into_par_iter()
        .map(|s| {
            let mut rng = seed::rng_indexed(p.seed, "diffusion-reaction", s as u64);
            let u0 = diffusion_reaction_ic(&mut rng, p.grid, p.ic_modes);
            integrate_diffusion_reaction(&u0, p.nu, p.rho, p.frame_dt, p.frames).ok_or(DataError::Unstable {
                sample: s,
                time: p.frame_dt * p.frames as f64,
            })
        })
        .collect::<Result<_, _>>()?;
    let data = samples.into_iter().flatten().flatten().collect();
    let mut ts = TrajectorySet::new([p.samples, p.frames, p.grid, 1, 1], data, p.frame_dt)?;
    ts.meta.insert("equation".into(), "diffusion-reaction-1d".into());
    ts.meta.insert("nu".into(), p.nu.to_string());
    ts.meta.insert("rho".into(), p.rho.to_string());
    ts.meta.insert("ic_modes".into(), p.ic_modes.to_string());
    ts.meta.insert("seed".into(), p.seed.to_string());
    Ok(ts)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DropletIc {
    pub h: f64,
    pub w: f64,
    pub xi: f64,
    pub zeta: f64,
}

impl DropletIc {
    pub fn sample(rng: &mut impl Rng) -> Self {
        DropletIc {
            h: rng.gen_range(1.5..=2.5),
            w: rng.gen_range(0.002..=0.008),
            xi: rng.gen_range(0.4..=0.6),
            zeta: rng.gen_range(0.4..=0.6),
        }
    }

    pub fn depth(&self, x1: f64, x2: f64) -> f64 {
        1.0 + self.h * (-((x1 - self.xi).powi(2) + (x2 - self.zeta).powi(2)) / self.w).exp()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ShallowWaterParams {
    pub grid: usize,
    pub dt: f64,
    pub frames: usize,
    /// Solver steps between stored frames.
    pub steps_per_frame: usize,
    pub samples: usize,
    pub gravity: f64,
    pub seed: u64,
}

impl Default for ShallowWaterParams {
    fn default() -> Self {
        ShallowWaterParams {
            grid: 32,
            dt: 0.002,
            frames: 100,
            steps_per_frame: 1,
            samples: 100,
            gravity: 1.0,
            seed: 0,
        }
    }
}

/// Conserved shallow-water state `(ρ, ρv₁, ρv₂)` on an `n × n` cell-centred grid.
#[derive(Clone, Debug, PartialEq)]
pub struct ShallowWaterState {
    pub n: usize,
    pub h: Vec<f64>,
    pub hu: Vec<f64>,
    pub hv: Vec<f64>,
}

impl ShallowWaterState {
    pub fn from_depth(n: usize, depth: impl Fn(f64, f64) -> f64) -> Self {
        let mut h = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                h[i * n + j] = depth((i as f64 + 0.5) / n as f64, (j as f64 + 0.5) / n as f64);
            }
        }
        ShallowWaterState {
            n,
            h,
            hu: vec![0.0; n * n],
            hv: vec![0.0; n * n],
        }
    }

    pub fn mass(&self) -> f64 {
        let cell = 1.0 / (self.n * self.n) as f64;
        self.h.iter().sum::<f64>() * cell
    }

    /// Global maximal wave speed `max |v| + √(gρ)`.
    pub fn max_wave_speed(&self, g: f64) -> f64 {
        (0..self.h.len())
            .map(|p| {
                let (h, u, v) = (self.h[p], self.hu[p] / self.h[p], self.hv[p] / self.h[p]);
                (u * u + v * v).sqrt() + (g * h).sqrt()
            })
            .fold(0.0, f64::max)
    }

    /// Interleaved `[X, Y, 3]` values.
    pub fn interleaved(&self) -> Vec<f64> {
        (0..self.h.len()).flat_map(|p| [self.h[p], self.hu[p], self.hv[p]]).collect()
    }
}

/// Rusanov-form interface flux in the x direction between states `l` and `r`.
fn flux_x(l: [f64; 3], r: [f64; 3], a: f64, g: f64) -> [f64; 3] {
    let f = |s: [f64; 3]| {
        let u = s[1] / s[0];
        [s[1], s[1] * u + 0.5 * g * s[0] * s[0], s[2] * u]
    };
    let (fl, fr) = (f(l), f(r));
    [0, 1, 2].map(|k| 0.5 * (fl[k] + fr[k]) - 0.5 * a * (r[k] - l[k]))
}

/// One Lax–Friedrichs step with reflective walls; returns the CFL number used.
pub fn shallow_water_step(state: &mut ShallowWaterState, dt: f64, g: f64) -> f64 {
    let n = state.n;
    let dx = 1.0 / n as f64;
    let a = state.max_wave_speed(g);
    let at = |s: &ShallowWaterState, i: usize, j: usize| [s.h[i * n + j], s.hu[i * n + j], s.hv[i * n + j]];
    let mut dh = vec![0.0; n * n];
    let mut dhu = vec![0.0; n * n];
    let mut dhv = vec![0.0; n * n];
    let mut apply = |p: usize, f: [f64; 3], sign: f64| {
        dh[p] += sign * f[0];
        dhu[p] += sign * f[1];
        dhv[p] += sign * f[2];
    };
    // x-direction interfaces, including the two walls
    for j in 0..n {
        for i in 0..=n {
            let (l, r) = match i {
                0 => {
                    let c = at(state, 0, j);
                    ([c[0], -c[1], c[2]], c)
                }
                _ if i == n => {
                    let c = at(state, n - 1, j);
                    (c, [c[0], -c[1], c[2]])
                }
                _ => (at(state, i - 1, j), at(state, i, j)),
            };
            let f = flux_x(l, r, a, g);
            if i > 0 {
                apply((i - 1) * n + j, f, -1.0);
            }
            if i < n {
                apply(i * n + j, f, 1.0);
            }
        }
    }
    // y-direction interfaces: swap momentum components to reuse the x flux
    for i in 0..n {
        for j in 0..=n {
            let swap = |s: [f64; 3]| [s[0], s[2], s[1]];
            let (l, r) = match j {
                0 => {
                    let c = swap(at(state, i, 0));
                    ([c[0], -c[1], c[2]], c)
                }
                _ if j == n => {
                    let c = swap(at(state, i, n - 1));
                    (c, [c[0], -c[1], c[2]])
                }
                _ => (swap(at(state, i, j - 1)), swap(at(state, i, j))),
            };
            let f = swap(flux_x(l, r, a, g));
            if j > 0 {
                apply(i * n + j - 1, f, -1.0);
            }
            if j < n {
                apply(i * n + j, f, 1.0);
            }
        }
    }
    let c = dt / dx;
    for p in 0..n * n {
        state.h[p] += c * dh[p];
        state.hu[p] += c * dhu[p];
        state.hv[p] += c * dhv[p];
    }
    a * dt * 2.0 / dx
}

pub fn simulate_droplet(p: &ShallowWaterParams, ic: DropletIc, sample: usize) -> Result<Vec<f64>, DataError> {
    let mut state = ShallowWaterState::from_depth(p.grid, |x, y| ic.depth(x, y));
    let dx = 1.0 / p.grid as f64;
    let mut out = Vec::with_capacity(p.frames * p.grid * p.grid * 3);
    let mut step = 0;
    for _ in 0..p.frames {
        for _ in 0..p.steps_per_frame.max(1) {
            let cfl = state.max_wave_speed(p.gravity) * p.dt * 2.0 / dx;
            if cfl > 1.0 {
                return Err(DataError::Cfl {
                    sample,
                    cfl,
                    h: ic.h,
                    w: ic.w,
                    xi: ic.xi,
                    zeta: ic.zeta,
                });
            }
            shallow_water_step(&mut state, p.dt, p.gravity);
            step += 1;
            if state.h.iter().any(|&h| h.is_nan() || h <= 0.0) {
                return Err(DataError::Positivity {
                    sample,
                    step,
                    h: ic.h,
                    w: ic.w,
                    xi: ic.xi,
                    zeta: ic.zeta,
                });
            }
        }
        out.extend(state.interleaved());
    }
    Ok(out)
}

/// Falling-droplet trajectories; the first stored frame is the state after one step.
pub fn gen_shallow_water(p: &ShallowWaterParams) -> Result<TrajectorySet, DataError> {
    if !p.grid.is_power_of_two() || p.dt <= 0.0 || p.frames == 0 {
        return Err(DataError::Parameter("need a power-of-two grid, dt > 0 and frames > 0".into()));
    }
    let samples: Vec<Vec<f64>> = (0..p.samples)
        .into_par_iter()
        .map(|s| {
            let mut rng = seed::rng_indexed(p.seed, "shallow-water", s as u64);
            simulate_droplet(p, DropletIc::sample(&mut rng), s)
        })
        .collect::<Result<_, _>>()?;
    let data = samples.into_iter().flatten().collect();
    let frame_dt = p.dt * p.steps_per_frame.max(1) as f64;
    let mut ts = TrajectorySet::new([p.samples, p.frames, p.grid, p.grid, 3], data, frame_dt)?;
    ts.meta.insert("equation".into(), "shallow-water-2d".into());
    ts.meta.insert("gravity".into(), p.gravity.to_string());
    ts.meta.insert("solver_dt".into(), p.dt.to_string());
    ts.meta.insert("t0".into(), p.dt.to_string());
    ts.meta.insert("seed".into(), p.seed.to_string());
    ts.meta.insert("channels".into(), "rho,rho_v1,rho_v2".into());
    Ok(ts)
}

/// Sample-level split into train/valid/test by the given fractions.
pub fn split_dataset(
    ts: &TrajectorySet,
    fractions: [f64; 3],
    seed_value: u64,
) -> Result<(TrajectorySet, TrajectorySet, TrajectorySet), DataError> {
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 || fractions.iter().any(|&f| f < 0.0) {
        return Err(DataError::Parameter(format!("split fractions {fractions:?} must be non-negative and sum to 1")));
    }
    let s = ts.samples();
    let n_train = (fractions[0] * s as f64).round() as usize;
    let n_valid = ((fractions[1] * s as f64).round() as usize).min(s - n_train.min(s));
    let n_train = n_train.min(s);
    let n_test = s - n_train - n_valid;
    for (f, n) in fractions.iter().zip([n_train, n_valid, n_test]) {
        if *f > 0.0 && n == 0 {
            return Err(DataError::EmptySplit { fraction: *f, samples: s });
        }
    }
    let mut order: Vec<usize> = (0..s).collect();
    order.shuffle(&mut seed::rng(seed_value, "split"));
    let (a, rest) = order.split_at(n_train);
    let (b, c) = rest.split_at(n_valid);
    Ok((ts.select(a), ts.select(b), ts.select(c)))
}
