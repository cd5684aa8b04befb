//! The full operator: spectral trunk features `f(u)`, a KAN token from the
//! pooled history, single-query attention over `f(u)`, and the output
//! `P_out f + P_ctx R(f, context)` mapped back to physical units.

use std::path::Path;

use thiserror::Error;

use crate::autodiff::{Tape, Var};
use crate::bspline::SplineError;
use crate::data::TrajectorySet;
use crate::gml::{AttentionVars, Gml};
use crate::kan::{pool_history, KanNet, PoolMode};
use crate::nn::{Bound, Linear, ParamStore};
use crate::seed;
use crate::skds::{Container, Dtype, SkdsError};
use crate::spectral::{Amfno, BranchSpec};
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Spline(#[from] SplineError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Container(#[from] SkdsError),
    #[error("checkpoint is malformed: {0}")]
    Checkpoint(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Physical channels of the state.
    pub channels: usize,
    /// History window ℓ_in.
    pub history: usize,
    /// Trunk width C_fno.
    pub width: usize,
    /// Attention width d_a.
    pub attn_dim: usize,
    /// Token width C_kan.
    pub token_dim: usize,
    pub layers: usize,
    pub coarse_layers: usize,
    pub modes: usize,
    pub downsample: usize,
    pub se_reduction: usize,
    /// Hidden KAN width; 0 means twice the pooled summary length.
    pub kan_hidden: usize,
    pub spline_order: usize,
    pub spline_grid: usize,
    pub coords: bool,
    pub pool: PoolMode,
    /// Predict the increment over the last history frame instead of the state.
    pub predict_delta: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            channels: 1,
            history: 2,
            width: 32,
            attn_dim: 64,
            token_dim: 32,
            layers: 4,
            coarse_layers: 4,
            modes: 12,
            downsample: 2,
            se_reduction: 4,
            kan_hidden: 0,
            spline_order: 3,
            spline_grid: 8,
            coords: true,
            pool: PoolMode::Mean,
            predict_delta: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let positive = [
            ("channels", self.channels),
            ("history", self.history),
            ("width", self.width),
            ("attn_dim", self.attn_dim),
            ("token_dim", self.token_dim),
            ("modes", self.modes),
            ("downsample", self.downsample),
            ("se_reduction", self.se_reduction),
            ("spline_order", self.spline_order),
            ("spline_grid", self.spline_grid),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(ModelError::Config(format!("{name} must be positive")));
        }
        if self.width % self.se_reduction != 0 {
            return Err(ModelError::Config(format!(
                "width {} is not divisible by se_reduction {}",
                self.width, self.se_reduction
            )));
        }
        Ok(())
    }

    pub fn summary_dim(&self) -> usize {
        self.history * self.channels
    }

    fn lift_inputs(&self) -> usize {
        self.summary_dim() + if self.coords { 2 } else { 0 }
    }

    /// `key=value` pairs describing this configuration.
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("channels", self.channels.to_string()),
            ("history", self.history.to_string()),
            ("width", self.width.to_string()),
            ("attn_dim", self.attn_dim.to_string()),
            ("token_dim", self.token_dim.to_string()),
            ("layers", self.layers.to_string()),
            ("coarse_layers", self.coarse_layers.to_string()),
            ("modes", self.modes.to_string()),
            ("downsample", self.downsample.to_string()),
            ("se_reduction", self.se_reduction.to_string()),
            ("kan_hidden", self.kan_hidden.to_string()),
            ("spline_order", self.spline_order.to_string()),
            ("spline_grid", self.spline_grid.to_string()),
            ("coords", self.coords.to_string()),
            ("pool", self.pool.to_string()),
            ("predict_delta", self.predict_delta.to_string()),
        ]
    }

    /// Applies one `key=value` pair; returns an error message for unknown keys or bad values.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        fn num(key: &str, v: &str) -> Result<usize, String> {
            v.parse().map_err(|_| format!("{key}: expected a non-negative integer, got '{v}'"))
        }
        fn flag(key: &str, v: &str) -> Result<bool, String> {
            v.parse().map_err(|_| format!("{key}: expected true or false, got '{v}'"))
        }
        match key {
            "channels" => self.channels = num(key, value)?,
            "history" => self.history = num(key, value)?,
            "width" => self.width = num(key, value)?,
            "attn_dim" => self.attn_dim = num(key, value)?,
            "token_dim" => self.token_dim = num(key, value)?,
            "layers" => self.layers = num(key, value)?,
            "coarse_layers" => self.coarse_layers = num(key, value)?,
            "modes" => self.modes = num(key, value)?,
            "downsample" => self.downsample = num(key, value)?,
            "se_reduction" => self.se_reduction = num(key, value)?,
            "kan_hidden" => self.kan_hidden = num(key, value)?,
            "spline_order" => self.spline_order = num(key, value)?,
            "spline_grid" => self.spline_grid = num(key, value)?,
            "coords" => self.coords = flag(key, value)?,
            "pool" => self.pool = value.parse()?,
            "predict_delta" => self.predict_delta = flag(key, value)?,
            _ => return Err(format!("unknown key '{key}'")),
        }
        Ok(())
    }
}

/// Per-channel affine statistics for inputs and targets.
#[derive(Clone, Debug, PartialEq)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Scale of the predicted quantity (state or increment) per channel.
    pub target_std: Vec<f64>,
}

impl Normalization {
    pub fn identity(channels: usize) -> Self {
        Normalization {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
            target_std: vec![1.0; channels],
        }
    }
}

#[derive(Clone, Debug)]
pub struct SpectraKan {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub trunk: Amfno,
    pub kan: KanNet,
    pub gml: Gml,
    pub out_proj: Linear,
    pub ctx_proj: Linear,
    pub norm: Normalization,
}

/// Tape variables produced by one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct Forward {
    /// Prediction in physical units, `[X, Y, C]`.
    pub prediction: Var,
    /// Raw network output in normalized units, `[X·Y, C]`.
    pub output: Var,
    /// Trunk features `[X·Y, C_fno]`.
    pub features: Var,
    pub token: Var,
    pub attention: AttentionVars,
}

fn std_of(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count().max(1) as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn positive(std: f64) -> f64 {
    if std > 1e-12 {
        std
    } else {
        1.0
    }
}

impl SpectraKan {
    pub fn new(config: ModelConfig, root_seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = seed::rng(root_seed, "model-init");
        let mut params = ParamStore::new();
        let fine = BranchSpec {
            in_channels: config.lift_inputs(),
            width: config.width,
            depth: config.layers,
            modes: config.modes,
            reduction: config.se_reduction,
        };
        let coarse = BranchSpec {
            depth: config.coarse_layers,
            ..fine
        };
        let trunk = Amfno::new(&mut params, &mut rng, &fine, &coarse, config.downsample);
        let d0 = config.summary_dim();
        let hidden = if config.kan_hidden == 0 { 2 * d0 } else { config.kan_hidden };
        let kan = KanNet::new(
            &mut params,
            &mut rng,
            &[d0, hidden, config.token_dim],
            config.spline_grid,
            config.spline_order,
        )?;
        let gml = Gml::new(&mut params, &mut rng, config.token_dim, config.width, config.attn_dim);
        let out_proj = Linear::new(&mut params, &mut rng, "head.out", config.width, config.channels, true);
        let ctx_proj = Linear::new(&mut params, &mut rng, "head.ctx", config.width, config.channels, true);
        let norm = Normalization::identity(config.channels);
        Ok(SpectraKan {
            config,
            params,
            trunk,
            kan,
            gml,
            out_proj,
            ctx_proj,
            norm,
        })
    }

    /// Fits channel statistics and the KAN input range to a training set.
    pub fn fit_normalization(&mut self, data: &TrajectorySet) {
        let c = self.config.channels;
        let ell = self.config.history;
        let values = data.data();
        let mut mean = vec![0.0; c];
        let mut std = vec![1.0; c];
        let mut target_std = vec![1.0; c];
        for ch in 0..c {
            let (m, s) = std_of(values.iter().skip(ch).step_by(c).copied());
            mean[ch] = m;
            std[ch] = positive(s);
            target_std[ch] = std[ch];
        }
        if self.config.predict_delta && data.frames() > 1 {
            for (ch, ts) in target_std.iter_mut().enumerate() {
                let deltas = (0..data.samples()).flat_map(|s| {
                    (1..data.frames()).flat_map(move |t| {
                        let (a, b) = (data.frame(s, t - 1), data.frame(s, t));
                        (ch..a.len()).step_by(c).map(move |p| b[p] - a[p])
                    })
                });
                let (m, s) = std_of(deltas);
                *ts = positive((s * s + m * m).sqrt());
            }
        }
        self.norm = Normalization { mean, std, target_std };

        let d0 = self.config.summary_dim();
        let mut lo = vec![f64::INFINITY; d0];
        let mut hi = vec![f64::NEG_INFINITY; d0];
        if data.frames() >= ell {
            for s in 0..data.samples() {
                for end in ell..=data.frames() {
                    let z = self.summary(&data.history(s, end, ell));
                    for i in 0..d0 {
                        lo[i] = lo[i].min(z[i]);
                        hi[i] = hi[i].max(z[i]);
                    }
                }
            }
        }
        if lo.iter().all(|v| v.is_finite()) {
            self.kan.fit_input_range(&lo, &hi);
        }
    }

    /// History in normalized units.
    pub fn normalize_history(&self, history: &Tensor) -> Tensor {
        let c = self.config.channels;
        let mut out = history.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            let ch = i % c;
            *v = (*v - self.norm.mean[ch]) / self.norm.std[ch];
        }
        out
    }

    /// Pooled summary `z` of a physical-unit history.
    pub fn summary(&self, history: &Tensor) -> Vec<f64> {
        let mut tape = Tape::new();
        let h = tape.leaf(self.normalize_history(history));
        let z = pool_history(&mut tape, h, self.config.pool).expect("history shape checked by caller");
        tape.value(z).data().to_vec()
    }

    fn coordinates(&self, x: usize, y: usize) -> Tensor {
        let mut data = Vec::with_capacity(x * y * 2);
        for i in 0..x {
            for j in 0..y {
                data.push(i as f64 / x as f64);
                data.push(if y == 1 { 0.0 } else { j as f64 / y as f64 });
            }
        }
        Tensor::new(vec![x, y, 2], data).expect("coordinate shape")
    }

    pub fn check_history(&self, history: &Tensor) -> Result<(), ModelError> {
        let s = history.shape();
        if s.len() != 3 || s[2] != self.config.summary_dim() {
            return Err(ModelError::Tensor(TensorError::mismatch(
                "spectrakan_forward",
                s,
                &[0, 0, self.config.summary_dim()],
            )));
        }
        self.trunk.check_grid(s[0], s[1])?;
        Ok(())
    }

    /// Forward pass on a physical-unit history `[X, Y, ℓ·C]` (oldest frame first).
    pub fn forward(&self, tape: &mut Tape, bound: &Bound, history: &Tensor) -> Result<Forward, ModelError> {
        self.check_history(history)?;
        let (x, y, c) = (history.shape()[0], history.shape()[1], self.config.channels);
        let n = x * y;
        let normalized = tape.leaf(self.normalize_history(history));
        let input = if self.config.coords {
            let coords = tape.leaf(self.coordinates(x, y));
            tape.concat(&[normalized, coords], 2)?
        } else {
            normalized
        };
        let f = self.trunk.apply(tape, bound, input)?;
        let features = tape.reshape(f, &[n, self.config.width])?;
        let z = pool_history(tape, normalized, self.config.pool)?;
        let token = self.kan.apply(tape, bound, z)?;
        let attention = self.gml.attention(tape, bound, token, features)?;
        let fused = self.gml.fuse(tape, bound, features, attention.context)?;
        let direct = self.out_proj.apply(tape, bound, features)?;
        let ctx = self.ctx_proj.apply(tape, bound, fused)?;
        let output = tape.add(direct, ctx)?;

        let scale = tape.leaf(Tensor::new(vec![1, c], self.norm.target_std.clone())?);
        let scaled = tape.mul(output, scale)?;
        let base = if self.config.predict_delta {
            let last: Vec<f64> = history
                .data()
                .chunks(self.config.summary_dim())
                .flat_map(|p| p[p.len() - c..].to_vec())
                .collect();
            Tensor::new(vec![n, c], last)?
        } else {
            Tensor::new(vec![1, c], self.norm.mean.clone())?
        };
        let base = tape.leaf(base);
        let pred = tape.add(scaled, base)?;
        let prediction = tape.reshape(pred, &[x, y, c])?;
        Ok(Forward {
            prediction,
            output,
            features,
            token,
            attention,
        })
    }

    /// Network target in normalized units for a physical next state, `[X·Y, C]`.
    pub fn normalized_target(&self, history: &Tensor, next: &[f64]) -> Tensor {
        let c = self.config.channels;
        let n = next.len() / c;
        let data: Vec<f64> = if self.config.predict_delta {
            let last: Vec<f64> = history
                .data()
                .chunks(self.config.summary_dim())
                .flat_map(|p| p[p.len() - c..].to_vec())
                .collect();
            next.iter()
                .zip(&last)
                .enumerate()
                .map(|(i, (v, l))| (v - l) / self.norm.target_std[i % c])
                .collect()
        } else {
            next.iter()
                .enumerate()
                .map(|(i, v)| (v - self.norm.mean[i % c]) / self.norm.target_std[i % c])
                .collect()
        };
        Tensor::new(vec![n, c], data).expect("target shape")
    }

    /// One-step prediction in physical units.
    pub fn predict(&self, history: &Tensor) -> Result<Tensor, ModelError> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let fwd = self.forward(&mut tape, &bound, history)?;
        Ok(tape.value(fwd.prediction).clone())
    }

    pub fn to_container(&self) -> Container {
        let flat = self.params.flatten();
        let mut c = Container::new(Dtype::F64, vec![flat.len()], flat).expect("flat parameters");
        c.push_meta("kind", "spectrakan-checkpoint");
        for (k, v) in self.config.to_pairs() {
            c.push_meta(format!("config.{k}"), v);
        }
        let mut offset = 0;
        for (_, name, t) in self.params.iter() {
            let len = t.data().len();
            let shape: Vec<String> = t.shape().iter().map(|e| e.to_string()).collect();
            let kind = if t.is_complex() { "c" } else { "r" };
            c.push_meta(format!("param.{name}"), format!("{offset}:{len}:{}:{kind}", shape.join("x")));
            offset += len;
        }
        let join = |v: &[f64]| v.iter().map(|x| format!("{x:e}")).collect::<Vec<_>>().join(",");
        c.push_meta("norm.mean", join(&self.norm.mean));
        c.push_meta("norm.std", join(&self.norm.std));
        c.push_meta("norm.target_std", join(&self.norm.target_std));
        c.push_meta("kan.scale", join(&self.kan.scale));
        c.push_meta("kan.shift", join(&self.kan.shift));
        c
    }

    pub fn from_container(c: &Container) -> Result<Self, ModelError> {
        if c.meta("kind") != Some("spectrakan-checkpoint") || c.shape.len() != 1 {
            return Err(ModelError::Checkpoint("not a model checkpoint".into()));
        }
        let mut config = ModelConfig::default();
        for (k, v) in &c.meta {
            if let Some(key) = k.strip_prefix("config.") {
                config.set(key, v).map_err(ModelError::Checkpoint)?;
            }
        }
        let mut model = SpectraKan::new(config, 0)?;
        for (_, name, t) in model.params.iter() {
            let spec = c
                .meta(&format!("param.{name}"))
                .ok_or_else(|| ModelError::Checkpoint(format!("missing parameter {name}")))?;
            let parts: Vec<&str> = spec.split(':').collect();
            let expected_shape: Vec<String> = t.shape().iter().map(|e| e.to_string()).collect();
            if parts.len() != 4 || parts[1] != t.data().len().to_string() || parts[2] != expected_shape.join("x") {
                return Err(ModelError::Checkpoint(format!("parameter {name} has layout {spec}")));
            }
        }
        if c.data.len() != model.params.num_scalars() {
            return Err(ModelError::Checkpoint("parameter payload length".into()));
        }
        model.params.load_flat(&c.data);
        let parse = |key: &str, len: usize| -> Result<Vec<f64>, ModelError> {
            let v: Vec<f64> = c
                .meta(key)
                .ok_or_else(|| ModelError::Checkpoint(format!("missing {key}")))?
                .split(',')
                .map(|s| s.parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|_| ModelError::Checkpoint(format!("bad number in {key}")))?;
            if v.len() != len {
                return Err(ModelError::Checkpoint(format!("{key} has {} entries, expected {len}", v.len())));
            }
            Ok(v)
        };
        let ch = model.config.channels;
        model.norm = Normalization {
            mean: parse("norm.mean", ch)?,
            std: parse("norm.std", ch)?,
            target_std: parse("norm.target_std", ch)?,
        };
        let d0 = model.config.summary_dim();
        model.kan.scale = parse("kan.scale", d0)?;
        model.kan.shift = parse("kan.shift", d0)?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        Ok(self.to_container().write(path)?)
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        SpectraKan::from_container(&Container::read(path)?)
    }
}
