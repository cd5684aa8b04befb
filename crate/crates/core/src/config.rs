//! Plain-text run configuration.
//!
//! ```text
//! seed = 7
//! [model]
//! width = 32
//! [data]
//! kind = diffusion_reaction
//! ```
//!
//! `#` starts a comment. Keys before the first section header belong to the
//! run itself (only `seed`). Unknown sections and keys are errors.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::data::{DiffusionReactionParams, ShallowWaterParams};
use crate::model::ModelConfig;
use crate::seed;
use crate::skds::Dtype;
use crate::train::TrainConfig;
use crate::verify::VerifySettings;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("override '{0}': {1}")]
    Override(String, String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DataKind {
    DiffusionReaction,
    ShallowWater,
}

impl std::str::FromStr for DataKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "diffusion_reaction" => Ok(DataKind::DiffusionReaction),
            "shallow_water" => Ok(DataKind::ShallowWater),
            other => Err(format!("unknown data kind '{other}' (expected diffusion_reaction or shallow_water)")),
        }
    }
}

impl std::fmt::Display for DataKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DataKind::DiffusionReaction => "diffusion_reaction",
            DataKind::ShallowWater => "shallow_water",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    pub kind: DataKind,
    pub grid: usize,
    pub frames: usize,
    pub samples: usize,
    pub nu: f64,
    pub rho: f64,
    pub frame_dt: f64,
    pub ic_modes: usize,
    pub dt: f64,
    pub steps_per_frame: usize,
    pub gravity: f64,
    pub split: [f64; 3],
    pub dtype: Dtype,
}

impl Default for DataConfig {
    fn default() -> Self {
        let dr = DiffusionReactionParams::default();
        let sw = ShallowWaterParams::default();
        DataConfig {
            kind: DataKind::DiffusionReaction,
            grid: dr.grid,
            frames: dr.frames,
            samples: dr.samples,
            nu: dr.nu,
            rho: dr.rho,
            frame_dt: dr.frame_dt,
            ic_modes: dr.ic_modes,
            dt: sw.dt,
            steps_per_frame: sw.steps_per_frame,
            gravity: sw.gravity,
            split: [0.8, 0.1, 0.1],
            dtype: Dtype::F64,
        }
    }
}

impl DataConfig {
    pub fn diffusion_reaction(&self, seed_value: u64) -> DiffusionReactionParams {
        DiffusionReactionParams {
            nu: self.nu,
            rho: self.rho,
            grid: self.grid,
            frames: self.frames,
            frame_dt: self.frame_dt,
            samples: self.samples,
            ic_modes: self.ic_modes,
            seed: seed_value,
        }
    }

    pub fn shallow_water(&self, seed_value: u64) -> ShallowWaterParams {
        ShallowWaterParams {
            grid: self.grid,
            dt: self.dt,
            frames: self.frames,
            steps_per_frame: self.steps_per_frame,
            samples: self.samples,
            gravity: self.gravity,
            seed: seed_value,
        }
    }

    /// Channels produced by the configured generator.
    pub fn channels(&self) -> usize {
        match self.kind {
            DataKind::DiffusionReaction => 1,
            DataKind::ShallowWater => 3,
        }
    }

    fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("kind", self.kind.to_string()),
            ("grid", self.grid.to_string()),
            ("frames", self.frames.to_string()),
            ("samples", self.samples.to_string()),
            ("nu", self.nu.to_string()),
            ("rho", self.rho.to_string()),
            ("frame_dt", self.frame_dt.to_string()),
            ("ic_modes", self.ic_modes.to_string()),
            ("dt", self.dt.to_string()),
            ("steps_per_frame", self.steps_per_frame.to_string()),
            ("gravity", self.gravity.to_string()),
            ("train_fraction", self.split[0].to_string()),
            ("valid_fraction", self.split[1].to_string()),
            ("test_fraction", self.split[2].to_string()),
            ("dtype", dtype_name(self.dtype).into()),
        ]
    }

    fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        match key {
            "kind" => self.kind = value.parse()?,
            "grid" => self.grid = parse_count(key, value)?,
            "frames" => self.frames = parse_count(key, value)?,
            "samples" => self.samples = parse_count(key, value)?,
            "nu" => self.nu = parse_real(key, value)?,
            "rho" => self.rho = parse_real(key, value)?,
            "frame_dt" => self.frame_dt = parse_real(key, value)?,
            "ic_modes" => self.ic_modes = parse_count(key, value)?,
            "dt" => self.dt = parse_real(key, value)?,
            "steps_per_frame" => self.steps_per_frame = parse_count(key, value)?,
            "gravity" => self.gravity = parse_real(key, value)?,
            "train_fraction" => self.split[0] = parse_real(key, value)?,
            "valid_fraction" => self.split[1] = parse_real(key, value)?,
            "test_fraction" => self.split[2] = parse_real(key, value)?,
            "dtype" => {
                self.dtype = match value {
                    "f32" => Dtype::F32,
                    "f64" => Dtype::F64,
                    _ => return Err(format!("dtype: expected f32 or f64, got '{value}'")),
                }
            }
            _ => return Err(format!("unknown key '{key}'")),
        }
        Ok(())
    }
}

fn dtype_name(d: Dtype) -> &'static str {
    match d {
        Dtype::F32 => "f32",
        Dtype::F64 => "f64",
    }
}

fn parse_count(key: &str, v: &str) -> Result<usize, String> {
    v.parse().map_err(|_| format!("{key}: expected a non-negative integer, got '{v}'"))
}

fn parse_real(key: &str, v: &str) -> Result<f64, String> {
    v.parse::<f64>()
        .ok()
        .filter(|x| x.is_finite())
        .ok_or_else(|| format!("{key}: expected a finite number, got '{v}'"))
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalConfig {
    /// Autoregressive rollout length.
    pub horizon: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { horizon: 10 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelConfig,
    pub data: DataConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub verify: VerifySettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            model: ModelConfig::default(),
            data: DataConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            verify: VerifySettings::default(),
        }
    }
}

pub const SECTIONS: [&str; 5] = ["model", "data", "train", "eval", "verify"];

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = RunConfig::default();
        let mut section: Option<String> = None;
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            if let Some(rest) = content.strip_prefix('[') {
                let name = rest.strip_suffix(']').ok_or_else(|| ConfigError::Syntax {
                    line,
                    msg: format!("unterminated section header '{content}'"),
                })?;
                let name = name.trim();
                if !SECTIONS.contains(&name) {
                    return Err(ConfigError::Syntax {
                        line,
                        msg: format!("unknown section '{name}'"),
                    });
                }
                section = Some(name.to_string());
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line,
                msg: format!("expected key = value, got '{content}'"),
            })?;
            cfg.set(section.as_deref(), key.trim(), value.trim())
                .map_err(|msg| ConfigError::Syntax { line, msg })?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        RunConfig::parse(&text)
    }

    /// Sets one key; `section` is `None` for run-level keys.
    pub fn set(&mut self, section: Option<&str>, key: &str, value: &str) -> Result<(), String> {
        let r = match section {
            None => match key {
                "seed" => {
                    self.seed = value.parse().map_err(|_| format!("seed: expected an unsigned integer, got '{value}'"))?;
                    Ok(())
                }
                _ => Err(format!("unknown key '{key}' outside a section")),
            },
            Some("model") => self.model.set(key, value),
            Some("data") => self.data.set(key, value),
            Some("train") => self.train.set(key, value),
            Some("eval") => match key {
                "horizon" => parse_count(key, value).map(|h| self.eval.horizon = h),
                _ => Err(format!("unknown key '{key}'")),
            },
            Some("verify") => self.verify.set(key, value),
            Some(other) => Err(format!("unknown section '{other}'")),
        };
        r.map_err(|m| match section {
            Some(s) => format!("[{s}] {m}"),
            None => m,
        })
    }

    /// Applies a `section.key=value` (or `seed=value`) override.
    pub fn apply_override(&mut self, spec: &str) -> Result<(), ConfigError> {
        let fail = |m: String| ConfigError::Override(spec.to_string(), m);
        let (path, value) = spec.split_once('=').ok_or_else(|| fail("expected section.key=value".into()))?;
        let (section, key) = match path.trim().split_once('.') {
            Some((s, k)) => (Some(s), k),
            None => (None, path.trim()),
        };
        self.set(section, key.trim(), value.trim()).map_err(fail)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("seed = {}\n", self.seed);
        let sections: [(&str, Vec<(&str, String)>); 5] = [
            ("model", self.model.to_pairs()),
            ("data", self.data.to_pairs()),
            ("train", self.train.to_pairs()),
            ("eval", vec![("horizon", self.eval.horizon.to_string())]),
            ("verify", self.verify.to_pairs()),
        ];
        for (name, pairs) in sections {
            let _ = writeln!(out, "\n[{name}]");
            for (k, v) in pairs {
                let _ = writeln!(out, "{k} = {v}");
            }
        }
        out
    }

    pub fn data_seed(&self) -> u64 {
        seed::derive(self.seed, "data")
    }

    pub fn split_seed(&self) -> u64 {
        seed::derive(self.seed, "split")
    }

    pub fn model_seed(&self) -> u64 {
        seed::derive(self.seed, "model")
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: seed::derive(self.seed, "train"),
            ..self.train.clone()
        }
    }

    pub fn verify_settings(&self) -> VerifySettings {
        VerifySettings {
            seed: seed::derive(self.seed, "verify"),
            ..self.verify.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn edited_config_round_trips() {
        let text = "seed = 9 # root\n[model]\nwidth = 8\npool = center\n[data]\nkind = shallow_water\nnu = 0.125\n[train]\nlearning_rate = 3e-4\n";
        let cfg = RunConfig::parse(text).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.model.width, 8);
        assert_eq!(cfg.data.kind, DataKind::ShallowWater);
        assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let err = RunConfig::parse("[model]\nwidth = 4\nbogus = 1\n").unwrap_err();
        assert!(matches!(err, ConfigError::Syntax { line: 3, .. }), "{err}");
        let err = RunConfig::parse("\n[nope]\n").unwrap_err();
        assert!(matches!(err, ConfigError::Syntax { line: 2, .. }));
        let err = RunConfig::parse("[train]\nepochs = many\n").unwrap_err();
        assert!(matches!(err, ConfigError::Syntax { line: 2, .. }));
        let err = RunConfig::parse("[data]\njust text\n").unwrap_err();
        assert!(matches!(err, ConfigError::Syntax { line: 2, .. }));
    }

    #[test]
    fn overrides_take_precedence() {
        let mut cfg = RunConfig::parse("[model]\nwidth = 4\n").unwrap();
        cfg.apply_override("model.width=12").unwrap();
        cfg.apply_override("seed=3").unwrap();
        assert_eq!((cfg.model.width, cfg.seed), (12, 3));
        assert!(cfg.apply_override("model.nothing=1").is_err());
        assert!(cfg.apply_override("width").is_err());
    }

    #[test]
    fn subsystem_seeds_differ() {
        let cfg = RunConfig::default();
        let seeds = [cfg.data_seed(), cfg.split_seed(), cfg.model_seed(), cfg.train_config().seed];
        for i in 0..seeds.len() {
            for j in i + 1..seeds.len() {
                assert_ne!(seeds[i], seeds[j]);
            }
        }
    }
}
