//! One-step teacher-forced training with Adam, and autoregressive rollout.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use thiserror::Error;

use crate::autodiff::Tape;
use crate::data::{stack_frames, TrajectorySet};
use crate::model::{ModelError, SpectraKan};
use crate::seed;
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("training data has {frames} frames; the history window needs at least {needed}")]
    TooFewFrames { frames: usize, needed: usize },
    #[error("data grid/channels {got:?} do not match the model ({expected})")]
    Incompatible { got: [usize; 5], expected: String },
    #[error("non-finite loss at epoch {epoch}; parameters reverted to the last finite state")]
    NonFinite { epoch: usize, last_good: Box<SpectraKan> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Final learning rate of the cosine schedule.
    pub min_learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub grad_clip: f64,
    /// Epochs without validation improvement before stopping; 0 disables.
    pub patience: usize,
    /// Windows drawn per trajectory each epoch; 0 uses every window.
    pub windows_per_trajectory: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 16,
            learning_rate: 2e-3,
            min_learning_rate: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            grad_clip: 1.0,
            patience: 10,
            windows_per_trajectory: 4,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("epochs", self.epochs.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("learning_rate", self.learning_rate.to_string()),
            ("min_learning_rate", self.min_learning_rate.to_string()),
            ("beta1", self.beta1.to_string()),
            ("beta2", self.beta2.to_string()),
            ("epsilon", self.epsilon.to_string()),
            ("grad_clip", self.grad_clip.to_string()),
            ("patience", self.patience.to_string()),
            ("windows_per_trajectory", self.windows_per_trajectory.to_string()),
        ]
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        fn int(key: &str, v: &str) -> Result<usize, String> {
            v.parse().map_err(|_| format!("{key}: expected a non-negative integer, got '{v}'"))
        }
        fn real(key: &str, v: &str) -> Result<f64, String> {
            v.parse::<f64>()
                .ok()
                .filter(|x| x.is_finite() && *x >= 0.0)
                .ok_or_else(|| format!("{key}: expected a non-negative number, got '{v}'"))
        }
        match key {
            "epochs" => self.epochs = int(key, value)?,
            "batch_size" => self.batch_size = int(key, value)?.max(1),
            "learning_rate" => self.learning_rate = real(key, value)?,
            "min_learning_rate" => self.min_learning_rate = real(key, value)?,
            "beta1" => self.beta1 = real(key, value)?,
            "beta2" => self.beta2 = real(key, value)?,
            "epsilon" => self.epsilon = real(key, value)?,
            "grad_clip" => self.grad_clip = real(key, value)?,
            "patience" => self.patience = int(key, value)?,
            "windows_per_trajectory" => self.windows_per_trajectory = int(key, value)?,
            _ => return Err(format!("unknown key '{key}'")),
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub learning_rate: f64,
    pub train_loss: f64,
    pub valid_loss: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: SpectraKan,
    pub curve: Vec<EpochRecord>,
    pub stopped_early: bool,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64, cfg: &TrainConfig) {
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t);
        let bc2 = 1.0 - cfg.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * grad[i];
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
            let mh = self.m[i] / bc1;
            let vh = self.v[i] / bc2;
            params[i] -= lr * mh / (vh.sqrt() + cfg.epsilon);
        }
    }
}

pub fn cosine_learning_rate(cfg: &TrainConfig, step: usize, total: usize) -> f64 {
    if total <= 1 {
        return cfg.learning_rate;
    }
    let frac = step as f64 / (total - 1) as f64;
    let lo = cfg.min_learning_rate.min(cfg.learning_rate);
    lo + 0.5 * (cfg.learning_rate - lo) * (1.0 + (std::f64::consts::PI * frac).cos())
}

/// `(sample, target frame)` pairs with a full history before the target.
pub fn windows(data: &TrajectorySet, ell: usize) -> Vec<(usize, usize)> {
    (0..data.samples())
        .flat_map(|s| (ell..data.frames()).map(move |t| (s, t)))
        .collect()
}

/// Normalized one-step MSE and its flat parameter gradient for one window.
pub fn window_loss_and_grad(model: &SpectraKan, data: &TrajectorySet, s: usize, t: usize) -> Result<(f64, Vec<f64>), ModelError> {
    let ell = model.config.history;
    let history = data.history(s, t, ell);
    let target = model.normalized_target(&history, data.frame(s, t));
    let mut tape = Tape::new();
    let bound = model.params.bind(&mut tape);
    let fwd = model.forward(&mut tape, &bound, &history)?;
    let tv = tape.leaf(target);
    let diff = tape.sub(fwd.output, tv)?;
    let sq = tape.mul(diff, diff)?;
    let total = tape.sum(sq)?;
    let n = tape.value(diff).numel() as f64;
    let loss = tape.scale(total, 1.0 / n)?;
    let grads = tape.backward(loss)?;
    Ok((tape.value(loss).item(), model.params.flat_gradient(&grads, &bound)))
}

/// Normalized one-step MSE for one window, without gradients.
pub fn window_loss(model: &SpectraKan, data: &TrajectorySet, s: usize, t: usize) -> Result<f64, ModelError> {
    let ell = model.config.history;
    let history = data.history(s, t, ell);
    let target = model.normalized_target(&history, data.frame(s, t));
    let mut tape = Tape::new();
    let bound = model.params.bind(&mut tape);
    let fwd = model.forward(&mut tape, &bound, &history)?;
    let out = tape.value(fwd.output);
    let n = out.numel() as f64;
    Ok(out.data().iter().zip(target.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n)
}

/// Central differences of [`window_loss`] along the flat parameter
/// coordinates `coords`, using the forward pass only.
pub fn finite_difference_gradient(
    model: &SpectraKan,
    data: &TrajectorySet,
    (s, t): (usize, usize),
    step: f64,
    coords: &[usize],
) -> Result<Vec<f64>, ModelError> {
    let base = model.params.flatten();
    coords
        .par_iter()
        .map(|&i| {
            let mut probe = model.clone();
            let mut flat = base.clone();
            flat[i] = base[i] + step;
            probe.params.load_flat(&flat);
            let up = window_loss(&probe, data, s, t)?;
            flat[i] = base[i] - step;
            probe.params.load_flat(&flat);
            let down = window_loss(&probe, data, s, t)?;
            Ok((up - down) / (2.0 * step))
        })
        .collect()
}

pub fn mean_loss(model: &SpectraKan, data: &TrajectorySet, windows: &[(usize, usize)]) -> Result<f64, ModelError> {
    let losses: Vec<f64> = windows
        .par_iter()
        .map(|&(s, t)| window_loss(model, data, s, t))
        .collect::<Result<_, _>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len().max(1) as f64)
}

fn check_compatible(model: &SpectraKan, data: &TrajectorySet) -> Result<(), TrainError> {
    let ell = model.config.history;
    if data.frames() < ell + 1 {
        return Err(TrainError::TooFewFrames {
            frames: data.frames(),
            needed: ell + 1,
        });
    }
    let (x, y) = data.grid();
    if data.channels() != model.config.channels || model.trunk.check_grid(x, y).is_err() {
        return Err(TrainError::Incompatible {
            got: data.shape(),
            expected: format!("{} channels, grid divisible by {}", model.config.channels, model.config.downsample),
        });
    }
    Ok(())
}

/// Trains on `train`, tracking validation loss for early stopping; the
/// returned model carries the parameters with the best validation loss.
pub fn train(
    mut model: SpectraKan,
    train_set: &TrajectorySet,
    valid_set: Option<&TrajectorySet>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    check_compatible(&model, train_set)?;
    if let Some(v) = valid_set {
        check_compatible(&model, v)?;
    }
    let ell = model.config.history;
    let all = windows(train_set, ell);
    let valid_windows = valid_set.map(|v| windows(v, ell)).unwrap_or_default();
    let per_epoch = if cfg.windows_per_trajectory == 0 {
        all.len()
    } else {
        (cfg.windows_per_trajectory * train_set.samples()).min(all.len())
    };
    let batch = cfg.batch_size.max(1);
    let steps_per_epoch = per_epoch.div_ceil(batch);
    let total_steps = steps_per_epoch * cfg.epochs;
    let mut rng = seed::rng(cfg.seed, "train-order");
    let mut adam = Adam::new(model.params.num_scalars());
    let mut flat = model.params.flatten();
    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut since_best = 0;
    let mut stopped_early = false;
    let mut step = 0;

    for epoch in 0..cfg.epochs {
        let mut order = all.clone();
        order.shuffle(&mut rng);
        order.truncate(per_epoch);
        let last_good = flat.clone();
        let mut epoch_loss = 0.0;
        let mut lr = cfg.learning_rate;
        for chunk in order.chunks(batch) {
            let results: Vec<(f64, Vec<f64>)> = chunk
                .par_iter()
                .map(|&(s, t)| window_loss_and_grad(&model, train_set, s, t))
                .collect::<Result<_, _>>()?;
            let mut grad = vec![0.0; flat.len()];
            let mut batch_loss = 0.0;
            for (loss, g) in &results {
                batch_loss += loss;
                grad.iter_mut().zip(g).for_each(|(a, b)| *a += b);
            }
            let inv = 1.0 / results.len() as f64;
            grad.iter_mut().for_each(|g| *g *= inv);
            batch_loss *= inv;
            if !batch_loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                model.params.load_flat(&last_good);
                return Err(TrainError::NonFinite {
                    epoch,
                    last_good: Box::new(model),
                });
            }
            if cfg.grad_clip > 0.0 {
                let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
                if norm > cfg.grad_clip {
                    let s = cfg.grad_clip / norm;
                    grad.iter_mut().for_each(|g| *g *= s);
                }
            }
            lr = cosine_learning_rate(cfg, step, total_steps);
            adam.step(&mut flat, &grad, lr, cfg);
            model.params.load_flat(&flat);
            epoch_loss += batch_loss * results.len() as f64;
            step += 1;
        }
        let train_loss = epoch_loss / order.len().max(1) as f64;
        let valid_loss = if valid_windows.is_empty() {
            None
        } else {
            Some(mean_loss(&model, valid_set.expect("windows imply a set"), &valid_windows)?)
        };
        log::info!(
            "epoch {epoch}: train {train_loss:.6e} valid {} lr {lr:.3e}",
            valid_loss.map_or("-".to_string(), |v| format!("{v:.6e}"))
        );
        curve.push(EpochRecord {
            epoch,
            learning_rate: lr,
            train_loss,
            valid_loss,
        });
        if let Some(v) = valid_loss {
            if best.as_ref().is_none_or(|(b, _)| v < *b) {
                best = Some((v, flat.clone()));
                since_best = 0;
            } else {
                since_best += 1;
                if cfg.patience > 0 && since_best >= cfg.patience {
                    stopped_early = true;
                    break;
                }
            }
        }
    }
    if let Some((_, params)) = best {
        model.params.load_flat(&params);
    }
    Ok(TrainOutcome {
        model,
        curve,
        stopped_early,
    })
}

#[derive(Clone, Debug)]
pub struct Rollout {
    /// Predicted frames `[X, Y, C]`, one per completed step.
    pub frames: Vec<Tensor>,
    /// Reason the rollout stopped before the requested length.
    pub truncated: Option<String>,
}

/// Anything that maps a history `[X, Y, ℓ·C]` to the next state `[X, Y, C]`.
pub trait Stepper {
    fn history_len(&self) -> usize;
    fn step(&self, history: &Tensor) -> Result<Tensor, ModelError>;
}

impl Stepper for SpectraKan {
    fn history_len(&self) -> usize {
        self.config.history
    }

    fn step(&self, history: &Tensor) -> Result<Tensor, ModelError> {
        self.predict(history)
    }
}

/// Predicts `u_{t+1} = u_t`.
pub struct Persistence {
    pub history: usize,
    pub channels: usize,
}

impl Stepper for Persistence {
    fn history_len(&self) -> usize {
        self.history
    }

    fn step(&self, history: &Tensor) -> Result<Tensor, ModelError> {
        let s = history.shape();
        let width = s[2];
        let data = history
            .data()
            .chunks(width)
            .flat_map(|p| p[width - self.channels..].to_vec())
            .collect();
        Ok(Tensor::new(vec![s[0], s[1], self.channels], data).expect("persistence shape"))
    }
}

/// Feeds predictions back through a sliding window for `steps` steps.
pub fn rollout(stepper: &dyn Stepper, warmup: &[Tensor], steps: usize) -> Result<Rollout, ModelError> {
    let ell = stepper.history_len();
    if warmup.len() < ell {
        return Err(ModelError::Config(format!("rollout needs {ell} warmup frames, got {}", warmup.len())));
    }
    let shape = warmup[0].shape().to_vec();
    let mut window: Vec<Tensor> = warmup[warmup.len() - ell..].to_vec();
    let mut frames = Vec::with_capacity(steps);
    for step in 0..steps {
        let refs: Vec<&[f64]> = window.iter().map(|t| t.data()).collect();
        let history = stack_frames(&refs, shape[0], shape[1], shape[2]);
        let next = match stepper.step(&history) {
            Ok(next) if next.is_finite() => next,
            Ok(_) | Err(ModelError::Tensor(crate::tensor::TensorError::NonFinite { .. })) => {
                let reason = format!("non-finite prediction at step {step}");
                log::warn!("rollout truncated: {reason}");
                return Ok(Rollout {
                    frames,
                    truncated: Some(reason),
                });
            }
            Err(e) => return Err(e),
        };
        window.remove(0);
        window.push(next.clone());
        frames.push(next);
    }
    Ok(Rollout {
        frames,
        truncated: None,
    })
}

/// Teacher-forced one-step predictions for every window, paired with the
/// reference frames; both have shape `[S, T − ℓ, X, Y, C]`.
pub fn one_step_pairs(stepper: &(dyn Stepper + Sync), data: &TrajectorySet) -> Result<(TrajectorySet, TrajectorySet), ModelError> {
    let ell = stepper.history_len();
    let [s, t, x, y, c] = data.shape();
    if t <= ell {
        return Err(ModelError::Config(format!("{t} frames leave no one-step targets for history {ell}")));
    }
    let frames: Vec<Vec<f64>> = windows(data, ell)
        .par_iter()
        .map(|&(si, ti)| stepper.step(&data.history(si, ti, ell)).map(Tensor::into_data))
        .collect::<Result<_, _>>()?;
    let truth: Vec<f64> = windows(data, ell).iter().flat_map(|&(si, ti)| data.frame(si, ti).to_vec()).collect();
    let shape = [s, t - ell, x, y, c];
    let wrap = |d: Vec<f64>| TrajectorySet::new(shape, d, data.dt).map_err(|e| ModelError::Config(e.to_string()));
    Ok((wrap(frames.concat())?, wrap(truth)?))
}

/// Rollouts of `horizon` steps from the first `ℓ` frames of every sample.
#[derive(Clone, Debug)]
pub struct SetRollout {
    /// Predictions `[S, H, X, Y, C]`, `H` the shortest completed rollout.
    pub prediction: TrajectorySet,
    /// Reference frames `ℓ..ℓ+H` in the same layout.
    pub truth: TrajectorySet,
    pub truncated: Vec<(usize, String)>,
}

pub fn rollout_set(stepper: &(dyn Stepper + Sync), data: &TrajectorySet, horizon: usize) -> Result<SetRollout, ModelError> {
    let ell = stepper.history_len();
    let [s, t, x, y, c] = data.shape();
    if horizon == 0 || t <= ell {
        return Err(ModelError::Config(format!(
            "rollout needs horizon >= 1 and more than {ell} frames (horizon {horizon}, {t} frames)"
        )));
    }
    let horizon = horizon.min(t - ell);
    let runs: Vec<Rollout> = (0..s)
        .into_par_iter()
        .map(|si| {
            let warm: Vec<Tensor> = (0..ell).map(|ti| data.frame_tensor(si, ti)).collect();
            rollout(stepper, &warm, horizon)
        })
        .collect::<Result<_, _>>()?;
    let h = runs.iter().map(|r| r.frames.len()).min().unwrap_or(0);
    let truncated = runs
        .iter()
        .enumerate()
        .filter_map(|(i, r)| r.truncated.clone().map(|m| (i, m)))
        .collect();
    let pred: Vec<f64> = runs
        .iter()
        .flat_map(|r| r.frames[..h].iter().flat_map(|f| f.data().to_vec()))
        .collect();
    let truth: Vec<f64> = (0..s)
        .flat_map(|si| (ell..ell + h).flat_map(move |ti| data.frame(si, ti).to_vec()))
        .collect();
    let shape = [s, h, x, y, c];
    let wrap = |d: Vec<f64>| TrajectorySet::new(shape, d, data.dt).map_err(|e| ModelError::Config(e.to_string()));
    Ok(SetRollout {
        prediction: wrap(pred)?,
        truth: wrap(truth)?,
        truncated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    fn tiny_model(seed_value: u64) -> SpectraKan {
        SpectraKan::new(
            ModelConfig {
                width: 4,
                attn_dim: 4,
                token_dim: 2,
                layers: 1,
                coarse_layers: 1,
                modes: 3,
                se_reduction: 2,
                ..ModelConfig::default()
            },
            seed_value,
        )
        .unwrap()
    }

    fn tiny_data() -> TrajectorySet {
        let p = crate::data::DiffusionReactionParams {
            grid: 16,
            frames: 6,
            samples: 2,
            ..Default::default()
        };
        crate::data::gen_diffusion_reaction(&p).unwrap()
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let data = tiny_data();
        let mut model = tiny_model(1);
        model.fit_normalization(&data);
        let before = model.params.flatten();
        let cfg = TrainConfig {
            epochs: 2,
            learning_rate: 0.0,
            min_learning_rate: 0.0,
            ..TrainConfig::default()
        };
        let out = train(model, &data, None, &cfg).unwrap();
        assert_eq!(out.model.params.flatten(), before);
    }

    #[test]
    fn training_is_deterministic_and_reduces_loss() {
        let data = tiny_data();
        let mut model = tiny_model(2);
        model.fit_normalization(&data);
        let cfg = TrainConfig {
            epochs: 15,
            batch_size: 4,
            windows_per_trajectory: 0,
            ..TrainConfig::default()
        };
        let a = train(model.clone(), &data, None, &cfg).unwrap();
        let b = train(model, &data, None, &cfg).unwrap();
        assert_eq!(a.curve, b.curve);
        assert!(a.curve.last().unwrap().train_loss < a.curve[0].train_loss);
    }

    #[test]
    fn cosine_schedule_endpoints() {
        let cfg = TrainConfig::default();
        assert_eq!(cosine_learning_rate(&cfg, 0, 10), cfg.learning_rate);
        assert!((cosine_learning_rate(&cfg, 9, 10) - cfg.min_learning_rate).abs() < 1e-15);
    }

    #[test]
    fn rollout_of_persistence_repeats_last_frame() {
        let data = tiny_data();
        let warm = vec![data.frame_tensor(0, 0), data.frame_tensor(0, 1)];
        let p = Persistence { history: 2, channels: 1 };
        let r = rollout(&p, &warm, 4).unwrap();
        assert_eq!(r.frames.len(), 4);
        assert!(r.frames.iter().all(|f| f == &warm[1]));
    }

    #[test]
    fn set_rollout_of_persistence_matches_frames() {
        let data = tiny_data();
        let p = Persistence { history: 2, channels: 1 };
        let r = rollout_set(&p, &data, 3).unwrap();
        assert_eq!(r.prediction.shape(), [2, 3, 16, 1, 1]);
        assert_eq!(r.prediction.frame(1, 2), data.frame(1, 1));
        assert_eq!(r.truth.frame(1, 2), data.frame(1, 4));
    }

    #[test]
    fn single_step_rollout_equals_forward() {
        let data = tiny_data();
        let model = tiny_model(3);
        let warm = vec![data.frame_tensor(1, 2), data.frame_tensor(1, 3)];
        let r = rollout(&model, &warm, 1).unwrap();
        assert_eq!(r.frames[0], model.predict(&data.history(1, 4, 2)).unwrap());
    }
    #[test]
    fn single_trajectory_overfits() {
        let data = crate::data::gen_diffusion_reaction(&crate::data::DiffusionReactionParams {
            grid: 32,
            frames: 12,
            samples: 1,
            seed: 4,
            ..Default::default()
        })
        .unwrap();
        let mut model = SpectraKan::new(
            ModelConfig {
                width: 8,
                attn_dim: 8,
                token_dim: 4,
                layers: 2,
                coarse_layers: 1,
                modes: 6,
                ..ModelConfig::default()
            },
            4,
        )
        .unwrap();
        model.fit_normalization(&data);
        let cfg = TrainConfig {
            epochs: 200,
            windows_per_trajectory: 0,
            ..TrainConfig::default()
        };
        let curve = train(model, &data, None, &cfg).unwrap().curve;
        let (first, last) = (curve[0].train_loss, curve.last().unwrap().train_loss);
        eprintln!("overfit: epoch-1 loss {first:.3e}, final {last:.3e}, drop {:.0}x", first / last);
        assert!(first / last >= 100.0, "loss fell only {:.1}x", first / last);
    }

}
