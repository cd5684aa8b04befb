//! Autoregressive rollouts: a briefly trained model and the persistence
//! baseline are fed their own predictions, and the RMS error is tracked per
//! step.

use spectrakan::data::{gen_diffusion_reaction, split_dataset, DiffusionReactionParams};
use spectrakan::metrics::evaluate;
use spectrakan::model::{ModelConfig, SpectraKan};
use spectrakan::train::{rollout_set, train, Persistence, Stepper, TrainConfig};

fn main() {
    let data = gen_diffusion_reaction(&DiffusionReactionParams {
        samples: 30,
        grid: 32,
        frames: 20,
        seed: 2,
        ..DiffusionReactionParams::default()
    })
    .unwrap();
    let (train_set, _, test_set) = split_dataset(&data, [0.8, 0.0, 0.2], 2).unwrap();
    let config = ModelConfig {
        width: 16,
        attn_dim: 16,
        token_dim: 8,
        layers: 2,
        coarse_layers: 2,
        modes: 8,
        ..ModelConfig::default()
    };
    let mut model = SpectraKan::new(config, 2).unwrap();
    model.fit_normalization(&train_set);
    let cfg = TrainConfig {
        epochs: 10,
        ..TrainConfig::default()
    };
    let model = train(model, &train_set, None, &cfg).unwrap().model;

    let horizon = 12;
    let dx = 1.0 / test_set.grid().0 as f64;
    let persistence = Persistence { history: 2, channels: 1 };
    let steppers: [(&str, &(dyn Stepper + Sync)); 2] = [("model", &model), ("persistence", &persistence)];
    let mut curves = Vec::new();
    for (name, stepper) in steppers {
        let run = rollout_set(stepper, &test_set, horizon).unwrap();
        if !run.truncated.is_empty() {
            println!("{name}: {} rollouts truncated", run.truncated.len());
        }
        curves.push((name, evaluate(&run.prediction, &run.truth, dx).unwrap().rms_by_step()));
    }
    println!("step  {:>12}  {:>12}", curves[0].0, curves[1].0);
    for k in 0..curves[0].1.len() {
        println!("{:>4}  {:>12.4e}  {:>12.4e}", k + 1, curves[0].1[k], curves[1].1[k]);
    }
}
