//! A small training run on 1D diffusion-reaction data, scored on held-out
//! trajectories against the persistence baseline u_{t+1} = u_t.

use spectrakan::data::{gen_diffusion_reaction, split_dataset, DiffusionReactionParams};
use spectrakan::metrics::evaluate;
use spectrakan::model::{ModelConfig, SpectraKan};
use spectrakan::train::{one_step_pairs, train, Persistence, TrainConfig};

fn main() {
    let data = gen_diffusion_reaction(&DiffusionReactionParams {
        samples: 40,
        grid: 32,
        frames: 20,
        seed: 1,
        ..DiffusionReactionParams::default()
    })
    .unwrap();
    let (train_set, valid_set, test_set) = split_dataset(&data, [0.7, 0.1, 0.2], 1).unwrap();

    let config = ModelConfig {
        width: 16,
        attn_dim: 16,
        token_dim: 8,
        layers: 2,
        coarse_layers: 2,
        modes: 8,
        ..ModelConfig::default()
    };
    let mut model = SpectraKan::new(config, 1).unwrap();
    model.fit_normalization(&train_set);
    let cfg = TrainConfig {
        epochs: 15,
        ..TrainConfig::default()
    };
    let outcome = train(model, &train_set, Some(&valid_set), &cfg).unwrap();
    for rec in outcome.curve.iter().step_by(3) {
        println!(
            "epoch {:>2}  lr {:.2e}  train {:.3e}  valid {:.3e}",
            rec.epoch,
            rec.learning_rate,
            rec.train_loss,
            rec.valid_loss.unwrap_or(f64::NAN)
        );
    }

    let dx = 1.0 / test_set.grid().0 as f64;
    let (pred, truth) = one_step_pairs(&outcome.model, &test_set).unwrap();
    let model_nrmse = evaluate(&pred, &truth, dx).unwrap().aggregate.nrmse;
    let persistence = Persistence { history: 2, channels: 1 };
    let (base, _) = one_step_pairs(&persistence, &test_set).unwrap();
    let base_nrmse = evaluate(&base, &truth, dx).unwrap().aggregate.nrmse;
    println!("held-out one-step nrmse: model {model_nrmse:.3e}, persistence {base_nrmse:.3e} (ratio {:.3})", model_nrmse / base_nrmse);
}
