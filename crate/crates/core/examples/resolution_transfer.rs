//! Train on shallow-water data coarsened to 32², then evaluate the same
//! weights on 16², 32² and 64² grids. Spectral weights are indexed by mode,
//! so the model runs unchanged at every resolution.

use spectrakan::data::{gen_shallow_water, split_dataset, ShallowWaterParams};
use spectrakan::metrics::evaluate;
use spectrakan::model::{ModelConfig, SpectraKan};
use spectrakan::train::{one_step_pairs, train, TrainConfig};

fn main() {
    let fine = gen_shallow_water(&ShallowWaterParams {
        grid: 64,
        frames: 12,
        steps_per_frame: 5,
        samples: 16,
        seed: 9,
        ..ShallowWaterParams::default()
    })
    .unwrap();
    let (train_fine, _, test_fine) = split_dataset(&fine, [0.75, 0.0, 0.25], 9).unwrap();
    let train_set = train_fine.coarsen(2).unwrap();

    let config = ModelConfig {
        channels: 3,
        width: 12,
        attn_dim: 12,
        token_dim: 8,
        layers: 2,
        coarse_layers: 1,
        modes: 8,
        ..ModelConfig::default()
    };
    let mut model = SpectraKan::new(config, 9).unwrap();
    model.fit_normalization(&train_set);
    let cfg = TrainConfig {
        epochs: 8,
        ..TrainConfig::default()
    };
    let model = train(model, &train_set, None, &cfg).unwrap().model;

    for (label, set) in [
        ("16x16", test_fine.coarsen(4).unwrap()),
        ("32x32 (training grid)", test_fine.coarsen(2).unwrap()),
        ("64x64", test_fine.clone()),
    ] {
        let (pred, truth) = one_step_pairs(&model, &set).unwrap();
        let report = evaluate(&pred, &truth, 1.0 / set.grid().0 as f64).unwrap();
        println!("{label:<22} one-step nrmse {:.3e}", report.aggregate.nrmse);
    }
}
