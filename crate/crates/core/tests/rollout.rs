use spectrakan::data::{gen_diffusion_reaction, split_dataset, DiffusionReactionParams};
use spectrakan::metrics::evaluate;
use spectrakan::model::{ModelConfig, SpectraKan};
use spectrakan::train::{rollout_set, train, TrainConfig};

#[test]
fn median_rollout_error_grows_with_horizon() {
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

    let run = rollout_set(&model, &test_set, 12).unwrap();
    assert!(run.truncated.is_empty());
    let report = evaluate(&run.prediction, &run.truth, 1.0 / 32.0).unwrap();
    let [s, h, _, _, _] = report.shape;
    let medians: Vec<f64> = (0..h)
        .map(|t| {
            let mut per_sample: Vec<f64> = (0..s)
                .map(|si| {
                    let f = &report.fields[si * h + t];
                    f.err_sq
                })
                .collect();
            per_sample.sort_by(f64::total_cmp);
            per_sample[s / 2]
        })
        .collect();
    for (k, w) in medians.windows(2).enumerate() {
        assert!(w[1] >= w[0], "median error fell from step {} to {}: {:?}", k + 1, k + 2, medians);
    }
}
