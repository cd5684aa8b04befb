//! Reverse-mode gradients of the full model against central finite
//! differences on an 8×8 field with a two-frame history.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spectrakan::data::TrajectorySet;
use spectrakan::model::{ModelConfig, SpectraKan};
use spectrakan::train::{finite_difference_gradient, window_loss_and_grad};

fn main() {
    let config = ModelConfig {
        width: 4,
        attn_dim: 4,
        token_dim: 4,
        layers: 1,
        coarse_layers: 1,
        modes: 3,
        spline_grid: 4,
        ..ModelConfig::default()
    };
    let model = SpectraKan::new(config, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let values = (0..3 * 64).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let data = TrajectorySet::new([1, 3, 8, 8, 1], values, 0.1).unwrap();

    let (loss, grad) = window_loss_and_grad(&model, &data, 0, 2).unwrap();
    let coords: Vec<usize> = (0..grad.len()).collect();
    let fd = finite_difference_gradient(&model, &data, (0, 2), 1e-5, &coords).unwrap();
    let scale = grad.iter().map(|g| g.abs()).fold(0.0, f64::max);
    let worst = grad
        .iter()
        .zip(&fd)
        .map(|(a, b)| (a - b).abs() / a.abs().max(b.abs()).max(1e-3 * scale))
        .fold(0.0, f64::max);
    println!("loss {loss:.6}, {} parameters", grad.len());
    println!("largest relative disagreement with finite differences: {worst:.2e}");
    for (i, name) in [(0usize, "first"), (grad.len() / 2, "middle"), (grad.len() - 1, "last")] {
        println!("  {name:>6} coordinate: tape {:+.8e}  finite difference {:+.8e}", grad[i], fd[i]);
    }
}
