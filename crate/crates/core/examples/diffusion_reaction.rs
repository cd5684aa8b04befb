//! 1D Fisher-KPP trajectories on the periodic interval: generation, the
//! logistic pull towards u = 1, and a lossless round trip through the
//! on-disk container.

use spectrakan::data::{gen_diffusion_reaction, DiffusionReactionParams, TrajectorySet};
use spectrakan::plot::{heatmap, save_png};
use spectrakan::skds::Dtype;

fn main() {
    let params = DiffusionReactionParams {
        samples: 8,
        seed: 5,
        ..DiffusionReactionParams::default()
    };
    let set = gen_diffusion_reaction(&params).unwrap();
    println!("generated shape {:?} with dt {}", set.shape(), set.dt);
    let (x, _) = set.grid();
    for t in [0, 10, 25, params.frames - 1] {
        let f = set.frame(0, t);
        let mean = f.iter().sum::<f64>() / x as f64;
        let (lo, hi) = f.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        println!("  frame {t:>2}: mean {mean:.4}  range [{lo:.4}, {hi:.4}]");
    }

    let dir = tempfile_dir();
    let path = dir.join("diffusion_reaction.skds");
    set.save(&path, Dtype::F64).unwrap();
    let back = TrajectorySet::load(&path).unwrap();
    println!("f64 round trip identical: {}", back.data() == set.data());
    set.save(&path, Dtype::F32).unwrap();
    let lossy = TrajectorySet::load(&path).unwrap();
    let err = lossy.data().iter().zip(set.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    println!("f32 round trip max error: {err:.2e}");

    let spacetime: Vec<f64> = (0..params.frames).flat_map(|t| set.frame(0, t).to_vec()).collect();
    let png = dir.join("diffusion_reaction.png");
    save_png(&heatmap(&spacetime, params.frames, x, 6), &png).unwrap();
    println!("space-time picture of sample 0 written to {}", png.display());
}

fn tempfile_dir() -> std::path::PathBuf {
    std::env::args().nth(1).map(Into::into).unwrap_or_else(std::env::temp_dir)
}
