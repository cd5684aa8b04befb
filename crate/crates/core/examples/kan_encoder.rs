//! The spline KAN that turns a pooled history into the global token:
//! cubic B-spline least-squares fits converge at fourth order in the knot
//! spacing, every edge obeys its derivative bound, and the network's
//! Lipschitz bound shrinks geometrically, layer by layer, when the edge
//! weights are scaled down.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spectrakan::bspline::{fit_least_squares, KnotVector};
use spectrakan::kan::KanNet;
use spectrakan::nn::ParamStore;

fn main() {
    println!("least-squares fit of sin(3x) + 0.5 x^2 on [-1, 1]:");
    let target = |x: f64| (3.0 * x).sin() + 0.5 * x * x;
    let xs: Vec<f64> = (0..2001).map(|i| -1.0 + i as f64 / 1000.0).collect();
    let ys: Vec<f64> = xs.iter().map(|&x| target(x)).collect();
    let mut prev: Option<f64> = None;
    for grid in [4, 8, 16, 32] {
        let knots = KnotVector::uniform(-1.0, 1.0, grid, 3).unwrap();
        let coef = fit_least_squares(&knots, &xs, &ys).unwrap();
        let err = xs
            .iter()
            .map(|&x| (knots.evaluate(&coef, x) - target(x)).abs())
            .fold(0.0, f64::max);
        let order = prev.map_or(String::new(), |p| format!("  observed order {:.2}", (p / err).log2()));
        println!("  G = {grid:>2}: max error {err:.3e}{order}");
        prev = Some(err);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut store = ParamStore::new();
    let net = KanNet::new(&mut store, &mut rng, &[2, 4, 8], 8, 3).unwrap();
    let z = [0.3, -0.7];
    println!("\ntoken for z = {z:?}: {:?}", net.eval(&store, &z).iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>());

    let layer = &net.layers[0];
    let mut worst_ratio: f64 = 0.0;
    for j in 0..layer.d_out {
        for i in 0..layer.d_in {
            let edge = layer.edge(&store, j, i);
            let sup = (0..20_001)
                .map(|s| edge.derivative(-2.0 + s as f64 * 4.0 / 20_000.0).abs())
                .fold(0.0, f64::max);
            worst_ratio = worst_ratio.max(sup / edge.lipschitz_bound());
        }
    }
    println!("first layer: largest sup|phi'| / bound over all edges = {worst_ratio:.3}");

    let before = net.lipschitz_l2(&store);
    let mut empirical: f64 = 0.0;
    for _ in 0..2000 {
        let a: Vec<f64> = (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (ta, tb) = (net.eval(&store, &a), net.eval(&store, &b));
        let num: f64 = ta.iter().zip(&tb).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let den: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        empirical = empirical.max(num / den);
    }
    for layer in &net.layers {
        for id in [layer.w_b, layer.w_s] {
            store.get_mut(id).data_mut().iter_mut().for_each(|w| *w *= 0.5);
        }
    }
    println!("network Lipschitz bound {before:.2} (largest observed ratio {empirical:.2})");
    println!("after halving all edge weights: {:.2}", net.lipschitz_l2(&store));
}
