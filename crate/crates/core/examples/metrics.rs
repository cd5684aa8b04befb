//! The evaluation metrics on hand-built errors: a constant offset lands in
//! the low Fourier band and in the conserved-quantity error, a checkerboard
//! lands in the high band, and an edge-only error shows up in the boundary
//! metric.

use spectrakan::data::TrajectorySet;
use spectrakan::metrics::{evaluate, MetricSet};

fn field(n: usize, f: impl Fn(usize, usize) -> f64) -> Vec<f64> {
    (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).map(|(i, j)| f(i, j)).collect()
}

fn main() {
    let n = 16;
    let truth_field = field(n, |i, j| (i as f64 * 0.4).sin() + (j as f64 * 0.3).cos());
    let truth = TrajectorySet::new([1, 1, n, n, 1], truth_field.clone(), 0.1).unwrap();
    let cases: [(&str, Box<dyn Fn(usize, usize) -> f64>); 3] = [
        ("offset 0.1", Box::new(|_, _| 0.1)),
        ("checkerboard", Box::new(|i, j| if (i + j) % 2 == 0 { 0.1 } else { -0.1 })),
        ("edge only", Box::new(move |i, j| if i == 0 || j == 0 || i == n - 1 || j == n - 1 { 0.1 } else { 0.0 })),
    ];
    print!("{:<14}", "case");
    for name in MetricSet::NAMES {
        print!("{name:>15}");
    }
    println!();
    for (name, err) in cases {
        let pred: Vec<f64> = truth_field.iter().zip(field(n, err)).map(|(t, e)| t + e).collect();
        let pred = TrajectorySet::new([1, 1, n, n, 1], pred, 0.1).unwrap();
        let report = evaluate(&pred, &truth, 1.0 / n as f64).unwrap();
        print!("{name:<14}");
        for v in report.aggregate.values() {
            print!("{v:>15.4e}");
        }
        println!();
    }
}
