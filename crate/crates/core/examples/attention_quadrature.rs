//! Softmax attention over grid points as a Riemann sum of a normalized
//! weighted integral. With w(y) = 1 + y1 and g(y) = y1 the limit is 5/9; a
//! random smooth weight shows first-order convergence at cell corners and
//! second-order at cell centres.

use spectrakan::gml::discrete_attention_on_grid;
use spectrakan::verify::{log_log_slope, verify_quadrature};

fn main() {
    println!("w = 1 + y1, g = y1, exact 5/9:");
    for n in [4, 8, 16, 32, 64] {
        let a = discrete_attention_on_grid(|x, _| 1.0 + x, |x, _| vec![x], n, true)[0];
        println!("  n = {n:>2}: A_h = {a:.8}  error {:.2e}", (a - 5.0 / 9.0).abs());
    }

    let hs: Vec<f64> = [8.0, 16.0, 32.0, 64.0].iter().map(|n| 1.0 / n).collect();
    let corner: Vec<f64> = hs
        .iter()
        .map(|h| {
            let n = (1.0 / h) as usize;
            (discrete_attention_on_grid(|x, _| 1.0 + x, |x, _| vec![x], n, false)[0] - 5.0 / 9.0).abs()
        })
        .collect();
    println!("  corner nodes: slope {:.3}", log_log_slope(&hs, &corner));

    let report = verify_quadrature(512, 11).unwrap();
    println!("\nrandom smooth weight and values:");
    print!("{}", report.to_table());
}
