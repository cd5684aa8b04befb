//! Numerical checks of the stability bounds: spline-edge derivative bounds,
//! the Lipschitz bound of the token-conditioned modulation on the default
//! model, and the convergence of attention as a quadrature rule.

use spectrakan::model::{ModelConfig, SpectraKan};
use spectrakan::verify::{verify_all, VerifySettings};

fn main() {
    let model = SpectraKan::new(ModelConfig::default(), 0).unwrap();
    let settings = VerifySettings {
        lemma_trials: 30,
        lemma_samples: 20_000,
        theorem_pairs: 50,
        theorem_probes: 200,
        ..VerifySettings::default()
    };
    let report = verify_all(&model, &settings).unwrap();
    print!("{}", report.to_table());
    println!("all checks passed: {}, rows re-audit: {}", report.passed(), report.audit());
}
