//! Numeric checks of the stability guarantees: the spline-edge Lipschitz
//! bound, the Lipschitz bound of the global modulation map, and first-order
//! convergence of softmax attention to its continuous integral.
//!
//! Every [`ReportRow`] stores the measured value, the bound and the relation
//! between them, so its pass flag can be recomputed from the stored numbers.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use thiserror::Error;

use crate::bspline::KnotVector;
use crate::gml::{continuous_attention_reference, discrete_attention_on_grid, softmax};
use crate::kan::{KanEdge, SILU_LIPSCHITZ};
use crate::model::{ModelError, SpectraKan};
use crate::nn::{Linear, ParamStore};
use crate::seed;
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error("reference grid {reference} is too coarse for band limit {band} and finest resolution {finest}")]
    Resolution { reference: usize, band: f64, finest: usize },
    #[error("need at least one {0}")]
    Empty(&'static str),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Relation {
    AtMost,
    AtLeast,
    StrictlyBelow,
    /// Passes at or above `lo`; values above `hi` pass with a note.
    SlopeWindow { lo: f64, hi: f64 },
}

impl Relation {
    pub fn holds(self, measured: f64, bound: f64) -> bool {
        match self {
            Relation::AtMost => measured <= bound,
            Relation::AtLeast => measured >= bound,
            Relation::StrictlyBelow => measured < bound,
            Relation::SlopeWindow { lo, .. } => measured >= lo,
        }
    }

    fn symbol(self) -> String {
        match self {
            Relation::AtMost => "<=".into(),
            Relation::AtLeast => ">=".into(),
            Relation::StrictlyBelow => "<".into(),
            Relation::SlopeWindow { lo, hi } => format!("in [{lo}, {hi}]"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub check: String,
    pub case: String,
    pub measured: f64,
    pub bound: f64,
    pub relation: Relation,
    pub passed: bool,
    pub note: Option<String>,
    pub seed: u64,
}

impl ReportRow {
    pub fn new(check: &str, case: impl Into<String>, measured: f64, bound: f64, relation: Relation, seed: u64) -> Self {
        let passed = measured.is_finite() && bound.is_finite() && relation.holds(measured, bound);
        let note = match relation {
            Relation::SlopeWindow { hi, .. } if measured > hi => {
                Some(format!("slope above {hi}: faster than first order"))
            }
            _ => None,
        };
        ReportRow {
            check: check.into(),
            case: case.into(),
            measured,
            bound,
            relation,
            passed,
            note,
            seed,
        }
    }

    /// Pass flag recomputed from the stored numbers.
    pub fn recompute(&self) -> bool {
        self.measured.is_finite() && self.bound.is_finite() && self.relation.holds(self.measured, self.bound)
    }

    /// Distance to the bound, positive on the passing side.
    pub fn margin(&self) -> f64 {
        match self.relation {
            Relation::AtMost | Relation::StrictlyBelow => self.bound - self.measured,
            Relation::AtLeast => self.measured - self.bound,
            Relation::SlopeWindow { lo, .. } => self.measured - lo,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct VerificationReport {
    pub rows: Vec<ReportRow>,
    /// Named intermediate quantities, such as assembled constants.
    pub constants: Vec<(String, f64)>,
}

impl VerificationReport {
    pub fn passed(&self) -> bool {
        !self.rows.is_empty() && self.rows.iter().all(|r| r.passed)
    }

    /// True when every stored pass flag agrees with its recomputation.
    pub fn audit(&self) -> bool {
        self.rows.iter().all(|r| r.passed == r.recompute())
    }

    pub fn extend(&mut self, other: VerificationReport) {
        self.rows.extend(other.rows);
        self.constants.extend(other.constants);
    }

    pub fn rows_for<'a>(&'a self, check: &'a str) -> impl Iterator<Item = &'a ReportRow> + 'a {
        self.rows.iter().filter(move |r| r.check == check)
    }

    /// One line per check: pass count, worst margin and notes.
    pub fn to_table(&self) -> String {
        let mut checks: Vec<&str> = Vec::new();
        for r in &self.rows {
            if !checks.contains(&r.check.as_str()) {
                checks.push(&r.check);
            }
        }
        let mut out = format!("{:<28} {:>9} {:>14} {:>14} {:>14}  {}\n", "check", "passed", "worst", "bound", "margin", "status");
        for c in checks {
            let rows: Vec<&ReportRow> = self.rows_for(c).collect();
            let ok = rows.iter().filter(|r| r.passed).count();
            let worst = rows
                .iter()
                .min_by(|a, b| a.margin().total_cmp(&b.margin()))
                .expect("check has rows");
            let status = if ok == rows.len() { "PASS" } else { "FAIL" };
            let _ = write!(
                out,
                "{:<28} {:>9} {:>14.6e} {:>14.6e} {:>14.6e}  {status} ({})",
                c,
                format!("{ok}/{}", rows.len()),
                worst.measured,
                worst.bound,
                worst.margin(),
                worst.relation.symbol()
            );
            let notes: Vec<&str> = rows.iter().filter_map(|r| r.note.as_deref()).collect();
            if let Some(n) = notes.first() {
                let _ = write!(out, " note: {n}");
            }
            out.push('\n');
        }
        for (k, v) in &self.constants {
            let _ = writeln!(out, "  {k} = {v:.6e}");
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("check,case,measured,bound,relation,margin,passed,seed,note\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{:.12e},{:.12e},{},{:.12e},{},{},{}",
                r.check,
                r.case,
                r.measured,
                r.bound,
                r.relation.symbol(),
                r.margin(),
                r.passed,
                r.seed,
                r.note.as_deref().unwrap_or("")
            );
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VerifySettings {
    pub lemma_trials: usize,
    pub lemma_samples: usize,
    pub theorem_pairs: usize,
    pub theorem_probes: usize,
    pub theorem_grid: usize,
    pub quadrature_reference: usize,
    pub seed: u64,
}

impl Default for VerifySettings {
    fn default() -> Self {
        VerifySettings {
            lemma_trials: 100,
            lemma_samples: 100_000,
            theorem_pairs: 200,
            theorem_probes: 1000,
            theorem_grid: 8,
            quadrature_reference: 512,
            seed: 0,
        }
    }
}

impl VerifySettings {
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("lemma_trials", self.lemma_trials.to_string()),
            ("lemma_samples", self.lemma_samples.to_string()),
            ("theorem_pairs", self.theorem_pairs.to_string()),
            ("theorem_probes", self.theorem_probes.to_string()),
            ("theorem_grid", self.theorem_grid.to_string()),
            ("quadrature_reference", self.quadrature_reference.to_string()),
        ]
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let v: usize = value
            .parse()
            .ok()
            .filter(|v| *v > 0)
            .ok_or_else(|| format!("{key}: expected a positive integer, got '{value}'"))?;
        match key {
            "lemma_trials" => self.lemma_trials = v,
            "lemma_samples" => self.lemma_samples = v,
            "theorem_pairs" => self.theorem_pairs = v,
            "theorem_probes" => self.theorem_probes = v,
            "theorem_grid" => self.theorem_grid = v,
            "quadrature_reference" => self.quadrature_reference = v,
            _ => return Err(format!("unknown key '{key}'")),
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Spline edge Lipschitz bound

/// Random edge: degree 1..=4, 3..=16 intervals, uniform or jittered knots.
pub fn random_edge(rng: &mut ChaCha8Rng) -> KanEdge {
    let order = rng.gen_range(1..=4);
    let grid = rng.gen_range(3..=16);
    let knots = if rng.gen_bool(0.5) {
        KnotVector::uniform(-1.0, 1.0, grid, order).expect("valid uniform knots")
    } else {
        let total = grid + 2 * order;
        let gaps: Vec<f64> = (0..total).map(|_| rng.gen_range(0.2..1.0)).collect();
        let sum: f64 = gaps.iter().sum();
        let mut t = vec![-1.5];
        for g in gaps {
            t.push(t.last().unwrap() + 3.0 * g / sum);
        }
        KnotVector::new(t, order).expect("increasing knots")
    };
    let normal = Normal::new(0.0, 1.0).expect("valid normal");
    let coef = (0..knots.num_basis()).map(|_| normal.sample(rng)).collect();
    let w_b = rng.gen_range(-2.0..2.0);
    let w_s = rng.gen_range(-2.0..2.0);
    KanEdge::new(knots, coef, w_b, w_s).expect("matching coefficient count")
}

/// Largest difference quotient of `φ` over `samples` uniform points on
/// `[lo, hi]`; each quotient is the central difference at a cell midpoint.
pub fn dense_derivative_sup(edge: &KanEdge, lo: f64, hi: f64, samples: usize) -> f64 {
    let step = (hi - lo) / (samples - 1) as f64;
    let values: Vec<f64> = (0..samples).map(|i| edge.eval(lo + i as f64 * step)).collect();
    values
        .windows(2)
        .map(|w| ((w[1] - w[0]) / step).abs())
        .fold(0.0, f64::max)
}

fn lemma_row(edge: &KanEdge, samples: usize, case: String, seed_value: u64) -> ReportRow {
    let (lo, hi) = edge.knots.domain();
    let pad = 0.5 * (hi - lo);
    let measured = dense_derivative_sup(edge, lo - pad, hi + pad, samples);
    ReportRow::new("edge_lipschitz", case, measured, edge.lipschitz_bound(), Relation::AtMost, seed_value)
}

/// Random spline edges: dense-sampled `sup|φ'|` against
/// `|w_b|·L_b + |w_s|·(2/h_min)·‖c‖₁` with `L_b` = [`SILU_LIPSCHITZ`].
pub fn verify_edge_lipschitz(trials: usize, samples: usize, root: u64) -> Result<VerificationReport, VerifyError> {
    if trials == 0 {
        return Err(VerifyError::Empty("trial"));
    }
    let rows = (0..trials)
        .into_par_iter()
        .map(|i| {
            let s = seed::derive_indexed(root, "lemma", i as u64);
            let mut rng = seed::rng_indexed(root, "lemma", i as u64);
            let edge = random_edge(&mut rng);
            let case = format!("trial{i}:k={};G={}", edge.knots.order(), edge.knots.grid_size());
            lemma_row(&edge, samples.max(2), case, s)
        })
        .collect();
    Ok(VerificationReport {
        rows,
        constants: vec![("L_b".into(), SILU_LIPSCHITZ)],
    })
}

// ---------------------------------------------------------------------------
// Global modulation Lipschitz bound

/// Input of the modulation map: a history `[X, Y, ℓ·C]` feeding the pooled
/// token and a feature field `[N, C_fno]` feeding keys and values.
#[derive(Clone, Debug)]
pub struct ModulationInput {
    pub history: Tensor,
    pub features: Vec<f64>,
}

impl ModulationInput {
    pub fn random(model: &SpectraKan, grid: usize, rng: &mut ChaCha8Rng) -> Self {
        let d0 = model.config.summary_dim();
        let n = grid * grid;
        let history = (0..n * d0).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        ModulationInput {
            history: Tensor::new(vec![grid, grid, d0], history).expect("history shape"),
            features: (0..n * model.config.width).map(|_| rng.gen_range(-1.0..=1.0)).collect(),
        }
    }

    /// Copy moved by `δ ~ U(-r, r)` per entry and clipped to `[-1, 1]`.
    pub fn perturbed(&self, radius: f64, rng: &mut ChaCha8Rng) -> Self {
        let mut jitter = |v: &f64| (v + rng.gen_range(-radius..=radius)).clamp(-1.0, 1.0);
        let h: Vec<f64> = self.history.data().iter().map(&mut jitter).collect();
        ModulationInput {
            history: Tensor::new(self.history.shape().to_vec(), h).expect("history shape"),
            features: self.features.iter().map(&mut jitter).collect(),
        }
    }

    pub fn distance_inf(&self, other: &Self) -> f64 {
        let h = self.history.max_abs_diff(&other.history);
        let f = self.features.iter().zip(&other.features).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        h.max(f)
    }
}

#[derive(Clone, Debug)]
pub struct Modulation {
    pub token: Vec<f64>,
    pub context: Vec<f64>,
    pub query_norm: f64,
    pub key_sup: f64,
    pub value_sup: f64,
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Token `t = Φ(P(u))` and context `Σ_y softmax(⟨q, k(y)⟩/√d_a) v(y)`.
pub fn modulation(model: &SpectraKan, input: &ModulationInput) -> Modulation {
    let store = &model.params;
    let gml = &model.gml;
    let z = model.summary(&input.history);
    let token = model.kan.eval(store, &z);
    let q = gml.query.eval(store, &token);
    let width = gml.feature_dim;
    let temp = 1.0 / (gml.attn_dim as f64).sqrt();
    let mut scores = Vec::new();
    let mut values = Vec::new();
    let mut key_sup: f64 = 0.0;
    let mut value_sup: f64 = 0.0;
    for f in input.features.chunks(width) {
        let k = gml.key.eval(store, f);
        let v = gml.value.eval(store, f);
        key_sup = key_sup.max(norm2(&k));
        value_sup = value_sup.max(norm2(&v));
        scores.push(temp * q.iter().zip(&k).map(|(a, b)| a * b).sum::<f64>());
        values.push(v);
    }
    let alpha = softmax(&scores);
    let mut context = vec![0.0; gml.attn_dim];
    for (a, v) in alpha.iter().zip(&values) {
        context.iter_mut().zip(v).for_each(|(c, x)| *c += a * x);
    }
    Modulation {
        token,
        context,
        query_norm: norm2(&q),
        key_sup,
        value_sup,
    }
}

/// Largest singular value of a `[fan_in, fan_out]` weight.
pub fn spectral_norm(lin: &Linear, store: &ParamStore) -> f64 {
    let w = DMatrix::from_row_slice(lin.fan_in, lin.fan_out, store.get(lin.weight).data());
    w.singular_values().max()
}

/// Bound on `sup_{‖x‖_∞ ≤ 1} ‖x W‖₂`: Euclidean norm of the column `ℓ₁` norms.
pub fn inf_to_two_norm(lin: &Linear, store: &ParamStore) -> f64 {
    let w = store.get(lin.weight).data();
    (0..lin.fan_out)
        .map(|o| (0..lin.fan_in).map(|i| w[i * lin.fan_out + o].abs()).sum::<f64>().powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Constants entering the modulation Lipschitz bound.
#[derive(Clone, Debug, PartialEq)]
pub struct ModulationConstants {
    pub l_p: f64,
    pub l_kan: f64,
    pub lip_q: f64,
    pub l_k: f64,
    pub l_v: f64,
    pub m_q: f64,
    pub m_k: f64,
    pub m_v: f64,
    pub attn_dim: usize,
}

impl ModulationConstants {
    /// Operator constants from the weights; the suprema are measured on `probes`.
    pub fn assemble(model: &SpectraKan, probes: &[ModulationInput]) -> Self {
        let store = &model.params;
        let c = model.config.channels;
        let inv_var: f64 = (0..model.config.summary_dim())
            .map(|i| model.norm.std[i % c].powi(-2))
            .sum();
        let (m_q, m_k, m_v) = probes
            .par_iter()
            .map(|p| {
                let m = modulation(model, p);
                (m.query_norm, m.key_sup, m.value_sup)
            })
            .reduce(|| (0.0, 0.0, 0.0), |a, b| (a.0.max(b.0), a.1.max(b.1), a.2.max(b.2)));
        ModulationConstants {
            l_p: inv_var.sqrt(),
            l_kan: model.kan.input_gain() * model.kan.lipschitz_l2(store),
            lip_q: spectral_norm(&model.gml.query, store),
            l_k: inf_to_two_norm(&model.gml.key, store),
            l_v: inf_to_two_norm(&model.gml.value, store),
            m_q,
            m_k,
            m_v,
            attn_dim: model.gml.attn_dim,
        }
    }

    pub fn token_bound(&self) -> f64 {
        self.l_kan * self.l_p
    }

    /// `L_m` on a unit-measure domain: `(M_v C_w + e^{M_s} L_v)/Z_min + e^{M_s} M_v C_w / Z_min²`.
    pub fn context_bound(&self) -> f64 {
        let temp = 1.0 / (self.attn_dim as f64).sqrt();
        let m_s = self.m_q * self.m_k * temp;
        let e = m_s.exp();
        let c_w = e * temp * (self.m_k * self.lip_q * self.l_kan * self.l_p + self.m_q * self.l_k);
        let z_min = (-m_s).exp();
        (self.m_v * c_w + e * self.l_v) / z_min + e * self.m_v * c_w / (z_min * z_min)
    }

    pub fn named(&self, prefix: &str) -> Vec<(String, f64)> {
        [
            ("L_P", self.l_p),
            ("L_KAN", self.l_kan),
            ("Lip_q", self.lip_q),
            ("L_k", self.l_k),
            ("L_v", self.l_v),
            ("M_q", self.m_q),
            ("M_k", self.m_k),
            ("M_v", self.m_v),
            ("L_token", self.token_bound()),
            ("L_m", self.context_bound()),
        ]
        .into_iter()
        .map(|(k, v)| (format!("{prefix}{k}"), v))
        .collect()
    }
}

/// Scales every KAN base and spline weight by `factor`.
pub fn scale_kan_weights(model: &mut SpectraKan, factor: f64) {
    for layer in &model.kan.layers {
        for id in [layer.w_b, layer.w_s] {
            model.params.get_mut(id).data_mut().iter_mut().for_each(|w| *w *= factor);
        }
    }
}

/// Pairs of inputs with `‖u − ũ‖_∞ ≥ 1e-3`; half local perturbations, half independent draws.
pub fn modulation_pairs(model: &SpectraKan, n: usize, grid: usize, root: u64) -> Vec<(ModulationInput, ModulationInput)> {
    (0..n)
        .map(|i| {
            let mut rng = seed::rng_indexed(root, "theorem-pair", i as u64);
            let a = ModulationInput::random(model, grid, &mut rng);
            loop {
                let b = if i % 2 == 0 {
                    let r = 10f64.powf(rng.gen_range(-3.0..0.0));
                    a.perturbed(r, &mut rng)
                } else {
                    ModulationInput::random(model, grid, &mut rng)
                };
                if a.distance_inf(&b) >= 1e-3 {
                    return (a.clone(), b);
                }
            }
        })
        .collect()
}

/// Empirical ratios `‖m(u) − m(ũ)‖₂ / ‖u − ũ‖_∞` for the token and the
/// context against their assembled bounds, plus the effect of shrinking the
/// KAN weights on the assembled context bound.
pub fn verify_modulation_lipschitz(model: &SpectraKan, settings: &VerifySettings) -> Result<VerificationReport, VerifyError> {
    if settings.theorem_pairs == 0 {
        return Err(VerifyError::Empty("input pair"));
    }
    let root = settings.seed;
    let grid = settings.theorem_grid;
    model.trunk.check_grid(grid, grid).map_err(ModelError::from)?;
    let pairs = modulation_pairs(model, settings.theorem_pairs, grid, root);
    let mut probes: Vec<ModulationInput> = (0..settings.theorem_probes)
        .map(|i| ModulationInput::random(model, grid, &mut seed::rng_indexed(root, "theorem-probe", i as u64)))
        .collect();
    // The suprema must cover every evaluated input.
    probes.extend(pairs.iter().flat_map(|(a, b)| [a.clone(), b.clone()]));
    let consts = ModulationConstants::assemble(model, &probes);
    let (l_t, l_m) = (consts.token_bound(), consts.context_bound());

    let ratios: Vec<(f64, f64)> = pairs
        .par_iter()
        .map(|(a, b)| {
            let (ma, mb) = (modulation(model, a), modulation(model, b));
            let d = a.distance_inf(b);
            let dh = a.history.max_abs_diff(&b.history);
            let dt: Vec<f64> = ma.token.iter().zip(&mb.token).map(|(x, y)| x - y).collect();
            let dc: Vec<f64> = ma.context.iter().zip(&mb.context).map(|(x, y)| x - y).collect();
            let token_ratio = if dh > 0.0 { norm2(&dt) / dh } else { 0.0 };
            (token_ratio, norm2(&dc) / d)
        })
        .collect();
    let mut rows = Vec::with_capacity(2 * pairs.len() + 1);
    for (i, (rt, rc)) in ratios.iter().enumerate() {
        let s = seed::derive_indexed(root, "theorem-pair", i as u64);
        rows.push(ReportRow::new("modulation_token", format!("pair{i}"), *rt, l_t, Relation::AtMost, s));
        rows.push(ReportRow::new("modulation_context", format!("pair{i}"), *rc, l_m, Relation::AtMost, s));
    }
    let mut shrunk = model.clone();
    scale_kan_weights(&mut shrunk, 0.1);
    let shrunk_consts = ModulationConstants::assemble(&shrunk, &probes);
    rows.push(ReportRow::new(
        "modulation_kan_shrink",
        "w_b;w_s x0.1",
        shrunk_consts.context_bound(),
        l_m,
        Relation::StrictlyBelow,
        root,
    ));
    let mut constants = consts.named("");
    constants.extend(shrunk_consts.named("shrunk."));
    Ok(VerificationReport { rows, constants })
}

// ---------------------------------------------------------------------------
// Quadrature convergence of attention

/// Smooth non-periodic field `Σ_t a_t cos(2π(f_t·y) + φ_t)` on `[0,1]²` with
/// real frequencies `|f_t| ≤ band`.
#[derive(Clone, Debug)]
pub struct TrigField {
    pub offset: f64,
    pub terms: Vec<(f64, [f64; 2], f64)>,
}

impl TrigField {
    pub fn random(rng: &mut ChaCha8Rng, terms: usize, band: f64) -> Self {
        TrigField {
            offset: rng.gen_range(-0.5..0.5),
            terms: (0..terms)
                .map(|_| {
                    let a = rng.gen_range(-0.5..0.5);
                    let f = [rng.gen_range(-band..band), rng.gen_range(-band..band)];
                    (a, f, rng.gen_range(0.0..std::f64::consts::TAU))
                })
                .collect(),
        }
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        self.offset
            + self
                .terms
                .iter()
                .map(|(a, f, p)| a * (std::f64::consts::TAU * (f[0] * x + f[1] * y) + p).cos())
                .sum::<f64>()
    }
}

/// Largest Frobenius norm of the central-difference Jacobian on an `n × n` grid.
pub fn lipschitz_estimate(f: &(dyn Fn(f64, f64) -> Vec<f64> + Sync), n: usize) -> f64 {
    let h = 1e-6;
    (0..=n)
        .into_par_iter()
        .map(|i| {
            let mut best: f64 = 0.0;
            for j in 0..=n {
                let (x, y) = (i as f64 / n as f64, j as f64 / n as f64);
                let (xp, xm) = (f(x + h, y), f(x - h, y));
                let (yp, ym) = (f(x, y + h), f(x, y - h));
                let s: f64 = (0..xp.len())
                    .map(|c| ((xp[c] - xm[c]) / (2.0 * h)).powi(2) + ((yp[c] - ym[c]) / (2.0 * h)).powi(2))
                    .sum();
                best = best.max(s.sqrt());
            }
            best
        })
        .reduce(|| 0.0, f64::max)
}

/// Least-squares slope of `ln e` against `ln h`.
pub fn log_log_slope(h: &[f64], e: &[f64]) -> f64 {
    let xs: Vec<f64> = h.iter().map(|v| v.ln()).collect();
    let ys: Vec<f64> = e.iter().map(|v| v.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let cov: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let var: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    cov / var
}

pub const QUADRATURE_RESOLUTIONS: [usize; 4] = [8, 16, 32, 64];
pub const SLOPE_WINDOW: (f64, f64) = (0.7, 1.3);

/// Error of discrete attention against a fine-grid reference for a random
/// smooth weight `w = exp(F)` and value field `g`, at cell-centre and
/// lower-left-corner nodes.
pub fn verify_quadrature(reference: usize, root: u64) -> Result<VerificationReport, VerifyError> {
    let band = 1.5;
    let finest = *QUADRATURE_RESOLUTIONS.last().expect("resolutions");
    if (reference as f64) < 64.0 * band || reference < 4 * finest {
        return Err(VerifyError::Resolution { reference, band, finest });
    }
    let mut rng = seed::rng(root, "quadrature");
    let log_w = TrigField::random(&mut rng, 4, band);
    let g_fields: Vec<TrigField> = (0..3).map(|_| TrigField::random(&mut rng, 4, band)).collect();
    let w = |x: f64, y: f64| log_w.eval(x, y).exp();
    let g = |x: f64, y: f64| g_fields.iter().map(|f| f.eval(x, y)).collect::<Vec<f64>>();
    let wg = |x: f64, y: f64| {
        let wv = w(x, y);
        g(x, y).into_iter().map(|v| wv * v).collect::<Vec<f64>>()
    };

    let a_ref = continuous_attention_reference(w, g, reference);
    let z = (0..reference * reference)
        .map(|k| {
            let (i, j) = (k / reference, k % reference);
            w((i as f64 + 0.5) / reference as f64, (j as f64 + 0.5) / reference as f64)
        })
        .sum::<f64>()
        / (reference * reference) as f64;
    let l_w = lipschitz_estimate(&|x, y| vec![w(x, y)], 256);
    let l_g = lipschitz_estimate(&wg, 256);
    let a_norm = norm2(&a_ref);
    let d = 2.0f64;

    let mut rows = Vec::new();
    for (label, centered) in [("centre", true), ("corner", false)] {
        let hs: Vec<f64> = QUADRATURE_RESOLUTIONS.iter().map(|&n| 1.0 / n as f64).collect();
        let errs: Vec<f64> = QUADRATURE_RESOLUTIONS
            .iter()
            .map(|&n| {
                let a_h = discrete_attention_on_grid(w, g, n, centered);
                a_h.iter().zip(&a_ref).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
            })
            .collect();
        for (h, e) in hs.iter().zip(&errs) {
            let bound = d.sqrt() * h / z * (l_g + a_norm * l_w);
            rows.push(ReportRow::new(
                "quadrature_bound",
                format!("{label}:h=1/{}", (1.0 / h).round()),
                *e,
                bound,
                Relation::AtMost,
                root,
            ));
        }
        let slope = log_log_slope(&hs, &errs);
        rows.push(ReportRow::new(
            "quadrature_rate",
            format!("{label}:slope"),
            slope,
            SLOPE_WINDOW.0,
            Relation::SlopeWindow {
                lo: SLOPE_WINDOW.0,
                hi: SLOPE_WINDOW.1,
            },
            root,
        ));
    }
    Ok(VerificationReport {
        rows,
        constants: vec![
            ("Z".into(), z),
            ("L_w".into(), l_w),
            ("L_g".into(), l_g),
            ("|A|".into(), a_norm),
        ],
    })
}

/// Runs all three checks.
pub fn verify_all(model: &SpectraKan, settings: &VerifySettings) -> Result<VerificationReport, VerifyError> {
    let mut report = verify_edge_lipschitz(settings.lemma_trials, settings.lemma_samples, settings.seed)?;
    report.extend(verify_modulation_lipschitz(model, settings)?);
    report.extend(verify_quadrature(settings.quadrature_reference, settings.seed)?);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use proptest::prelude::*;
    use rand::Rng;

    fn small_model() -> SpectraKan {
        SpectraKan::new(
            ModelConfig {
                width: 8,
                attn_dim: 8,
                token_dim: 4,
                layers: 1,
                coarse_layers: 1,
                modes: 3,
                se_reduction: 2,
                ..ModelConfig::default()
            },
            5,
        )
        .unwrap()
    }

    fn small_settings() -> VerifySettings {
        VerifySettings {
            theorem_pairs: 20,
            theorem_probes: 50,
            theorem_grid: 4,
            ..VerifySettings::default()
        }
    }

    #[test]
    fn zero_edge_has_zero_bound() {
        let knots = KnotVector::uniform(-1.0, 1.0, 8, 3).unwrap();
        let edge = KanEdge::new(knots.clone(), vec![0.0; knots.num_basis()], 0.0, 0.0).unwrap();
        let row = lemma_row(&edge, 1000, "zero".into(), 0);
        assert_eq!((row.measured, row.bound, row.passed), (0.0, 0.0, true));
    }

    #[test]
    fn unit_coefficient_bound_is_sixteen() {
        let knots = KnotVector::uniform(0.0, 1.0, 8, 3).unwrap();
        let mut coef = vec![0.0; knots.num_basis()];
        coef[5] = 1.0;
        let edge = KanEdge::new(knots, coef, 0.0, 1.0).unwrap();
        assert!((edge.lipschitz_bound() - 16.0).abs() < 1e-12);
        let row = lemma_row(&edge, 100_000, "unit".into(), 0);
        assert!(row.passed && row.measured > 1.0);
    }

    #[test]
    fn lemma_suite_passes() {
        let r = verify_edge_lipschitz(20, 20_000, 3).unwrap();
        assert!(r.passed() && r.audit());
    }

    #[test]
    fn matrix_norm_bounds_hold() {
        let model = small_model();
        let lin = &model.gml.key;
        let (s, i2) = (spectral_norm(lin, &model.params), inf_to_two_norm(lin, &model.params));
        let mut rng = seed::rng(0, "norms");
        for _ in 0..100 {
            let x: Vec<f64> = (0..lin.fan_in).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let y: Vec<f64> = (0..lin.fan_in).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let (fx, fy) = (lin.eval(&model.params, &x), lin.eval(&model.params, &y));
            let d: Vec<f64> = fx.iter().zip(&fy).map(|(a, b)| a - b).collect();
            let dx: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a - b).collect();
            let dinf = dx.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(norm2(&d) <= s * norm2(&dx) + 1e-12);
            assert!(norm2(&d) <= i2 * dinf + 1e-12);
        }
    }

    #[test]
    fn modulation_matches_model_forward_pieces() {
        let model = small_model();
        let mut rng = seed::rng(1, "mod");
        let input = ModulationInput::random(&model, 4, &mut rng);
        let m = modulation(&model, &input);
        let mut tape = crate::autodiff::Tape::new();
        let bound = model.params.bind(&mut tape);
        let h = tape.leaf(model.normalize_history(&input.history));
        let z = crate::kan::pool_history(&mut tape, h, model.config.pool).unwrap();
        let t = model.kan.apply(&mut tape, &bound, z).unwrap();
        let f = tape.leaf(Tensor::new(vec![16, model.config.width], input.features.clone()).unwrap());
        let att = model.gml.attention(&mut tape, &bound, t, f).unwrap();
        assert!(tape.value(t).data().iter().zip(&m.token).all(|(a, b)| (a - b).abs() < 1e-12));
        assert!(tape.value(att.context).data().iter().zip(&m.context).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn zeroed_maps_give_zero_ratios() {
        let mut model = small_model();
        for layer in model.kan.layers.clone() {
            for id in [layer.w_b, layer.w_s] {
                model.params.get_mut(id).data_mut().fill(0.0);
            }
        }
        for lin in [model.gml.key.clone(), model.gml.value.clone()] {
            model.params.get_mut(lin.weight).data_mut().fill(0.0);
        }
        let r = verify_modulation_lipschitz(&model, &small_settings()).unwrap();
        assert!(r.rows_for("modulation_token").all(|row| row.measured == 0.0));
        assert!(r.rows_for("modulation_context").all(|row| row.measured == 0.0));
    }

    #[test]
    fn modulation_suite_passes() {
        let r = verify_modulation_lipschitz(&small_model(), &small_settings()).unwrap();
        assert!(r.passed() && r.audit(), "{}", r.to_table());
    }

    #[test]
    fn constant_fields_integrate_exactly() {
        for n in [8, 16, 32] {
            let a = discrete_attention_on_grid(|_, _| 2.0, |_, _| vec![0.25, -1.0], n, true);
            assert!((a[0] - 0.25).abs() < 1e-15 && (a[1] + 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn linear_weight_approaches_five_ninths() {
        let errs: Vec<f64> = [4, 8, 16, 32, 64]
            .iter()
            .map(|&n| (discrete_attention_on_grid(|x, _| 1.0 + x, |x, _| vec![x], n, true)[0] - 5.0 / 9.0).abs())
            .collect();
        assert!(errs.windows(2).all(|w| w[1] < w[0]));
        assert!(errs[4] < 1e-4);
    }

    #[test]
    fn quadrature_suite_passes() {
        let r = verify_quadrature(512, 0).unwrap();
        assert!(r.passed() && r.audit(), "{}", r.to_table());
        let corner = r.rows.iter().find(|row| row.case == "corner:slope").unwrap();
        assert!(corner.measured > 0.7 && corner.measured < 1.3, "{}", corner.measured);
    }

    #[test]
    fn coarse_reference_is_rejected() {
        assert!(matches!(verify_quadrature(128, 0), Err(VerifyError::Resolution { .. })));
    }

    #[test]
    fn table_and_csv_list_checks() {
        let r = verify_edge_lipschitz(3, 1000, 0).unwrap();
        assert!(r.to_table().contains("edge_lipschitz"));
        assert_eq!(r.to_csv().lines().count(), 4);
    }

    proptest! {
        #[test]
        fn tampered_rows_fail_audit(measured in 0.0..10.0f64, bound in 0.0..10.0f64) {
            let mut row = ReportRow::new("x", "y", measured, bound, Relation::AtMost, 0);
            prop_assert_eq!(row.passed, measured <= bound);
            row.passed = !row.passed;
            let report = VerificationReport { rows: vec![row], constants: vec![] };
            prop_assert!(!report.audit());
        }
    }
}
