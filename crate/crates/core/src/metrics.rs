//! Error metrics between predicted and reference trajectories.
//!
//! Fourier bands split the error spectrum by `|k|` with edges at
//! `floor(K/3)` and `floor(2K/3)`, `K = floor(max(X, Y)/2)`: low is
//! `|k| ≤ e1`, middle `e1 < |k| ≤ e2`, high everything above. The bands cover
//! every mode, so their mean squares sum to the full-field mean square.

use std::fmt::Write as _;

use num_complex::Complex64;
use rayon::prelude::*;
use thiserror::Error;

use crate::data::TrajectorySet;
use crate::fft::{fft, signed_frequency};

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("prediction shape {pred:?} does not match reference shape {truth:?}")]
    Shape { pred: [usize; 5], truth: [usize; 5] },
    #[error("empty trajectories")]
    Empty,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MetricSet {
    pub rmse: f64,
    pub nrmse: f64,
    pub max_rms: f64,
    pub conserved_rmse: f64,
    pub boundary_rmse: f64,
    pub fourier_low: f64,
    pub fourier_mid: f64,
    pub fourier_high: f64,
    pub relative_l2: f64,
}

impl MetricSet {
    pub const NAMES: [&'static str; 9] = [
        "rmse",
        "nrmse",
        "max_rms",
        "conserved_rmse",
        "boundary_rmse",
        "fourier_low",
        "fourier_mid",
        "fourier_high",
        "relative_l2",
    ];

    pub fn values(&self) -> [f64; 9] {
        [
            self.rmse,
            self.nrmse,
            self.max_rms,
            self.conserved_rmse,
            self.boundary_rmse,
            self.fourier_low,
            self.fourier_mid,
            self.fourier_high,
            self.relative_l2,
        ]
    }
}

/// Per-field statistics for one `(sample, step, channel)`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct FieldStats {
    pub err_sq: f64,
    pub truth_sq: f64,
    pub boundary_sq: f64,
    /// Spatial integral of the error.
    pub integral: f64,
    /// `Σ|Ê|²/N²` per band.
    pub bands: [f64; 3],
}

#[derive(Clone, Debug)]
pub struct MetricReport {
    pub shape: [usize; 5],
    pub per_channel: Vec<MetricSet>,
    pub aggregate: MetricSet,
    /// Indexed `[(s·T + t)·C + c]`.
    pub fields: Vec<FieldStats>,
    points: usize,
    boundary_points: usize,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else if num == 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}

/// Band index of mode `(kx, ky)` on an `x × y` grid.
pub fn fourier_band(kx: usize, ky: usize, x: usize, y: usize) -> usize {
    let k_max = x.max(y) / 2;
    let (e1, e2) = (k_max / 3, 2 * k_max / 3);
    let fx = signed_frequency(kx, x) as f64;
    let fy = signed_frequency(ky, y) as f64;
    let k = (fx * fx + fy * fy).sqrt();
    if k <= e1 as f64 {
        0
    } else if k <= e2 as f64 {
        1
    } else {
        2
    }
}

/// Grid points with any non-degenerate index at `0` or `extent − 1`.
pub fn is_boundary(i: usize, j: usize, x: usize, y: usize) -> bool {
    let edge = |k: usize, n: usize| n > 1 && (k == 0 || k == n - 1);
    edge(i, x) || edge(j, y)
}

fn field_stats(pred: &[f64], truth: &[f64], x: usize, y: usize, channels: usize, c: usize, cell: f64) -> FieldStats {
    let n = x * y;
    let mut st = FieldStats::default();
    let mut spec = vec![Complex64::new(0.0, 0.0); n];
    for i in 0..x {
        for j in 0..y {
            let p = (i * y + j) * channels + c;
            let e = pred[p] - truth[p];
            st.err_sq += e * e;
            st.truth_sq += truth[p] * truth[p];
            st.integral += e * cell;
            if is_boundary(i, j, x, y) {
                st.boundary_sq += e * e;
            }
            spec[i * y + j] = Complex64::new(e, 0.0);
        }
    }
    if y > 1 {
        for row in spec.chunks_mut(y) {
            fft(row);
        }
    }
    if x > 1 {
        let mut col = vec![Complex64::new(0.0, 0.0); x];
        for j in 0..y {
            for i in 0..x {
                col[i] = spec[i * y + j];
            }
            fft(&mut col);
            for i in 0..x {
                spec[i * y + j] = col[i];
            }
        }
    }
    let norm = 1.0 / (n * n) as f64;
    for i in 0..x {
        for j in 0..y {
            st.bands[fourier_band(i, j, x, y)] += spec[i * y + j].norm_sqr() * norm;
        }
    }
    st
}

/// Computes every metric; `dx` is the grid spacing used for the spatial integral.
pub fn evaluate(pred: &TrajectorySet, truth: &TrajectorySet, dx: f64) -> Result<MetricReport, MetricError> {
    evaluate_raw(pred.shape(), pred.data(), truth.shape(), truth.data(), dx)
}

pub fn evaluate_raw(
    pred_shape: [usize; 5],
    pred: &[f64],
    truth_shape: [usize; 5],
    truth: &[f64],
    dx: f64,
) -> Result<MetricReport, MetricError> {
    if pred_shape != truth_shape {
        return Err(MetricError::Shape {
            pred: pred_shape,
            truth: truth_shape,
        });
    }
    let [s, t, x, y, c] = pred_shape;
    if s * t * x * y * c == 0 {
        return Err(MetricError::Empty);
    }
    let frame = x * y * c;
    let dims = (x > 1) as i32 + (y > 1) as i32;
    let cell = dx.powi(dims);
    let fields: Vec<FieldStats> = (0..s * t)
        .into_par_iter()
        .flat_map_iter(|f| {
            let p = &pred[f * frame..(f + 1) * frame];
            let q = &truth[f * frame..(f + 1) * frame];
            (0..c).map(move |ch| field_stats(p, q, x, y, c, ch, cell))
        })
        .collect();
    let points = x * y;
    let boundary_points = (0..x)
        .flat_map(|i| (0..y).map(move |j| (i, j)))
        .filter(|&(i, j)| is_boundary(i, j, x, y))
        .count();
    let mut report = MetricReport {
        shape: pred_shape,
        per_channel: Vec::with_capacity(c),
        aggregate: MetricSet::default(),
        fields,
        points,
        boundary_points,
    };
    for ch in 0..c {
        let set = report.reduce(|k| k == ch);
        report.per_channel.push(set);
    }
    report.aggregate = report.reduce(|_| true);
    Ok(report)
}

impl MetricReport {
    fn reduce(&self, channel: impl Fn(usize) -> bool) -> MetricSet {
        let [s, t, _, _, c] = self.shape;
        let mut err = 0.0;
        let mut tru = 0.0;
        let mut bnd = 0.0;
        let mut integ = 0.0;
        let mut bands = [0.0; 3];
        let mut fields = 0usize;
        let mut max_rms: f64 = 0.0;
        for si in 0..s {
            let mut sample_err = 0.0;
            let mut sample_fields = 0usize;
            for ti in 0..t {
                for ch in (0..c).filter(|&k| channel(k)) {
                    let f = &self.fields[(si * t + ti) * c + ch];
                    err += f.err_sq;
                    tru += f.truth_sq;
                    bnd += f.boundary_sq;
                    integ += f.integral * f.integral;
                    for b in 0..3 {
                        bands[b] += f.bands[b];
                    }
                    sample_err += f.err_sq;
                    sample_fields += 1;
                    fields += 1;
                }
            }
            max_rms = max_rms.max((sample_err / (sample_fields * self.points) as f64).sqrt());
        }
        let nf = fields as f64;
        let rmse = (err / (nf * self.points as f64)).sqrt();
        let truth_rms = (tru / (nf * self.points as f64)).sqrt();
        MetricSet {
            rmse,
            nrmse: ratio(rmse, truth_rms),
            max_rms,
            conserved_rmse: (integ / nf).sqrt(),
            boundary_rmse: (bnd / (nf * self.boundary_points.max(1) as f64)).sqrt(),
            fourier_low: (bands[0] / nf).sqrt(),
            fourier_mid: (bands[1] / nf).sqrt(),
            fourier_high: (bands[2] / nf).sqrt(),
            relative_l2: ratio(err.sqrt(), tru.sqrt()),
        }
    }

    /// One row per `(sample, step, channel)`.
    pub fn to_csv(&self) -> String {
        let [s, t, _, _, c] = self.shape;
        let n = self.points as f64;
        let nb = self.boundary_points.max(1) as f64;
        let mut out = String::from("sample,step,channel,rmse,nrmse,boundary_rmse,conserved_error,fourier_low,fourier_mid,fourier_high\n");
        for si in 0..s {
            for ti in 0..t {
                for ch in 0..c {
                    let f = &self.fields[(si * t + ti) * c + ch];
                    let rmse = (f.err_sq / n).sqrt();
                    let _ = writeln!(
                        out,
                        "{si},{ti},{ch},{rmse:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e}",
                        ratio(rmse, (f.truth_sq / n).sqrt()),
                        (f.boundary_sq / nb).sqrt(),
                        f.integral.abs(),
                        f.bands[0].sqrt(),
                        f.bands[1].sqrt(),
                        f.bands[2].sqrt(),
                    );
                }
            }
        }
        out
    }

    /// Plain-text JSON-style summary of the aggregate and per-channel metrics.
    pub fn summary(&self) -> String {
        fn block(out: &mut String, name: &str, m: &MetricSet, last: bool) {
            let body: Vec<String> = MetricSet::NAMES
                .iter()
                .zip(m.values())
                .map(|(k, v)| format!("\"{k}\": {v:.9e}"))
                .collect();
            let _ = writeln!(out, "  \"{name}\": {{{}}}{}", body.join(", "), if last { "" } else { "," });
        }
        let mut out = String::from("{\n");
        let _ = writeln!(out, "  \"shape\": {:?},", self.shape);
        block(&mut out, "aggregate", &self.aggregate, self.per_channel.is_empty());
        for (i, m) in self.per_channel.iter().enumerate() {
            block(&mut out, &format!("channel_{i}"), m, i + 1 == self.per_channel.len());
        }
        out.push_str("}\n");
        out
    }

    /// rms error per rollout step, over samples and channels.
    pub fn rms_by_step(&self) -> Vec<f64> {
        let [s, t, _, _, c] = self.shape;
        (0..t)
            .map(|ti| {
                let e: f64 = (0..s)
                    .flat_map(|si| (0..c).map(move |ch| (si * t + ti) * c + ch))
                    .map(|k| self.fields[k].err_sq)
                    .sum();
                (e / (s * c * self.points) as f64).sqrt()
            })
            .collect()
    }
}
