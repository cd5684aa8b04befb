//! Minimal raster plots: a colour-mapped heatmap and a multi-series line plot.

use std::path::Path;

use image::{ImageError, Rgb, RgbImage};

const VIRIDIS: [[u8; 3]; 5] = [[68, 1, 84], [59, 82, 139], [33, 145, 140], [94, 201, 98], [253, 231, 37]];
const BACKGROUND: Rgb<u8> = Rgb([255, 255, 255]);
const AXIS: Rgb<u8> = Rgb([40, 40, 40]);
const GRID: Rgb<u8> = Rgb([225, 225, 225]);

pub const PALETTE: [[u8; 3]; 4] = [[31, 119, 180], [214, 39, 40], [44, 160, 44], [148, 103, 189]];

/// Maps `t ∈ [0, 1]` onto a viridis-like ramp.
pub fn colormap(t: f64) -> Rgb<u8> {
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.0 };
    let pos = t * (VIRIDIS.len() - 1) as f64;
    let i = (pos.floor() as usize).min(VIRIDIS.len() - 2);
    let f = pos - i as f64;
    let mix = |a: u8, b: u8| (a as f64 + f * (b as f64 - a as f64)).round() as u8;
    let (a, b) = (VIRIDIS[i], VIRIDIS[i + 1]);
    Rgb([mix(a[0], b[0]), mix(a[1], b[1]), mix(a[2], b[2])])
}

/// Row-major `rows × cols` values drawn as `cell × cell` pixel blocks,
/// scaled between the finite minimum and maximum.
pub fn heatmap(values: &[f64], rows: usize, cols: usize, cell: usize) -> RgbImage {
    assert_eq!(values.len(), rows * cols, "heatmap size");
    let finite = values.iter().copied().filter(|v| v.is_finite());
    let lo = finite.clone().fold(f64::INFINITY, f64::min);
    let hi = finite.fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let cell = cell.max(1);
    RgbImage::from_fn((cols * cell) as u32, (rows * cell) as u32, |px, py| {
        let (r, c) = (py as usize / cell, px as usize / cell);
        colormap((values[r * cols + c] - lo) / span)
    })
}

fn line(img: &mut RgbImage, (x0, y0): (i64, i64), (x1, y1): (i64, i64), color: Rgb<u8>) {
    let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
    let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
    let (mut x, mut y, mut err) = (x0, y0, dx + dy);
    loop {
        if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
            img.put_pixel(x as u32, y as u32, color);
        }
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

/// Series drawn against their index, sharing one y range; `log_y` plots
/// `log10` of the positive values.
pub fn line_plot(series: &[&[f64]], width: u32, height: u32, log_y: bool) -> RgbImage {
    let mut img = RgbImage::from_pixel(width, height, BACKGROUND);
    let margin = 20i64;
    let (w, h) = (width as i64 - 2 * margin, height as i64 - 2 * margin);
    let tr = |v: f64| if log_y { if v > 0.0 { v.log10() } else { f64::NAN } } else { v };
    let all: Vec<f64> = series.iter().flat_map(|s| s.iter().map(|&v| tr(v))).filter(|v| v.is_finite()).collect();
    let lo = all.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = all.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if lo.is_finite() && hi > lo { (lo, hi) } else { (lo.min(0.0) - 0.5, lo.max(0.0) + 0.5) };
    let longest = series.iter().map(|s| s.len()).max().unwrap_or(1).max(2);
    for k in 0..=4 {
        let y = margin + h * k / 4;
        line(&mut img, (margin, y), (margin + w, y), GRID);
    }
    line(&mut img, (margin, margin), (margin, margin + h), AXIS);
    line(&mut img, (margin, margin + h), (margin + w, margin + h), AXIS);
    for (idx, s) in series.iter().enumerate() {
        let color = Rgb(PALETTE[idx % PALETTE.len()]);
        let pts: Vec<Option<(i64, i64)>> = s
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let v = tr(v);
                v.is_finite().then(|| {
                    let px = margin + (w as f64 * i as f64 / (longest - 1) as f64).round() as i64;
                    let py = margin + h - (h as f64 * (v - lo) / (hi - lo)).round() as i64;
                    (px, py)
                })
            })
            .collect();
        for pair in pts.windows(2) {
            if let [Some(a), Some(b)] = pair {
                line(&mut img, *a, *b, color);
            }
        }
        if let [Some(p)] = pts.as_slice() {
            img.put_pixel(p.0 as u32, p.1 as u32, color);
        }
    }
    img
}

pub fn save_png(img: &RgbImage, path: &Path) -> Result<(), ImageError> {
    img.save_with_format(path, image::ImageFormat::Png)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn colormap_endpoints() {
        assert_eq!(colormap(0.0), Rgb(VIRIDIS[0]));
        assert_eq!(colormap(1.0), Rgb(VIRIDIS[4]));
        assert_eq!(colormap(f64::NAN), Rgb(VIRIDIS[0]));
    }

    #[test]
    fn heatmap_places_extremes() {
        let img = heatmap(&[0.0, 1.0, 0.5, 0.25], 2, 2, 3);
        assert_eq!(img.dimensions(), (6, 6));
        assert_eq!(*img.get_pixel(0, 0), colormap(0.0));
        assert_eq!(*img.get_pixel(4, 1), colormap(1.0));
    }

    #[test]
    fn line_plot_draws_series() {
        let a = [1.0, 2.0, 4.0, 8.0];
        let img = line_plot(&[&a], 120, 80, true);
        let colored = img.pixels().filter(|p| **p == Rgb(PALETTE[0])).count();
        assert!(colored > 50);
    }

    #[test]
    fn png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h.png");
        save_png(&heatmap(&[0.0, 1.0], 1, 2, 4), &path).unwrap();
        let back = image::open(&path).unwrap().to_rgb8();
        assert_eq!(back.dimensions(), (8, 4));
    }
}
