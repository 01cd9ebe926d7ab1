//! PNG output for heatmaps and bar charts.

use image::{Rgb, RgbImage};
use std::path::Path;

pub const NEUTRAL: [u8; 3] = [255, 255, 255];

/// Blue-white-red color of `t ∈ [-1, 1]`.
pub fn diverging(t: f64) -> [u8; 3] {
    let t = if t.is_finite() { t.clamp(-1.0, 1.0) } else { 0.0 };
    let fade = |v: f64| (255.0 * (1.0 - v)).round() as u8;
    if t >= 0.0 {
        [255, fade(t), fade(t)]
    } else {
        [fade(-t), fade(-t), 255]
    }
}

/// Heatmap of a row-major `h × w` map, normalized symmetrically by its
/// largest magnitude. An all-zero map renders uniformly neutral.
pub fn heatmap_image(map: &[f64], h: usize, w: usize) -> RgbImage {
    assert_eq!(map.len(), h * w, "map size must equal h·w");
    let scale = map.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut img = RgbImage::new(w as u32, h as u32);
    for (i, v) in map.iter().enumerate() {
        let t = if scale > 0.0 { v / scale } else { 0.0 };
        img.put_pixel((i % w) as u32, (i / w) as u32, Rgb(diverging(t)));
    }
    img
}

pub fn render_heatmap(map: &[f64], h: usize, w: usize, path: &Path) -> image::ImageResult<()> {
    heatmap_image(map, h, w).save_with_format(path, image::ImageFormat::Png)
}

const PALETTE: [[u8; 3]; 6] = [
    [214, 39, 40],
    [31, 119, 180],
    [127, 127, 127],
    [44, 160, 44],
    [255, 127, 14],
    [148, 103, 189],
];

/// Grouped bar chart without text: one group per entry of `groups`, one bar
/// per series value, colors in series order. Negative values draw below the
/// zero line.
pub fn bar_chart_image(groups: &[Vec<f64>], bar_w: u32, height: u32) -> RgbImage {
    let series = groups.iter().map(Vec::len).max().unwrap_or(0) as u32;
    let gap = bar_w;
    let width = (groups.len() as u32 * (series * bar_w + gap) + gap).max(1);
    let mut img = RgbImage::from_pixel(width, height, Rgb(NEUTRAL));
    let finite = groups.iter().flatten().filter(|v| v.is_finite());
    let top = finite.clone().fold(0.0f64, |m, v| m.max(*v));
    let bottom = finite.fold(0.0f64, |m, v| m.min(*v));
    let span = (top - bottom).max(f64::MIN_POSITIVE);
    let usable = height.saturating_sub(4) as f64;
    let to_row = |v: f64| 2 + ((top - v) / span * usable).round() as u32;
    let zero = to_row(0.0);
    for (g, values) in groups.iter().enumerate() {
        for (s, v) in values.iter().enumerate() {
            if !v.is_finite() {
                continue;
            }
            let x0 = gap + g as u32 * (series * bar_w + gap) + s as u32 * bar_w;
            let (r0, r1) = if *v >= 0.0 {
                (to_row(*v), zero)
            } else {
                (zero, to_row(*v))
            };
            for y in r0..=r1.min(height - 1) {
                for x in x0..(x0 + bar_w - 1).min(width) {
                    img.put_pixel(x, y, Rgb(PALETTE[s % PALETTE.len()]));
                }
            }
        }
    }
    for x in 0..width {
        img.put_pixel(x, zero.min(height - 1), Rgb([0, 0, 0]));
    }
    img
}

pub fn render_bar_chart(groups: &[Vec<f64>], path: &Path) -> image::ImageResult<()> {
    bar_chart_image(groups, 12, 160).save_with_format(path, image::ImageFormat::Png)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_map_is_neutral() {
        let img = heatmap_image(&[0.0; 6], 2, 3);
        assert!(img.pixels().all(|p| p.0 == NEUTRAL));
    }

    #[test]
    fn single_positive_pixel_is_extreme_warm() {
        let mut map = vec![0.0; 9];
        map[4] = 0.3;
        let img = heatmap_image(&map, 3, 3);
        assert_eq!(img.get_pixel(1, 1).0, [255, 0, 0]);
        assert_eq!(img.get_pixel(0, 0).0, NEUTRAL);
    }

    #[test]
    fn symmetric_normalization() {
        let img = heatmap_image(&[-2.0, 1.0], 1, 2);
        assert_eq!(img.get_pixel(0, 0).0, [0, 0, 255]);
        assert_eq!(img.get_pixel(1, 0).0, [255, 128, 128]);
    }

    #[test]
    fn rendering_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let map: Vec<f64> = (0..64).map(|i| (i as f64 * 0.37).sin()).collect();
        let (a, b) = (dir.path().join("a.png"), dir.path().join("b.png"));
        render_heatmap(&map, 8, 8, &a).unwrap();
        render_heatmap(&map, 8, 8, &b).unwrap();
        assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
        let chart = dir.path().join("c.png");
        render_bar_chart(&[vec![1.0, -0.5], vec![0.2, 0.3]], &chart).unwrap();
        assert!(std::fs::metadata(chart).unwrap().len() > 0);
    }
}
