//! Seeded synthetic aerial scenes: terrain background, a road band, flood
//! blobs and small colored cars.
//!
//! Draw order is background, road, flood, cars. The class mask records the
//! ground class under each pixel (cars do not change it). Pixel values are
//! quantized to 8 bits at generation time so that the in-memory scene equals
//! what a PNG round trip yields.

use crate::tensor::{Shape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub const CLASS_BACKGROUND: u8 = 0;
pub const CLASS_FLOOD: u8 = 1;
pub const CLASS_ROAD: u8 = 2;
pub const NUM_CLASSES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CarColor {
    White,
    Dark,
    Red,
    /// Not part of the default palette; used to generate out-of-distribution cars.
    Yellow,
}

impl CarColor {
    pub fn rgb(&self) -> [f64; 3] {
        match self {
            CarColor::White => [0.95, 0.95, 0.95],
            CarColor::Dark => [0.08, 0.08, 0.1],
            CarColor::Red => [0.85, 0.1, 0.1],
            CarColor::Yellow => [0.95, 0.85, 0.1],
        }
    }

    /// Class index in the detector's color head (palette order).
    pub fn index(&self) -> usize {
        match self {
            CarColor::White => 0,
            CarColor::Dark => 1,
            CarColor::Red => 2,
            CarColor::Yellow => 3,
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "white" => Some(CarColor::White),
            "dark" => Some(CarColor::Dark),
            "red" => Some(CarColor::Red),
            "yellow" => Some(CarColor::Yellow),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            CarColor::White => "white",
            CarColor::Dark => "dark",
            CarColor::Red => "red",
            CarColor::Yellow => "yellow",
        }
    }
}

const TERRAIN: [f64; 3] = [0.35, 0.5, 0.22];
const ROAD: [f64; 3] = [0.5, 0.5, 0.5];
const WATER: [f64; 3] = [0.2, 0.33, 0.6];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    /// Square image side in pixels.
    pub size: usize,
    /// Inclusive range of flood ellipses per image.
    pub flood_blobs: (usize, usize),
    /// Range of each ellipse semi-axis, in pixels.
    pub flood_radius: (f64, f64),
    pub road_probability: f64,
    /// Inclusive range of road band widths.
    pub road_width: (usize, usize),
    /// Inclusive range of cars per image.
    pub cars: (usize, usize),
    /// Inclusive range of car long/short sides.
    pub car_long: (usize, usize),
    pub car_short: (usize, usize),
    pub palette: Vec<CarColor>,
    /// Per-channel Gaussian pixel noise.
    pub noise: f64,
    /// Per-image uniform jitter of the base colors.
    pub color_jitter: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            size: 64,
            flood_blobs: (1, 2),
            flood_radius: (6.0, 14.0),
            road_probability: 0.8,
            road_width: (6, 12),
            cars: (0, 3),
            car_long: (6, 10),
            car_short: (4, 6),
            palette: vec![CarColor::White, CarColor::Dark, CarColor::Red],
            noise: 0.03,
            color_jitter: 0.04,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CarBox {
    /// Left, top (inclusive) and right, bottom (exclusive) pixel bounds.
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
    pub color: CarColor,
}

impl CarBox {
    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }

    /// Whether the square cell `[cx*cell, (cx+1)*cell) × [cy*cell, …)` overlaps the box.
    pub fn overlaps_cell(&self, row: usize, col: usize, cell: usize) -> bool {
        let (cx0, cy0) = (col * cell, row * cell);
        cx0 < self.x1 && cx0 + cell > self.x0 && cy0 < self.y1 && cy0 + cell > self.y0
    }

    pub fn area(&self) -> usize {
        (self.x1 - self.x0) * (self.y1 - self.y0)
    }

    /// Grid cell containing the box center.
    pub fn center_cell(&self, cell: usize) -> (usize, usize) {
        ((self.y0 + self.y1) / 2 / cell, (self.x0 + self.x1) / 2 / cell)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    /// `(1, 3, size, size)` RGB in `[0, 1]`, 8-bit quantized.
    pub image: Tensor,
    /// Row-major class indices.
    pub mask: Vec<u8>,
    pub boxes: Vec<CarBox>,
}

impl SceneConfig {
    pub fn validate(&self) -> Result<(), String> {
        let p = self.road_probability;
        if !(0.0..=1.0).contains(&p) {
            return Err(format!("road_probability {p} outside [0, 1]"));
        }
        if self.size < 8 {
            return Err("image size must be >= 8".into());
        }
        let ranges = [
            self.flood_blobs,
            self.road_width,
            self.cars,
            self.car_long,
            self.car_short,
        ];
        if ranges.iter().any(|(a, b)| a > b) || self.flood_radius.0 > self.flood_radius.1 {
            return Err("every range must satisfy min <= max".into());
        }
        if self.flood_radius.1 * 2.0 >= self.size as f64 || self.road_width.1 >= self.size {
            return Err("shapes do not fit the image".into());
        }
        if self.cars.1 > 0 && self.palette.is_empty() {
            return Err("cars requested with an empty palette".into());
        }
        if self.car_long.1 >= self.size || self.car_short.0 == 0 {
            return Err("car sizes do not fit the image".into());
        }
        Ok(())
    }

    /// Expected per-class pixel fractions under the generator's sampling
    /// distributions. Flood blobs are assumed not to overlap each other and
    /// flood covers road at the image-wide flood rate.
    pub fn expected_class_fractions(&self) -> [f64; NUM_CLASSES] {
        let s = self.size as f64;
        let mean_blobs = (self.flood_blobs.0 + self.flood_blobs.1) as f64 / 2.0;
        let mean_r = (self.flood_radius.0 + self.flood_radius.1) / 2.0;
        let flood = (mean_blobs * std::f64::consts::PI * mean_r * mean_r / (s * s)).min(1.0);
        let mean_w = (self.road_width.0 + self.road_width.1) as f64 / 2.0;
        let road = self.road_probability * mean_w / s * (1.0 - flood);
        [1.0 - flood - road, flood, road]
    }

    /// Renders scene `index` of the stream identified by `seed`.
    pub fn generate(&self, seed: u64, index: u64) -> Scene {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(index);
        let n = self.size;
        let mut rgb = vec![[0.0f64; 3]; n * n];
        let mut mask = vec![CLASS_BACKGROUND; n * n];
        let jitter = |rng: &mut ChaCha8Rng, c: [f64; 3]| -> [f64; 3] {
            let j = self.color_jitter;
            c.map(|v| v + if j > 0.0 { rng.gen_range(-j..=j) } else { 0.0 })
        };

        let terrain = jitter(&mut rng, TERRAIN);
        rgb.iter_mut().for_each(|p| *p = terrain);

        let mut road_band = None;
        if rng.gen_bool(self.road_probability) {
            let road = jitter(&mut rng, ROAD);
            let width = rng.gen_range(self.road_width.0..=self.road_width.1);
            let start = rng.gen_range(0..=n - width);
            let horizontal = rng.gen_bool(0.5);
            for y in 0..n {
                for x in 0..n {
                    let t = if horizontal { y } else { x };
                    if t >= start && t < start + width {
                        rgb[y * n + x] = road;
                        mask[y * n + x] = CLASS_ROAD;
                    }
                }
            }
            road_band = Some((horizontal, start, width));
        }

        let water = jitter(&mut rng, WATER);
        let blobs = rng.gen_range(self.flood_blobs.0..=self.flood_blobs.1);
        for _ in 0..blobs {
            let rx = rng.gen_range(self.flood_radius.0..=self.flood_radius.1);
            let ry = rng.gen_range(self.flood_radius.0..=self.flood_radius.1);
            let cx = rng.gen_range(rx..=(n as f64 - rx));
            let cy = rng.gen_range(ry..=(n as f64 - ry));
            for y in 0..n {
                for x in 0..n {
                    let dx = (x as f64 + 0.5 - cx) / rx;
                    let dy = (y as f64 + 0.5 - cy) / ry;
                    if dx * dx + dy * dy <= 1.0 {
                        rgb[y * n + x] = water;
                        mask[y * n + x] = CLASS_FLOOD;
                    }
                }
            }
        }

        let mut boxes: Vec<CarBox> = Vec::new();
        let cars = rng.gen_range(self.cars.0..=self.cars.1);
        for _ in 0..cars {
            let color = self.palette[rng.gen_range(0..self.palette.len())];
            let long = rng.gen_range(self.car_long.0..=self.car_long.1);
            let short = rng.gen_range(self.car_short.0..=self.car_short.1);
            // cars align with the road when there is one
            let along_x = match road_band {
                Some((horizontal, _, _)) => horizontal,
                None => rng.gen_bool(0.5),
            };
            let (w, h) = if along_x { (long, short) } else { (short, long) };
            // a few attempts to avoid overlapping an earlier car
            let mut placed = None;
            for _ in 0..20 {
                let (x0, y0) = match road_band {
                    Some((true, start, width)) => {
                        let y_lo = start.saturating_sub(1);
                        let y_hi = (start + width).saturating_sub(h).max(y_lo).min(n - h);
                        (rng.gen_range(0..=n - w), rng.gen_range(y_lo.min(y_hi)..=y_hi))
                    }
                    Some((false, start, width)) => {
                        let x_lo = start.saturating_sub(1);
                        let x_hi = (start + width).saturating_sub(w).max(x_lo).min(n - w);
                        (rng.gen_range(x_lo.min(x_hi)..=x_hi), rng.gen_range(0..=n - h))
                    }
                    None => (rng.gen_range(0..=n - w), rng.gen_range(0..=n - h)),
                };
                let candidate = CarBox {
                    x0,
                    y0,
                    x1: x0 + w,
                    y1: y0 + h,
                    color,
                };
                let clear = boxes.iter().all(|b| {
                    candidate.x1 + 2 <= b.x0
                        || b.x1 + 2 <= candidate.x0
                        || candidate.y1 + 2 <= b.y0
                        || b.y1 + 2 <= candidate.y0
                });
                if clear {
                    placed = Some(candidate);
                    break;
                }
            }
            let Some(b) = placed else { continue };
            let body = color.rgb();
            for y in b.y0..b.y1 {
                for x in b.x0..b.x1 {
                    rgb[y * n + x] = body;
                }
            }
            boxes.push(b);
        }

        let noise = Normal::new(0.0, self.noise.max(0.0)).expect("finite noise");
        let mut data = vec![0.0; 3 * n * n];
        for (p, px) in rgb.iter().enumerate() {
            for (c, v) in px.iter().enumerate() {
                let noisy = if self.noise > 0.0 {
                    v + noise.sample(&mut rng)
                } else {
                    *v
                };
                data[c * n * n + p] = quantize(noisy);
            }
        }
        Scene {
            image: Tensor::from_vec(Shape::new(1, 3, n, n), data).expect("sized"),
            mask,
            boxes,
        }
    }
}

fn quantize(v: f64) -> f64 {
    (v.clamp(0.0, 1.0) * 255.0).round() / 255.0
}

/// Solid-color image of the given RGB, already quantized.
pub fn solid_image(size: usize, rgb: [f64; 3]) -> Tensor {
    let mut data = Vec::with_capacity(3 * size * size);
    for c in rgb {
        data.extend(std::iter::repeat_n(quantize(c), size * size));
    }
    Tensor::from_vec(Shape::new(1, 3, size, size), data).expect("sized")
}

pub fn water_rgb() -> [f64; 3] {
    WATER
}

pub fn terrain_rgb() -> [f64; 3] {
    TERRAIN
}

pub fn road_rgb() -> [f64; 3] {
    ROAD
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_scene() {
        let cfg = SceneConfig::default();
        assert_eq!(cfg.generate(3, 7), cfg.generate(3, 7));
        assert_ne!(cfg.generate(3, 7), cfg.generate(3, 8));
    }

    #[test]
    fn zero_cars_gives_no_boxes() {
        let cfg = SceneConfig {
            cars: (0, 0),
            ..SceneConfig::default()
        };
        for i in 0..20 {
            assert!(cfg.generate(0, i).boxes.is_empty());
        }
    }

    #[test]
    fn boxes_stay_inside_and_apart() {
        let cfg = SceneConfig {
            cars: (3, 3),
            ..SceneConfig::default()
        };
        for i in 0..50 {
            let s = cfg.generate(1, i);
            for b in &s.boxes {
                assert!(b.x1 <= 64 && b.y1 <= 64 && b.x0 < b.x1 && b.y0 < b.y1);
            }
        }
    }

    #[test]
    fn config_validation() {
        assert!(SceneConfig::default().validate().is_ok());
        let bad = SceneConfig {
            road_probability: 1.5,
            ..SceneConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = SceneConfig {
            cars: (3, 1),
            ..SceneConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
