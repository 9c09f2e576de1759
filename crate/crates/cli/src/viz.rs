//! PNG renderings of rasters.
//!
//! Colormaps:
//!
//! * `heat` (scores in [0, 1]): piecewise linear through black (0.0),
//!   blue (0.25), cyan (0.5), yellow (0.75) and red (1.0). Values outside
//!   [0, 1] are clamped; NaN is drawn magenta.
//! * `depth`: grayscale, nearest valid depth white and farthest black;
//!   invalid (zero) depth is magenta.
//! * `labels`: background black, each label a fixed color from a hash of
//!   its value.
//!
//! Candidate markers are white crosses with a black outline.

use image::{Rgb, RgbImage};

const HEAT_STOPS: [(f64, [u8; 3]); 5] = [
    (0.0, [0, 0, 0]),
    (0.25, [0, 0, 255]),
    (0.5, [0, 255, 255]),
    (0.75, [255, 255, 0]),
    (1.0, [255, 0, 0]),
];
const MAGENTA: [u8; 3] = [255, 0, 255];

pub fn heat_color(v: f64) -> [u8; 3] {
    if v.is_nan() {
        return MAGENTA;
    }
    let v = v.clamp(0.0, 1.0);
    for pair in HEAT_STOPS.windows(2) {
        let ((a, ca), (b, cb)) = (pair[0], pair[1]);
        if v <= b {
            let t = (v - a) / (b - a);
            let mix = |i: usize| (ca[i] as f64 + t * (cb[i] as f64 - ca[i] as f64)).round() as u8;
            return [mix(0), mix(1), mix(2)];
        }
    }
    HEAT_STOPS[4].1
}

pub fn label_color(label: u16) -> [u8; 3] {
    if label == 0 {
        return [0, 0, 0];
    }
    let mut z = (label as u32).wrapping_mul(0x9e37_79b9);
    z ^= z >> 15;
    z = z.wrapping_mul(0x85eb_ca6b);
    z ^= z >> 13;
    // Keep every channel visible against the black background.
    [64 | (z as u8), 64 | ((z >> 8) as u8), 64 | ((z >> 16) as u8)]
}

pub fn heat(width: usize, height: usize, values: &[f64]) -> RgbImage {
    RgbImage::from_fn(width as u32, height as u32, |c, r| Rgb(heat_color(values[r as usize * width + c as usize])))
}

pub fn depth(width: usize, height: usize, values: &[f64]) -> RgbImage {
    let valid = values.iter().copied().filter(|d| *d > 0.0);
    let lo = valid.clone().fold(f64::INFINITY, f64::min);
    let hi = valid.fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    RgbImage::from_fn(width as u32, height as u32, |c, r| {
        let d = values[r as usize * width + c as usize];
        if d > 0.0 {
            let g = (255.0 * (1.0 - (d - lo) / span)).round() as u8;
            Rgb([g, g, g])
        } else {
            Rgb(MAGENTA)
        }
    })
}

pub fn labels(width: usize, height: usize, values: &[u16]) -> RgbImage {
    RgbImage::from_fn(width as u32, height as u32, |c, r| Rgb(label_color(values[r as usize * width + c as usize])))
}

/// Draws a cross of arm length 4 at each `[row, col]`.
pub fn mark(img: &mut RgbImage, pixels: &[[usize; 2]]) {
    let (w, h) = (img.width() as i64, img.height() as i64);
    let mut put = |x: i64, y: i64, c: [u8; 3]| {
        if x >= 0 && y >= 0 && x < w && y < h {
            img.put_pixel(x as u32, y as u32, Rgb(c));
        }
    };
    for &[r, c] in pixels {
        let (r, c) = (r as i64, c as i64);
        for k in -5..=5i64 {
            for o in [-1, 1] {
                put(c + k, r + o, [0, 0, 0]);
                put(c + o, r + k, [0, 0, 0]);
            }
        }
        for k in -4..=4i64 {
            put(c + k, r, [255, 255, 255]);
            put(c, r + k, [255, 255, 255]);
        }
    }
}
