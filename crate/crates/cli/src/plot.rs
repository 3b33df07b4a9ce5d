//! Bare PNG output: grayscale images and unlabeled line plots. The CSV
//! next to each image carries the numbers.

use std::path::Path;

use crate::{create, CliError};

const PALETTE: [[u8; 3]; 6] = [[31, 119, 180], [214, 39, 40], [44, 160, 44], [148, 103, 189], [255, 127, 14], [23, 190, 207]];

fn encode(path: &Path, w: u32, h: u32, color: png::ColorType, data: &[u8]) -> Result<(), CliError> {
    let io = |e: png::EncodingError| CliError::Io { path: path.to_path_buf(), source: std::io::Error::other(e.to_string()) };
    let mut enc = png::Encoder::new(create(path)?, w, h);
    enc.set_color(color);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc.write_header().map_err(io)?;
    writer.write_image_data(data).map_err(io)?;
    writer.finish().map_err(io)
}

pub fn write_gray(path: &Path, width: usize, height: usize, pixels: &[u8]) -> Result<(), CliError> {
    assert_eq!(pixels.len(), width * height);
    encode(path, width as u32, height as u32, png::ColorType::Grayscale, pixels)
}

struct Canvas {
    w: usize,
    h: usize,
    rgb: Vec<u8>,
}

impl Canvas {
    fn new(w: usize, h: usize) -> Self {
        Self { w, h, rgb: vec![255; w * h * 3] }
    }

    fn set(&mut self, x: i64, y: i64, c: [u8; 3]) {
        if x >= 0 && y >= 0 && (x as usize) < self.w && (y as usize) < self.h {
            let i = 3 * (y as usize * self.w + x as usize);
            self.rgb[i..i + 3].copy_from_slice(&c);
        }
    }

    fn line(&mut self, (x0, y0): (i64, i64), (x1, y1): (i64, i64), c: [u8; 3]) {
        let n = (x1 - x0).abs().max((y1 - y0).abs()).max(1);
        for k in 0..=n {
            let t = k as f64 / n as f64;
            self.set(x0 + ((x1 - x0) as f64 * t).round() as i64, y0 + ((y1 - y0) as f64 * t).round() as i64, c);
        }
    }
}

/// Each series is drawn as markers joined by lines, on shared linear axes
/// (log10 on y when `log_y`). Non-finite points are skipped.
pub fn line_plot(path: &Path, series: &[Vec<(f64, f64)>], log_y: bool) -> Result<(), CliError> {
    let (w, h, pad) = (640usize, 400usize, 40i64);
    let ty = |y: f64| if log_y { y.log10() } else { y };
    let pts: Vec<Vec<(f64, f64)>> = series
        .iter()
        .map(|s| s.iter().map(|&(x, y)| (x, ty(y))).filter(|(x, y)| x.is_finite() && y.is_finite()).collect())
        .collect();
    let all = pts.iter().flatten();
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in all {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !(x1 > x0) {
        (x0, x1) = (x0 - 1.0, x0 + 1.0);
    }
    if !(y1 > y0) {
        (y0, y1) = (y0 - 1.0, y0 + 1.0);
    }
    let mut c = Canvas::new(w, h);
    let (pw, ph) = (w as i64 - 2 * pad, h as i64 - 2 * pad);
    let map = |(x, y): (f64, f64)| (pad + ((x - x0) / (x1 - x0) * pw as f64).round() as i64, pad + ph - ((y - y0) / (y1 - y0) * ph as f64).round() as i64);
    let axis = [0, 0, 0];
    c.line((pad, pad + ph), (pad + pw, pad + ph), axis);
    c.line((pad, pad), (pad, pad + ph), axis);
    for (k, s) in pts.iter().enumerate() {
        let col = PALETTE[k % PALETTE.len()];
        for win in s.windows(2) {
            c.line(map(win[0]), map(win[1]), col);
        }
        for &p in s {
            let (px, py) = map(p);
            for d in -2..=2 {
                c.line((px - 2, py + d), (px + 2, py + d), col);
            }
        }
    }
    encode(path, w as u32, h as u32, png::ColorType::Rgb, &c.rgb)
}
