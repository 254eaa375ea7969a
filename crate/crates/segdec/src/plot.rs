//! Minimal line plots rendered straight to PNG: unit square axes, a light
//! grid at 0.1 steps and one polyline.

use std::path::Path;

use anyhow::{Context, Result};
use image::{Rgb, RgbImage};

const SIZE: u32 = 400;
const MARGIN: u32 = 30;

fn to_pixel(x: f64, y: f64) -> (i64, i64) {
    let span = f64::from(SIZE - 2 * MARGIN);
    let px = f64::from(MARGIN) + x.clamp(0.0, 1.0) * span;
    let py = f64::from(SIZE - MARGIN) - y.clamp(0.0, 1.0) * span;
    (px.round() as i64, py.round() as i64)
}

fn line(img: &mut RgbImage, (x0, y0): (i64, i64), (x1, y1): (i64, i64), color: Rgb<u8>, thick: bool) {
    let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
    let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
    let (mut x, mut y, mut err) = (x0, y0, dx + dy);
    loop {
        for (ox, oy) in if thick { [(0, 0), (1, 0), (0, 1), (1, 1)] } else { [(0, 0); 4] } {
            let (px, py) = (x + ox, y + oy);
            if (0..i64::from(SIZE)).contains(&px) && (0..i64::from(SIZE)).contains(&py) {
                img.put_pixel(px as u32, py as u32, color);
            }
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

/// Draws `points` (both coordinates in `[0, 1]`) as a connected curve.
pub fn render_curve(points: &[(f64, f64)], diagonal: bool) -> RgbImage {
    let mut img = RgbImage::from_pixel(SIZE, SIZE, Rgb([255, 255, 255]));
    let grid = Rgb([225, 225, 225]);
    for k in 1..10 {
        let t = f64::from(k) / 10.0;
        line(&mut img, to_pixel(t, 0.0), to_pixel(t, 1.0), grid, false);
        line(&mut img, to_pixel(0.0, t), to_pixel(1.0, t), grid, false);
    }
    let axis = Rgb([0, 0, 0]);
    line(&mut img, to_pixel(0.0, 0.0), to_pixel(1.0, 0.0), axis, false);
    line(&mut img, to_pixel(0.0, 0.0), to_pixel(0.0, 1.0), axis, false);
    if diagonal {
        line(&mut img, to_pixel(0.0, 0.0), to_pixel(1.0, 1.0), Rgb([170, 170, 170]), false);
    }
    for pair in points.windows(2) {
        line(&mut img, to_pixel(pair[0].0, pair[0].1), to_pixel(pair[1].0, pair[1].1), Rgb([200, 30, 30]), true);
    }
    img
}

pub fn save_curve(path: &Path, points: &[(f64, f64)], diagonal: bool) -> Result<()> {
    render_curve(points, diagonal).save(path).with_context(|| format!("cannot write {}", path.display()))
}
