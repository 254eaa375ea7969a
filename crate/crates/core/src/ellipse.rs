use crate::raster::Mask;

const BOUNDARY_TOL: f64 = 1e-9;

/// Rasterizes a filled, rotated ellipse. Pixel `(r, c)` has its center at
/// `x = c, y = r`; it is set when the center lies inside or on the ellipse.
/// `rotation` turns the semi-major axis counter-clockwise from the x axis.
pub fn ellipse_to_mask(
    center_x: f64,
    center_y: f64,
    semi_major: f64,
    semi_minor: f64,
    rotation: f64,
    height: usize,
    width: usize,
) -> Mask {
    let mut mask = Mask::zeros(height, width);
    if height == 0 || width == 0 {
        return mask;
    }
    let (s, c) = libm::sincos(rotation);
    let reach = semi_major.max(semi_minor) + 1.0;
    let clamp = |v: f64, hi: usize| -> usize { v.max(0.0).min((hi - 1) as f64) as usize };
    let r0 = clamp(libm::floor(center_y - reach), height);
    let r1 = clamp(libm::ceil(center_y + reach), height);
    let c0 = clamp(libm::floor(center_x - reach), width);
    let c1 = clamp(libm::ceil(center_x + reach), width);
    for r in r0..=r1 {
        for col in c0..=c1 {
            let dx = col as f64 - center_x;
            let dy = r as f64 - center_y;
            let u = (dx * c + dy * s) / semi_major;
            let v = (-dx * s + dy * c) / semi_minor;
            if u * u + v * v <= 1.0 + BOUNDARY_TOL {
                mask.set(r, col, true);
            }
        }
    }
    mask
}
