//! Synthetic weather degradation.
//!
//! Images are `H×W×C` tensors in `[0, 255]`; masks and depth maps are `H×W`.
//! Rain and snow are alpha blends `J·(1 − M) + O·M`; fog is the
//! atmospheric scattering model with constant attenuation along each ray,
//! `J·e^{−βd} + L∞·(1 − e^{−βd})`. Every compositor clamps to `[0, 255]`.

use std::fmt;
use std::str::FromStr;

use crate::error::{arg_err, shape_err, Error, Result};
use crate::tensor::{SeededRng, Tensor};

pub const PIXEL_MAX: f64 = 255.0;

fn image_dims(j: &Tensor) -> Result<(usize, usize, usize)> {
    match j.shape() {
        &[h, w, c] => Ok((h, w, c)),
        s => shape_err(format!("image must be H×W×C, got {s:?}")),
    }
}

fn check_map(m: &Tensor, h: usize, w: usize, what: &str) -> Result<()> {
    if m.shape() != [h, w] {
        return shape_err(format!("{what} must be {h}×{w}, got {:?}", m.shape()));
    }
    Ok(())
}

/// `j·(1 − m) + o·m` with the mask broadcast over channels and clamped to `[0, 1]`.
pub fn blend(j: &Tensor, mask: &Tensor, overlay: &Tensor) -> Result<Tensor> {
    let (h, w, c) = image_dims(j)?;
    check_map(mask, h, w, "mask")?;
    if overlay.shape() != j.shape() {
        return shape_err(format!("overlay {:?} does not match image {:?}", overlay.shape(), j.shape()));
    }
    let mut out = Vec::with_capacity(j.len());
    for ((px, ov), &m) in j.data().chunks_exact(c).zip(overlay.data().chunks_exact(c)).zip(mask.data()) {
        let m = m.clamp(0.0, 1.0);
        out.extend(px.iter().zip(ov).map(|(&a, &b)| (a * (1.0 - m) + b * m).clamp(0.0, PIXEL_MAX)));
    }
    Ok(Tensor::from_parts(j.shape().to_vec(), out))
}

pub fn apply_rain(j: &Tensor, m_r: &Tensor, r: &Tensor) -> Result<Tensor> {
    blend(j, m_r, r)
}

pub fn apply_snow(j: &Tensor, m_s: &Tensor, s: &Tensor) -> Result<Tensor> {
    blend(j, m_s, s)
}

pub fn apply_fog(j: &Tensor, d: &Tensor, beta: f64, l_inf: f64) -> Result<Tensor> {
    let (h, w, c) = image_dims(j)?;
    check_map(d, h, w, "depth map")?;
    if !(beta >= 0.0 && beta.is_finite()) {
        return arg_err(format!("attenuation must be a finite nonnegative number, got {beta}"));
    }
    if d.data().iter().any(|&v| v < 0.0) {
        return arg_err("depth must be nonnegative");
    }
    let mut out = Vec::with_capacity(j.len());
    for (px, &depth) in j.data().chunks_exact(c).zip(d.data()) {
        let od = beta * depth;
        let (t, haze) = ((-od).exp(), -(-od).exp_m1());
        out.extend(px.iter().map(|&v| (v * t + l_inf * haze).clamp(0.0, PIXEL_MAX)));
    }
    Ok(Tensor::from_parts(j.shape().to_vec(), out))
}

/// A generated precipitation layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Precipitation {
    /// `H×W` soft alpha in `[0, 1]`
    pub mask: Tensor,
    /// `H×W×3` overlay colour
    pub overlay: Tensor,
    /// Number of streaks or flakes drawn.
    pub count: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RainParams {
    /// Streak seed probability per pixel, in `(0, 1]`.
    pub density: f64,
    /// Streak direction in degrees; 90 is straight down.
    pub angle_deg: f64,
    pub streak_len: f64,
}

impl Default for RainParams {
    fn default() -> Self {
        Self { density: 0.01, angle_deg: 80.0, streak_len: 12.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SnowParams {
    /// Flake probability per pixel, in `(0, 1]`.
    pub density: f64,
    pub radius_min: f64,
    pub radius_max: f64,
}

impl Default for SnowParams {
    fn default() -> Self {
        Self { density: 0.004, radius_min: 0.8, radius_max: 2.5 }
    }
}

const RAIN_COLOR: [f64; 3] = [228.0, 230.0, 235.0];
const SNOW_COLOR: [f64; 3] = [236.0, 242.0, 255.0];

fn check_density(density: f64, h: usize, w: usize) -> Result<()> {
    if !(density > 0.0 && density <= 1.0) {
        return arg_err(format!("density must lie in (0, 1], got {density}"));
    }
    if h == 0 || w == 0 {
        return arg_err("image size must be positive");
    }
    Ok(())
}

fn overlay(h: usize, w: usize, color: [f64; 3]) -> Tensor {
    let data = (0..h * w).flat_map(|_| color).collect();
    Tensor::from_parts(vec![h, w, 3], data)
}

fn deposit(mask: &mut [f64], w: usize, h: usize, x: isize, y: isize, v: f64) {
    if v > 0.0 && x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h {
        let cell = &mut mask[y as usize * w + x as usize];
        *cell = cell.max(v);
    }
}

/// Rain streaks: every pixel seeds a streak with probability `density`;
/// streaks are anti-aliased segments of the given length and angle.
pub fn gen_rain(h: usize, w: usize, seed: u64, p: &RainParams) -> Result<Precipitation> {
    check_density(p.density, h, w)?;
    if !(p.streak_len >= 0.0 && p.streak_len.is_finite() && p.angle_deg.is_finite()) {
        return arg_err("streak length must be finite and nonnegative");
    }
    let mut rng = SeededRng::derive(seed, 0x7261_696e);
    let theta = p.angle_deg.to_radians();
    let snap = |v: f64| if v.abs() < 1e-12 { 0.0 } else { v };
    let (dx, dy) = (snap(theta.cos()), snap(theta.sin()));
    let samples = (2.0 * p.streak_len).ceil() as usize;
    let mut mask = vec![0.0; h * w];
    let mut count = 0;
    for y0 in 0..h {
        for x0 in 0..w {
            if rng.uniform() >= p.density {
                continue;
            }
            count += 1;
            let alpha = 0.5 + 0.4 * rng.uniform();
            for k in 0..=samples {
                let s = if samples == 0 { 0.0 } else { p.streak_len * k as f64 / samples as f64 };
                let (x, y) = (x0 as f64 + s * dx, y0 as f64 + s * dy);
                let (fx, fy) = (x.floor(), y.floor());
                let (ax, ay) = (x - fx, y - fy);
                let (ix, iy) = (fx as isize, fy as isize);
                deposit(&mut mask, w, h, ix, iy, alpha * (1.0 - ax) * (1.0 - ay));
                deposit(&mut mask, w, h, ix + 1, iy, alpha * ax * (1.0 - ay));
                deposit(&mut mask, w, h, ix, iy + 1, alpha * (1.0 - ax) * ay);
                deposit(&mut mask, w, h, ix + 1, iy + 1, alpha * ax * ay);
            }
        }
    }
    Ok(Precipitation { mask: Tensor::from_parts(vec![h, w], mask), overlay: overlay(h, w, RAIN_COLOR), count })
}

/// Snow flakes: soft discs with uniformly drawn radius and sub-pixel centre.
pub fn gen_snow(h: usize, w: usize, seed: u64, p: &SnowParams) -> Result<Precipitation> {
    check_density(p.density, h, w)?;
    if !(p.radius_min > 0.0 && p.radius_min <= p.radius_max && p.radius_max.is_finite()) {
        return arg_err(format!("radius range must satisfy 0 < min ≤ max, got {}..{}", p.radius_min, p.radius_max));
    }
    let mut rng = SeededRng::derive(seed, 0x736e_6f77);
    let mut mask = vec![0.0; h * w];
    let mut count = 0;
    for y0 in 0..h {
        for x0 in 0..w {
            if rng.uniform() >= p.density {
                continue;
            }
            count += 1;
            let cx = x0 as f64 + rng.uniform();
            let cy = y0 as f64 + rng.uniform();
            let r = p.radius_min + (p.radius_max - p.radius_min) * rng.uniform();
            let opacity = 0.6 + 0.4 * rng.uniform();
            let reach = (r + 1.0).ceil() as isize;
            for oy in -reach..=reach {
                for ox in -reach..=reach {
                    let (px, py) = (x0 as isize + ox, y0 as isize + oy);
                    let dist = ((px as f64 + 0.5 - cx).powi(2) + (py as f64 + 0.5 - cy).powi(2)).sqrt();
                    let cover = (r + 0.5 - dist).clamp(0.0, 1.0);
                    deposit(&mut mask, w, h, px, py, opacity * cover);
                }
            }
        }
    }
    Ok(Precipitation { mask: Tensor::from_parts(vec![h, w], mask), overlay: overlay(h, w, SNOW_COLOR), count })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DepthMode {
    Constant(f64),
    /// 0 at the top row, `max_depth` at the bottom row.
    VerticalGradient,
    /// Distance from the image centre, `max_depth` at the corners.
    Radial,
}

impl fmt::Display for DepthMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DepthMode::Constant(v) => write!(f, "constant:{v}"),
            DepthMode::VerticalGradient => f.write_str("vertical_gradient"),
            DepthMode::Radial => f.write_str("radial"),
        }
    }
}

impl FromStr for DepthMode {
    type Err = Error;

    /// `constant:<v>`, `vertical_gradient` or `radial`.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vertical_gradient" => Ok(DepthMode::VerticalGradient),
            "radial" => Ok(DepthMode::Radial),
            _ => match s.strip_prefix("constant:").map(str::parse::<f64>) {
                Some(Ok(v)) => Ok(DepthMode::Constant(v)),
                _ => Err(Error::InvalidArgument(format!("unknown depth mode {s:?}"))),
            },
        }
    }
}

pub fn gen_depth(mode: DepthMode, h: usize, w: usize, max_depth: f64) -> Result<Tensor> {
    if h == 0 || w == 0 {
        return arg_err("depth map size must be positive");
    }
    if !(max_depth >= 0.0 && max_depth.is_finite()) {
        return arg_err(format!("max depth must be finite and nonnegative, got {max_depth}"));
    }
    let (cy, cx) = ((h - 1) as f64 / 2.0, (w - 1) as f64 / 2.0);
    let corner = (cy * cy + cx * cx).sqrt();
    let f = |y: usize, x: usize| match mode {
        DepthMode::Constant(v) => v,
        DepthMode::VerticalGradient if h == 1 => 0.0,
        DepthMode::VerticalGradient => max_depth * y as f64 / (h - 1) as f64,
        DepthMode::Radial if corner == 0.0 => 0.0,
        DepthMode::Radial => max_depth * ((y as f64 - cy).powi(2) + (x as f64 - cx).powi(2)).sqrt() / corner,
    };
    if let DepthMode::Constant(v) = mode {
        if !(v >= 0.0 && v.is_finite()) {
            return arg_err(format!("constant depth must be finite and nonnegative, got {v}"));
        }
    }
    Tensor::from_fn(&[h, w], |k| f(k / w, k % w))
}
