pub mod bench;
pub mod eval;
pub mod fuse;
pub mod restore;
pub mod schedule;
pub mod synth;

use std::path::Path;

use anyhow::{bail, Context as _, Result};
use cfmw_core::diffusion::{
    make_schedule, NoiseSchedule, ScheduleKind, DEFAULT_BETA_END, DEFAULT_BETA_START, DEFAULT_STEPS,
};
use cfmw_core::io::read_pnm;
use cfmw_core::{SeededRng, Tensor};

use crate::config::Settings;

/// Stream id for the initial diffusion noise `x_T`, shared by `synth` and `restore`.
pub const NOISE_STREAM: u64 = 0x006e_6f69_7365;

/// Noise schedule flags shared by `synth --emit-oracle` and `restore`.
#[derive(Debug, Clone, clap::Args)]
pub struct ScheduleArgs {
    /// linear, scaled_linear or cosine.
    #[arg(long)]
    pub schedule: Option<ScheduleKind>,
    /// Diffusion length T.
    #[arg(long)]
    pub diffusion_steps: Option<usize>,
    #[arg(long)]
    pub beta_start: Option<f64>,
    #[arg(long)]
    pub beta_end: Option<f64>,
}

impl ScheduleArgs {
    pub fn resolve(&self, s: &Settings) -> Result<NoiseSchedule> {
        let kind = s.value(self.schedule, "schedule", ScheduleKind::Linear)?;
        let steps = s.value(self.diffusion_steps, "diffusion_steps", DEFAULT_STEPS)?;
        let start = s.value(self.beta_start, "beta_start", DEFAULT_BETA_START)?;
        let end = s.value(self.beta_end, "beta_end", DEFAULT_BETA_END)?;
        Ok(make_schedule(kind, steps, start, end)?)
    }
}

/// Reads a PNM image with samples rescaled to `0..=255`.
pub fn read_image(path: &Path) -> Result<Tensor> {
    let (img, maxval) = read_pnm(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(if maxval == 255 { img } else { img.scale(255.0 / maxval as f64) })
}

/// Reads an `H×W×3` colour image.
pub fn read_rgb(path: &Path) -> Result<Tensor> {
    let img = read_image(path)?;
    if img.shape()[2] != 3 {
        bail!("{} is not a colour (P6) image", path.display());
    }
    Ok(img)
}

/// `[0, 255] → [−1, 1]`
pub fn to_signed(img: &Tensor) -> Tensor {
    img.map(|p| p / 127.5 - 1.0)
}

/// `[−1, 1] → [0, 255]`
pub fn from_signed(x: &Tensor) -> Tensor {
    x.map(|v| (v + 1.0) * 127.5)
}

/// Initial noise `x_T` for an image shape.
pub fn initial_noise(seed: u64, shape: &[usize]) -> Result<Tensor> {
    Ok(Tensor::randn(shape, &mut SeededRng::derive(seed, NOISE_STREAM))?)
}

pub fn file_stem(path: &Path) -> Result<String> {
    match path.file_stem().and_then(|s| s.to_str()) {
        Some(s) if !s.is_empty() => Ok(s.to_string()),
        _ => bail!("cannot derive a file name from {}", path.display()),
    }
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}
