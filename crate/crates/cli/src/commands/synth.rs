use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use anyhow::{bail, Result};
use cfmw_core::io::encode_ppm;
use cfmw_core::tensor::encode_tsr;
use cfmw_core::weather::{apply_fog, apply_rain, apply_snow, gen_depth, gen_rain, gen_snow, DepthMode, RainParams, SnowParams};
use cfmw_core::SeededRng;

use super::{file_stem, initial_noise, read_rgb, to_signed, ScheduleArgs};
use crate::output::Staged;
use crate::Context;

pub const MANIFEST: &str = "synth_manifest.txt";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Weather {
    Rain,
    Snow,
    Fog,
}

impl FromStr for Weather {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "rain" => Ok(Weather::Rain),
            "snow" => Ok(Weather::Snow),
            "fog" => Ok(Weather::Fog),
            _ => Err(format!("unknown weather {s:?} (expected rain, snow or fog)")),
        }
    }
}

impl fmt::Display for Weather {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Weather::Rain => "rain",
            Weather::Snow => "snow",
            Weather::Fog => "fog",
        })
    }
}

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Clean P6 images; repeat the flag for several.
    #[arg(long)]
    pub input: Vec<PathBuf>,
    /// rain, snow or fog.
    #[arg(long)]
    pub weather: Option<Weather>,
    /// Rain/snow seed probability per pixel.
    #[arg(long)]
    pub density: Option<f64>,
    /// Rain streak angle in degrees.
    #[arg(long)]
    pub angle: Option<f64>,
    #[arg(long)]
    pub streak_len: Option<f64>,
    #[arg(long)]
    pub radius_min: Option<f64>,
    #[arg(long)]
    pub radius_max: Option<f64>,
    /// Fog attenuation coefficient.
    #[arg(long)]
    pub beta: Option<f64>,
    /// Fog atmospheric light.
    #[arg(long)]
    pub airlight: Option<f64>,
    /// constant:<v>, vertical_gradient or radial.
    #[arg(long)]
    pub depth: Option<DepthMode>,
    #[arg(long)]
    pub max_depth: Option<f64>,
    /// Also write the noise that lets an oracle predictor recover each clean image.
    #[arg(long)]
    pub emit_oracle: bool,
    #[command(flatten)]
    pub schedule: ScheduleArgs,
}

pub fn run(a: &Args, ctx: &Context) -> Result<()> {
    let s = &ctx.settings;
    let inputs: Vec<PathBuf> = s.list(a.input.clone(), "input")?;
    let weather: Weather = s.required(a.weather, "weather")?;
    let rain = RainParams {
        density: s.value(a.density, "density", RainParams::default().density)?,
        angle_deg: s.value(a.angle, "angle", RainParams::default().angle_deg)?,
        streak_len: s.value(a.streak_len, "streak_len", RainParams::default().streak_len)?,
    };
    let snow = SnowParams {
        density: s.value(a.density, "density", SnowParams::default().density)?,
        radius_min: s.value(a.radius_min, "radius_min", SnowParams::default().radius_min)?,
        radius_max: s.value(a.radius_max, "radius_max", SnowParams::default().radius_max)?,
    };
    let beta = s.value(a.beta, "beta", 0.08)?;
    let airlight = s.value(a.airlight, "airlight", 230.0)?;
    let depth_mode = s.value(a.depth, "depth", DepthMode::Radial)?;
    let max_depth = s.value(a.max_depth, "max_depth", 10.0)?;
    let emit_oracle = s.switch(a.emit_oracle, "emit_oracle")?;
    let sched = a.schedule.resolve(s)?;
    s.finish()?;
    if inputs.is_empty() {
        bail!("synth needs at least one --input image");
    }

    let params = match weather {
        Weather::Rain => format!("density={}\tangle={}\tstreak_len={}", rain.density, rain.angle_deg, rain.streak_len),
        Weather::Snow => {
            format!("density={}\tradius_min={}\tradius_max={}", snow.density, snow.radius_min, snow.radius_max)
        }
        Weather::Fog => format!("beta={beta}\tairlight={airlight}\tdepth={depth_mode}\tmax_depth={max_depth}"),
    };
    let mut staged = Staged::new();
    let mut manifest = String::new();
    for (i, path) in inputs.iter().enumerate() {
        let clean = read_rgb(path)?;
        let (h, w) = (clean.shape()[0], clean.shape()[1]);
        let layer_seed = SeededRng::derive(ctx.seed, i as u64).next_u64();
        let degraded = match weather {
            Weather::Rain => {
                let p = gen_rain(h, w, layer_seed, &rain)?;
                apply_rain(&clean, &p.mask, &p.overlay)?
            }
            Weather::Snow => {
                let p = gen_snow(h, w, layer_seed, &snow)?;
                apply_snow(&clean, &p.mask, &p.overlay)?
            }
            Weather::Fog => apply_fog(&clean, &gen_depth(depth_mode, h, w, max_depth)?, beta, airlight)?,
        };
        let stem = file_stem(path)?;
        let out_path = ctx.out.join(format!("{stem}_{weather}.ppm"));
        staged.add(out_path.clone(), encode_ppm(&degraded)?);
        manifest.push_str(&format!(
            "clean={}\tdegraded={}\tweather={weather}\tseed={}\tlayer_seed={layer_seed}\t{params}",
            path.display(),
            out_path.display(),
            ctx.seed
        ));
        if emit_oracle {
            let x0 = to_signed(&clean);
            let x_big = initial_noise(ctx.seed, x0.shape())?;
            let ab = sched.alpha_bar(sched.steps());
            let (sa, sn) = (ab.sqrt(), (1.0 - ab).sqrt());
            let eps = x_big.zip_map(&x0, |xt, x| (xt - sa * x) / sn)?;
            let eps_path = ctx.out.join(format!("{stem}_{weather}.eps.tsr"));
            staged.add(eps_path.clone(), encode_tsr(&eps));
            manifest.push_str(&format!("\toracle_eps={}", eps_path.display()));
        }
        manifest.push('\n');
    }
    staged.add(ctx.out.join(MANIFEST), manifest.into_bytes());
    staged.commit()?;
    println!("synth: {} image(s), weather {weather}, written to {}", inputs.len(), ctx.out.display());
    Ok(())
}
