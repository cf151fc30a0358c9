use std::path::PathBuf;

use anyhow::{bail, Context as _, Result};
use cfmw_core::diffusion::{sample_traced, DiffusionConfig, EpsilonPredictor, OraclePredictor, TinyMlpPredictor, DEFAULT_SAMPLING_STEPS};
use cfmw_core::io::encode_ppm;
use cfmw_core::tensor::read_tsr;

use super::{file_stem, from_signed, initial_noise, read_rgb, to_signed, ScheduleArgs};
use crate::output::Staged;
use crate::Context;

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Degraded P6 image used as the conditioning input.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// oracle or tinymlp.
    #[arg(long)]
    pub predictor: Option<String>,
    /// Stored noise tensor for the oracle predictor.
    #[arg(long)]
    pub eps: Option<PathBuf>,
    /// Sampling steps S.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Hidden width of the tinymlp predictor.
    #[arg(long)]
    pub hidden: Option<usize>,
    #[command(flatten)]
    pub schedule: ScheduleArgs,
}

pub fn run(a: &Args, ctx: &Context) -> Result<()> {
    let s = &ctx.settings;
    let input: PathBuf = s.required(a.input.clone(), "input")?;
    let predictor: String = s.value(a.predictor.clone(), "predictor", "oracle".to_string())?;
    let eps_path: Option<PathBuf> = s.optional(a.eps.clone(), "eps")?;
    let steps = s.value(a.steps, "steps", DEFAULT_SAMPLING_STEPS)?;
    let hidden = s.value(a.hidden, "hidden", 16usize)?;
    let sched = a.schedule.resolve(s)?;
    s.finish()?;

    let degraded = read_rgb(&input)?;
    let cond = to_signed(&degraded);
    let pred: Box<dyn EpsilonPredictor> = match predictor.as_str() {
        "oracle" => {
            let Some(path) = eps_path else {
                bail!("predictor oracle needs --eps <noise.tsr>");
            };
            let eps = read_tsr(&path).with_context(|| format!("reading {}", path.display()))?;
            if eps.shape() != cond.shape() {
                bail!("oracle noise {:?} does not match image {:?}", eps.shape(), cond.shape());
            }
            Box::new(OraclePredictor::new(eps))
        }
        "tinymlp" => {
            if hidden == 0 {
                bail!("--hidden must be positive");
            }
            Box::new(TinyMlpPredictor::new(ctx.seed, hidden))
        }
        other => bail!("unknown predictor {other:?} (expected oracle or tinymlp)"),
    };
    let cfg = DiffusionConfig::new(sched, steps)?;
    let x_big = initial_noise(ctx.seed, cond.shape())?;
    let (x0, trace) = sample_traced(&x_big, &cond, &cfg, pred.as_ref())?;

    let stem = file_stem(&input)?;
    let mut csv = String::from("step,t,t_prev,residual_norm\n");
    for r in &trace {
        csv.push_str(&format!("{},{},{},{}\n", r.step, r.t, r.t_prev, r.residual_norm));
    }
    let mut staged = Staged::new();
    staged.add(ctx.out.join(format!("{stem}_restored.ppm")), encode_ppm(&from_signed(&x0))?);
    staged.add(ctx.out.join(format!("{stem}_steps.csv")), csv.into_bytes());
    staged.commit()?;
    println!("restore: {} steps with {predictor}, written to {}", trace.len(), ctx.out.display());
    Ok(())
}
