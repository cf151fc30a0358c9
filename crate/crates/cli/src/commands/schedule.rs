use anyhow::Result;
use cfmw_core::diffusion::{make_schedule, ScheduleKind, DEFAULT_BETA_END, DEFAULT_BETA_START, DEFAULT_STEPS};

use crate::output::Staged;
use crate::Context;

#[derive(Debug, clap::Args)]
pub struct Args {
    /// linear, scaled_linear or cosine.
    #[arg(long)]
    pub kind: Option<ScheduleKind>,
    /// Diffusion length T.
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub beta_start: Option<f64>,
    #[arg(long)]
    pub beta_end: Option<f64>,
}

pub fn run(a: &Args, ctx: &Context) -> Result<()> {
    let s = &ctx.settings;
    let kind = s.value(a.kind, "kind", ScheduleKind::Linear)?;
    let steps = s.value(a.steps, "steps", DEFAULT_STEPS)?;
    let start = s.value(a.beta_start, "beta_start", DEFAULT_BETA_START)?;
    let end = s.value(a.beta_end, "beta_end", DEFAULT_BETA_END)?;
    s.finish()?;
    let sched = make_schedule(kind, steps, start, end)?;
    let mut csv = String::from("t,beta,alpha,alpha_bar\n");
    for t in 1..=steps {
        csv.push_str(&format!("{t},{},{},{}\n", sched.beta(t), sched.alpha(t), sched.alpha_bar(t)));
    }
    let mut staged = Staged::new();
    staged.add(ctx.out.join("schedule.csv"), csv.into_bytes());
    staged.commit()?;
    println!("schedule: {} rows of {}, written to {}", steps, kind.name(), ctx.out.display());
    Ok(())
}
