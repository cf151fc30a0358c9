use std::time::Instant;

use anyhow::{bail, Context as _, Result};
use cfmw_core::fusion::{
    attention_fusion_counted, attention_key_dim, count_ops, fuse_counted, AttentionParams, FusionBlockParams, FusionPath,
    ModalityFeatures,
};
use cfmw_core::{SeededRng, Tensor};

use super::log_log_slope;
use crate::output::Staged;
use crate::Context;

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Smallest sequence length as a power of two.
    #[arg(long)]
    pub min_exp: Option<u32>,
    /// Largest sequence length as a power of two.
    #[arg(long)]
    pub max_exp: Option<u32>,
    #[arg(long)]
    pub channels: Option<usize>,
    #[arg(long)]
    pub state: Option<usize>,
    /// Timed repeats per point after one discarded warmup run.
    #[arg(long)]
    pub repeats: Option<usize>,
}

pub struct Row {
    pub path: FusionPath,
    pub n: usize,
    pub ops: u64,
    pub wall_ns: u64,
}

/// Most-square grid with `h·w = 2^e`.
fn grid_for(exp: u32) -> (usize, usize) {
    (1 << (exp / 2), 1 << (exp - exp / 2))
}

fn median(mut v: Vec<u64>) -> u64 {
    v.sort_unstable();
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / 2
    }
}

/// Warmup, then the median of `repeats` timed runs. Every run must count
/// exactly `expect` operations.
fn time(repeats: usize, expect: u64, mut f: impl FnMut() -> Result<u64>) -> Result<u64> {
    let mut samples = Vec::with_capacity(repeats);
    for k in 0..=repeats {
        let start = Instant::now();
        let ops = f()?;
        let ns = start.elapsed().as_nanos() as u64;
        if ops != expect {
            bail!("instrumented count {ops} differs from closed form {expect}");
        }
        if k > 0 {
            samples.push(ns);
        }
    }
    Ok(median(samples))
}

pub fn run(a: &Args, ctx: &Context) -> Result<()> {
    let s = &ctx.settings;
    let min_exp = s.value(a.min_exp, "min_exp", 6u32)?;
    let max_exp = s.value(a.max_exp, "max_exp", 13u32)?;
    let c = s.value(a.channels, "channels", 32usize)?;
    let state = s.value(a.state, "state", 16usize)?;
    let repeats = s.value(a.repeats, "repeats", 5usize)?;
    s.finish()?;
    if max_exp < min_exp || max_exp - min_exp + 1 < 4 {
        bail!("size grid 2^{min_exp}..2^{max_exp} has fewer than 4 points");
    }
    if max_exp > 20 {
        bail!("--max-exp above 20 is not supported");
    }
    if repeats == 0 {
        bail!("--repeats must be at least 1");
    }

    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().context("building bench thread pool")?;
    let rows = pool.install(|| -> Result<Vec<Row>> {
        let mut rows = Vec::new();
        for exp in min_exp..=max_exp {
            let n = 1usize << exp;
            let mut rng = SeededRng::derive(ctx.seed, exp as u64);
            let m = ModalityFeatures::new(Tensor::randn(&[1, n, c], &mut rng)?, Tensor::randn(&[1, n, c], &mut rng)?)?;
            let block = FusionBlockParams::random(c, state, grid_for(exp), &mut rng)?;
            let attn = AttentionParams::random(c, attention_key_dim(c), &mut rng)?;
            for path in FusionPath::ALL {
                let ops = count_ops(path, n, c, state)?;
                let wall_ns = match path {
                    FusionPath::Ss2dFusion => time(repeats, ops, || Ok(fuse_counted(&m, &block)?.1))?,
                    FusionPath::AttentionFusion => time(repeats, ops, || Ok(attention_fusion_counted(&m, &attn)?.1))?,
                };
                rows.push(Row { path, n, ops, wall_ns });
            }
        }
        Ok(rows)
    })?;

    let mut csv = String::from("path,N,C,ops,wall_ns\n");
    for r in &rows {
        csv.push_str(&format!("{},{},{c},{},{}\n", r.path.name(), r.n, r.ops, r.wall_ns));
    }
    let mut slopes = String::from("path,ops_slope,wall_slope\n");
    for path in FusionPath::ALL {
        let sel: Vec<&Row> = rows.iter().filter(|r| r.path == path).collect();
        let ns: Vec<f64> = sel.iter().map(|r| r.n as f64).collect();
        let ops: Vec<f64> = sel.iter().map(|r| r.ops as f64).collect();
        let wall: Vec<f64> = sel.iter().map(|r| r.wall_ns.max(1) as f64).collect();
        let (so, sw) = (log_log_slope(&ns, &ops), log_log_slope(&ns, &wall));
        slopes.push_str(&format!("{},{so},{sw}\n", path.name()));
        println!("bench: {} ops slope {so:.4}, wall slope {sw:.4}", path.name());
    }
    let ratio = |r: &[Row]| r[1].ops as f64 / r[0].ops as f64;
    let last = &rows[rows.len() - 2..];
    println!("bench: attention/ss2d op ratio {:.3} at N={}", ratio(last), last[0].n);

    let mut staged = Staged::new();
    staged.add(ctx.out.join("bench.csv"), csv.into_bytes());
    staged.add(ctx.out.join("bench_slopes.csv"), slopes.into_bytes());
    staged.commit()
}
