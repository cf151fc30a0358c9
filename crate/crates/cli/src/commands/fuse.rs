use std::path::{Path, PathBuf};

use anyhow::{bail, Context as _, Result};
use cfmw_core::fusion::{fuse, patch_embed, shallow_swap, FusionBlockParams, ModalityFeatures, PatchEmbedding, SwapMode};
use cfmw_core::io::{format_kv, Bundle};
use cfmw_core::tensor::encode_tsr;
use cfmw_core::{SeededRng, Tensor};

use super::read_image;
use crate::output::Staged;
use crate::Context;

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Colour image (P6).
    #[arg(long)]
    pub rgb: Option<PathBuf>,
    /// Thermal image (P5 or P6), same height and width as the colour image.
    #[arg(long)]
    pub thermal: Option<PathBuf>,
    /// Parameter bundle directory with `embed_r.`, `embed_t.` and `block.` entries.
    #[arg(long, conflicts_with = "init")]
    pub params: Option<PathBuf>,
    /// Seed for random parameters; defaults to the global seed.
    #[arg(long)]
    pub init: Option<u64>,
    #[arg(long)]
    pub patch: Option<usize>,
    /// Embedding width D (even).
    #[arg(long)]
    pub dim: Option<usize>,
    /// SSM state size.
    #[arg(long)]
    pub state: Option<usize>,
    /// Also write the parameters used as a bundle under `<out>/params`.
    #[arg(long)]
    pub save_params: bool,
}

struct Params {
    embed_r: PatchEmbedding,
    embed_t: PatchEmbedding,
    block: FusionBlockParams,
}

/// Random embeddings without positional or class terms, so a blank input
/// embeds to zero.
fn random_embedding(patch: usize, hw: (usize, usize), ch: usize, dim: usize, rng: &mut SeededRng) -> Result<PatchEmbedding> {
    let mut pe = PatchEmbedding::random(patch, hw, ch, dim, false, rng)?;
    pe.pos = Tensor::zeros(pe.pos.shape())?;
    pe.cls = Tensor::zeros(pe.cls.shape())?;
    Ok(pe)
}

fn load_params(dir: &Path) -> Result<Params> {
    let b = Bundle::load(dir).with_context(|| format!("loading parameters from {}", dir.display()))?;
    Ok(Params {
        embed_r: PatchEmbedding::from_bundle(&b.scoped("embed_r"))?,
        embed_t: PatchEmbedding::from_bundle(&b.scoped("embed_t"))?,
        block: FusionBlockParams::from_bundle(&b.scoped("block"))?,
    })
}

fn bundle_files(b: &Bundle, dir: &Path, staged: &mut Staged) {
    let mut manifest = b.scalars.clone();
    for (role, t) in &b.tensors {
        let file = format!("{role}.tsr");
        staged.add(dir.join(&file), encode_tsr(t));
        manifest.insert(format!("tensor.{role}"), file);
    }
    staged.add(dir.join("manifest.txt"), format_kv(&manifest).into_bytes());
}

/// Per-channel mean and population variance of a `1×N×C` tensor.
fn channel_stats(t: &Tensor) -> Vec<(f64, f64)> {
    let c = t.shape()[2];
    let n = t.shape()[1] as f64;
    (0..c)
        .map(|k| {
            let col = || t.data().iter().skip(k).step_by(c);
            let mean = col().sum::<f64>() / n;
            let var = col().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            (mean, var)
        })
        .collect()
}

pub fn run(a: &Args, ctx: &Context) -> Result<()> {
    let s = &ctx.settings;
    let rgb_path: PathBuf = s.required(a.rgb.clone(), "rgb")?;
    let thermal_path: PathBuf = s.required(a.thermal.clone(), "thermal")?;
    let params_dir: Option<PathBuf> = s.optional(a.params.clone(), "params")?;
    let init = s.value(a.init, "init", ctx.seed)?;
    let patch = s.value(a.patch, "patch", 8usize)?;
    let dim = s.value(a.dim, "dim", 32usize)?;
    let state = s.value(a.state, "state", 16usize)?;
    let save_params = s.switch(a.save_params, "save_params")?;
    s.finish()?;

    let rgb = read_image(&rgb_path)?.scale(1.0 / 255.0);
    let thermal = read_image(&thermal_path)?.scale(1.0 / 255.0);
    let (hw_r, hw_t) = ((rgb.shape()[0], rgb.shape()[1]), (thermal.shape()[0], thermal.shape()[1]));
    if hw_r != hw_t {
        bail!("images are not aligned: rgb is {}×{}, thermal is {}×{}", hw_r.0, hw_r.1, hw_t.0, hw_t.1);
    }
    let p = match &params_dir {
        Some(dir) => load_params(dir)?,
        None => {
            if dim == 0 || dim % 2 != 0 {
                bail!("--dim must be a positive even number, got {dim}");
            }
            let mut rng = SeededRng::new(init);
            let embed_r = random_embedding(patch, hw_r, rgb.shape()[2], dim, &mut rng)?;
            let embed_t = random_embedding(patch, hw_t, thermal.shape()[2], dim, &mut rng)?;
            let block = FusionBlockParams::random(dim, state, embed_r.grid(), &mut rng)?;
            Params { embed_r, embed_t, block }
        }
    };
    if p.embed_r.grid() != p.embed_t.grid() {
        bail!("embeddings disagree on the patch grid: {:?} vs {:?}", p.embed_r.grid(), p.embed_t.grid());
    }
    let embed = |img: &Tensor, pe: &PatchEmbedding| -> Result<Tensor> {
        let e = patch_embed(img, pe)?;
        let e = if pe.use_cls { e.split(0, 1)?.1 } else { e };
        let (j, d) = (e.shape()[0], e.shape()[1]);
        Ok(e.reshape(&[1, j, d])?)
    };
    let feats = ModalityFeatures::new(embed(&rgb, &p.embed_r)?, embed(&thermal, &p.embed_t)?)?;
    let block = p.block.clone().with_grid(p.embed_r.grid());
    let swapped = shallow_swap(&feats, SwapMode::Residual)?;
    let fused = fuse(&swapped, &block)?;
    if fused.dims() != feats.dims() {
        bail!("fusion changed the feature shape from {:?} to {:?}", feats.dims(), fused.dims());
    }

    let mut csv = String::from("stream,channel,mean,variance\n");
    for (name, t) in [("rgb", fused.rgb()), ("thermal", fused.thermal())] {
        for (k, (m, v)) in channel_stats(t).into_iter().enumerate() {
            csv.push_str(&format!("{name},{k},{m},{v}\n"));
        }
    }
    let mut staged = Staged::new();
    staged.add(ctx.out.join("fused_rgb.tsr"), encode_tsr(fused.rgb()));
    staged.add(ctx.out.join("fused_thermal.tsr"), encode_tsr(fused.thermal()));
    staged.add(ctx.out.join("fuse_stats.csv"), csv.into_bytes());
    if save_params {
        let mut b = Bundle::new();
        b.absorb("embed_r", p.embed_r.to_bundle());
        b.absorb("embed_t", p.embed_t.to_bundle());
        b.absorb("block", block.to_bundle());
        bundle_files(&b, &ctx.out.join("params"), &mut staged);
    }
    staged.commit()?;
    let (bs, n, c) = fused.dims();
    println!("fuse: features {bs}x{n}x{c} in, {bs}x{n}x{c} out, written to {}", ctx.out.display());
    Ok(())
}
