use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context as _, Result};
use cfmw_core::metrics::{mean_ap_images, parse_detections, parse_ground_truth, psnr, ssim, ImageBoxes, SsimParams};

use super::read_image;
use crate::output::Staged;
use crate::Context;

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Reference images, paired by position with --candidate.
    #[arg(long)]
    pub reference: Vec<PathBuf>,
    #[arg(long)]
    pub candidate: Vec<PathBuf>,
    /// Detection files (`class x1 y1 x2 y2 confidence` per line), one per image.
    #[arg(long)]
    pub detections: Vec<PathBuf>,
    /// Ground-truth files (`class x1 y1 x2 y2` per line), paired with --detections.
    #[arg(long)]
    pub ground_truth: Vec<PathBuf>,
    /// Keep only boxes with area below this value.
    #[arg(long)]
    pub max_area: Option<f64>,
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn check_pairs(a: &[PathBuf], b: &[PathBuf], what: &str) -> Result<()> {
    if a.len() != b.len() {
        bail!("{what}: {} file(s) against {} file(s)", a.len(), b.len());
    }
    Ok(())
}

pub fn run(a: &Args, ctx: &Context) -> Result<()> {
    let s = &ctx.settings;
    let refs: Vec<PathBuf> = s.list(a.reference.clone(), "reference")?;
    let cands: Vec<PathBuf> = s.list(a.candidate.clone(), "candidate")?;
    let dets: Vec<PathBuf> = s.list(a.detections.clone(), "detections")?;
    let gts: Vec<PathBuf> = s.list(a.ground_truth.clone(), "ground_truth")?;
    let max_area: Option<f64> = s.optional(a.max_area, "max_area")?;
    s.finish()?;
    check_pairs(&refs, &cands, "unpaired images")?;
    check_pairs(&dets, &gts, "unpaired detection files")?;
    if refs.is_empty() && dets.is_empty() {
        bail!("nothing to evaluate: pass --reference/--candidate and/or --detections/--ground-truth");
    }
    if max_area.is_some_and(|m| m.is_nan() || m <= 0.0) {
        bail!("--max-area must be positive");
    }

    let mut rows: Vec<(&str, f64)> = Vec::new();
    if !refs.is_empty() {
        let (mut p_sum, mut s_sum) = (0.0, 0.0);
        let params = SsimParams::default();
        for (r, c) in refs.iter().zip(&cands) {
            let (x, y) = (read_image(r)?, read_image(c)?);
            let ctx = || format!("{} vs {}", r.display(), c.display());
            p_sum += psnr(&x, &y, 8).with_context(ctx)?;
            s_sum += ssim(&x, &y, &params).with_context(ctx)?;
        }
        let n = refs.len() as f64;
        rows.push(("psnr", p_sum / n));
        rows.push(("ssim", s_sum / n));
    }
    if !dets.is_empty() {
        let keep = |area: f64| max_area.is_none_or(|m| area < m);
        let mut per_image = Vec::with_capacity(dets.len());
        for (d, g) in dets.iter().zip(&gts) {
            let mut dv = parse_detections(&read_text(d)?).with_context(|| format!("parsing {}", d.display()))?;
            let mut gv = parse_ground_truth(&read_text(g)?).with_context(|| format!("parsing {}", g.display()))?;
            dv.retain(|b| keep(b.bbox.area()));
            gv.retain(|b| keep(b.bbox.area()));
            per_image.push((dv, gv));
        }
        let images: Vec<ImageBoxes> =
            per_image.iter().map(|(d, g)| ImageBoxes { detections: d, ground_truth: g }).collect();
        let m = mean_ap_images(&images);
        rows.push(("map50", m.map50));
        rows.push(("map75", m.map75));
        rows.push(("map", m.map));
    }

    let mut csv = String::from("metric,value\n");
    for (k, v) in &rows {
        csv.push_str(&format!("{k},{v}\n"));
        println!("eval: {k} = {v}");
    }
    let mut staged = Staged::new();
    staged.add(ctx.out.join("metrics.csv"), csv.into_bytes());
    staged.commit()
}
