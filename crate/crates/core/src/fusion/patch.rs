use crate::error::{arg_err, shape_err, Result};
use crate::io::Bundle;
use crate::tensor::{SeededRng, Tensor};

/// Linear patch embedding with positional table and optional class token.
///
/// Patches are flattened row-major as `(py, px, channel)`. Row 0 of `pos`
/// belongs to the class token; patch `j` always receives row `j + 1`, so
/// the positional table is `(J+1)×D` whether or not the class token is used.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchEmbedding {
    pub patch: usize,
    pub image_hw: (usize, usize),
    pub in_channels: usize,
    /// `(P²·C_in)×D`
    pub weight: Tensor,
    /// `(J+1)×D`
    pub pos: Tensor,
    /// `D`
    pub cls: Tensor,
    pub use_cls: bool,
}

impl PatchEmbedding {
    pub fn new(
        patch: usize,
        image_hw: (usize, usize),
        in_channels: usize,
        weight: Tensor,
        pos: Tensor,
        cls: Tensor,
        use_cls: bool,
    ) -> Result<Self> {
        let (h, w) = image_hw;
        if patch == 0 || h % patch != 0 || w % patch != 0 {
            return arg_err(format!("image {h}×{w} is not divisible into {patch}×{patch} patches"));
        }
        let j = (h / patch) * (w / patch);
        let d = match weight.shape() {
            &[k, d] if k == patch * patch * in_channels => d,
            s => return shape_err(format!("projection must be {}×D, got {s:?}", patch * patch * in_channels)),
        };
        if pos.shape() != [j + 1, d] {
            return shape_err(format!("positional table must be {}×{d}, got {:?}", j + 1, pos.shape()));
        }
        if cls.shape() != [d] {
            return shape_err(format!("class token must have length {d}"));
        }
        Ok(Self { patch, image_hw, in_channels, weight, pos, cls, use_cls })
    }

    pub fn random(
        patch: usize,
        image_hw: (usize, usize),
        in_channels: usize,
        dim: usize,
        use_cls: bool,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        let (h, w) = image_hw;
        if patch == 0 || h % patch != 0 || w % patch != 0 {
            return arg_err(format!("image {h}×{w} is not divisible into {patch}×{patch} patches"));
        }
        let k = patch * patch * in_channels;
        let j = (h / patch) * (w / patch);
        let weight = Tensor::randn(&[k, dim], rng)?.scale(1.0 / (k as f64).sqrt());
        let pos = Tensor::randn(&[j + 1, dim], rng)?.scale(0.02);
        let cls = Tensor::randn(&[dim], rng)?.scale(0.02);
        Self::new(patch, image_hw, in_channels, weight, pos, cls, use_cls)
    }

    pub fn dim(&self) -> usize {
        self.weight.shape()[1]
    }

    /// Patch-grid extent `(H/P, W/P)`.
    pub fn grid(&self) -> (usize, usize) {
        (self.image_hw.0 / self.patch, self.image_hw.1 / self.patch)
    }

    pub fn num_patches(&self) -> usize {
        let (gh, gw) = self.grid();
        gh * gw
    }

    pub fn to_bundle(&self) -> Bundle {
        let mut b = Bundle::new();
        b.set("patch", self.patch);
        b.set("height", self.image_hw.0);
        b.set("width", self.image_hw.1);
        b.set("in_channels", self.in_channels);
        b.set("use_cls", self.use_cls);
        b.put("weight", self.weight.clone());
        b.put("pos", self.pos.clone());
        b.put("cls", self.cls.clone());
        b
    }

    pub fn from_bundle(b: &Bundle) -> Result<Self> {
        Self::new(
            b.scalar("patch")?,
            (b.scalar("height")?, b.scalar("width")?),
            b.scalar("in_channels")?,
            b.tensor("weight")?.clone(),
            b.tensor("pos")?.clone(),
            b.tensor("cls")?.clone(),
            b.scalar("use_cls")?,
        )
    }
}

/// Splits `image` (`H×W×C_in`) into patches, projects each and adds positions.
/// Returns `J×D`, or `(J+1)×D` with the class token first.
pub fn patch_embed(image: &Tensor, pe: &PatchEmbedding) -> Result<Tensor> {
    let (h, w) = pe.image_hw;
    let c = pe.in_channels;
    if image.shape() != [h, w, c] {
        return shape_err(format!("patch embedding expects {h}×{w}×{c} image, got {:?}", image.shape()));
    }
    let p = pe.patch;
    let (gh, gw) = pe.grid();
    let k = p * p * c;
    let mut flat = Vec::with_capacity(gh * gw * k);
    for gy in 0..gh {
        for gx in 0..gw {
            for py in 0..p {
                let row = ((gy * p + py) * w + gx * p) * c;
                flat.extend_from_slice(&image.data()[row..row + p * c]);
            }
        }
    }
    let patches = Tensor::from_parts(vec![gh * gw, k], flat);
    let projected = patches.matmul(&pe.weight)?;
    let d = pe.dim();
    let j = gh * gw;
    let pos = pe.pos.data();
    let mut out = Vec::with_capacity((j + 1) * d);
    if pe.use_cls {
        out.extend(pe.cls.data().iter().zip(&pos[..d]).map(|(a, b)| a + b));
    }
    for (t, row) in projected.data().chunks_exact(d).enumerate() {
        out.extend(row.iter().zip(&pos[(t + 1) * d..(t + 2) * d]).map(|(a, b)| a + b));
    }
    let rows = if pe.use_cls { j + 1 } else { j };
    Ok(Tensor::from_parts(vec![rows, d], out))
}
