//! The gated SS2D fusion stage.
//!
//! With `F̄_R`, `F̄_T` the swapped features and `n(·)` per-token layer norm:
//!
//! ```text
//! Z_m  = MLP_m(n_m(F̄_m))             y_m = SS2D_m(n_m(F̄_m))
//! y'_m = y_m ⊙ SiLU(Z_m)              o   = MLP_out(y'_R + y'_T)
//! F̂_T  = o + F̄_R,  F̂_R = o + F̄_T     (crossed residuals; straight uses F̄_m)
//! F'_m = F̄_m + F̂_m
//! ```

use rayon::prelude::*;

use super::{shallow_swap, ModalityFeatures, SwapMode};
use crate::error::{arg_err, shape_err, Result};
use crate::io::Bundle;
use crate::ssm::{ss2d_counted, Ss2dParams};
use crate::tensor::{silu, SeededRng, Tensor};

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct LayerNorm {
    pub scale: Tensor,
    pub offset: Tensor,
}

impl LayerNorm {
    pub fn identity(c: usize) -> Result<Self> {
        Ok(Self { scale: Tensor::full(&[c], 1.0)?, offset: Tensor::zeros(&[c])? })
    }

    fn check(&self, c: usize) -> Result<()> {
        if self.scale.shape() != [c] || self.offset.shape() != [c] {
            return shape_err(format!("layer norm parameters must have length {c}"));
        }
        Ok(())
    }

    /// Normalizes each row of an `L×C` matrix; `3·C` MACs per row.
    fn forward(&self, x: &Tensor, macs: &mut u64) -> Tensor {
        let c = x.shape()[1];
        let (g, b) = (self.scale.data(), self.offset.data());
        let mut out = Vec::with_capacity(x.len());
        for row in x.data().chunks_exact(c) {
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            out.extend(row.iter().zip(g).zip(b).map(|((v, g), b)| (v - mean) * inv * g + b));
        }
        *macs += 3 * x.len() as u64;
        Tensor::from_parts(x.shape().to_vec(), out)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    /// `in×out`
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    pub fn random(fan_in: usize, fan_out: usize, rng: &mut SeededRng) -> Result<Self> {
        Ok(Self {
            weight: Tensor::randn(&[fan_in, fan_out], rng)?.scale(1.0 / (fan_in as f64).sqrt()),
            bias: Tensor::zeros(&[fan_out])?,
        })
    }

    pub fn zeros(fan_in: usize, fan_out: usize) -> Result<Self> {
        Ok(Self { weight: Tensor::zeros(&[fan_in, fan_out])?, bias: Tensor::zeros(&[fan_out])? })
    }

    fn dims(&self) -> Result<(usize, usize)> {
        match self.weight.shape() {
            &[i, o] if self.bias.shape() == [o] => Ok((i, o)),
            s => shape_err(format!("linear layer weight {s:?} / bias {:?} mismatch", self.bias.shape())),
        }
    }

    fn forward(&self, x: &Tensor, macs: &mut u64) -> Result<Tensor> {
        let (i, o) = self.dims()?;
        let y = x.matmul(&self.weight)?;
        *macs += (x.shape()[0] * i * o) as u64;
        let b = self.bias.data();
        let data = y.data().chunks_exact(o).flat_map(|row| row.iter().zip(b).map(|(v, b)| v + b)).collect();
        Ok(Tensor::from_parts(y.shape().to_vec(), data))
    }
}

/// Three linear layers `C → 2C → 2C → C` with SiLU after the first two.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp3 {
    pub layers: [Linear; 3],
}

impl Mlp3 {
    pub fn random(c: usize, rng: &mut SeededRng) -> Result<Self> {
        let h = 2 * c;
        Ok(Self { layers: [Linear::random(c, h, rng)?, Linear::random(h, h, rng)?, Linear::random(h, c, rng)?] })
    }

    fn check(&self, c: usize) -> Result<()> {
        let dims = [self.layers[0].dims()?, self.layers[1].dims()?, self.layers[2].dims()?];
        if dims[0].0 != c || dims[2].1 != c || dims[0].1 != dims[1].0 || dims[1].1 != dims[2].0 {
            return shape_err(format!("MLP layer widths {dims:?} do not compose C={c} → … → C"));
        }
        Ok(())
    }

    fn forward(&self, x: &Tensor, macs: &mut u64) -> Result<Tensor> {
        let mut h = x.clone();
        for (k, layer) in self.layers.iter().enumerate() {
            h = layer.forward(&h, macs)?;
            if k < 2 {
                *macs += h.len() as u64;
                h = h.map(silu);
            }
        }
        Ok(h)
    }

    /// Per-row MAC count for a `C`-wide MLP with hidden width `2C`.
    pub(crate) fn macs_per_row(c: u64) -> u64 {
        8 * c * c + 4 * c
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ResidualMode {
    /// `F̂_T = o + F̄_R`, `F̂_R = o + F̄_T`.
    #[default]
    Crossed,
    /// `F̂_m = o + F̄_m`.
    Straight,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FusionBlockParams {
    pub channels: usize,
    /// SS2D token grid `(H', W')`; `H'·W'` must equal the sequence length.
    pub grid: (usize, usize),
    pub norm_r: LayerNorm,
    pub norm_t: LayerNorm,
    pub gate_r: Mlp3,
    pub gate_t: Mlp3,
    pub ss2d_r: Ss2dParams,
    pub ss2d_t: Ss2dParams,
    pub out: Mlp3,
    pub residual: ResidualMode,
}

impl FusionBlockParams {
    pub fn random(channels: usize, state_size: usize, grid: (usize, usize), rng: &mut SeededRng) -> Result<Self> {
        if channels == 0 || state_size == 0 {
            return arg_err("channels and state size must be positive");
        }
        Ok(Self {
            channels,
            grid,
            norm_r: LayerNorm::identity(channels)?,
            norm_t: LayerNorm::identity(channels)?,
            gate_r: Mlp3::random(channels, rng)?,
            gate_t: Mlp3::random(channels, rng)?,
            ss2d_r: Ss2dParams::random(channels, state_size, rng)?,
            ss2d_t: Ss2dParams::random(channels, state_size, rng)?,
            out: Mlp3::random(channels, rng)?,
            residual: ResidualMode::Crossed,
        })
    }

    pub fn with_grid(mut self, grid: (usize, usize)) -> Self {
        self.grid = grid;
        self
    }

    pub fn state_size(&self) -> usize {
        self.ss2d_r.state_size()
    }

    fn validate(&self, n: usize, c: usize) -> Result<()> {
        if c != self.channels {
            return shape_err(format!("features have {c} channels, block expects {}", self.channels));
        }
        if self.grid.0 * self.grid.1 != n {
            return shape_err(format!(
                "sequence length {n} does not factor into the configured {}×{} grid",
                self.grid.0, self.grid.1
            ));
        }
        self.norm_r.check(c)?;
        self.norm_t.check(c)?;
        self.gate_r.check(c)?;
        self.gate_t.check(c)?;
        self.out.check(c)?;
        if self.ss2d_r.channels() != c || self.ss2d_t.channels() != c {
            return shape_err("SS2D channel count must equal the block width");
        }
        Ok(())
    }

    pub fn to_bundle(&self) -> Bundle {
        let mut b = Bundle::new();
        b.set("channels", self.channels);
        b.set("grid_h", self.grid.0);
        b.set("grid_w", self.grid.1);
        b.set(
            "residual",
            match self.residual {
                ResidualMode::Crossed => "crossed",
                ResidualMode::Straight => "straight",
            },
        );
        for (name, ln) in [("norm_r", &self.norm_r), ("norm_t", &self.norm_t)] {
            b.put(format!("{name}.scale"), ln.scale.clone());
            b.put(format!("{name}.offset"), ln.offset.clone());
        }
        for (name, mlp) in [("gate_r", &self.gate_r), ("gate_t", &self.gate_t), ("out", &self.out)] {
            for (k, layer) in mlp.layers.iter().enumerate() {
                b.put(format!("{name}.l{k}.weight"), layer.weight.clone());
                b.put(format!("{name}.l{k}.bias"), layer.bias.clone());
            }
        }
        b.absorb("ss2d_r", self.ss2d_r.to_bundle());
        b.absorb("ss2d_t", self.ss2d_t.to_bundle());
        b
    }

    pub fn from_bundle(b: &Bundle) -> Result<Self> {
        let norm = |name: &str| -> Result<LayerNorm> {
            Ok(LayerNorm {
                scale: b.tensor(&format!("{name}.scale"))?.clone(),
                offset: b.tensor(&format!("{name}.offset"))?.clone(),
            })
        };
        let mlp = |name: &str| -> Result<Mlp3> {
            let layer = |k: usize| -> Result<Linear> {
                Ok(Linear {
                    weight: b.tensor(&format!("{name}.l{k}.weight"))?.clone(),
                    bias: b.tensor(&format!("{name}.l{k}.bias"))?.clone(),
                })
            };
            Ok(Mlp3 { layers: [layer(0)?, layer(1)?, layer(2)?] })
        };
        let residual = match b.scalar::<String>("residual")?.as_str() {
            "crossed" => ResidualMode::Crossed,
            "straight" => ResidualMode::Straight,
            other => return Err(crate::Error::Format(format!("unknown residual mode {other:?}"))),
        };
        let p = Self {
            channels: b.scalar("channels")?,
            grid: (b.scalar("grid_h")?, b.scalar("grid_w")?),
            norm_r: norm("norm_r")?,
            norm_t: norm("norm_t")?,
            gate_r: mlp("gate_r")?,
            gate_t: mlp("gate_t")?,
            ss2d_r: Ss2dParams::from_bundle(&b.scoped("ss2d_r"))?,
            ss2d_t: Ss2dParams::from_bundle(&b.scoped("ss2d_t"))?,
            out: mlp("out")?,
            residual,
        };
        p.validate(p.grid.0 * p.grid.1, p.channels)?;
        Ok(p)
    }
}

/// Fuses one sample: `f_r`, `f_t` are `N×C`.
fn fuse_sample(f_r: &Tensor, f_t: &Tensor, p: &FusionBlockParams) -> Result<(Tensor, Tensor, u64)> {
    let (gh, gw) = p.grid;
    let c = p.channels;
    let mut macs = 0u64;
    let mut branch = |f: &Tensor, norm: &LayerNorm, gate: &Mlp3, ss: &Ss2dParams| -> Result<Tensor> {
        let normed = norm.forward(f, &mut macs);
        let z = gate.forward(&normed, &mut macs)?;
        let (y, m) = ss2d_counted(&normed.reshape(&[gh, gw, c])?, ss)?;
        macs += m;
        macs += 2 * z.len() as u64;
        let gated = y.data().iter().zip(z.data()).map(|(&y, &z)| y * silu(z)).collect();
        Ok(Tensor::from_parts(f.shape().to_vec(), gated))
    };
    let g_r = branch(f_r, &p.norm_r, &p.gate_r, &p.ss2d_r)?;
    let g_t = branch(f_t, &p.norm_t, &p.gate_t, &p.ss2d_t)?;
    let o = p.out.forward(&g_r.add(&g_t)?, &mut macs)?;
    let (res_r, res_t) = match p.residual {
        ResidualMode::Crossed => (f_t, f_r),
        ResidualMode::Straight => (f_r, f_t),
    };
    let out_r = f_r.add(&o.add(res_r)?)?;
    let out_t = f_t.add(&o.add(res_t)?)?;
    Ok((out_r, out_t, macs))
}

/// Runs the gated fusion stage on already-swapped features.
pub fn fuse(m: &ModalityFeatures, p: &FusionBlockParams) -> Result<ModalityFeatures> {
    fuse_counted(m, p).map(|(f, _)| f)
}

/// [`fuse`] plus its multiply-accumulate count.
pub fn fuse_counted(m: &ModalityFeatures, p: &FusionBlockParams) -> Result<(ModalityFeatures, u64)> {
    let (b, n, c) = m.dims();
    p.validate(n, c)?;
    let samples: Vec<(Tensor, Tensor, u64)> = (0..b)
        .into_par_iter()
        .map(|s| {
            let r = Tensor::from_parts(vec![n, c], m.rgb().outer_slice(s).to_vec());
            let t = Tensor::from_parts(vec![n, c], m.thermal().outer_slice(s).to_vec());
            fuse_sample(&r, &t, p)
        })
        .collect::<Result<_>>()?;
    let mut r = Vec::with_capacity(b * n * c);
    let mut t = Vec::with_capacity(b * n * c);
    let mut macs = 0;
    for (sr, st, k) in samples {
        r.extend_from_slice(sr.data());
        t.extend_from_slice(st.data());
        macs += k;
    }
    let out = ModalityFeatures::new(Tensor::from_parts(vec![b, n, c], r), Tensor::from_parts(vec![b, n, c], t))?;
    Ok((out, macs))
}

/// Shallow swap followed by [`fuse`]: the complete fusion block.
pub fn cfm_block(m: &ModalityFeatures, p: &FusionBlockParams, swap: SwapMode) -> Result<ModalityFeatures> {
    fuse(&shallow_swap(m, swap)?, p)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zero_gates(p: &mut FusionBlockParams) {
        let w = 2 * p.channels;
        p.gate_r.layers[2] = Linear::zeros(w, p.channels).unwrap();
        p.gate_t.layers[2] = Linear::zeros(w, p.channels).unwrap();
    }

    fn features(b: usize, n: usize, c: usize, seed: u64) -> ModalityFeatures {
        let mut rng = SeededRng::new(seed);
        ModalityFeatures::new(Tensor::randn(&[b, n, c], &mut rng).unwrap(), Tensor::randn(&[b, n, c], &mut rng).unwrap())
            .unwrap()
    }

    #[test]
    fn zero_input_zero_output() {
        let p = FusionBlockParams::random(4, 3, (2, 3), &mut SeededRng::new(1)).unwrap();
        let z = Tensor::zeros(&[2, 6, 4]).unwrap();
        let out = fuse(&ModalityFeatures::new(z.clone(), z.clone()).unwrap(), &p).unwrap();
        assert_eq!(out.rgb(), &z);
        assert_eq!(out.thermal(), &z);
    }

    #[test]
    fn zero_gate_collapse() {
        let mut p = FusionBlockParams::random(4, 3, (2, 2), &mut SeededRng::new(2)).unwrap();
        zero_gates(&mut p);
        let m = features(1, 4, 4, 3);
        let out = fuse(&m, &p).unwrap();
        let sum = m.rgb().add(m.thermal()).unwrap();
        assert_eq!(out.rgb(), &sum);
        assert_eq!(out.thermal(), &m.thermal().add(m.rgb()).unwrap());
        p.residual = ResidualMode::Straight;
        let out = fuse(&m, &p).unwrap();
        assert_eq!(out.rgb(), &m.rgb().add(m.rgb()).unwrap());
        assert_eq!(out.thermal(), &m.thermal().add(m.thermal()).unwrap());
    }

    #[test]
    fn grid_must_factor_sequence() {
        let p = FusionBlockParams::random(4, 2, (2, 2), &mut SeededRng::new(1)).unwrap();
        assert!(fuse(&features(1, 6, 4, 1), &p).is_err());
        assert!(fuse(&features(1, 4, 6, 1), &p).is_err());
    }

    #[test]
    fn batch_samples_are_independent() {
        let p = FusionBlockParams::random(4, 2, (3, 1), &mut SeededRng::new(4)).unwrap();
        let m = features(3, 3, 4, 5);
        let all = fuse(&m, &p).unwrap();
        for s in 0..3 {
            let one = ModalityFeatures::new(
                Tensor::new(vec![1, 3, 4], m.rgb().outer_slice(s).to_vec()).unwrap(),
                Tensor::new(vec![1, 3, 4], m.thermal().outer_slice(s).to_vec()).unwrap(),
            )
            .unwrap();
            let single = fuse(&one, &p).unwrap();
            assert_eq!(single.rgb().data(), all.rgb().outer_slice(s));
        }
    }

    #[test]
    fn bundle_round_trip() {
        let p = FusionBlockParams::random(4, 2, (2, 2), &mut SeededRng::new(6)).unwrap();
        assert_eq!(FusionBlockParams::from_bundle(&p.to_bundle()).unwrap(), p);
    }
}
