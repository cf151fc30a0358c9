use rayon::prelude::*;

use super::ModalityFeatures;
use crate::error::{shape_err, Result};
use crate::tensor::{SeededRng, Tensor};

/// Shared single-head projections for the attention baseline.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams {
    /// `C×d_k`
    pub wq: Tensor,
    /// `C×d_k`
    pub wk: Tensor,
    /// `C×C`
    pub wv: Tensor,
}

impl AttentionParams {
    pub fn new(wq: Tensor, wk: Tensor, wv: Tensor) -> Result<Self> {
        let (c, dk) = match wq.shape() {
            &[c, dk] => (c, dk),
            s => return shape_err(format!("query projection must be C×d_k, got {s:?}")),
        };
        if wk.shape() != [c, dk] || wv.shape() != [c, c] {
            return shape_err(format!("key/value projections must be {c}×{dk} and {c}×{c}"));
        }
        Ok(Self { wq, wk, wv })
    }

    pub fn random(channels: usize, key_dim: usize, rng: &mut SeededRng) -> Result<Self> {
        let s = 1.0 / (channels as f64).sqrt();
        Self::new(
            Tensor::randn(&[channels, key_dim], rng)?.scale(s),
            Tensor::randn(&[channels, key_dim], rng)?.scale(s),
            Tensor::randn(&[channels, channels], rng)?.scale(s),
        )
    }

    pub fn channels(&self) -> usize {
        self.wq.shape()[0]
    }

    pub fn key_dim(&self) -> usize {
        self.wq.shape()[1]
    }
}

struct Projected {
    q: Tensor,
    /// keys stored `d_k×2N` so score rows are contiguous sweeps
    kt: Tensor,
    v: Tensor,
}

fn project(m: &ModalityFeatures, s: usize, p: &AttentionParams) -> Result<Projected> {
    let (_, n, c) = m.dims();
    let x = Tensor::concat(
        &[
            &Tensor::from_parts(vec![n, c], m.rgb().outer_slice(s).to_vec()),
            &Tensor::from_parts(vec![n, c], m.thermal().outer_slice(s).to_vec()),
        ],
        0,
    )?;
    Ok(Projected { q: x.matmul(&p.wq)?, kt: x.matmul(&p.wk)?.transpose2()?, v: x.matmul(&p.wv)? })
}

/// Softmax weights of query row `i` written into `w` (length `2N`);
/// returns the multiplies spent.
fn weight_row(pr: &Projected, i: usize, scale: f64, w: &mut [f64]) -> u64 {
    let len = w.len();
    w.fill(0.0);
    for (d, &q) in pr.q.outer_slice(i).iter().enumerate() {
        for (s, &k) in w.iter_mut().zip(&pr.kt.data()[d * len..(d + 1) * len]) {
            *s += q * k;
        }
    }
    let mut max = f64::NEG_INFINITY;
    for s in w.iter_mut() {
        *s *= scale;
        max = max.max(*s);
    }
    let mut sum = 0.0;
    for s in w.iter_mut() {
        *s = (*s - max).exp();
        sum += *s;
    }
    let inv = 1.0 / sum;
    for s in w.iter_mut() {
        *s *= inv;
    }
    ((pr.q.shape()[1] + 2) * len) as u64
}

fn check(m: &ModalityFeatures, p: &AttentionParams) -> Result<()> {
    let (_, _, c) = m.dims();
    if c != p.channels() {
        return shape_err(format!("features have {c} channels, attention expects {}", p.channels()));
    }
    Ok(())
}

/// Single-head scaled dot-product attention over the `2N` concatenated tokens.
pub fn attention_fusion_baseline(m: &ModalityFeatures, p: &AttentionParams) -> Result<ModalityFeatures> {
    attention_fusion_counted(m, p).map(|(f, _)| f)
}

/// [`attention_fusion_baseline`] plus its multiply-accumulate count,
/// `2N·C·(2d_k + C) + 4N²·(d_k + C + 2)` per sample.
pub fn attention_fusion_counted(m: &ModalityFeatures, p: &AttentionParams) -> Result<(ModalityFeatures, u64)> {
    check(m, p)?;
    let (b, n, c) = m.dims();
    let dk = p.key_dim();
    let scale = 1.0 / (dk as f64).sqrt();
    let mut r = Vec::with_capacity(b * n * c);
    let mut t = Vec::with_capacity(b * n * c);
    let mut macs = 0u64;
    for s in 0..b {
        let pr = project(m, s, p)?;
        macs += (2 * n * c * (2 * dk + c)) as u64;
        let rows: Vec<(Vec<f64>, u64)> = (0..2 * n)
            .into_par_iter()
            .map_init(
                || vec![0.0; 2 * n],
                |w, i| {
                    let k = weight_row(&pr, i, scale, w);
                    let mut out = vec![0.0; c];
                    for (j, &wj) in w.iter().enumerate() {
                        for (o, &v) in out.iter_mut().zip(pr.v.outer_slice(j)) {
                            *o += wj * v;
                        }
                    }
                    (out, k + (c * w.len()) as u64)
                },
            )
            .collect();
        for (i, (row, k)) in rows.iter().enumerate() {
            if i < n { &mut r } else { &mut t }.extend_from_slice(row);
            macs += k;
        }
    }
    let out = ModalityFeatures::new(Tensor::from_parts(vec![b, n, c], r), Tensor::from_parts(vec![b, n, c], t))?;
    Ok((out, macs))
}

/// Attention weights `B×2N×2N` (RGB tokens first).
pub fn attention_weights(m: &ModalityFeatures, p: &AttentionParams) -> Result<Tensor> {
    check(m, p)?;
    let (b, n, _) = m.dims();
    let scale = 1.0 / (p.key_dim() as f64).sqrt();
    let mut data = vec![0.0; b * 4 * n * n];
    for (s, block) in data.chunks_exact_mut(4 * n * n).enumerate() {
        let pr = project(m, s, p)?;
        for (i, row) in block.chunks_exact_mut(2 * n).enumerate() {
            weight_row(&pr, i, scale, row);
        }
    }
    Ok(Tensor::from_parts(vec![b, 2 * n, 2 * n], data))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_tokens_give_value_projection() {
        let mut rng = SeededRng::new(1);
        let p = AttentionParams::random(4, 2, &mut rng).unwrap();
        let x = Tensor::randn(&[1, 1, 4], &mut rng).unwrap();
        let out = attention_fusion_baseline(&ModalityFeatures::new(x.clone(), x.clone()).unwrap(), &p).unwrap();
        let v = x.reshape(&[1, 4]).unwrap().matmul(&p.wv).unwrap();
        for (a, b) in out.rgb().data().iter().zip(v.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(out.rgb(), out.thermal());
    }

    #[test]
    fn rows_sum_to_one() {
        let mut rng = SeededRng::new(2);
        let p = AttentionParams::random(6, 3, &mut rng).unwrap();
        let m = ModalityFeatures::new(
            Tensor::randn(&[2, 5, 6], &mut rng).unwrap(),
            Tensor::randn(&[2, 5, 6], &mut rng).unwrap(),
        )
        .unwrap();
        let w = attention_weights(&m, &p).unwrap();
        for row in w.data().chunks_exact(10) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|&v| v > 0.0));
        }
    }

    #[test]
    fn matches_dense_reference() {
        let mut rng = SeededRng::new(3);
        let p = AttentionParams::random(4, 2, &mut rng).unwrap();
        let m = ModalityFeatures::new(
            Tensor::randn(&[1, 3, 4], &mut rng).unwrap(),
            Tensor::randn(&[1, 3, 4], &mut rng).unwrap(),
        )
        .unwrap();
        let x = Tensor::concat(&[&m.rgb().reshape(&[3, 4]).unwrap(), &m.thermal().reshape(&[3, 4]).unwrap()], 0)
            .unwrap();
        let q = x.matmul(&p.wq).unwrap();
        let k = x.matmul(&p.wk).unwrap();
        let v = x.matmul(&p.wv).unwrap();
        let scores = q.matmul(&k.transpose2().unwrap()).unwrap().scale(1.0 / 2f64.sqrt());
        let mut expect = Vec::new();
        for i in 0..6 {
            let row = scores.outer_slice(i);
            let z: f64 = row.iter().map(|s| s.exp()).sum();
            for ch in 0..4 {
                expect.push((0..6).map(|j| row[j].exp() / z * v.at(&[j, ch])).sum::<f64>());
            }
        }
        let out = attention_fusion_baseline(&m, &p).unwrap();
        let got: Vec<f64> = out.rgb().data().iter().chain(out.thermal().data()).copied().collect();
        for (a, b) in got.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn channel_mismatch() {
        let p = AttentionParams::random(4, 2, &mut SeededRng::new(1)).unwrap();
        let z = Tensor::zeros(&[1, 2, 6]).unwrap();
        assert!(attention_fusion_baseline(&ModalityFeatures::new(z.clone(), z).unwrap(), &p).is_err());
    }
}
