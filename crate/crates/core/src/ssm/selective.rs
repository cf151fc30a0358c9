//! Input-dependent (selective) scan over a `L×D` token sequence.
//!
//! Per token `x_t ∈ R^D`:
//!
//! ```text
//! Δ_t = softplus(W_Δ x_t + u_Δ)        (one step per channel)
//! B_t = W_B x_t + u_B,  C_t = W_C x_t + u_C      (length N, shared by channels)
//! h_{t,d} = exp(Δ_{t,d} a_d) ⊙ h_{t-1,d} + zoh(Δ_{t,d}, a_d) ⊙ B_t · x_{t,d}
//! y_{t,d} = ⟨C_t, h_{t,d}⟩
//! ```
//!
//! with `h_0 = 0` and `a_d ∈ R^N` the diagonal evolution coefficients of
//! channel `d`.

use super::{zoh_gain, zoh_gain_ddelta};
use crate::error::{arg_err, shape_err, Result};
use crate::io::Bundle;
use crate::tensor::{sigmoid, softplus, SeededRng, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct SelectiveSsmParams {
    state_size: usize,
    channels: usize,
    /// `D×N`
    a: Tensor,
    /// `D×D`
    w_delta: Tensor,
    /// `D`
    u_delta: Tensor,
    /// `N×D`
    w_b: Tensor,
    u_b: Tensor,
    w_c: Tensor,
    u_c: Tensor,
}

fn expect_shape(t: &Tensor, shape: &[usize], what: &str) -> Result<()> {
    if t.shape() != shape {
        return shape_err(format!("{what} has shape {:?}, expected {shape:?}", t.shape()));
    }
    Ok(())
}

impl SelectiveSsmParams {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        a: Tensor,
        w_delta: Tensor,
        u_delta: Tensor,
        w_b: Tensor,
        u_b: Tensor,
        w_c: Tensor,
        u_c: Tensor,
    ) -> Result<Self> {
        let [d, n] = match a.shape() {
            &[d, n] => [d, n],
            s => return shape_err(format!("a must be D×N, got {s:?}")),
        };
        expect_shape(&w_delta, &[d, d], "w_delta")?;
        expect_shape(&u_delta, &[d], "u_delta")?;
        expect_shape(&w_b, &[n, d], "w_b")?;
        expect_shape(&u_b, &[n], "u_b")?;
        expect_shape(&w_c, &[n, d], "w_c")?;
        expect_shape(&u_c, &[n], "u_c")?;
        let all = [&a, &w_delta, &u_delta, &w_b, &u_b, &w_c, &u_c];
        if !all.iter().all(|t| t.all_finite()) {
            return arg_err("selective SSM parameters must be finite");
        }
        Ok(Self { state_size: n, channels: d, a, w_delta, u_delta, w_b, u_b, w_c, u_c })
    }

    /// Random parameters in the usual Mamba ranges: `a_{d,i} = −(i+1)`
    /// (S4D-real), Δ bias chosen so `softplus(u_Δ) ∈ [0.001, 0.1]`, and
    /// projections scaled by `1/√D`.
    pub fn random(channels: usize, state_size: usize, rng: &mut SeededRng) -> Result<Self> {
        let (d, n) = (channels, state_size);
        if d == 0 || n == 0 {
            return arg_err("channels and state size must be positive");
        }
        let a = Tensor::from_fn(&[d, n], |k| -((k % n) as f64 + 1.0))?;
        let s = 1.0 / (d as f64).sqrt();
        let w_delta = Tensor::randn(&[d, d], rng)?.scale(0.1 * s);
        let u_delta = Tensor::from_fn(&[d], |_| {
            let dt = (0.001f64.ln() + rng.uniform() * (0.1f64.ln() - 0.001f64.ln())).exp();
            dt + (-(-dt).exp_m1()).ln() // inverse softplus
        })?;
        let w_b = Tensor::randn(&[n, d], rng)?.scale(s);
        let u_b = Tensor::zeros(&[n])?;
        let w_c = Tensor::randn(&[n, d], rng)?.scale(s);
        let u_c = Tensor::zeros(&[n])?;
        Self::new(a, w_delta, u_delta, w_b, u_b, w_c, u_c)
    }

    /// Input-independent parameters: every token sees step `softplus(delta_bias)`,
    /// input vector `b` and output vector `c`, with the same `a` on each channel.
    pub fn frozen(channels: usize, a: &[f64], b: &[f64], c: &[f64], delta_bias: f64) -> Result<Self> {
        let n = a.len();
        if b.len() != n || c.len() != n {
            return shape_err("a, b and c must share the state size");
        }
        Self::new(
            Tensor::from_fn(&[channels, n], |k| a[k % n])?,
            Tensor::zeros(&[channels, channels])?,
            Tensor::full(&[channels], delta_bias)?,
            Tensor::zeros(&[n, channels])?,
            Tensor::new(vec![n], b.to_vec())?,
            Tensor::zeros(&[n, channels])?,
            Tensor::new(vec![n], c.to_vec())?,
        )
    }

    pub fn state_size(&self) -> usize {
        self.state_size
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn a(&self) -> &Tensor {
        &self.a
    }

    /// Multiply-accumulates per token: `D² + 7·N·D`.
    pub fn macs_per_token(&self) -> u64 {
        macs_per_token(self.channels, self.state_size)
    }

    pub fn to_bundle(&self) -> Bundle {
        let mut b = Bundle::new();
        b.set("channels", self.channels);
        b.set("state_size", self.state_size);
        for (role, t) in self.named() {
            b.put(role, t.clone());
        }
        b
    }

    pub fn from_bundle(b: &Bundle) -> Result<Self> {
        let p = Self::new(
            b.tensor("a")?.clone(),
            b.tensor("w_delta")?.clone(),
            b.tensor("u_delta")?.clone(),
            b.tensor("w_b")?.clone(),
            b.tensor("u_b")?.clone(),
            b.tensor("w_c")?.clone(),
            b.tensor("u_c")?.clone(),
        )?;
        if b.scalar::<usize>("channels")? != p.channels || b.scalar::<usize>("state_size")? != p.state_size {
            return shape_err("bundle sizes disagree with tensor shapes");
        }
        Ok(p)
    }

    fn named(&self) -> [(&'static str, &Tensor); 7] {
        [
            ("a", &self.a),
            ("w_delta", &self.w_delta),
            ("u_delta", &self.u_delta),
            ("w_b", &self.w_b),
            ("u_b", &self.u_b),
            ("w_c", &self.w_c),
            ("u_c", &self.u_c),
        ]
    }
}

pub(crate) fn macs_per_token(channels: usize, state_size: usize) -> u64 {
    let (d, n) = (channels as u64, state_size as u64);
    d * d + 7 * n * d
}

/// Per-token intermediates kept for the backward pass.
struct Trace {
    pre_delta: Vec<f64>,
    delta: Vec<f64>,
    b: Vec<f64>,
    c: Vec<f64>,
    /// hidden states after each token, `L×D×N`
    h: Vec<f64>,
}

fn check_input(x: &Tensor, p: &SelectiveSsmParams) -> Result<usize> {
    match x.shape() {
        &[l, d] if d == p.channels => Ok(l),
        s => shape_err(format!("selective scan expects L×{} input, got {s:?}", p.channels)),
    }
}

#[inline]
fn affine_row(w: &[f64], u: f64, x: &[f64]) -> f64 {
    w.iter().zip(x).fold(u, |acc, (&wi, &xi)| acc + wi * xi)
}

fn forward(x: &Tensor, p: &SelectiveSsmParams, mut trace: Option<&mut Trace>) -> Result<(Tensor, u64)> {
    let l = check_input(x, p)?;
    let (d, n) = (p.channels, p.state_size);
    let a = p.a.data();
    let (wd, ud) = (p.w_delta.data(), p.u_delta.data());
    let (wb, ub) = (p.w_b.data(), p.u_b.data());
    let (wc, uc) = (p.w_c.data(), p.u_c.data());

    let mut h = vec![0.0; d * n];
    let mut bt = vec![0.0; n];
    let mut ct = vec![0.0; n];
    let mut y = vec![0.0; l * d];
    for t in 0..l {
        let xt = x.outer_slice(t);
        for i in 0..n {
            bt[i] = affine_row(&wb[i * d..(i + 1) * d], ub[i], xt);
            ct[i] = affine_row(&wc[i * d..(i + 1) * d], uc[i], xt);
        }
        for ch in 0..d {
            let s = affine_row(&wd[ch * d..(ch + 1) * d], ud[ch], xt);
            let delta = softplus(s);
            let xv = xt[ch];
            let hs = &mut h[ch * n..(ch + 1) * n];
            let arow = &a[ch * n..(ch + 1) * n];
            let mut acc = 0.0;
            for i in 0..n {
                let abar = (delta * arow[i]).exp();
                let bbar = zoh_gain(delta, arow[i]) * bt[i];
                hs[i] = abar * hs[i] + bbar * xv;
                acc += ct[i] * hs[i];
            }
            y[t * d + ch] = acc;
            if let Some(tr) = trace.as_deref_mut() {
                tr.pre_delta.push(s);
                tr.delta.push(delta);
            }
        }
        if let Some(tr) = trace.as_deref_mut() {
            tr.b.extend_from_slice(&bt);
            tr.c.extend_from_slice(&ct);
            tr.h.extend_from_slice(&h);
        }
    }
    let macs = l as u64 * macs_per_token(d, n);
    Ok((Tensor::from_parts(vec![l, d], y), macs))
}

pub fn selective_scan(x: &Tensor, p: &SelectiveSsmParams) -> Result<Tensor> {
    forward(x, p, None).map(|(y, _)| y)
}

/// [`selective_scan`] plus its multiply-accumulate count, `L·(D² + 7ND)`.
pub fn selective_scan_counted(x: &Tensor, p: &SelectiveSsmParams) -> Result<(Tensor, u64)> {
    forward(x, p, None)
}

/// Reverse-mode gradient of `Σ dy ⊙ selective_scan(x, p)` with respect to `x`,
/// including the paths through `Δ_t`, `B_t` and `C_t`.
pub fn selective_scan_backward(x: &Tensor, p: &SelectiveSsmParams, dy: &Tensor) -> Result<Tensor> {
    let l = check_input(x, p)?;
    if dy.shape() != x.shape() {
        return shape_err(format!("upstream gradient shape {:?} != input shape {:?}", dy.shape(), x.shape()));
    }
    let (d, n) = (p.channels, p.state_size);
    let mut tr = Trace {
        pre_delta: Vec::with_capacity(l * d),
        delta: Vec::with_capacity(l * d),
        b: Vec::with_capacity(l * n),
        c: Vec::with_capacity(l * n),
        h: Vec::with_capacity(l * d * n),
    };
    forward(x, p, Some(&mut tr))?;

    let a = p.a.data();
    let (wd, wb, wc) = (p.w_delta.data(), p.w_b.data(), p.w_c.data());
    let dyv = dy.data();
    let mut dx = vec![0.0; l * d];
    let mut carry = vec![0.0; d * n];
    let mut d_b = vec![0.0; n];
    let mut d_c = vec![0.0; n];
    let mut d_s = vec![0.0; d];
    let zeros = vec![0.0; d * n];

    for t in (0..l).rev() {
        let xt = x.outer_slice(t);
        let h_t = &tr.h[t * d * n..(t + 1) * d * n];
        let h_prev = if t == 0 { &zeros[..] } else { &tr.h[(t - 1) * d * n..t * d * n] };
        let bt = &tr.b[t * n..(t + 1) * n];
        let ct = &tr.c[t * n..(t + 1) * n];
        d_b.iter_mut().for_each(|v| *v = 0.0);
        d_c.iter_mut().for_each(|v| *v = 0.0);
        for ch in 0..d {
            let delta = tr.delta[t * d + ch];
            let g_y = dyv[t * d + ch];
            let xv = xt[ch];
            let mut d_delta = 0.0;
            for i in 0..n {
                let k = ch * n + i;
                let ai = a[k];
                let dh = carry[k] + g_y * ct[i];
                d_c[i] += g_y * h_t[k];
                let abar = (delta * ai).exp();
                let gain = zoh_gain(delta, ai);
                let bbar = gain * bt[i];
                dx[t * d + ch] += dh * bbar;
                let d_bbar = dh * xv;
                d_b[i] += d_bbar * gain;
                d_delta += dh * h_prev[k] * abar * ai + d_bbar * bt[i] * zoh_gain_ddelta(delta, ai);
                carry[k] = dh * abar;
            }
            d_s[ch] = d_delta * sigmoid(tr.pre_delta[t * d + ch]);
        }
        for k in 0..d {
            let mut g = 0.0;
            for ch in 0..d {
                g += wd[ch * d + k] * d_s[ch];
            }
            for i in 0..n {
                g += wb[i * d + k] * d_b[i] + wc[i * d + k] * d_c[i];
            }
            dx[t * d + k] += g;
        }
    }
    Ok(Tensor::from_parts(vec![l, d], dx))
}
