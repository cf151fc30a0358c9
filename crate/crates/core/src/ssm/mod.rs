//! Diagonal state-space sequence operators.
//!
//! A [`ContinuousSsm`] `h' = A h + B x, y = C h` with diagonal `A` is
//! discretized by zero-order hold into a [`DiscreteSsm`], which can be run
//! either as a recurrence ([`scan`]) or as a causal convolution with its
//! impulse response ([`kernel`] + [`apply_kernel`]). The input-dependent
//! variant lives in [`selective`], the four-direction 2-D variant in [`ss2d`].

pub mod selective;
pub mod ss2d;

pub use selective::{selective_scan, selective_scan_backward, selective_scan_counted, SelectiveSsmParams};
pub use ss2d::{ss2d, ss2d_counted, ScanDirection, Ss2dParams};

use crate::error::{arg_err, shape_err, Result};
use crate::tensor::SeededRng;

/// Below this `|Δ·a|` the input gain switches to its Taylor series.
pub const ZOH_SERIES_THRESHOLD: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct ContinuousSsm {
    a: Vec<f64>,
    b: Vec<f64>,
    c: Vec<f64>,
}

impl ContinuousSsm {
    pub fn new(a: Vec<f64>, b: Vec<f64>, c: Vec<f64>) -> Result<Self> {
        if a.is_empty() {
            return arg_err("state size must be at least 1");
        }
        if a.len() != b.len() || a.len() != c.len() {
            return shape_err(format!(
                "coefficient lengths differ: a={}, b={}, c={}",
                a.len(),
                b.len(),
                c.len()
            ));
        }
        if a.iter().chain(&b).chain(&c).any(|v| !v.is_finite()) {
            return arg_err("SSM coefficients must be finite");
        }
        Ok(Self { a, b, c })
    }

    /// Stable random model: `a ∈ [-2, -0.05)`, `b, c ~ N(0, 1)`.
    pub fn random(state_size: usize, rng: &mut SeededRng) -> Result<Self> {
        let a = (0..state_size).map(|_| -0.05 - 1.95 * rng.uniform()).collect();
        let b = (0..state_size).map(|_| rng.normal()).collect();
        let c = (0..state_size).map(|_| rng.normal()).collect();
        Self::new(a, b, c)
    }

    pub fn state_size(&self) -> usize {
        self.a.len()
    }

    pub fn a(&self) -> &[f64] {
        &self.a
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    pub fn c(&self) -> &[f64] {
        &self.c
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteSsm {
    a_bar: Vec<f64>,
    b_bar: Vec<f64>,
    c: Vec<f64>,
    delta: f64,
}

impl DiscreteSsm {
    /// Builds a discrete model directly. Every `a_bar` must be positive
    /// (so it equals `exp(delta·a)` for a real `a`) and `delta > 0`.
    pub fn from_parts(a_bar: Vec<f64>, b_bar: Vec<f64>, c: Vec<f64>, delta: f64) -> Result<Self> {
        if !(delta > 0.0 && delta.is_finite()) {
            return arg_err(format!("delta must be positive and finite, got {delta}"));
        }
        if a_bar.is_empty() || a_bar.len() != b_bar.len() || a_bar.len() != c.len() {
            return shape_err("discrete SSM coefficient lengths must agree and be non-empty");
        }
        if a_bar.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return arg_err("a_bar entries must be positive and finite");
        }
        if b_bar.iter().chain(&c).any(|v| !v.is_finite()) {
            return arg_err("discrete SSM coefficients must be finite");
        }
        Ok(Self { a_bar, b_bar, c, delta })
    }

    pub fn state_size(&self) -> usize {
        self.a_bar.len()
    }

    pub fn a_bar(&self) -> &[f64] {
        &self.a_bar
    }

    pub fn b_bar(&self) -> &[f64] {
        &self.b_bar
    }

    pub fn c(&self) -> &[f64] {
        &self.c
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }
}

/// ZOH input gain `(exp(Δa) − 1)/(Δa) · Δ`, i.e. `∫₀^Δ exp(a s) ds`.
#[inline]
pub fn zoh_gain(delta: f64, a: f64) -> f64 {
    let x = delta * a;
    if x.abs() < ZOH_SERIES_THRESHOLD {
        delta * (1.0 + x * (0.5 + x / 6.0))
    } else {
        x.exp_m1() / a
    }
}

/// `d/dΔ` of [`zoh_gain`], which is exactly `exp(Δa)`.
#[inline]
pub(crate) fn zoh_gain_ddelta(delta: f64, a: f64) -> f64 {
    (delta * a).exp()
}

pub fn discretize(m: &ContinuousSsm, delta: f64) -> Result<DiscreteSsm> {
    if !(delta > 0.0 && delta.is_finite()) {
        return arg_err(format!("delta must be positive and finite, got {delta}"));
    }
    let a_bar = m.a.iter().map(|&a| (delta * a).exp()).collect();
    let b_bar = m.a.iter().zip(&m.b).map(|(&a, &b)| zoh_gain(delta, a) * b).collect();
    DiscreteSsm::from_parts(a_bar, b_bar, m.c.clone(), delta)
}

/// Runs the recurrence `h_t = Ā h_{t-1} + B̄ x_t`, `y_t = C h_t` from `h_0 = 0`.
pub fn scan(m: &DiscreteSsm, x: &[f64]) -> Result<Vec<f64>> {
    scan_counted(m, x).map(|(y, _)| y)
}

/// [`scan`] plus the number of multiply-accumulates performed (`3·L·N`).
pub fn scan_counted(m: &DiscreteSsm, x: &[f64]) -> Result<(Vec<f64>, u64)> {
    if x.is_empty() {
        return arg_err("scan input must be non-empty");
    }
    let n = m.state_size();
    let mut h = vec![0.0; n];
    let mut macs = 0u64;
    let y = x
        .iter()
        .map(|&xt| {
            let mut yt = 0.0;
            for ((hi, a), (b, c)) in h.iter_mut().zip(&m.a_bar).zip(m.b_bar.iter().zip(&m.c)) {
                *hi = a * *hi + b * xt;
                yt += c * *hi;
            }
            macs += 3 * n as u64;
            yt
        })
        .collect();
    Ok((y, macs))
}

/// Impulse response taps `K_j = Σ_i c_i · ā_i^j · b̄_i` for `j < len`.
pub fn kernel(m: &DiscreteSsm, len: usize) -> Result<Vec<f64>> {
    if len == 0 {
        return arg_err("kernel length must be at least 1");
    }
    let mut pow: Vec<f64> = m.c.iter().zip(&m.b_bar).map(|(c, b)| c * b).collect();
    let mut taps = Vec::with_capacity(len);
    for _ in 0..len {
        taps.push(pow.iter().sum());
        for (p, &a) in pow.iter_mut().zip(&m.a_bar) {
            *p *= a;
        }
    }
    Ok(taps)
}

/// Causal convolution `y_t = Σ_{j≤t} k_j · x_{t−j}`.
pub fn apply_kernel(x: &[f64], k: &[f64]) -> Result<Vec<f64>> {
    if x.len() != k.len() {
        return shape_err(format!("input length {} does not match kernel length {}", x.len(), k.len()));
    }
    Ok((0..x.len())
        .map(|t| (0..=t).map(|j| k[j] * x[t - j]).sum())
        .collect())
}
