use std::fmt;
use std::str::FromStr;

use crate::error::{arg_err, Error, Result};

pub const DEFAULT_STEPS: usize = 1000;
pub const DEFAULT_BETA_START: f64 = 0.001;
pub const DEFAULT_BETA_END: f64 = 0.02;
/// Offset of the squared-cosine curve.
pub const COSINE_OFFSET: f64 = 0.008;
pub const COSINE_MAX_BETA: f64 = 0.999;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScheduleKind {
    Linear,
    ScaledLinear,
    Cosine,
}

impl ScheduleKind {
    pub const ALL: [ScheduleKind; 3] = [ScheduleKind::Linear, ScheduleKind::ScaledLinear, ScheduleKind::Cosine];

    pub fn name(self) -> &'static str {
        match self {
            ScheduleKind::Linear => "linear",
            ScheduleKind::ScaledLinear => "scaled_linear",
            ScheduleKind::Cosine => "cosine",
        }
    }
}

impl fmt::Display for ScheduleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScheduleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ScheduleKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown schedule kind {s:?}")))
    }
}

/// `β`, `α = 1 − β` and `ᾱ_t = ∏ α` tables, indexed by 1-based step.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    kind: ScheduleKind,
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    /// Linear, `T = 1000`, `β ∈ [0.001, 0.02]`.
    pub fn default_linear() -> Self {
        make_schedule(ScheduleKind::Linear, DEFAULT_STEPS, DEFAULT_BETA_START, DEFAULT_BETA_END)
            .expect("default schedule bounds are valid")
    }

    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    /// `T`
    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    fn check(&self, t: usize) {
        assert!((1..=self.steps()).contains(&t), "step {t} outside 1..={}", self.steps());
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.check(t);
        self.beta[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.check(t);
        self.alpha[t - 1]
    }

    /// `ᾱ_t`, with `ᾱ_0 = 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            return 1.0;
        }
        self.check(t);
        self.alpha_bar[t - 1]
    }

    /// Posterior variance `β̃_t = (1 − ᾱ_{t−1})/(1 − ᾱ_t)·β_t`.
    pub fn posterior_variance(&self, t: usize) -> f64 {
        (1.0 - self.alpha_bar(t - 1)) / (1.0 - self.alpha_bar(t)) * self.beta(t)
    }

    pub fn betas(&self) -> &[f64] {
        &self.beta
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alpha
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }
}

pub fn make_schedule(kind: ScheduleKind, steps: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule> {
    if steps == 0 {
        return arg_err("schedule needs at least one step");
    }
    let frac = |t: usize| if steps == 1 { 0.0 } else { (t - 1) as f64 / (steps - 1) as f64 };
    let beta: Vec<f64> = match kind {
        ScheduleKind::Linear | ScheduleKind::ScaledLinear => {
            if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
                return arg_err(format!("need 0 < beta_start ≤ beta_end < 1, got {beta_start}, {beta_end}"));
            }
            if kind == ScheduleKind::Linear {
                (1..=steps).map(|t| beta_start * (1.0 - frac(t)) + beta_end * frac(t)).collect()
            } else {
                let (s, e) = (beta_start.sqrt(), beta_end.sqrt());
                (1..=steps).map(|t| (s * (1.0 - frac(t)) + e * frac(t)).powi(2)).collect()
            }
        }
        ScheduleKind::Cosine => {
            let f = |t: usize| {
                let x = (t as f64 / steps as f64 + COSINE_OFFSET) / (1.0 + COSINE_OFFSET);
                (x * std::f64::consts::FRAC_PI_2).cos().powi(2)
            };
            (1..=steps).map(|t| (1.0 - f(t) / f(t - 1)).clamp(f64::MIN_POSITIVE, COSINE_MAX_BETA)).collect()
        }
    };
    let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
    let alpha_bar = alpha
        .iter()
        .scan(1.0, |acc, a| {
            *acc *= a;
            Some(*acc)
        })
        .collect();
    Ok(NoiseSchedule { kind, beta, alpha, alpha_bar })
}
