//! Conditional implicit diffusion: schedules, forward noising, deterministic
//! DDIM stepping against an [`EpsilonPredictor`], and the two training losses.
//!
//! Steps are 1-based; `ᾱ_0 = 1` so that the final step to `t = 0` is defined.

mod predictor;
mod schedule;

pub use predictor::{EpsilonPredictor, OraclePredictor, TinyMlpPredictor};
pub use schedule::{
    make_schedule, NoiseSchedule, ScheduleKind, COSINE_MAX_BETA, COSINE_OFFSET, DEFAULT_BETA_END,
    DEFAULT_BETA_START, DEFAULT_STEPS,
};

use crate::error::{arg_err, shape_err, Result};
use crate::tensor::Tensor;

/// Sampling steps used by default.
pub const DEFAULT_SAMPLING_STEPS: usize = 50;

/// `x_t = √ᾱ_t·x0 + √(1 − ᾱ_t)·ε`
pub fn q_sample(x0: &Tensor, t: usize, eps: &Tensor, sched: &NoiseSchedule) -> Result<Tensor> {
    if !(1..=sched.steps()).contains(&t) {
        return arg_err(format!("step {t} outside 1..={}", sched.steps()));
    }
    let ab = sched.alpha_bar(t);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    x0.zip_map(eps, |x, e| a * x + b * e)
}

/// Clean-image estimate implied by `ε̂` at step `t`.
pub fn predict_x0(x_t: &Tensor, eps_hat: &Tensor, t: usize, sched: &NoiseSchedule) -> Result<Tensor> {
    let ab = sched.alpha_bar(t);
    let (s, n) = (ab.sqrt(), (1.0 - ab).sqrt());
    x_t.zip_map(eps_hat, |x, e| (x - n * e) / s)
}

fn check_pair(x_t: &Tensor, x_tilde: &Tensor) -> Result<()> {
    if x_t.shape() != x_tilde.shape() {
        return shape_err(format!("x_t {:?} and condition {:?} differ", x_t.shape(), x_tilde.shape()));
    }
    Ok(())
}

fn predict_checked(
    pred: &dyn EpsilonPredictor,
    x_t: &Tensor,
    x_tilde: &Tensor,
    t: usize,
) -> Result<Tensor> {
    let eps = pred.predict(x_t, x_tilde, t)?;
    if eps.shape() != x_t.shape() {
        return shape_err(format!("predictor returned {:?} for input {:?}", eps.shape(), x_t.shape()));
    }
    if !eps.all_finite() {
        return arg_err(format!("predictor produced non-finite values at step {t}"));
    }
    Ok(eps)
}

/// One deterministic step `x_t → x_{t_prev}`:
/// `√ᾱ_{t'}·x̂0 + √(1 − ᾱ_{t'})·ε̂` with `x̂0 = (x_t − √(1 − ᾱ_t)·ε̂)/√ᾱ_t`.
pub fn ddim_step(
    x_t: &Tensor,
    x_tilde: &Tensor,
    t: usize,
    t_prev: usize,
    pred: &dyn EpsilonPredictor,
    sched: &NoiseSchedule,
) -> Result<Tensor> {
    if t <= t_prev || t > sched.steps() {
        return arg_err(format!("need {} ≥ t > t_prev, got t={t}, t_prev={t_prev}", sched.steps()));
    }
    check_pair(x_t, x_tilde)?;
    let eps = predict_checked(pred, x_t, x_tilde, t)?;
    ddim_update(x_t, &eps, sched.alpha_bar(t), sched.alpha_bar(t_prev))
}

/// The step algebra on raw `ᾱ` values.
pub fn ddim_update(x_t: &Tensor, eps_hat: &Tensor, alpha_bar_t: f64, alpha_bar_prev: f64) -> Result<Tensor> {
    if !(alpha_bar_t > 0.0 && alpha_bar_t <= 1.0 && alpha_bar_prev > 0.0 && alpha_bar_prev <= 1.0) {
        return arg_err("ᾱ values must lie in (0, 1]");
    }
    let (s, n) = (alpha_bar_t.sqrt(), (1.0 - alpha_bar_t).sqrt());
    let (a, b) = (alpha_bar_prev.sqrt(), (1.0 - alpha_bar_prev).sqrt());
    x_t.zip_map(eps_hat, |x, e| a * ((x - n * e) / s) + b * e)
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiffusionConfig {
    pub schedule: NoiseSchedule,
    /// `S`
    pub sampling_steps: usize,
}

impl DiffusionConfig {
    pub fn new(schedule: NoiseSchedule, sampling_steps: usize) -> Result<Self> {
        if !(1..=schedule.steps()).contains(&sampling_steps) {
            return arg_err(format!("sampling steps must lie in 1..={}, got {sampling_steps}", schedule.steps()));
        }
        Ok(Self { schedule, sampling_steps })
    }

    /// Visited steps in descending order, from `T` down to 1.
    ///
    /// `τ_i = round(1 + (i − 1)(T − 1)/(S − 1))` for `i = 1..S`; `S = 1` visits `T` only.
    pub fn timesteps(&self) -> Vec<usize> {
        let (t, s) = (self.schedule.steps(), self.sampling_steps);
        if s == 1 {
            return vec![t];
        }
        let den = 2 * (s - 1);
        (1..=s).rev().map(|i| 1 + (2 * (i - 1) * (t - 1) + (s - 1)) / den).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub t: usize,
    pub t_prev: usize,
    /// `‖x_{t_prev} − x_t‖₂`
    pub residual_norm: f64,
}

/// Runs the `S`-step deterministic reverse chain from `x_T` to `x_0`.
pub fn sample(x_big_t: &Tensor, x_tilde: &Tensor, cfg: &DiffusionConfig, pred: &dyn EpsilonPredictor) -> Result<Tensor> {
    sample_traced(x_big_t, x_tilde, cfg, pred).map(|(x, _)| x)
}

/// [`sample`] plus one [`StepRecord`] per step.
pub fn sample_traced(
    x_big_t: &Tensor,
    x_tilde: &Tensor,
    cfg: &DiffusionConfig,
    pred: &dyn EpsilonPredictor,
) -> Result<(Tensor, Vec<StepRecord>)> {
    check_pair(x_big_t, x_tilde)?;
    let mut taus = cfg.timesteps();
    taus.push(0);
    let mut x = x_big_t.clone();
    let mut trace = Vec::with_capacity(taus.len() - 1);
    for (step, w) in taus.windows(2).enumerate() {
        let next = ddim_step(&x, x_tilde, w[0], w[1], pred, &cfg.schedule)?;
        let residual_norm = next.sub(&x)?.data().iter().map(|v| v * v).sum::<f64>().sqrt();
        trace.push(StepRecord { step: step + 1, t: w[0], t_prev: w[1], residual_norm });
        x = next;
    }
    Ok((x, trace))
}

/// `mean((ε − ε_θ(q_sample(x0, t, ε), x̃, t))²)`
pub fn epsilon_loss(
    x0: &Tensor,
    t: usize,
    eps: &Tensor,
    x_tilde: &Tensor,
    pred: &dyn EpsilonPredictor,
    sched: &NoiseSchedule,
) -> Result<f64> {
    let x_t = q_sample(x0, t, eps, sched)?;
    check_pair(&x_t, x_tilde)?;
    let hat = predict_checked(pred, &x_t, x_tilde, t)?;
    Ok(eps.zip_map(&hat, |a, b| (a - b) * (a - b))?.mean())
}

/// KL divergence between isotropic Gaussians with equal variance.
pub fn gaussian_kl_equal_var(mu_q: &Tensor, mu_p: &Tensor, var: f64) -> Result<f64> {
    Ok(mu_q.zip_map(mu_p, |a, b| (a - b) * (a - b))?.sum() / (2.0 * var))
}

/// Posterior mean `μ̃_t(x_t, x0) = √ᾱ_{t−1}·x0 + √(1 − ᾱ_{t−1} − β̃_t)·ε_t`,
/// `ε_t = (x_t − √ᾱ_t·x0)/√(1 − ᾱ_t)`; valid for `t ≥ 2`.
pub fn posterior_mean(x_t: &Tensor, x0: &Tensor, t: usize, sched: &NoiseSchedule) -> Result<Tensor> {
    let (ab, ab_prev) = (sched.alpha_bar(t), sched.alpha_bar(t - 1));
    let dir = (1.0 - ab_prev - sched.posterior_variance(t)).max(0.0).sqrt();
    let (s, n) = (ab.sqrt(), (1.0 - ab).sqrt());
    let a = ab_prev.sqrt();
    x_t.zip_map(x0, |xt, x0| a * x0 + dir * (xt - s * x0) / n)
}

#[derive(Clone, Debug, PartialEq)]
pub struct VariationalBound {
    /// `KL(q(x_{t−1} | x_t, x0) ‖ p_θ(x_{t−1} | x_t))` for `t = 2..=T`, indexed by `t − 2`.
    pub kl: Vec<f64>,
    /// `−log N(x0; x̂0(x_1), β_1·I)`
    pub reconstruction: f64,
}

impl VariationalBound {
    pub fn kl_sum(&self) -> f64 {
        self.kl.iter().sum()
    }

    pub fn total(&self) -> f64 {
        self.kl_sum() + self.reconstruction
    }
}

/// Variational bound of `x0` given its noised trajectory `x_1..x_T`
/// (`trajectory[t − 1] = x_t`). Model and posterior share variance `β̃_t`.
pub fn variational_bound(
    x0: &Tensor,
    trajectory: &[Tensor],
    x_tilde: &Tensor,
    pred: &dyn EpsilonPredictor,
    sched: &NoiseSchedule,
) -> Result<VariationalBound> {
    if trajectory.len() != sched.steps() {
        return arg_err(format!("trajectory has {} states, schedule has {} steps", trajectory.len(), sched.steps()));
    }
    check_pair(x0, x_tilde)?;
    for x in trajectory {
        check_pair(x, x0)?;
    }
    let mut kl = Vec::with_capacity(sched.steps().saturating_sub(1));
    for t in 2..=sched.steps() {
        let x_t = &trajectory[t - 1];
        let eps = predict_checked(pred, x_t, x_tilde, t)?;
        let x0_hat = predict_x0(x_t, &eps, t, sched)?;
        let mu_q = posterior_mean(x_t, x0, t, sched)?;
        let mu_p = posterior_mean(x_t, &x0_hat, t, sched)?;
        kl.push(gaussian_kl_equal_var(&mu_q, &mu_p, sched.posterior_variance(t))?);
    }
    let x1 = &trajectory[0];
    let eps = predict_checked(pred, x1, x_tilde, 1)?;
    let mean = predict_x0(x1, &eps, 1, sched)?;
    let var = sched.beta(1);
    let log_norm = 0.5 * (2.0 * std::f64::consts::PI * var).ln();
    let reconstruction = gaussian_kl_equal_var(x0, &mean, var)? + log_norm * x0.len() as f64;
    Ok(VariationalBound { kl, reconstruction })
}
