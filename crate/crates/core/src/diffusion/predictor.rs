use crate::error::{shape_err, Result};
use crate::tensor::{SeededRng, Tensor};

/// Noise estimate `ε̂ = ε_θ(x_t, x̃, t)`; the result has `x_t`'s shape.
pub trait EpsilonPredictor {
    fn predict(&self, x_t: &Tensor, x_tilde: &Tensor, t: usize) -> Result<Tensor>;
}

impl<F> EpsilonPredictor for F
where
    F: Fn(&Tensor, &Tensor, usize) -> Result<Tensor>,
{
    fn predict(&self, x_t: &Tensor, x_tilde: &Tensor, t: usize) -> Result<Tensor> {
        self(x_t, x_tilde, t)
    }
}

/// Returns a stored ground-truth noise tensor at every step.
#[derive(Clone, Debug, PartialEq)]
pub struct OraclePredictor {
    eps: Tensor,
}

impl OraclePredictor {
    pub fn new(eps: Tensor) -> Self {
        Self { eps }
    }

    pub fn eps(&self) -> &Tensor {
        &self.eps
    }
}

impl EpsilonPredictor for OraclePredictor {
    fn predict(&self, x_t: &Tensor, _x_tilde: &Tensor, _t: usize) -> Result<Tensor> {
        if x_t.shape() != self.eps.shape() {
            return shape_err(format!("oracle noise {:?} does not match x_t {:?}", self.eps.shape(), x_t.shape()));
        }
        Ok(self.eps.clone())
    }
}

/// Per-element two-layer MLP with fixed random weights.
///
/// Input features are `(x_t, x̃, sin(πt/1000), cos(πt/1000))`; a `tanh`
/// hidden layer feeds a linear scalar output. Only useful as a smoke test.
#[derive(Clone, Debug, PartialEq)]
pub struct TinyMlpPredictor {
    w1: Vec<[f64; 4]>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: f64,
}

impl TinyMlpPredictor {
    pub fn new(seed: u64, hidden: usize) -> Self {
        let mut rng = SeededRng::derive(seed, 0x7110);
        let w1 = (0..hidden).map(|_| [0.5 * rng.normal(), 0.5 * rng.normal(), 0.5 * rng.normal(), 0.5 * rng.normal()]).collect();
        let b1 = (0..hidden).map(|_| 0.1 * rng.normal()).collect();
        let scale = 1.0 / (hidden.max(1) as f64).sqrt();
        let w2 = (0..hidden).map(|_| scale * rng.normal()).collect();
        Self { w1, b1, w2, b2: 0.1 * rng.normal() }
    }
}

impl EpsilonPredictor for TinyMlpPredictor {
    fn predict(&self, x_t: &Tensor, x_tilde: &Tensor, t: usize) -> Result<Tensor> {
        if x_t.shape() != x_tilde.shape() {
            return shape_err(format!("x_t {:?} and condition {:?} differ", x_t.shape(), x_tilde.shape()));
        }
        let phase = std::f64::consts::PI * t as f64 / 1000.0;
        let (s, c) = phase.sin_cos();
        let out = x_t.zip_map(x_tilde, |a, b| {
            let mut y = self.b2;
            for ((w, bias), v) in self.w1.iter().zip(&self.b1).zip(&self.w2) {
                y += v * (w[0] * a + w[1] * b + w[2] * s + w[3] * c + bias).tanh();
            }
            y
        })?;
        Ok(out)
    }
}
