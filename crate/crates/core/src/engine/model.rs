//! Desk-scale models with analytic mini-batch gradients.

use crate::config::ModelKind;

use super::data::Example;

/// Logits are clamped to this magnitude before the sigmoid.
pub const LOGIT_CLAMP: f64 = 30.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    kind: ModelKind,
    input_dim: usize,
    hidden: usize,
    /// Minimizer of the quadratic bowl; empty for other kinds.
    center: Vec<f64>,
}

impl Model {
    /// `f(w) = ½‖w − c‖²`, independent of the data.
    pub fn quadratic_bowl(center: Vec<f64>) -> Self {
        Self { kind: ModelKind::QuadraticBowl, input_dim: center.len(), hidden: 0, center }
    }

    pub fn linear_regression(input_dim: usize) -> Self {
        Self { kind: ModelKind::LinearRegression, input_dim, hidden: 0, center: Vec::new() }
    }

    pub fn logistic_regression(input_dim: usize) -> Self {
        Self { kind: ModelKind::LogisticRegression, input_dim, hidden: 0, center: Vec::new() }
    }

    /// One tanh hidden layer, scalar output, squared error.
    pub fn tiny_mlp(input_dim: usize, hidden: usize) -> Self {
        Self { kind: ModelKind::TinyMlp, input_dim, hidden, center: Vec::new() }
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden_units(&self) -> usize {
        self.hidden
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    /// Number of trainable parameters.
    pub fn dimension(&self) -> usize {
        match self.kind {
            ModelKind::TinyMlp => self.hidden * self.input_dim + 2 * self.hidden + 1,
            _ => self.input_dim,
        }
    }

    /// Model output for one input: `w·x`, `σ(w·x)`, or the network output.
    /// The bowl has no output and returns 0.
    pub fn predict(&self, w: &[f64], x: &[f64]) -> f64 {
        match self.kind {
            ModelKind::QuadraticBowl => 0.0,
            ModelKind::LinearRegression => dot(w, x),
            ModelKind::LogisticRegression => sigmoid(dot(w, x).clamp(-LOGIT_CLAMP, LOGIT_CLAMP)),
            ModelKind::TinyMlp => self.mlp_forward(w, x).0,
        }
    }

    /// Mean loss over `batch`. The bowl ignores the batch.
    pub fn loss(&self, w: &[f64], batch: &[Example]) -> f64 {
        if self.kind == ModelKind::QuadraticBowl {
            return bowl_loss(w, &self.center);
        }
        if batch.is_empty() {
            return 0.0;
        }
        batch.iter().map(|ex| self.example_loss(w, ex)).sum::<f64>() / batch.len() as f64
    }

    /// Mean loss and its gradient at `w`.
    pub fn loss_and_gradient(&self, w: &[f64], batch: &[Example]) -> (f64, Vec<f64>) {
        let mut grad = vec![0.0; w.len()];
        if self.kind == ModelKind::QuadraticBowl {
            for ((g, wi), ci) in grad.iter_mut().zip(w).zip(&self.center) {
                *g = wi - ci;
            }
            return (bowl_loss(w, &self.center), grad);
        }
        if batch.is_empty() {
            return (0.0, grad);
        }
        let mut total = 0.0;
        for ex in batch {
            total += self.accumulate(w, ex, &mut grad);
        }
        let scale = 1.0 / batch.len() as f64;
        grad.iter_mut().for_each(|g| *g *= scale);
        (total * scale, grad)
    }

    fn example_loss(&self, w: &[f64], ex: &Example) -> f64 {
        match self.kind {
            ModelKind::QuadraticBowl => bowl_loss(w, &self.center),
            ModelKind::LinearRegression => {
                let r = dot(w, &ex.x) - ex.y;
                0.5 * r * r
            }
            ModelKind::LogisticRegression => {
                let z = dot(w, &ex.x).clamp(-LOGIT_CLAMP, LOGIT_CLAMP);
                softplus(z) - ex.y * z
            }
            ModelKind::TinyMlp => {
                let (out, _) = self.mlp_forward(w, &ex.x);
                let r = out - ex.y;
                0.5 * r * r
            }
        }
    }

    /// Adds the example's gradient into `grad` and returns its loss.
    fn accumulate(&self, w: &[f64], ex: &Example, grad: &mut [f64]) -> f64 {
        match self.kind {
            ModelKind::QuadraticBowl => unreachable!("bowl gradient is batch independent"),
            ModelKind::LinearRegression => {
                let r = dot(w, &ex.x) - ex.y;
                axpy(r, &ex.x, grad);
                0.5 * r * r
            }
            ModelKind::LogisticRegression => {
                let z = dot(w, &ex.x).clamp(-LOGIT_CLAMP, LOGIT_CLAMP);
                axpy(sigmoid(z) - ex.y, &ex.x, grad);
                softplus(z) - ex.y * z
            }
            ModelKind::TinyMlp => {
                let (d, h) = (self.input_dim, self.hidden);
                let (out, act) = self.mlp_forward(w, &ex.x);
                let e = out - ex.y;
                let w2 = &w[h * d + h..h * d + 2 * h];
                let (g_w1, g_rest) = grad.split_at_mut(h * d);
                let (g_b1, g_rest) = g_rest.split_at_mut(h);
                let (g_w2, g_b2) = g_rest.split_at_mut(h);
                for j in 0..h {
                    g_w2[j] += e * act[j];
                    let da = e * w2[j] * (1.0 - act[j] * act[j]);
                    g_b1[j] += da;
                    axpy(da, &ex.x, &mut g_w1[j * d..(j + 1) * d]);
                }
                g_b2[0] += e;
                0.5 * e * e
            }
        }
    }

    /// Output and hidden activations.
    fn mlp_forward(&self, w: &[f64], x: &[f64]) -> (f64, Vec<f64>) {
        let (d, h) = (self.input_dim, self.hidden);
        let w1 = &w[..h * d];
        let b1 = &w[h * d..h * d + h];
        let w2 = &w[h * d + h..h * d + 2 * h];
        let b2 = w[h * d + 2 * h];
        let act: Vec<f64> = (0..h).map(|j| (dot(&w1[j * d..(j + 1) * d], x) + b1[j]).tanh()).collect();
        (dot(w2, &act) + b2, act)
    }
}

fn bowl_loss(w: &[f64], c: &[f64]) -> f64 {
    0.5 * w.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}
