use crate::error::{Error, Result};
use crate::netforge::{ModelGraph, ModelInput, Role};

/// A scalar loss over a flat parameter vector with an analytic gradient.
pub trait GradCheckable {
    fn n_params(&self) -> usize;
    fn param(&self, i: usize) -> f64;
    fn set_param(&mut self, i: usize, v: f64);
    fn loss(&self) -> Result<f64>;
    fn gradient(&self) -> Result<Vec<f64>>;
}

/// Largest relative disagreement between the analytic gradient and central
/// differences, `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn grad_check_with<G: GradCheckable>(f: &mut G, eps: f64) -> Result<f64> {
    let analytic = f.gradient()?;
    let mut worst = 0.0f64;
    for (i, &a) in analytic.iter().enumerate() {
        let orig = f.param(i);
        f.set_param(i, orig + eps);
        let up = f.loss()?;
        f.set_param(i, orig - eps);
        let down = f.loss()?;
        f.set_param(i, orig);
        let n = (up - down) / (2.0 * eps);
        if !(a.is_finite() && n.is_finite()) {
            return Err(Error::invalid(format!("non-finite gradient at parameter {i}")));
        }
        worst = worst.max((a - n).abs() / a.abs().max(n.abs()).max(1e-8));
    }
    Ok(worst)
}

/// Summed cross-entropy of a batch under a double-precision model, over the
/// trainable weights.
pub struct ModelBatch<'a> {
    pub model: &'a mut ModelGraph<f64>,
    pub batch: &'a [(ModelInput, usize)],
    index: Vec<(usize, usize)>,
}

impl<'a> ModelBatch<'a> {
    pub fn new(model: &'a mut ModelGraph<f64>, batch: &'a [(ModelInput, usize)]) -> Self {
        let mask = model.params.trainable_mask();
        let index = model
            .params
            .tensors
            .iter()
            .enumerate()
            .filter(|(i, t)| mask[*i] && t.role == Role::Weight)
            .flat_map(|(i, t)| (0..t.data.len()).map(move |j| (i, j)))
            .collect();
        Self { model, batch, index }
    }

    /// Tensor name of flat parameter `i`.
    pub fn name_of(&self, i: usize) -> &str {
        &self.model.params.tensors[self.index[i].0].name
    }
}

impl GradCheckable for ModelBatch<'_> {
    fn n_params(&self) -> usize {
        self.index.len()
    }

    fn param(&self, i: usize) -> f64 {
        let (t, j) = self.index[i];
        self.model.params.tensors[t].data[j]
    }

    fn set_param(&mut self, i: usize, v: f64) {
        let (t, j) = self.index[i];
        self.model.params.tensors[t].data[j] = v;
    }

    fn loss(&self) -> Result<f64> {
        let mut total = 0.0;
        for (x, y) in self.batch {
            let mut g = crate::netforge::Grads::new(&self.model.params, vec![false; self.model.params.tensors.len()]);
            total += self.model.loss_and_grad(x, *y, &mut g)?;
        }
        Ok(total)
    }

    fn gradient(&self) -> Result<Vec<f64>> {
        let mut g = self.model.new_grads();
        for (x, y) in self.batch {
            self.model.loss_and_grad(x, *y, &mut g)?;
        }
        Ok(self.index.iter().map(|&(t, j)| g.g[t][j]).collect())
    }
}

/// Gradient check of a double-precision model on `batch`.
pub fn grad_check(model: &mut ModelGraph<f64>, batch: &[(ModelInput, usize)], eps: f64) -> Result<f64> {
    grad_check_with(&mut ModelBatch::new(model, batch), eps)
}

/// `0.5 * sum (w.x + b - y)^2`; the exact-gradient reference case.
#[derive(Debug, Clone)]
pub struct LinearModel {
    pub w: Vec<f64>,
    pub b: f64,
    pub xs: Vec<Vec<f64>>,
    pub ys: Vec<f64>,
}

impl LinearModel {
    fn residuals(&self) -> Vec<f64> {
        self.xs.iter().zip(&self.ys).map(|(x, y)| x.iter().zip(&self.w).map(|(a, b)| a * b).sum::<f64>() + self.b - y).collect()
    }
}

impl GradCheckable for LinearModel {
    fn n_params(&self) -> usize {
        self.w.len() + 1
    }

    fn param(&self, i: usize) -> f64 {
        if i < self.w.len() {
            self.w[i]
        } else {
            self.b
        }
    }

    fn set_param(&mut self, i: usize, v: f64) {
        if i < self.w.len() {
            self.w[i] = v;
        } else {
            self.b = v;
        }
    }

    fn loss(&self) -> Result<f64> {
        Ok(0.5 * self.residuals().iter().map(|r| r * r).sum::<f64>())
    }

    fn gradient(&self) -> Result<Vec<f64>> {
        let r = self.residuals();
        let mut g: Vec<f64> = (0..self.w.len()).map(|k| r.iter().zip(&self.xs).map(|(r, x)| r * x[k]).sum()).collect();
        g.push(r.iter().sum());
        Ok(g)
    }
}
