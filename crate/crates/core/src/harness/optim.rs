use crate::error::{Error, Result};

/// SGD with heavy-ball momentum and L2 weight decay folded into the gradient:
/// `v = mu * v + (g + wd * p)`, `p -= lr * v`.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Vec<f64>>,
}

impl OptimizerState {
    /// One velocity buffer per parameter, sized by `shapes`.
    pub fn new(lr: f64, momentum: f64, weight_decay: f64, shapes: &[usize]) -> Self {
        OptimizerState { lr, momentum, weight_decay, velocity: shapes.iter().map(|&n| vec![0.0; n]).collect() }
    }

    pub fn velocity(&self) -> &[Vec<f64>] {
        &self.velocity
    }

    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()> {
        if params.len() != self.velocity.len() || grads.len() != self.velocity.len() {
            return Err(Error::ShapeMismatch(format!(
                "optimizer tracks {} parameters, got {} with {} gradients",
                self.velocity.len(),
                params.len(),
                grads.len()
            )));
        }
        for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut self.velocity) {
            if p.len() != v.len() || g.len() != v.len() {
                return Err(Error::ShapeMismatch(format!("parameter of {} for buffer of {}", p.len(), v.len())));
            }
            for ((pi, gi), vi) in p.iter_mut().zip(*g).zip(v.iter_mut()) {
                *vi = self.momentum * *vi + gi + self.weight_decay * *pi;
                *pi -= self.lr * *vi;
            }
        }
        Ok(())
    }
}
