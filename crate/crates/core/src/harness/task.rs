use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::Error;

use super::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    /// Targets from a fixed random smooth function of 16 Gaussian features,
    /// standardized to unit variance. Mean squared error loss.
    SyntheticRegression,
    /// Two interleaved half circles lifted to 16 features by a fixed random
    /// projection. Logistic loss on a single logit.
    TwoMoons,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::SyntheticRegression => "synthetic-regression",
            Task::TwoMoons => "two-moons",
        })
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "synthetic-regression" | "regression" => Ok(Task::SyntheticRegression),
            "two-moons" | "moons" => Ok(Task::TwoMoons),
            _ => Err(Error::InvalidConfig(format!("unknown task {s:?}"))),
        }
    }
}

pub const FEATURES: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub task: Task,
    pub x: Matrix,
    /// `n x 1`: regression targets or class labels in {0, 1}.
    pub y: Matrix,
}

impl Dataset {
    pub fn generate(task: Task, samples: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        match task {
            Task::SyntheticRegression => regression(samples, &mut rng),
            Task::TwoMoons => two_moons(samples, &mut rng),
        }
    }

    pub fn len(&self) -> usize {
        self.x.rows
    }

    pub fn is_empty(&self) -> bool {
        self.x.rows == 0
    }

    /// Loss of predictions `out` (`n x 1`) and its gradient.
    pub fn loss(&self, out: &Matrix) -> (f64, Matrix) {
        let n = self.len() as f64;
        match self.task {
            Task::SyntheticRegression => {
                let diff: Vec<f64> = out.data.iter().zip(&self.y.data).map(|(p, t)| p - t).collect();
                let loss = diff.iter().map(|d| d * d).sum::<f64>() / n;
                let grad = diff.iter().map(|d| 2.0 * d / n).collect();
                (loss, Matrix { rows: out.rows, cols: 1, data: grad })
            }
            Task::TwoMoons => {
                let mut loss = 0.0;
                let mut grad = Vec::with_capacity(self.len());
                for (&z, &t) in out.data.iter().zip(&self.y.data) {
                    // log(1 + e^z) - t*z, evaluated stably.
                    loss += z.max(0.0) + (-z.abs()).exp().ln_1p() - t * z;
                    grad.push((sigmoid(z) - t) / n);
                }
                (loss / n, Matrix { rows: out.rows, cols: 1, data: grad })
            }
        }
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn unit_vector(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..n).map(|_| gaussian(rng)).collect();
    let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    v.into_iter().map(|a| a / norm).collect()
}

fn regression(samples: usize, rng: &mut ChaCha8Rng) -> Dataset {
    let u = unit_vector(rng, FEATURES);
    let v = unit_vector(rng, FEATURES);
    let x = Matrix::from_fn(samples, FEATURES, |_, _| gaussian(rng));
    let dot = |r: usize, w: &[f64]| x.row(r).iter().zip(w).map(|(a, b)| a * b).sum::<f64>();
    let mut y: Vec<f64> = (0..samples)
        .map(|r| (dot(r, &u)).sin() + 0.5 * dot(r, &v) + 0.05 * gaussian(rng))
        .collect();
    let mean = y.iter().sum::<f64>() / samples as f64;
    let sd = (y.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / samples as f64).sqrt();
    for t in &mut y {
        *t = (*t - mean) / sd;
    }
    Dataset { task: Task::SyntheticRegression, x, y: Matrix { rows: samples, cols: 1, data: y } }
}

fn two_moons(samples: usize, rng: &mut ChaCha8Rng) -> Dataset {
    let lift: Vec<Vec<f64>> = (0..FEATURES).map(|_| vec![gaussian(rng), gaussian(rng)]).collect();
    let mut x = Matrix::zeros(samples, FEATURES);
    let mut y = Vec::with_capacity(samples);
    for r in 0..samples {
        let label = r % 2;
        let t = rng.random_range(0.0..PI);
        let (px, py) = if label == 0 { (t.cos(), t.sin()) } else { (1.0 - t.cos(), 0.5 - t.sin()) };
        let (px, py) = (px + 0.1 * gaussian(rng), py + 0.1 * gaussian(rng));
        for (c, l) in lift.iter().enumerate() {
            x.set(r, c, l[0] * px + l[1] * py);
        }
        y.push(label as f64);
    }
    Dataset { task: Task::TwoMoons, x, y: Matrix { rows: samples, cols: 1, data: y } }
}
