//! A 17-32-(MAX+1) perceptron with a ReLU hidden layer and softmax output.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::FEATURE_DIM;

pub const HIDDEN_UNITS: usize = 32;

/// Row-major weights: `w1[h * FEATURE_DIM + i]`, `w2[c * HIDDEN_UNITS + h]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub classes: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

struct Forward {
    hidden: Vec<f64>,
    probs: Vec<f64>,
}

impl MlpParams {
    pub fn zeros(classes: usize) -> Self {
        Self {
            classes,
            w1: vec![0.0; HIDDEN_UNITS * FEATURE_DIM],
            b1: vec![0.0; HIDDEN_UNITS],
            w2: vec![0.0; classes * HIDDEN_UNITS],
            b2: vec![0.0; classes],
        }
    }

    /// He-uniform initialization.
    pub fn random(classes: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Self::zeros(classes);
        let l1 = (6.0 / FEATURE_DIM as f64).sqrt();
        let l2 = (6.0 / HIDDEN_UNITS as f64).sqrt();
        p.w1.iter_mut().for_each(|w| *w = rng.gen_range(-l1..l1));
        p.w2.iter_mut().for_each(|w| *w = rng.gen_range(-l2..l2));
        p
    }

    fn forward(&self, x: &[f64]) -> Forward {
        let hidden: Vec<f64> = (0..HIDDEN_UNITS)
            .map(|h| {
                let row = &self.w1[h * FEATURE_DIM..(h + 1) * FEATURE_DIM];
                let z = self.b1[h] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
                z.max(0.0)
            })
            .collect();
        let logits: Vec<f64> = (0..self.classes)
            .map(|c| {
                let row = &self.w2[c * HIDDEN_UNITS..(c + 1) * HIDDEN_UNITS];
                self.b2[c] + row.iter().zip(&hidden).map(|(w, v)| w * v).sum::<f64>()
            })
            .collect();
        Forward {
            hidden,
            probs: softmax(&logits),
        }
    }

    pub fn predict(&self, x: &[f64]) -> Vec<f64> {
        self.forward(x).probs
    }

    /// Mean cross-entropy against integer labels.
    pub fn loss(&self, xs: &[Vec<f64>], labels: &[usize]) -> f64 {
        let total: f64 = xs
            .iter()
            .zip(labels)
            .map(|(x, &y)| -self.forward(x).probs[y].max(1e-300).ln())
            .sum();
        total / xs.len() as f64
    }

    /// One gradient step on a minibatch.
    fn step(&mut self, xs: &[&Vec<f64>], labels: &[usize], lr: f64) {
        let mut gw1 = vec![0.0; self.w1.len()];
        let mut gb1 = vec![0.0; self.b1.len()];
        let mut gw2 = vec![0.0; self.w2.len()];
        let mut gb2 = vec![0.0; self.b2.len()];
        for (x, &y) in xs.iter().zip(labels) {
            let f = self.forward(x);
            // d loss / d logits for softmax + cross-entropy
            let mut dlogit = f.probs;
            dlogit[y] -= 1.0;
            let mut dhidden = vec![0.0; HIDDEN_UNITS];
            for c in 0..self.classes {
                gb2[c] += dlogit[c];
                for h in 0..HIDDEN_UNITS {
                    gw2[c * HIDDEN_UNITS + h] += dlogit[c] * f.hidden[h];
                    dhidden[h] += dlogit[c] * self.w2[c * HIDDEN_UNITS + h];
                }
            }
            for h in 0..HIDDEN_UNITS {
                if f.hidden[h] <= 0.0 {
                    continue;
                }
                gb1[h] += dhidden[h];
                for i in 0..FEATURE_DIM {
                    gw1[h * FEATURE_DIM + i] += dhidden[h] * x[i];
                }
            }
        }
        let scale = lr / xs.len() as f64;
        for (w, g) in self.w1.iter_mut().zip(&gw1) {
            *w -= scale * g;
        }
        for (w, g) in self.b1.iter_mut().zip(&gb1) {
            *w -= scale * g;
        }
        for (w, g) in self.w2.iter_mut().zip(&gw2) {
            *w -= scale * g;
        }
        for (w, g) in self.b2.iter_mut().zip(&gb2) {
            *w -= scale * g;
        }
    }

    /// Minibatch gradient descent; returns the full-data loss after each epoch.
    pub fn fit(
        &mut self,
        xs: &[Vec<f64>],
        labels: &[usize],
        learning_rate: f64,
        epochs: usize,
        batch_size: usize,
        seed: u64,
    ) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let mut order: Vec<usize> = (0..xs.len()).collect();
        let batch_size = batch_size.max(1);
        let mut history = Vec::with_capacity(epochs);
        for _ in 0..epochs {
            order.shuffle(&mut rng);
            for chunk in order.chunks(batch_size) {
                let bx: Vec<&Vec<f64>> = chunk.iter().map(|&i| &xs[i]).collect();
                let by: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
                self.step(&bx, &by, learning_rate);
            }
            history.push(self.loss(xs, labels));
        }
        history
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}
