//! Limited-memory BFGS inverse-Hessian products with Powell-damped updates.

use std::collections::VecDeque;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone)]
pub struct Lbfgs {
    memory: usize,
    /// `(s, y, 1/sᵀy)`, oldest first.
    pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)>,
    /// Scale of the initial inverse Hessian `γ I`.
    gamma: f64,
    /// Infinity-norm of the first step when no curvature is known.
    first_step: f64,
}

impl Lbfgs {
    pub fn new(memory: usize, first_step: f64) -> Self {
        Lbfgs {
            memory: memory.max(1),
            pairs: VecDeque::new(),
            gamma: 1.0,
            first_step,
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn reset(&mut self) {
        self.pairs.clear();
        self.gamma = 1.0;
    }

    /// Steepest descent scaled to the configured first step.
    pub fn steepest(&self, g: &[f64]) -> Vec<f64> {
        let norm = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if norm == 0.0 {
            return vec![0.0; g.len()];
        }
        g.iter().map(|v| -self.first_step * v / norm).collect()
    }

    /// Search direction `-H g`.
    pub fn direction(&self, g: &[f64]) -> Vec<f64> {
        if self.pairs.is_empty() {
            return self.steepest(g);
        }
        let mut q = g.to_vec();
        let mut alphas = Vec::with_capacity(self.pairs.len());
        for (s, y, rho) in self.pairs.iter().rev() {
            let a = rho * dot(s, &q);
            for (qi, yi) in q.iter_mut().zip(y) {
                *qi -= a * yi;
            }
            alphas.push(a);
        }
        for qi in q.iter_mut() {
            *qi *= self.gamma;
        }
        for ((s, y, rho), a) in self.pairs.iter().zip(alphas.into_iter().rev()) {
            let b = rho * dot(y, &q);
            for (qi, si) in q.iter_mut().zip(s) {
                *qi += (a - b) * si;
            }
        }
        q.into_iter().map(|v| -v).collect()
    }

    /// Adds the pair `(s, y)`, where `bs` is the current `B s` (for a step along `-H g`, `-α g`).
    /// Returns false if the pair carried no usable curvature.
    pub fn update(&mut self, s: &[f64], y: &[f64], bs: &[f64]) -> bool {
        let ss = dot(s, s);
        if ss == 0.0 {
            return false;
        }
        let sbs = dot(s, bs);
        let sy = dot(s, y);
        let y: Vec<f64> = if sbs > 0.0 && sy < 0.2 * sbs {
            let theta = 0.8 * sbs / (sbs - sy);
            y.iter()
                .zip(bs)
                .map(|(yi, bi)| theta * yi + (1.0 - theta) * bi)
                .collect()
        } else {
            y.to_vec()
        };
        let sy = dot(s, &y);
        let yy = dot(&y, &y);
        if !(sy > 1e-12 * ss.sqrt() * yy.sqrt()) {
            return false;
        }
        self.gamma = sy / yy;
        if self.pairs.len() == self.memory {
            self.pairs.pop_front();
        }
        self.pairs.push_back((s.to_vec(), y, 1.0 / sy));
        true
    }
}
