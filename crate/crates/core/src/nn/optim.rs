use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "rule")]
pub enum UpdateRule {
    /// Plain gradient descent.
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Default for UpdateRule {
    fn default() -> Self {
        UpdateRule::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First-order optimizer over an ordered list of flat parameter buffers.
///
/// Adam moments are allocated on the first step and keyed by position, so
/// callers must present parameters in the same order every step.
#[derive(Debug, Clone)]
pub struct Optimizer<T> {
    rule: UpdateRule,
    moments: Vec<(Vec<T>, Vec<T>)>,
    steps: i32,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(rule: UpdateRule) -> Self {
        Optimizer {
            rule,
            moments: Vec::new(),
            steps: 0,
        }
    }

    pub fn rule(&self) -> UpdateRule {
        self.rule
    }

    pub fn reset(&mut self) {
        self.moments.clear();
        self.steps = 0;
    }

    pub fn step<'a, I>(&mut self, pairs: I, lr: T) -> Result<()>
    where
        I: IntoIterator<Item = (&'a mut [T], &'a [T])>,
    {
        if !(lr > T::zero()) {
            return Err(Error::invalid(format!("learning rate must be positive, got {lr}")));
        }
        let pairs: Vec<_> = pairs.into_iter().collect();
        for (i, (p, g)) in pairs.iter().enumerate() {
            if p.len() != g.len() {
                return Err(Error::shape(format!("optimizer parameter block {i}"), p.len(), g.len()));
            }
            if let Some(pos) = g.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "gradient of parameter block {i} at element {pos}"
                )));
            }
        }
        self.steps += 1;
        match self.rule {
            UpdateRule::Sgd => {
                for (p, g) in pairs {
                    for (w, &d) in p.iter_mut().zip(g) {
                        *w -= lr * d;
                    }
                }
            }
            UpdateRule::Adam { beta1, beta2, eps } => {
                if self.moments.len() != pairs.len() {
                    self.moments = pairs
                        .iter()
                        .map(|(p, _)| (vec![T::zero(); p.len()], vec![T::zero(); p.len()]))
                        .collect();
                }
                let (b1, b2, eps) = (T::lit(beta1), T::lit(beta2), T::lit(eps));
                let c1 = T::one() - b1.powi(self.steps);
                let c2 = T::one() - b2.powi(self.steps);
                for ((p, g), (m, v)) in pairs.into_iter().zip(self.moments.iter_mut()) {
                    if m.len() != p.len() {
                        return Err(Error::shape("optimizer moment buffer", m.len(), p.len()));
                    }
                    for i in 0..p.len() {
                        m[i] = b1 * m[i] + (T::one() - b1) * g[i];
                        v[i] = b2 * v[i] + (T::one() - b2) * g[i] * g[i];
                        let mh = m[i] / c1;
                        let vh = v[i] / c2;
                        p[i] -= lr * mh / (vh.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}
