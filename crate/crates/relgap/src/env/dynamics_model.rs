//! Trainable tabular dynamics: a logit tensor whose per-row softmax is the
//! transition function.

use ndarray::{Array1, Array3};

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct TabularDynamicsModel {
    logits: Array3<f64>,
}

impl TabularDynamicsModel {
    pub fn new(logits: Array3<f64>) -> Result<Self> {
        if logits.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidValue("non-finite logit".into()));
        }
        Ok(Self { logits })
    }

    /// Initializes logits at the log of the given transition probabilities
    /// (floored to keep logs finite), so the derived transition starts at
    /// the source dynamics.
    pub fn from_transition(transition: &Array3<f64>) -> Self {
        Self {
            logits: transition.mapv(|p| p.max(1e-12).ln()),
        }
    }

    pub fn logits(&self) -> &Array3<f64> {
        &self.logits
    }

    pub fn logits_mut(&mut self) -> &mut Array3<f64> {
        &mut self.logits
    }

    pub fn n_states(&self) -> usize {
        self.logits.dim().0
    }

    pub fn n_actions(&self) -> usize {
        self.logits.dim().1
    }

    /// Softmax of one logit row.
    pub fn transition_row(&self, s: usize, a: usize) -> Array1<f64> {
        let row = self.logits.slice(ndarray::s![s, a, ..]);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut out = Array1::zeros(row.len());
        let mut sum = 0.0;
        for (i, &z) in row.iter().enumerate() {
            let e = (z - max).exp();
            out[i] = e;
            sum += e;
        }
        out.mapv_inplace(|e| e / sum);
        out
    }

    /// The full derived transition tensor.
    pub fn transition(&self) -> Array3<f64> {
        let (n_states, n_actions, n_next) = self.logits.dim();
        let mut out = Array3::zeros((n_states, n_actions, n_next));
        for s in 0..n_states {
            for a in 0..n_actions {
                let row = self.transition_row(s, a);
                for sn in 0..n_next {
                    out[[s, a, sn]] = row[sn];
                }
            }
        }
        out
    }
}
