//! Auxiliary context features `u_t`.

use serde::{Deserialize, Serialize};

use crate::diffcore::Tensor;

/// Width of the timestep featurization.
pub const CONTEXT_DIM: usize = 3;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextKind {
    /// `[t/P, sin(2 pi t/P), cos(2 pi t/P)]`
    #[default]
    Timestep,
    /// Every step receives the features of `t = 0`.
    Constant,
}

pub fn time_features(t: f64, period: f64) -> [f64; CONTEXT_DIM] {
    let x = t / period;
    let w = 2.0 * std::f64::consts::PI * x;
    [x, w.sin(), w.cos()]
}

/// Context rows for steps `start .. start + len`. Steps past `period` simply
/// extrapolate the featurization.
pub fn context_matrix(kind: ContextKind, start: usize, len: usize, period: f64) -> Tensor {
    let mut data = Vec::with_capacity(len * CONTEXT_DIM);
    for i in 0..len {
        let t = match kind {
            ContextKind::Timestep => (start + i) as f64,
            ContextKind::Constant => 0.0,
        };
        data.extend_from_slice(&time_features(t, period));
    }
    Tensor::matrix(len, CONTEXT_DIM, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn timestep_features() {
        let u = context_matrix(ContextKind::Timestep, 0, 4, 4.0);
        assert_eq!(u.row(0), &[0.0, 0.0, 1.0]);
        assert!((u.get(1, 1) - 1.0).abs() < 1e-15);
        assert!((u.get(2, 0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn constant_rows_repeat() {
        let u = context_matrix(ContextKind::Constant, 10, 5, 7.0);
        for t in 1..5 {
            assert_eq!(u.row(t), u.row(0));
        }
    }
}
