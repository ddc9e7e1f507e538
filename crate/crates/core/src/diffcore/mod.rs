//! Reverse-mode automatic differentiation over dense row-major tensors.
//!
//! A [`Graph`] records every operation as it is evaluated. Calling
//! [`Graph::backward`] on a scalar node sweeps the tape once in reverse and
//! returns the gradient of every leaf. There is no broadcasting beyond the
//! explicit `scale`/`add_scalar` (scalar x tensor) and `add_row`/`mul_row`
//! (per-row bias/gain) operations.

mod graph;
mod tensor;

pub use graph::{Gradients, Graph, Var};
pub use tensor::Tensor;

pub(crate) use graph::{logsumexp, softmax_into};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Options for [`check_gradients`].
#[derive(Clone, Debug)]
pub struct GradCheck {
    /// Central-difference step.
    pub eps: f64,
    /// Check at most this many randomly chosen coordinates per parameter
    /// tensor; `None` checks all of them.
    pub max_coords: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheck {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            max_coords: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// `||analytic - numeric|| / max(||numeric||, 1e-8)` per parameter
    /// tensor, norms taken over the checked coordinates.
    pub per_param: Vec<f64>,
    pub max_rel_error: f64,
    pub coords_checked: usize,
}

/// Compare reverse-mode gradients of `f` against central finite differences.
///
/// `f` must be deterministic given the parameter values: any random draws
/// (noise, dropout masks) have to be fixed by the caller.
pub fn check_gradients<F>(f: F, params: &[Tensor], opts: &GradCheck) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let eval = |ps: &[Tensor]| -> Result<(Graph, Var, Vec<Var>)> {
        let mut g = Graph::new();
        let vars: Vec<Var> = ps.iter().map(|p| g.leaf(p.clone())).collect();
        let loss = f(&mut g, &vars)?;
        Ok((g, loss, vars))
    };

    let (g, loss, vars) = eval(params)?;
    let grads = g.backward(loss)?;

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut work: Vec<Tensor> = params.to_vec();
    let mut per_param = Vec::with_capacity(params.len());
    let mut coords_checked = 0;

    for (pi, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var).expect("leaf gradient");
        let n = params[pi].len();
        let coords: Vec<usize> = match opts.max_coords {
            Some(m) if m < n => sample(&mut rng, n, m).into_vec(),
            _ => (0..n).collect(),
        };
        let mut diff2 = 0.0;
        let mut num2 = 0.0;
        for &c in &coords {
            let orig = work[pi].data()[c];
            work[pi].data_mut()[c] = orig + opts.eps;
            let up = scalar_of(&eval(&work)?)?;
            work[pi].data_mut()[c] = orig - opts.eps;
            let down = scalar_of(&eval(&work)?)?;
            work[pi].data_mut()[c] = orig;
            let numeric = (up - down) / (2.0 * opts.eps);
            diff2 += (analytic.data()[c] - numeric).powi(2);
            num2 += numeric * numeric;
        }
        coords_checked += coords.len();
        per_param.push(diff2.sqrt() / num2.sqrt().max(1e-8));
    }
    let max_rel_error = per_param.iter().cloned().fold(0.0, f64::max);
    Ok(GradCheckReport {
        per_param,
        max_rel_error,
        coords_checked,
    })
}

fn scalar_of((g, loss, _): &(Graph, Var, Vec<Var>)) -> Result<f64> {
    g.value(*loss)
        .item()
        .ok_or_else(|| Error::NotScalar(g.value(*loss).shape().to_vec()))
}
