//! Parameter storage and the small MLP building blocks used by the encoder,
//! decoder, prior network and regime network.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{Graph, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

/// Named learnable tensors, in registration order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn set(&mut self, id: ParamId, value: Tensor) -> Result<()> {
        let cur = &self.values[id.0];
        if cur.dims() != value.dims() {
            return Err(Error::ShapeMismatch {
                op: "ParamStore::set",
                left: cur.shape().to_vec(),
                right: value.shape().to_vec(),
            });
        }
        self.values[id.0] = value;
        Ok(())
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.names
            .iter()
            .zip(&self.values)
            .enumerate()
            .map(|(i, (n, v))| (ParamId(i), n.as_str(), v))
    }

    pub fn values(&self) -> &[Tensor] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Tensor] {
        &mut self.values
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    /// Register every parameter as a graph leaf.
    pub fn bind(&self, g: &mut Graph) -> Bound {
        Bound {
            vars: self.values.iter().map(|v| g.leaf(v.clone())).collect(),
        }
    }

    /// Register every parameter as a graph constant (no gradients).
    pub fn bind_frozen(&self, g: &mut Graph) -> Bound {
        Bound {
            vars: self.values.iter().map(|v| g.constant(v.clone())).collect(),
        }
    }
}

/// Graph nodes for every parameter of a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Self { vars }
    }

    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

/// Uniform `(-1/sqrt(fan_in), 1/sqrt(fan_in))` initialization.
fn init_uniform(rng: &mut impl Rng, rows: usize, cols: usize, fan_in: usize) -> Tensor {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    Tensor::matrix(
        rows,
        cols,
        (0..rows * cols).map(|_| rng.random_range(-bound..bound)).collect(),
    )
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        let weight = store.add(format!("{name}.weight"), init_uniform(rng, fan_in, fan_out, fan_in));
        let bias = store.add(format!("{name}.bias"), init_uniform(rng, 1, fan_out, fan_in));
        Self {
            weight,
            bias,
            fan_in,
            fan_out,
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        g.affine(x, p.var(self.weight), p.var(self.bias))
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, width: usize) -> Self {
        Self {
            gain: store.add(format!("{name}.gain"), Tensor::ones(1, width)),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(1, width)),
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let z = g.layer_norm_rows(x, 1e-5)?;
        let z = g.mul_row(z, p.var(self.gain))?;
        g.add_row(z, p.var(self.bias))
    }
}

/// Feed-forward ReLU network; hidden layers optionally layer-normalized
/// (`Linear -> LayerNorm -> ReLU -> dropout`), output layer linear.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub norms: Vec<LayerNorm>,
    pub dropout: f64,
}

impl Mlp {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        widths: &[usize],
        layer_norm: bool,
        dropout: f64,
        rng: &mut impl Rng,
    ) -> Self {
        assert!(widths.len() >= 2, "an MLP needs input and output widths");
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, &format!("{name}.l{i}"), w[0], w[1], rng))
            .collect::<Vec<_>>();
        let norms = if layer_norm {
            widths[1..widths.len() - 1]
                .iter()
                .enumerate()
                .map(|(i, &w)| LayerNorm::new(store, &format!("{name}.ln{i}"), w))
                .collect()
        } else {
            Vec::new()
        };
        Self { layers, norms, dropout }
    }

    pub fn hidden_layers(&self) -> usize {
        self.layers.len() - 1
    }

    /// Hidden widths, one per dropout mask.
    pub fn hidden_widths(&self) -> Vec<usize> {
        self.layers[..self.layers.len() - 1].iter().map(|l| l.fan_out).collect()
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().map_or(0, |l| l.fan_out)
    }

    /// Draw inverted-dropout masks (`0` or `1/(1-rate)`) for `rows` inputs.
    pub fn draw_masks(&self, rows: usize, rng: &mut impl Rng) -> Vec<Tensor> {
        let keep = 1.0 - self.dropout;
        self.hidden_widths()
            .into_iter()
            .map(|w| {
                Tensor::matrix(
                    rows,
                    w,
                    (0..rows * w)
                        .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                        .collect(),
                )
            })
            .collect()
    }

    /// `masks` must be empty (evaluation) or hold one mask per hidden layer.
    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var, masks: &[Tensor]) -> Result<Var> {
        if !masks.is_empty() && masks.len() != self.hidden_layers() {
            return Err(Error::InvalidArgument(format!(
                "expected {} dropout masks, got {}",
                self.hidden_layers(),
                masks.len()
            )));
        }
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(g, p, h)?;
            if i < last {
                if let Some(norm) = self.norms.get(i) {
                    h = norm.forward(g, p, h)?;
                }
                h = g.relu(h)?;
                if let Some(m) = masks.get(i) {
                    h = g.mask_mul(h, m.clone())?;
                }
            }
        }
        Ok(h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn mlp_shapes_and_masks() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let mlp = Mlp::new(&mut store, "enc", &[7, 16, 16, 4], true, 0.5, &mut rng);
        assert_eq!(mlp.hidden_widths(), vec![16, 16]);
        let mut g = Graph::new();
        let p = store.bind(&mut g);
        let x = g.constant(Tensor::ones(5, 7));
        let masks = mlp.draw_masks(5, &mut rng);
        let y = mlp.forward(&mut g, &p, x, &masks).unwrap();
        assert_eq!(g.value(y).dims(), (5, 4));
        assert!(mlp.forward(&mut g, &p, x, &masks[..1]).is_err());
    }

    #[test]
    fn masks_are_zero_or_rescaled() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let mlp = Mlp::new(&mut store, "m", &[3, 50, 2], false, 0.2, &mut rng);
        let m = &mlp.draw_masks(40, &mut rng)[0];
        assert!(m.data().iter().all(|&v| v == 0.0 || (v - 1.25).abs() < 1e-15));
        let kept = m.data().iter().filter(|&&v| v > 0.0).count() as f64 / m.len() as f64;
        assert!((kept - 0.8).abs() < 0.05);
    }

    #[test]
    fn store_lookup_and_set() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::zeros(2, 2));
        assert_eq!(store.find("w"), Some(id));
        assert!(store.set(id, Tensor::zeros(3, 2)).is_err());
        store.set(id, Tensor::ones(2, 2)).unwrap();
        assert_eq!(store.get(id).sum(), 4.0);
    }
}
