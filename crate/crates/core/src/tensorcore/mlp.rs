//! Dense multilayer perceptron with an explicit forward cache and exact backprop.
//!
//! Weights are stored row-major with shape `(out_dim, in_dim)`. Hidden layers apply the
//! configured activation; the output layer is always linear.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation `z`.
    #[inline]
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub in_dim: usize,
    pub out_dim: usize,
    /// Row-major `(out_dim, in_dim)`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            weights: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    /// Uniform init in `±1/sqrt(fan_in)` for weights and biases.
    pub fn init<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let weights = (0..in_dim * out_dim)
            .map(|_| rng.gen_range(-bound..bound))
            .collect();
        let bias = (0..out_dim).map(|_| rng.gen_range(-bound..bound)).collect();
        Self {
            in_dim,
            out_dim,
            weights,
            bias,
        }
    }

    #[inline]
    fn affine_into(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.weights.chunks_exact(self.in_dim).zip(&self.bias).map(
            |(row, b)| {
                let mut acc = *b;
                for (w, xi) in row.iter().zip(x) {
                    acc += w * xi;
                }
                acc
            },
        ));
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

/// Parameters of an MLP: `layers.len() - 1` hidden activations, linear output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub layers: Vec<Layer>,
    pub activations: Vec<Activation>,
}

/// Everything `backward` needs from a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input to each layer (`inputs[0]` is the network input).
    inputs: Vec<Vec<f64>>,
    /// Pre-activations of the hidden layers.
    pre: Vec<Vec<f64>>,
    signature: Vec<(usize, usize)>,
}

impl ForwardCache {
    pub fn input(&self) -> &[f64] {
        &self.inputs[0]
    }
}

impl MlpParams {
    /// Builds a network with `dims = [in, h1, ..., out]`, all hidden layers sharing one
    /// activation.
    pub fn new<R: Rng + ?Sized>(
        dims: &[usize],
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::Shape("an MLP needs at least input and output dims".into()));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::Shape(format!("zero-width layer in {dims:?}")));
        }
        let layers: Vec<Layer> = dims.windows(2).map(|w| Layer::init(w[0], w[1], rng)).collect();
        let activations = vec![activation; layers.len() - 1];
        Ok(Self {
            layers,
            activations,
        })
    }

    pub fn from_layers(layers: Vec<Layer>, activations: Vec<Activation>) -> Result<Self> {
        let p = Self {
            layers,
            activations,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Shape("no layers".into()));
        }
        if self.activations.len() + 1 != self.layers.len() {
            return Err(Error::Shape(format!(
                "{} layers need {} activations, got {}",
                self.layers.len(),
                self.layers.len() - 1,
                self.activations.len()
            )));
        }
        for (k, layer) in self.layers.iter().enumerate() {
            if layer.weights.len() != layer.in_dim * layer.out_dim
                || layer.bias.len() != layer.out_dim
            {
                return Err(Error::Shape(format!("layer {k} buffers do not match its dims")));
            }
            if let Some(next) = self.layers.get(k + 1) {
                if next.in_dim != layer.out_dim {
                    return Err(Error::Shape(format!(
                        "layer {k} outputs {} but layer {} expects {}",
                        layer.out_dim,
                        k + 1,
                        next.in_dim
                    )));
                }
            }
            if layer.weights.iter().chain(&layer.bias).any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("layer {k} parameters")));
            }
        }
        Ok(())
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    pub fn shapes(&self) -> Vec<(usize, usize)> {
        self.layers.iter().map(|l| (l.in_dim, l.out_dim)).collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    /// Forward pass keeping the activation record.
    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
        self.check_input(input)?;
        let n = self.layers.len();
        let mut inputs = Vec::with_capacity(n);
        let mut pre = Vec::with_capacity(n - 1);
        let mut x = input.to_vec();
        for (k, layer) in self.layers.iter().enumerate() {
            let mut z = Vec::with_capacity(layer.out_dim);
            layer.affine_into(&x, &mut z);
            inputs.push(x);
            if k + 1 < n {
                let act = self.activations[k];
                let h = z.iter().map(|&v| act.apply(v)).collect();
                pre.push(z);
                x = h;
            } else {
                x = z;
            }
        }
        Ok((
            x,
            ForwardCache {
                inputs,
                pre,
                signature: self.shapes(),
            },
        ))
    }

    /// Forward pass without keeping a cache.
    pub fn predict(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input)?;
        let n = self.layers.len();
        let mut x = input.to_vec();
        let mut z = Vec::new();
        for (k, layer) in self.layers.iter().enumerate() {
            layer.affine_into(&x, &mut z);
            if k + 1 < n {
                let act = self.activations[k];
                z.iter_mut().for_each(|v| *v = act.apply(*v));
            }
            std::mem::swap(&mut x, &mut z);
        }
        Ok(x)
    }

    /// Scalar-output convenience.
    pub fn predict_scalar(&self, input: &[f64]) -> Result<f64> {
        let out = self.predict(input)?;
        if out.len() != 1 {
            return Err(Error::Shape(format!("expected scalar output, got {}", out.len())));
        }
        Ok(out[0])
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.in_dim() {
            return Err(Error::Shape(format!(
                "input length {} != network input dim {}",
                input.len(),
                self.in_dim()
            )));
        }
        Ok(())
    }

    /// Gradients of `output · output_grad` with respect to every parameter.
    pub fn backward(&self, cache: &ForwardCache, output_grad: &[f64]) -> Result<GradBundle> {
        let mut grads = GradBundle::zeros_like(self);
        self.backward_into(cache, output_grad, &mut grads)?;
        Ok(grads)
    }

    /// Accumulates parameter gradients into `grads` and returns the gradient with respect to
    /// the network input.
    pub fn backward_into(
        &self,
        cache: &ForwardCache,
        output_grad: &[f64],
        grads: &mut GradBundle,
    ) -> Result<Vec<f64>> {
        if cache.signature != self.shapes() {
            return Err(Error::Shape("forward cache does not match these parameters".into()));
        }
        if output_grad.len() != self.out_dim() {
            return Err(Error::Shape(format!(
                "output grad length {} != output dim {}",
                output_grad.len(),
                self.out_dim()
            )));
        }
        if grads.layers.len() != self.layers.len() {
            return Err(Error::Shape("gradient bundle does not match parameters".into()));
        }
        let mut delta = output_grad.to_vec();
        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            let x = &cache.inputs[k];
            let g = &mut grads.layers[k];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                g.bias[o] += d;
                let row = &mut g.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                for (gw, xi) in row.iter_mut().zip(x) {
                    *gw += d * xi;
                }
            }
            let mut dx = vec![0.0; layer.in_dim];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                for (acc, w) in dx.iter_mut().zip(row) {
                    *acc += d * w;
                }
            }
            if k > 0 {
                let act = self.activations[k - 1];
                for (v, &z) in dx.iter_mut().zip(&cache.pre[k - 1]) {
                    *v *= act.derivative(z);
                }
            }
            delta = dx;
        }
        Ok(delta)
    }

    /// `self ← (1 − tau)·self + tau·source`, layer by layer.
    pub fn blend_from(&mut self, source: &MlpParams, tau: f64) -> Result<()> {
        if self.shapes() != source.shapes() {
            return Err(Error::Shape("blend between differently shaped networks".into()));
        }
        for (t, s) in self.layers.iter_mut().zip(&source.layers) {
            for (a, b) in t.weights.iter_mut().zip(&s.weights) {
                *a = (1.0 - tau) * *a + tau * b;
            }
            for (a, b) in t.bias.iter_mut().zip(&s.bias) {
                *a = (1.0 - tau) * *a + tau * b;
            }
        }
        Ok(())
    }

    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_flat(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.param_count() {
            return Err(Error::Shape(format!(
                "flat vector of {} for {} parameters",
                values.len(),
                self.param_count()
            )));
        }
        let mut i = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&values[i..i + nw]);
            i += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&values[i..i + nb]);
            i += nb;
        }
        Ok(())
    }

    /// Euclidean distance between two identically shaped parameter sets.
    pub fn distance(&self, other: &MlpParams) -> Result<f64> {
        if self.shapes() != other.shapes() {
            return Err(Error::Shape("distance between differently shaped networks".into()));
        }
        Ok(self
            .flat()
            .iter()
            .zip(other.flat())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Per-parameter gradients plus the loss they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct GradBundle {
    pub layers: Vec<LayerGrad>,
    pub loss: f64,
}

impl GradBundle {
    pub fn zeros_like(params: &MlpParams) -> Self {
        Self {
            layers: params
                .layers
                .iter()
                .map(|l| LayerGrad {
                    weights: vec![0.0; l.weights.len()],
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
            loss: 0.0,
        }
    }

    pub fn matches(&self, params: &MlpParams) -> bool {
        self.layers.len() == params.layers.len()
            && self
                .layers
                .iter()
                .zip(&params.layers)
                .all(|(g, l)| g.weights.len() == l.weights.len() && g.bias.len() == l.bias.len())
    }

    pub fn scale(&mut self, factor: f64) {
        for l in &mut self.layers {
            l.weights.iter_mut().for_each(|v| *v *= factor);
            l.bias.iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()))
    }

    pub fn flat(&self) -> Vec<f64> {
        self.values().copied().collect()
    }

    pub fn global_norm(&self) -> f64 {
        self.values().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.values().all(|&v| v == 0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn two_layer() -> MlpParams {
        // hidden = relu([[1, 2], [-1, 1]] x + [0, 0.5]); out = [1, -2]·hidden + 0.25
        MlpParams::from_layers(
            vec![
                Layer {
                    in_dim: 2,
                    out_dim: 2,
                    weights: vec![1.0, 2.0, -1.0, 1.0],
                    bias: vec![0.0, 0.5],
                },
                Layer {
                    in_dim: 2,
                    out_dim: 1,
                    weights: vec![1.0, -2.0],
                    bias: vec![0.25],
                },
            ],
            vec![Activation::Relu],
        )
        .unwrap()
    }

    #[test]
    fn zero_weights_output_bias() {
        let mut p = MlpParams::from_layers(vec![Layer::zeros(3, 2)], vec![]).unwrap();
        p.layers[0].bias = vec![0.5, -1.5];
        let (y, _) = p.forward(&[7.0, -2.0, 3.0]).unwrap();
        assert_eq!(y, vec![0.5, -1.5]);
    }

    #[test]
    fn identity_layer_passes_input() {
        let mut l = Layer::zeros(3, 3);
        for i in 0..3 {
            l.weights[i * 3 + i] = 1.0;
        }
        let p = MlpParams::from_layers(vec![l], vec![]).unwrap();
        assert_eq!(p.predict(&[1.0, -2.0, 3.5]).unwrap(), vec![1.0, -2.0, 3.5]);
    }

    #[test]
    fn hand_evaluated_relu_net() {
        // x = (1, -1): pre = (1 - 2, -1 - 1 + 0.5) = (-1, -1.5) -> relu (0, 0) -> out 0.25
        let p = two_layer();
        assert_eq!(p.predict(&[1.0, -1.0]).unwrap(), vec![0.25]);
        // x = (2, 1): pre = (4, -0.5) -> (4, 0) -> 4 + 0.25
        assert_eq!(p.predict(&[2.0, 1.0]).unwrap(), vec![4.25]);
    }

    #[test]
    fn dimension_mismatch_is_shape_error() {
        let p = two_layer();
        assert!(matches!(p.forward(&[1.0]), Err(Error::Shape(_))));
        let (_, cache) = p.forward(&[1.0, 2.0]).unwrap();
        assert!(matches!(p.backward(&cache, &[1.0, 2.0]), Err(Error::Shape(_))));
        let other = MlpParams::from_layers(vec![Layer::zeros(2, 1)], vec![]).unwrap();
        assert!(matches!(other.backward(&cache, &[1.0]), Err(Error::Shape(_))));
    }

    #[test]
    fn linear_backward_matches_chain_rule() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = MlpParams::new(&[3, 2], Activation::Relu, &mut rng).unwrap();
        let x = [0.5, -1.0, 2.0];
        let (_, cache) = p.forward(&x).unwrap();
        let g = [1.5, -0.5];
        let grads = p.backward(&cache, &g).unwrap();
        for o in 0..2 {
            assert_eq!(grads.layers[0].bias[o], g[o]);
            for i in 0..3 {
                assert_eq!(grads.layers[0].weights[o * 3 + i], g[o] * x[i]);
            }
        }
        let zero = p.backward(&cache, &[0.0, 0.0]).unwrap();
        assert!(zero.is_zero());
    }

    #[test]
    fn predict_agrees_with_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = MlpParams::new(&[4, 8, 8, 3], Activation::Tanh, &mut rng).unwrap();
        let x = [0.1, -0.3, 0.7, 1.2];
        assert_eq!(p.predict(&x).unwrap(), p.forward(&x).unwrap().0);
    }

    #[test]
    fn blend_moves_toward_source() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = MlpParams::new(&[2, 3, 1], Activation::Relu, &mut rng).unwrap();
        let b = MlpParams::new(&[2, 3, 1], Activation::Relu, &mut rng).unwrap();
        let mut t = a.clone();
        t.blend_from(&b, 1.0).unwrap();
        assert_eq!(t, b);
        let mut t = a.clone();
        t.blend_from(&b, 0.0).unwrap();
        assert_eq!(t, a);
    }
}
