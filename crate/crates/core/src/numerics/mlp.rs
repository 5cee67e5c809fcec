use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::array::{matmul_transposed, DenseArray};
use super::graph::{sigmoid, Gradients, Graph, Var};
use super::NumericsError;

/// Pre-activation clamp applied in front of every sigmoid output, keeping the
/// output inside `[1e-6, 1 - 1e-6]`.
pub const SIGMOID_INPUT_CLAMP: f64 = 13.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
    Identity,
}

impl Activation {
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Relu => v.max(0.0),
            Activation::Tanh => v.tanh(),
            Activation::Sigmoid => sigmoid(v.clamp(-SIGMOID_INPUT_CLAMP, SIGMOID_INPUT_CLAMP)),
            Activation::Identity => v,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `[out, in]`
    pub weight: DenseArray,
    /// `[out]`
    pub bias: DenseArray,
    pub activation: Activation,
}

impl Layer {
    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }
}

/// Stack of affine layers, each followed by its activation.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    layers: Vec<Layer>,
}

impl MlpParams {
    pub fn new(layers: Vec<Layer>) -> Result<Self, NumericsError> {
        if layers.is_empty() {
            return Err(NumericsError::Dimension("an MLP needs at least one layer".into()));
        }
        for (k, layer) in layers.iter().enumerate() {
            if layer.weight.shape().len() != 2 {
                return Err(NumericsError::Dimension(format!("layer {k} weight must be rank 2")));
            }
            if layer.bias.len() != layer.out_dim() {
                return Err(NumericsError::Dimension(format!(
                    "layer {k} bias has {} entries, expected {}",
                    layer.bias.len(),
                    layer.out_dim()
                )));
            }
            if k > 0 && layers[k - 1].out_dim() != layer.in_dim() {
                return Err(NumericsError::Dimension(format!(
                    "layer {k} expects {} inputs but layer {} emits {}",
                    layer.in_dim(),
                    k - 1,
                    layers[k - 1].out_dim()
                )));
            }
            if layer.activation == Activation::Sigmoid && k + 1 != layers.len() {
                return Err(NumericsError::Dimension(format!(
                    "sigmoid is only allowed on the final layer (found on layer {k})"
                )));
            }
        }
        Ok(Self { layers })
    }

    /// Randomly initialised MLP. `dims = [in, h1, ..., out]`, one activation
    /// per layer. Weights are drawn from `N(0, gain² / fan_in)`.
    pub fn random<R: Rng + ?Sized>(
        dims: &[usize],
        activations: &[Activation],
        rng: &mut R,
    ) -> Result<Self, NumericsError> {
        if dims.len() != activations.len() + 1 {
            return Err(NumericsError::Dimension(format!(
                "{} dims need {} activations, got {}",
                dims.len(),
                dims.len().saturating_sub(1),
                activations.len()
            )));
        }
        let mut layers = Vec::with_capacity(activations.len());
        for (k, &act) in activations.iter().enumerate() {
            let (fan_in, fan_out) = (dims[k], dims[k + 1]);
            let gain = match act {
                Activation::Relu => 2f64.sqrt(),
                _ => 1.0,
            };
            let normal = Normal::new(0.0, gain / (fan_in.max(1) as f64).sqrt())
                .expect("positive std");
            let w: Vec<f64> = (0..fan_in * fan_out).map(|_| normal.sample(rng)).collect();
            layers.push(Layer {
                weight: DenseArray::matrix(fan_out, fan_in, w)?,
                bias: DenseArray::zeros(vec![fan_out]),
                activation: act,
            });
        }
        Self::new(layers)
    }

    /// Same structure, every weight and bias zero.
    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    weight: DenseArray::zeros(l.weight.shape().to_vec()),
                    bias: DenseArray::zeros(l.bias.shape().to_vec()),
                    activation: l.activation,
                })
                .collect(),
        }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    #[cfg(test)]
    pub(crate) fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// All parameters in layer order, weight then bias.
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend_from_slice(l.weight.data());
            out.extend_from_slice(l.bias.data());
        }
        out
    }

    pub fn set_flat(&mut self, values: &[f64]) {
        assert_eq!(values.len(), self.num_params(), "flat parameter length");
        let mut i = 0;
        for l in &mut self.layers {
            let n = l.weight.len();
            l.weight.data_mut().copy_from_slice(&values[i..i + n]);
            i += n;
            let n = l.bias.len();
            l.bias.data_mut().copy_from_slice(&values[i..i + n]);
            i += n;
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        for l in &mut out.layers {
            l.weight = l.weight.map(|v| v * factor);
            l.bias = l.bias.map(|v| v * factor);
        }
        out
    }

    /// Registers every parameter on `graph`. With `trainable = false` the
    /// parameters enter as constants and never receive gradients.
    pub fn bind(&self, graph: &mut Graph, trainable: bool) -> MlpVars {
        let layers = self
            .layers
            .iter()
            .map(|l| {
                let bias_row = DenseArray::matrix(1, l.bias.len(), l.bias.data().to_vec())
                    .expect("bias row");
                if trainable {
                    (graph.param(&l.weight), graph.param(&bias_row), l.activation)
                } else {
                    (graph.constant(&l.weight), graph.constant(&bias_row), l.activation)
                }
            })
            .collect();
        MlpVars { layers }
    }
}

/// Graph handles for one bound [`MlpParams`].
#[derive(Debug, Clone)]
pub struct MlpVars {
    layers: Vec<(Var, Var, Activation)>,
}

impl MlpVars {
    pub fn forward(&self, graph: &mut Graph, input: Var) -> Result<Var, NumericsError> {
        let mut h = input;
        for &(w, b, act) in &self.layers {
            let z = graph.matmul_t(h, w)?;
            let z = graph.add_bias(z, b)?;
            h = match act {
                Activation::Relu => graph.relu(z),
                Activation::Tanh => graph.tanh(z),
                Activation::Sigmoid => {
                    let z = graph.clamp(z, -SIGMOID_INPUT_CLAMP, SIGMOID_INPUT_CLAMP);
                    graph.sigmoid(z)
                }
                Activation::Identity => z,
            };
        }
        Ok(h)
    }

    /// Forward pass that stops before the final activation.
    pub fn forward_pre_activation(
        &self,
        graph: &mut Graph,
        input: Var,
    ) -> Result<Var, NumericsError> {
        let mut h = input;
        let last = self.layers.len() - 1;
        for (k, &(w, b, act)) in self.layers.iter().enumerate() {
            let z = graph.matmul_t(h, w)?;
            let z = graph.add_bias(z, b)?;
            h = if k == last {
                z
            } else {
                match act {
                    Activation::Relu => graph.relu(z),
                    Activation::Tanh => graph.tanh(z),
                    Activation::Sigmoid | Activation::Identity => z,
                }
            };
        }
        Ok(h)
    }

    /// Collects gradients into an `MlpParams`-shaped value; absent blocks
    /// are zero.
    pub fn grads(&self, like: &MlpParams, grads: &Gradients) -> MlpParams {
        let mut out = like.zeros_like();
        for (layer, &(w, b, _)) in out.layers.iter_mut().zip(&self.layers) {
            if let Some(g) = grads.raw(w) {
                layer.weight.data_mut().copy_from_slice(g);
            }
            if let Some(g) = grads.raw(b) {
                layer.bias.data_mut().copy_from_slice(g);
            }
        }
        out
    }

    /// True if any parameter of this net received a gradient entry.
    pub fn has_any_gradient(&self, grads: &Gradients) -> bool {
        self.layers.iter().any(|&(w, b, _)| grads.raw(w).is_some() || grads.raw(b).is_some())
    }
}

/// Plain forward pass over a `[batch, in]` (or `[in]`) input.
pub fn forward_mlp(params: &MlpParams, input: &DenseArray) -> Result<DenseArray, NumericsError> {
    let in_dim = params.in_dim();
    if input.cols() != in_dim {
        return Err(NumericsError::Dimension(format!(
            "input width {} does not match MLP input {}",
            input.cols(),
            in_dim
        )));
    }
    let rows = input.rows();
    let mut h = input.data().to_vec();
    let mut width = in_dim;
    for l in &params.layers {
        let out = l.out_dim();
        let mut z = matmul_transposed(&h, rows, width, l.weight.data(), out);
        let b = l.bias.data();
        for (i, v) in z.iter_mut().enumerate() {
            *v = l.activation.apply(*v + b[i % out]);
        }
        h = z;
        width = out;
    }
    let shape = if input.shape().len() == 1 { vec![width] } else { vec![rows, width] };
    DenseArray::new(shape, h)
}

/// Forward pass for one sample given as a slice.
pub fn forward_one(params: &MlpParams, input: &[f64]) -> Vec<f64> {
    let mut h = input.to_vec();
    for l in &params.layers {
        let out = l.out_dim();
        let mut z = matmul_transposed(&h, 1, h.len(), l.weight.data(), out);
        for (v, b) in z.iter_mut().zip(l.bias.data()) {
            *v = l.activation.apply(*v + b);
        }
        h = z;
    }
    h
}

/// Evaluates a scalar loss built from `params` and returns it together with
/// exact gradients for each net.
pub fn loss_and_gradients<F>(
    params: &[&MlpParams],
    build: F,
) -> Result<(f64, Vec<MlpParams>), NumericsError>
where
    F: FnOnce(&mut Graph, &[MlpVars]) -> Result<Var, NumericsError>,
{
    let mut graph = Graph::new();
    let vars: Vec<MlpVars> = params.iter().map(|p| p.bind(&mut graph, true)).collect();
    let loss = build(&mut graph, &vars)?;
    let value = graph.scalar(loss);
    if !value.is_finite() {
        return Err(NumericsError::NonFinite(format!("loss value {value}")));
    }
    let grads = graph.backward(loss)?;
    let out = params.iter().zip(&vars).map(|(p, v)| v.grads(p, &grads)).collect();
    Ok((value, out))
}

#[derive(Serialize, Deserialize)]
struct LayerWire {
    rows: usize,
    cols: usize,
    activation: Activation,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MlpWire {
    layers: Vec<LayerWire>,
}

impl Serialize for MlpParams {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        MlpWire {
            layers: self
                .layers
                .iter()
                .map(|l| LayerWire {
                    rows: l.out_dim(),
                    cols: l.in_dim(),
                    activation: l.activation,
                    weights: l.weight.data().to_vec(),
                    bias: l.bias.data().to_vec(),
                })
                .collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for MlpParams {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let wire = MlpWire::deserialize(d)?;
        let layers = wire
            .layers
            .into_iter()
            .map(|l| {
                Ok(Layer {
                    weight: DenseArray::matrix(l.rows, l.cols, l.weights)?,
                    bias: DenseArray::new(vec![l.rows], l.bias)?,
                    activation: l.activation,
                })
            })
            .collect::<Result<Vec<_>, NumericsError>>()
            .map_err(D::Error::custom)?;
        MlpParams::new(layers).map_err(D::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn single(weight: DenseArray, bias: Vec<f64>, act: Activation) -> MlpParams {
        MlpParams::new(vec![Layer { weight, bias: DenseArray::vector(bias), activation: act }])
            .unwrap()
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let p = single(DenseArray::identity(2), vec![0.0, 0.0], Activation::Identity);
        let out = forward_mlp(&p, &DenseArray::vector(vec![1.0, 2.0])).unwrap();
        assert_eq!(out.data(), &[1.0, 2.0]);
    }

    #[test]
    fn relu_layer_clamps_negatives() {
        let p = single(DenseArray::identity(2), vec![0.0, 0.0], Activation::Relu);
        let out = forward_mlp(&p, &DenseArray::vector(vec![-1.0, 3.0])).unwrap();
        assert_eq!(out.data(), &[0.0, 3.0]);
    }

    #[test]
    fn zero_weight_two_layer_net_reduces_to_bias_chain() {
        // h = tanh(b1); out = sigmoid(0·h + b2) = sigmoid(b2)
        let b1 = vec![0.3, -0.7];
        let b2 = vec![0.4];
        let p = MlpParams::new(vec![
            Layer {
                weight: DenseArray::zeros(vec![2, 3]),
                bias: DenseArray::vector(b1.clone()),
                activation: Activation::Tanh,
            },
            Layer {
                weight: DenseArray::zeros(vec![1, 2]),
                bias: DenseArray::vector(b2.clone()),
                activation: Activation::Sigmoid,
            },
        ])
        .unwrap();
        let out = forward_mlp(&p, &DenseArray::vector(vec![5.0, -2.0, 9.0])).unwrap();
        let expected = 1.0 / (1.0 + (-0.4f64).exp());
        assert!((out.data()[0] - expected).abs() < 1e-15);

        // with a nonzero second weight the hidden tanh(b1) also enters
        let mut p2 = p.clone();
        p2.layers_mut()[1].weight = DenseArray::matrix(1, 2, vec![1.0, 2.0]).unwrap();
        let out = forward_mlp(&p2, &DenseArray::vector(vec![5.0, -2.0, 9.0])).unwrap();
        let z = 0.3f64.tanh() + 2.0 * (-0.7f64).tanh() + 0.4;
        assert!((out.data()[0] - 1.0 / (1.0 + (-z).exp())).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch_is_dimension_error() {
        let p = single(DenseArray::identity(2), vec![0.0, 0.0], Activation::Identity);
        assert!(matches!(
            forward_mlp(&p, &DenseArray::vector(vec![1.0, 2.0, 3.0])),
            Err(NumericsError::Dimension(_))
        ));
    }

    #[test]
    fn sigmoid_hidden_layer_rejected() {
        let l = |a| Layer {
            weight: DenseArray::identity(2),
            bias: DenseArray::zeros(vec![2]),
            activation: a,
        };
        assert!(MlpParams::new(vec![l(Activation::Sigmoid), l(Activation::Identity)]).is_err());
        assert!(MlpParams::new(vec![l(Activation::Identity), l(Activation::Sigmoid)]).is_ok());
    }

    #[test]
    fn chained_dimensions_enforced() {
        let a = Layer {
            weight: DenseArray::zeros(vec![3, 2]),
            bias: DenseArray::zeros(vec![3]),
            activation: Activation::Relu,
        };
        let b = Layer {
            weight: DenseArray::zeros(vec![1, 4]),
            bias: DenseArray::zeros(vec![1]),
            activation: Activation::Identity,
        };
        assert!(MlpParams::new(vec![a, b]).is_err());
    }

    #[test]
    fn graph_forward_matches_plain_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = MlpParams::random(
            &[4, 6, 3],
            &[Activation::Tanh, Activation::Sigmoid],
            &mut rng,
        )
        .unwrap();
        let x = DenseArray::matrix(2, 4, vec![0.1, -0.2, 0.3, 0.9, -1.0, 0.5, 0.0, 2.0]).unwrap();
        let plain = forward_mlp(&p, &x).unwrap();
        let mut g = Graph::new();
        let vars = p.bind(&mut g, false);
        let xin = g.constant(&x);
        let out = vars.forward(&mut g, xin).unwrap();
        for (a, b) in g.values(out).iter().zip(plain.data()) {
            assert_eq!(a, b);
        }
        assert_eq!(forward_one(&p, x.row(1)), plain.row(1).to_vec());
    }

    #[test]
    fn json_round_trip_is_lossless() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = MlpParams::random(&[3, 5, 2], &[Activation::Relu, Activation::Identity], &mut rng)
            .unwrap();
        let text = serde_json::to_string(&p).unwrap();
        let back: MlpParams = serde_json::from_str(&text).unwrap();
        assert_eq!(p, back);
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["layers"][0]["rows"], 5);
        assert_eq!(v["layers"][0]["cols"], 3);
        assert_eq!(v["layers"][0]["activation"], "relu");
    }

    #[test]
    fn json_with_wrong_weight_count_rejected() {
        let bad = r#"{"layers":[{"rows":2,"cols":2,"activation":"relu","weights":[1,2,3],"bias":[0,0]}]}"#;
        assert!(serde_json::from_str::<MlpParams>(bad).is_err());
    }
}
