//! Feed-forward ReLU networks, input boxes and single-output queries.
//!
//! A [`Network`] is a list of dense affine layers. Every layer except the last
//! applies ReLU; the last one is affine. Weight matrices are stored row-major
//! with one row per neuron of the layer and one column per neuron of the
//! preceding layer.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    None,
}

impl Activation {
    #[inline]
    pub fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Relu => v.max(0.0),
            Activation::None => v,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn new(weights: Vec<Vec<f64>>, biases: Vec<f64>, activation: Activation) -> Self {
        Self {
            weights,
            biases,
            activation,
        }
    }

    pub fn size(&self) -> usize {
        self.biases.len()
    }

    /// Pre-activation values `W v + b`.
    pub fn affine(&self, input: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.biases)
            .map(|(row, b)| b + dot(row, input))
            .collect()
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Axis-aligned box of admissible inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl InputBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let b = Self { lower, upper };
        b.validate()?;
        Ok(b)
    }

    pub fn point(x: &[f64]) -> Self {
        Self {
            lower: x.to_vec(),
            upper: x.to_vec(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lower.len() != self.upper.len() {
            return Err(Error::InvalidQuery(format!(
                "box bounds have different lengths ({} vs {})",
                self.lower.len(),
                self.upper.len()
            )));
        }
        for (k, (lo, hi)) in self.lower.iter().zip(&self.upper).enumerate() {
            if !lo.is_finite() || !hi.is_finite() {
                return Err(Error::InvalidQuery(format!("bound {k} is not finite")));
            }
            if lo > hi {
                return Err(Error::InvalidQuery(format!(
                    "lower bound {lo} exceeds upper bound {hi} at input {k}"
                )));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (lo, hi))| *v >= lo - tol && *v <= hi + tol)
    }

    pub fn is_nonnegative(&self) -> bool {
        self.lower.iter().all(|&l| l >= 0.0)
    }

    pub fn center(&self) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| 0.5 * (l + u))
            .collect()
    }

    pub fn clamp(&self, x: &mut [f64]) {
        for (v, (lo, hi)) in x.iter_mut().zip(self.lower.iter().zip(&self.upper)) {
            *v = v.clamp(*lo, *hi);
        }
    }
}

/// Output property `y > threshold` on the single output neuron.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutputProperty {
    pub threshold: f64,
}

impl OutputProperty {
    pub fn new(threshold: f64) -> Self {
        Self { threshold }
    }

    pub fn holds(&self, y: f64) -> bool {
        y > self.threshold
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawNetwork", into = "RawNetwork")]
pub struct Network {
    input_size: usize,
    layers: Vec<Layer>,
    /// Declared input domain, used when clipping robustness boxes.
    input_domain: Option<InputBox>,
}

#[derive(Serialize, Deserialize)]
struct RawNetwork {
    input_size: usize,
    layers: Vec<Layer>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    input_domain: Option<InputBox>,
}

impl TryFrom<RawNetwork> for Network {
    type Error = Error;

    fn try_from(raw: RawNetwork) -> Result<Self> {
        let net = Network::new(raw.input_size, raw.layers)?;
        match raw.input_domain {
            Some(d) => net.with_input_domain(d),
            None => Ok(net),
        }
    }
}

impl From<Network> for RawNetwork {
    fn from(n: Network) -> Self {
        RawNetwork {
            input_size: n.input_size,
            layers: n.layers,
            input_domain: n.input_domain,
        }
    }
}

impl Network {
    pub fn new(input_size: usize, layers: Vec<Layer>) -> Result<Self> {
        let net = Self {
            input_size,
            layers,
            input_domain: None,
        };
        net.validate()?;
        Ok(net)
    }

    pub fn with_input_domain(mut self, domain: InputBox) -> Result<Self> {
        domain.validate()?;
        if domain.dim() != self.input_size {
            return Err(Error::InvalidNetwork(format!(
                "input domain has {} dimensions, network has {} inputs",
                domain.dim(),
                self.input_size
            )));
        }
        self.input_domain = Some(domain);
        Ok(self)
    }

    fn validate(&self) -> Result<()> {
        if self.input_size == 0 {
            return Err(Error::InvalidNetwork("input size must be positive".into()));
        }
        if self.layers.is_empty() {
            return Err(Error::InvalidNetwork("network has no layers".into()));
        }
        let last = self.layers.len() - 1;
        let mut prev = self.input_size;
        for (i, layer) in self.layers.iter().enumerate() {
            if layer.size() == 0 {
                return Err(Error::InvalidNetwork(format!("layer {i} is empty")));
            }
            if layer.weights.len() != layer.size() {
                return Err(Error::InvalidNetwork(format!(
                    "layer {i} has {} weight rows but {} biases",
                    layer.weights.len(),
                    layer.size()
                )));
            }
            for (j, row) in layer.weights.iter().enumerate() {
                if row.len() != prev {
                    return Err(Error::InvalidNetwork(format!(
                        "layer {i} neuron {j} has {} incoming weights, expected {prev}",
                        row.len()
                    )));
                }
                if row.iter().any(|w| !w.is_finite()) {
                    return Err(Error::InvalidNetwork(format!(
                        "layer {i} neuron {j} has a non-finite weight"
                    )));
                }
            }
            if layer.biases.iter().any(|b| !b.is_finite()) {
                return Err(Error::InvalidNetwork(format!(
                    "layer {i} has a non-finite bias"
                )));
            }
            let expected = if i == last {
                Activation::None
            } else {
                Activation::Relu
            };
            if layer.activation != expected {
                return Err(Error::InvalidNetwork(format!(
                    "layer {i} must use activation {expected:?}"
                )));
            }
            prev = layer.size();
        }
        Ok(())
    }

    pub fn input_size(&self) -> usize {
        self.input_size
    }

    pub fn output_size(&self) -> usize {
        self.layers.last().map(Layer::size).unwrap_or(0)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn into_layers(self) -> Vec<Layer> {
        self.layers
    }

    /// Number of hidden (ReLU) layers.
    pub fn hidden_layer_count(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn hidden_sizes(&self) -> Vec<usize> {
        self.layers[..self.layers.len() - 1]
            .iter()
            .map(Layer::size)
            .collect()
    }

    pub fn hidden_neuron_count(&self) -> usize {
        self.hidden_sizes().iter().sum()
    }

    pub fn input_domain(&self) -> Option<&InputBox> {
        self.input_domain.as_ref()
    }

    /// Forward pass.
    pub fn evaluate(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut v = x.to_vec();
        for layer in &self.layers {
            v = layer.affine(&v);
            for e in &mut v {
                *e = layer.activation.apply(*e);
            }
        }
        Ok(v)
    }

    /// Output of a single-output network.
    pub fn evaluate_scalar(&self, x: &[f64]) -> Result<f64> {
        if self.output_size() != 1 {
            return Err(Error::Unsupported(format!(
                "expected a single-output network, got {} outputs",
                self.output_size()
            )));
        }
        Ok(self.evaluate(x)?[0])
    }

    /// Post-activation values of every layer (hidden layers and the output).
    pub fn activations(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.check_input(x)?;
        let mut out = Vec::with_capacity(self.layers.len());
        let mut v = x.to_vec();
        for layer in &self.layers {
            v = layer.affine(&v);
            for e in &mut v {
                *e = layer.activation.apply(*e);
            }
            out.push(v.clone());
        }
        Ok(out)
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_size {
            return Err(Error::DimensionMismatch {
                expected: self.input_size,
                actual: x.len(),
            });
        }
        Ok(())
    }
}

/// A verification query: is there `x` in `input` with `network(x) > output.threshold`?
#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub network: Network,
    pub input: InputBox,
    pub output: OutputProperty,
}

impl Query {
    pub fn new(network: Network, input: InputBox, output: OutputProperty) -> Result<Self> {
        if network.output_size() != 1 {
            return Err(Error::InvalidQuery(format!(
                "query network must have one output, found {}",
                network.output_size()
            )));
        }
        input.validate()?;
        if input.dim() != network.input_size() {
            return Err(Error::InvalidQuery(format!(
                "input box has {} dimensions, network has {} inputs",
                input.dim(),
                network.input_size()
            )));
        }
        if !output.threshold.is_finite() {
            return Err(Error::InvalidQuery("output threshold is not finite".into()));
        }
        Ok(Self {
            network,
            input,
            output,
        })
    }
}
