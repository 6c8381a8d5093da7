use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::params::{Group, ParamId, ParamStore};
use super::tape::{Activation, ConvShape, Mat, Tape, Var};
use super::NnError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub out_channels: usize,
    pub kernel: usize,
}

/// Shape of a multilayer perceptron: `sizes[0]` inputs, then one entry per
/// layer output.
#[derive(Debug, Clone, PartialEq)]
pub struct NetSpec {
    pub sizes: Vec<usize>,
    pub hidden: Activation,
    pub output: Activation,
    pub conv: Option<ConvSpec>,
}

impl NetSpec {
    pub fn mlp(sizes: &[usize]) -> Self {
        Self {
            sizes: sizes.to_vec(),
            hidden: Activation::Relu,
            output: Activation::Identity,
            conv: None,
        }
    }

    pub fn with_output(mut self, act: Activation) -> Self {
        self.output = act;
        self
    }

    pub fn validate(&self) -> Result<(), NnError> {
        if self.sizes.len() < 2 {
            return Err(NnError::Spec("a network needs at least one layer".into()));
        }
        if self.sizes.contains(&0) {
            return Err(NnError::Spec(format!("layer sizes must be positive: {:?}", self.sizes)));
        }
        if let Some(c) = self.conv {
            if c.out_channels == 0 || c.kernel == 0 {
                return Err(NnError::Spec("convolution channels and kernel must be positive".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub inputs: usize,
    pub outputs: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, inputs: usize, outputs: usize, group: Group, rng: &mut ChaCha8Rng) -> Self {
        let w = store.add_uniform(format!("{name}.weight"), outputs, inputs, inputs, group, rng);
        let b = store.add_uniform(format!("{name}.bias"), 1, outputs, inputs, group, rng);
        Self {
            w,
            b: Some(b),
            inputs,
            outputs,
        }
    }

    pub fn without_bias(store: &mut ParamStore, name: &str, inputs: usize, outputs: usize, group: Group, rng: &mut ChaCha8Rng) -> Self {
        let w = store.add_uniform(format!("{name}.weight"), outputs, inputs, inputs, group, rng);
        Self {
            w,
            b: None,
            inputs,
            outputs,
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var, NnError> {
        tape.linear(store, x, self.w, self.b)
    }
}

#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub hidden: Activation,
    pub output: Activation,
}

impl Mlp {
    pub fn new(store: &mut ParamStore, name: &str, spec: &NetSpec, group: Group, rng: &mut ChaCha8Rng) -> Result<Self, NnError> {
        spec.validate()?;
        let layers = spec
            .sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, &format!("{name}.{i}"), w[0], w[1], group, rng))
            .collect();
        Ok(Self {
            layers,
            hidden: spec.hidden,
            output: spec.output,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(|l| l.outputs).unwrap_or(0)
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, mut x: Var) -> Result<Var, NnError> {
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.forward(tape, store, x)?;
            x = tape.act(x, if i == last { self.output } else { self.hidden });
        }
        Ok(x)
    }

    /// Single-input evaluation.
    pub fn eval(&self, store: &ParamStore, input: &[f64]) -> Result<Vec<f64>, NnError> {
        let mut tape = Tape::new();
        let x = tape.input(Mat::row_vector(input.to_vec()));
        let y = self.forward(&mut tape, store, x)?;
        Ok(tape.value(y).data.clone())
    }

    /// Accumulates parameter gradients of `upstream . f(input)` into `store`
    /// and returns the gradient with respect to the input.
    pub fn backward(&self, store: &mut ParamStore, input: &[f64], upstream: &[f64]) -> Result<Vec<f64>, NnError> {
        let mut tape = Tape::new();
        let x = tape.input(Mat::row_vector(input.to_vec()));
        let y = self.forward(&mut tape, store, x)?;
        if upstream.len() != self.output_dim() {
            return Err(NnError::Dimension {
                layer: "upstream gradient".into(),
                expected: self.output_dim(),
                found: upstream.len(),
            });
        }
        let grads = tape.backward(store, &[(y, Mat::row_vector(upstream.to_vec()))])?;
        Ok(grads
            .get(x)
            .map(|g| g.data.clone())
            .unwrap_or_else(|| vec![0.0; input.len()]))
    }
}

/// Valid-padding convolution followed by a rectifier.
#[derive(Debug, Clone, Copy)]
pub struct Conv2d {
    pub w: ParamId,
    pub b: ParamId,
    pub shape: ConvShape,
}

impl Conv2d {
    pub fn new(store: &mut ParamStore, name: &str, shape: ConvShape, group: Group, rng: &mut ChaCha8Rng) -> Self {
        let fan_in = shape.in_ch * shape.kernel * shape.kernel;
        let w = store.add_uniform(format!("{name}.weight"), shape.out_ch, fan_in, fan_in, group, rng);
        let b = store.add_uniform(format!("{name}.bias"), 1, shape.out_ch, fan_in, group, rng);
        Self { w, b, shape }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var, NnError> {
        let y = tape.conv2d(store, x, self.w, self.b, self.shape)?;
        Ok(tape.act(y, Activation::Relu))
    }
}
