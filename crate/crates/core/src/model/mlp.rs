use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::diffmath::{Tape, Tensor, Var};
use crate::error::{Result, WadgError};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
}

/// Layer widths of a fully connected network, input width first.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub layer_widths: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
}

impl MlpSpec {
    pub fn new(layer_widths: Vec<usize>) -> Result<Self> {
        let spec = Self {
            layer_widths,
            activation: Activation::Relu,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_widths.len() < 2 {
            return Err(WadgError::Config(format!(
                "an MLP needs at least an input and an output width, got {:?}",
                self.layer_widths
            )));
        }
        if self.layer_widths.contains(&0) {
            return Err(WadgError::Config(format!(
                "layer widths must be positive, got {:?}",
                self.layer_widths
            )));
        }
        Ok(())
    }

    pub fn input_width(&self) -> usize {
        self.layer_widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.layer_widths.last().expect("validated")
    }

    pub fn num_layers(&self) -> usize {
        self.layer_widths.len() - 1
    }

    /// Number of hidden (activated) layers.
    pub fn num_hidden(&self) -> usize {
        self.num_layers() - 1
    }
}

/// One affine layer `x W + b` with `W: [in × out]` and `b: [1 × out]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    spec: MlpSpec,
    layers: Vec<Linear>,
}

/// Tape handles for the parameters of one [`Mlp`].
#[derive(Clone, Debug)]
pub struct MlpVars {
    pub weights: Vec<Var>,
    pub biases: Vec<Var>,
}

impl MlpVars {
    /// Handles in the same order as [`Mlp::params`].
    pub fn all(&self) -> Vec<Var> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| [*w, *b])
            .collect()
    }
}

/// Output of a traced forward pass.
#[derive(Clone, Debug)]
pub struct MlpTrace {
    pub output: Var,
    /// Post-activation outputs of every hidden layer, first hidden layer first.
    pub hidden: Vec<Var>,
    /// Pre-activation outputs of every layer.
    pub pre: Vec<Var>,
}

impl Mlp {
    /// Weights `~ N(0, 1/fan_in)`, biases zero.
    pub fn init<R: Rng>(spec: MlpSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let layers = spec
            .layer_widths
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let normal = Normal::new(0.0, 1.0 / (fan_in as f64).sqrt()).expect("finite sd");
                let data = (0..fan_in * fan_out).map(|_| normal.sample(rng)).collect();
                Linear {
                    weight: Tensor::matrix(fan_in, fan_out, data).expect("shape"),
                    bias: Tensor::zeros(&[1, fan_out]),
                }
            })
            .collect();
        Ok(Self { spec, layers })
    }

    /// Network with every weight and bias set to zero.
    pub fn zeros(spec: MlpSpec) -> Result<Self> {
        spec.validate()?;
        let layers = spec
            .layer_widths
            .windows(2)
            .map(|w| Linear {
                weight: Tensor::zeros(&[w[0], w[1]]),
                bias: Tensor::zeros(&[1, w[1]]),
            })
            .collect();
        Ok(Self { spec, layers })
    }

    pub fn from_layers(spec: MlpSpec, layers: Vec<Linear>) -> Result<Self> {
        spec.validate()?;
        if layers.len() != spec.num_layers() {
            return Err(WadgError::Config(format!(
                "{} layers given for widths {:?}",
                layers.len(),
                spec.layer_widths
            )));
        }
        for (l, w) in layers.iter().zip(spec.layer_widths.windows(2)) {
            if l.weight.shape() != [w[0], w[1]] || l.bias.shape() != [1, w[1]] {
                return Err(WadgError::ShapeMismatch {
                    op: "mlp layer",
                    left: l.weight.shape().to_vec(),
                    right: vec![w[0], w[1]],
                });
            }
        }
        Ok(Self { spec, layers })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Linear] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Linear] {
        &mut self.layers
    }

    /// Parameters in a fixed order: `w0, b0, w1, b1, ...`.
    pub fn params(&self) -> Vec<&Tensor> {
        self.layers
            .iter()
            .flat_map(|l| [&l.weight, &l.bias])
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }

    /// Places the parameters on `tape` as leaves.
    pub fn register(&self, tape: &mut Tape) -> MlpVars {
        let mut weights = Vec::with_capacity(self.layers.len());
        let mut biases = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            weights.push(tape.leaf(l.weight.clone()));
            biases.push(tape.leaf(l.bias.clone()));
        }
        MlpVars { weights, biases }
    }

    fn check_input(&self, tape: &Tape, x: Var) -> Result<()> {
        let t = tape.value(x);
        if t.rank() != 2 || t.cols() != self.spec.input_width() {
            return Err(WadgError::ShapeMismatch {
                op: "mlp input",
                left: t.shape().to_vec(),
                right: vec![t.rows(), self.spec.input_width()],
            });
        }
        Ok(())
    }

    /// Traced forward pass: activated hidden layers, linear output layer.
    pub fn forward(&self, tape: &mut Tape, vars: &MlpVars, x: Var) -> Result<MlpTrace> {
        self.check_input(tape, x)?;
        let n = self.layers.len();
        let mut h = x;
        let mut hidden = Vec::with_capacity(n - 1);
        let mut pre = Vec::with_capacity(n);
        for k in 0..n {
            let lin = tape.matmul(h, vars.weights[k])?;
            let a = tape.add_row(lin, vars.biases[k])?;
            pre.push(a);
            if k + 1 < n {
                h = tape.relu(a)?;
                hidden.push(h);
            } else {
                h = a;
            }
        }
        Ok(MlpTrace {
            output: h,
            hidden,
            pre,
        })
    }

    /// Untraced forward pass on plain values.
    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::untraced();
        let vars = self.register(&mut tape);
        let xv = tape.leaf(x.clone());
        let out = self.forward(&mut tape, &vars, xv)?;
        Ok(tape.value(out.output).clone())
    }

    /// Traced gradient of the scalar network output with respect to its
    /// input, evaluated at the constant rows `x`.
    ///
    /// The relu masks are piecewise constant in the parameters, so the result
    /// is an ordinary differentiable function of the weights and a gradient
    /// penalty built from it can be backpropagated without second-order
    /// tape support.
    pub fn input_gradient(&self, tape: &mut Tape, vars: &MlpVars, x: &Tensor) -> Result<Var> {
        if self.spec.output_width() != 1 {
            return Err(WadgError::Config(
                "input gradient needs a scalar-output network".into(),
            ));
        }
        let masks = self.relu_masks(x)?;
        let rows = x.rows();
        let n = self.layers.len();
        let ones = tape.leaf(Tensor::filled(&[rows, 1], 1.0));
        let wt = tape.transpose(vars.weights[n - 1])?;
        let mut g = tape.matmul(ones, wt)?;
        for k in (0..n - 1).rev() {
            let m = tape.leaf(masks[k].clone());
            let gm = tape.mul(g, m)?;
            let wt = tape.transpose(vars.weights[k])?;
            g = tape.matmul(gm, wt)?;
        }
        Ok(g)
    }

    /// `1[pre-activation > 0]` for every hidden layer at input `x`.
    fn relu_masks(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        let mut tape = Tape::untraced();
        let vars = self.register(&mut tape);
        let xv = tape.leaf(x.clone());
        let tr = self.forward(&mut tape, &vars, xv)?;
        Ok(tr.pre[..tr.pre.len() - 1]
            .iter()
            .map(|&a| tape.value(a).map(|v| if v > 0.0 { 1.0 } else { 0.0 }))
            .collect())
    }
}
