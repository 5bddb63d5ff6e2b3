//! Linear layers, MLPs and recurrent cells recorded on a [`Tape`].
//!
//! Layers hold only their shapes and parameter names; the parameters live in
//! a [`ParamSet`] bound onto the tape for each forward pass. Activations are
//! `[batch, features]` matrices throughout.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{BoundParams, ParamSet, Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Tanh,
    Sigmoid,
    Relu,
    Elu,
}

impl Activation {
    pub fn apply(self, tape: &mut Tape, x: Var) -> Result<Var> {
        match self {
            Activation::Identity => Ok(x),
            Activation::Tanh => tape.tanh(x),
            Activation::Sigmoid => tape.sigmoid(x),
            Activation::Relu => tape.relu(x),
            Activation::Elu => tape.elu(x),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
}

/// Name, shape and initialisation kind of one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub kind: ParamKind,
}

pub trait Module {
    fn param_specs(&self) -> Vec<ParamSpec>;

    fn num_params(&self) -> usize {
        self.param_specs().iter().map(|s| s.shape.iter().product::<usize>()).sum()
    }
}

/// Weights ~ U(−1/√fan_in, 1/√fan_in) with `fan_in = shape[1]`, biases zero.
pub fn init_params(modules: &[&dyn Module], seed: u64) -> Result<ParamSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut set = ParamSet::new();
    for m in modules {
        init_into(&mut set, *m, &mut rng)?;
    }
    Ok(set)
}

pub fn init_into(set: &mut ParamSet, module: &dyn Module, rng: &mut impl Rng) -> Result<()> {
    for spec in module.param_specs() {
        if spec.shape.is_empty() || spec.shape.contains(&0) {
            return Err(Error::invalid(format!(
                "parameter `{}` has a zero dimension: {:?}",
                spec.name, spec.shape
            )));
        }
        let tensor = match spec.kind {
            ParamKind::Bias => Tensor::zeros(&spec.shape),
            ParamKind::Weight => {
                let fan_in = spec.shape.get(1).copied().unwrap_or(spec.shape[0]);
                let bound = 1.0 / (fan_in as f64).sqrt();
                let n = spec.shape.iter().product();
                let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
                Tensor::new(spec.shape.clone(), data)?
            }
        };
        set.insert(spec.name, tensor)?;
    }
    Ok(())
}

/// `y = x · Wᵀ + b` with `W: [output, input]`, `b: [output]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearLayer {
    pub prefix: String,
    pub input: usize,
    pub output: usize,
}

impl LinearLayer {
    pub fn new(prefix: impl Into<String>, input: usize, output: usize) -> Self {
        Self {
            prefix: prefix.into(),
            input,
            output,
        }
    }

    pub fn weight_name(&self) -> String {
        format!("{}.weight", self.prefix)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.bias", self.prefix)
    }

    pub fn forward(&self, tape: &mut Tape, x: Var, params: &BoundParams<'_>) -> Result<Var> {
        let w = params.get(&self.weight_name())?;
        let b = params.get(&self.bias_name())?;
        tape.linear(x, w, b)
    }
}

impl Module for LinearLayer {
    fn param_specs(&self) -> Vec<ParamSpec> {
        vec![
            ParamSpec {
                name: self.weight_name(),
                shape: vec![self.output, self.input],
                kind: ParamKind::Weight,
            },
            ParamSpec {
                name: self.bias_name(),
                shape: vec![self.output],
                kind: ParamKind::Bias,
            },
        ]
    }
}

/// Feed-forward stack: `hidden_layers` activated hidden layers of equal width
/// followed by an output layer with `output_activation` (identity by default).
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<LinearLayer>,
    pub hidden_activation: Activation,
    pub output_activation: Activation,
}

impl Mlp {
    pub fn new(
        prefix: &str,
        input: usize,
        hidden_size: usize,
        hidden_layers: usize,
        output: usize,
        activation: Activation,
    ) -> Self {
        let mut layers = Vec::with_capacity(hidden_layers + 1);
        let mut fan_in = input;
        for i in 0..hidden_layers {
            layers.push(LinearLayer::new(format!("{prefix}.{i}"), fan_in, hidden_size));
            fan_in = hidden_size;
        }
        layers.push(LinearLayer::new(format!("{prefix}.{hidden_layers}"), fan_in, output));
        Self {
            layers,
            hidden_activation: activation,
            output_activation: Activation::Identity,
        }
    }

    pub fn hidden_layers(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output
    }

    pub fn forward(&self, tape: &mut Tape, x: Var, params: &BoundParams<'_>) -> Result<Var> {
        let cols = tape.value(x).cols();
        if tape.value(x).rank() != 2 || cols != self.input_dim() {
            return Err(Error::ShapeMismatch {
                op: "mlp input",
                lhs: tape.value(x).shape().to_vec(),
                rhs: vec![self.input_dim()],
            });
        }
        let last = self.layers.len() - 1;
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(tape, h, params)?;
            let act = if i == last {
                self.output_activation
            } else {
                self.hidden_activation
            };
            h = act.apply(tape, h)?;
        }
        Ok(h)
    }
}

impl Module for Mlp {
    fn param_specs(&self) -> Vec<ParamSpec> {
        self.layers.iter().flat_map(|l| l.param_specs()).collect()
    }
}

/// LSTM cell with a fused gate matrix `[4H, input + H]` ordered
/// input, forget, candidate, output.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmCell {
    pub gates: LinearLayer,
    pub input: usize,
    pub hidden: usize,
}

impl LstmCell {
    pub fn new(prefix: impl Into<String>, input: usize, hidden: usize) -> Self {
        Self {
            gates: LinearLayer::new(prefix, input + hidden, 4 * hidden),
            input,
            hidden,
        }
    }

    /// One step: `c' = f⊙c + i⊙g`, `h' = o⊙tanh(c')`.
    pub fn step(&self, tape: &mut Tape, x: Var, h: Var, c: Var, params: &BoundParams<'_>) -> Result<(Var, Var)> {
        let xh = tape.concat(&[x, h], 1)?;
        let z = self.gates.forward(tape, xh, params)?;
        let hs = self.hidden;
        let i = tape.slice(z, 1, 0, hs)?;
        let i = tape.sigmoid(i)?;
        let f = tape.slice(z, 1, hs, 2 * hs)?;
        let f = tape.sigmoid(f)?;
        let g = tape.slice(z, 1, 2 * hs, 3 * hs)?;
        let g = tape.tanh(g)?;
        let o = tape.slice(z, 1, 3 * hs, 4 * hs)?;
        let o = tape.sigmoid(o)?;
        let fc = tape.mul(f, c)?;
        let ig = tape.mul(i, g)?;
        let c_next = tape.add(fc, ig)?;
        let tc = tape.tanh(c_next)?;
        let h_next = tape.mul(o, tc)?;
        Ok((h_next, c_next))
    }
}

impl Module for LstmCell {
    fn param_specs(&self) -> Vec<ParamSpec> {
        self.gates.param_specs()
    }
}

/// Elman cell `h' = tanh(W_x·x + W_h·h + b)`, stored as one `[H, input + H]`
/// matrix acting on `[x, h]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RnnCell {
    pub layer: LinearLayer,
    pub input: usize,
    pub hidden: usize,
}

impl RnnCell {
    pub fn new(prefix: impl Into<String>, input: usize, hidden: usize) -> Self {
        Self {
            layer: LinearLayer::new(prefix, input + hidden, hidden),
            input,
            hidden,
        }
    }

    pub fn step(&self, tape: &mut Tape, x: Var, h: Var, params: &BoundParams<'_>) -> Result<Var> {
        let xh = tape.concat(&[x, h], 1)?;
        let z = self.layer.forward(tape, xh, params)?;
        tape.tanh(z)
    }
}

impl Module for RnnCell {
    fn param_specs(&self) -> Vec<ParamSpec> {
        self.layer.param_specs()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RecurrentCell {
    Lstm(LstmCell),
    Rnn(RnnCell),
}

impl RecurrentCell {
    pub fn hidden(&self) -> usize {
        match self {
            RecurrentCell::Lstm(c) => c.hidden,
            RecurrentCell::Rnn(c) => c.hidden,
        }
    }

    pub fn input(&self) -> usize {
        match self {
            RecurrentCell::Lstm(c) => c.input,
            RecurrentCell::Rnn(c) => c.input,
        }
    }
}

impl Module for RecurrentCell {
    fn param_specs(&self) -> Vec<ParamSpec> {
        match self {
            RecurrentCell::Lstm(c) => c.param_specs(),
            RecurrentCell::Rnn(c) => c.param_specs(),
        }
    }
}

fn check_sequence(tape: &Tape, xs: &[Var], input: usize) -> Result<usize> {
    let first = xs.first().ok_or_else(|| Error::invalid("empty input sequence"))?;
    let shape = tape.value(*first).shape().to_vec();
    if shape.len() != 2 || shape[1] != input {
        return Err(Error::ShapeMismatch {
            op: "sequence input",
            lhs: shape,
            rhs: vec![input],
        });
    }
    for x in &xs[1..] {
        if tape.value(*x).shape() != shape.as_slice() {
            return Err(Error::ShapeMismatch {
                op: "sequence input",
                lhs: shape,
                rhs: tape.value(*x).shape().to_vec(),
            });
        }
    }
    Ok(shape[0])
}

/// Runs `cell` over `xs` from zero initial state and returns the final
/// hidden state. With `reverse` the sequence is consumed last to first.
pub fn encode_sequence(
    tape: &mut Tape,
    cell: &RecurrentCell,
    xs: &[Var],
    reverse: bool,
    params: &BoundParams<'_>,
) -> Result<Var> {
    let batch = check_sequence(tape, xs, cell.input())?;
    let zeros = Tensor::zeros(&[batch, cell.hidden()]);
    let mut h = tape.constant(zeros.clone());
    let mut c = tape.constant(zeros);
    let order: Box<dyn Iterator<Item = &Var>> = if reverse {
        Box::new(xs.iter().rev())
    } else {
        Box::new(xs.iter())
    };
    for &x in order {
        match cell {
            RecurrentCell::Lstm(cell) => {
                (h, c) = cell.step(tape, x, h, c, params)?;
            }
            RecurrentCell::Rnn(cell) => {
                h = cell.step(tape, x, h, params)?;
            }
        }
    }
    Ok(h)
}

/// Stacked LSTM layers; layer `k` consumes the hidden states of layer `k-1`.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedLstm {
    pub layers: Vec<LstmCell>,
}

impl StackedLstm {
    pub fn new(prefix: &str, input: usize, hidden: usize, num_layers: usize) -> Self {
        let layers = (0..num_layers)
            .map(|k| LstmCell::new(format!("{prefix}.{k}"), if k == 0 { input } else { hidden }, hidden))
            .collect();
        Self { layers }
    }

    pub fn hidden(&self) -> usize {
        self.layers[self.layers.len() - 1].hidden
    }

    /// Top-layer hidden state at every step.
    pub fn run(&self, tape: &mut Tape, xs: &[Var], params: &BoundParams<'_>) -> Result<Vec<Var>> {
        let batch = check_sequence(tape, xs, self.layers[0].input)?;
        let mut state: Vec<(Var, Var)> = self
            .layers
            .iter()
            .map(|l| {
                let z = Tensor::zeros(&[batch, l.hidden]);
                (tape.constant(z.clone()), tape.constant(z))
            })
            .collect();
        let mut outputs = Vec::with_capacity(xs.len());
        for &x in xs {
            let mut input = x;
            for (layer, (h, c)) in self.layers.iter().zip(state.iter_mut()) {
                (*h, *c) = layer.step(tape, input, *h, *c, params)?;
                input = *h;
            }
            outputs.push(input);
        }
        Ok(outputs)
    }
}

impl Module for StackedLstm {
    fn param_specs(&self) -> Vec<ParamSpec> {
        self.layers.iter().flat_map(|l| l.param_specs()).collect()
    }
}
