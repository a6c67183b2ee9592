//! Dense stacks and the LSTM cell, built on [`ParamStore`] entries.

use rand::Rng;

use crate::error::{AutodiffError, Result};
use crate::params::{Bound, ParamId, ParamStore};
use crate::tape::{Activation, Tape, Var};
use crate::tensor::Tensor;

/// Glorot-uniform `[rows, cols]` matrix with fan-in `cols` and fan-out `rows`.
pub fn glorot_uniform<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Tensor {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.random_range(-limit..=limit)).collect();
    Tensor::from_parts(vec![rows, cols], data)
}

/// One affine map followed by a pointwise activation.
#[derive(Clone, Debug)]
pub struct DenseLayer {
    pub weight: ParamId,
    pub bias: ParamId,
    pub activation: Activation,
    pub inputs: usize,
    pub outputs: usize,
}

impl DenseLayer {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        inputs: usize,
        outputs: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let weight = store.add(format!("{name}.weight"), glorot_uniform(rng, outputs, inputs), true);
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[outputs]), true);
        Self { weight, bias, activation, inputs, outputs }
    }

    pub fn forward(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<Var> {
        let y = tape.linear(x, bound.var(self.weight), Some(bound.var(self.bias)))?;
        tape.activation(y, self.activation)
    }
}

/// Feedforward network `A_L ∘ ϱ ∘ … ∘ ϱ ∘ A_1`.
#[derive(Clone, Debug)]
pub struct DenseStack {
    layers: Vec<DenseLayer>,
}

impl DenseStack {
    /// `widths` lists every layer size from the input to the output; hidden
    /// layers use `hidden`, the last layer uses `output`.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        widths: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(AutodiffError::InvalidShape(widths.to_vec()));
        }
        let n = widths.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let act = if i + 1 == n { output } else { hidden };
                DenseLayer::new(store, &format!("{name}.{i}"), widths[i], widths[i + 1], act, rng)
            })
            .collect();
        Ok(Self { layers })
    }

    /// Wraps existing layers, checking that consecutive sizes chain.
    pub fn from_layers(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(AutodiffError::Invalid("empty dense stack".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].outputs != pair[1].inputs {
                return Err(AutodiffError::ShapeMismatch {
                    op: "dense stack",
                    expected: vec![pair[0].outputs],
                    found: vec![pair[1].inputs],
                });
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn inputs(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn outputs(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs
    }

    pub fn forward(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<Var> {
        let cols = tape.value(x).cols();
        if cols != self.inputs() {
            return Err(AutodiffError::ShapeMismatch {
                op: "forward_dense",
                expected: vec![tape.value(x).rows(), self.inputs()],
                found: tape.value(x).shape().to_vec(),
            });
        }
        self.layers.iter().try_fold(x, |h, layer| layer.forward(tape, bound, h))
    }

    /// Sets every weight and bias of the stack to zero.
    pub fn zero(&self, store: &mut ParamStore) {
        for layer in &self.layers {
            store.get_mut(layer.weight).data_mut().fill(0.0);
            store.get_mut(layer.bias).data_mut().fill(0.0);
        }
    }
}

/// LSTM cell with input, recurrent and bias parameters stacked by gate in
/// the order forget, input, output, memory candidate.
#[derive(Clone, Debug)]
pub struct LstmCell {
    pub input_weights: ParamId,
    pub recurrent_weights: ParamId,
    pub bias: ParamId,
    pub inputs: usize,
    pub hidden: usize,
}

/// Carried state after one step. `output` is the cell output `C_t`, `memory` is `M_t`.
#[derive(Clone, Copy, Debug)]
pub struct LstmState {
    pub memory: Var,
    pub output: Var,
    pub forget: Var,
    pub input: Var,
    pub out_gate: Var,
}

impl LstmCell {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, inputs: usize, hidden: usize, rng: &mut R) -> Self {
        let mut input_weights = Vec::with_capacity(4 * hidden * inputs);
        let mut recurrent_weights = Vec::with_capacity(4 * hidden * hidden);
        for _ in 0..4 {
            input_weights.extend(glorot_uniform(rng, hidden, inputs).into_data());
            recurrent_weights.extend(glorot_uniform(rng, hidden, hidden).into_data());
        }
        let input_weights = store.add(
            format!("{name}.input_weights"),
            Tensor::from_parts(vec![4 * hidden, inputs], input_weights),
            true,
        );
        let recurrent_weights = store.add(
            format!("{name}.recurrent_weights"),
            Tensor::from_parts(vec![4 * hidden, hidden], recurrent_weights),
            true,
        );
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[4 * hidden]), true);
        Self { input_weights, recurrent_weights, bias, inputs, hidden }
    }

    /// One update. `prev` is `None` at sequence start, where `M_0 = C_0 = 0`.
    pub fn step(&self, tape: &mut Tape, bound: &Bound, x: Var, prev: Option<&LstmState>) -> Result<LstmState> {
        if tape.value(x).cols() != self.inputs {
            return Err(AutodiffError::ShapeMismatch {
                op: "forward_lstm",
                expected: vec![tape.value(x).rows(), self.inputs],
                found: tape.value(x).shape().to_vec(),
            });
        }
        let h = self.hidden;
        let mut z = tape.linear(x, bound.var(self.input_weights), Some(bound.var(self.bias)))?;
        if let Some(prev) = prev {
            let r = tape.linear(prev.output, bound.var(self.recurrent_weights), None)?;
            z = tape.add(z, r)?;
        }
        let zf = tape.slice_cols(z, 0, h)?;
        let zi = tape.slice_cols(z, h, h)?;
        let zo = tape.slice_cols(z, 2 * h, h)?;
        let zm = tape.slice_cols(z, 3 * h, h)?;
        let forget = tape.sigmoid(zf)?;
        let input = tape.sigmoid(zi)?;
        let out_gate = tape.sigmoid(zo)?;
        let candidate = tape.tanh(zm)?;
        let fresh = tape.mul(input, candidate)?;
        let memory = match prev {
            Some(prev) => {
                let kept = tape.mul(forget, prev.memory)?;
                tape.add(kept, fresh)?
            }
            None => fresh,
        };
        let squashed = tape.tanh(memory)?;
        let output = tape.mul(out_gate, squashed)?;
        Ok(LstmState { memory, output, forget, input, out_gate })
    }

    /// Runs the cell over a sequence and returns every output `C_1, …, C_T`.
    pub fn forward(&self, tape: &mut Tape, bound: &Bound, sequence: &[Var]) -> Result<Vec<Var>> {
        let mut state: Option<LstmState> = None;
        let mut outputs = Vec::with_capacity(sequence.len());
        for &x in sequence {
            let next = self.step(tape, bound, x, state.as_ref())?;
            outputs.push(next.output);
            state = Some(next);
        }
        Ok(outputs)
    }
}
