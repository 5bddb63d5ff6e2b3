//! LSTM autoencoder baseline trained on reconstruction RMSE.
//!
//! A stacked LSTM reads the sequence, a linear head compresses the final
//! hidden state to a 2-dimensional code, and a mirrored stacked LSTM fed the
//! code at every step produces hidden states that a linear readout maps back
//! to the two features. The baseline has no notion of continuous time and
//! does not extrapolate.

use serde::{Deserialize, Serialize};

use crate::data::{SequenceBatch, FEATURES};
use crate::diffcore::{BoundParams, ParamSet, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::latentode::sequence_steps;
use crate::nn::{init_params, LinearLayer, Module, ParamSpec, StackedLstm};
use crate::train::Adam;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineConfig {
    pub num_layers: usize,
    pub hidden_size: usize,
    pub encoded_dim: usize,
}

impl Default for BaselineConfig {
    /// Two LSTM layers of 45 units and a 2-dimensional code.
    fn default() -> Self {
        Self {
            num_layers: 2,
            hidden_size: 45,
            encoded_dim: 2,
        }
    }
}

impl BaselineConfig {
    /// Same layout as the default with 16 units per layer.
    pub fn desk() -> Self {
        Self {
            hidden_size: 16,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_layers == 0 || self.hidden_size == 0 || self.encoded_dim == 0 {
            return Err(Error::Config("baseline sizes must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmAutoencoder {
    pub config: BaselineConfig,
    pub encoder: StackedLstm,
    pub code: LinearLayer,
    pub decoder: StackedLstm,
    pub readout: LinearLayer,
}

impl LstmAutoencoder {
    pub fn new(config: BaselineConfig) -> Result<Self> {
        config.validate()?;
        let (h, k, d) = (config.hidden_size, config.num_layers, config.encoded_dim);
        Ok(Self {
            encoder: StackedLstm::new("benc", FEATURES, h, k),
            code: LinearLayer::new("code", h, d),
            decoder: StackedLstm::new("bdec", d, h, k),
            readout: LinearLayer::new("out", h, FEATURES),
            config,
        })
    }

    pub fn init_params(&self, seed: u64) -> Result<ParamSet> {
        init_params(&[self as &dyn Module], seed)
    }

    /// Code vectors `[B, encoded_dim]` for a batch laid out per time step.
    pub fn encode_on_tape(&self, tape: &mut Tape, xs: &[Var], params: &BoundParams<'_>) -> Result<Var> {
        let hs = self.encoder.run(tape, xs, params)?;
        let last = *hs.last().ok_or_else(|| Error::invalid("empty input sequence"))?;
        self.code.forward(tape, last, params)
    }

    /// Reconstruction stacked time-major as `[T·B, 2]`.
    pub fn forward_on_tape(&self, tape: &mut Tape, steps: &[Tensor], params: &BoundParams<'_>) -> Result<Var> {
        if steps.is_empty() {
            return Err(Error::invalid("empty input sequence"));
        }
        let xs: Vec<Var> = steps.iter().map(|x| tape.constant(x.clone())).collect();
        let code = self.encode_on_tape(tape, &xs, params)?;
        let inputs = vec![code; steps.len()];
        let hs = self.decoder.run(tape, &inputs, params)?;
        let stacked = tape.concat(&hs, 0)?;
        self.readout.forward(tape, stacked, params)
    }

    /// Reconstruction of a batch, one `[B, 2]` tensor per time step.
    pub fn reconstruct_batch(&self, params: &ParamSet, steps: &[Tensor]) -> Result<Vec<Tensor>> {
        let mut tape = Tape::new();
        let bound = tape.bind(params, false);
        let out = self.forward_on_tape(&mut tape, steps, &bound)?;
        tape.value(out).split_rows(steps.len())
    }

    /// Reconstruction of one `[T, 2]` sequence.
    pub fn forward(&self, params: &ParamSet, x: &Tensor) -> Result<Tensor> {
        let steps = sequence_steps(x)?;
        Tensor::vstack(&self.reconstruct_batch(params, &steps)?)
    }

    /// 2-dimensional code of each sequence in a batch.
    pub fn encode_batch(&self, params: &ParamSet, steps: &[Tensor]) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = tape.bind(params, false);
        let xs: Vec<Var> = steps.iter().map(|x| tape.constant(x.clone())).collect();
        let code = self.encode_on_tape(&mut tape, &xs, &bound)?;
        Ok(tape.value(code).clone())
    }

    /// RMSE over every time step, feature and sample of the batch, with its gradient.
    pub fn loss_and_grads(&self, params: &ParamSet, batch: &SequenceBatch) -> Result<(f64, ParamSet)> {
        let mut tape = Tape::new();
        let bound = tape.bind(params, true);
        let recon = self.forward_on_tape(&mut tape, &batch.steps, &bound)?;
        let target = tape.constant(Tensor::vstack(&batch.steps)?);
        let diff = tape.sub(recon, target)?;
        let sq = tape.square(diff)?;
        let mse = tape.mean(sq)?;
        let loss = tape.sqrt(mse)?;
        let value = tape.value(loss).item()?;
        if value == 0.0 {
            // d√x/dx is unbounded at an exact fit.
            return Ok((0.0, params.zeros_like()));
        }
        let grads = tape.backward(loss, &bound)?;
        Ok((value, grads))
    }

    pub fn evaluate(&self, params: &ParamSet, batch: &SequenceBatch) -> Result<f64> {
        let recon = self.reconstruct_batch(params, &batch.steps)?;
        rmse(&Tensor::vstack(&recon)?, &Tensor::vstack(&batch.steps)?)
    }

    /// One Adam update; returns the batch RMSE before the update.
    pub fn train_step(&self, params: &mut ParamSet, batch: &SequenceBatch, adam: &mut Adam) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        let (loss, grads) = self.loss_and_grads(params, batch)?;
        adam.step(params, &grads)?;
        Ok(loss)
    }
}

impl Module for LstmAutoencoder {
    fn param_specs(&self) -> Vec<ParamSpec> {
        let mut specs = self.encoder.param_specs();
        specs.extend(self.code.param_specs());
        specs.extend(self.decoder.param_specs());
        specs.extend(self.readout.param_specs());
        specs
    }
}

/// `sqrt(mean((pred − target)²))` over every entry.
pub fn rmse(pred: &Tensor, target: &Tensor) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(Error::ShapeMismatch {
            op: "rmse",
            lhs: pred.shape().to_vec(),
            rhs: target.shape().to_vec(),
        });
    }
    if pred.numel() == 0 {
        return Err(Error::invalid("rmse of empty sequences"));
    }
    let sse: f64 = pred.data().iter().zip(target.data()).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((sse / pred.numel() as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::data::{gen_springs, subsample, SpringKind};

    #[test]
    fn output_shape_matches_input() {
        let model = LstmAutoencoder::new(BaselineConfig::default()).unwrap();
        let params = model.init_params(1).unwrap();
        for t in [1, 48, 200] {
            let x = Tensor::new(vec![t, 2], (0..2 * t).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
            assert_eq!(model.forward(&params, &x).unwrap().shape(), &[t, 2]);
        }
    }

    #[test]
    fn zero_weights_reconstruct_zero() {
        let model = LstmAutoencoder::new(BaselineConfig::default()).unwrap();
        let params = model.init_params(1).unwrap().zeros_like();
        let x = Tensor::full(&[30, 2], 0.7);
        assert!(model.forward(&params, &x).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn code_is_two_dimensional() {
        let model = LstmAutoencoder::new(BaselineConfig::default()).unwrap();
        let params = model.init_params(2).unwrap();
        for t in [1, 17, 90] {
            let steps = vec![Tensor::full(&[3, 2], 0.1); t];
            assert_eq!(model.encode_batch(&params, &steps).unwrap().shape(), &[3, 2]);
        }
    }

    #[test]
    fn rejects_empty_sequence() {
        let model = LstmAutoencoder::new(BaselineConfig::desk()).unwrap();
        let params = model.init_params(1).unwrap();
        assert!(model.reconstruct_batch(&params, &[]).is_err());
    }

    #[test]
    fn rmse_examples() {
        let a = Tensor::matrix(3, 2, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap();
        assert_eq!(rmse(&a, &a).unwrap(), 0.0);
        assert!((rmse(&a.map(|v| v + 1.0), &a).unwrap() - 1.0).abs() < 1e-15);
        let p = Tensor::matrix(1, 2, vec![3.0, 4.0]).unwrap();
        let t = Tensor::zeros(&[1, 2]);
        // mean of {9, 16} = 12.5
        assert!((rmse(&p, &t).unwrap() - 12.5f64.sqrt()).abs() < 1e-15);
        assert!(rmse(&p, &a).is_err());
    }

    proptest! {
        #[test]
        fn rmse_is_symmetric(xs in prop::collection::vec(-5.0f64..5.0, 8), ys in prop::collection::vec(-5.0f64..5.0, 8)) {
            let a = Tensor::matrix(4, 2, xs).unwrap();
            let b = Tensor::matrix(4, 2, ys).unwrap();
            prop_assert_eq!(rmse(&a, &b).unwrap(), rmse(&b, &a).unwrap());
            prop_assert_eq!(rmse(&a, &b).unwrap() == 0.0, a == b);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let cfg = BaselineConfig {
            num_layers: 2,
            hidden_size: 3,
            encoded_dim: 2,
        };
        let model = LstmAutoencoder::new(cfg).unwrap();
        let params = model.init_params(4).unwrap();
        let ds = gen_springs(&[SpringKind::Damped], 2, 3).unwrap();
        let ds = subsample(&ds, 6).unwrap().observed;
        let batch = ds.batch(&[0, 1]).unwrap();
        let (_, g) = model.loss_and_grads(&params, &batch).unwrap();
        let fd = crate::diffcore::finite_diff(|p| Ok(model.loss_and_grads(p, &batch)?.0), &params, 1e-6).unwrap();
        assert!(crate::diffcore::max_relative_error(&g, &fd, 1e-3) < 1e-5);
    }

    #[test]
    fn overfits_one_sample() {
        let ds = gen_springs(&[SpringKind::Undamped], 2, 1).unwrap();
        let ds = subsample(&ds, 100).unwrap().observed;
        let batch = ds.batch(&[0]).unwrap();
        let model = LstmAutoencoder::new(BaselineConfig::desk()).unwrap();
        let mut params = model.init_params(1).unwrap();
        let mut adam = Adam::new(&params, 0.005);
        for _ in 0..500 {
            model.train_step(&mut params, &batch, &mut adam).unwrap();
        }
        let err = model.evaluate(&params, &batch).unwrap();
        assert!(err < 0.05, "rmse {err}");
    }

    #[test]
    fn does_not_use_the_ode_solver() {
        let src = include_str!("baseline.rs");
        let needle = ["crate", "::", "odeint"].concat();
        assert!(!src.contains(&needle));
    }
}
