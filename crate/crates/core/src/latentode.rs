//! Latent-ODE variational autoencoder.
//!
//! A recurrent encoder reads a sequence last-to-first and a linear head maps
//! its final hidden state to the posterior `q(z₀|x) = N(mu, exp(logvar))`.
//! A sampled `z₀` is integrated through a learned vector field and every
//! latent state is mapped back to the data space by a one-hidden-layer
//! readout network. Training minimises the negative ELBO with a standard
//! normal prior and a Gaussian observation model.
//!
//! Gradients for the encoder and readout come from the tape; gradients for
//! the vector field come from [`solve_adjoint`], so the forward solve stores
//! nothing but the states at observation times.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{SequenceBatch, FEATURES};
use crate::diffcore::{BoundParams, ParamSet, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::nn::{encode_sequence, init_params, Activation, LinearLayer, LstmCell, Mlp, Module, ParamSpec, RecurrentCell, RnnCell};
use crate::odeint::{integrate, solve_adjoint, Trajectory, TimeGrid, VectorField, DEFAULT_SUBSTEPS};
use crate::train::Adam;

pub const LOGVAR_CLAMP: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    Rnn,
    Lstm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatentOdeConfig {
    pub encoder: EncoderKind,
    pub encoder_hidden: usize,
    pub latent_dim: usize,
    pub field_hidden_layers: usize,
    pub field_hidden: usize,
    pub field_activation: Activation,
    pub readout_hidden: usize,
    pub readout_activation: Activation,
    pub observation_std: f64,
    /// RK4 steps per observation interval.
    pub substeps: usize,
    /// Time at which `z₀` lives; decoding integrates forward and backward from here.
    pub t0: f64,
}

impl LatentOdeConfig {
    /// RNN-45 encoder, 3×30 ELU field, 30-unit ReLU readout.
    pub fn spiral() -> Self {
        Self {
            encoder: EncoderKind::Rnn,
            encoder_hidden: 45,
            latent_dim: 4,
            field_hidden_layers: 3,
            field_hidden: 30,
            field_activation: Activation::Elu,
            readout_hidden: 30,
            readout_activation: Activation::Relu,
            observation_std: 0.1,
            substeps: DEFAULT_SUBSTEPS,
            t0: 0.0,
        }
    }

    /// LSTM-60 encoder, 3×40 ELU field, 40-unit ReLU readout.
    pub fn spring() -> Self {
        Self {
            encoder: EncoderKind::Lstm,
            encoder_hidden: 60,
            field_hidden: 40,
            readout_hidden: 40,
            ..Self::spiral()
        }
    }

    pub fn solar() -> Self {
        Self::spring()
    }

    /// Reduced widths and one RK4 step per interval, sized for single-core
    /// training runs of a few thousand epochs.
    pub fn desk() -> Self {
        Self {
            encoder: EncoderKind::Lstm,
            encoder_hidden: 16,
            latent_dim: 4,
            field_hidden_layers: 2,
            field_hidden: 16,
            field_activation: Activation::Elu,
            readout_hidden: 16,
            readout_activation: Activation::Relu,
            observation_std: 0.1,
            substeps: 1,
            t0: 0.0,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "spiral" => Ok(Self::spiral()),
            "spring" => Ok(Self::spring()),
            "solar" => Ok(Self::solar()),
            "desk" => Ok(Self::desk()),
            other => Err(Error::Config(format!("unknown model preset `{other}`"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let sizes = [
            ("encoder_hidden", self.encoder_hidden),
            ("latent_dim", self.latent_dim),
            ("field_hidden_layers", self.field_hidden_layers),
            ("field_hidden", self.field_hidden),
            ("readout_hidden", self.readout_hidden),
            ("substeps", self.substeps),
        ];
        for (name, v) in sizes {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !(self.observation_std > 0.0) || !self.observation_std.is_finite() {
            return Err(Error::Config("observation_std must be positive".into()));
        }
        if !self.t0.is_finite() {
            return Err(Error::Config("t0 must be finite".into()));
        }
        Ok(())
    }
}

/// Posterior mean and log-variance; rows are samples (`[B, latent]`) or a
/// single `[latent]` vector.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorParams {
    pub mu: Tensor,
    pub logvar: Tensor,
}

impl PosteriorParams {
    /// `KL(q ‖ N(0, I))`, summed over every entry.
    pub fn kl(&self) -> f64 {
        self.mu
            .data()
            .iter()
            .zip(self.logvar.data())
            .map(|(&m, &lv)| 0.5 * (m * m + lv.exp() - lv - 1.0))
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElboParts {
    pub reconstruction_loglik: f64,
    pub kl: f64,
    pub elbo: f64,
}

fn gaussian_log_norm(std: f64) -> f64 {
    -(std * (2.0 * PI).sqrt()).ln()
}

/// ELBO of one or more sequences under `N(recon, std²)` observations.
pub fn elbo(x: &Tensor, recon: &Tensor, p: &PosteriorParams, observation_std: f64) -> Result<ElboParts> {
    if !(observation_std > 0.0) {
        return Err(Error::invalid(format!("observation std must be positive, got {observation_std}")));
    }
    if x.shape() != recon.shape() {
        return Err(Error::ShapeMismatch {
            op: "elbo",
            lhs: x.shape().to_vec(),
            rhs: recon.shape().to_vec(),
        });
    }
    let inv_var = 1.0 / (observation_std * observation_std);
    let sse: f64 = x.data().iter().zip(recon.data()).map(|(a, b)| (a - b) * (a - b)).sum();
    let loglik = x.numel() as f64 * gaussian_log_norm(observation_std) - 0.5 * inv_var * sse;
    let kl = p.kl();
    Ok(ElboParts {
        reconstruction_loglik: loglik,
        kl,
        elbo: loglik - kl,
    })
}

/// `z₀ = mu + exp(0.5·logvar) ⊙ eps`.
pub fn reparameterize(p: &PosteriorParams, eps: &Tensor) -> Result<Tensor> {
    if eps.numel() != p.mu.numel() {
        return Err(Error::ShapeMismatch {
            op: "reparameterize",
            lhs: p.mu.shape().to_vec(),
            rhs: eps.shape().to_vec(),
        });
    }
    let data = p
        .mu
        .data()
        .iter()
        .zip(p.logvar.data())
        .zip(eps.data())
        .map(|((&m, &lv), &e)| m + (0.5 * lv).exp() * e)
        .collect();
    Tensor::new(p.mu.shape().to_vec(), data)
}

/// Standard normal noise of shape `[rows, cols]`.
pub fn sample_eps(rng: &mut impl Rng, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect();
    Tensor::new(vec![rows, cols], data).expect("eps shape")
}

/// Latent dynamics `dz/dt = f(z)`; time enters only through integration.
#[derive(Debug, Clone, PartialEq)]
pub struct OdeField {
    pub net: Mlp,
}

impl VectorField for OdeField {
    fn eval(&self, tape: &mut Tape, z: Var, _t: f64, params: &BoundParams<'_>) -> Result<Var> {
        self.net.forward(tape, z, params)
    }
}

impl Module for OdeField {
    fn param_specs(&self) -> Vec<ParamSpec> {
        self.net.param_specs()
    }
}

/// Parameter name prefixes, one per component.
pub const ENCODER_PREFIX: &str = "enc";
pub const HEAD_PREFIX: &str = "head";
pub const FIELD_PREFIX: &str = "ode";
pub const READOUT_PREFIX: &str = "dec";

#[derive(Debug, Clone, PartialEq)]
pub struct LatentOde {
    pub config: LatentOdeConfig,
    pub encoder: RecurrentCell,
    pub head: LinearLayer,
    pub field: OdeField,
    pub readout: Mlp,
}

/// Output of one training-loss evaluation, averaged over the batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchLoss {
    /// Mean −ELBO.
    pub loss: f64,
    pub reconstruction_loglik: f64,
    pub kl: f64,
}

impl LatentOde {
    pub fn new(config: LatentOdeConfig) -> Result<Self> {
        config.validate()?;
        let h = config.encoder_hidden;
        let l = config.latent_dim;
        let encoder = match config.encoder {
            EncoderKind::Lstm => RecurrentCell::Lstm(LstmCell::new(ENCODER_PREFIX, FEATURES, h)),
            EncoderKind::Rnn => RecurrentCell::Rnn(RnnCell::new(ENCODER_PREFIX, FEATURES, h)),
        };
        let head = LinearLayer::new(HEAD_PREFIX, h, 2 * l);
        let field = OdeField {
            net: Mlp::new(
                FIELD_PREFIX,
                l,
                config.field_hidden,
                config.field_hidden_layers,
                l,
                config.field_activation,
            ),
        };
        let readout = Mlp::new(READOUT_PREFIX, l, config.readout_hidden, 1, FEATURES, config.readout_activation);
        Ok(Self {
            config,
            encoder,
            head,
            field,
            readout,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    pub fn init_params(&self, seed: u64) -> Result<ParamSet> {
        init_params(&[self as &dyn Module], seed)
    }

    /// Encoder graph on `tape`: returns `(mu, logvar)` as `[B, latent]` vars.
    pub fn encode_on_tape(&self, tape: &mut Tape, steps: &[Tensor], params: &BoundParams<'_>) -> Result<(Var, Var)> {
        if steps.is_empty() {
            return Err(Error::invalid("empty input sequence"));
        }
        let xs: Vec<Var> = steps.iter().map(|x| tape.constant(x.clone())).collect();
        let h = encode_sequence(tape, &self.encoder, &xs, true, params)?;
        let out = self.head.forward(tape, h, params)?;
        let l = self.latent_dim();
        let mu = tape.slice(out, 1, 0, l)?;
        let raw = tape.slice(out, 1, l, 2 * l)?;
        let logvar = tape.clamp(raw, -LOGVAR_CLAMP, LOGVAR_CLAMP)?;
        Ok((mu, logvar))
    }

    /// Posterior for a batch laid out per time step (`steps[t]` is `[B, 2]`).
    pub fn encode_batch(&self, params: &ParamSet, steps: &[Tensor]) -> Result<PosteriorParams> {
        let mut tape = Tape::new();
        let bound = tape.bind(params, false);
        let (mu, logvar) = self.encode_on_tape(&mut tape, steps, &bound)?;
        Ok(PosteriorParams {
            mu: tape.value(mu).clone(),
            logvar: tape.value(logvar).clone(),
        })
    }

    /// Posterior of one `[T, 2]` sequence; `mu` and `logvar` are `[latent]`.
    pub fn encode(&self, params: &ParamSet, x: &Tensor) -> Result<PosteriorParams> {
        let steps = sequence_steps(x)?;
        let p = self.encode_batch(params, &steps)?;
        let l = self.latent_dim();
        Ok(PosteriorParams {
            mu: p.mu.reshape(vec![l])?,
            logvar: p.logvar.reshape(vec![l])?,
        })
    }

    /// Latent states at `times` (strictly increasing, may straddle `t0`).
    /// Points before `t0` are reached by integrating backward from `z0`.
    pub fn latent_path(&self, params: &ParamSet, z0: &Tensor, times: &[f64]) -> Result<Vec<Tensor>> {
        if times.is_empty() {
            return Err(Error::InvalidGrid("empty decode grid".into()));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidGrid("decode times must be strictly increasing".into()));
        }
        let t0 = self.config.t0;
        let split = times.partition_point(|&t| t < t0);
        let mut out = Vec::with_capacity(times.len());

        if split > 0 {
            let mut back = vec![t0];
            back.extend(times[..split].iter().rev());
            let mut states = integrate(&self.field, z0, &back, params, self.config.substeps)?;
            states.remove(0);
            states.reverse();
            out.extend(states);
        }
        let ahead = &times[split..];
        if !ahead.is_empty() {
            if ahead[0] == t0 {
                out.extend(integrate(&self.field, z0, ahead, params, self.config.substeps)?);
            } else {
                let mut fwd = vec![t0];
                fwd.extend_from_slice(ahead);
                let mut states = integrate(&self.field, z0, &fwd, params, self.config.substeps)?;
                states.remove(0);
                out.extend(states);
            }
        }
        Ok(out)
    }

    /// Readout of latent states (`[N, latent]` → `[N, 2]`).
    pub fn readout_values(&self, params: &ParamSet, z: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = tape.bind(params, false);
        let zv = tape.constant(z.clone());
        let out = self.readout.forward(&mut tape, zv, &bound)?;
        Ok(tape.value(out).clone())
    }

    /// Decodes `[B, latent]` initial states; returns one `[B, 2]` tensor per time.
    pub fn decode_batch(&self, params: &ParamSet, z0: &Tensor, times: &[f64]) -> Result<Vec<Tensor>> {
        let states = self.latent_path(params, z0, times)?;
        let b = z0.rows();
        let stacked = Tensor::vstack(&states)?;
        let recon = self.readout_values(params, &stacked)?;
        debug_assert_eq!(recon.rows(), b * times.len());
        recon.split_rows(times.len())
    }

    /// Decodes a single `[latent]` state into a `[|times|, 2]` sequence.
    pub fn decode(&self, params: &ParamSet, z0: &Tensor, times: &[f64]) -> Result<Tensor> {
        let z = z0.clone().reshape(vec![1, self.latent_dim()])?;
        let steps = self.decode_batch(params, &z, times)?;
        Tensor::vstack(&steps)
    }

    /// Posterior-mean reconstruction of a batch at `times`.
    pub fn reconstruct_batch(&self, params: &ParamSet, steps: &[Tensor], times: &[f64]) -> Result<Vec<Tensor>> {
        let p = self.encode_batch(params, steps)?;
        self.decode_batch(params, &p.mu, times)
    }

    /// Mean −ELBO of a batch at the posterior mean (`eps = 0`).
    pub fn evaluate(&self, params: &ParamSet, batch: &SequenceBatch) -> Result<BatchLoss> {
        let p = self.encode_batch(params, &batch.steps)?;
        let recon = self.decode_batch(params, &p.mu, &batch.times)?;
        let b = batch.len() as f64;
        let parts = elbo(&Tensor::vstack(&batch.steps)?, &Tensor::vstack(&recon)?, &p, self.config.observation_std)?;
        Ok(BatchLoss {
            loss: -parts.elbo / b,
            reconstruction_loglik: parts.reconstruction_loglik / b,
            kl: parts.kl / b,
        })
    }

    /// Mean −ELBO of `batch` with noise `eps` (`[B, latent]`) and its gradient
    /// with respect to every parameter.
    pub fn loss_and_grads(&self, params: &ParamSet, batch: &SequenceBatch, eps: &Tensor) -> Result<(BatchLoss, ParamSet)> {
        let b = batch.len();
        if b == 0 {
            return Err(Error::invalid("empty batch"));
        }
        let l = self.latent_dim();
        if eps.shape() != [b, l] {
            return Err(Error::ShapeMismatch {
                op: "loss_and_grads eps",
                lhs: vec![b, l],
                rhs: eps.shape().to_vec(),
            });
        }
        let bf = b as f64;
        let t0 = self.config.t0;
        let times = &batch.times;
        if times[0] < t0 {
            return Err(Error::InvalidGrid(format!("training times start before t0={t0}")));
        }

        // Encoder and sampling.
        let mut enc_tape = Tape::new();
        let enc_bound = enc_tape.bind(params, true);
        let (mu, logvar) = self.encode_on_tape(&mut enc_tape, &batch.steps, &enc_bound)?;
        let half = enc_tape.scale(logvar, 0.5)?;
        let std = enc_tape.exp(half)?;
        let epsv = enc_tape.constant(eps.clone());
        let noise = enc_tape.mul(std, epsv)?;
        let z0 = enc_tape.add(mu, noise)?;
        let kl = {
            let mu2 = enc_tape.square(mu)?;
            let var = enc_tape.exp(logvar)?;
            let s = enc_tape.add(mu2, var)?;
            let s = enc_tape.sub(s, logvar)?;
            let s = enc_tape.add_scalar(s, -1.0)?;
            let s = enc_tape.sum(s)?;
            enc_tape.scale(s, 0.5)?
        };
        let kl_value = enc_tape.value(kl).item()?;
        let z0_value = enc_tape.value(z0).clone();

        // Forward solve; the grid starts at t0 even when the data does not.
        let prepend = times[0] > t0;
        let mut ode_times = Vec::with_capacity(times.len() + 1);
        if prepend {
            ode_times.push(t0);
        }
        ode_times.extend_from_slice(times);
        let field_params = params.subset(&format!("{FIELD_PREFIX}."));
        let states = if ode_times.len() == 1 {
            vec![z0_value.clone()]
        } else {
            integrate(&self.field, &z0_value, &ode_times, &field_params, self.config.substeps)?
        };
        let observed = &states[usize::from(prepend)..];

        // Readout and reconstruction likelihood.
        let mut dec_tape = Tape::new();
        let dec_bound = dec_tape.bind(params, true);
        let zs = dec_tape.variable(Tensor::vstack(observed)?);
        let recon = self.readout.forward(&mut dec_tape, zs, &dec_bound)?;
        let target = dec_tape.constant(Tensor::vstack(&batch.steps)?);
        let diff = dec_tape.sub(recon, target)?;
        let sq = dec_tape.square(diff)?;
        let sse = dec_tape.sum(sq)?;
        let sigma = self.config.observation_std;
        let n_obs = (times.len() * b * FEATURES) as f64;
        let nll = dec_tape.scale(sse, 0.5 / (sigma * sigma))?;
        let nll = dec_tape.add_scalar(nll, -n_obs * gaussian_log_norm(sigma))?;
        let nll_value = dec_tape.value(nll).item()?;
        let per_sample = dec_tape.scale(nll, 1.0 / bf)?;
        let mut grads = dec_tape.backward(per_sample, &dec_bound)?;
        let mut dl_dz = dec_tape.grad(zs).split_rows(times.len())?;
        if prepend {
            dl_dz.insert(0, Tensor::zeros(&[b, l]));
        }

        // Vector-field gradients and dL/dz0 from the adjoint solve.
        let dz0 = if ode_times.len() == 1 {
            dl_dz.remove(0)
        } else {
            let traj = Trajectory::new(TimeGrid::new(ode_times)?, states)?;
            let adj = solve_adjoint(&self.field, &traj, &dl_dz, &field_params, self.config.substeps)?;
            for (name, g) in adj.params.iter() {
                grads.get_mut(name)?.axpy(1.0, g)?;
            }
            adj.z0
        };

        // Encoder gradients: d/dθ of KL/B + <z0, dL/dz0>.
        let dz0v = enc_tape.constant(dz0);
        let inner = enc_tape.mul(z0, dz0v)?;
        let inner = enc_tape.sum(inner)?;
        let kl_mean = enc_tape.scale(kl, 1.0 / bf)?;
        let surrogate = enc_tape.add(kl_mean, inner)?;
        let enc_grads = enc_tape.backward(surrogate, &enc_bound)?;
        grads.axpy(1.0, &enc_grads)?;

        let loss = BatchLoss {
            loss: (nll_value + kl_value) / bf,
            reconstruction_loglik: -nll_value / bf,
            kl: kl_value / bf,
        };
        Ok((loss, grads))
    }

    /// One Adam update on `batch` with freshly sampled noise. Returns the
    /// mean −ELBO before the update.
    pub fn train_step(
        &self,
        params: &mut ParamSet,
        batch: &SequenceBatch,
        adam: &mut Adam,
        rng: &mut impl Rng,
    ) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        let eps = sample_eps(rng, batch.len(), self.latent_dim());
        let (loss, grads) = self.loss_and_grads(params, batch, &eps).map_err(|e| locate_divergence(e, batch))?;
        adam.step(params, &grads)?;
        Ok(loss.loss)
    }
}

/// Maps a batch row in a divergence error to the dataset sample index.
pub(crate) fn locate_divergence(err: Error, batch: &SequenceBatch) -> Error {
    match err {
        Error::IntegrationDiverged { t, step, row: Some(r) } if r < batch.indices.len() => Error::IntegrationDiverged {
            t,
            step,
            row: Some(batch.indices[r]),
        },
        other => other,
    }
}

impl Module for LatentOde {
    fn param_specs(&self) -> Vec<ParamSpec> {
        let mut specs = self.encoder.param_specs();
        specs.extend(self.head.param_specs());
        specs.extend(self.field.param_specs());
        specs.extend(self.readout.param_specs());
        specs
    }
}

/// Splits a `[T, 2]` sequence into `T` single-row `[1, 2]` steps.
pub fn sequence_steps(x: &Tensor) -> Result<Vec<Tensor>> {
    if x.rank() != 2 || x.cols() != FEATURES {
        return Err(Error::ShapeMismatch {
            op: "sequence",
            lhs: vec![x.rows(), FEATURES],
            rhs: x.shape().to_vec(),
        });
    }
    if x.rows() == 0 {
        return Err(Error::invalid("empty input sequence"));
    }
    x.split_rows(x.rows())
}

#[cfg(test)]
mod tests;
