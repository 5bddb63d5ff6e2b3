//! Generative time-series models built on latent ordinary differential
//! equations.
//!
//! The crate contains everything from the bottom up: a reverse-mode autodiff
//! tape ([`diffcore`]), fixed-step RK4 integration with adjoint gradients
//! ([`odeint`]), recurrent and feed-forward layers ([`nn`]), the latent-ODE
//! VAE ([`latentode`]) and an LSTM autoencoder baseline ([`baseline`]),
//! synthetic and CSV datasets ([`data`]), Adam training with checkpoints
//! ([`train`]), evaluation reports ([`eval`]) and the experiment CLI ([`cli`]).

pub mod baseline;
pub mod cli;
pub mod data;
pub mod diffcore;
pub mod error;
pub mod eval;
pub mod latentode;
pub mod nn;
pub mod odeint;
pub mod train;

pub use error::{Error, Result};
