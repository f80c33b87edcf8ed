//! Equilibrium Propagation training of convergent recurrent networks, sleep-like
//! spiking replay with STDP, and a class-incremental continual-learning harness.

pub mod analysis;
pub mod continual;
pub mod data;
pub mod ep_model;
pub mod error;
pub mod hyperopt;
pub mod numerics;
pub mod src_sleep;

pub use error::{Error, Result};
