//! Simulation of parity-protected multiphoton bundle emission from a driven
//! qubit coupled ultrastrongly to a cavity mode.

pub mod config;
pub mod correlations;
pub mod dressed;
pub mod effective_rate;
pub mod error;
pub mod evolution;
pub mod experiment;
pub mod hilbert;
mod linalg;
pub mod model;
pub mod parallel;
pub mod propagate;
pub mod settings;
pub mod steady;
pub mod trajectories;

pub use error::{Error, Result};
pub use hilbert::{SystemParams, C64};
pub use model::DrivenModel;
pub use settings::{Numerics, SteadyStateMethod};
