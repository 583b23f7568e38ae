//! Numerical laboratory for the training dynamics of generative adversarial
//! imitation learning.
//!
//! * [`mdp`]: finite MDPs, occupancy and entropy-augmented value solves.
//! * [`flow`]: exact tabular GAIL gradient flow and desired-state diagnostics.
//! * [`onestep`]: the scalar one-step system, its controllers and integrators.
//! * [`stability`]: Jacobian, eigenvalue and assumption checks plus grid audits.
//! * [`train`]: discrete C-GAIL training with a controlled discriminator loss.
//! * [`metrics`]: state Wasserstein distance and run aggregation.
//! * [`io`]: JSON configs and CSV emission.

pub mod error;
pub mod fixtures;
pub mod flow;
pub mod io;
pub mod mdp;
pub mod metrics;
pub mod onestep;
pub mod stability;
pub mod train;

pub use error::{LabError, Result};
pub use mdp::{DiscriminatorTable, PolicyTable, TabularMdp};
pub use onestep::{Integrator, ScalarState, ScalarSystemParams};
pub use stability::{Jacobian2x2, StabilityVerdict};
pub use train::{TrainConfig, TrainingTrace};
