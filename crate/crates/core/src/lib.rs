//! Optimistic proximal policy optimization on tabular finite-horizon MDPs.
//!
//! The crate bundles the pieces needed to train and check the method:
//!
//! * [`mdp`] and [`bandit`]: finite-horizon tabular MDPs, the bandit-tile
//!   grid world and the sticky-action wrapper.
//! * [`belief`]: Dirichlet/Gaussian posteriors, local uncertainty ν and the
//!   count-based bonuses.
//! * [`ube`] and [`verify`]: exact backward induction for the mean and
//!   uncertainty Bellman equations, the optimistic value and its surrogate,
//!   plus Monte-Carlo and finite-difference checks of the bounds.
//! * [`nn`] and [`rnd`]: a small feed-forward network with manual
//!   backpropagation and the random-network-distillation bonus built on it.
//! * [`agent`]: rollouts, two-head advantage estimation, the optimistic
//!   advantage and the clipped policy update.
//! * [`harness`]: experiment configuration, metrics CSVs and the
//!   verification suite behind the command-line tool.

pub mod agent;
pub mod bandit;
pub mod belief;
pub mod error;
pub mod harness;
pub mod mdp;
pub mod nn;
pub mod par;
pub mod policy;
pub mod rnd;
pub mod rng;
pub mod testbed;
pub mod ube;
pub mod verify;

pub use error::{Error, Result};
