//! Equilibrium models for transportation networks: traffic assignment under
//! the Beckmann and stable-dynamics models, entropy-regularized trip
//! distribution, and the combined distribution, modal split and assignment
//! model, all solved through their duals.

pub mod assignment;
pub mod combined;
pub mod distribution;
pub mod error;
pub mod line_search;
pub mod network;
pub mod od;
pub mod paths;
pub mod synthetic;
pub mod tntp;
pub mod trace;

pub use error::{Error, Result};
pub use network::{BprParams, CostModel, Link, LinkCost, LinkKind, Network};
pub use od::OdMatrix;
pub use paths::{CostMatrix, PathEngine};
