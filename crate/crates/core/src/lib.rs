//! Reference-guided unpaired point cloud completion.
//!
//! A partial cloud is completed by translating its latent feature toward the
//! complete-shape feature space, using retrieved reference pairs (a complete
//! cloud and its template-guided degradation) as supervision for a branch that
//! shares every parameter with the target branch.

pub mod autodiff;
pub mod cli;
pub mod corpus;
pub mod error;
pub mod geom;
pub mod io_util;
pub mod losses;
pub mod metrics;
pub mod netmodel;
pub mod refdata;
pub mod seed;
pub mod trainer;
pub mod verify;

pub use error::{Error, Result};
