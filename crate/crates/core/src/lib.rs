//! Multi-indicator network tomography workbench.
//!
//! Path-level delay, loss and bandwidth are treated as views of one latent
//! network state. The crate simulates such measurements, learns a shared
//! latent space with a contrastive alignment objective plus a denoising
//! reconstruction objective, and runs downstream link, OD and topology
//! inference on the denoised indicators against PCA/CCA baselines.

pub mod baselines;
pub mod error;
pub mod gradcheck;
pub mod linalg;
pub mod netmodel;
pub mod neural;
pub mod objectives;
pub mod pipeline;
pub mod rng;
pub mod simkit;
pub mod theorylab;
pub mod tomo;
pub mod trainer;

pub use error::{PlatoError, Result};
pub use linalg::Matrix;
