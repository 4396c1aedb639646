//! Certified spectral-norm bounds for dense and convolutional operators,
//! 1-Lipschitz rescalings, Lipschitz bounds for Gaussian-smoothed functions
//! and randomized-smoothing certification.
//!
//! Every bound is checkable against the brute-force routines in [`oracle`].

pub mod certify;
pub mod convnorm;
pub mod densenorm;
pub mod error;
pub mod linalg;
pub mod oracle;
pub mod rescale;
pub mod rng;
pub mod smoothbounds;
pub mod special;

pub use error::{Error, Result};
pub use linalg::DenseMatrix;
