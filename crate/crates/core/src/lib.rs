//! Gaussian-process mode-shape expansion.

pub mod eigen;
pub mod error;
pub mod gp;
pub mod optimizer;
pub mod orthogonality;
pub mod pipeline;
pub mod structural;

pub use error::{Error, Result};
