pub mod error;
pub mod kernels;
pub mod noise;
pub mod oracle;
pub mod solver;
pub mod specfun;
pub mod stats;
pub mod verify;

pub use error::{Error, Result};
