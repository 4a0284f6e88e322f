//! Kernel ridge regression for nonlinear vector autoregressions.
pub mod concentration;
pub mod dynamics;
pub mod error;
pub mod experiments;
pub mod kernels;
pub mod krr;
pub mod mercer;
pub(crate) mod quadrature;
pub mod table;

pub use error::{Error, Result};
