//! Monotone operator networks with a Jacobian-spectrum penalty, Tseng
//! forward-backward-forward splitting with an Armijo step rule, and tools
//! for saturated-blur deconvolution.

pub mod autodiff;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod fbf;
pub mod forward;
pub mod io;
pub mod restore;
pub mod spectral;
pub mod tensor;
pub mod trainer;
pub mod tv;

pub use error::{Error, Result};
pub use tensor::{Image, Kernel, Tensor};
