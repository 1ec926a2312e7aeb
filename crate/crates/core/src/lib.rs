//! Discrete oriented varifolds: kernel metrics, quantization onto a fixed
//! number of Diracs, and diffeomorphic registration by geodesic shooting.
//!
//! Shapes (curves, surfaces, or any d-dimensional oriented pieces in ℝⁿ) are
//! represented as weighted Diracs `Σ rᵢ δ_(xᵢ,Tᵢ)` whose plane `Tᵢ` and weight
//! `rᵢ` are both encoded by a frame of `d` vectors.

pub mod cli;
pub mod config;
pub mod error;
pub mod experiments;
pub mod grassmann;
pub mod io;
pub mod kernels;
pub mod optimize;
pub mod quantization;
pub mod registration;
pub mod shooting;
pub mod sum;
pub mod synth;
pub mod varifold;

pub use error::{Error, Result};
pub use grassmann::Frame;
pub use kernels::{DeformationKernel, GrassmannKernel, SpatialKernel, VarifoldKernel};
pub use config::RunConfig;
pub use quantization::{quantize, QuantizeConfig, QuantizeReport};
pub use registration::{register, RegistrationConfig, RegistrationReport};
pub use varifold::{distance_sq, inner_product, total_mass, DiscreteVarifold, OrientedFrameAtom};
