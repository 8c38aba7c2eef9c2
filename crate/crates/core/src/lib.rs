//! Numerical engine for filtered calculus on graded exponential charts.
//!
//! The crate is organised bottom-up:
//!
//! * [`graded`] holds the graded vector space `V` with its dilations and
//!   homogeneous quasi-norm.
//! * [`chart`], [`metric`] and [`fiber`] implement the geometry of a filtered
//!   chart: the exponential map `Λ_x`, the quasi-metric `ρ` and the fiber
//!   measures `μ^{x,y}` obtained by co-area disintegration.
//! * [`profile`] and [`kernel`] turn profiles `f(x, z, ħ)` into dyadic kernel
//!   pieces and measure the four structural constants of a kernel family.
//! * [`operator`] evaluates the summed operators and estimates their norms.
//! * [`flow`] builds the transport flows that move fibers between base points.
//!
//! Randomised procedures take an explicit seed and derive independent
//! streams per task through [`rng::stream`], so every result is reproducible
//! regardless of thread count.

pub mod chart;
pub mod error;
pub mod fiber;
pub mod flow;
pub mod graded;
pub mod kernel;
pub mod metric;
pub mod operator;
pub mod poly;
pub mod profile;
pub mod quadrature;
pub mod rng;
pub mod stats;

pub use chart::{BoxRegion, FilteredChart};
pub use error::{Error, Result};
pub use graded::GradedSpace;
pub use num_complex::Complex64;
