//! Annihilating branching random walks on ℤ^d.
//!
//! * [`offspring`]: offspring laws, their moments and Fourier transforms.
//! * [`engine`]: count-level event-driven simulation of the annihilating,
//!   monochromatic and conservative (merge) processes.
//! * [`label_engine`]: the labelled construction with per-label clocks,
//!   used for exact couplings across initial configurations.
//! * [`analytics`]: deterministic spectral predictions.
//! * [`harness`]: replicate orchestration and statistical checks.

pub mod analytics;
pub mod engine;
pub mod fenwick;
pub mod harness;
pub mod label_engine;
pub mod offspring;
pub mod rng;
pub mod scalar;
pub mod site;
pub mod stats;

pub use offspring::{parse_law, Mode, OffspringLaw};
pub use scalar::Real;
pub use site::SiteKey;

/// Double-precision p_z table.
pub type PzTableF64 = analytics::PzTable<f64>;
/// Single-precision p_z table.
pub type PzTableF32 = analytics::PzTable<f32>;
/// Double-precision Gaussian parameters.
pub type CltParamsF64 = analytics::CltParams<f64>;
/// Double-precision spectral-gap scan.
pub type GapScanF64 = offspring::GapScan<f64>;
