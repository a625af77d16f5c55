//! Subspace-parameterized attention (SUPRA) neural operator.
//!
//! Functions sampled on a grid or mesh are projected onto an orthonormal
//! subspace basis, attention runs between the resulting coordinate vectors,
//! and the output is reconstructed back onto the samples.

pub mod basis;
pub mod bench;
pub mod error;
pub mod meshfem;
pub mod model;
pub mod numcore;
pub mod pdedata;
pub mod scalar;
pub mod supra;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor64 = numcore::Tensor<f64>;
pub type Tensor32 = numcore::Tensor<f32>;
pub type Model64 = model::SupraOperator<f64>;
pub type Model32 = model::SupraOperator<f32>;
pub type Basis64 = basis::Basis<f64>;
pub type Basis32 = basis::Basis<f32>;

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "SUPRA_THREADS";

/// Size the global worker pool from `SUPRA_THREADS` when it is set. Returns
/// the requested count, or `None` when the variable is absent.
pub fn configure_threads() -> Result<Option<usize>> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(None);
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| error::invalid("SUPRA_THREADS", format!("expected a positive integer, got {raw:?}")))?;
    // A pool that is already initialized keeps its size.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(Some(n))
}
