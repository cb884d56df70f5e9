//! Focal-plane depth imaging by temporal ghost imaging.
//!
//! A randomly modulated pulse train floods a scene; each camera pixel
//! integrates its reflected pulse only until the shutter closes, so the energy
//! it records is the running integral of the pulse up to a depth-dependent
//! time. Correlating those energies against the recorded reference pulses
//! recovers that time, and with it the range, pixel by pixel.
//!
//! - [`signal`]: reference pulses and their running integrals.
//! - [`scene`]: synthetic scenes and the shutter-gated forward model.
//! - [`reconstruct`]: correlation profiles, argmax estimation, range.
//! - [`experiments`]: end-to-end runs, RMSE, DSNR and shot-count sweeps.
//! - [`formats`]: on-disk encodings for every artifact.

pub mod error;
pub mod experiments;
pub mod formats;
pub mod grid;
pub mod reconstruct;
mod rng;
pub mod scene;
pub mod signal;

pub use error::{Error, Result};
pub use grid::Grid;

/// Runs `f` on a dedicated pool of `workers` threads. All compute in this
/// crate produces identical output for any worker count.
pub fn with_workers<R, F>(workers: usize, f: F) -> Result<R>
where
    R: Send,
    F: FnOnce() -> R + Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::ThreadPool(e.to_string()))?;
    Ok(pool.install(f))
}
