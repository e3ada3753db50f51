//! RIS-assisted backhaul traffic redistribution.
//!
//! When a base station loses its fiber backhaul, its traffic can be pushed
//! over the air to surviving neighbors with spare fronthaul capacity, helped
//! by a reconfigurable intelligent surface (RIS). This crate contains the
//! whole pipeline:
//!
//! * [`numerics`]: complex linear algebra, seeded RNG streams, projections;
//! * [`scenario`]: hexagonal topology, pathloss, Rician/Rayleigh channels,
//!   distance-biased traffic profiles;
//! * [`model`]: effective channels through the RIS, achievable rates,
//!   redistributed-traffic objective and its concave surrogate;
//! * [`optimizer`]: alternating precoder/phase ascent with base-station
//!   subset selection (enumeration and greedy strategies);
//! * [`harness`]: seeded Monte Carlo sweeps with deterministic CSV/JSON
//!   export;
//! * [`config`]: the JSON run configuration shared with the CLI;
//! * [`validate`]: fast self-checks wired to `risbr validate`.
//!
//! The `parallel` feature (on by default) runs subset enumeration and Monte
//! Carlo trials on a rayon pool; without it everything runs sequentially and
//! produces identical bytes.

pub mod config;
pub mod error;
pub mod harness;
pub mod model;
pub mod numerics;
pub mod optimizer;
pub mod par;
pub mod scenario;
pub mod validate;

pub use error::{Error, Result};

/// Cap the worker pool used for enumeration and Monte Carlo trials.
///
/// `None` leaves the default (all cores). Calling this more than once is
/// harmless; only the first call can take effect because the pool is global.
/// Without the `parallel` feature this is a no-op.
pub fn configure_threads(threads: Option<usize>) {
    #[cfg(feature = "parallel")]
    if let Some(n) = threads {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global();
    }
    #[cfg(not(feature = "parallel"))]
    let _ = threads;
}
