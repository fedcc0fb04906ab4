//! Parallel trainer for generalized linear models based on stochastic dual
//! coordinate ascent (SDCA).
//!
//! The solver runs one of four engines over the same coordinate-update core:
//!
//! * `sequential` — single-threaded exact SDCA.
//! * `wild` — asynchronous threads sharing one model vector, updates applied
//!   without mutual exclusion (races may lose updates).
//! * `static` — examples partitioned across threads once at startup, each
//!   thread works on a private replica of the shared vector that is reduced
//!   at every epoch boundary.
//! * `dynamic` — like `static`, but buckets of examples are re-shuffled and
//!   re-assigned to threads every epoch via an atomic claim cursor, with an
//!   extra static partitioning level across topology groups (NUMA-style).
//!
//! Supporting machinery: cache-line-sized bucketing of examples
//! ([`partition`]), machine topology probing with portable fallbacks
//! ([`topology`]), dataset loading/generation ([`data`]), and per-epoch
//! convergence reporting ([`metrics`]).

pub mod data;
pub mod metrics;
pub mod objective;
pub mod partition;
pub mod solver;
pub mod topology;

mod error;

pub use error::Error;

pub type Result<T> = std::result::Result<T, Error>;
