//! Analytics for free-floating car-sharing fleets reconstructed from polled
//! availability snapshots.

// `!(x > 0.0)` is used on purpose so NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod citystats;
pub mod geo;
pub mod grid;
pub mod ingest;
pub mod metrics;
pub mod pipeline;
pub mod service_areas;
pub mod synth;
pub mod trips;
pub mod tsclust;

/// Version tag written into every persisted artefact.
pub const SCHEMA_VERSION: u32 = 1;
