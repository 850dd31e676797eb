//! Label-free evaluation of abductive hypothesis sets.
//!
//! Hypotheses are programs. Each is applied to a fixed sample space of
//! unlabeled inputs, and the resulting prediction sets are scored for
//! consistency with observations, generalizability, novelty and diversity.

pub mod curriculum;
pub mod executor;
pub mod ingest;
pub mod metrics;
pub mod preferences;
pub mod protocol;
pub mod report;
pub mod samplespace;
pub mod simulation;
pub mod values;
