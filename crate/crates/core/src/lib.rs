//! Coherence protection of a central spin by planar buffer-spin networks.
//!
//! A central spin-1/2 couples through XX exchange to `N` buffer spins, each
//! damped by its own local bath, while the buffer–buffer couplings form a
//! planar graph. The crate enumerates those graphs, integrates the Lindblad
//! dynamics of the cluster and measures how long the central spin keeps its
//! coherence.

pub mod dynamics;
pub mod experiments;
pub mod metrics;
pub mod model;
pub mod qstate;
pub mod topology;

pub use dynamics::{evolve, Evolution, Frame, IntegratorConfig, Liouvillian, TimeSeries};
pub use metrics::{MetricName, Observable};
pub use model::{BufferInit, ClusterSpec, NoiseChannel, NoiseSpec, PairConvention};
pub use qstate::{ComplexMatrix, DensityMatrix};
pub use topology::{BufferGraph, Extreme};
