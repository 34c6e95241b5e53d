//! Training-data-free restoration of hyperspectral image cubes.
//!
//! A randomly initialized convolutional encoder-decoder is optimized so that
//! its output, pushed through a task-specific degradation, matches a single
//! corrupted observation. The network structure itself supplies the image
//! prior; no training data is involved.
//!
//! [`engine::restore`] drives the loop: an hourglass network from
//! [`net`] (built on the [`autodiff`] tape) maps a fixed noise input to a
//! candidate cube, an [`objectives`] energy compares it to the observation,
//! and [`adam`] updates the weights. [`metrics`] scores results against a
//! reference and [`corruption`] fabricates reproducible degraded inputs.

pub mod adam;
pub mod array;
pub mod autodiff;
pub mod corruption;
pub mod cube;
pub mod engine;
pub mod error;
pub mod metrics;
pub mod net;
pub mod objectives;
pub mod rng;

pub use adam::AdamState;
pub use array::NdArray;
pub use autodiff::{Gradients, NodeId, Tape, UpsampleMode};
pub use cube::{HyperCube, Mask};
pub use engine::{restore, RunHistory, StopPolicy, Task, TaskConfig};
pub use error::{Error, Result};
pub use metrics::MetricReport;
pub use net::{ArchSpec, Network, Variant};
