//! Molecular-communication channel used as a physical reservoir computer.
//!
//! A point transmitter encodes an input sequence into molecule releases,
//! the molecules diffuse to a spherical receiver and bind reversibly to its
//! receptors. The fraction of bound receptors, sampled at `M` offsets inside
//! every symbol, forms the reservoir state; only a linear readout is trained.
//!
//! * [`params`]: parameter records, defaults and validation
//! * [`channel`]: diffusion kernel and release superposition
//! * [`receptor`]: mean-field occupancy, encoding, virtual nodes
//! * [`particle`]: Brownian particle counterpart of channel and receiver
//! * [`tasks`]: Mackey–Glass and NARMA10 generators, dataset assembly
//! * [`readout`]: ridge readout, NRMSE, moving-average filter
//! * [`ipc`]: information processing capacity
//! * [`harness`]: experiments, sweeps and heatmaps

pub mod channel;
pub mod harness;
pub mod error;
pub mod ipc;
pub mod params;
pub mod particle;
pub mod readout;
pub mod receptor;
pub mod tasks;

pub use error::{Error, Result};
