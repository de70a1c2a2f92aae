//! Joint source precoder and relay matrix design for a two-user MIMO
//! amplify-and-forward relay network in which both sources also reach the
//! destination over direct links.
//!
//! The crate is organized bottom-up:
//!
//! * [`model`]: configuration, fading channels, effective two-phase model.
//! * [`metrics`]: MMSE-SIC MSE matrices, capacities, sum metrics.
//! * [`precoder`]: eigenmode source precoders with water-filling loads.
//! * [`relay`]: relay matrix structure and its power allocations.
//! * [`optimizer`]: the nested alternating design and the baseline schemes.
//! * [`harness`]: Monte Carlo campaigns and CSV output.

pub mod error;
pub mod harness;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod optimizer;
pub mod precoder;
pub mod relay;

pub use error::{Error, Result};
pub use model::{generate_channels, ChannelSet, EffectiveModel, Mode, NetworkConfig, Source};

pub use optimizer::{baseline_design, jds_optimize, Design, Scheme};
