//! Max-min fair physical-layer multicast beamforming for massive MIMO.
//!
//! The crate is organized bottom-up:
//!
//! - [`hermitian`]: dense Hermitian linear algebra, PSD projection and the
//!   SNR measurement map.
//! - [`channel`]: network geometry, pathloss with correlated shadowing,
//!   local-scattering spatial correlation and correlated Rayleigh channels.
//! - [`qos`]: nested ADMM solver for the penalized relaxed QoS problem.
//! - [`mmf`]: bisection over the common SNR target plus successive
//!   elimination down to a rank-one beamformer.
//! - [`harness`]: seeded Monte Carlo campaigns, CDF tables and the
//!   brute-force oracle for tiny instances.

pub mod channel;
pub mod error;
pub mod harness;
pub mod hermitian;
pub mod mmf;
pub mod qos;

pub use error::{Error, Result};
