//! Link-level simulator for the LTE-V (Rel-14) sidelink.
//!
//! The crate is organised bottom-up:
//!
//! - [`grid`]: subframe geometry, resource-element mapping and DMRS sequences.
//! - [`coding`]: CRC, convolutional code, rate matching, scrambling,
//!   constellation mapping and the MCS table.
//! - [`phy_tx`] / [`phy_rx`]: the PSCCH/PSSCH transmit chain and the buffered
//!   whole-subframe receiver.
//! - [`channel`]: fading, AWGN and hardware impairments.
//! - [`link`]: one transmitter/receiver pair driven subframe by subframe.
//! - [`mac_sps`]: random, pre-configured and sensing-based semi-persistent
//!   resource selection for many vehicles.
//! - [`evaluator`]: decode-record caching and offline BLER statistics.
//! - [`harness`]: configuration files, CSV schemas, manifests and the traffic
//!   line protocol.

pub mod channel;
pub mod coding;
pub mod error;
pub mod evaluator;
pub mod grid;
pub mod harness;
pub mod link;
pub mod mac_sps;
pub mod phy_rx;
pub mod phy_tx;

pub use error::{Error, Result};
pub use num_complex::Complex64;
