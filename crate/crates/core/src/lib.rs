//! Protocol engine and deterministic peer-to-peer simulator for co-utile,
//! circuit-free multiparty computation.
//!
//! Peers outsource joint computations to redundant, anonymously reached
//! workers instead of compiling the computation into a circuit. Anonymity
//! comes from random-hopping forward/reverse channels; honesty comes from a
//! decentralized EigenTrust-style reputation that gates who accepts, forwards
//! and computes for whom. The crate provides:
//!
//! * [`identity`]: real identities, pseudonym derivation and proof, and
//!   pseudorandom accountability-manager assignment.
//! * [`crypto`]: the minimal cryptographic contracts the protocols rely on
//!   (probabilistic fixed-length public-key encryption, authenticated
//!   symmetric encryption, signatures), with a simulation-grade backend.
//! * [`computations`]: declarative joint computations (rank of input,
//!   neighbor differences, vote tally) with per-client pruning.
//! * [`reputation`]: the local opinion ledger and the global reputation
//!   fixed point (left principal eigenvector of the normalized trust matrix).
//! * [`channel`]: the anonymous channel state machines, in both the
//!   honest-but-curious and the reputation-gated (rational) variants,
//!   including the first-forwardee reward handshake.
//! * [`mpc`]: session orchestration: pruning, worker selection, redundant
//!   dispatch, majority voting, reward settlement and the receipt audit.
//! * [`simnet`]: the deterministic discrete-event world and experiment loop.
//! * [`config`] / [`metrics`]: experiment parameterization and outcome
//!   records consumed by the command-line front end.
//!
//! Everything is deterministic given `(config, seed)`; independent runs can
//! execute in parallel.

pub mod channel;
pub mod computations;
pub mod config;
pub mod crypto;
pub mod identity;
pub mod metrics;
pub mod mpc;
pub mod reputation;
pub mod simnet;

pub use config::{Mode, SimConfig};
pub use metrics::{RunMetrics, Window};
pub use simnet::{build_world, run_simulation, World};
