//! Experiment parameterization shared by the simulator and the CLI.

use std::path::PathBuf;
use std::str::FromStr;

#[derive(Debug, Clone, thiserror::Error, PartialEq, Eq)]
pub enum ConfigError {
    #[error("{0}")]
    Constraint(String),
    #[error("unknown mode `{0}` (expected hbc, rational, or baseline)")]
    UnknownMode(String),
}

/// Protocol variant a run executes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Honest-but-curious suite: one worker per client, plain random-hopping
    /// channels, no reputation machinery.
    Hbc,
    /// Full rational suite: redundancy, reputation-gated channels, rewards,
    /// punishments and receipt audits.
    Rational,
    /// Comparator: keeps worker redundancy but disables every reputation
    /// read and write; workers and forwardees are chosen uniformly and
    /// nobody refuses or discards.
    Baseline,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Hbc => "hbc",
            Mode::Rational => "rational",
            Mode::Baseline => "baseline",
        }
    }
}

impl FromStr for Mode {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "hbc" => Ok(Mode::Hbc),
            "rational" => Ok(Mode::Rational),
            "baseline" => Ok(Mode::Baseline),
            other => Err(ConfigError::UnknownMode(other.to_string())),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Full parameterization of a simulation run. Defaults reproduce the
/// reference experiment: 100 peers, 10 clients, 3 redundant workers, 250
/// iterations, flexibility 0.002, 20% malicious peers.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    /// Number of peers in the network.
    pub peers: usize,
    /// Clients per joint computation; must be at least 4.
    pub clients: usize,
    /// Redundant workers per client.
    pub redundancy: usize,
    /// Joint-computation iterations to run.
    pub iterations: u32,
    /// Reputation flexibility: how far below its own reputation a peer still
    /// accepts senders.
    pub delta: f64,
    /// Probability that a forwardee hops instead of submitting.
    pub p_forward: f64,
    /// Accountability managers per peer.
    pub managers: usize,
    /// Upper bound of the secret per-client worker candidate pool size.
    pub kappa_max: usize,
    /// Convergence threshold of the global reputation iteration.
    pub epsilon: f64,
    /// Step budget of the global reputation iteration.
    pub max_iter: u32,
    /// How many joint computations pass between global reputation updates;
    /// a final update always runs at the end of the run.
    pub reputation_interval: u32,
    /// Fraction of peers built with goodness 0.
    pub malicious_frac: f64,
    pub mode: Mode,
    /// Workers publish outputs on a bulletin instead of returning them over
    /// the reverse channel.
    pub publish_output: bool,
    pub seed: u64,
    /// Safeguard: a holder reaching this many hops submits directly.
    pub max_hops: u32,
    /// Where the CLI writes CSV output.
    pub output_dir: PathBuf,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            peers: 100,
            clients: 10,
            redundancy: 3,
            iterations: 250,
            delta: 0.002,
            p_forward: 0.67,
            managers: 3,
            kappa_max: 10,
            epsilon: 1e-6,
            max_iter: 1000,
            reputation_interval: 75,
            malicious_frac: 0.2,
            mode: Mode::Rational,
            publish_output: false,
            seed: 1,
            max_hops: 64,
            output_dir: PathBuf::from("out"),
        }
    }
}

impl SimConfig {
    /// Checks every structural constraint, reporting the first violation by
    /// name.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |msg: &str| Err(ConfigError::Constraint(msg.to_string()));
        if self.clients < 4 {
            return fail("m must be ≥ 4");
        }
        if self.peers < self.clients {
            return fail("n must be ≥ m");
        }
        if self.redundancy < 1 {
            return fail("r must be ≥ 1");
        }
        if self.kappa_max <= self.redundancy {
            return fail("kappa_max must be > r");
        }
        if self.peers <= self.kappa_max {
            return fail("n must be > kappa_max");
        }
        if self.delta < 0.0 {
            return fail("delta must be ≥ 0");
        }
        if !(0.0..=1.0).contains(&self.p_forward) {
            return fail("p must be in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.malicious_frac) {
            return fail("malicious_frac must be in [0, 1]");
        }
        if self.managers >= self.peers {
            return fail("M must be < n");
        }
        if self.epsilon <= 0.0 {
            return fail("epsilon must be > 0");
        }
        if self.reputation_interval == 0 {
            return fail("reputation_interval must be ≥ 1");
        }
        if self.max_hops == 0 {
            return fail("max_hops must be ≥ 1");
        }
        Ok(())
    }
}
