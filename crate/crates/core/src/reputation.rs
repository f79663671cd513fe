//! Local opinion ledger and the decentralized global reputation computation.
//!
//! Peers accumulate local opinions: +1 for a rewarded interaction, -1
//! (floored at zero) for a punished one. Rows are normalized into a
//! row-stochastic trust matrix and the global reputation is the left
//! principal eigenvector of that matrix, approximated by synchronous power
//! iteration. The distributed choreography (each accountability manager
//! holding its pupil's values and exchanging partial products) is executed
//! logically by the simulator; the numbers are identical to the centralized
//! iteration implemented here.

#[derive(Debug, Clone, thiserror::Error, PartialEq, Eq)]
pub enum ReputationError {
    #[error("peer {0} cannot rate itself")]
    SelfOpinion(usize),
}

/// Accumulated local opinions: entry `(i, j)` is peer i's opinion count of
/// peer j. The diagonal is structurally zero; self-opinions are rejected.
///
/// A ledger can optionally carry uniform pre-trust (every off-diagonal entry
/// seeded with a small count, so newcomers are mildly endorsed a priori) and
/// a saturation cap on accumulation (opinions max out after a few confirming
/// interactions, which keeps any single relationship from dominating a row).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LocalOpinionLedger {
    n: usize,
    counts: Vec<u32>,
    cap: u32,
}

impl LocalOpinionLedger {
    /// An empty ledger with unbounded accumulation.
    pub fn new(n: usize) -> Self {
        Self { n, counts: vec![0; n * n], cap: u32::MAX }
    }

    /// A ledger seeded with `pre_trust` on every off-diagonal entry, with
    /// rewards saturating at `cap`.
    pub fn with_pre_trust(n: usize, pre_trust: u32, cap: u32) -> Self {
        assert!(cap >= pre_trust, "cap must not undercut the pre-trust seed");
        let mut counts = vec![pre_trust; n * n];
        for i in 0..n {
            counts[i * n + i] = 0;
        }
        Self { n, counts, cap }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, rater: usize, ratee: usize) -> u32 {
        self.counts[rater * self.n + ratee]
    }

    /// Increments the rater's opinion of the ratee by 1, saturating at the
    /// ledger's accumulation cap.
    pub fn record_reward(&mut self, rater: usize, ratee: usize) -> Result<(), ReputationError> {
        if rater == ratee {
            return Err(ReputationError::SelfOpinion(rater));
        }
        let entry = &mut self.counts[rater * self.n + ratee];
        *entry = entry.saturating_add(1).min(self.cap);
        Ok(())
    }

    /// Decrements the rater's opinion of the ratee by 1, floored at 0.
    pub fn record_punishment(&mut self, rater: usize, ratee: usize) -> Result<(), ReputationError> {
        if rater == ratee {
            return Err(ReputationError::SelfOpinion(rater));
        }
        let entry = &mut self.counts[rater * self.n + ratee];
        *entry = entry.saturating_sub(1);
        Ok(())
    }

    /// Wipes the rater's opinion of the ratee to 0. Used by accountability
    /// managers auditing reward receipts, where the punishment is a hard
    /// reset rather than a decrement.
    pub fn zero_out(&mut self, rater: usize, ratee: usize) -> Result<(), ReputationError> {
        if rater == ratee {
            return Err(ReputationError::SelfOpinion(rater));
        }
        self.counts[rater * self.n + ratee] = 0;
        Ok(())
    }
}

/// Row-stochastic trust matrix: every row sums to 1 and entries lie in
/// `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedTrustMatrix {
    n: usize,
    c: Vec<f64>,
}

impl NormalizedTrustMatrix {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.c[i * self.n + j]
    }

    /// Builds a matrix directly from rows; rows must already be stochastic.
    /// Intended for tests and oracles.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Self {
        let n = rows.len();
        let mut c = Vec::with_capacity(n * n);
        for row in &rows {
            assert_eq!(row.len(), n, "matrix must be square");
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-9, "rows must sum to 1, got {sum}");
            c.extend_from_slice(row);
        }
        Self { n, c }
    }
}

/// Normalizes each ledger row by its sum. Rows that carry no opinions fall
/// back to the uniform row `1/n`, preserving row-stochasticity.
pub fn normalize(ledger: &LocalOpinionLedger) -> NormalizedTrustMatrix {
    let n = ledger.n;
    let mut c = vec![0.0; n * n];
    for i in 0..n {
        let row = &ledger.counts[i * n..(i + 1) * n];
        // The diagonal is structurally zero, so it never contributes.
        let sum: u64 = row.iter().map(|&v| v as u64).sum();
        let out = &mut c[i * n..(i + 1) * n];
        if sum == 0 {
            out.fill(1.0 / n as f64);
        } else {
            for (o, &v) in out.iter_mut().zip(row.iter()) {
                *o = v as f64 / sum as f64;
            }
        }
    }
    NormalizedTrustMatrix { n, c }
}

/// Result of the global reputation fixed-point computation.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalReputation {
    /// The reputation vector; sums to 1 when the start vector did.
    pub g: Vec<f64>,
    /// False when `max_iter` was exhausted before every component moved less
    /// than epsilon.
    pub converged: bool,
    /// Power-iteration steps performed.
    pub iterations: u32,
    /// Largest absolute drift of the vector sum over any single step;
    /// row-stochasticity makes this rounding noise only.
    pub max_mass_drift: f64,
}

/// Synchronous power iteration of the left eigenproblem `g <- c^T g`,
/// stopping when every component moves less than `epsilon` or after
/// `max_iter` steps. The fixed point approximates the left principal
/// eigenvector of `c`.
pub fn compute_global(
    c: &NormalizedTrustMatrix,
    g0: &[f64],
    epsilon: f64,
    max_iter: u32,
) -> GlobalReputation {
    let n = c.n;
    assert_eq!(g0.len(), n, "start vector must match matrix size");
    let mut g = g0.to_vec();
    let mut next = vec![0.0; n];
    let mut iterations = 0;
    let mut converged = false;
    let mut max_mass_drift: f64 = 0.0;
    while iterations < max_iter {
        next.fill(0.0);
        for (j, &gj) in g.iter().enumerate() {
            if gj == 0.0 {
                continue;
            }
            let row = &c.c[j * n..(j + 1) * n];
            for (nd, &cjd) in next.iter_mut().zip(row.iter()) {
                *nd += cjd * gj;
            }
        }
        iterations += 1;
        let delta = g
            .iter()
            .zip(next.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0_f64, f64::max);
        let mass_before: f64 = g.iter().sum();
        let mass_after: f64 = next.iter().sum();
        max_mass_drift = max_mass_drift.max((mass_after - mass_before).abs());
        std::mem::swap(&mut g, &mut next);
        if delta < epsilon {
            converged = true;
            break;
        }
    }
    GlobalReputation { g, converged, iterations, max_mass_drift }
}

/// Reputation granted to a peer entering a roster of `n` peers, and the
/// uniform vector every simulation starts from.
pub fn initial_reputation(n: usize) -> f64 {
    1.0 / n as f64
}

/// CSV dump of the reputation vector: `peer_index,goodness,global_reputation`.
pub fn dump_csv(global: &[f64], goodness: &[f64]) -> String {
    let mut out = String::from("peer_index,goodness,global_reputation\n");
    for (i, (g, good)) in global.iter().zip(goodness.iter()).enumerate() {
        out.push_str(&format!("{i},{good},{g}\n"));
    }
    out
}
