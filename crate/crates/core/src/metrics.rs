//! Per-iteration outcome records and the aggregates the figures are built
//! from.

/// One client request: who asked, at what reputation, and whether the
/// majority output matched the true computation.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub iteration: u32,
    pub client: usize,
    pub reputation_at_request: f64,
    pub correct: bool,
}

/// Aggregation window over the run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Window {
    All,
    /// Only the last `k` iterations of the run.
    LastK(u32),
}

/// Per-peer request/correct counts over a window.
#[derive(Debug, Clone, PartialEq)]
pub struct PeerRate {
    pub peer: usize,
    pub requests: u32,
    pub correct: u32,
}

impl PeerRate {
    pub fn rate(&self) -> f64 {
        self.correct as f64 / self.requests as f64
    }
}

/// Full outcome record of one simulation run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunMetrics {
    pub rows: Vec<MetricRow>,
    /// Global reputation after the final iteration, one entry per peer.
    pub final_reputation: Vec<f64>,
    /// Goodness each peer was built with.
    pub goodness: Vec<f64>,
    pub iterations_run: u32,
    /// Largest reputation-mass drift observed over any global update step.
    pub max_mass_drift: f64,
    /// Channel events counted over the whole run.
    pub discarded_messages: u64,
    /// Direct submissions forced by an empty forwardee candidate set;
    /// each one degrades the originator's anonymity.
    pub degraded_submissions: u64,
    pub worker_refusals: u64,
    pub worker_timeouts: u64,
}

impl RunMetrics {
    /// First iteration index inside the window, given the run length.
    fn window_start(&self, window: Window) -> u32 {
        match window {
            Window::All => 0,
            Window::LastK(k) => self.iterations_run.saturating_sub(k),
        }
    }

    /// Request/correct counts per peer over the window, ascending by peer
    /// index. Peers with no requests in the window are omitted.
    pub fn peer_rates(&self, window: Window) -> Vec<PeerRate> {
        let start = self.window_start(window);
        let n = self.final_reputation.len();
        let mut requests = vec![0u32; n];
        let mut correct = vec![0u32; n];
        for row in &self.rows {
            if row.iteration < start {
                continue;
            }
            requests[row.client] += 1;
            if row.correct {
                correct[row.client] += 1;
            }
        }
        (0..n)
            .filter(|&p| requests[p] > 0)
            .map(|p| PeerRate { peer: p, requests: requests[p], correct: correct[p] })
            .collect()
    }

    /// Pooled correct rate over a set of peers within a window: total
    /// correct divided by total requests. `None` when nobody in the set made
    /// a request.
    pub fn pooled_rate(&self, peers: &[usize], window: Window) -> Option<f64> {
        let rates = self.peer_rates(window);
        let mut requests = 0u64;
        let mut correct = 0u64;
        for r in rates {
            if peers.contains(&r.peer) {
                requests += u64::from(r.requests);
                correct += u64::from(r.correct);
            }
        }
        (requests > 0).then(|| correct as f64 / requests as f64)
    }

    /// Number of distinct peers that acted as a client at least once.
    pub fn client_coverage(&self) -> usize {
        let mut seen = vec![false; self.final_reputation.len()];
        for row in &self.rows {
            seen[row.client] = true;
        }
        seen.iter().filter(|&&s| s).count()
    }
}
