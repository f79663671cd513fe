//! Deterministic discrete-event world: roster construction, behavior models,
//! the iteration loop (one joint computation per iteration followed by a
//! global reputation update), and metric collection.
//!
//! Identical `(config, seed)` produce identical final state; independent
//! runs can execute in parallel with no shared state.

use std::collections::BTreeSet;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::channel::{
    deliver_forward, deliver_reverse, ChannelLog, ChannelMessage, DeliveryEnv, ForwardResult,
    HopPath, RosterReputations, WorkerState,
};
use crate::computations::{evaluate, ComputationSpec, JointInput, Output, Value};
use crate::config::{ConfigError, Mode, SimConfig};
use crate::crypto::{CipherConfig, KeyPair};
use crate::identity::{assign_manager_indices, derive_pseudonym, Pseudonym, RealId};
use crate::metrics::{MetricRow, RunMetrics};
use crate::mpc::{plan_session, prune_computation, run_session};
use crate::reputation::{compute_global, initial_reputation, normalize, LocalOpinionLedger};

/// Uniform pre-trust seeded into every off-diagonal ledger entry: peers are
/// mildly endorsed a priori, which is what grants newcomers the initial
/// reputation `1/n`.
pub const TRUST_PRIOR: u32 = 1;
/// Saturation cap on accumulated opinions: a few confirming interactions max
/// out an entry, so no single relationship dominates a trust row.
pub const OPINION_CAP: u32 = 3;

/// One peer of the roster: identity material, goodness (probability of
/// behaving honestly, fixed for a run) and the frozen accountability-manager
/// assignment.
#[derive(Debug, Clone)]
pub struct PeerRecord {
    pub real_id: RealId,
    pub nonce: Vec<u8>,
    pub pseudonym: Pseudonym,
    pub keypair: KeyPair,
    pub goodness: f64,
    /// Roster indices of this peer's accountability managers.
    pub managers: Vec<usize>,
}

/// The whole simulated network.
#[derive(Debug)]
pub struct World {
    pub config: SimConfig,
    pub cipher: CipherConfig,
    pub rng: ChaCha12Rng,
    pub peers: Vec<PeerRecord>,
    pub ledger: LocalOpinionLedger,
    /// Public global reputation vector; always sums to 1.
    pub global: Vec<f64>,
    /// Iteration index, starting at 0.
    pub iteration: u32,
    /// Band-query view of `global`; rebuilt after every reputation update.
    pub roster: RosterReputations,
    /// Pseudonyms in roster order.
    pub names: Vec<Pseudonym>,
    pub worker_states: Vec<WorkerState>,
    pub log: ChannelLog,
    pub metrics: RunMetrics,
    /// Outputs posted publicly when `publish_output` is set: `(worker, out)`.
    pub bulletin: Vec<(usize, Output)>,
    /// Scripted deviants that skip the first-forwardee reward commitment.
    pub non_rewarders: BTreeSet<usize>,
    msg_counter: u64,
    /// The joint computation each iteration runs.
    pub joint_computation: ComputationSpec,
}

impl World {
    pub fn next_msg_id(&mut self) -> u64 {
        let id = self.msg_counter;
        self.msg_counter += 1;
        id
    }

    /// Turns on trace and audit capture for subsequent deliveries.
    pub fn enable_capture(&mut self) {
        self.log = ChannelLog::capturing();
    }

    /// Routes one forward delivery through this world's channel.
    pub(crate) fn forward(
        &mut self,
        envelope: ChannelMessage,
        origin: usize,
        dest: usize,
        msg_id: u64,
    ) -> ForwardResult {
        let World { rng, log, roster, names, config, iteration, .. } = self;
        let env = DeliveryEnv {
            mode: config.mode,
            p_forward: config.p_forward,
            delta: config.delta,
            max_hops: config.max_hops,
            roster,
            names,
            iteration: *iteration,
        };
        deliver_forward(&env, envelope, origin, dest, msg_id, rng, log)
    }

    /// Routes a reply back along a forward path; returns the first forwardee.
    pub(crate) fn reverse(&mut self, path: &HopPath, dest: usize) -> Option<usize> {
        let World { log, roster, names, config, iteration, .. } = self;
        let env = DeliveryEnv {
            mode: config.mode,
            p_forward: config.p_forward,
            delta: config.delta,
            max_hops: config.max_hops,
            roster,
            names,
            iteration: *iteration,
        };
        deliver_reverse(&env, path, dest, log)
    }
}

/// A malicious worker returns a random value from the computation's output
/// domain instead of the true output: a uniform rank, a random tally whose
/// counts sum to the ballot count, or random differences within the input
/// span.
pub fn malicious_worker_output(
    spec: &ComputationSpec,
    inputs: &JointInput,
    rng: &mut impl Rng,
) -> Output {
    let m = inputs.len().max(1) as u32;
    match spec {
        ComputationSpec::RankOfInput { .. } | ComputationSpec::Custom { .. } => {
            Output::Rank(rng.random_range(1..=m))
        }
        ComputationSpec::NeighborDiffs { .. } => {
            let ints: Vec<i64> = inputs
                .values()
                .iter()
                .filter_map(|v| match v {
                    Value::Int(i) => Some(*i),
                    Value::Label(_) => None,
                })
                .collect();
            let span = match (ints.iter().min(), ints.iter().max()) {
                (Some(lo), Some(hi)) if hi > lo => hi - lo,
                _ => 100,
            };
            Output::Diffs {
                to_richer: Some(rng.random_range(0..=span)),
                to_poorer: Some(rng.random_range(0..=span)),
            }
        }
        ComputationSpec::VoteTally { options } => {
            let mut counts: std::collections::BTreeMap<String, u32> =
                options.iter().map(|o| (o.clone(), 0)).collect();
            if options.is_empty() {
                return Output::Tally(counts);
            }
            for _ in 0..m {
                let pick = rng.random_range(0..options.len());
                *counts.get_mut(&options[pick]).unwrap() += 1;
            }
            Output::Tally(counts)
        }
    }
}

/// Builds a world from a validated config: pseudonyms and key pairs for
/// every peer, `floor(malicious_frac * n)` peers at goodness 0 (placed by
/// the seeded generator), accountability managers frozen for the run, and
/// all reputations at `1/n`.
pub fn build_world(config: &SimConfig) -> Result<World, ConfigError> {
    config.validate()?;
    let n = config.peers;
    let mut rng = ChaCha12Rng::seed_from_u64(config.seed);
    let mut peers: Vec<PeerRecord> = (0..n)
        .map(|i| {
            let real_id = RealId::new(format!("peer-{i:04}"));
            let mut nonce = vec![0u8; 16];
            rng.fill_bytes(&mut nonce);
            let pseudonym = derive_pseudonym(&real_id, &nonce);
            let keypair = KeyPair::generate(&mut rng);
            PeerRecord { real_id, nonce, pseudonym, keypair, goodness: 1.0, managers: Vec::new() }
        })
        .collect();
    let malicious_count = (config.malicious_frac * n as f64).floor() as usize;
    for idx in rand::seq::index::sample(&mut rng, n, malicious_count).iter() {
        peers[idx].goodness = 0.0;
    }
    let names: Vec<Pseudonym> = peers.iter().map(|p| p.pseudonym.clone()).collect();
    for peer in &mut peers {
        peer.managers = assign_manager_indices(&peer.pseudonym, &names, config.managers)
            .expect("validated config keeps M below n");
    }
    let global = vec![initial_reputation(n); n];
    Ok(World {
        cipher: CipherConfig::default(),
        rng,
        ledger: LocalOpinionLedger::with_pre_trust(n, TRUST_PRIOR, OPINION_CAP),
        roster: RosterReputations::new(global.clone()),
        global,
        iteration: 0,
        names,
        worker_states: vec![WorkerState::default(); n],
        log: ChannelLog::default(),
        metrics: RunMetrics {
            final_reputation: vec![initial_reputation(n); n],
            goodness: peers.iter().map(|p| p.goodness).collect(),
            ..RunMetrics::default()
        },
        bulletin: Vec::new(),
        non_rewarders: BTreeSet::new(),
        msg_counter: 0,
        peers,
        joint_computation: ComputationSpec::RankOfInput { own: None },
        config: config.clone(),
    })
}

/// Draws the per-client private inputs for one iteration: distinct integers
/// for the ranking computations, uniform ballots for the vote tally.
fn draw_inputs(world: &mut World, m: usize) -> Vec<Value> {
    match &world.joint_computation {
        ComputationSpec::VoteTally { options } => {
            let options = options.clone();
            (0..m)
                .map(|_| Value::Label(options[world.rng.random_range(0..options.len())].clone()))
                .collect()
        }
        _ => {
            let mut seen = BTreeSet::new();
            let mut inputs = Vec::with_capacity(m);
            while inputs.len() < m {
                let v = world.rng.random_range(0..1_000_000i64);
                if seen.insert(v) {
                    inputs.push(Value::Int(v));
                }
            }
            inputs
        }
    }
}

/// What one iteration did: the session plan and its outcome, for callers
/// that inspect dispatch records or slates.
#[derive(Debug, Clone)]
pub struct IterationReport {
    pub plan: crate::mpc::SessionPlan,
    pub outcome: crate::mpc::SessionOutcome,
}

/// Runs one iteration: sample `m` distinct clients, run the session in the
/// configured mode, record per-client correctness, and (in rational mode)
/// update the global reputation to convergence.
pub fn run_iteration(world: &mut World) -> IterationReport {
    let m = world.config.clients;
    let n = world.config.peers;
    let clients: Vec<usize> =
        rand::seq::index::sample(&mut world.rng, n, m).iter().collect();
    let inputs = draw_inputs(world, m);
    let computation = world.joint_computation.clone();
    let plan = plan_session(world, clients, inputs, computation)
        .expect("validated config yields plannable sessions");
    let reputation_at_request: Vec<f64> =
        plan.clients.iter().map(|&c| world.global[c]).collect();
    let outcome = run_session(world, &plan);

    // Correctness against the direct evaluation of each client's pruned
    // computation on the true inputs.
    let joint = JointInput::new(plan.inputs.clone());
    for (ci, &client) in plan.clients.iter().enumerate() {
        let truth = evaluate(&prune_computation(&plan.computation, &plan.inputs[ci]), &joint).ok();
        let correct = truth.is_some() && outcome.outputs[ci] == truth;
        world.metrics.rows.push(MetricRow {
            iteration: world.iteration,
            client,
            reputation_at_request: reputation_at_request[ci],
            correct,
        });
    }

    let interval = world.config.reputation_interval;
    let update_due = (world.iteration + 1) % interval == 0
        || world.iteration + 1 >= world.config.iterations;
    if world.config.mode == Mode::Rational && update_due {
        let c = normalize(&world.ledger);
        let result = compute_global(&c, &world.global, world.config.epsilon, world.config.max_iter);
        world.global = result.g;
        world.metrics.max_mass_drift = world.metrics.max_mass_drift.max(result.max_mass_drift);
        world.roster = RosterReputations::new(world.global.clone());
    }

    world.iteration += 1;
    world.metrics.iterations_run = world.iteration;
    world.metrics.final_reputation = world.global.clone();
    IterationReport { plan, outcome }
}

/// Runs the configured number of iterations and returns the collected
/// metrics.
pub fn run_simulation(config: &SimConfig) -> Result<RunMetrics, ConfigError> {
    let mut world = build_world(config)?;
    for _ in 0..config.iterations {
        run_iteration(&mut world);
    }
    Ok(world.metrics)
}
