//! Joint-computation orchestration: pruning, worker selection, redundant
//! dispatch over the anonymous channel, majority voting, reward settlement
//! and the accountability-manager receipt audit.
//!
//! A session runs in phases. All clients first broadcast their inputs to
//! every peer in the same phase, so no client can wait for the others'
//! inputs and free-ride. Each client then dispatches its pruned computation
//! and return key to its secretly selected workers, outputs travel back over
//! the reverse channel, the majority value is taken per client, and workers
//! are rewarded or punished against it. Finally each client's accountability
//! managers audit the first-forwardee reward receipts.

use std::collections::BTreeMap;

use rand::{Rng, RngCore};

use crate::channel::{
    build_message, c_worker_receive, hbc_worker_receive, input_plaintext, receipt_is_valid,
    run_reward_handshake, worker_deadline, ChannelMessage, CompReply, ForwardOutcome, HopPath,
    RefusalPolicy, ReplyKind, RewardReceipt, RosterReputations, TraceEventKind, TraceRecord,
    WorkerOutcome,
};
use crate::computations::{decode_output, CompPayload, ComputationSpec, JointInput, Output, Value};
use crate::config::Mode;
use crate::crypto::{sym_decrypt, SymKey};
use crate::reputation::LocalOpinionLedger;
use crate::simnet::World;

#[derive(Debug, Clone, thiserror::Error, PartialEq, Eq)]
pub enum SessionError {
    #[error("a session needs at least 4 clients, got {0}")]
    TooFewClients(usize),
    #[error("clients and inputs must pair up")]
    ArityMismatch,
    #[error("clients must be distinct")]
    DuplicateClient,
    #[error("worker pool needs kappa ({kappa}) > r ({r}) and a roster above kappa, got {roster}")]
    PoolTooSmall { kappa: usize, r: usize, roster: usize },
}

/// A client's secret slate of redundant workers and what they returned.
#[derive(Debug, Clone)]
pub struct WorkerSlate {
    pub client: usize,
    pub workers: Vec<usize>,
    pub returned: Vec<Option<Output>>,
}

/// Everything fixed before a session executes. Built by [`plan_session`];
/// tests may construct or override fields directly, for instance to force
/// adversarial worker placements.
#[derive(Debug, Clone)]
pub struct SessionPlan {
    pub clients: Vec<usize>,
    /// `inputs[i]` is the private input of `clients[i]`.
    pub inputs: Vec<Value>,
    pub computation: ComputationSpec,
    /// Secret per-client candidate-pool sizes.
    pub kappas: Vec<usize>,
    /// Per-client symmetric return keys.
    pub keys: Vec<SymKey>,
    /// Per-client input nonces.
    pub nonces: Vec<[u8; 16]>,
    /// Per-client worker slates.
    pub slates: Vec<Vec<usize>>,
}

/// One computation dispatch as the client saw it, kept for the receipt
/// audit.
#[derive(Debug, Clone)]
pub struct DispatchRecord {
    pub worker: usize,
    pub first_forwardee: Option<usize>,
    /// Whether an encrypted output came back over the reverse channel; only
    /// such dispatches oblige the client to hold a reward receipt.
    pub completed_reverse: bool,
    pub receipt: Option<RewardReceipt>,
}

impl DispatchRecord {
    /// A dispatch obliges a receipt when its reverse path completed through
    /// at least one forwardee.
    pub fn reward_obligated(&self) -> bool {
        self.completed_reverse && self.first_forwardee.is_some()
    }
}

/// Result of one executed session.
#[derive(Debug, Clone)]
pub struct SessionOutcome {
    /// Majority output per client, in `clients` order.
    pub outputs: Vec<Option<Output>>,
    pub slates: Vec<WorkerSlate>,
    /// Dispatch records per client, in `clients` order.
    pub dispatches: Vec<Vec<DispatchRecord>>,
}

/// Projects the joint computation onto one client: kinds that must know
/// which input is the client's get it embedded; the vote tally is identical
/// for every client.
pub fn prune_computation(c: &ComputationSpec, own_input: &Value) -> ComputationSpec {
    match c {
        ComputationSpec::RankOfInput { .. } => {
            ComputationSpec::RankOfInput { own: Some(own_input.clone()) }
        }
        ComputationSpec::NeighborDiffs { .. } => {
            ComputationSpec::NeighborDiffs { own: Some(own_input.clone()) }
        }
        ComputationSpec::VoteTally { options } => {
            ComputationSpec::VoteTally { options: options.clone() }
        }
        ComputationSpec::Custom { name, needs_own, params, own } => ComputationSpec::Custom {
            name: name.clone(),
            needs_own: *needs_own,
            own: if *needs_own { Some(own_input.clone()) } else { own.clone() },
            params: params.clone(),
        },
    }
}

/// Secretly selects `r` workers: the `kappa` peers closest in reputation to
/// the client (ties broken by roster order), sampled uniformly without
/// replacement. The client itself is never a candidate.
pub fn select_workers(
    client: usize,
    client_rep: f64,
    kappa: usize,
    r: usize,
    roster: &RosterReputations,
    rng: &mut impl Rng,
) -> Result<Vec<usize>, SessionError> {
    let n = roster.len();
    if kappa <= r || n < kappa + 1 {
        return Err(SessionError::PoolTooSmall { kappa, r, roster: n });
    }
    let mut candidates: Vec<usize> = (0..n).filter(|&i| i != client).collect();
    // Ties in reputation distance are broken uniformly at random (shuffle
    // before the stable sort), so equally distant peers are equally likely
    // candidates; the whole selection replays deterministically per seed.
    rand::seq::SliceRandom::shuffle(candidates.as_mut_slice(), rng);
    candidates.sort_by(|&a, &b| {
        let da = (roster.rep(a) - client_rep).abs();
        let db = (roster.rep(b) - client_rep).abs();
        da.partial_cmp(&db).unwrap()
    });
    candidates.truncate(kappa);
    let picks = rand::seq::index::sample(rng, kappa, r);
    Ok(picks.iter().map(|i| candidates[i]).collect())
}

/// Uniform worker selection used by the honest-but-curious and baseline
/// modes: `r` distinct peers, excluding the client.
pub fn select_workers_uniform(client: usize, r: usize, n: usize, rng: &mut impl Rng) -> Vec<usize> {
    rand::seq::index::sample(rng, n - 1, r)
        .iter()
        .map(|i| if i >= client { i + 1 } else { i })
        .collect()
}

/// The most frequent non-nil value, counted by canonical encoding; ties go
/// to the smallest encoding, and all-nil yields nil. Stable under any
/// permutation of the list.
pub fn majority_output(outputs: &[Option<Output>]) -> Option<Output> {
    let mut counts: BTreeMap<Vec<u8>, (u32, &Output)> = BTreeMap::new();
    for out in outputs.iter().flatten() {
        counts.entry(out.canonical_bytes()).and_modify(|(c, _)| *c += 1).or_insert((1, out));
    }
    counts
        .into_iter()
        .max_by(|(ka, (ca, _)), (kb, (cb, _))| ca.cmp(cb).then(kb.cmp(ka)))
        .map(|(_, (_, out))| out.clone())
}

/// Rewards every worker whose value matched a non-nil majority; punishes the
/// rest, including workers that returned nothing.
pub fn settle_rewards(
    slate: &WorkerSlate,
    majority: Option<&Output>,
    ledger: &mut LocalOpinionLedger,
) {
    for (worker, returned) in slate.workers.iter().zip(slate.returned.iter()) {
        let rewarded = matches!((majority, returned), (Some(m), Some(r)) if m == r);
        if rewarded {
            let _ = ledger.record_reward(slate.client, *worker);
        } else {
            let _ = ledger.record_punishment(slate.client, *worker);
        }
    }
}

/// Accountability-manager audit of a client's reward receipts: any missing
/// or invalid receipt for an obligated dispatch makes every manager wipe its
/// opinion of the client to zero.
pub fn audit_receipts(world: &mut World, client: usize, records: &[DispatchRecord]) {
    let World { peers, ledger, .. } = world;
    let client_name = &peers[client].pseudonym;
    let client_pk = &peers[client].keypair.public;
    let mut all_valid = true;
    for record in records {
        if !record.reward_obligated() {
            continue;
        }
        let forwardee = record.first_forwardee.expect("obligated implies a forwardee");
        let valid = record.receipt.as_ref().is_some_and(|receipt| {
            receipt_is_valid(
                receipt,
                client_name,
                client_pk,
                &peers[forwardee].pseudonym,
                &peers[forwardee].keypair.public,
            )
        });
        if !valid {
            all_valid = false;
            break;
        }
    }
    if !all_valid {
        for &am in &peers[client].managers {
            let _ = ledger.zero_out(am, client);
        }
    }
}

/// Builds the per-session secrets and worker slates for a set of clients.
/// Honest-but-curious sessions use a single uniformly chosen worker per
/// client; rational sessions draw `r` workers from the secret
/// closest-reputation pool; baseline sessions draw `r` uniformly.
pub fn plan_session(
    world: &mut World,
    clients: Vec<usize>,
    inputs: Vec<Value>,
    computation: ComputationSpec,
) -> Result<SessionPlan, SessionError> {
    let m = clients.len();
    if m < 4 {
        return Err(SessionError::TooFewClients(m));
    }
    if inputs.len() != m {
        return Err(SessionError::ArityMismatch);
    }
    let mut distinct = clients.clone();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() != m {
        return Err(SessionError::DuplicateClient);
    }
    let r = match world.config.mode {
        Mode::Hbc => 1,
        Mode::Rational | Mode::Baseline => world.config.redundancy,
    };
    let mut kappas = Vec::with_capacity(m);
    let mut keys = Vec::with_capacity(m);
    let mut nonces = Vec::with_capacity(m);
    let mut slates = Vec::with_capacity(m);
    for &client in &clients {
        let kappa = world.rng.random_range(r + 1..=world.config.kappa_max.max(r + 1));
        let slate = match world.config.mode {
            Mode::Rational => select_workers(
                client,
                world.global[client],
                kappa,
                r,
                &world.roster,
                &mut world.rng,
            )?,
            Mode::Hbc | Mode::Baseline => {
                select_workers_uniform(client, r, world.config.peers, &mut world.rng)
            }
        };
        kappas.push(kappa);
        keys.push(SymKey::generate(&mut world.rng));
        let mut nonce = [0u8; 16];
        world.rng.fill_bytes(&mut nonce);
        nonces.push(nonce);
        slates.push(slate);
    }
    Ok(SessionPlan { clients, inputs, computation, kappas, keys, nonces, slates })
}

/// Executes one full session against the world: input broadcast, redundant
/// computation dispatch, reverse delivery with the first-forwardee reward
/// handshake, majority vote, reward settlement and the receipt audit.
///
/// With `publish_output` set, workers post plaintext outputs to the bulletin
/// instead of using the reverse channel and every client takes the majority
/// of the bulletin; no rewards flow in that mode.
pub fn run_session(world: &mut World, plan: &SessionPlan) -> SessionOutcome {
    let m = plan.clients.len();
    let n = world.config.peers;
    let rational = world.config.mode == Mode::Rational;
    let publish = world.config.publish_output;
    world.bulletin.clear();

    // Input broadcast: every client sends its input to every peer in the
    // same phase. A client's own copy is appended locally.
    for (ci, &client) in plan.clients.iter().enumerate() {
        let plaintext = input_plaintext(&plan.inputs[ci], plan.nonces[ci]);
        for dest in 0..n {
            if dest == client {
                world.worker_states[client].buffer.push_unique(
                    plan.inputs[ci].clone(),
                    plan.nonces[ci],
                    m,
                );
                continue;
            }
            let msg_id = world.next_msg_id();
            let envelope = envelope_to(world, client, dest, &plaintext, CompPayload::Nil);
            let result = world.forward(envelope, client, dest, msg_id);
            match result.outcome {
                ForwardOutcome::Submitted { submitter, degraded } => {
                    if degraded {
                        world.metrics.degraded_submissions += 1;
                    }
                    let delivered = result.delivered.expect("submitted implies delivered");
                    receive_at_worker(world, dest, &delivered, m, submitter, msg_id);
                }
                ForwardOutcome::Discarded { .. } => {
                    world.metrics.discarded_messages += 1;
                }
            }
        }
    }

    // Computation dispatch with immediate evaluation and reverse delivery.
    let mut slates: Vec<WorkerSlate> = plan
        .clients
        .iter()
        .zip(plan.slates.iter())
        .map(|(&client, workers)| WorkerSlate {
            client,
            workers: workers.clone(),
            returned: vec![None; workers.len()],
        })
        .collect();
    let mut dispatches: Vec<Vec<DispatchRecord>> = vec![Vec::new(); m];
    // Dispatches whose worker is still waiting for inputs.
    let mut pending: BTreeMap<u64, (usize, usize, HopPath)> = BTreeMap::new();

    for (ci, &client) in plan.clients.iter().enumerate() {
        let pruned = prune_computation(&plan.computation, &plan.inputs[ci]);
        for (k, &worker) in plan.slates[ci].iter().enumerate() {
            let msg_id = world.next_msg_id();
            let envelope = envelope_to(
                world,
                client,
                worker,
                &plan.keys[ci].0,
                CompPayload::Spec(pruned.clone()),
            );
            let result = world.forward(envelope, client, worker, msg_id);
            match result.outcome {
                ForwardOutcome::Submitted { submitter, degraded } => {
                    if degraded {
                        world.metrics.degraded_submissions += 1;
                    }
                    let delivered = result.delivered.expect("submitted implies delivered");
                    let outcome = receive_at_worker(world, worker, &delivered, m, submitter, msg_id);
                    match outcome {
                        WorkerOutcome::Reply(reply) => {
                            if publish {
                                publish_reply(world, plan, ci, worker, &reply);
                                dispatches[ci].push(DispatchRecord {
                                    worker,
                                    first_forwardee: result.path.first_forwardee(),
                                    completed_reverse: false,
                                    receipt: None,
                                });
                            } else {
                                let record = finish_dispatch(
                                    world,
                                    plan,
                                    ci,
                                    worker,
                                    &result.path,
                                    &reply,
                                    rational,
                                    &mut slates[ci].returned[k],
                                );
                                dispatches[ci].push(record);
                            }
                        }
                        WorkerOutcome::Pending => {
                            pending.insert(msg_id, (ci, k, result.path));
                        }
                        _ => {
                            dispatches[ci].push(DispatchRecord {
                                worker,
                                first_forwardee: result.path.first_forwardee(),
                                completed_reverse: false,
                                receipt: None,
                            });
                        }
                    }
                }
                ForwardOutcome::Discarded { .. } => {
                    world.metrics.discarded_messages += 1;
                    dispatches[ci].push(DispatchRecord {
                        worker,
                        first_forwardee: None,
                        completed_reverse: false,
                        receipt: None,
                    });
                }
            }
        }
    }

    // Iteration deadline: workers still blocked return the nil output.
    if !pending.is_empty() {
        for worker in 0..n {
            if world.worker_states[worker].pending_count() == 0 {
                continue;
            }
            let replies = worker_deadline(&mut world.worker_states[worker], &world.cipher);
            for reply in replies {
                world.metrics.worker_timeouts += 1;
                if let Some((ci, k, path)) = pending.remove(&reply.msg_id) {
                    if publish {
                        dispatches[ci].push(DispatchRecord {
                            worker,
                            first_forwardee: path.first_forwardee(),
                            completed_reverse: false,
                            receipt: None,
                        });
                    } else {
                        let mut slot = None;
                        let record = finish_dispatch(
                            world, plan, ci, worker, &path, &reply, rational, &mut slot,
                        );
                        slates[ci].returned[k] = slot;
                        dispatches[ci].push(record);
                    }
                }
            }
        }
    }

    // Per-client result: majority of the slate, or of the bulletin when
    // outputs are published.
    let outputs: Vec<Option<Output>> = if publish {
        let published: Vec<Option<Output>> =
            world.bulletin.iter().map(|(_, out)| Some(out.clone())).collect();
        let common = majority_output(&published);
        vec![common; m]
    } else {
        slates.iter().map(|slate| majority_output(&slate.returned)).collect()
    };

    // Settlement and the receipt audit only exist in the rational suite.
    if rational {
        for (ci, slate) in slates.iter().enumerate() {
            settle_rewards(slate, outputs[ci].as_ref(), &mut world.ledger);
        }
        for (ci, &client) in plan.clients.iter().enumerate() {
            audit_receipts(world, client, &dispatches[ci]);
        }
    }

    for state in &mut world.worker_states {
        state.end_session();
    }

    SessionOutcome { outputs, slates, dispatches }
}

fn envelope_to(
    world: &mut World,
    origin: usize,
    dest: usize,
    msg_plain: &[u8],
    payload: CompPayload,
) -> ChannelMessage {
    let World { rng, peers, names, cipher, .. } = world;
    build_message(
        cipher,
        &peers[dest].keypair.public,
        names[dest].clone(),
        names[origin].clone(),
        msg_plain,
        &payload,
        rng,
    )
}

/// Hands a delivered envelope to the destination's state machine, evaluating
/// with the peer's goodness-driven honesty, and traces worker events.
fn receive_at_worker(
    world: &mut World,
    worker: usize,
    envelope: &ChannelMessage,
    m_clients: usize,
    submitter: usize,
    msg_id: u64,
) -> WorkerOutcome {
    let rational = world.config.mode == Mode::Rational;
    let policy = RefusalPolicy {
        submitter_rep: world.roster.rep(submitter),
        own_rep: world.roster.rep(worker),
        delta: world.config.delta,
    };
    let goodness = world.peers[worker].goodness;
    let World { rng, worker_states, cipher, peers, .. } = world;
    let keypair = &peers[worker].keypair;
    let mut eval = |spec: &ComputationSpec, inputs: &JointInput| -> Option<Output> {
        let honest = goodness >= 1.0 || (goodness > 0.0 && rng.random_bool(goodness));
        if honest {
            crate::computations::evaluate(spec, inputs).ok()
        } else {
            Some(crate::simnet::malicious_worker_output(spec, inputs, rng))
        }
    };
    let state = &mut worker_states[worker];
    let outcome = if rational {
        c_worker_receive(state, cipher, keypair, envelope, m_clients, policy, msg_id, &mut eval)
    } else {
        hbc_worker_receive(state, cipher, keypair, envelope, m_clients, msg_id, &mut eval)
    };
    if let WorkerOutcome::Reply(reply) = &outcome {
        if reply.kind == ReplyKind::Refused {
            world.metrics.worker_refusals += 1;
        }
        if let Some(records) = &mut world.log.records {
            let event = match reply.kind {
                ReplyKind::Refused => TraceEventKind::WorkerRefuse,
                _ => TraceEventKind::WorkerCompute,
            };
            let name = world.names[worker].clone();
            records.push(TraceRecord {
                iter: world.iteration,
                event,
                carrier: name.clone(),
                dest: name,
                hop_index: 0,
            });
        }
    }
    outcome
}

/// Publishing worker: posts the plaintext output on the bulletin. The
/// decryption key here is simulator shorthand for the worker publishing the
/// value it just computed.
fn publish_reply(world: &mut World, plan: &SessionPlan, ci: usize, worker: usize, reply: &CompReply) {
    let out = sym_decrypt(&world.cipher, &plan.keys[ci], &reply.body)
        .ok()
        .and_then(|plain| decode_output(&plain).ok())
        .flatten();
    if let Some(out) = out {
        world.bulletin.push((worker, out));
    }
}

/// Reverse-delivers a worker reply to its client, decrypts and records the
/// output, and runs the first-forwardee reward handshake when due.
#[allow(clippy::too_many_arguments)]
fn finish_dispatch(
    world: &mut World,
    plan: &SessionPlan,
    ci: usize,
    worker: usize,
    path: &HopPath,
    reply: &CompReply,
    rational: bool,
    returned: &mut Option<Output>,
) -> DispatchRecord {
    let first_forwardee = world.reverse(path, worker);
    let client = plan.clients[ci];
    *returned = sym_decrypt(&world.cipher, &plan.keys[ci], &reply.body)
        .ok()
        .and_then(|plain| decode_output(&plain).ok())
        .flatten();
    let mut record =
        DispatchRecord { worker, first_forwardee, completed_reverse: true, receipt: None };
    if rational {
        if let Some(forwardee) = first_forwardee {
            let commits = !world.non_rewarders.contains(&client);
            let World { ledger, peers, names, .. } = world;
            record.receipt = run_reward_handshake(
                ledger,
                client,
                &peers[client].keypair,
                &names[client],
                forwardee,
                &peers[forwardee].keypair,
                &names[forwardee],
                commits,
            );
        }
    }
    record
}
