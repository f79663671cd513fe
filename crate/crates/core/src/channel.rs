//! Anonymous channel state machines.
//!
//! A forward channel delivers `(msg, ecomp)` envelopes from an originator to
//! a destination through a chain of forwardees: the originator always hops,
//! every later holder hops with probability `p` and submits directly
//! otherwise. The reverse channel backtracks the forward path to return the
//! encrypted output without anyone learning who the originator is. The
//! honest-but-curious variant hops uniformly; the rational variant picks
//! forwardees by reputation band (`Select`), lets receivers discard senders
//! too far below them in reputation, lets workers refuse computations from
//! low-reputation submitters, and rewards the first forwardee of a non-nil
//! computation through a signed commitment/receipt handshake.
//!
//! Peer decision functions never see the hop path or the originator: the
//! envelope carries only the destination and the current carrier, and the
//! full path lives in simulator-side bookkeeping used exclusively for
//! reverse routing and anonymity audits.

use rand::{Rng, RngCore};

use crate::computations::{
    decode_payload, encode_payload, CompPayload, ComputationSpec, JointInput, Output, Value,
};
use crate::config::Mode;
use crate::crypto::{
    pke_decrypt, pke_encrypt_rng, sign, sym_encrypt, verify, Ciphertext, CipherConfig, KeyPair,
    PublicKey, Signature, SymKey, NONCE_LEN,
};
use crate::identity::Pseudonym;
use crate::reputation::LocalOpinionLedger;

/// The envelope peers see: two fixed-length ciphertexts, the destination,
/// and the peer currently holding the message. There is no originator field;
/// a carrier learns only the previous hop.
#[derive(Debug, Clone)]
pub struct ChannelMessage {
    /// `PK_dest(I || nonce)` for inputs, `PK_dest(K)` for computations.
    pub msg: Ciphertext,
    /// `PK_dest(payload)`: the nil marker, a refusal marker, or a pruned
    /// computation spec. Indistinguishable from the outside.
    pub ecomp: Ciphertext,
    pub dest: Pseudonym,
    pub carrier: Pseudonym,
}

/// Simulator-private forward path: `hops[0]` is the originator, the last
/// entry is the peer that submitted to the destination. Never handed to peer
/// decision logic; consumed only by reverse routing and anonymity audits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HopPath {
    hops: Vec<usize>,
}

impl HopPath {
    pub fn originator(&self) -> usize {
        self.hops[0]
    }

    pub fn submitter(&self) -> usize {
        *self.hops.last().unwrap()
    }

    /// First forwardee, if the originator did not submit directly.
    pub fn first_forwardee(&self) -> Option<usize> {
        self.hops.get(1).copied()
    }

    /// Number of forwardees the message passed through.
    pub fn forwardee_count(&self) -> usize {
        self.hops.len() - 1
    }

    pub fn hops(&self) -> &[usize] {
        &self.hops
    }
}

// ---------------------------------------------------------------------------
// Roster reputation view
// ---------------------------------------------------------------------------

/// Public reputations of the roster plus a sorted index for band queries.
/// Rebuilt whenever the global reputation vector changes.
#[derive(Debug, Clone)]
pub struct RosterReputations {
    reps: Vec<f64>,
    /// Ascending by `(reputation, roster index)`.
    sorted: Vec<(f64, usize)>,
}

impl RosterReputations {
    pub fn new(reps: Vec<f64>) -> Self {
        let mut sorted: Vec<(f64, usize)> = reps.iter().copied().enumerate().map(|(i, r)| (r, i)).collect();
        sorted.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
        Self { reps, sorted }
    }

    pub fn uniform(n: usize) -> Self {
        Self::new(vec![crate::reputation::initial_reputation(n); n])
    }

    pub fn len(&self) -> usize {
        self.reps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reps.is_empty()
    }

    pub fn rep(&self, peer: usize) -> f64 {
        self.reps[peer]
    }

    fn band_bounds(&self, lo: f64, hi: f64) -> (usize, usize) {
        let a = self.sorted.partition_point(|&(r, _)| r < lo);
        let b = self.sorted.partition_point(|&(r, _)| r <= hi);
        (a, b)
    }

    /// Uniform pick among peers with reputation in `[lo, hi]`, skipping
    /// `exclude`.
    fn band_pick(&self, lo: f64, hi: f64, exclude: &[usize], rng: &mut impl Rng) -> Option<usize> {
        let (a, b) = self.band_bounds(lo, hi);
        if a >= b {
            return None;
        }
        let slice = &self.sorted[a..b];
        let mut eligible = slice.len();
        for (i, &e) in exclude.iter().enumerate() {
            if exclude[..i].contains(&e) {
                continue;
            }
            let r = self.reps[e];
            if r >= lo && r <= hi {
                eligible -= 1;
            }
        }
        if eligible == 0 {
            return None;
        }
        loop {
            let pick = slice[rng.random_range(0..slice.len())].1;
            if !exclude.contains(&pick) {
                return Some(pick);
            }
        }
    }

    /// The peer with the maximum reputation not exceeding `hi`, skipping
    /// `exclude`; ties broken by the lowest roster index.
    fn max_not_exceeding(&self, hi: f64, exclude: &[usize]) -> Option<usize> {
        let b = self.sorted.partition_point(|&(r, _)| r <= hi);
        let mut i = b;
        while i > 0 {
            i -= 1;
            let (rep, idx) = self.sorted[i];
            if exclude.contains(&idx) {
                continue;
            }
            // Ties on reputation sit adjacent; take the lowest roster index.
            let first_tied = self.sorted[..i].partition_point(|&(r, _)| r < rep);
            for &(_, cand) in &self.sorted[first_tied..=i] {
                if !exclude.contains(&cand) {
                    return Some(cand);
                }
            }
        }
        None
    }
}

// ---------------------------------------------------------------------------
// Forward-step decisions
// ---------------------------------------------------------------------------

/// Decision of a holder in the honest-but-curious forward channel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FwdAction {
    Hop { to: usize },
    Submit,
}

/// One holder step of the honest-but-curious forward channel: the originator
/// always hops, any other holder hops with probability `p`; hop targets are
/// uniform among the peers not in `exclude`.
pub fn hbc_fwd_step(
    is_originator: bool,
    p: f64,
    n_peers: usize,
    exclude: &[usize],
    rng: &mut impl Rng,
) -> FwdAction {
    let p_forward = if is_originator { 1.0 } else { p };
    if !rng.random_bool(p_forward) {
        return FwdAction::Submit;
    }
    loop {
        let to = rng.random_range(0..n_peers);
        if !exclude.contains(&to) {
            return FwdAction::Hop { to };
        }
    }
}

/// Picks the forwardee a rational holder hands the message to.
///
/// When the sender's reputation is at least `dest_rep - delta`, any peer in
/// the band `[dest_rep - delta, sender_rep + delta]` is safe: the worker will
/// not refuse it and it will not discard the sender; the pick is uniform in
/// that band. Otherwise the best the sender can do is the peer of maximum
/// reputation not exceeding `sender_rep + delta`. `None` means no candidate
/// exists and the caller must fall back to direct submission.
pub fn select_forwardee(
    sender_rep: f64,
    dest_rep: f64,
    delta: f64,
    roster: &RosterReputations,
    exclude: &[usize],
    rng: &mut impl Rng,
) -> Option<usize> {
    if sender_rep >= dest_rep - delta {
        roster.band_pick(dest_rep - delta, sender_rep + delta, exclude, rng)
    } else {
        roster.max_not_exceeding(sender_rep + delta, exclude)
    }
}

/// Receiver-side acceptance rule of the rational channel: a forwardee deals
/// with a message only if the sender is not more than `delta` below it in
/// reputation. Holders that follow [`select_forwardee`] never trip this
/// gate; it exists to discard messages from deviating senders.
pub fn c_accepts(sender_rep: f64, receiver_rep: f64, delta: f64) -> bool {
    sender_rep >= receiver_rep - delta
}

/// Decision of a holder (and the chosen forwardee) in the rational forward
/// channel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CFwdAction {
    /// The chosen forwardee accepted the message.
    HopTo { to: usize },
    /// Direct submission to the destination. `degraded` marks the
    /// anonymity-degrading fallback of an originator that found no
    /// forwardee.
    SubmitTo { degraded: bool },
    /// The chosen forwardee discarded the message: the sender's reputation
    /// is more than `delta` below its own.
    Discard { by: usize },
}

/// One holder step of the rational forward channel. The holder hops with
/// probability `p` (the originator always hops) using [`select_forwardee`];
/// the receiving forwardee then accepts only a sender whose reputation is at
/// least its own minus `delta`. Past `max_hops` the holder submits directly,
/// which keeps `p = 1` terminating.
#[allow(clippy::too_many_arguments)]
pub fn c_fwd_step(
    holder: usize,
    is_originator: bool,
    p: f64,
    delta: f64,
    dest: usize,
    roster: &RosterReputations,
    exclude: &[usize],
    hops_so_far: u32,
    max_hops: u32,
    rng: &mut impl Rng,
) -> CFwdAction {
    if hops_so_far >= max_hops {
        return CFwdAction::SubmitTo { degraded: false };
    }
    let p_forward = if is_originator { 1.0 } else { p };
    if !rng.random_bool(p_forward) {
        return CFwdAction::SubmitTo { degraded: false };
    }
    let sender_rep = roster.rep(holder);
    match select_forwardee(sender_rep, roster.rep(dest), delta, roster, exclude, rng) {
        Some(to) => {
            if c_accepts(sender_rep, roster.rep(to), delta) {
                CFwdAction::HopTo { to }
            } else {
                CFwdAction::Discard { by: to }
            }
        }
        None => CFwdAction::SubmitTo { degraded: is_originator },
    }
}

/// Decision of a reverse-channel holder, identified by its position in the
/// forward path: backtrack to the previous hop until the payload reaches the
/// key holder at position 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RevAction {
    Backtrack { to: usize },
    Deliver,
}

pub fn rev_step(holder_pos: usize) -> RevAction {
    if holder_pos == 0 {
        RevAction::Deliver
    } else {
        RevAction::Backtrack { to: holder_pos - 1 }
    }
}

// ---------------------------------------------------------------------------
// Worker state machine
// ---------------------------------------------------------------------------

/// Per-worker list of `(input, nonce)` pairs collected during a session.
/// Nonces are unique within the buffer and the buffer never exceeds the
/// session's client count; it is cleared when the session ends.
#[derive(Debug, Clone, Default)]
pub struct InputBuffer {
    entries: Vec<(Value, [u8; NONCE_LEN])>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PushOutcome {
    Appended,
    DuplicateNonce,
    Full,
}

impl InputBuffer {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn push_unique(&mut self, value: Value, nonce: [u8; NONCE_LEN], cap: usize) -> PushOutcome {
        if self.entries.iter().any(|(_, n)| *n == nonce) {
            return PushOutcome::DuplicateNonce;
        }
        if self.entries.len() >= cap {
            return PushOutcome::Full;
        }
        self.entries.push((value, nonce));
        PushOutcome::Appended
    }

    pub fn joint_input(&self) -> JointInput {
        JointInput::new(self.entries.iter().map(|(v, _)| v.clone()).collect())
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }
}

/// A computation dispatch the worker cannot evaluate yet because inputs are
/// still missing.
#[derive(Debug, Clone)]
struct PendingComp {
    msg_id: u64,
    key: SymKey,
    spec: ComputationSpec,
}

/// Worker-side channel state: the input buffer and the queue of pending
/// computations.
#[derive(Debug, Clone, Default)]
pub struct WorkerState {
    pub buffer: InputBuffer,
    pending: Vec<PendingComp>,
}

impl WorkerState {
    pub fn pending_count(&self) -> usize {
        self.pending.len()
    }

    /// Session teardown: drops the collected inputs and any leftover queue.
    pub fn end_session(&mut self) {
        self.buffer.clear();
        self.pending.clear();
    }
}

/// Why a reply left the worker.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReplyKind {
    Computed,
    Refused,
    TimedOut,
}

/// An encrypted output heading back along the reverse path.
#[derive(Debug, Clone)]
pub struct CompReply {
    pub msg_id: u64,
    /// `E_K(out)`, padded to the session block length.
    pub body: Vec<u8>,
    pub kind: ReplyKind,
}

/// Everything that happened inside the worker on one delivered envelope.
#[derive(Debug, Clone)]
pub enum WorkerOutcome {
    /// A fresh input was appended to the buffer.
    InputStored,
    /// The nonce was already present (or the buffer full); nothing changed.
    InputIgnored,
    /// The envelope failed to decrypt or decode; nothing changed.
    Malformed,
    /// A computation was evaluated (or refused) and a reply is ready.
    Reply(CompReply),
    /// A computation is queued until the buffer holds all inputs.
    Pending,
}

/// Reputation gate a rational worker applies to computation requests.
#[derive(Debug, Clone, Copy)]
pub struct RefusalPolicy {
    pub submitter_rep: f64,
    pub own_rep: f64,
    pub delta: f64,
}

impl RefusalPolicy {
    fn refuses(&self) -> bool {
        self.submitter_rep < self.own_rep - self.delta
    }
}

fn encrypt_reply(cfg: &CipherConfig, key: &SymKey, out: Option<&Output>) -> Vec<u8> {
    sym_encrypt(cfg, key, &crate::computations::encode_output(out))
        .expect("output encoding fits the cipher block")
}

fn evaluate_and_reply(
    cfg: &CipherConfig,
    msg_id: u64,
    key: &SymKey,
    spec: &ComputationSpec,
    buffer: &InputBuffer,
    eval: &mut dyn FnMut(&ComputationSpec, &JointInput) -> Option<Output>,
) -> CompReply {
    let out = eval(spec, &buffer.joint_input());
    CompReply { msg_id, body: encrypt_reply(cfg, key, out.as_ref()), kind: ReplyKind::Computed }
}

/// Core worker receive handler shared by both channel variants.
///
/// Inputs (nil payload) are appended to the buffer if their nonce is fresh.
/// A computation is evaluated as soon as the buffer holds `m_clients`
/// inputs, queued otherwise; a rational worker refuses computations whose
/// direct submitter sits more than `delta` below it in reputation and
/// returns the nil output instead. The refusal gate never applies to input
/// deliveries.
#[allow(clippy::too_many_arguments)]
fn worker_receive(
    state: &mut WorkerState,
    cfg: &CipherConfig,
    keypair: &KeyPair,
    envelope: &ChannelMessage,
    m_clients: usize,
    refusal: Option<RefusalPolicy>,
    msg_id: u64,
    eval: &mut dyn FnMut(&ComputationSpec, &JointInput) -> Option<Output>,
) -> WorkerOutcome {
    let payload_bytes = match pke_decrypt(cfg, keypair.secret(), &envelope.ecomp) {
        Ok(b) => b,
        Err(_) => return WorkerOutcome::Malformed,
    };
    let payload = match decode_payload(&payload_bytes) {
        Ok(p) => p,
        Err(_) => return WorkerOutcome::Malformed,
    };
    match payload {
        CompPayload::Nil => {
            let plain = match pke_decrypt(cfg, keypair.secret(), &envelope.msg) {
                Ok(p) => p,
                Err(_) => return WorkerOutcome::Malformed,
            };
            let (value, rest) = match Value::decode_from(&plain) {
                Ok(v) => v,
                Err(_) => return WorkerOutcome::Malformed,
            };
            let Ok(nonce) = <[u8; NONCE_LEN]>::try_from(rest) else {
                return WorkerOutcome::Malformed;
            };
            match state.buffer.push_unique(value, nonce, m_clients) {
                PushOutcome::Appended => WorkerOutcome::InputStored,
                PushOutcome::DuplicateNonce | PushOutcome::Full => WorkerOutcome::InputIgnored,
            }
        }
        CompPayload::Refuse | CompPayload::Spec(_) => {
            let key_bytes = match pke_decrypt(cfg, keypair.secret(), &envelope.msg) {
                Ok(k) => k,
                Err(_) => return WorkerOutcome::Malformed,
            };
            let Ok(key) = <[u8; 32]>::try_from(key_bytes.as_slice()) else {
                return WorkerOutcome::Malformed;
            };
            let key = SymKey(key);
            let spec = match payload {
                CompPayload::Spec(spec) => spec,
                // A refusal marker carries no computation to run.
                CompPayload::Refuse => {
                    return WorkerOutcome::Reply(CompReply {
                        msg_id,
                        body: encrypt_reply(cfg, &key, None),
                        kind: ReplyKind::Refused,
                    });
                }
                CompPayload::Nil => unreachable!(),
            };
            if refusal.is_some_and(|policy| policy.refuses()) {
                return WorkerOutcome::Reply(CompReply {
                    msg_id,
                    body: encrypt_reply(cfg, &key, None),
                    kind: ReplyKind::Refused,
                });
            }
            if state.buffer.len() >= m_clients {
                WorkerOutcome::Reply(evaluate_and_reply(cfg, msg_id, &key, &spec, &state.buffer, eval))
            } else {
                state.pending.push(PendingComp { msg_id, key, spec });
                WorkerOutcome::Pending
            }
        }
    }
}

/// Honest-but-curious worker receive: no reputation gate.
#[allow(clippy::too_many_arguments)]
pub fn hbc_worker_receive(
    state: &mut WorkerState,
    cfg: &CipherConfig,
    keypair: &KeyPair,
    envelope: &ChannelMessage,
    m_clients: usize,
    msg_id: u64,
    eval: &mut dyn FnMut(&ComputationSpec, &JointInput) -> Option<Output>,
) -> WorkerOutcome {
    worker_receive(state, cfg, keypair, envelope, m_clients, None, msg_id, eval)
}

/// Rational worker receive: refuses computations from submitters more than
/// `delta` below the worker's own reputation. Input deliveries are accepted
/// regardless.
#[allow(clippy::too_many_arguments)]
pub fn c_worker_receive(
    state: &mut WorkerState,
    cfg: &CipherConfig,
    keypair: &KeyPair,
    envelope: &ChannelMessage,
    m_clients: usize,
    policy: RefusalPolicy,
    msg_id: u64,
    eval: &mut dyn FnMut(&ComputationSpec, &JointInput) -> Option<Output>,
) -> WorkerOutcome {
    worker_receive(state, cfg, keypair, envelope, m_clients, Some(policy), msg_id, eval)
}

/// Fires any queued computations whose inputs have since arrived.
pub fn worker_poll(
    state: &mut WorkerState,
    cfg: &CipherConfig,
    m_clients: usize,
    eval: &mut dyn FnMut(&ComputationSpec, &JointInput) -> Option<Output>,
) -> Vec<CompReply> {
    if state.buffer.len() < m_clients {
        return Vec::new();
    }
    let pending = std::mem::take(&mut state.pending);
    pending
        .into_iter()
        .map(|p| evaluate_and_reply(cfg, p.msg_id, &p.key, &p.spec, &state.buffer, eval))
        .collect()
}

/// Session deadline: still-pending computations time out and return the nil
/// output; the buffer and queue are cleared for the next session.
pub fn worker_deadline(state: &mut WorkerState, cfg: &CipherConfig) -> Vec<CompReply> {
    let pending = std::mem::take(&mut state.pending);
    let replies = pending
        .into_iter()
        .map(|p| CompReply {
            msg_id: p.msg_id,
            body: encrypt_reply(cfg, &p.key, None),
            kind: ReplyKind::TimedOut,
        })
        .collect();
    state.buffer.clear();
    replies
}

// ---------------------------------------------------------------------------
// Reward receipts
// ---------------------------------------------------------------------------

/// Receipt a client holds to prove it rewarded the first forwardee: the
/// client's signed commitment and the forwardee's signed acknowledgment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RewardReceipt {
    pub commitment: Signature,
    pub acknowledgment: Signature,
}

/// Message bytes of the client's commitment to rewarding the forwardee.
pub fn reward_commit_message(client: &Pseudonym, forwardee: &Pseudonym) -> Vec<u8> {
    let mut m = b"reward-commit:".to_vec();
    m.extend_from_slice(client.as_bytes());
    m.push(b':');
    m.extend_from_slice(forwardee.as_bytes());
    m
}

/// Message bytes of the forwardee's acknowledgment.
pub fn reward_ack_message(client: &Pseudonym, forwardee: &Pseudonym) -> Vec<u8> {
    let mut m = b"reward-ack:".to_vec();
    m.extend_from_slice(client.as_bytes());
    m.push(b':');
    m.extend_from_slice(forwardee.as_bytes());
    m
}

/// Verifies both halves of a receipt against the named pseudonyms and their
/// registered public keys.
pub fn receipt_is_valid(
    receipt: &RewardReceipt,
    client: &Pseudonym,
    client_pk: &PublicKey,
    forwardee: &Pseudonym,
    forwardee_pk: &PublicKey,
) -> bool {
    receipt.commitment.signer == *client
        && verify(client_pk, &reward_commit_message(client, forwardee), &receipt.commitment)
        && receipt.acknowledgment.signer == *forwardee
        && verify(forwardee_pk, &reward_ack_message(client, forwardee), &receipt.acknowledgment)
}

/// Accountability-manager side of the handshake: records the reward in the
/// pupil's ledger row only when the commitment's signature verifies against
/// the pupil's pseudonym and key.
pub fn am_record_commitment(
    ledger: &mut LocalOpinionLedger,
    client: usize,
    client_pseudonym: &Pseudonym,
    client_pk: &PublicKey,
    forwardee: usize,
    forwardee_pseudonym: &Pseudonym,
    commitment: &Signature,
) -> bool {
    let msg = reward_commit_message(client_pseudonym, forwardee_pseudonym);
    if commitment.signer == *client_pseudonym && verify(client_pk, &msg, commitment) {
        ledger.record_reward(client, forwardee).is_ok()
    } else {
        false
    }
}

/// Runs the first-forwardee reward handshake at the end of a reverse
/// delivery: the client signs a commitment, the forwardee relays it to the
/// client's accountability managers (who mirror the ledger write after
/// verifying it), and the forwardee returns a signed receipt.
///
/// A client that skips the commitment (`client_commits = false`) produces no
/// ledger write and holds no receipt, which the later receipt audit punishes.
#[allow(clippy::too_many_arguments)]
pub fn run_reward_handshake(
    ledger: &mut LocalOpinionLedger,
    client: usize,
    client_keys: &KeyPair,
    client_pseudonym: &Pseudonym,
    forwardee: usize,
    forwardee_keys: &KeyPair,
    forwardee_pseudonym: &Pseudonym,
    client_commits: bool,
) -> Option<RewardReceipt> {
    if !client_commits {
        return None;
    }
    let commitment = sign(
        client_keys,
        client_pseudonym,
        &reward_commit_message(client_pseudonym, forwardee_pseudonym),
    );
    // The ledger row is replicated at the client's managers; one verified
    // write stands for all replicas.
    if !am_record_commitment(
        ledger,
        client,
        client_pseudonym,
        &client_keys.public,
        forwardee,
        forwardee_pseudonym,
        &commitment,
    ) {
        return None;
    }
    let acknowledgment = sign(
        forwardee_keys,
        forwardee_pseudonym,
        &reward_ack_message(client_pseudonym, forwardee_pseudonym),
    );
    Some(RewardReceipt { commitment, acknowledgment })
}

// ---------------------------------------------------------------------------
// Trace and audit records
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceEventKind {
    FwdAccept,
    FwdSubmit,
    FwdDiscard,
    WorkerCompute,
    WorkerRefuse,
    RevPass,
    RevDeliver,
}

impl TraceEventKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            TraceEventKind::FwdAccept => "fwd_accept",
            TraceEventKind::FwdSubmit => "fwd_submit",
            TraceEventKind::FwdDiscard => "fwd_discard",
            TraceEventKind::WorkerCompute => "worker_compute",
            TraceEventKind::WorkerRefuse => "worker_refuse",
            TraceEventKind::RevPass => "rev_pass",
            TraceEventKind::RevDeliver => "rev_deliver",
        }
    }
}

/// One peer-visible channel event. The carrier is the peer performing the
/// visible action; no record carries an originator.
#[derive(Debug, Clone)]
pub struct TraceRecord {
    pub iter: u32,
    pub event: TraceEventKind,
    pub carrier: Pseudonym,
    pub dest: Pseudonym,
    pub hop_index: u32,
}

impl TraceRecord {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.iter,
            self.event.as_str(),
            self.carrier.to_hex(),
            self.dest.to_hex(),
            self.hop_index
        )
    }
}

/// Simulator-side ground truth for one traced message, used by anonymity
/// audits: which peer originated it and which peers carried it.
#[derive(Debug, Clone)]
pub struct MessageAudit {
    pub msg_id: u64,
    pub originator: usize,
    pub dest: usize,
    pub carriers: Vec<usize>,
    pub degraded: bool,
    pub discarded: bool,
}

/// Optional trace/audit capture for a run.
#[derive(Debug, Default)]
pub struct ChannelLog {
    pub records: Option<Vec<TraceRecord>>,
    pub audits: Option<Vec<MessageAudit>>,
}

impl ChannelLog {
    pub fn capturing() -> Self {
        Self { records: Some(Vec::new()), audits: Some(Vec::new()) }
    }

    fn trace(&mut self, make: impl FnOnce() -> TraceRecord) {
        if let Some(records) = &mut self.records {
            records.push(make());
        }
    }
}

// ---------------------------------------------------------------------------
// Delivery drivers
// ---------------------------------------------------------------------------

/// Everything a delivery needs to route one message.
pub struct DeliveryEnv<'a> {
    pub mode: Mode,
    pub p_forward: f64,
    pub delta: f64,
    pub max_hops: u32,
    pub roster: &'a RosterReputations,
    pub names: &'a [Pseudonym],
    pub iteration: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ForwardOutcome {
    Submitted { submitter: usize, degraded: bool },
    Discarded { by: usize },
}

#[derive(Debug)]
pub struct ForwardResult {
    pub outcome: ForwardOutcome,
    pub path: HopPath,
    /// The envelope as the destination received it (carrier = submitter);
    /// `None` when the message was discarded en route.
    pub delivered: Option<ChannelMessage>,
}

/// Drives one forward delivery from `origin` to `dest`, hopping until a
/// holder submits, a forwardee discards, or the hop cap forces submission.
///
/// The originator is excluded from forwardee selection for its own message,
/// so no transit record can ever carry the originator's pseudonym.
pub fn deliver_forward(
    env: &DeliveryEnv<'_>,
    mut envelope: ChannelMessage,
    origin: usize,
    dest: usize,
    msg_id: u64,
    rng: &mut impl Rng,
    log: &mut ChannelLog,
) -> ForwardResult {
    let mut hops = vec![origin];
    let mut carriers = Vec::new();
    let outcome = loop {
        let holder = *hops.last().unwrap();
        let is_originator = hops.len() == 1;
        let hops_so_far = (hops.len() - 1) as u32;
        let exclude = [holder, origin];
        let action = match env.mode {
            Mode::Rational => c_fwd_step(
                holder,
                is_originator,
                env.p_forward,
                env.delta,
                dest,
                env.roster,
                &exclude,
                hops_so_far,
                env.max_hops,
                rng,
            ),
            Mode::Hbc | Mode::Baseline => {
                if hops_so_far >= env.max_hops {
                    CFwdAction::SubmitTo { degraded: false }
                } else {
                    match hbc_fwd_step(is_originator, env.p_forward, env.roster.len(), &exclude, rng)
                    {
                        FwdAction::Hop { to } => CFwdAction::HopTo { to },
                        FwdAction::Submit => CFwdAction::SubmitTo { degraded: false },
                    }
                }
            }
        };
        match action {
            CFwdAction::HopTo { to } => {
                hops.push(to);
                carriers.push(to);
                envelope.carrier = env.names[to].clone();
                let hop_index = (hops.len() - 1) as u32;
                log.trace(|| TraceRecord {
                    iter: env.iteration,
                    event: TraceEventKind::FwdAccept,
                    carrier: env.names[to].clone(),
                    dest: envelope.dest.clone(),
                    hop_index,
                });
            }
            CFwdAction::SubmitTo { degraded } => {
                envelope.carrier = env.names[holder].clone();
                let hop_index = (hops.len() - 1) as u32;
                log.trace(|| TraceRecord {
                    iter: env.iteration,
                    event: TraceEventKind::FwdSubmit,
                    carrier: env.names[holder].clone(),
                    dest: envelope.dest.clone(),
                    hop_index,
                });
                break ForwardOutcome::Submitted { submitter: holder, degraded };
            }
            CFwdAction::Discard { by } => {
                log.trace(|| TraceRecord {
                    iter: env.iteration,
                    event: TraceEventKind::FwdDiscard,
                    carrier: env.names[by].clone(),
                    dest: envelope.dest.clone(),
                    hop_index: hops.len() as u32,
                });
                break ForwardOutcome::Discarded { by };
            }
        }
    };
    let path = HopPath { hops };
    if let Some(audits) = &mut log.audits {
        audits.push(MessageAudit {
            msg_id,
            originator: origin,
            dest,
            carriers,
            degraded: matches!(outcome, ForwardOutcome::Submitted { degraded: true, .. }),
            discarded: matches!(outcome, ForwardOutcome::Discarded { .. }),
        });
    }
    let delivered = match outcome {
        ForwardOutcome::Submitted { .. } => Some(envelope),
        ForwardOutcome::Discarded { .. } => None,
    };
    ForwardResult { outcome, path, delivered }
}

/// Walks the reply back along the forward path: destination to submitter,
/// then hop by hop to the originator, who holds the key. Returns the first
/// forwardee (the peer owed the reward for a non-nil computation), if any.
pub fn deliver_reverse(
    env: &DeliveryEnv<'_>,
    path: &HopPath,
    dest: usize,
    log: &mut ChannelLog,
) -> Option<usize> {
    let dest_name = env.names[dest].clone();
    // The worker starts the reverse path.
    log.trace(|| TraceRecord {
        iter: env.iteration,
        event: TraceEventKind::RevPass,
        carrier: dest_name.clone(),
        dest: dest_name.clone(),
        hop_index: path.forwardee_count() as u32,
    });
    let mut pos = path.hops().len() - 1;
    loop {
        match rev_step(pos) {
            RevAction::Backtrack { to } => {
                let holder = path.hops()[pos];
                let event =
                    if to == 0 { TraceEventKind::RevDeliver } else { TraceEventKind::RevPass };
                log.trace(|| TraceRecord {
                    iter: env.iteration,
                    event,
                    carrier: env.names[holder].clone(),
                    dest: dest_name.clone(),
                    hop_index: pos as u32,
                });
                pos = to;
            }
            RevAction::Deliver => break,
        }
    }
    path.first_forwardee()
}

/// Builds the peer-visible envelope for a forward call: both halves are
/// encrypted to the destination and padded to the session block length.
pub fn build_message(
    cfg: &CipherConfig,
    dest_pk: &PublicKey,
    dest: Pseudonym,
    carrier: Pseudonym,
    msg_plain: &[u8],
    payload: &CompPayload,
    rng: &mut impl RngCore,
) -> ChannelMessage {
    let msg = pke_encrypt_rng(cfg, dest_pk, msg_plain, rng).expect("message fits the cipher block");
    let ecomp = pke_encrypt_rng(cfg, dest_pk, &encode_payload(payload), rng)
        .expect("payload fits the cipher block");
    ChannelMessage { msg, ecomp, dest, carrier }
}

/// Serializes an input for the forward channel: the value followed by the
/// client's per-session nonce.
pub fn input_plaintext(value: &Value, nonce: [u8; NONCE_LEN]) -> Vec<u8> {
    let mut m = Vec::with_capacity(32);
    value.encode_into(&mut m);
    m.extend_from_slice(&nonce);
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::computations::evaluate;
    use crate::identity::{derive_pseudonym, RealId};
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn rng(seed: u64) -> ChaCha12Rng {
        ChaCha12Rng::seed_from_u64(seed)
    }

    fn names(n: usize) -> Vec<Pseudonym> {
        (0..n)
            .map(|i| derive_pseudonym(&RealId::new(format!("p{i}")), b"n"))
            .collect()
    }

    fn honest_eval() -> impl FnMut(&ComputationSpec, &JointInput) -> Option<Output> {
        |spec: &ComputationSpec, inputs: &JointInput| evaluate(spec, inputs).ok()
    }

    #[test]
    fn originator_always_hops() {
        let mut rng = rng(1);
        for _ in 0..200 {
            let action = hbc_fwd_step(true, 0.0, 10, &[0], &mut rng);
            assert!(matches!(action, FwdAction::Hop { .. }));
        }
    }

    #[test]
    fn zero_p_non_originator_submits() {
        let mut rng = rng(2);
        for _ in 0..200 {
            assert_eq!(hbc_fwd_step(false, 0.0, 10, &[0], &mut rng), FwdAction::Submit);
        }
    }

    #[test]
    fn submit_frequency_matches_binomial_oracle() {
        // p = 0.67: submit probability 0.33, sigma over 1e5 trials ~= 0.0015.
        let mut rng = rng(3);
        let trials = 100_000;
        let submits = (0..trials)
            .filter(|_| matches!(hbc_fwd_step(false, 0.67, 10, &[0], &mut rng), FwdAction::Submit))
            .count();
        let freq = submits as f64 / trials as f64;
        assert!((freq - 0.33).abs() < 0.01, "submit frequency {freq}");
    }

    #[test]
    fn hop_target_excludes_holder_and_origin() {
        let mut rng = rng(4);
        for _ in 0..500 {
            if let FwdAction::Hop { to } = hbc_fwd_step(true, 1.0, 5, &[2, 0], &mut rng) {
                assert!(to != 2 && to != 0);
            }
        }
    }

    fn roster_with(reps: &[f64]) -> RosterReputations {
        RosterReputations::new(reps.to_vec())
    }

    #[test]
    fn select_picks_within_the_band() {
        // Sender 0.011, dest 0.010, delta 0.002: band [0.008, 0.013].
        let roster = roster_with(&[0.011, 0.010, 0.0085, 0.013, 0.0079, 0.0131, 0.009]);
        let mut rng = rng(5);
        let mut seen = std::collections::BTreeSet::new();
        for _ in 0..500 {
            let pick = select_forwardee(0.011, 0.010, 0.002, &roster, &[0], &mut rng).unwrap();
            let rep = roster.rep(pick);
            assert!((0.008..=0.013).contains(&rep), "rep {rep} outside band");
            assert_ne!(pick, 0);
            seen.insert(pick);
        }
        // Everyone inside the band except the excluded sender shows up.
        assert_eq!(seen, [1usize, 2, 3, 6].into_iter().collect());
    }

    #[test]
    fn select_low_sender_takes_max_not_exceeding() {
        // Sender 0.005 < dest 0.010 - delta: pick the max rep <= 0.007.
        let roster = roster_with(&[0.005, 0.010, 0.0069, 0.0071, 0.0065, 0.009]);
        let mut rng = rng(6);
        let pick = select_forwardee(0.005, 0.010, 0.002, &roster, &[0], &mut rng).unwrap();
        assert_eq!(pick, 2, "expected the peer at 0.0069");
    }

    #[test]
    fn select_with_empty_band_signals_no_forwardee() {
        let roster = roster_with(&[0.011, 0.02, 0.03, 0.05]);
        let mut rng = rng(7);
        assert_eq!(select_forwardee(0.011, 0.010, 0.002, &roster, &[0], &mut rng), None);
    }

    #[test]
    fn max_not_exceeding_breaks_ties_by_lowest_index() {
        let roster = roster_with(&[0.004, 0.007, 0.007, 0.006]);
        assert_eq!(roster.max_not_exceeding(0.0071, &[0]), Some(1));
        assert_eq!(roster.max_not_exceeding(0.0071, &[0, 1]), Some(2));
    }

    #[test]
    fn c_fwd_accepts_sender_within_delta() {
        // Receiver rep 0.0125, sender 0.012, delta 0.002: accepted.
        let roster = roster_with(&[0.012, 0.0125, 0.012, 0.012]);
        let mut rng = rng(8);
        let action = c_fwd_step(0, true, 0.67, 0.002, 3, &roster, &[0], 0, 64, &mut rng);
        assert!(matches!(action, CFwdAction::HopTo { .. }));
    }

    #[test]
    fn low_sender_falls_back_when_nothing_is_reachable() {
        // Sender 0.006; every other peer sits above sender + delta, so the
        // low-sender rule finds nothing and the originator must submit
        // directly, degrading its anonymity.
        let roster = roster_with(&[0.006, 0.012, 0.0085, 0.012]);
        let mut rng = rng(9);
        let action = c_fwd_step(0, true, 1.0, 0.002, 3, &roster, &[0], 0, 64, &mut rng);
        assert_eq!(action, CFwdAction::SubmitTo { degraded: true });
    }

    #[test]
    fn low_sender_ladder_candidate_accepts_at_the_boundary() {
        // sender 0.004, dest 0.012: the low branch picks the max rep not
        // exceeding 0.006; that peer accepts because 0.004 >= 0.006 - 0.002.
        let roster = roster_with(&[0.004, 0.006, 0.010, 0.012]);
        let mut rng = rng(10);
        let action = c_fwd_step(0, true, 1.0, 0.002, 3, &roster, &[0], 0, 64, &mut rng);
        assert_eq!(action, CFwdAction::HopTo { to: 1 });
    }

    #[test]
    fn acceptance_rule_matches_the_delta_gate() {
        // Sender 0.012 vs receiver 0.0125: accepted (0.012 >= 0.0105).
        assert!(c_accepts(0.012, 0.0125, 0.002));
        // Sender 0.006 vs receiver 0.012: discarded (0.006 < 0.010).
        assert!(!c_accepts(0.006, 0.012, 0.002));
        // Boundary: exactly delta below is still accepted.
        assert!(c_accepts(0.010, 0.012, 0.002));
    }

    #[test]
    fn buffer_caps_at_the_client_count_and_dedups() {
        let mut buffer = InputBuffer::default();
        for i in 0..4u8 {
            assert_eq!(
                buffer.push_unique(Value::Int(i64::from(i)), [i; NONCE_LEN], 4),
                PushOutcome::Appended
            );
        }
        assert_eq!(
            buffer.push_unique(Value::Int(0), [0; NONCE_LEN], 4),
            PushOutcome::DuplicateNonce
        );
        assert_eq!(
            buffer.push_unique(Value::Int(99), [9; NONCE_LEN], 4),
            PushOutcome::Full
        );
        assert_eq!(buffer.len(), 4);
    }

    #[test]
    fn hop_cap_forces_submission_under_p_one() {
        let roster = RosterReputations::uniform(8);
        let mut rng = rng(11);
        let names = names(8);
        let env = DeliveryEnv {
            mode: Mode::Rational,
            p_forward: 1.0,
            delta: 0.002,
            max_hops: 16,
            roster: &roster,
            names: &names,
            iteration: 0,
        };
        let cfg = CipherConfig::default();
        let kp = KeyPair::generate(&mut rng);
        let envelope = build_message(
            &cfg,
            &kp.public,
            names[3].clone(),
            names[0].clone(),
            b"x",
            &CompPayload::Nil,
            &mut rng,
        );
        let mut log = ChannelLog::default();
        let result = deliver_forward(&env, envelope, 0, 3, 0, &mut rng, &mut log);
        assert!(matches!(result.outcome, ForwardOutcome::Submitted { .. }));
        assert_eq!(result.path.forwardee_count(), 16);
    }

    fn worker_setup(seed: u64) -> (CipherConfig, KeyPair, Vec<Pseudonym>, ChaCha12Rng) {
        let mut rng = rng(seed);
        let cfg = CipherConfig::default();
        let kp = KeyPair::generate(&mut rng);
        (cfg, kp, names(6), rng)
    }

    fn input_envelope(
        cfg: &CipherConfig,
        kp: &KeyPair,
        names: &[Pseudonym],
        value: i64,
        nonce: [u8; NONCE_LEN],
        rng: &mut ChaCha12Rng,
    ) -> ChannelMessage {
        build_message(
            cfg,
            &kp.public,
            names[0].clone(),
            names[1].clone(),
            &input_plaintext(&Value::Int(value), nonce),
            &CompPayload::Nil,
            rng,
        )
    }

    fn comp_envelope(
        cfg: &CipherConfig,
        kp: &KeyPair,
        names: &[Pseudonym],
        key: &SymKey,
        spec: ComputationSpec,
        rng: &mut ChaCha12Rng,
    ) -> ChannelMessage {
        build_message(
            cfg,
            &kp.public,
            names[0].clone(),
            names[1].clone(),
            &key.0,
            &CompPayload::Spec(spec),
            rng,
        )
    }

    #[test]
    fn worker_computes_once_all_inputs_arrive() {
        let (cfg, kp, names, mut rng) = worker_setup(20);
        let mut state = WorkerState::default();
        let mut eval = honest_eval();
        for (i, v) in [10i64, 30, 20, 40].iter().enumerate() {
            let envelope = input_envelope(&cfg, &kp, &names, *v, [i as u8; NONCE_LEN], &mut rng);
            let outcome =
                hbc_worker_receive(&mut state, &cfg, &kp, &envelope, 4, i as u64, &mut eval);
            assert!(matches!(outcome, WorkerOutcome::InputStored));
        }
        let key = SymKey::generate(&mut rng);
        let spec = ComputationSpec::RankOfInput { own: Some(Value::Int(40)) };
        let envelope = comp_envelope(&cfg, &kp, &names, &key, spec, &mut rng);
        let outcome = hbc_worker_receive(&mut state, &cfg, &kp, &envelope, 4, 9, &mut eval);
        let WorkerOutcome::Reply(reply) = outcome else {
            panic!("expected a reply, got {outcome:?}");
        };
        assert_eq!(reply.kind, ReplyKind::Computed);
        let plain = crate::crypto::sym_decrypt(&cfg, &key, &reply.body).unwrap();
        assert_eq!(crate::computations::decode_output(&plain).unwrap(), Some(Output::Rank(1)));
    }

    #[test]
    fn comp_before_all_inputs_blocks_until_the_mth() {
        let (cfg, kp, names, mut rng) = worker_setup(21);
        let mut state = WorkerState::default();
        let mut eval = honest_eval();
        // Three of four inputs.
        for (i, v) in [10i64, 30, 20].iter().enumerate() {
            let envelope = input_envelope(&cfg, &kp, &names, *v, [i as u8; NONCE_LEN], &mut rng);
            hbc_worker_receive(&mut state, &cfg, &kp, &envelope, 4, i as u64, &mut eval);
        }
        let key = SymKey::generate(&mut rng);
        let spec = ComputationSpec::RankOfInput { own: Some(Value::Int(10)) };
        let envelope = comp_envelope(&cfg, &kp, &names, &key, spec, &mut rng);
        let outcome = hbc_worker_receive(&mut state, &cfg, &kp, &envelope, 4, 8, &mut eval);
        assert!(matches!(outcome, WorkerOutcome::Pending));
        assert!(worker_poll(&mut state, &cfg, 4, &mut eval).is_empty());
        // The fourth input unblocks it.
        let envelope = input_envelope(&cfg, &kp, &names, 40, [9; NONCE_LEN], &mut rng);
        hbc_worker_receive(&mut state, &cfg, &kp, &envelope, 4, 3, &mut eval);
        let replies = worker_poll(&mut state, &cfg, 4, &mut eval);
        assert_eq!(replies.len(), 1);
        let plain = crate::crypto::sym_decrypt(&cfg, &key, &replies[0].body).unwrap();
        assert_eq!(crate::computations::decode_output(&plain).unwrap(), Some(Output::Rank(4)));
    }

    #[test]
    fn duplicate_nonce_leaves_buffer_unchanged() {
        let (cfg, kp, names, mut rng) = worker_setup(22);
        let mut state = WorkerState::default();
        let mut eval = honest_eval();
        let envelope = input_envelope(&cfg, &kp, &names, 10, [7; NONCE_LEN], &mut rng);
        hbc_worker_receive(&mut state, &cfg, &kp, &envelope, 4, 0, &mut eval);
        assert_eq!(state.buffer.len(), 1);
        let resent = input_envelope(&cfg, &kp, &names, 10, [7; NONCE_LEN], &mut rng);
        let outcome = hbc_worker_receive(&mut state, &cfg, &kp, &resent, 4, 1, &mut eval);
        assert!(matches!(outcome, WorkerOutcome::InputIgnored));
        assert_eq!(state.buffer.len(), 1);
    }

    #[test]
    fn rational_worker_refuses_low_submitter_for_computations_only() {
        let (cfg, kp, names, mut rng) = worker_setup(23);
        let mut state = WorkerState::default();
        let mut eval = honest_eval();
        let low_submitter = RefusalPolicy { submitter_rep: 0.006, own_rep: 0.012, delta: 0.002 };

        // Input delivery from a low submitter is still accepted.
        let envelope = input_envelope(&cfg, &kp, &names, 10, [1; NONCE_LEN], &mut rng);
        let outcome =
            c_worker_receive(&mut state, &cfg, &kp, &envelope, 1, low_submitter, 0, &mut eval);
        assert!(matches!(outcome, WorkerOutcome::InputStored));

        // A computation from the same submitter is refused with a nil output.
        let key = SymKey::generate(&mut rng);
        let spec = ComputationSpec::RankOfInput { own: Some(Value::Int(10)) };
        let envelope = comp_envelope(&cfg, &kp, &names, &key, spec, &mut rng);
        let outcome =
            c_worker_receive(&mut state, &cfg, &kp, &envelope, 1, low_submitter, 1, &mut eval);
        let WorkerOutcome::Reply(reply) = outcome else {
            panic!("expected refusal reply");
        };
        assert_eq!(reply.kind, ReplyKind::Refused);
        let plain = crate::crypto::sym_decrypt(&cfg, &key, &reply.body).unwrap();
        assert_eq!(crate::computations::decode_output(&plain).unwrap(), None);
    }

    #[test]
    fn rational_worker_computes_for_acceptable_submitter() {
        let (cfg, kp, names, mut rng) = worker_setup(24);
        let mut state = WorkerState::default();
        let mut eval = honest_eval();
        let policy = RefusalPolicy { submitter_rep: 0.0115, own_rep: 0.012, delta: 0.002 };
        let envelope = input_envelope(&cfg, &kp, &names, 5, [1; NONCE_LEN], &mut rng);
        c_worker_receive(&mut state, &cfg, &kp, &envelope, 1, policy, 0, &mut eval);
        let key = SymKey::generate(&mut rng);
        let spec = ComputationSpec::RankOfInput { own: Some(Value::Int(5)) };
        let envelope = comp_envelope(&cfg, &kp, &names, &key, spec, &mut rng);
        let outcome = c_worker_receive(&mut state, &cfg, &kp, &envelope, 1, policy, 1, &mut eval);
        let WorkerOutcome::Reply(reply) = outcome else {
            panic!("expected computed reply");
        };
        assert_eq!(reply.kind, ReplyKind::Computed);
    }

    #[test]
    fn deadline_times_out_pending_comps_and_clears_the_buffer() {
        let (cfg, kp, names, mut rng) = worker_setup(25);
        let mut state = WorkerState::default();
        let mut eval = honest_eval();
        let envelope = input_envelope(&cfg, &kp, &names, 5, [1; NONCE_LEN], &mut rng);
        hbc_worker_receive(&mut state, &cfg, &kp, &envelope, 4, 0, &mut eval);
        let key = SymKey::generate(&mut rng);
        let spec = ComputationSpec::RankOfInput { own: Some(Value::Int(5)) };
        let envelope = comp_envelope(&cfg, &kp, &names, &key, spec.clone(), &mut rng);
        hbc_worker_receive(&mut state, &cfg, &kp, &envelope, 4, 1, &mut eval);
        assert_eq!(state.pending_count(), 1);
        let replies = worker_deadline(&mut state, &cfg);
        assert_eq!(replies.len(), 1);
        assert_eq!(replies[0].kind, ReplyKind::TimedOut);
        let plain = crate::crypto::sym_decrypt(&cfg, &key, &replies[0].body).unwrap();
        assert_eq!(crate::computations::decode_output(&plain).unwrap(), None);
        assert!(state.buffer.is_empty());
    }

    #[test]
    fn forward_then_reverse_walks_the_path_back() {
        let mut rng = rng(30);
        let n = 12;
        let roster = RosterReputations::uniform(n);
        let names = names(n);
        let env = DeliveryEnv {
            mode: Mode::Hbc,
            p_forward: 0.67,
            delta: 0.0,
            max_hops: 64,
            roster: &roster,
            names: &names,
            iteration: 0,
        };
        let cfg = CipherConfig::default();
        let kp = KeyPair::generate(&mut rng);
        let envelope = build_message(
            &cfg,
            &kp.public,
            names[5].clone(),
            names[0].clone(),
            b"body",
            &CompPayload::Nil,
            &mut rng,
        );
        let mut log = ChannelLog::capturing();
        let result = deliver_forward(&env, envelope, 0, 5, 0, &mut rng, &mut log);
        let ForwardOutcome::Submitted { submitter, .. } = result.outcome else {
            panic!("hbc delivery cannot be discarded");
        };
        assert_eq!(result.path.originator(), 0);
        assert_eq!(result.path.submitter(), submitter);
        assert!(result.path.forwardee_count() >= 1, "minimum one forwardee");

        let first = deliver_reverse(&env, &result.path, 5, &mut log);
        assert_eq!(first, result.path.first_forwardee());
        // The reverse trace ends with a delivery performed by the first
        // forwardee, never by the originator.
        let records = log.records.as_ref().unwrap();
        let last = records.last().unwrap();
        assert_eq!(last.event, TraceEventKind::RevDeliver);
        assert_eq!(last.carrier, names[first.unwrap()]);
    }

    #[test]
    fn tampered_reply_fails_client_decryption() {
        let mut rng = rng(31);
        let cfg = CipherConfig::default();
        let key = SymKey::generate(&mut rng);
        let mut body = sym_encrypt(
            &cfg,
            &key,
            &crate::computations::encode_output(Some(&Output::Rank(3))),
        )
        .unwrap();
        body[20] ^= 0x80;
        assert!(crate::crypto::sym_decrypt(&cfg, &key, &body).is_err());
    }

    #[test]
    fn reward_handshake_produces_valid_receipt_and_ledger_write() {
        let mut rng = rng(32);
        let client_kp = KeyPair::generate(&mut rng);
        let fwd_kp = KeyPair::generate(&mut rng);
        let names = names(4);
        let mut ledger = LocalOpinionLedger::new(4);
        let receipt = run_reward_handshake(
            &mut ledger,
            0,
            &client_kp,
            &names[0],
            2,
            &fwd_kp,
            &names[2],
            true,
        )
        .expect("honest handshake yields a receipt");
        assert_eq!(ledger.get(0, 2), 1);
        assert!(receipt_is_valid(&receipt, &names[0], &client_kp.public, &names[2], &fwd_kp.public));
        // The receipt does not validate against the wrong forwardee.
        assert!(!receipt_is_valid(&receipt, &names[0], &client_kp.public, &names[3], &fwd_kp.public));
    }

    #[test]
    fn skipped_commitment_leaves_no_receipt_and_no_write() {
        let mut rng = rng(33);
        let client_kp = KeyPair::generate(&mut rng);
        let fwd_kp = KeyPair::generate(&mut rng);
        let names = names(4);
        let mut ledger = LocalOpinionLedger::new(4);
        let receipt =
            run_reward_handshake(&mut ledger, 0, &client_kp, &names[0], 2, &fwd_kp, &names[2], false);
        assert!(receipt.is_none());
        assert_eq!(ledger.get(0, 2), 0);
    }

    #[test]
    fn am_records_only_verified_commitments() {
        let mut rng = rng(34);
        let client_kp = KeyPair::generate(&mut rng);
        let imposter_kp = KeyPair::generate(&mut rng);
        let names = names(4);
        let mut ledger = LocalOpinionLedger::new(4);
        // Commitment signed by the wrong key.
        let forged = sign(&imposter_kp, &names[0], &reward_commit_message(&names[0], &names[2]));
        assert!(!am_record_commitment(
            &mut ledger,
            0,
            &names[0],
            &client_kp.public,
            2,
            &names[2],
            &forged
        ));
        assert_eq!(ledger.get(0, 2), 0);
        // Genuine commitment.
        let genuine = sign(&client_kp, &names[0], &reward_commit_message(&names[0], &names[2]));
        assert!(am_record_commitment(
            &mut ledger,
            0,
            &names[0],
            &client_kp.public,
            2,
            &names[2],
            &genuine
        ));
        assert_eq!(ledger.get(0, 2), 1);
    }

    #[test]
    fn geometric_hop_law_smoke() {
        // Full-statistics version with chi-square lives in the acceptance
        // suite; here just check the head of the distribution at p = 0.5.
        let mut rng = rng(35);
        let n = 20;
        let roster = RosterReputations::uniform(n);
        let names = names(n);
        let env = DeliveryEnv {
            mode: Mode::Hbc,
            p_forward: 0.5,
            delta: 0.0,
            max_hops: 64,
            roster: &roster,
            names: &names,
            iteration: 0,
        };
        let cfg = CipherConfig::default();
        let kp = KeyPair::generate(&mut rng);
        let trials = 20_000u32;
        let mut first_count = 0u32;
        for i in 0..trials {
            let envelope = build_message(
                &cfg,
                &kp.public,
                names[5].clone(),
                names[0].clone(),
                b"x",
                &CompPayload::Nil,
                &mut rng,
            );
            let mut log = ChannelLog::default();
            let result = deliver_forward(&env, envelope, 0, 5, u64::from(i), &mut rng, &mut log);
            assert!(result.path.forwardee_count() >= 1);
            if result.path.forwardee_count() == 1 {
                first_count += 1;
            }
        }
        let freq = f64::from(first_count) / f64::from(trials);
        // P(submitter is the first forwardee) = 1 - p = 0.5.
        assert!((freq - 0.5).abs() < 0.015, "first-forwardee frequency {freq}");
    }
}
