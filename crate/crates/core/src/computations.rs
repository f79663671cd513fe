//! Declarative joint computations with per-client pruning support: rank of
//! input, neighbor differences in a ranking, and e-voting tally, plus a
//! registry for custom computations.
//!
//! Computations are declarative specs, not mobile code: a worker evaluates a
//! spec against the inputs it has collected, so loops, recursion and control
//! flow inside the evaluators are unconstrained. Specs travel inside
//! ciphertexts with a documented byte layout (see [`encode_payload`]) so the
//! encrypted form is size-stable.

use std::collections::BTreeMap;

#[derive(Debug, Clone, thiserror::Error, PartialEq, Eq)]
pub enum ComputationError {
    #[error("the client's own value is not among the joint inputs")]
    OwnValueAbsent,
    #[error("computation requires an embedded client input but none is present")]
    MissingEmbeddedInput,
    #[error("computation requires numeric inputs")]
    NonNumericInput,
    #[error("malformed computation encoding")]
    MalformedEncoding,
    #[error("no evaluator registered for custom computation `{0}`")]
    UnknownComputation(String),
}

/// Reserved tally bucket for ballots that name no listed option.
pub const INVALID_OPTION: &str = "invalid";

/// A single joint-computation input value.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Value {
    Int(i64),
    Label(String),
}

impl Value {
    pub(crate) fn encode_into(&self, out: &mut Vec<u8>) {
        match self {
            Value::Int(v) => {
                out.push(0x01);
                out.extend_from_slice(&v.to_be_bytes());
            }
            Value::Label(s) => {
                out.push(0x02);
                out.extend_from_slice(&(s.len() as u16).to_be_bytes());
                out.extend_from_slice(s.as_bytes());
            }
        }
    }

    pub(crate) fn decode_from(bytes: &[u8]) -> Result<(Value, &[u8]), ComputationError> {
        let (&tag, rest) = bytes.split_first().ok_or(ComputationError::MalformedEncoding)?;
        match tag {
            0x01 => {
                if rest.len() < 8 {
                    return Err(ComputationError::MalformedEncoding);
                }
                let (v, rest) = rest.split_at(8);
                Ok((Value::Int(i64::from_be_bytes(v.try_into().unwrap())), rest))
            }
            0x02 => {
                let (len, rest) = take_u16(rest)?;
                if rest.len() < len {
                    return Err(ComputationError::MalformedEncoding);
                }
                let (s, rest) = rest.split_at(len);
                let s = String::from_utf8(s.to_vec())
                    .map_err(|_| ComputationError::MalformedEncoding)?;
                Ok((Value::Label(s), rest))
            }
            _ => Err(ComputationError::MalformedEncoding),
        }
    }
}

/// The list of inputs a worker has collected, in arrival order. Carries no
/// client identifiers; all built-in evaluators are permutation invariant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JointInput {
    values: Vec<Value>,
}

impl JointInput {
    pub fn new(values: Vec<Value>) -> Self {
        Self { values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[Value] {
        &self.values
    }

    fn ints(&self) -> Result<Vec<i64>, ComputationError> {
        self.values
            .iter()
            .map(|v| match v {
                Value::Int(i) => Ok(*i),
                Value::Label(_) => Err(ComputationError::NonNumericInput),
            })
            .collect()
    }
}

/// A joint computation, or a client's pruned projection of one.
///
/// `own` holds the client's embedded input for the kinds that need to know
/// which input is the client's; it is `None` in the unpruned joint spec.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ComputationSpec {
    /// Rank of the client's value among all inputs, descending (rank 1 is
    /// the largest; ties share the best rank).
    RankOfInput { own: Option<Value> },
    /// Differences with the next-richer and next-poorer values in the
    /// descending ranking of all inputs.
    NeighborDiffs { own: Option<Value> },
    /// Absolute frequencies of all listed options; identical for every
    /// client and needs no embedded input.
    VoteTally { options: Vec<String> },
    /// Extension point: evaluated through a [`ComputationRegistry`].
    Custom {
        name: String,
        needs_own: bool,
        own: Option<Value>,
        params: BTreeMap<String, String>,
    },
}

impl ComputationSpec {
    /// Whether pruning must embed the client's own input into the spec.
    pub fn needs_embedded_input(&self) -> bool {
        match self {
            ComputationSpec::RankOfInput { .. } | ComputationSpec::NeighborDiffs { .. } => true,
            ComputationSpec::VoteTally { .. } => false,
            ComputationSpec::Custom { needs_own, .. } => *needs_own,
        }
    }
}

/// A computed output value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Output {
    Rank(u32),
    Diffs {
        /// Difference to the next-richer value; `None` when the client's
        /// value is the unique maximum.
        to_richer: Option<i64>,
        /// Difference to the next-poorer value; `None` when the client's
        /// value is the unique minimum.
        to_poorer: Option<i64>,
    },
    Tally(BTreeMap<String, u32>),
}

impl Output {
    /// Deterministic byte serialization. Majority voting counts outputs by
    /// these bytes and breaks ties by their lexicographic order.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        match self {
            Output::Rank(r) => {
                out.push(0x01);
                out.extend_from_slice(&r.to_be_bytes());
            }
            Output::Diffs { to_richer, to_poorer } => {
                out.push(0x02);
                for d in [to_richer, to_poorer] {
                    match d {
                        Some(v) => {
                            out.push(0x01);
                            out.extend_from_slice(&v.to_be_bytes());
                        }
                        None => out.push(0x00),
                    }
                }
            }
            Output::Tally(counts) => {
                out.push(0x03);
                out.extend_from_slice(&(counts.len() as u16).to_be_bytes());
                for (option, count) in counts {
                    out.extend_from_slice(&(option.len() as u16).to_be_bytes());
                    out.extend_from_slice(option.as_bytes());
                    out.extend_from_slice(&count.to_be_bytes());
                }
            }
        }
        out
    }
}

/// Encodes an output (or the nil output) for the reverse channel.
/// Layout: `0x00` for nil, otherwise the output's canonical bytes.
pub fn encode_output(out: Option<&Output>) -> Vec<u8> {
    match out {
        None => vec![0x00],
        Some(o) => o.canonical_bytes(),
    }
}

/// Inverse of [`encode_output`].
pub fn decode_output(bytes: &[u8]) -> Result<Option<Output>, ComputationError> {
    let (&tag, rest) = bytes.split_first().ok_or(ComputationError::MalformedEncoding)?;
    match tag {
        0x00 => Ok(None),
        0x01 => {
            if rest.len() != 4 {
                return Err(ComputationError::MalformedEncoding);
            }
            Ok(Some(Output::Rank(u32::from_be_bytes(rest.try_into().unwrap()))))
        }
        0x02 => {
            let mut rest = rest;
            let mut diffs = [None, None];
            for d in &mut diffs {
                let (&flag, r) = rest.split_first().ok_or(ComputationError::MalformedEncoding)?;
                rest = r;
                if flag == 0x01 {
                    if rest.len() < 8 {
                        return Err(ComputationError::MalformedEncoding);
                    }
                    let (v, r) = rest.split_at(8);
                    *d = Some(i64::from_be_bytes(v.try_into().unwrap()));
                    rest = r;
                } else if flag != 0x00 {
                    return Err(ComputationError::MalformedEncoding);
                }
            }
            if !rest.is_empty() {
                return Err(ComputationError::MalformedEncoding);
            }
            Ok(Some(Output::Diffs { to_richer: diffs[0], to_poorer: diffs[1] }))
        }
        0x03 => {
            let (count, mut rest) = take_u16(rest)?;
            let mut counts = BTreeMap::new();
            for _ in 0..count {
                let (len, r) = take_u16(rest)?;
                if r.len() < len + 4 {
                    return Err(ComputationError::MalformedEncoding);
                }
                let (key, r) = r.split_at(len);
                let key = String::from_utf8(key.to_vec())
                    .map_err(|_| ComputationError::MalformedEncoding)?;
                let (c, r) = r.split_at(4);
                counts.insert(key, u32::from_be_bytes(c.try_into().unwrap()));
                rest = r;
            }
            if !rest.is_empty() {
                return Err(ComputationError::MalformedEncoding);
            }
            Ok(Some(Output::Tally(counts)))
        }
        _ => Err(ComputationError::MalformedEncoding),
    }
}

/// What the `ecomp` half of a channel message decrypts to: the nil marker
/// (the message carries an input), a worker's refusal marker, or a pruned
/// computation spec.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CompPayload {
    Nil,
    Refuse,
    Spec(ComputationSpec),
}

/// Serializes a computation payload.
///
/// Layout: first byte `0x00` = nil marker, `0xFF` = refusal marker;
/// otherwise a spec as `kind:u8, embedded_flag:u8, [embedded value], params`
/// with kind `0x01` rank-of-input, `0x02` neighbor-diffs, `0x03` vote-tally
/// (params: `u16` option count, then length-prefixed options), `0x04` custom
/// (params: length-prefixed name, `needs_own:u8`, `u16` pair count, then
/// length-prefixed key/value pairs). Integers are big-endian; strings are
/// UTF-8 with `u16` length prefixes.
pub fn encode_payload(payload: &CompPayload) -> Vec<u8> {
    let mut out = Vec::new();
    let spec = match payload {
        CompPayload::Nil => {
            out.push(0x00);
            return out;
        }
        CompPayload::Refuse => {
            out.push(0xFF);
            return out;
        }
        CompPayload::Spec(spec) => spec,
    };
    let (kind, own) = match spec {
        ComputationSpec::RankOfInput { own } => (0x01, own.as_ref()),
        ComputationSpec::NeighborDiffs { own } => (0x02, own.as_ref()),
        ComputationSpec::VoteTally { .. } => (0x03, None),
        ComputationSpec::Custom { own, .. } => (0x04, own.as_ref()),
    };
    out.push(kind);
    match own {
        Some(v) => {
            out.push(0x01);
            v.encode_into(&mut out);
        }
        None => out.push(0x00),
    }
    match spec {
        ComputationSpec::VoteTally { options } => {
            out.extend_from_slice(&(options.len() as u16).to_be_bytes());
            for option in options {
                out.extend_from_slice(&(option.len() as u16).to_be_bytes());
                out.extend_from_slice(option.as_bytes());
            }
        }
        ComputationSpec::Custom { name, needs_own, params, .. } => {
            out.extend_from_slice(&(name.len() as u16).to_be_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(u8::from(*needs_own));
            out.extend_from_slice(&(params.len() as u16).to_be_bytes());
            for (k, v) in params {
                out.extend_from_slice(&(k.len() as u16).to_be_bytes());
                out.extend_from_slice(k.as_bytes());
                out.extend_from_slice(&(v.len() as u16).to_be_bytes());
                out.extend_from_slice(v.as_bytes());
            }
        }
        _ => {}
    }
    out
}

/// Inverse of [`encode_payload`].
pub fn decode_payload(bytes: &[u8]) -> Result<CompPayload, ComputationError> {
    let (&tag, rest) = bytes.split_first().ok_or(ComputationError::MalformedEncoding)?;
    match tag {
        0x00 if rest.is_empty() => return Ok(CompPayload::Nil),
        0xFF if rest.is_empty() => return Ok(CompPayload::Refuse),
        0x01..=0x04 => {}
        _ => return Err(ComputationError::MalformedEncoding),
    }
    let (&flag, mut rest) = rest.split_first().ok_or(ComputationError::MalformedEncoding)?;
    let own = match flag {
        0x00 => None,
        0x01 => {
            let (v, r) = Value::decode_from(rest)?;
            rest = r;
            Some(v)
        }
        _ => return Err(ComputationError::MalformedEncoding),
    };
    let spec = match tag {
        0x01 => ComputationSpec::RankOfInput { own },
        0x02 => ComputationSpec::NeighborDiffs { own },
        0x03 => {
            let (count, mut rest) = take_u16(rest)?;
            let mut options = Vec::with_capacity(count);
            for _ in 0..count {
                let (len, r) = take_u16(rest)?;
                if r.len() < len {
                    return Err(ComputationError::MalformedEncoding);
                }
                let (s, r) = r.split_at(len);
                options.push(
                    String::from_utf8(s.to_vec())
                        .map_err(|_| ComputationError::MalformedEncoding)?,
                );
                rest = r;
            }
            if !rest.is_empty() {
                return Err(ComputationError::MalformedEncoding);
            }
            return Ok(CompPayload::Spec(ComputationSpec::VoteTally { options }));
        }
        0x04 => {
            let (len, r) = take_u16(rest)?;
            if r.len() < len + 1 {
                return Err(ComputationError::MalformedEncoding);
            }
            let (name, r) = r.split_at(len);
            let name =
                String::from_utf8(name.to_vec()).map_err(|_| ComputationError::MalformedEncoding)?;
            let (&needs_own, r) = r.split_first().ok_or(ComputationError::MalformedEncoding)?;
            let (count, mut rest) = take_u16(r)?;
            let mut params = BTreeMap::new();
            for _ in 0..count {
                let (klen, r) = take_u16(rest)?;
                if r.len() < klen {
                    return Err(ComputationError::MalformedEncoding);
                }
                let (k, r) = r.split_at(klen);
                let (vlen, r) = take_u16(r)?;
                if r.len() < vlen {
                    return Err(ComputationError::MalformedEncoding);
                }
                let (v, r) = r.split_at(vlen);
                params.insert(
                    String::from_utf8(k.to_vec())
                        .map_err(|_| ComputationError::MalformedEncoding)?,
                    String::from_utf8(v.to_vec())
                        .map_err(|_| ComputationError::MalformedEncoding)?,
                );
                rest = r;
            }
            if !rest.is_empty() {
                return Err(ComputationError::MalformedEncoding);
            }
            return Ok(CompPayload::Spec(ComputationSpec::Custom {
                name,
                needs_own: needs_own != 0,
                own,
                params,
            }));
        }
        _ => unreachable!(),
    };
    if !rest.is_empty() {
        return Err(ComputationError::MalformedEncoding);
    }
    Ok(CompPayload::Spec(spec))
}

fn take_u16(bytes: &[u8]) -> Result<(usize, &[u8]), ComputationError> {
    if bytes.len() < 2 {
        return Err(ComputationError::MalformedEncoding);
    }
    let (len, rest) = bytes.split_at(2);
    Ok((u16::from_be_bytes(len.try_into().unwrap()) as usize, rest))
}

/// Rank of the client's value among all inputs, descending: 1 plus the
/// number of inputs strictly greater than `own`. Ties share the best rank.
pub fn eval_rank_of_input(inputs: &JointInput, own: &Value) -> Result<u32, ComputationError> {
    if !inputs.values.contains(own) {
        return Err(ComputationError::OwnValueAbsent);
    }
    let own = match own {
        Value::Int(v) => *v,
        Value::Label(_) => return Err(ComputationError::NonNumericInput),
    };
    let values = inputs.ints()?;
    Ok(1 + values.iter().filter(|&&v| v > own).count() as u32)
}

/// Differences with the neighbors in the descending ranking: the next-richer
/// value minus `own` (`None` when `own` is the unique maximum) and `own`
/// minus the next-poorer value (`None` when it is the unique minimum). When
/// `own` is duplicated, the neighbor is the other equal value and the
/// difference is 0.
pub fn eval_neighbor_diffs(
    inputs: &JointInput,
    own: &Value,
) -> Result<(Option<i64>, Option<i64>), ComputationError> {
    if !inputs.values.contains(own) {
        return Err(ComputationError::OwnValueAbsent);
    }
    let own = match own {
        Value::Int(v) => *v,
        Value::Label(_) => return Err(ComputationError::NonNumericInput),
    };
    let mut others = inputs.ints()?;
    let pos = others.iter().position(|&v| v == own).unwrap();
    others.swap_remove(pos);
    let to_richer = others.iter().filter(|&&v| v >= own).min().map(|&v| v - own);
    let to_poorer = others.iter().filter(|&&v| v <= own).max().map(|&v| own - v);
    Ok((to_richer, to_poorer))
}

/// Absolute frequencies of all options. Options with zero votes are present
/// with count 0; ballots naming no listed option are counted under the
/// reserved [`INVALID_OPTION`] key, so the counts always sum to the number
/// of ballots.
pub fn eval_vote_tally(inputs: &JointInput, options: &[String]) -> BTreeMap<String, u32> {
    let mut counts: BTreeMap<String, u32> =
        options.iter().map(|o| (o.clone(), 0)).collect();
    for ballot in &inputs.values {
        let key = match ballot {
            Value::Label(l) if options.contains(l) => l.clone(),
            _ => INVALID_OPTION.to_string(),
        };
        *counts.entry(key).or_insert(0) += 1;
    }
    counts
}

/// Evaluator for custom computations registered by name.
pub type CustomEvalFn =
    fn(&JointInput, &BTreeMap<String, String>, Option<&Value>) -> Result<Output, ComputationError>;

/// Registry of custom computation evaluators.
#[derive(Default)]
pub struct ComputationRegistry {
    evaluators: BTreeMap<String, CustomEvalFn>,
}

impl ComputationRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: impl Into<String>, f: CustomEvalFn) {
        self.evaluators.insert(name.into(), f);
    }
}

/// Evaluates a built-in computation spec against the collected inputs.
/// Pure: the result depends only on the arguments, and is invariant under
/// permutation of the input list.
pub fn evaluate(spec: &ComputationSpec, inputs: &JointInput) -> Result<Output, ComputationError> {
    evaluate_with(&ComputationRegistry::default(), spec, inputs)
}

/// [`evaluate`] with a registry for custom computations.
pub fn evaluate_with(
    registry: &ComputationRegistry,
    spec: &ComputationSpec,
    inputs: &JointInput,
) -> Result<Output, ComputationError> {
    match spec {
        ComputationSpec::RankOfInput { own } => {
            let own = own.as_ref().ok_or(ComputationError::MissingEmbeddedInput)?;
            eval_rank_of_input(inputs, own).map(Output::Rank)
        }
        ComputationSpec::NeighborDiffs { own } => {
            let own = own.as_ref().ok_or(ComputationError::MissingEmbeddedInput)?;
            eval_neighbor_diffs(inputs, own)
                .map(|(to_richer, to_poorer)| Output::Diffs { to_richer, to_poorer })
        }
        ComputationSpec::VoteTally { options } => Ok(Output::Tally(eval_vote_tally(inputs, options))),
        ComputationSpec::Custom { name, needs_own, own, params } => {
            let f = registry
                .evaluators
                .get(name)
                .ok_or_else(|| ComputationError::UnknownComputation(name.clone()))?;
            if *needs_own && own.is_none() {
                return Err(ComputationError::MissingEmbeddedInput);
            }
            f(inputs, params, own.as_ref())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ints(values: &[i64]) -> JointInput {
        JointInput::new(values.iter().map(|&v| Value::Int(v)).collect())
    }

    fn ballots(votes: &[&str]) -> JointInput {
        JointInput::new(votes.iter().map(|v| Value::Label(v.to_string())).collect())
    }

    /// Independent rank oracle: position of the first occurrence of `own` in
    /// the descending sort, 1-based.
    fn rank_oracle(values: &[i64], own: i64) -> u32 {
        let mut sorted = values.to_vec();
        sorted.sort_unstable_by(|a, b| b.cmp(a));
        sorted.iter().position(|&v| v == own).unwrap() as u32 + 1
    }

    #[test]
    fn rank_basic() {
        let inputs = ints(&[10, 30, 20, 40]);
        assert_eq!(eval_rank_of_input(&inputs, &Value::Int(40)).unwrap(), 1);
        assert_eq!(eval_rank_of_input(&inputs, &Value::Int(10)).unwrap(), 4);
    }

    #[test]
    fn rank_ties_share_best_rank() {
        let inputs = ints(&[5, 5, 3, 9]);
        assert_eq!(eval_rank_of_input(&inputs, &Value::Int(5)).unwrap(), 2);
        assert_eq!(eval_rank_of_input(&inputs, &Value::Int(5)).unwrap(), rank_oracle(&[5, 5, 3, 9], 5));
    }

    #[test]
    fn rank_rejects_absent_own() {
        let inputs = ints(&[1, 2, 3]);
        assert_eq!(
            eval_rank_of_input(&inputs, &Value::Int(4)),
            Err(ComputationError::OwnValueAbsent)
        );
    }

    #[test]
    fn diffs_basic() {
        let inputs = ints(&[100, 50, 80, 20]);
        assert_eq!(
            eval_neighbor_diffs(&inputs, &Value::Int(80)).unwrap(),
            (Some(20), Some(30))
        );
    }

    #[test]
    fn diffs_maximum_has_no_richer_neighbor() {
        let inputs = ints(&[100, 50, 80, 20]);
        assert_eq!(
            eval_neighbor_diffs(&inputs, &Value::Int(100)).unwrap(),
            (None, Some(20))
        );
    }

    #[test]
    fn diffs_duplicate_own_gives_zero() {
        let inputs = ints(&[100, 80, 80, 20]);
        assert_eq!(
            eval_neighbor_diffs(&inputs, &Value::Int(80)).unwrap(),
            (Some(0), Some(0))
        );
    }

    #[test]
    fn diffs_rejects_absent_own() {
        let inputs = ints(&[1, 2]);
        assert_eq!(
            eval_neighbor_diffs(&inputs, &Value::Int(9)),
            Err(ComputationError::OwnValueAbsent)
        );
    }

    #[test]
    fn tally_basic() {
        let options = vec!["Y".to_string(), "N".to_string(), "Blank".to_string()];
        let tally = eval_vote_tally(&ballots(&["Y", "Y", "N", "Blank"]), &options);
        assert_eq!(tally["Y"], 2);
        assert_eq!(tally["N"], 1);
        assert_eq!(tally["Blank"], 1);
        assert!(!tally.contains_key(INVALID_OPTION));
    }

    #[test]
    fn tally_all_same_option_keeps_zero_counts() {
        let options = vec!["A".to_string(), "B".to_string()];
        let tally = eval_vote_tally(&ballots(&["A", "A", "A", "A"]), &options);
        assert_eq!(tally["A"], 4);
        assert_eq!(tally["B"], 0);
    }

    #[test]
    fn tally_spoiled_ballot_goes_to_invalid_and_conserves_total() {
        let options = vec!["A".to_string(), "B".to_string()];
        let tally = eval_vote_tally(&ballots(&["A", "C", "B", "A"]), &options);
        assert_eq!(tally[INVALID_OPTION], 1);
        assert_eq!(tally.values().sum::<u32>(), 4);
    }

    #[test]
    fn tally_matches_independent_counter_on_random_ballots() {
        use rand::prelude::*;
        let options: Vec<String> = ["A", "B", "C", "D"].iter().map(|s| s.to_string()).collect();
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(11);
        let votes: Vec<Value> = (0..10_000)
            .map(|_| Value::Label(options[rng.random_range(0..options.len())].clone()))
            .collect();
        // Independent oracle: plain loop counter.
        let mut oracle: BTreeMap<String, u32> = options.iter().map(|o| (o.clone(), 0)).collect();
        for v in &votes {
            if let Value::Label(l) = v {
                *oracle.get_mut(l).unwrap() += 1;
            }
        }
        let tally = eval_vote_tally(&JointInput::new(votes), &options);
        assert_eq!(tally, oracle);
    }

    #[test]
    fn evaluate_dispatches_and_embeds() {
        let inputs = ints(&[10, 30, 20, 40]);
        let spec = ComputationSpec::RankOfInput { own: Some(Value::Int(40)) };
        assert_eq!(evaluate(&spec, &inputs).unwrap(), Output::Rank(1));

        let unpruned = ComputationSpec::RankOfInput { own: None };
        assert_eq!(
            evaluate(&unpruned, &inputs),
            Err(ComputationError::MissingEmbeddedInput)
        );
    }

    #[test]
    fn evaluate_vote_tally_ignores_embedded_input() {
        let options = vec!["Y".to_string(), "N".to_string()];
        let spec = ComputationSpec::VoteTally { options: options.clone() };
        let tally = evaluate(&spec, &ballots(&["Y", "N", "Y", "Y"])).unwrap();
        assert_eq!(tally, Output::Tally(eval_vote_tally(&ballots(&["Y", "N", "Y", "Y"]), &options)));
    }

    #[test]
    fn custom_computation_goes_through_registry() {
        fn sum_inputs(
            inputs: &JointInput,
            _params: &BTreeMap<String, String>,
            _own: Option<&Value>,
        ) -> Result<Output, ComputationError> {
            let total: i64 = inputs.ints()?.iter().sum();
            Ok(Output::Rank(total as u32))
        }
        let mut registry = ComputationRegistry::new();
        registry.register("sum", sum_inputs);
        let spec = ComputationSpec::Custom {
            name: "sum".into(),
            needs_own: false,
            own: None,
            params: BTreeMap::new(),
        };
        assert_eq!(
            evaluate_with(&registry, &spec, &ints(&[1, 2, 3])).unwrap(),
            Output::Rank(6)
        );
        assert_eq!(
            evaluate(&spec, &ints(&[1, 2, 3])),
            Err(ComputationError::UnknownComputation("sum".into()))
        );
    }

    #[test]
    fn payload_markers_round_trip() {
        for payload in [CompPayload::Nil, CompPayload::Refuse] {
            let bytes = encode_payload(&payload);
            assert_eq!(decode_payload(&bytes).unwrap(), payload);
        }
        assert!(decode_payload(&[]).is_err());
        assert!(decode_payload(&[0x07]).is_err());
    }

    #[test]
    fn output_nil_round_trip() {
        let bytes = encode_output(None);
        assert_eq!(decode_output(&bytes).unwrap(), None);
    }

    proptest! {
        #[test]
        fn rank_matches_oracle_on_distinct_inputs(mut values in proptest::collection::vec(-1000i64..1000, 2..12)) {
            values.sort_unstable();
            values.dedup();
            prop_assume!(values.len() >= 2);
            let inputs = ints(&values);
            for &own in &values {
                prop_assert_eq!(
                    eval_rank_of_input(&inputs, &Value::Int(own)).unwrap(),
                    rank_oracle(&values, own)
                );
            }
        }

        #[test]
        fn diffs_antisymmetry_on_distinct_inputs(mut values in proptest::collection::vec(-1000i64..1000, 2..12)) {
            values.sort_unstable();
            values.dedup();
            prop_assume!(values.len() >= 2);
            let inputs = ints(&values);
            let mut sorted = values.clone();
            sorted.sort_unstable_by(|a, b| b.cmp(a));
            for pair in sorted.windows(2) {
                let (richer, poorer) = (pair[0], pair[1]);
                let (_, richer_down) = eval_neighbor_diffs(&inputs, &Value::Int(richer)).unwrap();
                let (poorer_up, _) = eval_neighbor_diffs(&inputs, &Value::Int(poorer)).unwrap();
                prop_assert_eq!(richer_down, poorer_up);
            }
        }

        #[test]
        fn evaluation_is_permutation_invariant(
            values in proptest::collection::vec(0i64..50, 4..10),
            seed in 0u64..1000,
        ) {
            use rand::prelude::*;
            let own = values[0];
            let mut shuffled = values.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha12Rng::seed_from_u64(seed));

            let specs = [
                ComputationSpec::RankOfInput { own: Some(Value::Int(own)) },
                ComputationSpec::NeighborDiffs { own: Some(Value::Int(own)) },
            ];
            for spec in &specs {
                prop_assert_eq!(
                    evaluate(spec, &ints(&values)).unwrap(),
                    evaluate(spec, &ints(&shuffled)).unwrap()
                );
            }

            let options: Vec<String> = (0..5).map(|i| format!("opt{i}")).collect();
            let to_ballots = |vals: &[i64]| {
                JointInput::new(
                    vals.iter()
                        .map(|v| Value::Label(format!("opt{}", (v % 5).unsigned_abs())))
                        .collect(),
                )
            };
            let spec = ComputationSpec::VoteTally { options };
            prop_assert_eq!(
                evaluate(&spec, &to_ballots(&values)).unwrap(),
                evaluate(&spec, &to_ballots(&shuffled)).unwrap()
            );
        }

        #[test]
        fn payload_encoding_round_trips(
            kind in 0u8..4,
            own in proptest::option::of(-1000i64..1000),
            options in proptest::collection::vec("[a-z]{1,8}", 0..5),
            pairs in proptest::collection::vec(("[a-z]{1,6}", "[a-z0-9]{0,6}"), 0..4),
        ) {
            let own_value = own.map(Value::Int);
            let spec = match kind {
                0 => ComputationSpec::RankOfInput { own: own_value },
                1 => ComputationSpec::NeighborDiffs { own: own_value },
                2 => ComputationSpec::VoteTally { options },
                _ => ComputationSpec::Custom {
                    name: "custom".into(),
                    needs_own: own.is_some(),
                    own: own_value,
                    params: pairs.into_iter().collect(),
                },
            };
            let payload = CompPayload::Spec(spec);
            let bytes = encode_payload(&payload);
            prop_assert_eq!(decode_payload(&bytes).unwrap(), payload);
        }

        #[test]
        fn output_encoding_round_trips(
            rank in proptest::option::of(1u32..100),
            richer in proptest::option::of(-500i64..500),
            poorer in proptest::option::of(-500i64..500),
            counts in proptest::collection::btree_map("[a-z]{1,6}", 0u32..40, 0..5),
        ) {
            let outputs = [
                rank.map(Output::Rank),
                Some(Output::Diffs { to_richer: richer, to_poorer: poorer }),
                Some(Output::Tally(counts)),
                None,
            ];
            for out in &outputs {
                let bytes = encode_output(out.as_ref());
                prop_assert_eq!(decode_output(&bytes).unwrap(), out.clone());
            }
        }
    }
}
