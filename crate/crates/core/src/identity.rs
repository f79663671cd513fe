//! Real identities, pseudonym derivation and proof, and pseudorandom
//! accountability-manager assignment.
//!
//! A pseudonym is a one-way digest of the real identity and a secret nonce:
//! it leaks nothing about the identity, but the link can be proven by
//! revealing the nonce. Accountability managers are derived from the
//! pseudonym itself by iterated hashing, so a peer cannot choose who audits
//! her. Assignments are a pure function of `(pseudonym, roster, M)`: they are
//! stable for a fixed roster order and are frozen for a whole simulation run.

use std::fmt;

use crate::crypto::{digest, DIGEST_LEN};

#[derive(Debug, Clone, thiserror::Error, PartialEq, Eq)]
pub enum IdentityError {
    #[error("cannot assign {requested} accountability managers from a roster of {roster}")]
    TooManyManagers { requested: usize, roster: usize },
}

/// Opaque public identity, unique across the roster.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RealId(Vec<u8>);

impl RealId {
    pub fn new(id: impl AsRef<[u8]>) -> Self {
        Self(id.as_ref().to_vec())
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }
}

/// Fixed-length digest of `(real identity, nonce)` used for all pseudonymous
/// interactions.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Pseudonym([u8; DIGEST_LEN]);

impl Pseudonym {
    pub fn as_bytes(&self) -> &[u8; DIGEST_LEN] {
        &self.0
    }

    /// Hexadecimal rendering used in traces and CSV output.
    pub fn to_hex(&self) -> String {
        let mut s = String::with_capacity(DIGEST_LEN * 2);
        for b in self.0 {
            s.push_str(&format!("{b:02x}"));
        }
        s
    }
}

impl fmt::Debug for Pseudonym {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Pseudonym({}..)", &self.to_hex()[..8])
    }
}

impl fmt::Display for Pseudonym {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

/// A peer's assigned accountability managers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AmAssignment {
    pub subject: Pseudonym,
    /// Exactly `M` distinct manager pseudonyms, never including the subject.
    pub managers: Vec<Pseudonym>,
}

/// Derives the pseudonym `H(id || nonce)`. Deterministic; distinct nonces
/// give distinct pseudonyms except for hash collisions.
///
/// The nonce must be nonempty (an empty nonce would make the pseudonym a
/// plain digest of the public identity).
pub fn derive_pseudonym(id: &RealId, nonce: &[u8]) -> Pseudonym {
    assert!(!nonce.is_empty(), "pseudonym nonce must be nonempty");
    Pseudonym(digest("pseudonym", &[id.as_bytes(), nonce]))
}

/// True iff `p` was derived from `(id, nonce)`; revealing the nonce proves
/// the link between a pseudonym and a real identity.
pub fn prove_pseudonym(id: &RealId, nonce: &[u8], p: &Pseudonym) -> bool {
    if nonce.is_empty() {
        return false;
    }
    derive_pseudonym(id, nonce) == *p
}

/// Assigns `m_managers` distinct accountability managers to `p` by iterated
/// hashing: index_k = H(p || k) mod |roster|, k = 0, 1, 2, ..., skipping the
/// subject and already-chosen managers. Pure function of its inputs.
pub fn assign_accountability_managers(
    p: &Pseudonym,
    roster: &[Pseudonym],
    m_managers: usize,
) -> Result<AmAssignment, IdentityError> {
    if m_managers >= roster.len() {
        return Err(IdentityError::TooManyManagers {
            requested: m_managers,
            roster: roster.len(),
        });
    }
    let mut chosen: Vec<usize> = Vec::with_capacity(m_managers);
    let mut k: u64 = 0;
    while chosen.len() < m_managers {
        let h = digest("am-assign", &[p.as_bytes(), &k.to_le_bytes()]);
        let idx = (u64::from_le_bytes(h[..8].try_into().unwrap()) % roster.len() as u64) as usize;
        k += 1;
        if roster[idx] == *p || chosen.contains(&idx) {
            continue;
        }
        chosen.push(idx);
    }
    Ok(AmAssignment {
        subject: p.clone(),
        managers: chosen.into_iter().map(|i| roster[i].clone()).collect(),
    })
}

/// Roster-index variant of [`assign_accountability_managers`], used by the
/// simulator where peers are addressed by index.
pub fn assign_manager_indices(
    p: &Pseudonym,
    roster: &[Pseudonym],
    m_managers: usize,
) -> Result<Vec<usize>, IdentityError> {
    let assignment = assign_accountability_managers(p, roster, m_managers)?;
    Ok(assignment
        .managers
        .iter()
        .map(|m| roster.iter().position(|r| r == m).expect("manager in roster"))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn roster(n: usize) -> Vec<Pseudonym> {
        (0..n)
            .map(|i| derive_pseudonym(&RealId::new(format!("peer-{i}")), &[1, 2, 3]))
            .collect()
    }

    #[test]
    fn distinct_nonces_distinct_pseudonyms() {
        let id = RealId::new("A");
        assert_ne!(derive_pseudonym(&id, b"n1"), derive_pseudonym(&id, b"n2"));
    }

    #[test]
    fn derivation_is_deterministic() {
        let id = RealId::new("A");
        assert_eq!(derive_pseudonym(&id, b"n1"), derive_pseudonym(&id, b"n1"));
    }

    #[test]
    fn digest_bytes_pass_uniformity_smoke_test() {
        // Chi-square over the byte-value histogram of 10^4 pseudonyms. With
        // 10^4 * 32 samples over 256 bins the statistic should sit near the
        // 255 degrees of freedom; 340 is beyond the 0.9998 quantile.
        let mut histogram = [0u64; 256];
        for i in 0..10_000u32 {
            let p = derive_pseudonym(&RealId::new(i.to_le_bytes()), b"nonce");
            for b in p.as_bytes() {
                histogram[*b as usize] += 1;
            }
        }
        let total: u64 = histogram.iter().sum();
        let expected = total as f64 / 256.0;
        let chi2: f64 = histogram
            .iter()
            .map(|&o| {
                let d = o as f64 - expected;
                d * d / expected
            })
            .sum();
        assert!(chi2 < 340.0, "digest bytes look non-uniform: chi2 = {chi2}");
    }

    #[test]
    fn no_collisions_over_large_corpus() {
        let mut seen = std::collections::HashSet::new();
        for i in 0..100_000u32 {
            let p = derive_pseudonym(&RealId::new(i.to_le_bytes()), b"nonce");
            assert!(seen.insert(*p.as_bytes()));
        }
    }

    #[test]
    fn prove_matching_triple() {
        let id = RealId::new("A");
        let p = derive_pseudonym(&id, b"n1");
        assert!(prove_pseudonym(&id, b"n1", &p));
    }

    #[test]
    fn prove_rejects_wrong_nonce_or_id() {
        let id = RealId::new("A");
        let p = derive_pseudonym(&id, b"n1");
        assert!(!prove_pseudonym(&id, b"n2", &p));
        assert!(!prove_pseudonym(&RealId::new("B"), b"n1", &p));
        assert!(!prove_pseudonym(&id, b"", &p));
    }

    #[test]
    fn zero_managers_gives_empty_set() {
        let roster = roster(5);
        let a = assign_accountability_managers(&roster[0], &roster, 0).unwrap();
        assert!(a.managers.is_empty());
    }

    #[test]
    fn assignment_is_deterministic_and_excludes_subject() {
        let roster = roster(20);
        let a = assign_accountability_managers(&roster[3], &roster, 5).unwrap();
        let b = assign_accountability_managers(&roster[3], &roster, 5).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.managers.len(), 5);
        assert!(!a.managers.contains(&roster[3]));
        let distinct: std::collections::HashSet<_> =
            a.managers.iter().map(|m| *m.as_bytes()).collect();
        assert_eq!(distinct.len(), 5);
    }

    #[test]
    fn too_many_managers_is_a_configuration_error() {
        let roster = roster(4);
        assert!(matches!(
            assign_accountability_managers(&roster[0], &roster, 4),
            Err(IdentityError::TooManyManagers { .. })
        ));
    }

    #[test]
    fn selection_frequency_matches_binomial_oracle() {
        // 10^3 subject pseudonyms, M = 3, n = 100: each roster member is
        // expected to be chosen 1000 * 3/100 = 30 times, sigma = sqrt(1000 *
        // 0.03 * 0.97) ~= 5.39. Check every member stays within 3 sigma.
        let roster = roster(100);
        let mut counts = vec![0u64; 100];
        for i in 0..1000u32 {
            let subject = derive_pseudonym(&RealId::new(format!("subject-{i}")), b"n");
            let a = assign_accountability_managers(&subject, &roster, 3).unwrap();
            for m in &a.managers {
                let idx = roster.iter().position(|r| r == m).unwrap();
                counts[idx] += 1;
            }
        }
        let expected = 30.0;
        let sigma = (1000.0_f64 * 0.03 * 0.97).sqrt();
        for (idx, &c) in counts.iter().enumerate() {
            let dev = (c as f64 - expected).abs();
            assert!(
                dev <= 3.0 * sigma,
                "member {idx} selected {c} times, expected {expected} +- {:.1}",
                3.0 * sigma
            );
        }
    }

    #[test]
    fn fixed_roster_yields_fixed_assignment() {
        let roster = roster(50);
        let before = assign_accountability_managers(&roster[7], &roster, 3).unwrap();
        // Same roster, same subject, later in time: identical assignment.
        let after = assign_accountability_managers(&roster[7], &roster, 3).unwrap();
        assert_eq!(before, after);
    }
}
