//! Minimal cryptographic contracts used by the protocols: probabilistic
//! public-key encryption with fixed-length ciphertexts, authenticated
//! symmetric encryption, and signatures.
//!
//! The default backend is simulation-grade: every primitive is built from a
//! domain-separated SHA-256 keyed digest. The protocol-level contracts hold
//! bit-exactly (probabilistic ciphertexts, constant ciphertext length,
//! authenticated failure on wrong keys or tampering, signature binding to the
//! exact message bytes), but the constructions are not cryptographically
//! hiding or unforgeable against an adversary that steps outside the peer
//! model. Real-cipher backends can be swapped in behind the same functions.

use rand::RngCore;
use sha2::{Digest, Sha256};

use crate::identity::Pseudonym;

/// Length in bytes of every digest, key and signature tag.
pub const DIGEST_LEN: usize = 32;
/// Length in bytes of the per-ciphertext nonce.
pub const NONCE_LEN: usize = 16;
/// Length in bytes of the plaintext length prefix inside the padded block.
const LEN_PREFIX: usize = 4;

/// Domain-separated digest over a sequence of length-delimited parts.
pub fn digest(domain: &str, parts: &[&[u8]]) -> [u8; DIGEST_LEN] {
    let mut h = Sha256::new();
    h.update((domain.len() as u64).to_le_bytes());
    h.update(domain.as_bytes());
    for part in parts {
        h.update((part.len() as u64).to_le_bytes());
        h.update(part);
    }
    h.finalize().into()
}

#[derive(Debug, Clone, thiserror::Error, PartialEq, Eq)]
pub enum CryptoError {
    #[error("plaintext of {len} bytes exceeds the {max}-byte limit")]
    PlaintextTooLong { len: usize, max: usize },
    #[error("ciphertext rejected: wrong key, truncation, or tampering")]
    DecryptFailed,
}

/// Session-wide cipher parameters. All ciphertexts produced under one config
/// have identical length regardless of the plaintext.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CipherConfig {
    /// Size every plaintext is padded to before encryption.
    pub block_len: usize,
}

impl Default for CipherConfig {
    fn default() -> Self {
        Self { block_len: 256 }
    }
}

impl CipherConfig {
    /// Largest plaintext that fits the padded block.
    pub fn max_plaintext(&self) -> usize {
        self.block_len - LEN_PREFIX
    }

    /// Total ciphertext length under this config: nonce, padded body, tag.
    pub fn ciphertext_len(&self) -> usize {
        NONCE_LEN + self.block_len + DIGEST_LEN
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PublicKey(pub [u8; DIGEST_LEN]);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SecretKey([u8; DIGEST_LEN]);

/// Public-key pair; the public half is registered in the roster under the
/// owner's pseudonym.
#[derive(Debug, Clone)]
pub struct KeyPair {
    pub public: PublicKey,
    secret: SecretKey,
}

impl KeyPair {
    pub fn generate(rng: &mut impl RngCore) -> Self {
        let mut secret = [0u8; DIGEST_LEN];
        rng.fill_bytes(&mut secret);
        let public = PublicKey(digest("pk-derive", &[&secret]));
        Self {
            public,
            secret: SecretKey(secret),
        }
    }

    pub fn secret(&self) -> &SecretKey {
        &self.secret
    }
}

/// Symmetric key handed to a worker for returning an encrypted output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SymKey(pub [u8; DIGEST_LEN]);

impl SymKey {
    pub fn generate(rng: &mut impl RngCore) -> Self {
        let mut key = [0u8; DIGEST_LEN];
        rng.fill_bytes(&mut key);
        Self(key)
    }
}

/// Fixed-length public-key ciphertext: `nonce || body || tag`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ciphertext(pub Vec<u8>);

/// Signature tag bound to a signer pseudonym.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Signature {
    pub signer: Pseudonym,
    pub sig: [u8; DIGEST_LEN],
}

fn pad_block(cfg: &CipherConfig, m: &[u8]) -> Result<Vec<u8>, CryptoError> {
    if m.len() > cfg.max_plaintext() {
        return Err(CryptoError::PlaintextTooLong {
            len: m.len(),
            max: cfg.max_plaintext(),
        });
    }
    let mut block = Vec::with_capacity(cfg.block_len);
    block.extend_from_slice(&(m.len() as u32).to_le_bytes());
    block.extend_from_slice(m);
    block.resize(cfg.block_len, 0);
    Ok(block)
}

fn unpad_block(cfg: &CipherConfig, block: &[u8]) -> Result<Vec<u8>, CryptoError> {
    let len = u32::from_le_bytes(block[..LEN_PREFIX].try_into().unwrap()) as usize;
    if len > cfg.max_plaintext() {
        return Err(CryptoError::DecryptFailed);
    }
    Ok(block[LEN_PREFIX..LEN_PREFIX + len].to_vec())
}

fn apply_keystream(domain: &str, key: &[u8], nonce: &[u8], block: &mut [u8]) {
    for (counter, chunk) in block.chunks_mut(DIGEST_LEN).enumerate() {
        let ks = digest(domain, &[key, nonce, &(counter as u64).to_le_bytes()]);
        for (b, k) in chunk.iter_mut().zip(ks.iter()) {
            *b ^= k;
        }
    }
}

fn seal(
    cfg: &CipherConfig,
    ks_domain: &str,
    mac_domain: &str,
    key: &[u8],
    nonce: [u8; NONCE_LEN],
    m: &[u8],
) -> Result<Vec<u8>, CryptoError> {
    let mut body = pad_block(cfg, m)?;
    apply_keystream(ks_domain, key, &nonce, &mut body);
    let tag = digest(mac_domain, &[key, &nonce, &body]);
    let mut out = Vec::with_capacity(cfg.ciphertext_len());
    out.extend_from_slice(&nonce);
    out.extend_from_slice(&body);
    out.extend_from_slice(&tag);
    Ok(out)
}

fn open(
    cfg: &CipherConfig,
    ks_domain: &str,
    mac_domain: &str,
    key: &[u8],
    c: &[u8],
) -> Result<Vec<u8>, CryptoError> {
    if c.len() != cfg.ciphertext_len() {
        return Err(CryptoError::DecryptFailed);
    }
    let (nonce, rest) = c.split_at(NONCE_LEN);
    let (body, tag) = rest.split_at(cfg.block_len);
    let expected = digest(mac_domain, &[key, nonce, body]);
    if expected != tag {
        return Err(CryptoError::DecryptFailed);
    }
    let mut block = body.to_vec();
    apply_keystream(ks_domain, key, nonce, &mut block);
    unpad_block(cfg, &block)
}

/// Probabilistic public-key encryption. Distinct `randomness` values yield
/// distinct ciphertexts for the same plaintext; every ciphertext has the
/// fixed length [`CipherConfig::ciphertext_len`].
pub fn pke_encrypt(
    cfg: &CipherConfig,
    pk: &PublicKey,
    m: &[u8],
    randomness: &[u8],
) -> Result<Ciphertext, CryptoError> {
    let nonce: [u8; NONCE_LEN] = digest("pke-nonce", &[randomness])[..NONCE_LEN]
        .try_into()
        .unwrap();
    seal(cfg, "pke-ks", "pke-mac", &pk.0, nonce, m).map(Ciphertext)
}

/// Convenience wrapper drawing the encryption randomness from `rng`.
pub fn pke_encrypt_rng(
    cfg: &CipherConfig,
    pk: &PublicKey,
    m: &[u8],
    rng: &mut impl RngCore,
) -> Result<Ciphertext, CryptoError> {
    let mut randomness = [0u8; NONCE_LEN];
    rng.fill_bytes(&mut randomness);
    pke_encrypt(cfg, pk, m, &randomness)
}

/// Decrypts a ciphertext produced under the matching public key, stripping
/// the padding. Wrong keys, truncation and tampering fail detectably; no
/// unauthenticated bytes are ever returned.
pub fn pke_decrypt(
    cfg: &CipherConfig,
    sk: &SecretKey,
    c: &Ciphertext,
) -> Result<Vec<u8>, CryptoError> {
    let pk = digest("pk-derive", &[&sk.0]);
    open(cfg, "pke-ks", "pke-mac", &pk, &c.0)
}

/// Deterministic authenticated symmetric encryption under `k`. The nonce is
/// derived from the key and message, so equal `(k, m)` pairs produce equal
/// ciphertexts; the output is padded to the session block length.
pub fn sym_encrypt(cfg: &CipherConfig, k: &SymKey, m: &[u8]) -> Result<Vec<u8>, CryptoError> {
    let nonce: [u8; NONCE_LEN] = digest("sym-nonce", &[&k.0, m])[..NONCE_LEN]
        .try_into()
        .unwrap();
    seal(cfg, "sym-ks", "sym-mac", &k.0, nonce, m)
}

/// Decrypts an authenticated symmetric ciphertext; wrong keys fail detectably.
pub fn sym_decrypt(cfg: &CipherConfig, k: &SymKey, c: &[u8]) -> Result<Vec<u8>, CryptoError> {
    open(cfg, "sym-ks", "sym-mac", &k.0, c)
}

/// Signs `m`, binding the tag to the signer's key pair and the exact message
/// bytes. Simulation-grade: the tag is a domain-keyed digest, honest peers
/// only ever sign with their own key pair.
pub fn sign(kp: &KeyPair, signer: &Pseudonym, m: &[u8]) -> Signature {
    Signature {
        signer: signer.clone(),
        sig: digest("sig", &[&kp.public.0, m]),
    }
}

/// True iff `sig` was produced over exactly `m` by the key pair matching `pk`.
pub fn verify(pk: &PublicKey, m: &[u8], sig: &Signature) -> bool {
    sig.sig == digest("sig", &[&pk.0, m])
}
