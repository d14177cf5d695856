//! Security contexts, per-peer associations, and signing/verification of
//! registration messages with authentication extensions.
//!
//! A [`SecurityContext`] bundles an algorithm, a shared key and a replay
//! protection method, and is named by a 32-bit SPI. The contexts shared with
//! one peer form that peer's association; [`SecurityAssociationStore`] keeps
//! them per [`PeerPair`].

mod keyfile;
mod mac;

use std::collections::BTreeMap;
use std::fmt;
use std::net::Ipv4Addr;

use thiserror::Error;

use crate::wire::{self, AuthExtension, AuthKind, Extension, RegistrationMessage, WireError};

pub use keyfile::{parse_keyfile, parse_sa_fields, KeyEntry, KeyfileError};
pub use mac::{ct_eq, hmac_md5, HMAC_MD5_LEN};

/// SPIs below this value are reserved.
pub const MIN_SPI: u32 = 256;
pub const MIN_HMAC_MD5_KEY_LEN: usize = 16;
/// Default timestamp acceptance window, in seconds either side of the
/// receiver's clock.
pub const DEFAULT_REPLAY_WINDOW: u32 = 7;

#[derive(Error, Debug, Clone, PartialEq, Eq)]
pub enum SecError {
    #[error("SPI {0:?} is neither decimal nor 0x-prefixed hexadecimal")]
    SpiSyntax(String),
    #[error("SPI {0} is in the reserved range 0-255")]
    SpiReserved(u64),
    #[error("SPI {0} does not fit in 32 bits")]
    SpiRange(String),
    #[error("SPI {spi} already configured with a different context for {peer}")]
    DuplicateSpi { peer: PeerPair, spi: u32 },
    #[error("no context with SPI {spi} for {peer}")]
    UnknownSpi { peer: PeerPair, spi: u32 },
    #[error("unsupported algorithm {0}")]
    UnsupportedAlgorithm(String),
    #[error("key of {len} octets is shorter than the {min} required")]
    KeyTooShort { len: usize, min: usize },
    #[error("invalid hex key: {0}")]
    KeyHex(String),
    #[error(transparent)]
    Wire(#[from] WireError),
}

/// Parses an SPI written either in decimal or as `0x`-prefixed hex.
pub fn parse_spi(text: &str) -> Result<u32, SecError> {
    let t = text.trim();
    let (digits, radix) = match t.strip_prefix("0x").or_else(|| t.strip_prefix("0X")) {
        Some(hex) => (hex, 16),
        None => (t, 10),
    };
    if digits.is_empty() || !digits.chars().all(|c| c.is_digit(radix)) {
        return Err(SecError::SpiSyntax(text.to_string()));
    }
    let trimmed = digits.trim_start_matches('0');
    // anything longer than this overflows u64 as well; it is still just out of range
    let max_digits = if radix == 16 { 16 } else { 19 };
    if trimmed.len() > max_digits {
        return Err(SecError::SpiRange(text.to_string()));
    }
    let value = u64::from_str_radix(if trimmed.is_empty() { "0" } else { trimmed }, radix)
        .map_err(|_| SecError::SpiRange(text.to_string()))?;
    if value > u64::from(u32::MAX) {
        return Err(SecError::SpiRange(text.to_string()));
    }
    if value < u64::from(MIN_SPI) {
        return Err(SecError::SpiReserved(value));
    }
    Ok(value as u32)
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Algorithm {
    HmacMd5,
    /// Named but not implemented; signing or verifying with it fails.
    Unsupported(String),
}

impl Algorithm {
    pub fn parse(name: &str) -> Algorithm {
        match name.to_ascii_lowercase().as_str() {
            "hmac-md5" | "hmac_md5" => Algorithm::HmacMd5,
            _ => Algorithm::Unsupported(name.to_string()),
        }
    }

    pub fn mac_len(&self) -> Option<usize> {
        match self {
            Algorithm::HmacMd5 => Some(HMAC_MD5_LEN),
            Algorithm::Unsupported(_) => None,
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Algorithm::HmacMd5 => f.write_str("hmac-md5"),
            Algorithm::Unsupported(name) => f.write_str(name),
        }
    }
}

/// Raw key octets. Any binary value is allowed.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Key(Vec<u8>);

impl Key {
    pub fn new(octets: impl Into<Vec<u8>>) -> Self {
        Key(octets.into())
    }

    pub fn from_hex(text: &str) -> Result<Self, SecError> {
        let t = text.trim();
        let t = t.strip_prefix("0x").unwrap_or(t);
        hex::decode(t).map(Key).map_err(|e| SecError::KeyHex(e.to_string()))
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Debug for Key {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Key(<{} octets>)", self.0.len())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ReplayMethod {
    None,
    Timestamps { window: u32 },
    /// Accepted in configuration; enforced only as identification
    /// monotonicity.
    Nonces,
}

impl Default for ReplayMethod {
    fn default() -> Self {
        ReplayMethod::Timestamps {
            window: DEFAULT_REPLAY_WINDOW,
        }
    }
}

impl fmt::Display for ReplayMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ReplayMethod::None => f.write_str("none"),
            ReplayMethod::Timestamps { window } => write!(f, "timestamp window={window}"),
            ReplayMethod::Nonces => f.write_str("nonce"),
        }
    }
}

/// Algorithm, shared key and replay method, named by an SPI.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SecurityContext {
    spi: u32,
    algorithm: Algorithm,
    key: Key,
    replay: ReplayMethod,
}

impl SecurityContext {
    pub fn new(spi: u32, algorithm: Algorithm, key: Key, replay: ReplayMethod) -> Result<Self, SecError> {
        if spi < MIN_SPI {
            return Err(SecError::SpiReserved(u64::from(spi)));
        }
        if algorithm == Algorithm::HmacMd5 && key.len() < MIN_HMAC_MD5_KEY_LEN {
            return Err(SecError::KeyTooShort {
                len: key.len(),
                min: MIN_HMAC_MD5_KEY_LEN,
            });
        }
        Ok(SecurityContext {
            spi,
            algorithm,
            key,
            replay,
        })
    }

    /// HMAC-MD5 context with the default timestamp replay protection.
    pub fn hmac_md5(spi: u32, key: impl Into<Vec<u8>>) -> Result<Self, SecError> {
        Self::new(spi, Algorithm::HmacMd5, Key::new(key), ReplayMethod::default())
    }

    pub fn spi(&self) -> u32 {
        self.spi
    }

    pub fn algorithm(&self) -> &Algorithm {
        &self.algorithm
    }

    pub fn key(&self) -> &Key {
        &self.key
    }

    pub fn replay(&self) -> ReplayMethod {
        self.replay
    }

    pub fn with_replay(mut self, replay: ReplayMethod) -> Self {
        self.replay = replay;
        self
    }
}

/// Which pair of protocol roles an association serves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RolePair {
    MnHa,
    MnFa,
    FaHa,
    MnAaa,
}

impl RolePair {
    pub fn parse(text: &str) -> Option<RolePair> {
        match text.to_ascii_lowercase().as_str() {
            "mn-ha" => Some(RolePair::MnHa),
            "mn-fa" => Some(RolePair::MnFa),
            "fa-ha" => Some(RolePair::FaHa),
            "mn-aaa" => Some(RolePair::MnAaa),
            _ => None,
        }
    }

    /// The role pair an authentication extension type authenticates.
    pub fn for_kind(kind: AuthKind) -> RolePair {
        match kind {
            AuthKind::Mhae => RolePair::MnHa,
            AuthKind::Mfae => RolePair::MnFa,
            AuthKind::Fhae => RolePair::FaHa,
            AuthKind::Gnae => RolePair::MnAaa,
        }
    }
}

impl fmt::Display for RolePair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RolePair::MnHa => "mn-ha",
            RolePair::MnFa => "mn-fa",
            RolePair::FaHa => "fa-ha",
            RolePair::MnAaa => "mn-aaa",
        })
    }
}

/// Two endpoints and their role pair. Endpoint order does not matter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PeerPair {
    roles: RolePair,
    low: Ipv4Addr,
    high: Ipv4Addr,
}

impl PeerPair {
    pub fn new(roles: RolePair, a: Ipv4Addr, b: Ipv4Addr) -> Self {
        PeerPair {
            roles,
            low: a.min(b),
            high: a.max(b),
        }
    }

    pub fn roles(&self) -> RolePair {
        self.roles
    }

    pub fn endpoints(&self) -> (Ipv4Addr, Ipv4Addr) {
        (self.low, self.high)
    }
}

impl fmt::Display for PeerPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}<->{}", self.roles, self.low, self.high)
    }
}

/// Contexts grouped by peer pair, then by SPI. Contexts are immutable once
/// added.
#[derive(Debug, Clone, Default)]
pub struct SecurityAssociationStore {
    associations: BTreeMap<PeerPair, BTreeMap<u32, SecurityContext>>,
}

impl SecurityAssociationStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds `ctx` under `peer`. Re-adding an identical context is a no-op.
    pub fn add_context(&mut self, peer: PeerPair, ctx: SecurityContext) -> Result<(), SecError> {
        let contexts = self.associations.entry(peer).or_default();
        match contexts.get(&ctx.spi) {
            Some(existing) if *existing == ctx => Ok(()),
            Some(_) => Err(SecError::DuplicateSpi { peer, spi: ctx.spi }),
            None => {
                contexts.insert(ctx.spi, ctx);
                Ok(())
            }
        }
    }

    pub fn lookup(&self, peer: &PeerPair, spi: u32) -> Result<&SecurityContext, SecError> {
        self.associations
            .get(peer)
            .and_then(|contexts| contexts.get(&spi))
            .ok_or(SecError::UnknownSpi { peer: *peer, spi })
    }

    /// The lowest-SPI context shared with `peer`, used when originating
    /// messages.
    pub fn primary_context(&self, peer: &PeerPair) -> Option<&SecurityContext> {
        self.associations.get(peer).and_then(|c| c.values().next())
    }

    pub fn has_association(&self, peer: &PeerPair) -> bool {
        self.associations.get(peer).is_some_and(|c| !c.is_empty())
    }

    pub fn contexts(&self, peer: &PeerPair) -> impl Iterator<Item = &SecurityContext> {
        self.associations.get(peer).into_iter().flat_map(|c| c.values())
    }

    pub fn peers(&self) -> impl Iterator<Item = &PeerPair> {
        self.associations.keys()
    }

    pub fn len(&self) -> usize {
        self.associations.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn compute_authenticator(ctx: &SecurityContext, data: &[u8]) -> Result<Vec<u8>, SecError> {
    match &ctx.algorithm {
        Algorithm::HmacMd5 => Ok(hmac_md5(ctx.key.as_bytes(), data).to_vec()),
        Algorithm::Unsupported(name) => Err(SecError::UnsupportedAlgorithm(name.clone())),
    }
}

/// Appends an authentication extension of `kind` keyed by `ctx`.
pub fn sign(msg: RegistrationMessage, ctx: &SecurityContext, kind: AuthKind) -> Result<RegistrationMessage, SecError> {
    let mac_len = ctx
        .algorithm
        .mac_len()
        .ok_or_else(|| SecError::UnsupportedAlgorithm(ctx.algorithm.to_string()))?;
    let placeholder = AuthExtension::new(kind, ctx.spi, vec![0; mac_len]);
    let mut msg = wire::append_extension(msg, Extension::Auth(placeholder))?;
    let index = msg.extensions.len() - 1;
    let span = wire::protected_span(&msg, index)?;
    let authenticator = compute_authenticator(ctx, &span)?;
    if let Extension::Auth(ext) = &mut msg.extensions[index] {
        ext.authenticator = authenticator;
    }
    Ok(msg)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RejectReason {
    MissingExtension,
    UnknownSpi,
    AuthenticationFailed,
    AlgorithmMismatch,
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum VerifyResult {
    Accepted,
    Rejected(RejectReason),
}

impl VerifyResult {
    pub fn is_accepted(self) -> bool {
        self == VerifyResult::Accepted
    }
}

impl fmt::Display for VerifyResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VerifyResult::Accepted => f.write_str("Accepted"),
            VerifyResult::Rejected(reason) => write!(f, "Rejected({reason})"),
        }
    }
}

/// Verifies the authentication extension at `index` against `ctx`,
/// without an SPI check.
pub fn verify_at(msg: &RegistrationMessage, index: usize, ctx: &SecurityContext) -> VerifyResult {
    let Some(ext) = msg.extensions.get(index).and_then(Extension::as_auth) else {
        return VerifyResult::Rejected(RejectReason::MissingExtension);
    };
    match ctx.algorithm.mac_len() {
        Some(len) if len == ext.authenticator.len() => {}
        _ => return VerifyResult::Rejected(RejectReason::AlgorithmMismatch),
    }
    let Ok(span) = wire::protected_span(msg, index) else {
        return VerifyResult::Rejected(RejectReason::MissingExtension);
    };
    let Ok(expected) = compute_authenticator(ctx, &span) else {
        return VerifyResult::Rejected(RejectReason::AlgorithmMismatch);
    };
    if ct_eq(&expected, &ext.authenticator) {
        VerifyResult::Accepted
    } else {
        VerifyResult::Rejected(RejectReason::AuthenticationFailed)
    }
}

/// Verifies the last extension of `kind`, looking its SPI up under `peer`.
pub fn verify(msg: &RegistrationMessage, store: &SecurityAssociationStore, peer: &PeerPair, kind: AuthKind) -> VerifyResult {
    let Some(index) = msg.last_auth_index(kind) else {
        return VerifyResult::Rejected(RejectReason::MissingExtension);
    };
    let spi = msg.extensions[index].as_auth().map(|a| a.spi).unwrap_or_default();
    match store.lookup(peer, spi) {
        Ok(ctx) => verify_at(msg, index, ctx),
        Err(_) => VerifyResult::Rejected(RejectReason::UnknownSpi),
    }
}

/// Verifies the last extension of `kind` against a single known context.
pub fn verify_with_context(msg: &RegistrationMessage, ctx: &SecurityContext, kind: AuthKind) -> VerifyResult {
    let Some(index) = msg.last_auth_index(kind) else {
        return VerifyResult::Rejected(RejectReason::MissingExtension);
    };
    if msg.extensions[index].as_auth().map(|a| a.spi) != Some(ctx.spi) {
        return VerifyResult::Rejected(RejectReason::UnknownSpi);
    }
    verify_at(msg, index, ctx)
}
