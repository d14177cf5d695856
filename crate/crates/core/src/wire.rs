//! Registration request/reply codec and extension chains.
//!
//! Layouts (all multi-octet integers big-endian):
//!
//! ```text
//! RRQ   type=1 | flags | lifetime(2) | home(4) | ha(4) | coa(4) | identification(8)   24 octets
//! RRP   type=3 | code  | lifetime(2) | home(4) | ha(4) | identification(8)            20 octets
//!
//! short extension       type | length | payload
//! MHAE/MFAE/FHAE        type | length=4+n | SPI(4) | authenticator(n)
//! GNAE (generalized)    type | subtype | length(2)=4+n | SPI(4) | authenticator(n)
//! ```
//!
//! Authentication extensions protect everything that precedes them plus
//! their own header up to and including the SPI; see [`protected_span`].

use std::fmt;
use std::net::Ipv4Addr;

use thiserror::Error;

pub const RRQ_TYPE: u8 = 1;
pub const RRP_TYPE: u8 = 3;
pub const RRQ_FIXED_LEN: usize = 24;
pub const RRP_FIXED_LEN: usize = 20;

pub const MHAE_TYPE: u8 = 32;
pub const MFAE_TYPE: u8 = 33;
pub const FHAE_TYPE: u8 = 34;
pub const GNAE_TYPE: u8 = 36;

/// GNAE subtype for Mobile Node to AAA authentication.
pub const GNAE_SUBTYPE_MN_AAA: u8 = 1;

const SPI_LEN: usize = 4;

#[derive(Error, Debug, Clone, PartialEq, Eq)]
pub enum WireError {
    #[error("truncated at offset {offset}: need {needed} more octets")]
    Truncated { offset: usize, needed: usize },
    #[error("unknown message type {0}")]
    UnknownMessageType(u8),
    #[error("extension type {ext_type} payload of {len} octets exceeds its length field")]
    OversizeExtension { ext_type: u8, len: usize },
    #[error("extension ordering violation: {0}")]
    OrderingViolation(&'static str),
    #[error("extension {0} is not an authentication extension")]
    NotAuthExtension(usize),
    #[error("no extension at index {0}")]
    NoSuchExtension(usize),
    #[error("malformed extension type {ext_type} at offset {offset}")]
    MalformedExtension { ext_type: u8, offset: usize },
}

/// RRQ flag octet. Bit order S,B,D,M,G,r,T,x from most to least significant.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Flags(pub u8);

impl Flags {
    pub const S: Flags = Flags(0x80);
    pub const B: Flags = Flags(0x40);
    pub const D: Flags = Flags(0x20);
    pub const M: Flags = Flags(0x10);
    pub const G: Flags = Flags(0x08);
    pub const R: Flags = Flags(0x04);
    pub const T: Flags = Flags(0x02);
    pub const X: Flags = Flags(0x01);

    const NAMES: [(Flags, char); 8] = [
        (Flags::S, 'S'),
        (Flags::B, 'B'),
        (Flags::D, 'D'),
        (Flags::M, 'M'),
        (Flags::G, 'G'),
        (Flags::R, 'r'),
        (Flags::T, 'T'),
        (Flags::X, 'x'),
    ];

    pub const fn empty() -> Self {
        Flags(0)
    }

    pub const fn bits(self) -> u8 {
        self.0
    }

    pub const fn contains(self, other: Flags) -> bool {
        self.0 & other.0 == other.0
    }

    pub fn insert(&mut self, other: Flags) {
        self.0 |= other.0;
    }
}

impl std::ops::BitOr for Flags {
    type Output = Flags;
    fn bitor(self, rhs: Flags) -> Flags {
        Flags(self.0 | rhs.0)
    }
}

impl fmt::Display for Flags {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0 == 0 {
            return f.write_str("-");
        }
        for (flag, c) in Self::NAMES {
            if self.contains(flag) {
                write!(f, "{c}")?;
            }
        }
        Ok(())
    }
}

impl fmt::Debug for Flags {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Flags({self})")
    }
}

/// Registration request. A lifetime of zero asks for deregistration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegistrationRequest {
    pub flags: Flags,
    pub lifetime: u16,
    pub home_address: Ipv4Addr,
    pub home_agent: Ipv4Addr,
    pub care_of_address: Ipv4Addr,
    pub identification: u64,
}

impl RegistrationRequest {
    pub fn is_deregistration(&self) -> bool {
        self.lifetime == 0
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegistrationReply {
    pub code: u8,
    pub lifetime: u16,
    pub home_address: Ipv4Addr,
    pub home_agent: Ipv4Addr,
    pub identification: u64,
}

impl RegistrationReply {
    /// Codes 0 and 1 accept the registration.
    pub fn is_accepted(&self) -> bool {
        self.code <= 1
    }

    pub fn is_denied(&self) -> bool {
        self.code >= 64
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Body {
    Request(RegistrationRequest),
    Reply(RegistrationReply),
}

impl Body {
    pub fn fixed_len(&self) -> usize {
        match self {
            Body::Request(_) => RRQ_FIXED_LEN,
            Body::Reply(_) => RRP_FIXED_LEN,
        }
    }

    pub fn home_address(&self) -> Ipv4Addr {
        match self {
            Body::Request(r) => r.home_address,
            Body::Reply(r) => r.home_address,
        }
    }

    pub fn home_agent(&self) -> Ipv4Addr {
        match self {
            Body::Request(r) => r.home_agent,
            Body::Reply(r) => r.home_agent,
        }
    }

    pub fn identification(&self) -> u64 {
        match self {
            Body::Request(r) => r.identification,
            Body::Reply(r) => r.identification,
        }
    }

    pub fn lifetime(&self) -> u16 {
        match self {
            Body::Request(r) => r.lifetime,
            Body::Reply(r) => r.lifetime,
        }
    }

    fn encode_into(&self, out: &mut Vec<u8>) {
        match self {
            Body::Request(r) => {
                out.push(RRQ_TYPE);
                out.push(r.flags.bits());
                out.extend_from_slice(&r.lifetime.to_be_bytes());
                out.extend_from_slice(&r.home_address.octets());
                out.extend_from_slice(&r.home_agent.octets());
                out.extend_from_slice(&r.care_of_address.octets());
                out.extend_from_slice(&r.identification.to_be_bytes());
            }
            Body::Reply(r) => {
                out.push(RRP_TYPE);
                out.push(r.code);
                out.extend_from_slice(&r.lifetime.to_be_bytes());
                out.extend_from_slice(&r.home_address.octets());
                out.extend_from_slice(&r.home_agent.octets());
                out.extend_from_slice(&r.identification.to_be_bytes());
            }
        }
    }
}

/// The four authentication extension types.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AuthKind {
    /// Mobile Node - Home Agent.
    Mhae,
    /// Mobile Node - Foreign Agent.
    Mfae,
    /// Foreign Agent - Home Agent.
    Fhae,
    /// Generalized, subtyped.
    Gnae,
}

impl AuthKind {
    pub const ALL: [AuthKind; 4] = [AuthKind::Mhae, AuthKind::Mfae, AuthKind::Fhae, AuthKind::Gnae];

    pub const fn type_number(self) -> u8 {
        match self {
            AuthKind::Mhae => MHAE_TYPE,
            AuthKind::Mfae => MFAE_TYPE,
            AuthKind::Fhae => FHAE_TYPE,
            AuthKind::Gnae => GNAE_TYPE,
        }
    }

    pub fn from_type_number(t: u8) -> Option<Self> {
        match t {
            MHAE_TYPE => Some(AuthKind::Mhae),
            MFAE_TYPE => Some(AuthKind::Mfae),
            FHAE_TYPE => Some(AuthKind::Fhae),
            GNAE_TYPE => Some(AuthKind::Gnae),
            _ => None,
        }
    }

    pub const fn name(self) -> &'static str {
        match self {
            AuthKind::Mhae => "MHAE",
            AuthKind::Mfae => "MFAE",
            AuthKind::Fhae => "FHAE",
            AuthKind::Gnae => "GNAE",
        }
    }

    /// Generalized extensions carry a subtype octet and a 16-bit length.
    pub const fn is_generalized(self) -> bool {
        matches!(self, AuthKind::Gnae)
    }

    /// Octets from the start of the extension through the end of the SPI.
    pub const fn header_len(self) -> usize {
        if self.is_generalized() {
            1 + 1 + 2 + SPI_LEN
        } else {
            1 + 1 + SPI_LEN
        }
    }
}

impl fmt::Display for AuthKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuthExtension {
    pub kind: AuthKind,
    /// Present only for [`AuthKind::Gnae`].
    pub subtype: Option<u8>,
    pub spi: u32,
    pub authenticator: Vec<u8>,
}

impl AuthExtension {
    pub fn new(kind: AuthKind, spi: u32, authenticator: Vec<u8>) -> Self {
        let subtype = kind.is_generalized().then_some(GNAE_SUBTYPE_MN_AAA);
        AuthExtension {
            kind,
            subtype,
            spi,
            authenticator,
        }
    }

    fn encoded_len(&self) -> usize {
        self.kind.header_len() + self.authenticator.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Extension {
    Auth(AuthExtension),
    /// Any short-format extension this codec does not interpret.
    Opaque { ext_type: u8, payload: Vec<u8> },
}

impl Extension {
    pub fn type_number(&self) -> u8 {
        match self {
            Extension::Auth(a) => a.kind.type_number(),
            Extension::Opaque { ext_type, .. } => *ext_type,
        }
    }

    pub fn as_auth(&self) -> Option<&AuthExtension> {
        match self {
            Extension::Auth(a) => Some(a),
            Extension::Opaque { .. } => None,
        }
    }

    pub fn auth_kind(&self) -> Option<AuthKind> {
        self.as_auth().map(|a| a.kind)
    }

    pub fn encoded_len(&self) -> usize {
        match self {
            Extension::Auth(a) => a.encoded_len(),
            Extension::Opaque { payload, .. } => 2 + payload.len(),
        }
    }

    fn check_size(&self) -> Result<(), WireError> {
        let (limit, len) = match self {
            Extension::Auth(a) if a.kind.is_generalized() => (u16::MAX as usize, SPI_LEN + a.authenticator.len()),
            Extension::Auth(a) => (u8::MAX as usize, SPI_LEN + a.authenticator.len()),
            Extension::Opaque { payload, .. } => (u8::MAX as usize, payload.len()),
        };
        if len > limit {
            return Err(WireError::OversizeExtension {
                ext_type: self.type_number(),
                len,
            });
        }
        Ok(())
    }

    fn encode_into(&self, out: &mut Vec<u8>) {
        match self {
            Extension::Auth(a) => {
                out.push(a.kind.type_number());
                let len = SPI_LEN + a.authenticator.len();
                if a.kind.is_generalized() {
                    out.push(a.subtype.unwrap_or(GNAE_SUBTYPE_MN_AAA));
                    out.extend_from_slice(&(len as u16).to_be_bytes());
                } else {
                    out.push(len as u8);
                }
                out.extend_from_slice(&a.spi.to_be_bytes());
                out.extend_from_slice(&a.authenticator);
            }
            Extension::Opaque { ext_type, payload } => {
                out.push(*ext_type);
                out.push(payload.len() as u8);
                out.extend_from_slice(payload);
            }
        }
    }
}

/// A registration request or reply with its ordered extension chain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegistrationMessage {
    pub body: Body,
    pub extensions: Vec<Extension>,
}

impl RegistrationMessage {
    pub fn request(rrq: RegistrationRequest) -> Self {
        RegistrationMessage {
            body: Body::Request(rrq),
            extensions: Vec::new(),
        }
    }

    pub fn reply(rrp: RegistrationReply) -> Self {
        RegistrationMessage {
            body: Body::Reply(rrp),
            extensions: Vec::new(),
        }
    }

    pub fn as_request(&self) -> Option<&RegistrationRequest> {
        match &self.body {
            Body::Request(r) => Some(r),
            Body::Reply(_) => None,
        }
    }

    pub fn as_reply(&self) -> Option<&RegistrationReply> {
        match &self.body {
            Body::Reply(r) => Some(r),
            Body::Request(_) => None,
        }
    }

    /// Index of the last extension of the given authentication kind.
    pub fn last_auth_index(&self, kind: AuthKind) -> Option<usize> {
        self.extensions.iter().rposition(|e| e.auth_kind() == Some(kind))
    }

    pub fn auth_extension(&self, kind: AuthKind) -> Option<&AuthExtension> {
        self.last_auth_index(kind).and_then(|i| self.extensions[i].as_auth())
    }

    /// Offset of extension `index` within the encoded message.
    pub fn extension_offset(&self, index: usize) -> usize {
        self.body.fixed_len()
            + self.extensions[..index.min(self.extensions.len())]
                .iter()
                .map(Extension::encoded_len)
                .sum::<usize>()
    }

    pub fn encoded_len(&self) -> usize {
        self.extension_offset(self.extensions.len())
    }

    /// Short comma-separated list of extension names, for traces.
    pub fn extension_summary(&self) -> String {
        if self.extensions.is_empty() {
            return "-".to_string();
        }
        self.extensions
            .iter()
            .map(|e| match e {
                Extension::Auth(a) => a.kind.name().to_string(),
                Extension::Opaque { ext_type, .. } => format!("EXT{ext_type}"),
            })
            .collect::<Vec<_>>()
            .join(",")
    }
}

fn check_ordering(extensions: &[Extension]) -> Result<(), WireError> {
    let mut seen_mhae = false;
    let mut seen_fhae = false;
    for ext in extensions {
        match ext.auth_kind() {
            Some(AuthKind::Mhae) if seen_mhae => return Err(WireError::OrderingViolation("duplicate MHAE")),
            Some(AuthKind::Mhae) if seen_fhae => return Err(WireError::OrderingViolation("MHAE after FHAE")),
            Some(AuthKind::Mhae) => seen_mhae = true,
            Some(AuthKind::Fhae) => seen_fhae = true,
            _ => {}
        }
    }
    Ok(())
}

pub fn encode_message(msg: &RegistrationMessage) -> Result<Vec<u8>, WireError> {
    check_ordering(&msg.extensions)?;
    for ext in &msg.extensions {
        ext.check_size()?;
    }
    let mut out = Vec::with_capacity(msg.encoded_len());
    msg.body.encode_into(&mut out);
    for ext in &msg.extensions {
        ext.encode_into(&mut out);
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        let remaining = self.buf.len() - self.pos;
        if remaining < n {
            return Err(WireError::Truncated {
                offset: self.pos,
                needed: n - remaining,
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, WireError> {
        let b = self.take(2)?;
        Ok(u16::from_be_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32, WireError> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u64(&mut self) -> Result<u64, WireError> {
        let b = self.take(8)?;
        let mut a = [0u8; 8];
        a.copy_from_slice(b);
        Ok(u64::from_be_bytes(a))
    }

    fn addr(&mut self) -> Result<Ipv4Addr, WireError> {
        Ok(Ipv4Addr::from(self.u32()?))
    }

    fn is_empty(&self) -> bool {
        self.pos >= self.buf.len()
    }
}

fn decode_body(r: &mut Reader<'_>) -> Result<Body, WireError> {
    // Check the type octet before the length so an unknown type is
    // reported as such even on short input.
    let msg_type = *r.buf.first().ok_or(WireError::Truncated { offset: 0, needed: 1 })?;
    let fixed = match msg_type {
        RRQ_TYPE => RRQ_FIXED_LEN,
        RRP_TYPE => RRP_FIXED_LEN,
        other => return Err(WireError::UnknownMessageType(other)),
    };
    if r.buf.len() < fixed {
        return Err(WireError::Truncated {
            offset: r.buf.len(),
            needed: fixed - r.buf.len(),
        });
    }
    r.u8()?;
    Ok(if msg_type == RRQ_TYPE {
        Body::Request(RegistrationRequest {
            flags: Flags(r.u8()?),
            lifetime: r.u16()?,
            home_address: r.addr()?,
            home_agent: r.addr()?,
            care_of_address: r.addr()?,
            identification: r.u64()?,
        })
    } else {
        Body::Reply(RegistrationReply {
            code: r.u8()?,
            lifetime: r.u16()?,
            home_address: r.addr()?,
            home_agent: r.addr()?,
            identification: r.u64()?,
        })
    })
}

fn decode_extension(r: &mut Reader<'_>) -> Result<Extension, WireError> {
    let start = r.pos;
    let ext_type = r.u8()?;
    let kind = AuthKind::from_type_number(ext_type);
    if kind == Some(AuthKind::Gnae) {
        let subtype = r.u8()?;
        let len = r.u16()? as usize;
        let mut body = Reader { buf: r.take(len)?, pos: 0 };
        let spi = body.u32().map_err(|_| WireError::MalformedExtension { ext_type, offset: start })?;
        return Ok(Extension::Auth(AuthExtension {
            kind: AuthKind::Gnae,
            subtype: Some(subtype),
            spi,
            authenticator: body.buf[SPI_LEN..].to_vec(),
        }));
    }
    let len = r.u8()? as usize;
    let payload = r.take(len)?;
    match kind {
        Some(kind) => {
            if payload.len() < SPI_LEN {
                return Err(WireError::MalformedExtension { ext_type, offset: start });
            }
            Ok(Extension::Auth(AuthExtension {
                kind,
                subtype: None,
                spi: u32::from_be_bytes([payload[0], payload[1], payload[2], payload[3]]),
                authenticator: payload[SPI_LEN..].to_vec(),
            }))
        }
        None => Ok(Extension::Opaque {
            ext_type,
            payload: payload.to_vec(),
        }),
    }
}

pub fn decode_message(raw: &[u8]) -> Result<RegistrationMessage, WireError> {
    let mut r = Reader { buf: raw, pos: 0 };
    let body = decode_body(&mut r)?;
    let mut extensions = Vec::new();
    while !r.is_empty() {
        extensions.push(decode_extension(&mut r)?);
    }
    check_ordering(&extensions)?;
    Ok(RegistrationMessage { body, extensions })
}

/// Appends `ext` as the last element of the chain.
pub fn append_extension(mut msg: RegistrationMessage, ext: Extension) -> Result<RegistrationMessage, WireError> {
    if ext.auth_kind() == Some(AuthKind::Mhae) {
        for prior in &msg.extensions {
            match prior.auth_kind() {
                Some(AuthKind::Fhae) => return Err(WireError::OrderingViolation("MHAE after FHAE")),
                Some(AuthKind::Mhae) => return Err(WireError::OrderingViolation("duplicate MHAE")),
                _ => {}
            }
        }
    }
    ext.check_size()?;
    msg.extensions.push(ext);
    Ok(msg)
}

/// Octets covered by the authenticator of the extension at `ext_index`:
/// the fixed part, every earlier extension in full, and this extension's
/// header through its SPI. The authenticator itself is excluded.
pub fn protected_span(msg: &RegistrationMessage, ext_index: usize) -> Result<Vec<u8>, WireError> {
    let ext = msg.extensions.get(ext_index).ok_or(WireError::NoSuchExtension(ext_index))?;
    let auth = ext.as_auth().ok_or(WireError::NotAuthExtension(ext_index))?;
    let prefix = RegistrationMessage {
        body: msg.body.clone(),
        extensions: msg.extensions[..=ext_index].to_vec(),
    };
    let mut bytes = encode_message(&prefix)?;
    bytes.truncate(bytes.len() - auth.authenticator.len());
    Ok(bytes)
}
