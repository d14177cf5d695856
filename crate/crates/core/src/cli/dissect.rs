//! Human-readable dump of registration messages and IPv4 packets, with
//! optional authentication verdicts from a keyfile.

use std::fmt::Write as _;
use std::net::Ipv4Addr;

use thiserror::Error;

use crate::datapath::{IpPacket, PacketError, IPIP_PROTOCOL};
use crate::secassoc::{verify_at, KeyEntry, PeerPair, RejectReason, RolePair, SecurityAssociationStore, VerifyResult};
use crate::wire::{self, Body, Extension, RegistrationMessage, WireError};

#[derive(Error, Debug, Clone, PartialEq, Eq)]
pub enum DissectError {
    #[error("bad hex input: {0}")]
    Hex(String),
    #[error("empty input")]
    Empty,
    #[error("registration message: {0}")]
    Wire(#[from] WireError),
    #[error("IPv4 packet: {0}")]
    Packet(#[from] PacketError),
    #[error("keyfile: {0}")]
    Keyfile(String),
}

/// Accepts hex with arbitrary whitespace and an optional `0x` prefix.
pub fn parse_hex(text: &str) -> Result<Vec<u8>, DissectError> {
    let compact: String = text.split_whitespace().collect();
    let digits = compact
        .strip_prefix("0x")
        .or_else(|| compact.strip_prefix("0X"))
        .unwrap_or(&compact);
    if digits.is_empty() {
        return Err(DissectError::Empty);
    }
    hex::decode(digits).map_err(|e| DissectError::Hex(e.to_string()))
}

fn peer_addr(name: &str) -> Result<Ipv4Addr, DissectError> {
    name.parse()
        .map_err(|_| DissectError::Keyfile(format!("peer {name:?} is not an IPv4 address")))
}

/// Role of a keyfile entry without `role=`, judged against the message
/// being checked. Entries unrelated to the message yield `None`.
fn infer_role(a: Ipv4Addr, b: Ipv4Addr, home: Ipv4Addr, ha: Ipv4Addr) -> Option<RolePair> {
    let has = |x| a == x || b == x;
    if has(home) && has(ha) {
        Some(RolePair::MnHa)
    } else if has(ha) {
        Some(RolePair::FaHa)
    } else if has(home) {
        Some(RolePair::MnFa)
    } else {
        None
    }
}

fn build_store(entries: &[KeyEntry], home: Ipv4Addr, ha: Ipv4Addr) -> Result<SecurityAssociationStore, DissectError> {
    let mut store = SecurityAssociationStore::new();
    for e in entries {
        let (a, b) = (peer_addr(&e.peer_a)?, peer_addr(&e.peer_b)?);
        let Some(role) = e.role.or_else(|| infer_role(a, b, home, ha)) else {
            continue;
        };
        store
            .add_context(PeerPair::new(role, a, b), e.context.clone())
            .map_err(|err| DissectError::Keyfile(err.to_string()))?;
    }
    Ok(store)
}

/// Verdict for the extension at `index`. The SPI is looked up first; only
/// a known SPI leads to computing the authenticator.
fn verdict(msg: &RegistrationMessage, index: usize, store: &SecurityAssociationStore) -> VerifyResult {
    let Some(ext) = msg.extensions[index].as_auth() else {
        return VerifyResult::Rejected(RejectReason::MissingExtension);
    };
    let role = RolePair::for_kind(ext.kind);
    let (home, ha) = (msg.body.home_address(), msg.body.home_agent());
    let relevant = |p: &PeerPair| {
        let (x, y) = p.endpoints();
        let has = |a| x == a || y == a;
        p.roles() == role
            && match role {
                RolePair::MnHa => has(home) && has(ha),
                RolePair::FaHa => has(ha),
                RolePair::MnFa | RolePair::MnAaa => has(home),
            }
    };
    let ctx = store
        .peers()
        .filter(|p| relevant(p))
        .find_map(|p| store.lookup(p, ext.spi).ok());
    match ctx {
        Some(ctx) => verify_at(msg, index, ctx),
        None => VerifyResult::Rejected(RejectReason::UnknownSpi),
    }
}

fn describe_message(msg: &RegistrationMessage, out: &mut String) {
    match &msg.body {
        Body::Request(r) => {
            let _ = writeln!(
                out,
                "type=RRQ length={} flags={} lifetime={} home={} ha={} coa={} id=0x{:016x}",
                msg.encoded_len(),
                r.flags,
                r.lifetime,
                r.home_address,
                r.home_agent,
                r.care_of_address,
                r.identification
            );
        }
        Body::Reply(r) => {
            let _ = writeln!(
                out,
                "type=RRP length={} code={} ({}) lifetime={} home={} ha={} id=0x{:016x}",
                msg.encoded_len(),
                r.code,
                crate::agents::codes::describe(r.code),
                r.lifetime,
                r.home_address,
                r.home_agent,
                r.identification
            );
        }
    }
    for (i, ext) in msg.extensions.iter().enumerate() {
        let offset = msg.extension_offset(i);
        match ext {
            Extension::Auth(a) => {
                let subtype = a.subtype.map(|s| format!(" subtype={s}")).unwrap_or_default();
                let _ = writeln!(
                    out,
                    "ext[{i}] {} type={}{subtype} offset={offset} length={} spi={} auth={}",
                    a.kind.name(),
                    a.kind.type_number(),
                    4 + a.authenticator.len(),
                    a.spi,
                    hex::encode(&a.authenticator)
                );
            }
            Extension::Opaque { ext_type, payload } => {
                let _ = writeln!(
                    out,
                    "ext[{i}] type={ext_type} offset={offset} length={} data={}",
                    payload.len(),
                    hex::encode(payload)
                );
            }
        }
    }
}

fn describe_packet(pkt: &IpPacket, depth: usize, out: &mut String) -> Result<(), DissectError> {
    let indent = "  ".repeat(depth);
    let _ = writeln!(
        out,
        "{indent}type=IPv4 src={} dst={} protocol={} payload={}",
        pkt.src,
        pkt.dst,
        pkt.protocol,
        pkt.payload.len()
    );
    if pkt.protocol == IPIP_PROTOCOL {
        let inner = IpPacket::decode(&pkt.payload)?;
        return describe_packet(&inner, depth + 1, out);
    }
    let _ = writeln!(out, "{indent}data={}", hex::encode(&pkt.payload));
    Ok(())
}

/// Renders a full report, or the first decoding error with its offset.
pub fn dissect(raw: &[u8], keys: Option<&[KeyEntry]>) -> Result<String, DissectError> {
    let mut out = String::new();
    match raw.first() {
        None => return Err(DissectError::Empty),
        Some(0x45) => {
            let pkt = IpPacket::decode(raw)?;
            describe_packet(&pkt, 0, &mut out)?;
            return Ok(out);
        }
        Some(_) => {}
    }
    let msg = wire::decode_message(raw)?;
    describe_message(&msg, &mut out);
    if let Some(entries) = keys {
        let store = build_store(entries, msg.body.home_address(), msg.body.home_agent())?;
        for (i, ext) in msg.extensions.iter().enumerate() {
            if let Some(a) = ext.as_auth() {
                let _ = writeln!(out, "{}: {}", a.kind.name(), verdict(&msg, i, &store));
            }
        }
    }
    Ok(out)
}
