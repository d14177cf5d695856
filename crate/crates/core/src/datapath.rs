//! Packet forwarding: home agent interception and IP-in-IP tunneling to the
//! care-of address, foreign agent decapsulation, and ordinary next-hop
//! routing for everything else. Traffic from the mobile node goes direct,
//! so the two directions of a conversation take different paths.

use std::collections::BTreeMap;
use std::fmt;
use std::net::Ipv4Addr;

use thiserror::Error;

use crate::agents::{MobilityBinding, VisitorEntry};
use crate::time::SimTime;
use crate::topology::{NodeId, Role};

pub const IPIP_PROTOCOL: u8 = 4;
pub const UDP_PROTOCOL: u8 = 17;
const IPV4_HEADER_LEN: usize = 20;
const DEFAULT_TTL: u8 = 64;

#[derive(Error, Debug, Clone, PartialEq, Eq)]
pub enum PacketError {
    #[error("packet is already tunneled")]
    NestedTunnel,
    #[error("packet is not tunneled")]
    NotTunneled,
    #[error("truncated IPv4 packet: {0} octets")]
    Truncated(usize),
    #[error("not an IPv4 header without options")]
    BadHeader,
    #[error("header checksum mismatch")]
    BadChecksum,
    #[error("payload of {0} octets too large for one packet")]
    TooLarge(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HopOp {
    Forward,
    Encapsulate,
    Decapsulate,
    Deliver,
}

/// One entry of a packet's path audit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Hop {
    pub node: NodeId,
    pub op: HopOp,
}

/// An IPv4 datagram. `hop_trace` is simulator bookkeeping and never part of
/// the encoded form.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IpPacket {
    pub src: Ipv4Addr,
    pub dst: Ipv4Addr,
    pub protocol: u8,
    pub hop_trace: Vec<Hop>,
    pub payload: Vec<u8>,
}

impl IpPacket {
    pub fn new(src: Ipv4Addr, dst: Ipv4Addr, protocol: u8, payload: Vec<u8>) -> Self {
        IpPacket {
            src,
            dst,
            protocol,
            hop_trace: Vec::new(),
            payload,
        }
    }

    pub fn is_tunneled(&self) -> bool {
        self.protocol == IPIP_PROTOCOL
    }

    pub fn visited(&self, node: NodeId) -> bool {
        self.hop_trace.iter().any(|h| h.node == node)
    }

    pub fn count_ops(&self, op: HopOp) -> usize {
        self.hop_trace.iter().filter(|h| h.op == op).count()
    }

    /// Minimal IPv4 header (no options) followed by the payload.
    pub fn encode(&self) -> Result<Vec<u8>, PacketError> {
        let total = IPV4_HEADER_LEN + self.payload.len();
        let total16 = u16::try_from(total).map_err(|_| PacketError::TooLarge(self.payload.len()))?;
        let mut out = Vec::with_capacity(total);
        out.push(0x45);
        out.push(0);
        out.extend_from_slice(&total16.to_be_bytes());
        out.extend_from_slice(&[0, 0, 0, 0]); // id, flags, fragment offset
        out.push(DEFAULT_TTL);
        out.push(self.protocol);
        out.extend_from_slice(&[0, 0]);
        out.extend_from_slice(&self.src.octets());
        out.extend_from_slice(&self.dst.octets());
        let sum = header_checksum(&out);
        out[10..12].copy_from_slice(&sum.to_be_bytes());
        out.extend_from_slice(&self.payload);
        Ok(out)
    }

    pub fn decode(raw: &[u8]) -> Result<IpPacket, PacketError> {
        if raw.len() < IPV4_HEADER_LEN {
            return Err(PacketError::Truncated(raw.len()));
        }
        if raw[0] != 0x45 {
            return Err(PacketError::BadHeader);
        }
        let total = usize::from(u16::from_be_bytes([raw[2], raw[3]]));
        if total < IPV4_HEADER_LEN {
            return Err(PacketError::BadHeader);
        }
        if raw.len() < total {
            return Err(PacketError::Truncated(raw.len()));
        }
        if header_checksum(&raw[..IPV4_HEADER_LEN]) != 0 {
            return Err(PacketError::BadChecksum);
        }
        Ok(IpPacket {
            src: Ipv4Addr::new(raw[12], raw[13], raw[14], raw[15]),
            dst: Ipv4Addr::new(raw[16], raw[17], raw[18], raw[19]),
            protocol: raw[9],
            hop_trace: Vec::new(),
            payload: raw[IPV4_HEADER_LEN..total].to_vec(),
        })
    }
}

/// Ones-complement sum over 16-bit words.
fn header_checksum(header: &[u8]) -> u16 {
    let mut sum: u32 = header.chunks(2).map(|c| u32::from(u16::from_be_bytes([c[0], *c.get(1).unwrap_or(&0)]))).sum();
    while sum > 0xffff {
        sum = (sum & 0xffff) + (sum >> 16);
    }
    !(sum as u16)
}

/// Wraps `pkt` in an outer IP-in-IP header. The hop trace moves to the
/// outer packet.
pub fn encapsulate(pkt: &IpPacket, tunnel_src: Ipv4Addr, tunnel_dst: Ipv4Addr) -> Result<IpPacket, PacketError> {
    if pkt.is_tunneled() {
        return Err(PacketError::NestedTunnel);
    }
    Ok(IpPacket {
        src: tunnel_src,
        dst: tunnel_dst,
        protocol: IPIP_PROTOCOL,
        hop_trace: pkt.hop_trace.clone(),
        payload: pkt.encode()?,
    })
}

/// Recovers the inner packet, carrying over the outer hop trace.
pub fn decapsulate(pkt: &IpPacket) -> Result<IpPacket, PacketError> {
    if !pkt.is_tunneled() {
        return Err(PacketError::NotTunneled);
    }
    let mut inner = IpPacket::decode(&pkt.payload)?;
    inner.hop_trace = pkt.hop_trace.clone();
    Ok(inner)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum DropReason {
    NoRoute,
    /// The binding or visitor entry lapsed while the packet was in flight.
    Expired,
    NestedTunnel,
    Malformed,
    QueueOverflow,
    /// The mobile node left the link before the packet arrived.
    Detached,
    Lost,
}

impl fmt::Display for DropReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DropReason::NoRoute => "no-route",
            DropReason::Expired => "expired",
            DropReason::NestedTunnel => "nested-tunnel",
            DropReason::Malformed => "malformed",
            DropReason::QueueOverflow => "queue-overflow",
            DropReason::Detached => "detached",
            DropReason::Lost => "lost",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForwardAction {
    DeliverLocal,
    Forward(NodeId),
    Encapsulate(Ipv4Addr),
    Decapsulate,
    /// Hold at the home agent until the mobile node registers.
    Queue,
    Drop(DropReason),
}

/// Ordinary IP routing, supplied by whatever owns the topology.
pub trait RouteTable {
    /// Next node from `from` toward `dst`, or `None` when unreachable.
    fn next_hop(&self, from: NodeId, dst: Ipv4Addr) -> Option<NodeId>;
}

/// The forwarding state of one node at one instant.
#[derive(Debug, Clone)]
pub struct NodeView<'a> {
    pub id: NodeId,
    pub role: Role,
    /// Addresses this node accepts as its own.
    pub addresses: &'a [Ipv4Addr],
    pub bindings: Option<&'a BTreeMap<Ipv4Addr, MobilityBinding>>,
    pub visitors: Option<&'a BTreeMap<Ipv4Addr, VisitorEntry>>,
    /// Home addresses a home agent serves.
    pub served_homes: &'a [Ipv4Addr],
    /// Home addresses whose mobile node is between attachments. A home
    /// agent queues their traffic instead of tunneling it.
    pub held: &'a [Ipv4Addr],
    pub now: SimTime,
}

pub fn forward(view: &NodeView<'_>, routes: &dyn RouteTable, pkt: &IpPacket) -> ForwardAction {
    if view.addresses.contains(&pkt.dst) {
        return if pkt.is_tunneled() {
            ForwardAction::Decapsulate
        } else {
            ForwardAction::DeliverLocal
        };
    }
    match view.role {
        Role::HomeAgent => {
            if view.held.contains(&pkt.dst) && !pkt.is_tunneled() {
                return ForwardAction::Queue;
            }
            if let Some(binding) = view.bindings.and_then(|b| b.get(&pkt.dst)) {
                if binding.expires_at <= view.now {
                    return ForwardAction::Drop(DropReason::Expired);
                }
                if pkt.is_tunneled() {
                    return ForwardAction::Drop(DropReason::NestedTunnel);
                }
                return ForwardAction::Encapsulate(binding.care_of_address);
            }
            match routes.next_hop(view.id, pkt.dst) {
                Some(next) => ForwardAction::Forward(next),
                None if view.served_homes.contains(&pkt.dst) => ForwardAction::Queue,
                None => ForwardAction::Drop(DropReason::NoRoute),
            }
        }
        Role::ForeignAgent => {
            if let Some(visitor) = view.visitors.and_then(|v| v.get(&pkt.dst)) {
                return if visitor.expires_at <= view.now {
                    ForwardAction::Drop(DropReason::Expired)
                } else {
                    ForwardAction::Forward(visitor.mn_link)
                };
            }
            next_hop_or_drop(view, routes, pkt)
        }
        _ => next_hop_or_drop(view, routes, pkt),
    }
}

fn next_hop_or_drop(view: &NodeView<'_>, routes: &dyn RouteTable, pkt: &IpPacket) -> ForwardAction {
    routes
        .next_hop(view.id, pkt.dst)
        .map_or(ForwardAction::Drop(DropReason::NoRoute), ForwardAction::Forward)
}
