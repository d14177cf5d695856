use std::collections::BTreeMap;
use std::net::Ipv4Addr;

use super::{codes, id_low};
use crate::secassoc::{self, PeerPair, RolePair, SecurityAssociationStore, VerifyResult};
use crate::time::SimTime;
use crate::topology::NodeId;
use crate::wire::{self, AuthKind, RegistrationMessage, RegistrationReply};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VisitorEntry {
    pub home_address: Ipv4Addr,
    pub home_agent: Ipv4Addr,
    pub mn_link: NodeId,
    pub expires_at: SimTime,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct PendingVisitor {
    home_agent: Ipv4Addr,
    mn_link: NodeId,
    identification: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum DropReason {
    Malformed,
    FaAuthFailed,
    UnknownVisitor,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RelayOutcome {
    ToHomeAgent { home_agent: Ipv4Addr, msg: RegistrationMessage },
    ToMobile { link: NodeId, msg: RegistrationMessage },
    /// Denied locally. `reply` is absent when the request could not be
    /// parsed far enough to address one.
    Deny { code: u8, link: NodeId, reply: Option<RegistrationMessage> },
    Drop(DropReason),
}

/// Foreign agent relay state and visitor list.
#[derive(Debug, Clone)]
pub struct ForeignAgent {
    address: Ipv4Addr,
    care_of_address: Ipv4Addr,
    visitors: BTreeMap<Ipv4Addr, VisitorEntry>,
    pending: BTreeMap<Ipv4Addr, PendingVisitor>,
}

impl ForeignAgent {
    pub fn new(address: Ipv4Addr, care_of_address: Ipv4Addr) -> Self {
        ForeignAgent {
            address,
            care_of_address,
            visitors: BTreeMap::new(),
            pending: BTreeMap::new(),
        }
    }

    pub fn address(&self) -> Ipv4Addr {
        self.address
    }

    pub fn care_of_address(&self) -> Ipv4Addr {
        self.care_of_address
    }

    pub fn visitors(&self) -> &BTreeMap<Ipv4Addr, VisitorEntry> {
        &self.visitors
    }

    pub fn visitor(&self, home: Ipv4Addr) -> Option<&VisitorEntry> {
        self.visitors.get(&home)
    }

    /// Link of a visitor whose registration is still in flight.
    pub fn pending_link(&self, home: Ipv4Addr) -> Option<NodeId> {
        self.pending.get(&home).map(|p| p.mn_link)
    }

    /// Removes and returns every visitor entry with `expires_at <= now`.
    pub fn expire_bindings(&mut self, now: SimTime) -> Vec<VisitorEntry> {
        let expired: Vec<Ipv4Addr> = self.visitors.values().filter(|v| v.expires_at <= now).map(|v| v.home_address).collect();
        expired.into_iter().filter_map(|home| self.visitors.remove(&home)).collect()
    }

    fn fa_ha_peer(&self, home_agent: Ipv4Addr) -> PeerPair {
        PeerPair::new(RolePair::FaHa, self.address, home_agent)
    }
}

fn local_denial(msg: &RegistrationMessage, code: u8) -> Option<RegistrationMessage> {
    let rrq = msg.as_request()?;
    Some(RegistrationMessage::reply(RegistrationReply {
        code,
        lifetime: 0,
        home_address: rrq.home_address,
        home_agent: rrq.home_agent,
        identification: rrq.identification,
    }))
}

/// Relays a request received from a visiting mobile node on `mn_link`.
/// The MFAE is checked only when an MN-FA association is configured; the
/// forwarded request gets an FHAE when an FA-HA association is configured.
pub fn fa_relay_rrq(
    fa: &mut ForeignAgent,
    raw: &[u8],
    mn_link: NodeId,
    _now: SimTime,
    store: &SecurityAssociationStore,
) -> RelayOutcome {
    let poorly_formed = |reply| RelayOutcome::Deny {
        code: codes::FA_POORLY_FORMED,
        link: mn_link,
        reply,
    };
    let msg = match wire::decode_message(raw) {
        Ok(m) => m,
        Err(_) => return poorly_formed(None),
    };
    let Some(rrq) = msg.as_request().cloned() else {
        return poorly_formed(None);
    };

    let mn_fa = PeerPair::new(RolePair::MnFa, rrq.home_address, fa.address);
    if store.has_association(&mn_fa) && secassoc::verify(&msg, store, &mn_fa, AuthKind::Mfae) != VerifyResult::Accepted {
        return RelayOutcome::Deny {
            code: codes::FA_MN_AUTH_FAILED,
            link: mn_link,
            reply: local_denial(&msg, codes::FA_MN_AUTH_FAILED),
        };
    }

    let forwarded = match store.primary_context(&fa.fa_ha_peer(rrq.home_agent)) {
        Some(ctx) => match secassoc::sign(msg.clone(), ctx, AuthKind::Fhae) {
            Ok(signed) => signed,
            Err(_) => return poorly_formed(local_denial(&msg, codes::FA_POORLY_FORMED)),
        },
        None => msg,
    };
    fa.pending.insert(
        rrq.home_address,
        PendingVisitor {
            home_agent: rrq.home_agent,
            mn_link,
            identification: rrq.identification,
        },
    );
    RelayOutcome::ToHomeAgent {
        home_agent: rrq.home_agent,
        msg: forwarded,
    }
}

/// Relays a reply from the home agent back to the visitor, stripping the
/// FHAE once verified.
pub fn fa_relay_rrp(fa: &mut ForeignAgent, raw: &[u8], now: SimTime, store: &SecurityAssociationStore) -> RelayOutcome {
    let Ok(mut msg) = wire::decode_message(raw) else {
        return RelayOutcome::Drop(DropReason::Malformed);
    };
    let Some(rrp) = msg.as_reply().cloned() else {
        return RelayOutcome::Drop(DropReason::Malformed);
    };

    let peer = fa.fa_ha_peer(rrp.home_agent);
    if store.has_association(&peer) {
        if secassoc::verify(&msg, store, &peer, AuthKind::Fhae) != VerifyResult::Accepted {
            return RelayOutcome::Drop(DropReason::FaAuthFailed);
        }
        if let Some(i) = msg.last_auth_index(AuthKind::Fhae) {
            msg.extensions.truncate(i);
        }
    }

    let Some(pending) = fa.pending.get(&rrp.home_address) else {
        return RelayOutcome::Drop(DropReason::UnknownVisitor);
    };
    if id_low(pending.identification) != id_low(rrp.identification) {
        return RelayOutcome::Drop(DropReason::UnknownVisitor);
    }
    let pending = fa.pending.remove(&rrp.home_address).expect("checked above");
    if rrp.is_accepted() {
        if rrp.lifetime == 0 {
            fa.visitors.remove(&rrp.home_address);
        } else {
            fa.visitors.insert(
                rrp.home_address,
                VisitorEntry {
                    home_address: rrp.home_address,
                    home_agent: pending.home_agent,
                    mn_link: pending.mn_link,
                    expires_at: now + SimTime::from_secs(u64::from(rrp.lifetime)),
                },
            );
        }
    }
    RelayOutcome::ToMobile {
        link: pending.mn_link,
        msg,
    }
}
