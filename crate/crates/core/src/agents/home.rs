use std::collections::BTreeMap;
use std::net::Ipv4Addr;

use super::{codes, id_high, id_low, make_id};
use crate::secassoc::{
    self, PeerPair, RejectReason, ReplayMethod, RolePair, SecurityAssociationStore, SecurityContext, VerifyResult,
};
use crate::time::SimTime;
use crate::wire::{self, AuthKind, RegistrationMessage, RegistrationReply, RegistrationRequest};

/// Longest lifetime the home agent grants, in seconds.
pub const DEFAULT_MAX_LIFETIME: u16 = 1800;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MobilityBinding {
    pub home_address: Ipv4Addr,
    pub care_of_address: Ipv4Addr,
    pub expires_at: SimTime,
    pub spi_used: u32,
}

/// Last accepted identification per home address.
#[derive(Debug, Clone, Default)]
pub struct ReplayState {
    last: BTreeMap<Ipv4Addr, u64>,
}

impl ReplayState {
    pub fn last_accepted(&self, home: Ipv4Addr) -> Option<u64> {
        self.last.get(&home).copied()
    }

    fn is_fresh(&self, home: Ipv4Addr, identification: u64, method: ReplayMethod, now: SimTime) -> bool {
        if self.last.get(&home).is_some_and(|&last| identification <= last) {
            return false;
        }
        match method {
            ReplayMethod::Timestamps { window } => {
                let skew = i64::from(id_high(identification)) - now.as_secs() as i64;
                skew.unsigned_abs() <= u64::from(window)
            }
            ReplayMethod::None | ReplayMethod::Nonces => true,
        }
    }

    fn record(&mut self, home: Ipv4Addr, identification: u64) {
        self.last.insert(home, identification);
    }
}

/// Every way a request can end at the home agent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HaDecision {
    Registered,
    Deregistered,
    MnAuthFailed(RejectReason),
    FaAuthFailed(RejectReason),
    IdentificationMismatch,
    PoorlyFormed,
}

impl HaDecision {
    pub fn code(self) -> u8 {
        match self {
            HaDecision::Registered | HaDecision::Deregistered => codes::ACCEPTED,
            HaDecision::MnAuthFailed(_) => codes::HA_MN_AUTH_FAILED,
            HaDecision::FaAuthFailed(_) => codes::HA_FA_AUTH_FAILED,
            HaDecision::IdentificationMismatch => codes::IDENTIFICATION_MISMATCH,
            HaDecision::PoorlyFormed => codes::HA_POORLY_FORMED,
        }
    }

    pub fn is_accepted(self) -> bool {
        matches!(self, HaDecision::Registered | HaDecision::Deregistered)
    }

    pub fn reason(self) -> Option<RejectReason> {
        match self {
            HaDecision::MnAuthFailed(r) | HaDecision::FaAuthFailed(r) => Some(r),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HaOutcome {
    pub decision: HaDecision,
    pub reply: RegistrationMessage,
}

#[derive(Debug, Clone)]
pub struct HomeAgent {
    address: Ipv4Addr,
    max_lifetime: u16,
    bindings: BTreeMap<Ipv4Addr, MobilityBinding>,
    replay: ReplayState,
    mutations: u64,
}

impl HomeAgent {
    pub fn new(address: Ipv4Addr) -> Self {
        HomeAgent {
            address,
            max_lifetime: DEFAULT_MAX_LIFETIME,
            bindings: BTreeMap::new(),
            replay: ReplayState::default(),
            mutations: 0,
        }
    }

    pub fn with_max_lifetime(mut self, secs: u16) -> Self {
        self.max_lifetime = secs;
        self
    }

    pub fn address(&self) -> Ipv4Addr {
        self.address
    }

    pub fn bindings(&self) -> &BTreeMap<Ipv4Addr, MobilityBinding> {
        &self.bindings
    }

    pub fn binding(&self, home: Ipv4Addr) -> Option<&MobilityBinding> {
        self.bindings.get(&home)
    }

    pub fn replay_state(&self) -> &ReplayState {
        &self.replay
    }

    /// Number of binding installs, refreshes and deletions performed by
    /// registration processing. Expiry is not counted.
    pub fn binding_mutations(&self) -> u64 {
        self.mutations
    }

    /// Removes and returns every binding with `expires_at <= now`.
    pub fn expire_bindings(&mut self, now: SimTime) -> Vec<MobilityBinding> {
        let expired: Vec<Ipv4Addr> = self.bindings.values().filter(|b| b.expires_at <= now).map(|b| b.home_address).collect();
        expired.into_iter().filter_map(|home| self.bindings.remove(&home)).collect()
    }

    fn reply(&self, code: u8, lifetime: u16, rrq: Option<&RegistrationRequest>, identification: u64) -> RegistrationMessage {
        RegistrationMessage::reply(RegistrationReply {
            code,
            lifetime,
            home_address: rrq.map_or(Ipv4Addr::UNSPECIFIED, |r| r.home_address),
            home_agent: self.address,
            identification,
        })
    }
}

/// Processes a registration request that arrived from `from` (a foreign
/// agent, or the mobile node itself). Returns the reply to send back.
pub fn ha_process_rrq(
    ha: &mut HomeAgent,
    raw: &[u8],
    from: Ipv4Addr,
    now: SimTime,
    store: &SecurityAssociationStore,
) -> HaOutcome {
    let Ok(msg) = wire::decode_message(raw) else {
        return finish(ha, HaDecision::PoorlyFormed, None, None, 0, 0, None, store);
    };
    let Some(rrq) = msg.as_request().cloned() else {
        return finish(ha, HaDecision::PoorlyFormed, None, None, 0, 0, None, store);
    };
    if rrq.home_agent != ha.address {
        return finish(ha, HaDecision::PoorlyFormed, Some(&rrq), None, rrq.identification, 0, None, store);
    }

    let fa_peer = PeerPair::new(RolePair::FaHa, from, ha.address);
    let fa_peer = store.has_association(&fa_peer).then_some(fa_peer);
    let mn_peer = PeerPair::new(RolePair::MnHa, rrq.home_address, ha.address);
    let mn_ctx = msg
        .auth_extension(AuthKind::Mhae)
        .and_then(|ext| store.lookup(&mn_peer, ext.spi).ok())
        .cloned();

    let deny = |ha: &mut HomeAgent, decision| finish(ha, decision, Some(&rrq), mn_ctx.as_ref(), rrq.identification, 0, fa_peer, store);

    if let Some(peer) = fa_peer {
        if let VerifyResult::Rejected(reason) = secassoc::verify(&msg, store, &peer, AuthKind::Fhae) {
            return deny(ha, HaDecision::FaAuthFailed(reason));
        }
    }
    if let VerifyResult::Rejected(reason) = secassoc::verify(&msg, store, &mn_peer, AuthKind::Mhae) {
        return deny(ha, HaDecision::MnAuthFailed(reason));
    }
    let Some(ctx) = mn_ctx.clone() else {
        return deny(ha, HaDecision::MnAuthFailed(RejectReason::UnknownSpi));
    };

    if !ha.replay.is_fresh(rrq.home_address, rrq.identification, ctx.replay(), now) {
        let resync = make_id(now.as_secs() as u32, id_low(rrq.identification));
        return finish(ha, HaDecision::IdentificationMismatch, Some(&rrq), Some(&ctx), resync, 0, fa_peer, store);
    }

    ha.replay.record(rrq.home_address, rrq.identification);
    ha.mutations += 1;
    let granted = rrq.lifetime.min(ha.max_lifetime);
    let decision = if granted == 0 || rrq.care_of_address == rrq.home_address {
        ha.bindings.remove(&rrq.home_address);
        HaDecision::Deregistered
    } else {
        ha.bindings.insert(
            rrq.home_address,
            MobilityBinding {
                home_address: rrq.home_address,
                care_of_address: rrq.care_of_address,
                expires_at: now + SimTime::from_secs(u64::from(granted)),
                spi_used: ctx.spi(),
            },
        );
        HaDecision::Registered
    };
    let lifetime = if decision == HaDecision::Registered { granted } else { 0 };
    finish(ha, decision, Some(&rrq), Some(&ctx), rrq.identification, lifetime, fa_peer, store)
}

#[allow(clippy::too_many_arguments)]
fn finish(
    ha: &HomeAgent,
    decision: HaDecision,
    rrq: Option<&RegistrationRequest>,
    mn_ctx: Option<&SecurityContext>,
    identification: u64,
    lifetime: u16,
    fa_peer: Option<PeerPair>,
    store: &SecurityAssociationStore,
) -> HaOutcome {
    let mut reply = ha.reply(decision.code(), lifetime, rrq, identification);
    if let Some(ctx) = mn_ctx {
        reply = secassoc::sign(reply.clone(), ctx, AuthKind::Mhae).unwrap_or(reply);
    }
    if let Some(ctx) = fa_peer.and_then(|p| store.primary_context(&p)) {
        reply = secassoc::sign(reply.clone(), ctx, AuthKind::Fhae).unwrap_or(reply);
    }
    HaOutcome { decision, reply }
}
