use std::net::Ipv4Addr;

use super::{codes, id_high, id_low, make_id};
use crate::secassoc::{self, SecError, SecurityContext, VerifyResult};
use crate::time::SimTime;
use crate::wire::{AuthKind, Flags, RegistrationMessage, RegistrationRequest};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MnPhase {
    AtHome,
    /// Away from home with no binding (denied, or no agent found).
    Unregistered,
    Pending { identification: u64 },
    Registered { coa: Ipv4Addr, expires_at: SimTime },
    Deregistering { identification: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Outstanding {
    identification: u64,
    coa: Ipv4Addr,
    lifetime: u16,
}

/// Mobile node registration state. The home address is fixed for the
/// node's lifetime.
#[derive(Debug, Clone)]
pub struct MobileNode {
    home_address: Ipv4Addr,
    home_agent: Ipv4Addr,
    phase: MnPhase,
    sequence: u32,
    /// Seconds added to the local clock, learned from identification
    /// mismatch replies.
    clock_offset: i64,
    outstanding: Option<Outstanding>,
}

impl MobileNode {
    pub fn new(home_address: Ipv4Addr, home_agent: Ipv4Addr) -> Self {
        MobileNode {
            home_address,
            home_agent,
            phase: MnPhase::AtHome,
            sequence: 1,
            clock_offset: 0,
            outstanding: None,
        }
    }

    pub fn home_address(&self) -> Ipv4Addr {
        self.home_address
    }

    pub fn home_agent(&self) -> Ipv4Addr {
        self.home_agent
    }

    pub fn phase(&self) -> MnPhase {
        self.phase
    }

    pub fn clock_offset(&self) -> i64 {
        self.clock_offset
    }

    /// Shifts the node's clock, e.g. to model a skewed host.
    pub fn set_clock_offset(&mut self, secs: i64) {
        self.clock_offset = secs;
    }

    /// Marks the node as away without a registration.
    pub fn mark_unregistered(&mut self) {
        self.phase = MnPhase::Unregistered;
        self.outstanding = None;
    }

    pub fn is_registered(&self) -> bool {
        matches!(self.phase, MnPhase::Registered { .. })
    }

    fn next_identification(&mut self, now: SimTime) -> u64 {
        let secs = (now.as_secs() as i64 + self.clock_offset).clamp(0, i64::from(u32::MAX)) as u32;
        let id = make_id(secs, self.sequence);
        self.sequence = self.sequence.wrapping_add(1);
        id
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IgnoreReason {
    BadAuth,
    NoPending,
    /// Identification does not match the outstanding request.
    Stale,
    NotAReply,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MnEvent {
    Registered { coa: Ipv4Addr, expires_at: SimTime },
    Deregistered,
    /// Identification mismatch: a fresh request using the home agent's clock.
    Resync(RegistrationMessage),
    Denied(u8),
    Ignored(IgnoreReason),
}

/// Builds an MHAE-signed registration request and enters the pending state.
/// A zero lifetime deregisters.
pub fn mn_compose_rrq(
    mn: &mut MobileNode,
    coa: Ipv4Addr,
    lifetime: u16,
    now: SimTime,
    ctx: &SecurityContext,
) -> Result<RegistrationMessage, SecError> {
    let identification = mn.next_identification(now);
    let rrq = RegistrationMessage::request(RegistrationRequest {
        flags: Flags::empty(),
        lifetime,
        home_address: mn.home_address,
        home_agent: mn.home_agent,
        care_of_address: coa,
        identification,
    });
    let signed = secassoc::sign(rrq, ctx, AuthKind::Mhae)?;
    mn.outstanding = Some(Outstanding {
        identification,
        coa,
        lifetime,
    });
    mn.phase = if lifetime == 0 {
        MnPhase::Deregistering { identification }
    } else {
        MnPhase::Pending { identification }
    };
    Ok(signed)
}

pub fn mn_handle_rrp(
    mn: &mut MobileNode,
    msg: &RegistrationMessage,
    now: SimTime,
    ctx: &SecurityContext,
) -> Result<MnEvent, SecError> {
    let Some(reply) = msg.as_reply() else {
        return Ok(MnEvent::Ignored(IgnoreReason::NotAReply));
    };
    let Some(outstanding) = mn.outstanding else {
        return Ok(MnEvent::Ignored(IgnoreReason::NoPending));
    };
    // Foreign agent denials carry no MHAE; they cannot change any state at
    // the home agent, so they are taken unauthenticated.
    let fa_denial = codes::is_from_foreign_agent(reply.code);
    if !fa_denial && secassoc::verify_with_context(msg, ctx, AuthKind::Mhae) != VerifyResult::Accepted {
        return Ok(MnEvent::Ignored(IgnoreReason::BadAuth));
    }
    if id_low(reply.identification) != id_low(outstanding.identification) || reply.home_address != mn.home_address {
        return Ok(MnEvent::Ignored(IgnoreReason::Stale));
    }
    if !fa_denial && reply.code != codes::IDENTIFICATION_MISMATCH && reply.identification != outstanding.identification {
        return Ok(MnEvent::Ignored(IgnoreReason::Stale));
    }

    let event = match reply.code {
        0 | 1 => {
            mn.outstanding = None;
            if outstanding.lifetime == 0 || reply.lifetime == 0 {
                mn.phase = if outstanding.coa == mn.home_address || outstanding.coa == mn.home_agent {
                    MnPhase::AtHome
                } else {
                    MnPhase::Unregistered
                };
                MnEvent::Deregistered
            } else {
                let expires_at = now + SimTime::from_secs(u64::from(reply.lifetime));
                mn.phase = MnPhase::Registered {
                    coa: outstanding.coa,
                    expires_at,
                };
                MnEvent::Registered {
                    coa: outstanding.coa,
                    expires_at,
                }
            }
        }
        codes::IDENTIFICATION_MISMATCH => {
            mn.clock_offset = i64::from(id_high(reply.identification)) - now.as_secs() as i64;
            MnEvent::Resync(mn_compose_rrq(mn, outstanding.coa, outstanding.lifetime, now, ctx)?)
        }
        code => {
            mn.outstanding = None;
            mn.phase = if outstanding.lifetime == 0 {
                MnPhase::AtHome
            } else {
                MnPhase::Unregistered
            };
            MnEvent::Denied(code)
        }
    };
    Ok(event)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::secassoc::{PeerPair, RolePair, SecurityAssociationStore};
    use crate::wire::RegistrationReply;

    fn addr(s: &str) -> Ipv4Addr {
        s.parse().unwrap()
    }

    fn setup() -> (MobileNode, SecurityContext) {
        (
            MobileNode::new(addr("10.0.1.5"), addr("10.0.1.1")),
            SecurityContext::hmac_md5(256, vec![0x42; 16]).unwrap(),
        )
    }

    fn reply_to(rrq: &RegistrationMessage, code: u8, lifetime: u16, ctx: Option<&SecurityContext>) -> RegistrationMessage {
        let r = rrq.as_request().unwrap();
        let msg = RegistrationMessage::reply(RegistrationReply {
            code,
            lifetime,
            home_address: r.home_address,
            home_agent: r.home_agent,
            identification: r.identification,
        });
        match ctx {
            Some(c) => secassoc::sign(msg, c, AuthKind::Mhae).unwrap(),
            None => msg,
        }
    }

    #[test]
    fn compose_away_produces_verifiable_rrq() {
        let (mut mn, ctx) = setup();
        let rrq = mn_compose_rrq(&mut mn, addr("10.0.2.1"), 300, SimTime::from_secs(5), &ctx).unwrap();
        let r = rrq.as_request().unwrap();
        assert_eq!(r.care_of_address, addr("10.0.2.1"));
        assert_eq!(r.lifetime, 300);
        assert_eq!(id_high(r.identification), 5);
        assert_eq!(rrq.extensions.len(), 1);
        let mut store = SecurityAssociationStore::new();
        store.add_context(PeerPair::new(RolePair::MnHa, mn.home_address(), mn.home_agent()), ctx).unwrap();
        let peer = PeerPair::new(RolePair::MnHa, addr("10.0.1.1"), addr("10.0.1.5"));
        assert!(secassoc::verify(&rrq, &store, &peer, AuthKind::Mhae).is_accepted());
        assert_eq!(mn.phase(), MnPhase::Pending { identification: r.identification });
    }

    #[test]
    fn compose_deregistration() {
        let (mut mn, ctx) = setup();
        let rrq = mn_compose_rrq(&mut mn, addr("10.0.1.1"), 0, SimTime::ZERO, &ctx).unwrap();
        assert!(rrq.as_request().unwrap().is_deregistration());
        assert!(matches!(mn.phase(), MnPhase::Deregistering { .. }));
    }

    #[test]
    fn identifications_increase_at_same_time() {
        let (mut mn, ctx) = setup();
        let now = SimTime::from_secs(9);
        let a = mn_compose_rrq(&mut mn, addr("10.0.2.1"), 300, now, &ctx).unwrap();
        let b = mn_compose_rrq(&mut mn, addr("10.0.2.1"), 300, now, &ctx).unwrap();
        assert!(b.body.identification() > a.body.identification());
    }

    #[test]
    fn accepted_reply_registers() {
        let (mut mn, ctx) = setup();
        let now = SimTime::from_secs(10);
        let rrq = mn_compose_rrq(&mut mn, addr("10.0.2.1"), 300, now, &ctx).unwrap();
        let ev = mn_handle_rrp(&mut mn, &reply_to(&rrq, 0, 300, Some(&ctx)), now, &ctx).unwrap();
        let expires_at = SimTime::from_secs(310);
        assert_eq!(ev, MnEvent::Registered { coa: addr("10.0.2.1"), expires_at });
        assert_eq!(mn.phase(), MnPhase::Registered { coa: addr("10.0.2.1"), expires_at });
        // no outstanding request any more
        let again = mn_handle_rrp(&mut mn, &reply_to(&rrq, 0, 300, Some(&ctx)), now, &ctx).unwrap();
        assert_eq!(again, MnEvent::Ignored(IgnoreReason::NoPending));
    }

    #[test]
    fn mismatch_reply_resynchronizes() {
        let (mut mn, ctx) = setup();
        mn.set_clock_offset(-100);
        let now = SimTime::from_secs(200);
        let rrq = mn_compose_rrq(&mut mn, addr("10.0.2.1"), 300, now, &ctx).unwrap();
        let mut reply = reply_to(&rrq, codes::IDENTIFICATION_MISMATCH, 0, None);
        if let crate::wire::Body::Reply(r) = &mut reply.body {
            r.identification = make_id(200, id_low(r.identification));
        }
        let reply = secassoc::sign(reply, &ctx, AuthKind::Mhae).unwrap();
        let MnEvent::Resync(retry) = mn_handle_rrp(&mut mn, &reply, now, &ctx).unwrap() else {
            panic!("expected resync");
        };
        assert_eq!(id_high(retry.body.identification()), 200);
        assert_eq!(mn.clock_offset(), 0);
        assert!(matches!(mn.phase(), MnPhase::Pending { .. }));
    }

    #[test]
    fn unauthenticated_reply_ignored() {
        let (mut mn, ctx) = setup();
        let rrq = mn_compose_rrq(&mut mn, addr("10.0.2.1"), 300, SimTime::ZERO, &ctx).unwrap();
        let other = SecurityContext::hmac_md5(256, vec![1; 16]).unwrap();
        let ev = mn_handle_rrp(&mut mn, &reply_to(&rrq, 0, 300, Some(&other)), SimTime::ZERO, &ctx).unwrap();
        assert_eq!(ev, MnEvent::Ignored(IgnoreReason::BadAuth));
        let ev = mn_handle_rrp(&mut mn, &reply_to(&rrq, 0, 300, None), SimTime::ZERO, &ctx).unwrap();
        assert_eq!(ev, MnEvent::Ignored(IgnoreReason::BadAuth));
        assert!(matches!(mn.phase(), MnPhase::Pending { .. }));
    }

    #[test]
    fn foreign_agent_denial_is_reported() {
        let (mut mn, ctx) = setup();
        let rrq = mn_compose_rrq(&mut mn, addr("10.0.2.1"), 300, SimTime::ZERO, &ctx).unwrap();
        let ev = mn_handle_rrp(&mut mn, &reply_to(&rrq, codes::FA_MN_AUTH_FAILED, 0, None), SimTime::ZERO, &ctx).unwrap();
        assert_eq!(ev, MnEvent::Denied(67));
        assert_eq!(mn.phase(), MnPhase::Unregistered);
    }

    #[test]
    fn stale_reply_ignored() {
        let (mut mn, ctx) = setup();
        let old = mn_compose_rrq(&mut mn, addr("10.0.2.1"), 300, SimTime::ZERO, &ctx).unwrap();
        let _new = mn_compose_rrq(&mut mn, addr("10.0.3.1"), 300, SimTime::ZERO, &ctx).unwrap();
        let ev = mn_handle_rrp(&mut mn, &reply_to(&old, 0, 300, Some(&ctx)), SimTime::ZERO, &ctx).unwrap();
        assert_eq!(ev, MnEvent::Ignored(IgnoreReason::Stale));
    }

    #[test]
    fn deregistration_reply_returns_home() {
        let (mut mn, ctx) = setup();
        let rrq = mn_compose_rrq(&mut mn, addr("10.0.1.5"), 0, SimTime::ZERO, &ctx).unwrap();
        let ev = mn_handle_rrp(&mut mn, &reply_to(&rrq, 0, 0, Some(&ctx)), SimTime::ZERO, &ctx).unwrap();
        assert_eq!(ev, MnEvent::Deregistered);
        assert_eq!(mn.phase(), MnPhase::AtHome);
    }

    #[test]
    fn request_is_not_a_reply() {
        let (mut mn, ctx) = setup();
        let rrq = mn_compose_rrq(&mut mn, addr("10.0.2.1"), 300, SimTime::ZERO, &ctx).unwrap();
        assert_eq!(
            mn_handle_rrp(&mut mn, &rrq, SimTime::ZERO, &ctx).unwrap(),
            MnEvent::Ignored(IgnoreReason::NotAReply)
        );
    }
}
