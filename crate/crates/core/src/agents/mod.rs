//! Registration state machines for the mobile node, foreign agent and home
//! agent.
//!
//! Identification values put whole seconds of the sender's clock in the high
//! 32 bits and a per-node sequence number in the low 32 bits. The home agent
//! accepts an identification only when its timestamp is inside the replay
//! window and it is strictly greater than the last one accepted for that
//! home address.

mod foreign;
mod home;
mod mobile;

pub use foreign::{fa_relay_rrp, fa_relay_rrq, DropReason, ForeignAgent, RelayOutcome, VisitorEntry};
pub use home::{ha_process_rrq, HaDecision, HaOutcome, HomeAgent, MobilityBinding, ReplayState, DEFAULT_MAX_LIFETIME};
pub use mobile::{mn_compose_rrq, mn_handle_rrp, IgnoreReason, MnEvent, MnPhase, MobileNode};

/// Reply codes carried in octet 1 of a registration reply.
pub mod codes {
    pub const ACCEPTED: u8 = 0;
    /// Foreign agent: mobile node failed authentication.
    pub const FA_MN_AUTH_FAILED: u8 = 67;
    /// Foreign agent: poorly formed request.
    pub const FA_POORLY_FORMED: u8 = 70;
    /// Home agent: mobile node failed authentication.
    pub const HA_MN_AUTH_FAILED: u8 = 131;
    /// Home agent: foreign agent failed authentication.
    pub const HA_FA_AUTH_FAILED: u8 = 132;
    pub const IDENTIFICATION_MISMATCH: u8 = 133;
    /// Home agent: poorly formed request.
    pub const HA_POORLY_FORMED: u8 = 134;

    pub fn describe(code: u8) -> &'static str {
        match code {
            0 | 1 => "accepted",
            FA_MN_AUTH_FAILED => "mobile node failed authentication (FA)",
            FA_POORLY_FORMED => "poorly formed request (FA)",
            HA_MN_AUTH_FAILED => "mobile node failed authentication (HA)",
            HA_FA_AUTH_FAILED => "foreign agent failed authentication (HA)",
            IDENTIFICATION_MISMATCH => "identification mismatch",
            HA_POORLY_FORMED => "poorly formed request (HA)",
            64..=127 => "denied by foreign agent",
            128..=255 => "denied by home agent",
            _ => "unknown",
        }
    }

    /// Codes 64-127 come from a foreign agent.
    pub fn is_from_foreign_agent(code: u8) -> bool {
        (64..=127).contains(&code)
    }
}

/// Low 32 bits of an identification: the sequence part.
pub(crate) fn id_low(id: u64) -> u32 {
    id as u32
}

/// High 32 bits of an identification: the timestamp part.
pub(crate) fn id_high(id: u64) -> u32 {
    (id >> 32) as u32
}

pub(crate) fn make_id(high: u32, low: u32) -> u64 {
    (u64::from(high) << 32) | u64::from(low)
}
