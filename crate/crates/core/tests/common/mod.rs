//! Generators and fixtures shared by the integration tests.
#![allow(dead_code)]

use std::net::Ipv4Addr;
use std::path::PathBuf;

use proptest::prelude::*;

use mipsim_core::secassoc::SecurityContext;
use mipsim_core::wire::{
    AuthExtension, AuthKind, Body, Extension, Flags, RegistrationMessage, RegistrationReply, RegistrationRequest,
};

pub fn addr(s: &str) -> Ipv4Addr {
    s.parse().unwrap()
}

pub fn scenario_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

/// Committed scenario files, sorted by name.
pub fn scenario_files() -> Vec<PathBuf> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(scenario_dir())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "scn"))
        .collect();
    files.sort();
    files
}

pub fn arb_addr() -> impl Strategy<Value = Ipv4Addr> {
    any::<u32>().prop_map(Ipv4Addr::from)
}

pub fn arb_body() -> impl Strategy<Value = Body> {
    let req = (any::<u8>(), any::<u16>(), arb_addr(), arb_addr(), arb_addr(), any::<u64>()).prop_map(|(f, l, h, a, c, id)| {
        Body::Request(RegistrationRequest {
            flags: Flags(f),
            lifetime: l,
            home_address: h,
            home_agent: a,
            care_of_address: c,
            identification: id,
        })
    });
    let rep = (any::<u8>(), any::<u16>(), arb_addr(), arb_addr(), any::<u64>()).prop_map(|(code, l, h, a, id)| {
        Body::Reply(RegistrationReply {
            code,
            lifetime: l,
            home_address: h,
            home_agent: a,
            identification: id,
        })
    });
    prop_oneof![req, rep]
}

pub fn arb_auth_kind() -> impl Strategy<Value = AuthKind> {
    prop::sample::select(AuthKind::ALL.to_vec())
}

pub fn arb_extension() -> impl Strategy<Value = Extension> {
    let auth = (arb_auth_kind(), any::<u8>(), any::<u32>(), prop::collection::vec(any::<u8>(), 0..40)).prop_map(
        |(kind, subtype, spi, authenticator)| {
            Extension::Auth(AuthExtension {
                kind,
                subtype: kind.is_generalized().then_some(subtype),
                spi,
                authenticator,
            })
        },
    );
    let opaque = (
        any::<u8>().prop_filter("not an authentication type", |t| AuthKind::from_type_number(*t).is_none()),
        prop::collection::vec(any::<u8>(), 0..40),
    )
        .prop_map(|(ext_type, payload)| Extension::Opaque { ext_type, payload });
    prop_oneof![3 => auth, 1 => opaque]
}

/// Drops extensions that would break the ordering rules: a second MHAE, or
/// an MHAE after an FHAE.
pub fn legalize(extensions: Vec<Extension>) -> Vec<Extension> {
    let (mut mhae, mut fhae) = (false, false);
    extensions
        .into_iter()
        .filter(|e| match e.auth_kind() {
            Some(AuthKind::Mhae) if mhae || fhae => false,
            Some(AuthKind::Mhae) => {
                mhae = true;
                true
            }
            Some(AuthKind::Fhae) => {
                fhae = true;
                true
            }
            _ => true,
        })
        .collect()
}

pub fn arb_message() -> impl Strategy<Value = RegistrationMessage> {
    (arb_body(), prop::collection::vec(arb_extension(), 0..6)).prop_map(|(body, exts)| RegistrationMessage {
        body,
        extensions: legalize(exts),
    })
}

pub fn arb_request() -> impl Strategy<Value = RegistrationMessage> {
    (arb_body(), prop::collection::vec(arb_extension(), 0..4))
        .prop_filter_map("request only", |(body, exts)| match body {
            Body::Request(_) => Some(RegistrationMessage {
                body,
                extensions: legalize(exts)
                    .into_iter()
                    .filter(|e| !matches!(e.auth_kind(), Some(AuthKind::Mhae | AuthKind::Fhae)))
                    .collect(),
            }),
            Body::Reply(_) => None,
        })
}

pub fn arb_context() -> impl Strategy<Value = SecurityContext> {
    (256u32.., prop::collection::vec(any::<u8>(), 16..40))
        .prop_map(|(spi, key)| SecurityContext::hmac_md5(spi, key).unwrap())
}

/// Home, two visited networks and a correspondent network behind a router,
/// plus an attacker next to the correspondent.
pub const NET: &str = "\
subnet home
subnet visit1
subnet visit2
subnet corr
node ha HA addr=10.0.1.1 subnet=home
node fa1 FA addr=10.0.2.1 subnet=visit1
node fa2 FA addr=10.0.3.1 subnet=visit2
node r ROUTER addr=10.0.9.1 subnet=corr
node cn CN addr=10.0.9.5 subnet=corr
node eve ATTACKER addr=10.0.9.66 subnet=corr
node mn MN addr=10.0.1.5 subnet=home home=10.0.1.5 ha=10.0.1.1
sa mn ha spi=256 alg=hmac-md5 key=0f1e2d3c4b5a69788796a5b4c3d2e1f0 replay=timestamp
sa fa1 ha spi=300 alg=hmac-md5 key=22222222222222222222222222222222 replay=none
sa fa2 ha spi=301 alg=hmac-md5 key=33333333333333333333333333333333 replay=none
";

/// Formats milliseconds as scenario seconds.
pub fn secs(ms: u64) -> String {
    format!("{}.{:03}", ms / 1000, ms % 1000)
}
