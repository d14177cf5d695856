//! Keyfile lines:
//!
//! ```text
//! sa <peerA> <peerB> spi=<dec|0xhex> alg=hmac-md5 key=<hex> replay=<none|timestamp|nonce> [window=<s>] [role=<pair>]
//! ```
//!
//! `#` starts a comment. Peers are free-form names here; callers decide
//! whether they are addresses or node ids.

use thiserror::Error;

use super::{parse_spi, Algorithm, Key, ReplayMethod, RolePair, SecurityContext, DEFAULT_REPLAY_WINDOW};

#[derive(Error, Debug, Clone, PartialEq, Eq)]
#[error("line {line}: {message}")]
pub struct KeyfileError {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeyEntry {
    pub peer_a: String,
    pub peer_b: String,
    /// Explicit `role=`; otherwise inferred by the caller.
    pub role: Option<RolePair>,
    pub context: SecurityContext,
}

/// Parses the fields following the `sa` keyword.
pub fn parse_sa_fields(fields: &[&str]) -> Result<KeyEntry, String> {
    let [peer_a, peer_b, attrs @ ..] = fields else {
        return Err("expected: sa <peerA> <peerB> spi=.. alg=.. key=.. replay=..".to_string());
    };
    let mut spi = None;
    let mut alg = None;
    let mut key = None;
    let mut replay = None;
    let mut window = None;
    let mut role = None;
    for attr in attrs {
        let (name, value) = attr.split_once('=').ok_or_else(|| format!("expected key=value, got {attr:?}"))?;
        match name {
            "spi" => spi = Some(parse_spi(value).map_err(|e| e.to_string())?),
            "alg" => match Algorithm::parse(value) {
                Algorithm::HmacMd5 => alg = Some(Algorithm::HmacMd5),
                Algorithm::Unsupported(name) => return Err(format!("unsupported algorithm {name:?}")),
            },
            "key" => key = Some(Key::from_hex(value).map_err(|e| e.to_string())?),
            "replay" => {
                replay = Some(match value {
                    "none" => ReplayMethod::None,
                    "timestamp" | "timestamps" => ReplayMethod::Timestamps {
                        window: DEFAULT_REPLAY_WINDOW,
                    },
                    "nonce" | "nonces" => ReplayMethod::Nonces,
                    other => return Err(format!("unknown replay method {other:?}")),
                })
            }
            "window" => window = Some(value.parse::<u32>().map_err(|_| format!("bad window {value:?}"))?),
            "role" => role = Some(RolePair::parse(value).ok_or_else(|| format!("unknown role pair {value:?}"))?),
            other => return Err(format!("unknown attribute {other:?}")),
        }
    }
    let spi = spi.ok_or("missing spi=")?;
    let key = key.ok_or("missing key=")?;
    let mut replay = replay.ok_or("missing replay=")?;
    if let Some(w) = window {
        match &mut replay {
            ReplayMethod::Timestamps { window } => *window = w,
            _ => return Err("window= only applies to replay=timestamp".to_string()),
        }
    }
    let context = SecurityContext::new(spi, alg.ok_or("missing alg=")?, key, replay).map_err(|e| e.to_string())?;
    Ok(KeyEntry {
        peer_a: peer_a.to_string(),
        peer_b: peer_b.to_string(),
        role,
        context,
    })
}

pub fn parse_keyfile(text: &str) -> Result<Vec<KeyEntry>, KeyfileError> {
    let mut entries = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let err = |message: String| KeyfileError { line: i + 1, message };
        if fields[0] != "sa" {
            return Err(err(format!("unknown statement {:?}", fields[0])));
        }
        entries.push(parse_sa_fields(&fields[1..]).map_err(err)?);
    }
    Ok(entries)
}
