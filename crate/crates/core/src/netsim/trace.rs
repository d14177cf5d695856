use std::fmt;
use std::str::FromStr;

use crate::time::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TraceKind {
    Adv,
    Rrq,
    Rrp,
    Data,
    Tunnel,
    Detunnel,
    Drop,
    Note,
}

impl TraceKind {
    pub const ALL: [TraceKind; 8] = [
        TraceKind::Adv,
        TraceKind::Rrq,
        TraceKind::Rrp,
        TraceKind::Data,
        TraceKind::Tunnel,
        TraceKind::Detunnel,
        TraceKind::Drop,
        TraceKind::Note,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TraceKind::Adv => "ADV",
            TraceKind::Rrq => "RRQ",
            TraceKind::Rrp => "RRP",
            TraceKind::Data => "DATA",
            TraceKind::Tunnel => "TUNNEL",
            TraceKind::Detunnel => "DETUNNEL",
            TraceKind::Drop => "DROP",
            TraceKind::Note => "NOTE",
        }
    }
}

impl fmt::Display for TraceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TraceKind {
    type Err = String;

    /// Case-insensitive.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TraceKind::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown trace kind {s:?}"))
    }
}

/// One line of simulator output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceRecord {
    pub time: SimTime,
    pub kind: TraceKind,
    pub src: String,
    pub dst: String,
    pub detail: Vec<(String, String)>,
}

impl TraceRecord {
    pub fn get(&self, key: &str) -> Option<&str> {
        match key {
            "src" => Some(&self.src),
            "dst" => Some(&self.dst),
            _ => self.detail.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str()),
        }
    }

    /// True when every `key=value` pair matches. `src` and `dst` match the
    /// endpoint names.
    pub fn matches(&self, kind: TraceKind, pairs: &[(String, String)]) -> bool {
        self.kind == kind && pairs.iter().all(|(k, v)| self.get(k) == Some(v.as_str()))
    }
}

fn write_value(f: &mut fmt::Formatter<'_>, v: &str) -> fmt::Result {
    let plain = !v.is_empty() && !v.chars().any(|c| c.is_whitespace() || c == '"' || c == '\\' || c.is_control());
    if plain {
        return f.write_str(v);
    }
    f.write_str("\"")?;
    for c in v.chars() {
        match c {
            '"' => f.write_str("\\\"")?,
            '\\' => f.write_str("\\\\")?,
            '\n' => f.write_str("\\n")?,
            '\t' => f.write_str("\\t")?,
            c if c.is_control() => write!(f, "\\x{:02x}", c as u32)?,
            c => write!(f, "{c}")?,
        }
    }
    f.write_str("\"")
}

impl fmt::Display for TraceRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}\t{}\t{}->{}\t", self.time, self.kind, self.src, self.dst)?;
        for (i, (k, v)) in self.detail.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{k}=")?;
            write_value(f, v)?;
        }
        Ok(())
    }
}

/// Renders records one per line, each terminated by a newline.
pub fn render(records: &[TraceRecord]) -> String {
    records.iter().map(|r| format!("{r}\n")).collect()
}
