//! Line-oriented scenario files.
//!
//! ```text
//! subnet <name>
//! node <id> <HA|FA|MN|CN|ROUTER|ATTACKER> addr=<ip> subnet=<name> [home=<ip> ha=<ip>] [coa=<ip>] [lifetime=<s>]
//! sa <idA> <idB> spi=<dec|0xhex> alg=hmac-md5 key=<hex> replay=<none|timestamp|nonce> [window=<s>]
//! link [delay=<s>] [loss=<p>]
//! set [beacon=<s>] [queue=<n>] [lifetime=<s>]
//! at <t> attach <id> <subnet>
//! at <t> move <id> <subnet>
//! at <t> send <id> <id> "<payload>"
//! at <t> forge <attacker-id> victim=<ip> coa=<ip> [spi=real|random|<n>]
//! at <t> advertise
//! at <t> end
//! expect [no | count <n>] <trace-kind> [<key>=<value> ...]
//! ```
//!
//! Names must be declared before use. Without an `end` line the run stops
//! [`IMPLICIT_SETTLE`] after the last event.

use std::collections::BTreeMap;
use std::fmt;
use std::net::Ipv4Addr;

use thiserror::Error;

use crate::netsim::{ForgedSpi, SimConfig, SimEvent, SimEventKind, Simulation, TraceKind, TraceRecord};
use crate::secassoc::{parse_sa_fields, parse_spi, SecurityContext};
use crate::time::SimTime;
use crate::topology::{NodeId, NodeSpec, Role, Topology};

pub const IMPLICIT_SETTLE: SimTime = SimTime::from_secs(10);

#[derive(Error, Debug, Clone, PartialEq, Eq)]
#[error("line {line}: {message}")]
pub struct ScenarioError {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExpectMode {
    /// At least one matching record.
    Exists,
    Absent,
    Count(usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Expectation {
    pub line: usize,
    pub mode: ExpectMode,
    pub kind: TraceKind,
    pub pairs: Vec<(String, String)>,
}

impl Expectation {
    pub fn matching(&self, trace: &[TraceRecord]) -> usize {
        trace.iter().filter(|r| r.matches(self.kind, &self.pairs)).count()
    }

    pub fn holds(&self, trace: &[TraceRecord]) -> bool {
        let n = self.matching(trace);
        match self.mode {
            ExpectMode::Exists => n > 0,
            ExpectMode::Absent => n == 0,
            ExpectMode::Count(c) => n == c,
        }
    }
}

impl fmt::Display for Expectation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.mode {
            ExpectMode::Exists => {}
            ExpectMode::Absent => f.write_str("no ")?,
            ExpectMode::Count(n) => write!(f, "count {n} ")?,
        }
        write!(f, "{}", self.kind.as_str().to_lowercase())?;
        for (k, v) in &self.pairs {
            write!(f, " {k}={v}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Association {
    pub line: usize,
    pub a: NodeId,
    pub b: NodeId,
    pub context: SecurityContext,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub topology: Topology,
    pub config: SimConfig,
    pub associations: Vec<Association>,
    pub events: Vec<(usize, SimEvent)>,
    pub expectations: Vec<Expectation>,
    pub end: Option<SimTime>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExpectOutcome {
    pub expectation: Expectation,
    pub matched: usize,
    pub passed: bool,
}

/// The result of running a scenario.
pub struct ScenarioRun {
    pub sim: Simulation,
    pub outcomes: Vec<ExpectOutcome>,
}

impl ScenarioRun {
    pub fn passed(&self) -> usize {
        self.outcomes.iter().filter(|o| o.passed).count()
    }

    pub fn failed(&self) -> usize {
        self.outcomes.len() - self.passed()
    }
}

/// Splits on whitespace, keeping double-quoted strings together. Inside
/// quotes, `\"`, `\\`, `\n` and `\t` are escapes. An unquoted `#` starts a
/// comment.
pub fn tokenize(line: &str) -> Result<Vec<String>, String> {
    let mut out = Vec::new();
    let mut chars = line.chars().peekable();
    loop {
        while chars.peek().is_some_and(|c| c.is_whitespace()) {
            chars.next();
        }
        let Some(&c) = chars.peek() else { break };
        if c == '#' {
            break;
        }
        let mut tok = String::new();
        while let Some(&c) = chars.peek() {
            if c.is_whitespace() {
                break;
            }
            chars.next();
            if c != '"' {
                tok.push(c);
                continue;
            }
            loop {
                match chars.next() {
                    None => return Err("unterminated quoted string".into()),
                    Some('"') => break,
                    Some('\\') => match chars.next() {
                        Some('n') => tok.push('\n'),
                        Some('t') => tok.push('\t'),
                        Some(e @ ('"' | '\\')) => tok.push(e),
                        Some(e) => return Err(format!("unknown escape \\{e}")),
                        None => return Err("unterminated quoted string".into()),
                    },
                    Some(c) => tok.push(c),
                }
            }
        }
        out.push(tok);
    }
    Ok(out)
}

struct Parser {
    topo: Topology,
    config: SimConfig,
    node_lines: BTreeMap<NodeId, usize>,
    associations: Vec<Association>,
    events: Vec<(usize, SimEvent)>,
    expectations: Vec<Expectation>,
    end: Option<SimTime>,
}

fn split_attr(attr: &str) -> Result<(&str, &str), String> {
    attr.split_once('=').ok_or_else(|| format!("expected key=value, got {attr:?}"))
}

fn parse_addr(v: &str) -> Result<Ipv4Addr, String> {
    v.parse().map_err(|_| format!("bad IPv4 address {v:?}"))
}

fn parse_secs(v: &str) -> Result<SimTime, String> {
    v.parse::<SimTime>().map_err(|e| e.to_string())
}

fn parse_lifetime(v: &str) -> Result<u16, String> {
    v.parse().map_err(|_| format!("bad lifetime {v:?} (whole seconds, at most 65535)"))
}

impl Parser {
    fn node(&self, name: &str) -> Result<NodeId, String> {
        self.topo.node_by_name(name).ok_or_else(|| format!("unknown node {name:?}"))
    }

    fn subnet(&self, name: &str) -> Result<crate::topology::SubnetId, String> {
        self.topo.subnet_by_name(name).ok_or_else(|| format!("unknown subnet {name:?}"))
    }

    fn statement(&mut self, line: usize, toks: &[String]) -> Result<(), String> {
        let t: Vec<&str> = toks.iter().map(String::as_str).collect();
        match t.as_slice() {
            ["subnet", name] => {
                self.topo.add_subnet(name).map_err(|e| e.to_string())?;
            }
            ["subnet", ..] => return Err("expected: subnet <name>".into()),
            ["node", name, role, attrs @ ..] => self.node_decl(line, name, role, attrs)?,
            ["node", ..] => return Err("expected: node <id> <role> addr=<ip> subnet=<name> ...".into()),
            ["sa", rest @ ..] => {
                let entry = parse_sa_fields(rest)?;
                let a = self.node(&entry.peer_a)?;
                let b = self.node(&entry.peer_b)?;
                self.associations.push(Association {
                    line,
                    a,
                    b,
                    context: entry.context,
                });
            }
            ["link", attrs @ ..] => {
                for attr in attrs {
                    match split_attr(attr)? {
                        ("delay", v) => self.topo.link_delay = parse_secs(v)?,
                        ("loss", v) => {
                            let p: f64 = v.parse().map_err(|_| format!("bad loss {v:?}"))?;
                            if !(0.0..=1.0).contains(&p) {
                                return Err(format!("loss {p} outside [0, 1]"));
                            }
                            self.topo.loss = p;
                        }
                        (k, _) => return Err(format!("unknown link attribute {k:?}")),
                    }
                }
            }
            ["set", attrs @ ..] => {
                for attr in attrs {
                    match split_attr(attr)? {
                        ("beacon", v) => {
                            let p = parse_secs(v)?;
                            if p == SimTime::ZERO {
                                return Err("beacon period must be positive".into());
                            }
                            self.config.beacon_period = p;
                        }
                        ("queue", v) => self.config.queue_limit = v.parse().map_err(|_| format!("bad queue limit {v:?}"))?,
                        ("lifetime", v) => self.config.default_lifetime = parse_lifetime(v)?,
                        (k, _) => return Err(format!("unknown setting {k:?}")),
                    }
                }
            }
            ["at", time, verb, args @ ..] => {
                let time = parse_secs(time)?;
                let kind = self.event(verb, args)?;
                if kind == SimEventKind::End {
                    if self.end.is_some() {
                        return Err("more than one end".into());
                    }
                    self.end = Some(time);
                }
                self.events.push((line, SimEvent::new(time, kind)));
            }
            ["at", ..] => return Err("expected: at <t> <event> ...".into()),
            ["expect", rest @ ..] => self.expectation(line, rest)?,
            [other, ..] => return Err(format!("unknown statement {other:?}")),
            [] => {}
        }
        Ok(())
    }

    fn node_decl(&mut self, line: usize, name: &str, role: &str, attrs: &[&str]) -> Result<(), String> {
        let role = Role::parse(role).ok_or_else(|| format!("unknown role {role:?}"))?;
        let (mut addr, mut subnet, mut home, mut ha, mut coa, mut lifetime) = (None, None, None, None, None, None);
        for attr in attrs {
            match split_attr(attr)? {
                ("addr", v) => addr = Some(parse_addr(v)?),
                ("subnet", v) => subnet = Some(self.subnet(v)?),
                ("home", v) => home = Some(parse_addr(v)?),
                ("ha", v) => ha = Some(parse_addr(v)?),
                ("coa", v) => coa = Some(parse_addr(v)?),
                ("lifetime", v) => lifetime = Some(parse_lifetime(v)?),
                (k, _) => return Err(format!("unknown node attribute {k:?}")),
            }
        }
        let address = match (addr, home) {
            (Some(a), Some(h)) if a != h => {
                return Err(format!("addr={a} and home={h} differ; a mobile node is addressed by its home address"))
            }
            (Some(a), _) | (None, Some(a)) => a,
            (None, None) => return Err("missing addr=".into()),
        };
        if role != Role::MobileNode && (home.is_some() || ha.is_some() || lifetime.is_some()) {
            return Err("home=, ha= and lifetime= apply only to MN nodes".into());
        }
        if role != Role::ForeignAgent && coa.is_some() {
            return Err("coa= applies only to FA nodes".into());
        }
        if role == Role::MobileNode && ha.is_none() {
            return Err("MN nodes need ha=".into());
        }
        let id = self
            .topo
            .add_node(NodeSpec {
                name: name.to_string(),
                role,
                address,
                subnet: subnet.ok_or("missing subnet=")?,
                home_agent: ha,
                care_of_address: coa,
                lifetime,
            })
            .map_err(|e| e.to_string())?;
        self.node_lines.insert(id, line);
        Ok(())
    }

    fn event(&self, verb: &str, args: &[&str]) -> Result<SimEventKind, String> {
        Ok(match (verb, args) {
            ("attach", [node, subnet]) => SimEventKind::Attach {
                node: self.node(node)?,
                subnet: self.subnet(subnet)?,
            },
            ("move", [node, subnet]) => SimEventKind::Move {
                node: self.node(node)?,
                subnet: self.subnet(subnet)?,
            },
            ("send", [src, dst, payload]) => SimEventKind::SendData {
                src: self.node(src)?,
                dst: self.node(dst)?,
                payload: payload.as_bytes().to_vec(),
            },
            ("forge", [attacker, attrs @ ..]) => {
                let (mut victim, mut coa, mut spi) = (None, None, ForgedSpi::Real);
                for attr in attrs {
                    match split_attr(attr)? {
                        ("victim", v) => victim = Some(parse_addr(v)?),
                        ("coa", v) => coa = Some(parse_addr(v)?),
                        ("spi", "real") => spi = ForgedSpi::Real,
                        ("spi", "random") => spi = ForgedSpi::Random,
                        ("spi", v) => spi = ForgedSpi::Fixed(parse_spi(v).map_err(|e| e.to_string())?),
                        (k, _) => return Err(format!("unknown forge attribute {k:?}")),
                    }
                }
                SimEventKind::InjectForgedRrq {
                    attacker: self.node(attacker)?,
                    victim_home: victim.ok_or("missing victim=")?,
                    coa: coa.ok_or("missing coa=")?,
                    spi,
                }
            }
            ("advertise", []) => SimEventKind::AdvertiseTick,
            ("end", []) => SimEventKind::End,
            ("attach" | "move", _) => return Err(format!("expected: at <t> {verb} <id> <subnet>")),
            ("send", _) => return Err("expected: at <t> send <id> <id> \"<payload>\"".into()),
            ("forge", _) => return Err("expected: at <t> forge <attacker-id> victim=<ip> coa=<ip>".into()),
            ("advertise" | "end", _) => return Err(format!("{verb} takes no arguments")),
            (other, _) => return Err(format!("unknown event {other:?}")),
        })
    }

    fn expectation(&mut self, line: usize, rest: &[&str]) -> Result<(), String> {
        let (mode, rest) = match rest {
            ["no", rest @ ..] => (ExpectMode::Absent, rest),
            ["count", n, rest @ ..] => (ExpectMode::Count(n.parse().map_err(|_| format!("bad count {n:?}"))?), rest),
            _ => (ExpectMode::Exists, rest),
        };
        let [kind, pairs @ ..] = rest else {
            return Err("expected: expect [no | count <n>] <kind> [key=value ...]".into());
        };
        let kind: TraceKind = kind.parse()?;
        let pairs = pairs
            .iter()
            .map(|p| split_attr(p).map(|(k, v)| (k.to_string(), v.to_string())))
            .collect::<Result<_, _>>()?;
        self.expectations.push(Expectation { line, mode, kind, pairs });
        Ok(())
    }
}

pub fn parse_scenario(text: &str) -> Result<Scenario, ScenarioError> {
    let mut p = Parser {
        topo: Topology::new(),
        config: SimConfig::default(),
        node_lines: BTreeMap::new(),
        associations: Vec::new(),
        events: Vec::new(),
        expectations: Vec::new(),
        end: None,
    };
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let err = |message| ScenarioError { line, message };
        let toks = tokenize(raw).map_err(err)?;
        p.statement(line, &toks).map_err(err)?;
    }
    if let Err(e) = p.topo.validate() {
        // Point at the first node whose declaration fails.
        let line = p
            .topo
            .nodes()
            .find(|(_, n)| e.to_string().contains(&format!("{:?}", n.name)) || e.to_string().contains(&n.address.to_string()))
            .and_then(|(id, _)| p.node_lines.get(&id).copied())
            .unwrap_or(0);
        return Err(ScenarioError {
            line,
            message: e.to_string(),
        });
    }
    Ok(Scenario {
        topology: p.topo,
        config: p.config,
        associations: p.associations,
        events: p.events,
        expectations: p.expectations,
        end: p.end,
    })
}

impl Scenario {
    /// Time the run stops: the `end` event, or the last event plus
    /// [`IMPLICIT_SETTLE`].
    pub fn end_time(&self) -> SimTime {
        self.end
            .unwrap_or_else(|| self.events.iter().map(|(_, e)| e.time).max().map_or(SimTime::ZERO, |t| t + IMPLICIT_SETTLE))
    }

    pub fn build(&self, seed: u64) -> Result<Simulation, ScenarioError> {
        let config = SimConfig { seed, ..self.config.clone() };
        let mut sim = Simulation::new(self.topology.clone(), config).map_err(|e| ScenarioError {
            line: 0,
            message: e.to_string(),
        })?;
        for a in &self.associations {
            sim.add_association(a.a, a.b, a.context.clone()).map_err(|e| ScenarioError {
                line: a.line,
                message: e.to_string(),
            })?;
        }
        for (line, ev) in &self.events {
            sim.schedule(ev.clone()).map_err(|e| ScenarioError {
                line: *line,
                message: e.to_string(),
            })?;
        }
        Ok(sim)
    }

    pub fn run(&self, seed: u64) -> Result<ScenarioRun, ScenarioError> {
        let mut sim = self.build(seed)?;
        sim.run_until(self.end_time());
        let outcomes = self
            .expectations
            .iter()
            .map(|e| {
                let matched = e.matching(sim.trace());
                ExpectOutcome {
                    expectation: e.clone(),
                    matched,
                    passed: e.holds(sim.trace()),
                }
            })
            .collect();
        Ok(ScenarioRun { sim, outcomes })
    }
}
