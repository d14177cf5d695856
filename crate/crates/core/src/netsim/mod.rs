//! Deterministic discrete-event network simulator.
//!
//! Events run in (time, insertion) order. Registration messages travel as
//! encoded octets with one link delay per agent-to-agent leg; data packets
//! take one link delay per hop. Agent advertisements are periodic beacons,
//! but only the beacons some mobile node is waiting for are simulated.
//! Every run is a pure function of the topology, the events and the seed.

mod routing;
#[cfg(test)]
mod tests;
mod trace;

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, VecDeque};
use std::net::Ipv4Addr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::agents::{
    self, fa_relay_rrp, fa_relay_rrq, ha_process_rrq, mn_compose_rrq, mn_handle_rrp, ForeignAgent, HaDecision, HomeAgent, MnEvent,
    MnPhase, MobileNode, RelayOutcome,
};
use crate::datapath::{self, DropReason, ForwardAction, Hop, HopOp, IpPacket, NodeView};
use crate::secassoc::{self, PeerPair, RolePair, SecError, SecurityAssociationStore, SecurityContext, MIN_SPI};
use crate::time::SimTime;
use crate::topology::{NodeId, Role, SubnetId, Topology, TopologyError};
use crate::wire::{self, AuthKind, Flags, RegistrationMessage, RegistrationRequest};

use routing::Routes;
pub use trace::{render, TraceKind, TraceRecord};

pub const DEFAULT_BEACON_PERIOD: SimTime = SimTime::from_secs(1);
pub const DEFAULT_QUEUE_LIMIT: usize = 64;
pub const DEFAULT_LIFETIME: u16 = 300;
const FORGED_KEY_LEN: usize = 16;

#[derive(Error, Debug, Clone, PartialEq, Eq)]
pub enum SimError {
    #[error("event at {at} is before the current time {now}")]
    PastEvent { at: SimTime, now: SimTime },
    #[error("no node with index {0}")]
    UnknownNode(usize),
    #[error("no subnet with index {0}")]
    UnknownSubnet(usize),
    #[error("node {0:?} is not a mobile node")]
    NotMobile(String),
    #[error("node {0:?} is not an attacker")]
    NotAttacker(String),
    #[error("{0} is not the home address of any mobile node")]
    NotAHomeAddress(Ipv4Addr),
    #[error("no security association is defined between a {0} and a {1}")]
    Association(Role, Role),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Security(#[from] SecError),
}

/// Which SPI a forged request claims.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForgedSpi {
    /// The SPI the victim actually uses, as learned by sniffing.
    Real,
    Random,
    Fixed(u32),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SimEventKind {
    Attach { node: NodeId, subnet: SubnetId },
    Move { node: NodeId, subnet: SubnetId },
    SendData { src: NodeId, dst: NodeId, payload: Vec<u8> },
    /// Every agent beacons at once.
    AdvertiseTick,
    InjectForgedRrq { attacker: NodeId, victim_home: Ipv4Addr, coa: Ipv4Addr, spi: ForgedSpi },
    End,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimEvent {
    pub time: SimTime,
    pub kind: SimEventKind,
}

impl SimEvent {
    pub fn new(time: SimTime, kind: SimEventKind) -> Self {
        SimEvent { time, kind }
    }
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub seed: u64,
    pub beacon_period: SimTime,
    /// Packets a home agent holds per mobile node while it is between
    /// attachments. The oldest is dropped on overflow.
    pub queue_limit: usize,
    /// Registration lifetime for mobile nodes that do not set one.
    pub default_lifetime: u16,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            seed: 0,
            beacon_period: DEFAULT_BEACON_PERIOD,
            queue_limit: DEFAULT_QUEUE_LIMIT,
            default_lifetime: DEFAULT_LIFETIME,
        }
    }
}

/// A data packet that reached its destination.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Delivery {
    pub time: SimTime,
    pub seq: u64,
    pub src: NodeId,
    pub dst: NodeId,
    pub dst_addr: Ipv4Addr,
    pub payload: Vec<u8>,
    pub hops: Vec<Hop>,
}

impl Delivery {
    pub fn visited(&self, node: NodeId) -> bool {
        self.hops.iter().any(|h| h.node == node)
    }

    pub fn count_ops(&self, op: HopOp) -> usize {
        self.hops.iter().filter(|h| h.op == op).count()
    }
}

#[derive(Debug, Clone)]
enum Control {
    Rrq(Vec<u8>),
    Rrp(Vec<u8>),
}

#[derive(Debug, Clone)]
struct InFlight {
    seq: u64,
    pkt: IpPacket,
}

#[derive(Debug, Clone)]
enum Action {
    Public(SimEventKind),
    Beacon { subnet: SubnetId, mn: NodeId, generation: u64 },
    Control { to: NodeId, from: NodeId, msg: Control },
    Packet { at: NodeId, prev: Option<NodeId>, flight: InFlight },
    Renew { mn: NodeId, generation: u64 },
    Expire { node: NodeId },
}

#[derive(Debug)]
struct Scheduled {
    time: SimTime,
    seq: u64,
    action: Action,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        (self.time, self.seq) == (other.time, other.seq)
    }
}

impl Eq for Scheduled {}

impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Scheduled {
    // Reversed so the max-heap pops the earliest event first.
    fn cmp(&self, other: &Self) -> Ordering {
        (other.time, other.seq).cmp(&(self.time, self.seq))
    }
}

#[derive(Debug)]
struct MobileState {
    mn: MobileNode,
    /// Bumped on every attach or move; stale timers compare against it.
    generation: u64,
    agent: Option<NodeId>,
    awaiting_beacon: bool,
    lifetime: u16,
}

#[derive(Debug)]
enum Agent {
    Home {
        ha: HomeAgent,
        queues: BTreeMap<Ipv4Addr, VecDeque<InFlight>>,
        held: Vec<Ipv4Addr>,
        served: Vec<Ipv4Addr>,
    },
    Foreign(ForeignAgent),
    Mobile(Box<MobileState>),
    Plain,
}

#[derive(Debug)]
struct NodeState {
    addresses: Vec<Ipv4Addr>,
    store: SecurityAssociationStore,
    agent: Agent,
}

pub struct Simulation {
    topo: Topology,
    config: SimConfig,
    now: SimTime,
    seq: u64,
    queue: BinaryHeap<Scheduled>,
    subnets: Vec<SubnetId>,
    nodes: Vec<NodeState>,
    addr_map: BTreeMap<Ipv4Addr, NodeId>,
    rng: ChaCha8Rng,
    trace: Vec<TraceRecord>,
    deliveries: Vec<Delivery>,
    next_packet: u64,
    ended: bool,
}

fn kv(key: &str, value: impl ToString) -> (String, String) {
    (key.to_string(), value.to_string())
}

fn hex_id(id: u64) -> String {
    format!("0x{id:016x}")
}

impl Simulation {
    pub fn new(topo: Topology, config: SimConfig) -> Result<Self, SimError> {
        topo.validate()?;
        let mut addr_map = BTreeMap::new();
        let mut nodes = Vec::new();
        for (id, spec) in topo.nodes() {
            let mut addresses = vec![spec.address];
            let agent = match spec.role {
                Role::HomeAgent => Agent::Home {
                    ha: HomeAgent::new(spec.address),
                    queues: BTreeMap::new(),
                    held: Vec::new(),
                    served: topo
                        .nodes()
                        .filter(|(_, n)| n.role == Role::MobileNode && n.home_agent == Some(spec.address))
                        .map(|(_, n)| n.address)
                        .collect(),
                },
                Role::ForeignAgent => {
                    let coa = spec.care_of_address.unwrap_or(spec.address);
                    if coa != spec.address {
                        addresses.push(coa);
                    }
                    Agent::Foreign(ForeignAgent::new(spec.address, coa))
                }
                Role::MobileNode => {
                    let ha = spec.home_agent.expect("validated");
                    let mut mn = MobileNode::new(spec.address, ha);
                    if topo.home_subnet(id) != Some(spec.subnet) {
                        mn.mark_unregistered();
                    }
                    Agent::Mobile(Box::new(MobileState {
                        mn,
                        generation: 0,
                        agent: None,
                        awaiting_beacon: false,
                        lifetime: spec.lifetime.unwrap_or(config.default_lifetime),
                    }))
                }
                _ => Agent::Plain,
            };
            for a in &addresses {
                if addr_map.insert(*a, id).is_some() {
                    return Err(TopologyError::DuplicateAddress(*a).into());
                }
            }
            nodes.push(NodeState {
                addresses,
                store: SecurityAssociationStore::new(),
                agent,
            });
        }
        Ok(Simulation {
            subnets: topo.nodes().map(|(_, n)| n.subnet).collect(),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            topo,
            config,
            now: SimTime::ZERO,
            seq: 0,
            queue: BinaryHeap::new(),
            nodes,
            addr_map,
            trace: Vec::new(),
            deliveries: Vec::new(),
            next_packet: 0,
            ended: false,
        })
    }

    /// Installs a shared key between two nodes. The role pair follows from
    /// the node roles: MN-HA, MN-FA or FA-HA.
    pub fn add_association(&mut self, a: NodeId, b: NodeId, ctx: SecurityContext) -> Result<RolePair, SimError> {
        self.check_node(a)?;
        self.check_node(b)?;
        let (na, nb) = (self.topo.node(a), self.topo.node(b));
        let roles = match (na.role, nb.role) {
            (Role::MobileNode, Role::HomeAgent) | (Role::HomeAgent, Role::MobileNode) => RolePair::MnHa,
            (Role::MobileNode, Role::ForeignAgent) | (Role::ForeignAgent, Role::MobileNode) => RolePair::MnFa,
            (Role::ForeignAgent, Role::HomeAgent) | (Role::HomeAgent, Role::ForeignAgent) => RolePair::FaHa,
            (x, y) => return Err(SimError::Association(x, y)),
        };
        let peer = PeerPair::new(roles, na.address, nb.address);
        self.nodes[a.0].store.add_context(peer, ctx.clone())?;
        self.nodes[b.0].store.add_context(peer, ctx)?;
        Ok(roles)
    }

    pub fn topology(&self) -> &Topology {
        &self.topo
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn trace(&self) -> &[TraceRecord] {
        &self.trace
    }

    pub fn render_trace(&self) -> String {
        render(&self.trace)
    }

    pub fn deliveries(&self) -> &[Delivery] {
        &self.deliveries
    }

    pub fn is_ended(&self) -> bool {
        self.ended
    }

    pub fn pending_events(&self) -> usize {
        self.queue.len()
    }

    /// Current subnet of a node.
    pub fn subnet_of(&self, node: NodeId) -> SubnetId {
        self.subnets[node.0]
    }

    pub fn home_agent(&self, node: NodeId) -> Option<&HomeAgent> {
        match &self.nodes.get(node.0)?.agent {
            Agent::Home { ha, .. } => Some(ha),
            _ => None,
        }
    }

    pub fn foreign_agent(&self, node: NodeId) -> Option<&ForeignAgent> {
        match &self.nodes.get(node.0)?.agent {
            Agent::Foreign(fa) => Some(fa),
            _ => None,
        }
    }

    pub fn mobile_node(&self, node: NodeId) -> Option<&MobileNode> {
        match &self.nodes.get(node.0)?.agent {
            Agent::Mobile(m) => Some(&m.mn),
            _ => None,
        }
    }

    pub fn store(&self, node: NodeId) -> Option<&SecurityAssociationStore> {
        self.nodes.get(node.0).map(|n| &n.store)
    }

    /// Packets a home agent is holding for `home`.
    pub fn queued(&self, ha: NodeId, home: Ipv4Addr) -> usize {
        match self.nodes.get(ha.0).map(|n| &n.agent) {
            Some(Agent::Home { queues, .. }) => queues.get(&home).map_or(0, VecDeque::len),
            _ => 0,
        }
    }

    fn check_node(&self, node: NodeId) -> Result<(), SimError> {
        if node.0 < self.nodes.len() {
            Ok(())
        } else {
            Err(SimError::UnknownNode(node.0))
        }
    }

    fn check_role(&self, node: NodeId, role: Role) -> Result<(), SimError> {
        self.check_node(node)?;
        if self.topo.node(node).role == role {
            return Ok(());
        }
        let name = self.topo.name(node).to_string();
        Err(match role {
            Role::Attacker => SimError::NotAttacker(name),
            _ => SimError::NotMobile(name),
        })
    }

    fn check_subnet(&self, subnet: SubnetId) -> Result<(), SimError> {
        if subnet.0 < self.topo.subnet_count() {
            Ok(())
        } else {
            Err(SimError::UnknownSubnet(subnet.0))
        }
    }

    pub fn schedule(&mut self, ev: SimEvent) -> Result<(), SimError> {
        if ev.time < self.now {
            return Err(SimError::PastEvent { at: ev.time, now: self.now });
        }
        match &ev.kind {
            SimEventKind::Attach { node, subnet } | SimEventKind::Move { node, subnet } => {
                self.check_role(*node, Role::MobileNode)?;
                self.check_subnet(*subnet)?;
            }
            SimEventKind::SendData { src, dst, .. } => {
                self.check_node(*src)?;
                self.check_node(*dst)?;
            }
            SimEventKind::InjectForgedRrq { attacker, victim_home, spi, .. } => {
                self.check_role(*attacker, Role::Attacker)?;
                self.victim_home_agent(*victim_home)?;
                if let ForgedSpi::Fixed(s) = spi {
                    if *s < MIN_SPI {
                        return Err(SecError::SpiReserved(u64::from(*s)).into());
                    }
                }
            }
            SimEventKind::AdvertiseTick | SimEventKind::End => {}
        }
        self.push(ev.time, Action::Public(ev.kind));
        Ok(())
    }

    fn push(&mut self, time: SimTime, action: Action) {
        debug_assert!(time >= self.now);
        self.seq += 1;
        self.queue.push(Scheduled { time, seq: self.seq, action });
    }

    fn after_link(&mut self, action: Action) {
        let t = self.now + self.topo.link_delay;
        self.push(t, action);
    }

    /// Processes every event with `time <= t_end`, stopping early at an
    /// `End` event. Returns the records produced by this call.
    pub fn run_until(&mut self, t_end: SimTime) -> Vec<TraceRecord> {
        let start = self.trace.len();
        while !self.ended {
            match self.queue.peek() {
                Some(next) if next.time <= t_end => {}
                _ => break,
            }
            let next = self.queue.pop().expect("peeked");
            self.now = next.time;
            self.dispatch(next.action);
        }
        if !self.ended && t_end != SimTime::MAX {
            self.now = self.now.max(t_end);
        }
        self.trace[start..].to_vec()
    }

    pub fn run(&mut self) -> Vec<TraceRecord> {
        self.run_until(SimTime::MAX)
    }

    fn record(&mut self, kind: TraceKind, src: &str, dst: &str, detail: Vec<(String, String)>) {
        self.trace.push(TraceRecord {
            time: self.now,
            kind,
            src: src.to_string(),
            dst: dst.to_string(),
            detail,
        });
    }

    fn record_nodes(&mut self, kind: TraceKind, src: NodeId, dst: NodeId, detail: Vec<(String, String)>) {
        let (s, d) = (self.topo.name(src).to_string(), self.topo.name(dst).to_string());
        self.record(kind, &s, &d, detail);
    }

    fn note(&mut self, node: NodeId, detail: Vec<(String, String)>) {
        let s = self.topo.name(node).to_string();
        self.record(TraceKind::Note, &s, "*", detail);
    }

    fn addr_name(&self, addr: Ipv4Addr) -> String {
        self.addr_map.get(&addr).map_or_else(|| addr.to_string(), |id| self.topo.name(*id).to_string())
    }

    fn dispatch(&mut self, action: Action) {
        match action {
            Action::Public(kind) => self.dispatch_public(kind),
            Action::Beacon { subnet, mn, generation } => self.on_beacon(subnet, mn, generation),
            Action::Control { to, from, msg } => self.on_control(to, from, msg),
            Action::Packet { at, prev, flight } => self.process_packet(at, prev, flight),
            Action::Renew { mn, generation } => self.on_renew(mn, generation),
            Action::Expire { node } => self.on_expire(node),
        }
    }

    fn dispatch_public(&mut self, kind: SimEventKind) {
        match kind {
            SimEventKind::Attach { node, subnet } => self.relocate(node, subnet, "attach"),
            SimEventKind::Move { node, subnet } => self.relocate(node, subnet, "move"),
            SimEventKind::SendData { src, dst, payload } => self.send_data(src, dst, payload),
            SimEventKind::AdvertiseTick => self.advertise_all(),
            SimEventKind::InjectForgedRrq {
                attacker,
                victim_home,
                coa,
                spi,
            } => {
                // Validated when scheduled.
                let _ = self.inject_forged_rrq(attacker, victim_home, coa, spi);
            }
            SimEventKind::End => {
                self.record(TraceKind::Note, "*", "*", vec![kv("event", "end")]);
                self.ended = true;
            }
        }
    }

    fn mobile_mut(&mut self, node: NodeId) -> Option<&mut MobileState> {
        match &mut self.nodes[node.0].agent {
            Agent::Mobile(m) => Some(m),
            _ => None,
        }
    }

    fn mobile(&self, node: NodeId) -> Option<&MobileState> {
        match &self.nodes[node.0].agent {
            Agent::Mobile(m) => Some(m),
            _ => None,
        }
    }

    /// Moves a mobile node to `subnet` now. It will register through the
    /// subnet's agent after hearing the next beacon.
    pub fn on_move(&mut self, node: NodeId, subnet: SubnetId) -> Result<(), SimError> {
        self.check_role(node, Role::MobileNode)?;
        self.check_subnet(subnet)?;
        self.relocate(node, subnet, "move");
        Ok(())
    }

    fn relocate(&mut self, node: NodeId, subnet: SubnetId, label: &str) {
        let old = self.subnets[node.0];
        self.subnets[node.0] = subnet;
        let period = self.config.beacon_period.as_millis().max(1);
        let next_beacon = SimTime::from_millis((self.now.as_millis() / period + 1) * period);
        let agent = self.topo.advertising_agent(subnet);
        let Some(state) = self.mobile_mut(node) else {
            return;
        };
        state.generation += 1;
        state.agent = None;
        state.awaiting_beacon = agent.is_some();
        let generation = state.generation;
        let was_bound = matches!(
            state.mn.phase(),
            MnPhase::Registered { .. } | MnPhase::Pending { .. } | MnPhase::Deregistering { .. }
        );
        let (home, ha_addr) = (state.mn.home_address(), state.mn.home_agent());
        if agent.is_none() {
            state.mn.mark_unregistered();
        }

        let detail = vec![
            kv("event", label),
            kv("subnet", self.topo.subnet_name(subnet)),
            kv("from", self.topo.subnet_name(old)),
        ];
        self.note(node, detail);

        // The home agent learns of the detach at once and holds traffic
        // until the next registration is processed or the binding lapses.
        if was_bound {
            if let Some(Agent::Home { held, .. }) = self.addr_map.get(&ha_addr).map(|id| &mut self.nodes[id.0].agent) {
                if !held.contains(&home) {
                    held.push(home);
                }
            }
        }

        match agent {
            None => {
                let detail = vec![kv("event", "no-agent"), kv("subnet", self.topo.subnet_name(subnet))];
                self.note(node, detail);
            }
            Some(_) => self.push(next_beacon, Action::Beacon { subnet, mn: node, generation }),
        }
    }

    fn on_beacon(&mut self, subnet: SubnetId, mn: NodeId, generation: u64) {
        let Some(state) = self.mobile(mn) else { return };
        if state.generation != generation || !state.awaiting_beacon || self.subnets[mn.0] != subnet {
            return;
        }
        let Some(agent) = self.topo.advertising_agent(subnet) else {
            return;
        };
        let detail = self.adv_detail(agent);
        self.record_nodes(TraceKind::Adv, agent, mn, detail);
        self.beacon_heard(mn, agent);
    }

    fn adv_detail(&self, agent: NodeId) -> Vec<(String, String)> {
        match &self.nodes[agent.0].agent {
            Agent::Foreign(fa) => vec![kv("coa", fa.care_of_address())],
            _ => vec![kv("home-agent", self.topo.node(agent).address)],
        }
    }

    fn advertise_all(&mut self) {
        for s in 0..self.topo.subnet_count() {
            let subnet = SubnetId(s);
            let Some(agent) = self.topo.advertising_agent(subnet) else {
                continue;
            };
            let detail = self.adv_detail(agent);
            let name = self.topo.name(agent).to_string();
            self.record(TraceKind::Adv, &name, "*", detail);
            let waiting: Vec<NodeId> = (0..self.nodes.len())
                .map(NodeId)
                .filter(|id| self.subnets[id.0] == subnet && self.mobile(*id).is_some_and(|m| m.awaiting_beacon))
                .collect();
            for mn in waiting {
                self.beacon_heard(mn, agent);
            }
        }
    }

    fn beacon_heard(&mut self, mn: NodeId, agent: NodeId) {
        let agent_addr = self.topo.node(agent).address;
        let coa = match &self.nodes[agent.0].agent {
            Agent::Foreign(fa) => Some(fa.care_of_address()),
            _ => None,
        };
        let state = self.mobile_mut(mn).expect("mobile node");
        state.awaiting_beacon = false;
        let (home, ha_addr, lifetime, phase) = (state.mn.home_address(), state.mn.home_agent(), state.lifetime, state.mn.phase());
        if let Some(coa) = coa {
            state.agent = Some(agent);
            self.register(mn, coa, lifetime);
        } else if agent_addr == ha_addr {
            state.agent = Some(agent);
            if phase != MnPhase::AtHome {
                self.register(mn, home, 0);
            }
        } else {
            state.mn.mark_unregistered();
            self.note(mn, vec![kv("event", "no-agent"), kv("reason", "foreign-home-agent")]);
        }
    }

    fn mn_ha_context(&self, mn: NodeId) -> Option<SecurityContext> {
        let m = self.mobile(mn)?;
        let peer = PeerPair::new(RolePair::MnHa, m.mn.home_address(), m.mn.home_agent());
        self.nodes[mn.0].store.primary_context(&peer).cloned()
    }

    fn register(&mut self, mn: NodeId, coa: Ipv4Addr, lifetime: u16) {
        let Some(ctx) = self.mn_ha_context(mn) else {
            self.note(mn, vec![kv("event", "no-key")]);
            return;
        };
        let now = self.now;
        let state = self.mobile_mut(mn).expect("mobile node");
        match mn_compose_rrq(&mut state.mn, coa, lifetime, now, &ctx) {
            Ok(msg) => self.send_rrq_from_mn(mn, msg),
            Err(e) => self.note(mn, vec![kv("event", "compose-failed"), kv("error", e)]),
        }
    }

    fn send_rrq_from_mn(&mut self, mn: NodeId, mut msg: RegistrationMessage) {
        let Some(agent) = self.mobile(mn).and_then(|m| m.agent) else {
            return;
        };
        if self.topo.node(agent).role == Role::ForeignAgent {
            let peer = PeerPair::new(RolePair::MnFa, self.topo.node(mn).address, self.topo.node(agent).address);
            if let Some(ctx) = self.nodes[mn.0].store.primary_context(&peer) {
                if let Ok(signed) = secassoc::sign(msg.clone(), ctx, AuthKind::Mfae) {
                    msg = signed;
                }
            }
        }
        self.send_control(mn, agent, msg, Vec::new());
    }

    fn message_detail(msg: &RegistrationMessage) -> Vec<(String, String)> {
        match &msg.body {
            wire::Body::Request(r) => vec![
                kv("home", r.home_address),
                kv("coa", r.care_of_address),
                kv("lifetime", r.lifetime),
                kv("id", hex_id(r.identification)),
                kv("ext", msg.extension_summary()),
            ],
            wire::Body::Reply(r) => vec![
                kv("code", r.code),
                kv("home", r.home_address),
                kv("lifetime", r.lifetime),
                kv("id", hex_id(r.identification)),
                kv("ext", msg.extension_summary()),
            ],
        }
    }

    fn send_control(&mut self, from: NodeId, to: NodeId, msg: RegistrationMessage, extra: Vec<(String, String)>) {
        let raw = match wire::encode_message(&msg) {
            Ok(raw) => raw,
            Err(e) => {
                self.record_nodes(TraceKind::Drop, from, to, vec![kv("reason", "encode"), kv("error", e)]);
                return;
            }
        };
        let (kind, control) = match msg.body {
            wire::Body::Request(_) => (TraceKind::Rrq, Control::Rrq(raw)),
            wire::Body::Reply(_) => (TraceKind::Rrp, Control::Rrp(raw)),
        };
        let mut detail = extra;
        detail.extend(Self::message_detail(&msg));
        self.record_nodes(kind, from, to, detail);
        self.after_link(Action::Control { to, from, msg: control });
    }

    fn on_control(&mut self, to: NodeId, from: NodeId, msg: Control) {
        let now = self.now;
        let from_addr = self.nodes[from.0].addresses[0];
        let NodeState { store, agent, .. } = &mut self.nodes[to.0];
        match (agent, msg) {
            (Agent::Foreign(fa), Control::Rrq(raw)) => {
                let outcome = fa_relay_rrq(fa, &raw, from, now, store);
                self.after_fa_relay(to, from, outcome);
            }
            (Agent::Foreign(fa), Control::Rrp(raw)) => {
                let outcome = fa_relay_rrp(fa, &raw, now, store);
                self.after_fa_relay(to, from, outcome);
            }
            (Agent::Home { ha, .. }, Control::Rrq(raw)) => {
                let out = ha_process_rrq(ha, &raw, from_addr, now, store);
                let reply = out.reply.as_reply().cloned().expect("home agent replies");
                self.send_control(to, from, out.reply, Vec::new());
                match out.decision {
                    HaDecision::Registered => {
                        let expiry = now + SimTime::from_secs(u64::from(reply.lifetime));
                        self.push(expiry, Action::Expire { node: to });
                        self.release(to, reply.home_address);
                    }
                    HaDecision::Deregistered => self.release(to, reply.home_address),
                    _ => {}
                }
            }
            (Agent::Mobile(_), Control::Rrp(raw)) => self.mn_receive_rrp(to, from, &raw),
            (Agent::Plain, Control::Rrp(_)) => {}
            _ => self.record_nodes(TraceKind::Drop, from, to, vec![kv("reason", "unexpected-message")]),
        }
    }

    fn after_fa_relay(&mut self, fa_node: NodeId, from: NodeId, outcome: RelayOutcome) {
        match outcome {
            RelayOutcome::ToHomeAgent { home_agent, msg } => match self.addr_map.get(&home_agent).copied() {
                Some(ha) if self.topo.node(ha).role == Role::HomeAgent => self.send_control(fa_node, ha, msg, Vec::new()),
                _ => {
                    let fa = self.topo.name(fa_node).to_string();
                    self.record(TraceKind::Drop, &fa, &home_agent.to_string(), vec![kv("reason", "no-home-agent")]);
                }
            },
            RelayOutcome::ToMobile { link, msg } => {
                if let Some(reply) = msg.as_reply() {
                    let visitor = self.foreign_agent(fa_node).and_then(|fa| fa.visitor(reply.home_address)).cloned();
                    if let Some(v) = visitor.filter(|_| reply.is_accepted() && reply.lifetime > 0) {
                        self.push(v.expires_at, Action::Expire { node: fa_node });
                    }
                }
                self.send_control(fa_node, link, msg, Vec::new());
            }
            RelayOutcome::Deny { code, link, reply } => match reply {
                Some(msg) => self.send_control(fa_node, link, msg, Vec::new()),
                None => self.record_nodes(TraceKind::Drop, fa_node, link, vec![kv("reason", "malformed"), kv("code", code)]),
            },
            RelayOutcome::Drop(reason) => {
                let r = format!("{reason:?}").to_lowercase();
                self.record_nodes(TraceKind::Drop, from, fa_node, vec![kv("reason", r)]);
            }
        }
    }

    fn mn_receive_rrp(&mut self, mn: NodeId, from: NodeId, raw: &[u8]) {
        if self.subnets[from.0] != self.subnets[mn.0] {
            self.record_nodes(TraceKind::Drop, from, mn, vec![kv("reason", DropReason::Detached)]);
            return;
        }
        let Ok(msg) = wire::decode_message(raw) else {
            self.record_nodes(TraceKind::Drop, from, mn, vec![kv("reason", DropReason::Malformed)]);
            return;
        };
        let Some(ctx) = self.mn_ha_context(mn) else {
            self.note(mn, vec![kv("event", "no-key")]);
            return;
        };
        let now = self.now;
        let state = self.mobile_mut(mn).expect("mobile node");
        let generation = state.generation;
        let event = match mn_handle_rrp(&mut state.mn, &msg, now, &ctx) {
            Ok(ev) => ev,
            Err(e) => {
                self.note(mn, vec![kv("event", "error"), kv("error", e)]);
                return;
            }
        };
        match event {
            MnEvent::Registered { coa, expires_at } => {
                self.note(mn, vec![kv("event", "registered"), kv("coa", coa), kv("expires", expires_at)]);
                let remaining = expires_at.saturating_sub(now).as_millis();
                self.push(now + SimTime::from_millis(remaining * 3 / 4), Action::Renew { mn, generation });
            }
            MnEvent::Deregistered => self.note(mn, vec![kv("event", "deregistered")]),
            MnEvent::Resync(msg) => {
                let offset = self.mobile(mn).map_or(0, |m| m.mn.clock_offset());
                self.note(mn, vec![kv("event", "resync"), kv("offset", offset)]);
                self.send_rrq_from_mn(mn, msg);
            }
            MnEvent::Denied(code) => {
                self.note(mn, vec![kv("event", "denied"), kv("code", code), kv("why", agents::codes::describe(code))]);
            }
            MnEvent::Ignored(reason) => {
                self.note(mn, vec![kv("event", "ignored"), kv("reason", format!("{reason:?}").to_lowercase())]);
            }
        }
    }

    fn on_renew(&mut self, mn: NodeId, generation: u64) {
        let Some(state) = self.mobile(mn) else { return };
        if state.generation != generation {
            return;
        }
        if let MnPhase::Registered { coa, .. } = state.mn.phase() {
            let lifetime = state.lifetime;
            self.register(mn, coa, lifetime);
        }
    }

    fn on_expire(&mut self, node: NodeId) {
        let now = self.now;
        match &mut self.nodes[node.0].agent {
            Agent::Home { ha, .. } => {
                for b in ha.expire_bindings(now) {
                    let mn = self.addr_name(b.home_address);
                    let ha_name = self.topo.name(node).to_string();
                    self.record(
                        TraceKind::Note,
                        &ha_name,
                        &mn,
                        vec![kv("event", "binding-expired"), kv("coa", b.care_of_address)],
                    );
                    self.release(node, b.home_address);
                }
            }
            Agent::Foreign(fa) => {
                for v in fa.expire_bindings(now) {
                    let mn = self.addr_name(v.home_address);
                    let fa_name = self.topo.name(node).to_string();
                    self.record(TraceKind::Note, &fa_name, &mn, vec![kv("event", "visitor-expired")]);
                }
            }
            _ => {}
        }
    }

    /// Ends the hold on `home` and re-forwards anything queued for it.
    fn release(&mut self, ha_node: NodeId, home: Ipv4Addr) {
        let Agent::Home { queues, held, .. } = &mut self.nodes[ha_node.0].agent else {
            return;
        };
        held.retain(|h| *h != home);
        let pending = queues.remove(&home).unwrap_or_default();
        for flight in pending {
            self.process_packet(ha_node, None, flight);
        }
    }

    fn victim_home_agent(&self, victim_home: Ipv4Addr) -> Result<(NodeId, Ipv4Addr), SimError> {
        let victim = self
            .addr_map
            .get(&victim_home)
            .copied()
            .filter(|id| self.topo.node(*id).role == Role::MobileNode)
            .ok_or(SimError::NotAHomeAddress(victim_home))?;
        let ha_addr = self.topo.node(victim).home_agent.expect("validated");
        let ha = *self.addr_map.get(&ha_addr).expect("validated");
        Ok((ha, ha_addr))
    }

    /// Sends the home agent a registration request for `victim_home` with
    /// `coa` as care-of address, authenticated under a freshly drawn key the
    /// attacker made up.
    pub fn inject_forged_rrq(&mut self, attacker: NodeId, victim_home: Ipv4Addr, coa: Ipv4Addr, spi: ForgedSpi) -> Result<(), SimError> {
        self.check_role(attacker, Role::Attacker)?;
        let (ha, ha_addr) = self.victim_home_agent(victim_home)?;
        let spi = match spi {
            ForgedSpi::Real => self.nodes[ha.0]
                .store
                .primary_context(&PeerPair::new(RolePair::MnHa, victim_home, ha_addr))
                .map_or(MIN_SPI, SecurityContext::spi),
            ForgedSpi::Random => self.rng.gen_range(MIN_SPI..=u32::MAX),
            ForgedSpi::Fixed(s) => s,
        };
        let mut key = [0u8; FORGED_KEY_LEN];
        self.rng.fill(&mut key[..]);
        let ctx = SecurityContext::hmac_md5(spi, key.to_vec())?;
        let rrq = RegistrationMessage::request(RegistrationRequest {
            flags: Flags::empty(),
            lifetime: DEFAULT_LIFETIME,
            home_address: victim_home,
            home_agent: ha_addr,
            care_of_address: coa,
            identification: agents::make_id(self.now.as_secs() as u32, self.rng.gen()),
        });
        let signed = secassoc::sign(rrq, &ctx, AuthKind::Mhae)?;
        self.send_control(attacker, ha, signed, vec![kv("forged", "yes"), kv("spi", spi)]);
        Ok(())
    }

    fn send_data(&mut self, src: NodeId, dst: NodeId, payload: Vec<u8>) {
        self.next_packet += 1;
        let pkt = IpPacket::new(
            self.nodes[src.0].addresses[0],
            self.nodes[dst.0].addresses[0],
            datapath::UDP_PROTOCOL,
            payload,
        );
        let flight = InFlight {
            seq: self.next_packet,
            pkt,
        };
        self.process_packet(src, None, flight);
    }

    fn transmit(&mut self, from: NodeId, to: NodeId, flight: InFlight) {
        if self.topo.loss > 0.0 && self.rng.gen::<f64>() < self.topo.loss {
            self.record_nodes(TraceKind::Drop, from, to, vec![kv("reason", DropReason::Lost), kv("seq", flight.seq)]);
            return;
        }
        self.after_link(Action::Packet {
            at: to,
            prev: Some(from),
            flight,
        });
    }

    fn forward_action(&self, at: NodeId, pkt: &IpPacket) -> ForwardAction {
        let node = &self.nodes[at.0];
        let (bindings, visitors, served, held): (_, _, &[Ipv4Addr], &[Ipv4Addr]) = match &node.agent {
            Agent::Home { ha, served, held, .. } => (Some(ha.bindings()), None, served, held),
            Agent::Foreign(fa) => (None, Some(fa.visitors()), &[], &[]),
            _ => (None, None, &[], &[]),
        };
        let view = NodeView {
            id: at,
            role: self.topo.node(at).role,
            addresses: &node.addresses,
            bindings,
            visitors,
            served_homes: served,
            held,
            now: self.now,
        };
        datapath::forward(&view, &self.routes(), pkt)
    }

    fn routes(&self) -> Routes<'_> {
        Routes {
            topo: &self.topo,
            subnets: &self.subnets,
            addr_map: &self.addr_map,
        }
    }

    fn drop_packet(&mut self, at: NodeId, flight: &InFlight, reason: DropReason) {
        let dst = self.addr_name(flight.pkt.dst);
        let name = self.topo.name(at).to_string();
        self.record(TraceKind::Drop, &name, &dst, vec![kv("reason", reason), kv("seq", flight.seq)]);
    }

    fn process_packet(&mut self, at: NodeId, prev: Option<NodeId>, mut flight: InFlight) {
        if let Some(p) = prev {
            if self.topo.node(at).role == Role::MobileNode && self.subnets[p.0] != self.subnets[at.0] {
                return self.drop_packet(at, &flight, DropReason::Detached);
            }
        }
        let push_hop = |flight: &mut InFlight, op| flight.pkt.hop_trace.push(Hop { node: at, op });
        match self.forward_action(at, &flight.pkt) {
            ForwardAction::DeliverLocal => {
                push_hop(&mut flight, HopOp::Deliver);
                self.deliver(at, flight);
            }
            ForwardAction::Forward(next) => {
                push_hop(&mut flight, HopOp::Forward);
                self.transmit(at, next, flight);
            }
            ForwardAction::Encapsulate(coa) => {
                push_hop(&mut flight, HopOp::Encapsulate);
                let outer = match datapath::encapsulate(&flight.pkt, self.nodes[at.0].addresses[0], coa) {
                    Ok(o) => o,
                    Err(_) => return self.drop_packet(at, &flight, DropReason::NestedTunnel),
                };
                let inner = format!("{}->{}", self.addr_name(flight.pkt.src), self.addr_name(flight.pkt.dst));
                let (name, coa_name) = (self.topo.name(at).to_string(), self.addr_name(coa));
                self.record(
                    TraceKind::Tunnel,
                    &name,
                    &coa_name,
                    vec![kv("seq", flight.seq), kv("coa", coa), kv("inner", inner)],
                );
                let seq = flight.seq;
                let outer = InFlight { seq, pkt: outer };
                match self.routes_next(at, coa) {
                    Some(next) => self.transmit(at, next, outer),
                    None => self.drop_packet(at, &outer, DropReason::NoRoute),
                }
            }
            ForwardAction::Decapsulate => {
                push_hop(&mut flight, HopOp::Decapsulate);
                let inner = match datapath::decapsulate(&flight.pkt) {
                    Ok(p) => InFlight { seq: flight.seq, pkt: p },
                    Err(_) => return self.drop_packet(at, &flight, DropReason::Malformed),
                };
                let (name, dst) = (self.topo.name(at).to_string(), self.addr_name(inner.pkt.dst));
                let src = self.addr_name(flight.pkt.src);
                self.record(TraceKind::Detunnel, &name, &dst, vec![kv("seq", inner.seq), kv("from", src)]);
                match self.forward_action(at, &inner.pkt) {
                    ForwardAction::Forward(next) => self.transmit(at, next, inner),
                    ForwardAction::DeliverLocal => self.deliver(at, inner),
                    ForwardAction::Drop(reason) => self.drop_packet(at, &inner, reason),
                    _ => self.drop_packet(at, &inner, DropReason::NestedTunnel),
                }
            }
            ForwardAction::Queue => self.enqueue(at, flight),
            ForwardAction::Drop(reason) => self.drop_packet(at, &flight, reason),
        }
    }

    fn routes_next(&self, from: NodeId, dst: Ipv4Addr) -> Option<NodeId> {
        use crate::datapath::RouteTable;
        self.routes().next_hop(from, dst)
    }

    fn enqueue(&mut self, ha_node: NodeId, flight: InFlight) {
        let limit = self.config.queue_limit;
        let home = flight.pkt.dst;
        let seq = flight.seq;
        let Agent::Home { queues, .. } = &mut self.nodes[ha_node.0].agent else {
            return self.drop_packet(ha_node, &flight, DropReason::NoRoute);
        };
        let q = queues.entry(home).or_default();
        q.push_back(flight);
        let overflow = if q.len() > limit { q.pop_front() } else { None };
        let ha = self.topo.name(ha_node).to_string();
        let dst = self.addr_name(home);
        self.record(TraceKind::Note, &ha, &dst, vec![kv("event", "queued"), kv("seq", seq)]);
        if let Some(old) = overflow {
            self.drop_packet(ha_node, &old, DropReason::QueueOverflow);
        }
    }

    fn deliver(&mut self, at: NodeId, flight: InFlight) {
        let pkt = flight.pkt;
        let src = self.addr_map.get(&pkt.src).copied().unwrap_or(at);
        let hops = pkt.hop_trace.iter().map(|h| self.topo.name(h.node)).collect::<Vec<_>>().join(",");
        let encap = pkt.hop_trace.iter().filter(|h| h.op == HopOp::Encapsulate).count();
        let decap = pkt.hop_trace.iter().filter(|h| h.op == HopOp::Decapsulate).count();
        let detail = vec![
            kv("seq", flight.seq),
            kv("payload", String::from_utf8_lossy(&pkt.payload)),
            kv("daddr", pkt.dst),
            kv("hops", hops),
            kv("encap", encap),
            kv("decap", decap),
        ];
        let src_name = self.addr_name(pkt.src);
        let dst_name = self.topo.name(at).to_string();
        self.record(TraceKind::Data, &src_name, &dst_name, detail);
        self.deliveries.push(Delivery {
            time: self.now,
            seq: flight.seq,
            src,
            dst: at,
            dst_addr: pkt.dst,
            payload: pkt.payload,
            hops: pkt.hop_trace,
        });
    }
}
