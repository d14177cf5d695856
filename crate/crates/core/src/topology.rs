//! Static network description: subnets and the nodes declared on them.

use std::collections::BTreeSet;
use std::fmt;
use std::net::Ipv4Addr;

use thiserror::Error;

use crate::time::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SubnetId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    HomeAgent,
    ForeignAgent,
    MobileNode,
    Correspondent,
    Router,
    Attacker,
}

impl Role {
    pub fn parse(text: &str) -> Option<Role> {
        match text.to_ascii_uppercase().as_str() {
            "HA" => Some(Role::HomeAgent),
            "FA" => Some(Role::ForeignAgent),
            "MN" => Some(Role::MobileNode),
            "CN" => Some(Role::Correspondent),
            "ROUTER" => Some(Role::Router),
            "ATTACKER" => Some(Role::Attacker),
            _ => None,
        }
    }

    /// Agents and routers forward traffic between subnets.
    pub fn is_gateway(self) -> bool {
        matches!(self, Role::HomeAgent | Role::ForeignAgent | Role::Router)
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::HomeAgent => "HA",
            Role::ForeignAgent => "FA",
            Role::MobileNode => "MN",
            Role::Correspondent => "CN",
            Role::Router => "ROUTER",
            Role::Attacker => "ATTACKER",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeSpec {
    pub name: String,
    pub role: Role,
    /// For a mobile node this is its home address.
    pub address: Ipv4Addr,
    /// Initial attachment.
    pub subnet: SubnetId,
    pub home_agent: Option<Ipv4Addr>,
    /// Care-of address a foreign agent advertises; defaults to its address.
    pub care_of_address: Option<Ipv4Addr>,
    /// Registration lifetime a mobile node requests.
    pub lifetime: Option<u16>,
}

#[derive(Error, Debug, Clone, PartialEq, Eq)]
pub enum TopologyError {
    #[error("duplicate subnet {0:?}")]
    DuplicateSubnet(String),
    #[error("duplicate node {0:?}")]
    DuplicateNode(String),
    #[error("address {0} used by more than one node")]
    DuplicateAddress(Ipv4Addr),
    #[error("mobile node {0:?} has no home agent (ha=)")]
    MissingHomeAgent(String),
    #[error("mobile node {name:?}: no home agent with address {addr}")]
    UnknownHomeAgent { name: String, addr: Ipv4Addr },
}

#[derive(Debug, Clone)]
pub struct Topology {
    subnets: Vec<String>,
    nodes: Vec<NodeSpec>,
    pub link_delay: SimTime,
    /// Per-hop loss probability for data packets.
    pub loss: f64,
}

pub const DEFAULT_LINK_DELAY: SimTime = SimTime::from_millis(10);

impl Default for Topology {
    fn default() -> Self {
        Topology {
            subnets: Vec::new(),
            nodes: Vec::new(),
            link_delay: DEFAULT_LINK_DELAY,
            loss: 0.0,
        }
    }
}

impl Topology {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_subnet(&mut self, name: &str) -> Result<SubnetId, TopologyError> {
        if self.subnet_by_name(name).is_some() {
            return Err(TopologyError::DuplicateSubnet(name.to_string()));
        }
        self.subnets.push(name.to_string());
        Ok(SubnetId(self.subnets.len() - 1))
    }

    pub fn add_node(&mut self, spec: NodeSpec) -> Result<NodeId, TopologyError> {
        if self.node_by_name(&spec.name).is_some() {
            return Err(TopologyError::DuplicateNode(spec.name));
        }
        if self.nodes.iter().any(|n| n.address == spec.address) {
            return Err(TopologyError::DuplicateAddress(spec.address));
        }
        if spec.role == Role::MobileNode && spec.home_agent.is_none() {
            return Err(TopologyError::MissingHomeAgent(spec.name));
        }
        self.nodes.push(spec);
        Ok(NodeId(self.nodes.len() - 1))
    }

    /// Checks references between nodes once all are declared.
    pub fn validate(&self) -> Result<(), TopologyError> {
        let mut addrs = BTreeSet::new();
        for n in &self.nodes {
            if !addrs.insert(n.address) {
                return Err(TopologyError::DuplicateAddress(n.address));
            }
        }
        for n in self.nodes.iter().filter(|n| n.role == Role::MobileNode) {
            let ha = n.home_agent.ok_or_else(|| TopologyError::MissingHomeAgent(n.name.clone()))?;
            match self.node_by_address(ha) {
                Some(id) if self.node(id).role == Role::HomeAgent => {}
                _ => {
                    return Err(TopologyError::UnknownHomeAgent {
                        name: n.name.clone(),
                        addr: ha,
                    })
                }
            }
        }
        Ok(())
    }

    pub fn subnet_by_name(&self, name: &str) -> Option<SubnetId> {
        self.subnets.iter().position(|s| s == name).map(SubnetId)
    }

    pub fn subnet_name(&self, id: SubnetId) -> &str {
        &self.subnets[id.0]
    }

    pub fn subnet_count(&self) -> usize {
        self.subnets.len()
    }

    pub fn node_by_name(&self, name: &str) -> Option<NodeId> {
        self.nodes.iter().position(|n| n.name == name).map(NodeId)
    }

    pub fn node_by_address(&self, addr: Ipv4Addr) -> Option<NodeId> {
        self.nodes.iter().position(|n| n.address == addr).map(NodeId)
    }

    pub fn node(&self, id: NodeId) -> &NodeSpec {
        &self.nodes[id.0]
    }

    pub fn nodes(&self) -> impl Iterator<Item = (NodeId, &NodeSpec)> {
        self.nodes.iter().enumerate().map(|(i, n)| (NodeId(i), n))
    }

    pub fn name(&self, id: NodeId) -> &str {
        &self.nodes[id.0].name
    }

    /// First declared gateway (agent or router) on a subnet.
    pub fn gateway(&self, subnet: SubnetId) -> Option<NodeId> {
        self.nodes().find(|(_, n)| n.subnet == subnet && n.role.is_gateway()).map(|(id, _)| id)
    }

    /// The agent that advertises on a subnet: a foreign agent, or a home
    /// agent on its own subnet.
    pub fn advertising_agent(&self, subnet: SubnetId) -> Option<NodeId> {
        self.nodes()
            .find(|(_, n)| n.subnet == subnet && matches!(n.role, Role::ForeignAgent | Role::HomeAgent))
            .map(|(id, _)| id)
    }

    /// Home subnet of a mobile node: the subnet of its home agent.
    pub fn home_subnet(&self, mn: NodeId) -> Option<SubnetId> {
        let ha = self.node(mn).home_agent?;
        self.node_by_address(ha).map(|id| self.node(id).subnet)
    }
}
