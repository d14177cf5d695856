use std::collections::BTreeMap;
use std::net::Ipv4Addr;

use crate::datapath::RouteTable;
use crate::topology::{NodeId, Role, SubnetId, Topology};

/// Plain IP routing over the current attachment of every node.
///
/// A host sends off-subnet traffic to its subnet's gateway, gateways reach
/// each other in one backbone hop, and the last gateway delivers on-link.
/// A mobile node's home address always routes to its home subnet, wherever
/// the node actually is.
pub(crate) struct Routes<'a> {
    pub topo: &'a Topology,
    pub subnets: &'a [SubnetId],
    pub addr_map: &'a BTreeMap<Ipv4Addr, NodeId>,
}

impl Routes<'_> {
    fn routing_subnet(&self, target: NodeId) -> Option<SubnetId> {
        if self.topo.node(target).role == Role::MobileNode {
            self.topo.home_subnet(target)
        } else {
            Some(self.subnets[target.0])
        }
    }
}

impl RouteTable for Routes<'_> {
    fn next_hop(&self, from: NodeId, dst: Ipv4Addr) -> Option<NodeId> {
        let target = *self.addr_map.get(&dst)?;
        let to_subnet = self.routing_subnet(target)?;
        let target_on_link = self.subnets[target.0] == to_subnet;
        let from_subnet = self.subnets[from.0];
        if from_subnet == to_subnet {
            return (target_on_link && target != from).then_some(target);
        }
        if !self.topo.node(from).role.is_gateway() {
            if let Some(gw) = self.topo.gateway(from_subnet) {
                return Some(gw);
            }
        }
        match self.topo.gateway(to_subnet) {
            Some(gw) if gw != from => Some(gw),
            _ => target_on_link.then_some(target),
        }
    }
}
