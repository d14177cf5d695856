//! Mobile IPv4 registration with authentication extensions, and a
//! deterministic simulator for roaming, triangle routing and redirection
//! attacks.

pub mod agents;
pub mod cli;
pub mod datapath;
pub mod netsim;
pub mod scenario;
pub mod secassoc;
pub mod time;
pub mod topology;
pub mod wire;
