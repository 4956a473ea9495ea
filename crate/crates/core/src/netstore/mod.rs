//! Networked deployment: a metadata manager, storage nodes, and clients
//! speaking length-prefixed binary frames over TCP or an in-process
//! loopback.

mod client;
mod manager;
mod node;
mod server;
pub mod wire;

use std::fmt;
use std::sync::Arc;

pub use client::{
    upload_striped, Connection, LoopbackTransport, ManagerClient, NodeClient, TcpTransport, Transport, WireCounters,
    WireTotals,
};
pub use manager::ManagerService;
pub use node::{NodeConfig, NodeService, NodeStorage};
pub use server::{dispatch, FrameHandler, Server};

use crate::castore::{BlockService, HashEngine, MetadataService, Store, StoreConfig};
use crate::error::{Error, Result};
use crate::hashcore::SegmentedHashParams;

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct NodeAddress {
    pub host: String,
    pub port: u16,
}

impl NodeAddress {
    pub fn new(host: impl Into<String>, port: u16) -> Self {
        NodeAddress { host: host.into(), port }
    }

    /// Parses `host:port`.
    pub fn parse(s: &str) -> Result<Self> {
        let (host, port) = s.rsplit_once(':').ok_or_else(|| Error::config(format!("expected host:port, got {s:?}")))?;
        let port = port.parse().map_err(|_| Error::config(format!("bad port in {s:?}")))?;
        if host.is_empty() {
            return Err(Error::config(format!("missing host in {s:?}")));
        }
        Ok(NodeAddress::new(host, port))
    }
}

impl fmt::Display for NodeAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.host, self.port)
    }
}

/// Clients for a running deployment, found through its manager.
pub struct Remote {
    pub manager: Arc<ManagerClient>,
    pub nodes: Vec<Arc<NodeClient>>,
}

impl Remote {
    pub fn connect(manager: &NodeAddress) -> Result<Self> {
        let manager = Arc::new(ManagerClient::new(Connection::tcp(manager)));
        let nodes = manager.list_nodes()?.iter().map(|n| Arc::new(NodeClient::new(Connection::tcp(n)))).collect();
        Ok(Remote { manager, nodes })
    }

    pub fn store(&self, config: StoreConfig, engine: HashEngine) -> Result<Store> {
        let nodes = self.nodes.iter().map(|n| n.clone() as Arc<dyn BlockService>).collect();
        Store::new(self.manager.clone(), nodes, config, engine)
    }

    pub fn node_totals(&self) -> Vec<WireTotals> {
        self.nodes.iter().map(|n| n.counters().totals()).collect()
    }

    /// Traffic of every client, manager included.
    pub fn wire_totals(&self) -> WireTotals {
        self.node_totals().into_iter().sum::<WireTotals>() + self.manager.counters().totals()
    }

    pub fn reset_counters(&self) {
        self.manager.counters().reset();
        for n in &self.nodes {
            n.counters().reset();
        }
    }
}

/// A whole deployment in one process: one manager and `n` memory nodes,
/// reached over loopback frames or real sockets on 127.0.0.1.
pub struct Cluster {
    pub manager: Arc<ManagerService>,
    pub nodes: Vec<Arc<NodeService>>,
    pub remote: Remote,
    servers: Vec<Server>,
}

impl Cluster {
    pub fn loopback(node_count: usize, digest: SegmentedHashParams) -> Result<Self> {
        let manager = Arc::new(ManagerService::new());
        let nodes: Vec<_> = (0..node_count).map(|_| Arc::new(NodeService::in_memory(digest))).collect();
        for i in 0..node_count {
            manager.register_node(&NodeAddress::new("loopback", i as u16))?;
        }
        let remote = Remote {
            manager: Arc::new(ManagerClient::new(Connection::loopback(manager.clone()))),
            nodes: nodes.iter().map(|n| Arc::new(NodeClient::new(Connection::loopback(n.clone())))).collect(),
        };
        Ok(Cluster { manager, nodes, remote, servers: Vec::new() })
    }

    pub fn sockets(node_count: usize, digest: SegmentedHashParams) -> Result<Self> {
        let manager = Arc::new(ManagerService::new());
        let mut servers = vec![Server::spawn("127.0.0.1:0", manager.clone())?];
        let manager_addr = NodeAddress::new("127.0.0.1", servers[0].local_addr().port());
        let registrar = ManagerClient::new(Connection::tcp(&manager_addr));
        let mut nodes = Vec::with_capacity(node_count);
        for _ in 0..node_count {
            let node = Arc::new(NodeService::in_memory(digest));
            let server = Server::spawn("127.0.0.1:0", node.clone())?;
            registrar.register_node(&NodeAddress::new("127.0.0.1", server.local_addr().port()))?;
            servers.push(server);
            nodes.push(node);
        }
        let remote = Remote::connect(&manager_addr)?;
        Ok(Cluster { manager, nodes, remote, servers })
    }

    pub fn manager_addr(&self) -> Option<std::net::SocketAddr> {
        self.servers.first().map(Server::local_addr)
    }

    pub fn metadata(&self) -> Arc<dyn MetadataService> {
        self.remote.manager.clone()
    }

    pub fn block_services(&self) -> Vec<Arc<dyn BlockService>> {
        self.remote.nodes.iter().map(|n| n.clone() as Arc<dyn BlockService>).collect()
    }

    pub fn store(&self, config: StoreConfig, engine: HashEngine) -> Result<Store> {
        self.remote.store(config, engine)
    }

    pub fn wire_totals(&self) -> WireTotals {
        self.remote.wire_totals()
    }

    pub fn node_totals(&self) -> Vec<WireTotals> {
        self.remote.node_totals()
    }

    pub fn reset_counters(&self) {
        self.remote.reset_counters()
    }
}

impl Drop for Cluster {
    fn drop(&mut self) {
        for s in &mut self.servers {
            s.stop();
        }
    }
}
