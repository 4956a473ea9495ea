use std::io::{BufReader, BufWriter};
use std::net::TcpStream;
use std::ops::Add;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::thread;

use parking_lot::Mutex;

use super::server::{dispatch, FrameHandler};
use super::wire::{Frame, Request, Response};
use super::NodeAddress;
use crate::castore::{BlockMap, BlockService, FileId, MetadataService};
use crate::error::{Error, Result};
use crate::hashcore::Digest;

/// Moves one encoded request frame to a service and returns the reply frame.
pub trait Transport: Send + Sync {
    fn exchange(&self, request: &Frame) -> Result<Frame>;
}

/// One TCP connection per client; calls are serialized on it.
pub struct TcpTransport {
    addr: String,
    conn: Mutex<Option<(BufReader<TcpStream>, BufWriter<TcpStream>)>>,
}

impl TcpTransport {
    pub fn new(addr: impl Into<String>) -> Self {
        TcpTransport { addr: addr.into(), conn: Mutex::new(None) }
    }

    pub fn connect(addr: impl Into<String>) -> Result<Self> {
        let t = TcpTransport::new(addr);
        *t.conn.lock() = Some(t.open()?);
        Ok(t)
    }

    fn open(&self) -> Result<(BufReader<TcpStream>, BufWriter<TcpStream>)> {
        let stream = TcpStream::connect(&self.addr)?;
        stream.set_nodelay(true)?;
        Ok((BufReader::new(stream.try_clone()?), BufWriter::new(stream)))
    }
}

impl Transport for TcpTransport {
    fn exchange(&self, request: &Frame) -> Result<Frame> {
        let mut guard = self.conn.lock();
        if guard.is_none() {
            *guard = Some(self.open()?);
        }
        let (reader, writer) = guard.as_mut().expect("connected");
        let result = request.write_to(writer).and_then(|()| {
            Frame::read_from(reader)?
                .ok_or_else(|| Error::Io(std::io::Error::new(std::io::ErrorKind::UnexpectedEof, "connection closed")))
        });
        if result.is_err() {
            // The stream may be mid-frame; start over next time.
            *guard = None;
        }
        result
    }
}

/// In-process transport: frames are encoded and decoded exactly as on a
/// socket, then handed straight to the service.
pub struct LoopbackTransport {
    handler: Arc<dyn FrameHandler>,
}

impl LoopbackTransport {
    pub fn new(handler: Arc<dyn FrameHandler>) -> Self {
        LoopbackTransport { handler }
    }
}

impl Transport for LoopbackTransport {
    fn exchange(&self, request: &Frame) -> Result<Frame> {
        let received = Frame::decode(&request.encode())?;
        let reply = dispatch(&*self.handler, &received);
        Frame::decode(&reply.encode())
    }
}

/// Byte counters for one client connection.
#[derive(Debug, Default)]
pub struct WireCounters {
    frames_sent: AtomicU64,
    bytes_sent: AtomicU64,
    bytes_received: AtomicU64,
    block_data_sent: AtomicU64,
    block_data_received: AtomicU64,
    metadata_bytes: AtomicU64,
}

/// Snapshot of [`WireCounters`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct WireTotals {
    pub frames_sent: u64,
    /// Whole frames, headers included.
    pub bytes_sent: u64,
    pub bytes_received: u64,
    /// Block payload bytes carried by `PUT_BLOCK` requests.
    pub block_data_sent: u64,
    /// Block payload bytes carried by `GET_BLOCK` replies.
    pub block_data_received: u64,
    /// Whole frames in both directions of metadata calls.
    pub metadata_bytes: u64,
}

impl Add for WireTotals {
    type Output = WireTotals;

    fn add(self, o: WireTotals) -> WireTotals {
        WireTotals {
            frames_sent: self.frames_sent + o.frames_sent,
            bytes_sent: self.bytes_sent + o.bytes_sent,
            bytes_received: self.bytes_received + o.bytes_received,
            block_data_sent: self.block_data_sent + o.block_data_sent,
            block_data_received: self.block_data_received + o.block_data_received,
            metadata_bytes: self.metadata_bytes + o.metadata_bytes,
        }
    }
}

impl std::iter::Sum for WireTotals {
    fn sum<I: Iterator<Item = WireTotals>>(iter: I) -> Self {
        iter.fold(WireTotals::default(), Add::add)
    }
}

impl WireCounters {
    pub fn totals(&self) -> WireTotals {
        let get = |c: &AtomicU64| c.load(Ordering::Relaxed);
        WireTotals {
            frames_sent: get(&self.frames_sent),
            bytes_sent: get(&self.bytes_sent),
            bytes_received: get(&self.bytes_received),
            block_data_sent: get(&self.block_data_sent),
            block_data_received: get(&self.block_data_received),
            metadata_bytes: get(&self.metadata_bytes),
        }
    }

    pub fn reset(&self) {
        for c in [
            &self.frames_sent,
            &self.bytes_sent,
            &self.bytes_received,
            &self.block_data_sent,
            &self.block_data_received,
            &self.metadata_bytes,
        ] {
            c.store(0, Ordering::Relaxed);
        }
    }
}

/// Request/response plumbing shared by the node and manager clients.
pub struct Connection {
    transport: Box<dyn Transport>,
    counters: WireCounters,
    next_id: AtomicU64,
}

impl Connection {
    pub fn new(transport: impl Transport + 'static) -> Self {
        Connection { transport: Box::new(transport), counters: WireCounters::default(), next_id: AtomicU64::new(1) }
    }

    pub fn tcp(addr: &NodeAddress) -> Self {
        Connection::new(TcpTransport::new(addr.to_string()))
    }

    pub fn loopback(handler: Arc<dyn FrameHandler>) -> Self {
        Connection::new(LoopbackTransport::new(handler))
    }

    pub fn counters(&self) -> &WireCounters {
        &self.counters
    }

    pub fn call(&self, request: &Request) -> Result<Response> {
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        let frame = request.to_frame(id)?;
        let reply = self.transport.exchange(&frame)?;
        let c = &self.counters;
        c.frames_sent.fetch_add(1, Ordering::Relaxed);
        c.bytes_sent.fetch_add(frame.wire_len() as u64, Ordering::Relaxed);
        c.bytes_received.fetch_add(reply.wire_len() as u64, Ordering::Relaxed);
        if request.is_block_op() {
            if let Request::PutBlock { data, .. } = request {
                c.block_data_sent.fetch_add(data.len() as u64, Ordering::Relaxed);
            }
        } else {
            c.metadata_bytes.fetch_add((frame.wire_len() + reply.wire_len()) as u64, Ordering::Relaxed);
        }
        if reply.request_id != id {
            return Err(Error::malformed(format!("reply to request {} arrived for {id}", reply.request_id)));
        }
        let response = Response::from_frame(&reply, frame.opcode)?.into_result()?;
        if let Response::GetBlock { data } = &response {
            c.block_data_received.fetch_add(data.len() as u64, Ordering::Relaxed);
        }
        Ok(response)
    }
}

fn unexpected(r: Response) -> Error {
    Error::malformed(format!("unexpected reply {r:?}"))
}

/// Client of one storage node.
pub struct NodeClient {
    conn: Connection,
}

impl NodeClient {
    pub fn new(conn: Connection) -> Self {
        NodeClient { conn }
    }

    pub fn counters(&self) -> &WireCounters {
        self.conn.counters()
    }
}

impl BlockService for NodeClient {
    fn put_block(&self, digest: &Digest, data: &[u8]) -> Result<()> {
        match self.conn.call(&Request::PutBlock { digest: *digest, data: data.to_vec() })? {
            Response::PutBlock => Ok(()),
            r => Err(unexpected(r)),
        }
    }

    fn get_block(&self, digest: &Digest) -> Result<Vec<u8>> {
        match self.conn.call(&Request::GetBlock { digest: *digest })? {
            Response::GetBlock { data } => Ok(data),
            r => Err(unexpected(r)),
        }
    }

    fn has_block(&self, digest: &Digest) -> Result<bool> {
        match self.conn.call(&Request::HasBlock { digest: *digest })? {
            Response::HasBlock { present } => Ok(present),
            r => Err(unexpected(r)),
        }
    }
}

/// Client of the metadata manager.
pub struct ManagerClient {
    conn: Connection,
}

impl ManagerClient {
    pub fn new(conn: Connection) -> Self {
        ManagerClient { conn }
    }

    pub fn counters(&self) -> &WireCounters {
        self.conn.counters()
    }
}

impl MetadataService for ManagerClient {
    fn get_blockmap(&self, file: &FileId) -> Result<Option<BlockMap>> {
        match self.conn.call(&Request::GetBlockMap { file: file.clone() })? {
            Response::GetBlockMap { map } => Ok(map),
            r => Err(unexpected(r)),
        }
    }

    fn put_blockmap(&self, map: &BlockMap, expected_previous: Option<u64>) -> Result<()> {
        match self.conn.call(&Request::PutBlockMap { expected: expected_previous, map: map.clone() })? {
            Response::PutBlockMap => Ok(()),
            r => Err(unexpected(r)),
        }
    }

    fn list_nodes(&self) -> Result<Vec<NodeAddress>> {
        match self.conn.call(&Request::ListNodes)? {
            Response::ListNodes { nodes } => Ok(nodes),
            r => Err(unexpected(r)),
        }
    }

    fn register_node(&self, node: &NodeAddress) -> Result<u16> {
        match self.conn.call(&Request::RegisterNode { node: node.clone() })? {
            Response::RegisterNode { index } => Ok(index),
            r => Err(unexpected(r)),
        }
    }
}

/// Uploads block `k` to node `k % width`, one thread per node, and returns
/// each block's node index. Fails if any upload fails.
pub fn upload_striped(blocks: &[(Digest, &[u8])], nodes: &[Arc<dyn BlockService>], width: usize) -> Result<Vec<u16>> {
    if width == 0 || width > nodes.len() {
        return Err(Error::config(format!("stripe width {width} must be in 1..={}", nodes.len())));
    }
    let placement: Vec<u16> = (0..blocks.len()).map(|k| (k % width) as u16).collect();
    let put_all = |node: usize| -> Result<()> {
        for (digest, data) in blocks.iter().skip(node).step_by(width) {
            nodes[node].put_block(digest, data)?;
        }
        Ok(())
    };
    let active = width.min(blocks.len());
    if active <= 1 {
        return (0..active).try_for_each(put_all).map(|()| placement);
    }
    thread::scope(|s| {
        let handles: Vec<_> = (0..active).map(|n| s.spawn(move || put_all(n))).collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(Error::SessionFailed("upload thread panicked".into()))))
            .collect::<Vec<_>>()
            .into_iter()
            .collect::<Result<()>>()
    })?;
    Ok(placement)
}
