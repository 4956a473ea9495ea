//! Length-prefixed binary frames.
//!
//! ```text
//! total_len u32 | opcode u8 | request_id u64 | payload      (little-endian)
//! ```
//!
//! `total_len` counts the 13 header bytes plus the payload. A response
//! carries the request's id and the request opcode with the high bit set,
//! or `ERROR` with a code and a message.

use std::fmt;
use std::io::{Read, Write};

use super::NodeAddress;
use crate::castore::{BlockMap, FileId, Reader};
use crate::error::{Error, Result};
use crate::hashcore::Digest;

pub const HEADER_LEN: usize = 13;
pub const MAX_PAYLOAD: usize = 16 * 1024 * 1024;

pub const PUT_BLOCK: u8 = 0x01;
pub const GET_BLOCK: u8 = 0x02;
pub const HAS_BLOCK: u8 = 0x03;
pub const GET_BLOCKMAP: u8 = 0x10;
pub const PUT_BLOCKMAP: u8 = 0x11;
pub const LIST_NODES: u8 = 0x12;
pub const REGISTER_NODE: u8 = 0x20;
pub const ERROR: u8 = 0x7F;
pub const RESPONSE_BIT: u8 = 0x80;

/// Stands for "no previous version" in `PUT_BLOCKMAP`.
const ABSENT_VERSION: u64 = u64::MAX;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u16)]
pub enum ErrorCode {
    NotFound = 1,
    Conflict = 2,
    Integrity = 3,
    Capacity = 4,
    Malformed = 5,
}

impl ErrorCode {
    pub fn of(err: &Error) -> ErrorCode {
        match err {
            Error::NotFound(_) => ErrorCode::NotFound,
            Error::Conflict(_) => ErrorCode::Conflict,
            Error::Integrity(_) => ErrorCode::Integrity,
            Error::Capacity(_) | Error::Io(_) => ErrorCode::Capacity,
            _ => ErrorCode::Malformed,
        }
    }

    /// Local error for a code received from a peer.
    pub fn to_error(code: u16, message: String) -> Error {
        match code {
            1 => Error::NotFound(message),
            2 => Error::Conflict(message),
            3 => Error::Integrity(message),
            4 => Error::Capacity(message),
            5 => Error::Malformed(message),
            _ => Error::Remote { code, message },
        }
    }
}

#[derive(Clone, PartialEq, Eq)]
pub struct Frame {
    pub opcode: u8,
    pub request_id: u64,
    pub payload: Vec<u8>,
}

impl fmt::Debug for Frame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Frame(op {:#04x}, id {}, {} bytes)", self.opcode, self.request_id, self.payload.len())
    }
}

impl Frame {
    pub fn new(opcode: u8, request_id: u64, payload: Vec<u8>) -> Self {
        Frame { opcode, request_id, payload }
    }

    pub fn wire_len(&self) -> usize {
        HEADER_LEN + self.payload.len()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.wire_len());
        out.extend_from_slice(&(self.wire_len() as u32).to_le_bytes());
        out.push(self.opcode);
        out.extend_from_slice(&self.request_id.to_le_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    /// Parses exactly one frame occupying all of `bytes`.
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        let total = check_len(r.u32()?)?;
        if total != bytes.len() {
            return Err(Error::malformed(format!("frame says {total} bytes, got {}", bytes.len())));
        }
        let opcode = r.u8()?;
        let request_id = r.u64()?;
        Ok(Frame { opcode, request_id, payload: r.rest().to_vec() })
    }

    /// Reads one frame; `Ok(None)` on a clean end of stream.
    pub fn read_from(stream: &mut impl Read) -> Result<Option<Self>> {
        let mut len = [0u8; 4];
        match stream.read_exact(&mut len) {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => return Ok(None),
            Err(e) => return Err(e.into()),
        }
        let total = check_len(u32::from_le_bytes(len))?;
        let mut rest = vec![0u8; total - 4];
        stream.read_exact(&mut rest)?;
        let request_id = u64::from_le_bytes(rest[1..9].try_into().expect("8 bytes"));
        Ok(Some(Frame { opcode: rest[0], request_id, payload: rest.split_off(9) }))
    }

    pub fn write_to(&self, stream: &mut impl Write) -> Result<()> {
        stream.write_all(&self.encode())?;
        stream.flush()?;
        Ok(())
    }
}

fn check_len(total: u32) -> Result<usize> {
    let total = total as usize;
    if !(HEADER_LEN..=HEADER_LEN + MAX_PAYLOAD).contains(&total) {
        return Err(Error::malformed(format!("frame length {total} out of range")));
    }
    Ok(total)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Request {
    PutBlock { digest: Digest, data: Vec<u8> },
    GetBlock { digest: Digest },
    HasBlock { digest: Digest },
    GetBlockMap { file: FileId },
    PutBlockMap { expected: Option<u64>, map: BlockMap },
    ListNodes,
    RegisterNode { node: NodeAddress },
}

impl Request {
    pub fn opcode(&self) -> u8 {
        match self {
            Request::PutBlock { .. } => PUT_BLOCK,
            Request::GetBlock { .. } => GET_BLOCK,
            Request::HasBlock { .. } => HAS_BLOCK,
            Request::GetBlockMap { .. } => GET_BLOCKMAP,
            Request::PutBlockMap { .. } => PUT_BLOCKMAP,
            Request::ListNodes => LIST_NODES,
            Request::RegisterNode { .. } => REGISTER_NODE,
        }
    }

    /// Block traffic as opposed to metadata traffic.
    pub fn is_block_op(&self) -> bool {
        self.opcode() < GET_BLOCKMAP
    }

    pub fn to_frame(&self, request_id: u64) -> Result<Frame> {
        let mut p = Vec::new();
        match self {
            Request::PutBlock { digest, data } => {
                put_digest(&mut p, digest);
                p.extend_from_slice(data);
            }
            Request::GetBlock { digest } | Request::HasBlock { digest } => put_digest(&mut p, digest),
            Request::GetBlockMap { file } => put_str(&mut p, file.as_str()),
            Request::PutBlockMap { expected, map } => {
                p.extend_from_slice(&expected.unwrap_or(ABSENT_VERSION).to_le_bytes());
                p.extend_from_slice(&map.encode());
            }
            Request::ListNodes => {}
            Request::RegisterNode { node } => put_node(&mut p, node),
        }
        sized_frame(self.opcode(), request_id, p)
    }

    pub fn from_frame(frame: &Frame) -> Result<Self> {
        let mut r = Reader::new(&frame.payload);
        let req = match frame.opcode {
            PUT_BLOCK => {
                let digest = get_digest(&mut r)?;
                Request::PutBlock { digest, data: r.rest().to_vec() }
            }
            GET_BLOCK => Request::GetBlock { digest: get_digest(&mut r)? },
            HAS_BLOCK => Request::HasBlock { digest: get_digest(&mut r)? },
            GET_BLOCKMAP => {
                let file = FileId::new(r.string()?).map_err(|e| Error::malformed(e.to_string()))?;
                Request::GetBlockMap { file }
            }
            PUT_BLOCKMAP => {
                let expected = Some(r.u64()?).filter(|&v| v != ABSENT_VERSION);
                Request::PutBlockMap { expected, map: BlockMap::decode(r.rest())? }
            }
            LIST_NODES => Request::ListNodes,
            REGISTER_NODE => Request::RegisterNode { node: get_node(&mut r)? },
            op => return Err(Error::malformed(format!("unknown request opcode {op:#04x}"))),
        };
        finished(&r)?;
        Ok(req)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Response {
    PutBlock,
    GetBlock { data: Vec<u8> },
    HasBlock { present: bool },
    GetBlockMap { map: Option<BlockMap> },
    PutBlockMap,
    ListNodes { nodes: Vec<NodeAddress> },
    RegisterNode { index: u16 },
    Error { code: u16, message: String },
}

impl Response {
    pub fn error(err: &Error) -> Self {
        Response::Error { code: ErrorCode::of(err) as u16, message: err.to_string() }
    }

    pub fn opcode(&self) -> u8 {
        RESPONSE_BIT
            | match self {
                Response::PutBlock => PUT_BLOCK,
                Response::GetBlock { .. } => GET_BLOCK,
                Response::HasBlock { .. } => HAS_BLOCK,
                Response::GetBlockMap { .. } => GET_BLOCKMAP,
                Response::PutBlockMap => PUT_BLOCKMAP,
                Response::ListNodes { .. } => LIST_NODES,
                Response::RegisterNode { .. } => REGISTER_NODE,
                Response::Error { .. } => return ERROR,
            }
    }

    pub fn to_frame(&self, request_id: u64) -> Result<Frame> {
        let mut p = Vec::new();
        match self {
            Response::PutBlock | Response::PutBlockMap => {}
            Response::GetBlock { data } => p.extend_from_slice(data),
            Response::HasBlock { present } => p.push(*present as u8),
            Response::GetBlockMap { map } => match map {
                Some(map) => {
                    p.push(1);
                    p.extend_from_slice(&map.encode());
                }
                None => p.push(0),
            },
            Response::ListNodes { nodes } => {
                p.extend_from_slice(&(nodes.len() as u16).to_le_bytes());
                for node in nodes {
                    put_node(&mut p, node);
                }
            }
            Response::RegisterNode { index } => p.extend_from_slice(&index.to_le_bytes()),
            Response::Error { code, message } => {
                p.extend_from_slice(&code.to_le_bytes());
                put_str(&mut p, truncate(message, u16::MAX as usize));
            }
        }
        sized_frame(self.opcode(), request_id, p)
    }

    /// Parses the reply to a request with opcode `request`.
    pub fn from_frame(frame: &Frame, request: u8) -> Result<Self> {
        if frame.opcode != ERROR && frame.opcode != request | RESPONSE_BIT {
            return Err(Error::malformed(format!(
                "response opcode {:#04x} does not answer {request:#04x}",
                frame.opcode
            )));
        }
        let mut r = Reader::new(&frame.payload);
        let resp = match frame.opcode {
            ERROR => {
                let code = r.u16()?;
                Response::Error { code, message: r.string()? }
            }
            _ => match request {
                PUT_BLOCK => Response::PutBlock,
                GET_BLOCK => Response::GetBlock { data: r.rest().to_vec() },
                HAS_BLOCK => Response::HasBlock { present: get_bool(&mut r)? },
                GET_BLOCKMAP => {
                    let map = if get_bool(&mut r)? { Some(BlockMap::decode(r.rest())?) } else { None };
                    Response::GetBlockMap { map }
                }
                PUT_BLOCKMAP => Response::PutBlockMap,
                LIST_NODES => {
                    let n = r.u16()?;
                    let nodes = (0..n).map(|_| get_node(&mut r)).collect::<Result<_>>()?;
                    Response::ListNodes { nodes }
                }
                REGISTER_NODE => Response::RegisterNode { index: r.u16()? },
                op => return Err(Error::malformed(format!("unknown request opcode {op:#04x}"))),
            },
        };
        finished(&r)?;
        Ok(resp)
    }

    /// Turns an `Error` response into the matching local error.
    pub fn into_result(self) -> Result<Self> {
        match self {
            Response::Error { code, message } => Err(ErrorCode::to_error(code, message)),
            other => Ok(other),
        }
    }
}

fn sized_frame(opcode: u8, request_id: u64, payload: Vec<u8>) -> Result<Frame> {
    if payload.len() > MAX_PAYLOAD {
        return Err(Error::Capacity(format!("payload of {} bytes exceeds the frame limit", payload.len())));
    }
    Ok(Frame { opcode, request_id, payload })
}

fn finished(r: &Reader<'_>) -> Result<()> {
    if r.is_empty() {
        Ok(())
    } else {
        Err(Error::malformed("trailing bytes in payload"))
    }
}

fn truncate(s: &str, max: usize) -> &str {
    if s.len() <= max {
        return s;
    }
    let mut end = max;
    while !s.is_char_boundary(end) {
        end -= 1;
    }
    &s[..end]
}

fn put_digest(p: &mut Vec<u8>, d: &Digest) {
    p.push(d.len() as u8);
    p.extend_from_slice(d.as_bytes());
}

fn get_digest(r: &mut Reader<'_>) -> Result<Digest> {
    let n = r.u8()? as usize;
    Digest::from_wire(r.take(n)?)
}

fn put_str(p: &mut Vec<u8>, s: &str) {
    p.extend_from_slice(&(s.len() as u16).to_le_bytes());
    p.extend_from_slice(s.as_bytes());
}

fn put_node(p: &mut Vec<u8>, node: &NodeAddress) {
    put_str(p, &node.host);
    p.extend_from_slice(&node.port.to_le_bytes());
}

fn get_node(r: &mut Reader<'_>) -> Result<NodeAddress> {
    let host = r.string()?;
    Ok(NodeAddress { host, port: r.u16()? })
}

fn get_bool(r: &mut Reader<'_>) -> Result<bool> {
    match r.u8()? {
        0 => Ok(false),
        1 => Ok(true),
        b => Err(Error::malformed(format!("bad flag byte {b}"))),
    }
}
