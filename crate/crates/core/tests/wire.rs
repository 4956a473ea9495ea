//! Golden byte vectors for every frame type.

use chunkforge_core::castore::{BlockMap, BlockRecord, FileId};
use chunkforge_core::hashcore::{Algorithm, Digest};
use chunkforge_core::netstore::wire::{Frame, Request, Response};
use chunkforge_core::netstore::NodeAddress;

fn d() -> Digest {
    Digest::from_slice(Algorithm::Md5, &(0u8..16).collect::<Vec<_>>()).unwrap()
}

fn frame(op: u8, id: u64, payload: &[u8]) -> Vec<u8> {
    let mut v = ((13 + payload.len()) as u32).to_le_bytes().to_vec();
    v.push(op);
    v.extend_from_slice(&id.to_le_bytes());
    v.extend_from_slice(payload);
    v
}

fn digest_field() -> Vec<u8> {
    let mut v = vec![16];
    v.extend(0u8..16);
    v
}

fn map() -> BlockMap {
    BlockMap::new(FileId::new("ab").unwrap(), 1, vec![BlockRecord { offset: 0, length: 4, digest: d() }]).unwrap()
}

fn msbm() -> Vec<u8> {
    let mut v = b"MSBM".to_vec();
    v.extend_from_slice(&[1, 0, 2, 0, b'a', b'b']);
    v.extend_from_slice(&1u64.to_le_bytes());
    v.extend_from_slice(&1u32.to_le_bytes());
    v.extend_from_slice(&0u64.to_le_bytes());
    v.extend_from_slice(&4u32.to_le_bytes());
    v.extend(digest_field());
    v
}

fn check_request(req: Request, id: u64, golden: Vec<u8>) {
    let f = req.to_frame(id).unwrap();
    assert_eq!(f.encode(), golden, "{req:?}");
    assert_eq!(Request::from_frame(&Frame::decode(&golden).unwrap()).unwrap(), req);
}

fn check_response(resp: Response, request_op: u8, id: u64, golden: Vec<u8>) {
    let f = resp.to_frame(id).unwrap();
    assert_eq!(f.encode(), golden, "{resp:?}");
    assert_eq!(Response::from_frame(&Frame::decode(&golden).unwrap(), request_op).unwrap(), resp);
}

#[test]
fn request_golden_vectors() {
    let mut put = digest_field();
    put.extend_from_slice(b"data");
    check_request(Request::PutBlock { digest: d(), data: b"data".to_vec() }, 1, frame(0x01, 1, &put));
    check_request(Request::GetBlock { digest: d() }, 2, frame(0x02, 2, &digest_field()));
    check_request(Request::HasBlock { digest: d() }, 3, frame(0x03, 3, &digest_field()));
    check_request(Request::GetBlockMap { file: FileId::new("ab").unwrap() }, 4, frame(0x10, 4, &[2, 0, b'a', b'b']));

    let mut put_map = 7u64.to_le_bytes().to_vec();
    put_map.extend(msbm());
    check_request(Request::PutBlockMap { expected: Some(7), map: map() }, 5, frame(0x11, 5, &put_map));
    let mut put_new = vec![0xFF; 8];
    put_new.extend(msbm());
    check_request(Request::PutBlockMap { expected: None, map: map() }, 6, frame(0x11, 6, &put_new));

    check_request(Request::ListNodes, 7, frame(0x12, 7, &[]));
    check_request(
        Request::RegisterNode { node: NodeAddress::new("h1", 0x1F90) },
        0x0102030405060708,
        frame(0x20, 0x0102030405060708, &[2, 0, b'h', b'1', 0x90, 0x1F]),
    );
}

#[test]
fn response_golden_vectors() {
    check_response(Response::PutBlock, 0x01, 1, frame(0x81, 1, &[]));
    check_response(Response::GetBlock { data: vec![9, 8, 7] }, 0x02, 2, frame(0x82, 2, &[9, 8, 7]));
    check_response(Response::HasBlock { present: true }, 0x03, 3, frame(0x83, 3, &[1]));
    check_response(Response::HasBlock { present: false }, 0x03, 3, frame(0x83, 3, &[0]));
    check_response(Response::GetBlockMap { map: None }, 0x10, 4, frame(0x90, 4, &[0]));
    let mut present = vec![1];
    present.extend(msbm());
    check_response(Response::GetBlockMap { map: Some(map()) }, 0x10, 4, frame(0x90, 4, &present));
    check_response(Response::PutBlockMap, 0x11, 5, frame(0x91, 5, &[]));
    check_response(
        Response::ListNodes { nodes: vec![NodeAddress::new("a", 1), NodeAddress::new("bc", 258)] },
        0x12,
        6,
        frame(0x92, 6, &[2, 0, 1, 0, b'a', 1, 0, 2, 0, b'b', b'c', 2, 1]),
    );
    check_response(Response::RegisterNode { index: 3 }, 0x20, 7, frame(0xA0, 7, &[3, 0]));
    check_response(
        Response::Error { code: 2, message: "stale".into() },
        0x11,
        8,
        frame(0x7F, 8, &[2, 0, 5, 0, b's', b't', b'a', b'l', b'e']),
    );
}

#[test]
fn msbm_round_trips_bit_exact() {
    assert_eq!(map().encode(), msbm());
    assert_eq!(BlockMap::decode(&msbm()).unwrap().encode(), msbm());
}
