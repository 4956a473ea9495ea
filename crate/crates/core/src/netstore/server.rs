use std::io::{BufReader, BufWriter};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};

use parking_lot::Mutex;

use super::wire::{Frame, Request, Response};
use crate::error::{Error, Result};

/// Something that answers decoded requests.
pub trait FrameHandler: Send + Sync {
    fn handle(&self, request: Request) -> Result<Response>;
}

/// Decodes one request frame, runs it and encodes the reply. Failures turn
/// into `ERROR` frames carrying the request id.
pub fn dispatch(handler: &dyn FrameHandler, frame: &Frame) -> Frame {
    let response = Request::from_frame(frame).and_then(|req| handler.handle(req)).unwrap_or_else(|e| Response::error(&e));
    response
        .to_frame(frame.request_id)
        .unwrap_or_else(|e| Response::error(&e).to_frame(frame.request_id).expect("error frames are small"))
}

/// A TCP listener serving one thread per connection.
pub struct Server {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    conns: Arc<Mutex<Vec<TcpStream>>>,
    acceptor: Option<JoinHandle<()>>,
}

impl Server {
    pub fn spawn(addr: impl ToSocketAddrs, handler: Arc<dyn FrameHandler>) -> Result<Self> {
        let listener = TcpListener::bind(addr)?;
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let conns: Arc<Mutex<Vec<TcpStream>>> = Arc::default();
        let acceptor = {
            let (stop, conns) = (stop.clone(), conns.clone());
            thread::Builder::new().name(format!("accept-{}", addr.port())).spawn(move || {
                for stream in listener.incoming() {
                    if stop.load(Ordering::Acquire) {
                        break;
                    }
                    let Ok(stream) = stream else { continue };
                    let _ = stream.set_nodelay(true);
                    if let Ok(clone) = stream.try_clone() {
                        conns.lock().push(clone);
                    }
                    let handler = handler.clone();
                    let _ = thread::Builder::new().name("conn".into()).spawn(move || serve(stream, &*handler));
                }
            })?
        };
        Ok(Server { addr, stop, conns, acceptor: Some(acceptor) })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Stops accepting and closes open connections.
    pub fn stop(&mut self) {
        if self.stop.swap(true, Ordering::AcqRel) {
            return;
        }
        // Wake the blocked accept.
        let _ = TcpStream::connect(self.addr);
        for c in self.conns.lock().drain(..) {
            let _ = c.shutdown(Shutdown::Both);
        }
        if let Some(t) = self.acceptor.take() {
            let _ = t.join();
        }
    }

    /// Blocks until the listener thread exits.
    pub fn join(mut self) {
        if let Some(t) = self.acceptor.take() {
            let _ = t.join();
        }
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        self.stop();
    }
}

fn serve(stream: TcpStream, handler: &dyn FrameHandler) {
    let peer = stream.peer_addr().ok();
    let Ok(write_half) = stream.try_clone() else { return };
    let mut reader = BufReader::new(stream);
    let mut writer = BufWriter::new(write_half);
    loop {
        let frame = match Frame::read_from(&mut reader) {
            Ok(Some(f)) => f,
            Ok(None) => break,
            Err(Error::Io(_)) => break,
            Err(e) => {
                // Framing is lost; report and drop the connection.
                log::warn!("closing connection from {peer:?}: {e}");
                let _ = Response::error(&e).to_frame(0).and_then(|f| f.write_to(&mut writer));
                break;
            }
        };
        if dispatch(handler, &frame).write_to(&mut writer).is_err() {
            break;
        }
    }
}
