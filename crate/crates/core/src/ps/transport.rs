//! How workers reach the parameter server: direct calls inside one process,
//! or framed messages over TCP.

use std::io::{BufReader, BufWriter};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use crate::error::{Error, Result};
use crate::model::{GradDelta, ParamBundle, ParamLayout};
use crate::ps::server::ParameterServer;
use crate::ps::wire::{read_message, write_message, Payload, WireMessage};
use crate::scalar::Scalar;

pub trait Transport<T: Scalar>: Send {
    fn fetch(&mut self, worker_id: u32) -> Result<ParamBundle<T>>;

    /// Pushes a summed gradient and returns the server's applied version.
    fn push(&mut self, worker_id: u32, base_version: u64, delta: &GradDelta<T>) -> Result<u64>;
}

impl<T: Scalar, X: Transport<T> + ?Sized> Transport<T> for Box<X> {
    fn fetch(&mut self, worker_id: u32) -> Result<ParamBundle<T>> {
        (**self).fetch(worker_id)
    }

    fn push(&mut self, worker_id: u32, base_version: u64, delta: &GradDelta<T>) -> Result<u64> {
        (**self).push(worker_id, base_version, delta)
    }
}

/// Calls the server directly; snapshots are copied out under the shard locks.
#[derive(Clone)]
pub struct InProcess<T> {
    server: Arc<ParameterServer<T>>,
}

impl<T: Scalar> InProcess<T> {
    pub fn new(server: Arc<ParameterServer<T>>) -> Self {
        InProcess { server }
    }
}

impl<T: Scalar> Transport<T> for InProcess<T> {
    fn fetch(&mut self, worker_id: u32) -> Result<ParamBundle<T>> {
        self.server.fetch(worker_id)
    }

    fn push(&mut self, worker_id: u32, base_version: u64, delta: &GradDelta<T>) -> Result<u64> {
        Ok(self.server.push(worker_id, base_version, delta)?.applied_version)
    }
}

struct Conn {
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
}

/// TCP client side. The connection is opened lazily and dropped on any
/// error, so the next call reconnects.
pub struct SocketTransport {
    addr: SocketAddr,
    layout: Arc<ParamLayout>,
    conn: Option<Conn>,
}

impl SocketTransport {
    pub fn new(addr: impl ToSocketAddrs, layout: Arc<ParamLayout>) -> Result<Self> {
        let addr = addr
            .to_socket_addrs()?
            .next()
            .ok_or_else(|| Error::Transport("address resolved to nothing".into()))?;
        Ok(SocketTransport {
            addr,
            layout,
            conn: None,
        })
    }

    fn roundtrip(&mut self, msg: &WireMessage) -> Result<WireMessage> {
        if self.conn.is_none() {
            let stream = TcpStream::connect(self.addr)
                .map_err(|e| Error::Transport(format!("connect {}: {e}", self.addr)))?;
            stream.set_nodelay(true)?;
            self.conn = Some(Conn {
                reader: BufReader::new(stream.try_clone()?),
                writer: BufWriter::new(stream),
            });
        }
        let conn = self.conn.as_mut().unwrap();
        let result = write_message(&mut conn.writer, msg).and_then(|_| {
            read_message(&mut conn.reader)?
                .ok_or_else(|| Error::Transport("server closed the connection".into()))
        });
        if result.is_err() {
            self.conn = None;
        }
        result
    }
}

impl<T: Scalar> Transport<T> for SocketTransport {
    fn fetch(&mut self, worker_id: u32) -> Result<ParamBundle<T>> {
        match self.roundtrip(&WireMessage::FetchParams { worker_id })? {
            WireMessage::Params { version, payload } => {
                ParamBundle::from_values(self.layout.clone(), version, payload.to_vec()?)
            }
            other => Err(Error::protocol(0, format!("expected Params, got {other:?}"))),
        }
    }

    fn push(&mut self, worker_id: u32, base_version: u64, delta: &GradDelta<T>) -> Result<u64> {
        let msg = WireMessage::PushGrad {
            worker_id,
            base_version,
            payload: Payload::from_slice(delta.values()),
            sample_count: delta.sample_count,
        };
        match self.roundtrip(&msg)? {
            WireMessage::Ack { applied_version } => Ok(applied_version),
            other => Err(Error::protocol(0, format!("expected Ack, got {other:?}"))),
        }
    }
}

/// Answers one request on behalf of the server.
pub fn handle_message<T: Scalar>(server: &ParameterServer<T>, msg: WireMessage) -> Result<WireMessage> {
    match msg {
        WireMessage::FetchParams { worker_id } => {
            let p = server.fetch(worker_id)?;
            Ok(WireMessage::Params {
                version: p.version,
                payload: Payload::from_slice(p.values()),
            })
        }
        WireMessage::PushGrad {
            worker_id,
            base_version,
            payload,
            sample_count,
        } => {
            let grads = payload.to_vec::<T>()?;
            let out = server.push_values(worker_id, base_version, &grads, sample_count)?;
            Ok(WireMessage::Ack {
                applied_version: out.applied_version,
            })
        }
        other => Err(Error::protocol(0, format!("server cannot answer {other:?}"))),
    }
}

fn serve_connection<T: Scalar>(server: &ParameterServer<T>, stream: TcpStream) -> Result<()> {
    stream.set_nodelay(true)?;
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut writer = BufWriter::new(stream);
    let mut last_worker = None;
    let result = loop {
        let msg = match read_message(&mut reader) {
            Ok(Some(m)) => m,
            Ok(None) => break Ok(()),
            Err(e) => break Err(e),
        };
        if let WireMessage::FetchParams { worker_id } | WireMessage::PushGrad { worker_id, .. } = msg {
            last_worker = Some(worker_id);
        }
        match handle_message(server, msg) {
            Ok(reply) => {
                if let Err(e) = write_message(&mut writer, &reply) {
                    break Err(e);
                }
            }
            Err(e) => break Err(e),
        }
    };
    // Worker 0 leaving ends the warm-up phase whether or not it reached
    // its step count.
    if last_worker == Some(0) {
        server.release_warmup();
    }
    result
}

/// Accept loop serving every connection on its own thread.
pub struct SocketServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    handle: Option<JoinHandle<()>>,
}

impl SocketServer {
    pub fn spawn<T: Scalar>(server: Arc<ParameterServer<T>>, listener: TcpListener) -> Result<Self> {
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let flag = stop.clone();
        let handle = std::thread::Builder::new()
            .name("ps-accept".into())
            .spawn(move || {
                for stream in listener.incoming() {
                    if flag.load(Ordering::SeqCst) {
                        break;
                    }
                    let stream = match stream {
                        Ok(s) => s,
                        Err(e) => {
                            log::warn!("accept failed: {e}");
                            continue;
                        }
                    };
                    let server = server.clone();
                    std::thread::spawn(move || {
                        if let Err(e) = serve_connection(&server, stream) {
                            log::warn!("connection closed with error: {e}");
                        }
                    });
                }
            })?;
        Ok(SocketServer {
            addr,
            stop,
            handle: Some(handle),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn stop(mut self) {
        self.stop_inner();
    }

    fn stop_inner(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // Unblock the accept call.
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

impl Drop for SocketServer {
    fn drop(&mut self) {
        if self.handle.is_some() {
            self.stop_inner();
        }
    }
}
