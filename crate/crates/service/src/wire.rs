//! Framed JSON over TCP: every message is a 4-byte big-endian length
//! followed by that many bytes of JSON.
//!
//! Requests are `{"id", "method", "params"}` with methods `invoke`,
//! `set_config`, `set_policy`, `get_stats` and `health`; responses are
//! `{"id", "status": "ok"|"retry"|"error", "data"}`.

use std::io::{self, BufReader, BufWriter, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value as Json};
use txmerge_core::partition::PartitionPolicy;

use crate::config::BatchConfig;
use crate::program::Args;
use crate::service::{PolicyLevel, Service, Status};
use crate::stats::ServiceStats;

pub const MAX_FRAME: usize = 16 << 20;

pub fn write_frame(w: &mut impl Write, msg: &Json) -> io::Result<()> {
    let body = serde_json::to_vec(msg)?;
    if body.len() > MAX_FRAME {
        return Err(io::Error::new(io::ErrorKind::InvalidInput, "frame too large"));
    }
    w.write_all(&(body.len() as u32).to_be_bytes())?;
    w.write_all(&body)?;
    w.flush()
}

/// `Ok(None)` on a clean end of stream before a frame starts.
pub fn read_frame(r: &mut impl Read) -> io::Result<Option<Json>> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e),
    }
    let len = u32::from_be_bytes(len) as usize;
    if len > MAX_FRAME {
        return Err(io::Error::new(io::ErrorKind::InvalidData, "frame too large"));
    }
    let mut body = vec![0u8; len];
    r.read_exact(&mut body)?;
    serde_json::from_slice(&body).map(Some).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub id: u64,
    pub method: String,
    #[serde(default)]
    pub params: Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub id: u64,
    #[serde(flatten)]
    pub status: Status,
}

#[derive(Deserialize)]
struct InvokeParams {
    txn: String,
    #[serde(default)]
    args: Args,
}

#[derive(Deserialize)]
struct PolicyParams {
    #[serde(default = "merger_level")]
    level: PolicyLevel,
    policy: PartitionPolicy,
}

fn merger_level() -> PolicyLevel {
    PolicyLevel::Merger
}

/// Executes one request against the service.
pub fn handle(service: &Service, req: Request) -> Response {
    let parse_err = |e: serde_json::Error| Status::Error(format!("bad params: {e}"));
    let status = match req.method.as_str() {
        "invoke" => match serde_json::from_value::<InvokeParams>(req.params) {
            Ok(p) => service.call(&p.txn, p.args),
            Err(e) => parse_err(e),
        },
        "set_config" => match serde_json::from_value::<BatchConfig>(req.params) {
            Ok(c) => match service.set_config(c) {
                Ok(()) => Status::Ok(json!(service.config())),
                Err(e) => Status::Error(e.to_string()),
            },
            Err(e) => parse_err(e),
        },
        "set_policy" => match serde_json::from_value::<PolicyParams>(req.params) {
            Ok(p) => match service.set_policy(p.level, p.policy) {
                Ok(()) => Status::Ok(json!({ "version": service.policy(p.level).version })),
                Err(e) => Status::Error(e.to_string()),
            },
            Err(e) => parse_err(e),
        },
        "get_stats" => {
            let reset = req.params.get("reset").and_then(Json::as_bool).unwrap_or(false);
            Status::Ok(json!(service.stats(reset)))
        }
        "health" => Status::Ok(json!({
            "workers": service.workers(),
            "uptime_ms": service.uptime().as_millis() as u64,
            "transactions": service.transactions().collect::<Vec<_>>(),
        })),
        other => Status::Error(format!("unknown method {other}")),
    };
    Response { id: req.id, status }
}

fn serve_connection(service: &Service, stream: TcpStream) -> io::Result<()> {
    stream.set_nodelay(true)?;
    let mut r = BufReader::new(stream.try_clone()?);
    let mut w = BufWriter::new(stream);
    while let Some(frame) = read_frame(&mut r)? {
        let resp = match serde_json::from_value::<Request>(frame) {
            Ok(req) => handle(service, req),
            Err(e) => Response { id: 0, status: Status::Error(format!("bad request: {e}")) },
        };
        write_frame(&mut w, &json!(resp))?;
    }
    Ok(())
}

/// Accept loop with one thread per connection.
pub struct Server {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    accept: Option<JoinHandle<()>>,
}

impl Server {
    pub fn start(addr: impl ToSocketAddrs, service: Arc<Service>) -> io::Result<Server> {
        let listener = TcpListener::bind(addr)?;
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let flag = stop.clone();
        let accept = std::thread::Builder::new().name("txmerge-accept".into()).spawn(move || {
            for stream in listener.incoming() {
                if flag.load(Ordering::Acquire) {
                    break;
                }
                let Ok(stream) = stream else { continue };
                let svc = service.clone();
                std::thread::spawn(move || {
                    if let Err(e) = serve_connection(&svc, stream) {
                        tracing::debug!(error = %e, "connection closed");
                    }
                });
            }
        })?;
        Ok(Server { addr, stop, accept: Some(accept) })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Blocks until the accept loop ends (i.e. forever, unless stopped).
    pub fn join(mut self) {
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }

    pub fn stop(&mut self) {
        self.stop.store(true, Ordering::Release);
        // Wake the blocking accept.
        if let Ok(s) = TcpStream::connect(self.addr) {
            let _ = s.shutdown(Shutdown::Both);
        }
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        self.stop();
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("protocol: {0}")]
    Protocol(String),
    #[error("service error: {0}")]
    Remote(String),
    #[error("retry: {0}")]
    Retry(String),
}

/// Blocking client; one request in flight at a time.
pub struct Client {
    r: BufReader<TcpStream>,
    w: BufWriter<TcpStream>,
    next_id: u64,
}

impl Client {
    pub fn connect(addr: impl ToSocketAddrs) -> io::Result<Client> {
        let s = TcpStream::connect(addr)?;
        s.set_nodelay(true)?;
        Ok(Client { r: BufReader::new(s.try_clone()?), w: BufWriter::new(s), next_id: 1 })
    }

    pub fn request(&mut self, method: &str, params: Json) -> Result<Status, ClientError> {
        let id = self.next_id;
        self.next_id += 1;
        write_frame(&mut self.w, &json!(Request { id, method: method.into(), params }))?;
        let frame = read_frame(&mut self.r)?.ok_or_else(|| ClientError::Protocol("connection closed".into()))?;
        let resp: Response = serde_json::from_value(frame).map_err(|e| ClientError::Protocol(e.to_string()))?;
        if resp.id != id {
            return Err(ClientError::Protocol(format!("response id {} for request {id}", resp.id)));
        }
        Ok(resp.status)
    }

    fn ok(&mut self, method: &str, params: Json) -> Result<Json, ClientError> {
        match self.request(method, params)? {
            Status::Ok(v) => Ok(v),
            Status::Retry(m) => Err(ClientError::Retry(m)),
            Status::Error(m) => Err(ClientError::Remote(m)),
        }
    }

    pub fn invoke(&mut self, txn: &str, args: Args) -> Result<Status, ClientError> {
        self.request("invoke", json!({ "txn": txn, "args": args }))
    }

    pub fn set_config(&mut self, config: &BatchConfig) -> Result<BatchConfig, ClientError> {
        let v = self.ok("set_config", json!(config))?;
        serde_json::from_value(v).map_err(|e| ClientError::Protocol(e.to_string()))
    }

    pub fn set_policy(&mut self, level: PolicyLevel, policy: &PartitionPolicy) -> Result<(), ClientError> {
        self.ok("set_policy", json!({ "level": level, "policy": policy })).map(|_| ())
    }

    pub fn get_stats(&mut self, reset: bool) -> Result<ServiceStats, ClientError> {
        let v = self.ok("get_stats", json!({ "reset": reset }))?;
        serde_json::from_value(v).map_err(|e| ClientError::Protocol(e.to_string()))
    }

    pub fn health(&mut self) -> Result<Json, ClientError> {
        self.ok("health", Json::Null)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_roundtrip() {
        let mut buf = Vec::new();
        write_frame(&mut buf, &json!({"a": [1, 2]})).unwrap();
        assert_eq!(&buf[..4], &(buf.len() as u32 - 4).to_be_bytes());
        let mut r = &buf[..];
        assert_eq!(read_frame(&mut r).unwrap(), Some(json!({"a": [1, 2]})));
        assert_eq!(read_frame(&mut r).unwrap(), None);
    }

    #[test]
    fn response_shape() {
        let r = Response { id: 3, status: Status::Retry("lock timeout".into()) };
        assert_eq!(json!(r), json!({"id": 3, "status": "retry", "data": "lock timeout"}));
        let back: Response = serde_json::from_value(json!({"id": 4, "status": "ok", "data": [1]})).unwrap();
        assert_eq!(back.status, Status::Ok(json!([1])));
    }
}
