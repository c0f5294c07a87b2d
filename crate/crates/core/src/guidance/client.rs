//! Blocking TCP client for external scorers.

use std::io::{self, BufReader, BufWriter};
use std::net::{SocketAddr, TcpStream, ToSocketAddrs};
use std::time::Duration;

use super::protocol::{self, GuidanceRequest, GuidanceResponse};
use super::{ScoreRequest, Scorer};
use crate::error::{Error, Result};
use crate::grid::Vec3Grid;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(120);
/// Side the reference diffusion scorer operates at.
pub const DEFAULT_MODEL_SIDE: usize = 512;

/// One open connection; one request in flight at a time.
#[derive(Debug)]
pub struct Connection {
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
    peer: SocketAddr,
}

fn io_to_guidance(peer: &str, e: io::Error) -> Error {
    match e.kind() {
        io::ErrorKind::TimedOut | io::ErrorKind::WouldBlock => {
            Error::Guidance(format!("scorer at {peer} timed out"))
        }
        io::ErrorKind::UnexpectedEof => {
            Error::Protocol(format!("scorer at {peer} closed the connection mid-frame"))
        }
        _ => Error::Guidance(format!("scorer at {peer}: {e}")),
    }
}

impl Connection {
    pub fn connect(addr: &str, timeout: Duration) -> Result<Self> {
        let peer = addr
            .to_socket_addrs()
            .map_err(|e| Error::Guidance(format!("cannot resolve scorer address {addr}: {e}")))?
            .next()
            .ok_or_else(|| Error::Guidance(format!("no address for {addr}")))?;
        let stream = TcpStream::connect_timeout(&peer, timeout)
            .map_err(|e| Error::Guidance(format!("scorer unreachable at {addr}: {e}")))?;
        stream.set_read_timeout(Some(timeout))?;
        stream.set_write_timeout(Some(timeout))?;
        stream.set_nodelay(true)?;
        let reader = BufReader::new(stream.try_clone()?);
        Ok(Self {
            reader,
            writer: BufWriter::new(stream),
            peer,
        })
    }

    pub fn peer(&self) -> SocketAddr {
        self.peer
    }

    /// Sends one request and waits for its response.
    pub fn request_score(&mut self, req: &GuidanceRequest) -> Result<GuidanceResponse> {
        let payload = protocol::encode_request(req)?;
        let peer = self.peer.to_string();
        protocol::write_frame(&mut self.writer, &payload).map_err(|e| match e {
            Error::Io(io) => io_to_guidance(&peer, io),
            other => other,
        })?;
        let frame = protocol::read_frame(&mut self.reader).map_err(|e| match e {
            Error::Io(io) => io_to_guidance(&peer, io),
            other => other,
        })?;
        let (h, w) = req.noised.shape();
        protocol::decode_response(&frame, h, w)
    }
}

/// [`Scorer`] backed by a remote server speaking the wire protocol.
#[derive(Debug)]
pub struct TcpScorer {
    conn: Connection,
    side: Option<usize>,
}

impl TcpScorer {
    pub fn connect(addr: &str, timeout: Duration) -> Result<Self> {
        Ok(Self {
            conn: Connection::connect(addr, timeout)?,
            side: Some(DEFAULT_MODEL_SIDE),
        })
    }

    /// Overrides the model-side resize; `None` sends renderings as-is.
    pub fn with_model_side(mut self, side: Option<usize>) -> Self {
        self.side = side;
        self
    }
}

impl Scorer for TcpScorer {
    fn predict_noise(&mut self, req: &ScoreRequest<'_>) -> Result<Vec3Grid> {
        let wire = GuidanceRequest {
            timestep: req.timestep as u32,
            prompt: req.prompt.to_owned(),
            noised: req.noised.clone(),
            noise: req.noise.clone(),
        };
        match self.conn.request_score(&wire)? {
            GuidanceResponse::Ok(field) => Ok(field),
            GuidanceResponse::Failed { status, message } => Err(Error::Guidance(format!(
                "scorer status {status}: {message}"
            ))),
        }
    }

    fn input_side(&self) -> Option<usize> {
        self.side
    }
}
