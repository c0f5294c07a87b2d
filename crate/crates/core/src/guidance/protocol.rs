//! Scorer wire protocol, version 1.
//!
//! Every message is a frame: a 4-byte big-endian payload length followed by
//! the payload. Payload integers are big-endian; float blocks are row-major
//! interleaved RGB (`H × W × 3`) little-endian `f32`.
//!
//! Request (type 1):
//!
//! ```text
//! "RDSC" | version u16 | type u8 | timestep u32 | height u32 | width u32
//!        | prompt_len u32 | prompt bytes | X_t block | ε block
//! ```
//!
//! Response (type 2):
//!
//! ```text
//! "RDSC" | version u16 | type u8 | status u8 | ε̂ block            (status 0)
//! "RDSC" | version u16 | type u8 | status u8 | len u32 | message  (status ≠ 0)
//! ```

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::grid::Vec3Grid;

pub const MAGIC: &[u8; 4] = b"RDSC";
pub const VERSION: u16 = 1;
pub const TYPE_REQUEST: u8 = 1;
pub const TYPE_RESPONSE: u8 = 2;
pub const STATUS_OK: u8 = 0;
pub const STATUS_MODEL_FAILURE: u8 = 1;
pub const STATUS_UNSUPPORTED_SHAPE: u8 = 2;

/// Largest image side either end accepts.
pub const MAX_SIDE: usize = 4096;
const MAX_PROMPT: usize = 1 << 20;
const MAX_PAYLOAD: usize = 2 * 3 * MAX_SIDE * MAX_SIDE * 4 + 64 + MAX_PROMPT;

#[derive(Debug, Clone, PartialEq)]
pub struct GuidanceRequest {
    pub timestep: u32,
    pub prompt: String,
    pub noised: Vec3Grid,
    pub noise: Vec3Grid,
}

#[derive(Debug, Clone, PartialEq)]
pub enum GuidanceResponse {
    Ok(Vec3Grid),
    Failed { status: u8, message: String },
}

fn check_side(height: usize, width: usize) -> Result<()> {
    if height > MAX_SIDE || width > MAX_SIDE {
        return Err(Error::Protocol(format!(
            "image {height}x{width} exceeds the {MAX_SIDE}-pixel side limit"
        )));
    }
    Ok(())
}

fn put_block(buf: &mut Vec<u8>, field: &Vec3Grid) {
    for v in field.values().iter().flatten() {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
}

fn header(buf: &mut Vec<u8>, kind: u8) {
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_be_bytes());
    buf.push(kind);
}

pub fn encode_request(req: &GuidanceRequest) -> Result<Vec<u8>> {
    let (h, w) = req.noised.shape();
    check_side(h, w)?;
    if req.noise.shape() != (h, w) {
        return Err(Error::shape("noised image and noise differ in shape"));
    }
    let prompt = req.prompt.as_bytes();
    if prompt.len() > MAX_PROMPT {
        return Err(Error::Protocol("prompt too long".into()));
    }
    let mut buf = Vec::with_capacity(27 + prompt.len() + 24 * h * w);
    header(&mut buf, TYPE_REQUEST);
    buf.extend_from_slice(&req.timestep.to_be_bytes());
    buf.extend_from_slice(&(h as u32).to_be_bytes());
    buf.extend_from_slice(&(w as u32).to_be_bytes());
    buf.extend_from_slice(&(prompt.len() as u32).to_be_bytes());
    buf.extend_from_slice(prompt);
    put_block(&mut buf, &req.noised);
    put_block(&mut buf, &req.noise);
    Ok(buf)
}

pub fn encode_response(resp: &GuidanceResponse) -> Vec<u8> {
    let mut buf = Vec::new();
    header(&mut buf, TYPE_RESPONSE);
    match resp {
        GuidanceResponse::Ok(field) => {
            buf.push(STATUS_OK);
            put_block(&mut buf, field);
        }
        GuidanceResponse::Failed { status, message } => {
            buf.push(if *status == STATUS_OK { STATUS_MODEL_FAILURE } else { *status });
            buf.extend_from_slice(&(message.len() as u32).to_be_bytes());
            buf.extend_from_slice(message.as_bytes());
        }
    }
    buf
}

/// Cursor over a payload with protocol-error reporting.
struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Protocol(format!("truncated payload at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_be_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn block(&mut self, h: usize, w: usize) -> Result<Vec3Grid> {
        let bytes = self.take(12 * h * w)?;
        let flat: Vec<f64> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        Vec3Grid::from_flat(h, w, &flat)
            .map_err(|e| Error::Protocol(format!("invalid float block: {e}")))
    }

    fn header(&mut self, kind: u8) -> Result<()> {
        if self.take(4)? != MAGIC {
            return Err(Error::Protocol("bad magic".into()));
        }
        let version = self.u16()?;
        if version != VERSION {
            return Err(Error::Protocol(format!(
                "version mismatch: got {version}, expected {VERSION}"
            )));
        }
        let t = self.u8()?;
        if t != kind {
            return Err(Error::Protocol(format!("unexpected message type {t}, expected {kind}")));
        }
        Ok(())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Protocol(format!(
                "{} trailing bytes in payload",
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}

pub fn decode_request(payload: &[u8]) -> Result<GuidanceRequest> {
    let mut r = Reader { buf: payload, pos: 0 };
    r.header(TYPE_REQUEST)?;
    let timestep = r.u32()?;
    let h = r.u32()? as usize;
    let w = r.u32()? as usize;
    check_side(h, w)?;
    let plen = r.u32()? as usize;
    if plen > MAX_PROMPT {
        return Err(Error::Protocol("prompt too long".into()));
    }
    let prompt = std::str::from_utf8(r.take(plen)?)
        .map_err(|_| Error::Protocol("prompt is not UTF-8".into()))?
        .to_owned();
    let noised = r.block(h, w)?;
    let noise = r.block(h, w)?;
    r.finish()?;
    Ok(GuidanceRequest {
        timestep,
        prompt,
        noised,
        noise,
    })
}

/// Decodes a response to a request of shape `height × width`.
pub fn decode_response(payload: &[u8], height: usize, width: usize) -> Result<GuidanceResponse> {
    let mut r = Reader { buf: payload, pos: 0 };
    r.header(TYPE_RESPONSE)?;
    let status = r.u8()?;
    let resp = if status == STATUS_OK {
        GuidanceResponse::Ok(r.block(height, width)?)
    } else {
        let len = r.u32()? as usize;
        let message = String::from_utf8_lossy(r.take(len)?).into_owned();
        GuidanceResponse::Failed { status, message }
    };
    r.finish()?;
    Ok(resp)
}

pub fn write_frame<W: Write>(w: &mut W, payload: &[u8]) -> Result<()> {
    let len = u32::try_from(payload.len())
        .map_err(|_| Error::Protocol("payload exceeds 4 GiB".into()))?;
    w.write_all(&len.to_be_bytes())?;
    w.write_all(payload)?;
    w.flush()?;
    Ok(())
}

pub fn read_frame<R: Read>(r: &mut R) -> Result<Vec<u8>> {
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let len = u32::from_be_bytes(len) as usize;
    if len > MAX_PAYLOAD {
        return Err(Error::Protocol(format!("frame of {len} bytes exceeds limit")));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    Ok(buf)
}
