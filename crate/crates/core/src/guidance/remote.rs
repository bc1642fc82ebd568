//! Client for a score server speaking length-prefixed binary frames.
//!
//! Frame layout: `u32` little-endian header length, UTF-8 JSON header, then a
//! raw little-endian `f32` payload in row-major `shape` order. Responses use
//! the same layout; failures come back as frames with `op = "error"`.

use std::io::{Read, Write};
use std::net::TcpStream;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::image::Image;

use super::{GuidanceError, ScoreProvider};

pub const MAX_HEADER_BYTES: usize = 1 << 20;
pub const MAX_PAYLOAD_VALUES: usize = 1 << 28;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct FrameHeader {
    pub op: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cfg: Option<f64>,
    #[serde(default)]
    pub shape: Vec<usize>,
    #[serde(default = "default_dtype")]
    pub dtype: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub code: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
    /// Fields this client does not interpret (schedule metadata and such).
    #[serde(flatten)]
    pub extra: serde_json::Map<String, serde_json::Value>,
}

fn default_dtype() -> String {
    "f32".into()
}

impl FrameHeader {
    pub fn new(op: &str, shape: Vec<usize>) -> Self {
        Self {
            op: op.into(),
            shape,
            dtype: default_dtype(),
            ..Default::default()
        }
    }

    pub fn error(code: &str, message: &str) -> Self {
        Self {
            code: Some(code.into()),
            message: Some(message.into()),
            ..Self::new("error", Vec::new())
        }
    }

    pub fn element_count(&self) -> Option<usize> {
        if self.shape.is_empty() {
            return Some(0);
        }
        self.shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub header: FrameHeader,
    pub payload: Vec<f32>,
}

fn protocol(offset: usize, message: impl Into<String>) -> GuidanceError {
    GuidanceError::Protocol {
        offset,
        message: message.into(),
    }
}

pub fn encode_frame(frame: &Frame) -> Result<Vec<u8>, GuidanceError> {
    let header = serde_json::to_vec(&frame.header).map_err(|e| protocol(0, e.to_string()))?;
    if header.len() > MAX_HEADER_BYTES {
        return Err(protocol(
            0,
            format!("header of {} bytes exceeds limit", header.len()),
        ));
    }
    let expected = frame
        .header
        .element_count()
        .ok_or_else(|| protocol(4, "shape overflows"))?;
    if expected != frame.payload.len() {
        return Err(protocol(
            4 + header.len(),
            format!(
                "shape {:?} needs {expected} values, payload has {}",
                frame.header.shape,
                frame.payload.len()
            ),
        ));
    }
    let mut out = Vec::with_capacity(4 + header.len() + 4 * frame.payload.len());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    for v in &frame.payload {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn write_frame<W: Write>(w: &mut W, frame: &Frame) -> Result<(), GuidanceError> {
    w.write_all(&encode_frame(frame)?)?;
    w.flush()?;
    Ok(())
}

fn read_exact_at<R: Read>(r: &mut R, buf: &mut [u8], offset: usize) -> Result<(), GuidanceError> {
    let mut got = 0;
    while got < buf.len() {
        match r.read(&mut buf[got..]) {
            Ok(0) => {
                return Err(protocol(
                    offset + got,
                    format!("stream ended: expected {} bytes, got {got}", buf.len()),
                ))
            }
            Ok(n) => got += n,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok(())
}

pub fn read_frame<R: Read>(r: &mut R) -> Result<Frame, GuidanceError> {
    let mut len = [0u8; 4];
    read_exact_at(r, &mut len, 0)?;
    let hlen = u32::from_le_bytes(len) as usize;
    if hlen > MAX_HEADER_BYTES {
        return Err(protocol(0, format!("header length {hlen} exceeds limit")));
    }
    let mut hbuf = vec![0u8; hlen];
    read_exact_at(r, &mut hbuf, 4)?;
    let header: FrameHeader = serde_json::from_slice(&hbuf)
        .map_err(|e| protocol(4 + e.column().saturating_sub(1), e.to_string()))?;
    if header.dtype != "f32" {
        return Err(protocol(4, format!("unsupported dtype {:?}", header.dtype)));
    }
    let n = header
        .element_count()
        .filter(|&n| n <= MAX_PAYLOAD_VALUES)
        .ok_or_else(|| protocol(4, format!("shape {:?} too large", header.shape)))?;
    let mut pbuf = vec![0u8; 4 * n];
    read_exact_at(r, &mut pbuf, 4 + hlen)?;
    let payload = pbuf
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(Frame { header, payload })
}

fn image_payload(img: &Image) -> Vec<f32> {
    img.data.iter().map(|&v| v as f32).collect()
}

/// Score provider backed by a remote server. Connections are pooled so
/// concurrent requests each get their own stream.
pub struct RemoteProvider {
    addr: String,
    timeout: Duration,
    pool: Mutex<Vec<TcpStream>>,
}

impl RemoteProvider {
    pub fn new(addr: impl Into<String>) -> Self {
        Self {
            addr: addr.into(),
            timeout: Duration::from_secs(120),
            pool: Mutex::new(Vec::new()),
        }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn addr(&self) -> &str {
        &self.addr
    }

    fn connect(&self) -> Result<TcpStream, GuidanceError> {
        let s = TcpStream::connect(&self.addr)?;
        s.set_read_timeout(Some(self.timeout))?;
        s.set_write_timeout(Some(self.timeout))?;
        s.set_nodelay(true)?;
        Ok(s)
    }

    /// One request/response exchange. Error frames become [`GuidanceError::Remote`].
    pub fn call(&self, request: &Frame) -> Result<Frame, GuidanceError> {
        let pooled = self.pool.lock().expect("pool lock").pop();
        let mut stream = match pooled {
            Some(s) => s,
            None => self.connect()?,
        };
        write_frame(&mut stream, request)?;
        let response = read_frame(&mut stream)?;
        self.pool.lock().expect("pool lock").push(stream);
        if response.header.op == "error" {
            return Err(GuidanceError::Remote {
                code: response.header.code.unwrap_or_default(),
                message: response.header.message.unwrap_or_default(),
            });
        }
        Ok(response)
    }

    /// Liveness check; returns the server's header (schedule metadata lives
    /// in `extra`).
    pub fn ping(&self) -> Result<FrameHeader, GuidanceError> {
        Ok(self
            .call(&Frame {
                header: FrameHeader::new("ping", Vec::new()),
                payload: Vec::new(),
            })?
            .header)
    }

    pub fn encode(&self, image: &Image) -> Result<Frame, GuidanceError> {
        self.call(&Frame {
            header: FrameHeader::new("encode", vec![image.height, image.width, 3]),
            payload: image_payload(image),
        })
    }

    pub fn decode(&self, latent: &Frame) -> Result<Image, GuidanceError> {
        let mut req = latent.clone();
        req.header.op = "decode".into();
        let resp = self.call(&req)?;
        match resp.header.shape[..] {
            [h, w, 3] => Ok(Image::from_data(
                w,
                h,
                resp.payload.iter().map(|&v| v as f64).collect(),
            )),
            _ => Err(protocol(
                4,
                format!("decode returned shape {:?}", resp.header.shape),
            )),
        }
    }

    fn predict(
        &self,
        x_t: &Image,
        t: usize,
        prompt: &str,
        cfg: f64,
    ) -> Result<Image, GuidanceError> {
        let shape = vec![x_t.height, x_t.width, 3];
        let header = FrameHeader {
            t: Some(t),
            prompt: Some(prompt.into()),
            cfg: Some(cfg),
            ..FrameHeader::new("predict_noise", shape.clone())
        };
        let resp = self.call(&Frame {
            header,
            payload: image_payload(x_t),
        })?;
        if resp.header.shape != shape {
            return Err(protocol(
                4,
                format!(
                    "response shape {:?} differs from request {:?}",
                    resp.header.shape, shape
                ),
            ));
        }
        Ok(Image::from_data(
            x_t.width,
            x_t.height,
            resp.payload.iter().map(|&v| v as f64).collect(),
        ))
    }
}

impl ScoreProvider for RemoteProvider {
    fn predict_noise(&self, x_t: &Image, t: usize, prompt: &str) -> Result<Image, GuidanceError> {
        self.predict(x_t, t, prompt, 1.0)
    }

    fn predict_guided(
        &self,
        x_t: &Image,
        t: usize,
        prompt: &str,
        cfg: f64,
    ) -> Result<Image, GuidanceError> {
        self.predict(x_t, t, prompt, cfg)
    }
}
