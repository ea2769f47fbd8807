//! Line-delimited JSON protocol for driving an out-of-process segmentation
//! model as a [`SegmentationBackend`].
//!
//! Requests: `{"v":1,"op":"init|propagate|purge|recondition|drop|shutdown",
//! "frame":…,"handle":…,"box":[x,y,w,h]}`. Handles are allocated by the
//! engine side and sent with `init`. Replies: `{"ok":true,"results":[…]}`
//! where each result is `{"handle":…,"rle":"w h r0 r1 …","logits":…}`, or
//! `{"ok":false,"error":"…"}`. One reply per request, in order.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};

use serde::{Deserialize, Serialize};

use crate::engine::{Handle, Segment, SegmentationBackend};
use crate::error::{Error, Result};
use crate::mask::{BBox, ImageGrid, Mask};

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BridgeOp {
    Init,
    Propagate,
    Purge,
    Recondition,
    Drop,
    Shutdown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BridgeRequest {
    pub v: u32,
    pub op: BridgeOp,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub handle: Option<Handle>,
    #[serde(rename = "box", default, skip_serializing_if = "Option::is_none")]
    pub bbox: Option<BBox>,
}

impl BridgeRequest {
    pub fn new(op: BridgeOp) -> Self {
        Self { v: PROTOCOL_VERSION, op, frame: None, handle: None, bbox: None }
    }

    fn frame(mut self, frame: u32) -> Self {
        self.frame = Some(frame);
        self
    }

    fn handle(mut self, handle: Handle) -> Self {
        self.handle = Some(handle);
        self
    }

    fn bbox(mut self, bbox: BBox) -> Self {
        self.bbox = Some(bbox);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BridgeResult {
    pub handle: Handle,
    /// Mask in `w h r0 r1 …` text form.
    pub rle: String,
    pub logits: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BridgeReply {
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub results: Option<Vec<BridgeResult>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl BridgeReply {
    pub fn success(results: Vec<BridgeResult>) -> Self {
        Self { ok: true, results: Some(results), error: None }
    }

    pub fn failure(error: impl Into<String>) -> Self {
        Self { ok: false, results: None, error: Some(error.into()) }
    }
}

/// Engine-side client speaking the protocol over any reader/writer pair.
pub struct BridgeBackend<R, W> {
    reader: R,
    writer: W,
    grid: ImageGrid,
    next_handle: Handle,
    child: Option<Child>,
}

impl<R: BufRead, W: Write> BridgeBackend<R, W> {
    pub fn new(reader: R, writer: W, grid: ImageGrid) -> Self {
        Self { reader, writer, grid, next_handle: 0, child: None }
    }

    fn call(&mut self, req: &BridgeRequest) -> Result<Vec<BridgeResult>> {
        let mut line = serde_json::to_string(req)?;
        line.push('\n');
        self.writer.write_all(line.as_bytes())?;
        self.writer.flush()?;
        let mut reply = String::new();
        if self.reader.read_line(&mut reply)? == 0 {
            return Err(Error::invalid("bridge closed the connection"));
        }
        let reply: BridgeReply = serde_json::from_str(reply.trim_end())?;
        if !reply.ok {
            return Err(Error::invalid(format!(
                "bridge error: {}",
                reply.error.unwrap_or_else(|| "unspecified".into())
            )));
        }
        Ok(reply.results.unwrap_or_default())
    }

    /// Sends `shutdown` and waits for the child process, if any.
    pub fn shutdown(mut self) -> Result<()> {
        self.call(&BridgeRequest::new(BridgeOp::Shutdown))?;
        if let Some(mut child) = self.child.take() {
            let status = child.wait()?;
            if !status.success() {
                return Err(Error::invalid(format!("bridge exited with {status}")));
            }
        }
        Ok(())
    }
}

impl BridgeBackend<BufReader<ChildStdout>, ChildStdin> {
    /// Spawns `program args…` and talks to it over its standard streams.
    pub fn spawn(program: &str, args: &[String], grid: ImageGrid) -> Result<Self> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let mut client = BridgeBackend::new(BufReader::new(stdout), stdin, grid);
        client.child = Some(child);
        Ok(client)
    }
}

impl<R: BufRead, W: Write> SegmentationBackend for BridgeBackend<R, W> {
    fn init_object(&mut self, prompt: &BBox, frame: u32) -> Result<Handle> {
        self.next_handle += 1;
        let handle = self.next_handle;
        self.call(&BridgeRequest::new(BridgeOp::Init).frame(frame).handle(handle).bbox(*prompt))?;
        Ok(handle)
    }

    fn propagate(&mut self, frame: u32) -> Result<BTreeMap<Handle, Segment>> {
        let results = self.call(&BridgeRequest::new(BridgeOp::Propagate).frame(frame))?;
        let mut out = BTreeMap::new();
        for r in results {
            let mask: Mask = r.rle.parse()?;
            if mask.grid() != self.grid {
                return Err(Error::GridMismatch {
                    left: self.grid.to_string(),
                    right: mask.grid().to_string(),
                });
            }
            if out.insert(r.handle, Segment { mask, logits: r.logits }).is_some() {
                return Err(Error::invalid(format!("handle {} reported twice", r.handle)));
            }
        }
        Ok(out)
    }

    fn purge_memory(&mut self, handle: Handle, frame: u32) -> Result<()> {
        self.call(&BridgeRequest::new(BridgeOp::Purge).frame(frame).handle(handle)).map(drop)
    }

    fn recondition(&mut self, handle: Handle, prompt: &BBox, frame: u32) -> Result<()> {
        let req = BridgeRequest::new(BridgeOp::Recondition).frame(frame).handle(handle).bbox(*prompt);
        self.call(&req).map(drop)
    }

    fn drop_object(&mut self, handle: Handle) -> Result<()> {
        self.call(&BridgeRequest::new(BridgeOp::Drop).handle(handle)).map(drop)
    }
}

/// Serves any backend over the protocol until `shutdown` or end of input.
/// Malformed requests get an error reply and the session continues.
pub fn serve<B: SegmentationBackend>(
    mut backend: B,
    input: impl BufRead,
    mut output: impl Write,
) -> Result<()> {
    let mut handles: BTreeMap<Handle, Handle> = BTreeMap::new();
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let (reply, stop) = match serde_json::from_str::<BridgeRequest>(&line) {
            Ok(req) => {
                let stop = req.op == BridgeOp::Shutdown;
                let reply = match dispatch(&mut backend, &mut handles, &req) {
                    Ok(results) => BridgeReply::success(results),
                    Err(e) => BridgeReply::failure(e.to_string()),
                };
                (reply, stop)
            }
            Err(e) => (BridgeReply::failure(format!("malformed request: {e}")), false),
        };
        writeln!(output, "{}", serde_json::to_string(&reply)?)?;
        output.flush()?;
        if stop {
            break;
        }
    }
    Ok(())
}

fn dispatch<B: SegmentationBackend>(
    backend: &mut B,
    handles: &mut BTreeMap<Handle, Handle>,
    req: &BridgeRequest,
) -> Result<Vec<BridgeResult>> {
    if req.v != PROTOCOL_VERSION {
        return Err(Error::invalid(format!("unsupported protocol version {}", req.v)));
    }
    let need_frame = || req.frame.ok_or_else(|| Error::invalid("missing frame"));
    let need_box = || req.bbox.ok_or_else(|| Error::invalid("missing box"));
    let need_handle = |handles: &BTreeMap<Handle, Handle>| {
        let h = req.handle.ok_or_else(|| Error::invalid("missing handle"))?;
        handles.get(&h).copied().ok_or(Error::UnknownHandle(h))
    };
    match req.op {
        BridgeOp::Init => {
            let h = req.handle.ok_or_else(|| Error::invalid("missing handle"))?;
            if handles.contains_key(&h) {
                return Err(Error::invalid(format!("handle {h} already in use")));
            }
            let inner = backend.init_object(&need_box()?, need_frame()?)?;
            handles.insert(h, inner);
            Ok(vec![])
        }
        BridgeOp::Propagate => {
            let mut segs = backend.propagate(need_frame()?)?;
            Ok(handles
                .iter()
                .filter_map(|(&outer, inner)| {
                    segs.remove(inner).map(|s| BridgeResult {
                        handle: outer,
                        rle: s.mask.to_string(),
                        logits: s.logits,
                    })
                })
                .collect())
        }
        BridgeOp::Purge => {
            backend.purge_memory(need_handle(handles)?, need_frame()?)?;
            Ok(vec![])
        }
        BridgeOp::Recondition => {
            backend.recondition(need_handle(handles)?, &need_box()?, need_frame()?)?;
            Ok(vec![])
        }
        BridgeOp::Drop => {
            let inner = need_handle(handles)?;
            backend.drop_object(inner)?;
            handles.retain(|_, v| *v != inner);
            Ok(vec![])
        }
        BridgeOp::Shutdown => Ok(vec![]),
    }
}
