//! Per-frame orchestration over an abstract segmentation backend.
//!
//! Each frame runs, in order: propagate, trajectory update, occlusion
//! arbitration (purges), association of high-confidence detections,
//! quality reconstruction, addition of new objects, removal.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::assignment::gated_match;
use crate::error::{Error, Result};
use crate::interaction::resolve_interactions;
use crate::mask::{untracked_region, BBox, ImageGrid, Mask};
use crate::trajectory::{
    addition_filter, high_confidence, should_reconstruct, should_remove, Detection, TrackId,
    TrackerConfig, Trajectory, TrajectoryState,
};

pub type Handle = u64;

/// Output of one propagation step for one backend handle.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub mask: Mask,
    pub logits: f64,
}

/// What the engine needs from a segmentation model session.
///
/// `propagate` must report every live handle exactly once, and a purge
/// issued before a propagate must be reflected in that propagate.
pub trait SegmentationBackend {
    /// Conditions a new object on a box prompt.
    fn init_object(&mut self, prompt: &BBox, frame: u32) -> Result<Handle>;
    fn propagate(&mut self, frame: u32) -> Result<BTreeMap<Handle, Segment>>;
    /// Drops the non-conditional memory entry stored for `frame`.
    fn purge_memory(&mut self, handle: Handle, frame: u32) -> Result<()>;
    /// Replaces the object's prompt with a fresh box.
    fn recondition(&mut self, handle: Handle, prompt: &BBox, frame: u32) -> Result<()>;
    fn drop_object(&mut self, handle: Handle) -> Result<()>;
}

impl<B: SegmentationBackend + ?Sized> SegmentationBackend for &mut B {
    fn init_object(&mut self, prompt: &BBox, frame: u32) -> Result<Handle> {
        (**self).init_object(prompt, frame)
    }
    fn propagate(&mut self, frame: u32) -> Result<BTreeMap<Handle, Segment>> {
        (**self).propagate(frame)
    }
    fn purge_memory(&mut self, handle: Handle, frame: u32) -> Result<()> {
        (**self).purge_memory(handle, frame)
    }
    fn recondition(&mut self, handle: Handle, prompt: &BBox, frame: u32) -> Result<()> {
        (**self).recondition(handle, prompt, frame)
    }
    fn drop_object(&mut self, handle: Handle) -> Result<()> {
        (**self).drop_object(handle)
    }
}

impl<B: SegmentationBackend + ?Sized> SegmentationBackend for Box<B> {
    fn init_object(&mut self, prompt: &BBox, frame: u32) -> Result<Handle> {
        (**self).init_object(prompt, frame)
    }
    fn propagate(&mut self, frame: u32) -> Result<BTreeMap<Handle, Segment>> {
        (**self).propagate(frame)
    }
    fn purge_memory(&mut self, handle: Handle, frame: u32) -> Result<()> {
        (**self).purge_memory(handle, frame)
    }
    fn recondition(&mut self, handle: Handle, prompt: &BBox, frame: u32) -> Result<()> {
        (**self).recondition(handle, prompt, frame)
    }
    fn drop_object(&mut self, handle: Handle) -> Result<()> {
        (**self).drop_object(handle)
    }
}

/// Pipeline stages that can be switched off for ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Components {
    /// Detector-driven addition after the initial prompt frame.
    pub add: bool,
    /// Cross-object occlusion arbitration.
    pub coi: bool,
    /// Quality reconstruction of pending trajectories.
    pub qr: bool,
}

impl Default for Components {
    fn default() -> Self {
        Self { add: true, coi: true, qr: true }
    }
}

impl Components {
    pub fn label(&self) -> String {
        let mut parts = vec!["Baseline"];
        if self.add {
            parts.push("Add");
        }
        if self.coi {
            parts.push("CoI");
        }
        if self.qr {
            parts.push("Q-R");
        }
        parts.join("+")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrackRecord {
    pub id: TrackId,
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub state: TrajectoryState,
    /// `None` on the prompt frame, before the first propagation.
    pub logits: Option<f64>,
    pub class_id: i32,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct FrameResult {
    pub frame: u32,
    pub records: Vec<TrackRecord>,
    pub purged: Vec<TrackId>,
    pub reconditioned: Vec<TrackId>,
    pub added: Vec<TrackId>,
    pub removed: Vec<TrackId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Add,
    Remove,
    Purge,
    Recondition,
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EventKind::Add => "add",
            EventKind::Remove => "remove",
            EventKind::Purge => "purge",
            EventKind::Recondition => "recondition",
        })
    }
}

/// One lifecycle event. Serializes as `{"frame":…,"event":…,"id":…}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub frame: u32,
    pub event: EventKind,
    pub id: TrackId,
}

pub struct Engine<B> {
    backend: B,
    grid: ImageGrid,
    cfg: TrackerConfig,
    components: Components,
    tracks: BTreeMap<TrackId, Trajectory>,
    handles: BTreeMap<TrackId, Handle>,
    next_id: TrackId,
    last_frame: Option<u32>,
    trace: Vec<TraceEvent>,
}

impl<B: SegmentationBackend> Engine<B> {
    pub fn new(
        backend: B,
        grid: ImageGrid,
        cfg: TrackerConfig,
        components: Components,
    ) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            backend,
            grid,
            cfg,
            components,
            tracks: BTreeMap::new(),
            handles: BTreeMap::new(),
            next_id: 1,
            last_frame: None,
            trace: Vec::new(),
        })
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.cfg
    }

    pub fn trajectories(&self) -> &BTreeMap<TrackId, Trajectory> {
        &self.tracks
    }

    pub fn trace(&self) -> &[TraceEvent] {
        &self.trace
    }

    pub fn backend(&self) -> &B {
        &self.backend
    }

    pub fn into_parts(self) -> (B, Vec<TraceEvent>) {
        (self.backend, self.trace)
    }

    pub fn step(&mut self, frame: u32, detections: &[Detection]) -> Result<FrameResult> {
        if let Some(last) = self.last_frame {
            if frame <= last {
                return Err(Error::OutOfOrderFrame { frame, last });
            }
        }
        self.last_frame = Some(frame);
        let mut result = FrameResult { frame, ..FrameResult::default() };

        // propagate and update
        let mut segments = self.backend.propagate(frame).map_err(|e| backend_err(frame, e))?;
        if segments.len() != self.handles.len() {
            return Err(backend_err(
                frame,
                format!("propagate returned {} objects, {} live", segments.len(), self.handles.len()),
            ));
        }
        for (id, handle) in &self.handles {
            let seg = segments
                .remove(handle)
                .ok_or_else(|| backend_err(frame, format!("handle {handle} missing from propagate")))?;
            let traj = self.tracks.get_mut(id).expect("every handle has a trajectory");
            traj.update(seg.mask, seg.logits, &self.cfg)
                .map_err(|e| backend_err(frame, e))?;
        }

        // occlusion arbitration
        if self.components.coi {
            let masks: BTreeMap<TrackId, Mask> = self
                .tracks
                .iter()
                .filter_map(|(id, t)| t.last_mask.clone().map(|m| (*id, m)))
                .collect();
            for directive in resolve_interactions(&self.tracks, &masks, frame, &self.cfg)? {
                let handle = self.handles[&directive.id];
                self.backend
                    .purge_memory(handle, frame)
                    .map_err(|e| backend_err(frame, e))?;
                result.purged.push(directive.id);
                self.log(frame, EventKind::Purge, directive.id);
            }
        }

        if !detections.is_empty() {
            self.associate(frame, detections, &mut result)?;
        }

        // removal
        let doomed: Vec<TrackId> = self
            .tracks
            .values()
            .filter(|t| should_remove(t, &self.cfg))
            .map(|t| t.id)
            .collect();
        for id in doomed {
            let handle = self.handles.remove(&id).expect("live trajectory has a handle");
            self.backend.drop_object(handle).map_err(|e| backend_err(frame, e))?;
            self.tracks.remove(&id);
            result.removed.push(id);
            self.log(frame, EventKind::Remove, id);
        }

        result.records = self
            .tracks
            .values()
            .filter(|t| t.state >= self.cfg.emit_min_state)
            .filter_map(|t| {
                t.last_box.map(|bbox| TrackRecord {
                    id: t.id,
                    bbox,
                    state: t.state,
                    logits: t.latest_logits(),
                    class_id: t.class_id,
                })
            })
            .collect();
        Ok(result)
    }

    fn associate(
        &mut self,
        frame: u32,
        detections: &[Detection],
        result: &mut FrameResult,
    ) -> Result<()> {
        let high = high_confidence(detections, &self.cfg);
        let boxed: Vec<(TrackId, BBox)> = self
            .tracks
            .values()
            .filter_map(|t| t.last_box.map(|b| (t.id, b)))
            .collect();
        let track_boxes: Vec<BBox> = boxed.iter().map(|(_, b)| *b).collect();
        let det_boxes: Vec<BBox> = high.iter().map(|d| d.bbox).collect();
        let matches = gated_match(&track_boxes, &det_boxes, self.cfg.match_iou_gate);

        if self.components.qr {
            for &(t, d) in &matches.matches {
                let id = boxed[t].0;
                let det = &high[d];
                if !should_reconstruct(&self.tracks[&id], Some(det), &self.cfg) {
                    continue;
                }
                self.backend
                    .recondition(self.handles[&id], &det.bbox, frame)
                    .map_err(|e| backend_err(frame, e))?;
                self.tracks.get_mut(&id).unwrap().recondition(frame);
                result.reconditioned.push(id);
                self.log(frame, EventKind::Recondition, id);
            }
        }

        // without the Add stage only the initial prompt frame creates objects
        let may_add = self.components.add || self.next_id == 1;
        if may_add {
            let region = untracked_region(
                self.grid,
                self.tracks.values().filter_map(|t| t.last_mask.as_ref()),
            )?;
            for det in addition_filter(detections, &matches, &region, &self.cfg) {
                let handle = self
                    .backend
                    .init_object(&det.bbox, frame)
                    .map_err(|e| backend_err(frame, e))?;
                let id = self.next_id;
                self.next_id += 1;
                self.tracks.insert(id, Trajectory::new(id, &det, frame, &self.cfg));
                self.handles.insert(id, handle);
                result.added.push(id);
                self.log(frame, EventKind::Add, id);
            }
        }
        Ok(())
    }

    fn log(&mut self, frame: u32, event: EventKind, id: TrackId) {
        self.trace.push(TraceEvent { frame, event, id });
    }
}

fn backend_err(frame: u32, e: impl fmt::Display) -> Error {
    Error::Backend { frame, message: e.to_string() }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SequenceOutput {
    pub results: Vec<FrameResult>,
    pub trace: Vec<TraceEvent>,
}

/// Runs frames `1..=frames`, pulling each frame's detections from `detections`.
pub fn run_sequence<B: SegmentationBackend>(
    frames: u32,
    detections: &BTreeMap<u32, Vec<Detection>>,
    backend: B,
    grid: ImageGrid,
    cfg: &TrackerConfig,
    components: Components,
) -> Result<SequenceOutput> {
    let mut engine = Engine::new(backend, grid, cfg.clone(), components)?;
    let mut results = Vec::with_capacity(frames as usize);
    for frame in 1..=frames {
        let dets = detections.get(&frame).map(Vec::as_slice).unwrap_or(&[]);
        results.push(engine.step(frame, dets)?);
    }
    let (_, trace) = engine.into_parts();
    Ok(SequenceOutput { results, trace })
}

/// Trace as JSON lines.
pub fn render_trace(trace: &[TraceEvent]) -> String {
    trace
        .iter()
        .map(|e| serde_json::to_string(e).expect("trace events serialize") + "\n")
        .collect()
}
