//! Seedable stand-in for a video segmentation model.
//!
//! Each handle is locked onto one scene object and reports that object's
//! visible mask with a logits score that decays linearly with frames since
//! the last prompt, with occlusion, and with memory entries that belong to a
//! different object. The memory bank keeps the conditional (prompt) entry
//! plus the six most recent propagated frames. An entry stored while the
//! target was more than 80% hidden carries the occluder with it; if that
//! entry survives to the next propagation the handle silently re-locks onto
//! the occluder.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::scene::{GroundTruthObject, SceneScript};
use crate::engine::{Handle, Segment, SegmentationBackend};
use crate::error::{Error, Result};
use crate::mask::{box_iou, BBox, Mask};
use crate::trajectory::TrackerConfig;

/// Occlusion above which the model confuses an object with its occluder.
pub const CONFUSION_FRACTION: f64 = 0.8;
/// Non-conditional memory slots.
pub const RECENT_MEMORY: usize = 6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimParams {
    pub l_max: f64,
    pub drift_per_frame: f64,
    pub occlusion_penalty: f64,
    pub corruption_penalty: f64,
    /// Uniform jitter bound, in pixels, applied to each detection coordinate.
    pub det_noise: u32,
    pub det_dropout: f64,
    pub seed: u64,
}

impl Default for SimParams {
    fn default() -> Self {
        Self {
            l_max: 9.0,
            drift_per_frame: 0.02,
            occlusion_penalty: 6.0,
            corruption_penalty: 4.0,
            det_noise: 1,
            det_dropout: 0.02,
            seed: 0,
        }
    }
}

impl SimParams {
    pub fn validate(&self, cfg: &TrackerConfig) -> Result<()> {
        if !(self.l_max.is_finite() && self.l_max > cfg.tau_r) {
            return Err(Error::invalid(format!(
                "l_max {} must exceed tau_r {}",
                self.l_max, cfg.tau_r
            )));
        }
        for (name, v) in [
            ("drift_per_frame", self.drift_per_frame),
            ("occlusion_penalty", self.occlusion_penalty),
            ("corruption_penalty", self.corruption_penalty),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(format!("{name} must be finite and >= 0")));
            }
        }
        if !(0.0..=1.0).contains(&self.det_dropout) {
            return Err(Error::invalid("det_dropout must lie in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MemoryEntry {
    pub frame: u32,
    /// Object the handle was locked onto when the entry was written.
    pub target: Option<u32>,
    /// Set when the target was hidden past [`CONFUSION_FRACTION`].
    pub occluder: Option<u32>,
}

#[derive(Debug, Clone)]
struct HandleState {
    lock: Option<u32>,
    last_conditioning: u32,
    conditional: MemoryEntry,
    recent: Vec<MemoryEntry>,
    last_propagated: Option<u32>,
}

impl HandleState {
    fn prompted(lock: Option<u32>, frame: u32) -> Self {
        Self {
            lock,
            last_conditioning: frame,
            conditional: MemoryEntry { frame, target: lock, occluder: None },
            recent: Vec::new(),
            last_propagated: None,
        }
    }

    fn foreign_entries(&self) -> usize {
        std::iter::once(&self.conditional)
            .chain(&self.recent)
            .filter(|e| e.target != self.lock)
            .count()
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticBackend {
    script: SceneScript,
    params: SimParams,
    handles: BTreeMap<Handle, HandleState>,
    next_handle: Handle,
}

impl SyntheticBackend {
    pub fn new(script: SceneScript, params: SimParams) -> Result<Self> {
        script.validate()?;
        Ok(Self { script, params, handles: BTreeMap::new(), next_handle: 0 })
    }

    pub fn script(&self) -> &SceneScript {
        &self.script
    }

    /// Object currently followed by `handle`.
    pub fn lock_of(&self, handle: Handle) -> Option<u32> {
        self.handles.get(&handle).and_then(|h| h.lock)
    }

    /// Conditional entry first, then recent entries oldest to newest.
    pub fn memory(&self, handle: Handle) -> Option<Vec<MemoryEntry>> {
        self.handles
            .get(&handle)
            .map(|h| std::iter::once(h.conditional).chain(h.recent.iter().copied()).collect())
    }

    /// Scene object whose rectangle best overlaps the prompt.
    fn best_target(&self, prompt: &BBox, frame: u32) -> Option<u32> {
        let mut best: Option<(f64, u32)> = None;
        for obj in &self.script.objects {
            let Some(rect) = obj.box_at(frame) else { continue };
            let iou = box_iou(prompt, &rect);
            if iou > 0.0 && best.is_none_or(|(b, _)| iou > b) {
                best = Some((iou, obj.id));
            }
        }
        best.map(|(_, id)| id)
    }

    fn state_mut(&mut self, handle: Handle) -> Result<&mut HandleState> {
        self.handles.get_mut(&handle).ok_or(Error::UnknownHandle(handle))
    }

    fn segment(
        &self,
        state: &HandleState,
        frame: u32,
        gt: &BTreeMap<u32, GroundTruthObject>,
    ) -> (Segment, Option<u32>) {
        let grid = self.script.grid;
        let Some(target) = state.lock.and_then(|id| gt.get(&id)) else {
            return (Segment { mask: Mask::empty(grid), logits: 0.0 }, None);
        };
        let confused = target.occluded_fraction > CONFUSION_FRACTION;
        let occluder = target.occluder.filter(|_| confused);
        let mask = match occluder.and_then(|id| gt.get(&id)) {
            Some(front) => target.mask.union(&front.mask).expect("one grid"),
            None => target.mask.clone(),
        };
        let p = &self.params;
        let since = f64::from(frame.saturating_sub(state.last_conditioning));
        let logits = (p.l_max
            - p.drift_per_frame * since
            - p.occlusion_penalty * target.occluded_fraction
            - p.corruption_penalty * state.foreign_entries() as f64)
            .max(0.0);
        (Segment { mask, logits }, occluder)
    }
}

impl SegmentationBackend for SyntheticBackend {
    fn init_object(&mut self, prompt: &BBox, frame: u32) -> Result<Handle> {
        let lock = self.best_target(prompt, frame);
        self.next_handle += 1;
        self.handles.insert(self.next_handle, HandleState::prompted(lock, frame));
        Ok(self.next_handle)
    }

    fn propagate(&mut self, frame: u32) -> Result<BTreeMap<Handle, Segment>> {
        let gt = self.script.render_ground_truth(frame)?;
        let mut out = BTreeMap::new();
        let handles: Vec<Handle> = self.handles.keys().copied().collect();
        for handle in handles {
            let mut state = self.handles.remove(&handle).expect("listed handle");
            // an unpurged confused entry from the previous step hijacks the lock
            if let Some(prev) = state.last_propagated {
                if let Some(thief) =
                    state.recent.iter().find(|e| e.frame == prev).and_then(|e| e.occluder)
                {
                    state.lock = Some(thief);
                }
            }
            let (segment, occluder) = self.segment(&state, frame, &gt);
            state.recent.push(MemoryEntry { frame, target: state.lock, occluder });
            if state.recent.len() > RECENT_MEMORY {
                state.recent.remove(0);
            }
            state.last_propagated = Some(frame);
            self.handles.insert(handle, state);
            out.insert(handle, segment);
        }
        Ok(out)
    }

    fn purge_memory(&mut self, handle: Handle, frame: u32) -> Result<()> {
        let state = self.state_mut(handle)?;
        state.recent.retain(|e| e.frame != frame);
        Ok(())
    }

    fn recondition(&mut self, handle: Handle, prompt: &BBox, frame: u32) -> Result<()> {
        let lock = self.best_target(prompt, frame);
        let state = self.state_mut(handle)?;
        let last_propagated = state.last_propagated;
        *state = HandleState::prompted(lock, frame);
        state.last_propagated = last_propagated;
        Ok(())
    }

    fn drop_object(&mut self, handle: Handle) -> Result<()> {
        self.handles.remove(&handle).map(|_| ()).ok_or(Error::UnknownHandle(handle))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::ImageGrid;
    use crate::synthetic::scene::{SceneObject, Waypoint};

    fn b(x: u32, y: u32, w: u32, h: u32) -> BBox {
        BBox::new(x, y, w, h).unwrap()
    }

    fn object(id: u32, z: i32, path: &[(u32, BBox)]) -> SceneObject {
        SceneObject {
            id,
            birth: 1,
            death: 100,
            z,
            class_id: 0,
            waypoints: path.iter().map(|&(frame, bbox)| Waypoint { frame, bbox }).collect(),
        }
    }

    fn backend(objects: Vec<SceneObject>) -> SyntheticBackend {
        let script = SceneScript { grid: ImageGrid::new(100, 40).unwrap(), frames: 100, objects };
        SyntheticBackend::new(script, SimParams::default()).unwrap()
    }

    /// Object 1 (front) parked over object 2 from frame 5 on.
    fn occluding_pair() -> SyntheticBackend {
        backend(vec![
            object(1, 2, &[(1, b(0, 0, 10, 10)), (5, b(40, 0, 10, 10))]),
            object(2, 1, &[(1, b(40, 0, 10, 10))]),
        ])
    }

    #[test]
    fn fresh_object_logits() {
        let mut be = backend(vec![object(1, 0, &[(1, b(10, 10, 10, 10))])]);
        let h = be.init_object(&b(10, 10, 10, 10), 1).unwrap();
        let out = be.propagate(2).unwrap();
        assert_eq!(out[&h].logits, 9.0 - 0.02);
        assert_eq!(out[&h].mask, Mask::from_box(be.script.grid, &b(10, 10, 10, 10)));
    }

    #[test]
    fn half_occluded_logits() {
        let mut be = backend(vec![
            object(1, 2, &[(1, b(35, 0, 10, 10))]),
            object(2, 1, &[(1, b(40, 0, 10, 10))]),
        ]);
        let h = be.init_object(&b(40, 0, 10, 10), 1).unwrap();
        assert_eq!(be.lock_of(h), Some(2));
        let out = be.propagate(2).unwrap();
        assert!((out[&h].logits - 5.98).abs() < 1e-12);
    }

    #[test]
    fn unpurged_confusion_steals_lock() {
        let mut be = occluding_pair();
        let front = be.init_object(&b(0, 0, 10, 10), 1).unwrap();
        let back = be.init_object(&b(40, 0, 10, 10), 1).unwrap();
        for f in 2..=5 {
            be.propagate(f).unwrap();
        }
        // frame 5: fully hidden, mask bleeds onto the occluder
        assert_eq!(be.lock_of(back), Some(2));
        let out = be.propagate(6).unwrap();
        assert_eq!(be.lock_of(back), Some(1));
        assert_eq!(out[&back].mask, out[&front].mask);
    }

    #[test]
    fn purge_preserves_lock() {
        let mut be = occluding_pair();
        be.init_object(&b(0, 0, 10, 10), 1).unwrap();
        let back = be.init_object(&b(40, 0, 10, 10), 1).unwrap();
        for f in 2..=5 {
            be.propagate(f).unwrap();
        }
        be.purge_memory(back, 5).unwrap();
        be.propagate(6).unwrap();
        assert_eq!(be.lock_of(back), Some(2));
        assert!(be.memory(back).unwrap().iter().all(|e| e.frame != 5));
    }

    #[test]
    fn recondition_resets_drift_and_relocks() {
        let mut be = backend(vec![
            object(1, 1, &[(1, b(0, 0, 10, 10))]),
            object(2, 2, &[(1, b(50, 0, 10, 10))]),
        ]);
        let h = be.init_object(&b(0, 0, 10, 10), 1).unwrap();
        for f in 2..=20 {
            be.propagate(f).unwrap();
        }
        be.recondition(h, &b(1, 0, 10, 10), 20).unwrap();
        let out = be.propagate(21).unwrap();
        assert_eq!(out[&h].logits, 9.0 - 0.02);
        assert_eq!(be.lock_of(h), Some(1));

        // a prompt sitting mostly on object 2 moves the lock there
        be.recondition(h, &b(48, 0, 10, 10), 21).unwrap();
        assert_eq!(be.lock_of(h), Some(2));
    }

    #[test]
    fn memory_bank_is_bounded() {
        let mut be = backend(vec![object(1, 0, &[(1, b(10, 10, 10, 10))])]);
        let h = be.init_object(&b(10, 10, 10, 10), 1).unwrap();
        for f in 2..=30 {
            be.propagate(f).unwrap();
            assert!(be.memory(h).unwrap().len() <= 1 + RECENT_MEMORY);
        }
        let mem = be.memory(h).unwrap();
        assert_eq!(mem[0].frame, 1);
        assert_eq!(mem.iter().skip(1).map(|e| e.frame).collect::<Vec<_>>(), (25..=30).collect::<Vec<_>>());
    }

    #[test]
    fn unknown_handles() {
        let mut be = occluding_pair();
        assert!(matches!(be.purge_memory(9, 1), Err(Error::UnknownHandle(9))));
        assert!(be.recondition(9, &b(0, 0, 2, 2), 1).is_err());
        assert!(be.drop_object(9).is_err());
    }

    #[test]
    fn dead_target_reports_zero() {
        let mut o = object(1, 0, &[(1, b(10, 10, 10, 10))]);
        o.death = 3;
        let mut be = backend(vec![o]);
        let h = be.init_object(&b(10, 10, 10, 10), 1).unwrap();
        be.propagate(2).unwrap();
        be.propagate(3).unwrap();
        let out = be.propagate(4).unwrap();
        assert_eq!(out[&h].logits, 0.0);
        assert!(out[&h].mask.is_empty());
    }
}
