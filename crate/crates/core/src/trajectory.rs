//! Trajectory lifecycle: logits-driven state classification, removal after a
//! run of lost frames, filtering of detections into new-object prompts, and
//! the quality-reconstruction trigger.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::assignment::MatchResult;
use crate::error::{Error, Result};
use crate::mask::{box_from_mask, box_region_overlap, BBox, Mask};

pub type TrackId = u64;

/// Ordered `Lost < Suspicious < Pending < Reliable`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrajectoryState {
    Lost,
    Suspicious,
    Pending,
    Reliable,
}

impl fmt::Display for TrajectoryState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TrajectoryState::Lost => "lost",
            TrajectoryState::Suspicious => "suspicious",
            TrajectoryState::Pending => "pending",
            TrajectoryState::Reliable => "reliable",
        })
    }
}

/// Every tracker threshold in one record. Serialized as a flat JSON object;
/// missing keys take defaults and unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerConfig {
    pub tau_r: f64,
    pub tau_p: f64,
    pub tau_s: f64,
    /// Lost frames tolerated before removal.
    pub tolerance_frames: u32,
    /// Minimum untracked fraction of a detection box for it to seed a new object.
    pub r_threshold: f64,
    /// Logits window for the variance test.
    pub variance_window: usize,
    pub det_conf_threshold: f64,
    pub miou_occlusion_threshold: f64,
    /// Latest-logits gap above which the lower-scoring object is taken as occluded.
    pub logits_sig_delta: f64,
    pub match_iou_gate: f64,
    pub emit_min_state: TrajectoryState,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            tau_r: 8.0,
            tau_p: 6.0,
            tau_s: 2.0,
            tolerance_frames: 25,
            r_threshold: 0.5,
            variance_window: 10,
            det_conf_threshold: 0.5,
            miou_occlusion_threshold: 0.8,
            logits_sig_delta: 1.0,
            match_iou_gate: 0.3,
            emit_min_state: TrajectoryState::Pending,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.tau_r,
            self.tau_p,
            self.tau_s,
            self.r_threshold,
            self.det_conf_threshold,
            self.miou_occlusion_threshold,
            self.logits_sig_delta,
            self.match_iou_gate,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("config thresholds must be finite"));
        }
        if !(self.tau_r > self.tau_p && self.tau_p > self.tau_s) {
            return Err(Error::invalid(format!(
                "state thresholds must satisfy tau_r > tau_p > tau_s, got {} / {} / {}",
                self.tau_r, self.tau_p, self.tau_s
            )));
        }
        if self.tolerance_frames < 1 {
            return Err(Error::invalid("tolerance_frames must be at least 1"));
        }
        if self.variance_window < 2 {
            return Err(Error::invalid("variance_window must be at least 2"));
        }
        for (name, v) in [
            ("r_threshold", self.r_threshold),
            ("det_conf_threshold", self.det_conf_threshold),
            ("miou_occlusion_threshold", self.miou_occlusion_threshold),
            ("match_iou_gate", self.match_iou_gate),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::invalid(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        if self.logits_sig_delta < 0.0 {
            return Err(Error::invalid("logits_sig_delta must be non-negative"));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: TrackerConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn classify_state(logits: f64, cfg: &TrackerConfig) -> Result<TrajectoryState> {
    if logits.is_nan() {
        return Err(Error::invalid("logits is NaN"));
    }
    Ok(if logits > cfg.tau_r {
        TrajectoryState::Reliable
    } else if logits > cfg.tau_p {
        TrajectoryState::Pending
    } else if logits > cfg.tau_s {
        TrajectoryState::Suspicious
    } else {
        TrajectoryState::Lost
    })
}

/// Population variance of the most recent `min(window, len)` samples.
pub fn logits_variance(history: &[f64], window: usize) -> Result<f64> {
    if history.is_empty() || window == 0 {
        return Err(Error::invalid("variance of an empty logits history"));
    }
    let recent = &history[history.len().saturating_sub(window)..];
    let n = recent.len() as f64;
    let mean = recent.iter().sum::<f64>() / n;
    Ok(recent.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub confidence: f64,
    pub class_id: i32,
}

impl Detection {
    pub fn new(bbox: BBox, confidence: f64, class_id: i32) -> Result<Self> {
        if !(0.0..=1.0).contains(&confidence) {
            return Err(Error::invalid(format!("confidence {confidence} outside [0, 1]")));
        }
        Ok(Self { bbox, confidence, class_id })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub id: TrackId,
    pub state: TrajectoryState,
    logits_history: Vec<f64>,
    history_capacity: usize,
    pub frames_lost: u32,
    pub last_mask: Option<Mask>,
    pub last_box: Option<BBox>,
    pub class_id: i32,
    pub created_frame: u32,
    pub last_conditioning_frame: u32,
}

impl Trajectory {
    /// A freshly prompted object: reliable, no logits yet, box taken from the prompt.
    pub fn new(id: TrackId, prompt: &Detection, frame: u32, cfg: &TrackerConfig) -> Self {
        Self {
            id,
            state: TrajectoryState::Reliable,
            logits_history: Vec::with_capacity(cfg.variance_window),
            history_capacity: cfg.variance_window,
            frames_lost: 0,
            last_mask: None,
            last_box: Some(prompt.bbox),
            class_id: prompt.class_id,
            created_frame: frame,
            last_conditioning_frame: frame,
        }
    }

    pub fn logits_history(&self) -> &[f64] {
        &self.logits_history
    }

    pub fn latest_logits(&self) -> Option<f64> {
        self.logits_history.last().copied()
    }

    /// Folds one propagation result into the trajectory.
    pub fn update(&mut self, mask: Mask, logits: f64, cfg: &TrackerConfig) -> Result<()> {
        let state = classify_state(logits, cfg)?;
        if self.logits_history.len() == self.history_capacity {
            self.logits_history.remove(0);
        }
        self.logits_history.push(logits);
        self.state = state;
        if state == TrajectoryState::Lost {
            self.frames_lost += 1;
        } else {
            self.frames_lost = 0;
        }
        self.last_box = box_from_mask(&mask);
        self.last_mask = Some(mask);
        Ok(())
    }

    /// Marks a fresh prompt; logits statistics restart from scratch.
    pub fn recondition(&mut self, frame: u32) {
        self.logits_history.clear();
        self.last_conditioning_frame = frame;
    }
}

pub fn should_remove(traj: &Trajectory, cfg: &TrackerConfig) -> bool {
    traj.state == TrajectoryState::Lost && traj.frames_lost > cfg.tolerance_frames
}

/// Detections with confidence strictly above the per-sequence threshold.
pub fn high_confidence(dets: &[Detection], cfg: &TrackerConfig) -> Vec<Detection> {
    dets.iter().filter(|d| d.confidence > cfg.det_conf_threshold).copied().collect()
}

/// Three-stage admission of new objects. `matches` indexes into the
/// high-confidence subset of `dets`.
pub fn addition_filter(
    dets: &[Detection],
    matches: &MatchResult,
    untracked: &Mask,
    cfg: &TrackerConfig,
) -> Vec<Detection> {
    let high = high_confidence(dets, cfg);
    matches
        .unmatched_detections
        .iter()
        .filter_map(|&i| high.get(i))
        .filter(|d| {
            box_region_overlap(&d.bbox, untracked).is_ok_and(|r| r > cfg.r_threshold)
        })
        .copied()
        .collect()
}

pub fn should_reconstruct(
    traj: &Trajectory,
    matched: Option<&Detection>,
    cfg: &TrackerConfig,
) -> bool {
    traj.state == TrajectoryState::Pending
        && matched.is_some_and(|d| d.confidence > cfg.det_conf_threshold)
}
