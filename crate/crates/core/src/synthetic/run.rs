use std::collections::BTreeMap;

use super::{detection_stream, SceneScript, SimParams, SyntheticBackend};
use crate::engine::{run_sequence, Components, SequenceOutput};
use crate::error::Result;
use crate::mask::box_from_mask;
use crate::metrics::GtEntry;
use crate::trajectory::{Detection, TrackerConfig};

/// Ground truth as the camera sees it: the tight box of each object's visible
/// pixels, paired with its visible fraction. Fully hidden objects are absent.
pub fn ground_truth_entries(script: &SceneScript) -> Result<Vec<(GtEntry, f64)>> {
    let mut out = Vec::new();
    for frame in 1..=script.frames {
        for (id, obj) in script.render_ground_truth(frame)? {
            let Some(bbox) = box_from_mask(&obj.mask) else { continue };
            let entry = GtEntry { frame, id: i64::from(id), bbox, class_id: obj.class_id, ignore: false };
            out.push((entry, 1.0 - obj.occluded_fraction));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct ScenarioRun {
    pub output: SequenceOutput,
    pub detections: BTreeMap<u32, Vec<Detection>>,
    pub ground_truth: Vec<(GtEntry, f64)>,
}

impl ScenarioRun {
    pub fn gt_entries(&self) -> Vec<GtEntry> {
        self.ground_truth.iter().map(|(g, _)| *g).collect()
    }
}

/// Runs the engine over a script with the synthetic backend and detector.
pub fn run_scenario(
    script: &SceneScript,
    params: &SimParams,
    cfg: &TrackerConfig,
    components: Components,
) -> Result<ScenarioRun> {
    params.validate(cfg)?;
    let detections = detection_stream(script, params)?;
    let backend = SyntheticBackend::new(script.clone(), params.clone())?;
    let output = run_sequence(script.frames, &detections, backend, script.grid, cfg, components)?;
    Ok(ScenarioRun { output, detections, ground_truth: ground_truth_entries(script)? })
}
