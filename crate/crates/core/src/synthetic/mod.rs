//! Deterministic synthetic world and segmentation backend for exercising the
//! tracker without neural models.

mod backend;
mod detections;
mod run;
mod scene;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

pub use backend::{MemoryEntry, SimParams, SyntheticBackend, CONFUSION_FRACTION, RECENT_MEMORY};
pub use detections::generate_detections;
pub use run::{ground_truth_entries, run_scenario, ScenarioRun};
pub use scene::{GroundTruthObject, SceneObject, SceneScript, Waypoint};

use crate::error::{Error, Result};
use crate::trajectory::Detection;

/// Built-in scenario library.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Scenario {
    /// One object drifting slowly.
    S0,
    /// Two objects crossing; the front one fully hides the other mid-way.
    S1,
    /// Late birth of a second object after the first has died.
    S2,
    /// 200-frame single-object take, long enough for prompt drift to matter.
    S3,
    /// Two objects passing behind a static third one at the same time.
    S4,
}

impl Scenario {
    pub const ALL: [Scenario; 5] = [Scenario::S0, Scenario::S1, Scenario::S2, Scenario::S3, Scenario::S4];

    pub fn json(&self) -> &'static str {
        match self {
            Scenario::S0 => include_str!("../../scenarios/s0.json"),
            Scenario::S1 => include_str!("../../scenarios/s1.json"),
            Scenario::S2 => include_str!("../../scenarios/s2.json"),
            Scenario::S3 => include_str!("../../scenarios/s3.json"),
            Scenario::S4 => include_str!("../../scenarios/s4.json"),
        }
    }

    pub fn script(&self) -> SceneScript {
        SceneScript::from_json(self.json()).expect("built-in scenarios are valid")
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scenario::ALL
            .into_iter()
            .find(|sc| sc.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::invalid(format!("unknown scenario {s:?} (expected S0..S4)")))
    }
}

/// Detections for every frame of the script.
pub fn detection_stream(script: &SceneScript, params: &SimParams) -> Result<BTreeMap<u32, Vec<Detection>>> {
    (1..=script.frames)
        .map(|f| generate_detections(script, f, params).map(|d| (f, d)))
        .collect()
}
