use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::{BBox, ImageGrid, Mask};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Waypoint {
    pub frame: u32,
    #[serde(rename = "box")]
    pub bbox: BBox,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneObject {
    pub id: u32,
    pub birth: u32,
    pub death: u32,
    /// Larger values are nearer the camera.
    pub z: i32,
    #[serde(default)]
    pub class_id: i32,
    pub waypoints: Vec<Waypoint>,
}

impl SceneObject {
    pub fn alive_at(&self, frame: u32) -> bool {
        (self.birth..=self.death).contains(&frame)
    }

    /// Linearly interpolated rectangle, held constant outside the waypoint span.
    pub fn box_at(&self, frame: u32) -> Option<BBox> {
        if !self.alive_at(frame) {
            return None;
        }
        let wps = &self.waypoints;
        let first = wps.first()?;
        if frame <= first.frame {
            return Some(first.bbox);
        }
        let Some(k) = wps.iter().position(|w| w.frame >= frame) else {
            return wps.last().map(|w| w.bbox);
        };
        let (a, b) = (&wps[k - 1], &wps[k]);
        let t = f64::from(frame - a.frame) / f64::from(b.frame - a.frame);
        let lerp = |p: u32, q: u32| (f64::from(p) + t * (f64::from(q) - f64::from(p))).round() as u32;
        Some(BBox {
            x: lerp(a.bbox.x, b.bbox.x),
            y: lerp(a.bbox.y, b.bbox.y),
            w: lerp(a.bbox.w, b.bbox.w).max(1),
            h: lerp(a.bbox.h, b.bbox.h).max(1),
        })
    }
}

/// Deterministic description of a synthetic world: rectangles moving along
/// waypoints, occluding each other by depth.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneScript {
    pub grid: ImageGrid,
    /// Sequence covers frames `1..=frames`.
    pub frames: u32,
    pub objects: Vec<SceneObject>,
}

/// One object's ground truth at one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthObject {
    pub bbox: BBox,
    /// Visible part: the rectangle minus nearer objects.
    pub mask: Mask,
    pub occluded_fraction: f64,
    /// Nearer object hiding the most of this one.
    pub occluder: Option<u32>,
    pub class_id: i32,
}

impl SceneScript {
    pub fn from_json(text: &str) -> Result<Self> {
        let script: SceneScript = serde_json::from_str(text)?;
        script.validate()?;
        Ok(script)
    }

    pub fn validate(&self) -> Result<()> {
        ImageGrid::new(self.grid.width, self.grid.height)?;
        if self.frames == 0 {
            return Err(Error::invalid("scene must span at least one frame"));
        }
        let mut ids = BTreeSet::new();
        let mut depths = BTreeSet::new();
        for obj in &self.objects {
            let ctx = |msg: &str| Error::invalid(format!("object {}: {msg}", obj.id));
            if !ids.insert(obj.id) {
                return Err(ctx("duplicate id"));
            }
            if !depths.insert(obj.z) {
                return Err(ctx("z must be unique"));
            }
            if obj.birth < 1 || obj.birth > obj.death {
                return Err(ctx("birth must satisfy 1 <= birth <= death"));
            }
            let Some(first) = obj.waypoints.first() else {
                return Err(ctx("no waypoints"));
            };
            if obj.birth > first.frame {
                return Err(ctx("birth after first waypoint"));
            }
            if obj.waypoints.windows(2).any(|w| w[0].frame >= w[1].frame) {
                return Err(ctx("waypoint frames must strictly increase"));
            }
            if let Some(w) = obj.waypoints.iter().find(|w| !w.bbox.fits(self.grid)) {
                return Err(ctx(&format!("waypoint at frame {} leaves the grid", w.frame)));
            }
        }
        Ok(())
    }

    pub fn object(&self, id: u32) -> Option<&SceneObject> {
        self.objects.iter().find(|o| o.id == id)
    }

    /// Visible masks of every object alive at `frame`, keyed by object id.
    pub fn render_ground_truth(&self, frame: u32) -> Result<BTreeMap<u32, GroundTruthObject>> {
        if frame < 1 || frame > self.frames {
            return Err(Error::invalid(format!(
                "frame {frame} outside scene span 1..={}",
                self.frames
            )));
        }
        let alive: Vec<(&SceneObject, BBox)> = self
            .objects
            .iter()
            .filter_map(|o| o.box_at(frame).map(|b| (o, b)))
            .collect();
        let mut out = BTreeMap::new();
        for &(obj, bbox) in &alive {
            let rect = Mask::from_box(self.grid, &bbox);
            let mut visible = rect.clone();
            let mut occluder: Option<(u64, i32, u32)> = None;
            for &(other, obox) in alive.iter().filter(|(o, _)| o.z > obj.z) {
                visible = visible.difference(&Mask::from_box(self.grid, &obox))?;
                let overlap = bbox.intersection_area(&obox);
                if overlap > 0 && occluder.is_none_or(|(best, z, _)| (overlap, other.z) > (best, z)) {
                    occluder = Some((overlap, other.z, other.id));
                }
            }
            let occluded_fraction = 1.0 - visible.area() as f64 / bbox.area() as f64;
            out.insert(
                obj.id,
                GroundTruthObject {
                    bbox,
                    mask: visible,
                    occluded_fraction,
                    occluder: occluder.map(|(_, _, id)| id),
                    class_id: obj.class_id,
                },
            );
        }
        Ok(out)
    }
}
