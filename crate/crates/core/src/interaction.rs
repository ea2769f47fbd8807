//! Cross-object occlusion arbitration.
//!
//! Heavily overlapping track masks mean one of the two objects is probably
//! being segmented on top of the other. The occluded one is picked from its
//! logits (a clear score gap, else the flatter recent logits window) and its
//! memory entry for the current frame is purged.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::mask::{mask_iou, Mask};
use crate::trajectory::{logits_variance, TrackId, TrackerConfig, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OcclusionPair {
    pub id_a: TrackId,
    pub id_b: TrackId,
    pub miou: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PurgeDirective {
    pub id: TrackId,
    pub frame: u32,
}

/// All pairs above the occlusion threshold, by descending mIoU then ids.
pub fn detect_occlusion_pairs(
    masks: &BTreeMap<TrackId, Mask>,
    cfg: &TrackerConfig,
) -> Result<Vec<OcclusionPair>> {
    let entries: Vec<(&TrackId, &Mask)> = masks.iter().collect();
    let mut pairs = Vec::new();
    for (i, (&id_a, ma)) in entries.iter().enumerate() {
        for (&id_b, mb) in &entries[i + 1..] {
            let miou = mask_iou(ma, mb)?;
            if miou > cfg.miou_occlusion_threshold {
                pairs.push(OcclusionPair { id_a, id_b, miou });
            }
        }
    }
    pairs.sort_by(|p, q| {
        q.miou
            .partial_cmp(&p.miou)
            .unwrap_or(Ordering::Equal)
            .then((p.id_a, p.id_b).cmp(&(q.id_a, q.id_b)))
    });
    Ok(pairs)
}

/// Picks which of two overlapping trajectories is the occluded one.
pub fn identify_occluded(a: &Trajectory, b: &Trajectory, cfg: &TrackerConfig) -> Result<TrackId> {
    let (Some(la), Some(lb)) = (a.latest_logits(), b.latest_logits()) else {
        return Err(Error::invalid(format!(
            "trajectories {} and {} need logits history for arbitration",
            a.id, b.id
        )));
    };
    let higher_id = a.id.max(b.id);
    let lower_logits = |la: f64, lb: f64| match la.partial_cmp(&lb) {
        Some(Ordering::Less) => a.id,
        Some(Ordering::Greater) => b.id,
        _ => higher_id,
    };

    if (la - lb).abs() > cfg.logits_sig_delta {
        return Ok(lower_logits(la, lb));
    }
    let (ha, hb) = (a.logits_history(), b.logits_history());
    if ha.len() < 2 || hb.len() < 2 {
        return Ok(lower_logits(la, lb));
    }
    // a sudden drop leaves a flatter window than a gradual decline
    let va = logits_variance(ha, cfg.variance_window)?;
    let vb = logits_variance(hb, cfg.variance_window)?;
    Ok(match va.partial_cmp(&vb) {
        Some(Ordering::Less) => a.id,
        Some(Ordering::Greater) => b.id,
        _ => higher_id,
    })
}

/// Purge directives for this frame, at most one per trajectory. Pairs are
/// processed in mIoU order and the winner of an earlier pair is never purged
/// by a later one.
pub fn resolve_interactions(
    trajectories: &BTreeMap<TrackId, Trajectory>,
    masks: &BTreeMap<TrackId, Mask>,
    frame: u32,
    cfg: &TrackerConfig,
) -> Result<Vec<PurgeDirective>> {
    let mut purged = BTreeSet::new();
    let mut kept = BTreeSet::new();
    let mut directives = Vec::new();
    for pair in detect_occlusion_pairs(masks, cfg)? {
        let (Some(a), Some(b)) = (trajectories.get(&pair.id_a), trajectories.get(&pair.id_b))
        else {
            continue;
        };
        let occluded = identify_occluded(a, b, cfg)?;
        let other = if occluded == a.id { b.id } else { a.id };
        if purged.contains(&occluded) || kept.contains(&occluded) {
            continue;
        }
        purged.insert(occluded);
        if !purged.contains(&other) {
            kept.insert(other);
        }
        directives.push(PurgeDirective { id: occluded, frame });
    }
    Ok(directives)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::{BBox, ImageGrid};
    use crate::trajectory::Detection;

    fn grid() -> ImageGrid {
        ImageGrid::new(40, 20).unwrap()
    }

    fn rect(x: u32, y: u32, w: u32, h: u32) -> Mask {
        Mask::from_box(grid(), &BBox::new(x, y, w, h).unwrap())
    }

    fn traj(id: TrackId, logits: &[f64]) -> Trajectory {
        let prompt = Detection::new(BBox::new(0, 0, 2, 2).unwrap(), 0.9, 0).unwrap();
        let mut t = Trajectory::new(id, &prompt, 1, &TrackerConfig::default());
        for &l in logits {
            t.update(rect(0, 0, 2, 2), l, &TrackerConfig::default()).unwrap();
        }
        t
    }

    #[test]
    fn pairs_examples() {
        let cfg = TrackerConfig::default();
        let disjoint = BTreeMap::from([(1, rect(0, 0, 5, 5)), (2, rect(10, 0, 5, 5))]);
        assert!(detect_occlusion_pairs(&disjoint, &cfg).unwrap().is_empty());

        let same = BTreeMap::from([(1, rect(0, 0, 5, 5)), (2, rect(0, 0, 5, 5))]);
        let pairs = detect_occlusion_pairs(&same, &cfg).unwrap();
        assert_eq!(pairs, vec![OcclusionPair { id_a: 1, id_b: 2, miou: 1.0 }]);

        // 17x10 inside 20x10 sharing the left edge: 170 / 200
        let three = BTreeMap::from([
            (1, rect(0, 0, 17, 10)),
            (2, rect(0, 0, 20, 10)),
            (3, rect(30, 0, 5, 5)),
        ]);
        let pairs = detect_occlusion_pairs(&three, &cfg).unwrap();
        assert_eq!(pairs, vec![OcclusionPair { id_a: 1, id_b: 2, miou: 0.85 }]);
    }

    #[test]
    fn pair_at_threshold_is_not_reported() {
        let cfg = TrackerConfig::default();
        // 16 of 20 columns shared: IoU exactly 0.8
        let m = BTreeMap::from([(1, rect(0, 0, 16, 10)), (2, rect(0, 0, 20, 10))]);
        assert!(detect_occlusion_pairs(&m, &cfg).unwrap().is_empty());
    }

    #[test]
    fn score_gap_rule() {
        let cfg = TrackerConfig::default();
        let a = traj(1, &[9.0]);
        let b = traj(2, &[2.0]);
        assert_eq!(identify_occluded(&a, &b, &cfg).unwrap(), 2);
        assert_eq!(identify_occluded(&b, &a, &cfg).unwrap(), 2);
    }

    #[test]
    fn variance_rule_picks_abrupt_drop() {
        let cfg = TrackerConfig::default();
        let gradual: Vec<f64> = (0..10).map(|i| 9.0 - 6.0 * f64::from(i) / 9.0).collect();
        let mut abrupt = vec![9.0; 9];
        abrupt.push(3.0);
        let a = traj(1, &gradual);
        let b = traj(2, &abrupt);
        assert_eq!(identify_occluded(&a, &b, &cfg).unwrap(), 2);
        assert_eq!(identify_occluded(&b, &a, &cfg).unwrap(), 2);
    }

    #[test]
    fn identical_histories_pick_higher_id() {
        let cfg = TrackerConfig::default();
        let a = traj(4, &[8.0, 7.0, 6.0]);
        let b = traj(9, &[8.0, 7.0, 6.0]);
        assert_eq!(identify_occluded(&a, &b, &cfg).unwrap(), 9);
        assert_eq!(identify_occluded(&b, &a, &cfg).unwrap(), 9);
    }

    #[test]
    fn short_history_falls_back_to_logits() {
        let cfg = TrackerConfig::default();
        let a = traj(1, &[6.5]);
        let b = traj(2, &[9.0, 9.0, 6.0]);
        assert_eq!(identify_occluded(&a, &b, &cfg).unwrap(), 2);
        assert!(identify_occluded(&traj(1, &[]), &b, &cfg).is_err());
    }

    #[test]
    fn resolve_examples() {
        let cfg = TrackerConfig::default();
        let trajs = BTreeMap::from([
            (1, traj(1, &[9.0])),
            (2, traj(2, &[3.0])),
            (3, traj(3, &[9.0])),
        ]);
        let none = BTreeMap::from([(1, rect(0, 0, 5, 5)), (2, rect(10, 0, 5, 5))]);
        assert!(resolve_interactions(&trajs, &none, 4, &cfg).unwrap().is_empty());

        let pair = BTreeMap::from([(1, rect(0, 0, 5, 5)), (2, rect(0, 0, 5, 5))]);
        assert_eq!(
            resolve_interactions(&trajs, &pair, 4, &cfg).unwrap(),
            vec![PurgeDirective { id: 2, frame: 4 }]
        );

        // 1 and 3 both overlap 2 at 0.9 but each other only at 0.8
        let chain = BTreeMap::from([
            (1, rect(0, 0, 18, 10)),
            (2, rect(0, 0, 20, 10)),
            (3, rect(2, 0, 18, 10)),
        ]);
        assert_eq!(
            resolve_interactions(&trajs, &chain, 4, &cfg).unwrap(),
            vec![PurgeDirective { id: 2, frame: 4 }]
        );
    }

    #[test]
    fn winner_of_earlier_pair_is_protected() {
        let cfg = TrackerConfig::default();
        // (1,2) overlap most; 2 wins against 1. (2,3) would nominate 2.
        let trajs = BTreeMap::from([
            (1, traj(1, &[3.0])),
            (2, traj(2, &[6.0])),
            (3, traj(3, &[9.0])),
        ]);
        let masks = BTreeMap::from([
            (1, rect(0, 0, 20, 10)),
            (2, rect(0, 0, 20, 10)),
            (3, rect(0, 0, 18, 10)),
        ]);
        let out = resolve_interactions(&trajs, &masks, 7, &cfg).unwrap();
        assert_eq!(out, vec![PurgeDirective { id: 1, frame: 7 }]);
    }
}
