//! Box-level tracking evaluation: CLEAR (MOTA, FP, FN, IDSW, MT, ML) and
//! IDF1 at a configurable IoU threshold.
//!
//! A ground-truth/prediction pair qualifies when IoU >= threshold. GT rows
//! flagged `ignore` are not scored; predictions lying mostly (> 50% of their
//! area) inside an ignore box and qualifying for no scored GT are dropped
//! before evaluation, so ignore regions suppress false positives but never
//! create true positives.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::assignment::{solve_assignment, CostMatrix};
use crate::error::{Error, Result};
use crate::mask::{box_iou, BBox};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GtEntry {
    pub frame: u32,
    pub id: i64,
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub class_id: i32,
    pub ignore: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredEntry {
    pub frame: u32,
    pub id: i64,
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub class_id: i32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub iou_threshold: f64,
    pub mota: f64,
    pub idf1: f64,
    pub idsw: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tp: u64,
    pub mt: u64,
    pub ml: u64,
    pub total_gt: u64,
    pub total_pred: u64,
    pub idtp: u64,
    pub gt_tracks: u64,
}

impl EvalReport {
    /// `1 - (FN + FP + IDSW) / total_gt`, 0 when there is no ground truth.
    pub fn mota_from_counts(fn_: u64, fp: u64, idsw: u64, total_gt: u64) -> f64 {
        if total_gt == 0 {
            return 0.0;
        }
        1.0 - (fn_ + fp + idsw) as f64 / total_gt as f64
    }

    pub fn to_table(&self) -> String {
        let cols = [
            ("IoU", format!("{:.2}", self.iou_threshold)),
            ("MOTA", format!("{:.4}", self.mota)),
            ("IDF1", format!("{:.4}", self.idf1)),
            ("TP", self.tp.to_string()),
            ("FP", self.fp.to_string()),
            ("FN", self.fn_.to_string()),
            ("IDSW", self.idsw.to_string()),
            ("MT", self.mt.to_string()),
            ("ML", self.ml.to_string()),
            ("GT", self.total_gt.to_string()),
        ];
        let head: Vec<String> = cols
            .iter()
            .map(|(h, v)| format!("{:>w$}", h, w = h.len().max(v.len())))
            .collect();
        let body: Vec<String> = cols
            .iter()
            .map(|(h, v)| format!("{:>w$}", v, w = h.len().max(v.len())))
            .collect();
        format!("{}\n{}\n", head.join("  "), body.join("  "))
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_table())
    }
}

/// Matches one frame. `prev` maps GT id to the prediction id it was matched
/// with on the previous frame.
///
/// Qualifying pairs are solved jointly for maximum cardinality; among
/// maximum matchings, continuations of `prev` are preferred, then higher IoU.
/// Returns `(gt index, pred index)` pairs.
pub fn match_frame(
    gt: &[(i64, BBox)],
    pred: &[(i64, BBox)],
    prev: &BTreeMap<i64, i64>,
    iou_threshold: f64,
) -> Vec<(usize, usize)> {
    if gt.is_empty() || pred.is_empty() {
        return Vec::new();
    }
    let n = gt.len().min(pred.len());
    let forbidden = 2.0 * n as f64 + 4.0;
    let ious: Vec<Vec<f64>> = gt
        .iter()
        .map(|(_, g)| pred.iter().map(|(_, p)| box_iou(g, p)).collect())
        .collect();
    let qualifies = |r: usize, c: usize| ious[r][c] >= iou_threshold && ious[r][c] > 0.0;
    let cost = CostMatrix::from_fn(gt.len(), pred.len(), |r, c| {
        if !qualifies(r, c) {
            return forbidden;
        }
        let continues = prev.get(&gt[r].0) == Some(&pred[c].0);
        (if continues { 0.0 } else { 1.0 }) + (1.0 - ious[r][c])
    })
    .expect("costs are finite");
    solve_assignment(&cost).into_iter().filter(|&(r, c)| qualifies(r, c)).collect()
}

struct FrameData<'a> {
    gt: Vec<&'a GtEntry>,
    ignore: Vec<BBox>,
    pred: Vec<&'a PredEntry>,
}

fn group<'a>(
    gt: &'a [GtEntry],
    pred: &'a [PredEntry],
    iou_threshold: f64,
) -> Result<BTreeMap<u32, FrameData<'a>>> {
    let mut seen = BTreeSet::new();
    for g in gt {
        if !seen.insert((g.frame, g.id)) {
            return Err(Error::invalid(format!("duplicate GT (frame {}, id {})", g.frame, g.id)));
        }
    }
    seen.clear();
    for p in pred {
        if !seen.insert((p.frame, p.id)) {
            return Err(Error::invalid(format!(
                "duplicate prediction (frame {}, id {})",
                p.frame, p.id
            )));
        }
    }

    let mut frames: BTreeMap<u32, FrameData> = BTreeMap::new();
    let slot = |frames: &mut BTreeMap<u32, FrameData<'a>>, f| {
        frames.entry(f).or_insert_with(|| FrameData { gt: vec![], ignore: vec![], pred: vec![] });
    };
    for g in gt {
        slot(&mut frames, g.frame);
        let fd = frames.get_mut(&g.frame).unwrap();
        if g.ignore {
            fd.ignore.push(g.bbox);
        } else {
            fd.gt.push(g);
        }
    }
    for p in pred {
        slot(&mut frames, p.frame);
        frames.get_mut(&p.frame).unwrap().pred.push(p);
    }
    for fd in frames.values_mut() {
        if fd.ignore.is_empty() {
            continue;
        }
        let (gts, ignore) = (&fd.gt, &fd.ignore);
        fd.pred.retain(|p| {
            let candidate = gts.iter().any(|g| {
                let iou = box_iou(&g.bbox, &p.bbox);
                iou >= iou_threshold && iou > 0.0
            });
            let ignored = ignore
                .iter()
                .any(|b| 2 * b.intersection_area(&p.bbox) > p.bbox.area());
            candidate || !ignored
        });
    }
    Ok(frames)
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ClearCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub idsw: u64,
    pub mt: u64,
    pub ml: u64,
    pub total_gt: u64,
    pub total_pred: u64,
    pub gt_tracks: u64,
}

impl ClearCounts {
    pub fn mota(&self) -> f64 {
        EvalReport::mota_from_counts(self.fn_, self.fp, self.idsw, self.total_gt)
    }
}

pub fn compute_clear(gt: &[GtEntry], pred: &[PredEntry], iou_threshold: f64) -> Result<ClearCounts> {
    let frames = group(gt, pred, iou_threshold)?;
    let mut counts = ClearCounts::default();
    let mut prev: BTreeMap<i64, i64> = BTreeMap::new();
    let mut last_match: BTreeMap<i64, i64> = BTreeMap::new();
    let mut track_len: BTreeMap<i64, u64> = BTreeMap::new();
    let mut track_hits: BTreeMap<i64, u64> = BTreeMap::new();

    for fd in frames.values() {
        let g: Vec<(i64, BBox)> = fd.gt.iter().map(|e| (e.id, e.bbox)).collect();
        let p: Vec<(i64, BBox)> = fd.pred.iter().map(|e| (e.id, e.bbox)).collect();
        let pairs = match_frame(&g, &p, &prev, iou_threshold);

        counts.total_gt += g.len() as u64;
        counts.total_pred += p.len() as u64;
        counts.tp += pairs.len() as u64;
        counts.fn_ += (g.len() - pairs.len()) as u64;
        counts.fp += (p.len() - pairs.len()) as u64;
        for (gid, _) in &g {
            *track_len.entry(*gid).or_default() += 1;
        }
        let mut current = BTreeMap::new();
        for &(r, c) in &pairs {
            let (gid, pid) = (g[r].0, p[c].0);
            if last_match.get(&gid).is_some_and(|&last| last != pid) {
                counts.idsw += 1;
            }
            last_match.insert(gid, pid);
            *track_hits.entry(gid).or_default() += 1;
            current.insert(gid, pid);
        }
        prev = current;
    }

    counts.gt_tracks = track_len.len() as u64;
    for (gid, len) in &track_len {
        let ratio = track_hits.get(gid).copied().unwrap_or(0) as f64 / *len as f64;
        if ratio >= 0.8 {
            counts.mt += 1;
        } else if ratio <= 0.2 {
            counts.ml += 1;
        }
    }
    Ok(counts)
}

/// Identity-level true positives under the best one-to-one GT/prediction id
/// assignment, with the totals used as the IDF1 denominator.
pub fn compute_idtp(gt: &[GtEntry], pred: &[PredEntry], iou_threshold: f64) -> Result<(u64, u64, u64)> {
    let frames = group(gt, pred, iou_threshold)?;
    let mut co: BTreeMap<(i64, i64), u64> = BTreeMap::new();
    let mut gt_ids = BTreeSet::new();
    let mut pred_ids = BTreeSet::new();
    let (mut total_gt, mut total_pred) = (0u64, 0u64);
    for fd in frames.values() {
        total_gt += fd.gt.len() as u64;
        total_pred += fd.pred.len() as u64;
        gt_ids.extend(fd.gt.iter().map(|g| g.id));
        pred_ids.extend(fd.pred.iter().map(|p| p.id));
        for g in &fd.gt {
            for p in &fd.pred {
                let iou = box_iou(&g.bbox, &p.bbox);
                if iou >= iou_threshold && iou > 0.0 {
                    *co.entry((g.id, p.id)).or_default() += 1;
                }
            }
        }
    }
    let gt_ids: Vec<i64> = gt_ids.into_iter().collect();
    let pred_ids: Vec<i64> = pred_ids.into_iter().collect();
    let count = |r: usize, c: usize| co.get(&(gt_ids[r], pred_ids[c])).copied().unwrap_or(0);
    let max = co.values().copied().max().unwrap_or(0) as f64;
    let cost = CostMatrix::from_fn(gt_ids.len(), pred_ids.len(), |r, c| max - count(r, c) as f64)
        .expect("counts are finite");
    let idtp = solve_assignment(&cost).into_iter().map(|(r, c)| count(r, c)).sum();
    Ok((idtp, total_gt, total_pred))
}

pub fn compute_idf1(gt: &[GtEntry], pred: &[PredEntry], iou_threshold: f64) -> Result<f64> {
    let (idtp, total_gt, total_pred) = compute_idtp(gt, pred, iou_threshold)?;
    Ok(idf1_from_counts(idtp, total_gt, total_pred))
}

pub fn idf1_from_counts(idtp: u64, total_gt: u64, total_pred: u64) -> f64 {
    if total_gt + total_pred == 0 {
        return 0.0;
    }
    2.0 * idtp as f64 / (total_gt + total_pred) as f64
}

pub fn evaluate(gt: &[GtEntry], pred: &[PredEntry], iou_threshold: f64) -> Result<EvalReport> {
    if !(0.0..=1.0).contains(&iou_threshold) {
        return Err(Error::invalid(format!("IoU threshold {iou_threshold} outside [0, 1]")));
    }
    let clear = compute_clear(gt, pred, iou_threshold)?;
    let (idtp, total_gt, total_pred) = compute_idtp(gt, pred, iou_threshold)?;
    Ok(EvalReport {
        iou_threshold,
        mota: clear.mota(),
        idf1: idf1_from_counts(idtp, total_gt, total_pred),
        idsw: clear.idsw,
        fp: clear.fp,
        fn_: clear.fn_,
        tp: clear.tp,
        mt: clear.mt,
        ml: clear.ml,
        total_gt: clear.total_gt,
        total_pred: clear.total_pred,
        idtp,
        gt_tracks: clear.gt_tracks,
    })
}
