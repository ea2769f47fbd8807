//! Brute-force reference implementations shared by the integration tests and
//! the acceptance suite. Everything here works on plain bitmaps, explicit
//! permutations and direct loops, independent of the library's algorithms.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random bitmap mixing pixel noise and solid rectangles so that both long
/// and short runs appear.
pub fn random_bitmap(rng: &mut ChaCha8Rng, w: usize, h: usize) -> Vec<bool> {
    let mut bits = vec![false; w * h];
    match rng.random_range(0..4) {
        0 => {}
        1 => {
            let p: f64 = rng.random();
            bits.iter_mut().for_each(|b| *b = rng.random_bool(p));
        }
        _ => {
            for _ in 0..rng.random_range(1..5) {
                let (x0, y0) = (rng.random_range(0..w), rng.random_range(0..h));
                let (x1, y1) = (rng.random_range(x0..w), rng.random_range(y0..h));
                for y in y0..=y1 {
                    for x in x0..=x1 {
                        bits[y * w + x] = true;
                    }
                }
            }
            if rng.random_bool(0.3) {
                for _ in 0..rng.random_range(0..10) {
                    let i = rng.random_range(0..w * h);
                    bits[i] = !bits[i];
                }
            }
        }
    }
    bits
}

pub fn count(bits: &[bool]) -> u64 {
    bits.iter().filter(|&&b| b).count() as u64
}

pub fn bitmap_iou(a: &[bool], b: &[bool]) -> f64 {
    let inter = a.iter().zip(b).filter(|(x, y)| **x && **y).count();
    let union = a.iter().zip(b).filter(|(x, y)| **x || **y).count();
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

pub fn bitmap_untracked(masks: &[Vec<bool>], pixels: usize) -> Vec<bool> {
    (0..pixels).map(|i| !masks.iter().any(|m| m[i])).collect()
}

/// Box given as `(x, y, w, h)` in pixels, clamped to the grid before counting.
pub fn bitmap_box_overlap(bx: (i64, i64, i64, i64), region: &[bool], w: usize, h: usize) -> Option<f64> {
    let (mut inside, mut covered) = (0u64, 0u64);
    for y in bx.1.max(0)..(bx.1 + bx.3).min(h as i64) {
        for x in bx.0.max(0)..(bx.0 + bx.2).min(w as i64) {
            inside += 1;
            if region[y as usize * w + x as usize] {
                covered += 1;
            }
        }
    }
    (inside > 0).then(|| covered as f64 / inside as f64)
}

/// Tight `(x, y, w, h)` of set pixels.
pub fn bitmap_bbox(bits: &[bool], w: usize) -> Option<(u32, u32, u32, u32)> {
    let set: Vec<(usize, usize)> =
        bits.iter().enumerate().filter(|(_, b)| **b).map(|(i, _)| (i % w, i / w)).collect();
    let x0 = set.iter().map(|p| p.0).min()?;
    let x1 = set.iter().map(|p| p.0).max()?;
    let y0 = set.iter().map(|p| p.1).min()?;
    let y1 = set.iter().map(|p| p.1).max()?;
    Some((x0 as u32, y0 as u32, (x1 - x0 + 1) as u32, (y1 - y0 + 1) as u32))
}

pub fn rect_bitmap(bx: (u32, u32, u32, u32), w: usize, h: usize) -> Vec<bool> {
    let mut bits = vec![false; w * h];
    for y in bx.1 as usize..(bx.1 + bx.3) as usize {
        for x in bx.0 as usize..(bx.0 + bx.2) as usize {
            bits[y * w + x] = true;
        }
    }
    bits
}

/// Every injective map from `0..k` into `0..n`.
pub fn injections(k: usize, n: usize) -> Vec<Vec<usize>> {
    fn rec(k: usize, n: usize, used: &mut Vec<bool>, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for j in 0..n {
            if !used[j] {
                used[j] = true;
                cur.push(j);
                rec(k, n, used, cur, out);
                cur.pop();
                used[j] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(k, n, &mut vec![false; n], &mut Vec::new(), &mut out);
    out
}

/// Minimum total over all assignments covering the smaller side, each total
/// summed in row order.
pub fn brute_min_assignment(m: &[Vec<f64>]) -> f64 {
    let rows = m.len();
    let cols = m.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 {
        return 0.0;
    }
    if rows <= cols {
        injections(rows, cols)
            .iter()
            .map(|p| p.iter().enumerate().map(|(r, &c)| m[r][c]).sum::<f64>())
            .fold(f64::INFINITY, f64::min)
    } else {
        injections(cols, rows)
            .iter()
            .map(|p| {
                let mut pairs: Vec<(usize, usize)> = p.iter().enumerate().map(|(c, &r)| (r, c)).collect();
                pairs.sort_unstable();
                pairs.iter().map(|&(r, c)| m[r][c]).sum::<f64>()
            })
            .fold(f64::INFINITY, f64::min)
    }
}

/// Population variance of the last `window` samples by explicit two-pass sums.
pub fn direct_variance(history: &[f64], window: usize) -> f64 {
    let tail = &history[history.len().saturating_sub(window)..];
    let n = tail.len() as f64;
    let mean = tail.iter().sum::<f64>() / n;
    tail.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n
}

/// Toy tracking row: `(frame, id, (x, y, w, h))`.
pub type ToyRow = (u32, i64, (u32, u32, u32, u32));

pub fn toy_iou(a: (u32, u32, u32, u32), b: (u32, u32, u32, u32)) -> f64 {
    let ix = (a.0 + a.2).min(b.0 + b.2).saturating_sub(a.0.max(b.0)) as f64;
    let iy = (a.1 + a.3).min(b.1 + b.3).saturating_sub(a.1.max(b.1)) as f64;
    let inter = ix * iy;
    let union = (a.2 * a.3) as f64 + (b.2 * b.3) as f64 - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// IDF1 by enumerating every partial one-to-one map between GT ids and
/// predicted ids.
pub fn brute_idf1(gt: &[ToyRow], pred: &[ToyRow], thr: f64) -> f64 {
    let gt_ids: Vec<i64> = gt.iter().map(|r| r.1).collect::<BTreeSet<_>>().into_iter().collect();
    let pred_ids: Vec<i64> = pred.iter().map(|r| r.1).collect::<BTreeSet<_>>().into_iter().collect();
    let mut co: BTreeMap<(i64, i64), u64> = BTreeMap::new();
    for g in gt {
        for p in pred.iter().filter(|p| p.0 == g.0) {
            let iou = toy_iou(g.2, p.2);
            if iou >= thr && iou > 0.0 {
                *co.entry((g.1, p.1)).or_default() += 1;
            }
        }
    }
    let denom = (gt.len() + pred.len()) as f64;
    if denom == 0.0 {
        return 0.0;
    }
    fn best(r: usize, gt_ids: &[i64], pred_ids: &[i64], used: &mut [bool], co: &BTreeMap<(i64, i64), u64>) -> u64 {
        if r == gt_ids.len() {
            return 0;
        }
        let mut top = best(r + 1, gt_ids, pred_ids, used, co);
        for c in 0..pred_ids.len() {
            if !used[c] {
                used[c] = true;
                let here = co.get(&(gt_ids[r], pred_ids[c])).copied().unwrap_or(0);
                top = top.max(here + best(r + 1, gt_ids, pred_ids, used, co));
                used[c] = false;
            }
        }
        top
    }
    let best = best(0, &gt_ids, &pred_ids, &mut vec![false; pred_ids.len()], &co);
    2.0 * best as f64 / denom
}

/// Random ground truth plus a noisy tracker output over it: relabelled ids
/// that sometimes switch mid-sequence, box jitter, misses and clutter. At
/// most `max_ids` ids on each side.
pub fn random_toy_pair(rng: &mut ChaCha8Rng, max_ids: i64, frames: u32) -> (Vec<ToyRow>, Vec<ToyRow>) {
    let gt_count = rng.random_range(0..=max_ids);
    let mut gt = Vec::new();
    let mut pred = Vec::new();
    let mut label: Vec<i64> = (0..gt_count).map(|_| rng.random_range(1..=max_ids)).collect();
    for f in 1..=frames {
        let mut used = BTreeSet::new();
        for id in 1..=gt_count {
            if !rng.random_bool(0.8) {
                continue;
            }
            let bx = (rng.random_range(0..30), rng.random_range(0..30), rng.random_range(4..12), rng.random_range(4..12));
            gt.push((f, id, bx));
            if rng.random_bool(0.1) {
                label[(id - 1) as usize] = rng.random_range(1..=max_ids);
            }
            let pid = label[(id - 1) as usize];
            if rng.random_bool(0.8) && used.insert(pid) {
                let j = |v: u32, r: &mut ChaCha8Rng| v + r.random_range(0..3);
                pred.push((f, pid, (j(bx.0, rng), j(bx.1, rng), j(bx.2, rng), j(bx.3, rng))));
            }
        }
        if rng.random_bool(0.2) {
            let pid = rng.random_range(1..=max_ids.max(1));
            if used.insert(pid) {
                pred.push((f, pid, (rng.random_range(0..30), rng.random_range(0..30), 5, 5)));
            }
        }
    }
    (gt, pred)
}

pub fn toy_gt(rows: &[ToyRow]) -> Vec<segtrack_core::metrics::GtEntry> {
    rows.iter()
        .map(|&(frame, id, b)| segtrack_core::metrics::GtEntry {
            frame,
            id,
            bbox: segtrack_core::mask::BBox::new(b.0, b.1, b.2, b.3).unwrap(),
            class_id: 0,
            ignore: false,
        })
        .collect()
}

pub fn toy_pred(rows: &[ToyRow]) -> Vec<segtrack_core::metrics::PredEntry> {
    rows.iter()
        .map(|&(frame, id, b)| segtrack_core::metrics::PredEntry {
            frame,
            id,
            bbox: segtrack_core::mask::BBox::new(b.0, b.1, b.2, b.3).unwrap(),
            class_id: 0,
        })
        .collect()
}
