//! Minimum-cost bipartite assignment and IoU-gated box association.

use crate::error::{Error, Result};
use crate::mask::{box_iou, BBox};

/// Dense row-major cost matrix with finite, non-negative entries.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl CostMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::DimensionMismatch { expected: rows * cols, actual: values.len() });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidCost { row: i / cols.max(1), col: i % cols.max(1) });
        }
        Ok(Self { rows, cols, values })
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let values = (0..rows).flat_map(|r| (0..cols).map(move |c| (r, c))).map(|(r, c)| f(r, c));
        Self::new(rows, cols, values.collect())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols + col]
    }

    /// Sum of the selected entries, accumulated in the order given.
    pub fn total(&self, pairs: &[(usize, usize)]) -> f64 {
        pairs.iter().map(|&(r, c)| self.get(r, c)).sum()
    }
}

/// Solves the rectangular assignment problem, returning `min(rows, cols)`
/// pairs sorted by row.
///
/// Shortest augmenting path with dual potentials, O(n²m). Rows are inserted
/// in index order and each Dijkstra sweep keeps the first column reaching the
/// minimum slack, so results are fully deterministic for a given matrix.
pub fn solve_assignment(cost: &CostMatrix) -> Vec<(usize, usize)> {
    if cost.rows == 0 || cost.cols == 0 {
        return Vec::new();
    }
    let transposed = cost.rows > cost.cols;
    let (n, m) = if transposed { (cost.cols, cost.rows) } else { (cost.rows, cost.cols) };
    let at = |i: usize, j: usize| if transposed { cost.get(j, i) } else { cost.get(i, j) };

    // 1-based with slot 0 as the virtual root column
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];

    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0usize;
        let mut min_slack = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let reduced = at(i0 - 1, j - 1) - u[i0] - v[j];
                if reduced < min_slack[j] {
                    min_slack[j] = reduced;
                    way[j] = j0;
                }
                if min_slack[j] < delta {
                    delta = min_slack[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    min_slack[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut pairs: Vec<(usize, usize)> = (1..=m)
        .filter(|&j| owner[j] != 0)
        .map(|j| {
            let (i, j) = (owner[j] - 1, j - 1);
            if transposed {
                (j, i)
            } else {
                (i, j)
            }
        })
        .collect();
    pairs.sort_unstable();
    pairs
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MatchResult {
    /// `(track index, detection index)`, sorted by track index.
    pub matches: Vec<(usize, usize)>,
    pub unmatched_tracks: Vec<usize>,
    pub unmatched_detections: Vec<usize>,
}

impl MatchResult {
    pub fn detection_for(&self, track: usize) -> Option<usize> {
        self.matches.iter().find(|(t, _)| *t == track).map(|&(_, d)| d)
    }
}

/// Associates boxes with cost `1 - IoU`; optimal pairs whose IoU falls
/// below `iou_gate` are split back into the unmatched sets.
pub fn gated_match(track_boxes: &[BBox], det_boxes: &[BBox], iou_gate: f64) -> MatchResult {
    let ious: Vec<Vec<f64>> = track_boxes
        .iter()
        .map(|t| det_boxes.iter().map(|d| box_iou(t, d)).collect())
        .collect();
    let cost = CostMatrix::from_fn(track_boxes.len(), det_boxes.len(), |r, c| 1.0 - ious[r][c])
        .expect("1 - IoU is finite and non-negative");

    let mut track_used = vec![false; track_boxes.len()];
    let mut det_used = vec![false; det_boxes.len()];
    let mut matches = Vec::new();
    for (t, d) in solve_assignment(&cost) {
        // IoU 0 pairs are never associations, whatever the gate
        if ious[t][d] >= iou_gate && ious[t][d] > 0.0 {
            track_used[t] = true;
            det_used[d] = true;
            matches.push((t, d));
        }
    }
    MatchResult {
        matches,
        unmatched_tracks: (0..track_boxes.len()).filter(|&t| !track_used[t]).collect(),
        unmatched_detections: (0..det_boxes.len()).filter(|&d| !det_used[d]).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(x: u32, y: u32, w: u32, h: u32) -> BBox {
        BBox::new(x, y, w, h).unwrap()
    }

    #[test]
    fn zero_diagonal() {
        let c = CostMatrix::new(2, 2, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let p = solve_assignment(&c);
        assert_eq!(p, vec![(0, 0), (1, 1)]);
        assert_eq!(c.total(&p), 0.0);
    }

    #[test]
    fn anti_diagonal() {
        let c = CostMatrix::new(2, 2, vec![0.9, 0.1, 0.2, 0.8]).unwrap();
        let p = solve_assignment(&c);
        assert_eq!(p, vec![(0, 1), (1, 0)]);
        assert_eq!(c.total(&p), 0.1 + 0.2);
    }

    #[test]
    fn rectangular_sizes() {
        let wide = CostMatrix::from_fn(2, 5, |r, c| ((r * 7 + c * 3) % 5) as f64).unwrap();
        assert_eq!(solve_assignment(&wide).len(), 2);
        let tall = CostMatrix::from_fn(5, 2, |r, c| ((r * 7 + c * 3) % 5) as f64).unwrap();
        assert_eq!(solve_assignment(&tall).len(), 2);
        let empty = CostMatrix::new(0, 3, vec![]).unwrap();
        assert!(solve_assignment(&empty).is_empty());
    }

    #[test]
    fn rejects_bad_costs() {
        assert!(matches!(
            CostMatrix::new(1, 2, vec![0.0, f64::NAN]),
            Err(Error::InvalidCost { row: 0, col: 1 })
        ));
        assert!(CostMatrix::new(1, 1, vec![f64::INFINITY]).is_err());
        assert!(CostMatrix::new(1, 1, vec![-1.0]).is_err());
        assert!(CostMatrix::new(2, 2, vec![0.0]).is_err());
    }

    #[test]
    fn gated_match_identity() {
        let boxes = vec![b(0, 0, 10, 10), b(20, 0, 10, 10), b(40, 0, 10, 10)];
        let m = gated_match(&boxes, &boxes, 0.3);
        assert_eq!(m.matches, vec![(0, 0), (1, 1), (2, 2)]);
        assert!(m.unmatched_tracks.is_empty() && m.unmatched_detections.is_empty());
    }

    #[test]
    fn gated_match_disjoint() {
        let tracks = vec![b(0, 0, 10, 10), b(20, 0, 10, 10)];
        let dets = vec![b(50, 50, 5, 5)];
        let m = gated_match(&tracks, &dets, 0.0);
        assert!(m.matches.is_empty());
        assert_eq!(m.unmatched_tracks, vec![0, 1]);
        assert_eq!(m.unmatched_detections, vec![0]);
    }

    #[test]
    fn gate_demotes_weak_pairs() {
        let tracks = vec![b(0, 0, 10, 10)];
        let dets = vec![b(8, 0, 10, 10)];
        // IoU = 20 / 180
        let m = gated_match(&tracks, &dets, 0.3);
        assert!(m.matches.is_empty());
        let m = gated_match(&tracks, &dets, 0.1);
        assert_eq!(m.matches, vec![(0, 0)]);
    }
}
