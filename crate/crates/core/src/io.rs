//! MOTChallenge-style CSV rows: `frame,id,x,y,w,h,conf,class,vis`.
//!
//! Frames are 1-based and rows must be sorted by frame. Detection files use
//! id `-1`. In ground-truth files a `conf` of 0 marks an ignore region. In
//! result files `conf` carries the track's latest logits (`-1` before the
//! first propagation).

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use crate::engine::FrameResult;
use crate::error::{Error, Result};
use crate::mask::{BBox, ImageGrid};
use crate::metrics::{GtEntry, PredEntry};
use crate::trajectory::Detection;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotRow {
    pub frame: u32,
    pub id: i64,
    pub x: i64,
    pub y: i64,
    pub w: i64,
    pub h: i64,
    pub conf: f64,
    pub class: i32,
    pub vis: f64,
}

impl MotRow {
    fn bbox(&self, grid: Option<ImageGrid>, line: usize) -> Result<Option<BBox>> {
        let err = |message: String| Error::Parse { line, message };
        match grid {
            Some(g) => Ok(BBox::clipped(self.x, self.y, self.w, self.h, g)),
            None => {
                let conv = |v: i64, name: &str| {
                    u32::try_from(v).map_err(|_| err(format!("{name} = {v} out of range")))
                };
                let b = BBox::new(conv(self.x, "x")?, conv(self.y, "y")?, conv(self.w, "w")?, conv(self.h, "h")?)
                    .map_err(|e| err(e.to_string()))?;
                Ok(Some(b))
            }
        }
    }
}

/// Parses rows, reporting 1-based line numbers on failure.
pub fn parse_rows(reader: impl Read) -> Result<Vec<(usize, MotRow)>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut rows: Vec<(usize, MotRow)> = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let fallback_line = i + 1;
        let record = record.map_err(|e| Error::Parse { line: fallback_line, message: e.to_string() })?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(fallback_line);
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        if record.len() != 9 {
            return Err(Error::Parse {
                line,
                message: format!("expected 9 fields, found {}", record.len()),
            });
        }
        fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, name: &str, line: usize) -> Result<T>
        where
            T::Err: std::fmt::Display,
        {
            rec[i].parse::<T>().map_err(|e| Error::Parse {
                line,
                message: format!("{name} {:?}: {e}", &rec[i]),
            })
        }
        let row = MotRow {
            frame: field(&record, 0, "frame", line)?,
            id: field(&record, 1, "id", line)?,
            x: field(&record, 2, "x", line)?,
            y: field(&record, 3, "y", line)?,
            w: field(&record, 4, "w", line)?,
            h: field(&record, 5, "h", line)?,
            conf: field(&record, 6, "conf", line)?,
            class: field(&record, 7, "class", line)?,
            vis: field(&record, 8, "vis", line)?,
        };
        if row.frame == 0 {
            return Err(Error::Parse { line, message: "frames are 1-based".into() });
        }
        if let Some((_, last)) = rows.last() {
            if row.frame < last.frame {
                return Err(Error::Parse {
                    line,
                    message: format!("frame {} after frame {}", row.frame, last.frame),
                });
            }
        }
        rows.push((line, row));
    }
    Ok(rows)
}

pub fn render_rows<'a>(rows: impl IntoIterator<Item = &'a MotRow>) -> String {
    let mut out = String::new();
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.frame, r.id, r.x, r.y, r.w, r.h, r.conf, r.class, r.vis
        ));
    }
    out
}

fn read_file(path: &Path) -> Result<std::fs::File> {
    std::fs::File::open(path).map_err(|e| {
        Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
    })
}

/// Per-frame detection streams, file order preserved within a frame. Boxes
/// are clipped to `grid` when one is given; rows falling entirely outside
/// are dropped.
pub fn parse_detections(
    reader: impl Read,
    grid: Option<ImageGrid>,
) -> Result<BTreeMap<u32, Vec<Detection>>> {
    let mut out: BTreeMap<u32, Vec<Detection>> = BTreeMap::new();
    for (line, row) in parse_rows(reader)? {
        let Some(bbox) = row.bbox(grid, line)? else { continue };
        let det = Detection::new(bbox, row.conf, row.class)
            .map_err(|e| Error::Parse { line, message: e.to_string() })?;
        out.entry(row.frame).or_default().push(det);
    }
    Ok(out)
}

pub fn read_detections(path: &Path, grid: Option<ImageGrid>) -> Result<BTreeMap<u32, Vec<Detection>>> {
    parse_detections(read_file(path)?, grid)
}

pub fn parse_ground_truth(reader: impl Read) -> Result<Vec<GtEntry>> {
    parse_rows(reader)?
        .into_iter()
        .map(|(line, r)| {
            Ok(GtEntry {
                frame: r.frame,
                id: r.id,
                bbox: r.bbox(None, line)?.expect("unclipped boxes are present"),
                class_id: r.class,
                ignore: r.conf == 0.0,
            })
        })
        .collect()
}

pub fn read_ground_truth(path: &Path) -> Result<Vec<GtEntry>> {
    parse_ground_truth(read_file(path)?)
}

pub fn parse_predictions(reader: impl Read) -> Result<Vec<PredEntry>> {
    parse_rows(reader)?
        .into_iter()
        .map(|(line, r)| {
            Ok(PredEntry {
                frame: r.frame,
                id: r.id,
                bbox: r.bbox(None, line)?.expect("unclipped boxes are present"),
                class_id: r.class,
            })
        })
        .collect()
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredEntry>> {
    parse_predictions(read_file(path)?)
}

fn box_row(frame: u32, id: i64, b: &BBox, conf: f64, class: i32, vis: f64) -> MotRow {
    MotRow {
        frame,
        id,
        x: i64::from(b.x),
        y: i64::from(b.y),
        w: i64::from(b.w),
        h: i64::from(b.h),
        conf,
        class,
        vis,
    }
}

pub fn result_rows(results: &[FrameResult]) -> Vec<MotRow> {
    results
        .iter()
        .flat_map(|fr| {
            fr.records.iter().map(move |r| {
                box_row(fr.frame, r.id as i64, &r.bbox, r.logits.unwrap_or(-1.0), r.class_id, -1.0)
            })
        })
        .collect()
}

pub fn detection_rows(stream: &BTreeMap<u32, Vec<Detection>>) -> Vec<MotRow> {
    stream
        .iter()
        .flat_map(|(&f, dets)| dets.iter().map(move |d| box_row(f, -1, &d.bbox, d.confidence, d.class_id, -1.0)))
        .collect()
}

pub fn ground_truth_rows(gt: &[GtEntry], visibility: impl Fn(&GtEntry) -> f64) -> Vec<MotRow> {
    gt.iter()
        .map(|g| box_row(g.frame, g.id, &g.bbox, if g.ignore { 0.0 } else { 1.0 }, g.class_id, visibility(g)))
        .collect()
}

pub fn predictions_from_results(results: &[FrameResult]) -> Vec<PredEntry> {
    results
        .iter()
        .flat_map(|fr| {
            fr.records.iter().map(move |r| PredEntry {
                frame: fr.frame,
                id: r.id as i64,
                bbox: r.bbox,
                class_id: r.class_id,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file() {
        assert!(parse_detections("".as_bytes(), None).unwrap().is_empty());
    }

    #[test]
    fn one_row() {
        let d = parse_detections("3,-1,10,20,5,6,0.9,1,-1\n".as_bytes(), None).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d[&3], vec![Detection::new(BBox::new(10, 20, 5, 6).unwrap(), 0.9, 1).unwrap()]);
    }

    #[test]
    fn bad_conf_names_line() {
        let err = parse_detections("1,-1,0,0,5,5,abc,0,-1\n".as_bytes(), None).unwrap_err();
        match err {
            Error::Parse { line, message } => {
                assert_eq!(line, 1);
                assert!(message.contains("conf"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn frames_must_not_decrease() {
        let text = "2,-1,0,0,5,5,0.9,0,-1\n1,-1,0,0,5,5,0.9,0,-1\n";
        assert!(matches!(parse_detections(text.as_bytes(), None), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn wrong_field_count() {
        assert!(matches!(parse_rows("1,2,3\n".as_bytes()), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn out_of_range_conf_rejected() {
        assert!(parse_detections("1,-1,0,0,5,5,1.5,0,-1\n".as_bytes(), None).is_err());
    }

    #[test]
    fn clipping_to_grid() {
        let g = ImageGrid::new(20, 20).unwrap();
        let text = "1,-1,-4,2,10,5,0.9,0,-1\n1,-1,40,40,5,5,0.9,0,-1\n";
        let d = parse_detections(text.as_bytes(), Some(g)).unwrap();
        assert_eq!(d[&1].len(), 1);
        assert_eq!(d[&1][0].bbox, BBox::new(0, 2, 6, 5).unwrap());
        assert!(parse_detections(text.as_bytes(), None).is_err());
    }

    #[test]
    fn ground_truth_ignore_flag() {
        let gt = parse_ground_truth("1,4,0,0,5,5,0,0,1\n1,5,0,0,5,5,1,0,0.5\n".as_bytes()).unwrap();
        assert!(gt[0].ignore);
        assert!(!gt[1].ignore);
    }
}
