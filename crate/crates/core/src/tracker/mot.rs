//! MOT Challenge text format: `frame,id,left,top,width,height,score,-1,-1,-1`.
//!
//! Frame numbers in the files are 1-based; `frame_index` values in the
//! pipeline are 0-based, so `frame = frame_index + 1`.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use super::{hungarian, TrackerError};
use crate::model::{iou, BoundingBox};

#[derive(Debug, Clone, PartialEq)]
pub struct MotRow {
    pub frame_index: u64,
    pub id: i64,
    pub bbox: BoundingBox,
    pub score: f64,
}

pub fn write_rows<W: Write>(mut out: W, rows: &[MotRow]) -> std::io::Result<()> {
    for r in rows {
        writeln!(
            out,
            "{},{},{:.3},{:.3},{:.3},{:.3},{:.4},-1,-1,-1",
            r.frame_index + 1,
            r.id,
            r.bbox.x_min,
            r.bbox.y_min,
            r.bbox.width(),
            r.bbox.height(),
            r.score
        )?;
    }
    Ok(())
}

pub fn read_rows<R: BufRead>(input: R) -> Result<Vec<MotRow>, TrackerError> {
    let mut rows = Vec::new();
    for (n, line) in input.lines().enumerate() {
        let line = line.map_err(|e| TrackerError::Mot { line: n + 1, reason: e.to_string() })?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |reason: &str| TrackerError::Mot { line: n + 1, reason: reason.to_string() };
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        if cols.len() < 6 {
            return Err(bad("expected at least 6 columns"));
        }
        let num = |i: usize| cols[i].parse::<f64>().map_err(|_| bad("non-numeric column"));
        let frame = num(0)?;
        if frame < 1.0 {
            return Err(bad("frame numbers start at 1"));
        }
        let bbox = BoundingBox::from_xywh(num(2)?, num(3)?, num(4)?, num(5)?).map_err(|e| bad(&e.to_string()))?;
        let score = if cols.len() > 6 { num(6)? } else { 1.0 };
        rows.push(MotRow { frame_index: frame as u64 - 1, id: num(1)? as i64, bbox, score });
    }
    Ok(rows)
}

/// CLEAR-MOT counts of a hypothesis against ground truth.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MotMetrics {
    pub gt_detections: u64,
    pub matches: u64,
    pub misses: u64,
    pub false_positives: u64,
    pub id_switches: u64,
}

impl MotMetrics {
    /// `1 - (misses + false positives + ID switches) / ground-truth detections`.
    pub fn mota(&self) -> f64 {
        if self.gt_detections == 0 {
            return 1.0;
        }
        1.0 - (self.misses + self.false_positives + self.id_switches) as f64 / self.gt_detections as f64
    }
}

fn by_frame(rows: &[MotRow]) -> BTreeMap<u64, Vec<&MotRow>> {
    let mut m: BTreeMap<u64, Vec<&MotRow>> = BTreeMap::new();
    for r in rows {
        m.entry(r.frame_index).or_default().push(r);
    }
    m
}

/// Frame-by-frame CLEAR-MOT matching at IoU >= `min_iou`. Pairs matched in
/// the previous frame are kept while they still overlap enough; the rest
/// are assigned by minimum total `1 - IoU`. A ground-truth object matched
/// to a different hypothesis ID than last time counts one ID switch.
pub fn evaluate(gt: &[MotRow], hyp: &[MotRow], min_iou: f64) -> MotMetrics {
    let gt_frames = by_frame(gt);
    let hyp_frames = by_frame(hyp);
    let mut frames: Vec<u64> = gt_frames.keys().chain(hyp_frames.keys()).copied().collect();
    frames.sort_unstable();
    frames.dedup();

    let mut last_match: BTreeMap<i64, i64> = BTreeMap::new();
    let mut m = MotMetrics::default();
    let empty = Vec::new();
    for f in frames {
        let g = gt_frames.get(&f).unwrap_or(&empty);
        let h = hyp_frames.get(&f).unwrap_or(&empty);
        m.gt_detections += g.len() as u64;
        let mut g_used = vec![false; g.len()];
        let mut h_used = vec![false; h.len()];
        let mut pairs: Vec<(usize, usize)> = Vec::new();

        for (gi, gr) in g.iter().enumerate() {
            let Some(&hid) = last_match.get(&gr.id) else { continue };
            if let Some(hi) = h.iter().position(|hr| hr.id == hid) {
                if !h_used[hi] && iou(&gr.bbox, &h[hi].bbox) >= min_iou {
                    g_used[gi] = true;
                    h_used[hi] = true;
                    pairs.push((gi, hi));
                }
            }
        }
        let free_g: Vec<usize> = (0..g.len()).filter(|&i| !g_used[i]).collect();
        let free_h: Vec<usize> = (0..h.len()).filter(|&i| !h_used[i]).collect();
        if !free_g.is_empty() && !free_h.is_empty() {
            let cost: Vec<Vec<f64>> = free_g
                .iter()
                .map(|&gi| {
                    free_h
                        .iter()
                        .map(|&hi| {
                            let o = iou(&g[gi].bbox, &h[hi].bbox);
                            if o >= min_iou {
                                1.0 - o
                            } else {
                                2.0
                            }
                        })
                        .collect()
                })
                .collect();
            for (r, c) in hungarian::solve(&cost).into_iter().enumerate() {
                let Some(c) = c else { continue };
                if cost[r][c] <= 1.0 {
                    let (gi, hi) = (free_g[r], free_h[c]);
                    if last_match.get(&g[gi].id).is_some_and(|&prev| prev != h[hi].id) {
                        m.id_switches += 1;
                    }
                    pairs.push((gi, hi));
                }
            }
        }
        for &(gi, hi) in &pairs {
            last_match.insert(g[gi].id, h[hi].id);
        }
        m.matches += pairs.len() as u64;
        m.misses += (g.len() - pairs.len()) as u64;
        m.false_positives += (h.len() - pairs.len()) as u64;
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(f: u64, id: i64, x: f64) -> MotRow {
        MotRow { frame_index: f, id, bbox: BoundingBox::from_xywh(x, 0.0, 10.0, 20.0).unwrap(), score: 1.0 }
    }

    #[test]
    fn perfect_hypothesis_scores_one() {
        let gt: Vec<MotRow> = (0..10).flat_map(|f| [row(f, 1, 0.0), row(f, 2, 100.0)]).collect();
        let hyp: Vec<MotRow> = gt.iter().map(|r| MotRow { id: r.id + 10, ..r.clone() }).collect();
        let m = evaluate(&gt, &hyp, 0.5);
        assert_eq!(m, MotMetrics { gt_detections: 20, matches: 20, misses: 0, false_positives: 0, id_switches: 0 });
        assert_eq!(m.mota(), 1.0);
    }

    #[test]
    fn counts_switches_misses_and_false_positives() {
        let gt: Vec<MotRow> = (0..4).map(|f| row(f, 1, 0.0)).collect();
        // id 5 for two frames, nothing in frame 2, id 6 in frame 3, plus a stray box
        let hyp = vec![row(0, 5, 0.0), row(1, 5, 0.0), row(3, 6, 0.0), row(3, 7, 300.0)];
        let m = evaluate(&gt, &hyp, 0.5);
        assert_eq!(m, MotMetrics { gt_detections: 4, matches: 3, misses: 1, false_positives: 1, id_switches: 1 });
        assert!((m.mota() - (1.0 - 3.0 / 4.0)).abs() < 1e-12);
    }

    #[test]
    fn write_then_read() {
        let rows = vec![
            MotRow { frame_index: 0, id: 3, bbox: BoundingBox::from_xywh(1.5, 2.0, 40.0, 90.0).unwrap(), score: 0.9 },
            MotRow { frame_index: 7, id: -1, bbox: BoundingBox::from_xywh(0.0, 0.0, 1.0, 1.0).unwrap(), score: 1.0 },
        ];
        let mut buf = Vec::new();
        write_rows(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("1,3,1.500,2.000,40.000,90.000,0.9000,-1,-1,-1\n"));
        assert_eq!(read_rows(&buf[..]).unwrap(), rows);
    }

    #[test]
    fn rejects_short_lines() {
        assert!(read_rows("1,2,3\n".as_bytes()).is_err());
        assert!(read_rows("0,1,0,0,1,1\n".as_bytes()).is_err());
    }
}
