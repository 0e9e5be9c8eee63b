//! Box overlap metrics: per-frame IoU, mAP@0.5 and tube IoU.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dit::Direction;
use crate::geometry::{Box2D, BoxSequence};

pub const HIT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("sequence length mismatch: prediction {pred} vs ground truth {gt}")]
    LengthMismatch { pred: usize, gt: usize },
    #[error("cannot build a report from zero sequences")]
    Empty,
}

fn intersection(a: &Box2D, b: &Box2D) -> f64 {
    let w = (a.x1().min(b.x1()) - a.x0().max(b.x0())).max(0.0);
    let h = (a.y1().min(b.y1()) - a.y0().max(b.y0())).max(0.0);
    w * h
}

// same corner arithmetic as `intersection`, so a box overlaps itself exactly
fn extent_area(b: &Box2D) -> f64 {
    (b.x1() - b.x0()).max(0.0) * (b.y1() - b.y0()).max(0.0)
}

/// Intersection and union areas on raw (unclipped) coordinates.
pub fn overlap(a: &Box2D, b: &Box2D) -> (f64, f64) {
    let inter = intersection(a, b);
    (inter, extent_area(a) + extent_area(b) - inter)
}

/// Intersection over union; 0 when the union is empty.
pub fn iou(a: &Box2D, b: &Box2D) -> f64 {
    let (inter, union) = overlap(a, b);
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

fn check_len(pred: &BoxSequence, gt: &BoxSequence) -> Result<(), MetricsError> {
    if pred.len() != gt.len() {
        return Err(MetricsError::LengthMismatch {
            pred: pred.len(),
            gt: gt.len(),
        });
    }
    Ok(())
}

pub fn per_frame_iou(pred: &BoxSequence, gt: &BoxSequence) -> Result<Vec<f64>, MetricsError> {
    check_len(pred, gt)?;
    Ok(pred.iter().zip(gt.iter()).map(|(p, g)| iou(p, g)).collect())
}

pub fn mean_iou(pred: &BoxSequence, gt: &BoxSequence) -> Result<f64, MetricsError> {
    let v = per_frame_iou(pred, gt)?;
    Ok(if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 })
}

/// Fraction of frames with IoU ≥ 0.5. With one prediction per frame and no
/// confidence ranking, average precision reduces to this hit rate.
pub fn map50(pred: &BoxSequence, gt: &BoxSequence) -> Result<f64, MetricsError> {
    let v = per_frame_iou(pred, gt)?;
    if v.is_empty() {
        return Ok(0.0);
    }
    Ok(v.iter().filter(|&&x| x >= HIT_THRESHOLD).count() as f64 / v.len() as f64)
}

/// Σ intersection / Σ union over the whole sequence.
pub fn tube_iou(pred: &BoxSequence, gt: &BoxSequence) -> Result<f64, MetricsError> {
    check_len(pred, gt)?;
    let (mut inter, mut union) = (0.0, 0.0);
    for (p, g) in pred.iter().zip(gt.iter()) {
        let (i, u) = overlap(p, g);
        inter += i;
        union += u;
    }
    Ok(if union <= 0.0 { 0.0 } else { (inter / union).clamp(0.0, 1.0) })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceMetrics {
    pub id: String,
    pub mean_iou: f64,
    pub map50: f64,
    pub tube_iou: f64,
}

impl SequenceMetrics {
    pub fn compute(id: impl Into<String>, pred: &BoxSequence, gt: &BoxSequence) -> Result<Self, MetricsError> {
        Ok(Self {
            id: id.into(),
            mean_iou: mean_iou(pred, gt)?,
            map50: map50(pred, gt)?,
            tube_iou: tube_iou(pred, gt)?,
        })
    }
}

/// Metrics for one method over an evaluation split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub direction: Direction,
    pub count: usize,
    pub mean_iou: f64,
    pub map50: f64,
    pub tube_iou: f64,
    pub sequences: Vec<SequenceMetrics>,
}

impl EvalReport {
    pub fn from_sequences(
        method: impl Into<String>,
        direction: Direction,
        sequences: Vec<SequenceMetrics>,
    ) -> Result<Self, MetricsError> {
        if sequences.is_empty() {
            return Err(MetricsError::Empty);
        }
        let n = sequences.len() as f64;
        let avg = |f: fn(&SequenceMetrics) -> f64| sequences.iter().map(f).sum::<f64>() / n;
        Ok(Self {
            method: method.into(),
            direction,
            count: sequences.len(),
            mean_iou: avg(|s| s.mean_iou),
            map50: avg(|s| s.map50),
            tube_iou: avg(|s| s.tube_iou),
            sequences,
        })
    }

    /// Restricts the report to the listed sequence ids, recomputing means.
    pub fn subset(&self, keep: impl Fn(&str) -> bool) -> Result<Self, MetricsError> {
        let seqs = self.sequences.iter().filter(|s| keep(&s.id)).cloned().collect();
        Self::from_sequences(self.method.clone(), self.direction, seqs)
    }

    /// Per-sequence rows: `method,direction,id,mean_iou,map50,tube_iou`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,direction,id,mean_iou,map50,tube_iou\n");
        self.write_csv_rows(&mut out);
        out
    }

    fn write_csv_rows(&self, out: &mut String) {
        for s in &self.sequences {
            let _ = writeln!(
                out,
                "{},{},{},{:.6},{:.6},{:.6}",
                self.method, self.direction, s.id, s.mean_iou, s.map50, s.tube_iou
            );
        }
    }
}

/// Several methods evaluated on the same split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalComparison {
    pub direction: Direction,
    pub reports: Vec<EvalReport>,
}

impl EvalComparison {
    pub fn get(&self, method: &str) -> Option<&EvalReport> {
        self.reports.iter().find(|r| r.method == method)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,direction,id,mean_iou,map50,tube_iou\n");
        for r in &self.reports {
            r.write_csv_rows(&mut out);
        }
        out
    }

    /// Plain-text summary table, one row per method.
    pub fn table(&self) -> String {
        let d = self.direction;
        let width = self.reports.iter().map(|r| r.method.len()).max().unwrap_or(6).max(6);
        let mut out = format!(
            "{:<width$}  {:>8}  {:>8}  {:>9}  {:>5}\n",
            "method",
            format!("IoU_{d}"),
            format!("mAP_{d}"),
            "tube_IoU",
            "n"
        );
        for r in &self.reports {
            let _ = writeln!(
                out,
                "{:<width$}  {:>8.4}  {:>8.4}  {:>9.4}  {:>5}",
                r.method, r.mean_iou, r.map50, r.tube_iou, r.count
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corners(x0: f64, y0: f64, x1: f64, y1: f64) -> Box2D {
        Box2D::from_corners(x0, y0, x1, y1)
    }

    #[test]
    fn iou_examples() {
        let a = corners(0.0, 0.0, 2.0, 2.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &corners(3.0, 3.0, 4.0, 4.0)), 0.0);
        let b = corners(1.0, 0.0, 3.0, 2.0);
        assert!((iou(&a, &b) - 1.0 / 3.0).abs() < 1e-15);
        // touching edges do not overlap
        assert_eq!(iou(&a, &corners(2.0, 0.0, 3.0, 2.0)), 0.0);
        let empty = Box2D::new(0.5, 0.5, 0.0, 0.0);
        assert_eq!(iou(&empty, &empty), 0.0);
    }

    #[test]
    fn map50_examples() {
        let gt: BoxSequence = (0..6).map(|i| Box2D::new(i as f64, 0.0, 1.0, 1.0)).collect();
        assert_eq!(map50(&gt, &gt).unwrap(), 1.0);
        let half: BoxSequence = gt
            .iter()
            .enumerate()
            .map(|(i, b)| if i % 2 == 0 { *b } else { Box2D::new(b.cx + 5.0, 0.0, 1.0, 1.0) })
            .collect();
        assert_eq!(map50(&half, &gt).unwrap(), 0.5);
        let off: BoxSequence = gt.iter().map(|b| Box2D::new(b.cx, 10.0, 1.0, 1.0)).collect();
        assert_eq!(map50(&off, &gt).unwrap(), 0.0);
        // exactly at the threshold counts as a hit: IoU(a, shifted by 1/3 width) = 0.5
        let at = BoxSequence::new(vec![Box2D::new(1.0 / 3.0, 0.0, 1.0, 1.0)]);
        let g = BoxSequence::new(vec![Box2D::new(0.0, 0.0, 1.0, 1.0)]);
        assert!((iou(&at[0], &g[0]) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn tube_iou_examples() {
        let a = corners(0.0, 0.0, 2.0, 2.0);
        let b = corners(1.0, 0.0, 3.0, 2.0);
        let shift = |bx: Box2D, dx: f64| Box2D::new(bx.cx + dx, bx.cy, bx.w, bx.h);
        let pred: BoxSequence = (0..4).map(|i| shift(a, 10.0 * i as f64)).collect();
        let gt: BoxSequence = (0..4).map(|i| shift(b, 10.0 * i as f64)).collect();
        assert!((tube_iou(&pred, &gt).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(tube_iou(&gt, &gt).unwrap(), 1.0);
        // one perfect frame, one disjoint frame, equal unions
        let u = Box2D::new(0.0, 0.0, 1.0, 2.0);
        let p = BoxSequence::new(vec![u, Box2D::new(0.0, 0.0, 1.0, 1.0)]);
        let g = BoxSequence::new(vec![u, Box2D::new(5.0, 0.0, 1.0, 1.0)]);
        assert!((tube_iou(&p, &g).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn length_mismatch() {
        let a = BoxSequence::new(vec![Box2D::new(0.0, 0.0, 1.0, 1.0)]);
        let b = BoxSequence::new(vec![]);
        assert_eq!(map50(&a, &b), Err(MetricsError::LengthMismatch { pred: 1, gt: 0 }));
        assert!(tube_iou(&a, &b).is_err());
        assert!(mean_iou(&a, &b).is_err());
    }

    #[test]
    fn report_aggregates_and_csv() {
        let gt = BoxSequence::new(vec![Box2D::new(0.0, 0.0, 1.0, 1.0); 3]);
        let miss = BoxSequence::new(vec![Box2D::new(9.0, 0.0, 1.0, 1.0); 3]);
        let seqs = vec![
            SequenceMetrics::compute("a", &gt, &gt).unwrap(),
            SequenceMetrics::compute("b", &miss, &gt).unwrap(),
        ];
        let r = EvalReport::from_sequences("m", Direction::FirstToVideo, seqs).unwrap();
        assert_eq!(r.count, 2);
        assert_eq!(r.mean_iou, 0.5);
        assert_eq!(r.map50, 0.5);
        let csv = r.to_csv();
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.lines().nth(1).unwrap().starts_with("m,f2v,a,1.000000"));
        let json = serde_json::to_string(&r).unwrap();
        assert_eq!(serde_json::from_str::<EvalReport>(&json).unwrap(), r);
        assert_eq!(r.subset(|id| id == "a").unwrap().mean_iou, 1.0);
        assert_eq!(
            EvalReport::from_sequences("m", Direction::FirstToVideo, vec![]),
            Err(MetricsError::Empty)
        );
        let cmp = EvalComparison {
            direction: Direction::FirstToVideo,
            reports: vec![r],
        };
        assert!(cmp.table().contains("IoU_f2v"));
        assert!(cmp.get("m").is_some());
    }
}
