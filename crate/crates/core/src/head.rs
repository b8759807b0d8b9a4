//! Grid detection head: decoding, non-maximum suppression and
//! PascalVOC-style average precision.
//!
//! The output vector holds one block per cell in row-major cell order. A
//! block is `B` boxes of `(x, y, w, h, confidence)` followed by `C` class
//! probabilities shared by the cell's boxes. `x`, `y` are offsets inside the
//! cell; `w`, `h` are image-relative.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::output_vector_len;

#[derive(Debug, Error)]
pub enum HeadError {
    #[error("output length {got} does not match S={grid}, B={boxes}, C={classes} (expected {expected})")]
    Length { got: usize, expected: usize, grid: usize, boxes: usize, classes: usize },
    #[error("no ground-truth boxes")]
    EmptyGroundTruth,
    #[error("line {line}: {source}")]
    Json { line: usize, source: serde_json::Error },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadConfig {
    pub grid: usize,
    pub boxes: usize,
    pub classes: usize,
}

impl HeadConfig {
    pub fn output_len(&self) -> usize {
        output_vector_len(self.grid, self.boxes, self.classes)
    }
}

/// Axis-aligned box in normalized center format.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn area(&self) -> f64 {
        self.w.max(0.0) * self.h.max(0.0)
    }
}

pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let ix = ((a.cx + a.w / 2.0).min(b.cx + b.w / 2.0) - (a.cx - a.w / 2.0).max(b.cx - b.w / 2.0)).max(0.0);
    let iy = ((a.cy + a.h / 2.0).min(b.cy + b.h / 2.0) - (a.cy - a.h / 2.0).max(b.cy - b.h / 2.0)).max(0.0);
    let inter = ix * iy;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionBox {
    #[serde(default)]
    pub image_id: String,
    pub class_id: usize,
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
    pub score: f64,
}

impl DetectionBox {
    pub fn bbox(&self) -> BBox {
        BBox { cx: self.cx, cy: self.cy, w: self.w, h: self.h }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthBox {
    pub image_id: String,
    pub class_id: usize,
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl GroundTruthBox {
    pub fn bbox(&self) -> BBox {
        BBox { cx: self.cx, cy: self.cy, w: self.w, h: self.h }
    }
}

/// Total order used everywhere detections are ranked: score descending,
/// then class, center, size and image id ascending.
pub fn rank_order(a: &DetectionBox, b: &DetectionBox) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.class_id.cmp(&b.class_id))
        .then(a.cx.total_cmp(&b.cx))
        .then(a.cy.total_cmp(&b.cy))
        .then(a.w.total_cmp(&b.w))
        .then(a.h.total_cmp(&b.h))
        .then_with(|| a.image_id.cmp(&b.image_id))
}

/// Decodes a real-valued output vector. Boxes with score strictly above
/// `conf_threshold` are kept.
pub fn decode(output: &[f64], cfg: &HeadConfig, conf_threshold: f64) -> Result<Vec<DetectionBox>, HeadError> {
    let expected = cfg.output_len();
    if output.len() != expected {
        return Err(HeadError::Length {
            got: output.len(),
            expected,
            grid: cfg.grid,
            boxes: cfg.boxes,
            classes: cfg.classes,
        });
    }
    let s = cfg.grid;
    let block = cfg.boxes * 5 + cfg.classes;
    let mut out = Vec::new();
    for (cell, v) in output.chunks_exact(block).enumerate() {
        let (row, col) = (cell / s, cell % s);
        let probs = &v[cfg.boxes * 5..];
        let (class_id, prob) = probs
            .iter()
            .map(|p| p.clamp(0.0, 1.0))
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, p)| if p > best.1 { (i, p) } else { best });
        for b in v[..cfg.boxes * 5].chunks_exact(5) {
            let score = b[4].clamp(0.0, 1.0) * prob.max(0.0);
            if score > conf_threshold {
                out.push(DetectionBox {
                    image_id: String::new(),
                    class_id,
                    cx: ((col as f64 + b[0]) / s as f64).clamp(0.0, 1.0),
                    cy: ((row as f64 + b[1]) / s as f64).clamp(0.0, 1.0),
                    w: b[2].clamp(0.0, 1.0),
                    h: b[3].clamp(0.0, 1.0),
                    score,
                });
            }
        }
    }
    Ok(out)
}

/// Greedy per-image, per-class suppression of boxes with IoU above the
/// threshold against an already kept box. Output follows [`rank_order`].
pub fn nms(boxes: &[DetectionBox], iou_threshold: f64) -> Vec<DetectionBox> {
    let mut sorted: Vec<&DetectionBox> = boxes.iter().collect();
    sorted.sort_by(|a, b| rank_order(a, b));
    let mut kept: Vec<DetectionBox> = Vec::new();
    let mut groups: BTreeMap<(&str, usize), Vec<BBox>> = BTreeMap::new();
    for d in sorted {
        let group = groups.entry((d.image_id.as_str(), d.class_id)).or_default();
        let bb = d.bbox();
        if group.iter().all(|k| iou(k, &bb) <= iou_threshold) {
            group.push(bb);
            kept.push(d.clone());
        }
    }
    kept
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ApMethod {
    /// Classic 11-point interpolation.
    #[default]
    ElevenPoint,
    /// Area under the monotone precision envelope.
    AllPoint,
}

/// Precision/recall after each ranked detection of one class.
pub fn pr_curve(dets: &[DetectionBox], gts: &[GroundTruthBox], class_id: usize, iou_threshold: f64) -> (Vec<f64>, Vec<f64>) {
    let mut by_image: BTreeMap<&str, Vec<(BBox, bool)>> = BTreeMap::new();
    let mut npos = 0usize;
    for g in gts.iter().filter(|g| g.class_id == class_id) {
        by_image.entry(g.image_id.as_str()).or_default().push((g.bbox(), false));
        npos += 1;
    }
    let mut ranked: Vec<&DetectionBox> = dets.iter().filter(|d| d.class_id == class_id).collect();
    ranked.sort_by(|a, b| rank_order(a, b));

    let (mut tp, mut fp) = (0usize, 0usize);
    let mut precision = Vec::with_capacity(ranked.len());
    let mut recall = Vec::with_capacity(ranked.len());
    for d in ranked {
        let bb = d.bbox();
        let hit = by_image.get_mut(d.image_id.as_str()).and_then(|cands| {
            let (best, ov) = cands
                .iter()
                .enumerate()
                .map(|(i, (g, _))| (i, iou(g, &bb)))
                .fold((None, -1.0), |acc, (i, o)| if o > acc.1 { (Some(i), o) } else { acc });
            let i = best?;
            (ov >= iou_threshold && !cands[i].1).then(|| cands[i].1 = true)
        });
        if hit.is_some() {
            tp += 1;
        } else {
            fp += 1;
        }
        precision.push(tp as f64 / (tp + fp) as f64);
        recall.push(if npos == 0 { 0.0 } else { tp as f64 / npos as f64 });
    }
    (precision, recall)
}

pub fn ap_from_curve(precision: &[f64], recall: &[f64], method: ApMethod) -> f64 {
    match method {
        ApMethod::ElevenPoint => {
            (0..=10)
                .map(|t| {
                    let t = t as f64 / 10.0;
                    precision
                        .iter()
                        .zip(recall)
                        .filter(|(_, &r)| r >= t)
                        .map(|(&p, _)| p)
                        .fold(0.0, f64::max)
                })
                .sum::<f64>()
                / 11.0
        }
        ApMethod::AllPoint => {
            let mut mrec = vec![0.0];
            mrec.extend_from_slice(recall);
            mrec.push(1.0);
            let mut mpre = vec![0.0];
            mpre.extend_from_slice(precision);
            mpre.push(0.0);
            for i in (0..mpre.len() - 1).rev() {
                mpre[i] = mpre[i].max(mpre[i + 1]);
            }
            (1..mrec.len()).map(|i| (mrec[i] - mrec[i - 1]) * mpre[i]).sum()
        }
    }
}

/// Average precision for one class. Each ground truth is matched at most
/// once; detections take their highest-IoU ground truth in the same image.
pub fn average_precision(
    dets: &[DetectionBox],
    gts: &[GroundTruthBox],
    class_id: usize,
    iou_threshold: f64,
    method: ApMethod,
) -> f64 {
    if !gts.iter().any(|g| g.class_id == class_id) {
        return 0.0;
    }
    let (p, r) = pr_curve(dets, gts, class_id, iou_threshold);
    ap_from_curve(&p, &r, method)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapReport {
    pub per_class: BTreeMap<usize, f64>,
    pub map: f64,
}

/// Unweighted mean of per-class AP over classes with ground truth.
pub fn mean_ap(
    dets: &[DetectionBox],
    gts: &[GroundTruthBox],
    iou_threshold: f64,
    method: ApMethod,
) -> Result<MapReport, HeadError> {
    let classes: BTreeSet<usize> = gts.iter().map(|g| g.class_id).collect();
    if classes.is_empty() {
        return Err(HeadError::EmptyGroundTruth);
    }
    let per_class: BTreeMap<usize, f64> =
        classes.iter().map(|&c| (c, average_precision(dets, gts, c, iou_threshold, method))).collect();
    let map = per_class.values().sum::<f64>() / per_class.len() as f64;
    Ok(MapReport { per_class, map })
}

pub fn read_jsonl<T: DeserializeOwned>(text: &str) -> Result<Vec<T>, HeadError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|source| HeadError::Json { line: i + 1, source }))
        .collect()
}

pub fn write_jsonl<T: Serialize>(items: &[T]) -> String {
    let mut out = String::new();
    for it in items {
        out.push_str(&serde_json::to_string(it).expect("serializable record"));
        out.push('\n');
    }
    out
}
