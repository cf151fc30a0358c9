//! Restoration and detection metrics.

use std::collections::BTreeSet;

use crate::error::{arg_err, shape_err, Error, Result};
use crate::tensor::Tensor;

/// PSNR reported for identical images, and the ceiling for all others.
pub const PSNR_CAP_DB: f64 = 99.0;

/// `10·log10((2ⁿ − 1)² / MSE)`, with MSE the mean over every pixel and channel.
pub fn psnr(x: &Tensor, y: &Tensor, bits: u32) -> Result<f64> {
    if x.shape() != y.shape() {
        return shape_err(format!("psnr inputs differ: {:?} vs {:?}", x.shape(), y.shape()));
    }
    if !(1..=32).contains(&bits) {
        return arg_err(format!("bit depth must be 1..=32, got {bits}"));
    }
    let mse = x.zip_map(y, |a, b| (a - b) * (a - b))?.mean();
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    let peak = ((1u64 << bits) - 1) as f64;
    Ok((10.0 * (peak * peak / mse).log10()).min(PSNR_CAP_DB))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SsimParams {
    pub window: usize,
    pub sigma: f64,
    pub dynamic_range: f64,
    pub k1: f64,
    pub k2: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self { window: 11, sigma: 1.5, dynamic_range: 255.0, k1: 0.01, k2: 0.03 }
    }
}

impl SsimParams {
    pub fn c1(&self) -> f64 {
        (self.k1 * self.dynamic_range).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * self.dynamic_range).powi(2)
    }

    pub fn c3(&self) -> f64 {
        self.c2() / 2.0
    }

    /// Normalized `window×window` Gaussian weights, row-major.
    pub fn weights(&self) -> Vec<f64> {
        let r = (self.window as f64 - 1.0) / 2.0;
        let g: Vec<f64> =
            (0..self.window).map(|i| (-((i as f64 - r).powi(2)) / (2.0 * self.sigma * self.sigma)).exp()).collect();
        let mut w: Vec<f64> = g.iter().flat_map(|a| g.iter().map(move |b| a * b)).collect();
        let total: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= total);
        w
    }
}

/// BT.601 luma for `H×W×3`; `H×W` and `H×W×1` pass through as `H×W`.
pub fn luminance(img: &Tensor) -> Result<Tensor> {
    match img.shape() {
        &[_, _] => Ok(img.clone()),
        &[h, w, 1] => img.reshape(&[h, w]),
        &[h, w, 3] => {
            let y = img.data().chunks_exact(3).map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]).collect();
            Ok(Tensor::from_parts(vec![h, w], y))
        }
        s => shape_err(format!("expected a grey or RGB image, got {s:?}")),
    }
}

/// Mean SSIM over every full window position (stride 1).
///
/// With `C3 = C2/2` the luminance, contrast and structure factors combine to
/// `(2μxμy + C1)(2σxy + C2) / ((μx² + μy² + C1)(σx² + σy² + C2))`.
pub fn ssim(x: &Tensor, y: &Tensor, p: &SsimParams) -> Result<f64> {
    if x.shape() != y.shape() {
        return shape_err(format!("ssim inputs differ: {:?} vs {:?}", x.shape(), y.shape()));
    }
    let (gx, gy) = (luminance(x)?, luminance(y)?);
    let (h, w) = (gx.shape()[0], gx.shape()[1]);
    let k = p.window;
    if k == 0 || h < k || w < k {
        return arg_err(format!("image {h}×{w} is smaller than the {k}×{k} window"));
    }
    let weights = p.weights();
    let (c1, c2) = (p.c1(), p.c2());
    let (a, b) = (gx.data(), gy.data());
    let mut total = 0.0;
    for i in 0..=h - k {
        for j in 0..=w - k {
            let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for di in 0..k {
                let row = (i + di) * w + j;
                for (dj, &wt) in weights[di * k..(di + 1) * k].iter().enumerate() {
                    let (u, v) = (a[row + dj], b[row + dj]);
                    mx += wt * u;
                    my += wt * v;
                    sxx += wt * u * u;
                    syy += wt * v * v;
                    sxy += wt * u * v;
                }
            }
            let vx = (sxx - mx * mx).max(0.0);
            let vy = (syy - my * my).max(0.0);
            let cov = sxy - mx * my;
            total += ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
        }
    }
    Ok(total / ((h - k + 1) * (w - k + 1)) as f64)
}

/// Axis-aligned box `(x1, y1, x2, y2)` with `x1 < x2`, `y1 < y2`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BBox {
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        if !(x1 < x2 && y1 < y2) || ![x1, y1, x2, y2].iter().all(|v| v.is_finite()) {
            return arg_err(format!("degenerate box ({x1}, {y1}, {x2}, {y2})"));
        }
        Ok(Self { x1, y1, x2, y2 })
    }

    pub fn coords(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }

    pub fn area(&self) -> f64 {
        (self.x2 - self.x1) * (self.y2 - self.y1)
    }

    fn intersection(&self, o: &BBox) -> f64 {
        let w = (self.x2.min(o.x2) - self.x1.max(o.x1)).max(0.0);
        let h = (self.y2.min(o.y2) - self.y1.max(o.y1)).max(0.0);
        w * h
    }

    fn hull_area(&self, o: &BBox) -> f64 {
        (self.x2.max(o.x2) - self.x1.min(o.x1)) * (self.y2.max(o.y2) - self.y1.min(o.y1))
    }
}

pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection(b);
    inter / (a.area() + b.area() - inter)
}

pub fn giou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection(b);
    let union = a.area() + b.area() - inter;
    let hull = a.hull_area(b);
    inter / union - (hull - union) / hull
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Detection {
    pub bbox: BBox,
    pub class_id: u32,
    pub confidence: f64,
}

impl Detection {
    pub fn new(bbox: BBox, class_id: u32, confidence: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&confidence) {
            return arg_err(format!("confidence {confidence} outside [0, 1]"));
        }
        Ok(Self { bbox, class_id, confidence })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GroundTruthBox {
    pub bbox: BBox,
    pub class_id: u32,
}

fn parse_box_lines(text: &str, with_confidence: bool) -> Result<Vec<(u32, BBox, f64)>> {
    let want = if with_confidence { 6 } else { 5 };
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let bad = || Error::Format(format!("line {}: expected {want} fields, got {line:?}", n + 1));
        if fields.len() != want {
            return Err(bad());
        }
        let class_id: u32 = fields[0].parse().map_err(|_| bad())?;
        let nums: Vec<f64> = fields[1..].iter().map(|f| f.parse::<f64>()).collect::<std::result::Result<_, _>>().map_err(|_| bad())?;
        let bbox = BBox::new(nums[0], nums[1], nums[2], nums[3])
            .map_err(|e| Error::Format(format!("line {}: {e}", n + 1)))?;
        out.push((class_id, bbox, if with_confidence { nums[4] } else { 1.0 }));
    }
    Ok(out)
}

/// Parses `class_id x1 y1 x2 y2 confidence` lines.
pub fn parse_detections(text: &str) -> Result<Vec<Detection>> {
    parse_box_lines(text, true)?
        .into_iter()
        .map(|(class_id, bbox, confidence)| Detection::new(bbox, class_id, confidence))
        .collect()
}

/// Parses `class_id x1 y1 x2 y2` lines.
pub fn parse_ground_truth(text: &str) -> Result<Vec<GroundTruthBox>> {
    Ok(parse_box_lines(text, false)?.into_iter().map(|(class_id, bbox, _)| GroundTruthBox { bbox, class_id }).collect())
}

/// Detections and ground truth of one image; matching never crosses images.
#[derive(Clone, Copy, Debug)]
pub struct ImageBoxes<'a> {
    pub detections: &'a [Detection],
    pub ground_truth: &'a [GroundTruthBox],
}

/// All-point interpolated AP of one class on a single image.
///
/// Detections are visited by descending confidence (stable on ties); each
/// claims the unmatched ground truth of highest IoU at or above `iou_thr`.
pub fn average_precision(dets: &[Detection], gts: &[GroundTruthBox], class_id: u32, iou_thr: f64) -> f64 {
    average_precision_images(&[ImageBoxes { detections: dets, ground_truth: gts }], class_id, iou_thr)
}

/// [`average_precision`] over a set of images: one global confidence ranking,
/// per-image matching.
pub fn average_precision_images(images: &[ImageBoxes], class_id: u32, iou_thr: f64) -> f64 {
    let truth: Vec<Vec<&BBox>> = images
        .iter()
        .map(|im| im.ground_truth.iter().filter(|g| g.class_id == class_id).map(|g| &g.bbox).collect())
        .collect();
    let total: usize = truth.iter().map(Vec::len).sum();
    let mut ranked: Vec<(usize, &Detection)> = images
        .iter()
        .enumerate()
        .flat_map(|(i, im)| im.detections.iter().filter(|d| d.class_id == class_id).map(move |d| (i, d)))
        .collect();
    if total == 0 {
        return if ranked.is_empty() { 1.0 } else { 0.0 };
    }
    ranked.sort_by(|a, b| b.1.confidence.total_cmp(&a.1.confidence));
    let mut taken: Vec<Vec<bool>> = truth.iter().map(|t| vec![false; t.len()]).collect();
    let mut tp = 0usize;
    let mut curve = Vec::with_capacity(ranked.len());
    for (k, (img, d)) in ranked.iter().enumerate() {
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in truth[*img].iter().enumerate() {
            let o = iou(&d.bbox, gt);
            if !taken[*img][g] && o >= iou_thr && best.is_none_or(|(_, b)| o > b) {
                best = Some((g, o));
            }
        }
        if let Some((g, _)) = best {
            taken[*img][g] = true;
            tp += 1;
        }
        curve.push((tp as f64 / total as f64, tp as f64 / (k + 1) as f64));
    }
    let mut envelope = 0.0f64;
    for point in curve.iter_mut().rev() {
        envelope = envelope.max(point.1);
        point.1 = envelope;
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (recall, precision) in curve {
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    ap
}

/// Unweighted mean of per-class AP over the classes present in `gts`.
pub fn class_mean_ap(dets: &[Detection], gts: &[GroundTruthBox], iou_thr: f64) -> f64 {
    class_mean_ap_images(&[ImageBoxes { detections: dets, ground_truth: gts }], iou_thr)
}

pub fn class_mean_ap_images(images: &[ImageBoxes], iou_thr: f64) -> f64 {
    let classes: BTreeSet<u32> = images.iter().flat_map(|im| im.ground_truth.iter().map(|g| g.class_id)).collect();
    if classes.is_empty() {
        return if images.iter().all(|im| im.detections.is_empty()) { 1.0 } else { 0.0 };
    }
    classes.iter().map(|&c| average_precision_images(images, c, iou_thr)).sum::<f64>() / classes.len() as f64
}

/// IoU thresholds `0.50, 0.55, …, 0.95`.
pub fn coco_thresholds() -> [f64; 10] {
    std::array::from_fn(|k| (50 + 5 * k) as f64 / 100.0)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MapScores {
    pub map50: f64,
    pub map75: f64,
    /// Mean over [`coco_thresholds`].
    pub map: f64,
}

pub fn mean_ap(dets: &[Detection], gts: &[GroundTruthBox]) -> MapScores {
    mean_ap_images(&[ImageBoxes { detections: dets, ground_truth: gts }])
}

pub fn mean_ap_images(images: &[ImageBoxes]) -> MapScores {
    let sweep: Vec<f64> = coco_thresholds().iter().map(|&t| class_mean_ap_images(images, t)).collect();
    MapScores { map50: sweep[0], map75: sweep[5], map: sweep.iter().sum::<f64>() / sweep.len() as f64 }
}
