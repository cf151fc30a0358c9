//! Detection losses over grid-structured predictions.
//!
//! A grid has `S²` cells with `N` box slots each; slot `k = cell·N + j`.
//! Positive slots (`obj`) carry a box and class target; negative slots
//! (`noobj`) only enter the confidence term; any other slot is ignored.

use crate::error::{arg_err, shape_err, Error, Result};
use crate::io::Bundle;
use crate::metrics::{giou, BBox};
use crate::tensor::Tensor;

/// Floor applied to predicted probabilities before the logarithm.
pub const PROB_FLOOR: f64 = 1e-12;
const DIST_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct PredictionGrid {
    grid: usize,
    boxes_per_cell: usize,
    num_classes: usize,
    /// `slots×4`
    boxes: Tensor,
    /// `slots`
    confidence: Tensor,
    /// `slots×K`
    class_probs: Tensor,
    obj: Vec<bool>,
    noobj: Vec<bool>,
}

fn check_distribution(row: &[f64], k: usize) -> Result<()> {
    if row.iter().any(|&p| !(0.0..=1.0).contains(&p)) || (row.iter().sum::<f64>() - 1.0).abs() > DIST_TOL {
        return arg_err(format!("slot {k}: class probabilities must lie in [0, 1] and sum to 1"));
    }
    Ok(())
}

impl PredictionGrid {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        grid: usize,
        boxes_per_cell: usize,
        num_classes: usize,
        boxes: Tensor,
        confidence: Tensor,
        class_probs: Tensor,
        obj: Vec<bool>,
        noobj: Vec<bool>,
    ) -> Result<Self> {
        if grid == 0 || boxes_per_cell == 0 || num_classes == 0 {
            return arg_err("grid side, boxes per cell and class count must be positive");
        }
        let slots = grid * grid * boxes_per_cell;
        if boxes.shape() != [slots, 4] || confidence.shape() != [slots] || class_probs.shape() != [slots, num_classes] {
            return shape_err(format!(
                "grid {grid}²×{boxes_per_cell} needs boxes {slots}×4, confidence {slots}, class probabilities {slots}×{num_classes}"
            ));
        }
        if obj.len() != slots || noobj.len() != slots {
            return shape_err(format!("indicator masks must have {slots} entries"));
        }
        if let Some(k) = (0..slots).find(|&k| obj[k] && noobj[k]) {
            return arg_err(format!("slot {k} is marked both positive and negative"));
        }
        if confidence.data().iter().any(|c| !(0.0..=1.0).contains(c)) {
            return arg_err("confidences must lie in [0, 1]");
        }
        for k in 0..slots {
            check_distribution(class_probs.outer_slice(k), k)?;
        }
        Ok(Self { grid, boxes_per_cell, num_classes, boxes, confidence, class_probs, obj, noobj })
    }

    pub fn slots(&self) -> usize {
        self.obj.len()
    }

    pub fn grid(&self) -> usize {
        self.grid
    }

    pub fn boxes_per_cell(&self) -> usize {
        self.boxes_per_cell
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn is_positive(&self, k: usize) -> bool {
        self.obj[k]
    }

    pub fn is_negative(&self, k: usize) -> bool {
        self.noobj[k]
    }

    pub fn confidence(&self, k: usize) -> f64 {
        self.confidence.data()[k]
    }

    fn bbox(&self, k: usize) -> Result<BBox> {
        let c = self.boxes.outer_slice(k);
        BBox::new(c[0], c[1], c[2], c[3]).map_err(|e| Error::InvalidArgument(format!("predicted slot {k}: {e}")))
    }

    pub fn to_bundle(&self) -> Bundle {
        let mask = |m: &[bool]| Tensor::from_parts(vec![m.len()], m.iter().map(|&b| b as u8 as f64).collect());
        let mut b = Bundle::new();
        b.set("grid", self.grid);
        b.set("boxes_per_cell", self.boxes_per_cell);
        b.set("num_classes", self.num_classes);
        b.put("boxes", self.boxes.clone());
        b.put("confidence", self.confidence.clone());
        b.put("class_probs", self.class_probs.clone());
        b.put("obj", mask(&self.obj));
        b.put("noobj", mask(&self.noobj));
        b
    }

    pub fn from_bundle(b: &Bundle) -> Result<Self> {
        let mask = |role: &str| -> Result<Vec<bool>> {
            b.tensor(role)?
                .data()
                .iter()
                .map(|&v| match v {
                    0.0 => Ok(false),
                    1.0 => Ok(true),
                    _ => Err(Error::Format(format!("indicator {role} must hold 0 or 1, found {v}"))),
                })
                .collect()
        };
        Self::new(
            b.scalar("grid")?,
            b.scalar("boxes_per_cell")?,
            b.scalar("num_classes")?,
            b.tensor("boxes")?.clone(),
            b.tensor("confidence")?.clone(),
            b.tensor("class_probs")?.clone(),
            mask("obj")?,
            mask("noobj")?,
        )
    }
}

/// Per-slot targets; only positive slots are read.
#[derive(Clone, Debug, PartialEq)]
pub struct GridTargets {
    /// `slots×4`
    pub boxes: Tensor,
    /// `slots×K`, one-hot or soft
    pub class_probs: Tensor,
}

impl GridTargets {
    fn check(&self, pred: &PredictionGrid) -> Result<()> {
        let (s, k) = (pred.slots(), pred.num_classes());
        if self.boxes.shape() != [s, 4] || self.class_probs.shape() != [s, k] {
            return shape_err(format!("targets must be {s}×4 boxes and {s}×{k} class probabilities"));
        }
        Ok(())
    }

    fn bbox(&self, k: usize) -> Result<BBox> {
        let c = self.boxes.outer_slice(k);
        BBox::new(c[0], c[1], c[2], c[3])
            .map_err(|_| Error::InvalidArgument(format!("positive slot {k} has no valid target box")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub lambda_box: f64,
    pub lambda_cls: f64,
    pub lambda_conf: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda_box: 1.0, lambda_cls: 1.0, lambda_conf: 1.0 }
    }
}

/// `Σ_obj (1 − GIoU(pred, target))`
pub fn box_loss(pred: &PredictionGrid, targets: &GridTargets) -> Result<f64> {
    targets.check(pred)?;
    let mut total = 0.0;
    for k in (0..pred.slots()).filter(|&k| pred.obj[k]) {
        total += 1.0 - giou(&pred.bbox(k)?, &targets.bbox(k)?);
    }
    Ok(total)
}

/// `−Σ_obj Σ_c p(c)·ln max(p̂(c), 1e-12)`
pub fn cls_loss(pred: &PredictionGrid, targets: &GridTargets) -> Result<f64> {
    targets.check(pred)?;
    let mut total = 0.0;
    for k in (0..pred.slots()).filter(|&k| pred.obj[k]) {
        let p = targets.class_probs.outer_slice(k);
        check_distribution(p, k)?;
        let q = pred.class_probs.outer_slice(k);
        total -= p.iter().zip(q).map(|(&p, &q)| if p == 0.0 { 0.0 } else { p * q.max(PROB_FLOOR).ln() }).sum::<f64>();
    }
    Ok(total)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConfLoss {
    pub noobj: f64,
    pub obj: f64,
}

/// Squared confidence error against 1 on positive and 0 on negative slots.
pub fn conf_loss(pred: &PredictionGrid) -> ConfLoss {
    let mut out = ConfLoss { noobj: 0.0, obj: 0.0 };
    for (k, &c) in pred.confidence.data().iter().enumerate() {
        if pred.obj[k] {
            out.obj += (1.0 - c).powi(2);
        } else if pred.noobj[k] {
            out.noobj += c * c;
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown {
    pub box_loss: f64,
    pub cls_loss: f64,
    pub conf: ConfLoss,
    pub total: f64,
}

pub fn loss_breakdown(pred: &PredictionGrid, targets: &GridTargets, w: &LossWeights) -> Result<LossBreakdown> {
    if [w.lambda_box, w.lambda_cls, w.lambda_conf].iter().any(|&l| !(l >= 0.0 && l.is_finite())) {
        return arg_err("loss weights must be finite and nonnegative");
    }
    let b = box_loss(pred, targets)?;
    let c = cls_loss(pred, targets)?;
    let conf = conf_loss(pred);
    let total = w.lambda_box * b + w.lambda_cls * c + w.lambda_conf * (conf.noobj + conf.obj);
    Ok(LossBreakdown { box_loss: b, cls_loss: c, conf, total })
}

/// `λ_box·L_box + λ_cls·L_cls + λ_conf·(L_noobj + L_obj)`
pub fn total_loss(pred: &PredictionGrid, targets: &GridTargets, w: &LossWeights) -> Result<f64> {
    loss_breakdown(pred, targets, w).map(|b| b.total)
}
