//! Change-pixel metrics: IoU, F1 and AUROC.
//!
//! IoU and F1 are computed over the change class. When both masks are empty
//! they score 1.0 (perfect agreement on "no change"); when exactly one is
//! empty IoU is 0.0. Scene-level numbers average per-view values unweighted.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::scene::ChangeMask;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn iou(&self) -> f64 {
        let union = self.tp + self.fp + self.fn_;
        if union == 0 {
            1.0
        } else {
            self.tp as f64 / union as f64
        }
    }

    pub fn f1(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            1.0
        } else {
            2.0 * self.tp as f64 / denom as f64
        }
    }
}

fn check_binary(m: &ChangeMask, what: &str) -> Result<()> {
    if !m.has_binary_values() {
        return Err(Error::InvalidMask(format!("{what} mask is not binary")));
    }
    Ok(())
}

fn check_dims(a: &ChangeMask, b: &ChangeMask) -> Result<()> {
    if (a.width, a.height) != (b.width, b.height) {
        return Err(Error::mismatch(format!(
            "prediction is {}x{}, ground truth is {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    Ok(())
}

pub fn confusion(pred: &ChangeMask, gt: &ChangeMask) -> Result<Confusion> {
    check_dims(pred, gt)?;
    check_binary(pred, "predicted")?;
    check_binary(gt, "ground-truth")?;
    let mut c = Confusion::default();
    for (p, g) in pred.values.iter().zip(&gt.values) {
        match (*p == 1.0, *g == 1.0) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

pub fn miou(pred: &ChangeMask, gt: &ChangeMask) -> Result<f64> {
    confusion(pred, gt).map(|c| c.iou())
}

pub fn f1(pred: &ChangeMask, gt: &ChangeMask) -> Result<f64> {
    confusion(pred, gt).map(|c| c.f1())
}

/// Mann–Whitney AUROC with midranks for ties.
pub fn auroc(scores: &ChangeMask, gt: &ChangeMask) -> Result<f64> {
    check_dims(scores, gt)?;
    check_binary(gt, "ground-truth")?;
    let n_pos = gt.values.iter().filter(|v| **v == 1.0).count();
    let n_neg = gt.values.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedAuroc);
    }
    let mut order: Vec<usize> = (0..scores.values.len()).collect();
    order.sort_by(|&a, &b| scores.values[a].total_cmp(&scores.values[b]));
    let mut pos_rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores.values[order[j + 1]] == scores.values[order[i]] {
            j += 1;
        }
        // ranks are 1-based; the tied block i..=j shares the mean rank
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            if gt.values[k] == 1.0 {
                pos_rank_sum += midrank;
            }
        }
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok((pos_rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ViewMetrics {
    pub image_id: String,
    pub miou: f64,
    pub f1: f64,
    /// `None` when the ground truth has a single class.
    pub auroc: Option<f64>,
    pub counts: Confusion,
}

pub fn evaluate_view(image_id: &str, pred: &ChangeMask, scores: &ChangeMask, gt: &ChangeMask) -> Result<ViewMetrics> {
    let counts = confusion(pred, gt)?;
    let auroc = match auroc(scores, gt) {
        Ok(v) => Some(v),
        Err(Error::UndefinedAuroc) => None,
        Err(e) => return Err(e),
    };
    Ok(ViewMetrics {
        image_id: image_id.to_string(),
        miou: counts.iou(),
        f1: counts.f1(),
        auroc,
        counts,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Summary {
    pub miou: f64,
    pub f1: f64,
    /// Mean over views where AUROC is defined.
    pub auroc: Option<f64>,
    pub views: usize,
}

pub fn summarize(rows: &[ViewMetrics]) -> Summary {
    let n = rows.len().max(1) as f64;
    let aurocs: Vec<f64> = rows.iter().filter_map(|r| r.auroc).collect();
    Summary {
        miou: rows.iter().map(|r| r.miou).sum::<f64>() / n,
        f1: rows.iter().map(|r| r.f1).sum::<f64>() / n,
        auroc: (!aurocs.is_empty()).then(|| aurocs.iter().sum::<f64>() / aurocs.len() as f64),
        views: rows.len(),
    }
}

/// Tab-separated report rows with a header line.
pub fn format_rows(rows: &[ViewMetrics]) -> String {
    let mut s = String::from("image_id\tmiou\tf1\tauroc\ttp\tfp\tfn\n");
    for r in rows {
        let auroc = r.auroc.map(|v| format!("{v:.6}")).unwrap_or_else(|| "undefined".into());
        let _ = writeln!(
            s,
            "{}\t{:.6}\t{:.6}\t{}\t{}\t{}\t{}",
            r.image_id, r.miou, r.f1, auroc, r.counts.tp, r.counts.fp, r.counts.fn_
        );
    }
    s
}
