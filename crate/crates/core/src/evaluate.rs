//! Confusion-matrix evaluation: per-class IoU, mIoU over object classes,
//! point-level scoring through the projection index, and report emission.

use std::path::Path;

use crate::datasets::{make_batch, LoadedSet};
use crate::nn::ParamStore;
use crate::rangeview::{backproject, LabelMap, ProjectionIndex};
use crate::segmentation::{predict_labels, SegNet};
use crate::tape::Tape;
use crate::{HyldaError, Result, Scalar};

/// Counts indexed [gt * n + pred] over K+1 classes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    n: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(n_out: usize) -> Self {
        ConfusionMatrix { n: n_out, counts: vec![0; n_out * n_out] }
    }

    pub fn n_out(&self) -> usize {
        self.n
    }

    pub fn at(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.n + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn accumulate(&mut self, pred: &LabelMap, gt: &LabelMap, valid: &[bool]) -> Result<()> {
        if pred.h != gt.h || pred.w != gt.w {
            return Err(HyldaError::Shape("prediction and ground truth shapes differ".into()));
        }
        if valid.len() != gt.ids.len() {
            return Err(HyldaError::Shape("valid mask length mismatch".into()));
        }
        for i in 0..gt.ids.len() {
            if !valid[i] {
                continue;
            }
            let (g, p) = (gt.ids[i] as usize, pred.ids[i] as usize);
            if g >= self.n || p >= self.n {
                return Err(HyldaError::Config(format!(
                    "label pair ({g}, {p}) exceeds class count {}",
                    self.n
                )));
            }
            self.counts[g * self.n + p] += 1;
        }
        Ok(())
    }

    /// Merge by addition; evaluation order never matters.
    pub fn merge(&mut self, other: &ConfusionMatrix) {
        assert_eq!(self.n, other.n, "matrix sizes differ");
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }

    /// IoU per object class 1..K; None for classes absent from ground truth.
    pub fn per_class_iou(&self) -> Vec<Option<f64>> {
        let mut out = Vec::with_capacity(self.n - 1);
        for c in 1..self.n {
            let row: u64 = (0..self.n).map(|p| self.at(c, p)).sum();
            if row == 0 {
                out.push(None);
                continue;
            }
            let tp = self.at(c, c);
            let col: u64 = (0..self.n).map(|g| self.at(g, c)).sum();
            let denom = row + col - tp;
            out.push(Some(tp as f64 / denom as f64));
        }
        out
    }

    /// Mean IoU over object classes present in ground truth.
    pub fn miou(&self) -> Result<f64> {
        if self.total() == 0 {
            return Err(HyldaError::Config("empty confusion matrix".into()));
        }
        let ious: Vec<f64> = self.per_class_iou().into_iter().flatten().collect();
        if ious.is_empty() {
            return Err(HyldaError::Config("no object classes in ground truth".into()));
        }
        Ok(ious.iter().sum::<f64>() / ious.len() as f64)
    }
}

/// Deterministic per-frame predictions for a whole set.
pub fn predict_set<S: Scalar>(
    store: &ParamStore<S>,
    net: &SegNet,
    set: &LoadedSet<S>,
) -> Result<Vec<LabelMap>> {
    let mut out = Vec::with_capacity(set.frames.len());
    for i in 0..set.frames.len() {
        let batch = make_batch(set, &[i])?;
        let mut tape = Tape::new();
        let x = tape.leaf(batch.images);
        let scores = net.forward(&mut tape, store, x);
        out.extend(predict_labels(tape.value(scores)));
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct EvalResult {
    pub cm: ConfusionMatrix,
    pub per_class: Vec<Option<f64>>,
    pub miou: f64,
}

/// Pixel-level evaluation over valid pixels of every frame.
pub fn evaluate_set<S: Scalar>(
    store: &ParamStore<S>,
    net: &SegNet,
    set: &LoadedSet<S>,
) -> Result<EvalResult> {
    let preds = predict_set(store, net, set)?;
    let mut cm = ConfusionMatrix::new(net.n_classes() + 1);
    for (frame, pred) in set.frames.iter().zip(&preds) {
        cm.accumulate(pred, &frame.labels, &frame.image.valid)?;
    }
    let per_class = cm.per_class_iou();
    let miou = cm.miou()?;
    Ok(EvalResult { cm, per_class, miou })
}

/// Point-level accumulation: each cloud point scores against the prediction
/// at its projected pixel; points outside the grid are skipped.
pub fn accumulate_points(
    cm: &mut ConfusionMatrix,
    pred: &LabelMap,
    point_labels: &[u8],
    index: &ProjectionIndex,
) -> Result<()> {
    let pred_per_point = backproject(pred, index, point_labels.len())?;
    for (i, (&g, &p)) in point_labels.iter().zip(&pred_per_point).enumerate() {
        if index.pixel_of_point[i].is_none() {
            continue;
        }
        let (g, p) = (g as usize, p as usize);
        if g >= cm.n || p >= cm.n {
            return Err(HyldaError::Config(format!(
                "label pair ({g}, {p}) exceeds class count {}",
                cm.n
            )));
        }
        cm.counts[g * cm.n + p] += 1;
    }
    Ok(())
}

/// One finished run in the summary table.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub mode: String,
    pub subset: usize,
    pub seed: u64,
    pub per_class: Vec<Option<f64>>,
    pub miou: f64,
}

fn fmt_iou(v: Option<f64>) -> String {
    match v {
        Some(v) => format!("{v:.6}"),
        None => String::new(),
    }
}

/// One row per (mode, subset, seed): per-class IoU columns then mIoU.
pub fn write_summary_csv(path: &Path, class_names: &[String], rows: &[RunSummary]) -> Result<()> {
    let mut out = String::from("mode,subset,seed");
    for name in class_names {
        out.push_str(&format!(",iou_{name}"));
    }
    out.push_str(",miou\n");
    for r in rows {
        if r.per_class.len() != class_names.len() {
            return Err(HyldaError::Config(format!(
                "run {}-{}-{} has {} classes, expected {}",
                r.mode,
                r.subset,
                r.seed,
                r.per_class.len(),
                class_names.len()
            )));
        }
        out.push_str(&format!("{},{},{}", r.mode, r.subset, r.seed));
        for v in &r.per_class {
            out.push(',');
            out.push_str(&fmt_iou(*v));
        }
        out.push_str(&format!(",{:.6}\n", r.miou));
    }
    std::fs::write(path, out).map_err(|e| HyldaError::io(path, e))
}

/// Domain-statistics comparison row: some image population against the
/// target-train reference.
#[derive(Debug, Clone)]
pub struct StatsRow {
    pub population: String,
    pub mean_mae: f64,
    pub cov_mae: f64,
}

pub fn write_stats_csv(path: &Path, rows: &[StatsRow]) -> Result<()> {
    let mut out = String::from("population,mean_mae,cov_mae\n");
    for r in rows {
        out.push_str(&format!("{},{:.6},{:.6}\n", r.population, r.mean_mae, r.cov_mae));
    }
    std::fs::write(path, out).map_err(|e| HyldaError::io(path, e))
}

/// Minimal self-contained bar chart of mIoU per run.
pub fn write_miou_svg(path: &Path, rows: &[RunSummary]) -> Result<()> {
    let bar_w = 40usize;
    let gap = 16usize;
    let chart_h = 220usize;
    let label_h = 60usize;
    let width = rows.len() * (bar_w + gap) + gap;
    let height = chart_h + label_h + 20;
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\">\n\
         <rect width=\"{width}\" height=\"{height}\" fill=\"white\"/>\n"
    );
    for (i, r) in rows.iter().enumerate() {
        let x = gap + i * (bar_w + gap);
        let h = (r.miou.clamp(0.0, 1.0) * chart_h as f64).round() as usize;
        let y = 10 + chart_h - h;
        let label = format!("{}-{}-s{}", r.mode, r.subset, r.seed);
        svg.push_str(&format!(
            "<rect x=\"{x}\" y=\"{y}\" width=\"{bar_w}\" height=\"{h}\" fill=\"#4878a8\"/>\n\
             <text x=\"{tx}\" y=\"{ty}\" font-size=\"10\" text-anchor=\"end\" transform=\"rotate(-45 {tx} {ty})\">{label}</text>\n\
             <text x=\"{vx}\" y=\"{vy}\" font-size=\"10\" text-anchor=\"middle\">{miou:.3}</text>\n",
            tx = x + bar_w / 2,
            ty = chart_h + 24,
            vx = x + bar_w / 2,
            vy = y.saturating_sub(3),
            miou = r.miou,
        ));
    }
    svg.push_str("</svg>\n");
    std::fs::write(path, svg).map_err(|e| HyldaError::io(path, e))
}
