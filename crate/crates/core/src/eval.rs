//! Alignment scoring: world-frame transform, 3D non-maximum suppression,
//! thresholded correctness and accuracy reports.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::geometry::{angular_error, azimuth_bin_match, scale_within, Pose9, Quat, Rigid, ScaleMetric, ScaleRule};
use crate::shapes::Category;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Prediction,
    GroundTruth,
}

/// One aligned (or annotated) object.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentRecord {
    pub scene_id: String,
    pub image_id: String,
    pub category: Category,
    pub pose: Pose9,
    pub score: f64,
    pub source: Source,
    /// rotation of the chosen initialization, if any
    pub init_q: Option<Quat>,
    /// intermediate refinement poses, if recorded
    pub trajectory: Vec<Pose9>,
}

/// Moves a camera-frame record into the world frame.
pub fn to_world(rec: &AlignmentRecord, cam_to_world: &Rigid) -> AlignmentRecord {
    AlignmentRecord {
        pose: cam_to_world.transform_pose(&rec.pose),
        init_q: rec.init_q.map(|q| cam_to_world.q * q),
        trajectory: rec.trajectory.iter().map(|p| cam_to_world.transform_pose(p)).collect(),
        ..rec.clone()
    }
}

/// Default suppression radius of [`nms3d`].
pub const NMS_DISTANCE: f64 = 0.3;

/// Greedy suppression by descending score: a record is dropped when a kept
/// record of the same scene and category lies closer than `dist`. Equal
/// scores keep input order.
pub fn nms3d(records: &[AlignmentRecord], dist: f64) -> Vec<AlignmentRecord> {
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.sort_by(|&a, &b| records[b].score.total_cmp(&records[a].score).then(a.cmp(&b)));
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        let r = &records[i];
        let suppressed = kept.iter().any(|&j| {
            let k = &records[j];
            k.scene_id == r.scene_id && k.category == r.category && (k.pose.t - r.pose.t).norm() < dist
        });
        if !suppressed {
            kept.push(i);
        }
    }
    kept.into_iter().map(|i| records[i].clone()).collect()
}

/// Correctness thresholds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Thresholds {
    pub translation: f64,
    pub rotation_deg: f64,
    pub scale: f64,
    pub scale_metric: ScaleMetric,
    pub scale_rule: ScaleRule,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            translation: 0.2,
            rotation_deg: 20.0,
            scale: 0.2,
            scale_metric: ScaleMetric::Corrected,
            scale_rule: ScaleRule::Summed,
        }
    }
}

/// Per-quantity outcomes for one prediction against one ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Checks {
    pub category: bool,
    pub translation: bool,
    pub rotation: bool,
    pub scale: bool,
}

impl Checks {
    pub fn all(&self) -> bool {
        self.category && self.translation && self.rotation && self.scale
    }
}

pub fn check(pred: &AlignmentRecord, gt: &AlignmentRecord, th: &Thresholds) -> Checks {
    Checks {
        category: pred.category == gt.category,
        translation: (pred.pose.t - gt.pose.t).norm() < th.translation,
        rotation: angular_error(&pred.pose.q, &gt.pose.q) < th.rotation_deg,
        scale: scale_within(&pred.pose.s, &gt.pose.s, th.scale_metric, th.scale_rule, th.scale),
    }
}

pub fn is_correct(pred: &AlignmentRecord, gt: &AlignmentRecord, th: &Thresholds) -> bool {
    check(pred, gt, th).all()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Count {
    pub correct: usize,
    pub total: usize,
}

impl Count {
    pub fn rate(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.correct as f64 / self.total as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub per_category: BTreeMap<Category, Count>,
    pub class_average: f64,
    pub instance: f64,
    pub translation: f64,
    pub rotation: f64,
    pub scale: f64,
    /// fraction of per-image predictions whose initial rotation was in the
    /// correct bin
    pub rotation_class: f64,
    pub n_gt: usize,
    pub n_pred: usize,
}

/// Greedy one-to-one assignment by translation distance within each scene
/// and category. Returns `(pred index, gt index)` pairs.
pub fn match_records(preds: &[AlignmentRecord], gts: &[AlignmentRecord]) -> Vec<(usize, usize)> {
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (i, p) in preds.iter().enumerate() {
        for (j, g) in gts.iter().enumerate() {
            if p.scene_id == g.scene_id && p.category == g.category {
                pairs.push(((p.pose.t - g.pose.t).norm(), i, j));
            }
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut used_p = vec![false; preds.len()];
    let mut used_g = vec![false; gts.len()];
    let mut out = Vec::new();
    for (_, i, j) in pairs {
        if !used_p[i] && !used_g[j] {
            used_p[i] = true;
            used_g[j] = true;
            out.push((i, j));
        }
    }
    out
}

/// Accuracy of `preds` (post-NMS, world frame) against `gts`, plus the
/// rotation-bin rate of `per_image` (pre-NMS) predictions.
pub fn accuracy_report(
    preds: &[AlignmentRecord],
    gts: &[AlignmentRecord],
    per_image: &[AlignmentRecord],
    th: &Thresholds,
) -> EvalReport {
    let mut per_category: BTreeMap<Category, Count> = BTreeMap::new();
    for g in gts {
        per_category.entry(g.category).or_default().total += 1;
    }
    let (mut n_ok, mut n_t, mut n_r, mut n_s) = (0, 0, 0, 0);
    for (i, j) in match_records(preds, gts) {
        let c = check(&preds[i], &gts[j], th);
        n_t += c.translation as usize;
        n_r += c.rotation as usize;
        n_s += c.scale as usize;
        if c.all() {
            n_ok += 1;
            per_category.get_mut(&gts[j].category).expect("gt category counted").correct += 1;
        }
    }
    let mut bin_ok = 0;
    let matches = match_records(per_image, gts);
    for &(i, j) in &matches {
        if let Some(q) = per_image[i].init_q {
            bin_ok += azimuth_bin_match(&q, &gts[j].pose.q, &gts[j].pose.up_axis()) as usize;
        }
    }
    let n = gts.len();
    let rate = |k: usize| if n == 0 { 0.0 } else { k as f64 / n as f64 };
    let class_average = if per_category.is_empty() {
        0.0
    } else {
        per_category.values().map(Count::rate).sum::<f64>() / per_category.len() as f64
    };
    EvalReport {
        class_average,
        instance: rate(n_ok),
        translation: rate(n_t),
        rotation: rate(n_r),
        scale: rate(n_s),
        rotation_class: if matches.is_empty() { 0.0 } else { bin_ok as f64 / matches.len() as f64 },
        n_gt: n,
        n_pred: preds.len(),
        per_category,
    }
}

pub const REPORT_CSV_HEADER: &str = "metric,category,value";

impl EvalReport {
    /// Machine-readable rows.
    pub fn to_csv(&self) -> String {
        let mut s = format!("{REPORT_CSV_HEADER}\n");
        for (c, n) in &self.per_category {
            s += &format!("category_accuracy,{c},{:.6}\n", n.rate());
        }
        for (name, v) in [
            ("class_average", self.class_average),
            ("instance", self.instance),
            ("translation", self.translation),
            ("rotation", self.rotation),
            ("scale", self.scale),
            ("rotation_class", self.rotation_class),
            ("n_gt", self.n_gt as f64),
            ("n_pred", self.n_pred as f64),
        ] {
            s += &format!("{name},all,{v:.6}\n");
        }
        s
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<10} {:>8} {:>8}", "category", "accuracy", "count")?;
        for (c, n) in &self.per_category {
            writeln!(f, "{:<10} {:>7.1}% {:>4}/{:<4}", c.name(), 100.0 * n.rate(), n.correct, n.total)?;
        }
        writeln!(f, "class avg  {:>7.1}%", 100.0 * self.class_average)?;
        writeln!(f, "instance   {:>7.1}%", 100.0 * self.instance)?;
        writeln!(
            f,
            "T {:.1}%  R {:.1}%  S {:.1}%  R-class {:.1}%  ({} gt, {} predictions)",
            100.0 * self.translation,
            100.0 * self.rotation,
            100.0 * self.scale,
            100.0 * self.rotation_class,
            self.n_gt,
            self.n_pred
        )
    }
}
