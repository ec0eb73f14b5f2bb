//! Dataset-level alignment and evaluation shared by the command line and
//! the end-to-end tests.

use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::eval::{accuracy_report, nms3d, to_world, AlignmentRecord, EvalReport, Source, Thresholds};
use crate::fusion::{Ablation, InputCounts};
use crate::geometry::Quat;
use crate::io::{self, Fields, TextTable};
use crate::refine::{align_detection, AlignContext, Refiner};
use crate::scene::{filter_annotation, SceneSample};
use crate::seed;
use crate::shapes::CadLibrary;
use crate::train::effective_workers;

pub const ROTATION_INIT_KIND: &str = "sparse-align-rotinit";
pub const ROTATION_INIT_VERSION: u32 = 1;

/// Externally supplied initial rotations keyed by (scene id, detection
/// index), camera frame.
pub type RotationInits = HashMap<(String, usize), Quat>;

/// `<scene id> <detection index> qw qx qy qz` per line.
pub fn read_rotation_inits(path: &Path) -> Result<RotationInits> {
    let table = TextTable::parse(&io::read_text(path)?, path, ROTATION_INIT_KIND, ROTATION_INIT_VERSION)?;
    let mut out = RotationInits::new();
    for (line, fields) in &table.rows {
        let mut f = Fields::new(&table, *line, fields);
        let key = (f.next_str()?.to_string(), f.parse()?);
        let q = f.quat()?;
        f.end()?;
        out.insert(key, q);
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct AlignOptions {
    pub n_iter: usize,
    pub counts: InputCounts,
    pub ablation: Ablation,
    pub seed: u64,
    /// 0 = all available cores
    pub workers: usize,
    pub keep_trajectory: bool,
    pub rotation_inits: RotationInits,
}

impl Default for AlignOptions {
    fn default() -> Self {
        AlignOptions {
            n_iter: 3,
            counts: InputCounts::default(),
            ablation: Ablation::default(),
            seed: 0,
            workers: 1,
            keep_trajectory: false,
            rotation_inits: RotationInits::new(),
        }
    }
}

/// Aligns every detection of one image; records are in the camera frame.
/// Detections whose alignment fails numerically are skipped with a warning.
pub fn align_scene(
    refiner: &dyn Refiner,
    scene: &SceneSample,
    library: &CadLibrary,
    opts: &AlignOptions,
) -> Result<Vec<AlignmentRecord>> {
    let mut out = Vec::with_capacity(scene.boxes.len());
    for (di, det) in scene.boxes.iter().enumerate() {
        let obj = &scene.objects[det.object];
        let model =
            library.get(obj.model_id).ok_or_else(|| Error::Config(format!("unknown model id {}", obj.model_id)))?;
        let ctx = AlignContext { maps: &scene.maps, k: &scene.intrinsics, model, bbox: &det.bbox, gt: Some(&obj.pose) };
        let rot = opts.rotation_inits.get(&(scene.id.clone(), di)).copied();
        let s = seed::derive(opts.seed, &[0xa119, seed::tag(&scene.id), di as u64]);
        let a = match align_detection(refiner, &ctx, det.category, opts.n_iter, rot, s) {
            Ok(a) => a,
            Err(e @ (Error::BehindCamera(_) | Error::ZeroQuaternion | Error::NonFiniteLoss(_))) => {
                log::warn!("skipping detection {di} of {}: {e}", scene.id);
                continue;
            }
            Err(e) => return Err(e),
        };
        out.push(AlignmentRecord {
            scene_id: scene.id.clone(),
            image_id: scene.id.clone(),
            category: det.category,
            pose: a.pose,
            score: a.score,
            source: Source::Prediction,
            init_q: Some(a.init_q),
            trajectory: if opts.keep_trajectory { a.trajectory.poses } else { Vec::new() },
        });
    }
    Ok(out)
}

/// [`align_scene`] over many scenes on up to `opts.workers` threads; the
/// output order (and content) does not depend on the thread count.
pub fn align_scenes(
    refiner: &(dyn Refiner + Sync),
    scenes: &[SceneSample],
    library: &CadLibrary,
    opts: &AlignOptions,
) -> Result<Vec<AlignmentRecord>> {
    let workers = effective_workers(opts.workers).min(scenes.len()).max(1);
    let per_scene: Vec<Result<Vec<AlignmentRecord>>> = if workers == 1 {
        scenes.iter().map(|s| align_scene(refiner, s, library, opts)).collect()
    } else {
        let mut slots: Vec<Option<Result<Vec<AlignmentRecord>>>> = (0..scenes.len()).map(|_| None).collect();
        let chunk = scenes.len().div_ceil(workers);
        std::thread::scope(|sc| {
            for (ss, out) in scenes.chunks(chunk).zip(slots.chunks_mut(chunk)) {
                sc.spawn(move || {
                    for (s, o) in ss.iter().zip(out.iter_mut()) {
                        *o = Some(align_scene(refiner, s, library, opts));
                    }
                });
            }
        });
        slots.into_iter().map(|s| s.expect("every slot filled")).collect()
    };
    let mut out = Vec::new();
    for r in per_scene {
        out.extend(r?);
    }
    Ok(out)
}

/// Annotations that pass the depth-consistency filter, camera frame.
pub fn gt_records(scenes: &[SceneSample], library: &CadLibrary) -> Vec<AlignmentRecord> {
    let mut out = Vec::new();
    for s in scenes {
        for o in &s.objects {
            let Some(model) = library.get(o.model_id) else {
                continue;
            };
            if filter_annotation(&s.maps, &s.intrinsics, o, model) {
                out.push(AlignmentRecord {
                    scene_id: s.id.clone(),
                    image_id: s.id.clone(),
                    category: o.category,
                    pose: o.pose,
                    score: 1.0,
                    source: Source::GroundTruth,
                    init_q: None,
                    trajectory: Vec::new(),
                });
            }
        }
    }
    out
}

/// Moves predictions and annotations to the world frame, suppresses
/// duplicates among the predictions and scores them.
pub fn evaluate(
    preds: &[AlignmentRecord],
    gts: &[AlignmentRecord],
    scenes: &[SceneSample],
    nms_distance: f64,
    th: &Thresholds,
) -> Result<EvalReport> {
    let cams: HashMap<&str, _> = scenes.iter().map(|s| (s.id.as_str(), s.cam_to_world)).collect();
    let world = |recs: &[AlignmentRecord]| -> Result<Vec<AlignmentRecord>> {
        recs.iter()
            .map(|r| {
                cams.get(r.image_id.as_str())
                    .map(|c| to_world(r, c))
                    .ok_or_else(|| Error::Config(format!("record refers to unknown image '{}'", r.image_id)))
            })
            .collect()
    };
    let pw = world(preds)?;
    let gw = world(gts)?;
    let kept = nms3d(&pw, nms_distance);
    Ok(accuracy_report(&kept, &gw, &pw, th))
}

/// Mean translation error (m) of each trajectory step against its matched
/// annotation, camera frame. Records without trajectories are ignored.
pub fn trajectory_errors(preds: &[AlignmentRecord], gts: &[AlignmentRecord]) -> Vec<f64> {
    let pairs = crate::eval::match_records(preds, gts);
    let n = preds.iter().map(|p| p.trajectory.len()).max().unwrap_or(0);
    let mut sums = vec![0.0; n];
    let mut counts = vec![0usize; n];
    for (i, j) in pairs {
        for (k, p) in preds[i].trajectory.iter().enumerate() {
            sums[k] += (p.t - gts[j].pose.t).norm();
            counts[k] += 1;
        }
    }
    sums.iter().zip(&counts).map(|(s, &c)| if c == 0 { 0.0 } else { s / c as f64 }).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{angular_error, upright_rotation};
    use crate::refine::OracleRefiner;
    use crate::scene::{generate_scene, SceneConfig};
    use crate::shapes::Category;

    fn fixture() -> (Vec<SceneSample>, CadLibrary) {
        let lib = CadLibrary::build(&CadLibrary::recipes(&Category::ALL, 2, 5), 300, 12).unwrap();
        let cfg = SceneConfig { width: 160, height: 120, ..SceneConfig::default() };
        let scenes = (0..4).map(|i| generate_scene(&format!("s{i}"), &cfg, &lib, i).unwrap()).collect();
        (scenes, lib)
    }

    #[test]
    fn oracle_alignment_is_perfect() {
        let (scenes, lib) = fixture();
        let opts = AlignOptions { keep_trajectory: true, ..AlignOptions::default() };
        let preds = align_scenes(&OracleRefiner, &scenes, &lib, &opts).unwrap();
        let gts = gt_records(&scenes, &lib);
        assert!(!gts.is_empty());
        let r = evaluate(&preds, &gts, &scenes, 0.3, &Thresholds::default()).unwrap();
        assert_eq!((r.instance, r.class_average, r.rotation_class), (1.0, 1.0, 1.0));
        let errs = trajectory_errors(&preds, &gts);
        assert_eq!(errs.len(), 4);
        assert!(errs[0] > 0.0 && errs[1..].iter().all(|&e| e < 1e-9));

        let threaded = align_scenes(&OracleRefiner, &scenes, &lib, &AlignOptions { workers: 3, ..opts }).unwrap();
        assert_eq!(threaded, preds);
    }

    #[test]
    fn rotation_inits_override_bin_selection() {
        let (scenes, lib) = fixture();
        let q = upright_rotation(45.0, 10.0);
        let mut opts = AlignOptions { n_iter: 0, ..AlignOptions::default() };
        opts.rotation_inits.insert((scenes[0].id.clone(), 0), q);
        let preds = align_scene(&OracleRefiner, &scenes[0], &lib, &opts).unwrap();
        assert!(angular_error(&preds[0].pose.q, &q) < 1e-9);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rot.txt");
        std::fs::write(&path, "sparse-align-rotinit 1\ns0 0 1 0 0 0\ns1 2 0 0 1 0\n").unwrap();
        let inits = read_rotation_inits(&path).unwrap();
        assert_eq!(inits.len(), 2);
        assert_eq!(inits[&("s1".to_string(), 2)], Quat::new(0.0, 0.0, 1.0, 0.0));
    }

    #[test]
    fn unknown_images_are_rejected() {
        let (scenes, lib) = fixture();
        let mut gts = gt_records(&scenes, &lib);
        gts[0].image_id = "nope".into();
        assert!(evaluate(&[], &gts, &scenes, 0.3, &Thresholds::default()).is_err());
    }
}
