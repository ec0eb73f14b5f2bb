//! Test-time alignment: initialization from a detection, rotation-bin
//! selection and iterative refinement.

use crate::error::Result;
use crate::fusion::{build_input, fourier_encode, Ablation, InputCounts, InputRequest};
use crate::geometry::{bearing, upright_rotation, Intrinsics, Pose9, PoseUpdate, Quat};
use crate::net::{predict, Params};
use crate::scene::{BBox, Maps};
use crate::seed;
use crate::shapes::{CadModel, Category};
use crate::train::{compute_targets, to_update};

/// Depth (m) of the initial translation.
pub const INIT_DEPTH: f64 = 3.0;
/// Elevation (deg) of the initial rotations.
pub const INIT_ELEVATION_DEG: f64 = 20.0;
pub const AZIMUTH_BINS: [f64; 4] = [0.0, 90.0, 180.0, 270.0];

/// Initial pose: 3 m deep behind the box center, upright at the given
/// azimuth, median category scale.
pub fn init_test_pose(bbox: &BBox, k: &Intrinsics, category: Category, azimuth_deg: f64) -> Pose9 {
    let (u, v) = bbox.center();
    Pose9::new(
        bearing(k, u, v) * INIT_DEPTH,
        upright_rotation(azimuth_deg, INIT_ELEVATION_DEG),
        category.median_scale(),
    )
}

/// What a refiner sees of one detection.
pub struct AlignContext<'a> {
    pub maps: &'a Maps,
    pub k: &'a Intrinsics,
    pub model: &'a CadModel,
    pub bbox: &'a BBox,
    /// ground truth, only used by [`OracleRefiner`]
    pub gt: Option<&'a Pose9>,
}

/// Predicts a pose update for the current pose.
pub trait Refiner {
    fn update(&self, ctx: &AlignContext, pose: &Pose9, seed: u64) -> Result<PoseUpdate>;
}

/// The learned network.
pub struct NetRefiner<'a> {
    pub params: &'a Params<f32>,
    pub counts: InputCounts,
    pub ablation: Ablation,
}

impl Refiner for NetRefiner<'_> {
    fn update(&self, ctx: &AlignContext, pose: &Pose9, seed: u64) -> Result<PoseUpdate> {
        let x = build_input(
            &InputRequest {
                maps: ctx.maps,
                k: ctx.k,
                model: ctx.model,
                pose,
                bbox: ctx.bbox,
                counts: &self.counts,
                ablation: &self.ablation,
            },
            seed,
        )?;
        let out = predict(self.params, &fourier_encode(&x).view())?;
        Ok(to_update(&out))
    }
}

/// Closed-form update towards the known ground truth.
pub struct OracleRefiner;

/// Update that lands exactly on `gt`, with `c = 1` iff `pose` is in gt's
/// rotation bin.
pub fn oracle_refine(gt: &Pose9, pose: &Pose9) -> PoseUpdate {
    compute_targets(pose, gt).as_update()
}

impl Refiner for OracleRefiner {
    fn update(&self, ctx: &AlignContext, pose: &Pose9, _seed: u64) -> Result<PoseUpdate> {
        let gt = ctx.gt.ok_or_else(|| crate::Error::Config("oracle refiner needs ground truth".into()))?;
        Ok(oracle_refine(gt, pose))
    }
}

/// Evaluates the four azimuth initializations; returns the index with the
/// highest `c` (first one on ties) and all four scores.
pub fn select_rotation_bin(
    refiner: &dyn Refiner,
    ctx: &AlignContext,
    category: Category,
    seed: u64,
) -> Result<(usize, [f64; 4])> {
    let mut c = [0.0; 4];
    let mut best = 0;
    for (i, &az) in AZIMUTH_BINS.iter().enumerate() {
        let init = init_test_pose(ctx.bbox, ctx.k, category, az);
        c[i] = refiner.update(ctx, &init, seed::derive(seed, &[0xb1, i as u64]))?.c;
        if c[i] > c[best] {
            best = i;
        }
    }
    Ok((best, c))
}

/// Poses visited by the refinement loop, starting with the initialization.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub poses: Vec<Pose9>,
    /// confidence predicted at each visited pose except the last
    pub scores: Vec<f64>,
    /// some update would have made a scale component non-positive
    pub scale_clamped: bool,
    /// some update was dropped because it left the view frustum
    pub rejected: bool,
}

impl Trajectory {
    pub fn last(&self) -> &Pose9 {
        self.poses.last().expect("trajectory starts with the initial pose")
    }
}

/// `n_iter` rounds of: assemble input at the current pose, predict, apply.
/// Pixels are re-sampled every round from a fresh sub-stream of `seed`.
pub fn refine(refiner: &dyn Refiner, ctx: &AlignContext, init: &Pose9, n_iter: usize, seed: u64) -> Result<Trajectory> {
    let mut traj =
        Trajectory { poses: vec![*init], scores: Vec::with_capacity(n_iter), scale_clamped: false, rejected: false };
    for it in 0..n_iter {
        let pose = *traj.last();
        let upd = refiner.update(ctx, &pose, seed::derive(seed, &[0x7e, it as u64]))?;
        let (next, clamped) = upd.apply_guarded(&pose).unwrap_or_else(|| {
            log::warn!("refinement step {it} would move the object behind the camera; pose kept");
            traj.rejected = true;
            (pose, false)
        });
        if clamped {
            log::warn!("scale clamped during refinement step {it}");
        }
        traj.scale_clamped |= clamped;
        traj.scores.push(upd.c);
        traj.poses.push(next);
    }
    Ok(traj)
}

/// Result of aligning one detection.
#[derive(Debug, Clone, PartialEq)]
pub struct Alignment {
    pub pose: Pose9,
    /// classifier confidence of the chosen initialization
    pub score: f64,
    pub init_q: Quat,
    pub trajectory: Trajectory,
}

/// Full test procedure: bin selection (unless a rotation is given), then
/// `n_iter` refinements from the chosen initialization.
pub fn align_detection(
    refiner: &dyn Refiner,
    ctx: &AlignContext,
    category: Category,
    n_iter: usize,
    rotation_init: Option<Quat>,
    seed: u64,
) -> Result<Alignment> {
    let (init, score) = match rotation_init {
        Some(q) => {
            let mut p = init_test_pose(ctx.bbox, ctx.k, category, 0.0);
            p.q = q.normalized()?;
            let c = refiner.update(ctx, &p, seed::derive(seed, &[0xb1, 9]))?.c;
            (p, c)
        }
        None => {
            let (bin, c) = select_rotation_bin(refiner, ctx, category, seed)?;
            (init_test_pose(ctx.bbox, ctx.k, category, AZIMUTH_BINS[bin]), c[bin])
        }
    };
    let trajectory = refine(refiner, ctx, &init, n_iter, seed)?;
    Ok(Alignment { pose: *trajectory.last(), score, init_q: init.q, trajectory })
}
