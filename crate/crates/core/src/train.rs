//! Training targets, the alignment loss, train-time pose sampling and the
//! self-refinement training loop.

use std::io::Write;

use ndarray::NdFloat;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{build_input, fourier_encode, Ablation, InputCounts, InputRequest};
use crate::geometry::{azimuth_bin_match, bearing, Intrinsics, Pose9, PoseUpdate, Quat, Vec3};
use crate::net::lamb::{lamb_step, LambConfig, LambState, TrustMode};
use crate::net::layers::cast;
use crate::net::{ArchConfig, Params, RawOutput, N_OUT};
use crate::scene::{filter_annotation, BBox, SceneSample};
use crate::seed;
use crate::shapes::CadLibrary;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub w_c: f64,
    pub w_t: f64,
    pub w_s: f64,
    pub w_q: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { w_c: 0.5, w_t: 0.5, w_s: 0.5, w_q: 1.0 }
    }
}

/// Supervision for one input pose.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Targets {
    pub dt: Vec3,
    pub dq: Quat,
    pub ds: Vec3,
    pub c_gt: bool,
}

impl Targets {
    pub fn as_update(&self) -> PoseUpdate {
        PoseUpdate { dt: self.dt, dq: self.dq, ds: self.ds, c: if self.c_gt { 1.0 } else { 0.0 } }
    }
}

/// The update that takes `init` to `gt`, and whether `init` lies in gt's
/// rotation bin.
pub fn compute_targets(init: &Pose9, gt: &Pose9) -> Targets {
    Targets {
        dt: gt.t - init.t,
        dq: init.q.conj().hamilton(&gt.q).canonical(),
        ds: gt.s - init.s,
        c_gt: azimuth_bin_match(&init.q, &gt.q, &gt.up_axis()),
    }
}

/// Weighted loss and its components (already multiplied by their weights).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossTerms {
    pub total: f64,
    pub bce: f64,
    pub t: f64,
    pub q: f64,
    pub s: f64,
}

impl LossTerms {
    pub fn add(&mut self, o: &LossTerms) {
        self.total += o.total;
        self.bce += o.bce;
        self.t += o.t;
        self.q += o.q;
        self.s += o.s;
    }

    pub fn scaled(&self, k: f64) -> LossTerms {
        LossTerms { total: self.total * k, bce: self.bce * k, t: self.t * k, q: self.q * k, s: self.s * k }
    }
}

fn to_f64<F: NdFloat>(x: F) -> f64 {
    num_traits::cast(x).expect("finite float")
}

/// `w_c BCE + w_t MSE(dt) + w_s MSE(ds) + w_q MSE(dq)`; the regression terms
/// vanish when `c_gt` is false. `dq` is normalized before comparison and the
/// target's sign is chosen to match it. Returns the gradient with respect to
/// the raw outputs.
pub fn loss<F: NdFloat>(out: &RawOutput<F>, t: &Targets, w: &LossWeights) -> Result<(LossTerms, [F; N_OUT])> {
    let mut g = [F::zero(); N_OUT];
    let z = out.logit;
    let y = if t.c_gt { F::one() } else { F::zero() };
    // softplus(z) - y z, written to avoid overflow
    let bce = z.max(F::zero()) - y * z + (F::one() + (-z.abs()).exp()).ln();
    let sig = F::one() / (F::one() + (-z).exp());
    let wc: F = cast(w.w_c);
    g[10] = wc * (sig - y);
    let mut terms = LossTerms { bce: to_f64(wc * bce), ..LossTerms::default() };

    if t.c_gt {
        let (wt, ws, wq): (F, F, F) = (cast(w.w_t), cast(w.w_s), cast(w.w_q));
        let (two, three, four): (F, F, F) = (cast(2.0), cast(3.0), cast(4.0));
        let mut lt = F::zero();
        let mut ls = F::zero();
        for i in 0..3 {
            let et = out.dt[i] - cast(t.dt[i]);
            let es = out.ds[i] - cast(t.ds[i]);
            lt += et * et;
            ls += es * es;
            g[i] = wt * two * et / three;
            g[7 + i] = ws * two * es / three;
        }
        let norm = out.dq.iter().fold(F::zero(), |a, &v| a + v * v).sqrt();
        if !(norm > F::zero()) {
            return Err(Error::NonFiniteLoss("rotation head output has zero norm".into()));
        }
        let n: [F; 4] = std::array::from_fn(|i| out.dq[i] / norm);
        let mut tq: [F; 4] = t.dq.to_array().map(cast);
        let dot = n.iter().zip(&tq).fold(F::zero(), |a, (&u, &v)| a + u * v);
        if dot < F::zero() {
            tq = tq.map(|v| -v);
        }
        let mut lq = F::zero();
        let dn: [F; 4] = std::array::from_fn(|i| {
            let e = n[i] - tq[i];
            lq += e * e;
            wq * two * e / four
        });
        // through the normalization: (I - n n^T) / |dq|
        let ndn = n.iter().zip(&dn).fold(F::zero(), |a, (&u, &v)| a + u * v);
        for i in 0..4 {
            g[3 + i] = (dn[i] - n[i] * ndn) / norm;
        }
        terms.t = to_f64(wt * lt / three);
        terms.s = to_f64(ws * ls / three);
        terms.q = to_f64(wq * lq / four);
    }
    terms.total = terms.bce + terms.t + terms.q + terms.s;
    if !terms.total.is_finite() {
        return Err(Error::NonFiniteLoss(format!("{terms:?}")));
    }
    Ok((terms, g))
}

/// Converts raw outputs to a pose update with a unit, `w >= 0` rotation.
pub fn to_update(out: &RawOutput<f32>) -> PoseUpdate {
    let dq = Quat::from_array(out.dq.map(|v| v as f64)).normalized().map(|q| q.canonical()).unwrap_or(Quat::IDENTITY);
    PoseUpdate {
        dt: Vec3::from(out.dt.map(|v| v as f64)),
        dq,
        ds: Vec3::from(out.ds.map(|v| v as f64)),
        c: out.confidence() as f64,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleMode {
    /// any azimuth; teaches the rotation-bin classifier
    Classify,
    /// azimuth within the correct bin; teaches the offsets
    Regress,
}

/// Perturbation ranges (full widths, degrees) around the gt rotation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoseSampling {
    pub depth_range: (f64, f64),
    pub regress_azimuth_deg: f64,
    pub tilt_deg: f64,
    pub elevation_deg: f64,
}

impl Default for PoseSampling {
    fn default() -> Self {
        PoseSampling { depth_range: (1.0, 5.0), regress_azimuth_deg: 90.0, tilt_deg: 20.0, elevation_deg: 40.0 }
    }
}

/// Rotates `q_gt` by `azimuth` about the object's own up axis, then by `tilt`
/// about the viewing axis and `elevation` about the camera x axis (degrees).
pub fn perturb_rotation(q_gt: &Quat, azimuth: f64, tilt: f64, elevation: f64) -> Quat {
    let az = Quat::from_axis_angle(&Vec3::y(), azimuth.to_radians());
    let ti = Quat::from_axis_angle(&Vec3::z(), tilt.to_radians());
    let el = Quat::from_axis_angle(&Vec3::x(), elevation.to_radians());
    (el * ti * *q_gt * az).canonical()
}

/// Draws a training initialization around `gt`.
pub fn sample_train_pose(
    gt: &Pose9,
    bbox: &BBox,
    k: &Intrinsics,
    scale_range: (f64, f64),
    mode: SampleMode,
    ranges: &PoseSampling,
    seed: u64,
) -> Pose9 {
    let mut rng = seed::rng(seed, &[0x7a1e]);
    let z = rng.random_range(ranges.depth_range.0..=ranges.depth_range.1);
    let u = rng.random_range(bbox.umin..=bbox.umax);
    let v = rng.random_range(bbox.vmin..=bbox.vmax);
    let t = bearing(k, u, v) * z;
    let (lo, hi) = scale_range;
    let s = Vec3::from_fn(|_, _| rng.random_range(lo..=hi));
    let half = |r: f64| 0.5 * r;
    loop {
        let tilt = rng.random_range(-half(ranges.tilt_deg)..=half(ranges.tilt_deg));
        let elev = rng.random_range(-half(ranges.elevation_deg)..=half(ranges.elevation_deg));
        let az = match mode {
            SampleMode::Classify => rng.random_range(-180.0..180.0),
            SampleMode::Regress => {
                let a = half(ranges.regress_azimuth_deg);
                rng.random_range(-a..=a)
            }
        };
        let q = perturb_rotation(&gt.q, az, tilt, elev);
        // tilt and elevation shift the measured azimuth slightly; keep
        // regression samples strictly inside the bin
        if mode == SampleMode::Classify || azimuth_bin_match(&q, &gt.q, &gt.up_axis()) {
            return Pose9::new(t, q, s);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub arch: ArchConfig,
    pub counts: InputCounts,
    pub lamb: LambConfig,
    pub weights: LossWeights,
    pub sampling: PoseSampling,
    pub batch_size: usize,
    pub epochs: u32,
    pub refinements: usize,
    pub classify_fraction: f64,
    pub seed: u64,
    /// 0 = all available cores
    pub workers: usize,
    pub checkpoint_every: u32,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            arch: ArchConfig::small(),
            counts: InputCounts::default(),
            lamb: LambConfig::default(),
            weights: LossWeights::default(),
            sampling: PoseSampling::default(),
            batch_size: 16,
            epochs: 300,
            refinements: 3,
            classify_fraction: 0.25,
            seed: 0,
            workers: 1,
            checkpoint_every: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        let w = &self.weights;
        if [w.w_c, w.w_t, w.w_s, w.w_q].iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.classify_fraction) {
            return Err(Error::Config("classify_fraction must lie in [0, 1]".into()));
        }
        if self.batch_size == 0 || self.refinements == 0 {
            return Err(Error::Config("batch_size and refinements must be positive".into()));
        }
        Ok(())
    }
}

/// One annotated object usable for training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrainItem {
    pub scene: usize,
    pub detection: usize,
}

/// Detections whose objects pass the annotation filter.
pub fn training_items(scenes: &[SceneSample], library: &CadLibrary) -> Vec<TrainItem> {
    let mut items = Vec::new();
    for (si, s) in scenes.iter().enumerate() {
        for (di, d) in s.boxes.iter().enumerate() {
            let obj = &s.objects[d.object];
            let Some(model) = library.get(obj.model_id) else {
                continue;
            };
            if filter_annotation(&s.maps, &s.intrinsics, obj, model) {
                items.push(TrainItem { scene: si, detection: di });
            }
        }
    }
    items
}

/// Network, optimizer state and the number of finished epochs.
#[derive(Debug, Clone, PartialEq)]
pub struct Trainer {
    pub params: Params<f32>,
    pub state: LambState<f32>,
    pub epoch: u32,
}

impl Trainer {
    pub fn new(cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let params = Params::init(&cfg.arch, seed::derive(cfg.seed, &[0x1a17]))?;
        let state = LambState::new(&params);
        Ok(Trainer { params, state, epoch: 0 })
    }
}

/// Averages over one (epoch, pass).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PassMetrics {
    pub epoch: u32,
    pub pass: usize,
    pub loss: LossTerms,
    /// classifier agreement with `c_gt` at threshold 0.5
    pub c_accuracy: f64,
    /// mean translation error of the input poses, meters
    pub t_error: f64,
    pub samples: usize,
}

pub const METRICS_HEADER: &str = "epoch,pass,loss,bce,t,q,s,c_accuracy,t_error,samples";

pub fn write_metrics_row(w: &mut impl Write, m: &PassMetrics) -> std::io::Result<()> {
    writeln!(
        w,
        "{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.4},{:.4},{}",
        m.epoch, m.pass, m.loss.total, m.loss.bce, m.loss.t, m.loss.q, m.loss.s, m.c_accuracy, m.t_error, m.samples
    )
}

/// Everything a worker needs for one forward/backward.
pub struct Example<'a> {
    pub scene: &'a SceneSample,
    pub library: &'a CadLibrary,
    pub detection: usize,
    pub pose: Pose9,
}

struct ExampleResult {
    terms: LossTerms,
    grads: Params<f32>,
    update: PoseUpdate,
    targets: Targets,
}

fn run_example(
    params: &Params<f32>,
    ex: &Example,
    counts: &InputCounts,
    weights: &LossWeights,
    seed: u64,
) -> Result<ExampleResult> {
    let det = &ex.scene.boxes[ex.detection];
    let obj = &ex.scene.objects[det.object];
    let model =
        ex.library.get(obj.model_id).ok_or_else(|| Error::Config(format!("unknown model id {}", obj.model_id)))?;
    let x = build_input(
        &InputRequest {
            maps: &ex.scene.maps,
            k: &ex.scene.intrinsics,
            model,
            pose: &ex.pose,
            bbox: &det.bbox,
            counts,
            ablation: &Ablation::default(),
        },
        seed,
    )?;
    let enc = fourier_encode(&x);
    let targets = compute_targets(&ex.pose, &obj.pose);
    let (out, cache) = crate::net::forward(params, &enc.view())?;
    let (terms, d_out) = loss(&out, &targets, weights)?;
    let grads = crate::net::backward(params, &cache, &d_out);
    Ok(ExampleResult { terms, grads, update: to_update(&out), targets })
}

/// Runs examples on up to `workers` threads; results keep input order.
fn run_batch(params: &Params<f32>, batch: &[Example], seeds: &[u64], cfg: &TrainConfig) -> Result<Vec<ExampleResult>> {
    let workers = effective_workers(cfg.workers).min(batch.len()).max(1);
    if workers == 1 {
        return batch.iter().zip(seeds).map(|(ex, &s)| run_example(params, ex, &cfg.counts, &cfg.weights, s)).collect();
    }
    let mut slots: Vec<Option<Result<ExampleResult>>> = (0..batch.len()).map(|_| None).collect();
    let chunk = batch.len().div_ceil(workers);
    std::thread::scope(|sc| {
        for ((exs, ss), out) in batch.chunks(chunk).zip(seeds.chunks(chunk)).zip(slots.chunks_mut(chunk)) {
            sc.spawn(move || {
                for ((ex, &s), o) in exs.iter().zip(ss).zip(out.iter_mut()) {
                    *o = Some(run_example(params, ex, &cfg.counts, &cfg.weights, s));
                }
            });
        }
    });
    slots.into_iter().map(|s| s.expect("every slot filled")).collect()
}

pub fn effective_workers(requested: usize) -> usize {
    if requested == 0 {
        std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
    } else {
        requested
    }
}

/// One epoch of self-refinement training. Each batch is optimized
/// `cfg.refinements` times: after every pass, samples whose initialization
/// lies in the correct bin move to the pose the network just predicted
/// (treated as a constant), and the next pass trains on that pose.
pub fn train_epoch(
    trainer: &mut Trainer,
    scenes: &[SceneSample],
    library: &CadLibrary,
    items: &[TrainItem],
    cfg: &TrainConfig,
) -> Result<Vec<PassMetrics>> {
    if items.is_empty() {
        return Err(Error::Config("no training items".into()));
    }
    let epoch = trainer.epoch;
    let mut rng = seed::rng(cfg.seed, &[0xe90c, epoch as u64]);
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.shuffle(&mut rng);
    let mut sums = vec![PassMetrics::default(); cfg.refinements];

    for (bi, batch_idx) in order.chunks(cfg.batch_size).enumerate() {
        let mut examples: Vec<Example> = Vec::with_capacity(batch_idx.len());
        for &i in batch_idx {
            let it = items[i];
            let scene = &scenes[it.scene];
            let det = &scene.boxes[it.detection];
            let gt = &scene.objects[det.object];
            let sample_seed = seed::derive(cfg.seed, &[0x5a3, epoch as u64, i as u64]);
            let mode = if seed::rng(sample_seed, &[0]).random::<f64>() < cfg.classify_fraction {
                SampleMode::Classify
            } else {
                SampleMode::Regress
            };
            let pose = sample_train_pose(
                &gt.pose,
                &det.bbox,
                &scene.intrinsics,
                gt.category.scale_range(),
                mode,
                &cfg.sampling,
                sample_seed,
            );
            examples.push(Example { scene, library, detection: it.detection, pose });
        }
        for (pass, m) in sums.iter_mut().enumerate() {
            let seeds: Vec<u64> = batch_idx
                .iter()
                .map(|&i| seed::derive(cfg.seed, &[0x1a9, epoch as u64, i as u64, pass as u64]))
                .collect();
            let results = run_batch(&trainer.params, &examples, &seeds, cfg)?;
            let n = results.len() as f32;
            let mut total = Params::zeros(&cfg.arch);
            for r in &results {
                total.add_assign(&r.grads);
                m.loss.add(&r.terms);
                m.c_accuracy += ((r.update.c >= 0.5) == r.targets.c_gt) as u8 as f64;
                m.t_error += r.targets.dt.norm();
                m.samples += 1;
            }
            total.scale(1.0 / n);
            if !total.all_finite() {
                return Err(Error::NonFiniteLoss(format!("non-finite gradient in epoch {epoch}, batch {bi}")));
            }
            lamb_step(&mut trainer.params, &total, &mut trainer.state, &cfg.lamb, TrustMode::Layerwise);
            for (r, ex) in results.iter().zip(examples.iter_mut()) {
                // updates that would leave the view frustum are dropped
                if let (true, Some((next, _))) = (r.targets.c_gt, r.update.apply_guarded(&ex.pose)) {
                    ex.pose = next;
                }
            }
        }
    }
    trainer.epoch += 1;
    Ok(sums
        .into_iter()
        .enumerate()
        .map(|(pass, m)| {
            let k = 1.0 / m.samples.max(1) as f64;
            PassMetrics {
                epoch,
                pass,
                loss: m.loss.scaled(k),
                c_accuracy: m.c_accuracy * k,
                t_error: m.t_error * k,
                samples: m.samples,
            }
        })
        .collect())
}
