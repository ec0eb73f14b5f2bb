//! Synthetic scenes: object placement on a ground plane, ground-truth map
//! rendering, detections and annotation filtering.

pub mod render;

use nalgebra::Matrix3;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::{Normal, UnitSphere};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{apply_pose, project, Intrinsics, Pose9, Quat, Rigid, Vec3};
use crate::seed;
use crate::shapes::{CadLibrary, CadModel, Category};

pub use render::Maps;

/// Scene generator settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub width: u32,
    pub height: u32,
    pub hfov_deg: f64,
    pub min_objects: usize,
    pub max_objects: usize,
    /// relative category frequencies
    pub category_mix: Vec<(Category, f64)>,
    pub camera_height: (f64, f64),
    pub camera_pitch_deg: (f64, f64),
    /// camera-frame z range for object centers
    pub depth_range: (f64, f64),
    /// fraction of the image width kept free at each side for object centers
    pub margin: f64,
    pub max_retries: usize,
    pub box_jitter: f64,
    pub depth_noise: f64,
    pub normal_noise_deg: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            width: 480,
            height: 360,
            hfov_deg: 60.0,
            min_objects: 1,
            max_objects: 5,
            category_mix: Category::ALL.iter().map(|&c| (c, 1.0)).collect(),
            camera_height: (1.2, 1.6),
            camera_pitch_deg: (15.0, 25.0),
            depth_range: (1.5, 4.5),
            margin: 0.1,
            max_retries: 200,
            box_jitter: 0.0,
            depth_noise: 0.0,
            normal_noise_deg: 0.0,
        }
    }
}

impl SceneConfig {
    pub fn intrinsics(&self) -> Intrinsics {
        Intrinsics::from_fov(self.width, self.height, self.hfov_deg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.min_objects == 0 || self.min_objects > self.max_objects {
            return bad("object count range must satisfy 1 <= min <= max");
        }
        if self.category_mix.is_empty() || self.category_mix.iter().any(|(_, w)| !(*w >= 0.0)) {
            return bad("category mix must be non-empty with non-negative weights");
        }
        if !(self.depth_range.0 >= 1.0 && self.depth_range.1 <= 5.0 && self.depth_range.0 < self.depth_range.1) {
            return bad("depth range must lie within [1, 5] m");
        }
        if self.camera_pitch_deg.0 > self.camera_pitch_deg.1 || self.camera_height.0 > self.camera_height.1 {
            return bad("camera ranges must be ordered");
        }
        self.intrinsics().validate()
    }
}

/// One annotated object.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneObject {
    pub model_id: u32,
    pub category: Category,
    /// ground-truth pose in the camera frame
    pub pose: Pose9,
}

/// Axis-aligned image box in pixels (inclusive bounds).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub umin: f64,
    pub vmin: f64,
    pub umax: f64,
    pub vmax: f64,
}

impl BBox {
    pub fn center(&self) -> (f64, f64) {
        (0.5 * (self.umin + self.umax), 0.5 * (self.vmin + self.vmax))
    }

    pub fn width(&self) -> f64 {
        self.umax - self.umin
    }

    pub fn height(&self) -> f64 {
        self.vmax - self.vmin
    }

    pub fn diagonal(&self) -> f64 {
        self.width().hypot(self.height())
    }

    pub fn contains(&self, u: f64, v: f64) -> bool {
        u >= self.umin && u <= self.umax && v >= self.vmin && v <= self.vmax
    }

    pub fn clip(&self, k: &Intrinsics) -> BBox {
        let (w, h) = ((k.width - 1) as f64, (k.height - 1) as f64);
        BBox {
            umin: self.umin.clamp(0.0, w),
            vmin: self.vmin.clamp(0.0, h),
            umax: self.umax.clamp(0.0, w),
            vmax: self.vmax.clamp(0.0, h),
        }
    }
}

/// A 2D detection tied to the object it came from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub object: usize,
    pub category: Category,
    pub bbox: BBox,
}

#[derive(Debug, Clone)]
pub struct SceneSample {
    pub id: String,
    pub intrinsics: Intrinsics,
    pub cam_to_world: Rigid,
    pub objects: Vec<SceneObject>,
    pub maps: Maps,
    pub boxes: Vec<Detection>,
}

/// Camera at height `h` above the world origin looking along world -z,
/// pitched down by `pitch_deg`. World frame: y up.
pub fn camera_pose(height: f64, pitch_deg: f64) -> Rigid {
    let e = pitch_deg.to_radians();
    let x = Vec3::x();
    let y = Vec3::new(0.0, -e.cos(), e.sin());
    let z = Vec3::new(0.0, -e.sin(), -e.cos());
    let r = Matrix3::from_columns(&[x, y, z]);
    Rigid { q: Quat::from_matrix(&r), t: Vec3::new(0.0, height, 0.0) }
}

/// Generates one scene: 1..N non-overlapping upright objects on the ground,
/// all centers projecting into the image at camera depth within range.
pub fn generate_scene(id: &str, cfg: &SceneConfig, library: &CadLibrary, seed: u64) -> Result<SceneSample> {
    cfg.validate()?;
    let mut rng = seed::rng(seed, &[0x5ce7e]);
    let k = cfg.intrinsics();
    let cam_h = rng.random_range(cfg.camera_height.0..=cfg.camera_height.1);
    let pitch = rng.random_range(cfg.camera_pitch_deg.0..=cfg.camera_pitch_deg.1);
    let cam = camera_pose(cam_h, pitch);
    let world_to_cam = cam.inverse();
    let e = pitch.to_radians();

    let weights: Vec<f64> = cfg.category_mix.iter().map(|(_, w)| *w).collect();
    let cat_dist = WeightedIndex::new(&weights).map_err(|e| Error::Config(e.to_string()))?;
    let n_obj = rng.random_range(cfg.min_objects..=cfg.max_objects);

    let mut objects = Vec::with_capacity(n_obj);
    // (x, z, radius) ground footprints
    let mut footprints: Vec<(f64, f64, f64)> = Vec::new();
    for _ in 0..n_obj {
        let category = cfg.category_mix[cat_dist.sample(&mut rng)].0;
        let candidates: Vec<&CadModel> = library.of_category(category).collect();
        if candidates.is_empty() {
            return Err(Error::Config(format!("library has no '{category}' models")));
        }
        let model = candidates[rng.random_range(0..candidates.len())];
        let (lo, hi) = category.scale_range();
        let s = Vec3::new(rng.random_range(lo..=hi), rng.random_range(lo..=hi), rng.random_range(lo..=hi));
        let azimuth = rng.random_range(0.0..360.0f64);
        let he = model.half_extents();
        let radius = (s.x * he.x).hypot(s.z * he.z);
        let center_y = -s.y * model.bottom();

        let mut placed = None;
        for _ in 0..cfg.max_retries {
            let z = rng.random_range(cfg.depth_range.0..=cfg.depth_range.1);
            let u = rng.random_range(cfg.margin * k.width as f64..=(1.0 - cfg.margin) * k.width as f64);
            let wx = (u - k.cx) * z / k.fx;
            let wz = -(z + e.sin() * (center_y - cam_h)) / e.cos();
            let overlap = footprints.iter().any(|&(x, zz, r)| (x - wx).hypot(zz - wz) < r + radius);
            if overlap {
                continue;
            }
            let center_cam = world_to_cam.apply(&Vec3::new(wx, center_y, wz));
            let Ok((pu, pv, pz)) = project(&k, &center_cam) else {
                continue;
            };
            if !k.contains(pu, pv) || !(1.0..=5.0).contains(&pz) {
                continue;
            }
            placed = Some((wx, wz, center_cam));
            break;
        }
        let Some((wx, wz, t)) = placed else {
            return Err(Error::PlacementFailed(cfg.max_retries));
        };
        footprints.push((wx, wz, radius));
        let q_world = Quat::from_axis_angle(&Vec3::y(), azimuth.to_radians());
        objects.push(SceneObject { model_id: model.id, category, pose: Pose9::new(t, world_to_cam.q * q_world, s) });
    }

    let mut scene = SceneSample {
        id: id.to_string(),
        intrinsics: k,
        cam_to_world: cam,
        objects,
        maps: Maps::new(0, 0),
        boxes: Vec::new(),
    };
    scene.maps = render_gt_maps(&scene, library)?;
    scene.boxes = detect_boxes(&scene, cfg.box_jitter, seed::derive(seed, &[0xb0c5]));
    if cfg.depth_noise > 0.0 || cfg.normal_noise_deg > 0.0 {
        scene.maps = add_noise(&scene.maps, cfg.depth_noise, cfg.normal_noise_deg, seed::derive(seed, &[0x7015e]));
    }
    Ok(scene)
}

/// Rasterizes ground plane and objects into fresh ground-truth maps.
pub fn render_gt_maps(scene: &SceneSample, library: &CadLibrary) -> Result<Maps> {
    let mut items = Vec::with_capacity(scene.objects.len());
    for o in &scene.objects {
        let model = library.get(o.model_id).ok_or_else(|| Error::Config(format!("unknown model id {}", o.model_id)))?;
        items.push(render::RenderItem { mesh: &model.mesh, pose: &o.pose, color: o.category.color() });
    }
    Ok(render::render(&scene.intrinsics, &scene.cam_to_world, &items))
}

/// Gaussian depth noise and random small normal rotations.
pub fn add_noise(maps: &Maps, depth_sigma: f64, normal_sigma_deg: f64, seed: u64) -> Maps {
    let mut out = maps.clone();
    if depth_sigma <= 0.0 && normal_sigma_deg <= 0.0 {
        return out;
    }
    let mut rng = seed::rng(seed, &[0]);
    let dn = Normal::new(0.0, depth_sigma.max(0.0)).expect("finite sigma");
    let an = Normal::new(0.0, normal_sigma_deg.max(0.0).to_radians()).expect("finite sigma");
    for i in 0..out.depth.len() {
        if out.depth[i] <= 0.0 {
            continue;
        }
        if depth_sigma > 0.0 {
            let d = out.depth[i] as f64 + dn.sample(&mut rng);
            out.depth[i] = d.max(1e-3) as f32;
        }
        if normal_sigma_deg > 0.0 {
            let axis: [f64; 3] = UnitSphere.sample(&mut rng);
            let q = Quat::from_axis_angle(&Vec3::from(axis), an.sample(&mut rng));
            let n = Vec3::new(out.normal[3 * i] as f64, out.normal[3 * i + 1] as f64, out.normal[3 * i + 2] as f64);
            let r = q.rotate(&n).normalize();
            out.normal[3 * i..3 * i + 3].copy_from_slice(&[r.x as f32, r.y as f32, r.z as f32]);
        }
    }
    out
}

/// Tight boxes around each object's visible pixels, optionally jittered by
/// up to `jitter` of the box size in center and extent. Fully occluded
/// objects get no box.
pub fn detect_boxes(scene: &SceneSample, jitter: f64, seed: u64) -> Vec<Detection> {
    let maps = &scene.maps;
    let n = scene.objects.len();
    let mut bounds = vec![(usize::MAX, usize::MAX, 0usize, 0usize, false); n];
    for v in 0..maps.height {
        for u in 0..maps.width {
            let inst = maps.instance[maps.index(u, v)];
            if inst >= 0 {
                let b = &mut bounds[inst as usize];
                b.0 = b.0.min(u);
                b.1 = b.1.min(v);
                b.2 = b.2.max(u);
                b.3 = b.3.max(v);
                b.4 = true;
            }
        }
    }
    let mut rng = seed::rng(seed, &[1]);
    let mut out = Vec::new();
    for (i, b) in bounds.iter().enumerate() {
        if !b.4 {
            continue;
        }
        let mut bbox = BBox { umin: b.0 as f64, vmin: b.1 as f64, umax: b.2 as f64, vmax: b.3 as f64 };
        if jitter > 0.0 {
            let (cu, cv) = bbox.center();
            let (w, h) = (bbox.width(), bbox.height());
            let cu = cu + rng.random_range(-jitter..=jitter) * 0.5 * w;
            let cv = cv + rng.random_range(-jitter..=jitter) * 0.5 * h;
            let w = w * (1.0 + rng.random_range(-jitter..=jitter));
            let h = h * (1.0 + rng.random_range(-jitter..=jitter));
            bbox = BBox { umin: cu - 0.5 * w, vmin: cv - 0.5 * h, umax: cu + 0.5 * w, vmax: cv + 0.5 * h }
                .clip(&scene.intrinsics);
        }
        out.push(Detection { object: i, category: scene.objects[i].category, bbox });
    }
    out
}

/// Minimum fraction of reprojected points that must agree with the depth map.
pub const FILTER_MIN_FRACTION: f64 = 0.5;
/// Agreement tolerance in meters.
pub const FILTER_DEPTH_TOL: f64 = 0.30;

/// Keeps an annotation iff its center projects into the image and at least
/// half of the model's reprojected points (those landing in the image) lie
/// within 30 cm of the depth map.
pub fn filter_annotation(maps: &Maps, k: &Intrinsics, object: &SceneObject, model: &CadModel) -> bool {
    match project(k, &object.pose.t) {
        Ok((u, v, _)) if k.contains(u, v) => {}
        _ => return false,
    }
    let mut total = 0usize;
    let mut close = 0usize;
    for p in &model.points {
        let x = apply_pose(&object.pose, p);
        let Ok((u, v, z)) = project(k, &x) else {
            continue;
        };
        let (ui, vi) = (u.round(), v.round());
        if !k.contains(ui, vi) {
            continue;
        }
        total += 1;
        let d = maps.depth_at(ui as usize, vi as usize) as f64;
        if d > 0.0 && (d - z).abs() <= FILTER_DEPTH_TOL {
            close += 1;
        }
    }
    total > 0 && close as f64 >= FILTER_MIN_FRACTION * total as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::upright_rotation;
    use crate::shapes::ShapeParams;

    fn library() -> CadLibrary {
        CadLibrary::build(&CadLibrary::recipes(&Category::ALL, 2, 3), 500, 12).unwrap()
    }

    fn single_box_scene(pose: Pose9, extents: [f64; 3]) -> (SceneSample, CadLibrary) {
        let model = CadModel::build(0, Category::Cabinet, ShapeParams::Box { extents }, 2000, 12, 1).unwrap();
        let lib = CadLibrary { models: vec![model], id_bits: 12 };
        let k = Intrinsics::from_fov(480, 360, 60.0);
        let mut scene = SceneSample {
            id: "t".into(),
            intrinsics: k,
            cam_to_world: camera_pose(1.4, 20.0),
            objects: vec![SceneObject { model_id: 0, category: Category::Cabinet, pose }],
            maps: Maps::new(0, 0),
            boxes: vec![],
        };
        scene.maps = render_gt_maps(&scene, &lib).unwrap();
        (scene, lib)
    }

    #[test]
    fn frontal_box_face_has_exact_depth_and_normal() {
        let pose = Pose9::new(Vec3::new(0.0, 0.0, 2.5), Quat::IDENTITY, Vec3::repeat(1.0));
        let (scene, _) = single_box_scene(pose, [1.0, 1.0, 1.0]);
        let m = &scene.maps;
        let mut seen = 0;
        for i in 0..m.depth.len() {
            if m.instance[i] == 0 {
                seen += 1;
                assert!((m.depth[i] - 2.0).abs() < 1e-6);
                assert_eq!(&m.normal[3 * i..3 * i + 3], &[0.0, 0.0, -1.0]);
            }
        }
        assert!(seen > 1000);
    }

    #[test]
    fn rendered_normals_are_unit_where_valid() {
        let lib = library();
        let scene = generate_scene("s", &SceneConfig::default(), &lib, 4).unwrap();
        let m = &scene.maps;
        for i in 0..m.depth.len() {
            let n = &m.normal[3 * i..3 * i + 3];
            let len = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
            if m.depth[i] > 0.0 {
                assert!((len - 1.0).abs() < 1e-5);
            } else {
                assert_eq!(len, 0.0);
            }
        }
    }

    #[test]
    fn occluder_wins_the_z_buffer() {
        let lib = CadLibrary {
            models: vec![CadModel::build(
                0,
                Category::Cabinet,
                ShapeParams::Box { extents: [1.0, 1.0, 1.0] },
                500,
                12,
                1,
            )
            .unwrap()],
            id_bits: 12,
        };
        let k = Intrinsics::from_fov(480, 360, 60.0);
        let near = Pose9::new(Vec3::new(0.0, 0.0, 2.0), Quat::IDENTITY, Vec3::repeat(0.5));
        let far = Pose9::new(Vec3::new(0.1, 0.0, 4.0), Quat::IDENTITY, Vec3::repeat(1.0));
        let mut scene = SceneSample {
            id: "o".into(),
            intrinsics: k,
            cam_to_world: camera_pose(1.4, 0.0),
            objects: vec![
                SceneObject { model_id: 0, category: Category::Cabinet, pose: far },
                SceneObject { model_id: 0, category: Category::Cabinet, pose: near },
            ],
            maps: Maps::new(0, 0),
            boxes: vec![],
        };
        scene.maps = render_gt_maps(&scene, &lib).unwrap();
        let (u, v) = (k.cx.round() as usize, k.cy.round() as usize);
        assert_eq!(scene.maps.instance[scene.maps.index(u, v)], 1);
        assert!((scene.maps.depth_at(u, v) - 1.75).abs() < 1e-5);
    }

    #[test]
    fn raster_depth_matches_visible_surface_points() {
        let pose = Pose9::new(Vec3::new(0.2, 0.1, 3.0), upright_rotation(35.0, 20.0), Vec3::new(0.8, 0.9, 0.7));
        let (scene, lib) = single_box_scene(pose, [0.8, 1.0, 0.6]);
        let k = scene.intrinsics;
        let model = &lib.models[0];
        let mut checked = 0;
        for (p, n) in model.points.iter().zip(&model.normals) {
            let x = apply_pose(&pose, p);
            let nc = crate::geometry::transform_normal(&pose, n).unwrap();
            // front-facing points away from silhouette edges
            if nc.dot(&x.normalize()) > -0.3 {
                continue;
            }
            let (u, v, z) = project(&k, &x).unwrap();
            let (ui, vi) = (u.round() as usize, v.round() as usize);
            if scene.maps.instance[scene.maps.index(ui, vi)] != 0 {
                continue;
            }
            // depth variation across half a pixel on this plane
            let slope = z * (0.5 / k.fx) * (nc.x.abs() + nc.y.abs()) / nc.z.abs().max(0.05);
            let d = scene.maps.depth_at(ui, vi) as f64;
            assert!((d - z).abs() <= slope * 2.0 + 1e-4, "d {d} z {z} slope {slope}");
            checked += 1;
        }
        assert!(checked > 200);
    }

    #[test]
    fn generation_is_deterministic_and_constrained() {
        let lib = library();
        let cfg = SceneConfig::default();
        let a = generate_scene("a", &cfg, &lib, 42).unwrap();
        let b = generate_scene("a", &cfg, &lib, 42).unwrap();
        assert_eq!(a.maps, b.maps);
        assert_eq!(a.objects, b.objects);
        for o in &a.objects {
            let (u, v, z) = project(&a.intrinsics, &o.pose.t).unwrap();
            assert!(a.intrinsics.contains(u, v));
            assert!((1.0..=5.0).contains(&z));
        }
        let single = SceneConfig {
            min_objects: 1,
            max_objects: 1,
            category_mix: vec![(Category::Cabinet, 1.0)],
            ..SceneConfig::default()
        };
        let s = generate_scene("b", &single, &lib, 1).unwrap();
        assert_eq!(s.objects.len(), 1);
        assert_eq!(s.objects[0].category, Category::Cabinet);
    }

    #[test]
    fn category_mix_is_respected() {
        let lib = library();
        let cfg = SceneConfig {
            category_mix: vec![(Category::Chair, 2.0), (Category::Table, 1.0), (Category::Bin, 1.0)],
            max_objects: 3,
            ..SceneConfig::default()
        };
        let mut counts = std::collections::HashMap::new();
        let mut total = 0usize;
        for i in 0..500 {
            let s = generate_scene("m", &cfg, &lib, 1000 + i).unwrap();
            for o in &s.objects {
                *counts.entry(o.category).or_insert(0usize) += 1;
                total += 1;
            }
        }
        for (c, w) in [(Category::Chair, 0.5), (Category::Table, 0.25), (Category::Bin, 0.25)] {
            let frac = counts[&c] as f64 / total as f64;
            assert!((frac - w).abs() <= 0.1 * w, "{c}: {frac}");
        }
    }

    #[test]
    fn camera_matches_upright_init_convention() {
        let cam = camera_pose(1.3, 20.0);
        let q = cam.q.conj() * Quat::from_axis_angle(&Vec3::y(), 0.7);
        let init = upright_rotation(0.7f64.to_degrees(), 20.0);
        assert!(crate::geometry::angular_error(&q, &init) < 1e-9);
    }

    #[test]
    fn noise_statistics() {
        let mut m = Maps::new(200, 200);
        for i in 0..m.depth.len() {
            m.depth[i] = 2.0;
            m.normal[3 * i + 2] = -1.0;
        }
        assert_eq!(add_noise(&m, 0.0, 0.0, 1), m);
        let n = add_noise(&m, 0.05, 5.0, 1);
        let mean = n.depth.iter().map(|&d| d as f64).sum::<f64>() / n.depth.len() as f64;
        let var = n.depth.iter().map(|&d| (d as f64 - mean).powi(2)).sum::<f64>() / (n.depth.len() - 1) as f64;
        assert!((var.sqrt() - 0.05).abs() < 0.005);
        for c in n.normal.chunks(3) {
            let len = (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt();
            assert!((len - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn boxes_are_tight_and_jitter_is_bounded() {
        let lib = library();
        let scene = generate_scene("j", &SceneConfig::default(), &lib, 8).unwrap();
        let b0 = detect_boxes(&scene, 0.0, 1);
        assert_eq!(b0, detect_boxes(&scene, 0.0, 99));
        for d in &b0 {
            let m = &scene.maps;
            let mut lo = (usize::MAX, usize::MAX);
            let mut hi = (0, 0);
            for v in 0..m.height {
                for u in 0..m.width {
                    if m.instance[m.index(u, v)] == d.object as i32 {
                        lo = (lo.0.min(u), lo.1.min(v));
                        hi = (hi.0.max(u), hi.1.max(v));
                    }
                }
            }
            assert_eq!((d.bbox.umin, d.bbox.vmin), (lo.0 as f64, lo.1 as f64));
            assert_eq!((d.bbox.umax, d.bbox.vmax), (hi.0 as f64, hi.1 as f64));
        }
        let visible = (0..scene.objects.len()).filter(|&i| scene.maps.instance.contains(&(i as i32))).count();
        assert_eq!(b0.len(), visible);
        assert!(b0.len() <= scene.objects.len());
        for seed in 0..20 {
            for (a, b) in b0.iter().zip(detect_boxes(&scene, 0.1, seed)) {
                let (ca, cb) = (a.bbox.center(), b.bbox.center());
                let clipped = b.bbox.umin == 0.0 || b.bbox.vmin == 0.0 || b.bbox.umax == 479.0 || b.bbox.vmax == 359.0;
                if !clipped {
                    assert!((ca.0 - cb.0).hypot(ca.1 - cb.1) <= 0.1 * a.bbox.diagonal() + 1e-9);
                }
            }
        }
    }

    #[test]
    fn annotation_filter_cases() {
        // shallow box facing the camera, unoccluded
        let pose = Pose9::new(Vec3::new(0.0, 0.0, 2.5), Quat::IDENTITY, Vec3::repeat(1.0));
        let (scene, lib) = single_box_scene(pose, [1.0, 1.0, 0.2]);
        let k = scene.intrinsics;
        assert!(filter_annotation(&scene.maps, &k, &scene.objects[0], &lib.models[0]));

        // wall in front: every map depth far from the object
        let mut walled = scene.maps.clone();
        walled.depth.iter_mut().for_each(|d| *d = 1.0);
        assert!(!filter_annotation(&walled, &k, &scene.objects[0], &lib.models[0]));

        // center behind the camera view
        let mut off = scene.objects[0].clone();
        off.pose.t = Vec3::new(10.0, 0.0, 2.5);
        assert!(!filter_annotation(&scene.maps, &k, &off, &lib.models[0]));
    }

    #[test]
    fn annotation_filter_half_occlusion_is_inclusive() {
        // flat card facing the camera; occlude exactly the pixels of half of
        // its in-image points with a near plane
        let model =
            CadModel::build(0, Category::Cabinet, ShapeParams::Box { extents: [1.0, 1.0, 0.01] }, 400, 12, 5).unwrap();
        let pose = Pose9::new(Vec3::new(0.0, 0.0, 2.0), Quat::IDENTITY, Vec3::repeat(1.0));
        let k = Intrinsics::from_fov(480, 360, 60.0);
        let obj = SceneObject { model_id: 0, category: Category::Cabinet, pose };
        let mut maps = Maps::new(480, 360);
        maps.depth.iter_mut().for_each(|d| *d = 2.0);
        let pix: Vec<(usize, usize)> = model
            .points
            .iter()
            .map(|p| {
                let (u, v, _) = project(&k, &apply_pose(&pose, p)).unwrap();
                (u.round() as usize, v.round() as usize)
            })
            .collect();
        // sort points by u and occlude the left half (pixels shared by both
        // halves stay visible)
        let mut order: Vec<usize> = (0..pix.len()).collect();
        order.sort_by_key(|&i| (pix[i].0, pix[i].1));
        let right: std::collections::HashSet<_> = order[pix.len() / 2..].iter().map(|&i| pix[i]).collect();
        for &i in &order[..pix.len() / 2] {
            if !right.contains(&pix[i]) {
                let idx = maps.index(pix[i].0, pix[i].1);
                maps.depth[idx] = 0.5;
            }
        }
        let close = pix.iter().filter(|p| maps.depth_at(p.0, p.1) == 2.0).count();
        assert!(close >= pix.len() / 2);
        assert!(filter_annotation(&maps, &k, &obj, &model));
        // one more occluded point flips it
        let extra = order[pix.len() / 2..].iter().map(|&i| pix[i]).collect::<Vec<_>>();
        let mut maps2 = maps.clone();
        for p in extra.iter().take(close - pix.len() / 2 + 1) {
            let idx = maps2.index(p.0, p.1);
            maps2.depth[idx] = 0.5;
        }
        assert!(!filter_annotation(&maps2, &k, &obj, &model));
    }

    #[test]
    fn filter_is_monotone_in_occlusion() {
        let lib = library();
        let scene = generate_scene("f", &SceneConfig::default(), &lib, 77).unwrap();
        for o in &scene.objects {
            let model = lib.get(o.model_id).unwrap();
            let before = filter_annotation(&scene.maps, &scene.intrinsics, o, model);
            let mut occluded = scene.maps.clone();
            for v in 100..200 {
                for u in 0..480 {
                    let idx = occluded.index(u, v);
                    occluded.depth[idx] = 0.8;
                }
            }
            let after = filter_annotation(&occluded, &scene.intrinsics, o, model);
            assert!(!(after && !before));
        }
    }
}
