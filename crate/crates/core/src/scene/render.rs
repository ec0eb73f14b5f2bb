//! Software z-buffer rasterizer producing depth, normal, color and instance
//! maps. Pixel `(i, j)` is sampled at its integer center `u = i, v = j`.

use crate::geometry::{apply_pose, bearing, transform_normal, Intrinsics, Pose9, Rigid, Vec3};
use crate::shapes::TriMesh;

/// Triangles with a vertex closer than this are skipped (no near clipping).
pub const NEAR_PLANE: f64 = 0.05;
/// Ground plane beyond this camera depth renders as background.
pub const MAX_GROUND_DEPTH: f64 = 20.0;
pub const GROUND_COLOR: [f32; 3] = [0.5, 0.5, 0.5];
pub const GROUND_INSTANCE: i32 = -1;
pub const EMPTY_INSTANCE: i32 = -2;

/// Dense per-pixel observation maps, row-major (`v * width + u`).
#[derive(Debug, Clone, PartialEq)]
pub struct Maps {
    pub width: usize,
    pub height: usize,
    /// meters, 0 = invalid
    pub depth: Vec<f32>,
    /// camera-frame unit normals, 3 per pixel, zero where depth is invalid
    pub normal: Vec<f32>,
    /// RGB in [0, 1], 3 per pixel
    pub color: Vec<f32>,
    /// object index, or [`GROUND_INSTANCE`] / [`EMPTY_INSTANCE`]
    pub instance: Vec<i32>,
}

impl Maps {
    pub fn new(width: usize, height: usize) -> Self {
        let n = width * height;
        Maps {
            width,
            height,
            depth: vec![0.0; n],
            normal: vec![0.0; 3 * n],
            color: vec![0.0; 3 * n],
            instance: vec![EMPTY_INSTANCE; n],
        }
    }

    #[inline]
    pub fn index(&self, u: usize, v: usize) -> usize {
        v * self.width + u
    }

    pub fn depth_at(&self, u: usize, v: usize) -> f32 {
        self.depth[self.index(u, v)]
    }

    pub fn normal_at(&self, u: usize, v: usize) -> [f32; 3] {
        let i = 3 * self.index(u, v);
        [self.normal[i], self.normal[i + 1], self.normal[i + 2]]
    }

    pub fn color_at(&self, u: usize, v: usize) -> [f32; 3] {
        let i = 3 * self.index(u, v);
        [self.color[i], self.color[i + 1], self.color[i + 2]]
    }

    fn write(&mut self, idx: usize, depth: f64, n: &Vec3, c: [f32; 3], inst: i32) {
        self.depth[idx] = depth as f32;
        self.normal[3 * idx..3 * idx + 3].copy_from_slice(&[n.x as f32, n.y as f32, n.z as f32]);
        self.color[3 * idx..3 * idx + 3].copy_from_slice(&c);
        self.instance[idx] = inst;
    }
}

/// An object to rasterize.
pub struct RenderItem<'a> {
    pub mesh: &'a TriMesh,
    pub pose: &'a Pose9,
    pub color: [f32; 3],
}

/// Renders the ground plane (world y = 0, seen from `cam_to_world`) and all
/// items into fresh maps. Depth is camera z, not ray length.
pub fn render(k: &Intrinsics, cam_to_world: &Rigid, items: &[RenderItem]) -> Maps {
    let (w, h) = (k.width as usize, k.height as usize);
    let mut maps = Maps::new(w, h);
    let cam_height = cam_to_world.t.y;
    let ground_normal = cam_to_world.q.conj().rotate(&Vec3::y());
    for v in 0..h {
        for u in 0..w {
            let dir = cam_to_world.q.rotate(&bearing(k, u as f64, v as f64));
            if dir.y < -1e-12 {
                let z = -cam_height / dir.y;
                if z > 0.0 && z <= MAX_GROUND_DEPTH {
                    let idx = maps.index(u, v);
                    maps.write(idx, z, &ground_normal, GROUND_COLOR, GROUND_INSTANCE);
                }
            }
        }
    }
    for (inst, item) in items.iter().enumerate() {
        rasterize_mesh(k, &mut maps, item, inst as i32);
    }
    maps
}

fn rasterize_mesh(k: &Intrinsics, maps: &mut Maps, item: &RenderItem, inst: i32) {
    let (w, h) = (maps.width as i64, maps.height as i64);
    for ti in 0..item.mesh.triangles.len() {
        let tri = item.mesh.triangle(ti);
        let cam: [Vec3; 3] = tri.map(|p| apply_pose(item.pose, &p));
        if cam.iter().any(|p| p.z < NEAR_PLANE) {
            continue;
        }
        let Ok(normal) = transform_normal(item.pose, &item.mesh.normals[ti]) else {
            continue;
        };
        let scr: [(f64, f64); 3] = cam.map(|p| (k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy));
        let area = edge(scr[0], scr[1], scr[2]);
        if area.abs() < 1e-12 {
            continue;
        }
        let umin = scr.iter().map(|p| p.0).fold(f64::INFINITY, f64::min).ceil().max(0.0) as i64;
        let umax = scr.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max).floor().min((w - 1) as f64) as i64;
        let vmin = scr.iter().map(|p| p.1).fold(f64::INFINITY, f64::min).ceil().max(0.0) as i64;
        let vmax = scr.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max).floor().min((h - 1) as f64) as i64;
        let inv_z = cam.map(|p| 1.0 / p.z);
        for v in vmin..=vmax {
            for u in umin..=umax {
                let p = (u as f64, v as f64);
                let b0 = edge(scr[1], scr[2], p) / area;
                let b1 = edge(scr[2], scr[0], p) / area;
                let b2 = edge(scr[0], scr[1], p) / area;
                if b0 < -1e-9 || b1 < -1e-9 || b2 < -1e-9 {
                    continue;
                }
                let z = 1.0 / (b0 * inv_z[0] + b1 * inv_z[1] + b2 * inv_z[2]);
                let idx = maps.index(u as usize, v as usize);
                let cur = maps.depth[idx];
                if cur == 0.0 || (z as f32) < cur {
                    maps.write(idx, z, &normal, item.color, inst);
                }
            }
        }
    }
}

#[inline]
fn edge(a: (f64, f64), b: (f64, f64), p: (f64, f64)) -> f64 {
    (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0)
}
