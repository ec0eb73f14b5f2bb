//! Procedural CAD models and uniform surface sampling.
//!
//! Every mesh is built from cuboids (or a prism for cylinders) in a canonical
//! frame with up = +y and forward = +z, then centered and scaled so that its
//! largest extent is 1.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec3;

/// Object categories of the synthetic world.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Cabinet,
    Table,
    Chair,
    Sofa,
    Bin,
}

impl Category {
    pub const ALL: [Category; 5] = [Category::Cabinet, Category::Table, Category::Chair, Category::Sofa, Category::Bin];

    pub fn name(self) -> &'static str {
        match self {
            Category::Cabinet => "cabinet",
            Category::Table => "table",
            Category::Chair => "chair",
            Category::Sofa => "sofa",
            Category::Bin => "bin",
        }
    }

    /// Primitive family that stands in for this category.
    pub fn kind(self) -> ShapeKind {
        match self {
            Category::Cabinet => ShapeKind::Box,
            Category::Table => ShapeKind::Table,
            Category::Chair => ShapeKind::Chair,
            Category::Sofa => ShapeKind::LShape,
            Category::Bin => ShapeKind::Cylinder,
        }
    }

    /// Per-axis range of metric scale applied to the unit-extent mesh.
    pub fn scale_range(self) -> (f64, f64) {
        match self {
            Category::Cabinet => (0.7, 1.0),
            Category::Table => (0.9, 1.3),
            Category::Chair => (0.8, 1.0),
            Category::Sofa => (1.5, 1.9),
            Category::Bin => (0.35, 0.5),
        }
    }

    pub fn median_scale(self) -> Vec3 {
        let (lo, hi) = self.scale_range();
        Vec3::repeat(0.5 * (lo + hi))
    }

    pub fn color(self) -> [f32; 3] {
        match self {
            Category::Cabinet => [0.55, 0.35, 0.2],
            Category::Table => [0.7, 0.55, 0.35],
            Category::Chair => [0.2, 0.4, 0.75],
            Category::Sofa => [0.6, 0.15, 0.2],
            Category::Bin => [0.3, 0.6, 0.3],
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Category {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Category::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown category '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeKind {
    Box,
    Table,
    Chair,
    LShape,
    Cylinder,
}

/// Constructive parameters of a primitive (pre-normalization units).
#[derive(Debug, Clone, PartialEq)]
pub enum ShapeParams {
    Box {
        extents: [f64; 3],
    },
    Table {
        /// width (x), thickness (y), depth (z)
        top: [f64; 3],
        leg_thickness: f64,
        leg_height: f64,
    },
    Chair {
        seat_width: f64,
        seat_depth: f64,
        seat_thickness: f64,
        leg_height: f64,
        leg_thickness: f64,
        back_height: f64,
        back_thickness: f64,
    },
    LShape {
        width: f64,
        depth: f64,
        seat_height: f64,
        back_height: f64,
        back_depth: f64,
        arm_width: f64,
    },
    Cylinder {
        radius: f64,
        height: f64,
        segments: u32,
    },
}

impl ShapeParams {
    pub fn kind(&self) -> ShapeKind {
        match self {
            ShapeParams::Box { .. } => ShapeKind::Box,
            ShapeParams::Table { .. } => ShapeKind::Table,
            ShapeParams::Chair { .. } => ShapeKind::Chair,
            ShapeParams::LShape { .. } => ShapeKind::LShape,
            ShapeParams::Cylinder { .. } => ShapeKind::Cylinder,
        }
    }

    /// Random parameters of the given kind within the documented ranges.
    pub fn sample(kind: ShapeKind, seed: u64) -> ShapeParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut u = |lo: f64, hi: f64| rng.random_range(lo..hi);
        match kind {
            ShapeKind::Box => ShapeParams::Box { extents: [u(0.5, 1.0), u(0.6, 1.0), u(0.35, 0.7)] },
            ShapeKind::Table => ShapeParams::Table {
                top: [u(0.8, 1.2), u(0.04, 0.1), u(0.5, 0.9)],
                leg_thickness: u(0.04, 0.1),
                leg_height: u(0.45, 0.7),
            },
            ShapeKind::Chair => ShapeParams::Chair {
                seat_width: u(0.4, 0.55),
                seat_depth: u(0.4, 0.55),
                seat_thickness: u(0.04, 0.08),
                leg_height: u(0.35, 0.45),
                leg_thickness: u(0.03, 0.06),
                back_height: u(0.35, 0.5),
                back_thickness: u(0.04, 0.08),
            },
            ShapeKind::LShape => ShapeParams::LShape {
                width: u(1.6, 2.2),
                depth: u(0.7, 0.95),
                seat_height: u(0.35, 0.5),
                back_height: u(0.35, 0.5),
                back_depth: u(0.15, 0.25),
                arm_width: u(0.12, 0.22),
            },
            ShapeKind::Cylinder => ShapeParams::Cylinder { radius: u(0.15, 0.25), height: u(0.4, 0.7), segments: 16 },
        }
    }
}

/// Triangle mesh with per-triangle outward normals.
#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[u32; 3]>,
    pub normals: Vec<Vec3>,
}

impl TriMesh {
    fn empty() -> Self {
        TriMesh { vertices: Vec::new(), triangles: Vec::new(), normals: Vec::new() }
    }

    fn push_triangle(&mut self, a: Vec3, b: Vec3, c: Vec3) {
        let base = self.vertices.len() as u32;
        let n = (b - a).cross(&(c - a)).normalize();
        self.vertices.extend([a, b, c]);
        self.triangles.push([base, base + 1, base + 2]);
        self.normals.push(n);
    }

    /// Axis-aligned cuboid spanning `lo..hi`, two outward-facing triangles
    /// per face.
    fn push_cuboid(&mut self, lo: Vec3, hi: Vec3) {
        let base = self.vertices.len() as u32;
        for i in 0..8u32 {
            self.vertices.push(Vec3::new(
                if i & 1 == 0 { lo.x } else { hi.x },
                if i & 2 == 0 { lo.y } else { hi.y },
                if i & 4 == 0 { lo.z } else { hi.z },
            ));
        }
        // faces as CCW quads seen from outside
        const FACES: [([u32; 4], [f64; 3]); 6] = [
            ([0, 4, 6, 2], [-1.0, 0.0, 0.0]),
            ([1, 3, 7, 5], [1.0, 0.0, 0.0]),
            ([0, 1, 5, 4], [0.0, -1.0, 0.0]),
            ([2, 6, 7, 3], [0.0, 1.0, 0.0]),
            ([0, 2, 3, 1], [0.0, 0.0, -1.0]),
            ([4, 5, 7, 6], [0.0, 0.0, 1.0]),
        ];
        for (q, n) in FACES {
            let n = Vec3::from(n);
            self.triangles.push([base + q[0], base + q[1], base + q[2]]);
            self.triangles.push([base + q[0], base + q[2], base + q[3]]);
            self.normals.push(n);
            self.normals.push(n);
        }
    }

    pub fn triangle(&self, i: usize) -> [Vec3; 3] {
        let t = self.triangles[i];
        [self.vertices[t[0] as usize], self.vertices[t[1] as usize], self.vertices[t[2] as usize]]
    }

    pub fn triangle_area(&self, i: usize) -> f64 {
        let [a, b, c] = self.triangle(i);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    pub fn bounds(&self) -> (Vec3, Vec3) {
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for v in &self.vertices {
            lo = lo.inf(v);
            hi = hi.sup(v);
        }
        (lo, hi)
    }

    /// Centers the bounding box at the origin and scales the largest extent
    /// to 1.
    fn normalize(&mut self) {
        let (lo, hi) = self.bounds();
        let center = 0.5 * (lo + hi);
        let extent = (hi - lo).max();
        for v in &mut self.vertices {
            *v = (*v - center) / extent;
        }
    }

    /// Writes the mesh as ASCII: a `vertices N` header followed by one
    /// `v x y z` line per vertex, then `triangles M` and one `f a b c` line
    /// per triangle (0-based indices).
    pub fn write_ascii(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "vertices {}", self.vertices.len())?;
        for v in &self.vertices {
            writeln!(w, "v {} {} {}", v.x, v.y, v.z)?;
        }
        writeln!(w, "triangles {}", self.triangles.len())?;
        for t in &self.triangles {
            writeln!(w, "f {} {} {}", t[0], t[1], t[2])?;
        }
        Ok(())
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidShape(format!("{name} must be positive, got {v}")))
    }
}

/// Builds the canonical mesh for a primitive.
pub fn make_primitive(params: &ShapeParams) -> Result<TriMesh> {
    let mut m = TriMesh::empty();
    match *params {
        ShapeParams::Box { extents } => {
            for (i, e) in extents.iter().enumerate() {
                positive(&format!("extent[{i}]"), *e)?;
            }
            let h = Vec3::from(extents) * 0.5;
            m.push_cuboid(-h, h);
        }
        ShapeParams::Table { top, leg_thickness, leg_height } => {
            for (i, e) in top.iter().enumerate() {
                positive(&format!("top[{i}]"), *e)?;
            }
            positive("leg_thickness", leg_thickness)?;
            positive("leg_height", leg_height)?;
            if leg_thickness * 2.0 >= top[0].min(top[2]) {
                return Err(Error::InvalidShape("legs wider than the table top".into()));
            }
            let (w, d) = (top[0] * 0.5, top[2] * 0.5);
            m.push_cuboid(Vec3::new(-w, leg_height, -d), Vec3::new(w, leg_height + top[1], d));
            push_legs(&mut m, w, d, leg_thickness, leg_height);
        }
        ShapeParams::Chair {
            seat_width,
            seat_depth,
            seat_thickness,
            leg_height,
            leg_thickness,
            back_height,
            back_thickness,
        } => {
            for (n, v) in [
                ("seat_width", seat_width),
                ("seat_depth", seat_depth),
                ("seat_thickness", seat_thickness),
                ("leg_height", leg_height),
                ("leg_thickness", leg_thickness),
                ("back_height", back_height),
                ("back_thickness", back_thickness),
            ] {
                positive(n, v)?;
            }
            if leg_thickness * 2.0 >= seat_width.min(seat_depth) || back_thickness >= seat_depth {
                return Err(Error::InvalidShape("chair parts exceed the seat".into()));
            }
            let (w, d) = (seat_width * 0.5, seat_depth * 0.5);
            let seat_top = leg_height + seat_thickness;
            m.push_cuboid(Vec3::new(-w, leg_height, -d), Vec3::new(w, seat_top, d));
            push_legs(&mut m, w, d, leg_thickness, leg_height);
            // backrest at the rear (-z); the chair faces +z
            m.push_cuboid(Vec3::new(-w, seat_top, -d), Vec3::new(w, seat_top + back_height, -d + back_thickness));
        }
        ShapeParams::LShape { width, depth, seat_height, back_height, back_depth, arm_width } => {
            for (n, v) in [
                ("width", width),
                ("depth", depth),
                ("seat_height", seat_height),
                ("back_height", back_height),
                ("back_depth", back_depth),
                ("arm_width", arm_width),
            ] {
                positive(n, v)?;
            }
            if back_depth >= depth || 2.0 * arm_width >= width {
                return Err(Error::InvalidShape("sofa back or arms exceed the base".into()));
            }
            let (w, d) = (width * 0.5, depth * 0.5);
            let top = seat_height + back_height;
            m.push_cuboid(Vec3::new(-w, 0.0, -d), Vec3::new(w, seat_height, d));
            m.push_cuboid(Vec3::new(-w, seat_height, -d), Vec3::new(w, top, -d + back_depth));
            // single arm on the +x side gives the L profile
            m.push_cuboid(
                Vec3::new(w - arm_width, seat_height, -d + back_depth),
                Vec3::new(w, seat_height + 0.5 * back_height, d),
            );
        }
        ShapeParams::Cylinder { radius, height, segments } => {
            positive("radius", radius)?;
            positive("height", height)?;
            if segments < 3 {
                return Err(Error::InvalidShape("cylinder needs at least 3 segments".into()));
            }
            let ring = |i: u32, y: f64| {
                let a = 2.0 * std::f64::consts::PI * i as f64 / segments as f64;
                Vec3::new(radius * a.cos(), y, -radius * a.sin())
            };
            let (bot, top) = (Vec3::zeros(), Vec3::new(0.0, height, 0.0));
            for i in 0..segments {
                let (a0, a1) = (ring(i, 0.0), ring(i + 1, 0.0));
                let (b0, b1) = (ring(i, height), ring(i + 1, height));
                m.push_triangle(a0, a1, b1);
                m.push_triangle(a0, b1, b0);
                m.push_triangle(top, b0, b1);
                m.push_triangle(bot, a1, a0);
            }
        }
    }
    m.normalize();
    Ok(m)
}

fn push_legs(m: &mut TriMesh, w: f64, d: f64, t: f64, h: f64) {
    for (sx, sz) in [(-1.0, -1.0), (1.0, -1.0), (-1.0, 1.0), (1.0, 1.0)] {
        let x0 = if sx < 0.0 { -w } else { w - t };
        let z0 = if sz < 0.0 { -d } else { d - t };
        m.push_cuboid(Vec3::new(x0, 0.0, z0), Vec3::new(x0 + t, h, z0 + t));
    }
}

/// Area-weighted uniform surface samples with the owning triangle's normal.
pub fn sample_surface(mesh: &TriMesh, n: usize, seed: u64) -> Result<(Vec<Vec3>, Vec<Vec3>)> {
    let areas: Vec<f64> = (0..mesh.triangles.len()).map(|i| mesh.triangle_area(i)).collect();
    let dist = WeightedIndex::new(&areas).map_err(|_| Error::EmptyMesh)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(n);
    let mut normals = Vec::with_capacity(n);
    for _ in 0..n {
        let i = dist.sample(&mut rng);
        let [a, b, c] = mesh.triangle(i);
        let r1: f64 = rng.random();
        let r2: f64 = rng.random();
        let sr = r1.sqrt();
        points.push(a * (1.0 - sr) + b * (sr * (1.0 - r2)) + c * (sr * r2));
        normals.push(mesh.normals[i]);
    }
    Ok((points, normals))
}

/// Big-endian binary expansion of `id` into `bits` entries of 0/1.
pub fn cad_id_encode(id: u64, bits: u32) -> Result<Vec<u8>> {
    if bits < 64 && id >> bits != 0 {
        return Err(Error::IdOverflow { id, bits });
    }
    Ok((0..bits).rev().map(|b| ((id >> b) & 1) as u8).collect())
}

pub fn cad_id_decode(code: &[u8]) -> u64 {
    code.iter().fold(0, |acc, &b| (acc << 1) | b as u64)
}

/// A retrievable CAD model: sampled surface points, normals and id code.
#[derive(Debug, Clone)]
pub struct CadModel {
    pub id: u32,
    pub category: Category,
    pub params: ShapeParams,
    pub points: Vec<Vec3>,
    pub normals: Vec<Vec3>,
    pub id_code: Vec<u8>,
    pub mesh: TriMesh,
}

impl CadModel {
    pub fn build(
        id: u32,
        category: Category,
        params: ShapeParams,
        n_points: usize,
        id_bits: u32,
        seed: u64,
    ) -> Result<Self> {
        let mesh = make_primitive(&params)?;
        let (points, normals) = sample_surface(&mesh, n_points, seed)?;
        Ok(CadModel { id, category, params, points, normals, id_code: cad_id_encode(id as u64, id_bits)?, mesh })
    }

    /// Lowest canonical y of the mesh (the model rests on this plane).
    pub fn bottom(&self) -> f64 {
        self.mesh.bounds().0.y
    }

    /// Half extents of the canonical bounding box.
    pub fn half_extents(&self) -> Vec3 {
        let (lo, hi) = self.mesh.bounds();
        0.5 * (hi - lo)
    }
}

/// Recipe for one library entry; models are rebuilt deterministically.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelRecipe {
    pub id: u32,
    pub category: Category,
    pub seed: u64,
}

/// The set of CAD models scenes are populated from.
#[derive(Debug, Clone)]
pub struct CadLibrary {
    pub models: Vec<CadModel>,
    pub id_bits: u32,
}

impl CadLibrary {
    pub fn build(recipes: &[ModelRecipe], n_points: usize, id_bits: u32) -> Result<Self> {
        let models = recipes
            .iter()
            .map(|r| {
                let params = ShapeParams::sample(r.category.kind(), r.seed);
                CadModel::build(r.id, r.category, params, n_points, id_bits, r.seed ^ 0x5eed)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(CadLibrary { models, id_bits })
    }

    /// `per_category` recipes for each listed category, ids assigned in order.
    pub fn recipes(categories: &[Category], per_category: u32, seed: u64) -> Vec<ModelRecipe> {
        let mut out = Vec::new();
        let mut id = 0;
        for &category in categories {
            for k in 0..per_category {
                out.push(ModelRecipe {
                    id,
                    category,
                    seed: seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add((category as u64) << 32 | k as u64),
                });
                id += 1;
            }
        }
        out
    }

    pub fn get(&self, id: u32) -> Option<&CadModel> {
        self.models.iter().find(|m| m.id == id)
    }

    pub fn of_category(&self, c: Category) -> impl Iterator<Item = &CadModel> {
        self.models.iter().filter(move |m| m.category == c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_box() {
        let m = make_primitive(&ShapeParams::Box { extents: [1.0, 1.0, 1.0] }).unwrap();
        assert_eq!(m.triangles.len(), 12);
        for v in &m.vertices {
            assert!(v.iter().all(|c| c.abs() == 0.5));
        }
    }

    #[test]
    fn table_is_five_cuboids() {
        let p = ShapeParams::Table { top: [1.0, 0.1, 0.6], leg_thickness: 0.05, leg_height: 0.7 };
        let m = make_primitive(&p).unwrap();
        assert_eq!(m.triangles.len(), 5 * 12);
    }

    #[test]
    fn invalid_params_rejected() {
        let p = ShapeParams::Table { top: [0.2, 0.1, 0.2], leg_thickness: 0.15, leg_height: 0.7 };
        assert!(matches!(make_primitive(&p), Err(Error::InvalidShape(_))));
        assert!(make_primitive(&ShapeParams::Box { extents: [1.0, 0.0, 1.0] }).is_err());
        let c = ShapeParams::Cylinder { radius: 0.2, height: 0.5, segments: 2 };
        assert!(make_primitive(&c).is_err());
    }

    #[test]
    fn primitives_are_deterministic_and_normalized() {
        for kind in [ShapeKind::Box, ShapeKind::Table, ShapeKind::Chair, ShapeKind::LShape, ShapeKind::Cylinder] {
            let a = make_primitive(&ShapeParams::sample(kind, 9)).unwrap();
            let b = make_primitive(&ShapeParams::sample(kind, 9)).unwrap();
            assert_eq!(a, b);
            let (lo, hi) = a.bounds();
            assert!(((hi - lo).max() - 1.0).abs() < 1e-12);
            assert!(lo.iter().chain(hi.iter()).all(|c| c.abs() <= 0.5 + 1e-12));
            for i in 0..a.triangles.len() {
                assert!(a.triangle_area(i) > 0.0);
                assert!((a.normals[i].norm() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn normals_point_outward_for_convex_parts() {
        let m = make_primitive(&ShapeParams::sample(ShapeKind::Cylinder, 3)).unwrap();
        let (lo, hi) = m.bounds();
        let c = 0.5 * (lo + hi);
        for i in 0..m.triangles.len() {
            let [a, b, d] = m.triangle(i);
            let centroid = (a + b + d) / 3.0;
            assert!((centroid - c).dot(&m.normals[i]) > 0.0);
        }
    }

    #[test]
    fn box_face_fractions_follow_area() {
        let m = make_primitive(&ShapeParams::Box { extents: [1.0, 1.0, 1.0] }).unwrap();
        let (pts, nrm) = sample_surface(&m, 10_000, 1).unwrap();
        for axis in 0..3 {
            for sign in [-1.0, 1.0] {
                let count = nrm.iter().filter(|n| n[axis] == sign).count();
                assert!((count as f64 / 10_000.0 - 1.0 / 6.0).abs() < 0.02);
            }
        }
        for p in &pts {
            assert!((p.abs().max() - 0.5).abs() < 1e-12);
        }
        let (pts2, _) = sample_surface(&m, 10_000, 1).unwrap();
        assert_eq!(pts, pts2);
    }

    #[test]
    fn face_distribution_passes_chi_square() {
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        let m = make_primitive(&ShapeParams::sample(ShapeKind::Chair, 4)).unwrap();
        let n = 100_000;
        let (pts, nrm) = sample_surface(&m, n, 2).unwrap();
        // attribute samples back to triangles via barycentric containment
        let areas: Vec<f64> = (0..m.triangles.len()).map(|i| m.triangle_area(i)).collect();
        let total: f64 = areas.iter().sum();
        let mut counts = vec![0usize; areas.len()];
        'outer: for (p, pn) in pts.iter().zip(&nrm) {
            for (i, count) in counts.iter_mut().enumerate() {
                if m.normals[i] != *pn {
                    continue;
                }
                let [a, b, c] = m.triangle(i);
                let nrm = (b - a).cross(&(c - a));
                if (p - a).dot(&nrm).abs() > 1e-9 * nrm.norm() {
                    continue;
                }
                let inside =
                    [(a, b), (b, c), (c, a)].iter().all(|(e0, e1)| (e1 - e0).cross(&(p - e0)).dot(&nrm) >= -1e-12);
                if inside {
                    *count += 1;
                    continue 'outer;
                }
            }
            panic!("sample {p:?} not on any triangle");
        }
        // merge the two triangles of each cuboid face into one cell
        let cells: Vec<(f64, usize)> = areas
            .chunks(2)
            .zip(counts.chunks(2))
            .map(|(a, c)| (a.iter().sum::<f64>() / total, c.iter().sum()))
            .collect();
        let chi2: f64 = cells
            .iter()
            .map(|(p, c)| {
                let e = p * n as f64;
                (*c as f64 - e).powi(2) / e
            })
            .sum();
        let dof = (cells.len() - 1) as f64;
        let pval = 1.0 - ChiSquared::new(dof).unwrap().cdf(chi2);
        assert!(pval > 0.001, "chi2 {chi2} dof {dof} p {pval}");
    }

    #[test]
    fn id_code_round_trip() {
        assert_eq!(cad_id_encode(0, 8).unwrap(), vec![0; 8]);
        assert_eq!(cad_id_encode(5, 8).unwrap(), vec![0, 0, 0, 0, 0, 1, 0, 1]);
        for id in 0..256 {
            assert_eq!(cad_id_decode(&cad_id_encode(id, 8).unwrap()), id);
        }
        assert!(matches!(cad_id_encode(256, 8), Err(Error::IdOverflow { .. })));
    }

    #[test]
    fn ascii_export_lists_everything() {
        let m = make_primitive(&ShapeParams::Box { extents: [1.0, 1.0, 1.0] }).unwrap();
        let mut buf = Vec::new();
        m.write_ascii(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().filter(|l| l.starts_with("v ")).count(), 8);
        assert_eq!(text.lines().filter(|l| l.starts_with("f ")).count(), 12);
    }

    #[test]
    fn library_is_deterministic() {
        let r = CadLibrary::recipes(&[Category::Chair, Category::Table], 3, 11);
        let a = CadLibrary::build(&r, 200, 12).unwrap();
        let b = CadLibrary::build(&r, 200, 12).unwrap();
        assert_eq!(a.models.len(), 6);
        for (x, y) in a.models.iter().zip(&b.models) {
            assert_eq!(x.points, y.points);
            assert_eq!(x.id_code.len(), 12);
        }
        assert_eq!(a.get(4).unwrap().category, Category::Table);
    }
}
