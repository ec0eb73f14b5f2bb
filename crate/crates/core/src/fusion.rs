//! Sparse network input: image rows sampled from three regions, reprojected
//! CAD rows, bounding-box / pose / identity rows, and Fourier encoding.
//!
//! Row layout (10 channels): `[r g b | nx ny nz | depth | u v | token]` with
//! `u, v` normalized to `[0, 1]` by image width and height.

use ndarray::{s, Array2, ArrayView1};
use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{apply_pose, transform_normal, Intrinsics, Pose9};
use crate::scene::{BBox, Maps};
use crate::seed;
use crate::shapes::CadModel;

pub const ROW_WIDTH: usize = 10;
pub const N_FREQ: usize = 64;
pub const MAX_FREQ: f64 = 1120.0;
pub const ENCODED_WIDTH: usize = ROW_WIDTH + 2 * N_FREQ + 1;
pub const SIDE_SAMPLES: usize = 10;
/// Payload channels of an id-code row (everything but the token).
pub const ID_BITS_PER_ROW: usize = ROW_WIDTH - 1;

pub const CH_RGB: usize = 0;
pub const CH_NORMAL: usize = 3;
pub const CH_DEPTH: usize = 6;
pub const CH_U: usize = 7;
pub const CH_V: usize = 8;
pub const CH_TOKEN: usize = 9;

/// Row type tokens.
pub mod token {
    pub const REPROJ: u8 = 0;
    pub const BBOX: u8 = 1;
    pub const CONTEXT: u8 = 2;
    pub const CAD: u8 = 3;
    pub const BBOX_SIDE: u8 = 4;
    pub const T: u8 = 5;
    pub const Q: u8 = 6;
    pub const S: u8 = 7;
    pub const ID: u8 = 8;
}

/// Requested row counts per region.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputCounts {
    pub n_reproj: usize,
    pub n_bbox: usize,
    pub n_context: usize,
    pub n_cad: usize,
}

impl Default for InputCounts {
    fn default() -> Self {
        InputCounts { n_reproj: 1000, n_bbox: 1000, n_context: 5000, n_cad: 1000 }
    }
}

/// Input ablations. Counts never change, except `whole_image` which replaces
/// context sampling by every pixel of the image.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ablation {
    pub no_depth: bool,
    pub no_normals: bool,
    pub no_rgb: bool,
    pub no_extra: bool,
    pub whole_image: bool,
}

pub fn n_id_rows(id_bits: u32) -> usize {
    (id_bits as usize).div_ceil(ID_BITS_PER_ROW)
}

pub fn n_extra(id_bits: u32) -> usize {
    4 * SIDE_SAMPLES + 3 + n_id_rows(id_bits)
}

/// Total row count produced by [`build_input`].
pub fn n_input(counts: &InputCounts, ablation: &Ablation, id_bits: u32, width: u32, height: u32) -> usize {
    let context = if ablation.whole_image { (width * height) as usize } else { counts.n_context };
    counts.n_reproj + counts.n_bbox + context + counts.n_cad + n_extra(id_bits)
}

/// Unencoded rows plus the image size needed to recover pixel positions.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseInput {
    pub rows: Array2<f32>,
    pub width: u32,
    pub height: u32,
}

impl SparseInput {
    pub fn n_rows(&self) -> usize {
        self.rows.nrows()
    }

    pub fn token(&self, i: usize) -> u8 {
        self.rows[[i, CH_TOKEN]] as u8
    }

    pub fn count_token(&self, t: u8) -> usize {
        (0..self.n_rows()).filter(|&i| self.token(i) == t).count()
    }
}

fn blank_row(tok: u8) -> [f32; ROW_WIDTH] {
    let mut r = [0.0; ROW_WIDTH];
    r[CH_TOKEN] = tok as f32;
    r
}

fn pixel_row(k: &Intrinsics, u: f64, v: f64, tok: u8) -> [f32; ROW_WIDTH] {
    let mut r = blank_row(tok);
    r[CH_U] = (u / k.width as f64) as f32;
    r[CH_V] = (v / k.height as f64) as f32;
    r
}

/// Reprojected CAD points.
#[derive(Debug, Clone)]
pub struct CadRows {
    pub rows: Vec<[f32; ROW_WIDTH]>,
    /// integer pixel each point lands on (after clamping)
    pub pixels: Vec<(usize, usize)>,
    /// true where the projection fell outside the image and was clamped
    pub clamped: Vec<bool>,
}

/// Projects every model point under `pose`, ignoring visibility.
pub fn reproject_cad(model: &CadModel, pose: &Pose9, k: &Intrinsics) -> Result<CadRows> {
    let n = model.points.len();
    let mut out =
        CadRows { rows: Vec::with_capacity(n), pixels: Vec::with_capacity(n), clamped: Vec::with_capacity(n) };
    let (wmax, hmax) = ((k.width - 1) as f64, (k.height - 1) as f64);
    let mut any_front = false;
    for (p, nrm) in model.points.iter().zip(&model.normals) {
        let x = apply_pose(pose, p);
        let n_cam = transform_normal(pose, nrm)?;
        any_front |= x.z > 0.0;
        // points at or behind the image plane are pushed onto it and flagged
        let z = x.z.max(1e-3);
        let u = k.fx * x.x / z + k.cx;
        let v = k.fy * x.y / z + k.cy;
        let (uc, vc) = (u.clamp(0.0, wmax), v.clamp(0.0, hmax));
        let clamped = x.z <= 0.0 || uc != u || vc != v;
        let mut r = pixel_row(k, uc, vc, token::CAD);
        r[CH_NORMAL] = n_cam.x as f32;
        r[CH_NORMAL + 1] = n_cam.y as f32;
        r[CH_NORMAL + 2] = n_cam.z as f32;
        r[CH_DEPTH] = x.z as f32;
        out.rows.push(r);
        out.pixels.push((uc.round() as usize, vc.round() as usize));
        out.clamped.push(clamped);
    }
    if !any_front {
        return Err(Error::BehindCamera(pose.t.z));
    }
    Ok(out)
}

fn image_row(maps: &Maps, k: &Intrinsics, u: usize, v: usize, tok: u8) -> [f32; ROW_WIDTH] {
    let mut r = pixel_row(k, u as f64, v as f64, tok);
    r[CH_RGB..CH_RGB + 3].copy_from_slice(&maps.color_at(u, v));
    r[CH_NORMAL..CH_NORMAL + 3].copy_from_slice(&maps.normal_at(u, v));
    r[CH_DEPTH] = maps.depth_at(u, v);
    r
}

/// Draws `n` indices from `0..len`: distinct when possible, with replacement
/// when `n > len`.
fn draw(rng: &mut impl Rng, len: usize, n: usize) -> Vec<usize> {
    if n == 0 || len == 0 {
        return Vec::new();
    }
    if n <= len {
        index::sample(rng, len, n).into_vec()
    } else {
        (0..n).map(|_| rng.random_range(0..len)).collect()
    }
}

/// Integer pixel rectangle covered by a box, clipped to the image.
fn box_pixels(bbox: &BBox, k: &Intrinsics) -> (usize, usize, usize, usize) {
    let b = bbox.clip(k);
    let u0 = b.umin.ceil() as usize;
    let v0 = b.vmin.ceil() as usize;
    let u1 = (b.umax.floor() as usize).max(u0);
    let v1 = (b.vmax.floor() as usize).max(v0);
    (u0, v0, u1, v1)
}

/// Samples image rows from the reprojection pixels (token 0), the box
/// (token 1) and the whole image (token 2). Regions with fewer distinct
/// pixels than requested are sampled with replacement. With `whole_image`
/// every pixel becomes a context row, in raster order.
pub fn sample_image_rows(
    maps: &Maps,
    k: &Intrinsics,
    reproj_pixels: &[(usize, usize)],
    bbox: &BBox,
    counts: &InputCounts,
    whole_image: bool,
    seed: u64,
) -> Vec<[f32; ROW_WIDTH]> {
    let mut rng = seed::rng(seed, &[0x1a6e]);
    let mut rows = Vec::with_capacity(counts.n_reproj + counts.n_bbox + counts.n_context);

    let mut distinct = reproj_pixels.to_vec();
    distinct.sort_unstable_by_key(|&(u, v)| (v, u));
    distinct.dedup();
    for i in draw(&mut rng, distinct.len(), counts.n_reproj) {
        let (u, v) = distinct[i];
        rows.push(image_row(maps, k, u, v, token::REPROJ));
    }

    let (u0, v0, u1, v1) = box_pixels(bbox, k);
    let bw = u1 - u0 + 1;
    let area = bw * (v1 - v0 + 1);
    for i in draw(&mut rng, area, counts.n_bbox) {
        rows.push(image_row(maps, k, u0 + i % bw, v0 + i / bw, token::BBOX));
    }

    let (w, h) = (maps.width, maps.height);
    if whole_image {
        for v in 0..h {
            for u in 0..w {
                rows.push(image_row(maps, k, u, v, token::CONTEXT));
            }
        }
    } else {
        for i in draw(&mut rng, w * h, counts.n_context) {
            rows.push(image_row(maps, k, i % w, i / w, token::CONTEXT));
        }
    }
    rows
}

/// 10 evenly spaced samples per box side, corners included.
pub fn bbox_side_rows(bbox: &BBox, k: &Intrinsics) -> Vec<[f32; ROW_WIDTH]> {
    let b = bbox.clip(k);
    let corners = [(b.umin, b.vmin), (b.umax, b.vmin), (b.umax, b.vmax), (b.umin, b.vmax)];
    let mut rows = Vec::with_capacity(4 * SIDE_SAMPLES);
    for side in 0..4 {
        let (a, c) = (corners[side], corners[(side + 1) % 4]);
        for j in 0..SIDE_SAMPLES {
            let t = j as f64 / (SIDE_SAMPLES - 1) as f64;
            rows.push(pixel_row(k, a.0 + t * (c.0 - a.0), a.1 + t * (c.1 - a.1), token::BBOX_SIDE));
        }
    }
    rows
}

/// Pose rows (T, Q, S) followed by id-code rows.
pub fn pose_and_id_rows(pose: &Pose9, id_code: &[u8]) -> Vec<[f32; ROW_WIDTH]> {
    let mut rows = Vec::new();
    let mut t = blank_row(token::T);
    let mut q = blank_row(token::Q);
    let mut s = blank_row(token::S);
    for i in 0..3 {
        t[i] = pose.t[i] as f32;
        s[i] = pose.s[i] as f32;
    }
    q[..4].copy_from_slice(&pose.q.to_array().map(|x| x as f32));
    rows.extend([t, q, s]);
    for chunk in id_code.chunks(ID_BITS_PER_ROW) {
        let mut r = blank_row(token::ID);
        for (j, &b) in chunk.iter().enumerate() {
            r[j] = b as f32;
        }
        rows.push(r);
    }
    rows
}

/// Everything needed to assemble one input.
pub struct InputRequest<'a> {
    pub maps: &'a Maps,
    pub k: &'a Intrinsics,
    pub model: &'a CadModel,
    pub pose: &'a Pose9,
    pub bbox: &'a BBox,
    pub counts: &'a InputCounts,
    pub ablation: &'a Ablation,
}

/// Full assembly: image rows, CAD rows, box sides, pose and id rows, then
/// ablation masking.
pub fn build_input(req: &InputRequest, seed: u64) -> Result<SparseInput> {
    let k = req.k;
    let cad = reproject_cad(req.model, req.pose, k)?;
    let mut rng = seed::rng(seed, &[0xcad]);
    let picks = if req.counts.n_cad == cad.rows.len() {
        (0..cad.rows.len()).collect()
    } else {
        draw(&mut rng, cad.rows.len(), req.counts.n_cad)
    };
    let cad_rows: Vec<_> = picks.iter().map(|&i| cad.rows[i]).collect();
    let cad_pixels: Vec<_> = picks.iter().map(|&i| cad.pixels[i]).collect();
    let image = sample_image_rows(
        req.maps,
        k,
        &cad_pixels,
        req.bbox,
        req.counts,
        req.ablation.whole_image,
        seed::derive(seed, &[0x1]),
    );
    let sides = bbox_side_rows(req.bbox, k);
    let extra = pose_and_id_rows(req.pose, &req.model.id_code);
    let x = assemble_input(&image, &cad_rows, &sides, &extra, k.width, k.height);
    Ok(apply_ablation(x, req.ablation))
}

/// Concatenates row groups in a fixed order.
pub fn assemble_input(
    image: &[[f32; ROW_WIDTH]],
    cad: &[[f32; ROW_WIDTH]],
    sides: &[[f32; ROW_WIDTH]],
    extra: &[[f32; ROW_WIDTH]],
    width: u32,
    height: u32,
) -> SparseInput {
    let n = image.len() + cad.len() + sides.len() + extra.len();
    let flat: Vec<f32> = image.iter().chain(cad).chain(sides).chain(extra).flat_map(|r| r.iter().copied()).collect();
    SparseInput { rows: Array2::from_shape_vec((n, ROW_WIDTH), flat).expect("row-major shape"), width, height }
}

/// Zeroes ablated channels; image-row channels for depth/normals/rgb, all
/// payload of box-side, pose and id rows for `no_extra`.
pub fn apply_ablation(mut x: SparseInput, a: &Ablation) -> SparseInput {
    for mut r in x.rows.rows_mut() {
        let tok = r[CH_TOKEN] as u8;
        let is_image = tok <= token::CONTEXT;
        if is_image && a.no_rgb {
            r.slice_mut(s![CH_RGB..CH_RGB + 3]).fill(0.0);
        }
        if is_image && a.no_normals {
            r.slice_mut(s![CH_NORMAL..CH_NORMAL + 3]).fill(0.0);
        }
        if is_image && a.no_depth {
            r[CH_DEPTH] = 0.0;
        }
        if a.no_extra && tok >= token::BBOX_SIDE {
            r.slice_mut(s![..CH_TOKEN]).fill(0.0);
        }
    }
    x
}

/// Geometrically spaced frequencies from 1 to [`MAX_FREQ`].
pub fn frequencies() -> [f64; N_FREQ] {
    std::array::from_fn(|k| MAX_FREQ.powf(k as f64 / (N_FREQ - 1) as f64))
}

/// Flattened pixel position of a row mapped to `[-1, 1]`; 0 for rows
/// without pixel coordinates.
pub fn row_position(row: ArrayView1<f32>, width: u32, height: u32) -> f64 {
    if row[CH_TOKEN] as u8 >= token::T {
        return 0.0;
    }
    let u = row[CH_U] as f64 * width as f64;
    let v = row[CH_V] as f64 * height as f64;
    2.0 * (v * width as f64 + u) / (width as f64 * height as f64) - 1.0
}

/// Appends `sin(pi f p)`, `cos(pi f p)` for each frequency and the raw `p`.
pub fn fourier_encode(x: &SparseInput) -> Array2<f32> {
    let freqs = frequencies();
    let n = x.n_rows();
    let mut out = Array2::<f32>::zeros((n, ENCODED_WIDTH));
    for (i, row) in x.rows.rows().into_iter().enumerate() {
        let p = row_position(row, x.width, x.height);
        let mut o = out.row_mut(i);
        o.slice_mut(s![..ROW_WIDTH]).assign(&row);
        for (j, f) in freqs.iter().enumerate() {
            let (sn, cs) = (std::f64::consts::PI * f * p).sin_cos();
            o[ROW_WIDTH + j] = sn as f32;
            o[ROW_WIDTH + N_FREQ + j] = cs as f32;
        }
        o[ENCODED_WIDTH - 1] = p as f32;
    }
    out
}
