//! Versioned on-disk formats. Binary files start with an 8-byte magic and a
//! little-endian `u32` version; all numbers are little-endian. Text files
//! start with a `<kind> <version>` header line, then one whitespace-separated
//! record per line; blank lines and lines starting with `#` are ignored.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::eval::{AlignmentRecord, Source};
use crate::fusion::{SparseInput, ROW_WIDTH};
use crate::geometry::{Pose9, Quat, Vec3};
use crate::net::lamb::LambState;
use crate::net::Params;
use crate::scene::Maps;
use crate::train::{TrainConfig, Trainer};

pub const MAPS_MAGIC: &[u8; 8] = b"SPALMAPS";
pub const MAPS_VERSION: u32 = 1;
pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SPALCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;
pub const ROWS_MAGIC: &[u8; 8] = b"SPALROWS";
pub const ROWS_VERSION: u32 = 1;
pub const RECORDS_KIND: &str = "sparse-align-records";
pub const RECORDS_VERSION: u32 = 1;

/// Writes through a temporary sibling and renames, so readers never see a
/// partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Little-endian byte sink.
#[derive(Default)]
pub struct Encoder {
    pub buf: Vec<u8>,
}

impl Encoder {
    pub fn header(magic: &[u8; 8], version: u32) -> Self {
        let mut e = Encoder::default();
        e.buf.extend_from_slice(magic);
        e.u32(version);
        e
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn bytes(&mut self, b: &[u8]) {
        self.u32(b.len() as u32);
        self.buf.extend_from_slice(b);
    }

    pub fn f32s<'a>(&mut self, v: impl IntoIterator<Item = &'a f32>) {
        for x in v {
            self.buf.extend_from_slice(&x.to_le_bytes());
        }
    }

    pub fn i32s(&mut self, v: &[i32]) {
        for x in v {
            self.buf.extend_from_slice(&x.to_le_bytes());
        }
    }
}

/// Little-endian byte source with path-aware errors.
pub struct Decoder<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Decoder<'a> {
    /// Checks magic and version.
    pub fn open(buf: &'a [u8], path: &'a Path, magic: &[u8; 8], version: u32) -> Result<Self> {
        let mut d = Decoder { buf, pos: 0, path };
        if d.take(8)? != magic {
            return Err(Error::format(path, "bad magic"));
        }
        let found = d.u32()?;
        if found != version {
            return Err(Error::Version { path: path.into(), expected: version, found });
        }
        Ok(d)
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let Some(end) = end else {
            return Err(Error::format(self.path, "unexpected end of file"));
        };
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub fn bytes(&mut self) -> Result<&'a [u8]> {
        let n = self.u32()? as usize;
        self.take(n)
    }

    pub fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let b = self.take(n.checked_mul(4).ok_or_else(|| Error::format(self.path, "length overflow"))?)?;
        Ok(b.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect())
    }

    pub fn i32s(&mut self, n: usize) -> Result<Vec<i32>> {
        let b = self.take(n.checked_mul(4).ok_or_else(|| Error::format(self.path, "length overflow"))?)?;
        Ok(b.chunks_exact(4).map(|c| i32::from_le_bytes(c.try_into().expect("4 bytes"))).collect())
    }

    pub fn finish(self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::format(self.path, "trailing bytes"));
        }
        Ok(())
    }
}

/// `width, height` as `u32`, then depth, normal (3 per pixel), color
/// (3 per pixel) as `f32` and instance ids as `i32`, all row-major.
pub fn encode_maps(m: &Maps) -> Vec<u8> {
    let mut e = Encoder::header(MAPS_MAGIC, MAPS_VERSION);
    e.u32(m.width as u32);
    e.u32(m.height as u32);
    e.f32s(&m.depth);
    e.f32s(&m.normal);
    e.f32s(&m.color);
    e.i32s(&m.instance);
    e.buf
}

pub fn decode_maps(buf: &[u8], path: &Path) -> Result<Maps> {
    let mut d = Decoder::open(buf, path, MAPS_MAGIC, MAPS_VERSION)?;
    let (w, h) = (d.u32()? as usize, d.u32()? as usize);
    let n = w * h;
    let maps = Maps {
        width: w,
        height: h,
        depth: d.f32s(n)?,
        normal: d.f32s(3 * n)?,
        color: d.f32s(3 * n)?,
        instance: d.i32s(n)?,
    };
    d.finish()?;
    Ok(maps)
}

/// Whitespace-separated text records after a versioned header.
pub struct TextTable {
    pub path: PathBuf,
    /// (1-based line number, fields)
    pub rows: Vec<(usize, Vec<String>)>,
}

impl TextTable {
    pub fn parse(text: &str, path: &Path, kind: &str, version: u32) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let header: Vec<&str> = lines.next().map(|(_, l)| l.split_whitespace().collect()).unwrap_or_default();
        if header.len() != 2 || header[0] != kind {
            return Err(Error::format(path, format!("expected header '{kind} {version}'")));
        }
        let found: u32 = header[1].parse().map_err(|_| Error::format(path, "bad version number"))?;
        if found != version {
            return Err(Error::Version { path: path.into(), expected: version, found });
        }
        Ok(TextTable {
            path: path.into(),
            rows: lines.map(|(n, l)| (n, l.split_whitespace().map(str::to_string).collect())).collect(),
        })
    }

    pub fn error(&self, line: usize, msg: impl std::fmt::Display) -> Error {
        Error::format(&self.path, format!("line {line}: {msg}"))
    }
}

/// Field cursor over one text record.
pub struct Fields<'a> {
    table: &'a TextTable,
    line: usize,
    fields: &'a [String],
    pos: usize,
}

impl<'a> Fields<'a> {
    pub fn new(table: &'a TextTable, line: usize, fields: &'a [String]) -> Self {
        Fields { table, line, fields, pos: 0 }
    }

    pub fn next_str(&mut self) -> Result<&'a str> {
        let f = self.fields.get(self.pos).ok_or_else(|| self.table.error(self.line, "too few fields"))?;
        self.pos += 1;
        Ok(f)
    }

    pub fn parse<T: std::str::FromStr>(&mut self) -> Result<T> {
        let s = self.next_str()?;
        s.parse().map_err(|_| self.table.error(self.line, format!("cannot parse '{s}'")))
    }

    pub fn vec3(&mut self) -> Result<Vec3> {
        Ok(Vec3::new(self.parse()?, self.parse()?, self.parse()?))
    }

    pub fn quat(&mut self) -> Result<Quat> {
        Ok(Quat::new(self.parse()?, self.parse()?, self.parse()?, self.parse()?))
    }

    pub fn pose(&mut self) -> Result<Pose9> {
        Ok(Pose9::new(self.vec3()?, self.quat()?, self.vec3()?))
    }

    pub fn end(&self) -> Result<()> {
        if self.pos != self.fields.len() {
            return Err(self.table.error(self.line, "too many fields"));
        }
        Ok(())
    }
}

pub fn fmt_vec3(v: &Vec3) -> String {
    format!("{} {} {}", v.x, v.y, v.z)
}

pub fn fmt_quat(q: &Quat) -> String {
    format!("{} {} {} {}", q.w, q.x, q.y, q.z)
}

pub fn fmt_pose(p: &Pose9) -> String {
    format!("{} {} {}", fmt_vec3(&p.t), fmt_quat(&p.q), fmt_vec3(&p.s))
}

/// One line per record:
/// `record scene image category source score t(3) q(4) s(3) init_q(4 | -)`,
/// optionally followed by `traj n` and `n` poses of 10 numbers each.
pub fn format_records(records: &[AlignmentRecord]) -> String {
    let mut s = format!("{RECORDS_KIND} {RECORDS_VERSION}\n");
    for r in records {
        let source = match r.source {
            Source::Prediction => "prediction",
            Source::GroundTruth => "groundtruth",
        };
        let init = r.init_q.as_ref().map_or_else(|| "-".to_string(), fmt_quat);
        s += &format!(
            "record {} {} {} {} {} {} {}",
            r.scene_id,
            r.image_id,
            r.category,
            source,
            r.score,
            fmt_pose(&r.pose),
            init
        );
        if !r.trajectory.is_empty() {
            s += &format!(" traj {}", r.trajectory.len());
            for p in &r.trajectory {
                s += " ";
                s += &fmt_pose(p);
            }
        }
        s.push('\n');
    }
    s
}

pub fn parse_records(text: &str, path: &Path) -> Result<Vec<AlignmentRecord>> {
    let table = TextTable::parse(text, path, RECORDS_KIND, RECORDS_VERSION)?;
    let mut out = Vec::with_capacity(table.rows.len());
    for (line, fields) in &table.rows {
        let mut f = Fields::new(&table, *line, fields);
        if f.next_str()? != "record" {
            return Err(table.error(*line, "expected 'record'"));
        }
        let scene_id = f.next_str()?.to_string();
        let image_id = f.next_str()?.to_string();
        let category = f.parse()?;
        let source = match f.next_str()? {
            "prediction" => Source::Prediction,
            "groundtruth" => Source::GroundTruth,
            s => return Err(table.error(*line, format!("unknown source '{s}'"))),
        };
        let score = f.parse()?;
        let pose = f.pose()?;
        let init_q = if fields.get(f.pos).map(String::as_str) == Some("-") {
            f.next_str()?;
            None
        } else {
            Some(f.quat()?)
        };
        let mut trajectory = Vec::new();
        if f.pos < fields.len() {
            if f.next_str()? != "traj" {
                return Err(table.error(*line, "expected 'traj'"));
            }
            let n: usize = f.parse()?;
            for _ in 0..n {
                trajectory.push(f.pose()?);
            }
        }
        f.end()?;
        out.push(AlignmentRecord { scene_id, image_id, category, pose, score, source, init_q, trajectory });
    }
    Ok(out)
}

pub fn write_records(path: &Path, records: &[AlignmentRecord]) -> Result<()> {
    write_atomic(path, format_records(records).as_bytes())
}

pub fn read_records(path: &Path) -> Result<Vec<AlignmentRecord>> {
    parse_records(&read_text(path)?, path)
}

fn encode_params(e: &mut Encoder, p: &Params<f32>) {
    let tensors = p.tensors();
    e.u32(tensors.len() as u32);
    for (name, t) in tensors {
        e.bytes(name.as_bytes());
        e.u32(t.ndim() as u32);
        for &d in t.shape() {
            e.u32(d as u32);
        }
        e.f32s(t.iter());
    }
}

fn decode_params(d: &mut Decoder, p: &mut Params<f32>, path: &Path) -> Result<()> {
    let expected: Vec<(String, Vec<usize>)> = p.tensors().into_iter().map(|(n, t)| (n, t.shape().to_vec())).collect();
    let count = d.u32()? as usize;
    if count != expected.len() {
        return Err(Error::format(path, format!("expected {} tensors, found {count}", expected.len())));
    }
    for ((name, shape), mut dst) in expected.into_iter().zip(p.tensors_mut()) {
        let got = String::from_utf8_lossy(d.bytes()?).into_owned();
        let ndim = d.u32()? as usize;
        let dims = (0..ndim).map(|_| d.u32().map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
        if got != name || dims != shape {
            return Err(Error::format(path, format!("tensor '{got}' {dims:?} where '{name}' {shape:?} was expected")));
        }
        let data = d.f32s(dst.len())?;
        dst.iter_mut().zip(data).for_each(|(x, v)| *x = v);
    }
    Ok(())
}

/// Training configuration (as TOML), finished epochs, optimizer step, then
/// parameters and both optimizer moments as named tensors.
pub fn encode_checkpoint(cfg: &TrainConfig, trainer: &Trainer) -> Result<Vec<u8>> {
    let toml = toml::to_string(cfg).map_err(|e| Error::Config(e.to_string()))?;
    let mut e = Encoder::header(CHECKPOINT_MAGIC, CHECKPOINT_VERSION);
    e.bytes(toml.as_bytes());
    e.u32(trainer.epoch);
    e.u64(trainer.state.step);
    encode_params(&mut e, &trainer.params);
    encode_params(&mut e, &trainer.state.m);
    encode_params(&mut e, &trainer.state.v);
    Ok(e.buf)
}

pub fn decode_checkpoint(buf: &[u8], path: &Path) -> Result<(TrainConfig, Trainer)> {
    let mut d = Decoder::open(buf, path, CHECKPOINT_MAGIC, CHECKPOINT_VERSION)?;
    let text = std::str::from_utf8(d.bytes()?).map_err(|_| Error::format(path, "config is not UTF-8"))?;
    let cfg: TrainConfig = toml::from_str(text).map_err(|e| Error::format(path, e.to_string()))?;
    cfg.validate()?;
    let epoch = d.u32()?;
    let step = d.u64()?;
    let mut params = Params::zeros(&cfg.arch);
    decode_params(&mut d, &mut params, path)?;
    let mut state = LambState::new(&params);
    state.step = step;
    decode_params(&mut d, &mut state.m, path)?;
    decode_params(&mut d, &mut state.v, path)?;
    d.finish()?;
    Ok((cfg, Trainer { params, state, epoch }))
}

pub fn save_checkpoint(path: &Path, cfg: &TrainConfig, trainer: &Trainer) -> Result<()> {
    write_atomic(path, &encode_checkpoint(cfg, trainer)?)
}

pub fn load_checkpoint(path: &Path) -> Result<(TrainConfig, Trainer)> {
    decode_checkpoint(&read_file(path)?, path)
}

/// Image size, row count, then the raw `n x 10` rows as `f32`.
pub fn encode_rows(x: &SparseInput) -> Vec<u8> {
    let mut e = Encoder::header(ROWS_MAGIC, ROWS_VERSION);
    e.u32(x.width);
    e.u32(x.height);
    e.u32(x.n_rows() as u32);
    e.u32(ROW_WIDTH as u32);
    e.f32s(x.rows.iter());
    e.buf
}

pub fn decode_rows(buf: &[u8], path: &Path) -> Result<SparseInput> {
    let mut d = Decoder::open(buf, path, ROWS_MAGIC, ROWS_VERSION)?;
    let (width, height) = (d.u32()?, d.u32()?);
    let (n, w) = (d.u32()? as usize, d.u32()? as usize);
    if w != ROW_WIDTH {
        return Err(Error::format(path, format!("row width {w}, expected {ROW_WIDTH}")));
    }
    let rows = Array2::from_shape_vec((n, w), d.f32s(n * w)?).map_err(|e| Error::format(path, e.to_string()))?;
    d.finish()?;
    Ok(SparseInput { rows, width, height })
}

/// Appends one line to a text file, creating it if needed.
pub fn append_line(path: &Path, line: &str) -> Result<()> {
    let mut f = fs::OpenOptions::new().create(true).append(true).open(path).map_err(|e| Error::io(path, e))?;
    writeln!(f, "{line}").map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::upright_rotation;
    use crate::net::lamb::{lamb_step, LambConfig, TrustMode};
    use crate::net::ArchConfig;
    use crate::shapes::Category;

    fn p() -> &'static Path {
        Path::new("mem")
    }

    #[test]
    fn maps_round_trip() {
        let mut m = Maps::new(3, 2);
        m.depth[1] = 2.5;
        m.normal[4] = -0.6;
        m.color[5] = 0.25;
        m.instance[2] = 7;
        let buf = encode_maps(&m);
        assert_eq!(&buf[..8], MAPS_MAGIC);
        assert_eq!(decode_maps(&buf, p()).unwrap(), m);
        assert!(decode_maps(&buf[..buf.len() - 1], p()).is_err());
        let mut wrong = buf.clone();
        wrong[8] = 9;
        assert!(matches!(decode_maps(&wrong, p()), Err(Error::Version { found: 9, .. })));
    }

    #[test]
    fn records_round_trip_exactly() {
        let r = AlignmentRecord {
            scene_id: "scene0001".into(),
            image_id: "scene0001".into(),
            category: Category::Sofa,
            pose: Pose9::new(Vec3::new(0.1, -1.0 / 3.0, 2.7), upright_rotation(33.3, 17.0), Vec3::new(1.6, 1.7, 1.8)),
            score: 0.123456789,
            source: Source::Prediction,
            init_q: Some(upright_rotation(90.0, 20.0)),
            trajectory: vec![
                Pose9::identity(),
                Pose9::new(Vec3::new(1.0, 2.0, 3.0), Quat::IDENTITY, Vec3::repeat(0.5)),
            ],
        };
        let gt =
            AlignmentRecord { source: Source::GroundTruth, init_q: None, score: 1.0, trajectory: vec![], ..r.clone() };
        let text = format_records(&[r.clone(), gt.clone()]);
        assert_eq!(parse_records(&text, p()).unwrap(), vec![r, gt]);
        assert!(parse_records("sparse-align-records 2\n", p()).is_err());
        assert!(parse_records("sparse-align-records 1\nrecord a b chair prediction 1 0 0\n", p()).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let cfg = TrainConfig { arch: ArchConfig::tiny(), ..TrainConfig::default() };
        let mut t = Trainer::new(&cfg).unwrap();
        let g = Params::init(&cfg.arch, 9).unwrap();
        lamb_step(&mut t.params, &g, &mut t.state, &LambConfig::default(), TrustMode::Layerwise);
        t.epoch = 4;
        let buf = encode_checkpoint(&cfg, &t).unwrap();
        let (cfg2, t2) = decode_checkpoint(&buf, p()).unwrap();
        assert_eq!(cfg2, cfg);
        assert_eq!(t2, t);
        assert!(decode_checkpoint(&buf[..buf.len() - 4], p()).is_err());
        let mut extra = buf.clone();
        extra.push(0);
        assert!(decode_checkpoint(&extra, p()).is_err());
    }

    #[test]
    fn rows_round_trip() {
        let x = SparseInput {
            rows: Array2::from_shape_fn((5, ROW_WIDTH), |(i, j)| (i * 10 + j) as f32 * 0.5),
            width: 64,
            height: 48,
        };
        let y = decode_rows(&encode_rows(&x), p()).unwrap();
        assert_eq!((y.rows, y.width, y.height), (x.rows, x.width, x.height));
    }

    #[test]
    fn atomic_write_creates_dirs() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a/b/c.bin");
        write_atomic(&path, b"xyz").unwrap();
        assert_eq!(read_file(&path).unwrap(), b"xyz");
        append_line(&dir.path().join("log.csv"), "1,2").unwrap();
        append_line(&dir.path().join("log.csv"), "3,4").unwrap();
        assert_eq!(read_text(&dir.path().join("log.csv")).unwrap(), "1,2\n3,4\n");
    }
}
