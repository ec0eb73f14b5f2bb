//! Synthetic datasets on disk.
//!
//! ```text
//! <root>/dataset.toml    generator settings
//! <root>/library.txt     CAD library recipes
//! <root>/manifest.txt    cameras, objects and detections per scene
//! <root>/split.txt       train / val assignment
//! <root>/maps/<id>.bin   rendered observation maps
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Intrinsics, Rigid};
use crate::io::{self, fmt_pose, fmt_quat, fmt_vec3, Fields, TextTable};
use crate::scene::{generate_scene, BBox, Detection, SceneConfig, SceneObject, SceneSample};
use crate::seed;
use crate::shapes::{CadLibrary, Category, ModelRecipe};

pub const MANIFEST_KIND: &str = "sparse-align-manifest";
pub const LIBRARY_KIND: &str = "sparse-align-library";
pub const SPLIT_KIND: &str = "sparse-align-split";
pub const DATASET_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateConfig {
    pub scene: SceneConfig,
    pub n_scenes: usize,
    /// trailing fraction of scenes assigned to the validation split
    pub val_fraction: f64,
    pub models_per_category: u32,
    pub n_points: usize,
    pub id_bits: u32,
    pub seed: u64,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        GenerateConfig {
            scene: SceneConfig::default(),
            n_scenes: 100,
            val_fraction: 0.2,
            models_per_category: 4,
            n_points: 1000,
            id_bits: 12,
            seed: 0,
        }
    }
}

impl GenerateConfig {
    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        if !(0.0..=1.0).contains(&self.val_fraction) {
            return Err(Error::Config("val_fraction must lie in [0, 1]".into()));
        }
        if self.n_scenes == 0 || self.models_per_category == 0 || self.n_points == 0 {
            return Err(Error::Config("n_scenes, models_per_category and n_points must be positive".into()));
        }
        Ok(())
    }

    pub fn categories(&self) -> Vec<Category> {
        let mut c: Vec<Category> = self.scene.category_mix.iter().filter(|(_, w)| *w > 0.0).map(|(c, _)| *c).collect();
        c.sort();
        c.dedup();
        c
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            _ => Err(Error::Config(format!("unknown split '{s}'"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub recipes: Vec<ModelRecipe>,
    pub library: CadLibrary,
    pub n_points: usize,
    pub scenes: Vec<SceneSample>,
    pub split: Vec<Split>,
}

/// Placement attempts with fresh seeds before a scene is given up.
const SCENE_ATTEMPTS: u64 = 16;

impl Dataset {
    pub fn generate(cfg: &GenerateConfig) -> Result<Dataset> {
        cfg.validate()?;
        let recipes = CadLibrary::recipes(&cfg.categories(), cfg.models_per_category, seed::derive(cfg.seed, &[0x11b]));
        let library = CadLibrary::build(&recipes, cfg.n_points, cfg.id_bits)?;
        let mut scenes = Vec::with_capacity(cfg.n_scenes);
        for i in 0..cfg.n_scenes {
            let id = format!("scene{i:05}");
            let mut last = None;
            for attempt in 0..SCENE_ATTEMPTS {
                match generate_scene(&id, &cfg.scene, &library, seed::derive(cfg.seed, &[0x5ce, i as u64, attempt])) {
                    Ok(s) => {
                        last = Some(Ok(s));
                        break;
                    }
                    Err(e @ Error::PlacementFailed(_)) => last = Some(Err(e)),
                    Err(e) => return Err(e),
                }
            }
            scenes.push(last.expect("at least one attempt")?);
        }
        let n_val = (cfg.val_fraction * cfg.n_scenes as f64).round() as usize;
        let split =
            (0..cfg.n_scenes).map(|i| if i + n_val >= cfg.n_scenes { Split::Val } else { Split::Train }).collect();
        Ok(Dataset { recipes, library, n_points: cfg.n_points, scenes, split })
    }

    pub fn scenes_in(&self, split: Split) -> Vec<&SceneSample> {
        self.scenes.iter().zip(&self.split).filter(|(_, s)| **s == split).map(|(s, _)| s).collect()
    }

    /// Clones the scenes of one split.
    pub fn subset(&self, split: Split) -> Vec<SceneSample> {
        self.scenes_in(split).into_iter().cloned().collect()
    }

    pub fn save(&self, root: &Path, cfg: Option<&GenerateConfig>) -> Result<()> {
        if let Some(cfg) = cfg {
            let toml = toml::to_string(cfg).map_err(|e| Error::Config(e.to_string()))?;
            io::write_atomic(&root.join("dataset.toml"), toml.as_bytes())?;
        }
        io::write_atomic(&root.join("library.txt"), self.format_library().as_bytes())?;
        io::write_atomic(&root.join("manifest.txt"), self.format_manifest().as_bytes())?;
        let mut split = format!("{SPLIT_KIND} {DATASET_VERSION}\n");
        for (s, sp) in self.scenes.iter().zip(&self.split) {
            split += &format!("{} {}\n", s.id, sp.name());
        }
        io::write_atomic(&root.join("split.txt"), split.as_bytes())?;
        for s in &self.scenes {
            io::write_atomic(&maps_path(root, &s.id), &io::encode_maps(&s.maps))?;
        }
        Ok(())
    }

    fn format_library(&self) -> String {
        let mut s = format!("{LIBRARY_KIND} {DATASET_VERSION}\n");
        s += &format!("n_points {}\nid_bits {}\n", self.n_points, self.library.id_bits);
        for r in &self.recipes {
            s += &format!("model {} {} {}\n", r.id, r.category, r.seed);
        }
        s
    }

    /// ```text
    /// scene <id> fx fy cx cy width height  q(4) t(3) of cam_to_world
    /// object <model_id> <category> t(3) q(4) s(3)
    /// box <object index> umin vmin umax vmax
    /// ```
    fn format_manifest(&self) -> String {
        let mut s = format!("{MANIFEST_KIND} {DATASET_VERSION}\n");
        for sc in &self.scenes {
            let k = &sc.intrinsics;
            s += &format!(
                "scene {} {} {} {} {} {} {} {} {}\n",
                sc.id,
                k.fx,
                k.fy,
                k.cx,
                k.cy,
                k.width,
                k.height,
                fmt_quat(&sc.cam_to_world.q),
                fmt_vec3(&sc.cam_to_world.t)
            );
            for o in &sc.objects {
                s += &format!("object {} {} {}\n", o.model_id, o.category, fmt_pose(&o.pose));
            }
            for b in &sc.boxes {
                let bb = &b.bbox;
                s += &format!("box {} {} {} {} {}\n", b.object, bb.umin, bb.vmin, bb.umax, bb.vmax);
            }
        }
        s
    }

    /// Loads a dataset; scenes whose maps are missing are skipped with a
    /// warning.
    pub fn load(root: &Path) -> Result<Dataset> {
        let lib_path = root.join("library.txt");
        let lib = TextTable::parse(&io::read_text(&lib_path)?, &lib_path, LIBRARY_KIND, DATASET_VERSION)?;
        let (mut n_points, mut id_bits) = (None, None);
        let mut recipes = Vec::new();
        for (line, fields) in &lib.rows {
            let mut f = Fields::new(&lib, *line, fields);
            match f.next_str()? {
                "n_points" => n_points = Some(f.parse()?),
                "id_bits" => id_bits = Some(f.parse()?),
                "model" => recipes.push(ModelRecipe { id: f.parse()?, category: f.parse()?, seed: f.parse()? }),
                t => return Err(lib.error(*line, format!("unknown tag '{t}'"))),
            }
            f.end()?;
        }
        let (Some(n_points), Some(id_bits)) = (n_points, id_bits) else {
            return Err(Error::format(&lib_path, "missing n_points or id_bits"));
        };
        let library = CadLibrary::build(&recipes, n_points, id_bits)?;

        let man_path = root.join("manifest.txt");
        let man = TextTable::parse(&io::read_text(&man_path)?, &man_path, MANIFEST_KIND, DATASET_VERSION)?;
        let mut scenes: Vec<SceneSample> = Vec::new();
        for (line, fields) in &man.rows {
            let mut f = Fields::new(&man, *line, fields);
            let tag = f.next_str()?;
            if tag == "scene" {
                let id = f.next_str()?.to_string();
                let intrinsics =
                    Intrinsics::new(f.parse()?, f.parse()?, f.parse()?, f.parse()?, f.parse()?, f.parse()?)?;
                let q = f.quat()?;
                let t = f.vec3()?;
                scenes.push(SceneSample {
                    id,
                    intrinsics,
                    cam_to_world: Rigid { q, t },
                    objects: Vec::new(),
                    maps: crate::scene::Maps::new(0, 0),
                    boxes: Vec::new(),
                });
            } else {
                let Some(sc) = scenes.last_mut() else {
                    return Err(man.error(*line, "record before the first scene"));
                };
                match tag {
                    "object" => {
                        let model_id: u32 = f.parse()?;
                        let category: Category = f.parse()?;
                        if library.get(model_id).map(|m| m.category) != Some(category) {
                            return Err(man.error(*line, format!("model {model_id} is not a {category}")));
                        }
                        sc.objects.push(SceneObject { model_id, category, pose: f.pose()? });
                    }
                    "box" => {
                        let object: usize = f.parse()?;
                        let Some(o) = sc.objects.get(object) else {
                            return Err(man.error(*line, format!("box refers to unknown object {object}")));
                        };
                        sc.boxes.push(Detection {
                            object,
                            category: o.category,
                            bbox: BBox { umin: f.parse()?, vmin: f.parse()?, umax: f.parse()?, vmax: f.parse()? },
                        });
                    }
                    t => return Err(man.error(*line, format!("unknown tag '{t}'"))),
                }
            }
            f.end()?;
        }

        let split_path = root.join("split.txt");
        let st = TextTable::parse(&io::read_text(&split_path)?, &split_path, SPLIT_KIND, DATASET_VERSION)?;
        let mut assign = std::collections::HashMap::new();
        for (line, fields) in &st.rows {
            let mut f = Fields::new(&st, *line, fields);
            let id = f.next_str()?.to_string();
            let sp: Split = f.parse()?;
            f.end()?;
            assign.insert(id, sp);
        }

        let mut kept = Vec::with_capacity(scenes.len());
        let mut split = Vec::with_capacity(scenes.len());
        for mut sc in scenes {
            let Some(&sp) = assign.get(&sc.id) else {
                return Err(Error::format(&split_path, format!("scene '{}' has no split", sc.id)));
            };
            let path = maps_path(root, &sc.id);
            let buf = match std::fs::read(&path) {
                Ok(b) => b,
                Err(e) => {
                    log::warn!("skipping scene {}: {}: {e}", sc.id, path.display());
                    continue;
                }
            };
            sc.maps = io::decode_maps(&buf, &path)?;
            let k = &sc.intrinsics;
            if (sc.maps.width, sc.maps.height) != (k.width as usize, k.height as usize) {
                return Err(Error::format(&path, "map size does not match the intrinsics"));
            }
            kept.push(sc);
            split.push(sp);
        }
        Ok(Dataset { recipes, library, n_points, scenes: kept, split })
    }
}

pub fn maps_path(root: &Path, id: &str) -> std::path::PathBuf {
    root.join("maps").join(format!("{id}.bin"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> GenerateConfig {
        GenerateConfig {
            scene: SceneConfig { width: 80, height: 60, ..SceneConfig::default() },
            n_scenes: 6,
            val_fraction: 0.34,
            models_per_category: 2,
            n_points: 200,
            seed: 3,
            ..GenerateConfig::default()
        }
    }

    fn dir_bytes(root: &Path) -> Vec<(String, Vec<u8>)> {
        let mut out = Vec::new();
        let mut stack = vec![root.to_path_buf()];
        while let Some(d) = stack.pop() {
            for e in std::fs::read_dir(&d).unwrap() {
                let p = e.unwrap().path();
                if p.is_dir() {
                    stack.push(p);
                } else {
                    out.push((p.strip_prefix(root).unwrap().display().to_string(), std::fs::read(&p).unwrap()));
                }
            }
        }
        out.sort();
        out
    }

    #[test]
    fn save_load_round_trip_and_rerun_is_byte_identical() {
        let cfg = small();
        let ds = Dataset::generate(&cfg).unwrap();
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        ds.save(a.path(), Some(&cfg)).unwrap();
        Dataset::generate(&cfg).unwrap().save(b.path(), Some(&cfg)).unwrap();
        assert_eq!(dir_bytes(a.path()), dir_bytes(b.path()));

        let back = Dataset::load(a.path()).unwrap();
        assert_eq!(back.split, ds.split);
        assert_eq!(back.recipes, ds.recipes);
        for (x, y) in back.scenes.iter().zip(&ds.scenes) {
            assert_eq!(x.id, y.id);
            assert_eq!(x.intrinsics, y.intrinsics);
            assert_eq!(x.cam_to_world, y.cam_to_world);
            assert_eq!(x.objects, y.objects);
            assert_eq!(x.boxes, y.boxes);
            assert_eq!(x.maps, y.maps);
        }
        let cfg_back: GenerateConfig = toml::from_str(&io::read_text(&a.path().join("dataset.toml")).unwrap()).unwrap();
        assert_eq!(cfg_back, cfg);
    }

    #[test]
    fn split_is_a_disjoint_partition() {
        let ds = Dataset::generate(&small()).unwrap();
        let (tr, va) = (ds.scenes_in(Split::Train), ds.scenes_in(Split::Val));
        assert_eq!((tr.len(), va.len()), (4, 2));
        assert!(tr.iter().all(|t| va.iter().all(|v| v.id != t.id)));
    }

    #[test]
    fn manifest_object_counts_match_rendered_instances() {
        let ds = Dataset::generate(&small()).unwrap();
        for s in &ds.scenes {
            let mut seen: Vec<i32> = s.maps.instance.iter().copied().filter(|&i| i >= 0).collect();
            seen.sort();
            seen.dedup();
            assert!(seen.iter().all(|&i| (i as usize) < s.objects.len()));
            assert_eq!(seen.len(), s.boxes.len());
        }
    }

    #[test]
    fn missing_maps_are_skipped() {
        let cfg = small();
        let dir = tempfile::tempdir().unwrap();
        Dataset::generate(&cfg).unwrap().save(dir.path(), None).unwrap();
        std::fs::remove_file(maps_path(dir.path(), "scene00001")).unwrap();
        let back = Dataset::load(dir.path()).unwrap();
        assert_eq!(back.scenes.len(), 5);
        assert!(back.scenes.iter().all(|s| s.id != "scene00001"));
    }
}
