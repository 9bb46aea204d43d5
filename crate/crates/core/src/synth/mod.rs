//! Synthetic symmetry benchmark: procedural scenes with analytic medial axes,
//! a thinning skeletonizer, and dataset I/O.

pub mod pnm;
mod scene;
mod skeleton;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use scene::{
    bresenham, gen_sample, random_scene, shape_mask, Background, Geometry, Occluder, Point,
    SceneSpec, SceneTraits, Shape, ShapeKind,
};
pub use skeleton::{break_blocks, skeletonize};

use crate::config::{parse_value, unknown_key, Section};
use crate::error::{Result, SrnError};
use crate::image::{BinaryMap, Image};
use crate::io_util::write_atomic;

/// Share of multi-object scenes in the mixed setting.
pub const MIXED_MULTI_OBJECT: f64 = 0.313;
/// Share of partly occluded scenes in the mixed setting.
pub const MIXED_OCCLUDED: f64 = 0.456;

/// Ordered `key=value` generator record.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Meta(pub Vec<(String, String)>);

impl Meta {
    pub fn push(&mut self, key: impl Into<String>, value: impl fmt::Display) {
        self.0.push((key.into(), value.to_string()));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn to_text(&self) -> String {
        self.0.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn parse(text: &str) -> Result<Self> {
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                l.split_once('=')
                    .map(|(k, v)| (k.to_string(), v.to_string()))
                    .ok_or_else(|| SrnError::Input(format!("meta line {l:?} is not key=value")))
            })
            .collect::<Result<_>>()
            .map(Meta)
    }
}

/// Image, one-pixel-thick ground truth, and generator record.
#[derive(Clone, Debug, PartialEq)]
pub struct SymmetrySample {
    pub image: Image,
    pub mask: BinaryMap,
    pub meta: Meta,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Difficulty {
    Simple,
    Cluttered,
    Occluded,
    #[default]
    Mixed,
}

impl fmt::Display for Difficulty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Difficulty::Simple => "simple",
            Difficulty::Cluttered => "cluttered",
            Difficulty::Occluded => "occluded",
            Difficulty::Mixed => "mixed",
        })
    }
}

impl FromStr for Difficulty {
    type Err = SrnError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "simple" => Ok(Difficulty::Simple),
            "cluttered" => Ok(Difficulty::Cluttered),
            "occluded" => Ok(Difficulty::Occluded),
            "mixed" => Ok(Difficulty::Mixed),
            _ => Err(SrnError::Config(format!(
                "unknown difficulty {s:?} (simple, cluttered, occluded, mixed)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    pub n_train: usize,
    pub n_test: usize,
    pub difficulty: Difficulty,
    pub seed: u64,
    /// Side length of the square images.
    pub size: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            n_train: 64,
            n_test: 16,
            difficulty: Difficulty::Mixed,
            seed: 0,
            size: 64,
        }
    }
}

impl DataConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_train == 0 || self.n_test == 0 {
            return Err(SrnError::Config(
                "data.n_train and data.n_test must be positive".into(),
            ));
        }
        if self.size < 32 {
            return Err(SrnError::Config(format!(
                "data.size {} is below 32",
                self.size
            )));
        }
        Ok(())
    }
}

impl Section for DataConfig {
    const NAME: &'static str = "data";

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let full = format!("data.{key}");
        match key {
            "n_train" => self.n_train = parse_value(&full, value)?,
            "n_test" => self.n_test = parse_value(&full, value)?,
            "difficulty" => self.difficulty = value.trim().parse()?,
            "seed" => self.seed = parse_value(&full, value)?,
            "size" => self.size = parse_value(&full, value)?,
            _ => return Err(unknown_key(Self::NAME, key)),
        }
        Ok(())
    }

    fn pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("n_train", self.n_train.to_string()),
            ("n_test", self.n_test.to_string()),
            ("difficulty", self.difficulty.to_string()),
            ("seed", self.seed.to_string()),
            ("size", self.size.to_string()),
        ]
    }
}

fn meta_path(image_path: &Path) -> PathBuf {
    image_path.with_extension("meta")
}

/// Writes image (PGM/PPM), mask (PGM) and the meta sidecar next to the image.
pub fn write_sample(image_path: &Path, mask_path: &Path, sample: &SymmetrySample) -> Result<()> {
    pnm::write_image(image_path, &sample.image)?;
    pnm::write_mask(mask_path, &sample.mask)?;
    write_atomic(&meta_path(image_path), sample.meta.to_text().as_bytes())
}

/// Reads a sample; a missing meta sidecar yields empty meta.
pub fn read_sample(image_path: &Path, mask_path: &Path) -> Result<SymmetrySample> {
    let image = pnm::read_image(image_path)?;
    let mask = pnm::read_mask(mask_path)?;
    if (image.width, image.height) != (mask.width, mask.height) {
        return Err(SrnError::Input(format!(
            "{} is {}x{} but its mask is {}x{}",
            image_path.display(),
            image.width,
            image.height,
            mask.width,
            mask.height
        )));
    }
    let meta = match fs::read_to_string(meta_path(image_path)) {
        Ok(text) => Meta::parse(&text)?,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Meta::default(),
        Err(e) => return Err(e.into()),
    };
    Ok(SymmetrySample { image, mask, meta })
}

/// `(image, mask)` path pairs; relative paths resolve against the manifest's directory.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Manifest {
    pub entries: Vec<(PathBuf, PathBuf)>,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (img, mask) = line.split_once('\t').ok_or_else(|| {
                SrnError::Input(format!(
                    "{}:{}: expected image<TAB>mask",
                    path.display(),
                    i + 1
                ))
            })?;
            entries.push((base.join(img), base.join(mask)));
        }
        Ok(Manifest { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn load_samples(&self) -> Result<Vec<SymmetrySample>> {
        self.entries
            .iter()
            .map(|(i, m)| read_sample(i, m))
            .collect()
    }
}

/// Paths of the two manifests written by [`make_benchmark`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BenchmarkPaths {
    pub train: PathBuf,
    pub test: PathBuf,
}

/// Exactly `round(frac * n)` of `n` flags set, in seeded random positions.
fn exact_flags(n: usize, frac: f64, rng: &mut ChaCha8Rng) -> Vec<bool> {
    let k = (frac * n as f64).round() as usize;
    let mut flags: Vec<bool> = (0..n).map(|i| i < k).collect();
    flags.shuffle(rng);
    flags
}

/// Scene traits of every sample in one split.
pub fn split_traits(difficulty: Difficulty, n: usize, rng: &mut ChaCha8Rng) -> Vec<SceneTraits> {
    match difficulty {
        Difficulty::Simple => vec![
            SceneTraits {
                multi_object: false,
                occluded: false,
                clutter: false,
                gradient: false,
            };
            n
        ],
        Difficulty::Cluttered => (0..n)
            .map(|_| SceneTraits {
                multi_object: rng.gen_bool(0.5),
                occluded: false,
                clutter: true,
                gradient: false,
            })
            .collect(),
        Difficulty::Occluded => (0..n)
            .map(|_| SceneTraits {
                multi_object: false,
                occluded: true,
                clutter: false,
                gradient: true,
            })
            .collect(),
        Difficulty::Mixed => {
            let multi = exact_flags(n, MIXED_MULTI_OBJECT, rng);
            let occluded = exact_flags(n, MIXED_OCCLUDED, rng);
            (0..n)
                .map(|i| {
                    let bg = rng.gen_range(0..3);
                    SceneTraits {
                        multi_object: multi[i],
                        occluded: occluded[i],
                        clutter: bg == 2,
                        gradient: bg == 1,
                    }
                })
                .collect()
        }
    }
}

/// Generates one split in memory; sample `i` depends only on `(seed, split, i)`.
pub fn generate_split(cfg: &DataConfig, split: u64, n: usize) -> Result<Vec<SymmetrySample>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(split << 32);
    let traits = split_traits(cfg.difficulty, n, &mut rng);
    traits
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let mut srng = ChaCha8Rng::seed_from_u64(cfg.seed);
            srng.set_stream((split << 32) | (i as u64 + 1));
            let spec = random_scene(cfg.size, *t, &mut srng);
            let mut sample = gen_sample(&spec)?;
            sample.meta.push("difficulty", cfg.difficulty);
            sample.meta.push("multi_object", t.multi_object);
            sample.meta.push("occluded", t.occluded);
            Ok(sample)
        })
        .collect()
}

/// Writes `train/` and `test/` sample files plus `train.txt` / `test.txt` manifests.
pub fn make_benchmark(cfg: &DataConfig, out_dir: &Path) -> Result<BenchmarkPaths> {
    cfg.validate()?;
    let mut paths = Vec::new();
    for (split, name, n) in [(0u64, "train", cfg.n_train), (1, "test", cfg.n_test)] {
        let samples = generate_split(cfg, split, n)?;
        let mut manifest = String::new();
        for (i, sample) in samples.iter().enumerate() {
            let img = format!("{name}/{i:05}.pgm");
            let mask = format!("{name}/{i:05}_gt.pgm");
            write_sample(&out_dir.join(&img), &out_dir.join(&mask), sample)?;
            manifest.push_str(&format!("{img}\t{mask}\n"));
        }
        let path = out_dir.join(format!("{name}.txt"));
        write_atomic(&path, manifest.as_bytes())?;
        paths.push(path);
    }
    let test = paths.pop().expect("two splits");
    let train = paths.pop().expect("two splits");
    Ok(BenchmarkPaths { train, test })
}
