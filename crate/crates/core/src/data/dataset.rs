//! On-disk datasets: one PPM/PGM pair per sample plus a text manifest.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{domain_err, Error, Result};
use crate::rng::derive_seed;

use super::pnm::{read_pgm, read_ppm, write_pgm, write_ppm};
use super::{generate_road_scene, Sample};

pub const MANIFEST_FILE: &str = "manifest.txt";
const MANIFEST_MAGIC: &str = "d2s-manifest v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
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
            _ => Err(domain_err!("unknown split {s:?} (expected train or val)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub size: usize,
    pub seed: u64,
    pub train: Vec<String>,
    pub val: Vec<String>,
}

impl DatasetManifest {
    pub fn stems(&self, split: Split) -> &[String] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
        }
    }

    pub fn image_path(&self, stem: &str) -> PathBuf {
        self.root.join(format!("{stem}.ppm"))
    }

    pub fn mask_path(&self, stem: &str) -> PathBuf {
        self.root.join(format!("{stem}.pgm"))
    }

    /// Generation seed of the `index`-th sample of `split`. Train samples
    /// take streams `0..n_train`, val samples the following ones.
    pub fn sample_seed(&self, split: Split, index: usize) -> u64 {
        let offset = match split {
            Split::Train => 0,
            Split::Val => self.train.len(),
        };
        derive_seed(self.seed, (offset + index) as u64)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{MANIFEST_MAGIC} size={} seed={}\n", self.size, self.seed);
        for stem in &self.train {
            out += &format!("train {stem}\n");
        }
        for stem in &self.val {
            out += &format!("val {stem}\n");
        }
        out
    }

    pub fn parse(text: &str, root: impl Into<PathBuf>) -> Result<Self> {
        let bad = |line: usize, msg: &str| Error::Format(format!("manifest line {line}: {msg}"));
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let (_, head) = lines.next().ok_or_else(|| bad(1, "empty manifest"))?;
        let rest = head
            .strip_prefix(MANIFEST_MAGIC)
            .ok_or_else(|| bad(1, "missing `d2s-manifest v1` header"))?;
        let (mut size, mut seed) = (None, None);
        for field in rest.split_whitespace() {
            match field.split_once('=') {
                Some(("size", v)) => size = v.parse().ok(),
                Some(("seed", v)) => seed = v.parse().ok(),
                _ => return Err(bad(1, &format!("unexpected header field {field:?}"))),
            }
        }
        let mut manifest = DatasetManifest {
            root: root.into(),
            size: size.ok_or_else(|| bad(1, "missing or invalid size"))?,
            seed: seed.ok_or_else(|| bad(1, "missing or invalid seed"))?,
            train: Vec::new(),
            val: Vec::new(),
        };
        for (n, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            match line.split_whitespace().collect::<Vec<_>>()[..] {
                ["train", stem] => manifest.train.push(stem.to_string()),
                ["val", stem] => manifest.val.push(stem.to_string()),
                _ => {
                    return Err(bad(
                        n,
                        &format!("expected `train <stem>` or `val <stem>`, got {line:?}"),
                    ))
                }
            }
        }
        Ok(manifest)
    }

    /// Reads `dir/manifest.txt` (or the manifest file itself) and checks that
    /// every listed stem has both files.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let (root, file) = if path.is_dir() {
            (path.to_path_buf(), path.join(MANIFEST_FILE))
        } else {
            (
                path.parent().unwrap_or(Path::new(".")).to_path_buf(),
                path.to_path_buf(),
            )
        };
        let text = fs::read_to_string(&file).map_err(|e| Error::io(&file, e))?;
        let manifest = Self::parse(&text, root).map_err(|e| e.in_file(&file))?;
        for stem in manifest.train.iter().chain(&manifest.val) {
            for p in [manifest.image_path(stem), manifest.mask_path(stem)] {
                if !p.is_file() {
                    return Err(Error::io(
                        p,
                        std::io::Error::new(std::io::ErrorKind::NotFound, "listed in manifest but missing"),
                    ));
                }
            }
        }
        Ok(manifest)
    }
}

/// Generates `n_train + n_val` scenes into `out_dir` with their manifest.
pub fn make_dataset(
    n_train: usize,
    n_val: usize,
    size: usize,
    seed: u64,
    out_dir: impl AsRef<Path>,
) -> Result<DatasetManifest> {
    let root = out_dir.as_ref();
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let manifest = DatasetManifest {
        root: root.to_path_buf(),
        size,
        seed,
        train: (0..n_train).map(|i| format!("train_{i:05}")).collect(),
        val: (0..n_val).map(|i| format!("val_{i:05}")).collect(),
    };
    for split in [Split::Train, Split::Val] {
        for (i, stem) in manifest.stems(split).iter().enumerate() {
            let sample = generate_road_scene(manifest.sample_seed(split, i), size)?;
            write_ppm(&sample.image, manifest.image_path(stem))?;
            write_pgm(&sample.mask, manifest.mask_path(stem))?;
        }
    }
    let file = root.join(MANIFEST_FILE);
    fs::write(&file, manifest.to_text()).map_err(|e| Error::io(&file, e))?;
    Ok(manifest)
}

/// Reads every sample of `split` into memory.
pub fn load_split(manifest: &DatasetManifest, split: Split) -> Result<Vec<Sample>> {
    manifest
        .stems(split)
        .iter()
        .enumerate()
        .map(|(i, stem)| {
            let image = read_ppm(manifest.image_path(stem))?;
            let mask = read_pgm(manifest.mask_path(stem))?;
            if image.shape().h() != mask.shape().h() || image.shape().w() != mask.shape().w() {
                return Err(Error::Shape(format!(
                    "image {} and mask {} differ in size",
                    image.shape(),
                    mask.shape()
                ))
                .in_file(manifest.mask_path(stem)));
            }
            Ok(Sample {
                image,
                mask,
                seed: manifest.sample_seed(split, i),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn writes_pairs_and_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let m = make_dataset(3, 2, 32, 7, dir.path()).unwrap();
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 11);
        let loaded = DatasetManifest::load(dir.path()).unwrap();
        assert_eq!(loaded, m);
        assert_eq!(DatasetManifest::load(dir.path().join(MANIFEST_FILE)).unwrap(), m);
        assert!(m.train.iter().all(|s| !m.val.contains(s)));
        let val = load_split(&m, Split::Val).unwrap();
        assert_eq!(val.len(), 2);
        let fresh = generate_road_scene(val[1].seed, 32).unwrap();
        assert_eq!(val[1].mask, fresh.mask);
    }

    #[test]
    fn derived_seeds_are_distinct() {
        let m = DatasetManifest {
            root: PathBuf::new(),
            size: 32,
            seed: 1,
            train: vec![String::new(); 50],
            val: vec![String::new(); 50],
        };
        let mut seeds: Vec<u64> = (0..50)
            .flat_map(|i| [m.sample_seed(Split::Train, i), m.sample_seed(Split::Val, i)])
            .collect();
        seeds.sort_unstable();
        seeds.dedup();
        assert_eq!(seeds.len(), 100);
    }

    #[test]
    fn manifest_text_round_trip() {
        let text = "d2s-manifest v1 size=64 seed=9\ntrain a\ntrain b\nval c\n";
        let m = DatasetManifest::parse(text, "x").unwrap();
        assert_eq!((m.size, m.seed, m.train.len(), m.val.len()), (64, 9, 2, 1));
        assert_eq!(m.to_text(), text);
        assert!(DatasetManifest::parse("d2s-manifest v2 size=1 seed=1\n", "x").is_err());
        assert!(DatasetManifest::parse("d2s-manifest v1 size=64 seed=9\ntest a\n", "x").is_err());
    }

    #[test]
    fn missing_files_are_reported_with_path() {
        let dir = tempfile::tempdir().unwrap();
        make_dataset(2, 1, 32, 1, dir.path()).unwrap();
        fs::remove_file(dir.path().join("train_00001.pgm")).unwrap();
        let err = DatasetManifest::load(dir.path()).unwrap_err();
        assert!(err.to_string().contains("train_00001.pgm"), "{err}");
    }
}
