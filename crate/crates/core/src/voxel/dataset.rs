//! Dataset manifests: one JSON object per line with `path`, `label` and
//! `split` (`train` or `test`). Relative paths resolve against the
//! manifest's directory.

use std::collections::HashSet;
use std::io::BufRead;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{load_voxel, read_binvox, read_image_sample, ImageSample, VoxelGrid};
use crate::error::{Error, Result};
use crate::exec::Exec;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub label: String,
    pub split: Split,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    /// Directory relative paths are resolved against.
    pub root: PathBuf,
}

impl DatasetManifest {
    pub fn new(entries: Vec<ManifestEntry>, root: impl Into<PathBuf>) -> Result<Self> {
        let m = DatasetManifest {
            entries,
            root: root.into(),
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for e in &self.entries {
            if !seen.insert(&e.path) {
                return Err(Error::Data(format!(
                    "duplicate path in manifest: {}",
                    e.path.display()
                )));
            }
        }
        Ok(())
    }

    pub fn parse<R: BufRead>(reader: R, root: impl Into<PathBuf>) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let e: ManifestEntry = serde_json::from_str(&line).map_err(|err| Error::Parse {
                line: i + 1,
                message: err.to_string(),
            })?;
            entries.push(e);
        }
        Self::new(entries, root)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(std::io::BufReader::new(f), root)
    }

    pub fn write<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        for e in &self.entries {
            serde_json::to_writer(&mut w, e)?;
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        if entry.path.is_absolute() {
            entry.path.clone()
        } else {
            self.root.join(&entry.path)
        }
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    /// Sorted distinct labels across all splits.
    pub fn labels(&self) -> Vec<String> {
        let mut l: Vec<String> = self.entries.iter().map(|e| e.label.clone()).collect();
        l.sort();
        l.dedup();
        l
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum SampleData {
    Voxel(VoxelGrid),
    Image(ImageSample),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub path: PathBuf,
    pub label: String,
    pub data: SampleData,
}

impl Sample {
    /// The voxel target: the grid itself, or the image's paired grid.
    pub fn grid(&self) -> Option<&VoxelGrid> {
        match &self.data {
            SampleData::Voxel(g) => Some(g),
            SampleData::Image(img) => img.paired_voxel.as_ref(),
        }
    }

    pub fn image(&self) -> Option<&ImageSample> {
        match &self.data {
            SampleData::Image(img) => Some(img),
            SampleData::Voxel(_) => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Order {
    Manifest,
    Shuffled(u64),
}

/// Reads one sample file, dispatching on extension (`vslv`, `binvox`, `vsli`).
pub fn load_sample(path: &Path, label: &str) -> Result<SampleData> {
    if !path.exists() {
        return Err(Error::Data(format!("missing file: {}", path.display())));
    }
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default();
    let open = || {
        std::fs::File::open(path)
            .map(std::io::BufReader::new)
            .map_err(|e| Error::io(path, e))
    };
    let ctx = |e: Error| Error::Data(format!("{}: {e}", path.display()));
    match ext.as_str() {
        "vslv" => load_voxel(path).map(SampleData::Voxel).map_err(ctx),
        "binvox" => read_binvox(open()?).map(SampleData::Voxel).map_err(ctx),
        "vsli" => read_image_sample(open()?, label)
            .map(SampleData::Image)
            .map_err(ctx),
        _ => Err(Error::Data(format!(
            "unsupported sample type: {}",
            path.display()
        ))),
    }
}

/// Loads every entry of `split`. Order is the manifest order or a seeded
/// shuffle of it; parallel decoding never changes the order.
pub fn load_dataset(
    manifest: &DatasetManifest,
    split: Split,
    order: Order,
    exec: Exec,
) -> Result<Vec<Sample>> {
    manifest.validate()?;
    let mut entries: Vec<&ManifestEntry> = manifest.split(split).collect();
    if let Order::Shuffled(seed) = order {
        entries.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    exec.try_map(&entries, |_, e| {
        let path = manifest.resolve(e);
        Ok(Sample {
            data: load_sample(&path, &e.label)?,
            path,
            label: e.label.clone(),
        })
    })
}
