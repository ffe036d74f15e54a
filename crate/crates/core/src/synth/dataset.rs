//! Family-stratified synthetic datasets and their on-disk layout.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{generate_material, MaterialFamily, MaterialSample};
use crate::error::{Error, Result};
use crate::io::{read_json, read_png16, read_stack, write_json, write_png16, write_stack, MaterialMeta, META_FILE, SCAN_FILE};
use crate::math::mix_seed;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const BASE_COLOR_FILE: &str = "base_color.png";
pub const MIN_PER_FAMILY: usize = 10;
const TEST_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: usize,
    pub name: String,
    pub family: MaterialFamily,
    pub seed: u64,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    families: Vec<MaterialFamily>,
    n_per_family: usize,
    seed: u64,
    size: usize,
    ppi: f64,
    materials: Vec<ManifestEntry>,
}

/// Generated materials with a stratified train/test split. `samples[i].id == i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<MaterialSample>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub families: Vec<MaterialFamily>,
    pub n_per_family: usize,
    pub seed: u64,
    pub size: usize,
    pub ppi: f64,
}

impl Dataset {
    pub fn train_samples(&self) -> impl Iterator<Item = &MaterialSample> {
        self.train.iter().map(|&i| &self.samples[i])
    }

    pub fn test_samples(&self) -> impl Iterator<Item = &MaterialSample> {
        self.test.iter().map(|&i| &self.samples[i])
    }

    pub fn split_of(&self, id: usize) -> Split {
        if self.test.binary_search(&id).is_ok() {
            Split::Test
        } else {
            Split::Train
        }
    }
}

/// Number of test materials out of `n` for one family.
pub fn test_count(n: usize) -> usize {
    ((n as f64 * TEST_FRACTION).round() as usize).max(1)
}

/// Seed of material `index` within `family` under the dataset seed.
pub fn material_seed(seed: u64, family: MaterialFamily, index: usize) -> u64 {
    mix_seed(mix_seed(seed, family.index() as u64), index as u64)
}

/// `n_per_family` materials of each family, split 90/10 within every family.
pub fn make_dataset(
    n_per_family: usize,
    families: &[MaterialFamily],
    seed: u64,
    size: usize,
    ppi: f64,
) -> Result<Dataset> {
    if n_per_family < MIN_PER_FAMILY {
        return Err(Error::InvalidValue(format!(
            "{n_per_family} materials per family, at least {MIN_PER_FAMILY} needed"
        )));
    }
    if families.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let jobs: Vec<(usize, MaterialFamily, usize)> = families
        .iter()
        .enumerate()
        .flat_map(|(fi, &f)| (0..n_per_family).map(move |k| (fi * n_per_family + k, f, k)))
        .collect();
    let samples = jobs
        .par_iter()
        .map(|&(id, family, k)| {
            let mut s = generate_material(family, material_seed(seed, family, k), size, ppi)?;
            s.id = id;
            s.name = format!("{}_{k:04}", family.name());
            Ok(s)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut train = Vec::new();
    let mut test = Vec::new();
    for (fi, &family) in families.iter().enumerate() {
        let mut ids: Vec<usize> = (fi * n_per_family..(fi + 1) * n_per_family).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 1000 + family.index() as u64));
        ids.shuffle(&mut rng);
        let n_test = test_count(n_per_family);
        test.extend_from_slice(&ids[..n_test]);
        train.extend_from_slice(&ids[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(Dataset { samples, train, test, families: families.to_vec(), n_per_family, seed, size, ppi })
}

/// Writes one folder per material plus `manifest.json`.
pub fn save_dataset(dir: &Path, d: &Dataset) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    d.samples.par_iter().try_for_each(|s| {
        let sub = dir.join(&s.name);
        write_stack(&sub, &s.gt)?;
        write_png16(&sub.join(SCAN_FILE), &s.scan)?;
        write_png16(&sub.join(BASE_COLOR_FILE), &s.base_color)?;
        let meta = MaterialMeta {
            name: s.name.clone(),
            family: s.family.name().to_string(),
            ppi: s.ppi,
            width: s.width(),
            height: s.height(),
        };
        write_json(&sub.join(META_FILE), &meta)
    })?;
    let manifest = Manifest {
        families: d.families.clone(),
        n_per_family: d.n_per_family,
        seed: d.seed,
        size: d.size,
        ppi: d.ppi,
        materials: d
            .samples
            .iter()
            .map(|s| ManifestEntry {
                id: s.id,
                name: s.name.clone(),
                family: s.family,
                seed: s.seed,
                split: d.split_of(s.id),
            })
            .collect(),
    };
    write_json(&dir.join(MANIFEST_FILE), &manifest)
}

/// Reads a dataset written by [`save_dataset`]. Maps come back 16-bit quantized.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let m: Manifest = read_json(&dir.join(MANIFEST_FILE))?;
    let samples = m
        .materials
        .par_iter()
        .enumerate()
        .map(|(i, e)| {
            if e.id != i {
                return Err(Error::parse(MANIFEST_FILE, format!("material {} has id {}, expected {i}", e.name, e.id)));
            }
            let sub = dir.join(&e.name);
            let meta: MaterialMeta = read_json(&sub.join(META_FILE))?;
            Ok(MaterialSample {
                id: e.id,
                name: e.name.clone(),
                family: e.family,
                gt: read_stack(&sub, meta.ppi)?,
                scan: read_png16(&sub.join(SCAN_FILE), meta.ppi)?,
                base_color: read_png16(&sub.join(BASE_COLOR_FILE), meta.ppi)?,
                seed: e.seed,
                ppi: meta.ppi,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let pick = |split| m.materials.iter().filter(|e| e.split == split).map(|e| e.id).collect::<Vec<_>>();
    Ok(Dataset {
        samples,
        train: pick(Split::Train),
        test: pick(Split::Test),
        families: m.families,
        n_per_family: m.n_per_family,
        seed: m.seed,
        size: m.size,
        ppi: m.ppi,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::DEFAULT_PPI;

    #[test]
    fn split_counts_are_stratified() {
        assert_eq!(test_count(10), 1);
        assert_eq!(test_count(20), 2);
        assert_eq!(test_count(14), 1);
        assert_eq!(test_count(15), 2);
        let d = make_dataset(20, &MaterialFamily::ALL, 3, 64, DEFAULT_PPI).unwrap();
        assert_eq!((d.train.len(), d.test.len()), (108, 12));
        for f in MaterialFamily::ALL {
            assert_eq!(d.test_samples().filter(|s| s.family == f).count(), 2);
            assert_eq!(d.train_samples().filter(|s| s.family == f).count(), 18);
        }
        let mut all: Vec<usize> = d.train.iter().chain(&d.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..120).collect::<Vec<_>>());
        for (i, s) in d.samples.iter().enumerate() {
            assert_eq!(s.id, i);
        }
    }

    #[test]
    fn same_seed_same_split() {
        let fams = [MaterialFamily::Satin, MaterialFamily::RibKnit];
        let a = make_dataset(10, &fams, 8, 64, DEFAULT_PPI).unwrap();
        let b = make_dataset(10, &fams, 8, 64, DEFAULT_PPI).unwrap();
        assert_eq!(a, b);
        let c = make_dataset(10, &fams, 9, 64, DEFAULT_PPI).unwrap();
        assert_ne!(a.samples, c.samples);
    }

    #[test]
    fn rejects_tiny_families() {
        assert!(make_dataset(9, &MaterialFamily::ALL, 0, 64, DEFAULT_PPI).is_err());
    }

    #[test]
    fn save_and_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let d = make_dataset(10, &[MaterialFamily::LeatherGrain], 2, 64, DEFAULT_PPI).unwrap();
        save_dataset(dir.path(), &d).unwrap();
        let l = load_dataset(dir.path()).unwrap();
        assert_eq!((l.train.clone(), l.test.clone()), (d.train.clone(), d.test.clone()));
        assert_eq!(l.families, d.families);
        for (a, b) in l.samples.iter().zip(&d.samples) {
            assert_eq!((a.id, &a.name, a.family, a.seed), (b.id, &b.name, b.family, b.seed));
            for (x, y) in a.scan.data().iter().zip(b.scan.data()) {
                assert!((x - y).abs() <= 0.5 / 65535.0 + 1e-12);
            }
            for (x, y) in a.gt.specular.data().iter().zip(b.gt.specular.data()) {
                assert!((x - y).abs() <= 0.5 / 65535.0 + 1e-12);
            }
        }
    }
}
