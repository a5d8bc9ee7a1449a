//! Procedural shape corpus and point-cloud file IO.

mod io;
mod shapes;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

pub use io::{decode_cloud, encode_cloud, is_cloud_file, read_cloud, write_cloud, CloudFormat, PCB_MAGIC};
pub use shapes::{
    crop_partial, generate_shape, rotate, sample_surface, ShapeClass, ShapeSpec, MAX_SHIFT, MAX_TILT,
};

use crate::error::{Error, Result};
use crate::io_util::write_atomic;
use crate::seed::{derive_seed, stable_hash};

pub const INDEX_FILE: &str = "index.tsv";

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusOptions {
    pub classes: Vec<ShapeClass>,
    pub per_class: usize,
    pub n_points: usize,
    pub seed: u64,
    pub format: CloudFormat,
    /// When set, each shape is reduced to this many points seen from a random viewpoint.
    pub crop: Option<usize>,
}

impl Default for CorpusOptions {
    fn default() -> Self {
        CorpusOptions {
            classes: ShapeClass::ALL.to_vec(),
            per_class: 50,
            n_points: 2048,
            seed: 0,
            format: CloudFormat::PcbBinary,
            crop: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexEntry {
    /// Relative to the corpus directory.
    pub path: PathBuf,
    pub class: String,
    pub seed: u64,
}

pub fn shape_seed(base: u64, class: ShapeClass, item: usize) -> u64 {
    derive_seed(base, &[stable_hash(class.name()), item as u64])
}

/// Generates the cloud for one index slot without touching the disk.
pub fn corpus_item(opts: &CorpusOptions, class: ShapeClass, item: usize) -> Result<(u64, crate::geom::PointCloud)> {
    let seed = shape_seed(opts.seed, class, item);
    let cloud = generate_shape(&ShapeSpec::random(class, opts.n_points, seed))?;
    let cloud = match opts.crop {
        Some(keep) => crop_partial(&cloud, keep, derive_seed(seed, &[stable_hash("crop")]))?,
        None => cloud,
    };
    Ok((seed, cloud))
}

/// Writes `per_class` clouds per class plus `index.tsv` (`path \t class \t seed`)
/// into `out_dir`. Output depends only on the options.
pub fn generate_corpus(opts: &CorpusOptions, out_dir: &Path) -> Result<Vec<IndexEntry>> {
    if opts.classes.is_empty() || opts.per_class == 0 || opts.n_points == 0 {
        return Err(Error::invalid("corpus needs at least one class, shape and point"));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let slots: Vec<(ShapeClass, usize)> = opts
        .classes
        .iter()
        .flat_map(|&c| (0..opts.per_class).map(move |j| (c, j)))
        .collect();
    let entries: Vec<Result<IndexEntry>> = slots
        .par_iter()
        .map(|&(class, j)| {
            let (seed, cloud) = corpus_item(opts, class, j)?;
            let rel = PathBuf::from(format!("{}_{j:04}.{}", class.name(), opts.format.extension()));
            write_cloud(&out_dir.join(&rel), &cloud)?;
            Ok(IndexEntry {
                path: rel,
                class: class.name().to_owned(),
                seed,
            })
        })
        .collect();
    let entries = entries.into_iter().collect::<Result<Vec<_>>>()?;
    write_index(&out_dir.join(INDEX_FILE), &entries)?;
    Ok(entries)
}

pub fn write_index(path: &Path, entries: &[IndexEntry]) -> Result<()> {
    let mut out = String::new();
    for e in entries {
        writeln!(out, "{}\t{}\t{}", e.path.display(), e.class, e.seed).expect("writing to a String");
    }
    write_atomic(path, out.as_bytes())
}

pub fn read_index(path: &Path) -> Result<Vec<IndexEntry>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        let bad = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg,
        };
        if f.len() != 3 {
            return Err(bad(format!("expected 3 tab-separated fields, found {}", f.len())));
        }
        out.push(IndexEntry {
            path: PathBuf::from(f[0]),
            class: f[1].to_owned(),
            seed: f[2].parse().map_err(|_| bad(format!("bad seed {:?}", f[2])))?,
        });
    }
    Ok(out)
}

/// A loaded cloud together with the path it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedCloud {
    pub path: PathBuf,
    pub cloud: crate::geom::PointCloud,
}

/// Loads every cloud of a directory. With an index file the index order and
/// class labels are used; otherwise cloud files are taken in name order, unlabelled.
pub fn load_dir(dir: &Path) -> Result<Vec<LoadedCloud>> {
    let index = dir.join(INDEX_FILE);
    let listed: Vec<(PathBuf, Option<String>)> = if index.is_file() {
        read_index(&index)?
            .into_iter()
            .map(|e| (dir.join(e.path), Some(e.class)))
            .collect()
    } else {
        let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file() && is_cloud_file(p))
            .collect();
        files.sort();
        files.into_iter().map(|p| (p, None)).collect()
    };
    if listed.is_empty() {
        return Err(Error::invalid(format!("{} contains no point clouds", dir.display())));
    }
    listed
        .into_par_iter()
        .map(|(path, class)| {
            let mut cloud = read_cloud(&path)?;
            cloud.class_label = class;
            Ok(LoadedCloud { path, cloud })
        })
        .collect()
}
