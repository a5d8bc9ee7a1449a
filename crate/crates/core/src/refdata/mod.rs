//! Reference data: template-guided degradation, mask extraction, retrieval of
//! the closest reference pairs, and the on-disk manifest.

mod manifest;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub use manifest::{load_manifest, save_manifest, ManifestEntry, ReferenceManifest, MANIFEST_HEADER};

use crate::error::{Error, Result};
use crate::geom::{random_indices, KdTree, PointCloud};
use crate::metrics::chamfer;
use crate::seed::{derive_seed, stable_hash};

/// Output of [`degrade`].
#[derive(Debug, Clone, PartialEq)]
pub struct DegradationResult {
    /// The degraded cloud, resampled to the requested size.
    pub partial: PointCloud,
    /// Union of the template points' neighbourhoods, ascending.
    pub selected_indices: Vec<usize>,
    /// Complement of `selected_indices`, ascending.
    pub mask_indices: Vec<usize>,
    /// Points of the complete cloud at `mask_indices`, resampled to the requested size.
    pub mask: PointCloud,
}

/// Union of the `k` nearest points of `complete` around each template point,
/// ascending and without duplicates.
pub fn neighbourhood_union(template: &PointCloud, complete: &PointCloud, k: usize) -> Result<Vec<usize>> {
    if k == 0 || k > complete.len() {
        return Err(Error::invalid(format!(
            "degradation k = {k} must lie in [1, {}]",
            complete.len()
        )));
    }
    let tree = KdTree::new(complete.points());
    let mut hit = vec![false; complete.len()];
    for q in template {
        for i in tree.knn(q, k).indices {
            hit[i] = true;
        }
    }
    Ok(hit
        .iter()
        .enumerate()
        .filter_map(|(i, &h)| h.then_some(i))
        .collect())
}

/// Indices of a degraded copy of `complete`: the neighbourhood union resampled
/// to `out_size` (with replacement when the union is smaller).
pub fn degraded_indices<R: Rng + ?Sized>(
    template: &PointCloud,
    complete: &PointCloud,
    k: usize,
    out_size: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if out_size == 0 {
        return Err(Error::invalid("degradation output size must be positive"));
    }
    let sel = neighbourhood_union(template, complete, k)?;
    Ok(random_indices(sel.len(), out_size, rng)
        .into_iter()
        .map(|i| sel[i])
        .collect())
}

/// Corrupts `complete` using `template` as the occlusion pattern and extracts
/// the missing-region mask.
pub fn degrade(
    template: &PointCloud,
    complete: &PointCloud,
    k: usize,
    out_size: usize,
    seed: u64,
) -> Result<DegradationResult> {
    if out_size == 0 {
        return Err(Error::invalid("degradation output size must be positive"));
    }
    let selected = neighbourhood_union(template, complete, k)?;
    if selected.len() == complete.len() {
        return Err(Error::DegenerateMask(complete.len()));
    }
    let mut in_sel = vec![false; complete.len()];
    for &i in &selected {
        in_sel[i] = true;
    }
    let mask_indices: Vec<usize> = (0..complete.len()).filter(|&i| !in_sel[i]).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let part_idx: Vec<usize> = random_indices(selected.len(), out_size, &mut rng)
        .into_iter()
        .map(|i| selected[i])
        .collect();
    let mask_idx: Vec<usize> = random_indices(mask_indices.len(), out_size, &mut rng)
        .into_iter()
        .map(|i| mask_indices[i])
        .collect();
    Ok(DegradationResult {
        partial: complete.select(&part_idx)?,
        mask: complete.select(&mask_idx)?,
        selected_indices: selected,
        mask_indices,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClassScope {
    SameClass,
    AllClasses,
}

impl std::str::FromStr for ClassScope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "same-class" => Ok(ClassScope::SameClass),
            "all" | "all-classes" => Ok(ClassScope::AllClasses),
            other => Err(Error::invalid(format!(
                "unknown class scope {other:?} (expected same-class or all)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalOptions {
    pub k: usize,
    pub top_n: usize,
    /// Candidates whose degraded cloud lies closer than this to the template are dropped.
    pub min_cd: f64,
    pub scope: ClassScope,
    pub partial_size: usize,
    pub complete_size: usize,
    pub seed: u64,
}

impl Default for RetrievalOptions {
    fn default() -> Self {
        RetrievalOptions {
            k: 15,
            top_n: 3,
            min_cd: 1.0e-4,
            scope: ClassScope::SameClass,
            partial_size: 1024,
            complete_size: 2048,
            seed: 0,
        }
    }
}

/// A complete reference cloud, its degradation under the target's template, and the mask.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferencePair {
    pub partial_ref: PointCloud,
    pub complete_ref: PointCloud,
    pub mask: PointCloud,
    pub cd_to_template: f64,
    pub source_id: String,
}

fn source_key(c: &PointCloud, i: usize) -> String {
    c.source_id.clone().unwrap_or_else(|| format!("#{i}"))
}

/// Degrades every eligible corpus cloud with `target` as template and returns the
/// `top_n` closest survivors, ascending by Chamfer distance to the template
/// (ties by source id).
pub fn build_reference_pairs(
    target: &PointCloud,
    corpus: &[PointCloud],
    opts: &RetrievalOptions,
) -> Result<Vec<ReferencePair>> {
    if opts.top_n == 0 {
        return Err(Error::invalid("top_n must be positive"));
    }
    let candidates: Vec<(usize, &PointCloud)> = corpus
        .iter()
        .enumerate()
        .filter(|(_, c)| match opts.scope {
            ClassScope::AllClasses => true,
            ClassScope::SameClass => c.class_label.is_some() && c.class_label == target.class_label,
        })
        .collect();
    let target_name = target.source_id.clone().unwrap_or_else(|| "<target>".into());
    if candidates.is_empty() {
        return Err(Error::InsufficientReferences {
            target: target_name,
            needed: opts.top_n,
            survivors: vec![],
        });
    }
    if let Some((i, c)) = candidates.iter().find(|(_, c)| c.len() != opts.complete_size) {
        return Err(Error::invalid(format!(
            "corpus cloud {} has {} points, expected {}",
            source_key(c, *i),
            c.len(),
            opts.complete_size
        )));
    }

    let scored: Vec<Result<Option<ReferencePair>>> = candidates
        .par_iter()
        .map(|&(i, c)| {
            let id = source_key(c, i);
            let seed = derive_seed(opts.seed, &[stable_hash(&target_name), stable_hash(&id)]);
            let deg = match degrade(target, c, opts.k, opts.partial_size, seed) {
                Ok(d) => d,
                Err(Error::DegenerateMask(_)) => return Ok(None),
                Err(e) => return Err(e),
            };
            let cd = chamfer(target, &deg.partial);
            if cd < opts.min_cd {
                return Ok(None);
            }
            Ok(Some(ReferencePair {
                partial_ref: deg.partial,
                complete_ref: c.clone(),
                mask: deg.mask,
                cd_to_template: cd,
                source_id: id,
            }))
        })
        .collect();
    let mut survivors = Vec::new();
    for s in scored {
        if let Some(p) = s? {
            survivors.push(p);
        }
    }
    survivors.sort_by(|a, b| {
        a.cd_to_template
            .total_cmp(&b.cd_to_template)
            .then_with(|| a.source_id.cmp(&b.source_id))
    });
    if survivors.len() < opts.top_n {
        return Err(Error::InsufficientReferences {
            target: target_name,
            needed: opts.top_n,
            survivors: survivors.iter().map(|p| p.source_id.clone()).collect(),
        });
    }
    survivors.truncate(opts.top_n);
    Ok(survivors)
}

/// Uniform choice among the candidate pairs.
pub fn select_training_pair<'a, T, R: Rng + ?Sized>(pairs: &'a [T], rng: &mut R) -> Result<&'a T> {
    if pairs.is_empty() {
        return Err(Error::invalid("cannot select from an empty reference list"));
    }
    Ok(&pairs[rng.gen_range(0..pairs.len())])
}
