//! Point containers, canonicalization, resampling and exact nearest-neighbour queries.

mod kdtree;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use kdtree::KdTree;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const ORIGIN: Point3 = Point3 {
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Point3 { x, y, z }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    #[inline]
    pub fn coord(&self, axis: usize) -> f64 {
        match axis {
            0 => self.x,
            1 => self.y,
            _ => self.z,
        }
    }

    pub fn norm(&self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn sub(&self, o: &Point3) -> Point3 {
        Point3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }

    pub fn add(&self, o: &Point3) -> Point3 {
        Point3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }

    pub fn scale(&self, s: f64) -> Point3 {
        Point3::new(self.x * s, self.y * s, self.z * s)
    }
}

/// Squared Euclidean distance. Every nearest-neighbour routine in the crate goes
/// through this function so that distances compare bit-for-bit across code paths.
#[inline]
pub fn sq_dist(a: &Point3, b: &Point3) -> f64 {
    let dx = a.x - b.x;
    let dy = a.y - b.y;
    let dz = a.z - b.z;
    dx * dx + dy * dy + dz * dz
}

/// An ordered, non-empty list of finite points.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<Point3>,
    pub class_label: Option<String>,
    pub source_id: Option<String>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::invalid("point cloud must not be empty"));
        }
        if let Some(i) = points.iter().position(|p| !p.is_finite()) {
            return Err(Error::NonFinite(format!("point {i} has a non-finite coordinate")));
        }
        Ok(PointCloud {
            points,
            class_label: None,
            source_id: None,
        })
    }

    /// Builds a cloud from an interleaved `[x0, y0, z0, x1, ...]` buffer.
    pub fn from_flat(flat: &[f64]) -> Result<Self> {
        if flat.len() % 3 != 0 {
            return Err(Error::invalid(format!(
                "flat buffer length {} is not a multiple of 3",
                flat.len()
            )));
        }
        PointCloud::new(
            flat.chunks_exact(3)
                .map(|c| Point3::new(c[0], c[1], c[2]))
                .collect(),
        )
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.class_label = Some(label.into());
        self
    }

    pub fn with_source(mut self, id: impl Into<String>) -> Self {
        self.source_id = Some(id.into());
        self
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Point3> {
        self.points.iter()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.points.len() * 3);
        for p in &self.points {
            out.extend_from_slice(&[p.x, p.y, p.z]);
        }
        out
    }

    /// Points at `indices`, in the given order. Labels are carried over.
    pub fn select(&self, indices: &[usize]) -> Result<PointCloud> {
        let mut pts = Vec::with_capacity(indices.len());
        for &i in indices {
            let p = self.points.get(i).ok_or_else(|| {
                Error::invalid(format!("index {i} out of range for {} points", self.len()))
            })?;
            pts.push(*p);
        }
        let mut out = PointCloud::new(pts)?;
        out.class_label = self.class_label.clone();
        out.source_id = self.source_id.clone();
        Ok(out)
    }

    pub fn centroid(&self) -> Point3 {
        let n = self.points.len() as f64;
        let (mut sx, mut sy, mut sz) = (0.0, 0.0, 0.0);
        for p in &self.points {
            sx += p.x;
            sy += p.y;
            sz += p.z;
        }
        Point3::new(sx / n, sy / n, sz / n)
    }

    fn map_points(&self, f: impl Fn(&Point3) -> Point3) -> PointCloud {
        PointCloud {
            points: self.points.iter().map(f).collect(),
            class_label: self.class_label.clone(),
            source_id: self.source_id.clone(),
        }
    }
}

impl<'a> IntoIterator for &'a PointCloud {
    type Item = &'a Point3;
    type IntoIter = std::slice::Iter<'a, Point3>;

    fn into_iter(self) -> Self::IntoIter {
        self.points.iter()
    }
}

/// Result of a k-nearest-neighbour query: ascending squared distances, ties by index.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborList {
    pub indices: Vec<usize>,
    pub distances: Vec<f64>,
}

impl NeighborList {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Exact k nearest neighbours of `query` in `target` by exhaustive selection.
pub fn knn(query: &Point3, target: &PointCloud, k: usize) -> Result<NeighborList> {
    if k == 0 || k > target.len() {
        return Err(Error::invalid(format!(
            "k = {k} must lie in [1, {}]",
            target.len()
        )));
    }
    let mut all: Vec<(f64, usize)> = target
        .iter()
        .enumerate()
        .map(|(i, p)| (sq_dist(query, p), i))
        .collect();
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < all.len() {
        all.select_nth_unstable_by(k - 1, cmp);
        all.truncate(k);
    }
    all.sort_unstable_by(cmp);
    Ok(NeighborList {
        indices: all.iter().map(|e| e.1).collect(),
        distances: all.iter().map(|e| e.0).collect(),
    })
}

/// Squared distance from `query` to its closest point in `target`.
pub fn nn_sq_dist(query: &Point3, target: &PointCloud) -> f64 {
    target
        .iter()
        .map(|p| sq_dist(query, p))
        .fold(f64::INFINITY, f64::min)
}

/// Similarity transform taking a normalized cloud back to its original frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frame {
    pub centroid: Point3,
    pub scale: f64,
}

impl Frame {
    pub const IDENTITY: Frame = Frame {
        centroid: Point3::ORIGIN,
        scale: 1.0,
    };

    pub fn normalize(&self, cloud: &PointCloud) -> PointCloud {
        let inv = 1.0 / self.scale;
        cloud.map_points(|p| p.sub(&self.centroid).scale(inv))
    }

    pub fn denormalize(&self, cloud: &PointCloud) -> PointCloud {
        cloud.map_points(|p| p.scale(self.scale).add(&self.centroid))
    }
}

/// Centers the cloud at the origin and scales its farthest point to unit norm.
///
/// A cloud whose points all coincide keeps scale 1.
pub fn normalize_unit_sphere(cloud: &PointCloud) -> (PointCloud, Frame) {
    let centroid = cloud.centroid();
    let centered = cloud.map_points(|p| p.sub(&centroid));
    let max_norm = centered.iter().map(Point3::norm).fold(0.0, f64::max);
    let scale = if max_norm > f64::EPSILON { max_norm } else { 1.0 };
    let frame = Frame { centroid, scale };
    let inv = 1.0 / scale;
    (centered.map_points(|p| p.scale(inv)), frame)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleStrategy {
    Random,
    FarthestPoint,
}

/// Resamples to exactly `m` points.
///
/// `Random` without replacement when `m <= n`; otherwise every point is kept once
/// and the surplus is drawn with replacement, then shuffled. `FarthestPoint`
/// starts at index 0 and greedily picks the point maximizing the distance to the
/// chosen set (lowest index on ties).
pub fn resample(
    cloud: &PointCloud,
    m: usize,
    strategy: SampleStrategy,
    seed: u64,
) -> Result<PointCloud> {
    if m == 0 {
        return Err(Error::invalid("resample size must be positive"));
    }
    let idx = match strategy {
        SampleStrategy::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            random_indices(cloud.len(), m, &mut rng)
        }
        SampleStrategy::FarthestPoint => farthest_point_indices(cloud, m)?,
    };
    cloud.select(&idx)
}

/// Index draw shared by `resample` and degradation.
pub(crate) fn random_indices<R: Rng + ?Sized>(n: usize, m: usize, rng: &mut R) -> Vec<usize> {
    if m <= n {
        rand::seq::index::sample(rng, n, m).into_vec()
    } else {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.extend((0..m - n).map(|_| rng.gen_range(0..n)));
        idx.shuffle(rng);
        idx
    }
}

fn farthest_point_indices(cloud: &PointCloud, m: usize) -> Result<Vec<usize>> {
    let n = cloud.len();
    if m > n {
        return Err(Error::invalid(format!(
            "farthest-point sampling cannot draw {m} distinct points from {n}"
        )));
    }
    let pts = cloud.points();
    let mut chosen = Vec::with_capacity(m);
    let mut min_d = vec![f64::INFINITY; n];
    let mut current = 0usize;
    chosen.push(current);
    min_d[current] = f64::NEG_INFINITY;
    while chosen.len() < m {
        let mut best = usize::MAX;
        let mut best_d = f64::NEG_INFINITY;
        for (i, d) in min_d.iter_mut().enumerate() {
            if *d == f64::NEG_INFINITY {
                continue;
            }
            let nd = sq_dist(&pts[i], &pts[current]);
            if nd < *d {
                *d = nd;
            }
            if *d > best_d {
                best_d = *d;
                best = i;
            }
        }
        current = best;
        min_d[current] = f64::NEG_INFINITY;
        chosen.push(current);
    }
    Ok(chosen)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cloud(pts: &[(f64, f64, f64)]) -> PointCloud {
        PointCloud::new(pts.iter().map(|&(x, y, z)| Point3::new(x, y, z)).collect()).unwrap()
    }

    #[test]
    fn knn_hand_examples() {
        let t = cloud(&[(1.0, 0.0, 0.0), (3.0, 0.0, 0.0), (0.5, 0.0, 0.0)]);
        let r = knn(&Point3::ORIGIN, &t, 2).unwrap();
        assert_eq!(r.indices, vec![2, 0]);
        assert_eq!(r.distances, vec![0.25, 1.0]);

        let single = cloud(&[(0.0, 0.0, 0.0)]);
        let r = knn(&Point3::ORIGIN, &single, 1).unwrap();
        assert_eq!((r.indices, r.distances), (vec![0], vec![0.0]));

        let tie = cloud(&[(0.0, 1.0, 1.0), (2.0, 1.0, 1.0)]);
        let r = knn(&Point3::new(1.0, 1.0, 1.0), &tie, 1).unwrap();
        assert_eq!(r.indices, vec![0]);
    }

    #[test]
    fn knn_rejects_bad_k() {
        let t = cloud(&[(1.0, 0.0, 0.0)]);
        assert!(matches!(knn(&Point3::ORIGIN, &t, 0), Err(Error::InvalidArgument(_))));
        assert!(matches!(knn(&Point3::ORIGIN, &t, 2), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn nn_examples() {
        let t = cloud(&[(1.0, 0.0, 0.0), (0.0, 2.0, 0.0)]);
        assert_eq!(nn_sq_dist(&Point3::ORIGIN, &t), 1.0);
        assert_eq!(nn_sq_dist(&Point3::ORIGIN, &cloud(&[(0.0, 0.0, 0.0)])), 0.0);
    }

    #[test]
    fn empty_and_nan_clouds_rejected() {
        assert!(PointCloud::new(vec![]).is_err());
        assert!(PointCloud::new(vec![Point3::new(f64::NAN, 0.0, 0.0)]).is_err());
    }

    #[test]
    fn normalize_examples() {
        let (n, f) = normalize_unit_sphere(&cloud(&[(2.0, 0.0, 0.0), (0.0, 0.0, 0.0)]));
        assert_eq!(n.points(), &[Point3::new(1.0, 0.0, 0.0), Point3::new(-1.0, 0.0, 0.0)]);
        assert_eq!(f.centroid, Point3::new(1.0, 0.0, 0.0));
        assert_eq!(f.scale, 1.0);

        let (n, f) = normalize_unit_sphere(&cloud(&[(5.0, 5.0, 5.0)]));
        assert_eq!(n.points(), &[Point3::ORIGIN]);
        assert_eq!(f.scale, 1.0);

        let c = cloud(&[(0.3, -2.0, 7.0), (1.0, 1.0, 1.0), (-4.0, 0.5, 2.5)]);
        let (n, f) = normalize_unit_sphere(&c);
        let back = f.denormalize(&n);
        for (a, b) in back.iter().zip(c.iter()) {
            assert!(sq_dist(a, b).sqrt() < 1e-7);
        }
    }

    #[test]
    fn farthest_point_colinear() {
        let c = cloud(&[(0.0, 0.0, 0.0), (1.0, 0.0, 0.0), (2.0, 0.0, 0.0), (3.0, 0.0, 0.0)]);
        let s = resample(&c, 2, SampleStrategy::FarthestPoint, 0).unwrap();
        assert_eq!(s.points(), &[Point3::ORIGIN, Point3::new(3.0, 0.0, 0.0)]);
        assert!(resample(&c, 5, SampleStrategy::FarthestPoint, 0).is_err());
    }

    #[test]
    fn resample_full_size_is_permutation() {
        let c = cloud(&[(0.0, 0.0, 0.0), (1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0)]);
        for strat in [SampleStrategy::Random, SampleStrategy::FarthestPoint] {
            let s = resample(&c, 4, strat, 9).unwrap();
            let mut got: Vec<_> = s.to_flat().chunks(3).map(|v| v.to_vec()).collect();
            let mut want: Vec<_> = c.to_flat().chunks(3).map(|v| v.to_vec()).collect();
            got.sort_by(|a, b| a.partial_cmp(b).unwrap());
            want.sort_by(|a, b| a.partial_cmp(b).unwrap());
            assert_eq!(got, want);
        }
    }

    #[test]
    fn random_resample_deterministic_and_upsamples() {
        let c = cloud(&[(0.0, 0.0, 0.0), (1.0, 0.0, 0.0), (0.0, 1.0, 0.0)]);
        let a = resample(&c, 10, SampleStrategy::Random, 3).unwrap();
        let b = resample(&c, 10, SampleStrategy::Random, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 10);
        for p in c.iter() {
            assert!(a.iter().any(|q| q == p));
        }
    }
}
