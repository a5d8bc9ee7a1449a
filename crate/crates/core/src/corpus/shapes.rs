use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geom::{normalize_unit_sphere, Point3, PointCloud};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ShapeClass {
    PlaneSlab,
    Box,
    Cylinder,
    Torus,
}

impl ShapeClass {
    pub const ALL: [ShapeClass; 4] = [
        ShapeClass::PlaneSlab,
        ShapeClass::Box,
        ShapeClass::Cylinder,
        ShapeClass::Torus,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ShapeClass::PlaneSlab => "plane-slab",
            ShapeClass::Box => "box",
            ShapeClass::Cylinder => "cylinder",
            ShapeClass::Torus => "torus",
        }
    }

    /// Inclusive ranges the size tuple is drawn from.
    ///
    /// * plane-slab, box: half extents `(hx, hy, hz)`
    /// * cylinder: `(radius, half_height)`
    /// * torus: `(major_radius, minor_radius)`, minor strictly below major
    pub fn size_ranges(self) -> &'static [(f64, f64)] {
        match self {
            ShapeClass::PlaneSlab => &[(0.6, 1.0), (0.4, 1.0), (0.02, 0.06)],
            ShapeClass::Box => &[(0.3, 1.0), (0.3, 1.0), (0.3, 1.0)],
            ShapeClass::Cylinder => &[(0.25, 0.7), (0.4, 1.0)],
            ShapeClass::Torus => &[(0.55, 0.9), (0.12, 0.3)],
        }
    }
}

impl fmt::Display for ShapeClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ShapeClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ShapeClass::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| {
                Error::invalid(format!(
                    "unknown shape class {s:?} (expected plane-slab, box, cylinder or torus)"
                ))
            })
    }
}

/// Euler angles are bounded by this many radians per axis.
pub const MAX_TILT: f64 = 0.35;
/// Translation is bounded by this per axis.
pub const MAX_SHIFT: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct ShapeSpec {
    pub class: ShapeClass,
    pub size: Vec<f64>,
    /// Rotation about x, then y, then z.
    pub euler: [f64; 3],
    pub translation: [f64; 3],
    pub n_points: usize,
    pub seed: u64,
}

impl ShapeSpec {
    /// Draws size and pose uniformly from the documented ranges.
    pub fn random(class: ShapeClass, n_points: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let size = class
            .size_ranges()
            .iter()
            .map(|&(lo, hi)| rng.gen_range(lo..=hi))
            .collect();
        let mut draw = |m: f64| [0; 3].map(|_| rng.gen_range(-m..=m));
        let euler = draw(MAX_TILT);
        let translation = draw(MAX_SHIFT);
        ShapeSpec {
            class,
            size,
            euler,
            translation,
            n_points,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ranges = self.class.size_ranges();
        if self.size.len() != ranges.len() {
            return Err(Error::invalid(format!(
                "{} expects {} size parameters, got {}",
                self.class,
                ranges.len(),
                self.size.len()
            )));
        }
        for (v, &(lo, hi)) in self.size.iter().zip(ranges) {
            if !(lo..=hi).contains(v) {
                return Err(Error::invalid(format!(
                    "{} size parameter {v} outside [{lo}, {hi}]",
                    self.class
                )));
            }
        }
        if self.euler.iter().any(|a| !(a.abs() <= MAX_TILT))
            || self.translation.iter().any(|t| !(t.abs() <= MAX_SHIFT))
        {
            return Err(Error::invalid("pose outside the documented range"));
        }
        if self.n_points == 0 {
            return Err(Error::invalid("n_points must be positive"));
        }
        Ok(())
    }
}

/// Samples `n` points uniformly by area on the un-posed surface, centred at the origin.
pub fn sample_surface<R: Rng + ?Sized>(
    class: ShapeClass,
    size: &[f64],
    n: usize,
    rng: &mut R,
) -> Vec<Point3> {
    match class {
        ShapeClass::PlaneSlab | ShapeClass::Box => sample_box(size[0], size[1], size[2], n, rng),
        ShapeClass::Cylinder => sample_cylinder(size[0], size[1], n, rng),
        ShapeClass::Torus => sample_torus(size[0], size[1], n, rng),
    }
}

fn sample_box<R: Rng + ?Sized>(hx: f64, hy: f64, hz: f64, n: usize, rng: &mut R) -> Vec<Point3> {
    let h = [hx, hy, hz];
    // Faces normal to x, y, z; each pair has area 2 * (2a)(2b).
    let areas = [hy * hz, hx * hz, hx * hy];
    let pick = WeightedIndex::new(areas).expect("positive extents");
    (0..n)
        .map(|_| {
            let axis = pick.sample(rng);
            let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
            let mut c = [0.0; 3];
            for (a, v) in c.iter_mut().enumerate() {
                *v = if a == axis {
                    sign * h[a]
                } else {
                    rng.gen_range(-h[a]..=h[a])
                };
            }
            Point3::new(c[0], c[1], c[2])
        })
        .collect()
}

fn sample_cylinder<R: Rng + ?Sized>(r: f64, hh: f64, n: usize, rng: &mut R) -> Vec<Point3> {
    let lateral = 2.0 * PI * r * 2.0 * hh;
    let cap = PI * r * r;
    let pick = WeightedIndex::new([lateral, cap, cap]).expect("positive sizes");
    (0..n)
        .map(|_| {
            let theta = rng.gen_range(0.0..2.0 * PI);
            match pick.sample(rng) {
                0 => Point3::new(r * theta.cos(), r * theta.sin(), rng.gen_range(-hh..=hh)),
                part => {
                    let rho = r * rng.gen::<f64>().sqrt();
                    let z = if part == 1 { hh } else { -hh };
                    Point3::new(rho * theta.cos(), rho * theta.sin(), z)
                }
            }
        })
        .collect()
}

fn sample_torus<R: Rng + ?Sized>(big: f64, small: f64, n: usize, rng: &mut R) -> Vec<Point3> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let u = rng.gen_range(0.0..2.0 * PI);
        let v = rng.gen_range(0.0..2.0 * PI);
        // The area element is proportional to R + r cos v.
        let ring = big + small * v.cos();
        if rng.gen::<f64>() * (big + small) > ring {
            continue;
        }
        out.push(Point3::new(ring * u.cos(), ring * u.sin(), small * v.sin()));
    }
    out
}

/// Rotation about x, then y, then z.
pub fn rotate(p: &Point3, euler: &[f64; 3]) -> Point3 {
    let (sa, ca) = euler[0].sin_cos();
    let (sb, cb) = euler[1].sin_cos();
    let (sc, cc) = euler[2].sin_cos();
    let (x, y, z) = (p.x, ca * p.y - sa * p.z, sa * p.y + ca * p.z);
    let (x, z) = (cb * x + sb * z, -sb * x + cb * z);
    Point3::new(cc * x - sc * y, sc * x + cc * y, z)
}

/// Samples, poses and normalizes one shape. The cloud carries the class name as label.
pub fn generate_shape(spec: &ShapeSpec) -> Result<PointCloud> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5348_4150_4553_414d);
    let t = Point3::new(spec.translation[0], spec.translation[1], spec.translation[2]);
    let pts = sample_surface(spec.class, &spec.size, spec.n_points, &mut rng)
        .iter()
        .map(|p| rotate(p, &spec.euler).add(&t))
        .collect();
    let (cloud, _) = normalize_unit_sphere(&PointCloud::new(pts)?);
    Ok(cloud.with_label(spec.class.name()))
}

/// Keeps the `keep` points nearest a random viewpoint outside the cloud,
/// simulating a single-view scan. Labels are preserved.
pub fn crop_partial(cloud: &PointCloud, keep: usize, seed: u64) -> Result<PointCloud> {
    if keep == 0 || keep > cloud.len() {
        return Err(Error::invalid(format!(
            "crop size {keep} must lie in [1, {}]",
            cloud.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z: f64 = rng.gen_range(-1.0..=1.0);
    let phi = rng.gen_range(0.0..2.0 * PI);
    let s = (1.0 - z * z).sqrt();
    let view = cloud
        .centroid()
        .add(&Point3::new(s * phi.cos(), s * phi.sin(), z).scale(2.0));
    let mut order: Vec<(f64, usize)> = cloud
        .iter()
        .enumerate()
        .map(|(i, p)| (crate::geom::sq_dist(p, &view), i))
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut idx: Vec<usize> = order[..keep].iter().map(|&(_, i)| i).collect();
    idx.sort_unstable();
    cloud.select(&idx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_points_lie_on_faces() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for p in sample_surface(ShapeClass::Box, &[1.0, 1.0, 1.0], 500, &mut rng) {
            let m = p.x.abs().max(p.y.abs()).max(p.z.abs());
            assert_eq!(m, 1.0);
        }
    }

    #[test]
    fn cylinder_side_points_on_radius() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (r, hh) = (0.4, 0.8);
        let mut side = 0;
        for p in sample_surface(ShapeClass::Cylinder, &[r, hh], 1000, &mut rng) {
            if p.z.abs() < hh {
                side += 1;
                assert!((p.x * p.x + p.y * p.y - r * r).abs() < 1e-9);
            } else {
                assert!(p.x * p.x + p.y * p.y <= r * r + 1e-12);
            }
        }
        assert!(side > 500);
    }

    #[test]
    fn torus_points_on_tube() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (big, small) = (0.7, 0.2);
        for p in sample_surface(ShapeClass::Torus, &[big, small], 400, &mut rng) {
            let q = (p.x * p.x + p.y * p.y).sqrt() - big;
            assert!((q * q + p.z * p.z - small * small).abs() < 1e-9);
        }
    }

    #[test]
    fn box_face_counts_follow_area() {
        let h = [1.0, 0.5, 0.25];
        let areas = [h[1] * h[2], h[0] * h[2], h[0] * h[1]];
        let total: f64 = areas.iter().sum();
        let n = 2000;
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let mut counts = [0usize; 3];
            for p in sample_box(h[0], h[1], h[2], n, &mut rng) {
                let axis = (0..3).find(|&a| p.coord(a).abs() == h[a]).unwrap();
                counts[axis] += 1;
            }
            for a in 0..3 {
                let prob = areas[a] / total;
                let mean = n as f64 * prob;
                let sd = (n as f64 * prob * (1.0 - prob)).sqrt();
                assert!(
                    (counts[a] as f64 - mean).abs() <= 3.0 * sd,
                    "seed {seed} face {a}: {} vs {mean}",
                    counts[a]
                );
            }
        }
    }

    #[test]
    fn generated_shapes_are_normalized_and_deterministic() {
        for class in ShapeClass::ALL {
            let spec = ShapeSpec::random(class, 256, 42);
            spec.validate().unwrap();
            let a = generate_shape(&spec).unwrap();
            let b = generate_shape(&spec).unwrap();
            assert_eq!(a, b);
            assert_eq!(a.len(), 256);
            assert_eq!(a.class_label.as_deref(), Some(class.name()));
            let c = a.centroid();
            assert!(c.norm() < 1e-12);
            let r = a.iter().map(|p| p.norm()).fold(0.0, f64::max);
            assert!((r - 1.0).abs() < 1e-12);
            let (again, _) = normalize_unit_sphere(&a);
            for (p, q) in a.iter().zip(again.iter()) {
                assert!(crate::geom::sq_dist(p, q) < 1e-24);
            }
        }
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut s = ShapeSpec::random(ShapeClass::Torus, 10, 1);
        s.size = vec![0.6, 0.5];
        assert!(generate_shape(&s).is_err());
        assert!("sphere".parse::<ShapeClass>().is_err());
        assert_eq!("plane-slab".parse::<ShapeClass>().unwrap(), ShapeClass::PlaneSlab);
    }

    #[test]
    fn crop_keeps_nearest_to_viewpoint() {
        let spec = ShapeSpec::random(ShapeClass::Box, 200, 7);
        let cloud = generate_shape(&spec).unwrap();
        let part = crop_partial(&cloud, 100, 9).unwrap();
        assert_eq!(part.len(), 100);
        assert_eq!(part.class_label, cloud.class_label);
        assert_eq!(part, crop_partial(&cloud, 100, 9).unwrap());
        assert!(crop_partial(&cloud, 201, 9).is_err());
    }
}
