use super::{sq_dist, NeighborList, Point3};

const LEAF_SIZE: usize = 8;

#[derive(Debug, Clone, Copy)]
struct Node {
    // 0..=2 split axis, 3 leaf
    axis: u8,
    split: f64,
    // children for split nodes, index range into `order` for leaves
    a: u32,
    b: u32,
}

/// Exact 3-D kd-tree over a borrowed point slice.
///
/// Results match exhaustive search bit for bit, including the lowest-index
/// tie-break, because subtrees are only pruned when their lower bound is
/// strictly greater than the current worst candidate.
#[derive(Debug)]
pub struct KdTree<'a> {
    points: &'a [Point3],
    order: Vec<u32>,
    nodes: Vec<Node>,
}

impl<'a> KdTree<'a> {
    pub fn new(points: &'a [Point3]) -> Self {
        let mut tree = KdTree {
            points,
            order: (0..points.len() as u32).collect(),
            nodes: Vec::with_capacity(2 * points.len() / LEAF_SIZE + 1),
        };
        if !points.is_empty() {
            tree.build(0, points.len());
        }
        tree
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn build(&mut self, start: usize, end: usize) -> u32 {
        let id = self.nodes.len() as u32;
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node {
                axis: 3,
                split: 0.0,
                a: start as u32,
                b: end as u32,
            });
            return id;
        }
        let slice = &mut self.order[start..end];
        let pts = self.points;
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for &i in slice.iter() {
            let p = &pts[i as usize];
            for ax in 0..3 {
                lo[ax] = lo[ax].min(p.coord(ax));
                hi[ax] = hi[ax].max(p.coord(ax));
            }
        }
        let axis = (0..3)
            .max_by(|&x, &y| (hi[x] - lo[x]).total_cmp(&(hi[y] - lo[y])))
            .unwrap_or(0);
        let mid = slice.len() / 2;
        slice.select_nth_unstable_by(mid, |&i, &j| {
            pts[i as usize]
                .coord(axis)
                .total_cmp(&pts[j as usize].coord(axis))
                .then(i.cmp(&j))
        });
        let split = pts[slice[mid] as usize].coord(axis);
        self.nodes.push(Node {
            axis: axis as u8,
            split,
            a: 0,
            b: 0,
        });
        let left = self.build(start, start + mid);
        let right = self.build(start + mid, end);
        self.nodes[id as usize].a = left;
        self.nodes[id as usize].b = right;
        id
    }

    /// Index and squared distance of the closest point (lowest index on ties).
    pub fn nearest(&self, q: &Point3) -> (usize, f64) {
        let mut best = (f64::INFINITY, usize::MAX);
        if self.is_empty() {
            return (usize::MAX, f64::INFINITY);
        }
        let mut stack: Vec<(u32, f64)> = Vec::with_capacity(64);
        stack.push((0, 0.0));
        while let Some((id, bound)) = stack.pop() {
            if bound > best.0 {
                continue;
            }
            let node = self.nodes[id as usize];
            if node.axis == 3 {
                for &i in &self.order[node.a as usize..node.b as usize] {
                    let d = sq_dist(q, &self.points[i as usize]);
                    let i = i as usize;
                    if d < best.0 || (d == best.0 && i < best.1) {
                        best = (d, i);
                    }
                }
                continue;
            }
            let diff = q.coord(node.axis as usize) - node.split;
            let far_bound = diff * diff;
            let (near, far) = if diff < 0.0 {
                (node.a, node.b)
            } else {
                (node.b, node.a)
            };
            stack.push((far, far_bound));
            stack.push((near, bound));
        }
        (best.1, best.0)
    }

    /// Exact k nearest neighbours, ascending by (distance, index).
    pub fn knn(&self, q: &Point3, k: usize) -> NeighborList {
        let k = k.min(self.len());
        let mut heap: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
        if k == 0 {
            return NeighborList {
                indices: vec![],
                distances: vec![],
            };
        }
        let worse = |a: &(f64, usize), b: &(f64, usize)| a.0 > b.0 || (a.0 == b.0 && a.1 > b.1);
        let mut stack: Vec<(u32, f64)> = Vec::with_capacity(64);
        stack.push((0, 0.0));
        while let Some((id, bound)) = stack.pop() {
            if heap.len() == k && bound > heap[k - 1].0 {
                continue;
            }
            let node = self.nodes[id as usize];
            if node.axis == 3 {
                for &i in &self.order[node.a as usize..node.b as usize] {
                    let cand = (sq_dist(q, &self.points[i as usize]), i as usize);
                    if heap.len() == k && !worse(&heap[k - 1], &cand) {
                        continue;
                    }
                    if heap.len() == k {
                        heap.pop();
                    }
                    let pos = heap.partition_point(|e| !worse(e, &cand));
                    heap.insert(pos, cand);
                }
                continue;
            }
            let diff = q.coord(node.axis as usize) - node.split;
            let far_bound = diff * diff;
            let (near, far) = if diff < 0.0 {
                (node.a, node.b)
            } else {
                (node.b, node.a)
            };
            stack.push((far, far_bound));
            stack.push((near, bound));
        }
        NeighborList {
            indices: heap.iter().map(|e| e.1).collect(),
            distances: heap.iter().map(|e| e.0).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{knn, PointCloud};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_cloud(rng: &mut ChaCha8Rng, n: usize, grid: bool) -> Vec<Point3> {
        (0..n)
            .map(|_| {
                if grid {
                    // coarse lattice forces many exact ties
                    Point3::new(
                        rng.gen_range(0..4) as f64,
                        rng.gen_range(0..4) as f64,
                        rng.gen_range(0..2) as f64,
                    )
                } else {
                    Point3::new(rng.gen(), rng.gen(), rng.gen())
                }
            })
            .collect()
    }

    #[test]
    fn matches_brute_force_including_ties() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..200 {
            let grid = trial % 2 == 0;
            let n = rng.gen_range(1..300);
            let pts = random_cloud(&mut rng, n, grid);
            let cloud = PointCloud::new(pts.clone()).unwrap();
            let tree = KdTree::new(&pts);
            let q = random_cloud(&mut rng, 1, grid)[0];
            let k = rng.gen_range(1..=n.min(16));
            assert_eq!(tree.knn(&q, k), knn(&q, &cloud, k).unwrap());
            let brute = knn(&q, &cloud, 1).unwrap();
            assert_eq!(tree.nearest(&q), (brute.indices[0], brute.distances[0]));
        }
    }
}
