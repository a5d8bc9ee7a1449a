//! Training objectives as graph nodes: Chamfer losses, the minibatch
//! 1-Wasserstein alignment loss, least-squares adversarial losses and the
//! weighted total.

use crate::autodiff::{Graph, NodeId, Tensor};
use crate::error::{Error, Result};
use crate::geom::{KdTree, Point3};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub lambda_adv: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha: 0.35,
            beta: 0.65,
            gamma: 0.001,
            lambda_adv: 0.1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (n, v) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("lambda_adv", self.lambda_adv),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("loss weight {n} = {v} must be finite and >= 0")));
            }
        }
        Ok(())
    }
}

/// Scalar loss values of one step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub cd_ref: f64,
    pub cd_aux_ref: f64,
    pub cd_tar: f64,
    pub cd_aux_tar: f64,
    pub wasserstein: f64,
    pub adv_gen: f64,
    pub adv_disc: f64,
    pub total: f64,
}

impl LossBreakdown {
    /// The weighted total, evaluated in the same order as [`total_loss`].
    pub fn recombine(&self, w: &LossWeights, adversarial: bool) -> f64 {
        let mut t = w.alpha * (self.cd_ref + self.cd_aux_ref) + w.beta * (self.cd_tar + self.cd_aux_tar);
        t += w.gamma * self.wasserstein;
        if adversarial {
            t += w.lambda_adv * self.adv_gen;
        }
        t
    }
}

/// Graph nodes of the individual objectives; absent terms count as zero.
#[derive(Debug, Clone, Copy, Default)]
pub struct LossNodes {
    pub cd_ref: Option<NodeId>,
    pub cd_aux_ref: Option<NodeId>,
    pub cd_tar: Option<NodeId>,
    pub cd_aux_tar: Option<NodeId>,
    pub wasserstein: Option<NodeId>,
    pub adv_gen: Option<NodeId>,
}

pub(crate) fn tensor_points(t: &Tensor) -> Vec<Point3> {
    (0..t.rows())
        .map(|r| {
            let v = t.row(r);
            Point3::new(v[0], v[1], v[2])
        })
        .collect()
}

fn check_cloud(g: &Graph, x: NodeId) -> Result<()> {
    let [r, c] = g.shape(x);
    if c != 3 || r == 0 {
        return Err(Error::invalid(format!("expected a non-empty n x 3 cloud, got {r} x {c}")));
    }
    Ok(())
}

/// Nearest neighbour of every `from` point in `to`, lowest index on ties.
pub fn nn_indices(from: &[Point3], to: &[Point3]) -> Vec<usize> {
    let tree = KdTree::new(to);
    from.iter().map(|q| tree.nearest(q).0).collect()
}

fn directional_node(g: &mut Graph, a: NodeId, b: NodeId, nn: &[usize]) -> Result<NodeId> {
    let matched = g.gather_rows(b, nn)?;
    let d = g.sub(a, matched)?;
    let sq = g.square(d)?;
    let s = g.sum(sq)?;
    g.scale(s, 1.0 / nn.len() as f64)
}

/// Rejects coordinates whose squared distances would overflow.
pub(crate) fn check_magnitude(t: &Tensor) -> Result<()> {
    if !t.all_finite() || t.max_abs() > 1e150 {
        return Err(Error::NonFinite("cloud coordinates overflow".into()));
    }
    Ok(())
}

/// Chamfer loss between two `n x 3` cloud nodes. Neighbour selection is
/// recomputed from the current values and held fixed during backward.
pub fn cd_loss(g: &mut Graph, a: NodeId, b: NodeId) -> Result<NodeId> {
    check_cloud(g, a)?;
    check_cloud(g, b)?;
    check_magnitude(g.value(a))?;
    check_magnitude(g.value(b))?;
    let pa = tensor_points(g.value(a));
    let pb = tensor_points(g.value(b));
    let ab = nn_indices(&pa, &pb);
    let ba = nn_indices(&pb, &pa);
    let t1 = directional_node(g, a, b, &ab)?;
    let t2 = directional_node(g, b, a, &ba)?;
    g.add(t1, t2)
}

/// Optimal assignment for a square `n x n` row-major cost matrix; entry `i`
/// of the result is the column matched to row `i`.
pub fn hungarian(cost: &[f64], n: usize) -> Vec<usize> {
    assert_eq!(cost.len(), n * n, "cost matrix must be n x n");
    let inf = f64::INFINITY;
    // Potentials and matching are 1-based; index 0 is the virtual start column.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut row_of = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0usize; n];
    for j in 1..=n {
        assign[row_of[j] - 1] = j - 1;
    }
    assign
}

/// Pairwise Euclidean costs between the rows of `x` and `y`.
pub fn l2_costs(x: &Tensor, y: &Tensor) -> Vec<f64> {
    let n = x.rows();
    let mut c = Vec::with_capacity(n * y.rows());
    for i in 0..n {
        for j in 0..y.rows() {
            let s: f64 = x.row(i).iter().zip(y.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
            c.push(s.sqrt());
        }
    }
    c
}

fn check_batches(x: &Tensor, y: &Tensor) -> Result<()> {
    if x.shape() != y.shape() || x.rows() == 0 {
        return Err(Error::shape("wasserstein", &x.shape(), &y.shape()));
    }
    Ok(())
}

/// 1-Wasserstein distance between two equal-size empirical distributions
/// (rows of `x` and `y`), with the optimal matching.
pub fn wasserstein_distance(x: &Tensor, y: &Tensor) -> Result<(f64, Vec<usize>)> {
    check_batches(x, y)?;
    let n = x.rows();
    let c = l2_costs(x, y);
    let perm = hungarian(&c, n);
    let total: f64 = perm.iter().enumerate().map(|(i, &j)| c[i * n + j]).sum();
    Ok((total / n as f64, perm))
}

/// Mean matched distance under the optimal assignment, which is held fixed during backward.
pub fn wasserstein_loss(g: &mut Graph, fake: NodeId, real: NodeId) -> Result<NodeId> {
    let (_, perm) = wasserstein_distance(g.value(fake), g.value(real))?;
    let matched = g.gather_rows(real, &perm)?;
    let d = g.sub(fake, matched)?;
    let sq = g.square(d)?;
    let rs = g.row_sum(sq)?;
    let dist = g.sqrt(rs)?;
    g.mean(dist)
}

/// Least-squares adversarial objectives `(generator, discriminator)` over raw scores.
pub fn adversarial_losses(g: &mut Graph, real: NodeId, fake: NodeId) -> Result<(NodeId, NodeId)> {
    if g.value(real).is_empty() || g.value(fake).is_empty() {
        return Err(Error::invalid("adversarial losses need non-empty score batches"));
    }
    let half_mean_sq = |g: &mut Graph, x: NodeId, target: f64| -> Result<NodeId> {
        let d = g.add_scalar(x, -target)?;
        let sq = g.square(d)?;
        let m = g.mean(sq)?;
        g.scale(m, 0.5)
    };
    let gen = half_mean_sq(g, fake, 1.0)?;
    let dr = half_mean_sq(g, real, 1.0)?;
    let df = half_mean_sq(g, fake, 0.0)?;
    let disc = g.add(dr, df)?;
    Ok((gen, disc))
}

fn weighted(g: &mut Graph, parts: [Option<NodeId>; 2], w: f64) -> Result<Option<NodeId>> {
    let sum = match parts {
        [Some(a), Some(b)] => Some(g.add(a, b)?),
        [Some(a), None] | [None, Some(a)] => Some(a),
        [None, None] => None,
    };
    sum.map(|s| g.scale(s, w)).transpose()
}

/// `alpha (cd_ref + cd_r) + beta (cd_tar + cd_p) + gamma W (+ lambda adv_gen)`.
pub fn total_loss(g: &mut Graph, parts: &LossNodes, w: &LossWeights) -> Result<NodeId> {
    let terms = [
        weighted(g, [parts.cd_ref, parts.cd_aux_ref], w.alpha)?,
        weighted(g, [parts.cd_tar, parts.cd_aux_tar], w.beta)?,
        weighted(g, [parts.wasserstein, None], w.gamma)?,
        weighted(g, [parts.adv_gen, None], w.lambda_adv)?,
    ];
    let mut acc: Option<NodeId> = None;
    for t in terms.into_iter().flatten() {
        acc = Some(match acc {
            Some(a) => g.add(a, t)?,
            None => t,
        });
    }
    match acc {
        Some(a) => Ok(a),
        None => Ok(g.constant(Tensor::scalar(0.0))),
    }
}
