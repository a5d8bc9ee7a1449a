use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, NodeId};
use super::params::{ParamId, ParamStore};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub step: f64,
    pub tolerance: f64,
    /// Entries probed per parameter; larger arrays are subsampled.
    pub max_entries_per_param: usize,
    /// Denominator floor of the relative error, `|a - n| / max(|a|, |n|, floor)`.
    pub abs_floor: f64,
    /// Largest fraction of probed entries that may be excused as kinks.
    pub max_kink_fraction: f64,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-5,
            tolerance: 1e-4,
            max_entries_per_param: 12,
            abs_floor: 1e-6,
            max_kink_fraction: 0.05,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub checked: usize,
    /// Failing entries whose one-sided slopes show a kink within the step.
    pub kinks: usize,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub max_rel_error: f64,
    pub kinks: usize,
    pub passed: bool,
}

fn evaluate<F>(builder: &F, store: &ParamStore) -> Result<f64>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<NodeId>,
{
    let mut g = Graph::new();
    let loss = builder(&mut g, store)?;
    let v = g.value(loss);
    if v.shape() != [1, 1] {
        return Err(Error::invalid("grad_check builder must return a scalar"));
    }
    let v = v.item();
    if !v.is_finite() {
        return Err(Error::NonFinite(format!("loss is {v}")));
    }
    Ok(v)
}

/// Compares reverse-mode gradients of `builder`'s scalar against central
/// differences, parameter by parameter.
///
/// An entry that misses the tolerance is excused as a kink (a ReLU, max or
/// nearest-neighbour switch inside `[x - h, x + h]`) when its forward and
/// backward one-sided slopes differ by at least the gradient discrepancy.
/// Excused entries do not count towards `max_rel_error`; the check fails if
/// they exceed `max_kink_fraction` of all probed entries.
pub fn grad_check<F>(
    builder: F,
    store: &mut ParamStore,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<NodeId>,
{
    let analytic: Vec<(ParamId, Vec<f64>)> = {
        let mut g = Graph::new();
        let loss = builder(&mut g, store)?;
        let grads = g.backward(loss)?;
        let mut out: Vec<(ParamId, Vec<f64>)> = grads
            .params()
            .map(|(id, t)| {
                let data = match t {
                    Some(t) => t.data().to_vec(),
                    None => vec![0.0; store.entry(id).value().len()],
                };
                (id, data)
            })
            .collect();
        out.sort_by_key(|e| e.0);
        out
    };

    let base = evaluate(&builder, store)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut params = Vec::with_capacity(analytic.len());
    for (id, grad) in analytic {
        let n = grad.len();
        let picks: Vec<usize> = if n <= opts.max_entries_per_param {
            (0..n).collect()
        } else {
            sample(&mut rng, n, opts.max_entries_per_param).into_vec()
        };
        let mut worst = 0.0f64;
        let mut kinks = 0;
        for &i in &picks {
            let orig = store.entry(id).value().data()[i];
            store.entry_mut(id).value_mut().data_mut()[i] = orig + opts.step;
            let plus = evaluate(&builder, store);
            store.entry_mut(id).value_mut().data_mut()[i] = orig - opts.step;
            let minus = evaluate(&builder, store);
            store.entry_mut(id).value_mut().data_mut()[i] = orig;
            let (plus, minus) = (plus?, minus?);
            let numeric = (plus - minus) / (2.0 * opts.step);
            let a = grad[i];
            let denom = a.abs().max(numeric.abs()).max(opts.abs_floor);
            let rel = (a - numeric).abs() / denom;
            let jump = ((plus - base) - (base - minus)).abs() / opts.step;
            if rel >= opts.tolerance && jump >= (a - numeric).abs() {
                kinks += 1;
            } else {
                worst = worst.max(rel);
            }
        }
        params.push(ParamCheck {
            name: store.entry(id).name.clone(),
            checked: picks.len(),
            kinks,
            max_rel_error: worst,
        });
    }
    let max_rel_error = params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max);
    let kinks: usize = params.iter().map(|p| p.kinks).sum();
    let probed: usize = params.iter().map(|p| p.checked).sum();
    Ok(GradCheckReport {
        passed: max_rel_error < opts.tolerance && kinks as f64 <= opts.max_kink_fraction * probed as f64,
        params,
        max_rel_error,
        kinks,
    })
}
