//! Self-verification suites: finite-difference gradient checks, brute-force
//! oracles for the geometric kernels, and structural invariants.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{grad_check, GradCheckOptions, Graph, NodeId, OpKind, ParamStore, Tensor};
use crate::corpus::{crop_partial, generate_shape, ShapeClass, ShapeSpec};
use crate::error::{Error, Result};
use crate::geom::{knn, sq_dist, KdTree, Point3, PointCloud};
use crate::losses::{
    adversarial_losses, cd_loss, total_loss, wasserstein_distance, wasserstein_loss, LossBreakdown, LossNodes,
    LossWeights,
};
use crate::metrics::{chamfer, f1, mmd, ucd};
use crate::netmodel::{
    init_params, shared_param_count, Branch, DecoderHead, EncoderKind, Model, ModelArchitecture, ModelOptions,
};
use crate::refdata::{build_reference_pairs, degrade, ClassScope, RetrievalOptions};
use crate::seed::{derive_seed, stable_hash};
use crate::trainer::{forward_generator, Mode, RefSample, TrainConfig, TrainData, TrainItem, Trainer};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Gradcheck,
    Oracle,
    Invariants,
}

impl std::str::FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gradcheck" => Ok(Suite::Gradcheck),
            "oracle" => Ok(Suite::Oracle),
            "invariants" => Ok(Suite::Invariants),
            other => Err(Error::invalid(format!(
                "unknown suite {other:?} (expected gradcheck, oracle or invariants)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckOutcome {
    fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        CheckOutcome {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

pub fn run_suite(suite: Suite, seed: u64) -> Result<Vec<CheckOutcome>> {
    match suite {
        Suite::Gradcheck => gradcheck_suite(seed),
        Suite::Oracle => oracle_suite(seed),
        Suite::Invariants => invariant_suite(seed),
    }
}

pub fn all_passed(rows: &[CheckOutcome]) -> bool {
    rows.iter().all(|r| r.passed)
}

pub fn format_table(rows: &[CheckOutcome]) -> String {
    let w = rows.iter().map(|r| r.name.len()).max().unwrap_or(4).max(5);
    let mut s = String::new();
    for r in rows {
        let status = if r.passed { "PASS" } else { "FAIL" };
        writeln!(s, "{status}  {:<w$}  {}", r.name, r.detail).expect("writing to a String");
    }
    s
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

fn rand_cloud(rng: &mut ChaCha8Rng, n: usize) -> PointCloud {
    PointCloud::new(
        (0..n)
            .map(|_| Point3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect(),
    )
    .expect("non-empty finite cloud")
}

fn rand_tensor(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
    Tensor::from_vec(r, c, (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect()).expect("sized buffer")
}

fn cloud(pts: &[(f64, f64, f64)]) -> PointCloud {
    PointCloud::new(pts.iter().map(|&(x, y, z)| Point3::new(x, y, z)).collect()).expect("non-empty")
}

// ---------------------------------------------------------------- toy fixtures

/// Toy-architecture configuration (16-point partials, 32-point completions).
pub fn toy_config(mode: Mode) -> TrainConfig {
    let mut c = TrainConfig::default();
    c.set("arch", "toy").expect("toy preset exists");
    c.partial_size = 16;
    c.complete_size = 32;
    c.batch_size = 3;
    c.epochs = 2;
    c.mode = mode;
    c.seed = 11;
    c
}

fn toy_shape(i: u64, n: usize) -> PointCloud {
    let class = ShapeClass::ALL[(i % ShapeClass::ALL.len() as u64) as usize];
    generate_shape(&ShapeSpec::random(class, n, 1000 + i)).expect("valid spec")
}

/// `n` toy targets with three references each.
pub fn toy_data(n: usize, seed: u64) -> TrainData {
    let items = (0..n as u64)
        .map(|i| {
            let target = crop_partial(&toy_shape(seed.wrapping_add(i), 32), 16, i).expect("crop");
            let refs = (0..3)
                .map(|r| {
                    let c = toy_shape(seed.wrapping_add(100 + 7 * i + r), 32);
                    let p = crop_partial(&c, 16, 5).expect("crop");
                    let m = crop_partial(&c, 16, 6).expect("crop");
                    RefSample::new(&p, &c, &m)
                })
                .collect();
            TrainItem::new(format!("t{i}"), &target, refs)
        })
        .collect();
    TrainData { items }
}

fn toy_model(seed: u64) -> Result<(Model, ParamStore)> {
    let arch = ModelArchitecture::toy();
    let opts = ModelOptions {
        no_share: false,
        discriminators: true,
    };
    let store = init_params(&arch, &opts, seed)?;
    Ok((Model::new(arch, false)?, store))
}

// ---------------------------------------------------------------- gradcheck

type Builder<'a> = Box<dyn Fn(&mut Graph, &ParamStore) -> Result<NodeId> + 'a>;

fn project(g: &mut Graph, x: NodeId, seed: u64) -> Result<NodeId> {
    let [r, c] = g.shape(x);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = g.constant(rand_tensor(&mut rng, r, c));
    let d = g.sub(x, w)?;
    let sq = g.square(d)?;
    g.sum(sq)
}

fn head(g: &mut Graph, x: NodeId) -> Result<NodeId> {
    let sq = g.square(x)?;
    let m = g.mean(sq)?;
    let s = g.sum(x)?;
    g.add(m, s)
}

fn run_check(name: &str, store: &mut ParamStore, entries: usize, seed: u64, f: Builder) -> Result<CheckOutcome> {
    let opts = GradCheckOptions {
        max_entries_per_param: entries,
        seed,
        ..Default::default()
    };
    let r = grad_check(f, store, &opts)?;
    Ok(CheckOutcome::new(
        name,
        r.passed,
        format!("max rel err {:.2e} over {} arrays, {} kinks excused", r.max_rel_error, r.params.len(), r.kinks),
    ))
}

fn primitive_cases<'a>() -> Vec<(&'static str, Builder<'a>)> {
    vec![
        ("matmul", Box::new(|g, s| {
            let (a, b) = (g.param(s, "a")?, g.param(s, "b")?);
            let y = g.matmul(a, b)?;
            project(g, y, 1)
        })),
        ("add/sub", Box::new(|g, s| {
            let (a, c) = (g.param(s, "a")?, g.param(s, "c")?);
            let b = g.param(s, "b")?;
            let ab = g.matmul(a, b)?;
            let y = g.add(c, ab)?;
            let z = g.sub(y, c)?;
            let z = g.add(z, y)?;
            project(g, z, 2)
        })),
        ("bias-add/linear", Box::new(|g, s| {
            let (a, b, bias) = (g.param(s, "a")?, g.param(s, "b")?, g.param(s, "bias")?);
            let y = g.linear(a, b, bias)?;
            let c = g.param(s, "c")?;
            let z = g.bias_add(c, bias)?;
            let z = g.add(y, z)?;
            project(g, z, 3)
        })),
        ("concat", Box::new(|g, s| {
            let (a, c) = (g.param(s, "a")?, g.param(s, "c")?);
            let y = g.concat_cols(&[a, c, a])?;
            let p = g.param(s, "p")?;
            let z = g.concat_rows(&[p, a])?;
            let (py, pz) = (project(g, y, 4)?, project(g, z, 5)?);
            g.add(py, pz)
        })),
        ("relu/leaky-relu", Box::new(|g, s| {
            let c = g.param(s, "c")?;
            let r = g.relu(c)?;
            let l = g.leaky_relu(c, 0.2)?;
            let y = g.concat_cols(&[r, l])?;
            project(g, y, 6)
        })),
        ("max-rows", Box::new(|g, s| {
            let p = g.param(s, "p")?;
            let m = g.max_rows(p)?;
            project(g, m, 7)
        })),
        ("gather", Box::new(|g, s| {
            let p = g.param(s, "p")?;
            let y = g.gather_rows(p, &[5, 0, 0, 3])?;
            project(g, y, 8)
        })),
        ("mean/sum/scale", Box::new(|g, s| {
            let c = g.param(s, "c")?;
            let rs = g.row_sum(c)?;
            let m = g.mean(c)?;
            let sm = g.sum(rs)?;
            let y = g.scale(sm, 0.7)?;
            let y = g.add_scalar(y, 3.0)?;
            let y = g.square(y)?;
            g.add(y, m)
        })),
        ("square/sqrt/reshape", Box::new(|g, s| {
            let c = g.param(s, "c")?;
            let sq = g.square(c)?;
            let sh = g.add_scalar(sq, 0.5)?;
            let r = g.sqrt(sh)?;
            let r = g.reshape(r, 10, 2)?;
            project(g, r, 9)
        })),
    ]
}

fn primitive_store(seed: u64) -> Result<ParamStore> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = ParamStore::new();
    for (n, r, c) in [("a", 4, 3), ("b", 3, 5), ("c", 4, 5), ("bias", 1, 5), ("p", 6, 3)] {
        s.insert(n, rand_tensor(&mut rng, r, c))?;
    }
    Ok(s)
}

pub fn gradcheck_suite(seed: u64) -> Result<Vec<CheckOutcome>> {
    let mut out = Vec::new();
    let mut s = primitive_store(seed)?;
    for (name, f) in primitive_cases() {
        out.push(run_check(&format!("primitive {name}"), &mut s, 64, seed, f)?);
    }

    let (model, mut store) = toy_model(seed)?;
    let m = &model;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37);
    let c16 = cloud_tensor_of(&rand_cloud(&mut rng, 16));
    let c32 = cloud_tensor_of(&rand_cloud(&mut rng, 32));
    for (kind, label) in [
        (EncoderKind::Partial, "E_p"),
        (EncoderKind::Mask, "E_m"),
        (EncoderKind::Complete, "E_c"),
    ] {
        let c = if kind == EncoderKind::Complete { c32.clone() } else { c16.clone() };
        out.push(run_check(&format!("encoder {label}"), &mut store, 8, seed, Box::new(move |g, s| {
            let x = g.constant(c.clone());
            let z = m.encode(g, s, kind, Branch::Reference, x)?;
            head(g, z)
        }))?);
    }
    let zin = rand_tensor(&mut rng, 2, m.arch.latent());
    {
        let z = zin.clone();
        let zm = rand_tensor(&mut rng, 2, m.arch.latent());
        out.push(run_check("LSFM", &mut store, 8, seed, Box::new(move |g, s| {
            let (zp, zm) = (g.constant(z.clone()), g.constant(zm.clone()));
            let y = m.lsfm(g, s, Branch::Reference, zp, zm)?;
            head(g, y)
        }))?);
    }
    for (h, label) in [(DecoderHead::Main, "decoder D_c"), (DecoderHead::Aux, "decoder D_c^r")] {
        let (z, t) = (zin.clone(), c32.clone());
        out.push(run_check(label, &mut store, 8, seed, Box::new(move |g, s| {
            let zi = g.constant(z.clone());
            let d = m.decode(g, s, h, Branch::Reference, zi)?;
            let c = m.cloud_of(g, d, 1)?;
            let tt = g.constant(t.clone());
            cd_loss(g, c, tt)
        }))?);
    }
    {
        let z = zin.clone();
        out.push(run_check("latent discriminator", &mut store, 8, seed, Box::new(move |g, s| {
            let zi = g.constant(z.clone());
            let sc = m.discriminate_latent(g, s, zi)?;
            head(g, sc)
        }))?);
        let c = c16.clone();
        out.push(run_check("cloud discriminator", &mut store, 8, seed, Box::new(move |g, s| {
            let x = g.constant(c.clone());
            let sc = m.discriminate_cloud(g, s, x)?;
            head(g, sc)
        }))?);
    }

    let mut ls = ParamStore::new();
    ls.insert("x", rand_tensor(&mut rng, 12, 3))?;
    ls.insert("y", rand_tensor(&mut rng, 9, 3))?;
    ls.insert("f", rand_tensor(&mut rng, 5, 4))?;
    ls.insert("r", rand_tensor(&mut rng, 5, 4))?;
    out.push(run_check("chamfer loss", &mut ls, 64, seed, Box::new(|g, s| {
        let (x, y) = (g.param(s, "x")?, g.param(s, "y")?);
        cd_loss(g, x, y)
    }))?);
    out.push(run_check("wasserstein loss", &mut ls, 64, seed, Box::new(|g, s| {
        let (f, r) = (g.param(s, "f")?, g.param(s, "r")?);
        wasserstein_loss(g, f, r)
    }))?);
    out.push(run_check("adversarial losses", &mut ls, 64, seed, Box::new(|g, s| {
        let (f, r) = (g.param(s, "f")?, g.param(s, "r")?);
        let (fr, rr) = (g.row_sum(f)?, g.row_sum(r)?);
        let (gen, disc) = adversarial_losses(g, rr, fr)?;
        g.add(gen, disc)
    }))?);

    out.push(full_objective_check(seed)?);
    out.push(negative_control(seed)?);
    Ok(out)
}

fn cloud_tensor_of(c: &PointCloud) -> Tensor {
    crate::netmodel::cloud_tensor(c)
}

/// Finite-difference check of the complete weighted objective on a 4-item toy batch.
pub fn full_objective_check(seed: u64) -> Result<CheckOutcome> {
    let data = toy_data(4, seed);
    let mut cfg = toy_config(Mode::Plain);
    cfg.batch_size = 4;
    cfg.seed = seed;
    let t = Trainer::new(&cfg, 4)?;
    let batch = t.assemble(&data, 0)?;
    let mut store = t.params.clone();
    let cfgr = &cfg;
    let model = &t.model;
    let batch = &batch;
    run_check("full weighted objective (4-item batch)", &mut store, 4, seed, Box::new(move |g, s| {
        let pass = forward_generator(model, cfgr, g, s, batch, true)?;
        total_loss(g, &pass.parts, &cfgr.weights)
    }))
}

/// A corrupted vector-Jacobian product must be detected.
pub fn negative_control(seed: u64) -> Result<CheckOutcome> {
    let mut s = primitive_store(seed)?;
    let opts = GradCheckOptions {
        max_entries_per_param: 64,
        seed,
        ..Default::default()
    };
    let r = grad_check(
        |g: &mut Graph, s: &ParamStore| {
            g.inject_vjp_fault(OpKind::MatMul);
            let (a, b) = (g.param(s, "a")?, g.param(s, "b")?);
            let y = g.matmul(a, b)?;
            project(g, y, 1)
        },
        &mut s,
        &opts,
    )?;
    Ok(CheckOutcome::new(
        "negative control (corrupted matmul VJP is rejected)",
        !r.passed,
        format!("max rel err {:.2e}", r.max_rel_error),
    ))
}

// ---------------------------------------------------------------- oracles

fn brute_directional(a: &PointCloud, b: &PointCloud) -> f64 {
    let mut total = 0.0;
    for p in a.iter() {
        let mut best = f64::INFINITY;
        for q in b.iter() {
            let d = (p.x - q.x) * (p.x - q.x) + (p.y - q.y) * (p.y - q.y) + (p.z - q.z) * (p.z - q.z);
            if d < best {
                best = d;
            }
        }
        total += best;
    }
    total / a.len() as f64
}

fn brute_chamfer(a: &PointCloud, b: &PointCloud) -> f64 {
    brute_directional(a, b) + brute_directional(b, a)
}

fn brute_fraction(a: &PointCloud, b: &PointCloud, eps: f64) -> f64 {
    let hits = a
        .iter()
        .filter(|p| b.iter().any(|q| sq_dist(p, q).sqrt() < eps))
        .count();
    hits as f64 / a.len() as f64
}

/// Chamfer, UCD, F1 and MMD against double-loop oracles, plus the hand examples.
pub fn metric_oracles(seed: u64) -> Result<Vec<CheckOutcome>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut worst_cd, mut worst_ucd, mut f1_bad, mut mmd_worst) = (0.0f64, 0.0f64, 0usize, 0.0f64);
    let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE);
    for _ in 0..200 {
        let (na, nb) = (rng.gen_range(1..=128), rng.gen_range(1..=128));
        let a = rand_cloud(&mut rng, na);
        let b = rand_cloud(&mut rng, nb);
        worst_cd = worst_cd.max(rel(chamfer(&a, &b), brute_chamfer(&a, &b)));
        worst_ucd = worst_ucd.max(rel(ucd(&a, &b), brute_directional(&a, &b)));
        let eps = rng.gen_range(0.05..0.5);
        let got = f1(&a, &b, eps)?;
        let (acc, comp) = (brute_fraction(&a, &b, eps), brute_fraction(&b, &a, eps));
        let want = if acc + comp == 0.0 { 0.0 } else { 2.0 * acc * comp / (acc + comp) };
        if !(rel_close(got.f1, want, 1e-12) || got.f1 == want) || got.accuracy != acc || got.completeness != comp {
            f1_bad += 1;
        }
    }
    for _ in 0..40 {
        let preds: Vec<PointCloud> = (0..5).map(|_| rand_cloud(&mut rng, 32)).collect();
        let gts: Vec<PointCloud> = (0..3).map(|_| rand_cloud(&mut rng, 32)).collect();
        let mut want = 0.0;
        for p in &preds {
            let mut best = f64::INFINITY;
            for g in &gts {
                best = best.min(brute_chamfer(p, g));
            }
            want += best;
        }
        want /= preds.len() as f64;
        mmd_worst = mmd_worst.max(rel(mmd(&preds, &gts)?, want));
    }
    let mut out = vec![
        CheckOutcome::new("chamfer vs double loop (200)", worst_cd <= 1e-12, format!("max rel {worst_cd:.1e}")),
        CheckOutcome::new("ucd vs double loop (200)", worst_ucd <= 1e-12, format!("max rel {worst_ucd:.1e}")),
        CheckOutcome::new("f1 vs double loop (200)", f1_bad == 0, format!("{f1_bad} mismatches")),
        CheckOutcome::new("mmd vs 15-pair oracle (40)", mmd_worst <= 1e-12, format!("max rel {mmd_worst:.1e}")),
    ];

    let o = cloud(&[(0.0, 0.0, 0.0)]);
    let cd = chamfer(&o, &cloud(&[(1.0, 0.0, 0.0)]));
    let u = ucd(&cloud(&[(0.0, 0.0, 0.0), (2.0, 0.0, 0.0)]), &o);
    let u_rev = ucd(&o, &cloud(&[(0.0, 0.0, 0.0), (2.0, 0.0, 0.0)]));
    let f = f1(&cloud(&[(0.0, 0.0, 0.0), (1.0, 0.0, 0.0)]), &o, 0.03)?;
    let far = f1(&o, &cloud(&[(0.0, 0.0, 0.05)]), 0.03)?;
    let hand = cd == 2.0
        && u == 2.0
        && u_rev == 0.0
        && f.accuracy == 0.5
        && f.completeness == 1.0
        && f.f1 == 2.0 / 3.0
        && (far.f1, far.accuracy, far.completeness) == (0.0, 0.0, 0.0);
    out.push(CheckOutcome::new(
        "hand examples (CD 2.0, UCD 2.0, F1 2/3)",
        hand,
        format!("cd {cd}, ucd {u}, f1 {}", f.f1),
    ));
    Ok(out)
}

/// KNN against a full exhaustive sort and retrieval against an exhaustive ranking.
pub fn knn_retrieval_oracles(seed: u64) -> Result<Vec<CheckOutcome>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bad = 0usize;
    for trial in 0..200 {
        let n = rng.gen_range(1..=256);
        let mut target = rand_cloud(&mut rng, n);
        if trial % 4 == 0 {
            // Lattice coordinates force exact distance ties.
            target = PointCloud::new(
                target
                    .iter()
                    .map(|p| Point3::new((p.x * 3.0).round(), (p.y * 3.0).round(), (p.z * 3.0).round()))
                    .collect(),
            )?;
        }
        let k = rng.gen_range(1..=16usize.min(n));
        let q = Point3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let mut all: Vec<(f64, usize)> = target.iter().enumerate().map(|(i, p)| (sq_dist(&q, p), i)).collect();
        all.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite").then(a.1.cmp(&b.1)));
        let want: Vec<usize> = all[..k].iter().map(|e| e.1).collect();
        let brute = knn(&q, &target, k)?;
        let tree = KdTree::new(target.points()).knn(&q, k);
        let dists: Vec<f64> = all[..k].iter().map(|e| e.0).collect();
        if brute.indices != want || tree.indices != want || tree.distances != dists || brute.distances != dists {
            bad += 1;
        }
    }
    let mut out = vec![CheckOutcome::new(
        "knn (linear and kd-tree) vs exhaustive sort (200)",
        bad == 0,
        format!("{bad} mismatches"),
    )];
    out.push(retrieval_oracle(seed)?);
    Ok(out)
}

/// Exhaustive ranking of a 20-shape corpus against `build_reference_pairs`.
pub fn retrieval_oracle(seed: u64) -> Result<CheckOutcome> {
    let corpus: Vec<PointCloud> = (0..20u64)
        .map(|i| {
            let class = ShapeClass::ALL[(i % 4) as usize];
            generate_shape(&ShapeSpec::random(class, 256, derive_seed(seed, &[i])))
                .map(|c| c.with_source(format!("s{i:02}")))
        })
        .collect::<Result<_>>()?;
    let target_full = generate_shape(&ShapeSpec::random(ShapeClass::Box, 256, derive_seed(seed, &[99])))?;
    let target = crop_partial(&target_full, 96, seed)?.with_source("target");
    let opts = RetrievalOptions {
        k: 4,
        top_n: 3,
        min_cd: 1e-4,
        scope: ClassScope::AllClasses,
        partial_size: 96,
        complete_size: 256,
        seed,
    };
    let got = build_reference_pairs(&target, &corpus, &opts)?;
    let mut scored = Vec::new();
    let mut union_ok = true;
    for c in &corpus {
        let id = c.source_id.clone().expect("named");
        let mut hit = BTreeSet::new();
        for q in target.iter() {
            hit.extend(knn(q, c, opts.k)?.indices);
        }
        let deg_seed = derive_seed(seed, &[stable_hash("target"), stable_hash(&id)]);
        let d = degrade(&target, c, opts.k, opts.partial_size, deg_seed)?;
        union_ok &= d.selected_indices == hit.into_iter().collect::<Vec<_>>();
        let cd = brute_chamfer(&target, &d.partial);
        if cd >= opts.min_cd {
            scored.push((cd, id));
        }
    }
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
    let want: Vec<&str> = scored[..3].iter().map(|s| s.1.as_str()).collect();
    let have: Vec<&str> = got.iter().map(|p| p.source_id.as_str()).collect();
    let cds_ok = got
        .iter()
        .zip(&scored)
        .all(|(p, s)| rel_close(p.cd_to_template, s.0, 1e-12));
    Ok(CheckOutcome::new(
        "retrieval top-3 vs exhaustive ranking (20 shapes)",
        union_ok && want == have && cds_ok,
        format!("oracle {want:?}, got {have:?}"),
    ))
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

/// Assignment exactness against enumeration and metric axioms of W1.
pub fn transport_oracles(seed: u64) -> Result<Vec<CheckOutcome>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut mismatches, mut ties) = (0usize, 0usize);
    for trial in 0..50 {
        let b = 1 + trial % 6;
        let d = rng.gen_range(1..=5);
        let x = rand_tensor(&mut rng, b, d);
        let y = rand_tensor(&mut rng, b, d);
        let c = crate::losses::l2_costs(&x, &y);
        let best = permutations(b)
            .iter()
            .map(|p| p.iter().enumerate().map(|(i, &j)| c[i * b + j]).sum::<f64>())
            .fold(f64::INFINITY, f64::min)
            / b as f64;
        let (w, _) = wasserstein_distance(&x, &y)?;
        let mut g = Graph::new();
        let (xn, yn) = (g.constant(x), g.constant(y));
        let l = wasserstein_loss(&mut g, xn, yn)?;
        let lv = g.value(l).item();
        let tied = w != best && (w - best).abs() <= 2.0 * b as f64 * f64::EPSILON * best;
        ties += usize::from(tied);
        if (w != best && !tied) || !rel_close(lv, w, 1e-12) {
            mismatches += 1;
        }
    }
    let (mut zero, mut sym, mut tri) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..100 {
        let b = rng.gen_range(1..=8);
        let d = rng.gen_range(1..=6);
        let x = rand_tensor(&mut rng, b, d);
        let y = rand_tensor(&mut rng, b, d);
        let z = rand_tensor(&mut rng, b, d);
        let w = |a: &Tensor, c: &Tensor| wasserstein_distance(a, c).map(|r| r.0);
        zero = zero.max(w(&x, &x)?);
        sym = sym.max((w(&x, &y)? - w(&y, &x)?).abs());
        tri = tri.max(w(&x, &z)? - w(&x, &y)? - w(&y, &z)?);
    }
    Ok(vec![
        CheckOutcome::new(
            "W1 equals factorial enumeration (50 batches, B<=6)",
            mismatches == 0,
            format!("{mismatches} mismatches, {ties} tied optima within rounding"),
        ),
        CheckOutcome::new(
            "W1 identity, symmetry, triangle (100 triples)",
            zero <= 1e-9 && sym <= 1e-9 && tri <= 1e-9,
            format!("W(X,X) {zero:.1e}, asym {sym:.1e}, triangle excess {tri:.1e}"),
        ),
    ])
}

pub fn oracle_suite(seed: u64) -> Result<Vec<CheckOutcome>> {
    let mut out = metric_oracles(seed)?;
    out.extend(knn_retrieval_oracles(seed)?);
    out.extend(transport_oracles(seed)?);
    Ok(out)
}

// ---------------------------------------------------------------- invariants

fn permuted(t: &Tensor, rng: &mut ChaCha8Rng) -> Tensor {
    let mut idx: Vec<usize> = (0..t.rows()).collect();
    idx.shuffle(rng);
    let data = idx.iter().flat_map(|&i| t.row(i).to_vec()).collect();
    Tensor::from_vec(t.rows(), t.cols(), data).expect("same size")
}

/// Encoder and cloud-discriminator outputs under random point permutations.
pub fn permutation_invariance(seed: u64) -> Result<CheckOutcome> {
    let (m, s) = toy_model(seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        for kind in [EncoderKind::Partial, EncoderKind::Mask, EncoderKind::Complete] {
            let n = if kind == EncoderKind::Complete { 32 } else { 16 };
            let c = rand_tensor(&mut rng, n, 3);
            let pc = permuted(&c, &mut rng);
            let mut g = Graph::new();
            let (a, b) = (g.constant(c), g.constant(pc));
            let za = m.encode(&mut g, &s, kind, Branch::Reference, a)?;
            let zb = m.encode(&mut g, &s, kind, Branch::Reference, b)?;
            for (x, y) in g.value(za).data().iter().zip(g.value(zb).data()) {
                worst = worst.max((x - y).abs());
            }
            let (da, db) = (m.discriminate_cloud(&mut g, &s, a)?, m.discriminate_cloud(&mut g, &s, b)?);
            worst = worst.max((g.value(da).item() - g.value(db).item()).abs());
        }
    }
    Ok(CheckOutcome::new(
        "encoder/discriminator permutation invariance",
        worst <= 1e-9,
        format!("max deviation {worst:.1e}"),
    ))
}

/// Selected and mask index sets partition the complete cloud.
pub fn degradation_partition(seed: u64) -> Result<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bad = 0usize;
    let mut checked = 0usize;
    while checked < 100 {
        let n = rng.gen_range(8..=128);
        let complete = rand_cloud(&mut rng, n);
        let nt = rng.gen_range(1..=n / 4 + 1);
        let template = rand_cloud(&mut rng, nt);
        let k = rng.gen_range(1..=4);
        let sel = crate::refdata::neighbourhood_union(&template, &complete, k)?;
        if sel.len() == n {
            continue;
        }
        checked += 1;
        let d = degrade(&template, &complete, k, sel.len(), rng.gen())?;
        let s: BTreeSet<usize> = d.selected_indices.iter().copied().collect();
        let m: BTreeSet<usize> = d.mask_indices.iter().copied().collect();
        let union: BTreeSet<usize> = s.union(&m).copied().collect();
        let members = d.partial.iter().all(|p| complete.iter().any(|q| q == p));
        if !s.is_disjoint(&m) || union != (0..n).collect() || !members || d.partial.len() != sel.len() {
            bad += 1;
        }
        let bigger = crate::refdata::neighbourhood_union(&template, &complete, (k + 1).min(n))?;
        if !s.iter().all(|i| bigger.binary_search(i).is_ok()) {
            bad += 1;
        }
    }
    Ok(CheckOutcome::new(
        "degradation partition and monotone coverage (100)",
        bad == 0,
        format!("{bad} violations"),
    ))
}

fn batch_gradients(cfg: &TrainConfig, data: &TrainData, target_branch: bool) -> Result<(BTreeSet<String>, ParamStore)> {
    let t = Trainer::new(cfg, data.items.len())?;
    let batch = t.assemble(data, 0)?;
    let mut g = Graph::new();
    let pass = forward_generator(&t.model, cfg, &mut g, &t.params, &batch, target_branch)?;
    let total = total_loss(&mut g, &pass.parts, &cfg.weights)?;
    let grads = g.backward(total)?;
    let mut store = t.params.clone();
    store.accumulate(&grads);
    Ok((g.touched_params().clone(), store))
}

/// Shared-storage identity and the parameter count doubling under `no_share`.
pub fn sharing_audit(seed: u64) -> Result<Vec<CheckOutcome>> {
    let data = toy_data(3, seed);
    let cfg = toy_config(Mode::Plain);
    let (with_t, _) = batch_gradients(&cfg, &data, true)?;
    let (without, _) = batch_gradients(&cfg, &data, false)?;

    let t = Trainer::new(&cfg, 3)?;
    let mut identity = true;
    for name in &with_t {
        let id = t.params.id(name).ok_or_else(|| Error::invalid(format!("missing {name}")))?;
        let (a, b) = (t.params.shared_value(id), t.params.shared_value(id));
        identity &= std::sync::Arc::ptr_eq(&a, &b);
    }
    let mut g = Graph::new();
    let a = g.param(&t.params, "enc_p.l0.w")?;
    let b = g.param(&t.params, "enc_p.l0.w")?;
    identity &= a == b && std::ptr::eq(g.value(a), t.params.get("enc_p.l0.w").expect("exists").value());

    let arch = &cfg.arch;
    let mlp = |w: &[usize]| w.windows(2).map(|p| p[0] * p[1] + p[1]).sum::<usize>();
    let (l, h) = (arch.latent(), arch.lsfm_width);
    let lsfm = 2 * (l * h + h) + (arch.residual_blocks + 1) * (h * h + h) + 2 * (2 * h * h + h) + h * l + l;
    let trio = mlp(&arch.encoder) + lsfm + mlp(&arch.decoder);
    let shared = init_params(arch, &ModelOptions::default(), 0)?;
    let split = init_params(arch, &ModelOptions { no_share: true, discriminators: false }, 0)?;
    let (cs, cn) = (shared_param_count(&shared), shared_param_count(&split));
    let mut desk_ok = true;
    for name in ["desk", "full"] {
        let a = ModelArchitecture::preset(name)?;
        let layers = |no_share| -> usize {
            a.layers(&ModelOptions { no_share, discriminators: false })
                .iter()
                .filter(|(n, ..)| crate::netmodel::SHARED_MODULES.iter().any(|m| n.trim_start_matches("tar.").starts_with(m)))
                .map(|(_, i, o)| i * o + o)
                .sum()
        };
        desk_ok &= layers(true) == 2 * layers(false);
    }
    Ok(vec![
        CheckOutcome::new(
            "parameter-sharing audit (same names with and without target branch)",
            with_t == without && identity,
            format!("{} names updated", with_t.len()),
        ),
        CheckOutcome::new(
            "no_share doubles the shared trio exactly",
            cs == trio && cn == 2 * trio && desk_ok,
            format!("shared {cs}, split {cn}, arithmetic {trio}"),
        ),
    ])
}

/// Default weights with unit parts, the logged recombination identity, and
/// exact zero target-branch gradients at beta = 0.
pub fn weight_wiring(seed: u64) -> Result<Vec<CheckOutcome>> {
    let w = LossWeights::default();
    let mut g = Graph::new();
    let one = || Tensor::scalar(1.0);
    let parts = LossNodes {
        cd_ref: Some(g.constant(one())),
        cd_aux_ref: Some(g.constant(one())),
        cd_tar: Some(g.constant(one())),
        cd_aux_tar: Some(g.constant(one())),
        wasserstein: Some(g.constant(one())),
        adv_gen: None,
    };
    let t = total_loss(&mut g, &parts, &w)?;
    let unit = g.value(t).item();
    let b = LossBreakdown {
        cd_ref: 1.0,
        cd_aux_ref: 1.0,
        cd_tar: 1.0,
        cd_aux_tar: 1.0,
        wasserstein: 1.0,
        ..Default::default()
    };

    let data = toy_data(4, seed);
    let mut worst = 0.0f64;
    for mode in [Mode::Plain, Mode::Wdis, Mode::Unified] {
        let mut cfg = toy_config(mode);
        cfg.seed = seed;
        let mut tr = Trainer::new(&cfg, data.items.len())?;
        for _ in 0..3 {
            let l = tr.train_step(&data)?;
            worst = worst.max((l.recombine(&cfg.weights, mode.adversarial()) - l.total).abs());
        }
    }

    let mut cfg = toy_config(Mode::Plain);
    cfg.weights.beta = 0.0;
    let (_, full) = batch_gradients(&cfg, &data, true)?;
    let (_, refonly) = batch_gradients(&cfg, &data, false)?;
    let mut exact = true;
    for (a, r) in full.iter().zip(refonly.iter()) {
        exact &= a.name == r.name && a.grad.data() == r.grad.data();
    }
    let tr = Trainer::new(&cfg, data.items.len())?;
    let batch = tr.assemble(&data, 0)?;
    let mut g = Graph::new();
    let pass = forward_generator(&tr.model, &cfg, &mut g, &tr.params, &batch, true)?;
    let target_only = LossNodes {
        cd_tar: pass.parts.cd_tar,
        cd_aux_tar: pass.parts.cd_aux_tar,
        ..Default::default()
    };
    let tt = total_loss(&mut g, &target_only, &cfg.weights)?;
    let grads = g.backward(tt)?;
    let mut zero = true;
    for (_, grad) in grads.params() {
        if let Some(gr) = grad {
            zero &= gr.data().iter().all(|&v| v == 0.0);
        }
    }
    Ok(vec![
        CheckOutcome::new("unit parts with default weights total 2.001", unit == 2.001 && b.recombine(&w, false) == 2.001, format!("{unit}")),
        CheckOutcome::new("logged total equals weighted parts", worst <= 1e-12, format!("max deviation {worst:.1e}")),
        CheckOutcome::new("beta = 0 gives exactly zero target gradients", exact && zero, String::new()),
    ])
}

pub fn invariant_suite(seed: u64) -> Result<Vec<CheckOutcome>> {
    let mut out = vec![permutation_invariance(seed)?, degradation_partition(seed)?];
    out.extend(sharing_audit(seed)?);
    out.extend(weight_wiring(seed)?);
    Ok(out)
}
