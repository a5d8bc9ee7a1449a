use super::*;
use crate::autodiff::{grad_check, GradCheckOptions};
use crate::corpus::{crop_partial, generate_shape, ShapeClass, ShapeSpec};

fn toy_config(mode: Mode) -> TrainConfig {
    let mut c = TrainConfig::default();
    c.set("arch", "toy").unwrap();
    c.partial_size = 16;
    c.complete_size = 32;
    c.batch_size = 3;
    c.epochs = 2;
    c.mode = mode;
    c.seed = 11;
    c
}

fn shape(i: usize, n: usize) -> PointCloud {
    let class = ShapeClass::ALL[i % ShapeClass::ALL.len()];
    generate_shape(&ShapeSpec::random(class, n, 1000 + i as u64)).unwrap()
}

fn toy_data(n: usize) -> TrainData {
    let items = (0..n)
        .map(|i| {
            let target = crop_partial(&shape(i, 32), 16, i as u64).unwrap();
            let refs = (0..3)
                .map(|r| {
                    let c = shape(100 + 7 * i + r, 32);
                    let p = crop_partial(&c, 16, 5).unwrap();
                    let m = crop_partial(&c, 16, 6).unwrap();
                    RefSample::new(&p, &c, &m)
                })
                .collect();
            TrainItem::new(format!("t{i}"), &target, refs)
        })
        .collect();
    TrainData { items }
}

fn run_steps(cfg: &TrainConfig, data: &TrainData, n: usize) -> (Vec<LossBreakdown>, Trainer) {
    let mut t = Trainer::new(cfg, data.items.len()).unwrap();
    let trace = (0..n).map(|_| t.train_step(data).unwrap()).collect();
    (trace, t)
}

fn bits(t: &Trainer) -> Vec<u64> {
    t.params
        .iter()
        .flat_map(|p| p.value().data().iter().map(|v| v.to_bits()).collect::<Vec<_>>())
        .collect()
}

#[test]
fn batches_cover_each_epoch_once() {
    let cfg = toy_config(Mode::Plain);
    let t = Trainer::new(&cfg, 7).unwrap();
    assert_eq!(t.steps_per_epoch, 3);
    assert_eq!(t.total_steps, 6);
    let mut seen: Vec<usize> = (0..3).flat_map(|s| t.batch_indices(s, 7)).collect();
    assert_eq!(t.batch_indices(2, 7).len(), 1);
    seen.sort();
    assert_eq!(seen, (0..7).collect::<Vec<_>>());
    assert_ne!(t.batch_indices(0, 7), t.batch_indices(3, 7));
}

#[test]
fn max_steps_caps_the_schedule() {
    let mut cfg = toy_config(Mode::Plain);
    cfg.max_steps = 4;
    let t = Trainer::new(&cfg, 7).unwrap();
    assert_eq!(t.total_steps, 4);
    assert!(t.lr_at(3) < t.lr_at(0));
}

#[test]
fn steps_are_deterministic_in_every_mode() {
    let data = toy_data(5);
    for mode in [Mode::Plain, Mode::Wdis, Mode::Unified] {
        let cfg = toy_config(mode);
        let (a, ta) = run_steps(&cfg, &data, 3);
        let (b, tb) = run_steps(&cfg, &data, 3);
        assert_eq!(a, b);
        assert_eq!(bits(&ta), bits(&tb));
        assert!(a.iter().all(|l| l.total.is_finite() && l.cd_tar > 0.0));
        assert_eq!(a[0].adv_disc > 0.0, mode.adversarial());
    }
}

#[test]
fn loss_decreases_on_a_fixed_batch() {
    let data = toy_data(3);
    let mut cfg = toy_config(Mode::Plain);
    cfg.epochs = 60;
    cfg.optimizer.learning_rate = 3e-3;
    cfg.fixed_ref = true;
    let (trace, _) = run_steps(&cfg, &data, 60);
    assert!(trace[59].total < 0.5 * trace[0].total, "{} -> {}", trace[0].total, trace[59].total);
}

#[test]
fn adversarial_step_updates_discriminators_only_from_their_loss() {
    let data = toy_data(3);
    let cfg = toy_config(Mode::Wdis);
    let before = Trainer::new(&cfg, 3).unwrap();
    let (_, after) = run_steps(&cfg, &data, 1);
    for p in after.params.iter() {
        let changed = p.value() != before.params.get(&p.name).unwrap().value();
        assert!(changed, "{} was not updated", p.name);
    }
}

#[test]
fn only_gan_reports_adversarial_terms_alone() {
    let data = toy_data(3);
    let mut cfg = toy_config(Mode::Unified);
    cfg.only_gan = true;
    let (trace, t) = run_steps(&cfg, &data, 2);
    for l in &trace {
        assert_eq!((l.cd_ref, l.cd_tar, l.wasserstein), (0.0, 0.0, 0.0));
        assert!(l.adv_gen > 0.0 && l.adv_disc > 0.0);
    }
    let untouched = Trainer::new(&cfg, 3).unwrap();
    assert_eq!(t.params.get("lsfm.out.w").unwrap().value(), untouched.params.get("lsfm.out.w").unwrap().value());
    assert_ne!(t.params.get("dec_c.l0.w").unwrap().value(), untouched.params.get("dec_c.l0.w").unwrap().value());
}

fn gradients(cfg: &TrainConfig, data: &TrainData, target_branch: bool) -> (BTreeSet<String>, Vec<(String, Vec<f64>)>) {
    let t = Trainer::new(cfg, data.items.len()).unwrap();
    let batch = t.assemble(data, 0).unwrap();
    let mut g = Graph::new();
    let pass = forward_generator(&t.model, cfg, &mut g, &t.params, &batch, target_branch).unwrap();
    let total = total_loss(&mut g, &pass.parts, &cfg.weights).unwrap();
    let grads = g.backward(total).unwrap();
    let mut store = t.params.clone();
    store.accumulate(&grads);
    let touched = g.touched_params().clone();
    (touched, store.iter().map(|p| (p.name.clone(), p.grad.data().to_vec())).collect())
}

#[test]
fn zero_beta_removes_target_gradients_exactly() {
    let data = toy_data(3);
    let mut cfg = toy_config(Mode::Plain);
    cfg.weights.beta = 0.0;
    let (_, with_target) = gradients(&cfg, &data, true);
    let (_, without) = gradients(&cfg, &data, false);
    for ((name, a), (_, b)) in with_target.iter().zip(&without) {
        assert_eq!(a, b, "{name}");
    }
    assert!(with_target.iter().any(|(_, g)| g.iter().any(|&v| v != 0.0)));
}

#[test]
fn shared_weights_see_the_same_parameter_set() {
    let data = toy_data(3);
    let cfg = toy_config(Mode::Plain);
    let (a, _) = gradients(&cfg, &data, true);
    let (b, _) = gradients(&cfg, &data, false);
    assert_eq!(a, b);
    let mut split = cfg.clone();
    split.no_share = true;
    let (c, _) = gradients(&split, &data, true);
    let (d, _) = gradients(&split, &data, false);
    assert!(c.len() > d.len() && c.iter().any(|n| n.starts_with(crate::netmodel::TARGET_PREFIX)));
}

#[test]
fn full_objective_matches_finite_differences() {
    let data = toy_data(4);
    let mut cfg = toy_config(Mode::Plain);
    cfg.batch_size = 4;
    let t = Trainer::new(&cfg, 4).unwrap();
    let batch = t.assemble(&data, 0).unwrap();
    let mut store = t.params.clone();
    let f = |g: &mut Graph, s: &ParamStore| {
        let pass = forward_generator(&t.model, &cfg, g, s, &batch, true)?;
        total_loss(g, &pass.parts, &cfg.weights)
    };
    let opts = GradCheckOptions {
        max_entries_per_param: 4,
        ..Default::default()
    };
    let r = grad_check(f, &mut store, &opts).unwrap();
    assert!(r.passed, "{r:?}");
}

#[test]
fn divergence_names_the_batch() {
    let data = toy_data(3);
    let mut cfg = toy_config(Mode::Plain);
    cfg.optimizer.learning_rate = 1e300;
    let mut t = Trainer::new(&cfg, 3).unwrap();
    let err = (0..4).find_map(|_| t.train_step(&data).err()).expect("training should diverge");
    let msg = err.to_string();
    assert!(matches!(err, Error::NonFinite(_)), "{msg}");
    assert!(msg.contains('t') && msg.contains("batch ["), "{msg}");
}

#[test]
fn resume_reproduces_the_remaining_trace() {
    let data = toy_data(5);
    let mut cfg = toy_config(Mode::Unified);
    cfg.epochs = 3;
    let full = tempfile::tempdir().unwrap();
    let a = train(&cfg, &data, full.path(), None, 0).unwrap();
    assert_eq!(a.epoch_checkpoints.len(), 3);
    assert_eq!(a.rows.len(), 6);

    let part = tempfile::tempdir().unwrap();
    std::fs::copy(&a.epoch_checkpoints[0], part.path().join("resume.rfck")).unwrap();
    let b = train(&cfg, &data, part.path(), Some(&part.path().join("resume.rfck")), 0).unwrap();
    assert_eq!(b.rows[..], a.rows[2..]);
    let fa = std::fs::read(&a.final_checkpoint).unwrap();
    let fb = std::fs::read(&b.final_checkpoint).unwrap();
    assert_eq!(fa, fb);

    let logged = parse_log(&std::fs::read_to_string(full.path().join(LOG_FILE)).unwrap()).unwrap();
    assert_eq!(logged, a.rows);

    let mut other = cfg.clone();
    other.seed = 99;
    assert!(matches!(
        train(&other, &data, part.path(), Some(&a.epoch_checkpoints[0]), 0),
        Err(Error::Config(_))
    ));
}

#[test]
fn keep_limits_epoch_checkpoints() {
    let data = toy_data(3);
    let mut cfg = toy_config(Mode::Plain);
    cfg.epochs = 4;
    let dir = tempfile::tempdir().unwrap();
    let out = train(&cfg, &data, dir.path(), None, 2).unwrap();
    assert_eq!(out.epoch_checkpoints.len(), 2);
    assert!(!dir.path().join(epoch_checkpoint_name(1)).exists());
    assert!(dir.path().join(epoch_checkpoint_name(4)).exists());
}

#[test]
fn inference_returns_the_input_frame_and_rejects_other_architectures() {
    let cfg = toy_config(Mode::Plain);
    let ck = initial_checkpoint(&cfg).unwrap();
    let partial = crop_partial(&shape(0, 32), 16, 0).unwrap();
    let moved = PointCloud::new(
        partial
            .iter()
            .map(|p| p.scale(3.0).add(&crate::geom::Point3::new(5.0, -2.0, 1.0)))
            .collect(),
    )
    .unwrap();
    let c = shape(1, 32);
    let (rp, rm) = (crop_partial(&c, 16, 1).unwrap(), crop_partial(&c, 16, 2).unwrap());
    let a = infer(&ck, &partial, &rp, &rm).unwrap();
    let b = infer(&ck, &moved, &rp, &rm).unwrap();
    assert_eq!(a.len(), 32);
    for (p, q) in a.iter().zip(b.iter()) {
        let expect = p.scale(3.0).add(&crate::geom::Point3::new(5.0, -2.0, 1.0));
        assert!(crate::geom::sq_dist(&expect, q) < 1e-20);
    }

    let mut wrong = ck.clone();
    wrong.config_text = ck.config_text.replace("no_share = false", "no_share = true");
    assert!(matches!(infer(&wrong, &partial, &rp, &rm), Err(Error::Version(_))));
}
