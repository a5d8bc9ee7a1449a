//! Training orchestration: batch assembly, the two-branch step with optional
//! discriminator updates, the epoch loop with checkpoints, and inference.

mod checkpoint;
mod config;

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use config::{Mode, TrainConfig};

use crate::autodiff::{adamw_step, Graph, NodeId, OptimizerConfig, ParamStore};
use crate::corpus::read_cloud;
use crate::error::{Error, Result};
use crate::geom::{normalize_unit_sphere, Frame, PointCloud};
use crate::io_util::write_atomic;
use crate::losses::{adversarial_losses, cd_loss, total_loss, wasserstein_loss, LossBreakdown, LossNodes};
use crate::netmodel::{cloud_tensor, init_params, Branch, DecoderHead, EncoderKind, Model, ModelOptions};
use crate::refdata::{degraded_indices, select_training_pair, ReferenceManifest, ReferencePair};
use crate::seed::derive_seed;

pub const LOG_FILE: &str = "train_log.tsv";
pub const LOG_HEADER: &str = "step\tcd_ref\tcd_r\tcd_tar\tcd_p\twass\tadv_g\tadv_d\ttotal\tlr";
pub const FINAL_CHECKPOINT: &str = "final.rfck";

const TAG_EPOCH: u64 = 1;
const TAG_REF: u64 = 2;
const TAG_DEG: u64 = 3;

/// A reference pair expressed in the frame of its own degraded partial.
#[derive(Debug, Clone, PartialEq)]
pub struct RefSample {
    pub partial: PointCloud,
    pub complete: PointCloud,
    pub mask: PointCloud,
}

impl RefSample {
    pub fn new(partial: &PointCloud, complete: &PointCloud, mask: &PointCloud) -> Self {
        let (p, frame) = normalize_unit_sphere(partial);
        RefSample {
            partial: p,
            complete: frame.normalize(complete),
            mask: frame.normalize(mask),
        }
    }
}

/// A target partial (in its own normalized frame) with its ranked references.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainItem {
    pub id: String,
    pub partial: PointCloud,
    pub frame: Frame,
    pub refs: Vec<RefSample>,
}

impl TrainItem {
    pub fn new(id: impl Into<String>, partial: &PointCloud, refs: Vec<RefSample>) -> Self {
        let (p, frame) = normalize_unit_sphere(partial);
        TrainItem {
            id: id.into(),
            partial: p,
            frame,
            refs,
        }
    }

    pub fn from_pairs(id: impl Into<String>, partial: &PointCloud, pairs: &[ReferencePair]) -> Self {
        let refs = pairs
            .iter()
            .map(|p| RefSample::new(&p.partial_ref, &p.complete_ref, &p.mask))
            .collect();
        TrainItem::new(id, partial, refs)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainData {
    pub items: Vec<TrainItem>,
}

impl TrainData {
    /// Loads every target of the manifest with its first `top_n` references.
    pub fn from_manifest(m: &ReferenceManifest, top_n: usize) -> Result<Self> {
        let mut items = Vec::with_capacity(m.targets.len());
        for (target, entries) in &m.targets {
            if entries.len() < top_n {
                return Err(Error::InsufficientReferences {
                    target: target.display().to_string(),
                    needed: top_n,
                    survivors: entries.iter().map(|e| e.complete.display().to_string()).collect(),
                });
            }
            let p = read_cloud(&m.resolve(target))?;
            let refs = entries[..top_n]
                .iter()
                .map(|e| {
                    Ok(RefSample::new(
                        &read_cloud(&m.resolve(&e.partial))?,
                        &read_cloud(&m.resolve(&e.complete))?,
                        &read_cloud(&m.resolve(&e.mask))?,
                    ))
                })
                .collect::<Result<Vec<_>>>()?;
            items.push(TrainItem::new(target.display().to_string(), &p, refs));
        }
        if items.is_empty() {
            return Err(Error::invalid("manifest lists no targets"));
        }
        Ok(TrainData { items })
    }

    fn check(&self, cfg: &TrainConfig) -> Result<()> {
        if self.items.is_empty() {
            return Err(Error::invalid("no training targets"));
        }
        for it in &self.items {
            if it.refs.is_empty() {
                return Err(Error::invalid(format!("target {} has no references", it.id)));
            }
            let bad = it.partial.len() != cfg.partial_size
                || it.refs.iter().any(|r| {
                    r.partial.len() != cfg.partial_size
                        || r.mask.len() != cfg.partial_size
                        || r.complete.len() != cfg.complete_size
                });
            if bad {
                return Err(Error::invalid(format!(
                    "target {}: point counts do not match partial_size {} / complete_size {}",
                    it.id, cfg.partial_size, cfg.complete_size
                )));
            }
        }
        Ok(())
    }
}

/// One batch entry: the target, the reference drawn for it, and the seed of
/// its training-time degradation.
#[derive(Debug, Clone, Copy)]
pub struct BatchItem<'a> {
    pub target: &'a TrainItem,
    pub reference: &'a RefSample,
    pub deg_seed: u64,
}

/// Nodes of the generator forward pass.
#[derive(Debug, Clone)]
pub struct GeneratorPass {
    pub parts: LossNodes,
    /// `z_{c_y}`, `B x latent`.
    pub z_real: Option<NodeId>,
    /// Fused target features, `B x latent`.
    pub z_fake: Option<NodeId>,
    /// Completed target clouds.
    pub fake_clouds: Vec<NodeId>,
    /// Reference complete clouds.
    pub real_clouds: Vec<NodeId>,
}

fn mean_of(g: &mut Graph, xs: &[NodeId]) -> Result<Option<NodeId>> {
    let Some(&first) = xs.first() else {
        return Ok(None);
    };
    let mut acc = first;
    for &x in &xs[1..] {
        acc = g.add(acc, x)?;
    }
    Ok(Some(g.scale(acc, 1.0 / xs.len() as f64)?))
}

/// Builds both branches and the non-adversarial losses for a batch.
/// `target_branch = false` leaves the target branch out entirely.
pub fn forward_generator(
    model: &Model,
    cfg: &TrainConfig,
    g: &mut Graph,
    s: &ParamStore,
    batch: &[BatchItem],
    target_branch: bool,
) -> Result<GeneratorPass> {
    let px: Vec<NodeId> = batch.iter().map(|b| g.constant(cloud_tensor(&b.target.partial))).collect();
    let cy: Vec<NodeId> = batch
        .iter()
        .map(|b| g.constant(cloud_tensor(&b.reference.complete)))
        .collect();
    if cfg.only_gan {
        let zpx = model.encode_batch(g, s, EncoderKind::Partial, Branch::Target, &px)?;
        let dec = model.decode(g, s, DecoderHead::Main, Branch::Target, zpx)?;
        let fake = (0..batch.len())
            .map(|i| model.cloud_of(g, dec, i))
            .collect::<Result<Vec<_>>>()?;
        return Ok(GeneratorPass {
            parts: LossNodes::default(),
            z_real: None,
            z_fake: None,
            fake_clouds: fake,
            real_clouds: cy,
        });
    }
    let py: Vec<NodeId> = batch
        .iter()
        .map(|b| g.constant(cloud_tensor(&b.reference.partial)))
        .collect();
    let my: Vec<NodeId> = batch.iter().map(|b| g.constant(cloud_tensor(&b.reference.mask))).collect();

    let zpy = model.encode_batch(g, s, EncoderKind::Partial, Branch::Reference, &py)?;
    let zmy = model.encode_batch(g, s, EncoderKind::Mask, Branch::Reference, &my)?;
    let zcy = model.encode_batch(g, s, EncoderKind::Complete, Branch::Reference, &cy)?;
    let zcy_hat = model.lsfm(g, s, Branch::Reference, zpy, zmy)?;
    let dec_ref = model.decode(g, s, DecoderHead::Main, Branch::Reference, zcy_hat)?;
    let dec_aux = model.decode(g, s, DecoderHead::Aux, Branch::Reference, zcy_hat)?;
    let (mut ref_cd, mut aux_cd) = (Vec::new(), Vec::new());
    for (i, &c) in cy.iter().enumerate() {
        let out = model.cloud_of(g, dec_ref, i)?;
        ref_cd.push(cd_loss(g, out, c)?);
        let out = model.cloud_of(g, dec_aux, i)?;
        aux_cd.push(cd_loss(g, out, c)?);
    }
    let wass = wasserstein_loss(g, zcy_hat, zcy)?;
    let mut parts = LossNodes {
        cd_ref: mean_of(g, &ref_cd)?,
        cd_aux_ref: mean_of(g, &aux_cd)?,
        wasserstein: Some(wass),
        ..LossNodes::default()
    };
    let mut pass = GeneratorPass {
        parts,
        z_real: Some(zcy),
        z_fake: None,
        fake_clouds: Vec::new(),
        real_clouds: cy,
    };
    if !target_branch {
        return Ok(pass);
    }

    let zpx = model.encode_batch(g, s, EncoderKind::Partial, Branch::Target, &px)?;
    let zcx_hat = model.lsfm(g, s, Branch::Target, zpx, zmy)?;
    let dec_tar = model.decode(g, s, DecoderHead::Main, Branch::Target, zcx_hat)?;
    let dec_p = model.decode(g, s, DecoderHead::Main, Branch::Target, zpx)?;
    crate::losses::check_magnitude(g.value(dec_tar))?;
    let (mut tar_cd, mut p_cd, mut fakes) = (Vec::new(), Vec::new(), Vec::new());
    for (i, (b, &x)) in batch.iter().zip(&px).enumerate() {
        let out = model.cloud_of(g, dec_tar, i)?;
        let pts = PointCloud::from_flat(g.value(out).data())?;
        let mut rng = ChaCha8Rng::seed_from_u64(b.deg_seed);
        let idx = degraded_indices(&b.target.partial, &pts, cfg.degrade_k_train, cfg.partial_size, &mut rng)?;
        let degraded = g.gather_rows(out, &idx)?;
        tar_cd.push(cd_loss(g, degraded, x)?);
        fakes.push(out);
        let rec = model.cloud_of(g, dec_p, i)?;
        p_cd.push(cd_loss(g, rec, x)?);
    }
    parts = pass.parts;
    parts.cd_tar = mean_of(g, &tar_cd)?;
    parts.cd_aux_tar = mean_of(g, &p_cd)?;
    pass.parts = parts;
    pass.z_fake = Some(zcx_hat);
    pass.fake_clouds = fakes;
    Ok(pass)
}

/// Discriminator scores on real and fake data as `(latent, cloud)` score pairs.
fn discriminator_scores(
    model: &Model,
    g: &mut Graph,
    s: &ParamStore,
    z: Option<(NodeId, NodeId)>,
    clouds: (&[NodeId], &[NodeId]),
) -> Result<Vec<(NodeId, NodeId)>> {
    let mut out = Vec::new();
    if let Some((zr, zf)) = z {
        out.push((model.discriminate_latent(g, s, zr)?, model.discriminate_latent(g, s, zf)?));
    }
    let score = |g: &mut Graph, cs: &[NodeId]| -> Result<NodeId> {
        let v = cs
            .iter()
            .map(|&c| model.discriminate_cloud(g, s, c))
            .collect::<Result<Vec<_>>>()?;
        g.concat_rows(&v)
    };
    let real = score(g, clouds.0)?;
    let fake = score(g, clouds.1)?;
    out.push((real, fake));
    Ok(out)
}

fn is_disc(name: &str) -> bool {
    name.starts_with("disc_")
}

/// Live training state.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub config: TrainConfig,
    pub model: Model,
    pub params: ParamStore,
    /// Steps already taken.
    pub step: u64,
    pub steps_per_epoch: u64,
    pub total_steps: u64,
    optimizer: OptimizerConfig,
}

impl Trainer {
    pub fn new(config: &TrainConfig, n_targets: usize) -> Result<Self> {
        let opts = ModelOptions {
            no_share: config.no_share,
            discriminators: config.mode.adversarial(),
        };
        let params = init_params(&config.arch, &opts, config.seed)?;
        Self::with_params(config, n_targets, params, 0)
    }

    fn with_params(config: &TrainConfig, n_targets: usize, params: ParamStore, step: u64) -> Result<Self> {
        config.validate()?;
        if n_targets == 0 {
            return Err(Error::invalid("no training targets"));
        }
        let steps_per_epoch = n_targets.div_ceil(config.batch_size) as u64;
        let mut total_steps = steps_per_epoch * config.epochs as u64;
        if config.max_steps > 0 {
            total_steps = total_steps.min(config.max_steps);
        }
        let optimizer = OptimizerConfig {
            total_steps,
            ..config.optimizer.clone()
        };
        optimizer.validate()?;
        Ok(Trainer {
            config: config.clone(),
            model: Model::new(config.arch.clone(), config.no_share)?,
            params,
            step,
            steps_per_epoch,
            total_steps,
            optimizer,
        })
    }

    pub fn from_checkpoint(ck: &Checkpoint, n_targets: usize) -> Result<Self> {
        let config = TrainConfig::parse_text(&ck.config_text)?;
        check_params(&config, &ck.params)?;
        Self::with_params(&config, n_targets, ck.params.clone(), ck.step)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            step: self.step,
            params: self.params.clone(),
            config_text: self.config.to_text(),
        }
    }

    pub fn lr_at(&self, step: u64) -> f64 {
        self.optimizer.lr_at(step)
    }

    /// Target indices of the batch taken at `step`; epochs are shuffled independently.
    pub fn batch_indices(&self, step: u64, n_targets: usize) -> Vec<usize> {
        let epoch = step / self.steps_per_epoch;
        let b = (step % self.steps_per_epoch) as usize;
        let mut order: Vec<usize> = (0..n_targets).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.config.seed, &[TAG_EPOCH, epoch]));
        order.shuffle(&mut rng);
        let lo = b * self.config.batch_size;
        order[lo..(lo + self.config.batch_size).min(n_targets)].to_vec()
    }

    pub fn assemble<'a>(&self, data: &'a TrainData, step: u64) -> Result<Vec<BatchItem<'a>>> {
        self.batch_indices(step, data.items.len())
            .into_iter()
            .enumerate()
            .map(|(j, t)| {
                let item = &data.items[t];
                let reference = if self.config.fixed_ref {
                    &item.refs[0]
                } else {
                    let mut rng =
                        ChaCha8Rng::seed_from_u64(derive_seed(self.config.seed, &[TAG_REF, step, j as u64]));
                    select_training_pair(&item.refs, &mut rng)?
                };
                Ok(BatchItem {
                    target: item,
                    reference,
                    deg_seed: derive_seed(self.config.seed, &[TAG_DEG, step, j as u64]),
                })
            })
            .collect()
    }

    /// Runs one optimization step (discriminator first in adversarial modes).
    pub fn train_step(&mut self, data: &TrainData) -> Result<LossBreakdown> {
        data.check(&self.config)?;
        let step = self.step;
        let batch = self.assemble(data, step)?;
        let ids = || batch.iter().map(|b| b.target.id.as_str()).collect::<Vec<_>>().join(", ");
        let nonfinite = |what: &str| Error::NonFinite(format!("step {step}: {what} for batch [{}]", ids()));
        let adversarial = self.config.mode.adversarial();

        self.params.zero_grad();
        let mut g = Graph::new();
        let mut pass = forward_generator(&self.model, &self.config, &mut g, &self.params, &batch, true)
            .map_err(|e| match e {
                Error::NonFinite(m) => nonfinite(&m),
                other => other,
            })?;
        let mut out = LossBreakdown::default();

        if adversarial {
            let z = match (pass.z_real, pass.z_fake) {
                (Some(r), Some(f)) => Some((g.value(r).clone(), g.value(f).clone())),
                _ => None,
            };
            let real: Vec<_> = pass.real_clouds.iter().map(|&c| g.value(c).clone()).collect();
            let fake: Vec<_> = pass.fake_clouds.iter().map(|&c| g.value(c).clone()).collect();
            let mut dg = Graph::new();
            let z = z.map(|(r, f)| (dg.constant(r), dg.constant(f)));
            let real: Vec<_> = real.into_iter().map(|t| dg.constant(t)).collect();
            let fake: Vec<_> = fake.into_iter().map(|t| dg.constant(t)).collect();
            let scores = discriminator_scores(&self.model, &mut dg, &self.params, z, (&real, &fake))?;
            let mut disc_terms = Vec::new();
            for (r, f) in scores {
                disc_terms.push(adversarial_losses(&mut dg, r, f)?.1);
            }
            let disc = mean_sum(&mut dg, &disc_terms)?;
            out.adv_disc = dg.value(disc).item();
            let grads = dg.backward(disc).map_err(|_| nonfinite("non-finite discriminator loss"))?;
            self.params.accumulate(&grads);
            let touched = dg.touched_params().clone();
            drop(dg);
            adamw_step(&mut self.params, &self.optimizer, step, |n| touched.contains(n));
            self.params.zero_grad();

            if pass.fake_clouds.is_empty() {
                return Err(Error::invalid("adversarial step without completed clouds"));
            }
            let z = match (pass.z_real, pass.z_fake) {
                (Some(r), Some(f)) => {
                    let r = g.constant(g.value(r).clone());
                    Some((r, f))
                }
                _ => None,
            };
            let real: Vec<_> = pass.real_clouds.clone();
            let scores = discriminator_scores(&self.model, &mut g, &self.params, z, (&real, &pass.fake_clouds))?;
            let mut gen_terms = Vec::new();
            for (r, f) in scores {
                gen_terms.push(adversarial_losses(&mut g, r, f)?.0);
            }
            pass.parts.adv_gen = Some(mean_sum(&mut g, &gen_terms)?);
        }

        let total = total_loss(&mut g, &pass.parts, &self.config.weights)?;
        let val = |n: Option<NodeId>| n.map_or(0.0, |n| g.value(n).item());
        out.cd_ref = val(pass.parts.cd_ref);
        out.cd_aux_ref = val(pass.parts.cd_aux_ref);
        out.cd_tar = val(pass.parts.cd_tar);
        out.cd_aux_tar = val(pass.parts.cd_aux_tar);
        out.wasserstein = val(pass.parts.wasserstein);
        out.adv_gen = val(pass.parts.adv_gen);
        out.total = g.value(total).item();
        let grads = g.backward(total).map_err(|_| nonfinite("non-finite loss"))?;
        self.params.accumulate(&grads);
        let touched: BTreeSet<String> = g.touched_params().clone();
        drop(g);
        adamw_step(&mut self.params, &self.optimizer, step, |n| touched.contains(n) && !is_disc(n));
        if self.params.iter().any(|p| !p.value().all_finite()) {
            return Err(nonfinite("parameters became non-finite"));
        }
        self.step += 1;
        Ok(out)
    }
}

/// Sum of the terms (a single term is returned as is).
fn mean_sum(g: &mut Graph, terms: &[NodeId]) -> Result<NodeId> {
    let mut acc = *terms.first().ok_or_else(|| Error::invalid("no adversarial terms"))?;
    for &t in &terms[1..] {
        acc = g.add(acc, t)?;
    }
    Ok(acc)
}

/// Checks that the stored parameters are exactly those the configured architecture needs.
pub fn check_params(cfg: &TrainConfig, params: &ParamStore) -> Result<()> {
    let opts = ModelOptions {
        no_share: cfg.no_share,
        discriminators: cfg.mode.adversarial(),
    };
    let layers = cfg.arch.layers(&opts);
    if params.len() != 2 * layers.len() {
        return Err(Error::Version(format!(
            "checkpoint has {} parameter arrays, the {} architecture needs {}",
            params.len(),
            cfg.arch_name,
            2 * layers.len()
        )));
    }
    for (name, fan_in, fan_out) in layers {
        for (suffix, shape) in [(".w", [fan_in, fan_out]), (".b", [1, fan_out])] {
            let full = format!("{name}{suffix}");
            match params.get(&full) {
                Some(p) if p.value().shape() == shape => {}
                Some(p) => {
                    return Err(Error::Version(format!(
                        "parameter {full} has shape {:?}, architecture expects {shape:?}",
                        p.value().shape()
                    )))
                }
                None => return Err(Error::Version(format!("checkpoint lacks parameter {full}"))),
            }
        }
    }
    Ok(())
}

pub fn log_line(step: u64, b: &LossBreakdown, lr: f64) -> String {
    format!(
        "{step}\t{:.16e}\t{:.16e}\t{:.16e}\t{:.16e}\t{:.16e}\t{:.16e}\t{:.16e}\t{:.16e}\t{:.16e}",
        b.cd_ref, b.cd_aux_ref, b.cd_tar, b.cd_aux_tar, b.wasserstein, b.adv_gen, b.adv_disc, b.total, lr
    )
}

/// Parses a training log back into `(step, breakdown, lr)` rows.
pub fn parse_log(text: &str) -> Result<Vec<(u64, LossBreakdown, f64)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let f: Vec<&str> = line.split('\t').collect();
        let bad = || Error::Parse {
            path: PathBuf::from(LOG_FILE),
            line: i + 1,
            msg: "malformed log row".into(),
        };
        if f.len() != 10 {
            return Err(bad());
        }
        let v: Vec<f64> = f[1..].iter().map(|s| s.parse().map_err(|_| bad())).collect::<Result<_>>()?;
        let b = LossBreakdown {
            cd_ref: v[0],
            cd_aux_ref: v[1],
            cd_tar: v[2],
            cd_aux_tar: v[3],
            wasserstein: v[4],
            adv_gen: v[5],
            adv_disc: v[6],
            total: v[7],
        };
        out.push((f[0].parse().map_err(|_| bad())?, b, v[8]));
    }
    Ok(out)
}

/// Summary of a finished run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub rows: Vec<(u64, LossBreakdown, f64)>,
    pub final_checkpoint: PathBuf,
    pub epoch_checkpoints: Vec<PathBuf>,
}

pub fn epoch_checkpoint_name(epoch: u64) -> String {
    format!("epoch_{epoch:04}.rfck")
}

/// Runs (or resumes) training, writing the log, one checkpoint per epoch
/// and a final checkpoint into `out_dir`. `keep` bounds how many epoch
/// checkpoints are retained (0 keeps all).
pub fn train(
    cfg: &TrainConfig,
    data: &TrainData,
    out_dir: &Path,
    resume: Option<&Path>,
    keep: usize,
) -> Result<TrainOutcome> {
    data.check(cfg)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let n = data.items.len();
    let mut trainer = match resume {
        Some(path) => {
            let ck = load_checkpoint(path)?;
            if ck.config_text != cfg.to_text() {
                return Err(Error::Config(format!(
                    "{} was written with a different configuration",
                    path.display()
                )));
            }
            Trainer::from_checkpoint(&ck, n)?
        }
        None => Trainer::new(cfg, n)?,
    };
    let log_path = out_dir.join(LOG_FILE);
    let mut rows: Vec<(u64, LossBreakdown, f64)> = Vec::new();
    if resume.is_some() && log_path.is_file() {
        let text = std::fs::read_to_string(&log_path).map_err(|e| Error::io(&log_path, e))?;
        rows = parse_log(&text)?
            .into_iter()
            .filter(|r| r.0 < trainer.step)
            .collect();
    }
    let write_log = |rows: &[(u64, LossBreakdown, f64)]| -> Result<()> {
        let mut s = String::with_capacity(rows.len() * 200);
        s.push_str(LOG_HEADER);
        s.push('\n');
        for (step, b, lr) in rows {
            writeln!(s, "{}", log_line(*step, b, *lr)).expect("writing to a String");
        }
        write_atomic(&log_path, s.as_bytes())
    };
    let mut epoch_checkpoints = Vec::new();
    while trainer.step < trainer.total_steps {
        let step = trainer.step;
        let lr = trainer.lr_at(step);
        let b = trainer.train_step(data)?;
        rows.push((step, b, lr));
        if trainer.step % trainer.steps_per_epoch == 0 {
            let path = out_dir.join(epoch_checkpoint_name(trainer.step / trainer.steps_per_epoch));
            save_checkpoint(&path, &trainer.checkpoint())?;
            write_log(&rows)?;
            epoch_checkpoints.push(path);
            if keep > 0 && epoch_checkpoints.len() > keep {
                let old = epoch_checkpoints.remove(0);
                std::fs::remove_file(&old).map_err(|e| Error::io(&old, e))?;
            }
        }
    }
    let final_checkpoint = out_dir.join(FINAL_CHECKPOINT);
    save_checkpoint(&final_checkpoint, &trainer.checkpoint())?;
    write_log(&rows)?;
    Ok(TrainOutcome {
        rows,
        final_checkpoint,
        epoch_checkpoints,
    })
}

/// Completes `partial` with the mask of the supplied reference pair; the
/// result is returned in the input's own coordinate frame.
pub fn infer(ck: &Checkpoint, partial: &PointCloud, ref_partial: &PointCloud, ref_mask: &PointCloud) -> Result<PointCloud> {
    let cfg = TrainConfig::parse_text(&ck.config_text)?;
    check_params(&cfg, &ck.params)?;
    let model = Model::new(cfg.arch.clone(), cfg.no_share)?;
    let (p, frame) = normalize_unit_sphere(partial);
    let reference = RefSample::new(ref_partial, ref_partial, ref_mask);
    let out = model.complete_cloud(&ck.params, &p, &reference.mask)?;
    Ok(frame.denormalize(&out))
}

/// A step-0 checkpoint for `cfg`, the untrained baseline.
pub fn initial_checkpoint(cfg: &TrainConfig) -> Result<Checkpoint> {
    Ok(Trainer::new(cfg, 1)?.checkpoint())
}

#[cfg(test)]
mod tests;
