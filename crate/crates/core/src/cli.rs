//! Command-line front end. Exit codes: 0 success, 1 user error, 2 internal
//! error or failed verification.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};

use crate::corpus::{generate_corpus, is_cloud_file, load_dir, read_cloud, write_cloud, CloudFormat, CorpusOptions, ShapeClass};
use crate::error::{Error, Result};
use crate::io_util::write_atomic;
use crate::metrics::{chamfer, f1, mmd_per_item, table_scale, ucd, F1_EPSILON};
use crate::refdata::{
    build_reference_pairs, load_manifest, save_manifest, ClassScope, ManifestEntry, ReferenceManifest, RetrievalOptions,
};
use crate::trainer::{load_checkpoint, infer, train, Mode, TrainConfig, TrainData};
use crate::verify::{all_passed, format_table, run_suite, Suite};

pub const THREADS_ENV: &str = "REFCOMP_THREADS";

#[derive(Debug, Parser)]
#[command(name = "refcomp", version, about = "Reference-guided unpaired point cloud completion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a procedural shape corpus with an index.tsv
    GenCorpus(GenCorpusArgs),
    /// Retrieve and degrade the top-N reference pairs for every target
    BuildRefs(BuildRefsArgs),
    /// Train a completion model from a reference manifest
    Train(TrainArgs),
    /// Complete a partial cloud (or a directory of them) with a trained checkpoint
    Complete(CompleteArgs),
    /// Evaluate predictions against ground truth
    Eval(EvalArgs),
    /// Run the built-in verification suites
    Verify(VerifyArgs),
}

#[derive(Debug, Args)]
struct GenCorpusArgs {
    /// Comma-separated classes: plane-slab, box, cylinder, torus
    #[arg(long, default_value = "plane-slab,box,cylinder,torus")]
    classes: String,
    /// Shapes per class
    #[arg(long, default_value_t = 50)]
    per_class: usize,
    /// Points per shape [full scale: 2048]
    #[arg(long, default_value_t = 2048)]
    points: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
    /// Keep only this many points seen from a random viewpoint (makes partial targets) [full-scale partial size: 1024]
    #[arg(long)]
    crop: Option<usize>,
    /// File format: pcb (binary f32) or xyz (ASCII)
    #[arg(long, default_value = "pcb")]
    format: String,
}

#[derive(Debug, Args)]
struct BuildRefsArgs {
    /// Directory of target partial clouds
    #[arg(long)]
    targets: PathBuf,
    /// Directory of complete corpus clouds
    #[arg(long)]
    corpus: PathBuf,
    /// Neighbours kept per template point [full scale: 15]
    #[arg(long, default_value_t = 15)]
    k: usize,
    /// References retained per target [full scale: 3]
    #[arg(long, default_value_t = 3)]
    top_n: usize,
    /// Minimum raw Chamfer distance of a reference to its template [full scale: 1e-4, i.e. 1.0 at the 1e4 table scale]
    #[arg(long, default_value_t = 1e-4)]
    min_cd: f64,
    /// Candidate scope: same-class or all
    #[arg(long, default_value = "same-class")]
    scope: String,
    /// Size of degraded references and masks [full scale: 1024]
    #[arg(long, default_value_t = 1024)]
    partial_points: usize,
    /// Manifest path; pair files go to <manifest stem>_pairs/ next to it
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Config file of `key = value` lines (keys listed below)
    #[arg(long)]
    config: Option<PathBuf>,
    /// plain, wdis or unified
    #[arg(long)]
    mode: Option<String>,
    /// Output directory for checkpoints and train_log.tsv
    #[arg(long)]
    out: PathBuf,
    /// Reference manifest (overrides the config's `manifest` key)
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Always use the rank-1 reference
    #[arg(long)]
    fixed_ref: bool,
    /// Adversarial terms only
    #[arg(long)]
    only_gan: bool,
    /// Separate target-branch copies of E_p, LSFM and D_c
    #[arg(long)]
    no_share: bool,
    /// Override any config key, e.g. --set max_steps=100
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Resume from a checkpoint written by the same configuration
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Retain only the newest N epoch checkpoints (0 keeps all)
    #[arg(long, default_value_t = 0)]
    keep_checkpoints: usize,
}

#[derive(Debug, Args)]
struct CompleteArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// A partial cloud file or a directory of them
    #[arg(long)]
    input: PathBuf,
    /// Reference manifest listing the input(s); the rank-1 pair is used
    #[arg(long)]
    refs: PathBuf,
    /// Output cloud file (or directory when --input is a directory)
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Directory of predicted clouds
    #[arg(long)]
    pred: PathBuf,
    /// Directory of ground-truth clouds (paired by file stem)
    #[arg(long)]
    gt: PathBuf,
    /// Partial inputs for ucd (defaults to --gt)
    #[arg(long)]
    partial: Option<PathBuf>,
    /// Comma-separated subset of cd, ucd, f1, mmd
    #[arg(long, default_value = "cd,ucd,f1,mmd")]
    metrics: String,
    /// F1 distance threshold [full scale: 0.03]
    #[arg(long, default_value_t = F1_EPSILON)]
    epsilon: f64,
    /// Report TSV
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    /// gradcheck, oracle or invariants
    #[arg(long)]
    suite: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn config_reference() -> String {
    let mut s = String::from("Config keys (desk default / full-scale default):\n");
    for (k, desk, full) in TrainConfig::KEYS {
        let show = |v: &str| if v.is_empty() { "(none)".to_string() } else { v.to_string() };
        writeln!(s, "  {k:<16} {:<8} / {}", show(desk), show(full)).expect("writing to a String");
    }
    s
}

fn command() -> clap::Command {
    Cli::command().mut_subcommand("train", |c| c.after_help(config_reference()))
}

/// Exit code for an error: 1 for problems with inputs, 2 for internal failures.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Shape { .. } | Error::NonFinite(_) => 2,
        _ => 1,
    }
}

fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::invalid(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?;
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

/// Parses `args` (including the program name), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return 1;
        }
    };
    let result = configure_threads().and_then(|()| dispatch(cli.command));
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(cmd: Command) -> Result<i32> {
    match cmd {
        Command::GenCorpus(a) => gen_corpus(a),
        Command::BuildRefs(a) => build_refs(a),
        Command::Train(a) => train_cmd(a),
        Command::Complete(a) => complete(a),
        Command::Eval(a) => eval(a),
        Command::Verify(a) => verify(a),
    }
}

fn parse_format(s: &str) -> Result<CloudFormat> {
    match s {
        "pcb" | "pcb-binary" => Ok(CloudFormat::PcbBinary),
        "xyz" | "xyz-ascii" => Ok(CloudFormat::XyzAscii),
        other => Err(Error::invalid(format!("unknown format {other:?} (expected pcb or xyz)"))),
    }
}

fn gen_corpus(a: GenCorpusArgs) -> Result<i32> {
    let classes = a
        .classes
        .split(',')
        .map(|c| c.trim().parse::<ShapeClass>())
        .collect::<Result<Vec<_>>>()?;
    let opts = CorpusOptions {
        classes,
        per_class: a.per_class,
        n_points: a.points,
        seed: a.seed,
        format: parse_format(&a.format)?,
        crop: a.crop,
    };
    let entries = generate_corpus(&opts, &a.out)?;
    println!("wrote {} clouds to {}", entries.len(), a.out.display());
    Ok(0)
}

/// `path` relative to `base` when both can be resolved, else `path` as given.
fn relative_to(path: &Path, base: &Path) -> PathBuf {
    match (std::fs::canonicalize(path), std::fs::canonicalize(base)) {
        (Ok(p), Ok(b)) => pathdiff::diff_paths(&p, &b).unwrap_or(p),
        _ => path.to_path_buf(),
    }
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn build_refs(a: BuildRefsArgs) -> Result<i32> {
    let scope: ClassScope = a.scope.parse()?;
    let targets = load_dir(&a.targets)?;
    let corpus = load_dir(&a.corpus)?;
    let complete_size = corpus[0].cloud.len();
    let opts = RetrievalOptions {
        k: a.k,
        top_n: a.top_n,
        min_cd: a.min_cd,
        scope,
        partial_size: a.partial_points,
        complete_size,
        seed: a.seed,
    };
    let clouds: Vec<_> = corpus.iter().map(|c| c.cloud.clone()).collect();
    let mut results = Vec::with_capacity(targets.len());
    let mut failures = Vec::new();
    for t in &targets {
        match build_reference_pairs(&t.cloud, &clouds, &opts) {
            Ok(pairs) => results.push((t, pairs)),
            Err(e @ Error::InsufficientReferences { .. }) => failures.push(e.to_string()),
            Err(e) => return Err(e),
        }
    }
    if !failures.is_empty() {
        return Err(Error::invalid(format!(
            "{} target(s) lack references:\n  {}",
            failures.len(),
            failures.join("\n  ")
        )));
    }

    let base = a.out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(base).map_err(|e| Error::io(base, e))?;
    let pair_dir_name = format!("{}_pairs", stem(&a.out));
    let pair_dir = base.join(&pair_dir_name);
    std::fs::create_dir_all(&pair_dir).map_err(|e| Error::io(&pair_dir, e))?;
    let by_source: BTreeMap<String, &Path> = corpus
        .iter()
        .map(|c| (c.cloud.source_id.clone().unwrap_or_default(), c.path.as_path()))
        .collect();
    let mut manifest = ReferenceManifest {
        base_dir: base.to_path_buf(),
        targets: Vec::new(),
    };
    for (t, pairs) in results {
        let ts = stem(&t.path);
        let mut entries = Vec::new();
        for (rank, p) in pairs.iter().enumerate() {
            let partial = PathBuf::from(&pair_dir_name).join(format!("{ts}_r{}_partial.pcb", rank + 1));
            let mask = PathBuf::from(&pair_dir_name).join(format!("{ts}_r{}_mask.pcb", rank + 1));
            write_cloud(&base.join(&partial), &p.partial_ref)?;
            write_cloud(&base.join(&mask), &p.mask)?;
            let src = by_source
                .get(&p.source_id)
                .ok_or_else(|| Error::invalid(format!("reference {} has no source file", p.source_id)))?;
            entries.push(ManifestEntry {
                rank: rank + 1,
                partial,
                complete: relative_to(src, base),
                mask,
                cd: p.cd_to_template,
            });
        }
        manifest.targets.push((relative_to(&t.path, base), entries));
    }
    save_manifest(&a.out, &manifest)?;
    println!(
        "wrote {} rows for {} targets to {}",
        manifest.row_count(),
        manifest.targets.len(),
        a.out.display()
    );
    Ok(0)
}

fn train_cmd(a: TrainArgs) -> Result<i32> {
    let mut cfg = match &a.config {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    if let Some(m) = &a.mode {
        cfg.mode = m.parse::<Mode>()?;
    }
    cfg.fixed_ref |= a.fixed_ref;
    cfg.only_gan |= a.only_gan;
    cfg.no_share |= a.no_share;
    for kv in &a.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(m) = &a.manifest {
        cfg.manifest = Some(m.clone());
    }
    cfg.validate()?;
    let manifest_path = cfg
        .manifest
        .clone()
        .ok_or_else(|| Error::Config("no manifest given (use --manifest or the manifest key)".into()))?;
    let manifest = load_manifest(&manifest_path)?;
    let data = TrainData::from_manifest(&manifest, cfg.top_n_refs)?;
    let out = train(&cfg, &data, &a.out, a.resume.as_deref(), a.keep_checkpoints)?;
    let (first, last) = (out.rows.first(), out.rows.last());
    if let (Some(f), Some(l)) = (first, last) {
        println!(
            "{} mode: steps {}..{} total loss {:.6e} -> {:.6e}",
            cfg.mode, f.0, l.0, f.1.total, l.1.total
        );
    }
    println!("final checkpoint {}", out.final_checkpoint.display());
    Ok(0)
}

fn rank_one(manifest: &ReferenceManifest, input: &Path) -> Result<(PathBuf, PathBuf)> {
    let (_, entries) = manifest
        .find_target(input)
        .ok_or_else(|| Error::invalid(format!("{} is not listed in the reference manifest", input.display())))?;
    let e = entries
        .iter()
        .min_by_key(|e| e.rank)
        .ok_or_else(|| Error::invalid(format!("{} has no references", input.display())))?;
    Ok((manifest.resolve(&e.partial), manifest.resolve(&e.mask)))
}

fn cloud_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && is_cloud_file(p))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::invalid(format!("{} contains no point clouds", dir.display())));
    }
    Ok(files)
}

fn complete(a: CompleteArgs) -> Result<i32> {
    let ck = load_checkpoint(&a.ckpt)?;
    let manifest = load_manifest(&a.refs)?;
    let jobs: Vec<(PathBuf, PathBuf)> = if a.input.is_dir() {
        cloud_files(&a.input)?
            .into_iter()
            .map(|p| {
                let name = p.file_name().expect("listed file").to_owned();
                (p, a.out.join(name))
            })
            .collect()
    } else {
        vec![(a.input.clone(), a.out.clone())]
    };
    let mut plan = Vec::with_capacity(jobs.len());
    for (input, out) in jobs {
        let refs = rank_one(&manifest, &input)?;
        plan.push((input, out, refs));
    }
    if a.input.is_dir() {
        std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    }
    for (input, out, (rp, rm)) in &plan {
        let done = infer(&ck, &read_cloud(input)?, &read_cloud(rp)?, &read_cloud(rm)?)?;
        write_cloud(out, &done)?;
    }
    println!("completed {} cloud(s)", plan.len());
    Ok(0)
}

fn by_stem(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut m = BTreeMap::new();
    for p in cloud_files(dir)? {
        if let Some(prev) = m.insert(stem(&p), p.clone()) {
            return Err(Error::invalid(format!(
                "{} and {} share a name",
                prev.display(),
                p.display()
            )));
        }
    }
    Ok(m)
}

fn eval(a: EvalArgs) -> Result<i32> {
    let metrics: Vec<String> = a.metrics.split(',').map(|m| m.trim().to_string()).collect();
    for m in &metrics {
        if !["cd", "ucd", "f1", "mmd"].contains(&m.as_str()) {
            return Err(Error::invalid(format!("unknown metric {m:?} (expected cd, ucd, f1, mmd)")));
        }
    }
    if !(a.epsilon > 0.0) {
        return Err(Error::invalid("--epsilon must be positive"));
    }
    let preds = by_stem(&a.pred)?;
    let gts = by_stem(&a.gt)?;
    let partials = match &a.partial {
        Some(p) => by_stem(p)?,
        None => gts.clone(),
    };
    let load = |m: &BTreeMap<String, PathBuf>| -> Result<BTreeMap<String, crate::geom::PointCloud>> {
        m.iter().map(|(k, p)| Ok((k.clone(), read_cloud(p)?))).collect()
    };
    let pred_c = load(&preds)?;
    let gt_c = load(&gts)?;
    let needs_pairs = metrics.iter().any(|m| m != "mmd");
    if needs_pairs {
        let pool = if metrics.iter().any(|m| m == "ucd") { Some(&partials) } else { None };
        let missing: Vec<&str> = pred_c
            .keys()
            .filter(|k| {
                let need_gt = metrics.iter().any(|m| m == "cd" || m == "f1");
                (need_gt && !gts.contains_key(*k)) || pool.is_some_and(|p| !p.contains_key(*k))
            })
            .map(String::as_str)
            .collect();
        if !missing.is_empty() {
            return Err(Error::invalid(format!("no counterpart for predictions: {}", missing.join(", "))));
        }
    }
    let part_c = if metrics.iter().any(|m| m == "ucd") {
        if a.partial.is_some() { load(&partials)? } else { gt_c.clone() }
    } else {
        BTreeMap::new()
    };

    let mut report = String::from("metric\titem\traw\tscaled\n");
    let mut summary = String::new();
    for m in &metrics {
        let scale = table_scale(m);
        let per: Vec<(String, f64)> = match m.as_str() {
            "cd" => pred_c.iter().map(|(k, p)| (k.clone(), chamfer(p, &gt_c[k]))).collect(),
            "ucd" => pred_c.iter().map(|(k, p)| (k.clone(), ucd(&part_c[k], p))).collect(),
            "f1" => pred_c
                .iter()
                .map(|(k, p)| Ok((k.clone(), f1(p, &gt_c[k], a.epsilon)?.f1)))
                .collect::<Result<_>>()?,
            _ => {
                let ps: Vec<_> = pred_c.values().cloned().collect();
                let gs: Vec<_> = gt_c.values().cloned().collect();
                pred_c.keys().cloned().zip(mmd_per_item(&ps, &gs)?).collect()
            }
        };
        let mean = per.iter().map(|p| p.1).sum::<f64>() / per.len() as f64;
        for (k, v) in &per {
            writeln!(report, "{m}\t{k}\t{v:.16e}\t{:.16e}", v * scale).expect("writing to a String");
        }
        writeln!(report, "{m}\tmean\t{mean:.16e}\t{:.16e}", mean * scale).expect("writing to a String");
        writeln!(summary, "{m}\t{mean:.6e}\t{:.4}", mean * scale).expect("writing to a String");
    }
    write_atomic(&a.out, report.as_bytes())?;
    print!("{summary}");
    Ok(0)
}

fn verify(a: VerifyArgs) -> Result<i32> {
    let suite: Suite = a.suite.parse()?;
    let rows = run_suite(suite, a.seed)?;
    print!("{}", format_table(&rows));
    let passed = all_passed(&rows);
    println!(
        "{} suite: {}/{} checks passed",
        a.suite,
        rows.iter().filter(|r| r.passed).count(),
        rows.len()
    );
    Ok(if passed { 0 } else { 2 })
}
