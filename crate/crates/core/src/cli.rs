//! Command-line front end. Settings resolve as built-in defaults, then the
//! `--config` file, then explicit flags.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs::File;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::analyze::{self, KernelClass, Thresholds};
use crate::arch::{calibrate_width, DwPolicy, Layout, Model, ModelSpec, ParamReport, SpecOptions, Variant};
use crate::bench::bench;
use crate::checkpoint::Checkpoint;
use crate::config::KeyValues;
use crate::error::Error;
use crate::ops::Activation;
use crate::tensor::{Shape, Tensor};
use crate::train::{
    evaluate, load_cifar, synthetic_edges, synthetic_gaussian_blobs, train, Dataset, DatasetKind, EdgeParams,
    Normalization, SgdConfig, Split, TrainConfig,
};

#[derive(Parser, Debug)]
#[command(name = "vgnet", about = "Parameter-efficient CNNs with fixed depthwise kernels", arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default, Clone)]
struct Common {
    /// key=value settings file; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Extra setting as key=value (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Args, Debug, Default, Clone)]
struct ModelArgs {
    /// c, g, f1, f2, f3 or f4.
    #[arg(long)]
    variant: Option<String>,
    /// Scale widths to this many million learnable parameters.
    #[arg(long = "budget-mp")]
    budget_mp: Option<f64>,
    /// Add squeeze-and-excitation after each generating pointwise conv.
    #[arg(long)]
    se: bool,
    /// SiLU instead of ReLU.
    #[arg(long)]
    silu: bool,
    /// imagenet (224²), desk (32²) or micro (32²).
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    classes: Option<usize>,
    /// Replace every depthwise kernel: learnable, gaussian, identity, bank:ek4, bank:ek6_gk2.
    #[arg(long)]
    depthwise: Option<String>,
    /// Full depthwise and full pointwise in every block (latency control).
    #[arg(long = "no-identity-reuse")]
    no_identity_reuse: bool,
}

#[derive(Args, Debug, Default, Clone)]
struct DataArgs {
    /// edges, blobs or cifar.
    #[arg(long)]
    dataset: Option<String>,
    /// Directory with the CIFAR binary files.
    #[arg(long = "data-dir")]
    data_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model and write a checkpoint.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long = "batch-size")]
        batch_size: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        /// Checkpoint written after every epoch.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Training log file (line-delimited records).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a checkpoint.
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Report learnable and fixed parameter counts.
    CountParams {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelArgs,
        /// Print every tensor.
        #[arg(long)]
        table: bool,
    },
    /// Write kernel and feature-map grids as PGM images.
    Visualize {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Classify every depthwise kernel of a checkpoint.
    ClassifyKernels {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// CSV report path; weight histograms go next to it.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Score threshold for identity, low-pass and edge classes.
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Channel similarity between two layers' feature maps.
    FeatureSim {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Two layer names, comma separated; `name:in` selects a layer input.
        #[arg(long)]
        layers: Option<String>,
        #[arg(long)]
        samples: Option<usize>,
        /// CSV path for the full similarity matrix.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Forward-pass latency.
    Bench {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        batch: Option<usize>,
        #[arg(long)]
        warmup: Option<usize>,
        #[arg(long)]
        iters: Option<usize>,
        /// Also time the width-matched model without identity reuse.
        #[arg(long = "compare-no-reuse")]
        compare_no_reuse: bool,
    },
    /// Print (or write) the resolved model spec.
    ExportSpec {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Runtime(e)
    }
}

type CliResult<T = ()> = std::result::Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Resolved settings.
struct Settings(BTreeMap<String, String>);

impl Settings {
    fn resolve(defaults: &[(&str, &str)], common: &Common, flags: Vec<(&str, String)>) -> CliResult<Self> {
        let mut base = KeyValues::new();
        for (k, v) in defaults {
            base.push(*k, v);
        }
        let file = match &common.config {
            Some(p) => KeyValues::read(p).map_err(|e| match e {
                Error::Argument(m) => usage(format!("{}: {m}", p.display())),
                other => CliError::Runtime(other),
            })?,
            None => KeyValues::new(),
        };
        let mut cli = KeyValues::new();
        for (k, v) in flags {
            cli.push(k, v);
        }
        for kv in &common.set {
            let (k, v) = kv.split_once('=').ok_or_else(|| usage(format!("--set expects key=value, got {kv:?}")))?;
            cli.push(k.trim(), v.trim());
        }
        if let Some(t) = common.threads {
            cli.push("threads", t);
        }
        Ok(Settings(KeyValues::merged(&[&base, &file, &cli])))
    }

    /// Fills data settings the user left unset from the run that wrote the
    /// checkpoint, so evaluation sees the same distribution by default.
    fn inherit(&mut self, ckpt: &Checkpoint, explicit: &[String]) {
        const DATA_KEYS: &[&str] = &["dataset", "data_dir", "data_seed", "eval_size", "edge_contrast", "edge_noise"];
        for (k, v) in ckpt.provenance() {
            if DATA_KEYS.contains(&k.as_str()) && !explicit.contains(&k) {
                self.0.insert(k, v);
            }
        }
    }

    fn str(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str).filter(|v| !v.is_empty())
    }

    fn get<V: std::str::FromStr>(&self, key: &str) -> CliResult<Option<V>> {
        self.str(key)
            .map(|v| v.parse().map_err(|_| usage(format!("invalid value for {key}: {v:?}"))))
            .transpose()
    }

    fn need<V: std::str::FromStr>(&self, key: &str) -> CliResult<V> {
        self.get(key)?.ok_or_else(|| usage(format!("missing setting {key}")))
    }

    fn flag(&self, key: &str) -> CliResult<bool> {
        Ok(self.get(key)?.unwrap_or(false))
    }

    fn echo(&self) -> String {
        self.0.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(" ")
    }
}

/// Keys given on the command line or in the config file.
fn explicit_keys(common: &Common, flags: &[(&'static str, String)]) -> Vec<String> {
    let mut keys: Vec<String> = flags.iter().map(|(k, _)| k.to_string()).collect();
    let from_file = match &common.config {
        Some(p) => KeyValues::read(p).map(|kv| kv.entries().iter().map(|(k, _)| k.clone()).collect()).unwrap_or_default(),
        None => Vec::new(),
    };
    let set = common.set.iter().filter_map(|kv| kv.split_once('=').map(|(k, _)| k.trim().to_string()));
    keys.extend(from_file.into_iter().chain(set));
    keys
}

fn model_flags(m: &ModelArgs) -> Vec<(&'static str, String)> {
    let mut f = Vec::new();
    if let Some(v) = &m.variant {
        f.push(("variant", v.clone()));
    }
    if let Some(b) = m.budget_mp {
        f.push(("budget_mp", b.to_string()));
    }
    if m.se {
        f.push(("se", "true".into()));
    }
    if m.silu {
        f.push(("silu", "true".into()));
    }
    if let Some(p) = &m.preset {
        f.push(("preset", p.clone()));
    }
    if let Some(c) = m.classes {
        f.push(("classes", c.to_string()));
    }
    if let Some(d) = &m.depthwise {
        f.push(("depthwise", d.clone()));
    }
    if m.no_identity_reuse {
        f.push(("identity_reuse", "false".into()));
    }
    f
}

fn data_flags(d: &DataArgs) -> Vec<(&'static str, String)> {
    let mut f = Vec::new();
    if let Some(v) = &d.dataset {
        f.push(("dataset", v.clone()));
    }
    if let Some(p) = &d.data_dir {
        f.push(("data_dir", p.display().to_string()));
    }
    if let Some(s) = d.seed {
        f.push(("seed", s.to_string()));
    }
    f
}

fn opt_flag<V: ToString>(key: &'static str, v: &Option<V>) -> Vec<(&'static str, String)> {
    v.iter().map(|v| (key, v.to_string())).collect()
}

fn path_flag(key: &'static str, v: &Option<PathBuf>) -> Vec<(&'static str, String)> {
    v.iter().map(|p| (key, p.display().to_string())).collect()
}

const MODEL_DEFAULTS: &[(&str, &str)] = &[
    ("variant", "g"),
    ("preset", "imagenet"),
    ("se", "false"),
    ("silu", "false"),
    ("identity_reuse", "true"),
];

/// Builds the spec described by the settings. A width budget scales the
/// plain network; squeeze-and-excitation is added on top of those widths.
fn model_spec(s: &Settings) -> CliResult<(ModelSpec, String)> {
    let vname: String = s.need("variant")?;
    let variant = Variant::parse(&vname).ok_or_else(|| usage(format!("unknown variant {vname:?}")))?;
    let preset: String = s.need("preset")?;
    let (layout, classes, res) = match preset.as_str() {
        "imagenet" => (Layout::imagenet(), 1000, 224),
        "desk" => (Layout::desk(), 10, 32),
        "micro" => (Layout::micro(), 4, 32),
        other => return Err(usage(format!("unknown preset {other:?}"))),
    };
    let mut options = SpecOptions {
        activation: if s.flag("silu")? { Activation::Silu } else { Activation::Relu },
        num_classes: s.get("classes")?.unwrap_or(classes),
        input_resolution: s.get("resolution")?.unwrap_or(res),
        identity_reuse: s.flag("identity_reuse")?,
        ..SpecOptions::default()
    };
    if let Some(r) = s.get("se_reduction")? {
        options.se_reduction = r;
    }
    let mut spec = ModelSpec::from_layout(&layout, variant, options)?;
    if let Some(p) = s.str("depthwise") {
        spec = spec.with_all_depthwise(DwPolicy::parse(p).ok_or_else(|| usage(format!("unknown depthwise policy {p:?}")))?);
    }
    let mut label = format!("VGNet{}", variant.name().to_uppercase());
    if let Some(b) = s.get::<f64>("budget_mp")? {
        spec = calibrate_width(b * 1e6, &spec)?.spec;
        let _ = write!(label, "-{b:.1}MP");
    }
    if s.flag("se")? {
        let overrides = spec.clone();
        let mut opts = spec.options.clone();
        opts.use_se = true;
        spec = ModelSpec::from_layout(&Layout::from_spec(&spec)?, variant, opts)?;
        for (b, o) in spec.blocks.iter_mut().zip(&overrides.blocks) {
            b.dw_policy = o.dw_policy;
        }
        spec.validate()?;
        label.push_str("+SE");
    }
    if !spec.options.identity_reuse {
        label.push_str("(no-reuse)");
    }
    Ok((spec, label))
}

fn dataset(s: &Settings, spec: &ModelSpec, split: Split) -> CliResult<Dataset> {
    let name: String = s.need("dataset")?;
    let kind = DatasetKind::parse(&name).ok_or_else(|| usage(format!("unknown dataset {name:?}")))?;
    let res = spec.options.input_resolution;
    let seed = s.get::<u64>("data_seed")?.unwrap_or(1) + if split == Split::Test { 1_000_003 } else { 0 };
    let n = match split {
        Split::Train => s.get("train_size")?.unwrap_or(2048),
        Split::Test => s.get("eval_size")?.unwrap_or(512),
    };
    Ok(match kind {
        DatasetKind::SyntheticEdges => {
            let d = EdgeParams::default();
            let p = EdgeParams {
                resolution: res,
                contrast: s.get("edge_contrast")?.unwrap_or(d.contrast),
                noise: s.get("edge_noise")?.unwrap_or(d.noise),
                max_offset: d.max_offset,
            };
            synthetic_edges(n, p, seed)
        }
        DatasetKind::SyntheticBlobs => synthetic_gaussian_blobs(n, spec.options.num_classes, res, seed),
        DatasetKind::CifarBinary => {
            let dir: PathBuf = s.need("data_dir")?;
            let norm = if spec.options.num_classes == 100 {
                Normalization::CIFAR100
            } else {
                Normalization::CIFAR10
            };
            load_cifar(&dir, split, &norm)?
        }
    })
}

fn with_threads<R: Send>(s: &Settings, f: impl FnOnce() -> CliResult<R> + Send) -> CliResult<R> {
    match s.get::<usize>("threads")? {
        Some(0) => Err(usage("threads must be positive")),
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| usage(format!("thread pool: {e}")))?
            .install(f),
        None => f(),
    }
}

fn load_checkpoint(s: &Settings) -> CliResult<(Checkpoint, PathBuf)> {
    let path: PathBuf = s.need("checkpoint")?;
    Ok((Checkpoint::load(&path)?, path))
}

fn write_file(path: &Path, contents: &[u8]) -> CliResult {
    std::fs::write(path, contents).map_err(|e| CliError::Runtime(Error::io(path, e)))
}

fn cmd_train(s: &Settings) -> CliResult {
    let (spec, label) = model_spec(s)?;
    let seed: u64 = s.need("seed")?;
    let kind: String = s.need("dataset")?;
    let recipe = match s.str("recipe").unwrap_or("desk") {
        "desk" => TrainConfig::desk(),
        "full" => TrainConfig::full_scale(),
        other => return Err(usage(format!("unknown recipe {other:?} (desk or full)"))),
    };
    let synthetic = DatasetKind::parse(&kind) != Some(DatasetKind::CifarBinary);
    let config = TrainConfig {
        epochs: s.get("epochs")?.unwrap_or(recipe.epochs),
        batch_size: s.get("batch_size")?.unwrap_or(if synthetic { 32 } else { recipe.batch_size }),
        base_lr: s.get("lr")?.unwrap_or(recipe.base_lr),
        warmup_epochs: s.get("warmup_epochs")?.unwrap_or(recipe.warmup_epochs),
        sgd: SgdConfig {
            momentum: s.get("momentum")?.unwrap_or(0.9),
            weight_decay: s.get("weight_decay")?.unwrap_or(1e-4),
            honor_exemptions: true,
        },
        label_smoothing: s.get("label_smoothing")?.unwrap_or(0.1),
        augment: s.get("augment")?.unwrap_or(recipe.augment && !synthetic),
        crop_pad: 4,
        seed,
        checkpoint: s.get("checkpoint")?,
    };
    let train_set = dataset(s, &spec, Split::Train)?;
    let eval_set = dataset(s, &spec, Split::Test)?;
    let mut log: Option<File> = match s.get::<PathBuf>("out")? {
        Some(p) => Some(File::create(&p).map_err(|e| Error::io(&p, e))?),
        None => None,
    };
    let header = format!("# model={label} {}", s.echo());
    println!("{header}");
    if let Some(f) = log.as_mut() {
        let _ = writeln!(f, "{header}");
    }
    with_threads(s, || {
        let mut model = Model::build(&spec, seed)?;
        train(&mut model, &train_set, Some(&eval_set), &config, |r| {
            println!("{r}");
            if let Some(f) = log.as_mut() {
                let _ = writeln!(f, "{r}");
            }
        })?;
        if let Some(p) = &config.checkpoint {
            let mut provenance: BTreeMap<String, String> = s.0.clone();
            provenance.retain(|k, _| k != "checkpoint" && k != "out");
            provenance.extend(config.to_key_values().entries().iter().cloned());
            provenance.insert("epoch".into(), (config.epochs - 1).to_string());
            model.save(p, &provenance.into_iter().collect::<Vec<_>>())?;
        }
        Ok(())
    })
}

fn cmd_eval(s: &mut Settings, explicit: &[String]) -> CliResult {
    let (ckpt, _) = load_checkpoint(s)?;
    s.inherit(&ckpt, explicit);
    let model = Model::from_checkpoint(&ckpt)?;
    let data = dataset(s, model.spec(), Split::Test)?;
    let m = with_threads(s, || Ok(evaluate(&model, &data, 128)?))?;
    println!("samples={} top1={:.4} top5={:.4} loss={:.6}", data.len(), m.top1, m.top5, m.loss);
    Ok(())
}

fn cmd_count(s: &Settings, table: bool) -> CliResult {
    let (spec, label) = model_spec(s)?;
    let report = ParamReport::from_spec(&spec)?;
    if table {
        print!("{}", report.to_table());
    }
    println!("model: {label}");
    println!("learnable parameters: {}", report.learnable);
    println!("fixed kernel parameters: {}", report.fixed);
    println!("learnable depthwise parameters: {}", report.depthwise_learnable());
    Ok(())
}

fn depthwise_tensors(ckpt: &Checkpoint) -> Vec<(&str, usize, Vec<Vec<f64>>)> {
    ckpt.tensors
        .iter()
        .filter_map(|t| match t.dims[..] {
            [_, 1, k, k2] if k == k2 && k > 1 => {
                let k = k as usize;
                let kernels = t.data.chunks(k * k).map(|c| c.iter().map(|&v| v as f64).collect()).collect();
                Some((t.name.as_str(), k, kernels))
            }
            _ => None,
        })
        .collect()
}

fn probe_batch(s: &Settings, spec: &ModelSpec, n: usize) -> CliResult<Tensor<f32>> {
    Ok(match s.str("dataset") {
        Some(_) => dataset(s, spec, Split::Test)?.head(n).images,
        None => {
            let r = spec.options.input_resolution;
            Tensor::randn(Shape::new(n, 3, r, r), 1.0, &mut ChaCha8Rng::seed_from_u64(s.need("seed")?))
        }
    })
}

fn cmd_visualize(s: &Settings) -> CliResult {
    let (ckpt, _) = load_checkpoint(s)?;
    let out: PathBuf = s.need("out")?;
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let tensors = depthwise_tensors(&ckpt);
    if tensors.is_empty() {
        eprintln!("warning: checkpoint has no depthwise layers");
    }
    for (name, k, kernels) in &tensors {
        let path = out.join(format!("{}.kernels.pgm", name.trim_end_matches(".dw.weight")));
        analyze::kernel_grid(kernels, *k).write(&path)?;
        println!("wrote {}", path.display());
    }
    let model = Model::from_checkpoint(&ckpt)?;
    let x = probe_batch(s, model.spec(), 1)?;
    for (name, t) in with_threads(s, || Ok(model.forward_trace(&x)?))? {
        let sh = t.shape();
        if sh.plane() <= 1 {
            continue;
        }
        let maps: Vec<Vec<f64>> = (0..sh.c).map(|c| t.channel(0, c).iter().map(|&v| v as f64).collect()).collect();
        let path = out.join(format!("{name}.features.pgm"));
        analyze::feature_grid(&maps, sh.h, sh.w).write(&path)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn cmd_classify(s: &Settings) -> CliResult {
    let (ckpt, _) = load_checkpoint(s)?;
    let mut t = Thresholds::default();
    if let Some(th) = s.get::<f64>("threshold")? {
        t.identity = th;
        t.lowpass = th;
        t.edge = th;
    }
    if let Some(z) = s.get::<f64>("zero_relative")? {
        t.zero_relative = z;
    }
    let report = analyze::analyze_checkpoint(&ckpt, &t);
    if report.is_empty() {
        eprintln!("warning: checkpoint has no depthwise layers; report is empty");
    }
    print!("{}", report.summary());
    if let Some(out) = s.get::<PathBuf>("out")? {
        write_file(&out, report.to_csv().as_bytes())?;
        let hist = out.with_extension("hist.csv");
        write_file(&hist, report.histograms_csv().as_bytes())?;
        println!("wrote {} and {}", out.display(), hist.display());
    }
    for c in KernelClass::ALL {
        println!("fraction {}={:.4}", c.name(), report.fraction(c));
    }
    Ok(())
}

fn cmd_feature_sim(s: &Settings) -> CliResult {
    let (ckpt, _) = load_checkpoint(s)?;
    let model = Model::from_checkpoint(&ckpt)?;
    let layers: String = s.need("layers")?;
    let (a, b) = layers
        .split_once(',')
        .ok_or_else(|| usage("--layers expects two names separated by a comma"))?;
    let x = probe_batch(s, model.spec(), s.get("samples")?.unwrap_or(8))?;
    let m = with_threads(s, || Ok(analyze::layer_similarity(&model, &x, a.trim(), b.trim())?))?;
    for (i, (j, v)) in m.best_matches().iter().enumerate() {
        println!("channel={i} best={j} similarity={v:.6}");
    }
    println!("mean_best={:.6} mean_abs={:.6}", m.mean_best(), m.mean_abs());
    if let Some(out) = s.get::<PathBuf>("out")? {
        let mut csv = String::new();
        for i in 0..m.rows {
            let row: Vec<String> = (0..m.cols).map(|j| format!("{:.6}", m.at(i, j))).collect();
            csv.push_str(&row.join(","));
            csv.push('\n');
        }
        write_file(&out, csv.as_bytes())?;
    }
    Ok(())
}

fn cmd_bench(s: &Settings, compare: bool) -> CliResult {
    let (spec, label) = model_spec(s)?;
    let batch = s.get("batch")?.unwrap_or(16);
    let warmup = s.get("warmup")?.unwrap_or(10);
    let iters = s.get("iters")?.unwrap_or(50);
    let mut models = vec![(Model::build(&spec, 0)?, label.clone())];
    if compare {
        let mut control = spec.clone();
        control.options.identity_reuse = false;
        models.push((Model::build(&control, 0)?, format!("{label}(no-reuse)")));
    }
    let threads: Vec<usize> = match s.get::<usize>("threads")? {
        Some(t) => vec![t],
        None => {
            let all = std::thread::available_parallelism().map_or(1, |n| n.get());
            if all > 1 { vec![1, all] } else { vec![1] }
        }
    };
    for t in threads {
        for (model, name) in &models {
            println!("{}", bench(model, name, batch, warmup, iters, t)?.line());
        }
    }
    Ok(())
}

fn cmd_export(s: &Settings) -> CliResult {
    let (spec, _) = model_spec(s)?;
    match s.get::<PathBuf>("out")? {
        Some(p) => write_file(&p, spec.to_text().as_bytes()),
        None => {
            print!("{}", spec.to_text());
            Ok(())
        }
    }
}

fn dispatch(cmd: Command) -> CliResult {
    match cmd {
        Command::Train {
            common,
            model,
            data,
            epochs,
            batch_size,
            lr,
            checkpoint,
            out,
        } => {
            let mut defaults = MODEL_DEFAULTS.to_vec();
            defaults.retain(|(k, _)| *k != "preset");
            defaults.extend([("preset", "micro"), ("dataset", "edges"), ("seed", "0")]);
            let mut flags = model_flags(&model);
            flags.extend(data_flags(&data));
            flags.extend(opt_flag("epochs", &epochs));
            flags.extend(opt_flag("batch_size", &batch_size));
            flags.extend(opt_flag("lr", &lr));
            flags.extend(path_flag("checkpoint", &checkpoint));
            flags.extend(path_flag("out", &out));
            cmd_train(&Settings::resolve(&defaults, &common, flags)?)
        }
        Command::Eval { common, data, checkpoint } => {
            let mut flags = data_flags(&data);
            flags.extend(path_flag("checkpoint", &checkpoint));
            let explicit = explicit_keys(&common, &flags);
            cmd_eval(&mut Settings::resolve(&[("dataset", "edges"), ("seed", "0")], &common, flags)?, &explicit)
        }
        Command::CountParams { common, model, table } => {
            cmd_count(&Settings::resolve(MODEL_DEFAULTS, &common, model_flags(&model))?, table)
        }
        Command::Visualize {
            common,
            data,
            checkpoint,
            out,
        } => {
            let mut flags = data_flags(&data);
            flags.extend(path_flag("checkpoint", &checkpoint));
            flags.extend(path_flag("out", &out));
            cmd_visualize(&Settings::resolve(&[("seed", "0")], &common, flags)?)
        }
        Command::ClassifyKernels {
            common,
            checkpoint,
            out,
            threshold,
        } => {
            let mut flags = path_flag("checkpoint", &checkpoint);
            flags.extend(path_flag("out", &out));
            flags.extend(opt_flag("threshold", &threshold));
            cmd_classify(&Settings::resolve(&[], &common, flags)?)
        }
        Command::FeatureSim {
            common,
            data,
            checkpoint,
            layers,
            samples,
            out,
        } => {
            let mut flags = data_flags(&data);
            flags.extend(path_flag("checkpoint", &checkpoint));
            flags.extend(opt_flag("layers", &layers));
            flags.extend(opt_flag("samples", &samples));
            flags.extend(path_flag("out", &out));
            cmd_feature_sim(&Settings::resolve(&[("seed", "0")], &common, flags)?)
        }
        Command::Bench {
            common,
            model,
            batch,
            warmup,
            iters,
            compare_no_reuse,
        } => {
            let mut flags = model_flags(&model);
            flags.extend(opt_flag("batch", &batch));
            flags.extend(opt_flag("warmup", &warmup));
            flags.extend(opt_flag("iters", &iters));
            cmd_bench(&Settings::resolve(MODEL_DEFAULTS, &common, flags)?, compare_no_reuse)
        }
        Command::ExportSpec { common, model, out } => {
            let mut flags = model_flags(&model);
            flags.extend(path_flag("out", &out));
            cmd_export(&Settings::resolve(MODEL_DEFAULTS, &common, flags)?)
        }
    }
}

/// Runs the CLI on `args` (program name first) and returns the exit code:
/// 0 success, 1 runtime failure, 2 usage error.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}\n\nRun `vgnet help` for usage.");
            2
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e}");
            1
        }
    }
}
