use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use topodetect::adversary::{build_adversary_sets, Optimizer};
use topodetect::detection::{evaluate, DetectionMethod};
use topodetect::formats::{
    flags_by_method, read_adversary_set, read_diagram_csv, read_signatures, read_stats,
    read_verdicts, sha256_file, write_adversary_set, write_curve, write_diagram_csv,
    write_generators, write_metrics, write_signatures, write_stats, write_verdicts, MetricsRow,
    RunHeader, VerdictRow,
};
use topodetect::graph::build_induced_graph;
use topodetect::idx::load_idx;
use topodetect::nn::{load_model, save_model, train, TrainConfig};
use topodetect::persistence::{
    compute_persistence, interpolation_distance_curve, wasserstein_distance, Dimension,
    WassersteinParams,
};
use topodetect::pipeline::{parse_kappas, run_pipeline, write_outputs, PipelineConfig};
use topodetect::{
    AdversarySet, AttackConfig, DatasetHandle, Detector, InducedGraph, NetworkModel, Tensor,
    TopologyConfig,
};

mod config;

use config::Settings;

#[derive(Parser)]
#[command(
    name = "topodetect",
    version,
    about = "Adversarial-input detection from persistent homology of induced graphs"
)]
struct Cli {
    /// TOML file with default values for flags.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a network on an IDX dataset.
    Train(TrainArgs),
    /// Build a targeted adversary set.
    Attack(AttackArgs),
    /// Dump the induced graph of one input.
    Induce(InduceArgs),
    /// Persistence diagram and generators of a graph dump.
    Persist(PersistArgs),
    /// Wasserstein distance between two diagrams.
    Distance(DistanceArgs),
    /// Class signatures and detector statistics from clean images.
    Signatures(SignaturesArgs),
    /// Score clean and adversarial inputs with all four detectors.
    Detect(DetectArgs),
    /// Accuracy, FP, FN and F1 per detector from a verdict file.
    Evaluate(EvaluateArgs),
    /// Diagram distance along the segment between two images.
    Interpolate(InterpolateArgs),
    /// Train, attack, fit and score in one run.
    Pipeline(PipelineArgs),
}

#[derive(Args)]
struct DataArgs {
    /// IDX image file (optionally gzipped).
    #[arg(long)]
    images: Option<PathBuf>,
    /// IDX label file (optionally gzipped).
    #[arg(long)]
    labels: Option<PathBuf>,
}

#[derive(Args)]
struct RangeArgs {
    /// Visit images in the order given by this seed instead of file order.
    #[arg(long)]
    shuffle: Option<u64>,
    /// First position used.
    #[arg(long, default_value_t = 0)]
    offset: usize,
    /// Number of images used; all remaining when omitted.
    #[arg(long)]
    count: Option<usize>,
}

#[derive(Args)]
struct TopoArgs {
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
}

#[derive(Args)]
struct AttackOpts {
    #[arg(long)]
    attack_learning_rate: Option<f64>,
    #[arg(long)]
    attack_iterations: Option<usize>,
    /// `adam` or `gd`.
    #[arg(long)]
    attack_optimizer: Option<String>,
    #[arg(long)]
    attack_initial_c: Option<f64>,
    #[arg(long)]
    attack_c_steps: Option<usize>,
    #[arg(long)]
    attack_starts: Option<usize>,
    #[arg(long)]
    attack_seed: Option<u64>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    range: RangeArgs,
    #[arg(long)]
    filters: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Model file; a `.meta` text file with the run header is written next to it.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AttackArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    /// Sources are the first correctly classified images of the range.
    #[command(flatten)]
    range: RangeArgs,
    #[arg(long)]
    attack_sources: Option<usize>,
    #[arg(long)]
    kappa: Option<f64>,
    #[command(flatten)]
    attack: AttackOpts,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct InputArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Read the input from an adversary set instead of the IDX files.
    #[arg(long)]
    adversaries: Option<PathBuf>,
    /// Image index, or row of the adversary set.
    #[arg(long)]
    index: usize,
}

#[derive(Args)]
struct InduceArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    input: InputArgs,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PersistArgs {
    /// Graph dump written by `induce`.
    #[arg(long)]
    graph: PathBuf,
    /// Diagram CSV.
    #[arg(long)]
    out: PathBuf,
    /// Generator subgraphs of the H0 points.
    #[arg(long)]
    generators: Option<PathBuf>,
}

#[derive(Args)]
struct DistanceArgs {
    a: PathBuf,
    b: PathBuf,
    /// Homology dimension, 0 or 1.
    #[arg(long, default_value_t = 0)]
    dim: usize,
    #[arg(long, default_value_t = 2.0)]
    p: f64,
}

#[derive(Args)]
struct SignaturesArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    range: RangeArgs,
    /// Leading images of the range held out for the average-match statistics.
    #[arg(long)]
    u_val: Option<usize>,
    #[arg(long)]
    pi: Option<f64>,
    /// `dense` or `raw`.
    #[arg(long)]
    rank_mode: Option<String>,
    /// `distance` or `magnitude`.
    #[arg(long)]
    weight_view: Option<String>,
    #[command(flatten)]
    topo: TopoArgs,
    #[arg(long)]
    signatures_out: PathBuf,
    #[arg(long)]
    stats_out: PathBuf,
}

#[derive(Args)]
struct DetectArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    signatures: PathBuf,
    #[arg(long)]
    stats: PathBuf,
    /// Clean inputs.
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    range: RangeArgs,
    /// Adversarial inputs.
    #[arg(long)]
    adversaries: Option<PathBuf>,
    /// Use only the first N adversarial examples.
    #[arg(long)]
    adversarial_test: Option<usize>,
    #[command(flatten)]
    topo: TopoArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    verdicts: PathBuf,
    /// Defaults to the value recorded in the verdict header.
    #[arg(long)]
    kappa: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    pi: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct InterpolateArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    a: usize,
    #[arg(long)]
    b: usize,
    #[arg(long)]
    steps: Option<usize>,
    #[command(flatten)]
    topo: TopoArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PipelineArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Start from the reference network and experiment sizes.
    #[arg(long)]
    full_scale: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    filters: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    train_size: Option<usize>,
    #[arg(long)]
    u_size: Option<usize>,
    #[arg(long)]
    u_train: Option<usize>,
    #[arg(long)]
    u_val: Option<usize>,
    #[arg(long)]
    clean_test: Option<usize>,
    #[arg(long)]
    adversarial_test: Option<usize>,
    #[arg(long)]
    attack_sources: Option<usize>,
    /// Space- or comma-separated `kappa:pi` pairs, e.g. `0:0.9 20:0.95`.
    #[arg(long)]
    kappas: Option<String>,
    #[arg(long)]
    rank_mode: Option<String>,
    #[arg(long)]
    weight_view: Option<String>,
    #[command(flatten)]
    topo: TopoArgs,
    #[command(flatten)]
    attack: AttackOpts,
    #[arg(long)]
    out_dir: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let settings = match &cli.config {
        Some(p) => Settings::load(p)?,
        None => Settings::default(),
    };
    let s = &settings;
    match cli.command {
        Command::Train(a) => cmd_train(s, a),
        Command::Attack(a) => cmd_attack(s, a),
        Command::Induce(a) => cmd_induce(s, a),
        Command::Persist(a) => cmd_persist(a),
        Command::Distance(a) => cmd_distance(a),
        Command::Signatures(a) => cmd_signatures(s, a),
        Command::Detect(a) => cmd_detect(s, a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Interpolate(a) => cmd_interpolate(s, a),
        Command::Pipeline(a) => cmd_pipeline(s, a),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(
        File::open(path).with_context(|| format!("opening {}", path.display()))?,
    ))
}

fn checksum(header: &mut RunHeader, name: &str, path: &Path) -> Result<()> {
    header
        .push_checksum(name, path)
        .with_context(|| format!("hashing {}", path.display()))
}

fn load_data(s: &Settings, data: &DataArgs) -> Result<DatasetHandle> {
    let images: PathBuf = s.require(data.images.clone(), "images")?;
    let labels: PathBuf = s.require(data.labels.clone(), "labels")?;
    load_idx(&images, &labels)
        .with_context(|| format!("loading {} / {}", images.display(), labels.display()))
}

fn data_header(header: &mut RunHeader, data: &DatasetHandle) {
    for p in &data.provenance {
        let name = p.path.file_name().map_or_else(
            || p.path.display().to_string(),
            |n| n.to_string_lossy().into_owned(),
        );
        header.push(format!("sha256:{name}"), &p.sha256);
    }
}

/// Dataset indices selected by `range`; records the selection in `header`.
fn select(data: &DatasetHandle, range: &RangeArgs, header: &mut RunHeader) -> Result<Vec<usize>> {
    let count = range
        .count
        .unwrap_or(data.len().saturating_sub(range.offset));
    let end = range.offset + count;
    if end > data.len() || count == 0 {
        bail!(
            "range {}..{end} is empty or exceeds the {} images available",
            range.offset,
            data.len()
        );
    }
    let order = match range.shuffle {
        Some(seed) => {
            header.push("shuffle", seed);
            data.shuffled_indices(seed)
        }
        None => (0..data.len()).collect(),
    };
    header.push("offset", range.offset);
    header.push("count", count);
    Ok(order[range.offset..end].to_vec())
}

fn gather<T: Clone>(items: &[T], idx: &[usize]) -> Vec<T> {
    idx.iter().map(|&i| items[i].clone()).collect()
}

fn load_model_file(path: &Path) -> Result<NetworkModel> {
    load_model(path).with_context(|| format!("loading model {}", path.display()))
}

fn topology(s: &Settings, t: &TopoArgs) -> Result<TopologyConfig> {
    let d = TopologyConfig::default();
    Ok(TopologyConfig::new(
        s.or(t.rho, "rho", d.prune.rho)?,
        s.or(t.lambda, "lambda", d.lambda)?,
    )?)
}

fn attack_config(s: &Settings, a: &AttackOpts, base: AttackConfig) -> Result<AttackConfig> {
    let optimizer = match s
        .opt(a.attack_optimizer.clone(), "attack_optimizer")?
        .as_deref()
    {
        None => base.optimizer,
        Some("adam") => Optimizer::Adam,
        Some("gd") => Optimizer::GradientDescent,
        Some(o) => bail!("unknown attack optimizer '{o}' (expected adam or gd)"),
    };
    Ok(AttackConfig {
        learning_rate: s.or(
            a.attack_learning_rate,
            "attack_learning_rate",
            base.learning_rate,
        )?,
        iterations: s.or(a.attack_iterations, "attack_iterations", base.iterations)?,
        initial_c: s.or(a.attack_initial_c, "attack_initial_c", base.initial_c)?,
        c_search_steps: s.or(a.attack_c_steps, "attack_c_steps", base.c_search_steps)?,
        starts: s.or(a.attack_starts, "attack_starts", base.starts)?,
        seed: s.or(a.attack_seed, "attack_seed", base.seed)?,
        optimizer,
        ..base
    })
}

fn attack_header(header: &mut RunHeader, a: &AttackConfig) {
    let optimizer = match a.optimizer {
        Optimizer::Adam => "adam",
        Optimizer::GradientDescent => "gd",
    };
    header.push("attack_optimizer", optimizer);
    header.push("attack_learning_rate", a.learning_rate);
    header.push("attack_iterations", a.iterations);
    header.push("attack_initial_c", a.initial_c);
    header.push("attack_c_steps", a.c_search_steps);
    header.push("attack_starts", a.starts);
    header.push("attack_seed", a.seed);
}

fn read_adversaries(path: &Path, model: &NetworkModel) -> Result<AdversarySet> {
    let (h, w) = model.input_shape();
    // clean originals are not needed for scoring
    read_adversary_set(open(path)?, path, |_| Some(Tensor::zeros(vec![h, w])))
        .with_context(|| format!("reading {}", path.display()))
}

fn cmd_train(s: &Settings, a: TrainArgs) -> Result<()> {
    let data = load_data(s, &a.data)?;
    let mut header = RunHeader::new().with("command", "train");
    let idx = select(&data, &a.range, &mut header)?;
    let d = PipelineConfig::default();
    let filters = s.or(a.filters, "filters", d.filters)?;
    let hidden = s.or(a.hidden, "hidden", d.hidden)?;
    let seed = s.or(a.seed, "seed", d.seed)?;
    let cfg = TrainConfig {
        epochs: s.or(a.epochs, "epochs", d.train.epochs)?,
        batch_size: s.or(a.batch_size, "batch_size", d.train.batch_size)?,
        learning_rate: s.or(a.learning_rate, "learning_rate", d.train.learning_rate)?,
        seed,
    };
    let (images, labels) = (gather(&data.images, &idx), gather(&data.labels, &idx));
    let shape = match images[0].shape() {
        [h, w] => (*h, *w),
        other => bail!("expected two-dimensional images, found shape {other:?}"),
    };
    let classes = data.labels.iter().max().map_or(0, |m| m + 1);
    let specs = NetworkModel::conv_mlp_specs(shape, filters, hidden, classes);
    let mut model = NetworkModel::initialized(shape, &specs, seed)?;
    let report = train(&mut model, &images, &labels, &cfg)?;
    save_model(&model, &a.out).with_context(|| format!("writing {}", a.out.display()))?;

    header.push("filters", filters);
    header.push("hidden", hidden);
    header.push("epochs", cfg.epochs);
    header.push("batch_size", cfg.batch_size);
    header.push("learning_rate", cfg.learning_rate);
    header.push("seed", seed);
    data_header(&mut header, &data);
    checksum(&mut header, "model", &a.out)?;
    let mut meta_path = a.out.clone().into_os_string();
    meta_path.push(".meta");
    let mut w = create(Path::new(&meta_path))?;
    header.write(&mut w)?;
    for (epoch, loss) in report.epoch_losses.iter().enumerate() {
        writeln!(w, "epoch {} loss {loss}", epoch + 1)?;
    }
    writeln!(w, "train_accuracy {}", report.train_accuracy)?;
    w.flush()?;
    println!("train accuracy {:.4}", report.train_accuracy);
    Ok(())
}

fn cmd_attack(s: &Settings, a: AttackArgs) -> Result<()> {
    let model = load_model_file(&a.model)?;
    let data = load_data(s, &a.data)?;
    let d = PipelineConfig::default();
    let n = s.or(a.attack_sources, "attack_sources", d.attack_sources)?;
    let kappa = s.or(a.kappa, "kappa", 0.0)?;
    let cfg = attack_config(s, &a.attack, d.attack)?;
    let mut header = RunHeader::new().with("command", "attack");
    let idx = select(&data, &a.range, &mut header)?;
    let sources: Vec<(usize, &Tensor, usize)> = idx
        .iter()
        .filter(|&&i| {
            model
                .predict(&data.images[i])
                .is_ok_and(|p| p == data.labels[i])
        })
        .take(n)
        .map(|&i| (i, &data.images[i], data.labels[i]))
        .collect();
    if sources.is_empty() {
        bail!("no correctly classified source images in the selected range");
    }
    let set = build_adversary_sets(&model, &sources, &[kappa], &cfg)?.remove(0);
    header.push("attack_sources", sources.len());
    attack_header(&mut header, &cfg);
    data_header(&mut header, &data);
    checksum(&mut header, "model", &a.model)?;
    let mut w = create(&a.out)?;
    write_adversary_set(&mut w, &header, &set)?;
    w.flush()?;
    println!(
        "{}/{} attacks succeeded, mean distortion {:.4}",
        set.examples.len(),
        set.attempted(),
        set.mean_distortion()
    );
    Ok(())
}

fn select_input(
    s: &Settings,
    input: &InputArgs,
    model: &NetworkModel,
    header: &mut RunHeader,
) -> Result<Tensor> {
    header.push("index", input.index);
    if let Some(path) = &input.adversaries {
        let set = read_adversaries(path, model)?;
        checksum(header, "adversaries", path)?;
        let n = set.examples.len();
        return set
            .examples
            .into_iter()
            .nth(input.index)
            .map(|r| r.example.perturbed)
            .with_context(|| {
                format!(
                    "adversary set has {n} examples, index {} requested",
                    input.index
                )
            });
    }
    let data = load_data(s, &input.data)?;
    data_header(header, &data);
    data.images.get(input.index).cloned().with_context(|| {
        format!(
            "dataset has {} images, index {} requested",
            data.len(),
            input.index
        )
    })
}

fn cmd_induce(s: &Settings, a: InduceArgs) -> Result<()> {
    let model = load_model_file(&a.model)?;
    let rho = s.or(a.rho, "rho", TopologyConfig::default().prune.rho)?;
    let prune = TopologyConfig::new(rho, 0.0)?.prune;
    let mut header = RunHeader::new().with("command", "induce").with("rho", rho);
    checksum(&mut header, "model", &a.model)?;
    let x = select_input(s, &a.input, &model, &mut header)?;
    let trace = model.forward(&x)?;
    header.push("predicted", trace.predicted);
    let graph = build_induced_graph(&model, &trace, prune)?;
    let mut w = create(&a.out)?;
    header.write(&mut w)?;
    graph.write_dump(&mut w)?;
    w.flush()?;
    Ok(())
}

fn cmd_persist(a: PersistArgs) -> Result<()> {
    let graph = InducedGraph::read_dump(open(&a.graph)?, &a.graph)?;
    let p = compute_persistence(&graph);
    let mut header = RunHeader::new().with("command", "persist");
    checksum(&mut header, "graph", &a.graph)?;
    let mut w = create(&a.out)?;
    write_diagram_csv(&mut w, &header, &p.diagram)?;
    w.flush()?;
    if let Some(path) = &a.generators {
        let mut w = create(path)?;
        write_generators(&mut w, &header, &p.generators)?;
        w.flush()?;
    }
    Ok(())
}

fn cmd_distance(a: DistanceArgs) -> Result<()> {
    let dimension = match a.dim {
        0 => Dimension::H0,
        1 => Dimension::H1,
        d => bail!("dimension must be 0 or 1, got {d}"),
    };
    if !(a.p >= 1.0) {
        bail!("p must be at least 1, got {}", a.p);
    }
    let x = read_diagram_csv(open(&a.a)?, &a.a)?;
    let y = read_diagram_csv(open(&a.b)?, &a.b)?;
    let params = WassersteinParams {
        p: a.p,
        dimension,
        ..WassersteinParams::default()
    };
    println!("{}", wasserstein_distance(&x, &y, params));
    Ok(())
}

fn cmd_signatures(s: &Settings, a: SignaturesArgs) -> Result<()> {
    let model = load_model_file(&a.model)?;
    let data = load_data(s, &a.data)?;
    let mut header = RunHeader::new().with("command", "signatures");
    let idx = select(&data, &a.range, &mut header)?;
    let d = PipelineConfig::default();
    let u_val = s.or(a.u_val, "u_val", d.u_val)?;
    if u_val == 0 || u_val >= idx.len() {
        bail!(
            "u_val must be between 1 and {} for {} images",
            idx.len() - 1,
            idx.len()
        );
    }
    let pi = s.or(a.pi, "pi", 0.9)?;
    let mode = s
        .or(a.rank_mode, "rank_mode", d.rank_mode.name().to_string())?
        .parse()?;
    let view = s
        .or(
            a.weight_view,
            "weight_view",
            d.weight_view.name().to_string(),
        )?
        .parse()?;
    let topo = topology(s, &a.topo)?;
    let (val_idx, train_idx) = idx.split_at(u_val);
    let detector = Detector::fit(
        &model,
        (
            &gather(&data.images, train_idx),
            &gather(&data.labels, train_idx),
        ),
        &gather(&data.images, val_idx),
        topo,
        pi,
        mode,
        view,
    )?;

    header.push("u_val", u_val);
    header.push("rho", topo.prune.rho);
    header.push("lambda", topo.lambda);
    header.push("pi", pi);
    header.push("rank_mode", mode.name());
    header.push("weight_view", view.name());
    data_header(&mut header, &data);
    checksum(&mut header, "model", &a.model)?;
    let mut w = create(&a.signatures_out)?;
    write_signatures(&mut w, &header, &detector.signatures)?;
    w.flush()?;
    let mut w = create(&a.stats_out)?;
    write_stats(&mut w, &header, &detector.stats)?;
    w.flush()?;
    Ok(())
}

fn cmd_detect(s: &Settings, a: DetectArgs) -> Result<()> {
    let model = load_model_file(&a.model)?;
    let signatures = read_signatures(open(&a.signatures)?, &a.signatures)?;
    let stats = read_stats(open(&a.stats)?, &a.stats)?;
    let topo = topology(s, &a.topo)?;
    let detector = Detector {
        config: topo,
        signatures,
        stats,
    };
    let mut header = RunHeader::new()
        .with("command", "detect")
        .with("rho", topo.prune.rho)
        .with("lambda", topo.lambda)
        .with("pi", stats.pi);
    checksum(&mut header, "model", &a.model)?;
    checksum(&mut header, "signatures", &a.signatures)?;
    checksum(&mut header, "stats", &a.stats)?;

    let mut ids = Vec::new();
    let mut inputs = Vec::new();
    if a.data.images.is_some() || s.opt::<PathBuf>(None, "images")?.is_some() {
        let data = load_data(s, &a.data)?;
        let idx = select(&data, &a.range, &mut header)?;
        data_header(&mut header, &data);
        for i in idx {
            ids.push((format!("clean-{i}"), false));
            inputs.push(data.images[i].clone());
        }
    }
    if let Some(path) = &a.adversaries {
        let set = read_adversaries(path, &model)?;
        let take = s
            .opt(a.adversarial_test, "adversarial_test")?
            .unwrap_or(set.examples.len());
        checksum(&mut header, "adversaries", path)?;
        header.push("kappa", set.kappa);
        header.push("adversarial_test", take.min(set.examples.len()));
        for r in set.examples.into_iter().take(take) {
            ids.push((
                format!(
                    "adv-k{}-{}-t{}",
                    set.kappa, r.source_index, r.example.target
                ),
                true,
            ));
            inputs.push(r.example.perturbed);
        }
    }
    if inputs.is_empty() {
        bail!("nothing to score: give --images/--labels and/or --adversaries");
    }
    let verdicts = detector.detect_batch(&model, &inputs)?;
    let mut rows = Vec::new();
    for ((id, is_adv), vs) in ids.iter().zip(&verdicts) {
        for v in vs {
            rows.push(VerdictRow {
                input_id: id.clone(),
                is_adversarial: *is_adv,
                method: v.method,
                flagged: v.flagged,
                score: v.score,
            });
        }
    }
    let mut w = create(&a.out)?;
    write_verdicts(&mut w, &header, &rows)?;
    w.flush()?;
    Ok(())
}

fn header_f64(header: &RunHeader, key: &str) -> Result<Option<f64>> {
    header
        .get(key)
        .map(|v| {
            v.parse::<f64>()
                .with_context(|| format!("header field {key}='{v}'"))
        })
        .transpose()
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<()> {
    let text = std::fs::read_to_string(&a.verdicts)
        .with_context(|| format!("reading {}", a.verdicts.display()))?;
    let recorded = RunHeader::parse(&text);
    let rows = read_verdicts(text.as_bytes(), &a.verdicts)?;
    let kappa = match a.kappa {
        Some(k) => k,
        None => {
            header_f64(&recorded, "kappa")?.context("verdicts record no kappa; pass --kappa")?
        }
    };
    let lambda = match a.lambda {
        Some(l) => l,
        None => {
            header_f64(&recorded, "lambda")?.context("verdicts record no lambda; pass --lambda")?
        }
    };
    let pi = match a.pi {
        Some(p) => Some(p),
        None => header_f64(&recorded, "pi")?,
    };
    let mut metrics = Vec::new();
    for (method, (clean, adv)) in flags_by_method(&rows) {
        metrics.push(MetricsRow {
            kappa,
            lambda,
            pi: if method == DetectionMethod::EdgeCount {
                pi
            } else {
                None
            },
            method,
            metrics: evaluate(&clean, &adv).with_context(|| format!("method {method}"))?,
        });
    }
    if metrics.is_empty() {
        bail!("{} holds no verdicts", a.verdicts.display());
    }
    let mut header = RunHeader::new()
        .with("command", "evaluate")
        .with("kappa", kappa)
        .with("lambda", lambda);
    if let Some(p) = pi {
        header.push("pi", p);
    }
    checksum(&mut header, "verdicts", &a.verdicts)?;
    let mut w = create(&a.out)?;
    write_metrics(&mut w, &header, &metrics)?;
    w.flush()?;
    Ok(())
}

fn cmd_interpolate(s: &Settings, a: InterpolateArgs) -> Result<()> {
    let model = load_model_file(&a.model)?;
    let data = load_data(s, &a.data)?;
    let get = |i: usize| {
        data.images
            .get(i)
            .with_context(|| format!("dataset has {} images, index {i} requested", data.len()))
    };
    let (xa, xb) = (get(a.a)?, get(a.b)?);
    let steps = s.or(a.steps, "steps", 11)?;
    let topo = topology(s, &a.topo)?;
    let curve = interpolation_distance_curve(&model, xa, xb, steps, topo.prune, topo.lambda)?;
    let mut header = RunHeader::new()
        .with("command", "interpolate")
        .with("a", a.a)
        .with("b", a.b)
        .with("steps", steps)
        .with("rho", topo.prune.rho)
        .with("lambda", topo.lambda);
    data_header(&mut header, &data);
    checksum(&mut header, "model", &a.model)?;
    let mut w = create(&a.out)?;
    write_curve(&mut w, &header, &curve)?;
    w.flush()?;
    Ok(())
}

fn cmd_pipeline(s: &Settings, a: PipelineArgs) -> Result<()> {
    let full = s.or(a.full_scale.then_some(true), "full_scale", false)?;
    let d = if full {
        PipelineConfig::full_scale()
    } else {
        PipelineConfig::default()
    };
    let kappas = match s.opt(a.kappas.clone(), "kappas")? {
        Some(k) => parse_kappas(&k)?,
        None => d.kappas.clone(),
    };
    let seed = s.or(a.seed, "seed", d.seed)?;
    let cfg = PipelineConfig {
        seed,
        filters: s.or(a.filters, "filters", d.filters)?,
        hidden: s.or(a.hidden, "hidden", d.hidden)?,
        train_size: s.or(a.train_size, "train_size", d.train_size)?,
        u_size: s.or(a.u_size, "u_size", d.u_size)?,
        u_train: s.or(a.u_train, "u_train", d.u_train)?,
        u_val: s.or(a.u_val, "u_val", d.u_val)?,
        clean_test: s.or(a.clean_test, "clean_test", d.clean_test)?,
        adversarial_test: s.or(a.adversarial_test, "adversarial_test", d.adversarial_test)?,
        attack_sources: s.or(a.attack_sources, "attack_sources", d.attack_sources)?,
        kappas,
        topology: topology(s, &a.topo)?,
        rank_mode: s
            .or(
                a.rank_mode.clone(),
                "rank_mode",
                d.rank_mode.name().to_string(),
            )?
            .parse()?,
        weight_view: s
            .or(
                a.weight_view.clone(),
                "weight_view",
                d.weight_view.name().to_string(),
            )?
            .parse()?,
        train: TrainConfig {
            epochs: s.or(a.epochs, "epochs", d.train.epochs)?,
            batch_size: s.or(a.batch_size, "batch_size", d.train.batch_size)?,
            learning_rate: s.or(a.learning_rate, "learning_rate", d.train.learning_rate)?,
            seed,
        },
        attack: attack_config(s, &a.attack, d.attack.clone())?,
    };
    let data = load_data(s, &a.data)?;
    let run = run_pipeline(&data, &cfg)?;
    write_outputs(&a.out_dir, &run, &cfg, &data)?;
    println!("holdout accuracy {:.4}", run.holdout_accuracy);
    for k in &run.kappas {
        println!(
            "kappa {}: {}/{} attacks succeeded, mean distortion {:.4}",
            k.setting.kappa,
            k.adversaries.examples.len(),
            k.adversaries.attempted(),
            k.adversaries.mean_distortion()
        );
        for m in &k.metrics {
            println!(
                "  {:<16} accuracy {:.4} FP {:>3} FN {:>3} F1 {:.4}",
                m.method.name(),
                m.metrics.accuracy,
                m.metrics.false_positives,
                m.metrics.false_negatives,
                m.metrics.f1
            );
        }
    }
    let model = a.out_dir.join("model.tdnn");
    println!("model sha256 {}", sha256_file(&model)?);
    Ok(())
}
