//! Command-line driver for the full experiment pipeline: dataset
//! generation, the three training stages, protocol runs, λ sweeps, and
//! ensemble ablations.

mod config;

use clap::{Args, Parser, Subcommand, ValueEnum};
use config::{parse_hidden, parse_lambdas, resolve, resolve_required, FileConfig};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use tlce::data::split_sessions;
use tlce::ensemble::EnsembleConfig;
use tlce::harness::{
    ablation_run, lambda_sweep, render_ablation_table, render_run_table, render_sweep_table,
    run_protocol, write_ablation_csv, write_metrics_csv, write_predictions_csv, write_sweep_csv,
    ProtocolSpec,
};
use tlce::io;
use tlce::model::{init_params, ArchitectureSpec, HeadSpec, NetworkParams};
use tlce::seeds;
use tlce::training::{
    meta_train_rhd, pretrain_ce, train_tkn, SharpeningConfig, TrainConfig, TrainLogger,
};
use tlce::{Error, Result};

#[derive(Parser)]
#[command(
    name = "tlce",
    version,
    about = "Few-shot class-incremental learning with an ensemble of two prototype classifiers"
)]
struct Cli {
    /// Plain-text `key = value` config file with [section] headers.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Master seed; every per-purpose seed derives from it (default 0).
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic Gaussian-cluster dataset (TLCD file).
    GenData(GenDataArgs),
    /// Train one stage: rhd-pretrain, rhd-meta, or tkn.
    Train(TrainArgs),
    /// Run the incremental protocol and write metrics, predictions, report.
    Run(RunArgs),
    /// Evaluate the final session across a λ grid.
    Sweep(SweepArgs),
    /// Compare each classifier alone and both ensemble pairings.
    Ablation(AblationArgs),
    /// Pretty-print a dataset or checkpoint file.
    Inspect {
        /// TLCD dataset or TLCE checkpoint path.
        path: PathBuf,
    },
}

#[derive(Args)]
struct GenDataArgs {
    /// Output dataset file (default: [paths] data).
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    /// Number of classes (default 100).
    #[arg(long)]
    classes: Option<usize>,
    /// Feature dimension (default 64).
    #[arg(long)]
    dim: Option<usize>,
    /// Training samples per class (default 50).
    #[arg(long)]
    train_per_class: Option<usize>,
    /// Test samples per class (default 20).
    #[arg(long)]
    test_per_class: Option<usize>,
    /// Cluster standard deviation σ (default 1.0).
    #[arg(long)]
    cluster_std: Option<f64>,
    /// Minimum center separation in units of σ (default 8.0).
    #[arg(long)]
    separation: Option<f64>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Stage {
    /// Supervised cross-entropy pretraining of the RHD embedding.
    RhdPretrain,
    /// Episodic meta-training on top of an rhd-pretrain checkpoint.
    RhdMeta,
    /// Cosine cross-entropy training of the transfer network.
    Tkn,
}

impl Stage {
    fn name(self) -> &'static str {
        match self {
            Stage::RhdPretrain => "rhd-pretrain",
            Stage::RhdMeta => "rhd-meta",
            Stage::Tkn => "tkn",
        }
    }
}

#[derive(Args)]
struct ProtocolArgs {
    /// Base-session class count (default 60).
    #[arg(long)]
    base_classes: Option<usize>,
    /// Novel classes per incremental session (default 5).
    #[arg(long)]
    way: Option<usize>,
    /// Training samples per novel class (default 5).
    #[arg(long)]
    shot: Option<usize>,
    /// Total session count, base included (default 9).
    #[arg(long)]
    sessions: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    /// Which training stage to run.
    #[arg(long, value_enum)]
    which: Stage,
    /// Input dataset (default: [paths] data).
    #[arg(long, value_name = "FILE")]
    data: Option<PathBuf>,
    /// Output checkpoint (default: [paths] rhd_pretrain / rhd / tkn).
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    /// rhd-meta only: the rhd-pretrain checkpoint to start from.
    #[arg(long, value_name = "FILE")]
    init: Option<PathBuf>,
    /// Comma-separated backbone hidden widths, empty for none (default "64").
    #[arg(long)]
    hidden: Option<String>,
    /// Backbone output width (default 64).
    #[arg(long)]
    feature_dim: Option<usize>,
    /// Embedding dimension d (default 512).
    #[arg(long)]
    embed_dim: Option<usize>,
    /// SGD learning rate (default 0.01).
    #[arg(long)]
    learning_rate: Option<f64>,
    /// Minibatch size (default 128).
    #[arg(long)]
    batch_size: Option<usize>,
    /// Training epochs (default 120).
    #[arg(long)]
    epochs: Option<usize>,
    /// SGD momentum coefficient; omit for plain SGD.
    #[arg(long)]
    momentum: Option<f64>,
    /// rhd-meta only: episode count (default 200).
    #[arg(long)]
    episodes: Option<usize>,
    /// rhd-meta only: sharpening stiffness β (default 10).
    #[arg(long)]
    beta: Option<f64>,
    #[command(flatten)]
    protocol: ProtocolArgs,
}

#[derive(Args)]
struct RunArgs {
    /// Input dataset (default: [paths] data).
    #[arg(long, value_name = "FILE")]
    data: Option<PathBuf>,
    /// RHD checkpoint (default: [paths] rhd).
    #[arg(long, value_name = "FILE")]
    rhd: Option<PathBuf>,
    /// TKN checkpoint (default: [paths] tkn).
    #[arg(long, value_name = "FILE")]
    tkn: Option<PathBuf>,
    /// Ensemble weight λ on the RHD scores (default 0.8).
    #[arg(long)]
    lambda: Option<f64>,
    /// Output directory (default: [paths] out, else "out").
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    #[command(flatten)]
    protocol: ProtocolArgs,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Comma-separated λ grid (default 0.0,0.1,…,1.0).
    #[arg(long)]
    lambdas: Option<String>,
}

#[derive(Args)]
struct AblationArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Plain-CE transfer checkpoint (default: [paths] tkn_plain).
    #[arg(long, value_name = "FILE")]
    tkn_plain: Option<PathBuf>,
    /// Baseline row for the final-improvement line (default "rhd").
    #[arg(long)]
    baseline: Option<String>,
}

fn main() -> ExitCode {
    // Die quietly when a downstream pipe (e.g. `head`) closes early.
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Dependency(_) => 2,
        Error::Data(_) | Error::Format { .. } | Error::Io(_) => 3,
        Error::Protocol(_) => 4,
        _ => 1,
    }
}

fn run(cli: Cli) -> Result<()> {
    let cfg = FileConfig::load(cli.config.as_deref())?;
    let master = resolve(cli.seed, cfg.u64(None, "seed")?, 0);
    match cli.command {
        Command::GenData(args) => cmd_gen_data(args, &cfg, master),
        Command::Train(args) => cmd_train(args, &cfg, master),
        Command::Run(args) => cmd_run(args, &cfg, master),
        Command::Sweep(args) => cmd_sweep(args, &cfg, master),
        Command::Ablation(args) => cmd_ablation(args, &cfg, master),
        Command::Inspect { path } => cmd_inspect(&path),
    }
}

fn protocol_spec(args: &ProtocolArgs, cfg: &FileConfig, master: u64) -> Result<ProtocolSpec> {
    let p = Some("protocol");
    let way = resolve(args.way, cfg.usize(p, "way")?, 5);
    let sessions = resolve(args.sessions, cfg.usize(p, "sessions")?, 9);
    if sessions == 0 {
        return Err(Error::Config("sessions must be at least 1".into()));
    }
    let spec = ProtocolSpec {
        num_base_classes: resolve(args.base_classes, cfg.usize(p, "base_classes")?, 60),
        num_novel_classes: way * (sessions - 1),
        way,
        shot: resolve(args.shot, cfg.usize(p, "shot")?, 5),
        num_sessions: sessions,
        seed: seeds::derive(master, "protocol"),
    };
    spec.validate()?;
    Ok(spec)
}

fn load_dataset_arg(flag: Option<PathBuf>, cfg: &FileConfig) -> Result<tlce::data::LabeledDataset> {
    let path = resolve_required(flag, cfg.path(Some("paths"), "data")?, "dataset path (--data)")?;
    if !path.exists() {
        return Err(Error::Data(format!("dataset not found at {}", path.display())));
    }
    io::load_dataset(path)
}

fn out_dir(flag: Option<PathBuf>, cfg: &FileConfig) -> Result<PathBuf> {
    Ok(resolve(
        flag,
        cfg.path(Some("paths"), "out")?,
        PathBuf::from("out"),
    ))
}

fn load_checkpoint(path: &Path, role: &str) -> Result<NetworkParams> {
    if !path.exists() {
        return Err(Error::Dependency(format!(
            "{role} checkpoint not found at {}",
            path.display()
        )));
    }
    io::load_params(path)
}

fn cmd_gen_data(args: GenDataArgs, cfg: &FileConfig, master: u64) -> Result<()> {
    let s = Some("synth");
    let spec = tlce::data::SynthSpec {
        num_classes: resolve(args.classes, cfg.usize(s, "classes")?, 100),
        feature_dim: resolve(args.dim, cfg.usize(s, "dim")?, 64),
        train_per_class: resolve(args.train_per_class, cfg.usize(s, "train_per_class")?, 50),
        test_per_class: resolve(args.test_per_class, cfg.usize(s, "test_per_class")?, 20),
        cluster_std: resolve(args.cluster_std, cfg.f64(s, "cluster_std")?, 1.0),
        min_center_separation: resolve(args.separation, cfg.f64(s, "separation")?, 8.0),
        seed: seeds::derive(master, "synth"),
    };
    let out = resolve_required(
        args.out,
        cfg.path(Some("paths"), "data")?,
        "output path (--out)",
    )?;
    let data = tlce::data::generate_synth(&spec)?;
    io::save_dataset(&data, &out)?;
    println!(
        "wrote {} ({} classes × ({} train + {} test) × dim {})",
        out.display(),
        spec.num_classes,
        spec.train_per_class,
        spec.test_per_class,
        spec.feature_dim
    );
    Ok(())
}

fn cmd_train(args: TrainArgs, cfg: &FileConfig, master: u64) -> Result<()> {
    let dataset = load_dataset_arg(args.data, cfg)?;
    let protocol = protocol_spec(&args.protocol, cfg, master)?;
    let sessions = split_sessions(&dataset, &protocol)?;
    let base = &sessions[0];
    let classes = base.classes.len();

    let m = Some("model");
    let hidden = match &args.hidden {
        Some(h) => parse_hidden(h)?,
        None => parse_hidden(&cfg.string(m, "hidden")?.unwrap_or_else(|| "64".into()))?,
    };
    let arch = ArchitectureSpec::new(
        dataset.feature_dim,
        hidden,
        resolve(args.feature_dim, cfg.usize(m, "feature_dim")?, 64),
        resolve(args.embed_dim, cfg.usize(m, "embed_dim")?, 512),
    )?;

    let t = Some("train");
    let stage = args.which;
    let train_cfg = TrainConfig {
        learning_rate: resolve(args.learning_rate, cfg.f64(t, "learning_rate")?, 0.01),
        batch_size: resolve(args.batch_size, cfg.usize(t, "batch_size")?, 128),
        epochs: resolve(args.epochs, cfg.usize(t, "epochs")?, 120),
        seed: seeds::derive(master, &format!("train-{}", stage.name())),
        momentum: args.momentum.or(cfg.f64(t, "momentum")?),
    };
    train_cfg.validate()?;

    let default_out_key = match stage {
        Stage::RhdPretrain => "rhd_pretrain",
        Stage::RhdMeta => "rhd",
        Stage::Tkn => "tkn",
    };
    let out = resolve_required(
        args.out,
        cfg.path(Some("paths"), default_out_key)?,
        "checkpoint output (--out)",
    )?;

    let mut logger = TrainLogger::stderr();
    let trained = match stage {
        Stage::RhdPretrain => {
            let params = init_params(
                &arch,
                HeadSpec::PlainCe { classes },
                seeds::derive(master, "init-rhd"),
            )?;
            pretrain_ce(params, base, &train_cfg, &mut logger)?
        }
        Stage::RhdMeta => {
            let init = args
                .init
                .or(cfg.path(Some("paths"), "rhd_pretrain")?)
                .ok_or_else(|| {
                    Error::Dependency(
                        "rhd-meta needs an rhd-pretrain checkpoint: pass --init or set \
                         [paths] rhd_pretrain"
                            .into(),
                    )
                })?;
            let params = load_checkpoint(&init, "rhd-pretrain")?;
            let episodes = resolve(args.episodes, cfg.usize(t, "episodes")?, 200);
            let sharp = SharpeningConfig {
                beta: resolve(args.beta, cfg.f64(t, "beta")?, 10.0),
            };
            meta_train_rhd(
                params,
                base,
                &train_cfg,
                &sharp,
                protocol.shot,
                episodes,
                &mut logger,
            )?
        }
        Stage::Tkn => {
            let params = init_params(
                &arch,
                HeadSpec::Cosine { classes },
                seeds::derive(master, "init-tkn"),
            )?;
            train_tkn(params, base, &train_cfg, &mut logger)?
        }
    };
    io::save_params(&trained, &out)?;
    println!("wrote checkpoint {}", out.display());
    Ok(())
}

struct RunInputs {
    sessions: Vec<tlce::data::SessionDataset>,
    rhd: NetworkParams,
    tkn: NetworkParams,
    spec: ProtocolSpec,
    out: PathBuf,
}

fn run_inputs(args: &mut RunArgs, cfg: &FileConfig, master: u64) -> Result<RunInputs> {
    let dataset = load_dataset_arg(args.data.take(), cfg)?;
    let spec = protocol_spec(&args.protocol, cfg, master)?;
    let sessions = split_sessions(&dataset, &spec)?;
    let rhd_path = resolve_required(
        args.rhd.take(),
        cfg.path(Some("paths"), "rhd")?,
        "RHD checkpoint (--rhd)",
    )?;
    let tkn_path = resolve_required(
        args.tkn.take(),
        cfg.path(Some("paths"), "tkn")?,
        "TKN checkpoint (--tkn)",
    )?;
    Ok(RunInputs {
        sessions,
        rhd: load_checkpoint(&rhd_path, "rhd")?,
        tkn: load_checkpoint(&tkn_path, "tkn")?,
        spec,
        out: out_dir(args.out.take(), cfg)?,
    })
}

fn ensemble_config(flag: Option<f64>, cfg: &FileConfig) -> Result<EnsembleConfig> {
    EnsembleConfig::new(resolve(flag, cfg.f64(Some("ensemble"), "lambda")?, 0.8))
}

fn cmd_run(mut args: RunArgs, cfg: &FileConfig, master: u64) -> Result<()> {
    let ens = ensemble_config(args.lambda, cfg)?;
    let inputs = run_inputs(&mut args, cfg, master)?;
    let artifacts = run_protocol(
        &inputs.sessions,
        &inputs.rhd,
        &inputs.tkn,
        &ens,
        &inputs.spec,
    )?;

    std::fs::create_dir_all(&inputs.out)?;
    let mut metrics = Vec::new();
    write_metrics_csv(&artifacts.summary, &mut metrics)?;
    std::fs::write(inputs.out.join("metrics.csv"), metrics)?;

    let mut preds = Vec::new();
    write_predictions_csv(&artifacts.predictions, &mut preds)?;
    std::fs::write(inputs.out.join("predictions.csv"), preds)?;

    let table = render_run_table(&artifacts.summary);
    std::fs::write(inputs.out.join("report.txt"), &table)?;
    print!("{table}");
    println!(
        "average acc {:.4}, final session acc {:.4} (λ = {})",
        artifacts.summary.average_acc, artifacts.summary.final_session_acc, ens.lambda
    );
    println!("reports written to {}", inputs.out.display());
    Ok(())
}

fn cmd_sweep(mut args: SweepArgs, cfg: &FileConfig, master: u64) -> Result<()> {
    let lambdas = match &args.lambdas {
        Some(s) => parse_lambdas(s)?,
        None => match cfg.string(Some("sweep"), "lambdas")? {
            Some(s) => parse_lambdas(&s)?,
            None => (0..=10).map(|i| i as f64 / 10.0).collect(),
        },
    };
    let inputs = run_inputs(&mut args.run, cfg, master)?;
    let points = lambda_sweep(
        &inputs.sessions,
        &inputs.rhd,
        &inputs.tkn,
        &inputs.spec,
        &lambdas,
    )?;

    std::fs::create_dir_all(&inputs.out)?;
    let mut csv = Vec::new();
    write_sweep_csv(&points, &mut csv)?;
    std::fs::write(inputs.out.join("sweep.csv"), csv)?;
    print!("{}", render_sweep_table(&points));
    println!("sweep written to {}", inputs.out.display());
    Ok(())
}

fn cmd_ablation(mut args: AblationArgs, cfg: &FileConfig, master: u64) -> Result<()> {
    let ens = ensemble_config(args.run.lambda.take(), cfg)?;
    let tkn_plain_path = resolve_required(
        args.tkn_plain,
        cfg.path(Some("paths"), "tkn_plain")?,
        "plain-CE transfer checkpoint (--tkn-plain)",
    )?;
    let tkn_plain = load_checkpoint(&tkn_plain_path, "tkn-plain")?;
    let inputs = run_inputs(&mut args.run, cfg, master)?;
    let report = ablation_run(
        &inputs.sessions,
        &inputs.rhd,
        &inputs.tkn,
        &tkn_plain,
        &ens,
        &inputs.spec,
    )?;

    std::fs::create_dir_all(&inputs.out)?;
    let mut csv = Vec::new();
    write_ablation_csv(&report, &mut csv)?;
    std::fs::write(inputs.out.join("ablation.csv"), csv)?;
    print!("{}", render_ablation_table(&report));

    let baseline = resolve(
        args.baseline,
        cfg.string(Some("report"), "baseline")?,
        "rhd".into(),
    );
    for ours in ["rhd+tkn-plain", "rhd+tkn-cosine"] {
        if let Some(improv) = report.final_improvement(ours, &baseline) {
            println!(
                "final improvement of {ours} over {baseline}: {:+.2}",
                improv * 100.0
            );
        }
    }
    println!("ablation written to {}", inputs.out.display());
    Ok(())
}

fn cmd_inspect(path: &Path) -> Result<()> {
    let bytes = std::fs::read(path)?;
    match io::identify(&bytes)? {
        io::FileKind::Dataset => {
            let data = io::dataset_from_bytes(&bytes)?;
            println!(
                "dataset: {} classes, feature dim {}",
                data.num_classes(),
                data.feature_dim
            );
            let train: usize = data.classes.iter().map(|c| c.train.len()).sum();
            let test: usize = data.classes.iter().map(|c| c.test.len()).sum();
            println!("samples: {train} train, {test} test");
            for c in data.classes.iter().take(10) {
                println!(
                    "  class {:>4}: {} train, {} test",
                    c.class_id,
                    c.train.len(),
                    c.test.len()
                );
            }
            if data.num_classes() > 10 {
                println!("  … {} more classes", data.num_classes() - 10);
            }
        }
        io::FileKind::Params => {
            let p = io::params_from_bytes(&bytes)?;
            println!(
                "parameter checkpoint: input {}, hidden {:?}, feature {}, embedding {}",
                p.arch.input_dim, p.arch.hidden_layers, p.arch.feature_dim, p.arch.embedding_dim
            );
            match &p.head {
                None => println!("head: none (embedding only)"),
                Some(tlce::model::Head::PlainCe { weight, .. }) => {
                    println!("head: plain cross-entropy, {} classes", weight.shape()[0])
                }
                Some(tlce::model::Head::Cosine { weight }) => {
                    println!("head: cosine, {} classes", weight.shape()[0])
                }
            }
            let total: usize = p.param_tensors().iter().map(|t| t.numel()).sum();
            println!("tensors:");
            for t in p.param_tensors() {
                println!("  {:?}", t.shape());
            }
            println!("total parameters: {total}");
        }
        io::FileKind::Memory => {
            let em = io::memory_from_bytes(&bytes)?;
            println!("memory checkpoint: {} class prototypes", em.len());
            for e in em.entries().iter().take(20) {
                println!(
                    "  class {:>4} (session {}): rhd dim {}, tkn dim {}",
                    e.class_id,
                    e.session_introduced,
                    e.proto_rhd.numel(),
                    e.proto_tkn.numel()
                );
            }
            if em.len() > 20 {
                println!("  … {} more entries", em.len() - 20);
            }
        }
    }
    Ok(())
}
