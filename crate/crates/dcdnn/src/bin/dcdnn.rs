use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dcdnn::config::{RunConfig, CONFIG_ENV};
use dcdnn::pipeline::{self, EvalSource};
use dcdnn::selftest;

#[derive(Parser)]
#[command(name = "dcdnn", version, about = "Data-clustering-driven neural intra prediction")]
struct Cli {
    /// key = value config file (default: $DCDNN_CONFIG if set)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. --set modes=4 (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Worker threads; 1 for strictly sequential execution
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Initialize weights with unit standard deviation instead of 1/sqrt(fan-in)
    #[arg(long, global = true)]
    paper_init: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ExtractArgs {
    /// PGM/PNG files, directories, or .txt lists of images
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Reconstructed planes to take reference samples from, one per input
    #[arg(long, num_args = 1..)]
    references: Vec<PathBuf>,
    /// Uniform TU size; shorthand for --tiling uniform-N
    #[arg(long)]
    block_size: Option<usize>,
    #[arg(long)]
    ref_lines: Option<usize>,
    #[arg(long)]
    pu_size: Option<usize>,
    /// uniform-N or mixed64
    #[arg(long)]
    tiling: Option<String>,
    /// on or off
    #[arg(long)]
    filter: Option<String>,
    #[arg(long)]
    stride: Option<usize>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    models: PathBuf,
    #[arg(long, conflicts_with = "image", required_unless_present = "image")]
    dataset: Option<PathBuf>,
    #[arg(long, num_args = 1..)]
    image: Vec<PathBuf>,
    /// TU size for image evaluation
    #[arg(long)]
    block_size: Option<usize>,
    #[arg(long)]
    qp: Option<f64>,
    #[arg(long)]
    lambda_override: Option<f64>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Build a .dcds dataset from images
    Extract(ExtractArgs),
    /// Train the root mode on a dataset
    Pretrain {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Double a model bank by mirrored perturbation
    Split {
        #[arg(long)]
        models: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        kappa: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Partition/train rounds, splitting until the target mode count
    Train {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        models: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        modes: Option<usize>,
        #[arg(long)]
        rounds: Option<usize>,
    },
    /// Mode decisions, usage rates and histograms
    Evaluate(EvaluateArgs),
    /// Rebuild report tables from training/evaluation directories
    Report {
        #[arg(required = true)]
        run_dirs: Vec<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Gradient-check and split-symmetry suites
    Selftest {
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Every stage from images to report
    Run {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Write synthetic texture images with known labels
    Synth {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 2)]
        families: usize,
        #[arg(long, default_value_t = 4)]
        images: usize,
        #[arg(long, default_value_t = 128)]
        size: usize,
        #[arg(long, default_value_t = 16)]
        tile: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

fn load_config(cli: &Cli) -> anyhow::Result<RunConfig> {
    let path = cli.config.clone().or_else(|| std::env::var_os(CONFIG_ENV).map(PathBuf::from));
    let mut cfg = match path {
        Some(p) => RunConfig::load(&p)?,
        None => RunConfig::default(),
    };
    cfg.apply_overrides(&cli.overrides)?;
    if cli.paper_init {
        cfg.set("init", "unit")?;
    }
    Ok(cfg)
}

fn set<T: ToString>(cfg: &mut RunConfig, key: &str, v: &Option<T>) -> anyhow::Result<()> {
    if let Some(v) = v {
        cfg.set(key, &v.to_string())?;
    }
    Ok(())
}

fn selftest(seed: u64) -> bool {
    let g = selftest::gradient_check(seed, 50);
    let g_ok = g.max_rel_error <= 1e-4 && g.negative_branch > 0 && g.positive_branch > 0;
    println!(
        "gradient check: {} nets, {} params, max rel error {:.3e}, PReLU branches -{} / +{} ... {}",
        g.networks,
        g.parameters,
        g.max_rel_error,
        g.negative_branch,
        g.positive_branch,
        if g_ok { "ok" } else { "FAILED" }
    );
    let s = selftest::split_symmetry(seed, 100);
    let s_ok = s.max_mirror_error <= 1e-12 && s.zero_kappa_identical;
    println!(
        "split symmetry: {} parents, max mirror error {:.3e}, kappa=0 identical {} ... {}",
        s.parents,
        s.max_mirror_error,
        s.zero_kappa_identical,
        if s_ok { "ok" } else { "FAILED" }
    );
    g_ok && s_ok
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    if let Some(n) = cli.threads {
        if n == 0 {
            anyhow::bail!("--threads must be >= 1");
        }
        #[cfg(feature = "parallel")]
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let mut cfg = load_config(&cli)?;
    match &cli.command {
        Command::Extract(a) => {
            if let Some(n) = a.block_size {
                if a.tiling.is_some() {
                    anyhow::bail!("--block-size and --tiling are mutually exclusive");
                }
                cfg.set("tiling", &format!("uniform-{n}"))?;
            }
            set(&mut cfg, "tiling", &a.tiling)?;
            set(&mut cfg, "ref_lines", &a.ref_lines)?;
            set(&mut cfg, "pu_size", &a.pu_size)?;
            set(&mut cfg, "filter", &a.filter)?;
            set(&mut cfg, "stride", &a.stride)?;
            pipeline::extract(&cfg, &a.inputs, &a.references, &a.out)?;
        }
        Command::Pretrain { dataset, out_dir } => {
            pipeline::pretrain(&cfg, dataset, out_dir)?;
        }
        Command::Split { models, out, kappa, seed } => {
            set(&mut cfg, "kappa", kappa)?;
            set(&mut cfg, "split_seed", seed)?;
            pipeline::split(&cfg, models, out)?;
        }
        Command::Train {
            dataset,
            models,
            out_dir,
            modes,
            rounds,
        } => {
            set(&mut cfg, "modes", modes)?;
            set(&mut cfg, "rounds", rounds)?;
            pipeline::train(&cfg, dataset, models.as_deref(), out_dir)?;
        }
        Command::Evaluate(a) => {
            set(&mut cfg, "qp", &a.qp)?;
            set(&mut cfg, "lambda", &a.lambda_override)?;
            let source = match &a.dataset {
                Some(d) => EvalSource::Dataset(d),
                None => EvalSource::Images(&a.image),
            };
            let s = pipeline::evaluate(&cfg, &a.models, source, a.block_size, &a.out_dir)?;
            println!(
                "{} blocks, {} learned, usage rate {}",
                s.decisions,
                s.dcdnn_decisions,
                s.usage_rate.map_or("-".into(), |v| v.to_string())
            );
        }
        Command::Report { run_dirs, out_dir } => {
            pipeline::report(&cfg, run_dirs, out_dir)?;
        }
        Command::Selftest { seed } => return Ok(selftest(*seed)),
        Command::Run { inputs, out_dir } => {
            let s = pipeline::run_all(&cfg, inputs, out_dir)?;
            println!(
                "final mean retention {}, usage rate {}",
                s.final_mean_retention.map_or("-".into(), |v| v.to_string()),
                s.usage_rate.map_or("-".into(), |v| v.to_string())
            );
        }
        Command::Synth {
            out_dir,
            families,
            images,
            size,
            tile,
            seed,
        } => {
            let paths = pipeline::synth(out_dir, *families, *images, *size, *tile, *seed)?;
            println!("wrote {} images to {}", paths.len(), Path::new(out_dir).display());
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
