use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use barodesy::pipeline::{self, Config};
use clap::{Args, Parser, Subcommand};

/// Generate barodesy oedometer datasets, train the PCA-NN parameter identifier,
/// test it and verify identified parameters by re-simulation.
#[derive(Parser, Debug)]
#[command(name = "barodesy", version)]
struct Cli {
    #[command(flatten)]
    common: Common,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// `key = value` config file; later files override earlier ones.
    #[arg(long, global = true, value_name = "PATH")]
    config: Vec<PathBuf>,

    /// Override a single config key, e.g. `--set pca_k=40`. Applied after files.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,

    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for generation and verification (0 = all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample parameters and simulate their oedometer curves.
    Gen {
        /// Dataset file to write.
        #[arg(long)]
        out: PathBuf,
        /// Number of samples.
        #[arg(long)]
        n: Option<usize>,
    },
    /// Fit PCA and the network on the training split.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint file to write.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        /// Train on raw parameter values.
        #[arg(long)]
        no_scaling: bool,
    },
    /// Evaluate a checkpoint on the held-out split.
    Test {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// Output directory for reports.
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-simulate held-out samples with identified parameters.
    Verify {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// Output directory for curves and the report.
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated sample ids; seeded random picks when absent.
        #[arg(long, value_delimiter = ',')]
        ids: Option<Vec<usize>>,
        /// Headline error norm: pointwise or global.
        #[arg(long)]
        rel_norm: Option<String>,
    },
    /// Tabulate metrics of one or more run manifests.
    Report {
        #[arg(required = true)]
        manifests: Vec<PathBuf>,
        /// Also write the table as CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn config(common: &Common, extra: &[(&str, Option<String>)]) -> anyhow::Result<Config> {
    let mut cfg = Config::default();
    for path in &common.config {
        cfg.merge_file(path)?;
    }
    for assignment in &common.set {
        cfg.apply_override(assignment)?;
    }
    let flags = [
        ("seed", common.seed.map(|s| s.to_string())),
        ("workers", common.workers.map(|w| w.to_string())),
    ];
    for (key, value) in flags.iter().chain(extra) {
        if let Some(v) = value {
            cfg.set(key, v)?;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let common = &cli.common;
    match cli.command {
        Command::Gen { out, n } => {
            let cfg = config(common, &[("n_samples", n.map(|n| n.to_string()))])?;
            println!("{}", pipeline::cmd_gen(&cfg, &out)?);
        }
        Command::Train {
            data,
            out,
            epochs,
            no_scaling,
        } => {
            let cfg = config(
                common,
                &[
                    ("epochs", epochs.map(|e| e.to_string())),
                    ("scaling", no_scaling.then(|| "none".to_string())),
                ],
            )?;
            println!("{}", pipeline::cmd_train(&cfg, &data, &out)?);
        }
        Command::Test { data, model, out } => {
            let cfg = config(common, &[])?;
            println!("{}", pipeline::cmd_test(&cfg, &data, &model, &out)?);
        }
        Command::Verify {
            data,
            model,
            out,
            ids,
            rel_norm,
        } => {
            let cfg = config(common, &[("rel_norm", rel_norm)])?;
            println!("{}", pipeline::cmd_verify(&cfg, &data, &model, &out, ids.as_deref())?);
        }
        Command::Report { manifests, out } => {
            let report = pipeline::cmd_report(&manifests)?;
            println!("{}", report.to_text());
            if let Some(path) = out {
                write_csv(&path, |w| report.write_csv(w))?;
            }
        }
    }
    Ok(())
}

fn write_csv(path: &Path, body: impl FnOnce(&mut BufWriter<File>) -> io::Result<()>) -> anyhow::Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    body(&mut w)
        .and_then(|_| w.flush())
        .with_context(|| format!("writing {}", path.display()))
}

/// 2 usage, 3 data or format, 4 numerical; unclassified failures count as data errors.
fn exit_code(err: &anyhow::Error) -> u8 {
    err.chain()
        .find_map(|e| e.downcast_ref::<barodesy::Error>())
        .map_or(3, |e| e.exit_code() as u8)
}

/// The error chain, skipping causes whose text the outer message already repeats.
fn describe(err: &anyhow::Error) -> String {
    let mut msg = err.to_string();
    for cause in err.chain().skip(1) {
        let text = cause.to_string();
        if !msg.contains(&text) {
            msg = format!("{msg}: {text}");
        }
    }
    msg
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}
