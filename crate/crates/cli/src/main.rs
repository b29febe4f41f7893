//! `apl-mdd`: synthesize corpora, train, decode, score and compare variants.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 numeric failure.

mod commands;
mod config;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use apl_mdd::Error;
use clap::{Args, Parser, Subcommand};

use config::RunConfig;

const THREADS_VAR: &str = "APL_MDD_THREADS";

#[derive(Parser)]
#[command(name = "apl-mdd", version, about = "Mispronunciation detection and diagnosis runs")]
struct Cli {
    /// `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for corpus synthesis, initialization and shuffling.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Existing directory for outputs.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Log level: error, warn, info, debug or trace.
    #[arg(long, global = true, default_value = "warn")]
    verbosity: log::LevelFilter,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Default)]
struct Settings {
    /// Extra `key=value` setting; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic corpus: manifests, matrices and inventory.
    Synth {
        #[arg(long)]
        n_utts: Option<usize>,
        #[arg(long)]
        sub_rate: Option<f64>,
        #[arg(long)]
        del_rate: Option<f64>,
        #[arg(long)]
        ins_rate: Option<f64>,
        #[arg(long)]
        n_speakers: Option<usize>,
        #[command(flatten)]
        settings: Settings,
    },
    /// Train one variant; writes best and final checkpoints and the epoch log.
    Train {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        dev_manifest: Option<PathBuf>,
        /// baseline1, AL, PL or APL.
        #[arg(long)]
        variant: Option<String>,
        #[arg(long)]
        max_epochs: Option<usize>,
        #[arg(long)]
        embeddings: Option<String>,
        #[command(flatten)]
        settings: Settings,
    },
    /// Decode a manifest with a checkpoint into `id<TAB>phones` lines.
    Infer {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        beam_width: Option<usize>,
        #[arg(long)]
        embeddings: Option<String>,
        #[command(flatten)]
        settings: Settings,
    },
    /// Score recognized sequences against a manifest.
    Score {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        recognized: Option<PathBuf>,
        #[command(flatten)]
        settings: Settings,
    },
    /// Train and score several variants on the same data.
    Ablation {
        /// Comma-separated variants.
        #[arg(long)]
        variants: Option<String>,
        /// Comma-separated seeds; one corpus and model seed per entry.
        #[arg(long)]
        seeds: Option<String>,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[command(flatten)]
        settings: Settings,
    },
}

fn put<T: ToString>(map: &mut BTreeMap<String, String>, key: &str, v: Option<T>) {
    if let Some(v) = v {
        map.insert(key.to_string(), v.to_string());
    }
}

fn shown(p: Option<PathBuf>) -> Option<String> {
    p.map(|p| p.display().to_string())
}

fn overrides(cli: &Cli) -> Result<BTreeMap<String, String>, Error> {
    let mut m = BTreeMap::new();
    let settings = match &cli.command {
        Command::Synth { n_utts, sub_rate, del_rate, ins_rate, n_speakers, settings } => {
            put(&mut m, "n_utts", *n_utts);
            put(&mut m, "sub_rate", *sub_rate);
            put(&mut m, "del_rate", *del_rate);
            put(&mut m, "ins_rate", *ins_rate);
            put(&mut m, "n_speakers", *n_speakers);
            settings
        }
        Command::Train { manifest, dev_manifest, variant, max_epochs, embeddings, settings } => {
            put(&mut m, "manifest", shown(manifest.clone()));
            put(&mut m, "dev_manifest", shown(dev_manifest.clone()));
            put(&mut m, "variant", variant.clone());
            put(&mut m, "max_epochs", *max_epochs);
            put(&mut m, "embeddings", embeddings.clone());
            settings
        }
        Command::Infer { checkpoint, manifest, beam_width, embeddings, settings } => {
            put(&mut m, "checkpoint", shown(checkpoint.clone()));
            put(&mut m, "manifest", shown(manifest.clone()));
            put(&mut m, "beam_width", *beam_width);
            put(&mut m, "embeddings", embeddings.clone());
            settings
        }
        Command::Score { manifest, recognized, settings } => {
            put(&mut m, "manifest", shown(manifest.clone()));
            put(&mut m, "recognized", shown(recognized.clone()));
            settings
        }
        Command::Ablation { variants, seeds, manifest, settings } => {
            put(&mut m, "variants", variants.clone());
            put(&mut m, "seeds", seeds.clone());
            put(&mut m, "manifest", shown(manifest.clone()));
            settings
        }
    };
    for item in &settings.set {
        let (k, v) = item
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{item}`")))?;
        m.insert(k.trim().replace('-', "_"), v.trim().to_string());
    }
    put(&mut m, "seed", cli.seed);
    Ok(m)
}

fn configure_threads() -> Result<(), Error> {
    let Ok(raw) = std::env::var(THREADS_VAR) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("{THREADS_VAR} must be a positive integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(format!("cannot size the thread pool: {e}")))
}

fn run(cli: &Cli) -> Result<(), Error> {
    configure_threads()?;
    let cfg = RunConfig::resolve(cli.config.as_deref(), &overrides(cli)?)?;
    let out: &Path = &cli.out;
    if !out.is_dir() {
        return Err(Error::Data(format!("output directory {} does not exist", out.display())));
    }
    match cli.command {
        Command::Synth { .. } => commands::synth(&cfg, out),
        Command::Train { .. } => commands::train(&cfg, out),
        Command::Infer { .. } => commands::infer(&cfg, out),
        Command::Score { .. } => commands::score(&cfg, out),
        Command::Ablation { .. } => commands::ablation(&cfg, out),
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 1,
        Error::Numeric(_) => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    env_logger::Builder::new().filter_level(cli.verbosity).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
