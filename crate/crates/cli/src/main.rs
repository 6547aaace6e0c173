//! `pixssr`: synth | train | eval | infer over a flat config file.
//!
//! Every command exits 0 on success and nonzero with a one-line diagnostic
//! on failure. The PIXSSR_SEED environment variable overrides the config
//! seed.

use clap::{Args, Parser, Subcommand};
use pixssr_core::config::{RunConfig, SpectraModel};
use pixssr_core::data::Split;
use pixssr_core::run;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "pixssr", about = "Hyperspectral reconstruction from RGB plus sparse point spectra", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// Run configuration file ("key = value" lines).
    #[arg(long)]
    config: PathBuf,
    /// Override the spectra distribution (gamma | gaussian).
    #[arg(long)]
    spectra_model: Option<String>,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a seeded synthetic dataset.
    Synth {
        #[command(flatten)]
        common: Common,
        /// Overwrite a non-empty data directory.
        #[arg(long)]
        force: bool,
    },
    /// Train a model and write checkpoints plus a step log.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate a checkpoint; reports per cube and in aggregate.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Which split to evaluate (train | val).
        #[arg(long, default_value = "val")]
        split: String,
        /// Comma-separated point-spectra ratios; one aggregate each.
        #[arg(long)]
        omegas: Option<String>,
        /// Evaluate even when the checkpoint's model structure differs.
        #[arg(long)]
        allow_mismatch: bool,
    },
    /// Reconstruct a cube from a 3-band RGB cube file.
    Infer {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Input RGB cube.
        #[arg(long)]
        input: PathBuf,
        /// Reconstructed cube destination.
        #[arg(long)]
        output: PathBuf,
        /// Ground-truth cube for error reporting.
        #[arg(long = "ref")]
        reference: Option<PathBuf>,
        /// Per-pixel RMSE map destination (requires --ref).
        #[arg(long)]
        error_map: Option<PathBuf>,
        /// Directory for prompt debug dumps.
        #[arg(long)]
        dump_prompts: Option<PathBuf>,
    },
}

fn load_config(common: &Common) -> pixssr_core::Result<RunConfig> {
    let text = std::fs::read_to_string(&common.config).map_err(|e| {
        pixssr_core::Error::Config(format!("cannot read `{}`: {e}", common.config.display()))
    })?;
    let mut cfg = RunConfig::parse(&text)?;
    let env_seed = std::env::var("PIXSSR_SEED").ok();
    cfg.apply_seed_override(env_seed.as_deref())?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(model) = &common.spectra_model {
        cfg.spectra_model = SpectraModel::parse(model)?;
    }
    Ok(cfg)
}

fn parse_split(s: &str) -> pixssr_core::Result<Split> {
    match s {
        "train" => Ok(Split::Train),
        "val" => Ok(Split::Val),
        other => Err(pixssr_core::Error::Config(format!(
            "unknown split `{other}` (expected train or val)"
        ))),
    }
}

fn parse_omegas(s: &str) -> pixssr_core::Result<Vec<f64>> {
    s.split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|e| pixssr_core::Error::Config(format!("--omegas: {e}")))
        })
        .collect()
}

fn run_cmd(cmd: Cmd) -> pixssr_core::Result<()> {
    match cmd {
        Cmd::Synth { common, force } => {
            let cfg = load_config(&common)?;
            let out = run::synth_dataset(&cfg, force)?;
            println!(
                "wrote {} train + {} val cubes, manifest at {}",
                out.n_train,
                out.n_val,
                out.manifest_path.display()
            );
        }
        Cmd::Train { common } => {
            let cfg = load_config(&common)?;
            let out = run::run_train(&cfg)?;
            for entry in &out.log {
                println!("{}", entry.line());
            }
            println!("checkpoint at {}", out.checkpoint_path.display());
        }
        Cmd::Eval {
            common,
            checkpoint,
            split,
            omegas,
            allow_mismatch,
        } => {
            let cfg = load_config(&common)?;
            let split = parse_split(&split)?;
            let omegas = match omegas {
                Some(s) => parse_omegas(&s)?,
                None => Vec::new(),
            };
            let reports = run::run_eval(&cfg, &checkpoint, split, &omegas, allow_mismatch)?;
            for r in &reports {
                println!(
                    "omega={} {} baseline_psnr_db={:.4} ({} cubes, report at {})",
                    r.omega,
                    r.aggregate.to_record(),
                    r.baseline_psnr_db,
                    r.per_cube.len(),
                    r.report_path.display()
                );
            }
        }
        Cmd::Infer {
            common,
            checkpoint,
            input,
            output,
            reference,
            error_map,
            dump_prompts,
        } => {
            let cfg = load_config(&common)?;
            if error_map.is_some() && reference.is_none() {
                return Err(pixssr_core::Error::Config(
                    "--error-map requires --ref".into(),
                ));
            }
            let out = run::run_infer(
                &cfg,
                &checkpoint,
                &input,
                &output,
                reference.as_deref(),
                error_map.as_deref(),
                dump_prompts.as_deref(),
            )?;
            println!("wrote {}", out.output_path.display());
            if let Some(rmse) = out.rmse {
                println!("rmse={rmse:.6}");
            }
            if let Some(p) = out.error_map_path {
                println!("error map at {}", p.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run_cmd(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
