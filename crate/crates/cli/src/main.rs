use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use lumitex_cli::stages::{run_stage, Context, ORDER};
use lumitex_cli::{CliError, PipelineConfig};

/// Texture a mesh from one reference image: generate multi-view PBR images,
/// inpaint unseen regions by view synthesis, bake and evaluate.
#[derive(Parser, Debug)]
#[command(name = "lumitex", version)]
struct Args {
    /// One of the pipeline stages, or `pipeline` to run them all in order.
    #[arg(value_parser = stage_names())]
    stage: String,
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker cap. Every stage is single-threaded, so 1 changes nothing.
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn stage_names() -> Vec<&'static str> {
    ORDER.iter().copied().chain(["pipeline"]).collect()
}

fn context(args: &Args) -> Result<Context, CliError> {
    let mut cfg = PipelineConfig::load(&args.config)?;
    // Flags beat environment variables beat the config file.
    if let Ok(out) = std::env::var("LUMITEX_OUT") {
        cfg.out_dir = out.into();
    }
    if let Ok(t) = std::env::var("LUMITEX_THREADS") {
        cfg.threads = t.parse().map_err(|_| CliError::Config(format!("LUMITEX_THREADS = {t:?} is not a count")))?;
    }
    if let Some(out) = &args.out {
        cfg.out_dir = out.clone();
    }
    if let Some(t) = args.threads {
        cfg.threads = t;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(Context::new(cfg))
}

fn run(args: &Args) -> Result<(), CliError> {
    let ctx = context(args)?;
    if args.stage == "pipeline" {
        ORDER.iter().try_for_each(|s| run_stage(s, &ctx))
    } else {
        run_stage(&args.stage, &ctx)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = Args::parse();
    match run(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("lumitex {}: {e}", args.stage);
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
