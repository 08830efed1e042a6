//! `iflat`: batch front-end for the flat-distance bound pipeline.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use iflat_core::families::FamilyKind;

use commands::{Ctx, Outcome};
use config::ExperimentConfig;
use output::Failure;

#[derive(Parser)]
#[command(name = "iflat", version, about = "Intrinsic flat distance upper bounds for metric families")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Global {
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    cache_dir: Option<PathBuf>,
    /// Disable the on-disk cache even when a directory is configured.
    #[arg(long, global = true)]
    no_cache: bool,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true)]
    resolution: Option<usize>,
    #[arg(long, global = true)]
    stencil: Option<usize>,
    /// Family member(s), comma separated.
    #[arg(long, global = true, value_delimiter = ',')]
    j: Option<Vec<u32>>,
    #[arg(long, global = true, value_delimiter = ',')]
    kappa: Option<Vec<f64>>,
    #[arg(long = "lambda-prime", global = true, value_delimiter = ',')]
    lambda_prime: Option<Vec<f64>>,
    /// Family kind, e.g. ilmanen, finsler-torus, round-sphere.
    #[arg(long, global = true, value_parser = parse_kind)]
    family: Option<FamilyKind>,
}

fn parse_kind(s: &str) -> Result<FamilyKind, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|_| {
        "expected one of ilmanen, cinched-sphere, finsler-torus, sphere-bulge, round-sphere, flat-torus".to_string()
    })
}

#[derive(Subcommand)]
enum Command {
    /// Optimized bound sweep over j: report.json, series.csv, summary.txt.
    Run,
    /// Build charts and graphs; report sizes and refinement.
    MeshBuild,
    /// Landmark distance tables under g_0 and g_j.
    Dist,
    /// Total volumes under g_0 and g_j.
    Volume,
    /// Good-set selection at the first (κ, λ') with lemma checks.
    Goodset,
    /// Certify the Z-space embedding.
    ZspaceVerify {
        /// Also run the halved-height adversarial check.
        #[arg(long)]
        adversarial: bool,
    },
    /// Optimized pipeline bound per j.
    Flatbound,
    /// Volume-to-length chain on symmetric tubes.
    Tubes,
    /// Worked examples.
    Example {
        #[arg(value_enum)]
        name: ExampleName,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ExampleName {
    Ilmanen,
    FinslerTorus,
}

fn resolve(g: &Global, command: &Command) -> Result<ExperimentConfig, Failure> {
    let forced = match command {
        Command::Example { name: ExampleName::Ilmanen } => Some(FamilyKind::Ilmanen),
        Command::Example { name: ExampleName::FinslerTorus } => Some(FamilyKind::FinslerTorus),
        _ => None,
    };
    let mut cfg = match &g.config {
        Some(path) => ExperimentConfig::load(path).map_err(Failure::BadInput)?,
        None => {
            let kind = forced.or(g.family).unwrap_or(FamilyKind::Ilmanen);
            let js = match command {
                Command::Example { .. } => vec![4],
                _ => vec![1, 2, 4, 8],
            };
            ExperimentConfig::new(kind, js)
        }
    };
    if let Some(k) = forced.or(g.family) {
        cfg.family.kind = k;
    }
    if let Some(j) = &g.j {
        cfg.family.j = j.clone();
    }
    if let Some(s) = g.seed {
        cfg.pipeline.seed = s;
    }
    if let Some(o) = &g.out {
        cfg.output.dir = o.clone();
    }
    if let Some(c) = &g.cache_dir {
        cfg.output.cache_dir = Some(c.clone());
    }
    if g.no_cache {
        cfg.output.cache = config::CachePolicy::Off;
    }
    if let Some(r) = g.resolution {
        cfg.discretization.resolution = r;
    }
    if let Some(s) = g.stencil {
        cfg.discretization.stencil = s;
    }
    if let Some(k) = &g.kappa {
        cfg.pipeline.kappa = k.clone();
    }
    if let Some(l) = &g.lambda_prime {
        cfg.pipeline.lambda_prime = l.clone();
    }
    cfg.validate().map_err(Failure::BadInput)?;
    Ok(cfg)
}

fn execute(cli: &Cli) -> Result<Outcome, Failure> {
    let cfg = resolve(&cli.global, &cli.command)?;
    if let Some(n) = cli.global.threads {
        if n == 0 {
            return Err(Failure::BadInput("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let ctx = Ctx::new(cfg)?;
    match &cli.command {
        Command::Run => commands::run(&ctx),
        Command::MeshBuild => commands::mesh_build(&ctx),
        Command::Dist => commands::dist(&ctx),
        Command::Volume => commands::volume(&ctx),
        Command::Goodset => commands::goodset(&ctx),
        Command::ZspaceVerify { adversarial } => commands::zspace_verify(&ctx, *adversarial),
        Command::Flatbound => commands::flatbound(&ctx),
        Command::Tubes => commands::tubes(&ctx),
        Command::Example { name: ExampleName::Ilmanen } => commands::example_ilmanen(&ctx),
        Command::Example { name: ExampleName::FinslerTorus } => commands::example_finsler(&ctx),
    }
    .map(|mut o| {
        o.out_dir = Some(ctx.cfg.output.dir.clone());
        o
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(4) } else { ExitCode::SUCCESS };
        }
    };
    let outcome = match execute(&cli) {
        Ok(o) => o,
        Err(f) => {
            eprintln!("iflat: {}: {f}", f.status());
            return ExitCode::from(f.code() as u8);
        }
    };
    let dir = outcome.out_dir.clone().unwrap_or_default();
    if let Err(e) = outcome.artifacts.write(&dir) {
        eprintln!("iflat: cannot write {}: {e}", dir.display());
        return ExitCode::from(1);
    }
    print!("{}", outcome.stdout);
    println!("wrote {} to {}", outcome.artifacts.names().collect::<Vec<_>>().join(", "), dir.display());
    match outcome.failure {
        None => ExitCode::SUCCESS,
        Some(f) => {
            eprintln!("iflat: {}: {f}", f.status());
            ExitCode::from(f.code() as u8)
        }
    }
}
