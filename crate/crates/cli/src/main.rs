use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hjreg_cli::{config, run, Kind};

#[derive(Parser)]
#[command(name = "hjreg", version, about = "Experiments on discounted Hamilton-Jacobi equations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Action minimization against closed forms and finite differences.
    Fundamental(Common),
    /// Lax-Oleinik operators and the localization constant.
    Operators(Common),
    /// Value iteration for the discounted equation.
    Discounted(Common),
    /// Intrinsic regularization sweep and gradient limits.
    Regularize(Common),
    /// Propagation of a singularity along maximizers.
    Singularity(Common),
    /// Regularity probes of the fundamental solution over a catalog.
    Propcheck(Common),
    /// Exploratory sweep of the gradient limit over discount rates.
    LambdaSweep(Common),
}

#[derive(Args)]
struct Common {
    /// TOML experiment description.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (defaults to `out/<experiment>`).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for parallel sections.
    #[arg(long)]
    threads: Option<usize>,
    /// Override an acceptance bound, `NAME=VALUE`.
    #[arg(long = "tol", value_name = "K=V")]
    tols: Vec<String>,
    /// Override any config value by dotted path, `a.b=VALUE`.
    #[arg(long = "set", value_name = "K=V")]
    sets: Vec<String>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, common) = match cli.command {
        Command::Fundamental(c) => (Kind::Fundamental, c),
        Command::Operators(c) => (Kind::Operators, c),
        Command::Discounted(c) => (Kind::Discounted, c),
        Command::Regularize(c) => (Kind::Regularize, c),
        Command::Singularity(c) => (Kind::Singularity, c),
        Command::Propcheck(c) => (Kind::Propcheck, c),
        Command::LambdaSweep(c) => (Kind::LambdaSweep, c),
    };
    if let Some(n) = common.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("cannot size the thread pool: {e}");
        }
    }
    let out = common
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("out").join(kind.name()));
    let cfg = config::load(common.config.as_deref(), kind, &common.sets, &common.tols, common.seed);
    let summary = run(kind, cfg, &out);
    let m = &summary.manifest;
    match &m.error {
        Some(e) => eprintln!("{kind}: {} ({e})", m.status),
        None => eprintln!("{kind}: ok, artifacts in {}", summary.out_dir.display()),
    }
    for c in &m.checks {
        eprintln!(
            "  [{}] {} = {} {} {}",
            if c.passed { "pass" } else { "FAIL" },
            c.name,
            c.value,
            c.relation,
            c.bound
        );
    }
    ExitCode::from(summary.exit_code as u8)
}
