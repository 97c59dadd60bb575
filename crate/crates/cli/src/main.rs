use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use cbp_cli::commands::{fit_growth_cmd, refine_cmd, simulate_cmd, smc_cmd, summarize_cmd};
use cbp_cli::config::family_text;
use cbp_cli::{CliError, RayonExecutor, Result, RunConfig};

/// Simulation and ABC inference for controlled branching processes.
#[derive(Parser, Debug)]
#[command(name = "cbp", version)]
struct Cli {
    /// Master seed; overrides `seed` in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; overrides `threads` in the config.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory; overrides `out` in the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate one path and write trajectory.csv and observations.csv.
    Simulate {
        #[arg(short, long)]
        config: PathBuf,
    },
    /// Run the first stage and write one particle archive per iteration.
    Smc {
        #[arg(short, long)]
        config: PathBuf,
    },
    /// Run the second stage on a stored archive.
    Refine {
        #[arg(short, long)]
        config: PathBuf,
        #[arg(short, long)]
        archive: PathBuf,
        /// Model to refine; defaults to the estimate read off the archive.
        #[arg(long)]
        kappa: Option<usize>,
    },
    /// Fit density-dependent growth models and rank them.
    FitGrowth {
        #[arg(short, long)]
        config: PathBuf,
    },
    /// Print a readable table for an archive, observation or output file.
    Summarize { file: PathBuf },
}

fn load(cli: &Cli, path: &Path) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(path)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(CliError::Config("--threads must be positive".into()));
        }
        cfg.threads = t;
    }
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<String> {
    let mut s = String::new();
    use std::fmt::Write as _;
    match &cli.command {
        Command::Simulate { config } => {
            let cfg = load(cli, config)?;
            let r = simulate_cmd(&cfg)?;
            writeln!(s, "generations = {}", r.sizes.len() - 1).unwrap();
            writeln!(s, "final_size = {}", r.sizes.last().expect("non-empty")).unwrap();
            if let Some(k) = r.extinct_at {
                writeln!(s, "extinct_at = {k}").unwrap();
            }
            if r.saturated {
                writeln!(s, "saturated = true").unwrap();
            }
            for f in &r.files {
                writeln!(s, "wrote {}", f.display()).unwrap();
            }
        }
        Command::Smc { config } => {
            let cfg = load(cli, config)?;
            let ex = RayonExecutor::new(cfg.threads)?;
            let r = smc_cmd(&cfg, &ex)?;
            for it in &r.iterations {
                writeln!(
                    s,
                    "iteration {}: epsilon = {}, attempts = {}",
                    it.iteration, it.epsilon, it.attempts
                )
                .unwrap();
            }
            for (k, p) in &r.kappa.pmf {
                if *p > 0.0 {
                    writeln!(s, "P(kappa = {k}) = {p:.4}").unwrap();
                }
            }
            writeln!(s, "kappa_hat = {}", r.kappa.estimate).unwrap();
        }
        Command::Refine { config, archive, kappa } => {
            let cfg = load(cli, config)?;
            let r = refine_cmd(&cfg, archive, *kappa)?;
            writeln!(s, "kappa = {}", r.output.kappa).unwrap();
            writeln!(s, "retained = {}", r.output.adjusted.rows.len()).unwrap();
            for q in &r.output.posterior.quantities {
                match &q.hpd {
                    Some(h) => writeln!(
                        s,
                        "{}: mean = {:.6}, {}% HPD = ({:.6}, {:.6})",
                        q.name,
                        q.mean,
                        h.level * 100.0,
                        h.lo,
                        h.hi
                    ),
                    None => writeln!(s, "{}: mean = {:.6}", q.name, q.mean),
                }
                .unwrap();
            }
            for f in &r.files {
                writeln!(s, "wrote {}", f.display()).unwrap();
            }
        }
        Command::FitGrowth { config } => {
            let cfg = load(cli, config)?;
            let ex = RayonExecutor::new(cfg.threads)?;
            let r = fit_growth_cmd(&cfg, &ex)?;
            for (family, fit) in &r.fits {
                match fit {
                    Ok(f) => writeln!(s, "{:<22} r2g = {:.6}", family_text(family), f.score.r2g),
                    Err(e) => writeln!(s, "{:<22} failed: {e}", family_text(family)),
                }
                .unwrap();
            }
            let best = r.best().expect("a model is selected");
            writeln!(s, "selected = {}", family_text(&best.family)).unwrap();
            if let Some(ke) = best.stage2.posterior.get("K_e") {
                writeln!(s, "K_e mean = {:.3}", ke.mean).unwrap();
            }
        }
        Command::Summarize { file } => {
            s = summarize_cmd(file)?;
        }
    }
    Ok(s)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
