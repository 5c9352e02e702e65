use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use infoloss::experiment::{catalog, load_config, run_experiment, sweep, write_outputs, RunReport};
use infoloss::Error;

/// Worker threads for the parallel stages. Results never depend on it.
const WORKERS_ENV: &str = "INFOLOSS_WORKERS";

#[derive(Parser)]
#[command(name = "infoloss", version, about = "Information loss of static systems from Monte Carlo samples")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write <output>.csv and <output>.json.
    Run {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Output path prefix, overriding the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the config once per value of a parameter given as a dotted path
    /// (e.g. `system.c`).
    Sweep {
        config: PathBuf,
        #[arg(long)]
        param: String,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List the built-in systems and inputs with their closed-form losses.
    Catalog,
}

fn summary(r: &RunReport) {
    let l = &r.loss;
    println!(
        "{}: relative loss {:.4} (ratio {:.4}), d(X) {:.4}, analytic {}, absolute {}{}",
        r.config.id,
        l.relative.slope,
        l.relative.ratio,
        l.relative.marginal.slope,
        l.analytic.map_or_else(|| "n/a".to_string(), |a| format!("{a:.4}")),
        l.absolute.label(),
        r.fano
            .as_ref()
            .map_or_else(String::new, |f| format!(", Pe {:.4} (bound {})", f.pe_max, if f.satisfied { "holds" } else { "VIOLATED" })),
    );
}

fn run(command: Command) -> Result<(), Error> {
    match command {
        Command::Run { config, seed, out } => {
            let mut cfg = load_config(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let report = run_experiment(&cfg).map_err(|e| e.context(cfg.id.clone()))?;
            let prefix = out.unwrap_or_else(|| cfg.output_prefix());
            let (csv, json) = write_outputs(std::slice::from_ref(&report), &prefix, None)?;
            summary(&report);
            eprintln!("wrote {} and {}", csv.display(), json.display());
            Ok(())
        }
        Command::Sweep {
            config,
            param,
            values,
            seed,
            out,
        } => {
            let text = std::fs::read_to_string(&config).map_err(|e| Error::from(e).context(config.display().to_string()))?;
            let base = load_config(&config)?;
            let outcome = sweep(&text, &param, &values, seed)?;
            let prefix = out.unwrap_or_else(|| {
                let p = base.output_prefix();
                let name = format!("{}-sweep-{}", p.file_name().unwrap_or_default().to_string_lossy(), param);
                p.with_file_name(name)
            });
            for r in &outcome.reports {
                summary(r);
            }
            let trailer = outcome
                .failure
                .as_ref()
                .map(|(v, e)| format!("sweep aborted at {param}={v}: {e}"));
            let (csv, json) = write_outputs(&outcome.reports, &prefix, trailer.as_deref())?;
            eprintln!("wrote {} and {}", csv.display(), json.display());
            match outcome.failure {
                Some((_, e)) => Err(e),
                None => Ok(()),
            }
        }
        Command::Catalog => {
            let rows: Vec<[String; 4]> = catalog()
                .into_iter()
                .map(|e| {
                    [
                        e.name.to_string(),
                        e.system.label(),
                        e.distribution.label(),
                        e.analytic.map_or_else(|| "n/a".to_string(), |a| format!("{a:.6}")),
                    ]
                })
                .collect();
            let header = ["name", "system", "distribution", "analytic"].map(String::from);
            let width = |c: usize| rows.iter().chain([&header]).map(|r| r[c].chars().count()).max().unwrap_or(0);
            let (w0, w1, w2) = (width(0), width(1), width(2));
            for r in std::iter::once(&header).chain(&rows) {
                println!("{:<w0$}  {:<w1$}  {:<w2$}  {}", r[0], r[1], r[2], r[3]);
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Ok(v) = std::env::var(WORKERS_ENV) {
        match v.parse::<usize>() {
            Ok(n) if n > 0 => {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            _ => {
                eprintln!("error: {WORKERS_ENV} must be a positive integer, got {v:?}");
                return ExitCode::from(2);
            }
        }
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.root() {
                Error::Config(_) => 2,
                _ => 1,
            })
        }
    }
}
