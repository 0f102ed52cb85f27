use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use hembem::adaptivity::Mode;
use hembem::experiments::{eoc_of, read_results_csv, run, Problem, RunConfig};
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "hembem", version, about = "hp-adaptive BEM solver for adhesive contact with delamination")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum RunMode {
    Uniform,
    H,
    Hp,
    EpsStudy,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment sequence and write results to a directory.
    Run {
        /// TOML configuration; defaults are used for missing keys.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum)]
        mode: RunMode,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the experimental order of convergence of a results.csv column.
    Eoc {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value = "est_total")]
        field: String,
    },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run { config, mode, out } => {
            let cfg = match &config {
                Some(path) => RunConfig::load(path).with_context(|| format!("reading {}", path.display()))?,
                None => RunConfig::default(),
            };
            let problem = Problem::new(cfg)?;
            let (mode, eps_study) = match mode {
                RunMode::Uniform => (Mode::Uniform, false),
                RunMode::H => (Mode::H, false),
                RunMode::Hp => (Mode::Hp, false),
                RunMode::EpsStudy => (Mode::Uniform, true),
            };
            let output = run(&problem, Some(mode), eps_study, Some(&out))?;
            println!("iter n_elem n_dof est_total err_u_P err_lam_V eps");
            for r in &output.records {
                println!(
                    "{} {} {} {:.4e} {} {} {:.2e}",
                    r.iter,
                    r.n_elem,
                    r.n_dof,
                    r.est_total,
                    r.err_u_p.map_or("nan".into(), |v| format!("{v:.4e}")),
                    r.err_lam_v.map_or("nan".into(), |v| format!("{v:.4e}")),
                    r.eps
                );
            }
            println!("results written to {}", out.join("results.csv").display());
        }
        Command::Eoc { input, field } => {
            let records = read_results_csv(&input).with_context(|| format!("reading {}", input.display()))?;
            if records.len() < 2 {
                bail!("need at least two records, found {}", records.len());
            }
            let (steps, skipped) = eoc_of(&records, &field)?;
            if skipped > 0 {
                eprintln!("skipped {skipped} record(s) with non-positive or missing {field}");
            }
            println!("from to n_dof_from n_dof_to eoc");
            for s in steps {
                println!("{} {} {} {} {:.4}", records[s.from].iter, records[s.to].iter, records[s.from].n_dof, records[s.to].n_dof, s.eoc);
            }
        }
    }
    Ok(())
}
