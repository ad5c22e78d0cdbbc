//! Command-line front end: simulate panels, estimate pass-through, check the
//! theory, and format reports, with a manifest for every run.

mod cmds;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(
    name = "bettax",
    version,
    about = "Betting-tax simulation and estimation pipelines"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DesignArg {
    Did,
    #[value(alias = "event_study")]
    EventStudy,
    #[value(alias = "did_het")]
    DidHet,
    #[value(alias = "event_study_het")]
    EventStudyHet,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FilterArg {
    All,
    #[value(alias = "soccer_only")]
    SoccerOnly,
    #[value(alias = "excl_cross")]
    ExclCross,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ClusterArg {
    Agency,
    League,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic odds panel CSV from a seeded configuration.
    Simulate {
        /// Generator configuration JSON; defaults mirror the built-in market.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Master seed override.
        #[arg(long)]
        seed: Option<u64>,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
        /// Include true-probability audit columns.
        #[arg(long)]
        with_probabilities: bool,
    },
    /// Fit a panel design and write the coefficient report JSON.
    Estimate {
        /// Panel CSV produced by `simulate`.
        #[arg(long)]
        panel: PathBuf,
        #[arg(long, value_enum)]
        design: DesignArg,
        /// Fixed effects to absorb, comma separated:
        /// agency,week|quarter,league,league_agency.
        #[arg(long)]
        fe: Option<String>,
        #[arg(long, value_enum, default_value = "agency")]
        cluster: ClusterArg,
        /// Omitted event-study quarter relative to the reform.
        #[arg(long, default_value = "-1", allow_hyphen_values = true)]
        baseline: i32,
        #[arg(long, value_enum, default_value = "all")]
        filter: FilterArg,
        /// League-id prefix marking domestic leagues for `excl-cross`.
        #[arg(long, default_value = "de_")]
        domestic_prefix: String,
        /// Statutory tax rate used for pass-through conversion.
        #[arg(long, default_value = "0.05")]
        tax: f64,
        #[arg(long)]
        out: PathBuf,
        /// Optional tidy CSV of coefficients for plotting.
        #[arg(long)]
        coefficients_csv: Option<PathBuf>,
    },
    /// Evaluate the closed-form pass-through and corrective-tax formulas.
    Theory {
        /// Parameter JSON with `elasticities` and/or `sin_tax` blocks.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Verify a strategy profile (default: the segmented equilibrium)
    /// against unilateral deviations.
    VerifyEquilibrium {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Welfare curve over a tax grid on the segmented equilibrium.
    TaxSweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the equilibrium and formula check suite over a parameter grid.
    VerifyTheory {
        /// Check-suite configuration JSON; an empty object uses defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Summarize estimate reports into tidy CSVs and a plain-text table.
    Report {
        /// Estimate-report JSONs.
        #[arg(long, required = true, num_args = 1..)]
        fits: Vec<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
        /// Pass-through target the summary compares against.
        #[arg(long)]
        target_rho: Option<f64>,
        #[arg(long, default_value = "0.06")]
        rho_tol: f64,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            use clap::error::ErrorKind;
            if matches!(
                err.kind(),
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion
            ) {
                print!("{err}");
                return ExitCode::SUCCESS;
            }
            let first_line = err
                .to_string()
                .lines()
                .next()
                .unwrap_or("bad arguments")
                .to_string();
            eprintln!("error: {first_line}");
            return ExitCode::from(1);
        }
    };

    let result = match cli.command {
        Command::Simulate {
            config,
            seed,
            out,
            with_probabilities,
        } => cmds::simulate(config.as_deref(), seed, &out, with_probabilities),
        Command::Estimate {
            panel,
            design,
            fe,
            cluster,
            baseline,
            filter,
            domestic_prefix,
            tax,
            out,
            coefficients_csv,
        } => cmds::estimate(cmds::EstimateArgs {
            panel,
            design,
            fe,
            cluster,
            baseline,
            filter,
            domestic_prefix,
            tax,
            out,
            coefficients_csv,
        }),
        Command::Theory { config, out } => cmds::theory(&config, &out),
        Command::VerifyEquilibrium { config, out } => cmds::verify_equilibrium(&config, &out),
        Command::TaxSweep { config, out } => cmds::tax_sweep(&config, &out),
        Command::VerifyTheory { config, out } => cmds::verify_theory(config.as_deref(), &out),
        Command::Report {
            fits,
            out_dir,
            target_rho,
            rho_tol,
        } => cmds::report(&fits, &out_dir, target_rho, rho_tol),
    };

    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(if err.is_validation() { 1 } else { 2 })
        }
    }
}
