//! `vortbif`: critical values, eigenfunctions, steady branches and their
//! Lagrangian verification for the forced dissipative vorticity equation.
//!
//! Exit codes: 0 success, 2 bad parameters or input, 3 numerical failure,
//! 4 a verification gate failed.

mod commands;
mod manifest;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub const EXIT_PARAMETER: u8 = 2;
pub const EXIT_NUMERICAL: u8 = 3;
pub const EXIT_GATE: u8 = 4;

#[derive(Debug, Parser)]
#[command(name = "vortbif", version, about = "Steady bifurcation from the Kolmogorov-type shear cos x2")]
struct Cli {
    #[command(flatten)]
    global: Global,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Global {
    /// Emit JSON instead of text or CSV.
    #[arg(long, global = true)]
    pub json: bool,

    /// Write the primary output here (the manifest goes to `<out>.manifest.json`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    /// Seed for randomized commands.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Numerical tolerance; the meaning and default depend on the command.
    #[arg(long, global = true)]
    pub tol: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Direction {
    Plus,
    Minus,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Critical Ekman number kappa_a for one aspect ratio (JSON), or a CSV sweep over a range.
    CriticalValue {
        #[arg(long, allow_negative_numbers = true)]
        a: Option<f64>,
        /// `a0:a1:count`, evenly spaced and inclusive.
        #[arg(long)]
        sweep: Option<String>,
    },
    /// Critical eigenfunction on the first zonal column.
    Eigenfunction {
        #[arg(long, allow_negative_numbers = true)]
        a: f64,
        /// Meridional truncation N.
        #[arg(long, default_value_t = 32)]
        n: usize,
        /// Normalization b_0.
        #[arg(long, default_value_t = 1.0)]
        c: f64,
    },
    /// Nontrivial branch continued from the bifurcation point.
    Branch {
        #[arg(long, allow_negative_numbers = true)]
        a: f64,
        #[arg(long, default_value_t = 8)]
        m: usize,
        #[arg(long, default_value_t = 32)]
        n: usize,
        /// Stop when kappa falls below this value.
        #[arg(long, default_value_t = 1e-3)]
        kappa_min: f64,
        #[arg(long, default_value_t = 10)]
        steps: usize,
        /// Arclength step.
        #[arg(long, default_value_t = 2e-4)]
        ds: f64,
        /// Sign of the critical eigenfunction used as the initial tangent.
        #[arg(long, value_enum, default_value_t = Direction::Plus)]
        direction: Direction,
        /// Write every branch point as a field JSON file into this directory.
        #[arg(long)]
        dump_fields: Option<PathBuf>,
        /// Write an amplitude-versus-kappa plot.
        #[arg(long)]
        svg: Option<PathBuf>,
    },
    /// Check a steady state independently through its Lagrangian representation.
    Verify {
        #[arg(long)]
        field: PathBuf,
        #[arg(long)]
        kappa: f64,
        /// Sample points per direction.
        #[arg(long, default_value_t = 8)]
        points: usize,
        /// Horizon for the flow-gradient determinant check.
        #[arg(long, default_value_t = 10.0)]
        t_end: f64,
    },
    /// Newton from random starts around psi* and report where they land.
    Probe {
        #[arg(long, allow_negative_numbers = true)]
        a: f64,
        #[arg(long, allow_negative_numbers = true)]
        kappa: f64,
        #[arg(long, default_value_t = 50)]
        trials: usize,
        /// Start radius in units of kappa^2/4.
        #[arg(long, default_value_t = 1.0)]
        radius_scale: f64,
        #[arg(long, default_value_t = 8)]
        m: usize,
        #[arg(long, default_value_t = 32)]
        n: usize,
        /// Write the starts that did not return to psi* into this directory.
        #[arg(long)]
        dump_counterexamples: Option<PathBuf>,
    },
    /// Table of kappa_a, its bound and the oracle over a range of a, optionally
    /// with the bifurcation point detected on the truncated trivial branch.
    Sweep {
        /// `a0:a1:count`, evenly spaced and inclusive.
        #[arg(long)]
        range: String,
        #[arg(long)]
        detect: bool,
        #[arg(long, default_value_t = 8)]
        m: usize,
        #[arg(long, default_value_t = 32)]
        n: usize,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let g = cli.global;
    let result = match cli.command {
        Command::CriticalValue { a, sweep } => commands::critical_value(&g, a, sweep.as_deref()),
        Command::Eigenfunction { a, n, c } => commands::eigenfunction(&g, a, n, c),
        Command::Branch {
            a,
            m,
            n,
            kappa_min,
            steps,
            ds,
            direction,
            dump_fields,
            svg,
        } => commands::branch(
            &g,
            &commands::BranchArgs {
                a,
                m,
                n,
                kappa_min,
                steps,
                ds,
                direction,
                dump_fields,
                svg,
            },
        ),
        Command::Verify {
            field,
            kappa,
            points,
            t_end,
        } => commands::verify(&g, &field, kappa, points, t_end),
        Command::Probe {
            a,
            kappa,
            trials,
            radius_scale,
            m,
            n,
            dump_counterexamples,
        } => commands::probe(
            &g,
            &commands::ProbeArgs {
                a,
                kappa,
                trials,
                radius_scale,
                m,
                n,
                dump_counterexamples,
            },
        ),
        Command::Sweep { range, detect, m, n } => commands::sweep(&g, &range, detect, m, n),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
