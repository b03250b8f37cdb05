//! `platoon`: synthesis, sweeps, certification and simulation from one config file.
//!
//! Exit codes:
//!
//! * 0 — success; every output listed in `manifest.json` exists.
//! * 1 — bad flags or configuration, unknown preset, unreadable input or any
//!   other error.
//! * 2 — infeasible synthesis or a gain that fails certification; the verdict
//!   files are still written.
//! * 3 — simulation stopped before the horizon; the partial trace and a
//!   summary naming the cause are still written.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use platoon_core::lmi::{Mode, Theorem};

#[derive(Parser, Debug)]
#[command(name = "platoon", version, about = "Resilient platoon controller synthesis and simulation")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Global {
    /// TOML configuration; the built-in defaults are used when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured top-level seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,
    /// Worker threads for sweeps.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum TheoremArg {
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
}

impl From<TheoremArg> for Theorem {
    fn from(t: TheoremArg) -> Self {
        match t {
            TheoremArg::One => Theorem::Stability,
            TheoremArg::Two => Theorem::StringStability,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ModeArg {
    #[value(name = "string_only")]
    StringOnly,
    #[value(name = "string_plus_attenuation")]
    StringPlusAttenuation,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::StringOnly => Mode::StringOnly,
            ModeArg::StringPlusAttenuation => Mode::StringPlusAttenuation,
        }
    }
}

#[derive(Args, Debug, Clone, Copy)]
pub struct SynthFlags {
    #[arg(long)]
    pub theorem: Option<TheoremArg>,
    #[arg(long)]
    pub mode: Option<ModeArg>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Solve the LMI program for one delay multiplicity and certify the gain.
    Synthesize {
        /// Delay multiplicity; defaults to `simulation.p`.
        #[arg(long)]
        p: Option<usize>,
        #[command(flatten)]
        synth: SynthFlags,
        /// Points on the tau-bar grid used for certification.
        #[arg(long)]
        grid: Option<usize>,
    },
    /// Feasibility table over a range of p, optionally with a gamma bisection.
    Sweep {
        #[arg(long)]
        p_min: Option<usize>,
        #[arg(long)]
        p_max: Option<usize>,
        #[command(flatten)]
        synth: SynthFlags,
        /// Also bisect the attenuation level at this p.
        #[arg(long)]
        gamma_at: Option<usize>,
    },
    /// Run a preset or an explicit scenario and summarize it.
    Simulate {
        /// One of the built-in presets.
        #[arg(long, conflicts_with = "scenario", required_unless_present = "scenario")]
        preset: Option<String>,
        /// JSON simulation config with an explicit gain.
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// Delay multiplicity for presets that synthesize their gain.
        #[arg(long)]
        p: Option<usize>,
        #[command(flatten)]
        synth: SynthFlags,
    },
    /// Check a gain, or a saved synthesis result, on a tau-bar grid.
    Certify {
        /// `synthesis_p*.json`, `{"k": [..], "p": ..}` or a bare `[k1, k2, k3]`.
        #[arg(long)]
        gain: PathBuf,
        /// Delay multiplicity for bare gains; defaults to `simulation.p`.
        #[arg(long)]
        p: Option<usize>,
        #[arg(long)]
        grid: Option<usize>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("PLATOON_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Usage errors share the bad-input code; help and version are fine.
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match commands::dispatch(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
