//! LMI-based controller synthesis.

pub mod assemble;
pub mod program;
pub mod solver;
pub mod sweep;

pub use assemble::{
    assemble, extract_gain, synthesize, synthesize_with, Mode, SynthesisData, SynthesisOptions,
    SynthesisResult, Theorem,
};
pub use program::{LmiBlock, LmiProgram, VarLayout};
pub use solver::{solve, SolveOutcome, SolverSettings, Verdict};
pub use sweep::{bisect_gamma, bisect_mu, sweep_p, Bracket, SweepReport};
