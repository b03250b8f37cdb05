//! Sweeps over the delay multiplicity and bisections over scalar levels.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::PlatoonParams;

use super::assemble::{synthesize, Mode, SynthesisOptions, SynthesisResult, Theorem};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub results: Vec<SynthesisResult>,
    /// Largest feasible `p` in the range.
    pub p_max: Option<usize>,
    /// No feasible `p` above an infeasible one. Recorded, not enforced.
    pub monotone: bool,
}

impl SweepReport {
    pub fn get(&self, p: usize) -> Option<&SynthesisResult> {
        self.results.iter().find(|r| r.p == p)
    }
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

/// Independent synthesis per `p`, run on `jobs` threads; results come back
/// in ascending `p` regardless of scheduling.
pub fn sweep_p(
    params: &PlatoonParams,
    opts: &SynthesisOptions,
    p_range: &[usize],
    jobs: usize,
) -> Result<SweepReport> {
    if p_range.is_empty() {
        return Err(Error::Domain("empty p range".into()));
    }
    let mut ps = p_range.to_vec();
    ps.sort_unstable();
    ps.dedup();
    let results: Vec<SynthesisResult> = pool(jobs)?.install(|| {
        ps.par_iter()
            .map(|&p| synthesize(params, opts, p))
            .collect::<Result<_>>()
    })?;
    let p_max = results.iter().filter(|r| r.feasible).map(|r| r.p).max();
    let first_bad = results.iter().find(|r| !r.feasible).map(|r| r.p);
    let monotone = match first_bad {
        Some(bad) => !results.iter().any(|r| r.feasible && r.p > bad),
        None => true,
    };
    if !monotone {
        log::warn!("feasibility is not monotone in p over {ps:?}");
    }
    Ok(SweepReport {
        results,
        p_max,
        monotone,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bracket {
    /// Largest level found infeasible (or the lower end if it was feasible).
    pub lo: f64,
    /// Smallest level found feasible.
    pub hi: f64,
    pub iterations: usize,
    /// Result at `hi`.
    pub at_hi: SynthesisResult,
}

/// Bisection on the attenuation level of the full string-stability program.
/// The returned interval has width at most `(hi - lo) / 2^iters`.
pub fn bisect_gamma(
    params: &PlatoonParams,
    opts: &SynthesisOptions,
    p: usize,
    range: (f64, f64),
    iters: usize,
) -> Result<Bracket> {
    let (mut lo, mut hi) = range;
    if !(lo > 0.0 && lo < hi) {
        return Err(Error::Domain(format!("need 0 < gamma_lo < gamma_hi, got {range:?}")));
    }
    let run = |g: f64| {
        let o = SynthesisOptions {
            theorem: Theorem::StringStability,
            mode: Mode::StringPlusAttenuation,
            gamma: g,
            ..*opts
        };
        synthesize(params, &o, p)
    };
    let mut at_hi = run(hi)?;
    if !at_hi.feasible {
        return Err(Error::NoSolution(format!("gamma = {hi} is already infeasible for p = {p}")));
    }
    let at_lo = run(lo)?;
    if at_lo.feasible {
        return Ok(Bracket {
            lo,
            hi: lo,
            iterations: 0,
            at_hi: at_lo,
        });
    }
    for _ in 0..iters {
        let mid = 0.5 * (lo + hi);
        let r = run(mid)?;
        if r.feasible {
            hi = mid;
            at_hi = r;
        } else {
            lo = mid;
        }
    }
    Ok(Bracket {
        lo,
        hi,
        iterations: iters,
        at_hi,
    })
}

/// Largest decay rate for which the stability-only program stays feasible,
/// bracketed by bisection on `(0, 1)`.
pub fn bisect_mu(params: &PlatoonParams, opts: &SynthesisOptions, p: usize, iters: usize) -> Result<(f64, f64)> {
    let run = |mu: f64| {
        let o = SynthesisOptions {
            theorem: Theorem::Stability,
            mu,
            ..*opts
        };
        synthesize(params, &o, p).map(|r| r.feasible)
    };
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..iters {
        let mid = 0.5 * (lo + hi);
        if run(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if lo == 0.0 {
        return Err(Error::NoSolution(format!("no decay rate above {hi} is feasible for p = {p}")));
    }
    Ok((lo, hi))
}
