use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use platoon_core::certify::{certify_gain, certify_result, CertificationReport};
use platoon_core::config::Config;
use platoon_core::delay::generate_schedule;
use platoon_core::lmi::{bisect_gamma, sweep_p, synthesize, SweepReport, SynthesisOptions, SynthesisResult};
use platoon_core::sim::{derive_seed, run_partial, scenario, summarize_partial, Attack, GainSpec, SimConfig};
use platoon_core::{Error, Gain};

use crate::manifest::{config_digest, now, Outputs, RunManifest, Seeds};
use crate::{Cli, Command, SynthFlags};

pub const EXIT_OK: u8 = 0;
pub const EXIT_FAILED: u8 = 2;
pub const EXIT_ABORTED: u8 = 3;

/// Seed stream for the random convex combinations drawn during certification.
const CERTIFY_STREAM: u64 = 3;

#[derive(Debug)]
pub struct CliError(Error);

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.0.fmt(f)
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self.0 {
            Error::NoSolution(_) | Error::Extraction(_) => EXIT_FAILED,
            _ => 1,
        }
    }
}

impl<E: Into<Error>> From<E> for CliError {
    fn from(e: E) -> Self {
        CliError(e.into())
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn load_config(cli: &Cli) -> Result<Config> {
    let mut cfg = match &cli.global.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    if let Some(seed) = cli.global.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn options(cfg: &Config, flags: &SynthFlags) -> Result<SynthesisOptions> {
    let mut o = cfg.synthesis;
    if let Some(t) = flags.theorem {
        o.theorem = t.into();
    }
    if let Some(m) = flags.mode {
        o.mode = m.into();
    }
    o.validate(cfg.platoon.h)?;
    Ok(o)
}

struct Run {
    cfg: Config,
    out: Outputs,
    started: String,
    derived: Vec<(String, u64)>,
}

impl Run {
    fn new(cli: &Cli) -> Result<Self> {
        let cfg = load_config(cli)?;
        Ok(Self {
            cfg,
            out: Outputs::new(&cli.global.out_dir)?,
            started: now(),
            derived: Vec::new(),
        })
    }

    fn finish(self, command: &str, code: u8) -> Result<u8> {
        let m = RunManifest {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            config_digest: config_digest(&self.cfg)?,
            seeds: Seeds {
                top: self.cfg.seed,
                derived: self.derived,
            },
            started: self.started,
            finished: now(),
            exit_code: code,
            outputs: Vec::new(),
        };
        self.out.finish(m)?;
        Ok(code)
    }
}

pub fn dispatch(cli: &Cli) -> Result<u8> {
    match &cli.command {
        Command::Synthesize { p, synth, grid } => cmd_synthesize(cli, *p, synth, *grid),
        Command::Sweep {
            p_min,
            p_max,
            synth,
            gamma_at,
        } => cmd_sweep(cli, *p_min, *p_max, synth, *gamma_at),
        Command::Simulate {
            preset,
            scenario,
            p,
            synth,
        } => cmd_simulate(cli, preset.as_deref(), scenario.as_deref(), *p, synth),
        Command::Certify { gain, p, grid } => cmd_certify(cli, gain, *p, *grid),
    }
}

fn cmd_synthesize(cli: &Cli, p: Option<usize>, flags: &SynthFlags, grid: Option<usize>) -> Result<u8> {
    let mut run = Run::new(cli)?;
    let opts = options(&run.cfg, flags)?;
    let p = p.unwrap_or(run.cfg.simulation.p);
    let grid = grid.unwrap_or(run.cfg.certify.grid);
    let res = synthesize(&run.cfg.platoon, &opts, p)?;
    log::info!("p = {p}: {:?}, margin {:.3e}", res.verdict, res.margin);
    run.out.write_json(&format!("synthesis_p{p}.json"), &res)?;
    let code = if res.feasible {
        let seed = derive_seed(run.cfg.seed, CERTIFY_STREAM);
        run.derived.push(("certify".into(), seed));
        let report = certify_result(&res, &run.cfg.platoon, grid, run.cfg.certify.tolerance, seed)?;
        run.out.write_json(&format!("certification_p{p}.json"), &report)?;
        if report.verdict {
            println!("p = {p}: feasible and certified, K = {}", report.gain);
            EXIT_OK
        } else {
            println!("p = {p}: feasible but certification failed, K = {}", report.gain);
            EXIT_FAILED
        }
    } else {
        println!("p = {p}: infeasible ({:?})", res.verdict);
        EXIT_FAILED
    };
    run.finish("synthesize", code)
}

fn sweep_csv(report: Option<&SweepReport>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["p", "feasible", "k1", "k2", "k3"])?;
    for r in report.map_or(&[][..], |r| &r.results[..]) {
        let k = r.gain.map(|Gain(k)| k.map(|v| v.to_string()));
        let [k1, k2, k3] = k.unwrap_or_default();
        w.write_record([r.p.to_string(), r.feasible.to_string(), k1, k2, k3])?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()).into())
}

fn cmd_sweep(
    cli: &Cli,
    p_min: Option<usize>,
    p_max: Option<usize>,
    flags: &SynthFlags,
    gamma_at: Option<usize>,
) -> Result<u8> {
    let mut run = Run::new(cli)?;
    let opts = options(&run.cfg, flags)?;
    let mut s = run.cfg.sweep;
    s.p_min = p_min.unwrap_or(s.p_min);
    s.p_max = p_max.unwrap_or(s.p_max);
    let range = s.p_range();
    let report = if range.is_empty() {
        log::warn!("empty p range {}..={}", s.p_min, s.p_max);
        None
    } else {
        Some(sweep_p(&run.cfg.platoon, &opts, &range, cli.global.jobs)?)
    };
    run.out.write("sweep.csv", &sweep_csv(report.as_ref())?)?;
    if let Some(r) = &report {
        run.out.write_json("sweep.json", r)?;
        for x in &r.results {
            println!("p = {:2}  feasible = {:5}  K = {}", x.p, x.feasible, x.gain.map_or("-".into(), |g| g.to_string()));
        }
    }
    let mut code = EXIT_OK;
    if let Some(p) = gamma_at {
        match bisect_gamma(&run.cfg.platoon, &opts, p, (s.gamma_lo, s.gamma_hi), s.gamma_iters) {
            Ok(b) => {
                println!("p = {p}: gamma in ({}, {}] after {} iterations", b.lo, b.hi, b.iterations);
                run.out.write_json(&format!("gamma_p{p}.json"), &b)?;
            }
            Err(e @ Error::NoSolution(_)) => {
                println!("p = {p}: {e}");
                run.out.write_json(&format!("gamma_p{p}.json"), &e.to_string())?;
                code = EXIT_FAILED;
            }
            Err(e) => return Err(e.into()),
        }
    }
    run.finish("sweep", code)
}

fn cmd_simulate(
    cli: &Cli,
    preset: Option<&str>,
    scenario_file: Option<&Path>,
    p: Option<usize>,
    flags: &SynthFlags,
) -> Result<u8> {
    let mut run = Run::new(cli)?;
    let (name, cfg): (String, SimConfig) = match (preset, scenario_file) {
        (Some(name), _) => {
            let mut set = run.cfg.simulation.clone();
            set.p = p.unwrap_or(set.p);
            let sc = scenario(name, run.cfg.seed, &run.cfg.platoon, &set)?;
            run.derived.push(("attack".into(), derive_seed(run.cfg.seed, 1)));
            run.derived.push(("initial".into(), derive_seed(run.cfg.seed, 2)));
            if let GainSpec::Synthesized { p } = sc.gain {
                log::info!("synthesizing the gain for p = {p}");
            }
            let opts = options(&run.cfg, flags)?;
            (name.to_string(), sc.resolve(&opts)?)
        }
        (None, Some(path)) => {
            let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            let cfg: SimConfig =
                serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            let name = path.file_stem().map_or("scenario".into(), |s| s.to_string_lossy().into_owned());
            (name, cfg)
        }
        (None, None) => return Err(Error::Config("either --preset or --scenario is required".into()).into()),
    };
    cfg.validate()?;
    let (trace, aborted) = run_partial(&cfg)?;
    let mut csv = Vec::new();
    trace.write_csv(&mut csv)?;
    run.out.write("trace.csv", &csv)?;
    let delays = match &cfg.attack {
        Attack::None => None,
        Attack::Schedule(s) => Some(generate_schedule(s, 1, cfg.vehicles() - 1, cfg.steps(), cfg.params.h)?),
        Attack::Replay { trace } => Some(trace.clone()),
    };
    if let Some(d) = delays {
        let mut csv = Vec::new();
        d.write_csv(&mut csv)?;
        run.out.write("delays.csv", &csv)?;
    }
    let summary = summarize_partial(&name, &cfg, &trace, aborted.as_ref())?;
    run.out.write_json("summary.json", &summary)?;
    let ratios: Vec<String> = summary.l2.ratios.iter().map(|r| r.map_or("-".into(), |v| format!("{v:.3}"))).collect();
    println!("{name}: K = {}, L2 ratios [{}]", summary.gain, ratios.join(", "));
    println!(
        "string stable: {}, converged: {}, violation: {}",
        summary.string_stable, summary.converged, summary.violation
    );
    let code = match &aborted {
        Some(e) => {
            println!("run aborted: {e}");
            EXIT_ABORTED
        }
        None => EXIT_OK,
    };
    run.finish("simulate", code)
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(untagged)]
enum GainFile {
    Synthesis(Box<SynthesisResult>),
    Tagged { k: Gain, p: Option<usize> },
    Bare(Gain),
}

fn cmd_certify(cli: &Cli, path: &Path, p: Option<usize>, grid: Option<usize>) -> Result<u8> {
    let mut run = Run::new(cli)?;
    let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let file: GainFile =
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: not a gain file ({e})", path.display())))?;
    let grid = grid.unwrap_or(run.cfg.certify.grid);
    if grid == 0 {
        return Err(Error::Config("--grid must be positive".into()).into());
    }
    let report: CertificationReport = match file {
        GainFile::Synthesis(res) => {
            let seed = derive_seed(run.cfg.seed, CERTIFY_STREAM);
            run.derived.push(("certify".into(), seed));
            certify_result(&res, &run.cfg.platoon, grid, run.cfg.certify.tolerance, seed)?
        }
        GainFile::Tagged { k, p: fp } => {
            certify_gain(k, p.or(fp).unwrap_or(run.cfg.simulation.p), &run.cfg.platoon, grid)?
        }
        GainFile::Bare(k) => certify_gain(k, p.unwrap_or(run.cfg.simulation.p), &run.cfg.platoon, grid)?,
    };
    run.out.write_json("certification.json", &report)?;
    println!(
        "K = {} at p = {}: {} (max spectral radius {:.6})",
        report.gain,
        report.p,
        if report.verdict { "certified" } else { "not certified" },
        report.radius.max_radius
    );
    run.finish("certify", if report.verdict { EXIT_OK } else { EXIT_FAILED })
}
