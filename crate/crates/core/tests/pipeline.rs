use platoon_core::certify::{certify_gain, certify_result, DEFAULT_GRID_POINTS};
use platoon_core::config::Config;
use platoon_core::delay::{generate_schedule, AttackSchedule, DelayLaw, DelayTrace};
use platoon_core::lmi::{synthesize, sweep_p, SynthesisOptions, Theorem};
use platoon_core::sim::{run, scenario, summarize, Attack, GainSpec, SimConfig};
use platoon_core::{Gain, PlatoonParams};

fn params() -> PlatoonParams {
    PlatoonParams::reference()
}

#[test]
fn stability_synthesis_certifies_end_to_end() {
    let opts = SynthesisOptions { theorem: Theorem::Stability, ..Default::default() };
    let res = synthesize(&params(), &opts, 2).unwrap();
    assert!(res.feasible);
    let rep = certify_result(&res, &params(), DEFAULT_GRID_POINTS, 1e-8, 4).unwrap();
    assert!(rep.verdict, "{rep:?}");
    assert!(rep.lyapunov.unwrap().worst_margin > 0.0);
}

#[test]
fn frontier_gains_shrink_with_p() {
    // Longer tolerated delays force more cautious feedback.
    let r = sweep_p(&params(), &SynthesisOptions::default(), &[1, 3, 5], 3).unwrap();
    let norms: Vec<f64> = r
        .results
        .iter()
        .map(|x| x.gain.unwrap().0.iter().map(|k| k * k).sum::<f64>().sqrt())
        .collect();
    assert!(norms.windows(2).all(|w| w[1] < w[0]), "{norms:?}");
}

#[test]
fn gain_certified_for_p_also_handles_shorter_delays_in_simulation() {
    let res = synthesize(&params(), &SynthesisOptions::default(), 3).unwrap();
    let k = res.gain.unwrap();
    assert!(certify_gain(k, 3, &params(), 51).unwrap().verdict);
    let cfg = Config::default();
    let mut set = cfg.simulation.clone();
    set.attack_p_max = 3;
    set.horizon = 600.0;
    let mut sc = scenario("attack_no_disturbance", 9, &params(), &set).unwrap();
    assert!(matches!(sc.gain, GainSpec::Synthesized { .. }));
    sc.config.gain = k;
    let tr = run(&sc.config).unwrap();
    let s = summarize("short", &sc.config, &tr).unwrap();
    assert!(s.converged, "{:?}", s.convergence);
    assert!(s.max_delay <= 1.5);
}

#[test]
fn replaying_a_written_delay_trace_reproduces_the_run() {
    let set = Config::default().simulation;
    let sc = scenario("attack_with_disturbance", 3, &params(), &set).unwrap();
    let mut cfg: SimConfig = sc.config;
    cfg.gain = Gain([-6.06e-6, 6.9e-4, 2.38e-2]);
    cfg.horizon = 200.0;
    let Attack::Schedule(sched) = cfg.attack.clone() else { panic!("preset is attacked") };
    let trace = generate_schedule(&sched, 1, cfg.vehicles() - 1, cfg.steps(), cfg.params.h).unwrap();
    let mut csv = Vec::new();
    trace.write_csv(&mut csv).unwrap();
    let back = DelayTrace::read_csv(&csv[..], cfg.params.h).unwrap();

    let mut replay = cfg.clone();
    replay.attack = Attack::Replay { trace: back };
    let (mut a, mut b) = (Vec::new(), Vec::new());
    run(&cfg).unwrap().write_csv(&mut a).unwrap();
    run(&replay).unwrap().write_csv(&mut b).unwrap();
    assert_eq!(a, b);
}

#[test]
fn scenario_files_round_trip_through_json() {
    let set = Config::default().simulation;
    let cfg = scenario("baseline_besselink", 2, &params(), &set).unwrap().config;
    let text = serde_json::to_string(&cfg).unwrap();
    let back: SimConfig = serde_json::from_str(&text).unwrap();
    assert_eq!(back, cfg);
    back.validate().unwrap();
}

#[test]
fn zero_attack_schedule_is_delay_free() {
    let sched = AttackSchedule { seed: 4, p_max: 3, law: DelayLaw::Zero };
    let tr = generate_schedule(&sched, 1, 7, 100, 0.5).unwrap();
    assert_eq!(tr.max_delay(), 0.0);
}
