//! DoS-induced spatial delays: decomposition, schedules and trace files.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Split `tau = tau_bar + (p - 1) h` with `tau_bar` in `[0, h]` and `p >= 1`
/// minimal, so `tau = h` maps to `(h, 1)` rather than `(0, 2)`.
pub fn decompose(tau: f64, h: f64) -> Result<(f64, usize)> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::Domain(format!("sampling interval {h} must be positive")));
    }
    if !(tau >= 0.0 && tau.is_finite()) {
        return Err(Error::Domain(format!("delay {tau} must be non-negative")));
    }
    let p = ((tau / h).ceil() as usize).max(1);
    let tau_bar = (tau - (p - 1) as f64 * h).clamp(0.0, h);
    Ok((tau_bar, p))
}

pub fn recompose(tau_bar: f64, p: usize, h: f64) -> f64 {
    tau_bar + (p.saturating_sub(1)) as f64 * h
}

/// A vehicle listens to both its predecessor and the leader; the later of
/// the two packets determines when its input can be updated.
pub fn effective_delay(tau_pred: f64, tau_lead: f64) -> f64 {
    tau_pred.max(tau_lead)
}

/// Delay actually incurred by a packet needed at `s_needed` that arrives at
/// `s_arrival`; early arrival costs nothing.
pub fn transmission_delay(s_needed: f64, s_arrival: f64) -> f64 {
    (s_arrival - s_needed).max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DelayLaw {
    /// No attack: every delay is zero.
    Zero,
    /// Independent uniform draws on `[0, p_max h]`.
    #[default]
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackSchedule {
    pub seed: u64,
    pub p_max: usize,
    #[serde(default)]
    pub law: DelayLaw,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelaySample {
    pub vehicle: usize,
    pub k: usize,
    pub s_k: f64,
    pub tau: f64,
    pub tau_bar: f64,
    pub p: usize,
}

/// Per-vehicle delay sequences, `rows[v][k]`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DelayTrace {
    pub h: f64,
    pub rows: Vec<Vec<DelaySample>>,
}

/// Sample delays for `vehicles` (indices `first_vehicle..first_vehicle + vehicles`)
/// over `steps` sampling instants. Each vehicle draws from its own ChaCha
/// stream, so results do not depend on generation order.
pub fn generate_schedule(
    sched: &AttackSchedule,
    first_vehicle: usize,
    vehicles: usize,
    steps: usize,
    h: f64,
) -> Result<DelayTrace> {
    if sched.p_max == 0 {
        return Err(Error::Domain("p_max must be at least 1".into()));
    }
    decompose(0.0, h)?;
    let bound = sched.p_max as f64 * h;
    let rows = (first_vehicle..first_vehicle + vehicles)
        .map(|vehicle| {
            let mut rng = ChaCha8Rng::seed_from_u64(sched.seed);
            rng.set_stream(vehicle as u64);
            (0..steps)
                .map(|k| {
                    let tau = match sched.law {
                        DelayLaw::Zero => 0.0,
                        DelayLaw::Uniform => rng.random_range(0.0..=bound),
                    };
                    let (tau_bar, p) = decompose(tau, h)?;
                    Ok(DelaySample {
                        vehicle,
                        k,
                        s_k: k as f64 * h,
                        tau,
                        tau_bar,
                        p,
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DelayTrace { h, rows })
}

impl DelayTrace {
    pub fn is_empty(&self) -> bool {
        self.rows.iter().all(|r| r.is_empty())
    }

    pub fn max_delay(&self) -> f64 {
        self.rows
            .iter()
            .flatten()
            .map(|d| d.tau)
            .fold(0.0, f64::max)
    }

    pub fn for_vehicle(&self, vehicle: usize) -> Option<&[DelaySample]> {
        self.rows
            .iter()
            .find(|r| r.first().map(|d| d.vehicle) == Some(vehicle))
            .map(|r| r.as_slice())
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        for d in self.rows.iter().flatten() {
            wr.serialize(d)?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Replay a recorded trace. Rows are grouped by vehicle in order of first
    /// appearance and must have consecutive `k` starting at 0.
    pub fn read_csv<R: Read>(r: R, h: f64) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let mut rows: Vec<Vec<DelaySample>> = Vec::new();
        for rec in rd.deserialize() {
            let d: DelaySample = rec?;
            let slot = match rows.iter().position(|r| r[0].vehicle == d.vehicle) {
                Some(i) => i,
                None => {
                    rows.push(Vec::new());
                    rows.len() - 1
                }
            };
            let row = &mut rows[slot];
            if d.k != row.len() {
                return Err(Error::Config(format!(
                    "delay trace for vehicle {} jumps to k = {} (expected {})",
                    d.vehicle,
                    d.k,
                    row.len()
                )));
            }
            if d.p == 0 || (recompose(d.tau_bar, d.p, h) - d.tau).abs() > 1e-9 {
                return Err(Error::Config(format!(
                    "delay trace row vehicle {} k {} is inconsistent with h = {h}",
                    d.vehicle, d.k
                )));
            }
            row.push(d);
        }
        Ok(Self { h, rows })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn decompose_examples() {
        assert_eq!(decompose(0.0, 0.5).unwrap(), (0.0, 1));
        assert_eq!(decompose(4.0, 0.5).unwrap(), (0.5, 8));
        let (tb, p) = decompose(1.3, 0.5).unwrap();
        assert_eq!(p, 3);
        assert_abs_diff_eq!(tb, 0.3, epsilon = 1e-12);
        assert_eq!(decompose(0.5, 0.5).unwrap(), (0.5, 1));
        assert!(decompose(1.0, 0.0).is_err());
        assert!(decompose(-1.0, 0.5).is_err());
    }

    #[test]
    fn effective_and_transmission_delay() {
        assert_eq!(effective_delay(0.0, 0.0), 0.0);
        assert_eq!(effective_delay(1.2, 0.4), 1.2);
        assert_eq!(effective_delay(0.4, 1.2), 1.2);
        // Packet arrives before it is needed.
        assert_eq!(transmission_delay(10.0, 9.3), 0.0);
        assert_eq!(transmission_delay(10.0, 10.0), 0.0);
        assert_abs_diff_eq!(transmission_delay(10.0, 11.25), 1.25);
    }

    #[test]
    fn schedule_bounds_and_determinism() {
        let sched = AttackSchedule {
            seed: 42,
            p_max: 8,
            law: DelayLaw::Uniform,
        };
        let a = generate_schedule(&sched, 1, 7, 500, 0.5).unwrap();
        let b = generate_schedule(&sched, 1, 7, 500, 0.5).unwrap();
        assert_eq!(a, b);
        assert!(a.max_delay() <= 4.0);
        let one = AttackSchedule { p_max: 1, ..sched };
        let t = generate_schedule(&one, 1, 3, 200, 0.5).unwrap();
        assert!(t.rows.iter().flatten().all(|d| d.tau <= 0.5 && d.p == 1));
        let other = AttackSchedule { seed: 43, ..sched };
        assert_ne!(generate_schedule(&other, 1, 7, 500, 0.5).unwrap(), a);
    }

    #[test]
    fn vehicle_streams_independent_of_range() {
        let sched = AttackSchedule {
            seed: 3,
            p_max: 4,
            law: DelayLaw::Uniform,
        };
        let all = generate_schedule(&sched, 1, 5, 50, 0.5).unwrap();
        let just3 = generate_schedule(&sched, 3, 1, 50, 0.5).unwrap();
        assert_eq!(all.for_vehicle(3).unwrap(), just3.for_vehicle(3).unwrap());
    }

    #[test]
    fn empirical_max_approaches_bound() {
        let sched = AttackSchedule {
            seed: 7,
            p_max: 8,
            law: DelayLaw::Uniform,
        };
        let t = generate_schedule(&sched, 1, 1, 100_000, 0.5).unwrap();
        assert!(t.max_delay() >= 0.99 * 4.0);
    }

    #[test]
    fn zero_law_and_empty_trace() {
        let sched = AttackSchedule {
            seed: 1,
            p_max: 3,
            law: DelayLaw::Zero,
        };
        let t = generate_schedule(&sched, 1, 2, 10, 0.5).unwrap();
        assert!(t.rows.iter().flatten().all(|d| d.tau == 0.0 && d.p == 1));
        assert!(generate_schedule(&sched, 1, 2, 0, 0.5).unwrap().is_empty());
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let sched = AttackSchedule {
            seed: 11,
            p_max: 8,
            law: DelayLaw::Uniform,
        };
        let t = generate_schedule(&sched, 1, 3, 40, 0.5).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("vehicle,k,s_k,tau,tau_bar,p\n"));
        let back = DelayTrace::read_csv(buf.as_slice(), 0.5).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn replay_rejects_gaps() {
        let text = "vehicle,k,s_k,tau,tau_bar,p\n1,0,0,0.1,0.1,1\n1,2,1,0.1,0.1,1\n";
        assert!(DelayTrace::read_csv(text.as_bytes(), 0.5).is_err());
        let bad = "vehicle,k,s_k,tau,tau_bar,p\n1,0,0,1.3,0.1,1\n";
        assert!(DelayTrace::read_csv(bad.as_bytes(), 0.5).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]
        #[test]
        fn decompose_round_trips(tau in 0.0f64..50.0, h in 0.05f64..2.0) {
            let (tb, p) = decompose(tau, h).unwrap();
            prop_assert!((0.0..=h).contains(&tb));
            prop_assert!(p >= 1);
            prop_assert!((recompose(tb, p, h) - tau).abs() <= 1e-12 * tau.max(1.0));
            let (tb2, p2) = decompose(recompose(tb, p, h), h).unwrap();
            prop_assert_eq!(p2, p);
            prop_assert!((tb2 - tb).abs() <= 1e-12 * tau.max(1.0));
        }
    }
}
