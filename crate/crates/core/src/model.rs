//! Spacing policy, timing-error coordinates and the linear platoon model.
//!
//! Vehicle 0 is the leader; followers are `1..=N`. The leader's timing error
//! is measured against the reference trajectory `t_ref(s) = int 1/v_ref`, and
//! its predecessor quantities (`Gamma0_{-1}`, `delta1_{-1}`) are taken as zero,
//! which makes its error dynamics identical in form to every follower's.

use std::fmt;

use nalgebra::{DMatrix, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::profile::ReferenceVelocityProfile;

/// Which output row to use for `y_i = C x_i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutputVariant {
    /// `[1 - eps, -1, 0]` as printed alongside the state-space model.
    Printed,
    /// `[1 - eps0, -1, 0]`, which is what eliminating `y_{i-1}` from the
    /// error definitions actually yields.
    #[default]
    Consistent,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlatoonParams {
    /// Number of followers.
    pub followers: usize,
    /// Nominal time gap [s].
    pub time_gap: f64,
    /// Space sampling interval [m].
    pub h: f64,
    pub eps: f64,
    pub eps0: f64,
    /// Inertial time constant [s].
    pub zeta: f64,
    pub v_min: f64,
    pub v_max: f64,
    #[serde(default)]
    pub output: OutputVariant,
}

impl PlatoonParams {
    pub fn reference() -> Self {
        Self {
            followers: 7,
            time_gap: 1.0,
            h: 0.5,
            eps: 2.0,
            eps0: 0.5,
            zeta: 0.54,
            v_min: 18.8,
            v_max: 21.0,
            output: OutputVariant::Consistent,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fin = [
            self.time_gap,
            self.h,
            self.eps,
            self.eps0,
            self.zeta,
            self.v_min,
            self.v_max,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !fin {
            return Err(Error::Config("non-finite platoon parameter".into()));
        }
        if !(0.0..1.0).contains(&self.eps0) {
            return Err(Error::Config(format!("eps0 = {} not in [0, 1)", self.eps0)));
        }
        if self.eps <= 0.0 {
            return Err(Error::Config(format!("eps = {} must be positive", self.eps)));
        }
        if self.h <= 0.0 || self.time_gap <= 0.0 || self.zeta <= 0.0 {
            return Err(Error::Config(
                "h, time gap and zeta must be positive".into(),
            ));
        }
        if !(self.v_min > 0.0 && self.v_min <= self.v_max) {
            return Err(Error::Config(format!(
                "velocity bounds [{}, {}] invalid",
                self.v_min, self.v_max
            )));
        }
        Ok(())
    }
}

impl Default for PlatoonParams {
    fn default() -> Self {
        Self::reference()
    }
}

/// Time-space state of one vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehiclePhysState {
    pub t: f64,
    pub v: f64,
    pub a: f64,
}

/// `x_i = [Gamma_i, E1_i, E2_i]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ErrorState {
    pub gamma: f64,
    pub e1: f64,
    pub e2: f64,
}

impl ErrorState {
    pub fn new(gamma: f64, e1: f64, e2: f64) -> Self {
        Self { gamma, e1, e2 }
    }

    pub fn to_vector(self) -> Vector3<f64> {
        Vector3::new(self.gamma, self.e1, self.e2)
    }

    pub fn from_slice(x: &[f64]) -> Self {
        Self::new(x[0], x[1], x[2])
    }
}

/// State-feedback gain `K = [k1, k2, k3]`, applied as `u = -K x`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Gain(pub [f64; 3]);

impl Gain {
    /// Gain used by the constant-headway comparison controller.
    pub const BASELINE: Gain = Gain([0.0, 0.09, 0.0025]);

    pub fn apply(&self, x: &ErrorState) -> f64 {
        -(self.0[0] * x.gamma + self.0[1] * x.e1 + self.0[2] * x.e2)
    }

    pub fn to_row(self) -> Mat {
        DMatrix::from_row_slice(1, 3, &self.0)
    }
}

impl fmt::Display for Gain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{:.6e}, {:.6e}, {:.6e}]", self.0[0], self.0[1], self.0[2])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousModel {
    pub a0: Mat,
    pub b1: Mat,
    pub b2: Mat,
    pub b3: Mat,
    pub c: Mat,
}

pub fn continuous_matrices(p: &PlatoonParams) -> ContinuousModel {
    let e = p.eps;
    let c0 = match p.output {
        OutputVariant::Printed => 1.0 - e,
        OutputVariant::Consistent => 1.0 - p.eps0,
    };
    ContinuousModel {
        a0: DMatrix::from_row_slice(3, 3, &[-1.0 / e, 1.0 / e, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0]),
        b1: DMatrix::from_column_slice(3, 1, &[0.0, 0.0, e]),
        b2: DMatrix::from_column_slice(3, 1, &[1.0 / e, 0.0, 0.0]),
        b3: DMatrix::from_row_slice(3, 2, &[0.0, 0.0, 1.0, 0.0, 0.0, 1.0]),
        c: DMatrix::from_row_slice(1, 3, &[c0, -1.0, 0.0]),
    }
}

fn check_velocity(v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("velocity {v} must be positive")))
    }
}

/// `delta1 = 1/v - 1/v_ref`
pub fn delta1(phys: &VehiclePhysState, refprof: &ReferenceVelocityProfile, s: f64) -> Result<f64> {
    check_velocity(phys.v)?;
    Ok(1.0 / phys.v - refprof.slowness(s))
}

/// `delta2 = d(delta1)/ds = -a/v^3 - d(1/v_ref)/ds`
pub fn delta2(phys: &VehiclePhysState, refprof: &ReferenceVelocityProfile, s: f64) -> Result<f64> {
    check_velocity(phys.v)?;
    Ok(-phys.a / phys.v.powi(3) - refprof.slowness_d1(s))
}

/// Error coordinates of follower `i >= 1` with `Gamma0` measured against the
/// leader's actual time, `Gamma0 = t_i - t_lead - i dT`.
pub fn error_coordinates(
    i: usize,
    phys_i: &VehiclePhysState,
    phys_pred: &VehiclePhysState,
    phys_lead: &VehiclePhysState,
    refprof: &ReferenceVelocityProfile,
    s: f64,
    p: &PlatoonParams,
) -> Result<ErrorState> {
    if i == 0 {
        return Err(Error::Domain("follower index must be >= 1".into()));
    }
    let d1 = delta1(phys_i, refprof, s)?;
    let d1p = delta1(phys_pred, refprof, s)?;
    let d10 = delta1(phys_lead, refprof, s)?;
    let d2 = delta2(phys_i, refprof, s)?;
    let gamma = phys_i.t - phys_pred.t - p.time_gap;
    let gamma0 = phys_i.t - phys_lead.t - i as f64 * p.time_gap;
    Ok(ErrorState {
        gamma,
        e1: (1.0 - p.eps0) * gamma + p.eps0 * gamma0 + p.eps * d1,
        e2: (1.0 - p.eps0) * (d1 - d1p) + p.eps0 * (d1 - d10) + p.eps * d2,
    })
}

/// Error coordinates of the whole platoon (`phys[0]` is the leader) with every
/// `Gamma0_i` measured against the reference trajectory, `t_i - t_ref - i dT`.
/// This is the convention under which `y_{i-1} = C x_{i-1}` holds for all
/// `i >= 1`, the leader included, and it is exactly inverted by
/// [`delta1_chain`] + [`reconstruct_physical`].
pub fn chain_error_coordinates(
    phys: &[VehiclePhysState],
    t_ref: f64,
    refprof: &ReferenceVelocityProfile,
    s: f64,
    p: &PlatoonParams,
) -> Result<Vec<ErrorState>> {
    let mut out = Vec::with_capacity(phys.len());
    let (mut t_prev, mut d1_prev) = (t_ref - p.time_gap, 0.0);
    for (i, ph) in phys.iter().enumerate() {
        let d1 = delta1(ph, refprof, s)?;
        let d2 = delta2(ph, refprof, s)?;
        let gamma = ph.t - t_prev - p.time_gap;
        let gamma0 = ph.t - t_ref - i as f64 * p.time_gap;
        out.push(ErrorState {
            gamma,
            e1: (1.0 - p.eps0) * gamma + p.eps0 * gamma0 + p.eps * d1,
            e2: (1.0 - p.eps0) * (d1 - d1_prev) + p.eps0 * d1 + p.eps * d2,
        });
        t_prev = ph.t;
        d1_prev = d1;
    }
    Ok(out)
}

/// Physical control input realizing the virtual input `u_hat`.
pub fn linearizing_input(
    phys: &VehiclePhysState,
    refprof: &ReferenceVelocityProfile,
    s: f64,
    u_hat: f64,
    p: &PlatoonParams,
) -> Result<f64> {
    check_velocity(phys.v)?;
    let (v, a) = (phys.v, phys.a);
    Ok(a + 3.0 * p.zeta * a * a / v - p.zeta * v.powi(4) * (refprof.slowness_d2(s) + u_hat))
}

/// `(u_bar, u_hat)` for a follower: `u_bar = -K x` and the substitution that
/// turns the linearized vehicle into the error-coordinate cascade.
pub fn virtual_input_chain(
    x: &ErrorState,
    d2_i: f64,
    d2_pred: f64,
    d2_lead: f64,
    k: &Gain,
    p: &PlatoonParams,
) -> (f64, f64) {
    let u_bar = k.apply(x);
    let u_hat = -(1.0 - p.eps0) / p.eps * (d2_i - d2_pred) - p.eps0 / p.eps * (d2_i - d2_lead)
        + u_bar;
    (u_bar, u_hat)
}

fn xi1(ph: &VehiclePhysState) -> f64 {
    -1.0 / ph.v.powi(3)
}

fn xi2(ph: &VehiclePhysState) -> f64 {
    -3.0 * ph.a / ph.v.powi(5)
}

/// Disturbance entering a follower's `(E1, E2)` rows.
pub fn disturbance_map(
    phys_i: &VehiclePhysState,
    phys_pred: &VehiclePhysState,
    phys_lead: &VehiclePhysState,
    d: [f64; 3],
    p: &PlatoonParams,
) -> Result<[f64; 2]> {
    for ph in [phys_i, phys_pred, phys_lead] {
        check_velocity(ph.v)?;
    }
    let [d_i, d_pred, d_lead] = d;
    Ok([
        p.eps * xi1(phys_i) * d_i,
        (p.eps * xi2(phys_i) + xi1(phys_i)) * d_i
            + (p.eps0 - 1.0) * xi1(phys_pred) * d_pred
            - p.eps0 * xi1(phys_lead) * d_lead,
    ])
}

/// Leader disturbance: only the lead-vehicle column of the map is active.
pub fn leader_disturbance_map(phys0: &VehiclePhysState, d0: f64, p: &PlatoonParams) -> Result<[f64; 2]> {
    check_velocity(phys0.v)?;
    Ok([0.0, -p.eps0 * xi1(phys0) * d0])
}

/// Recover `delta1_i` from an error-state chain (`chain[0]` is the leader).
pub fn delta1_chain(chain: &[ErrorState], p: &PlatoonParams) -> Vec<f64> {
    let mut gamma0 = 0.0;
    chain
        .iter()
        .map(|x| {
            gamma0 += x.gamma;
            (x.e1 - (1.0 - p.eps0) * x.gamma - p.eps0 * gamma0) / p.eps
        })
        .collect()
}

/// Invert the error coordinates back to `(t, v, a)` per vehicle.
pub fn reconstruct_physical(
    chain: &[ErrorState],
    delta1: &[f64],
    refprof: &ReferenceVelocityProfile,
    s: f64,
    t_ref: f64,
    p: &PlatoonParams,
) -> Result<Vec<VehiclePhysState>> {
    if chain.len() != delta1.len() {
        return Err(Error::Dimension(format!(
            "{} error states but {} velocity errors",
            chain.len(),
            delta1.len()
        )));
    }
    let r = refprof.slowness(s);
    let r1 = refprof.slowness_d1(s);
    let mut out = Vec::with_capacity(chain.len());
    let (mut t, mut d1_prev) = (t_ref - p.time_gap, 0.0);
    for (i, (x, &d1)) in chain.iter().zip(delta1).enumerate() {
        let slowness = d1 + r;
        if !(slowness > 0.0 && slowness.is_finite()) {
            return Err(Error::Reconstruction {
                vehicle: i,
                s,
                reason: format!("1/v = {slowness} is not positive"),
            });
        }
        let v = 1.0 / slowness;
        let d2 = (x.e2 - (1.0 - p.eps0) * (d1 - d1_prev) - p.eps0 * d1) / p.eps;
        t += p.time_gap + x.gamma;
        out.push(VehiclePhysState {
            t,
            v,
            a: -v.powi(3) * (d2 + r1),
        });
        d1_prev = d1;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn params(eps: f64, eps0: f64) -> PlatoonParams {
        PlatoonParams {
            eps,
            eps0,
            ..PlatoonParams::reference()
        }
    }

    #[test]
    fn matrices_for_eps_2() {
        let m = continuous_matrices(&params(2.0, 0.5));
        assert_eq!(m.a0.row(0).iter().copied().collect::<Vec<_>>(), vec![-0.5, 0.5, 0.0]);
        assert_eq!(m.b1.as_slice(), &[0.0, 0.0, 2.0]);
        assert_eq!(m.b2.as_slice(), &[0.5, 0.0, 0.0]);
        assert_eq!(m.c.as_slice(), &[0.5, -1.0, 0.0]);
    }

    #[test]
    fn printed_output_row() {
        let p = PlatoonParams {
            output: OutputVariant::Printed,
            ..params(1.0, 0.5)
        };
        assert_eq!(continuous_matrices(&p).c.as_slice(), &[0.0, -1.0, 0.0]);
    }

    #[test]
    fn validation() {
        assert!(params(2.0, 1.0).validate().is_err());
        assert!(params(0.0, 0.5).validate().is_err());
        assert!(params(2.0, 0.0).validate().is_ok());
        let bad = PlatoonParams {
            v_min: 22.0,
            ..PlatoonParams::reference()
        };
        assert!(bad.validate().is_err());
    }

    fn cruise(t: f64) -> VehiclePhysState {
        VehiclePhysState { t, v: 20.0, a: 0.0 }
    }

    #[test]
    fn nominal_trajectory_is_equilibrium() {
        let p = PlatoonParams::reference();
        let prof = ReferenceVelocityProfile::speed_up_slow_down();
        let s = 250.0;
        let v = prof.velocity(s);
        let a = -v.powi(3) * prof.slowness_d1(s);
        let ph = |t| VehiclePhysState { t, v, a };
        for i in 1..5 {
            let x = error_coordinates(
                i,
                &ph(3.0 + i as f64),
                &ph(2.0 + i as f64),
                &ph(3.0),
                &prof,
                s,
                &p,
            )
            .unwrap();
            assert_abs_diff_eq!(x.gamma, 0.0, epsilon = 1e-15);
            assert_abs_diff_eq!(x.e1, 0.0, epsilon = 1e-15);
            assert_abs_diff_eq!(x.e2, 0.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn error_coordinate_examples() {
        let p = params(2.0, 0.5);
        let prof = ReferenceVelocityProfile::constant(20.0, 1000.0);
        let x = error_coordinates(1, &cruise(1.1), &cruise(0.0), &cruise(0.0), &prof, 0.0, &p).unwrap();
        assert_abs_diff_eq!(x.gamma, 0.1, epsilon = 1e-12);
        assert_abs_diff_eq!(x.e1, 0.1, epsilon = 1e-12);

        let slow = VehiclePhysState {
            t: 1.0,
            v: 1.0 / (0.05 + 0.01),
            a: 0.0,
        };
        let x = error_coordinates(1, &slow, &cruise(0.0), &cruise(0.0), &prof, 0.0, &p).unwrap();
        assert_abs_diff_eq!(x.gamma, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(x.e1, 0.02, epsilon = 1e-12);

        let stopped = VehiclePhysState { t: 1.0, v: 0.0, a: 0.0 };
        assert!(error_coordinates(1, &stopped, &cruise(0.0), &cruise(0.0), &prof, 0.0, &p).is_err());
    }

    #[test]
    fn linearizing_input_examples() {
        let p = PlatoonParams::reference();
        let prof = ReferenceVelocityProfile::constant(20.0, 1000.0);
        assert_eq!(linearizing_input(&cruise(0.0), &prof, 0.0, 0.0, &p).unwrap(), 0.0);
        let ph = VehiclePhysState { t: 0.0, v: 20.0, a: 1.0 };
        assert_abs_diff_eq!(linearizing_input(&ph, &prof, 0.0, 0.0, &p).unwrap(), 1.081, epsilon = 1e-12);
        assert_abs_diff_eq!(
            linearizing_input(&ph, &prof, 0.0, 1e-5, &p).unwrap(),
            1.081 - 0.54 * 160000.0 * 1e-5,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(linearizing_input(&ph, &prof, 0.0, 1e-5, &p).unwrap(), 0.217, epsilon = 1e-12);
    }

    #[test]
    fn virtual_input_examples() {
        let p = params(2.0, 0.5);
        assert_eq!(virtual_input_chain(&ErrorState::default(), 0.3, 0.3, 0.3, &Gain::BASELINE, &p), (0.0, 0.0));
        let (ub, _) = virtual_input_chain(&ErrorState::new(0.0, 1.0, 0.0), 0.0, 0.0, 0.0, &Gain::BASELINE, &p);
        assert_abs_diff_eq!(ub, -0.09, epsilon = 1e-15);
        let (ub, uh) = virtual_input_chain(&ErrorState::default(), 0.1, 0.0, 0.0, &Gain::BASELINE, &p);
        assert_eq!(ub, 0.0);
        assert_abs_diff_eq!(uh, -0.05, epsilon = 1e-15);
    }

    #[test]
    fn disturbance_examples() {
        let p = params(2.0, 0.5);
        let z = disturbance_map(&cruise(0.0), &cruise(0.0), &cruise(0.0), [0.0; 3], &p).unwrap();
        assert_eq!(z, [0.0, 0.0]);
        let d = disturbance_map(&cruise(0.0), &cruise(0.0), &cruise(0.0), [1.0, 0.0, 0.0], &p).unwrap();
        assert_abs_diff_eq!(d[0], -2.5e-4, epsilon = 1e-18);
        assert_abs_diff_eq!(d[1], -1.25e-4, epsilon = 1e-18);
        let l = leader_disturbance_map(&cruise(0.0), 1.0, &p).unwrap();
        assert_abs_diff_eq!(l[1], 0.5 / 8000.0, epsilon = 1e-18);
        assert_eq!(l[0], 0.0);
    }

    #[test]
    fn reconstruction_examples() {
        let p = PlatoonParams::reference();
        let prof = ReferenceVelocityProfile::constant(20.0, 1000.0);
        let x = [ErrorState::default()];
        let v = |d1: f64| reconstruct_physical(&x, &[d1], &prof, 0.0, 0.0, &p).unwrap()[0].v;
        assert_abs_diff_eq!(v(0.0), 20.0, epsilon = 1e-12);
        assert_abs_diff_eq!(v(0.01), 1.0 / 0.06, epsilon = 1e-12);
        assert_abs_diff_eq!(v(-1.0 / 40.0), 40.0, epsilon = 1e-12);
        assert!(matches!(
            reconstruct_physical(&x, &[-0.05], &prof, 0.0, 0.0, &p),
            Err(Error::Reconstruction { vehicle: 0, .. })
        ));
    }

    /// Integrate the spatial vehicle model with RK4 under a smooth input.
    fn integrate(
        mut st: VehiclePhysState,
        u: impl Fn(f64) -> f64,
        s0: f64,
        s1: f64,
        steps: usize,
        zeta: f64,
    ) -> VehiclePhysState {
        let f = |s: f64, y: [f64; 3]| -> [f64; 3] {
            let (v, a) = (y[1], y[2]);
            [1.0 / v, a / v, (-a + u(s)) / (zeta * v)]
        };
        let hs = (s1 - s0) / steps as f64;
        let mut y = [st.t, st.v, st.a];
        for k in 0..steps {
            let s = s0 + hs * k as f64;
            let add = |y: [f64; 3], k: [f64; 3], c: f64| [y[0] + c * k[0], y[1] + c * k[1], y[2] + c * k[2]];
            let k1 = f(s, y);
            let k2 = f(s + hs / 2.0, add(y, k1, hs / 2.0));
            let k3 = f(s + hs / 2.0, add(y, k2, hs / 2.0));
            let k4 = f(s + hs, add(y, k3, hs));
            for j in 0..3 {
                y[j] += hs / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
            }
        }
        st.t = y[0];
        st.v = y[1];
        st.a = y[2];
        st
    }

    #[test]
    fn e1_derivative_matches_e2_along_trajectory() {
        let p = PlatoonParams::reference();
        let prof = ReferenceVelocityProfile::speed_up_slow_down();
        let inputs: [fn(f64) -> f64; 3] = [
            |s| 0.3 * (0.02 * s).sin(),
            |s| -0.2 * (0.03 * s).cos(),
            |s| 0.1 + 0.05 * (0.05 * s).sin(),
        ];
        let init = [
            VehiclePhysState { t: 0.2, v: 20.5, a: 0.1 },
            VehiclePhysState { t: 1.1, v: 19.6, a: -0.2 },
            VehiclePhysState { t: 2.3, v: 20.2, a: 0.0 },
        ];
        let at = |s: f64| -> Vec<VehiclePhysState> {
            init.iter()
                .zip(inputs.iter())
                .map(|(st, u)| integrate(*st, u, 0.0, s, (s * 20.0) as usize, p.zeta))
                .collect()
        };
        let step = 1e-3;
        for s in [150.0, 420.0] {
            let e1 = |s: f64| {
                let ph = at(s);
                error_coordinates(2, &ph[2], &ph[1], &ph[0], &prof, s, &p).unwrap().e1
            };
            let ph = at(s);
            let x = error_coordinates(2, &ph[2], &ph[1], &ph[0], &prof, s, &p).unwrap();
            let fd = (e1(s + step) - e1(s - step)) / (2.0 * step);
            assert_abs_diff_eq!(fd, x.e2, epsilon = 1e-4);

            // The reference-anchored chain obeys the same identity.
            let t_ref = |s: f64| prof.travel_time(0.0, s, 2000);
            let ce1 = |s: f64| chain_error_coordinates(&at(s), t_ref(s), &prof, s, &p).unwrap();
            let chain = ce1(s);
            let (lo, hi) = (ce1(s - step), ce1(s + step));
            for i in 0..3 {
                assert_abs_diff_eq!((hi[i].e1 - lo[i].e1) / (2.0 * step), chain[i].e2, epsilon = 1e-4);
            }
        }
    }

    proptest! {
        #[test]
        fn chain_round_trip_and_output_equivalence(
            ts in prop::collection::vec(-0.3f64..0.3, 4),
            vs in prop::collection::vec(18.0f64..22.0, 4),
            acc in prop::collection::vec(-1.0f64..1.0, 4),
            s in 0.0f64..1000.0,
        ) {
            let p = PlatoonParams::reference();
            let prof = ReferenceVelocityProfile::speed_up_slow_down();
            let t_ref = 7.0;
            let phys: Vec<_> = (0..4)
                .map(|i| VehiclePhysState { t: t_ref + i as f64 * p.time_gap + ts[i], v: vs[i], a: acc[i] })
                .collect();
            let chain = chain_error_coordinates(&phys, t_ref, &prof, s, &p).unwrap();

            // Gamma0 telescopes.
            let mut g0 = 0.0;
            for (i, x) in chain.iter().enumerate() {
                g0 += x.gamma;
                prop_assert!((g0 - (phys[i].t - t_ref - i as f64 * p.time_gap)).abs() < 1e-12);
            }

            // C x_i = -eps0 Gamma0_i - eps delta1_i.
            let c = continuous_matrices(&p).c;
            let d1 = delta1_chain(&chain, &p);
            let mut g0 = 0.0;
            for (i, x) in chain.iter().enumerate() {
                g0 += x.gamma;
                let y = (&c * DMatrix::from_column_slice(3, 1, x.to_vector().as_slice()))[0];
                prop_assert!((y - (-p.eps0 * g0 - p.eps * d1[i])).abs() < 1e-10);
                let direct = delta1(&phys[i], &prof, s).unwrap();
                prop_assert!((d1[i] - direct).abs() < 1e-10);
            }

            let back = reconstruct_physical(&chain, &d1, &prof, s, t_ref, &p).unwrap();
            for (a, b) in back.iter().zip(&phys) {
                prop_assert!((a.t - b.t).abs() < 1e-10);
                prop_assert!((a.v - b.v).abs() < 1e-8);
                prop_assert!((a.a - b.a).abs() < 1e-6);
            }
        }
    }
}
