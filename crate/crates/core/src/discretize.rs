//! Exact sampled-data model of one follower with a delayed input, and its
//! lifting to the augmented state `[x_k; u_{k-1}; ...; u_{k-p}]`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{expm, expm_integral, Mat};
use crate::model::{continuous_matrices, ContinuousModel, ErrorState, PlatoonParams};

/// Delay-independent pieces of the discretization.
#[derive(Debug, Clone)]
pub struct Discretization {
    pub params: PlatoonParams,
    pub cont: ContinuousModel,
    /// `e^{A0 h}`
    pub phi: Mat,
    /// `int_0^h e^{A0 s} ds`
    pub psi_h: Mat,
}

/// `X_k = [x_k; u_{k-1}; ...; u_{k-p}]`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugState {
    pub x: ErrorState,
    pub past: Vec<f64>,
}

impl AugState {
    pub fn zero(p: usize) -> Self {
        Self {
            x: ErrorState::default(),
            past: vec![0.0; p],
        }
    }

    pub fn to_column(&self) -> Mat {
        let mut v = vec![self.x.gamma, self.x.e1, self.x.e2];
        v.extend_from_slice(&self.past);
        DMatrix::from_column_slice(v.len(), 1, &v)
    }

    pub fn from_column(col: &Mat) -> Self {
        let s = col.as_slice();
        Self {
            x: ErrorState::from_slice(&s[..3]),
            past: s[3..].to_vec(),
        }
    }
}

impl Discretization {
    pub fn new(params: &PlatoonParams) -> Result<Self> {
        params.validate()?;
        let cont = continuous_matrices(params);
        let phi = expm(&cont.a0, params.h)?;
        let psi_h = expm_integral(&cont.a0, params.h)?;
        Ok(Self {
            params: *params,
            cont,
            phi,
            psi_h,
        })
    }

    pub fn h(&self) -> f64 {
        self.params.h
    }

    fn check_tau_bar(&self, tau_bar: f64) -> Result<()> {
        if (0.0..=self.h()).contains(&tau_bar) {
            Ok(())
        } else {
            Err(Error::Domain(format!(
                "delay remainder {tau_bar} outside [0, {}]",
                self.h()
            )))
        }
    }

    /// `(Y1, Y0)`: the parts of `int_0^h e^{A0 s} ds B1` weighting the newer
    /// and older input respectively. `Y1 + Y0` does not depend on `tau_bar`.
    pub fn input_integrals(&self, tau_bar: f64) -> Result<(Mat, Mat)> {
        self.check_tau_bar(tau_bar)?;
        let y1 = expm_integral(&self.cont.a0, self.h() - tau_bar)? * &self.cont.b1;
        // int_{h-tb}^h e^{A0 s} ds = e^{A0 (h-tb)} int_0^tb e^{A0 s} ds
        let y0 = expm(&self.cont.a0, self.h() - tau_bar)?
            * expm_integral(&self.cont.a0, tau_bar)?
            * &self.cont.b1;
        Ok((y1, y0))
    }

    /// One exact sampling step. During the first `tau_bar` metres of the
    /// interval the older input `u_old` is still applied; afterwards `u_new`.
    #[allow(clippy::too_many_arguments)]
    pub fn discrete_step(
        &self,
        x: &ErrorState,
        u_new: f64,
        u_old: f64,
        y_prev: f64,
        d: [f64; 2],
        tau_bar: f64,
    ) -> Result<ErrorState> {
        let (y1, y0) = self.input_integrals(tau_bar)?;
        let xv = DMatrix::from_column_slice(3, 1, x.to_vector().as_slice());
        let exo = &self.cont.b2 * y_prev + &self.cont.b3 * DMatrix::from_column_slice(2, 1, &d);
        let next = &self.phi * xv + y1 * u_new + y0 * u_old + &self.psi_h * exo;
        Ok(ErrorState::from_slice(next.as_slice()))
    }

    /// Augmented `(A_bar, B_bar)` for delay multiplicity `p` and remainder `tau_bar`.
    pub fn build_augmented(&self, tau_bar: f64, p: usize) -> Result<(Mat, Mat)> {
        let (y1, y0) = self.input_integrals(tau_bar)?;
        lift(&self.phi, &y1, &y0, p)
    }

    /// `(L, G)`: how `y_{i-1}` and the disturbance enter the augmented state.
    pub fn build_lg(&self, p: usize) -> (Mat, Mat) {
        let mut l = Mat::zeros(3 + p, 1);
        let mut g = Mat::zeros(3 + p, 2);
        l.view_mut((0, 0), (3, 1))
            .copy_from(&(&self.psi_h * &self.cont.b2));
        g.view_mut((0, 0), (3, 2))
            .copy_from(&(&self.psi_h * &self.cont.b3));
        (l, g)
    }

    /// Augmented output row `[C 0]`.
    pub fn output_row(&self, p: usize) -> Mat {
        let mut c = Mat::zeros(1, 3 + p);
        c.view_mut((0, 0), (1, 3)).copy_from(&self.cont.c);
        c
    }
}

/// Place a state block and the two input columns into the augmented layout.
/// For `p = 1` the newer input is the current one and enters through `B_bar`;
/// for `p > 1` both input columns sit in `A_bar` and `B_bar` only feeds the
/// shift register.
pub fn lift(phi: &Mat, y1: &Mat, y0: &Mat, p: usize) -> Result<(Mat, Mat)> {
    if p < 1 {
        return Err(Error::Domain("delay multiplicity p must be >= 1".into()));
    }
    let n = 3 + p;
    let mut a = Mat::zeros(n, n);
    let mut b = Mat::zeros(n, 1);
    a.view_mut((0, 0), (3, 3)).copy_from(phi);
    if p == 1 {
        b.view_mut((0, 0), (3, 1)).copy_from(y1);
    } else {
        a.view_mut((0, 3 + p - 2), (3, 1)).copy_from(y1);
    }
    a.view_mut((0, 3 + p - 1), (3, 1)).copy_from(y0);
    b[(3, 0)] = 1.0;
    for j in 1..p {
        a[(3 + j, 3 + j - 1)] = 1.0;
    }
    Ok((a, b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn disc() -> Discretization {
        Discretization::new(&PlatoonParams::reference()).unwrap()
    }

    /// RK4 over `[0, len]` of `x' = A0 x + B1 u + B2 y + B3 d` with constant inputs.
    fn rk4(d: &Discretization, x: [f64; 3], u: f64, y: f64, dist: [f64; 2], len: f64, steps: usize) -> [f64; 3] {
        let m = &d.cont;
        let f = |x: &[f64; 3]| -> [f64; 3] {
            let mut out = [0.0; 3];
            for r in 0..3 {
                out[r] = (0..3).map(|c| m.a0[(r, c)] * x[c]).sum::<f64>()
                    + m.b1[(r, 0)] * u
                    + m.b2[(r, 0)] * y
                    + m.b3[(r, 0)] * dist[0]
                    + m.b3[(r, 1)] * dist[1];
            }
            out
        };
        let hs = len / steps as f64;
        let mut x = x;
        let add = |x: &[f64; 3], k: &[f64; 3], c: f64| [x[0] + c * k[0], x[1] + c * k[1], x[2] + c * k[2]];
        for _ in 0..steps {
            let k1 = f(&x);
            let k2 = f(&add(&x, &k1, hs / 2.0));
            let k3 = f(&add(&x, &k2, hs / 2.0));
            let k4 = f(&add(&x, &k3, hs));
            for j in 0..3 {
                x[j] += hs / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
            }
        }
        x
    }

    #[test]
    fn zero_in_zero_out() {
        let d = disc();
        let x = d
            .discrete_step(&ErrorState::default(), 0.0, 0.0, 0.0, [0.0; 2], 0.2)
            .unwrap();
        assert_eq!(x, ErrorState::default());
    }

    #[test]
    fn rejects_bad_remainder() {
        let d = disc();
        assert!(d.input_integrals(-0.01).is_err());
        assert!(d.input_integrals(0.51).is_err());
        assert!(d.build_augmented(0.1, 0).is_err());
    }

    #[test]
    fn zero_remainder_drops_old_input() {
        let d = disc();
        let (_, y0) = d.input_integrals(0.0).unwrap();
        assert!(y0.norm() < 1e-15);
        let (y1, y0) = d.input_integrals(d.h()).unwrap();
        assert!(y1.norm() < 1e-15);
        assert!((y0 - &d.psi_h * &d.cont.b1).norm() < 1e-15);
    }

    #[test]
    fn exact_against_ode_oracle() {
        let d = disc();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for trial in 0..100 {
            let x0 = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let (un, uo, y) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let dist = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let tb = if trial == 0 { 0.2 } else { rng.random_range(0.0..=d.h()) };
            let mid = rk4(&d, x0, uo, y, dist, tb, 400);
            let end = rk4(&d, mid, un, y, dist, d.h() - tb, 400);
            let got = d
                .discrete_step(&ErrorState::from_slice(&x0), un, uo, y, dist, tb)
                .unwrap();
            assert_abs_diff_eq!(got.gamma, end[0], epsilon = 1e-8);
            assert_abs_diff_eq!(got.e1, end[1], epsilon = 1e-8);
            assert_abs_diff_eq!(got.e2, end[2], epsilon = 1e-8);
        }
    }

    #[test]
    fn undelayed_p1_reduction() {
        let d = disc();
        let (a, b) = d.build_augmented(0.0, 1).unwrap();
        let x = AugState {
            x: ErrorState::new(0.3, -0.2, 0.1),
            past: vec![0.7],
        };
        let next = &a * x.to_column() + &b * 0.4;
        let direct = d
            .discrete_step(&x.x, 0.4, 0.7, 0.0, [0.0; 2], 0.0)
            .unwrap();
        let n = AugState::from_column(&next);
        assert_abs_diff_eq!(n.x.gamma, direct.gamma, epsilon = 1e-15);
        assert_abs_diff_eq!(n.x.e2, direct.e2, epsilon = 1e-15);
        assert_eq!(n.past, vec![0.4]);
    }

    #[test]
    fn augmented_matches_direct_bookkeeping() {
        let d = disc();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for p in [1usize, 2, 3, 5] {
            let (l, g) = d.build_lg(p);
            let mut aug = AugState::zero(p);
            let mut x = ErrorState::default();
            let mut hist: Vec<f64> = vec![0.0; p]; // hist[j] = u_{k-1-j}
            for _ in 0..30 {
                let tb = rng.random_range(0.0..=d.h());
                let u = rng.random_range(-1.0..1.0);
                let y = rng.random_range(-1.0..1.0);
                let dist = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
                let (a, b) = d.build_augmented(tb, p).unwrap();
                let next = &a * aug.to_column()
                    + &b * u
                    + &l * y
                    + &g * DMatrix::from_column_slice(2, 1, &dist);
                aug = AugState::from_column(&next);
                // u_{k-p+1} and u_{k-p} with the current input prepended.
                let mut all = vec![u];
                all.extend_from_slice(&hist);
                x = d.discrete_step(&x, all[p - 1], all[p], y, dist, tb).unwrap();
                hist = all[..p].to_vec();
                assert_abs_diff_eq!(aug.x.gamma, x.gamma, epsilon = 1e-10);
                assert_abs_diff_eq!(aug.x.e1, x.e1, epsilon = 1e-10);
                assert_abs_diff_eq!(aug.x.e2, x.e2, epsilon = 1e-10);
                assert_eq!(aug.past, hist);
            }
        }
    }

    #[test]
    fn lg_structure_and_quadrature() {
        let d = disc();
        for p in [1, 4, 8] {
            let (l, g) = d.build_lg(p);
            assert_eq!((l.nrows(), l.ncols()), (3 + p, 1));
            assert_eq!((g.nrows(), g.ncols()), (3 + p, 2));
            assert!(l.rows(3, p).iter().chain(g.rows(3, p).iter()).all(|v| *v == 0.0));
        }
        // Composite Simpson of e^{A0 s} B2 over [0, h].
        let (l, _) = d.build_lg(1);
        let n = 2000;
        let w = d.h() / n as f64;
        let mut acc = Mat::zeros(3, 1);
        for k in 0..=n {
            let c = if k == 0 || k == n { 1.0 } else if k % 2 == 1 { 4.0 } else { 2.0 };
            acc += expm(&d.cont.a0, w * k as f64).unwrap() * &d.cont.b2 * (c * w / 3.0);
        }
        assert!((l.rows(0, 3) - acc).abs().max() < 1e-10);
    }

    #[test]
    fn continuity_in_remainder() {
        let d = disc();
        let jump = |n: usize| {
            (0..n)
                .map(|k| {
                    let t0 = d.h() * k as f64 / n as f64;
                    let t1 = d.h() * (k + 1) as f64 / n as f64;
                    let (a0, b0) = d.build_augmented(t0, 3).unwrap();
                    let (a1, b1) = d.build_augmented(t1, 3).unwrap();
                    (a1 - a0).abs().max().max((b1 - b0).abs().max())
                })
                .fold(0.0, f64::max)
        };
        let (coarse, fine) = (jump(10), jump(100));
        assert!(fine < coarse / 5.0);
    }

    proptest! {
        #[test]
        fn input_integrals_tile(tb in 0.0f64..=0.5) {
            let d = disc();
            let (y1, y0) = d.input_integrals(tb).unwrap();
            let total = &d.psi_h * &d.cont.b1;
            prop_assert!((y1 + y0 - total).abs().max() < 1e-12);
        }
    }
}
