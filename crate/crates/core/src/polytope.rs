//! Polytopic overapproximation of the delay-dependent input integrals.
//!
//! `int_0^{h - tb} e^{A0 s} ds = F0 + q1 F1 + q2 F2 + q3 F3` with
//! `q1 = h - tb`, `q2 = (h - tb)^2`, `q3 = e^{rate (h - tb)}`. Bounding each
//! `q_n` independently gives a box whose 8 corners generate a polytope that
//! contains every delay realization. The box ignores that all three
//! coefficients are functions of the same `tb`, so it is conservative.

use serde::{Deserialize, Serialize};

use crate::discretize::{lift, Discretization};
use crate::error::{Error, Result};
use crate::linalg::{jordan_platoon, Mat};

pub const NU: usize = 3;
pub const VERTICES: usize = 1 << NU;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    /// `[F0, F1, F2, F3]`
    pub f: Vec<Mat>,
    pub h: f64,
    /// Exponent of `q3`; `-1/eps` unless overridden.
    pub rate: f64,
}

impl Decomposition {
    pub fn coefficients(&self, tau_bar: f64) -> [f64; NU] {
        let l = self.h - tau_bar;
        [l, l * l, (self.rate * l).exp()]
    }

    pub fn combine(&self, q: &[f64; NU]) -> Mat {
        let mut m = self.f[0].clone();
        for n in 0..NU {
            m += &self.f[n + 1] * q[n];
        }
        m
    }

    pub fn reconstruct(&self, tau_bar: f64) -> Mat {
        self.combine(&self.coefficients(tau_bar))
    }
}

/// Build `F0..F3` from the closed-form Jordan data of `A0`. With `rate = None`
/// the exponent is the true nonzero eigenvalue and the reconstruction is
/// exact; an explicit rate replaces that eigenvalue throughout.
pub fn decompose_integral(disc: &Discretization, rate: Option<f64>) -> Result<Decomposition> {
    let jd = jordan_platoon(&disc.cont.a0)?;
    let lambda = match rate {
        Some(r) if r < 0.0 && r.is_finite() => r,
        Some(r) => return Err(Error::Domain(format!("jordan rate {r} must be negative"))),
        None => jd.blocks[1].eigenvalue,
    };
    let core = |entries: &[(usize, usize, f64)]| {
        let mut j = Mat::zeros(3, 3);
        for &(r, c, v) in entries {
            j[(r, c)] = v;
        }
        &jd.q * j * &jd.q_inv
    };
    Ok(Decomposition {
        f: vec![
            core(&[(2, 2, -1.0 / lambda)]),
            core(&[(0, 0, 1.0), (1, 1, 1.0)]),
            core(&[(0, 1, 0.5)]),
            core(&[(2, 2, 1.0 / lambda)]),
        ],
        h: disc.h(),
        rate: lambda,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoefficientBounds {
    pub lower: [f64; NU],
    pub upper: [f64; NU],
}

impl CoefficientBounds {
    pub fn contains(&self, q: &[f64; NU], tol: f64) -> bool {
        (0..NU).all(|n| q[n] >= self.lower[n] - tol && q[n] <= self.upper[n] + tol)
    }
}

/// Exact interval images of the coefficients over `[tau_min, tau_max]`; every
/// `q_n` is monotone in `tb`, so the endpoints suffice.
pub fn coefficient_bounds(dec: &Decomposition, tau_min: f64, tau_max: f64) -> Result<CoefficientBounds> {
    if !(0.0 <= tau_min && tau_min <= tau_max && tau_max <= dec.h) {
        return Err(Error::Domain(format!(
            "delay interval [{tau_min}, {tau_max}] not inside [0, {}]",
            dec.h
        )));
    }
    let a = dec.coefficients(tau_min);
    let b = dec.coefficients(tau_max);
    let mut lower = [0.0; NU];
    let mut upper = [0.0; NU];
    for n in 0..NU {
        lower[n] = a[n].min(b[n]);
        upper[n] = a[n].max(b[n]);
    }
    Ok(CoefficientBounds { lower, upper })
}

/// Corner `j` of the box: bit `n` of `j` selects the upper bound of `q_{n+1}`.
pub fn corner(bounds: &CoefficientBounds, j: usize) -> [f64; NU] {
    let mut eta = [0.0; NU];
    for (n, e) in eta.iter_mut().enumerate() {
        *e = if j >> n & 1 == 1 {
            bounds.upper[n]
        } else {
            bounds.lower[n]
        };
    }
    eta
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VertexSet {
    pub p: usize,
    pub bounds: CoefficientBounds,
    pub eta: Vec<[f64; NU]>,
    /// `V_j = F0 + sum eta_n F_n`
    pub vertices: Vec<Mat>,
    /// Lifted state matrices, one per vertex.
    pub s_m: Vec<Mat>,
    /// Lifted input matrices, one per vertex.
    pub s_h: Vec<Mat>,
}

impl VertexSet {
    /// Multilinear weights expressing `q` (inside the box) as a convex
    /// combination of the corners. Degenerate bound pairs put all weight on
    /// the lower corner.
    pub fn convex_weights(&self, q: &[f64; NU]) -> Vec<f64> {
        let t: Vec<f64> = (0..NU)
            .map(|n| {
                let w = self.bounds.upper[n] - self.bounds.lower[n];
                if w > 0.0 {
                    ((q[n] - self.bounds.lower[n]) / w).clamp(0.0, 1.0)
                } else {
                    0.0
                }
            })
            .collect();
        (0..VERTICES)
            .map(|j| {
                (0..NU)
                    .map(|n| if j >> n & 1 == 1 { t[n] } else { 1.0 - t[n] })
                    .product()
            })
            .collect()
    }

    /// `(sum w_j S_M_j, sum w_j S_H_j)`
    pub fn combination(&self, w: &[f64]) -> (Mat, Mat) {
        let n = 3 + self.p;
        let mut m = Mat::zeros(n, n);
        let mut hh = Mat::zeros(n, 1);
        for (j, &wj) in w.iter().enumerate() {
            m += &self.s_m[j] * wj;
            hh += &self.s_h[j] * wj;
        }
        (m, hh)
    }
}

pub fn enumerate_vertices(
    dec: &Decomposition,
    bounds: &CoefficientBounds,
    p: usize,
    disc: &Discretization,
) -> Result<VertexSet> {
    let total = &disc.psi_h * &disc.cont.b1;
    let mut set = VertexSet {
        p,
        bounds: *bounds,
        eta: Vec::with_capacity(VERTICES),
        vertices: Vec::with_capacity(VERTICES),
        s_m: Vec::with_capacity(VERTICES),
        s_h: Vec::with_capacity(VERTICES),
    };
    for j in 0..VERTICES {
        let eta = corner(bounds, j);
        let v = dec.combine(&eta);
        let y1: Mat = &v * &disc.cont.b1;
        let y0: Mat = &total - &y1;
        let (sm, sh) = lift(&disc.phi, &y1, &y0, p)?;
        set.eta.push(eta);
        set.vertices.push(v);
        set.s_m.push(sm);
        set.s_h.push(sh);
    }
    Ok(set)
}
