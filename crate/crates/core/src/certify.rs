//! A-posteriori checks of synthesized gains on the exact sampled-data
//! matrices: Lyapunov decrease, spectral radius, frequency-domain gains.
//!
//! Everything here samples the delay remainder on a grid; a pass is a
//! sampled certification, not a proof for the continuum.

use nalgebra::{Complex, DMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::discretize::Discretization;
use crate::error::{Error, Result};
use crate::linalg::{min_sym_eigenvalue, spectral_radius, symmetrize, Mat};
use crate::lmi::{SynthesisData, SynthesisResult};
use crate::model::{Gain, PlatoonParams};
use crate::polytope::VertexSet;

pub const DEFAULT_GRID_POINTS: usize = 101;
pub const DEFAULT_OMEGA_POINTS: usize = 2001;

/// Common quadratic Lyapunov function `V(X) = X^T P X` with decay `mu`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    /// Normalized so that its largest eigenvalue is one.
    pub p_mat: Mat,
    pub decay: f64,
    pub gain: Gain,
    pub p: usize,
    pub params: PlatoonParams,
    pub tau_min: f64,
    pub tau_max: f64,
}

impl Certificate {
    pub fn new(
        p_mat: &Mat,
        decay: f64,
        gain: Gain,
        p: usize,
        params: PlatoonParams,
        tau_range: (f64, f64),
    ) -> Result<Self> {
        let n = 3 + p;
        if p_mat.shape() != (n, n) {
            return Err(Error::Dimension(format!(
                "certificate matrix is {:?}, expected {n}x{n}",
                p_mat.shape()
            )));
        }
        if !p_mat.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("certificate"));
        }
        let asym = (p_mat - p_mat.transpose()).abs().max();
        if asym > 1e-8 * p_mat.abs().max().max(1.0) {
            return Err(Error::Structure(format!("certificate is not symmetric ({asym:.2e})")));
        }
        let sym = symmetrize(p_mat);
        let eig = sym.clone().symmetric_eigenvalues();
        let (lo, hi) = (eig.min(), eig.max());
        if !(lo > 0.0) {
            return Err(Error::Structure(format!("certificate is not positive definite (min eig {lo:.3e})")));
        }
        Ok(Self {
            p_mat: sym / hi,
            decay,
            gain,
            p,
            params,
            tau_min: tau_range.0,
            tau_max: tau_range.1,
        })
    }

    pub fn from_synthesis(res: &SynthesisResult, params: &PlatoonParams) -> Result<Self> {
        let (Some(p_mat), Some(gain)) = (&res.p_cert, res.gain) else {
            return Err(Error::NoSolution(format!("synthesis for p = {} was not feasible", res.p)));
        };
        let tau_max = res.options.tau_max.unwrap_or(params.h);
        Self::new(p_mat, res.decay, gain, res.p, *params, (res.options.tau_min, tau_max))
    }
}

/// `n` uniform points on `[lo, hi]`, both ends included.
pub fn uniform_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n)
            .map(|i| if i + 1 == n { hi } else { lo + (hi - lo) * i as f64 / (n - 1) as f64 })
            .collect(),
    }
}

/// `D(tau_bar) = A_bar - B_bar [K 0]` from the exact discretization.
pub fn closed_loop(disc: &Discretization, gain: Gain, p: usize, tau_bar: f64) -> Result<Mat> {
    let (a, b) = disc.build_augmented(tau_bar, p)?;
    let mut kbar = Mat::zeros(1, 3 + p);
    kbar.view_mut((0, 0), (1, 3)).copy_from(&gain.to_row());
    Ok(a - b * kbar)
}

/// Smallest eigenvalue of `(1 - mu) P - D^T P D`.
pub fn decrease_margin(p_mat: &Mat, decay: f64, d: &Mat) -> Result<f64> {
    min_sym_eigenvalue(&(p_mat * (1.0 - decay) - d.transpose() * p_mat * d))
}

fn check_grid(grid: &[f64], lo: f64, hi: f64) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::Domain("empty delay grid".into()));
    }
    match grid.iter().find(|&&t| !(t >= lo - 1e-15 && t <= hi + 1e-15)) {
        Some(t) => Err(Error::Domain(format!("grid point {t} outside [{lo}, {hi}]"))),
        None => Ok(()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub tau_bar: f64,
    pub margin: f64,
    pub spectral_radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovReport {
    pub kind: String,
    pub points: Vec<GridPoint>,
    pub worst_tau_bar: f64,
    pub worst_margin: f64,
    pub tolerance: f64,
    pub pass: bool,
    /// Worst margin on a grid of twice the density.
    pub refined_worst_margin: f64,
    /// `|refined - worst| / |worst|`
    pub refinement_change: f64,
}

pub fn check_lyapunov_grid(cert: &Certificate, grid: &[f64], tol: f64) -> Result<LyapunovReport> {
    check_grid(grid, cert.tau_min, cert.tau_max)?;
    let disc = Discretization::new(&cert.params)?;
    let eval = |tb: f64| -> Result<GridPoint> {
        let d = closed_loop(&disc, cert.gain, cert.p, tb)?;
        Ok(GridPoint {
            tau_bar: tb,
            margin: decrease_margin(&cert.p_mat, cert.decay, &d)?,
            spectral_radius: spectral_radius(&d)?,
        })
    };
    let points: Vec<GridPoint> = grid.par_iter().map(|&tb| eval(tb)).collect::<Result<_>>()?;
    let worst = points
        .iter()
        .min_by(|a, b| a.margin.total_cmp(&b.margin))
        .copied()
        .expect("non-empty grid");

    let (lo, hi) = (
        grid.iter().copied().fold(f64::INFINITY, f64::min),
        grid.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    );
    let refined = if grid.len() > 1 {
        uniform_grid(lo, hi, 2 * grid.len() - 1)
            .par_iter()
            .map(|&tb| eval(tb).map(|g| g.margin))
            .collect::<Result<Vec<f64>>>()?
            .into_iter()
            .fold(f64::INFINITY, f64::min)
    } else {
        worst.margin
    };
    Ok(LyapunovReport {
        kind: "sampled certification".into(),
        worst_tau_bar: worst.tau_bar,
        worst_margin: worst.margin,
        tolerance: tol,
        pass: points.iter().all(|g| g.margin >= -tol),
        refined_worst_margin: refined,
        refinement_change: (refined - worst.margin).abs() / worst.margin.abs().max(1e-300),
        points,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadiusReport {
    pub points: Vec<(f64, f64)>,
    pub max_radius: f64,
    pub worst_tau_bar: f64,
    pub pass: bool,
}

pub fn spectral_radius_scan(
    gain: Gain,
    grid: &[f64],
    p: usize,
    params: &PlatoonParams,
) -> Result<RadiusReport> {
    check_grid(grid, 0.0, params.h)?;
    let disc = Discretization::new(params)?;
    let points: Vec<(f64, f64)> = grid
        .par_iter()
        .map(|&tb| Ok((tb, spectral_radius(&closed_loop(&disc, gain, p, tb)?)?)))
        .collect::<Result<_>>()?;
    let (worst_tau_bar, max_radius) = points
        .iter()
        .copied()
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .expect("non-empty grid");
    Ok(RadiusReport {
        pass: max_radius < 1.0,
        points,
        max_radius,
        worst_tau_bar,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    Predecessor,
    Disturbance,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GainEstimate {
    pub channel: Channel,
    pub tau_bar: f64,
    pub peak: f64,
    pub omega_at_peak: f64,
}

/// `(omega, peak)` of `|C (zI - D)^-1 M|` over `z = e^{j omega}`,
/// `omega` uniform on `[0, pi]`. `C` must be a single row.
pub fn frequency_peak(d: &Mat, input: &Mat, c: &Mat, omega_points: usize) -> Result<(f64, f64)> {
    let n = d.nrows();
    let cplx = |m: &Mat| m.map(|v| Complex::new(v, 0.0));
    let (dc, mc, cc) = (cplx(d), cplx(input), cplx(c));
    let omegas = uniform_grid(0.0, std::f64::consts::PI, omega_points.max(2));
    let vals: Vec<(f64, f64)> = omegas
        .par_iter()
        .map(|&w| {
            let z = Complex::from_polar(1.0, w);
            let lhs = DMatrix::<Complex<f64>>::identity(n, n) * z - &dc;
            let sol = lhs
                .lu()
                .solve(&mc)
                .ok_or_else(|| Error::Structure(format!("pole on the unit circle at omega = {w}")))?;
            let tf = &cc * sol;
            // a 1 x m row: its largest singular value is its norm
            Ok((w, tf.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()))
        })
        .collect::<Result<_>>()?;
    Ok(vals
        .into_iter()
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .expect("non-empty frequency grid"))
}

/// Peak gain from `y_{i-1}` (through `L`) or the disturbance (through `G`)
/// to `y_i` on the fixed-delay slice `tau_bar`.
pub fn l2_gain_estimate(
    gain: Gain,
    p: usize,
    params: &PlatoonParams,
    channel: Channel,
    tau_bar: f64,
    omega_points: usize,
) -> Result<GainEstimate> {
    let disc = Discretization::new(params)?;
    let d = closed_loop(&disc, gain, p, tau_bar)?;
    let rho = spectral_radius(&d)?;
    if !(rho < 1.0) {
        return Err(Error::UnstableSlice(rho));
    }
    let (l, g) = disc.build_lg(p);
    let input = match channel {
        Channel::Predecessor => l,
        Channel::Disturbance => g,
    };
    let (omega_at_peak, peak) = frequency_peak(&d, &input, &disc.output_row(p), omega_points)?;
    Ok(GainEstimate {
        channel,
        tau_bar,
        peak,
        omega_at_peak,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PropertyCheck {
    pub samples: usize,
    pub min_eigenvalue: f64,
    pub pass: bool,
}

/// Lyapunov decrease at random convex combinations of the polytope vertices.
pub fn convex_combination_check(
    cert: &Certificate,
    vertices: &VertexSet,
    samples: usize,
    seed: u64,
    tol: f64,
) -> Result<PropertyCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut kbar = Mat::zeros(1, 3 + cert.p);
    kbar.view_mut((0, 0), (1, 3)).copy_from(&cert.gain.to_row());
    let mut worst = f64::INFINITY;
    for _ in 0..samples {
        let mut w: Vec<f64> = (0..vertices.s_m.len()).map(|_| -rng.random::<f64>().ln()).collect();
        let total: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= total);
        let (m, h) = vertices.combination(&w);
        let d = m - h * &kbar;
        worst = worst.min(decrease_margin(&cert.p_mat, cert.decay, &d)?);
    }
    Ok(PropertyCheck {
        samples,
        min_eigenvalue: worst,
        pass: worst >= -tol,
    })
}

/// `Z^T W^-1 Z - (Z + Z^T - W) >= 0`, with `W` and `Z` scaled jointly so
/// that `W` has unit norm (the inequality is homogeneous).
pub fn congruence_check(w: &Mat, z: &Mat, tol: f64) -> Result<PropertyCheck> {
    let scale = symmetrize(w).symmetric_eigenvalues().max();
    if !(scale > 0.0) {
        return Err(Error::Structure("W is not positive definite".into()));
    }
    let (w, z) = (w / scale, z / scale);
    let winv = w
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Structure("W is singular".into()))?;
    let m = z.transpose() * winv * &z - (&z + z.transpose() - &w);
    let min_eigenvalue = min_sym_eigenvalue(&m)?;
    Ok(PropertyCheck {
        samples: 1,
        min_eigenvalue,
        pass: min_eigenvalue >= -tol,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificationReport {
    pub p: usize,
    pub gain: Gain,
    pub verdict: bool,
    pub lyapunov: Option<LyapunovReport>,
    pub radius: RadiusReport,
    pub predecessor_gain: Option<GainEstimate>,
    pub sigma: Option<f64>,
    pub convex_combination: Option<PropertyCheck>,
    pub congruence: Option<PropertyCheck>,
    pub grid_points: usize,
    pub tolerance: f64,
}

/// Every check that applies to a synthesis result; gains without a
/// certificate (e.g. hand-tuned ones) only get the radius scan and gain.
pub fn certify_result(
    res: &SynthesisResult,
    params: &PlatoonParams,
    grid_points: usize,
    tol: f64,
    seed: u64,
) -> Result<CertificationReport> {
    let gain = res
        .gain
        .ok_or_else(|| Error::NoSolution(format!("synthesis for p = {} was not feasible", res.p)))?;
    let cert = Certificate::from_synthesis(res, params)?;
    let grid = uniform_grid(cert.tau_min, cert.tau_max, grid_points);
    let lyapunov = check_lyapunov_grid(&cert, &grid, tol)?;
    let radius = spectral_radius_scan(gain, &grid, res.p, params)?;
    let data = SynthesisData::new(params, &res.options, res.p)?;
    let convex = convex_combination_check(&cert, &data.vertices, 50, seed, tol)?;
    let congruence = match (&res.w, &res.z) {
        (Some(w), Some(z)) => Some(congruence_check(w, z, tol)?),
        _ => None,
    };
    let predecessor_gain = l2_gain_estimate(gain, res.p, params, Channel::Predecessor, cert.tau_min, DEFAULT_OMEGA_POINTS).ok();
    let verdict = lyapunov.pass
        && radius.pass
        && convex.pass
        && congruence.map_or(true, |c| c.pass);
    Ok(CertificationReport {
        p: res.p,
        gain,
        verdict,
        lyapunov: Some(lyapunov),
        radius,
        predecessor_gain,
        sigma: Some(res.options.sigma),
        convex_combination: Some(convex),
        congruence,
        grid_points,
        tolerance: tol,
    })
}

/// Radius scan and predecessor gain for a gain without a certificate.
pub fn certify_gain(
    gain: Gain,
    p: usize,
    params: &PlatoonParams,
    grid_points: usize,
) -> Result<CertificationReport> {
    let grid = uniform_grid(0.0, params.h, grid_points);
    let radius = spectral_radius_scan(gain, &grid, p, params)?;
    let predecessor_gain = l2_gain_estimate(gain, p, params, Channel::Predecessor, 0.0, DEFAULT_OMEGA_POINTS).ok();
    Ok(CertificationReport {
        p,
        gain,
        verdict: radius.pass,
        lyapunov: None,
        radius,
        predecessor_gain,
        sigma: None,
        convex_combination: None,
        congruence: None,
        grid_points,
        tolerance: 0.0,
    })
}
