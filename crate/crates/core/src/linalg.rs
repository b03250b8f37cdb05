//! Small dense matrix kernels: matrix exponential, exponential integrals,
//! the closed-form Jordan data of the platoon system matrix, and
//! definiteness checks.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;

// Pade degrees and the 1-norm thresholds below which each is accurate to
// double precision (Higham 2005).
const PADE_THETA: [(usize, f64); 4] = [
    (3, 1.495585217958292e-2),
    (5, 2.539398330063230e-1),
    (7, 9.504178996162932e-1),
    (9, 2.097847961257068e0),
];
const THETA_13: f64 = 5.371920351148152;

const PADE_3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const PADE_5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const PADE_7: [f64; 8] = [
    17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0,
];
const PADE_9: [f64; 10] = [
    17643225600.0,
    8821612800.0,
    2075673600.0,
    302702400.0,
    30270240.0,
    2162160.0,
    110880.0,
    3960.0,
    90.0,
    1.0,
];
const PADE_13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

fn require_square(a: &Mat, what: &str) -> Result<()> {
    if a.nrows() != a.ncols() {
        return Err(Error::Dimension(format!(
            "{what}: expected a square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    Ok(())
}

pub(crate) fn require_finite(a: &Mat, what: &'static str) -> Result<()> {
    if a.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

fn one_norm(a: &Mat) -> f64 {
    a.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Odd/even split of a low-degree Pade approximant: returns (U, V) with
/// `exp(A) ~ (V - U)^{-1} (V + U)`.
fn pade_low(a: &Mat, coeffs: &[f64]) -> (Mat, Mat) {
    let n = a.nrows();
    let ident = Mat::identity(n, n);
    let a2 = a * a;
    let mut even = ident.clone() * coeffs[0];
    let mut odd = ident * coeffs[1];
    let mut power = a2.clone();
    let mut k = 2;
    while k < coeffs.len() {
        even += &power * coeffs[k];
        if k + 1 < coeffs.len() {
            odd += &power * coeffs[k + 1];
        }
        power = &power * &a2;
        k += 2;
    }
    (a * odd, even)
}

fn pade_13(a: &Mat) -> (Mat, Mat) {
    let n = a.nrows();
    let b = &PADE_13;
    let ident = Mat::identity(n, n);
    let a2 = a * a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let inner_u = &a6 * b[13] + &a4 * b[11] + &a2 * b[9];
    let u = a * (&a6 * inner_u + &a6 * b[7] + &a4 * b[5] + &a2 * b[3] + &ident * b[1]);
    let inner_v = &a6 * b[12] + &a4 * b[10] + &a2 * b[8];
    let v = &a6 * inner_v + &a6 * b[6] + &a4 * b[4] + &a2 * b[2] + &ident * b[0];
    (u, v)
}

/// `e^{A L}` by scaling and squaring with Pade approximants.
pub fn expm(a: &Mat, l: f64) -> Result<Mat> {
    require_square(a, "expm")?;
    if !l.is_finite() {
        return Err(Error::Domain(format!("expm: non-finite length {l}")));
    }
    require_finite(a, "expm input")?;
    let n = a.nrows();
    if n == 0 {
        return Ok(Mat::zeros(0, 0));
    }
    let al = a * l;
    let norm = one_norm(&al);
    let (u, v, squarings) = match PADE_THETA.iter().find(|(_, theta)| norm <= *theta) {
        Some((3, _)) => {
            let (u, v) = pade_low(&al, &PADE_3);
            (u, v, 0)
        }
        Some((5, _)) => {
            let (u, v) = pade_low(&al, &PADE_5);
            (u, v, 0)
        }
        Some((7, _)) => {
            let (u, v) = pade_low(&al, &PADE_7);
            (u, v, 0)
        }
        Some((9, _)) => {
            let (u, v) = pade_low(&al, &PADE_9);
            (u, v, 0)
        }
        _ => {
            let s = if norm > THETA_13 {
                (norm / THETA_13).log2().ceil().max(0.0) as i32
            } else {
                0
            };
            let scaled = &al / 2f64.powi(s);
            let (u, v) = pade_13(&scaled);
            (u, v, s)
        }
    };
    let p = &v + &u;
    let q = &v - &u;
    let mut r = q
        .lu()
        .solve(&p)
        .ok_or_else(|| Error::Domain("expm: singular Pade denominator".into()))?;
    for _ in 0..squarings {
        r = &r * &r;
    }
    require_finite(&r, "expm")?;
    Ok(r)
}

/// `int_0^L e^{A s} ds`, exact for singular `A`.
///
/// Computed as the top-right block of `exp([[A, I], [0, 0]] L)`.
pub fn expm_integral(a: &Mat, l: f64) -> Result<Mat> {
    require_square(a, "expm_integral")?;
    if !l.is_finite() || l < 0.0 {
        return Err(Error::Domain(format!(
            "expm_integral: length must be finite and >= 0, got {l}"
        )));
    }
    let n = a.nrows();
    let mut aug = Mat::zeros(2 * n, 2 * n);
    aug.view_mut((0, 0), (n, n)).copy_from(a);
    aug.view_mut((0, n), (n, n)).fill_with_identity();
    let e = expm(&aug, l)?;
    Ok(e.view((0, n), (n, n)).into_owned())
}

/// `int_lo^hi e^{A s} ds` for `0 <= lo <= hi`.
pub fn expm_integral_between(a: &Mat, lo: f64, hi: f64) -> Result<Mat> {
    if lo > hi {
        return Err(Error::Domain(format!(
            "expm_integral_between: lower limit {lo} exceeds upper limit {hi}"
        )));
    }
    Ok(expm_integral(a, hi)? - expm_integral(a, lo)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JordanBlock {
    pub eigenvalue: f64,
    pub size: usize,
}

/// Jordan data `A = Q J Q^{-1}` of the platoon system matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JordanData {
    pub q: Mat,
    pub q_inv: Mat,
    pub blocks: Vec<JordanBlock>,
}

impl JordanData {
    /// Block-diagonal Jordan matrix assembled from `blocks`.
    pub fn jordan(&self) -> Mat {
        let n: usize = self.blocks.iter().map(|b| b.size).sum();
        let mut j = Mat::zeros(n, n);
        let mut off = 0;
        for b in &self.blocks {
            for k in 0..b.size {
                j[(off + k, off + k)] = b.eigenvalue;
                if k + 1 < b.size {
                    j[(off + k, off + k + 1)] = 1.0;
                }
            }
            off += b.size;
        }
        j
    }
}

/// Closed-form Jordan decomposition of the 3x3 platoon matrix
/// `[[-1/e, 1/e, 0], [0, 0, 1], [0, 0, 0]]`.
///
/// Generalized eigenvectors for the double zero eigenvalue are `(1, 1, 0)`
/// and `(0, e, 1)`; `(1, 0, 0)` is the eigenvector of `-1/e`. `det Q = 1`.
pub fn jordan_platoon(a0: &Mat) -> Result<JordanData> {
    if a0.nrows() != 3 || a0.ncols() != 3 {
        return Err(Error::Structure(format!(
            "jordan_platoon expects a 3x3 matrix, got {}x{}",
            a0.nrows(),
            a0.ncols()
        )));
    }
    let rate = a0[(0, 1)];
    let pattern_ok = rate > 0.0
        && rate.is_finite()
        && (a0[(0, 0)] + rate).abs() <= 1e-14 * rate
        && a0[(1, 2)] == 1.0
        && [(0, 2), (1, 0), (1, 1), (2, 0), (2, 1), (2, 2)]
            .iter()
            .all(|&(r, c)| a0[(r, c)] == 0.0);
    if !pattern_ok {
        return Err(Error::Structure(
            "matrix does not have the platoon error-dynamics pattern".into(),
        ));
    }
    let eps = 1.0 / rate;
    #[rustfmt::skip]
    let q = Mat::from_row_slice(3, 3, &[
        1.0, 0.0, 1.0,
        1.0, eps, 0.0,
        0.0, 1.0, 0.0,
    ]);
    #[rustfmt::skip]
    let q_inv = Mat::from_row_slice(3, 3, &[
        0.0, 1.0, -eps,
        0.0, 0.0, 1.0,
        1.0, -1.0, eps,
    ]);
    Ok(JordanData {
        q,
        q_inv,
        blocks: vec![
            JordanBlock {
                eigenvalue: 0.0,
                size: 2,
            },
            JordanBlock {
                eigenvalue: -rate,
                size: 1,
            },
        ],
    })
}

/// Closed-form `e^{A0 L}` through the Jordan data of [`jordan_platoon`].
pub fn expm_platoon(a0: &Mat, l: f64) -> Result<Mat> {
    let jd = jordan_platoon(a0)?;
    let lambda = jd.blocks[1].eigenvalue;
    #[rustfmt::skip]
    let core = Mat::from_row_slice(3, 3, &[
        1.0, l, 0.0,
        0.0, 1.0, 0.0,
        0.0, 0.0, (lambda * l).exp(),
    ]);
    Ok(&jd.q * core * &jd.q_inv)
}

pub fn symmetrize(m: &Mat) -> Mat {
    (m + m.transpose()) * 0.5
}

/// Smallest eigenvalue of the symmetric part of `m`.
pub fn min_sym_eigenvalue(m: &Mat) -> Result<f64> {
    require_square(m, "min_sym_eigenvalue")?;
    if m.nrows() == 0 {
        return Ok(f64::INFINITY);
    }
    let eig = SymmetricEigen::new(symmetrize(m));
    Ok(eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsdCheck {
    pub psd: bool,
    pub min_eigenvalue: f64,
}

/// Positive semidefiniteness of `(M + M^T) / 2` up to `tol`.
pub fn is_psd(m: &Mat, tol: f64) -> Result<PsdCheck> {
    let min_eigenvalue = min_sym_eigenvalue(m)?;
    Ok(PsdCheck {
        psd: min_eigenvalue >= -tol,
        min_eigenvalue,
    })
}

/// Largest eigenvalue modulus.
pub fn spectral_radius(m: &Mat) -> Result<f64> {
    require_square(m, "spectral_radius")?;
    if m.nrows() == 0 {
        return Ok(0.0);
    }
    if !m.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("spectral_radius"));
    }
    // The unbounded Schur iteration in nalgebra can stall on defective
    // shift-register structure (e.g. zero feedback gains); cap it.
    match m.clone().try_schur(f64::EPSILON, 50 * m.nrows().max(10)) {
        Some(schur) => Ok(schur.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)),
        None => Ok(gelfand_bound(m)),
    }
}

/// `||M^(2^j)||^(1/2^j)` after 60 squarings, with renormalization so the
/// powers never overflow. Never below the spectral radius.
fn gelfand_bound(m: &Mat) -> f64 {
    let s0 = m.norm();
    if s0 == 0.0 {
        return 0.0;
    }
    let mut a = m / s0;
    let mut log_r = s0.ln();
    for j in 1..=60 {
        a = &a * &a;
        let s = a.norm();
        if s == 0.0 {
            return 0.0;
        }
        a /= s;
        log_r += s.ln() / 2f64.powi(j);
    }
    log_r.exp()
}

/// Relative Frobenius distance `|a - b| / max(1, |b|)`.
pub fn rel_frobenius(a: &Mat, b: &Mat) -> f64 {
    (a - b).norm() / b.norm().max(1.0)
}
