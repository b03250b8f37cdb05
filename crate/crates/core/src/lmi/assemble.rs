//! Synthesis programs for robust stability and string stability, gain
//! extraction, and the diagonal rescaling loop around the solver.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::discretize::Discretization;
use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::model::{Gain, PlatoonParams};
use crate::polytope::{coefficient_bounds, decompose_integral, enumerate_vertices, VertexSet};

use super::program::{LmiBlock, LmiProgram, VarLayout};
use super::solver::{solve, SolverSettings, Verdict};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Theorem {
    /// Robust internal stability only.
    Stability,
    /// String stability (and optionally disturbance attenuation).
    StringStability,
}

impl TryFrom<u8> for Theorem {
    type Error = String;
    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            1 => Ok(Theorem::Stability),
            2 => Ok(Theorem::StringStability),
            other => Err(format!("theorem must be 1 or 2, got {other}")),
        }
    }
}

impl From<Theorem> for u8 {
    fn from(t: Theorem) -> u8 {
        match t {
            Theorem::Stability => 1,
            Theorem::StringStability => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Only the predecessor-to-output inequalities.
    #[default]
    StringOnly,
    /// Also the disturbance-to-output inequalities at level `gamma`.
    StringPlusAttenuation,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthesisOptions {
    pub theorem: Theorem,
    pub mode: Mode,
    /// Decay rate for the stability-only program.
    pub mu: f64,
    pub a: f64,
    pub b: f64,
    pub sigma: f64,
    pub gamma: f64,
    pub tau_min: f64,
    /// Upper end of the remainder interval; `None` means `h`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau_max: Option<f64>,
    /// Override for the exponent of the third coefficient function.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub jordan_rate: Option<f64>,
    /// Solves with diagonal rescaling before giving up.
    pub scaling_rounds: usize,
    pub solver: SolverSettings,
}

impl Default for SynthesisOptions {
    fn default() -> Self {
        Self {
            theorem: Theorem::StringStability,
            mode: Mode::StringOnly,
            mu: 0.01,
            a: 0.99,
            b: 10.0,
            sigma: 0.8,
            gamma: 1.0,
            tau_min: 0.0,
            tau_max: None,
            jordan_rate: None,
            scaling_rounds: 6,
            solver: SolverSettings::default(),
        }
    }
}

impl SynthesisOptions {
    pub fn validate(&self, h: f64) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.mu > 0.0 && self.mu < 1.0) {
            return bad(format!("mu = {} not in (0, 1)", self.mu));
        }
        if !(self.a > 0.0 && self.b > 0.0) {
            return bad("a and b must be positive".into());
        }
        if !(self.sigma > 0.0 && self.sigma <= 1.0) {
            return bad(format!("sigma = {} not in (0, 1]", self.sigma));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return bad(format!("gamma = {} must be positive", self.gamma));
        }
        let hi = self.tau_max.unwrap_or(h);
        if !(0.0 <= self.tau_min && self.tau_min <= hi && hi <= h) {
            return bad(format!("delay interval [{}, {hi}] not inside [0, {h}]", self.tau_min));
        }
        if self.scaling_rounds == 0 {
            return bad("scaling_rounds must be at least 1".into());
        }
        if !(self.solver.margin > 0.0) {
            return bad("solver margin must be positive".into());
        }
        Ok(())
    }

    /// Lyapunov decay rate implied by a feasible solution.
    pub fn certified_decay(&self) -> f64 {
        match self.theorem {
            Theorem::Stability => self.mu,
            Theorem::StringStability => 1.0 - self.a,
        }
    }
}

/// Everything the programs are built from, in original coordinates.
#[derive(Debug, Clone)]
pub struct SynthesisData {
    pub p: usize,
    pub disc: Discretization,
    pub vertices: VertexSet,
    pub l: Mat,
    pub g: Mat,
    pub c: Mat,
}

impl SynthesisData {
    pub fn new(params: &PlatoonParams, opts: &SynthesisOptions, p: usize) -> Result<Self> {
        if p < 1 {
            return Err(Error::Domain("delay multiplicity p must be >= 1".into()));
        }
        let disc = Discretization::new(params)?;
        opts.validate(disc.h())?;
        let dec = decompose_integral(&disc, opts.jordan_rate)?;
        let bounds = coefficient_bounds(&dec, opts.tau_min, opts.tau_max.unwrap_or(disc.h()))?;
        let vertices = enumerate_vertices(&dec, &bounds, p, &disc)?;
        let (l, g) = disc.build_lg(p);
        let c = disc.output_row(p);
        Ok(Self {
            p,
            disc,
            vertices,
            l,
            g,
            c,
        })
    }

    /// Congruence-scaled copies: `S_M -> D^-1 S_M D`, `S_H -> D^-1 S_H`,
    /// `L -> D^-1 L`, `G -> D^-1 G`, `C -> C D`.
    fn scaled(&self, d: &[f64]) -> ScaledData {
        let n = 3 + self.p;
        let dinv = Mat::from_diagonal(&DVector::from_iterator(n, d.iter().map(|v| 1.0 / v)));
        let dm = Mat::from_diagonal(&DVector::from_column_slice(d));
        ScaledData {
            s_m: self.vertices.s_m.iter().map(|m| &dinv * m * &dm).collect(),
            s_h: self.vertices.s_h.iter().map(|m| &dinv * m).collect(),
            l: &dinv * &self.l,
            g: &dinv * &self.g,
            c: &self.c * &dm,
        }
    }
}

struct ScaledData {
    s_m: Vec<Mat>,
    s_h: Vec<Mat>,
    l: Mat,
    g: Mat,
    c: Mat,
}

fn starting_point(layout: &VarLayout) -> Vec<f64> {
    let n = layout.dim();
    let half = Mat::identity(n, n) * 0.5;
    layout.pack(&half, &half, &Mat::zeros(1, 3))
}

/// `Omega_j = S_M Z - S_H [Y 0]`
fn omega(layout: &VarLayout, s_m: &Mat, s_h: &Mat, x: &[f64]) -> Mat {
    s_m * layout.z(x) - s_h * layout.y_padded(x)
}

fn theorem1_program(layout: VarLayout, s_m: &[Mat], s_h: &[Mat], mu: f64) -> LmiProgram {
    let n = layout.dim();
    let nv = layout.count();
    let mut prog = LmiProgram::new(nv);
    prog.x0 = starting_point(&layout);
    for (j, (sm, sh)) in s_m.iter().zip(s_h).enumerate() {
        let (sm, sh) = (sm.clone(), sh.clone());
        prog.push(LmiBlock::from_affine(format!("stability[{j}]"), nv, true, move |x| {
            let w = layout.w(x);
            let z = layout.z(x);
            let om = omega(&layout, &sm, &sh, x);
            let mut m = Mat::zeros(2 * n, 2 * n);
            m.view_mut((0, 0), (n, n)).copy_from(&(&z + z.transpose() - &w));
            m.view_mut((0, n), (n, n)).copy_from(&om.transpose());
            m.view_mut((n, 0), (n, n)).copy_from(&om);
            m.view_mut((n, n), (n, n)).copy_from(&(w * (1.0 - mu)));
            m
        }));
    }
    // The conditions are homogeneous; bound W so the margin means something.
    prog.push(LmiBlock::from_affine("normalization", nv, false, move |x| {
        Mat::identity(n, n) - layout.w(x)
    }));
    prog
}

#[allow(clippy::too_many_arguments)]
fn string_block(
    layout: VarLayout,
    label: String,
    sm: Mat,
    sh: Mat,
    coupling: Mat,
    level: f64,
    c: Mat,
    a: f64,
    b: f64,
) -> LmiBlock {
    let n = layout.dim();
    let k = coupling.ncols();
    let nv = layout.count();
    LmiBlock::from_affine(label, nv, true, move |x| {
        let w = layout.w(x);
        let z = layout.z(x);
        let om = omega(&layout, &sm, &sh, x);
        let cz = &c * &z;
        let size = 2 * n + k + 1;
        let mut m = Mat::zeros(size, size);
        m.view_mut((0, 0), (n, n)).copy_from(&((&z + z.transpose() - &w) * a));
        m.view_mut((0, n), (n, n)).copy_from(&om.transpose());
        m.view_mut((n, 0), (n, n)).copy_from(&om);
        m.view_mut((0, 2 * n + k), (n, 1)).copy_from(&cz.transpose());
        m.view_mut((2 * n + k, 0), (1, n)).copy_from(&cz);
        m.view_mut((n, n), (n, n)).copy_from(&w);
        m.view_mut((n, 2 * n), (n, k)).copy_from(&coupling);
        m.view_mut((2 * n, n), (k, n)).copy_from(&coupling.transpose());
        for i in 0..k {
            m[(2 * n + i, 2 * n + i)] = b * level;
        }
        m[(2 * n + k, 2 * n + k)] = 1.0 / b;
        m
    })
}

fn theorem2_program(layout: VarLayout, sd: &ScaledData, opts: &SynthesisOptions) -> LmiProgram {
    let nv = layout.count();
    let mut prog = LmiProgram::new(nv);
    prog.x0 = starting_point(&layout);
    for (j, (sm, sh)) in sd.s_m.iter().zip(&sd.s_h).enumerate() {
        prog.push(string_block(
            layout,
            format!("string[{j}]"),
            sm.clone(),
            sh.clone(),
            sd.l.clone(),
            opts.sigma,
            sd.c.clone(),
            opts.a,
            opts.b,
        ));
    }
    if opts.mode == Mode::StringPlusAttenuation {
        for (j, (sm, sh)) in sd.s_m.iter().zip(&sd.s_h).enumerate() {
            prog.push(string_block(
                layout,
                format!("attenuation[{j}]"),
                sm.clone(),
                sh.clone(),
                sd.g.clone(),
                opts.gamma,
                sd.c.clone(),
                opts.a,
                opts.b,
            ));
        }
    }
    prog
}

/// Program in coordinates scaled by `diag(d)` (`d = 1` for the plain program).
pub fn assemble(data: &SynthesisData, opts: &SynthesisOptions, d: &[f64]) -> LmiProgram {
    let layout = VarLayout { p: data.p };
    let sd = data.scaled(d);
    match opts.theorem {
        Theorem::Stability => theorem1_program(layout, &sd.s_m, &sd.s_h, opts.mu),
        Theorem::StringStability => theorem2_program(layout, &sd, opts),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundLog {
    pub verdict: Verdict,
    pub t: f64,
    pub t_upper: f64,
    pub newton_steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisResult {
    pub p: usize,
    pub theorem: Theorem,
    pub mode: Mode,
    pub verdict: Verdict,
    pub feasible: bool,
    /// Margin every block had to clear, in the scaled coordinates of the
    /// deciding round.
    pub margin: f64,
    /// Achieved margin `t` (same coordinates).
    pub achieved: f64,
    /// Bound on the best achievable margin in the deciding round.
    pub achievable_upper: f64,
    pub gain: Option<Gain>,
    /// `W`, `Z`, `Y`, `P = W^-1` in original coordinates.
    pub w: Option<Mat>,
    pub z: Option<Mat>,
    pub y: Option<Mat>,
    pub p_cert: Option<Mat>,
    /// Decay rate the certificate satisfies.
    pub decay: f64,
    pub scaling: Vec<f64>,
    pub rounds: Vec<RoundLog>,
    pub options: SynthesisOptions,
}

impl SynthesisResult {
    pub fn newton_steps(&self) -> usize {
        self.rounds.iter().map(|r| r.newton_steps).sum()
    }
}

/// `K = Y Z1^-1`, refusing numerically singular `Z1`.
pub fn extract_gain(y: &Mat, z: &Mat) -> Result<Gain> {
    let z1 = z.view((0, 0), (3, 3)).into_owned();
    let svd = z1.clone().svd(false, false);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > 1e-13 * smax) {
        return Err(Error::Extraction(format!(
            "Z1 is numerically singular (singular values {smin:.3e} / {smax:.3e})"
        )));
    }
    let inv = z1
        .try_inverse()
        .ok_or_else(|| Error::Extraction("Z1 is not invertible".into()))?;
    let k = y * inv;
    if !k.iter().all(|v| v.is_finite()) {
        return Err(Error::Extraction("gain has non-finite entries".into()));
    }
    Ok(Gain([k[(0, 0)], k[(0, 1)], k[(0, 2)]]))
}

/// Solve the synthesis program for delay multiplicity `p`.
///
/// Each unsuccessful round rescales the augmented coordinates by the square
/// root of the last `W`'s diagonal; this is a congruence, so it changes the
/// conditioning (and the meaning of the fixed margin) but not strict
/// feasibility.
pub fn synthesize(params: &PlatoonParams, opts: &SynthesisOptions, p: usize) -> Result<SynthesisResult> {
    let data = SynthesisData::new(params, opts, p)?;
    synthesize_with(&data, opts)
}

pub fn synthesize_with(data: &SynthesisData, opts: &SynthesisOptions) -> Result<SynthesisResult> {
    let layout = VarLayout { p: data.p };
    let n = layout.dim();
    let mut d = vec![1.0; n];
    let mut rounds = Vec::new();
    let mut last = None;
    for round in 0..opts.scaling_rounds {
        let prog = assemble(data, opts, &d);
        let out = solve(&prog, &opts.solver)?;
        log::info!(
            "p = {} round {}: {:?}, t = {:.3e}, bound {:.3e}",
            data.p,
            round,
            out.verdict,
            out.t,
            out.t_upper
        );
        rounds.push(RoundLog {
            verdict: out.verdict,
            t: out.t,
            t_upper: out.t_upper,
            newton_steps: out.newton_steps,
        });
        let done = out.verdict == Verdict::Feasible;
        let w = layout.w(&out.x);
        last = Some((out, d.clone()));
        if done || round + 1 == opts.scaling_rounds {
            break;
        }
        let mut next: Vec<f64> = (0..n)
            .map(|i| d[i] * w[(i, i)].abs().max(1e-300).sqrt())
            .collect();
        let top = next.iter().cloned().fold(0.0, f64::max);
        if !(top > 0.0 && top.is_finite()) {
            break;
        }
        for v in next.iter_mut() {
            *v = (*v / top).max(1e-12);
        }
        d = next;
    }
    let (out, d) = last.expect("at least one round");

    let mut result = SynthesisResult {
        p: data.p,
        theorem: opts.theorem,
        mode: opts.mode,
        verdict: out.verdict,
        feasible: false,
        margin: opts.solver.margin,
        achieved: out.t,
        achievable_upper: out.t_upper,
        gain: None,
        w: None,
        z: None,
        y: None,
        p_cert: None,
        decay: opts.certified_decay(),
        scaling: d.clone(),
        rounds,
        options: *opts,
    };
    if out.verdict != Verdict::Feasible {
        return Ok(result);
    }
    let dm = Mat::from_diagonal(&DVector::from_column_slice(&d));
    let d1 = dm.view((0, 0), (3, 3)).into_owned();
    let w = &dm * layout.w(&out.x) * &dm;
    let z = &dm * layout.z(&out.x) * &dm;
    let y = layout.y(&out.x) * &d1;
    let gain = extract_gain(&y, &z)?;
    let p_cert = w
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Extraction("W is singular".into()))?;
    result.feasible = true;
    result.gain = Some(gain);
    result.w = Some(w);
    result.z = Some(z);
    result.y = Some(y);
    result.p_cert = Some(p_cert);
    Ok(result)
}
