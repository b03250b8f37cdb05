//! Barrier interior-point method for strict LMI feasibility.
//!
//! Solves `max t` subject to `F_j(x) - t I >= 0` for every shifted block,
//! `F_j(x) > 0` for the others, `|x| <= R` and `t <= t_cap`, by following the
//! central path of
//!
//! ```text
//! -tau t - sum_j log det(.) - log(R^2 - |x|^2) - log(t_cap - t)
//! ```
//!
//! with damped Newton steps. Every coefficient matrix is split into rank-two
//! pieces `u e_c^T + e_c u^T`, which is how each unknown enters the
//! synthesis blocks; the Hessian is then assembled from small Gram products
//! instead of dense trace computations.
//!
//! The barrier parameter gives a duality-gap bound `t* <= t + theta / tau` on
//! the central path, which is what an infeasibility verdict rests on.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{min_sym_eigenvalue, Mat};

use super::program::{LmiBlock, LmiProgram};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverSettings {
    /// Required minimum eigenvalue of every shifted block.
    pub margin: f64,
    pub ball_radius: f64,
    pub t_cap: f64,
    pub tau0: f64,
    pub tau_factor: f64,
    pub tau_max: f64,
    /// Stop once the gap bound is below this fraction of the achieved margin.
    pub rel_gap: f64,
    pub max_newton: usize,
    pub max_center: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            margin: 1e-7,
            ball_radius: 1e4,
            t_cap: 1.0,
            tau0: 1.0,
            tau_factor: 10.0,
            tau_max: 1e15,
            rel_gap: 1e-2,
            max_newton: 3000,
            max_center: 80,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Feasible,
    Infeasible,
    /// The solver could neither certify a margin nor rule it out.
    Indeterminate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveOutcome {
    pub verdict: Verdict,
    pub x: Vec<f64>,
    /// Achieved common margin.
    pub t: f64,
    /// Upper bound on the best achievable margin.
    pub t_upper: f64,
    /// Minimum eigenvalue of each block at `x` (unshifted).
    pub block_min_eig: Vec<f64>,
    pub newton_steps: usize,
    pub stages: usize,
}

impl SolveOutcome {
    pub fn min_shifted_eig(&self, prog: &LmiProgram) -> f64 {
        prog.blocks
            .iter()
            .zip(&self.block_min_eig)
            .filter(|(b, _)| b.shifted)
            .map(|(_, e)| *e)
            .fold(f64::INFINITY, f64::min)
    }
}

/// One rank-two piece `u e_c^T + e_c u^T` of variable `var`'s coefficient.
#[derive(Debug, Clone)]
struct Piece {
    var: usize,
    center: usize,
    u: Vec<(usize, f64)>,
}

/// Greedy vertex cover of the coefficient's sparsity graph: each chosen
/// index absorbs all remaining entries in its row/column.
fn split_rank_two(var: usize, trip: &[(usize, usize, f64)]) -> Vec<Piece> {
    let mut left: Vec<(usize, usize, f64)> = trip.to_vec();
    let mut out = Vec::new();
    while !left.is_empty() {
        let mut degree = std::collections::BTreeMap::new();
        for &(r, c, _) in &left {
            *degree.entry(r).or_insert(0usize) += 1;
            if r != c {
                *degree.entry(c).or_insert(0usize) += 1;
            }
        }
        let center = degree
            .iter()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
            .map(|(k, _)| *k)
            .unwrap();
        let mut u = Vec::new();
        left.retain(|&(r, c, v)| {
            if r == center && c == center {
                u.push((center, 0.5 * v));
                false
            } else if r == center {
                u.push((c, v));
                false
            } else if c == center {
                u.push((r, v));
                false
            } else {
                true
            }
        });
        out.push(Piece { var, center, u });
    }
    out
}

struct Prepared<'a> {
    block: &'a LmiBlock,
    pieces: Vec<Piece>,
}

fn prepare<'a>(prog: &'a LmiProgram) -> Vec<Prepared<'a>> {
    let t_var = prog.n_vars;
    prog.blocks
        .iter()
        .map(|b| {
            let mut pieces: Vec<Piece> = b
                .coeffs
                .iter()
                .flat_map(|(a, trip)| split_rank_two(*a, trip))
                .collect();
            if b.shifted {
                pieces.extend((0..b.size).map(|k| Piece {
                    var: t_var,
                    center: k,
                    u: vec![(k, -0.5)],
                }));
            }
            Prepared { block: b, pieces }
        })
        .collect()
}

struct Solver<'a> {
    blocks: Vec<Prepared<'a>>,
    m: usize,
    settings: SolverSettings,
    theta: f64,
}

impl<'a> Solver<'a> {
    fn slack(&self, pb: &Prepared, z: &[f64]) -> Mat {
        let mut s = pb.block.eval(&z[..self.m]);
        if pb.block.shifted {
            for k in 0..pb.block.size {
                s[(k, k)] -= z[self.m];
            }
        }
        s
    }

    /// Barrier objective, or `None` outside the domain.
    fn objective(&self, z: &[f64], tau: f64) -> Option<f64> {
        let t = z[self.m];
        let r2: f64 = z[..self.m].iter().map(|v| v * v).sum();
        let ball = self.settings.ball_radius.powi(2) - r2;
        let cap = self.settings.t_cap - t;
        if !(ball > 0.0 && cap > 0.0) {
            return None;
        }
        let mut f = -tau * t - ball.ln() - cap.ln();
        for pb in &self.blocks {
            let ch = Cholesky::new(self.slack(pb, z))?;
            let logdet: f64 = ch.l_dirty().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
            if !logdet.is_finite() {
                return None;
            }
            f -= logdet;
        }
        Some(f)
    }

    fn grad_hess(&self, z: &[f64], tau: f64) -> Option<(DVector<f64>, DMatrix<f64>)> {
        let dim = self.m + 1;
        let mut g = DVector::zeros(dim);
        let mut h = DMatrix::zeros(dim, dim);
        g[self.m] = -tau;
        for pb in &self.blocks {
            let ch = Cholesky::new(self.slack(pb, z))?;
            let sinv = ch.inverse();
            let s = pb.block.size;
            let np = pb.pieces.len();
            // uhat[:, g] = S^{-1} u_g
            let mut uhat = DMatrix::<f64>::zeros(s, np);
            for (gi, pc) in pb.pieces.iter().enumerate() {
                let mut col = uhat.column_mut(gi);
                for &(i, v) in &pc.u {
                    col.axpy(v, &sinv.column(i), 1.0);
                }
            }
            // p[g, h] = u_g^T S^{-1} u_h
            let mut p = DMatrix::<f64>::zeros(np, np);
            for (gi, pc) in pb.pieces.iter().enumerate() {
                for &(i, v) in &pc.u {
                    let row = uhat.row(i);
                    for hj in 0..np {
                        p[(gi, hj)] += v * row[hj];
                    }
                }
            }
            for (gi, pg) in pb.pieces.iter().enumerate() {
                g[pg.var] -= 2.0 * uhat[(pg.center, gi)];
                for (hj, ph) in pb.pieces.iter().enumerate() {
                    h[(pg.var, ph.var)] += 2.0
                        * (p[(gi, hj)] * sinv[(pg.center, ph.center)]
                            + uhat[(ph.center, gi)] * uhat[(pg.center, hj)]);
                }
            }
        }
        let r2: f64 = z[..self.m].iter().map(|v| v * v).sum();
        let ball = self.settings.ball_radius.powi(2) - r2;
        for a in 0..self.m {
            g[a] += 2.0 * z[a] / ball;
            h[(a, a)] += 2.0 / ball;
            for b in 0..self.m {
                h[(a, b)] += 4.0 * z[a] * z[b] / (ball * ball);
            }
        }
        let cap = self.settings.t_cap - z[self.m];
        g[self.m] += 1.0 / cap;
        h[(self.m, self.m)] += 1.0 / (cap * cap);
        Some((g, h))
    }

    /// Solve `H d = -g` with Jacobi scaling and escalating regularization.
    fn newton_direction(g: &DVector<f64>, h: &DMatrix<f64>) -> Option<DVector<f64>> {
        let n = g.len();
        let dscale: DVector<f64> =
            DVector::from_iterator(n, (0..n).map(|i| 1.0 / h[(i, i)].abs().max(1e-300).sqrt()));
        let mut hs = h.clone();
        for i in 0..n {
            for j in 0..n {
                hs[(i, j)] *= dscale[i] * dscale[j];
            }
        }
        let rhs = -g.component_mul(&dscale);
        let mut reg = 0.0;
        for _ in 0..12 {
            let mut m = hs.clone();
            for i in 0..n {
                m[(i, i)] += reg;
            }
            if let Some(ch) = Cholesky::<f64, Dyn>::new(m) {
                let y = ch.solve(&rhs);
                if y.iter().all(|v| v.is_finite()) {
                    return Some(y.component_mul(&dscale));
                }
            }
            reg = if reg == 0.0 { 1e-14 } else { reg * 100.0 };
        }
        None
    }

    /// Damped Newton centering; returns the number of steps taken.
    fn center(&self, z: &mut Vec<f64>, tau: f64, budget: usize) -> usize {
        let mut steps = 0;
        while steps < budget.min(self.settings.max_center) {
            let Some((g, h)) = self.grad_hess(z, tau) else { break };
            let Some(d) = Self::newton_direction(&g, &h) else { break };
            let dec2 = -g.dot(&d);
            steps += 1;
            if !(dec2 > 1e-9) {
                break;
            }
            let f0 = match self.objective(z, tau) {
                Some(f) => f,
                None => break,
            };
            let mut alpha = 1.0;
            let mut moved = false;
            for _ in 0..60 {
                let trial: Vec<f64> = z.iter().zip(d.iter()).map(|(a, b)| a + alpha * b).collect();
                if let Some(f1) = self.objective(&trial, tau) {
                    if f1 <= f0 - 0.25 * alpha * dec2 {
                        *z = trial;
                        moved = true;
                        break;
                    }
                }
                alpha *= 0.5;
            }
            if !moved {
                break;
            }
        }
        steps
    }

    fn block_min_eigs(&self, x: &[f64]) -> Vec<f64> {
        self.blocks
            .iter()
            .map(|pb| min_sym_eigenvalue(&pb.block.eval(x)).unwrap_or(f64::NEG_INFINITY))
            .collect()
    }
}

pub fn solve(prog: &LmiProgram, settings: &SolverSettings) -> Result<SolveOutcome> {
    if prog.x0.len() != prog.n_vars {
        return Err(Error::Dimension(format!(
            "starting point has {} entries for {} variables",
            prog.x0.len(),
            prog.n_vars
        )));
    }
    if prog.shifted_count() == 0 {
        return Err(Error::Structure("program has no margin-carrying block".into()));
    }
    let m = prog.n_vars;
    let theta = prog.blocks.iter().map(|b| b.size as f64).sum::<f64>() + 2.0;
    let solver = Solver {
        blocks: prepare(prog),
        m,
        settings: *settings,
        theta,
    };

    let mut t0 = f64::INFINITY;
    for pb in &solver.blocks {
        let e = min_sym_eigenvalue(&pb.block.eval(&prog.x0))?;
        if pb.block.shifted {
            t0 = t0.min(e);
        } else if e <= 0.0 {
            return Err(Error::Structure(format!(
                "starting point violates unshifted block `{}`",
                pb.block.label
            )));
        }
    }
    let mut z = prog.x0.clone();
    z.push((t0 - 1.0).min(settings.t_cap - 1.0));

    let mut tau = settings.tau0;
    let mut newton = 0;
    let mut stages = 0;
    let verdict = loop {
        newton += solver.center(&mut z, tau, settings.max_newton.saturating_sub(newton));
        stages += 1;
        let t = z[m];
        let gap = solver.theta / tau;
        if t >= settings.margin && (gap <= settings.rel_gap * t || t >= 0.99 * settings.t_cap) {
            break Verdict::Feasible;
        }
        if t + gap < settings.margin {
            break Verdict::Infeasible;
        }
        if tau >= settings.tau_max || newton >= settings.max_newton {
            break if t >= settings.margin {
                Verdict::Feasible
            } else {
                Verdict::Indeterminate
            };
        }
        tau *= settings.tau_factor;
    };

    let x = z[..m].to_vec();
    let block_min_eig = solver.block_min_eigs(&x);
    let t = z[m];
    let mut outcome = SolveOutcome {
        verdict,
        t,
        t_upper: t + solver.theta / tau,
        x,
        block_min_eig,
        newton_steps: newton,
        stages,
    };
    // Never report feasibility the blocks themselves do not confirm.
    if outcome.verdict == Verdict::Feasible && outcome.min_shifted_eig(prog) < settings.margin {
        outcome.verdict = Verdict::Indeterminate;
    }
    log::debug!(
        "lmi solve: {:?} t = {:.3e} (upper {:.3e}) after {} Newton steps / {} stages",
        outcome.verdict,
        outcome.t,
        outcome.t_upper,
        newton,
        stages
    );
    Ok(outcome)
}
