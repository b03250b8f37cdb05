//! Affine symmetric matrix constraints over a flat decision vector.

use serde::{Deserialize, Serialize};

use crate::linalg::{symmetrize, Mat};

/// Upper-triangular entries `(row, col, value)` with `row <= col`.
pub type Triplets = Vec<(usize, usize, f64)>;

/// `F(x) = F0 + sum_a x_a F_a`, required to be positive definite.
///
/// When `shifted` is set the solver enforces `F(x) - t I >= 0` and maximizes
/// the common margin `t`; otherwise the block is only kept positive
/// definite (used for normalization constraints).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmiBlock {
    pub label: String,
    pub size: usize,
    pub constant: Mat,
    pub coeffs: Vec<(usize, Triplets)>,
    pub shifted: bool,
}

impl LmiBlock {
    /// Extract the affine structure of `f` by evaluating it at the origin and
    /// at every unit vector.
    pub fn from_affine(
        label: impl Into<String>,
        n_vars: usize,
        shifted: bool,
        f: impl Fn(&[f64]) -> Mat,
    ) -> Self {
        let mut x = vec![0.0; n_vars];
        let constant = symmetrize(&f(&x));
        let size = constant.nrows();
        let mut coeffs = Vec::new();
        for a in 0..n_vars {
            x[a] = 1.0;
            let diff = symmetrize(&f(&x)) - &constant;
            x[a] = 0.0;
            let mut trip = Vec::new();
            for c in 0..size {
                for r in 0..=c {
                    let v = diff[(r, c)];
                    if v != 0.0 {
                        trip.push((r, c, v));
                    }
                }
            }
            if !trip.is_empty() {
                coeffs.push((a, trip));
            }
        }
        Self {
            label: label.into(),
            size,
            constant,
            coeffs,
            shifted,
        }
    }

    pub fn eval(&self, x: &[f64]) -> Mat {
        let mut m = self.constant.clone();
        for (a, trip) in &self.coeffs {
            let xa = x[*a];
            if xa == 0.0 {
                continue;
            }
            for &(r, c, v) in trip {
                m[(r, c)] += xa * v;
                if r != c {
                    m[(c, r)] += xa * v;
                }
            }
        }
        m
    }

    pub fn coefficient_dense(&self, var: usize) -> Mat {
        let mut m = Mat::zeros(self.size, self.size);
        if let Some((_, trip)) = self.coeffs.iter().find(|(a, _)| *a == var) {
            for &(r, c, v) in trip {
                m[(r, c)] = v;
                m[(c, r)] = v;
            }
        }
        m
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmiProgram {
    pub n_vars: usize,
    pub blocks: Vec<LmiBlock>,
    /// Strictly feasible starting guess for the non-shifted blocks.
    pub x0: Vec<f64>,
}

impl LmiProgram {
    pub fn new(n_vars: usize) -> Self {
        Self {
            n_vars,
            blocks: Vec::new(),
            x0: vec![0.0; n_vars],
        }
    }

    pub fn push(&mut self, block: LmiBlock) {
        self.blocks.push(block);
    }

    pub fn shifted_count(&self) -> usize {
        self.blocks.iter().filter(|b| b.shifted).count()
    }
}

/// Index map for the structured unknowns `W = W^T`, `Z = [[Z1, 0], [Z2, Z3]]`
/// and the gain numerator `Y` (1 x 3), all of augmented dimension `3 + p`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VarLayout {
    pub p: usize,
}

impl VarLayout {
    pub fn dim(&self) -> usize {
        3 + self.p
    }

    pub fn w_count(&self) -> usize {
        let n = self.dim();
        n * (n + 1) / 2
    }

    pub fn z_count(&self) -> usize {
        let n = self.dim();
        n * n - 3 * self.p
    }

    pub fn y_count(&self) -> usize {
        3
    }

    pub fn count(&self) -> usize {
        self.w_count() + self.z_count() + self.y_count()
    }

    pub fn w_index(&self, r: usize, c: usize) -> usize {
        let (r, c) = if r <= c { (r, c) } else { (c, r) };
        c * (c + 1) / 2 + r
    }

    /// `None` for the structurally zero upper-right block.
    pub fn z_index(&self, r: usize, c: usize) -> Option<usize> {
        let n = self.dim();
        let base = self.w_count();
        if r < 3 {
            (c < 3).then_some(base + r * 3 + c)
        } else {
            Some(base + 9 + (r - 3) * n + c)
        }
    }

    pub fn y_index(&self, c: usize) -> usize {
        self.w_count() + self.z_count() + c
    }

    pub fn w(&self, x: &[f64]) -> Mat {
        let n = self.dim();
        Mat::from_fn(n, n, |r, c| x[self.w_index(r, c)])
    }

    pub fn z(&self, x: &[f64]) -> Mat {
        let n = self.dim();
        Mat::from_fn(n, n, |r, c| self.z_index(r, c).map_or(0.0, |i| x[i]))
    }

    pub fn y(&self, x: &[f64]) -> Mat {
        Mat::from_fn(1, 3, |_, c| x[self.y_index(c)])
    }

    /// Pack `W`, `Z` and `Y` (ignoring `Z`'s upper-right block).
    pub fn pack(&self, w: &Mat, z: &Mat, y: &Mat) -> Vec<f64> {
        let n = self.dim();
        let mut x = vec![0.0; self.count()];
        for c in 0..n {
            for r in 0..=c {
                x[self.w_index(r, c)] = 0.5 * (w[(r, c)] + w[(c, r)]);
            }
            for r in 0..n {
                if let Some(i) = self.z_index(r, c) {
                    x[i] = z[(r, c)];
                }
            }
        }
        for c in 0..3 {
            x[self.y_index(c)] = y[(0, c)];
        }
        x
    }

    /// `[Y 0]`, the gain numerator padded to the augmented dimension.
    pub fn y_padded(&self, x: &[f64]) -> Mat {
        let mut m = Mat::zeros(1, self.dim());
        for c in 0..3 {
            m[(0, c)] = x[self.y_index(c)];
        }
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_counts() {
        for p in 1..10 {
            let l = VarLayout { p };
            let n = 3 + p;
            assert_eq!(l.w_count(), n * (n + 1) / 2);
            assert_eq!(l.z_count(), 9 + p * (3 + p));
            assert_eq!(l.count(), l.w_count() + l.z_count() + 3);
        }
    }

    #[test]
    fn layout_indices_are_a_bijection() {
        let l = VarLayout { p: 4 };
        let n = l.dim();
        let mut seen = vec![0usize; l.count()];
        for c in 0..n {
            for r in 0..=c {
                seen[l.w_index(r, c)] += 1;
            }
            for r in 0..n {
                if let Some(i) = l.z_index(r, c) {
                    seen[i] += 1;
                }
            }
        }
        for c in 0..3 {
            seen[l.y_index(c)] += 1;
        }
        assert!(seen.iter().all(|&k| k == 1));
        assert!(l.z_index(0, 3).is_none());
        assert!(l.z_index(2, n - 1).is_none());
    }

    #[test]
    fn pack_unpack_round_trip() {
        let l = VarLayout { p: 2 };
        let x: Vec<f64> = (0..l.count()).map(|i| i as f64 * 0.5 - 3.0).collect();
        let back = l.pack(&l.w(&x), &l.z(&x), &l.y(&x));
        assert_eq!(back, x);
        assert_eq!(l.z(&x).view((0, 3), (3, 2)).abs().max(), 0.0);
    }

    #[test]
    fn affine_extraction_reproduces_function() {
        let f = |x: &[f64]| {
            let mut m = Mat::identity(3, 3);
            m[(0, 1)] = 2.0 * x[0] - x[2];
            m[(1, 0)] = m[(0, 1)];
            m[(2, 2)] += 3.0 * x[1];
            m
        };
        let b = LmiBlock::from_affine("t", 3, true, f);
        assert_eq!(b.coeffs.len(), 3);
        let x = [0.3, -1.5, 2.0];
        assert!((b.eval(&x) - f(&x)).abs().max() < 1e-15);
        assert_eq!(b.coefficient_dense(1)[(2, 2)], 3.0);
    }
}
