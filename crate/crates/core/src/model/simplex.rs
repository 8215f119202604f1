//! Dense primal simplex for the L1-regularized hinge-loss problem
//!
//! ```text
//! min  Σ_k (u_k + v_k) + C Σ_j ξ_j
//! s.t. Σ_k a_jk (u_k - v_k) + ξ_j - s_j = 1,   u, v, ξ, s ≥ 0
//! ```
//!
//! with `a_jk = y_j x_jk` and `w = u - v`. The slack basis `{ξ}` is feasible
//! (`ξ = 1`), so no phase one is needed. Entering columns follow Dantzig's
//! rule and fall back to Bland's rule after a run of degenerate pivots; the
//! tableau is rebuilt from the original data every `REBUILD_EVERY` pivots
//! and before declaring optimality.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

const REDUCED_COST_TOL: f64 = 1e-11;
const PIVOT_TOL: f64 = 1e-11;
const REBUILD_EVERY: usize = 64;
const DEGENERATE_RUN: usize = 50;

pub(crate) struct LpSolution {
    pub weights: Vec<f64>,
    /// LP objective after every pivot, starting with the initial basis.
    pub trace: Vec<f64>,
    pub pivots: usize,
}

struct Problem<'a> {
    /// Row-major `rows × n` matrix of `y_j x_jk`.
    a: &'a [f64],
    rows: usize,
    n: usize,
    c: f64,
}

impl Problem<'_> {
    /// Columns: `u_0..u_n`, `v_0..v_n` interleaved as `(u_k, v_k)` pairs,
    /// then `ξ_0..ξ_rows`, then `s_0..s_rows`.
    fn width(&self) -> usize {
        2 * self.n + 2 * self.rows
    }

    fn xi(&self, j: usize) -> usize {
        2 * self.n + j
    }

    fn cost(&self, col: usize) -> f64 {
        if col < 2 * self.n {
            1.0
        } else if col < 2 * self.n + self.rows {
            self.c
        } else {
            0.0
        }
    }

    fn entry(&self, row: usize, col: usize) -> f64 {
        if col < 2 * self.n {
            let k = col / 2;
            let v = self.a[row * self.n + k];
            if col % 2 == 0 {
                v
            } else {
                -v
            }
        } else if col < 2 * self.n + self.rows {
            if col - 2 * self.n == row {
                1.0
            } else {
                0.0
            }
        } else if col - 2 * self.n - self.rows == row {
            -1.0
        } else {
            0.0
        }
    }
}

struct Tableau<'a> {
    p: Problem<'a>,
    /// `rows × (width + 1)`, last column is the basic solution.
    t: Vec<f64>,
    /// Reduced costs, `width` entries.
    reduced: Vec<f64>,
    objective: f64,
    basis: Vec<usize>,
}

impl<'a> Tableau<'a> {
    fn new(p: Problem<'a>) -> Self {
        let basis: Vec<usize> = (0..p.rows).map(|j| p.xi(j)).collect();
        let w = p.width() + 1;
        let t = vec![0.0; p.rows * w];
        let mut tab = Tableau {
            reduced: vec![0.0; p.width()],
            objective: 0.0,
            p,
            t,
            basis,
        };
        tab.rebuild().expect("slack basis is the identity");
        tab
    }

    fn stride(&self) -> usize {
        self.p.width() + 1
    }

    /// Recomputes `B⁻¹[A | b]`, the reduced costs and the objective from the
    /// current basis.
    fn rebuild(&mut self) -> Result<()> {
        let rows = self.p.rows;
        let width = self.p.width();
        let b = DMatrix::from_fn(rows, rows, |r, c| self.p.entry(r, self.basis[c]));
        let binv = b.try_inverse().ok_or_else(|| {
            Error::Training("simplex basis became singular".into())
        })?;
        let stride = self.stride();
        for col in 0..width {
            let column: Vec<f64> = (0..rows).map(|r| self.p.entry(r, col)).collect();
            let nz: Vec<(usize, f64)> = column
                .iter()
                .enumerate()
                .filter(|(_, v)| **v != 0.0)
                .map(|(r, v)| (r, *v))
                .collect();
            for r in 0..rows {
                let mut acc = 0.0;
                for &(k, v) in &nz {
                    acc += binv[(r, k)] * v;
                }
                self.t[r * stride + col] = acc;
            }
        }
        for r in 0..rows {
            let acc: f64 = (0..rows).map(|k| binv[(r, k)]).sum();
            self.t[r * stride + width] = acc.max(0.0);
        }
        for col in 0..width {
            let mut z = 0.0;
            for r in 0..rows {
                z += self.p.cost(self.basis[r]) * self.t[r * stride + col];
            }
            self.reduced[col] = self.p.cost(col) - z;
        }
        for r in 0..rows {
            self.reduced[self.basis[r]] = 0.0;
        }
        self.objective = (0..rows)
            .map(|r| self.p.cost(self.basis[r]) * self.t[r * stride + width])
            .sum();
        Ok(())
    }

    fn entering(&self, bland: bool) -> Option<usize> {
        let mut best: Option<usize> = None;
        for (col, &rc) in self.reduced.iter().enumerate() {
            if rc < -REDUCED_COST_TOL {
                if bland {
                    return Some(col);
                }
                if best.is_none_or(|b| rc < self.reduced[b]) {
                    best = Some(col);
                }
            }
        }
        best
    }

    fn leaving(&self, col: usize) -> Option<usize> {
        let stride = self.stride();
        let width = self.p.width();
        let mut best: Option<(usize, f64)> = None;
        for r in 0..self.p.rows {
            let a = self.t[r * stride + col];
            if a > PIVOT_TOL {
                let ratio = self.t[r * stride + width] / a;
                match best {
                    None => best = Some((r, ratio)),
                    Some((br, bratio)) => {
                        if ratio < bratio - 1e-14
                            || (ratio <= bratio + 1e-14 && self.basis[r] < self.basis[br])
                        {
                            best = Some((r, ratio));
                        }
                    }
                }
            }
        }
        best.map(|(r, _)| r)
    }

    fn pivot(&mut self, row: usize, col: usize) {
        let stride = self.stride();
        let width = self.p.width();
        let piv = self.t[row * stride + col];
        for v in &mut self.t[row * stride..(row + 1) * stride] {
            *v /= piv;
        }
        let pivot_row: Vec<f64> = self.t[row * stride..(row + 1) * stride].to_vec();
        for r in 0..self.p.rows {
            if r == row {
                continue;
            }
            let f = self.t[r * stride + col];
            if f != 0.0 {
                let dst = &mut self.t[r * stride..(r + 1) * stride];
                for (d, &s) in dst.iter_mut().zip(&pivot_row) {
                    *d -= f * s;
                }
                dst[col] = 0.0;
                if dst[width] < 0.0 {
                    dst[width] = 0.0;
                }
            }
        }
        let f = self.reduced[col];
        for (rc, &s) in self.reduced.iter_mut().zip(&pivot_row[..width]) {
            *rc -= f * s;
        }
        self.reduced[col] = 0.0;
        self.objective += f * pivot_row[width];
        self.basis[row] = col;
    }

    fn weights(&self) -> Vec<f64> {
        let stride = self.stride();
        let width = self.p.width();
        let mut w = vec![0.0; self.p.n];
        for (r, &col) in self.basis.iter().enumerate() {
            if col < 2 * self.p.n {
                let v = self.t[r * stride + width];
                if col % 2 == 0 {
                    w[col / 2] += v;
                } else {
                    w[col / 2] -= v;
                }
            }
        }
        w
    }
}

/// Solves the LP for `a` (row-major `rows × n`, already multiplied by the
/// labels) and trade-off `c`.
pub(crate) fn solve(a: &[f64], rows: usize, n: usize, c: f64, max_pivots: usize) -> Result<LpSolution> {
    let mut tab = Tableau::new(Problem { a, rows, n, c });
    let mut trace = vec![tab.objective];
    let mut pivots = 0;
    let mut degenerate = 0;
    loop {
        let bland = degenerate >= DEGENERATE_RUN;
        let Some(col) = tab.entering(bland) else {
            tab.rebuild()?;
            if tab.entering(false).is_none() {
                break;
            }
            continue;
        };
        let Some(row) = tab.leaving(col) else {
            return Err(Error::Training("hinge-loss LP reported unbounded".into()));
        };
        let before = tab.objective;
        tab.pivot(row, col);
        pivots += 1;
        if tab.objective < before - 1e-12 * before.abs().max(1.0) {
            degenerate = 0;
        } else {
            degenerate += 1;
        }
        if pivots % REBUILD_EVERY == 0 {
            tab.rebuild()?;
        }
        trace.push(tab.objective);
        if pivots >= max_pivots {
            return Err(Error::Training(format!(
                "simplex did not converge within {max_pivots} pivots"
            )));
        }
    }
    Ok(LpSolution {
        weights: tab.weights(),
        trace,
        pivots,
    })
}
