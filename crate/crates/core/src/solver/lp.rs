//! Exact solver: revised simplex with Bland's rule on the flattened
//! transport LP.
//!
//! Variables are the `prod n_i` tensor entries. Constraints are the marginal
//! equalities; the last row of every axis after the first is dropped, which
//! leaves `sum n_i - m + 1` linearly independent rows. Phase 1 starts from an
//! all-artificial basis. The explicit basis inverse is refactorized
//! periodically and once more at the end, so the returned vertex and duals
//! come from a fresh factorization.

use nalgebra::DMatrix;

use crate::duality::Potentials;
use crate::{Error, Result};

use super::{Coupling, Instance, FEAS_TOL};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LpOptions {
    pub feas_tol: f64,
    pub max_iterations: usize,
    pub refactor_every: usize,
}

impl Default for LpOptions {
    fn default() -> Self {
        Self { feas_tol: FEAS_TOL, max_iterations: 2_000_000, refactor_every: 64 }
    }
}

/// Basic optimal solution and its dual certificate.
#[derive(Debug, Clone)]
pub struct LpSolution {
    pub coupling: Coupling,
    /// One value per support point per marginal; `sum_i v_i(a_i) <= C[a] + feas_tol`.
    pub duals: Potentials,
    pub iterations: usize,
    /// Flat indices of the structural basic variables (including degenerate zeros).
    pub basis: Vec<usize>,
}

impl LpSolution {
    pub fn primal_objective(&self) -> f64 {
        self.coupling.objective()
    }
}

pub fn solve_lp(inst: &Instance) -> Result<LpSolution> {
    solve_lp_with(inst, &LpOptions::default())
}

pub fn solve_lp_with(inst: &Instance, opts: &LpOptions) -> Result<LpSolution> {
    let mut s = Simplex::new(inst, opts);
    s.phase_one()?;
    s.drive_out_artificials()?;
    s.phase_two()?;
    s.refactor()?;

    let mut entries = Vec::new();
    let mut basis = Vec::new();
    for (r, &var) in s.basis.iter().enumerate() {
        if var < s.nvars {
            basis.push(var);
            let x = s.xb[r];
            if x < -opts.feas_tol {
                return Err(Error::Lp(format!("final basic solution is infeasible (x = {x:e})")));
            }
            // degenerate basics come back as rounding noise around zero
            if x > 1e-14 {
                entries.push((inst.unravel(var), x));
            }
        }
    }
    basis.sort_unstable();
    let coupling = Coupling::new(inst, entries)?;

    let y = s.duals();
    let values = (0..inst.marginal_count())
        .map(|i| (0..inst.shape()[i]).map(|a| s.row_of(i, a).map_or(0.0, |r| y[r])).collect())
        .collect();
    Ok(LpSolution { coupling, duals: Potentials::new(values), iterations: s.iterations, basis })
}

/// Dual certificate of a structural basis, priced with `inst`'s own costs.
///
/// Rows the basis leaves uncovered get artificial columns, chosen greedily in
/// row order, and a zero price. Errors when the columns are dependent.
pub fn basis_duals(inst: &Instance, basis: &[usize]) -> Result<Potentials> {
    let opts = LpOptions::default();
    let mut s = Simplex::new(inst, &opts);
    if basis.len() > s.nrows || basis.iter().any(|&v| v >= s.nvars) {
        return Err(Error::Lp("basis does not fit the instance".into()));
    }
    let n = s.nrows;
    let mut cols: Vec<usize> = basis.to_vec();
    let mut rows = Vec::new();
    let column = |s: &Simplex, var: usize, rows: &mut Vec<usize>| {
        s.column_rows(var, rows);
        let mut c = nalgebra::DVector::<f64>::zeros(n);
        for &r in rows.iter() {
            c[r] = 1.0;
        }
        c
    };
    let rank = |s: &Simplex, cols: &[usize], rows: &mut Vec<usize>| {
        let mut mat = DMatrix::<f64>::zeros(n, cols.len());
        for (k, &var) in cols.iter().enumerate() {
            mat.set_column(k, &column(s, var, rows));
        }
        mat.rank(1e-9)
    };
    if rank(&s, &cols, &mut rows) < cols.len() {
        return Err(Error::Lp("basis columns are linearly dependent".into()));
    }
    for r in 0..n {
        if cols.len() == n {
            break;
        }
        cols.push(s.nvars + r);
        if rank(&s, &cols, &mut rows) < cols.len() {
            cols.pop();
        }
    }
    s.basis = cols;
    s.refactor()?;
    let y = s.duals();
    let values = (0..inst.marginal_count())
        .map(|i| (0..inst.shape()[i]).map(|a| s.row_of(i, a).map_or(0.0, |r| y[r])).collect())
        .collect();
    Ok(Potentials::new(values))
}

struct Simplex<'a> {
    inst: &'a Instance,
    opts: &'a LpOptions,
    costs: &'a [f64],
    nvars: usize,
    nrows: usize,
    row_base: Vec<usize>,
    kept: Vec<usize>,
    b: Vec<f64>,
    basis: Vec<usize>,
    in_basis: Vec<bool>,
    // row-major nrows x nrows
    binv: Vec<f64>,
    xb: Vec<f64>,
    iterations: usize,
    since_refactor: usize,
    opt_tol: f64,
}

const PIVOT_TOL: f64 = 1e-11;

impl<'a> Simplex<'a> {
    fn new(inst: &'a Instance, opts: &'a LpOptions) -> Self {
        let m = inst.marginal_count();
        let kept: Vec<usize> = (0..m).map(|i| if i == 0 { inst.shape()[0] } else { inst.shape()[i] - 1 }).collect();
        let mut row_base = Vec::with_capacity(m);
        let mut nrows = 0;
        for &k in &kept {
            row_base.push(nrows);
            nrows += k;
        }
        let mut b = vec![0.0; nrows];
        for i in 0..m {
            for a in 0..kept[i] {
                b[row_base[i] + a] = inst.weights(i)[a];
            }
        }
        let nvars = inst.len();
        let mut binv = vec![0.0; nrows * nrows];
        for r in 0..nrows {
            binv[r * nrows + r] = 1.0;
        }
        let basis: Vec<usize> = (0..nrows).map(|r| nvars + r).collect();
        let mut in_basis = vec![false; nvars + nrows];
        for &v in &basis {
            in_basis[v] = true;
        }
        let costs = inst.cost_tensor();
        let scale = costs.iter().fold(1.0_f64, |acc, c| acc.max(c.abs()));
        Self {
            inst,
            opts,
            costs,
            nvars,
            nrows,
            row_base,
            kept,
            xb: b.clone(),
            b,
            basis,
            in_basis,
            binv,
            iterations: 0,
            since_refactor: 0,
            opt_tol: 1e-12 * scale,
        }
    }

    fn row_of(&self, axis: usize, a: usize) -> Option<usize> {
        (a < self.kept[axis]).then(|| self.row_base[axis] + a)
    }

    fn column_rows(&self, var: usize, out: &mut Vec<usize>) {
        out.clear();
        if var >= self.nvars {
            out.push(var - self.nvars);
            return;
        }
        for (i, (&s, &n)) in self.inst.strides().iter().zip(self.inst.shape()).enumerate() {
            if let Some(r) = self.row_of(i, (var / s) % n) {
                out.push(r);
            }
        }
    }

    fn cost_of(&self, var: usize, phase_one: bool) -> f64 {
        match (phase_one, var >= self.nvars) {
            (true, true) => 1.0,
            (true, false) => 0.0,
            (false, true) => 0.0,
            (false, false) => self.costs[var],
        }
    }

    /// `y = c_B^T B^-1`.
    fn duals_for(&self, phase_one: bool) -> Vec<f64> {
        let n = self.nrows;
        let mut y = vec![0.0; n];
        for (r, &var) in self.basis.iter().enumerate() {
            let c = self.cost_of(var, phase_one);
            if c != 0.0 {
                let row = &self.binv[r * n..(r + 1) * n];
                for (yk, bk) in y.iter_mut().zip(row) {
                    *yk += c * bk;
                }
            }
        }
        y
    }

    fn duals(&self) -> Vec<f64> {
        self.duals_for(false)
    }

    /// Lowest-index structural variable with negative reduced cost.
    fn entering(&self, y: &[f64], phase_one: bool) -> Option<usize> {
        let m = self.inst.marginal_count();
        let shape = self.inst.shape();
        let mut idx = vec![0usize; m];
        // per-axis dual contribution of the current index, updated odometer-style
        let contrib = |i: usize, a: usize| self.row_of(i, a).map_or(0.0, |r| y[r]);
        let mut parts: Vec<f64> = (0..m).map(|i| contrib(i, 0)).collect();
        for var in 0..self.nvars {
            if !self.in_basis[var] {
                let d = self.cost_of(var, phase_one) - parts.iter().sum::<f64>();
                if d < -self.opt_tol {
                    return Some(var);
                }
            }
            let mut k = m;
            while k > 0 {
                k -= 1;
                idx[k] += 1;
                if idx[k] < shape[k] {
                    parts[k] = contrib(k, idx[k]);
                    break;
                }
                idx[k] = 0;
                parts[k] = contrib(k, 0);
            }
        }
        None
    }

    /// `B^-1 A_var`.
    fn direction(&self, var: usize, rows: &mut Vec<usize>) -> Vec<f64> {
        self.column_rows(var, rows);
        let n = self.nrows;
        (0..n).map(|r| rows.iter().map(|&k| self.binv[r * n + k]).sum()).collect()
    }

    /// Bland ratio test: minimum ratio, ties broken by lowest basic variable index.
    fn leaving(&self, d: &[f64]) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for r in 0..self.nrows {
            if d[r] > PIVOT_TOL {
                let theta = self.xb[r].max(0.0) / d[r];
                best = match best {
                    None => Some((r, theta)),
                    Some((br, bt)) => {
                        let tie = (theta - bt).abs() <= 1e-14 * (1.0 + bt.abs());
                        if theta < bt && !tie || tie && self.basis[r] < self.basis[br] {
                            Some((r, theta))
                        } else {
                            Some((br, bt))
                        }
                    }
                };
            }
        }
        best.map(|(r, _)| r)
    }

    fn pivot(&mut self, row: usize, var: usize, d: &[f64]) -> Result<()> {
        let n = self.nrows;
        let piv = d[row];
        let theta = self.xb[row] / piv;
        for k in 0..n {
            self.binv[row * n + k] /= piv;
        }
        let pivot_row: Vec<f64> = self.binv[row * n..(row + 1) * n].to_vec();
        for r in 0..n {
            if r != row && d[r] != 0.0 {
                let f = d[r];
                for (k, p) in pivot_row.iter().enumerate() {
                    self.binv[r * n + k] -= f * p;
                }
                self.xb[r] -= theta * f;
                if self.xb[r].abs() < 1e-15 {
                    self.xb[r] = 0.0;
                }
            }
        }
        self.xb[row] = theta;
        self.in_basis[self.basis[row]] = false;
        self.in_basis[var] = true;
        self.basis[row] = var;
        self.iterations += 1;
        self.since_refactor += 1;
        if self.iterations > self.opts.max_iterations {
            return Err(Error::Lp(format!("iteration limit {} reached", self.opts.max_iterations)));
        }
        if self.since_refactor >= self.opts.refactor_every {
            self.refactor()?;
        }
        Ok(())
    }

    fn refactor(&mut self) -> Result<()> {
        let n = self.nrows;
        let mut bmat = DMatrix::<f64>::zeros(n, n);
        let mut rows = Vec::new();
        for (c, &var) in self.basis.iter().enumerate() {
            self.column_rows(var, &mut rows);
            for &r in &rows {
                bmat[(r, c)] = 1.0;
            }
        }
        let inv = bmat.try_inverse().ok_or_else(|| Error::Lp("basis matrix became singular".into()))?;
        for r in 0..n {
            for k in 0..n {
                self.binv[r * n + k] = inv[(r, k)];
            }
        }
        for r in 0..n {
            let x: f64 = (0..n).map(|k| self.binv[r * n + k] * self.b[k]).sum();
            self.xb[r] = if x.abs() < 1e-15 { 0.0 } else { x };
        }
        self.since_refactor = 0;
        Ok(())
    }

    fn run(&mut self, phase_one: bool) -> Result<()> {
        let mut rows = Vec::new();
        loop {
            let y = self.duals_for(phase_one);
            let Some(var) = self.entering(&y, phase_one) else {
                return Ok(());
            };
            let d = self.direction(var, &mut rows);
            let row = self
                .leaving(&d)
                .ok_or_else(|| Error::Lp("unbounded direction on a bounded polytope".into()))?;
            self.pivot(row, var, &d)?;
        }
    }

    fn phase_one(&mut self) -> Result<()> {
        self.run(true)?;
        let infeasibility: f64 = self
            .basis
            .iter()
            .zip(&self.xb)
            .filter(|(&v, _)| v >= self.nvars)
            .map(|(_, x)| x.max(0.0))
            .sum();
        if infeasibility > self.opts.feas_tol {
            return Err(Error::Lp(format!(
                "marginals admit no coupling (phase 1 residual {infeasibility:e}); weights must be probability vectors"
            )));
        }
        Ok(())
    }

    fn drive_out_artificials(&mut self) -> Result<()> {
        let n = self.nrows;
        let mut rows = Vec::new();
        for r in 0..n {
            if self.basis[r] < self.nvars {
                continue;
            }
            let binv_row: Vec<f64> = self.binv[r * n..(r + 1) * n].to_vec();
            let mut chosen = None;
            for var in 0..self.nvars {
                if self.in_basis[var] {
                    continue;
                }
                self.column_rows(var, &mut rows);
                let alpha: f64 = rows.iter().map(|&k| binv_row[k]).sum();
                if alpha.abs() > 1e-9 {
                    chosen = Some(var);
                    break;
                }
            }
            let var = chosen.ok_or_else(|| Error::Lp("redundant constraint row survived reduction".into()))?;
            let d = self.direction(var, &mut rows);
            self.xb[r] = 0.0;
            self.pivot(r, var, &d)?;
        }
        Ok(())
    }

    fn phase_two(&mut self) -> Result<()> {
        // artificials are out of the basis and never re-enter: entering() scans structural columns only
        self.run(false)
    }
}
