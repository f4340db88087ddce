//! Dense revised simplex with bounded variables.
//!
//! Problems are converted to `min c'x, Ax = b, 0 <= x <= u` by shifting or
//! splitting structural variables and adding one slack per inequality.
//! Phase one minimizes the sum of artificials; phase two keeps any artificial
//! that is still basic pinned to zero. Pricing is Dantzig's rule, switching
//! to Bland's rule after a run of degenerate pivots.

use std::fmt::Write as _;

use log::debug;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LpError {
    #[error("problem is infeasible (phase one residual {0:e})")]
    Infeasible(f64),
    #[error("problem is unbounded")]
    Unbounded,
    #[error("iteration limit {iterations} exceeded")]
    IterationLimit { iterations: usize, basis: Vec<usize> },
    #[error("invalid problem: {0}")]
    Invalid(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Relation {
    Le,
    Ge,
    Eq,
}

#[derive(Clone, Debug)]
pub struct Constraint {
    pub coeffs: Vec<(usize, f64)>,
    pub relation: Relation,
    pub rhs: f64,
}

/// `min objective·x` subject to linear rows and per-variable bounds.
#[derive(Clone, Debug)]
pub struct LpProblem {
    objective: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    constraints: Vec<Constraint>,
    names: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct LpSolution {
    pub values: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
}

/// Number of consecutive degenerate pivots before switching to Bland's rule.
pub const BLAND_AFTER_DEGENERATE: usize = 1000;

const FEAS_TOL: f64 = 1e-9;
const OPT_TOL: f64 = 1e-9;
const PIVOT_TOL: f64 = 1e-9;

impl LpProblem {
    /// All variables default to bounds `[0, +inf)`.
    pub fn new(objective: Vec<f64>) -> LpProblem {
        let n = objective.len();
        LpProblem {
            objective,
            lower: vec![0.0; n],
            upper: vec![f64::INFINITY; n],
            constraints: Vec::new(),
            names: (0..n).map(|j| format!("x{j}")).collect(),
        }
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn num_constraints(&self) -> usize {
        self.constraints.len()
    }

    pub fn objective(&self) -> &[f64] {
        &self.objective
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn bounds(&self, var: usize) -> (f64, f64) {
        (self.lower[var], self.upper[var])
    }

    pub fn set_bounds(&mut self, var: usize, lower: f64, upper: f64) {
        self.lower[var] = lower;
        self.upper[var] = upper;
    }

    pub fn set_name(&mut self, var: usize, name: impl Into<String>) {
        self.names[var] = name.into();
    }

    pub fn add_constraint(&mut self, coeffs: Vec<(usize, f64)>, relation: Relation, rhs: f64) {
        self.constraints.push(Constraint { coeffs, relation, rhs });
    }

    pub fn validate(&self) -> Result<(), LpError> {
        let n = self.num_vars();
        if let Some(j) = self.objective.iter().position(|c| !c.is_finite()) {
            return Err(LpError::Invalid(format!("objective coefficient {j} is not finite")));
        }
        for j in 0..n {
            let (lo, hi) = (self.lower[j], self.upper[j]);
            if lo.is_nan() || hi.is_nan() || lo > hi || lo == f64::INFINITY || hi == f64::NEG_INFINITY {
                return Err(LpError::Invalid(format!("variable {j} has bounds [{lo}, {hi}]")));
            }
        }
        for (i, c) in self.constraints.iter().enumerate() {
            if !c.rhs.is_finite() {
                return Err(LpError::Invalid(format!("row {i} has non-finite rhs")));
            }
            for &(j, v) in &c.coeffs {
                if j >= n || !v.is_finite() {
                    return Err(LpError::Invalid(format!("row {i} has bad coefficient ({j}, {v})")));
                }
            }
        }
        Ok(())
    }

    /// Largest violation of any row or bound at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for j in 0..self.num_vars() {
            worst = worst.max(self.lower[j] - x[j]).max(x[j] - self.upper[j]);
        }
        for c in &self.constraints {
            let lhs: f64 = c.coeffs.iter().map(|&(j, v)| v * x[j]).sum();
            let viol = match c.relation {
                Relation::Le => lhs - c.rhs,
                Relation::Ge => c.rhs - lhs,
                Relation::Eq => (lhs - c.rhs).abs(),
            };
            worst = worst.max(viol);
        }
        worst
    }

    pub fn evaluate(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, v)| c * v).sum()
    }

    /// Writes the problem in CPLEX LP text format.
    pub fn to_lp_format(&self) -> String {
        fn terms(out: &mut String, coeffs: impl Iterator<Item = (usize, f64)>, names: &[String]) {
            let mut any = false;
            for (j, v) in coeffs {
                if v == 0.0 {
                    continue;
                }
                let sign = if v < 0.0 { '-' } else { '+' };
                write!(out, " {sign} {:?} {}", v.abs(), names[j]).unwrap();
                any = true;
            }
            if !any {
                out.push_str(" 0");
            }
        }
        let mut out = String::from("\\ critical-flow rerouting LP\nMinimize\n obj:");
        terms(&mut out, self.objective.iter().copied().enumerate(), &self.names);
        out.push_str("\nSubject To\n");
        for (i, c) in self.constraints.iter().enumerate() {
            write!(out, " r{i}:").unwrap();
            terms(&mut out, c.coeffs.iter().copied(), &self.names);
            let rel = match c.relation {
                Relation::Le => "<=",
                Relation::Ge => ">=",
                Relation::Eq => "=",
            };
            writeln!(out, " {rel} {:?}", c.rhs).unwrap();
        }
        out.push_str("Bounds\n");
        for j in 0..self.num_vars() {
            let (lo, hi) = (self.lower[j], self.upper[j]);
            let name = &self.names[j];
            match (lo.is_finite(), hi.is_finite()) {
                (true, true) => writeln!(out, " {lo:?} <= {name} <= {hi:?}").unwrap(),
                (true, false) => writeln!(out, " {name} >= {lo:?}").unwrap(),
                (false, true) => writeln!(out, " -inf <= {name} <= {hi:?}").unwrap(),
                (false, false) => writeln!(out, " {name} free").unwrap(),
            }
        }
        out.push_str("End\n");
        out
    }

    pub fn solve(&self) -> Result<LpSolution, LpError> {
        self.validate()?;
        let mut sf = StandardForm::build(self);
        let iterations = sf.run()?;
        let values = sf.recover(self);
        Ok(LpSolution {
            objective: self.evaluate(&values),
            values,
            iterations,
        })
    }
}

/// How a structural variable maps onto standard-form columns.
#[derive(Clone, Copy, Debug)]
enum VarMap {
    /// x = offset + col
    Shifted { col: usize, offset: f64 },
    /// x = offset - col
    Mirrored { col: usize, offset: f64 },
    /// x = pos - neg
    Split { pos: usize, neg: usize },
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Status {
    Basic,
    AtLower,
    AtUpper,
}

struct StandardForm {
    m: usize,
    cols: Vec<Vec<(usize, f64)>>,
    upper: Vec<f64>,
    cost: Vec<f64>,
    b: Vec<f64>,
    artificial_start: usize,
    maps: Vec<VarMap>,

    basis: Vec<usize>,
    status: Vec<Status>,
    x: Vec<f64>,
    binv: Vec<f64>,
    iterations: usize,
    max_iterations: usize,
}

impl StandardForm {
    fn build(p: &LpProblem) -> StandardForm {
        let m = p.constraints.len();
        let mut cols: Vec<Vec<(usize, f64)>> = Vec::new();
        let mut upper = Vec::new();
        let mut cost = Vec::new();
        let mut maps = Vec::with_capacity(p.num_vars());
        let mut b: Vec<f64> = p.constraints.iter().map(|c| c.rhs).collect();

        // Row entries of each structural variable.
        let mut var_rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); p.num_vars()];
        for (i, c) in p.constraints.iter().enumerate() {
            for &(j, v) in &c.coeffs {
                if v != 0.0 {
                    var_rows[j].push((i, v));
                }
            }
        }
        for j in 0..p.num_vars() {
            let (lo, hi) = (p.lower[j], p.upper[j]);
            let rows = std::mem::take(&mut var_rows[j]);
            let c = p.objective[j];
            if lo.is_finite() {
                for &(i, v) in &rows {
                    b[i] -= v * lo;
                }
                maps.push(VarMap::Shifted { col: cols.len(), offset: lo });
                cols.push(rows);
                upper.push(hi - lo);
                cost.push(c);
            } else if hi.is_finite() {
                for &(i, v) in &rows {
                    b[i] -= v * hi;
                }
                maps.push(VarMap::Mirrored { col: cols.len(), offset: hi });
                cols.push(rows.iter().map(|&(i, v)| (i, -v)).collect());
                upper.push(f64::INFINITY);
                cost.push(-c);
            } else {
                let pos = cols.len();
                maps.push(VarMap::Split { pos, neg: pos + 1 });
                cols.push(rows.clone());
                cols.push(rows.iter().map(|&(i, v)| (i, -v)).collect());
                upper.extend([f64::INFINITY, f64::INFINITY]);
                cost.extend([c, -c]);
            }
        }

        // Slacks; rows are negated where needed so that b >= 0.
        let mut row_sign = vec![1.0; m];
        for (i, bi) in b.iter_mut().enumerate() {
            if *bi < 0.0 {
                row_sign[i] = -1.0;
                *bi = -*bi;
            }
        }
        for col in cols.iter_mut() {
            for e in col.iter_mut() {
                e.1 *= row_sign[e.0];
            }
        }
        let mut initial: Vec<Option<usize>> = vec![None; m];
        for (i, c) in p.constraints.iter().enumerate() {
            let s = match c.relation {
                Relation::Le => 1.0,
                Relation::Ge => -1.0,
                Relation::Eq => continue,
            } * row_sign[i];
            if s > 0.0 {
                initial[i] = Some(cols.len());
            }
            cols.push(vec![(i, s)]);
            upper.push(f64::INFINITY);
            cost.push(0.0);
        }
        let artificial_start = cols.len();
        let mut basis = vec![0; m];
        for i in 0..m {
            basis[i] = match initial[i] {
                Some(col) => col,
                None => {
                    cols.push(vec![(i, 1.0)]);
                    upper.push(f64::INFINITY);
                    cost.push(0.0);
                    cols.len() - 1
                }
            };
        }

        let ncols = cols.len();
        let mut status = vec![Status::AtLower; ncols];
        let mut x = vec![0.0; ncols];
        for (i, &col) in basis.iter().enumerate() {
            status[col] = Status::Basic;
            x[col] = b[i];
        }
        let mut binv = vec![0.0; m * m];
        for i in 0..m {
            binv[i * m + i] = 1.0;
        }
        StandardForm {
            m,
            max_iterations: 20 * (m + ncols) + 10_000,
            cols,
            upper,
            cost,
            b,
            artificial_start,
            maps,
            basis,
            status,
            x,
            binv,
            iterations: 0,
        }
    }

    fn run(&mut self) -> Result<usize, LpError> {
        let ncols = self.cols.len();
        if self.artificial_start < ncols {
            let phase1: Vec<f64> = (0..ncols)
                .map(|j| if j >= self.artificial_start { 1.0 } else { 0.0 })
                .collect();
            self.optimize(&phase1)?;
            let residual: f64 = (self.artificial_start..ncols).map(|j| self.x[j]).sum();
            let scale = 1.0 + self.b.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            if residual > FEAS_TOL * scale {
                return Err(LpError::Infeasible(residual));
            }
            for j in self.artificial_start..ncols {
                self.upper[j] = 0.0;
                if self.status[j] != Status::Basic {
                    self.status[j] = Status::AtLower;
                    self.x[j] = 0.0;
                }
            }
        }
        let cost = self.cost.clone();
        self.optimize(&cost)?;
        Ok(self.iterations)
    }

    fn optimize(&mut self, cost: &[f64]) -> Result<(), LpError> {
        let m = self.m;
        let ncols = self.cols.len();
        let mut y = vec![0.0; m];
        let mut alpha = vec![0.0; m];
        let mut degenerate_run = 0usize;
        let mut since_refresh = 0usize;
        let refresh_every = if m <= 400 { 100 } else { 400 };

        loop {
            if self.iterations >= self.max_iterations {
                return Err(LpError::IterationLimit {
                    iterations: self.iterations,
                    basis: self.basis.clone(),
                });
            }
            let bland = degenerate_run >= BLAND_AFTER_DEGENERATE;

            // Duals y = c_B' B^-1.
            y.iter_mut().for_each(|v| *v = 0.0);
            for i in 0..m {
                let cb = cost[self.basis[i]];
                if cb != 0.0 {
                    let row = &self.binv[i * m..(i + 1) * m];
                    for (yj, r) in y.iter_mut().zip(row) {
                        *yj += cb * r;
                    }
                }
            }

            // Pricing.
            let mut entering: Option<(usize, f64)> = None;
            for j in 0..ncols {
                let st = self.status[j];
                if st == Status::Basic || self.upper[j] == 0.0 {
                    continue;
                }
                let d = cost[j] - self.cols[j].iter().map(|&(r, v)| y[r] * v).sum::<f64>();
                let eligible = (st == Status::AtLower && d < -OPT_TOL) || (st == Status::AtUpper && d > OPT_TOL);
                if !eligible {
                    continue;
                }
                if bland {
                    entering = Some((j, d));
                    break;
                }
                if entering.is_none_or(|(_, best)| d.abs() > best.abs()) {
                    entering = Some((j, d));
                }
            }
            let Some((q, _)) = entering else {
                return Ok(());
            };
            let dir = if self.status[q] == Status::AtLower { 1.0 } else { -1.0 };

            // alpha = B^-1 a_q
            alpha.iter_mut().for_each(|v| *v = 0.0);
            for &(r, v) in &self.cols[q] {
                for (i, a) in alpha.iter_mut().enumerate() {
                    *a += self.binv[i * m + r] * v;
                }
            }

            // Ratio test.
            let mut step = self.upper[q];
            let mut leaving: Option<(usize, bool)> = None;
            let mut best_pivot = 0.0;
            for i in 0..m {
                let delta = dir * alpha[i];
                if delta.abs() <= PIVOT_TOL {
                    continue;
                }
                let col = self.basis[i];
                let xb = self.x[col];
                let (limit, to_upper) = if delta > 0.0 {
                    (xb.max(0.0) / delta, false)
                } else if self.upper[col].is_finite() {
                    ((self.upper[col] - xb).max(0.0) / -delta, true)
                } else {
                    continue;
                };
                let better = match leaving {
                    _ if limit < step - 1e-12 => true,
                    None => limit <= step,
                    Some((r, _)) if (limit - step).abs() <= 1e-12 => {
                        if bland {
                            col < self.basis[r]
                        } else {
                            delta.abs() > best_pivot
                        }
                    }
                    _ => false,
                };
                if better {
                    step = step.min(limit);
                    leaving = Some((i, to_upper));
                    best_pivot = delta.abs();
                }
            }
            if step.is_infinite() {
                return Err(LpError::Unbounded);
            }
            self.iterations += 1;
            if step <= 1e-12 {
                degenerate_run += 1;
            } else {
                degenerate_run = 0;
            }

            for i in 0..m {
                let col = self.basis[i];
                self.x[col] -= dir * step * alpha[i];
            }
            match leaving {
                None => {
                    // Bound flip.
                    if dir > 0.0 {
                        self.status[q] = Status::AtUpper;
                        self.x[q] = self.upper[q];
                    } else {
                        self.status[q] = Status::AtLower;
                        self.x[q] = 0.0;
                    }
                }
                Some((r, to_upper)) => {
                    let out = self.basis[r];
                    if to_upper {
                        self.status[out] = Status::AtUpper;
                        self.x[out] = self.upper[out];
                    } else {
                        self.status[out] = Status::AtLower;
                        self.x[out] = 0.0;
                    }
                    self.x[q] += dir * step;
                    self.status[q] = Status::Basic;
                    self.basis[r] = q;
                    self.pivot(r, &alpha);
                    since_refresh += 1;
                }
            }

            if since_refresh >= refresh_every {
                since_refresh = 0;
                if m <= 400 || self.basic_residual() > 1e-9 {
                    self.reinvert();
                }
                self.recompute_basic();
            }
        }
    }

    fn pivot(&mut self, r: usize, alpha: &[f64]) {
        let m = self.m;
        let inv = 1.0 / alpha[r];
        let (before, rest) = self.binv.split_at_mut(r * m);
        let (pivot_row, after) = rest.split_at_mut(m);
        pivot_row.iter_mut().for_each(|v| *v *= inv);
        let update = |rows: &mut [f64], offset: usize| {
            for (k, row) in rows.chunks_exact_mut(m).enumerate() {
                let a = alpha[offset + k];
                if a != 0.0 {
                    for (v, p) in row.iter_mut().zip(pivot_row.iter()) {
                        *v -= a * p;
                    }
                }
            }
        };
        update(before, 0);
        update(after, r + 1);
    }

    /// Right-hand side seen by the basic variables: b - N x_N.
    fn reduced_rhs(&self) -> Vec<f64> {
        let mut rhs = self.b.clone();
        for (j, col) in self.cols.iter().enumerate() {
            if self.status[j] != Status::Basic && self.x[j] != 0.0 {
                for &(r, v) in col {
                    rhs[r] -= v * self.x[j];
                }
            }
        }
        rhs
    }

    fn basic_residual(&self) -> f64 {
        let mut lhs = vec![0.0; self.m];
        for &col in &self.basis {
            for &(r, v) in &self.cols[col] {
                lhs[r] += v * self.x[col];
            }
        }
        self.reduced_rhs()
            .iter()
            .zip(&lhs)
            .fold(0.0, |w, (a, b)| w.max((a - b).abs()))
    }

    fn recompute_basic(&mut self) {
        let m = self.m;
        let rhs = self.reduced_rhs();
        for i in 0..m {
            let row = &self.binv[i * m..(i + 1) * m];
            self.x[self.basis[i]] = row.iter().zip(&rhs).map(|(a, b)| a * b).sum();
        }
    }

    /// Rebuilds B^-1 from scratch by Gauss-Jordan elimination.
    fn reinvert(&mut self) {
        let m = self.m;
        let mut a = vec![0.0; m * m];
        for (k, &col) in self.basis.iter().enumerate() {
            for &(r, v) in &self.cols[col] {
                a[r * m + k] = v;
            }
        }
        let mut inv = vec![0.0; m * m];
        for i in 0..m {
            inv[i * m + i] = 1.0;
        }
        for c in 0..m {
            let p = (c..m)
                .max_by(|&i, &j| a[i * m + c].abs().total_cmp(&a[j * m + c].abs()))
                .unwrap();
            if a[p * m + c].abs() < 1e-14 {
                debug!("reinversion found a near-singular basis; keeping the updated inverse");
                return;
            }
            if p != c {
                for k in 0..m {
                    a.swap(p * m + k, c * m + k);
                    inv.swap(p * m + k, c * m + k);
                }
            }
            let piv = 1.0 / a[c * m + c];
            for k in 0..m {
                a[c * m + k] *= piv;
                inv[c * m + k] *= piv;
            }
            for i in 0..m {
                if i == c {
                    continue;
                }
                let f = a[i * m + c];
                if f != 0.0 {
                    for k in 0..m {
                        a[i * m + k] -= f * a[c * m + k];
                        inv[i * m + k] -= f * inv[c * m + k];
                    }
                }
            }
        }
        // Row k of B^-1 belongs to basis position k.
        self.binv = inv;
    }

    fn recover(&self, p: &LpProblem) -> Vec<f64> {
        let mut values: Vec<f64> = self
            .maps
            .iter()
            .map(|map| match *map {
                VarMap::Shifted { col, offset } => offset + self.x[col],
                VarMap::Mirrored { col, offset } => offset - self.x[col],
                VarMap::Split { pos, neg } => self.x[pos] - self.x[neg],
            })
            .collect();
        // Clip round-off outside the declared bounds.
        for (j, v) in values.iter_mut().enumerate() {
            *v = v.clamp(p.lower[j], p.upper[j]);
        }
        values
    }
}
