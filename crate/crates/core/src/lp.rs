//! Dense two-phase tableau simplex for `min/max c·x  s.t.  A x = b, x >= 0`.
//!
//! Phase I minimises the sum of one artificial variable per row; Phase II
//! optimises the real objective over the feasible basis Phase I leaves behind.
//! Entering columns follow Dantzig's most-negative rule until 1000 degenerate
//! pivots have occurred, after which Bland's smallest-index rule takes over for
//! the rest of the solve. Ratio-test ties always go to the smallest basic index.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Min,
    Max,
}

/// Ratios this close (relative) are ties in the leaving-row test.
const RATIO_TIE: f64 = 1e-9;
/// Right-hand sides below this are set to zero after each pivot.
const RHS_SNAP: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearProgram {
    pub objective: Vec<f64>,
    pub equalities: Vec<Vec<f64>>,
    pub rhs: Vec<f64>,
    pub sense: Sense,
}

impl LinearProgram {
    pub fn new(objective: Vec<f64>, equalities: Vec<Vec<f64>>, rhs: Vec<f64>, sense: Sense) -> Result<Self> {
        let n = objective.len();
        if equalities.len() != rhs.len() {
            return Err(Error::Shape(format!(
                "{} constraint rows but {} right-hand sides",
                equalities.len(),
                rhs.len()
            )));
        }
        if let Some(row) = equalities.iter().position(|r| r.len() != n) {
            return Err(Error::Shape(format!("constraint row {row} does not have {n} columns")));
        }
        if rhs.iter().chain(&objective).any(|v| !v.is_finite()) {
            return Err(Error::Domain("linear program has non-finite data".into()));
        }
        Ok(Self { objective, equalities, rhs, sense })
    }

    /// Same as [`LinearProgram::new`] with the extra row `sum(x) = 1`.
    pub fn on_simplex(
        objective: Vec<f64>,
        mut equalities: Vec<Vec<f64>>,
        mut rhs: Vec<f64>,
        sense: Sense,
    ) -> Result<Self> {
        equalities.push(vec![1.0; objective.len()]);
        rhs.push(1.0);
        Self::new(objective, equalities, rhs, sense)
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    /// Infinity-norm residual of `A x - b`.
    pub fn residual(&self, x: &[f64]) -> f64 {
        self.equalities
            .iter()
            .zip(&self.rhs)
            .map(|(row, b)| (row.iter().zip(x).map(|(a, v)| a * v).sum::<f64>() - b).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    IterationLimit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub status: LpStatus,
    pub value: f64,
    pub point: Vec<f64>,
    pub pivots: usize,
}

impl LpSolution {
    fn failed(status: LpStatus, n: usize, pivots: usize) -> Self {
        Self { status, value: f64::NAN, point: vec![0.0; n], pivots }
    }

    pub fn is_optimal(&self) -> bool {
        self.status == LpStatus::Optimal
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimplexOptions {
    /// Smallest magnitude accepted as a pivot element.
    pub pivot_tolerance: f64,
    /// Phase I optimum above this means infeasible.
    pub feasibility_tolerance: f64,
    /// Reduced costs above `-optimality_tolerance` count as non-negative.
    pub optimality_tolerance: f64,
    /// Degenerate pivots tolerated before switching to Bland's rule.
    pub bland_after: usize,
    pub max_pivots: usize,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        Self {
            pivot_tolerance: 1e-10,
            feasibility_tolerance: 1e-8,
            optimality_tolerance: 1e-9,
            bland_after: 1000,
            max_pivots: 1_000_000,
        }
    }
}

/// Pluggable LP backend. [`DenseSimplex`] is the reference implementation.
pub trait LpBackend: Send + Sync {
    fn solve(&self, lp: &LinearProgram) -> LpSolution;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct DenseSimplex {
    pub options: SimplexOptions,
}

impl DenseSimplex {
    pub fn new(options: SimplexOptions) -> Self {
        Self { options }
    }
}

impl LpBackend for DenseSimplex {
    fn solve(&self, lp: &LinearProgram) -> LpSolution {
        let mut tableau = Tableau::new(lp, self.options);
        tableau.run(lp)
    }
}

/// Revised simplex from the `microlp` crate, as a second opinion on the dense
/// tableau. The certifier calls `microlp` directly on its inequality form,
/// which is smaller than the standard form used here.
#[derive(Debug, Clone, Copy, Default)]
pub struct MicroLp;

impl LpBackend for MicroLp {
    fn solve(&self, lp: &LinearProgram) -> LpSolution {
        use microlp::{ComparisonOp, OptimizationDirection, Problem, SolutionStatus, SolveOutcome};
        let n = lp.num_vars();
        let direction = match lp.sense {
            Sense::Min => OptimizationDirection::Minimize,
            Sense::Max => OptimizationDirection::Maximize,
        };
        let mut problem = Problem::new(direction);
        let vars: Vec<_> = lp.objective.iter().map(|&c| problem.add_var(c, (0.0, f64::INFINITY))).collect();
        for (row, &b) in lp.equalities.iter().zip(&lp.rhs) {
            let terms: Vec<_> = row.iter().zip(&vars).filter(|(a, _)| **a != 0.0).map(|(&a, &v)| (v, a)).collect();
            problem.add_constraint(&terms[..], ComparisonOp::Eq, b);
        }
        match problem.solve() {
            Ok(SolveOutcome::Solution(sol)) if sol.status() == SolutionStatus::Optimal => {
                let point: Vec<f64> = vars.iter().map(|&v| sol.var_value_raw(v).max(0.0)).collect();
                LpSolution { status: LpStatus::Optimal, value: sol.objective(), point, pivots: 0 }
            }
            Err(microlp::Error::Infeasible) => LpSolution::failed(LpStatus::Infeasible, n, 0),
            Err(microlp::Error::Unbounded) => LpSolution::failed(LpStatus::Unbounded, n, 0),
            other => {
                log::debug!("microlp stopped without an optimum: {other:?}");
                LpSolution::failed(LpStatus::IterationLimit, n, 0)
            }
        }
    }
}

/// Solves `lp` with the default dense simplex.
pub fn solve(lp: &LinearProgram) -> LpSolution {
    DenseSimplex::default().solve(lp)
}

/// Phase I only: a point of `{x >= 0, sum(x) = 1, A x = b}` if one exists.
pub fn feasible_point(equalities: &[Vec<f64>], rhs: &[f64], num_vars: usize) -> Result<LpSolution> {
    let lp = LinearProgram::on_simplex(vec![0.0; num_vars], equalities.to_vec(), rhs.to_vec(), Sense::Min)?;
    let mut tableau = Tableau::new(&lp, SimplexOptions::default());
    Ok(match tableau.phase_one() {
        Ok(()) => {
            let point = tableau.primal_point();
            LpSolution { status: LpStatus::Optimal, value: 0.0, point, pivots: tableau.pivots }
        }
        Err(status) => LpSolution::failed(status, num_vars, tableau.pivots),
    })
}

struct Tableau {
    opts: SimplexOptions,
    m: usize,
    n: usize,
    width: usize,
    // row-major m x (n + m + 1); the last column is the right-hand side
    cells: Vec<f64>,
    basis: Vec<usize>,
    active: Vec<bool>,
    cost: Vec<f64>,
    pivots: usize,
    degenerate: usize,
}

impl Tableau {
    fn new(lp: &LinearProgram, opts: SimplexOptions) -> Self {
        let m = lp.equalities.len();
        let n = lp.num_vars();
        let width = n + m + 1;
        let mut cells = vec![0.0; m * width];
        for (i, (row, &b)) in lp.equalities.iter().zip(&lp.rhs).enumerate() {
            let sign = if b < 0.0 { -1.0 } else { 1.0 };
            let dst = &mut cells[i * width..(i + 1) * width];
            for (d, a) in dst.iter_mut().zip(row) {
                *d = sign * a;
            }
            dst[n + i] = 1.0;
            dst[width - 1] = sign * b;
        }
        Self {
            opts,
            m,
            n,
            width,
            cells,
            basis: (n..n + m).collect(),
            active: vec![true; m],
            cost: vec![0.0; width],
            pivots: 0,
            degenerate: 0,
        }
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.cells[i * self.width + j]
    }

    fn rhs(&self, i: usize) -> f64 {
        self.at(i, self.width - 1)
    }

    /// Sets the reduced-cost row for per-column costs `c` (length n + m).
    fn price(&mut self, c: &[f64]) {
        let w = self.width;
        let mut cost = vec![0.0; w];
        cost[..c.len()].copy_from_slice(c);
        for i in 0..self.m {
            if !self.active[i] {
                continue;
            }
            let cb = c[self.basis[i]];
            if cb != 0.0 {
                let row = &self.cells[i * w..(i + 1) * w];
                for (dst, a) in cost.iter_mut().zip(row) {
                    *dst -= cb * a;
                }
            }
        }
        self.cost = cost;
    }

    fn pivot(&mut self, row: usize, col: usize) {
        let w = self.width;
        let piv = self.at(row, col);
        {
            let r = &mut self.cells[row * w..(row + 1) * w];
            for v in r.iter_mut() {
                *v /= piv;
            }
            r[col] = 1.0;
        }
        let pivot_row: Vec<f64> = self.cells[row * w..(row + 1) * w].to_vec();
        for i in 0..self.m {
            if i == row || !self.active[i] {
                continue;
            }
            let factor = self.cells[i * w + col];
            if factor != 0.0 {
                let r = &mut self.cells[i * w..(i + 1) * w];
                for (v, p) in r.iter_mut().zip(&pivot_row) {
                    *v -= factor * p;
                }
                r[col] = 0.0;
            }
        }
        let factor = self.cost[col];
        if factor != 0.0 {
            for (v, p) in self.cost.iter_mut().zip(&pivot_row) {
                *v -= factor * p;
            }
            self.cost[col] = 0.0;
        }
        // Rounding residue on degenerate rows would otherwise break ratio ties.
        for i in 0..self.m {
            let b = &mut self.cells[i * w + w - 1];
            if b.abs() < RHS_SNAP {
                *b = 0.0;
            }
        }
        self.basis[row] = col;
        self.pivots += 1;
    }

    /// Simplex iterations over columns `0..limit`.
    fn iterate(&mut self, limit: usize) -> std::result::Result<(), LpStatus> {
        loop {
            if self.pivots >= self.opts.max_pivots {
                return Err(LpStatus::IterationLimit);
            }
            let bland = self.degenerate >= self.opts.bland_after;
            let tol = self.opts.optimality_tolerance;
            let entering = if bland {
                (0..limit).find(|&j| self.cost[j] < -tol)
            } else {
                let mut best = None;
                let mut best_val = -tol;
                for j in 0..limit {
                    if self.cost[j] < best_val {
                        best_val = self.cost[j];
                        best = Some(j);
                    }
                }
                best
            };
            let Some(col) = entering else { return Ok(()) };

            let mut leaving: Option<(usize, f64)> = None;
            for i in 0..self.m {
                if !self.active[i] {
                    continue;
                }
                let a = self.at(i, col);
                if a > self.opts.pivot_tolerance {
                    let ratio = self.rhs(i).max(0.0) / a;
                    leaving = match leaving {
                        None => Some((i, ratio)),
                        Some((bi, br)) => {
                            let tie = RATIO_TIE * (1.0 + br);
                            if ratio < br - tie || (ratio <= br + tie && self.basis[i] < self.basis[bi]) {
                                Some((i, ratio))
                            } else {
                                Some((bi, br))
                            }
                        }
                    };
                }
            }
            let Some((row, ratio)) = leaving else { return Err(LpStatus::Unbounded) };
            if ratio <= 1e-12 {
                self.degenerate += 1;
            }
            self.pivot(row, col);
        }
    }

    fn phase_one(&mut self) -> std::result::Result<(), LpStatus> {
        let mut c = vec![0.0; self.n + self.m];
        for v in &mut c[self.n..] {
            *v = 1.0;
        }
        self.price(&c);
        self.iterate(self.n + self.m)?;
        let infeasibility: f64 = (0..self.m)
            .filter(|&i| self.active[i] && self.basis[i] >= self.n)
            .map(|i| self.rhs(i).abs())
            .sum();
        if infeasibility > self.opts.feasibility_tolerance {
            return Err(LpStatus::Infeasible);
        }
        // Drive remaining artificials out of the basis; rows with no usable
        // pivot are linearly dependent on the others and are dropped.
        for i in 0..self.m {
            if self.basis[i] < self.n {
                continue;
            }
            let col = (0..self.n)
                .filter(|&j| self.at(i, j).abs() > self.opts.pivot_tolerance)
                .max_by(|&a, &b| self.at(i, a).abs().total_cmp(&self.at(i, b).abs()));
            match col {
                Some(j) => self.pivot(i, j),
                None => self.active[i] = false,
            }
        }
        Ok(())
    }

    fn primal_point(&self) -> Vec<f64> {
        let mut x = vec![0.0; self.n];
        for i in 0..self.m {
            if self.active[i] && self.basis[i] < self.n {
                x[self.basis[i]] = self.rhs(i).max(0.0);
            }
        }
        x
    }

    fn run(&mut self, lp: &LinearProgram) -> LpSolution {
        let n = self.n;
        if let Err(status) = self.phase_one() {
            return LpSolution::failed(status, n, self.pivots);
        }
        let sign = match lp.sense {
            Sense::Min => 1.0,
            Sense::Max => -1.0,
        };
        let mut c = vec![0.0; n + self.m];
        for (dst, v) in c.iter_mut().zip(&lp.objective) {
            *dst = sign * v;
        }
        self.price(&c);
        if let Err(status) = self.iterate(n) {
            return LpSolution::failed(status, n, self.pivots);
        }
        let point = self.primal_point();
        let value = lp.objective.iter().zip(&point).map(|(c, x)| c * x).sum();
        LpSolution { status: LpStatus::Optimal, value, point, pivots: self.pivots }
    }
}
