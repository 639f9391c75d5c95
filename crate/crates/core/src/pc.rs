//! Bounds under partial confounding.
//!
//! The response distribution is restricted to a product of conditionals
//! `q_r = prod_i s_i[r_i | r_{PA(R_i)}]`, which makes both the objective and
//! the consistency constraints multilinear in the conditional tables. Two
//! solvers are provided:
//!
//! * [`pc_local_bounds`]: multi-start block-coordinate descent. With every
//!   table but one fixed the problem is linear in the remaining table, so each
//!   block update is an LP on an L1-penalised formulation. Results are local
//!   and flagged uncertified.
//! * [`pc_grid_certify`]: exhaustive partition of every table except the
//!   largest into cells of the stated resolution, each bounded by an LP over a
//!   McCormick relaxation. The envelope is a certified outer bound. Feasible
//!   only for small instances.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fc::{outcome_groups, BoundsResult, ConstraintSystem, Method, ObjectiveVector, ATTAINABLE_MASS};
use crate::lp::{DenseSimplex, LinearProgram, LpBackend, LpStatus, Sense, SimplexOptions};
use crate::model::{checked_product, CausalModel};
use crate::response::ResponseSpace;

/// Largest number of free parameters the grid certifier accepts.
pub const GRID_MAX_FREE_PARAMETERS: usize = 12;
/// Largest number of cells the certifier will bound (two LPs each).
pub const GRID_MAX_CELLS: usize = 200_000;
// Bound tightening passes per cell and the outward padding on tightened bounds.
const TIGHTEN_ROUNDS: usize = 1;
const TIGHTEN_PAD: f64 = 1e-6;
/// Smallest cell width, relative to the resolution, refined against an incumbent.
const REFINE_FLOOR: f64 = 1.0 / 8.0;
/// Successive widenings tried when a cell LP breaks down numerically.
const WIDEN_PADS: [f64; 3] = [1e-6, 1e-5, 1e-4];
/// Largest row residual at which a cell LP answer is trusted.
const CELL_RESIDUAL: f64 = 1e-8;
const FALLBACK_MAX_PIVOTS: usize = 5_000;
pub const DEFAULT_GRID_RESOLUTION: f64 = 0.05;

/// Shape of the conditional tables implied by a confounding spec.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorLayout {
    counts: Vec<usize>,
    response_parents: Vec<Vec<usize>>,
    columns: Vec<usize>,
}

impl FactorLayout {
    pub fn new(model: &CausalModel, space: &ResponseSpace) -> Result<Self> {
        let counts = space.counts().to_vec();
        let response_parents: Vec<Vec<usize>> = (0..model.len()).map(|i| model.response_parents(i).to_vec()).collect();
        let columns = response_parents
            .iter()
            .map(|ps| checked_product(ps.iter().map(|&j| counts[j])))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { counts, response_parents, columns })
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// Number of columns (conditioning configurations) of table `i`.
    pub fn columns(&self, i: usize) -> usize {
        self.columns[i]
    }

    /// Number of rows (response functions) of table `i`.
    pub fn rows(&self, i: usize) -> usize {
        self.counts[i]
    }

    pub fn table_len(&self, i: usize) -> usize {
        self.counts[i] * self.columns[i]
    }

    pub fn free_parameters(&self) -> usize {
        (0..self.len()).map(|i| self.columns[i] * (self.counts[i] - 1)).sum()
    }

    pub fn block_free_parameters(&self, i: usize) -> usize {
        self.columns[i] * (self.counts[i] - 1)
    }

    /// Position of `r`'s factor within table `i` (column-major, one column per
    /// configuration of the response parents).
    pub fn slot(&self, i: usize, digits: &[usize]) -> usize {
        let mut col = 0;
        let mut stride = 1;
        for &j in &self.response_parents[i] {
            col += digits[j] * stride;
            stride *= self.counts[j];
        }
        col * self.counts[i] + digits[i]
    }

    fn is_chain_rule(&self) -> bool {
        self.response_parents.iter().enumerate().all(|(i, ps)| ps.iter().copied().eq(0..i))
    }
}

/// Conditional tables `s_i`, column-major: entry `col * |R_i| + r_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorizedParams {
    pub tables: Vec<Vec<f64>>,
}

impl FactorizedParams {
    pub fn uniform(layout: &FactorLayout) -> Self {
        Self {
            tables: (0..layout.len()).map(|i| vec![1.0 / layout.rows(i) as f64; layout.table_len(i)]).collect(),
        }
    }

    /// Chain-rule factorisation of a joint response distribution; requires every
    /// response variable to depend on all of its predecessors.
    pub fn from_joint(layout: &FactorLayout, space: &ResponseSpace, q: &[f64]) -> Result<Self> {
        if !layout.is_chain_rule() {
            return Err(Error::Shape("joint tables factorise only under all-predecessor response parents".into()));
        }
        let n = layout.len();
        // prefix marginals: mass of each assignment of r_0..=r_i, indexed by the prefix code
        let mut prefix: Vec<Vec<f64>> = (0..n)
            .map(|i| vec![0.0; layout.counts[..=i].iter().product()])
            .collect();
        let mut digits = vec![0; n];
        for (r, &mass) in q.iter().enumerate() {
            space.digits_into(r, &mut digits);
            let mut code = 0;
            let mut stride = 1;
            for i in 0..n {
                code += digits[i] * stride;
                stride *= layout.counts[i];
                prefix[i][code] += mass;
            }
        }
        let mut tables = Vec::with_capacity(n);
        for i in 0..n {
            let k = layout.counts[i];
            let mut t = vec![0.0; layout.table_len(i)];
            for col in 0..layout.columns[i] {
                let parent_mass = if i == 0 { 1.0 } else { prefix[i - 1][col] };
                for a in 0..k {
                    t[col * k + a] = if parent_mass > 0.0 {
                        prefix[i][col + a * layout.columns[i]] / parent_mass
                    } else {
                        1.0 / k as f64
                    };
                }
            }
            tables.push(t);
        }
        Ok(Self { tables })
    }

    pub fn validate(&self, layout: &FactorLayout) -> Result<()> {
        if self.tables.len() != layout.len() {
            return Err(Error::Shape(format!("{} tables for {} variables", self.tables.len(), layout.len())));
        }
        for (i, t) in self.tables.iter().enumerate() {
            if t.len() != layout.table_len(i) {
                return Err(Error::Shape(format!(
                    "table {i} has {} entries, expected {}",
                    t.len(),
                    layout.table_len(i)
                )));
            }
            let k = layout.rows(i);
            for (col, chunk) in t.chunks(k).enumerate() {
                if chunk.iter().any(|&v| v < 0.0 || !v.is_finite()) {
                    return Err(Error::Domain(format!("table {i} column {col} has a negative entry")));
                }
                let sum: f64 = chunk.iter().sum();
                if (sum - 1.0).abs() > 1e-9 {
                    return Err(Error::Domain(format!("table {i} column {col} sums to {sum}")));
                }
            }
        }
        Ok(())
    }
}

/// Joint response distribution implied by the conditional tables.
pub fn assemble_q(layout: &FactorLayout, space: &ResponseSpace, params: &FactorizedParams) -> Result<Vec<f64>> {
    params.validate(layout)?;
    let mut digits = vec![0; layout.len()];
    Ok(space
        .indices()
        .map(|r| {
            space.digits_into(r, &mut digits);
            (0..layout.len()).map(|i| params.tables[i][layout.slot(i, &digits)]).product()
        })
        .collect())
}

/// A partial-confounding bounding problem for one factual and one action.
///
/// The objective is the ratio `sum_r outcome_r q_r / sum_{r ~ x^F} q_r`, which
/// equals the counterfactual expectation whenever `A q = p`.
#[derive(Debug, Clone)]
pub struct PcProblem<'a> {
    layout: FactorLayout,
    system: &'a ConstraintSystem,
    factual_row: usize,
    p_factual: f64,
    outcomes: Vec<f64>,
    // slots[r * n + i] = layout.slot(i, digits(r))
    slots: Vec<usize>,
}

impl<'a> PcProblem<'a> {
    pub fn new(
        model: &CausalModel,
        space: &ResponseSpace,
        system: &'a ConstraintSystem,
        objective: &ObjectiveVector,
    ) -> Result<Self> {
        Self::with_outcomes(model, space, system, objective, objective.outcomes.clone())
    }

    /// Same problem with a different numerator, e.g. an outcome-group indicator.
    pub fn with_outcomes(
        model: &CausalModel,
        space: &ResponseSpace,
        system: &'a ConstraintSystem,
        objective: &ObjectiveVector,
        outcomes: Vec<f64>,
    ) -> Result<Self> {
        let layout = FactorLayout::new(model, space)?;
        if outcomes.len() != system.num_cols() {
            return Err(Error::Shape("outcome vector does not match the response space".into()));
        }
        let n = layout.len();
        let mut slots = Vec::with_capacity(space.total() * n);
        let mut digits = vec![0; n];
        for r in space.indices() {
            space.digits_into(r, &mut digits);
            for i in 0..n {
                slots.push(layout.slot(i, &digits));
            }
        }
        Ok(Self {
            layout,
            system,
            factual_row: objective.factual_row,
            p_factual: objective.factual_probability,
            outcomes,
            slots,
        })
    }

    pub fn layout(&self) -> &FactorLayout {
        &self.layout
    }

    fn n(&self) -> usize {
        self.layout.len()
    }

    fn consistent(&self, r: usize) -> bool {
        self.system.row_of(r) == self.factual_row
    }

    pub fn q(&self, params: &FactorizedParams) -> Vec<f64> {
        let n = self.n();
        (0..self.system.num_cols())
            .map(|r| (0..n).map(|i| params.tables[i][self.slots[r * n + i]]).product())
            .collect()
    }

    /// Normalised objective, or `None` when x^F has no mass under `q`.
    pub fn ratio(&self, q: &[f64]) -> Option<f64> {
        let mut num = 0.0;
        let mut den = 0.0;
        for (r, &mass) in q.iter().enumerate() {
            if self.consistent(r) {
                num += self.outcomes[r] * mass;
                den += mass;
            }
        }
        (den > 0.0).then(|| num / den)
    }

    /// Linear objective `sum outcome_r q_r / p(x^F)`.
    fn linear_value(&self, q: &[f64]) -> f64 {
        q.iter()
            .enumerate()
            .filter(|(r, _)| self.consistent(*r))
            .map(|(r, &m)| self.outcomes[r] * m)
            .sum::<f64>()
            / self.p_factual
    }

    /// Coefficients of table `block` with all other tables held fixed: the
    /// numerator and denominator of the ratio and the rows of `A q`.
    fn block_terms(&self, params: &FactorizedParams, block: usize) -> BlockTerms {
        let n = self.n();
        let len = self.layout.table_len(block);
        let rows = self.system.num_rows();
        let mut terms = BlockTerms { num: vec![0.0; len], den: vec![0.0; len], rows: vec![vec![0.0; len]; rows] };
        for r in 0..self.system.num_cols() {
            let mut w = 1.0;
            for i in 0..n {
                if i != block {
                    w *= params.tables[i][self.slots[r * n + i]];
                }
            }
            if w == 0.0 {
                continue;
            }
            let e = self.slots[r * n + block];
            terms.rows[self.system.row_of(r)][e] += w;
            if self.consistent(r) {
                terms.num[e] += self.outcomes[r] * w;
                terms.den[e] += w;
            }
        }
        terms
    }
}

struct BlockTerms {
    num: Vec<f64>,
    den: Vec<f64>,
    rows: Vec<Vec<f64>>,
}

/// Equality rows shared by the block LPs: column sums of the table, then
/// `rows·s - e+ + e- = rhs` for every configuration. Variables are laid out as
/// `[s (len), e+ (m), e- (m), extra...]`.
fn block_rows(
    layout: &FactorLayout,
    block: usize,
    terms: &BlockTerms,
    extra: usize,
) -> (Vec<Vec<f64>>, usize) {
    let len = layout.table_len(block);
    let k = layout.rows(block);
    let m = terms.rows.len();
    let width = len + 2 * m + extra;
    let mut rows = Vec::with_capacity(layout.columns(block) + m);
    for col in 0..layout.columns(block) {
        let mut row = vec![0.0; width];
        for a in 0..k {
            row[col * k + a] = 1.0;
        }
        rows.push(row);
    }
    for (x, coef) in terms.rows.iter().enumerate() {
        let mut row = vec![0.0; width];
        row[..len].copy_from_slice(coef);
        row[len + x] = -1.0;
        row[len + m + x] = 1.0;
        rows.push(row);
    }
    (rows, width)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PcLocalOptions {
    pub restarts: usize,
    pub seed: u64,
    /// Initial L1 penalty weight on `A q - p`.
    pub penalty: f64,
    pub max_sweeps: usize,
    /// Stop sweeping once the penalised objective moves less than this.
    pub tolerance: f64,
    /// Largest L1 residual accepted for a run to count.
    pub feasibility: f64,
}

impl Default for PcLocalOptions {
    fn default() -> Self {
        Self { restarts: 32, seed: 0, penalty: 100.0, max_sweeps: 200, tolerance: 1e-7, feasibility: 1e-6 }
    }
}

// Escalation of the penalty once the first phase has converged.
const POLISH_PENALTY_FACTOR: f64 = 10.0;
const POLISH_PENALTY_MAX: f64 = 1e6;
const POLISH_MAX_SWEEPS: usize = 50;
const POLISH_TARGET: f64 = 1e-10;
const EM_MAX_ITERATIONS: usize = 5_000;
const EM_TARGET: f64 = 1e-10;
// Weight of the uniform table mixed into vertex starts so EM can move them.
const VERTEX_SMOOTHING: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Init {
    Uniform,
    Dirichlet,
    Vertex,
}

#[derive(Debug, Clone)]
struct RunOutcome {
    value: f64,
    residual: f64,
    restart: usize,
    q: Vec<f64>,
}

fn initial_params(layout: &FactorLayout, init: Init, rng: &mut ChaCha8Rng) -> FactorizedParams {
    let gamma = Gamma::<f64>::new(1.0, 1.0).expect("valid gamma");
    let tables = (0..layout.len())
        .map(|i| {
            let k = layout.rows(i);
            let mut t = vec![0.0; layout.table_len(i)];
            for col in t.chunks_mut(k) {
                match init {
                    Init::Uniform => col.fill(1.0 / k as f64),
                    Init::Vertex => {
                        col.fill(VERTEX_SMOOTHING / k as f64);
                        col[rng.random_range(0..k)] += 1.0 - VERTEX_SMOOTHING;
                    }
                    Init::Dirichlet => {
                        for v in col.iter_mut() {
                            *v = gamma.sample(rng).max(1e-300);
                        }
                        let s: f64 = col.iter().sum();
                        col.iter_mut().for_each(|v| *v /= s);
                    }
                }
            }
            t
        })
        .collect();
    FactorizedParams { tables }
}

impl PcProblem<'_> {
    fn merit(&self, params: &FactorizedParams, sign: f64, penalty: f64) -> (f64, f64) {
        let q = self.q(params);
        let residual = self.system.residual_l1(&q);
        (sign * self.linear_value(&q) + penalty * residual, residual)
    }

    /// One exact block update of the penalised problem. Keeps the old table if
    /// the LP fails.
    fn update_block(&self, params: &mut FactorizedParams, block: usize, sign: f64, penalty: f64) {
        let terms = self.block_terms(params, block);
        let len = self.layout.table_len(block);
        let m = terms.rows.len();
        let (rows, width) = block_rows(&self.layout, block, &terms, 0);
        let mut objective = vec![0.0; width];
        for (o, v) in objective.iter_mut().zip(&terms.num) {
            *o = sign * v / self.p_factual;
        }
        for o in &mut objective[len..] {
            *o = penalty;
        }
        let mut rhs = vec![1.0; self.layout.columns(block)];
        rhs.extend_from_slice(self.system.p());
        debug_assert_eq!(rhs.len(), self.layout.columns(block) + m);
        let Ok(lp) = LinearProgram::new(objective, rows, rhs, Sense::Min) else { return };
        let sol = DenseSimplex::default().solve(&lp);
        if !sol.is_optimal() {
            log::debug!("block {block} LP ended with {:?}", sol.status);
            return;
        }
        let k = self.layout.rows(block);
        let mut table = sol.point[..len].to_vec();
        for col in table.chunks_mut(k) {
            col.iter_mut().for_each(|v| *v = v.max(0.0));
            let s: f64 = col.iter().sum();
            if s > 0.0 {
                col.iter_mut().for_each(|v| *v /= s);
            } else {
                col.fill(1.0 / k as f64);
            }
        }
        params.tables[block] = table;
    }

    fn sweep_until_converged(
        &self,
        params: &mut FactorizedParams,
        sign: f64,
        penalty: f64,
        tolerance: f64,
        max_sweeps: usize,
    ) -> f64 {
        let (mut previous, mut residual) = self.merit(params, sign, penalty);
        for _ in 0..max_sweeps {
            for block in 0..self.n() {
                self.update_block(params, block, sign, penalty);
            }
            let (merit, res) = self.merit(params, sign, penalty);
            residual = res;
            if (previous - merit).abs() < tolerance {
                break;
            }
            previous = merit;
        }
        residual
    }

    /// Expectation-maximisation for the factorised model treating `R` as
    /// latent and `p` as the data distribution. Each step cannot increase the
    /// divergence from `p`, and a zero-residual fixed point exists whenever `p`
    /// is realisable, so this restores feasibility where the L1 block updates
    /// stall at kinks. Zero entries stay zero, so callers start from the interior.
    fn em_restore(&self, params: &mut FactorizedParams) {
        let n = self.n();
        let p = self.system.p();
        for _ in 0..EM_MAX_ITERATIONS {
            let q = self.q(params);
            let fitted = self.system.push_forward(&q);
            let residual: f64 = fitted.iter().zip(p).map(|(f, p)| (f - p).abs()).sum();
            if residual < EM_TARGET {
                break;
            }
            let mut counts: Vec<Vec<f64>> = params.tables.iter().map(|t| vec![0.0; t.len()]).collect();
            for (r, &mass) in q.iter().enumerate() {
                let x = self.system.row_of(r);
                if mass == 0.0 || fitted[x] <= 0.0 {
                    continue;
                }
                let w = p[x] * mass / fitted[x];
                for i in 0..n {
                    counts[i][self.slots[r * n + i]] += w;
                }
            }
            for (i, table) in params.tables.iter_mut().enumerate() {
                let k = self.layout.rows(i);
                for (col, new) in table.chunks_mut(k).zip(counts[i].chunks(k)) {
                    let s: f64 = new.iter().sum();
                    if s > 0.0 {
                        col.iter_mut().zip(new).for_each(|(v, c)| *v = c / s);
                    }
                }
            }
        }
    }

    fn local_run(&self, mut params: FactorizedParams, sign: f64, opts: &PcLocalOptions, restart: usize) -> RunOutcome {
        self.em_restore(&mut params);
        let mut penalty = opts.penalty;
        let mut residual = self.sweep_until_converged(&mut params, sign, penalty, opts.tolerance, opts.max_sweeps);
        while residual > POLISH_TARGET && penalty < POLISH_PENALTY_MAX {
            penalty *= POLISH_PENALTY_FACTOR;
            residual = self.sweep_until_converged(&mut params, sign, penalty, opts.tolerance, POLISH_MAX_SWEEPS);
        }
        let q = self.q(&params);
        let value = self.ratio(&q).unwrap_or(f64::NAN);
        RunOutcome { value, residual, restart, q }
    }
}

fn init_for(restart: usize) -> Init {
    match restart {
        0 => Init::Uniform,
        k if k % 2 == 1 => Init::Dirichlet,
        _ => Init::Vertex,
    }
}

/// Picks the best run: extreme value first, then smaller residual, then earlier restart.
fn best_run(runs: &[RunOutcome], minimise: bool) -> Option<&RunOutcome> {
    runs.iter().filter(|r| r.value.is_finite()).min_by(|a, b| {
        let (va, vb) = if minimise { (a.value, b.value) } else { (-a.value, -b.value) };
        va.total_cmp(&vb).then(a.residual.total_cmp(&b.residual)).then(a.restart.cmp(&b.restart))
    })
}

/// Multi-start block-coordinate descent. `lb` is the smallest minimum reached
/// by a feasible run and `ub` the largest maximum; both are local estimates.
pub fn pc_local_bounds(problem: &PcProblem<'_>, options: &PcLocalOptions) -> Result<BoundsResult> {
    if options.restarts == 0 {
        return Err(Error::Domain("at least one restart is required".into()));
    }
    let (mins, maxs): (Vec<RunOutcome>, Vec<RunOutcome>) = (0..options.restarts)
        .into_par_iter()
        .map(|k| {
            let seed = options.seed.wrapping_add((k as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let init = initial_params(&problem.layout, init_for(k), &mut rng);
            (problem.local_run(init.clone(), 1.0, options, k), problem.local_run(init, -1.0, options, k))
        })
        .unzip();
    let feasible = |runs: Vec<RunOutcome>| -> Vec<RunOutcome> {
        runs.into_iter().filter(|r| r.residual <= options.feasibility).collect()
    };
    let mins = feasible(mins);
    let maxs = feasible(maxs);
    let (Some(lo), Some(hi)) = (best_run(&mins, true), best_run(&maxs, false)) else {
        return Err(Error::Infeasible(
            "no run matched the observational distribution under the declared confounding".into(),
        ));
    };
    let mut result = BoundsResult::checked(lo.value, hi.value.max(lo.value), false, Method::PcLocal)?;
    result.witness_min = Some(lo.q.clone());
    result.witness_max = Some(hi.q.clone());
    Ok(result)
}

/// A box of conditional-table entries: `lo[i][e] <= s_i[e] <= hi[i][e]`.
#[derive(Debug, Clone, PartialEq)]
struct Cell {
    lo: Vec<Vec<f64>>,
    hi: Vec<Vec<f64>>,
}

/// `constant + sum coef * var` over LP variables.
#[derive(Debug, Clone, Default)]
struct Affine {
    terms: Vec<(usize, f64)>,
    constant: f64,
}

impl Affine {
    fn var(v: usize) -> Self {
        Self { terms: vec![(v, 1.0)], constant: 0.0 }
    }

    fn add_scaled(&mut self, other: &Affine, k: f64) {
        if k == 0.0 {
            return;
        }
        self.terms.extend(other.terms.iter().map(|&(v, c)| (v, c * k)));
        self.constant += other.constant * k;
    }
}

/// Rows of a relaxation before slack variables are appended.
#[derive(Default)]
struct RowSet {
    // (expression, rhs): expression == rhs
    eq: Vec<(Affine, f64)>,
    // expression <= rhs
    le: Vec<(Affine, f64)>,
}

impl Affine {
    fn eval(&self, x: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|&(v, c)| c * x[v]).sum::<f64>()
    }

    /// Terms with repeated variables combined and zeros dropped.
    fn merged(&self) -> Vec<(usize, f64)> {
        let mut terms = self.terms.clone();
        terms.sort_unstable_by_key(|t| t.0);
        let mut out: Vec<(usize, f64)> = Vec::with_capacity(terms.len());
        for (v, c) in terms {
            match out.last_mut() {
                Some(last) if last.0 == v => last.1 += c,
                _ => out.push((v, c)),
            }
        }
        out.retain(|t| t.1 != 0.0);
        out
    }
}

impl RowSet {
    /// Largest violation of any row at `x`.
    fn violation(&self, x: &[f64]) -> f64 {
        let eq = self.eq.iter().map(|(e, b)| (e.eval(x) - b).abs());
        let le = self.le.iter().map(|(e, b)| (e.eval(x) - b).max(0.0));
        eq.chain(le).fold(0.0, f64::max)
    }

    /// Optimum of `objective` with microlp on the rows as they are:
    /// inequalities stay inequalities and single-variable caps become bounds,
    /// which keeps the program far smaller than its standard form.
    fn solve_sparse(&self, num_vars: usize, objective: &Affine, sense: Sense) -> (LpStatus, f64, Vec<f64>) {
        use microlp::{ComparisonOp, OptimizationDirection, Problem, SolutionStatus, SolveOutcome};
        let mut upper = vec![f64::INFINITY; num_vars];
        type Row = (Vec<(usize, f64)>, ComparisonOp, f64);
        let mut rows: Vec<Row> = Vec::with_capacity(self.eq.len() + self.le.len());
        for (expr, b) in &self.eq {
            rows.push((expr.merged(), ComparisonOp::Eq, b - expr.constant));
        }
        for (expr, b) in &self.le {
            let terms = expr.merged();
            match terms[..] {
                [(v, c)] if c > 0.0 => upper[v] = upper[v].min((b - expr.constant) / c),
                _ => rows.push((terms, ComparisonOp::Le, b - expr.constant)),
            }
        }
        if upper.iter().any(|&u| u < 0.0) {
            return (LpStatus::Infeasible, f64::NAN, Vec::new());
        }
        let mut cost = vec![0.0; num_vars];
        for (v, c) in objective.merged() {
            cost[v] = c;
        }
        let direction = match sense {
            Sense::Min => OptimizationDirection::Minimize,
            Sense::Max => OptimizationDirection::Maximize,
        };
        let mut problem = Problem::new(direction);
        let vars: Vec<_> = cost.iter().zip(&upper).map(|(&c, &u)| problem.add_var(c, (0.0, u))).collect();
        for (terms, op, b) in rows {
            let terms: Vec<_> = terms.into_iter().map(|(v, c)| (vars[v], c)).collect();
            problem.add_constraint(&terms[..], op, b);
        }
        match problem.solve() {
            Ok(SolveOutcome::Solution(sol)) if sol.status() == SolutionStatus::Optimal => {
                let point: Vec<f64> = vars.iter().map(|&v| sol.var_value_raw(v).max(0.0)).collect();
                (LpStatus::Optimal, sol.objective() + objective.constant, point)
            }
            Err(microlp::Error::Infeasible) => (LpStatus::Infeasible, f64::NAN, Vec::new()),
            Err(microlp::Error::Unbounded) => (LpStatus::Unbounded, f64::NAN, Vec::new()),
            other => {
                log::debug!("microlp stopped without an optimum: {other:?}");
                (LpStatus::IterationLimit, f64::NAN, Vec::new())
            }
        }
    }

    fn to_program(&self, num_vars: usize, objective: &Affine, sense: Sense) -> Result<(LinearProgram, f64)> {
        let width = num_vars + self.le.len();
        let mut rows = Vec::with_capacity(self.eq.len() + self.le.len());
        let mut rhs = Vec::with_capacity(rows.capacity());
        let dense = |expr: &Affine, b: f64| {
            let mut row = vec![0.0; width];
            for &(v, c) in &expr.terms {
                row[v] += c;
            }
            (row, b - expr.constant)
        };
        for (expr, b) in &self.eq {
            let (row, b) = dense(expr, *b);
            rows.push(row);
            rhs.push(b);
        }
        for (k, (expr, b)) in self.le.iter().enumerate() {
            let (mut row, b) = dense(expr, *b);
            row[num_vars + k] = 1.0;
            rows.push(row);
            rhs.push(b);
        }
        let mut c = vec![0.0; width];
        for &(v, coef) in &objective.terms {
            c[v] += coef;
        }
        Ok((LinearProgram::new(c, rows, rhs, sense)?, objective.constant))
    }
}

/// Outer approximation of the factorised feasible set over a cell.
///
/// With `Q_t` the joint of the first `t + 1` response variables, the
/// factorisation is the chain `Q_t = Q_{t-1} * s_t` (response parents precede),
/// `sum_{r_t} Q_t = Q_{t-1}`, and `q = Q_{n-1}`. Each bilinear link is replaced by
/// its McCormick envelope over the cell bounds, which is exact once either
/// factor is pinned, so the relaxation tightens as the cell shrinks.
struct Relaxation<'p, 'a> {
    problem: &'p PcProblem<'a>,
    // prefix[t] = |R_0| * ... * |R_t|
    prefix: Vec<usize>,
    // first LP variable of each block's table, then of each Q_t (t >= 1)
    s_offset: Vec<usize>,
    q_offset: Vec<usize>,
    num_vars: usize,
}

impl<'p, 'a> Relaxation<'p, 'a> {
    fn new(problem: &'p PcProblem<'a>) -> Self {
        let layout = &problem.layout;
        let n = layout.len();
        let mut prefix = Vec::with_capacity(n);
        let mut acc = 1;
        for i in 0..n {
            acc *= layout.rows(i);
            prefix.push(acc);
        }
        let mut next = 0;
        let s_offset = (0..n)
            .map(|i| {
                let o = next;
                next += layout.table_len(i);
                o
            })
            .collect();
        let mut q_offset = vec![usize::MAX];
        for &size in &prefix[1..] {
            q_offset.push(next);
            next += size;
        }
        Self { problem, prefix, s_offset, q_offset, num_vars: next }
    }

    /// `s_i[e] = lo + sigma` with `sigma >= 0` the LP variable.
    fn s(&self, cell: &Cell, i: usize, e: usize) -> Affine {
        Affine { terms: vec![(self.s_offset[i] + e, 1.0)], constant: cell.lo[i][e] }
    }

    fn q(&self, cell: &Cell, t: usize, code: usize) -> Affine {
        if t == 0 {
            self.s(cell, 0, code)
        } else {
            Affine::var(self.q_offset[t] + code)
        }
    }

    /// Digits of the first `t + 1` response variables from a prefix code.
    fn prefix_digits(&self, t: usize, code: usize, digits: &mut [usize]) {
        let mut rest = code;
        for (i, d) in digits.iter_mut().enumerate() {
            if i <= t {
                *d = rest % self.problem.layout.rows(i);
                rest /= self.problem.layout.rows(i);
            } else {
                *d = 0;
            }
        }
    }

    fn rows(&self, cell: &Cell) -> RowSet {
        let problem = self.problem;
        let layout = &problem.layout;
        let n = layout.len();
        let mut rows = RowSet::default();

        for i in 0..n {
            let k = layout.rows(i);
            for col in 0..layout.columns(i) {
                let mut expr = Affine::default();
                let mut lo_sum = 0.0;
                for a in 0..k {
                    expr.add_scaled(&self.s(cell, i, col * k + a), 1.0);
                    lo_sum += cell.lo[i][col * k + a];
                }
                rows.eq.push((expr, 1.0));
                for a in 0..k {
                    let e = col * k + a;
                    let (lo, hi) = (cell.lo[i][e], cell.hi[i][e]);
                    // the column sum already caps this entry at 1 - (sum of the other lower bounds)
                    if hi < 1.0 - (lo_sum - lo) - 1e-15 {
                        rows.le.push((Affine::var(self.s_offset[i] + e), hi - lo));
                    }
                }
            }
        }

        let mut digits = vec![0; n];
        // bounds on Q_{t-1}, starting with Q_0 = s_0
        let mut prev_lo = cell.lo[0].clone();
        let mut prev_hi = cell.hi[0].clone();
        for t in 1..n {
            let mut cur_lo = vec![0.0; self.prefix[t]];
            let mut cur_hi = vec![0.0; self.prefix[t]];
            for code in 0..self.prefix[t] {
                self.prefix_digits(t, code, &mut digits);
                let parent = code % self.prefix[t - 1];
                let e = layout.slot(t, &digits);
                let (al, au) = (prev_lo[parent], prev_hi[parent]);
                let (bl, bu) = (cell.lo[t][e], cell.hi[t][e]);
                cur_lo[code] = al * bl;
                cur_hi[code] = au * bu;
                let q = self.q(cell, t, code);
                let qp = self.q(cell, t - 1, parent);
                let s = self.s(cell, t, e);
                let mut link = |ks: f64, kq: f64, kqq: f64, b: f64| {
                    let mut expr = Affine::default();
                    expr.add_scaled(&s, ks);
                    expr.add_scaled(&qp, kq);
                    expr.add_scaled(&q, kqq);
                    rows.le.push((expr, b));
                };
                if al > 0.0 || bl > 0.0 {
                    link(al, bl, -1.0, al * bl);
                }
                link(au, bu, -1.0, au * bu);
                link(-au, -bl, 1.0, -au * bl);
                link(-al, -bu, 1.0, -al * bu);
            }
            for parent in 0..self.prefix[t - 1] {
                let mut expr = Affine::default();
                expr.add_scaled(&self.q(cell, t - 1, parent), -1.0);
                for a in 0..layout.rows(t) {
                    expr.add_scaled(&self.q(cell, t, parent + a * self.prefix[t - 1]), 1.0);
                }
                rows.eq.push((expr, 0.0));
            }
            prev_lo = cur_lo;
            prev_hi = cur_hi;
        }

        let system = problem.system;
        let mut by_row: Vec<Affine> = vec![Affine::default(); system.num_rows()];
        for r in 0..system.num_cols() {
            by_row[system.row_of(r)].add_scaled(&self.q(cell, n - 1, r), 1.0);
        }
        for (expr, &px) in by_row.into_iter().zip(system.p()) {
            rows.eq.push((expr, px));
        }
        rows
    }

    fn objective(&self, cell: &Cell) -> Affine {
        let problem = self.problem;
        let mut obj = Affine::default();
        for r in problem.system.columns_of(problem.factual_row) {
            obj.add_scaled(&self.q(cell, problem.layout.len() - 1, r), problem.outcomes[r] / problem.p_factual);
        }
        obj
    }

    /// Optimum of `objective(cell)` over the relaxation, `None` if empty.
    ///
    /// Thin cells are badly conditioned, so an answer counts only when its
    /// point satisfies the rows to [`CELL_RESIDUAL`]; the dense simplex is
    /// consulted when the first solver's answer does not verify, and both must
    /// agree before a cell is declared empty. Failing that, the cell is
    /// widened slightly and solved again, which still gives a valid bound.
    fn solve(&self, cell: &Cell, objective: impl Fn(&Cell) -> Affine, sense: Sense) -> Result<Option<f64>> {
        let mut fallback: Option<f64> = None;
        for pad in std::iter::once(0.0).chain(WIDEN_PADS) {
            let widened;
            let cell = if pad == 0.0 {
                cell
            } else {
                widened = cell.widened(pad);
                &widened
            };
            let rows = self.rows(cell);
            let objective = objective(cell);
            let mut infeasible = 0;
            let mut consider = |value: f64| {
                // keep the most conservative unverified answer
                fallback = Some(match (fallback, sense) {
                    (None, _) => value,
                    (Some(f), Sense::Min) => f.min(value),
                    (Some(f), Sense::Max) => f.max(value),
                });
            };
            match rows.solve_sparse(self.num_vars, &objective, sense) {
                (LpStatus::Optimal, value, point) => {
                    if rows.violation(&point) <= CELL_RESIDUAL {
                        return Ok(Some(value));
                    }
                    consider(value);
                }
                (LpStatus::Infeasible, ..) => infeasible += 1,
                _ => {}
            }
            let (lp, constant) = rows.to_program(self.num_vars, &objective, sense)?;
            let sol = fallback_simplex().solve(&lp);
            match sol.status {
                LpStatus::Optimal => {
                    let value = sol.value + constant;
                    if lp.residual(&sol.point) <= CELL_RESIDUAL {
                        return Ok(Some(value));
                    }
                    consider(value);
                }
                LpStatus::Infeasible => infeasible += 1,
                _ => {}
            }
            if infeasible == 2 {
                return Ok(None);
            }
        }
        match fallback {
            Some(value) => {
                log::warn!("cell relaxation solved only to a loose residual; using {value}");
                Ok(Some(value))
            }
            None => Err(Error::Internal("cell relaxation could not be solved".into())),
        }
    }

    /// Shrinks the bounds of every partitioned entry to its range over the
    /// relaxation, padded by [`TIGHTEN_PAD`]. Entries pinned by `p` (for
    /// example the table of an unconfounded root) collapse to a point, which
    /// makes the envelopes involving them exact. `None` if the cell is empty.
    fn tighten(&self, mut cell: Cell, free_block: usize) -> Result<Option<Cell>> {
        for _ in 0..TIGHTEN_ROUNDS {
            for i in (0..self.problem.layout.len()).filter(|&i| i != free_block) {
                for e in 0..cell.lo[i].len() {
                    let entry = |c: &Cell| self.s(c, i, e);
                    let Some(min) = self.solve(&cell, entry, Sense::Min)? else { return Ok(None) };
                    let Some(max) = self.solve(&cell, entry, Sense::Max)? else { return Ok(None) };
                    cell.lo[i][e] = cell.lo[i][e].max(min - TIGHTEN_PAD);
                    cell.hi[i][e] = cell.hi[i][e].min(max + TIGHTEN_PAD).max(cell.lo[i][e]);
                }
            }
        }
        Ok(Some(cell))
    }

    /// Tightened cell and `(min, max)` of the objective over its relaxation,
    /// `None` if the cell holds no point consistent with `p`.
    fn bound(&self, cell: Cell, free_block: usize) -> Result<Option<(Cell, f64, f64)>> {
        if let Some(tight) = self.tighten(cell.clone(), free_block)? {
            if let Some(found) = self.extremes(tight)? {
                return Ok(Some(found));
            }
        }
        // Very thin boxes can be misreported as empty; only the untightened
        // cell is trusted to prune.
        self.extremes(cell)
    }

    fn extremes(&self, cell: Cell) -> Result<Option<(Cell, f64, f64)>> {
        let objective = |c: &Cell| self.objective(c);
        let Some(min) = self.solve(&cell, objective, Sense::Min)? else { return Ok(None) };
        let Some(max) = self.solve(&cell, objective, Sense::Max)? else { return Ok(None) };
        Ok(Some((cell, min, max)))
    }
}

/// The dense tableau as a second opinion, capped because it can stall on
/// degenerate cells.
fn fallback_simplex() -> DenseSimplex {
    DenseSimplex::new(SimplexOptions { max_pivots: FALLBACK_MAX_PIVOTS, ..Default::default() })
}

/// Certification settings and the free table left unpartitioned.
struct GridPlan {
    free_block: usize,
    resolution: f64,
}

impl PcProblem<'_> {
    fn grid_plan(&self, resolution: f64) -> Result<GridPlan> {
        if !(resolution > 0.0 && resolution <= 1.0) {
            return Err(Error::Domain(format!("grid resolution {resolution} must lie in (0, 1]")));
        }
        let free = self.layout.free_parameters();
        if free > GRID_MAX_FREE_PARAMETERS {
            return Err(Error::Guard(format!(
                "{free} free parameters exceed the grid limit of {GRID_MAX_FREE_PARAMETERS}"
            )));
        }
        let free_block = (0..self.n())
            .max_by_key(|&i| (self.layout.block_free_parameters(i), i))
            .expect("non-empty layout");
        Ok(GridPlan { free_block, resolution })
    }
}

impl Cell {
    fn root(layout: &FactorLayout) -> Self {
        Self {
            lo: (0..layout.len()).map(|i| vec![0.0; layout.table_len(i)]).collect(),
            hi: (0..layout.len()).map(|i| vec![1.0; layout.table_len(i)]).collect(),
        }
    }

    /// Widest entry outside the free table: `(block, entry, width)`.
    fn widest(&self, free_block: usize) -> Option<(usize, usize, f64)> {
        let mut best: Option<(usize, usize, f64)> = None;
        for (i, (lo, hi)) in self.lo.iter().zip(&self.hi).enumerate() {
            if i == free_block {
                continue;
            }
            for (e, (l, h)) in lo.iter().zip(hi).enumerate() {
                if best.is_none_or(|b| h - l > b.2) {
                    best = Some((i, e, h - l));
                }
            }
        }
        best
    }

    fn widened(&self, pad: f64) -> Cell {
        let grow = |v: &Vec<Vec<f64>>, d: f64| -> Vec<Vec<f64>> {
            v.iter().map(|t| t.iter().map(|x| (x + d).clamp(0.0, 1.0)).collect()).collect()
        };
        Cell { lo: grow(&self.lo, -pad), hi: grow(&self.hi, pad) }
    }

    fn split(self, block: usize, entry: usize) -> (Cell, Cell) {
        let mid = 0.5 * (self.lo[block][entry] + self.hi[block][entry]);
        let mut left = self.clone();
        let mut right = self;
        left.hi[block][entry] = mid;
        right.lo[block][entry] = mid;
        (left, right)
    }
}

/// Certified envelope at the given resolution.
///
/// Every conditional table except the one with the most free parameters is
/// partitioned by bisection into cells no wider than `resolution` per entry;
/// the remaining table ranges over its whole simplex. On each cell the
/// objective is bounded by an LP over a McCormick relaxation of the
/// factorisation, and cells whose relaxation is inconsistent with `p` are
/// discarded. The reported `[lb, ub]` is therefore an outer bound on the
/// objective over the factorised feasible set.
pub fn pc_grid_certify(problem: &PcProblem<'_>, resolution: f64) -> Result<BoundsResult> {
    pc_grid_certify_with(problem, resolution, None)
}

/// As [`pc_grid_certify`], with objective values of known feasible points.
/// Cells that cannot beat them by more than half the resolution are not
/// refined; cells that can are refined below the resolution, down to
/// [`REFINE_FLOOR`] of it, so the envelope closes on the incumbents.
pub fn pc_grid_certify_with(
    problem: &PcProblem<'_>,
    resolution: f64,
    incumbent: Option<(f64, f64)>,
) -> Result<BoundsResult> {
    let plan = problem.grid_plan(resolution)?;
    let relaxation = Relaxation::new(problem);
    let slack = 0.5 * plan.resolution;
    let mut frontier = vec![Cell::root(&problem.layout)];
    let mut lb = f64::INFINITY;
    let mut ub = f64::NEG_INFINITY;
    let mut visited = 0usize;
    while !frontier.is_empty() {
        visited += frontier.len();
        if visited > GRID_MAX_CELLS {
            return Err(Error::Guard(format!(
                "certification exceeded {GRID_MAX_CELLS} cells at resolution {resolution}"
            )));
        }
        let bounds: Vec<Result<Option<(Cell, f64, f64)>>> =
            frontier.into_par_iter().map(|cell| relaxation.bound(cell, plan.free_block)).collect();
        let mut next = Vec::new();
        for bound in bounds {
            let Some((cell, lo, hi)) = bound? else { continue };
            let open_low = incumbent.is_none_or(|(min, _)| lo < min - slack);
            let open_high = incumbent.is_none_or(|(_, max)| hi > max + slack);
            match cell.widest(plan.free_block) {
                // Cells that could still beat an incumbent by more than the
                // slack keep splitting below the resolution, down to a floor.
                Some((block, entry, width))
                    if (open_low || open_high)
                        && (width > plan.resolution
                            || (incumbent.is_some() && width > plan.resolution * REFINE_FLOOR)) =>
                {
                    let (left, right) = cell.split(block, entry);
                    next.push(left);
                    next.push(right);
                }
                _ => {
                    lb = lb.min(lo);
                    ub = ub.max(hi);
                }
            }
        }
        frontier = next;
    }
    if lb == f64::INFINITY {
        return Err(Error::Infeasible(
            "no distribution factorising as declared reproduces the observational distribution".into(),
        ));
    }
    log::debug!("certified [{lb}, {ub}] after {visited} cells");
    BoundsResult::checked(lb, ub, true, Method::PcGrid)
}

/// Local search first, then certification seeded with what it found. A local
/// failure only means there is no seed; infeasibility is for the certifier
/// to establish.
pub fn pc_certify_seeded(problem: &PcProblem<'_>, resolution: f64, options: &PcLocalOptions) -> Result<BoundsResult> {
    let incumbent = match pc_local_bounds(problem, options) {
        Ok(local) => Some((local.lb, local.ub)),
        Err(e) => {
            log::debug!("no incumbent for certification: {e}");
            None
        }
    };
    pc_grid_certify_with(problem, resolution, incumbent)
}

/// Whether the certifier accepts this problem.
pub fn grid_applicable(problem: &PcProblem<'_>, resolution: f64) -> bool {
    problem.grid_plan(resolution).is_ok()
}


/// Worst/best attainable outcome under the factorisation. An outcome is
/// attainable when the solver finds a consistent distribution giving its
/// responses more than [`ATTAINABLE_MASS`] of the factual's mass.
pub fn pc_worst_case(
    model: &CausalModel,
    space: &ResponseSpace,
    system: &ConstraintSystem,
    objective: &ObjectiveVector,
    grid: Option<f64>,
    options: &PcLocalOptions,
) -> Result<BoundsResult> {
    let mut attainable: Vec<f64> = Vec::new();
    let mut method = Method::PcLocal;
    for (value, members) in outcome_groups(objective, system) {
        let mut indicator = vec![0.0; system.num_cols()];
        for r in members {
            indicator[r] = 1.0;
        }
        let problem = PcProblem::with_outcomes(model, space, system, objective, indicator)?;
        let share = match grid {
            Some(res) if grid_applicable(&problem, res) => {
                method = Method::PcGrid;
                pc_certify_seeded(&problem, res, options)?.ub
            }
            _ => pc_local_bounds(&problem, options)?.ub,
        };
        if share > ATTAINABLE_MASS {
            attainable.push(value);
        }
    }
    if attainable.is_empty() {
        return Err(Error::Infeasible("no counterfactual outcome is attainable".into()));
    }
    let lb = attainable.iter().copied().fold(f64::INFINITY, f64::min);
    let ub = attainable.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    BoundsResult::checked(lb, ub, method == Method::PcGrid, method)
}

/// Random conditional tables for the layout; used by tests and the oracle.
pub fn random_params(layout: &FactorLayout, rng: &mut impl Rng) -> FactorizedParams {
    let gamma = Gamma::<f64>::new(1.0, 1.0).expect("valid gamma");
    let tables = (0..layout.len())
        .map(|i| {
            let k = layout.rows(i);
            let mut t: Vec<f64> = (0..layout.table_len(i)).map(|_| gamma.sample(rng).max(1e-300)).collect();
            for col in t.chunks_mut(k) {
                let s: f64 = col.iter().sum();
                col.iter_mut().for_each(|v| *v /= s);
            }
            t
        })
        .collect();
    FactorizedParams { tables }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fc::{build_constraints, build_objective, compute_bounds_fc};
    use crate::model::{Action, Classifier, ConfoundingSpec, FactualInstance, ObservationalTable, Variable};

    fn two_node(conf: ConfoundingSpec) -> CausalModel {
        CausalModel::new(vec![Variable::new("X1", 2), Variable::new("X2", 2)], &[(0, 1)], conf).unwrap()
    }

    fn running_p() -> ObservationalTable {
        ObservationalTable::new(vec![0.25, 0.1, 0.25, 0.4]).unwrap()
    }

    struct Fixture {
        model: CausalModel,
        space: ResponseSpace,
        system: ConstraintSystem,
        objective: ObjectiveVector,
    }

    fn fixture(conf: ConfoundingSpec, h: Option<f64>) -> Fixture {
        let model = two_node(conf);
        let space = ResponseSpace::new(&model).unwrap();
        let system = build_constraints(&space, &running_p()).unwrap();
        let h = match h {
            Some(v) => Classifier::constant(&model, v).unwrap(),
            None => Classifier::indicator(&model, 1).unwrap(),
        };
        let xf = FactualInstance::new(&model, vec![0, 0]).unwrap();
        let act = Action::new(&model, &[(0, 1)]).unwrap();
        let objective = build_objective(&model, &space, &system, &h, &xf, &act).unwrap();
        Fixture { model, space, system, objective }
    }

    #[test]
    fn assemble_uniform_and_degenerate() {
        let f = fixture(ConfoundingSpec::none(), None);
        let layout = FactorLayout::new(&f.model, &f.space).unwrap();
        let params = FactorizedParams { tables: vec![vec![0.5, 0.5], vec![0.25; 4]] };
        let q = assemble_q(&layout, &f.space, &params).unwrap();
        assert!(q.iter().all(|&v| (v - 0.125).abs() < 1e-15));

        let onehot = FactorizedParams { tables: vec![vec![0.0, 1.0], vec![0.0, 0.0, 1.0, 0.0]] };
        let q = assemble_q(&layout, &f.space, &onehot).unwrap();
        let hot: Vec<usize> = q.iter().enumerate().filter(|(_, &v)| v == 1.0).map(|(r, _)| r).collect();
        assert_eq!(hot.len(), 1);
        assert_eq!(f.space.digits(hot[0]), vec![1, 2]);
        assert_eq!(q.iter().sum::<f64>(), 1.0);

        let bad = FactorizedParams { tables: vec![vec![0.5, 0.5]] };
        assert!(matches!(assemble_q(&layout, &f.space, &bad), Err(Error::Shape(_))));
    }

    #[test]
    fn chain_rule_passes_joint_through() {
        let f = fixture(ConfoundingSpec::all_predecessors(2), None);
        let layout = FactorLayout::new(&f.model, &f.space).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let raw: Vec<f64> = (0..8).map(|_| rng.random::<f64>()).collect();
        let s: f64 = raw.iter().sum();
        let q: Vec<f64> = raw.iter().map(|v| v / s).collect();
        let params = FactorizedParams::from_joint(&layout, &f.space, &q).unwrap();
        let back = assemble_q(&layout, &f.space, &params).unwrap();
        for (a, b) in q.iter().zip(&back) {
            assert!((a - b).abs() < 1e-15);
        }
        // single variable: the table is the joint
        let single = CausalModel::new(vec![Variable::new("A", 3)], &[], ConfoundingSpec::full()).unwrap();
        let sp = ResponseSpace::new(&single).unwrap();
        let lay = FactorLayout::new(&single, &sp).unwrap();
        let joint = vec![0.2, 0.3, 0.5];
        let params = FactorizedParams::from_joint(&lay, &sp, &joint).unwrap();
        assert_eq!(assemble_q(&lay, &sp, &params).unwrap(), joint);
    }

    #[test]
    fn factorised_q_is_on_the_simplex() {
        let m = CausalModel::new(
            (0..3).map(|i| Variable::new(format!("X{i}"), 2)).collect(),
            &[(0, 1), (1, 2)],
            ConfoundingSpec::partial(vec![vec![], vec![0], vec![1]]),
        )
        .unwrap();
        let space = ResponseSpace::new(&m).unwrap();
        let layout = FactorLayout::new(&m, &space).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let q = assemble_q(&layout, &space, &random_params(&layout, &mut rng)).unwrap();
            assert!((q.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(q.iter().all(|&v| v >= 0.0));
        }
        assert_eq!(layout.free_parameters(), 1 + 2 * 3 + 4 * 3);
    }

    #[test]
    fn unconfounded_running_example_grid() {
        let f = fixture(ConfoundingSpec::none(), None);
        let problem = PcProblem::new(&f.model, &f.space, &f.system, &f.objective).unwrap();
        let b = pc_grid_certify(&problem, 0.05).unwrap();
        assert!((b.lb - 0.6).abs() <= 0.05 && (b.ub - 1.0).abs() <= 0.05, "{b:?}");
        assert!(b.certified);
        assert_eq!(b.method, Method::PcGrid);
    }

    #[test]
    fn unconfounded_running_example_local() {
        let f = fixture(ConfoundingSpec::none(), None);
        let problem = PcProblem::new(&f.model, &f.space, &f.system, &f.objective).unwrap();
        let b = pc_local_bounds(&problem, &PcLocalOptions::default()).unwrap();
        assert!((b.lb - 0.6).abs() < 1e-6 && (b.ub - 1.0).abs() < 1e-6, "{b:?}");
        assert!(!b.certified);
        assert_eq!(b.method, Method::PcLocal);
    }

    #[test]
    fn all_predecessors_recovers_full_confounding() {
        let f = fixture(ConfoundingSpec::all_predecessors(2), None);
        let problem = PcProblem::new(&f.model, &f.space, &f.system, &f.objective).unwrap();
        let local = pc_local_bounds(&problem, &PcLocalOptions::default()).unwrap();
        let fc = compute_bounds_fc(&f.system, &f.objective, &DenseSimplex::default()).unwrap();
        assert!((local.lb - fc.lb).abs() < 1e-6 && (local.ub - fc.ub).abs() < 1e-6, "{local:?}");
    }

    #[test]
    fn constant_classifier_is_constant() {
        let f = fixture(ConfoundingSpec::none(), Some(0.7));
        let problem = PcProblem::new(&f.model, &f.space, &f.system, &f.objective).unwrap();
        let g = pc_grid_certify(&problem, 0.05).unwrap();
        assert!((g.lb - 0.7).abs() < 1e-9 && (g.ub - 0.7).abs() < 1e-9);
        let l = pc_local_bounds(&problem, &PcLocalOptions { restarts: 4, ..Default::default() }).unwrap();
        assert!((l.lb - 0.7).abs() < 1e-9 && (l.ub - 0.7).abs() < 1e-9);
        let w = pc_worst_case(&f.model, &f.space, &f.system, &f.objective, Some(0.05), &PcLocalOptions::default())
            .unwrap();
        assert_eq!((w.lb, w.ub), (0.7, 0.7));
    }

    #[test]
    fn contradictory_distribution_has_no_grid_point() {
        let m = CausalModel::new(
            vec![Variable::new("A", 2), Variable::new("B", 2), Variable::new("C", 2)],
            &[(0, 2)],
            ConfoundingSpec::none(),
        )
        .unwrap();
        let sp = ResponseSpace::new(&m).unwrap();
        // A and B perfectly correlated roots: impossible when R_A and R_B are independent.
        let mut p = vec![0.0; 8];
        p[m.index(&[0, 0, 0]).unwrap()] = 0.5;
        p[m.index(&[1, 1, 0]).unwrap()] = 0.5;
        let system = build_constraints(&sp, &ObservationalTable::new(p).unwrap()).unwrap();
        let h = Classifier::indicator(&m, 2).unwrap();
        let xf = FactualInstance::new(&m, vec![0, 0, 0]).unwrap();
        let act = Action::new(&m, &[(0, 1)]).unwrap();
        let obj = build_objective(&m, &sp, &system, &h, &xf, &act).unwrap();
        let problem = PcProblem::new(&m, &sp, &system, &obj).unwrap();
        assert!(matches!(pc_grid_certify(&problem, 0.05), Err(Error::Infeasible(_))));
        let local = pc_local_bounds(&problem, &PcLocalOptions { restarts: 4, ..Default::default() });
        assert!(matches!(local, Err(Error::Infeasible(_))));
    }

    #[test]
    fn grid_guards() {
        let m = CausalModel::new(
            (0..3).map(|i| Variable::new(format!("X{i}"), 2)).collect(),
            &[(0, 1), (0, 2), (1, 2)],
            ConfoundingSpec::none(),
        )
        .unwrap();
        let space = ResponseSpace::new(&m).unwrap();
        let system = build_constraints(&space, &ObservationalTable::new(vec![0.125; 8]).unwrap()).unwrap();
        let h = Classifier::indicator(&m, 2).unwrap();
        let obj = build_objective(
            &m,
            &space,
            &system,
            &h,
            &FactualInstance::new(&m, vec![0, 0, 0]).unwrap(),
            &Action::new(&m, &[(1, 1)]).unwrap(),
        )
        .unwrap();
        let problem = PcProblem::new(&m, &space, &system, &obj).unwrap();
        // 1 + 3 + 15 free parameters
        assert!(matches!(pc_grid_certify(&problem, 0.05), Err(Error::Guard(_))));
        let f = fixture(ConfoundingSpec::none(), None);
        let ok = PcProblem::new(&f.model, &f.space, &f.system, &f.objective).unwrap();
        assert!(matches!(pc_grid_certify(&ok, 0.0), Err(Error::Domain(_))));
    }
}
