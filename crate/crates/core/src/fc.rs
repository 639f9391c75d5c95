//! Bounds on the expected counterfactual classifier output when the response
//! distribution is left completely unrestricted (full confounding).
//!
//! Every joint response index produces exactly one configuration under no
//! intervention, so the consistency matrix A has a single 1 per column and is
//! stored as the row index of that 1.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lp::{LinearProgram, LpBackend, LpSolution, LpStatus, Sense};
use crate::model::{decode_index, descendants, Action, CausalModel, Classifier, FactualInstance, ObservationalTable};
use crate::response::ResponseSpace;

/// Default cap on |X|·|R| before a dense system is refused.
pub const DEFAULT_ENTRY_BUDGET: usize = 100_000_000;

/// Round-off allowed outside [0, 1] before a bound is treated as a solver fault.
pub const CLAMP_TOLERANCE: f64 = 1e-7;

/// Mass below which a response index counts as unattainable in the worst-case bound.
pub const ATTAINABLE_MASS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "FC_LP")]
    FcLp,
    #[serde(rename = "PC_LOCAL")]
    PcLocal,
    #[serde(rename = "PC_GRID")]
    PcGrid,
    #[serde(rename = "POINT")]
    Point,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::FcLp => "FC_LP",
            Method::PcLocal => "PC_LOCAL",
            Method::PcGrid => "PC_GRID",
            Method::Point => "POINT",
        }
    }

    /// Methods whose endpoints carry a global guarantee.
    pub fn is_certifying(self) -> bool {
        !matches!(self, Method::PcLocal)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundsResult {
    pub lb: f64,
    pub ub: f64,
    pub certified: bool,
    pub method: Method,
    pub witness_min: Option<Vec<f64>>,
    pub witness_max: Option<Vec<f64>>,
}

impl BoundsResult {
    pub fn point(value: f64) -> Self {
        Self { lb: value, ub: value, certified: true, method: Method::Point, witness_min: None, witness_max: None }
    }

    /// Builds a result, clamping round-off into [0, 1].
    pub fn checked(lb: f64, ub: f64, certified: bool, method: Method) -> Result<Self> {
        let lb = clamp_unit(lb)?;
        let ub = clamp_unit(ub)?;
        if lb > ub + CLAMP_TOLERANCE {
            return Err(Error::Internal(format!("lower bound {lb} exceeds upper bound {ub}")));
        }
        Ok(Self { lb: lb.min(ub), ub, certified, method, witness_min: None, witness_max: None })
    }
}

fn clamp_unit(v: f64) -> Result<f64> {
    if !v.is_finite() || !(-CLAMP_TOLERANCE..=1.0 + CLAMP_TOLERANCE).contains(&v) {
        return Err(Error::Internal(format!("bound {v} lies outside [0, 1]")));
    }
    Ok(v.clamp(0.0, 1.0))
}

/// Consistency constraints `A q = p` between response and observational distributions.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSystem {
    rows: usize,
    row_of: Vec<usize>,
    p: Vec<f64>,
}

impl ConstraintSystem {
    pub fn num_rows(&self) -> usize {
        self.rows
    }

    pub fn num_cols(&self) -> usize {
        self.row_of.len()
    }

    /// Configuration produced by each response index.
    pub fn row_of(&self, r: usize) -> usize {
        self.row_of[r]
    }

    pub fn rows_by_column(&self) -> &[usize] {
        &self.row_of
    }

    pub fn entry(&self, x: usize, r: usize) -> bool {
        self.row_of[r] == x
    }

    pub fn p(&self) -> &[f64] {
        &self.p
    }

    /// Response indices consistent with configuration `x`.
    pub fn columns_of(&self, x: usize) -> impl Iterator<Item = usize> + '_ {
        self.row_of.iter().enumerate().filter(move |(_, &row)| row == x).map(|(r, _)| r)
    }

    pub fn row_sums(&self) -> Vec<usize> {
        let mut sums = vec![0; self.rows];
        for &x in &self.row_of {
            sums[x] += 1;
        }
        sums
    }

    /// A as dense rows.
    pub fn dense_rows(&self) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; self.num_cols()]; self.rows];
        for (r, &x) in self.row_of.iter().enumerate() {
            out[x][r] = 1.0;
        }
        out
    }

    /// `A q` for a response distribution `q`.
    pub fn push_forward(&self, q: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.rows];
        for (&x, &mass) in self.row_of.iter().zip(q) {
            out[x] += mass;
        }
        out
    }

    /// L1 norm of `A q - p`.
    pub fn residual_l1(&self, q: &[f64]) -> f64 {
        self.push_forward(q).iter().zip(&self.p).map(|(a, b)| (a - b).abs()).sum()
    }

    fn linear_program(&self, objective: Vec<f64>, sense: Sense) -> Result<LinearProgram> {
        LinearProgram::on_simplex(objective, self.dense_rows(), self.p.clone(), sense)
    }
}

pub fn build_constraints(space: &ResponseSpace, p: &ObservationalTable) -> Result<ConstraintSystem> {
    build_constraints_with_budget(space, p, DEFAULT_ENTRY_BUDGET)
}

pub fn build_constraints_with_budget(
    space: &ResponseSpace,
    p: &ObservationalTable,
    budget: usize,
) -> Result<ConstraintSystem> {
    let rows = p.len();
    let cols = space.total();
    if rows.checked_mul(cols).is_none_or(|e| e > budget) {
        return Err(Error::Capacity(format!(
            "constraint matrix {rows} x {cols} exceeds the budget of {budget} entries"
        )));
    }
    let cards = space.cardinalities().to_vec();
    let expected_rows: usize = cards.iter().product();
    if expected_rows != rows {
        return Err(Error::Shape(format!("observational table has {rows} entries, expected {expected_rows}")));
    }
    let mut digits = vec![0; space.len()];
    let mut x = vec![0; space.len()];
    let mut row_of = Vec::with_capacity(cols);
    for r in space.indices() {
        space.digits_into(r, &mut digits);
        space.simulate_into(&digits, None, &mut x);
        row_of.push(index_of(&x, &cards));
    }
    Ok(ConstraintSystem { rows, row_of, p: p.as_slice().to_vec() })
}

#[inline]
fn index_of(x: &[usize], cards: &[usize]) -> usize {
    let mut idx = 0;
    let mut stride = 1;
    for (&v, &k) in x.iter().zip(cards) {
        idx += v * stride;
        stride *= k;
    }
    idx
}

/// Objective coefficients `c` with `L(q) = c·q`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveVector {
    pub coefficients: Vec<f64>,
    /// Counterfactual classifier output per response index; 0 where A[x^F, r] = 0.
    pub outcomes: Vec<f64>,
    /// Canonical index of x^F.
    pub factual_row: usize,
    pub factual_probability: f64,
}

impl ObjectiveVector {
    pub fn value(&self, q: &[f64]) -> f64 {
        self.coefficients.iter().zip(q).map(|(c, v)| c * v).sum()
    }
}

/// How objective coefficients are computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ObjectiveRoute {
    /// One forward simulation per response index.
    #[default]
    ForwardSimulation,
    /// Literal sum over all descendant configurations; kept for verification.
    DoubleSum,
}

struct Query {
    factual_row: usize,
    p_factual: f64,
    desc: Vec<usize>,
}

fn prepare(
    model: &CausalModel,
    system: &ConstraintSystem,
    factual: &FactualInstance,
    action: &Action,
) -> Result<Query> {
    let factual_row = model.index(factual.values())?;
    if factual_row >= system.num_rows() {
        return Err(Error::Shape("factual index outside the constraint system".into()));
    }
    let p_factual = system.p[factual_row];
    if p_factual <= 0.0 {
        return Err(Error::ZeroFactualProbability);
    }
    let (desc, _) = descendants(model, action.targets())?;
    if desc.is_empty() {
        return Err(Error::NoDescendants);
    }
    Ok(Query { factual_row, p_factual, desc })
}

/// Classifier output for a response index consistent with x^F:
/// h(x^F on nd(I), theta on I, simulated x on d(I)).
fn counterfactual_outcome(
    model: &CausalModel,
    space: &ResponseSpace,
    h: &Classifier,
    factual: &FactualInstance,
    action: &Action,
    desc: &[usize],
    digits: &[usize],
) -> f64 {
    let simulated = space.simulate(digits, Some(action));
    let mut x = action.apply(factual.values());
    for &d in desc {
        x[d] = simulated[d];
    }
    h.eval(model, &x)
}

pub fn build_objective(
    model: &CausalModel,
    space: &ResponseSpace,
    system: &ConstraintSystem,
    h: &Classifier,
    factual: &FactualInstance,
    action: &Action,
) -> Result<ObjectiveVector> {
    build_objective_with(model, space, system, h, factual, action, ObjectiveRoute::ForwardSimulation)
}

pub fn build_objective_with(
    model: &CausalModel,
    space: &ResponseSpace,
    system: &ConstraintSystem,
    h: &Classifier,
    factual: &FactualInstance,
    action: &Action,
    route: ObjectiveRoute,
) -> Result<ObjectiveVector> {
    let query = prepare(model, system, factual, action)?;
    let mut coefficients = vec![0.0; system.num_cols()];
    let mut outcomes = vec![0.0; system.num_cols()];
    let mut digits = vec![0; space.len()];
    match route {
        ObjectiveRoute::ForwardSimulation => {
            for r in 0..system.num_cols() {
                if system.row_of[r] != query.factual_row {
                    continue;
                }
                space.digits_into(r, &mut digits);
                let out = counterfactual_outcome(model, space, h, factual, action, &query.desc, &digits);
                outcomes[r] = out;
                coefficients[r] = out / query.p_factual;
            }
        }
        ObjectiveRoute::DoubleSum => {
            let desc_cards: Vec<usize> = query.desc.iter().map(|&d| model.cardinality(d)).collect();
            let combos: usize = desc_cards.iter().product();
            let base = action.apply(factual.values());
            let xf = factual.values();
            for r in 0..system.num_cols() {
                space.digits_into(r, &mut digits);
                let factual_ok = (0..model.len())
                    .all(|i| xf[i] == space.output(i, digits[i], space.parent_config(i, xf)));
                if !factual_ok {
                    continue;
                }
                let mut total = 0.0;
                for code in 0..combos {
                    let xd = decode_index(code, &desc_cards);
                    let mut x = base.clone();
                    for (&d, &v) in query.desc.iter().zip(&xd) {
                        x[d] = v;
                    }
                    let cf_ok = query
                        .desc
                        .iter()
                        .all(|&i| x[i] == space.output(i, digits[i], space.parent_config(i, &x)));
                    if cf_ok {
                        total += h.eval(model, &x);
                    }
                }
                outcomes[r] = total;
                coefficients[r] = total / query.p_factual;
            }
        }
    }
    Ok(ObjectiveVector { coefficients, outcomes, factual_row: query.factual_row, factual_probability: query.p_factual })
}

fn lp_failure(sol: &LpSolution) -> Error {
    match sol.status {
        LpStatus::Infeasible => {
            Error::Infeasible("observational distribution is incompatible with the causal graph".into())
        }
        LpStatus::Unbounded => Error::Internal("bounding LP reported unbounded on a simplex domain".into()),
        LpStatus::IterationLimit => Error::Internal("bounding LP hit the pivot limit".into()),
        LpStatus::Optimal => Error::Internal("unexpected optimal status".into()),
    }
}

fn solve_checked(backend: &dyn LpBackend, lp: &LinearProgram) -> Result<LpSolution> {
    let sol = backend.solve(lp);
    if sol.is_optimal() {
        Ok(sol)
    } else {
        Err(lp_failure(&sol))
    }
}

/// Certified `[min, max]` of `c·q` over `{q in simplex, A q = p}`.
pub fn compute_bounds_fc(
    system: &ConstraintSystem,
    objective: &ObjectiveVector,
    backend: &dyn LpBackend,
) -> Result<BoundsResult> {
    let min = solve_checked(backend, &system.linear_program(objective.coefficients.clone(), Sense::Min)?)?;
    let max = solve_checked(backend, &system.linear_program(objective.coefficients.clone(), Sense::Max)?)?;
    let mut result = BoundsResult::checked(min.value, max.value, true, Method::FcLp)?;
    result.witness_min = Some(min.point);
    result.witness_max = Some(max.point);
    Ok(result)
}

/// Exact classifier output for interventions without descendants.
pub fn point_evaluate(
    model: &CausalModel,
    h: &Classifier,
    factual: &FactualInstance,
    action: &Action,
) -> Result<BoundsResult> {
    model.index(factual.values())?;
    let (desc, _) = descendants(model, action.targets())?;
    if !desc.is_empty() {
        return Err(Error::Domain("action has descendants; point evaluation does not apply".into()));
    }
    let value = h.eval(model, &action.apply(factual.values()));
    BoundsResult::checked(value, value, true, Method::Point)
}

/// Distinct counterfactual outcomes among responses consistent with x^F, each
/// with the responses that produce it, ordered by outcome.
pub(crate) fn outcome_groups(objective: &ObjectiveVector, system: &ConstraintSystem) -> Vec<(f64, Vec<usize>)> {
    let mut groups: BTreeMap<u64, (f64, Vec<usize>)> = BTreeMap::new();
    for r in system.columns_of(objective.factual_row) {
        let v = objective.outcomes[r];
        // order-preserving key for non-negative floats
        groups.entry(v.to_bits()).or_insert_with(|| (v, Vec::new())).1.push(r);
    }
    groups.into_values().collect()
}

/// Worst/best attainable counterfactual outcome rather than its expectation.
///
/// An outcome counts as attainable when some feasible response distribution
/// puts more than [`ATTAINABLE_MASS`] on the responses producing it; one LP per
/// distinct outcome value decides this.
pub fn worst_case_bound(
    model: &CausalModel,
    space: &ResponseSpace,
    system: &ConstraintSystem,
    h: &Classifier,
    factual: &FactualInstance,
    action: &Action,
    backend: &dyn LpBackend,
) -> Result<BoundsResult> {
    let objective = build_objective(model, space, system, h, factual, action)?;
    let mut attainable = Vec::new();
    for (value, members) in outcome_groups(&objective, system) {
        let mut indicator = vec![0.0; system.num_cols()];
        for r in members {
            indicator[r] = 1.0;
        }
        let sol = solve_checked(backend, &system.linear_program(indicator, Sense::Max)?)?;
        if sol.value > ATTAINABLE_MASS {
            attainable.push(value);
        }
    }
    let lb = attainable.iter().copied().fold(f64::INFINITY, f64::min);
    let ub = attainable.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if attainable.is_empty() {
        return Err(Error::Infeasible("no counterfactual outcome is attainable".into()));
    }
    BoundsResult::checked(lb, ub, true, Method::FcLp)
}
