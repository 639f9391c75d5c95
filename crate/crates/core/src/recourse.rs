//! Action enumeration, costing, per-action bounds and the recommendation rule.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fc::{
    build_constraints, build_objective, compute_bounds_fc, point_evaluate, worst_case_bound, BoundsResult,
    ConstraintSystem,
};
use crate::lp::DenseSimplex;
use crate::model::{descendants, validate, Action, CausalModel, Classifier, FactualInstance, ObservationalTable};
use crate::pc::{
    grid_applicable, pc_certify_seeded, pc_local_bounds, pc_worst_case, PcLocalOptions, PcProblem,
    DEFAULT_GRID_RESOLUTION,
};
use crate::response::ResponseSpace;

pub const DEFAULT_MAX_SIZE: usize = 2;
pub const DEFAULT_MAX_ACTIONS: usize = 10_000;
pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Which confounding assumption the bounds are computed under.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundMode {
    #[default]
    Fc,
    Pc,
}

/// Expected counterfactual output, or the range of attainable outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    #[default]
    Expected,
    #[serde(alias = "worst_case")]
    Worst,
}

/// Which actions are allowed.
#[derive(Debug, Clone, PartialEq)]
pub struct FeasibilitySpec {
    pub actionable: Vec<bool>,
    /// Allowed target states per variable, ascending.
    pub allowed: Vec<Vec<usize>>,
    pub max_size: usize,
    pub max_actions: usize,
}

impl FeasibilitySpec {
    /// Every variable actionable to every state.
    pub fn all(model: &CausalModel) -> Self {
        Self {
            actionable: vec![true; model.len()],
            allowed: (0..model.len()).map(|i| (0..model.cardinality(i)).collect()).collect(),
            max_size: DEFAULT_MAX_SIZE,
            max_actions: DEFAULT_MAX_ACTIONS,
        }
    }

    /// Only the listed variables actionable.
    pub fn only(model: &CausalModel, variables: &[usize]) -> Self {
        let mut spec = Self::all(model);
        for (i, flag) in spec.actionable.iter_mut().enumerate() {
            *flag = variables.contains(&i);
        }
        spec
    }

    pub fn with_max_size(mut self, max_size: usize) -> Self {
        self.max_size = max_size;
        self
    }

    pub fn validate(&self, model: &CausalModel) -> Result<()> {
        if self.actionable.len() != model.len() || self.allowed.len() != model.len() {
            return Err(Error::Shape("feasibility spec does not cover every variable".into()));
        }
        for (i, values) in self.allowed.iter().enumerate() {
            if let Some(&v) = values.iter().find(|&&v| v >= model.cardinality(i)) {
                return Err(Error::Domain(format!("allowed value {v} out of range for '{}'", model.name(i))));
            }
        }
        Ok(())
    }

    pub fn actionable_variables(&self) -> Vec<usize> {
        (0..self.actionable.len()).filter(|&i| self.actionable[i]).collect()
    }
}

/// `cost(theta_I; x^F) = sum_{i in I} (a_i + w_i |theta_i - x_i^F|)` on integer codes.
#[derive(Debug, Clone, PartialEq)]
pub struct CostModel {
    pub weights: Vec<f64>,
    pub activation: Vec<f64>,
}

impl CostModel {
    pub fn uniform(n: usize) -> Self {
        Self { weights: vec![1.0; n], activation: vec![0.0; n] }
    }

    pub fn validate(&self, model: &CausalModel) -> Result<()> {
        if self.weights.len() != model.len() || self.activation.len() != model.len() {
            return Err(Error::Shape("cost model does not cover every variable".into()));
        }
        for i in 0..model.len() {
            if !(self.weights[i] >= 0.0 && self.activation[i] >= 0.0)
                || !self.weights[i].is_finite()
                || !self.activation[i].is_finite()
            {
                return Err(Error::Domain(format!("costs for '{}' must be finite and non-negative", model.name(i))));
            }
        }
        Ok(())
    }

    pub fn cost(&self, action: &Action, factual: &FactualInstance) -> f64 {
        action
            .targets()
            .iter()
            .zip(action.values())
            .map(|(&i, &v)| self.activation[i] + self.weights[i] * (v as f64 - factual.values()[i] as f64).abs())
            .sum()
    }
}

/// Feasible actions in deterministic order: by size, then target indices, then
/// values. Returns the actions and whether the cap truncated the list.
pub fn enumerate_actions(
    model: &CausalModel,
    factual: &FactualInstance,
    spec: &FeasibilitySpec,
) -> Result<(Vec<Action>, bool)> {
    spec.validate(model)?;
    let actionable = spec.actionable_variables();
    if actionable.is_empty() {
        return Err(Error::EmptyActionable);
    }
    let xf = factual.values();
    let mut out = Vec::new();
    for size in 1..=spec.max_size.min(actionable.len()) {
        for subset in combinations(&actionable, size) {
            let radices: Vec<usize> = subset.iter().map(|&i| spec.allowed[i].len()).collect();
            if radices.contains(&0) {
                continue;
            }
            let total: usize = radices.iter().product();
            let mut choice = vec![0usize; size];
            for _ in 0..total {
                let values: Vec<usize> = subset.iter().zip(&choice).map(|(&i, &c)| spec.allowed[i][c]).collect();
                if subset.iter().zip(&values).any(|(&i, &v)| xf[i] != v) {
                    if out.len() == spec.max_actions {
                        log::warn!("action enumeration truncated at {} actions", spec.max_actions);
                        return Ok((out, true));
                    }
                    let pairs: Vec<(usize, usize)> = subset.iter().copied().zip(values).collect();
                    out.push(Action::new(model, &pairs)?);
                }
                // odometer with the last target varying fastest
                for k in (0..size).rev() {
                    choice[k] += 1;
                    if choice[k] < radices[k] {
                        break;
                    }
                    choice[k] = 0;
                }
            }
        }
    }
    Ok((out, false))
}

fn combinations(items: &[usize], k: usize) -> Vec<Vec<usize>> {
    fn rec(items: &[usize], k: usize, start: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..items.len() {
            cur.push(items[i]);
            rec(items, k, i + 1, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(items, k, 0, &mut Vec::with_capacity(k), &mut out);
    out
}

/// Solver settings for one evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    pub mode: BoundMode,
    pub objective: Objective,
    /// Grid resolution for certification in PC mode; `None` disables the grid.
    pub grid_resolution: Option<f64>,
    pub local: PcLocalOptions,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            mode: BoundMode::Fc,
            objective: Objective::Expected,
            grid_resolution: Some(DEFAULT_GRID_RESOLUTION),
            local: PcLocalOptions::default(),
        }
    }
}

impl EvalOptions {
    pub fn new(mode: BoundMode, objective: Objective) -> Self {
        Self { mode, objective, ..Self::default() }
    }
}

/// A validated problem instance: graph, data, classifier and action constraints.
#[derive(Debug, Clone)]
pub struct Bundle {
    pub model: CausalModel,
    pub p: ObservationalTable,
    pub h: Classifier,
    pub feasibility: FeasibilitySpec,
    pub costs: CostModel,
}

impl Bundle {
    pub fn new(
        model: CausalModel,
        p: ObservationalTable,
        h: Classifier,
        feasibility: FeasibilitySpec,
        costs: CostModel,
    ) -> Result<Self> {
        validate(&model, &p, &h)?;
        feasibility.validate(&model)?;
        costs.validate(&model)?;
        Ok(Self { model, p, h, feasibility, costs })
    }
}

/// A bundle with its response space and constraint system built once.
#[derive(Debug, Clone)]
pub struct Engine {
    bundle: Bundle,
    space: ResponseSpace,
    system: ConstraintSystem,
}

/// One evaluated action.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluated {
    pub action: Action,
    pub cost: f64,
    pub result: Result<BoundsResult>,
}

impl Engine {
    pub fn new(bundle: Bundle) -> Result<Self> {
        let space = ResponseSpace::new(&bundle.model)?;
        let system = build_constraints(&space, &bundle.p)?;
        Ok(Self { bundle, space, system })
    }

    pub fn bundle(&self) -> &Bundle {
        &self.bundle
    }

    pub fn model(&self) -> &CausalModel {
        &self.bundle.model
    }

    pub fn space(&self) -> &ResponseSpace {
        &self.space
    }

    pub fn system(&self) -> &ConstraintSystem {
        &self.system
    }

    fn check_factual(&self, factual: &FactualInstance) -> Result<()> {
        let idx = self.bundle.model.index(factual.values())?;
        if self.bundle.p.get(idx) <= 0.0 {
            return Err(Error::ZeroFactualProbability);
        }
        Ok(())
    }

    /// Bounds on the counterfactual outcome of one action.
    pub fn bounds(&self, factual: &FactualInstance, action: &Action, options: &EvalOptions) -> Result<BoundsResult> {
        let Bundle { model, h, .. } = &self.bundle;
        self.check_factual(factual)?;
        let (desc, _) = descendants(model, action.targets())?;
        if desc.is_empty() {
            return point_evaluate(model, h, factual, action);
        }
        let backend = DenseSimplex::default();
        match (options.mode, options.objective) {
            (BoundMode::Fc, Objective::Expected) => {
                let objective = build_objective(model, &self.space, &self.system, h, factual, action)?;
                compute_bounds_fc(&self.system, &objective, &backend)
            }
            (BoundMode::Fc, Objective::Worst) => {
                worst_case_bound(model, &self.space, &self.system, h, factual, action, &backend)
            }
            (BoundMode::Pc, Objective::Expected) => {
                let objective = build_objective(model, &self.space, &self.system, h, factual, action)?;
                let problem = PcProblem::new(model, &self.space, &self.system, &objective)?;
                match options.grid_resolution {
                    Some(res) if grid_applicable(&problem, res) => pc_certify_seeded(&problem, res, &options.local),
                    _ => pc_local_bounds(&problem, &options.local),
                }
            }
            (BoundMode::Pc, Objective::Worst) => {
                let objective = build_objective(model, &self.space, &self.system, h, factual, action)?;
                pc_worst_case(model, &self.space, &self.system, &objective, options.grid_resolution, &options.local)
            }
        }
    }

    pub fn cost(&self, factual: &FactualInstance, action: &Action) -> f64 {
        self.bundle.costs.cost(action, factual)
    }

    /// Bounds and cost for each action, in input order. Errors are recorded per action.
    pub fn evaluate_actions(
        &self,
        factual: &FactualInstance,
        actions: &[Action],
        options: &EvalOptions,
    ) -> Vec<Evaluated> {
        actions
            .par_iter()
            .map(|action| Evaluated {
                action: action.clone(),
                cost: self.cost(factual, action),
                result: self.bounds(factual, action, options),
            })
            .collect()
    }

    /// Enumerates, evaluates and recommends in one go.
    pub fn recourse(
        &self,
        factual: &FactualInstance,
        options: &EvalOptions,
        threshold: f64,
        epsilon: f64,
    ) -> Result<Recommendation> {
        self.check_factual(factual)?;
        let (actions, truncated) = enumerate_actions(&self.bundle.model, factual, &self.bundle.feasibility)?;
        let evaluated = self.evaluate_actions(factual, &actions, options);
        let mut rec = recommend(evaluated, threshold, epsilon);
        rec.truncated = truncated;
        Ok(rec)
    }
}

/// Ranked actions and the chosen one, if any.
#[derive(Debug, Clone, PartialEq)]
pub struct Recommendation {
    /// Sorted by cost, then by descending lower bound; failed evaluations last.
    pub ranked: Vec<Evaluated>,
    /// Index into `ranked`.
    pub chosen: Option<usize>,
    pub threshold: f64,
    pub epsilon: f64,
    pub truncated: bool,
}

impl Recommendation {
    pub fn chosen(&self) -> Option<&Evaluated> {
        self.chosen.map(|i| &self.ranked[i])
    }
}

/// Picks the cheapest action whose certified lower bound exceeds
/// `threshold + epsilon`; ties go to the smaller intervention set, then to the
/// earlier action in the input.
pub fn recommend(evaluated: Vec<Evaluated>, threshold: f64, epsilon: f64) -> Recommendation {
    let qualifies = |e: &Evaluated| matches!(&e.result, Ok(b) if b.certified && b.lb > threshold + epsilon);
    let chosen_input = evaluated
        .iter()
        .enumerate()
        .filter(|(_, e)| qualifies(e))
        .min_by(|(ia, a), (ib, b)| {
            a.cost.total_cmp(&b.cost).then(a.action.len().cmp(&b.action.len())).then(ia.cmp(ib))
        })
        .map(|(i, _)| i);
    let mut order: Vec<usize> = (0..evaluated.len()).collect();
    let lb = |e: &Evaluated| e.result.as_ref().map(|b| b.lb).ok();
    order.sort_by(|&a, &b| {
        let (ea, eb) = (&evaluated[a], &evaluated[b]);
        match (lb(ea), lb(eb)) {
            (Some(la), Some(lb_)) => ea.cost.total_cmp(&eb.cost).then(lb_.total_cmp(&la)).then(a.cmp(&b)),
            (Some(_), None) => std::cmp::Ordering::Less,
            (None, Some(_)) => std::cmp::Ordering::Greater,
            (None, None) => ea.cost.total_cmp(&eb.cost).then(a.cmp(&b)),
        }
    });
    let chosen = chosen_input.and_then(|c| order.iter().position(|&i| i == c));
    let mut slots: Vec<Option<Evaluated>> = evaluated.into_iter().map(Some).collect();
    let ranked = order.iter().map(|&i| slots[i].take().expect("each index once")).collect();
    Recommendation { ranked, chosen, threshold, epsilon, truncated: false }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fc::Method;
    use crate::model::{ConfoundingSpec, Variable};

    fn chain() -> CausalModel {
        CausalModel::new(
            (1..=3).map(|i| Variable::new(format!("X{i}"), 2)).collect(),
            &[(0, 1), (0, 2), (1, 2)],
            ConfoundingSpec::full(),
        )
        .unwrap()
    }

    fn zeros(m: &CausalModel) -> FactualInstance {
        FactualInstance::new(m, vec![0; m.len()]).unwrap()
    }

    #[test]
    fn single_actionable_variable() {
        let m = chain();
        let (actions, truncated) = enumerate_actions(&m, &zeros(&m), &FeasibilitySpec::only(&m, &[1])).unwrap();
        assert!(!truncated);
        assert_eq!(actions, vec![Action::new(&m, &[(1, 1)]).unwrap()]);
    }

    #[test]
    fn pair_enumeration_order_and_count() {
        let m = chain();
        let spec = FeasibilitySpec::only(&m, &[0, 1]).with_max_size(1);
        let (actions, _) = enumerate_actions(&m, &zeros(&m), &spec).unwrap();
        let names: Vec<String> = actions.iter().map(|a| a.describe(&m)).collect();
        assert_eq!(names, ["X1=1", "X2=1"]);

        let (actions, _) = enumerate_actions(&m, &zeros(&m), &spec.with_max_size(2)).unwrap();
        let names: Vec<String> = actions.iter().map(|a| a.describe(&m)).collect();
        assert_eq!(names, ["X1=1", "X2=1", "X1=0,X2=1", "X1=1,X2=0", "X1=1,X2=1"]);
    }

    #[test]
    fn truncation_and_empty_set() {
        let m = chain();
        let mut spec = FeasibilitySpec::all(&m);
        spec.max_actions = 2;
        let (actions, truncated) = enumerate_actions(&m, &zeros(&m), &spec).unwrap();
        assert_eq!(actions.len(), 2);
        assert!(truncated);
        let none = FeasibilitySpec::only(&m, &[]);
        assert_eq!(enumerate_actions(&m, &zeros(&m), &none).unwrap_err(), Error::EmptyActionable);
    }

    #[test]
    fn cost_formula() {
        let m = CausalModel::new(vec![Variable::new("A", 4), Variable::new("B", 3)], &[], ConfoundingSpec::full())
            .unwrap();
        let costs = CostModel { weights: vec![2.0, 0.5], activation: vec![1.0, 0.0] };
        let xf = FactualInstance::new(&m, vec![3, 1]).unwrap();
        let a = Action::new(&m, &[(0, 1), (1, 2)]).unwrap();
        assert_eq!(costs.cost(&a, &xf), 1.0 + 2.0 * 2.0 + 0.5);
        let same = Action::new(&m, &[(1, 1)]).unwrap();
        assert_eq!(costs.cost(&same, &xf), 0.0);
    }

    fn evaluated(m: &CausalModel, target: usize, cost: f64, lb: f64, method: Method) -> Evaluated {
        let certified = method.is_certifying();
        Evaluated {
            action: Action::new(m, &[(target, 1)]).unwrap(),
            cost,
            result: BoundsResult::checked(lb, 1.0, certified, method),
        }
    }

    #[test]
    fn recommendation_rule() {
        let m = chain();
        let point = evaluated(&m, 2, 1.0, 1.0, Method::Point);
        let rec = recommend(vec![point.clone()], 0.5, 0.0);
        assert_eq!(rec.chosen().unwrap(), &point);

        let rec = recommend(vec![evaluated(&m, 0, 1.0, 0.2, Method::FcLp), evaluated(&m, 1, 1.0, 0.5, Method::FcLp)], 0.5, 0.0);
        assert!(rec.chosen.is_none());
        assert_eq!(rec.ranked.len(), 2);
        assert_eq!(rec.ranked[0].action.targets(), &[1]);

        let cheap = evaluated(&m, 0, 1.0, 0.7, Method::FcLp);
        let dear = evaluated(&m, 1, 2.0, 0.9, Method::FcLp);
        let rec = recommend(vec![dear, cheap.clone()], 0.5, 0.0);
        assert_eq!(rec.chosen().unwrap(), &cheap);
        assert_eq!(rec.chosen, Some(0));

        // heuristic bounds never qualify; epsilon raises the bar
        let local = evaluated(&m, 0, 0.5, 0.99, Method::PcLocal);
        let fc = evaluated(&m, 1, 3.0, 0.6, Method::FcLp);
        let rec = recommend(vec![local.clone(), fc.clone()], 0.5, 0.0);
        assert_eq!(rec.chosen().unwrap(), &fc);
        assert!(recommend(vec![local, fc], 0.5, 0.1).chosen.is_none());
    }

    #[test]
    fn failed_actions_rank_last() {
        let m = chain();
        let bad = Evaluated { action: Action::new(&m, &[(0, 1)]).unwrap(), cost: 0.0, result: Err(Error::NoDescendants) };
        let good = evaluated(&m, 1, 5.0, 0.1, Method::FcLp);
        let rec = recommend(vec![bad, good.clone()], 0.5, 0.0);
        assert_eq!(rec.ranked[0], good);
    }

    fn running_engine(conf: ConfoundingSpec) -> Engine {
        let m = CausalModel::new(vec![Variable::new("X1", 2), Variable::new("X2", 2)], &[(0, 1)], conf).unwrap();
        let p = ObservationalTable::new(vec![0.25, 0.1, 0.25, 0.4]).unwrap();
        let h = Classifier::indicator(&m, 1).unwrap();
        let f = FeasibilitySpec::all(&m);
        let c = CostModel::uniform(2);
        Engine::new(Bundle::new(m, p, h, f, c).unwrap()).unwrap()
    }

    #[test]
    fn engine_routes() {
        let e = running_engine(ConfoundingSpec::none());
        let xf = FactualInstance::new(e.model(), vec![0, 0]).unwrap();
        let a = Action::new(e.model(), &[(0, 1)]).unwrap();
        let fc = e.bounds(&xf, &a, &EvalOptions::default()).unwrap();
        assert_eq!((fc.lb, fc.ub, fc.method), (0.0, 1.0, Method::FcLp));
        assert_eq!(e.cost(&xf, &a), 1.0);
        let pc = e.bounds(&xf, &a, &EvalOptions::new(BoundMode::Pc, Objective::Expected)).unwrap();
        assert_eq!(pc.method, Method::PcGrid);
        assert!((pc.lb - 0.6).abs() <= 0.05 && (pc.ub - 1.0).abs() <= 0.05);

        let sink = Action::new(e.model(), &[(1, 1)]).unwrap();
        let point = e.bounds(&xf, &sink, &EvalOptions::default()).unwrap();
        assert_eq!((point.lb, point.ub, point.method), (1.0, 1.0, Method::Point));

        let rec = e.recourse(&xf, &EvalOptions::default(), 0.5, 0.0).unwrap();
        assert_eq!(rec.chosen().unwrap().action, sink);
    }

    #[test]
    fn zero_probability_factual() {
        let m = CausalModel::new(vec![Variable::new("X1", 2), Variable::new("X2", 2)], &[(0, 1)], ConfoundingSpec::full())
            .unwrap();
        let p = ObservationalTable::new(vec![0.5, 0.0, 0.0, 0.5]).unwrap();
        let h = Classifier::indicator(&m, 1).unwrap();
        let e = Engine::new(Bundle::new(m.clone(), p, h, FeasibilitySpec::all(&m), CostModel::uniform(2)).unwrap())
            .unwrap();
        let xf = FactualInstance::new(&m, vec![1, 0]).unwrap();
        let a = Action::new(&m, &[(1, 1)]).unwrap();
        assert_eq!(e.bounds(&xf, &a, &EvalOptions::default()).unwrap_err(), Error::ZeroFactualProbability);
    }
}
