//! Problem instance: the causal graph over discrete variables, the declared
//! confounding structure among exogenous terms, the observational table, the
//! classifier and the factual/intervention types.
//!
//! Variables are stored in a canonical topological order (ties broken by
//! declaration order). Every table in the crate is indexed by the mixed-radix
//! code over that order with variable 0 as the least significant digit.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on the total mass of an observational table.
pub const NORMALISATION_TOLERANCE: f64 = 1e-9;

/// Mixed-radix code of `values` with digit 0 least significant.
pub fn canonical_index(values: &[usize], cardinalities: &[usize]) -> Result<usize> {
    if values.len() != cardinalities.len() {
        return Err(Error::Domain(format!(
            "expected {} states, got {}",
            cardinalities.len(),
            values.len()
        )));
    }
    let mut index = 0usize;
    let mut stride = 1usize;
    for (pos, (&v, &k)) in values.iter().zip(cardinalities).enumerate() {
        if v >= k {
            return Err(Error::Domain(format!(
                "state {v} of variable {pos} out of range 0..{k}"
            )));
        }
        index = v
            .checked_mul(stride)
            .and_then(|t| t.checked_add(index))
            .ok_or_else(|| Error::Capacity("joint index overflows usize".into()))?;
        stride = stride.saturating_mul(k);
    }
    Ok(index)
}

/// Inverse of [`canonical_index`]. Digits beyond the radix product wrap silently,
/// so callers pass indices below `cardinalities.iter().product()`.
pub fn decode_index(mut index: usize, cardinalities: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(cardinalities.len());
    for &k in cardinalities {
        out.push(index % k);
        index /= k;
    }
    out
}

/// Product of radices, or a capacity error on overflow.
pub fn checked_product(radices: impl IntoIterator<Item = usize>) -> Result<usize> {
    radices.into_iter().try_fold(1usize, |acc, k| {
        acc.checked_mul(k)
            .ok_or_else(|| Error::Capacity("product of cardinalities overflows usize".into()))
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Variable {
    pub name: String,
    pub cardinality: usize,
}

impl Variable {
    pub fn new(name: impl Into<String>, cardinality: usize) -> Self {
        Self { name: name.into(), cardinality }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConfoundingMode {
    Full,
    Partial,
    None,
}

/// Which response variables each response variable depends on.
///
/// `response_parents[i]` lists indices of earlier variables; it is only read in
/// `Partial` mode. `Full` behaves as every variable depending on all of its
/// predecessors and `None` as every set being empty.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfoundingSpec {
    pub mode: ConfoundingMode,
    pub response_parents: Vec<Vec<usize>>,
}

impl ConfoundingSpec {
    pub fn full() -> Self {
        Self { mode: ConfoundingMode::Full, response_parents: Vec::new() }
    }

    pub fn none() -> Self {
        Self { mode: ConfoundingMode::None, response_parents: Vec::new() }
    }

    pub fn partial(response_parents: Vec<Vec<usize>>) -> Self {
        Self { mode: ConfoundingMode::Partial, response_parents }
    }

    /// Partial spec in which every response variable depends on all predecessors.
    pub fn all_predecessors(n: usize) -> Self {
        Self::partial((0..n).map(|i| (0..i).collect()).collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CausalModel {
    variables: Vec<Variable>,
    parents: Vec<Vec<usize>>,
    children: Vec<Vec<usize>>,
    mode: ConfoundingMode,
    response_parents: Vec<Vec<usize>>,
    declared: Vec<usize>,
}

impl CausalModel {
    /// Builds a model from variables in declaration order, `(parent, child)` edges
    /// and a confounding spec, all using declaration indices. The stored order is
    /// topological with ties broken by declaration order.
    pub fn new(
        variables: Vec<Variable>,
        edges: &[(usize, usize)],
        confounding: ConfoundingSpec,
    ) -> Result<Self> {
        let n = variables.len();
        if n == 0 {
            return Err(Error::Domain("model has no variables".into()));
        }
        let mut names = BTreeSet::new();
        for v in &variables {
            if v.cardinality < 2 {
                return Err(Error::Domain(format!(
                    "variable '{}' has cardinality {}, expected at least 2",
                    v.name, v.cardinality
                )));
            }
            if !names.insert(v.name.as_str()) {
                return Err(Error::Domain(format!("duplicate variable name '{}'", v.name)));
            }
        }

        let mut declared_parents: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
        for &(p, c) in edges {
            if p >= n || c >= n {
                return Err(Error::Domain(format!("edge ({p}, {c}) references unknown variable")));
            }
            if p == c {
                return Err(Error::Cycle(variables[p].name.clone()));
            }
            declared_parents[c].insert(p);
        }

        // Kahn's algorithm, always releasing the smallest declaration index first.
        let mut indegree: Vec<usize> = declared_parents.iter().map(BTreeSet::len).collect();
        let mut declared_children: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (c, ps) in declared_parents.iter().enumerate() {
            for &p in ps {
                declared_children[p].push(c);
            }
        }
        let mut ready: BTreeSet<usize> = (0..n).filter(|&i| indegree[i] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(&next) = ready.iter().next() {
            ready.remove(&next);
            order.push(next);
            for &c in &declared_children[next] {
                indegree[c] -= 1;
                if indegree[c] == 0 {
                    ready.insert(c);
                }
            }
        }
        if order.len() < n {
            let stuck = (0..n).find(|&i| indegree[i] > 0).unwrap_or(0);
            return Err(Error::Cycle(variables[stuck].name.clone()));
        }

        let mut position = vec![0usize; n];
        for (pos, &d) in order.iter().enumerate() {
            position[d] = pos;
        }
        let canon_vars: Vec<Variable> = order.iter().map(|&d| variables[d].clone()).collect();
        let parents: Vec<Vec<usize>> = order
            .iter()
            .map(|&d| {
                let mut ps: Vec<usize> = declared_parents[d].iter().map(|&p| position[p]).collect();
                ps.sort_unstable();
                ps
            })
            .collect();
        let mut children = vec![Vec::new(); n];
        for (c, ps) in parents.iter().enumerate() {
            for &p in ps {
                children[p].push(c);
            }
        }

        let response_parents = match confounding.mode {
            ConfoundingMode::Full => (0..n).map(|i| (0..i).collect()).collect(),
            ConfoundingMode::None => vec![Vec::new(); n],
            ConfoundingMode::Partial => {
                if confounding.response_parents.len() != n {
                    return Err(Error::Domain(format!(
                        "partial confounding lists {} response-parent sets for {} variables",
                        confounding.response_parents.len(),
                        n
                    )));
                }
                let mut out = vec![Vec::new(); n];
                for (d, set) in confounding.response_parents.iter().enumerate() {
                    let child = position[d];
                    let mut mapped = Vec::with_capacity(set.len());
                    for &j in set {
                        if j >= n {
                            return Err(Error::Domain(format!(
                                "response parent {j} of '{}' is not a variable",
                                variables[d].name
                            )));
                        }
                        if position[j] >= child {
                            return Err(Error::Domain(format!(
                                "response parent '{}' of '{}' does not precede it in topological order",
                                variables[j].name, variables[d].name
                            )));
                        }
                        mapped.push(position[j]);
                    }
                    mapped.sort_unstable();
                    mapped.dedup();
                    out[child] = mapped;
                }
                out
            }
        };

        Ok(Self {
            variables: canon_vars,
            parents,
            children,
            mode: confounding.mode,
            response_parents,
            declared: order,
        })
    }

    pub fn len(&self) -> usize {
        self.variables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.variables.is_empty()
    }

    pub fn variables(&self) -> &[Variable] {
        &self.variables
    }

    pub fn cardinalities(&self) -> Vec<usize> {
        self.variables.iter().map(|v| v.cardinality).collect()
    }

    pub fn cardinality(&self, i: usize) -> usize {
        self.variables[i].cardinality
    }

    pub fn name(&self, i: usize) -> &str {
        &self.variables[i].name
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.variables.iter().position(|v| v.name == name)
    }

    /// Parents of variable `i`, ascending.
    pub fn parents(&self, i: usize) -> &[usize] {
        &self.parents[i]
    }

    pub fn children(&self, i: usize) -> &[usize] {
        &self.children[i]
    }

    pub fn confounding_mode(&self) -> ConfoundingMode {
        self.mode
    }

    /// Effective response parents of variable `i` under the declared mode.
    pub fn response_parents(&self, i: usize) -> &[usize] {
        &self.response_parents[i]
    }

    /// Declaration index of each canonical variable.
    pub fn declaration_order(&self) -> &[usize] {
        &self.declared
    }

    /// Number of joint configurations |X|.
    pub fn joint_size(&self) -> Result<usize> {
        checked_product(self.variables.iter().map(|v| v.cardinality))
    }

    /// Copy of this model with a different confounding spec (canonical indices).
    pub fn with_confounding(&self, confounding: ConfoundingSpec) -> Result<Self> {
        let vars: Vec<Variable> = self.variables.clone();
        let edges: Vec<(usize, usize)> = self
            .parents
            .iter()
            .enumerate()
            .flat_map(|(c, ps)| ps.iter().map(move |&p| (p, c)))
            .collect();
        Self::new(vars, &edges, confounding)
    }

    pub fn index(&self, values: &[usize]) -> Result<usize> {
        canonical_index(values, &self.cardinalities())
    }

    pub fn decode(&self, index: usize) -> Vec<usize> {
        decode_index(index, &self.cardinalities())
    }

    fn check_var(&self, i: usize) -> Result<()> {
        if i >= self.len() {
            return Err(Error::Domain(format!("variable index {i} out of range")));
        }
        Ok(())
    }
}

/// Strict descendants `d(I)` and non-descendants `nd(I)` of the target set, both ascending.
pub fn descendants(model: &CausalModel, targets: &[usize]) -> Result<(Vec<usize>, Vec<usize>)> {
    let n = model.len();
    let mut in_targets = vec![false; n];
    for &t in targets {
        model.check_var(t)?;
        in_targets[t] = true;
    }
    let mut reached = vec![false; n];
    let mut stack: Vec<usize> = targets.to_vec();
    while let Some(v) = stack.pop() {
        for &c in model.children(v) {
            if !reached[c] {
                reached[c] = true;
                stack.push(c);
            }
        }
    }
    let desc = (0..n).filter(|&i| reached[i] && !in_targets[i]).collect();
    let non_desc = (0..n).filter(|&i| !reached[i] && !in_targets[i]).collect();
    Ok((desc, non_desc))
}

/// Observational distribution P_X as a dense table over the canonical code.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationalTable {
    probabilities: Vec<f64>,
}

impl ObservationalTable {
    pub fn new(probabilities: Vec<f64>) -> Result<Self> {
        for (index, &value) in probabilities.iter().enumerate() {
            if !value.is_finite() {
                return Err(Error::Domain(format!("non-finite probability at index {index}")));
            }
            if value < 0.0 {
                return Err(Error::NegativeProbability { index, value });
            }
        }
        let sum: f64 = probabilities.iter().sum();
        if (sum - 1.0).abs() > NORMALISATION_TOLERANCE {
            return Err(Error::Normalisation { sum });
        }
        Ok(Self { probabilities })
    }

    /// Empirical frequencies of joint configurations, taken verbatim.
    pub fn from_samples(model: &CausalModel, samples: &[Vec<usize>]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Domain("sample set is empty".into()));
        }
        let mut counts = vec![0usize; model.joint_size()?];
        for row in samples {
            counts[model.index(row)?] += 1;
        }
        let total = samples.len() as f64;
        Self::new(counts.into_iter().map(|c| c as f64 / total).collect())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.probabilities
    }

    pub fn len(&self) -> usize {
        self.probabilities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probabilities.is_empty()
    }

    pub fn get(&self, index: usize) -> f64 {
        self.probabilities[index]
    }
}

/// Probabilistic classifier h : X -> [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub enum Classifier {
    /// One value per joint configuration, canonical code.
    Table(Vec<f64>),
    /// `sigmoid(bias + sum_i weights[i] * x_i)` on integer state codes.
    LinearLogit { bias: f64, weights: Vec<f64> },
}

impl Classifier {
    /// Evaluates h on a full configuration in canonical variable order.
    pub fn eval(&self, model: &CausalModel, x: &[usize]) -> f64 {
        match self {
            Classifier::Table(values) => {
                let idx = model.index(x).expect("configuration in range");
                values[idx]
            }
            Classifier::LinearLogit { bias, weights } => {
                let z = bias + weights.iter().zip(x).map(|(w, &v)| w * v as f64).sum::<f64>();
                1.0 / (1.0 + (-z).exp())
            }
        }
    }

    /// Classifier equal to `value` everywhere.
    pub fn constant(model: &CausalModel, value: f64) -> Result<Self> {
        Ok(Classifier::Table(vec![value; model.joint_size()?]))
    }

    /// Classifier returning the state of a binary variable `i`.
    pub fn indicator(model: &CausalModel, i: usize) -> Result<Self> {
        let size = model.joint_size()?;
        Ok(Classifier::Table(
            (0..size).map(|idx| if model.decode(idx)[i] == 1 { 1.0 } else { 0.0 }).collect(),
        ))
    }
}

/// Factual observation x^F.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FactualInstance(pub Vec<usize>);

impl FactualInstance {
    pub fn new(model: &CausalModel, values: Vec<usize>) -> Result<Self> {
        model.index(&values)?;
        Ok(Self(values))
    }

    pub fn values(&self) -> &[usize] {
        &self.0
    }
}

/// Intervention do(theta_I), targets ascending.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Action {
    targets: Vec<usize>,
    values: Vec<usize>,
}

impl Action {
    pub fn new(model: &CausalModel, assignments: &[(usize, usize)]) -> Result<Self> {
        if assignments.is_empty() {
            return Err(Error::Domain("action has no targets".into()));
        }
        let mut pairs = assignments.to_vec();
        pairs.sort_unstable();
        for w in pairs.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(Error::Domain(format!("variable {} targeted twice", w[0].0)));
            }
        }
        for &(t, v) in &pairs {
            model.check_var(t)?;
            if v >= model.cardinality(t) {
                return Err(Error::Domain(format!(
                    "value {v} out of range for '{}' (cardinality {})",
                    model.name(t),
                    model.cardinality(t)
                )));
            }
        }
        Ok(Self {
            targets: pairs.iter().map(|p| p.0).collect(),
            values: pairs.iter().map(|p| p.1).collect(),
        })
    }

    pub fn targets(&self) -> &[usize] {
        &self.targets
    }

    pub fn values(&self) -> &[usize] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    /// Value assigned to variable `i`, if targeted.
    pub fn value_of(&self, i: usize) -> Option<usize> {
        self.targets.binary_search(&i).ok().map(|k| self.values[k])
    }

    /// `x` with the targeted entries overwritten.
    pub fn apply(&self, x: &[usize]) -> Vec<usize> {
        let mut out = x.to_vec();
        for (&t, &v) in self.targets.iter().zip(&self.values) {
            out[t] = v;
        }
        out
    }

    pub fn describe(&self, model: &CausalModel) -> String {
        self.targets
            .iter()
            .zip(&self.values)
            .map(|(&t, v)| format!("{}={v}", model.name(t)))
            .collect::<Vec<_>>()
            .join(",")
    }
}

/// Checks the observational table and classifier against the model and
/// returns the topological order as declaration indices.
pub fn validate(model: &CausalModel, p: &ObservationalTable, h: &Classifier) -> Result<Vec<usize>> {
    let size = model.joint_size()?;
    if p.len() != size {
        return Err(Error::Shape(format!(
            "observational table has {} entries, model has {size} configurations",
            p.len()
        )));
    }
    let sum: f64 = p.as_slice().iter().sum();
    if (sum - 1.0).abs() > NORMALISATION_TOLERANCE {
        return Err(Error::Normalisation { sum });
    }
    if let Some((index, &value)) = p.as_slice().iter().enumerate().find(|(_, &v)| v < 0.0) {
        return Err(Error::NegativeProbability { index, value });
    }
    match h {
        Classifier::Table(values) => {
            if values.len() != size {
                return Err(Error::Shape(format!(
                    "classifier table has {} entries, model has {size} configurations",
                    values.len()
                )));
            }
            if let Some((index, &value)) =
                values.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v))
            {
                return Err(Error::ClassifierRange { index, value });
            }
        }
        Classifier::LinearLogit { bias, weights } => {
            if weights.len() != model.len() {
                return Err(Error::Shape(format!(
                    "classifier has {} weights for {} variables",
                    weights.len(),
                    model.len()
                )));
            }
            if !bias.is_finite() || weights.iter().any(|w| !w.is_finite()) {
                return Err(Error::Domain("classifier coefficients must be finite".into()));
            }
        }
    }
    Ok(model.declaration_order().to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn binary(names: &[&str]) -> Vec<Variable> {
        names.iter().map(|n| Variable::new(*n, 2)).collect()
    }

    pub(crate) fn chain() -> CausalModel {
        CausalModel::new(binary(&["X1", "X2", "X3"]), &[(0, 1), (0, 2), (1, 2)], ConfoundingSpec::full())
            .unwrap()
    }

    #[test]
    fn canonical_index_examples() {
        assert_eq!(canonical_index(&[0, 0, 0], &[2, 2, 2]).unwrap(), 0);
        assert_eq!(canonical_index(&[1, 0, 1], &[2, 2, 2]).unwrap(), 5);
        assert_eq!(canonical_index(&[2, 1], &[3, 4]).unwrap(), 5);
        assert!(matches!(canonical_index(&[2, 0], &[2, 2]), Err(Error::Domain(_))));
    }

    #[test]
    fn chain_is_valid_in_declared_order() {
        let m = chain();
        let p = ObservationalTable::new(vec![0.125; 8]).unwrap();
        let h = Classifier::constant(&m, 0.5).unwrap();
        assert_eq!(validate(&m, &p, &h).unwrap(), vec![0, 1, 2]);
    }

    #[test]
    fn back_edge_is_a_cycle() {
        let err = CausalModel::new(
            binary(&["X1", "X2", "X3"]),
            &[(0, 1), (0, 2), (1, 2), (2, 0)],
            ConfoundingSpec::full(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Cycle(_)));
    }

    #[test]
    fn table_summing_below_one_is_rejected() {
        let err = ObservationalTable::new(vec![0.5, 0.48]).unwrap_err();
        assert!(matches!(err, Error::Normalisation { .. }));
        let err = ObservationalTable::new(vec![1.1, -0.1]).unwrap_err();
        assert_eq!(err, Error::NegativeProbability { index: 1, value: -0.1 });
    }

    #[test]
    fn classifier_out_of_range_is_rejected() {
        let m = CausalModel::new(binary(&["A"]), &[], ConfoundingSpec::full()).unwrap();
        let p = ObservationalTable::new(vec![0.5, 0.5]).unwrap();
        let err = validate(&m, &p, &Classifier::Table(vec![0.2, 1.3])).unwrap_err();
        assert_eq!(err, Error::ClassifierRange { index: 1, value: 1.3 });
    }

    #[test]
    fn declaration_order_ties_and_canonicalisation() {
        // C -> A; B and C start ready and leave in declaration order.
        let m = CausalModel::new(binary(&["A", "B", "C"]), &[(2, 0)], ConfoundingSpec::full()).unwrap();
        let names: Vec<&str> = (0..3).map(|i| m.name(i)).collect();
        assert_eq!(names, vec!["B", "C", "A"]);
        assert_eq!(m.parents(2), &[1]);
        assert_eq!(m.declaration_order(), &[1, 2, 0]);
    }

    #[test]
    fn descendant_partition_examples() {
        let m = chain();
        assert_eq!(descendants(&m, &[1]).unwrap(), (vec![2], vec![0]));
        assert_eq!(descendants(&m, &[2]).unwrap(), (vec![], vec![0, 1]));
        assert_eq!(descendants(&m, &[0]).unwrap(), (vec![1, 2], vec![]));
        assert!(descendants(&m, &[5]).is_err());
    }

    #[test]
    fn response_parents_must_precede() {
        let err = CausalModel::new(
            binary(&["X1", "X2"]),
            &[(0, 1)],
            ConfoundingSpec::partial(vec![vec![1], vec![]]),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Domain(_)));
        let full = chain();
        assert_eq!(full.response_parents(2), &[0, 1]);
    }

    #[test]
    fn samples_become_frequencies() {
        let m = CausalModel::new(binary(&["A", "B"]), &[(0, 1)], ConfoundingSpec::full()).unwrap();
        let p = ObservationalTable::from_samples(&m, &[vec![0, 0], vec![1, 1], vec![1, 1], vec![0, 1]])
            .unwrap();
        assert_eq!(p.as_slice(), &[0.25, 0.0, 0.25, 0.5]);
    }

    #[test]
    fn action_rejects_duplicates_and_range() {
        let m = chain();
        assert!(Action::new(&m, &[(1, 1), (1, 0)]).is_err());
        assert!(Action::new(&m, &[(1, 2)]).is_err());
        assert!(Action::new(&m, &[]).is_err());
        let a = Action::new(&m, &[(2, 1), (0, 0)]).unwrap();
        assert_eq!(a.targets(), &[0, 2]);
        assert_eq!(a.value_of(2), Some(1));
        assert_eq!(a.describe(&m), "X1=0,X3=1");
    }

    fn small_dag() -> impl Strategy<Value = (Vec<usize>, Vec<(usize, usize)>)> {
        (1usize..5).prop_flat_map(|n| {
            let cards = proptest::collection::vec(2usize..4, n);
            let edges = proptest::collection::vec((0..n, 0..n), 0..6);
            (cards, edges)
        })
    }

    proptest! {
        #[test]
        fn index_decode_bijection(cards in proptest::collection::vec(2usize..5, 1..5), seed in 0usize..10_000) {
            let size: usize = cards.iter().product();
            let idx = seed % size;
            let digits = decode_index(idx, &cards);
            prop_assert_eq!(canonical_index(&digits, &cards).unwrap(), idx);
        }

        #[test]
        fn descendants_partition_variables((cards, raw_edges) in small_dag(), mask in 1u32..16) {
            let n = cards.len();
            // forward edges only, so the graph is acyclic
            let edges: Vec<(usize, usize)> = raw_edges.into_iter().filter(|(a, b)| a < b).collect();
            let vars = cards.iter().enumerate().map(|(i, &k)| Variable::new(format!("V{i}"), k)).collect();
            let m = CausalModel::new(vars, &edges, ConfoundingSpec::full()).unwrap();
            let targets: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
            prop_assume!(!targets.is_empty());
            let (d, nd) = descendants(&m, &targets).unwrap();
            prop_assert_eq!(targets.len() + d.len() + nd.len(), n);
            let mut all: Vec<usize> = targets.iter().chain(&d).chain(&nd).copied().collect();
            all.sort_unstable();
            all.dedup();
            prop_assert_eq!(all.len(), n);
            for i in 0..n {
                for &p in m.parents(i) {
                    prop_assert!(p < i);
                }
            }
        }
    }
}
