//! Model files, query parsing and report emission.
//!
//! A model file is a JSON document. Joint tables (`observational.table`,
//! `classifier.table`) are indexed over configurations in declaration order,
//! first declared variable least significant; they are permuted to the
//! canonical topological order on load. Everything else refers to variables by
//! name.
//!
//! ```json
//! {
//!   "version": 1,
//!   "variables": [{"name": "X1", "cardinality": 2}, {"name": "X2", "cardinality": 2}],
//!   "edges": [["X1", "X2"]],
//!   "confounding": {"mode": "PARTIAL", "response_parents": {"X2": ["X1"]}},
//!   "observational": {"table": [0.25, 0.1, 0.25, 0.4]},
//!   "classifier": {"linear_logit": {"bias": -1.0, "weights": {"X2": 2.0}}},
//!   "actionability": {"variables": {"X2": {"actionable": false}}, "max_size": 2}
//! }
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fc::Method;
use crate::model::{
    canonical_index, Action, CausalModel, Classifier, ConfoundingMode, ConfoundingSpec, FactualInstance,
    ObservationalTable, Variable,
};
use crate::oracle::GroundTruthScm;
use crate::pc::DEFAULT_GRID_RESOLUTION;
use crate::recourse::{
    BoundMode, Bundle, CostModel, Engine, EvalOptions, FeasibilitySpec, Objective, Recommendation, DEFAULT_MAX_ACTIONS,
    DEFAULT_MAX_SIZE, DEFAULT_THRESHOLD,
};

pub const MODEL_FILE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    pub variables: Vec<VariableDecl>,
    /// `[parent, child]` pairs.
    #[serde(default)]
    pub edges: Vec<(String, String)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confounding: Option<ConfoundingDecl>,
    pub observational: ObservationalDecl,
    pub classifier: ClassifierDecl,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub actionability: Option<ActionabilityDecl>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<GroundTruthDecl>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariableDecl {
    pub name: String,
    pub cardinality: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ModeDecl {
    #[serde(alias = "full")]
    Full,
    #[serde(alias = "partial")]
    Partial,
    #[serde(alias = "none")]
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfoundingDecl {
    pub mode: ModeDecl,
    /// Only for `PARTIAL`; variables not listed have no response parents.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub response_parents: BTreeMap<String, Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ObservationalDecl {
    Table(Vec<f64>),
    /// CSV with a header of variable names and one integer state per cell,
    /// relative to the model file's directory.
    SamplesPath(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ClassifierDecl {
    Table(Vec<f64>),
    LinearLogit {
        bias: f64,
        #[serde(default)]
        weights: BTreeMap<String, f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActionabilityDecl {
    /// Per-variable overrides; unlisted variables are actionable to every
    /// state at unit weight and no activation cost.
    #[serde(default)]
    pub variables: BTreeMap<String, VariableActionDecl>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_actions: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariableActionDecl {
    #[serde(default = "yes")]
    pub actionable: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub allowed: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub activation: Option<f64>,
}

fn yes() -> bool {
    true
}

/// Exogenous sizes, joint P_U and mechanism tables, per variable in
/// declaration order, which must then be topological. `mechanisms[i][u * C_i + c]`
/// with `c` the parent configuration, first parent least significant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundTruthDecl {
    pub exo_sizes: Vec<usize>,
    pub p_u: Vec<f64>,
    pub mechanisms: Vec<Vec<usize>>,
}

/// A validated model with its engine built.
#[derive(Debug, Clone)]
pub struct LoadedModel {
    pub engine: Engine,
    pub ground_truth: Option<GroundTruthScm>,
    /// False when the file had no `confounding` section.
    pub confounding_declared: bool,
    pub description: Option<String>,
}

impl LoadedModel {
    pub fn model(&self) -> &CausalModel {
        self.engine.model()
    }
}

/// Reads and validates a model file.
pub fn load_model(path: impl AsRef<Path>) -> Result<LoadedModel> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_model_str(&text, base).map_err(|e| match e {
        Error::Schema(msg) => Error::Schema(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Parses a model document; relative sample paths resolve against `base_dir`.
pub fn parse_model_str(text: &str, base_dir: &Path) -> Result<LoadedModel> {
    let file = parse_model_file(text)?;
    file.into_loaded(base_dir)
}

/// Schema-level parse only. Errors carry the field path and line.
pub fn parse_model_file(text: &str) -> Result<ModelFile> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        if path.is_empty() || path == "." {
            Error::Schema(inner.to_string())
        } else {
            Error::Schema(format!("{path}: {inner}"))
        }
    })
}

fn lookup(model_names: &BTreeMap<&str, usize>, name: &str, field: &str) -> Result<usize> {
    model_names
        .get(name)
        .copied()
        .ok_or_else(|| Error::Schema(format!("{field}: unknown variable '{name}'")))
}

impl ModelFile {
    pub fn into_loaded(self, base_dir: &Path) -> Result<LoadedModel> {
        if self.version != MODEL_FILE_VERSION {
            return Err(Error::Schema(format!(
                "version: unsupported version {}, expected {MODEL_FILE_VERSION}",
                self.version
            )));
        }
        let names: BTreeMap<&str, usize> =
            self.variables.iter().enumerate().map(|(i, v)| (v.name.as_str(), i)).collect();
        let mut edges = Vec::with_capacity(self.edges.len());
        for (k, (p, c)) in self.edges.iter().enumerate() {
            let field = format!("edges[{k}]");
            edges.push((lookup(&names, p, &field)?, lookup(&names, c, &field)?));
        }
        let confounding_declared = self.confounding.is_some();
        let confounding = match &self.confounding {
            None => {
                log::warn!("model file has no confounding section; assuming FULL");
                ConfoundingSpec::full()
            }
            Some(decl) => {
                if decl.mode != ModeDecl::Partial && !decl.response_parents.is_empty() {
                    return Err(Error::Schema(
                        "confounding.response_parents: only allowed with mode PARTIAL".into(),
                    ));
                }
                match decl.mode {
                    ModeDecl::Full => ConfoundingSpec::full(),
                    ModeDecl::None => ConfoundingSpec::none(),
                    ModeDecl::Partial => {
                        let mut sets = vec![Vec::new(); self.variables.len()];
                        for (child, parents) in &decl.response_parents {
                            let field = format!("confounding.response_parents.{child}");
                            let c = lookup(&names, child, &field)?;
                            for p in parents {
                                sets[c].push(lookup(&names, p, &field)?);
                            }
                        }
                        ConfoundingSpec::partial(sets)
                    }
                }
            }
        };
        let variables: Vec<Variable> =
            self.variables.iter().map(|v| Variable::new(v.name.clone(), v.cardinality)).collect();
        let model = CausalModel::new(variables, &edges, confounding)?;
        let codes = declared_codes(&model)?;

        let p = match &self.observational {
            ObservationalDecl::Table(values) => {
                check_len(values.len(), codes.len(), "observational.table")?;
                if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| **v < 0.0) {
                    return Err(Error::NegativeProbability { index, value });
                }
                ObservationalTable::new(codes.iter().map(|&d| values[d]).collect())?
            }
            ObservationalDecl::SamplesPath(rel) => read_samples(&model, &base_dir.join(rel))?,
        };

        let h = match &self.classifier {
            ClassifierDecl::Table(values) => {
                check_len(values.len(), codes.len(), "classifier.table")?;
                if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
                    return Err(Error::ClassifierRange { index, value });
                }
                Classifier::Table(codes.iter().map(|&d| values[d]).collect())
            }
            ClassifierDecl::LinearLogit { bias, weights } => {
                let mut w = vec![0.0; model.len()];
                for (name, &value) in weights {
                    let i = model
                        .index_of(name)
                        .ok_or_else(|| Error::Schema(format!("classifier.linear_logit.weights: unknown variable '{name}'")))?;
                    w[i] = value;
                }
                Classifier::LinearLogit { bias: *bias, weights: w }
            }
        };

        let mut feasibility = FeasibilitySpec::all(&model);
        let mut costs = CostModel::uniform(model.len());
        if let Some(decl) = &self.actionability {
            for (name, v) in &decl.variables {
                let i = model
                    .index_of(name)
                    .ok_or_else(|| Error::Schema(format!("actionability.variables: unknown variable '{name}'")))?;
                feasibility.actionable[i] = v.actionable;
                if let Some(allowed) = &v.allowed {
                    let mut allowed = allowed.clone();
                    allowed.sort_unstable();
                    allowed.dedup();
                    feasibility.allowed[i] = allowed;
                }
                if let Some(w) = v.weight {
                    costs.weights[i] = w;
                }
                if let Some(a) = v.activation {
                    costs.activation[i] = a;
                }
            }
            feasibility.max_size = decl.max_size.unwrap_or(DEFAULT_MAX_SIZE);
            feasibility.max_actions = decl.max_actions.unwrap_or(DEFAULT_MAX_ACTIONS);
        }

        let ground_truth = match self.ground_truth {
            None => None,
            Some(gt) => {
                if model.declaration_order().iter().enumerate().any(|(k, &d)| k != d) {
                    return Err(Error::Schema(
                        "ground_truth: variables must be declared in topological order".into(),
                    ));
                }
                Some(GroundTruthScm::new(model.clone(), gt.exo_sizes, gt.p_u, gt.mechanisms)?)
            }
        };

        let bundle = Bundle::new(model, p, h, feasibility, costs)?;
        Ok(LoadedModel {
            engine: Engine::new(bundle)?,
            ground_truth,
            confounding_declared,
            description: self.description,
        })
    }

    /// Model file for a bundle, variables written in canonical order.
    pub fn from_bundle(bundle: &Bundle, ground_truth: Option<&GroundTruthScm>, description: Option<String>) -> Self {
        let model = &bundle.model;
        let n = model.len();
        let name = |i: usize| model.name(i).to_string();
        let edges = (0..n).flat_map(|c| model.parents(c).iter().map(move |&p| (p, c))).map(|(p, c)| (name(p), name(c)));
        let confounding = match model.confounding_mode() {
            ConfoundingMode::Full => ConfoundingDecl { mode: ModeDecl::Full, response_parents: BTreeMap::new() },
            ConfoundingMode::None => ConfoundingDecl { mode: ModeDecl::None, response_parents: BTreeMap::new() },
            ConfoundingMode::Partial => ConfoundingDecl {
                mode: ModeDecl::Partial,
                response_parents: (0..n)
                    .filter(|&i| !model.response_parents(i).is_empty())
                    .map(|i| (name(i), model.response_parents(i).iter().map(|&j| name(j)).collect()))
                    .collect(),
            },
        };
        let classifier = match &bundle.h {
            Classifier::Table(values) => ClassifierDecl::Table(values.clone()),
            Classifier::LinearLogit { bias, weights } => ClassifierDecl::LinearLogit {
                bias: *bias,
                weights: weights.iter().enumerate().filter(|(_, w)| **w != 0.0).map(|(i, &w)| (name(i), w)).collect(),
            },
        };
        let actionability = ActionabilityDecl {
            variables: (0..n)
                .map(|i| {
                    let decl = VariableActionDecl {
                        actionable: bundle.feasibility.actionable[i],
                        allowed: Some(bundle.feasibility.allowed[i].clone()),
                        weight: Some(bundle.costs.weights[i]),
                        activation: Some(bundle.costs.activation[i]),
                    };
                    (name(i), decl)
                })
                .collect(),
            max_size: Some(bundle.feasibility.max_size),
            max_actions: Some(bundle.feasibility.max_actions),
        };
        Self {
            version: MODEL_FILE_VERSION,
            description,
            variables: model
                .variables()
                .iter()
                .map(|v| VariableDecl { name: v.name.clone(), cardinality: v.cardinality })
                .collect(),
            edges: edges.collect(),
            confounding: Some(confounding),
            observational: ObservationalDecl::Table(bundle.p.as_slice().to_vec()),
            classifier,
            actionability: Some(actionability),
            ground_truth: ground_truth.map(|gt| GroundTruthDecl {
                exo_sizes: gt.exo_sizes().to_vec(),
                p_u: gt.p_u().to_vec(),
                mechanisms: gt.mechanisms().to_vec(),
            }),
        }
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("model files always serialise")
    }
}

fn check_len(got: usize, want: usize, field: &str) -> Result<()> {
    if got != want {
        return Err(Error::Schema(format!("{field}: {got} entries, the model has {want} configurations")));
    }
    Ok(())
}

/// For each canonical joint code, the code of the same configuration in
/// declaration order.
fn declared_codes(model: &CausalModel) -> Result<Vec<usize>> {
    let order = model.declaration_order();
    let mut cards = vec![0; model.len()];
    for (k, &d) in order.iter().enumerate() {
        cards[d] = model.cardinality(k);
    }
    let mut declared = vec![0; model.len()];
    (0..model.joint_size()?)
        .map(|code| {
            for (k, v) in model.decode(code).into_iter().enumerate() {
                declared[order[k]] = v;
            }
            canonical_index(&declared, &cards)
        })
        .collect()
}

fn read_samples(model: &CausalModel, path: &Path) -> Result<ObservationalTable> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let headers = reader.headers().map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?.clone();
    let columns: Vec<usize> = headers
        .iter()
        .map(|h| {
            model
                .index_of(h)
                .ok_or_else(|| Error::Schema(format!("{}: unknown column '{h}'", path.display())))
        })
        .collect::<Result<_>>()?;
    let mut seen = vec![false; model.len()];
    for &c in &columns {
        if std::mem::replace(&mut seen[c], true) {
            return Err(Error::Schema(format!("{}: column '{}' repeated", path.display(), model.name(c))));
        }
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(Error::Schema(format!("{}: no column for '{}'", path.display(), model.name(missing))));
    }
    let mut samples = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?;
        let mut row = vec![0; model.len()];
        for (cell, &c) in record.iter().zip(&columns) {
            row[c] = cell.parse().map_err(|_| {
                Error::Schema(format!("{}: line {}: '{cell}' is not a state code", path.display(), line + 2))
            })?;
            if row[c] >= model.cardinality(c) {
                return Err(Error::Schema(format!(
                    "{}: line {}: state {} out of range for '{}'",
                    path.display(),
                    line + 2,
                    row[c],
                    model.name(c)
                )));
            }
        }
        samples.push(row);
    }
    ObservationalTable::from_samples(model, &samples)
}

/// A variable assignment given either as `"X1=0,X2=1"` or as a name → state map.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Assignment {
    Text(String),
    Values(BTreeMap<String, usize>),
}

impl Assignment {
    /// `(variable, state)` pairs in canonical indices, in the order given.
    pub fn resolve(&self, model: &CausalModel) -> Result<Vec<(usize, usize)>> {
        let pairs: Vec<(String, usize)> = match self {
            Assignment::Text(text) => parse_pairs(text)?,
            Assignment::Values(map) => map.iter().map(|(k, &v)| (k.clone(), v)).collect(),
        };
        let mut out = Vec::with_capacity(pairs.len());
        for (name, value) in pairs {
            let i = model.index_of(&name).ok_or_else(|| Error::Domain(format!("unknown variable '{name}'")))?;
            if value >= model.cardinality(i) {
                return Err(Error::Domain(format!(
                    "state {value} out of range for '{name}' (cardinality {})",
                    model.cardinality(i)
                )));
            }
            if out.iter().any(|&(j, _)| j == i) {
                return Err(Error::Domain(format!("variable '{name}' assigned twice")));
            }
            out.push((i, value));
        }
        Ok(out)
    }

    pub fn factual(&self, model: &CausalModel) -> Result<FactualInstance> {
        let pairs = self.resolve(model)?;
        let mut values = vec![usize::MAX; model.len()];
        for (i, v) in pairs {
            values[i] = v;
        }
        if let Some(missing) = values.iter().position(|&v| v == usize::MAX) {
            return Err(Error::Domain(format!("factual does not assign '{}'", model.name(missing))));
        }
        FactualInstance::new(model, values)
    }

    pub fn action(&self, model: &CausalModel) -> Result<Action> {
        Action::new(model, &self.resolve(model)?)
    }
}

impl From<&str> for Assignment {
    fn from(text: &str) -> Self {
        Assignment::Text(text.to_string())
    }
}

fn parse_pairs(text: &str) -> Result<Vec<(String, usize)>> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|part| {
            let (name, value) = part
                .split_once('=')
                .ok_or_else(|| Error::Domain(format!("'{part}' is not of the form NAME=STATE")))?;
            let value = value
                .trim()
                .parse()
                .map_err(|_| Error::Domain(format!("'{}' is not a state code", value.trim())))?;
            Ok((name.trim().to_string(), value))
        })
        .collect()
}

/// Canonical text form of a full configuration.
pub fn describe_factual(model: &CausalModel, factual: &FactualInstance) -> String {
    factual
        .values()
        .iter()
        .enumerate()
        .map(|(i, v)| format!("{}={v}", model.name(i)))
        .collect::<Vec<_>>()
        .join(",")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsQuery {
    pub factual: Assignment,
    pub action: Assignment,
    #[serde(default)]
    pub mode: BoundMode,
    #[serde(default)]
    pub objective: Objective,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_resolution: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecourseQuery {
    pub factual: Assignment,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default)]
    pub epsilon: f64,
    #[serde(default)]
    pub mode: BoundMode,
    #[serde(default)]
    pub objective: Objective,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_resolution: Option<f64>,
}

fn default_threshold() -> f64 {
    DEFAULT_THRESHOLD
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsReport {
    pub factual: String,
    pub action: String,
    pub mode: BoundMode,
    pub objective: Objective,
    pub lb: f64,
    pub ub: f64,
    pub certified: bool,
    pub method: Method,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cost: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionReport {
    pub action: String,
    pub cost: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lb: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ub: Option<f64>,
    pub certified: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<Method>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecourseReport {
    pub factual: String,
    pub mode: BoundMode,
    pub objective: Objective,
    pub threshold: f64,
    pub epsilon: f64,
    /// Index into `actions`; null when no action is certified to succeed.
    pub chosen: Option<usize>,
    pub truncated: bool,
    /// Cheapest first.
    pub actions: Vec<ActionReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub factual: String,
    pub action: String,
    pub value: f64,
}

fn eval_options(loaded: &LoadedModel, mode: BoundMode, objective: Objective, resolution: Option<f64>) -> Result<EvalOptions> {
    if mode == BoundMode::Pc && !loaded.confounding_declared {
        return Err(Error::Schema("PC mode needs an explicit confounding section in the model file".into()));
    }
    Ok(EvalOptions { grid_resolution: Some(resolution.unwrap_or(DEFAULT_GRID_RESOLUTION)), ..EvalOptions::new(mode, objective) })
}

pub fn run_bounds(loaded: &LoadedModel, query: &BoundsQuery) -> Result<BoundsReport> {
    let model = loaded.model();
    let options = eval_options(loaded, query.mode, query.objective, query.grid_resolution)?;
    let factual = query.factual.factual(model)?;
    let action = query.action.action(model)?;
    let b = loaded.engine.bounds(&factual, &action, &options)?;
    Ok(BoundsReport {
        factual: describe_factual(model, &factual),
        action: action.describe(model),
        mode: query.mode,
        objective: query.objective,
        lb: b.lb,
        ub: b.ub,
        certified: b.certified,
        method: b.method,
        cost: Some(loaded.engine.cost(&factual, &action)),
    })
}

pub fn run_recourse(loaded: &LoadedModel, query: &RecourseQuery) -> Result<RecourseReport> {
    let model = loaded.model();
    if !query.threshold.is_finite() || !query.epsilon.is_finite() || query.epsilon < 0.0 {
        return Err(Error::Domain("threshold must be finite and epsilon finite and non-negative".into()));
    }
    let options = eval_options(loaded, query.mode, query.objective, query.grid_resolution)?;
    let factual = query.factual.factual(model)?;
    let rec = loaded.engine.recourse(&factual, &options, query.threshold, query.epsilon)?;
    Ok(recourse_report(model, &factual, query.mode, query.objective, &rec))
}

pub fn recourse_report(
    model: &CausalModel,
    factual: &FactualInstance,
    mode: BoundMode,
    objective: Objective,
    rec: &Recommendation,
) -> RecourseReport {
    let actions = rec
        .ranked
        .iter()
        .map(|e| match &e.result {
            Ok(b) => ActionReport {
                action: e.action.describe(model),
                cost: e.cost,
                lb: Some(b.lb),
                ub: Some(b.ub),
                certified: b.certified,
                method: Some(b.method),
                error: None,
            },
            Err(err) => ActionReport {
                action: e.action.describe(model),
                cost: e.cost,
                lb: None,
                ub: None,
                certified: false,
                method: None,
                error: Some(err.to_string()),
            },
        })
        .collect();
    RecourseReport {
        factual: describe_factual(model, factual),
        mode,
        objective,
        threshold: rec.threshold,
        epsilon: rec.epsilon,
        chosen: rec.chosen,
        truncated: rec.truncated,
        actions,
    }
}

pub fn run_oracle(loaded: &LoadedModel, factual: &Assignment, action: &Assignment) -> Result<OracleReport> {
    let scm = loaded
        .ground_truth
        .as_ref()
        .ok_or_else(|| Error::Schema("model file has no ground_truth section".into()))?;
    let model = loaded.model();
    let factual = factual.factual(model)?;
    let action = action.action(model)?;
    let value = scm.counterfactual_expectation(&loaded.engine.bundle().h, &factual, Some(&action))?;
    Ok(OracleReport { factual: describe_factual(model, &factual), action: action.describe(model), value })
}

fn yes_no(flag: bool) -> &'static str {
    if flag {
        "yes"
    } else {
        "no"
    }
}

fn opt6(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.6}"))
}

pub fn format_bounds_table(r: &BoundsReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "factual    {}", r.factual);
    let _ = writeln!(out, "action     {}", r.action);
    let _ = writeln!(out, "lb         {:.6}", r.lb);
    let _ = writeln!(out, "ub         {:.6}", r.ub);
    let _ = writeln!(out, "certified  {}", yes_no(r.certified));
    let _ = writeln!(out, "method     {}", r.method.as_str());
    if let Some(cost) = r.cost {
        let _ = writeln!(out, "cost       {cost:.6}");
    }
    out
}

pub fn format_recourse_table(r: &RecourseReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "factual {}  threshold {:.6}  epsilon {:.6}", r.factual, r.threshold, r.epsilon);
    let width = r.actions.iter().map(|a| a.action.len()).max().unwrap_or(6).max(6);
    let _ = writeln!(out, "  {:<width$}  {:>10}  {:>10}  {:>10}  {:>9}  method", "action", "cost", "lb", "ub", "certified");
    for (k, a) in r.actions.iter().enumerate() {
        let mark = if r.chosen == Some(k) { '*' } else { ' ' };
        let method = match (&a.method, &a.error) {
            (Some(m), _) => m.as_str().to_string(),
            (None, Some(err)) => format!("error: {err}"),
            (None, None) => "-".to_string(),
        };
        let _ = writeln!(
            out,
            "{mark} {:<width$}  {:>10.6}  {:>10}  {:>10}  {:>9}  {method}",
            a.action,
            a.cost,
            opt6(a.lb),
            opt6(a.ub),
            yes_no(a.certified)
        );
    }
    match r.chosen {
        Some(k) => {
            let _ = writeln!(out, "chosen  {}", r.actions[k].action);
        }
        None => {
            let _ = writeln!(out, "chosen  none (no action is certified above the threshold)");
        }
    }
    if r.truncated {
        let _ = writeln!(out, "note    action list truncated at the configured cap");
    }
    out
}

pub fn format_oracle_table(r: &OracleReport) -> String {
    format!("factual    {}\naction     {}\nvalue      {:.6}\n", r.factual, r.action, r.value)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    pub variables: Vec<String>,
    pub confounding: ModeDecl,
    pub has_ground_truth: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableSchema {
    pub name: String,
    pub cardinality: usize,
    pub parents: Vec<String>,
    pub actionable: bool,
    pub allowed: Vec<usize>,
    pub weight: f64,
    pub activation: f64,
}

/// What a client needs to build queries against a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSchema {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    /// Canonical (topological) order.
    pub variables: Vec<VariableSchema>,
    pub confounding: ConfoundingDecl,
    pub confounding_declared: bool,
    pub max_size: usize,
    pub max_actions: usize,
    pub has_ground_truth: bool,
}

fn mode_decl(mode: ConfoundingMode) -> ModeDecl {
    match mode {
        ConfoundingMode::Full => ModeDecl::Full,
        ConfoundingMode::Partial => ModeDecl::Partial,
        ConfoundingMode::None => ModeDecl::None,
    }
}

pub fn model_summary(id: &str, loaded: &LoadedModel) -> ModelSummary {
    let model = loaded.model();
    ModelSummary {
        id: id.to_string(),
        description: loaded.description.clone(),
        variables: model.variables().iter().map(|v| v.name.clone()).collect(),
        confounding: mode_decl(model.confounding_mode()),
        has_ground_truth: loaded.ground_truth.is_some(),
    }
}

pub fn model_schema(id: &str, loaded: &LoadedModel) -> ModelSchema {
    let bundle = loaded.engine.bundle();
    let file = ModelFile::from_bundle(bundle, None, None);
    let model = &bundle.model;
    ModelSchema {
        id: id.to_string(),
        description: loaded.description.clone(),
        variables: (0..model.len())
            .map(|i| VariableSchema {
                name: model.name(i).to_string(),
                cardinality: model.cardinality(i),
                parents: model.parents(i).iter().map(|&j| model.name(j).to_string()).collect(),
                actionable: bundle.feasibility.actionable[i],
                allowed: bundle.feasibility.allowed[i].clone(),
                weight: bundle.costs.weights[i],
                activation: bundle.costs.activation[i],
            })
            .collect(),
        confounding: file.confounding.expect("exported files declare confounding"),
        confounding_declared: loaded.confounding_declared,
        max_size: bundle.feasibility.max_size,
        max_actions: bundle.feasibility.max_actions,
        has_ground_truth: loaded.ground_truth.is_some(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::recourse::Evaluated;
    use proptest::prelude::*;

    const TWO_NODE: &str = r#"{
        "version": 1,
        "variables": [{"name": "X1", "cardinality": 2}, {"name": "X2", "cardinality": 2}],
        "edges": [["X1", "X2"]],
        "confounding": {"mode": "NONE"},
        "observational": {"table": [0.25, 0.1, 0.25, 0.4]},
        "classifier": {"table": [0, 0, 1, 1]}
    }"#;

    fn load(text: &str) -> Result<LoadedModel> {
        parse_model_str(text, Path::new("."))
    }

    #[test]
    fn two_node_bounds_through_the_file_format() {
        let loaded = load(TWO_NODE).unwrap();
        let q = BoundsQuery {
            factual: "X1=0,X2=0".into(),
            action: "X1=1".into(),
            mode: BoundMode::Fc,
            objective: Objective::Expected,
            grid_resolution: None,
        };
        let r = run_bounds(&loaded, &q).unwrap();
        assert!(r.lb.abs() < 1e-9 && (r.ub - 1.0).abs() < 1e-9);
        assert_eq!(r.method, Method::FcLp);
        let pc = run_bounds(&loaded, &BoundsQuery { mode: BoundMode::Pc, ..q }).unwrap();
        assert!((pc.lb - 0.6).abs() <= 0.05 && (pc.ub - 1.0).abs() <= 0.05, "{pc:?}");
    }

    #[test]
    fn declaration_order_tables_are_permuted() {
        // X2 declared first but is the child: file tables are X2-fastest.
        let text = r#"{
            "version": 1,
            "variables": [{"name": "X2", "cardinality": 2}, {"name": "X1", "cardinality": 3}],
            "edges": [["X1", "X2"]],
            "observational": {"table": [0.1, 0.2, 0.05, 0.15, 0.3, 0.2]},
            "classifier": {"table": [0.0, 0.1, 0.2, 0.3, 0.4, 0.5]}
        }"#;
        let loaded = load(text).unwrap();
        let m = loaded.model();
        assert_eq!(m.name(0), "X1");
        let b = loaded.engine.bundle();
        for x1 in 0..3 {
            for x2 in 0..2 {
                let file = x2 + 2 * x1;
                let canon = m.index(&[x1, x2]).unwrap();
                let Classifier::Table(h) = &b.h else { panic!() };
                assert_eq!(h[canon], [0.0, 0.1, 0.2, 0.3, 0.4, 0.5][file]);
                assert_eq!(b.p.get(canon), [0.1, 0.2, 0.05, 0.15, 0.3, 0.2][file]);
            }
        }
        assert!(!loaded.confounding_declared);
        assert_eq!(m.confounding_mode(), ConfoundingMode::Full);
    }

    #[test]
    fn schema_errors_name_the_field() {
        let bad = TWO_NODE.replace("\"cardinality\": 2}, {", "\"cardinality\": 2, \"colour\": 1}, {");
        let Err(Error::Schema(msg)) = load(&bad) else { panic!("unknown field accepted") };
        assert!(msg.contains("variables[0]") && msg.contains("colour") && msg.contains("line"), "{msg}");

        let neg = TWO_NODE.replace("[0.25, 0.1, 0.25, 0.4]", "[0.25, 0.1, -0.25, 0.9]");
        assert_eq!(load(&neg).unwrap_err(), Error::NegativeProbability { index: 2, value: -0.25 });

        let unknown = TWO_NODE.replace("[[\"X1\", \"X2\"]]", "[[\"X1\", \"X9\"]]");
        let Err(Error::Schema(msg)) = load(&unknown) else { panic!() };
        assert!(msg.contains("edges[0]") && msg.contains("X9"), "{msg}");

        let version = TWO_NODE.replace("\"version\": 1", "\"version\": 7");
        assert!(matches!(load(&version), Err(Error::Schema(_))));
    }

    #[test]
    fn pc_needs_declared_confounding() {
        let text = TWO_NODE.replace("\"confounding\": {\"mode\": \"NONE\"},", "");
        let loaded = load(&text).unwrap();
        let q = BoundsQuery {
            factual: "X1=0,X2=0".into(),
            action: "X1=1".into(),
            mode: BoundMode::Pc,
            objective: Objective::Expected,
            grid_resolution: None,
        };
        assert!(matches!(run_bounds(&loaded, &q), Err(Error::Schema(_))));
    }

    #[test]
    fn samples_file_is_relative_to_the_model() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("s.csv"), "X2, X1\n0,0\n1,1\n1,1\n0,1\n").unwrap();
        let text = TWO_NODE.replace("{\"table\": [0.25, 0.1, 0.25, 0.4]}", "{\"samples_path\": \"s.csv\"}");
        let path = dir.path().join("m.json");
        std::fs::write(&path, text).unwrap();
        let loaded = load_model(&path).unwrap();
        let m = loaded.model();
        let p = &loaded.engine.bundle().p;
        assert_eq!(p.get(m.index(&[0, 0]).unwrap()), 0.25);
        assert_eq!(p.get(m.index(&[1, 1]).unwrap()), 0.5);
        assert_eq!(p.get(m.index(&[1, 0]).unwrap()), 0.25);
    }

    #[test]
    fn assignments() {
        let loaded = load(TWO_NODE).unwrap();
        let m = loaded.model();
        let a = Assignment::from(" X2 = 1 , X1=0").factual(m).unwrap();
        assert_eq!(a.values(), &[0, 1]);
        let map: Assignment = serde_json::from_str(r#"{"X1": 1}"#).unwrap();
        assert_eq!(map.action(m).unwrap().describe(m), "X1=1");
        assert!(Assignment::from("X1=0").factual(m).is_err());
        assert!(Assignment::from("X1=2").action(m).is_err());
        assert!(Assignment::from("X1").action(m).is_err());
        assert!(Assignment::from("X1=1,X1=0").action(m).is_err());
    }

    #[test]
    fn table_and_json_agree_to_six_decimals() {
        let loaded = load(TWO_NODE).unwrap();
        let q = RecourseQuery {
            factual: "X1=0,X2=0".into(),
            threshold: 0.5,
            epsilon: 0.0,
            mode: BoundMode::Fc,
            objective: Objective::Expected,
            grid_resolution: None,
        };
        let r = run_recourse(&loaded, &q).unwrap();
        let table = format_recourse_table(&r);
        for a in &r.actions {
            assert!(table.contains(&format!("{:.6}", a.cost)));
            assert!(table.contains(&format!("{:.6}", a.lb.unwrap())));
            assert!(table.contains(&format!("{:.6}", a.ub.unwrap())));
        }
    }

    fn arb_method() -> impl Strategy<Value = Method> {
        prop_oneof![Just(Method::FcLp), Just(Method::PcLocal), Just(Method::PcGrid), Just(Method::Point)]
    }

    fn arb_mode() -> impl Strategy<Value = BoundMode> {
        prop_oneof![Just(BoundMode::Fc), Just(BoundMode::Pc)]
    }

    fn arb_objective() -> impl Strategy<Value = Objective> {
        prop_oneof![Just(Objective::Expected), Just(Objective::Worst)]
    }

    fn arb_action_report() -> impl Strategy<Value = ActionReport> {
        (
            "[A-Z][0-9]=[0-3]",
            0.0..10.0f64,
            proptest::option::of((0.0..1.0f64, 0.0..1.0f64)),
            any::<bool>(),
            arb_method(),
        )
            .prop_map(|(action, cost, bounds, certified, method)| match bounds {
                Some((lb, ub)) => ActionReport {
                    action,
                    cost,
                    lb: Some(lb),
                    ub: Some(ub),
                    certified,
                    method: Some(method),
                    error: None,
                },
                None => ActionReport {
                    action,
                    cost,
                    lb: None,
                    ub: None,
                    certified: false,
                    method: None,
                    error: Some("guard exceeded: too big".into()),
                },
            })
    }

    proptest! {
        #[test]
        fn bounds_report_round_trips(
            lb in 0.0..1.0f64, ub in 0.0..1.0f64, certified in any::<bool>(), method in arb_method(),
            mode in arb_mode(), objective in arb_objective(), cost in proptest::option::of(0.0..100.0f64),
        ) {
            let r = BoundsReport {
                factual: "X1=0,X2=1".into(), action: "X1=1".into(), mode, objective,
                lb, ub, certified, method, cost,
            };
            let back: BoundsReport = serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
            prop_assert_eq!(back, r);
        }

        #[test]
        fn recourse_report_round_trips(
            actions in proptest::collection::vec(arb_action_report(), 0..6),
            threshold in 0.0..1.0f64, epsilon in 0.0..0.2f64, truncated in any::<bool>(),
            pick in any::<prop::sample::Index>(), mode in arb_mode(), objective in arb_objective(),
        ) {
            let chosen = if actions.is_empty() { None } else { Some(pick.index(actions.len())) };
            let r = RecourseReport {
                factual: "X1=0".into(), mode, objective, threshold, epsilon, chosen, truncated, actions,
            };
            let back: RecourseReport = serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
            prop_assert_eq!(back, r);
        }

        #[test]
        fn oracle_report_round_trips(value in 0.0..1.0f64) {
            let r = OracleReport { factual: "A=1".into(), action: "B=0".into(), value };
            let back: OracleReport = serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
            prop_assert_eq!(back, r);
        }

        #[test]
        fn model_files_round_trip(seed in 0u64..500, n in 1usize..4, weight in 0.0..3.0f64) {
            use crate::oracle::{random_instance, OracleConfounding};
            let scm = random_instance(seed, n, 3, OracleConfounding::Arbitrary).unwrap();
            let model = scm.model().clone();
            let p = scm.observational_distribution().unwrap();
            let h = if seed % 2 == 0 {
                Classifier::indicator(&model, model.len() - 1).unwrap()
            } else {
                Classifier::LinearLogit { bias: -0.5, weights: (0..model.len()).map(|i| i as f64 * 0.75).collect() }
            };
            let mut costs = CostModel::uniform(model.len());
            costs.weights[0] = weight;
            let bundle = Bundle::new(model.clone(), p, h, FeasibilitySpec::all(&model), costs).unwrap();
            let file = ModelFile::from_bundle(&bundle, Some(&scm), Some("round trip".into()));
            let text = file.to_json_pretty();
            prop_assert_eq!(&parse_model_file(&text).unwrap(), &file);
            let loaded = parse_model_str(&text, Path::new(".")).unwrap();
            let b = loaded.engine.bundle();
            prop_assert_eq!(&b.model, &bundle.model);
            prop_assert_eq!(&b.p, &bundle.p);
            prop_assert_eq!(&b.h, &bundle.h);
            prop_assert_eq!(&b.feasibility, &bundle.feasibility);
            prop_assert_eq!(&b.costs, &bundle.costs);
            prop_assert_eq!(loaded.ground_truth.as_ref(), Some(&scm));
        }
    }

    #[test]
    fn error_rows_rank_last_in_reports() {
        let loaded = load(TWO_NODE).unwrap();
        let m = loaded.model();
        let xf = FactualInstance::new(m, vec![0, 0]).unwrap();
        let ok = Evaluated {
            action: Action::new(m, &[(0, 1)]).unwrap(),
            cost: 5.0,
            result: Ok(crate::fc::BoundsResult::point(0.9)),
        };
        let bad = Evaluated { action: Action::new(m, &[(1, 1)]).unwrap(), cost: 1.0, result: Err(Error::Guard("x".into())) };
        let rec = crate::recourse::recommend(vec![bad, ok], 0.5, 0.0);
        let r = recourse_report(m, &xf, BoundMode::Fc, Objective::Expected, &rec);
        assert_eq!(r.actions[0].action, "X1=1");
        assert_eq!(r.chosen, Some(0));
        assert!(r.actions[1].error.is_some() && r.actions[1].lb.is_none());
    }
}
