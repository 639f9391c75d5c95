//! Ground-truth discrete SCMs with an explicit exogenous distribution.
//!
//! Everything here is exact summation over the exogenous joint and shares no
//! code with the bounding path beyond the model types, so it can serve as the
//! reference the bounds are checked against.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};

use crate::error::{Error, Result};
use crate::model::{
    checked_product, Action, CausalModel, Classifier, ConfoundingSpec, FactualInstance, ObservationalTable, Variable,
};

/// Tolerance on the normalisation of P_U.
pub const EXOGENOUS_TOLERANCE: f64 = 1e-12;
/// Largest exogenous joint the oracle will enumerate.
pub const MAX_EXOGENOUS_SIZE: usize = 1 << 22;

/// `X_i := f_i(PA_i, U_i)` with an arbitrary joint `P_U`.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthScm {
    model: CausalModel,
    exo_sizes: Vec<usize>,
    /// Joint over U, mixed radix with U_0 least significant.
    p_u: Vec<f64>,
    /// `mechanisms[i][u * C_i + c]` is X_i for noise `u` and parent configuration `c`.
    mechanisms: Vec<Vec<usize>>,
    parent_configs: Vec<usize>,
}

impl GroundTruthScm {
    pub fn new(model: CausalModel, exo_sizes: Vec<usize>, p_u: Vec<f64>, mechanisms: Vec<Vec<usize>>) -> Result<Self> {
        let n = model.len();
        if exo_sizes.len() != n || mechanisms.len() != n {
            return Err(Error::Shape("ground truth must cover every variable".into()));
        }
        if exo_sizes.contains(&0) {
            return Err(Error::Domain("exogenous domains must be non-empty".into()));
        }
        let size = checked_product(exo_sizes.iter().copied())?;
        if size > MAX_EXOGENOUS_SIZE {
            return Err(Error::Capacity(format!("{size} exogenous configurations exceed {MAX_EXOGENOUS_SIZE}")));
        }
        if p_u.len() != size {
            return Err(Error::Shape(format!("P_U has {} entries, expected {size}", p_u.len())));
        }
        if let Some((index, &value)) = p_u.iter().enumerate().find(|(_, v)| v.is_nan() || **v < 0.0) {
            return Err(Error::NegativeProbability { index, value });
        }
        let sum: f64 = p_u.iter().sum();
        if (sum - 1.0).abs() > EXOGENOUS_TOLERANCE {
            return Err(Error::Normalisation { sum });
        }
        let parent_configs: Vec<usize> = (0..n)
            .map(|i| checked_product(model.parents(i).iter().map(|&j| model.cardinality(j))))
            .collect::<Result<_>>()?;
        for i in 0..n {
            if mechanisms[i].len() != exo_sizes[i] * parent_configs[i] {
                return Err(Error::Shape(format!("mechanism for '{}' has the wrong size", model.name(i))));
            }
            if mechanisms[i].iter().any(|&x| x >= model.cardinality(i)) {
                return Err(Error::Domain(format!("mechanism for '{}' leaves its domain", model.name(i))));
            }
        }
        Ok(Self { model, exo_sizes, p_u, mechanisms, parent_configs })
    }

    pub fn model(&self) -> &CausalModel {
        &self.model
    }

    pub fn exo_sizes(&self) -> &[usize] {
        &self.exo_sizes
    }

    pub fn p_u(&self) -> &[f64] {
        &self.p_u
    }

    pub fn mechanisms(&self) -> &[Vec<usize>] {
        &self.mechanisms
    }

    /// Solves the structural equations for noise `u`, with `action` overriding its targets.
    pub fn simulate(&self, u: &[usize], action: Option<&Action>) -> Vec<usize> {
        let mut x = vec![0; self.model.len()];
        for i in 0..self.model.len() {
            if let Some(v) = action.and_then(|a| a.value_of(i)) {
                x[i] = v;
                continue;
            }
            let mut c = 0;
            let mut stride = 1;
            for &j in self.model.parents(i) {
                c += x[j] * stride;
                stride *= self.model.cardinality(j);
            }
            x[i] = self.mechanisms[i][u[i] * self.parent_configs[i] + c];
        }
        x
    }

    fn for_each_u(&self, mut f: impl FnMut(&[usize], f64)) {
        let mut u = vec![0; self.exo_sizes.len()];
        for &mass in &self.p_u {
            f(&u, mass);
            for (d, &k) in u.iter_mut().zip(&self.exo_sizes) {
                *d += 1;
                if *d < k {
                    break;
                }
                *d = 0;
            }
        }
    }

    /// Exact push-forward of P_U through the structural equations.
    pub fn observational_distribution(&self) -> Result<ObservationalTable> {
        let mut p = vec![0.0; self.model.joint_size()?];
        self.for_each_u(|u, mass| {
            let x = self.simulate(u, None);
            p[self.model.index(&x).expect("in range")] += mass;
        });
        ObservationalTable::new(p)
    }

    /// `E[h(X_{do(action)}) | X = x^F]` by abduction, action and prediction.
    /// Without an action this is `h(x^F)`.
    pub fn counterfactual_expectation(
        &self,
        h: &Classifier,
        factual: &FactualInstance,
        action: Option<&Action>,
    ) -> Result<f64> {
        let mut num = 0.0;
        let mut den = 0.0;
        self.for_each_u(|u, mass| {
            if mass > 0.0 && self.simulate(u, None) == factual.values() {
                den += mass;
                num += mass * h.eval(&self.model, &self.simulate(u, action));
            }
        });
        if den <= 0.0 {
            return Err(Error::ZeroFactualProbability);
        }
        Ok(num / den)
    }
}

/// How the random exogenous distribution is drawn.
#[derive(Debug, Clone, PartialEq)]
pub enum OracleConfounding {
    /// Unrestricted joint over U; the model is declared fully confounded.
    Arbitrary,
    /// `P_U = prod_i P(U_i | U_{PA(R_i)})` following the spec, with every
    /// mechanism a distinct response function so the factorisation carries over
    /// to the response variables exactly.
    Factorised(ConfoundingSpec),
}

fn dirichlet(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    let gamma = Gamma::<f64>::new(1.0, 1.0).expect("valid gamma");
    let raw: Vec<f64> = (0..k).map(|_| gamma.sample(rng).max(1e-300)).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

/// Random instance: cardinalities in `2..=max_k`, each forward edge `i -> j`
/// present with probability one half.
pub fn random_instance(seed: u64, n: usize, max_k: usize, confounding: OracleConfounding) -> Result<GroundTruthScm> {
    if !(1..=4).contains(&n) {
        return Err(Error::Guard(format!("random instances support 1 to 4 variables, got {n}")));
    }
    if !(2..=4).contains(&max_k) {
        return Err(Error::Guard(format!("random instances support cardinalities 2 to 4, got {max_k}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cards: Vec<usize> = (0..n).map(|_| rng.random_range(2..=max_k)).collect();
    let mut edges = Vec::new();
    for j in 0..n {
        for i in 0..j {
            if rng.random_bool(0.5) {
                edges.push((i, j));
            }
        }
    }
    instance_with_rng(&mut rng, &cards, &edges, confounding)
}

/// Random instance on a fixed graph; variables are named `X1..Xn`.
pub fn random_instance_on(
    seed: u64,
    cardinalities: &[usize],
    edges: &[(usize, usize)],
    confounding: OracleConfounding,
) -> Result<GroundTruthScm> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    instance_with_rng(&mut rng, cardinalities, edges, confounding)
}

fn instance_with_rng(
    rng: &mut ChaCha8Rng,
    cards: &[usize],
    edges: &[(usize, usize)],
    confounding: OracleConfounding,
) -> Result<GroundTruthScm> {
    let variables = cards.iter().enumerate().map(|(i, &k)| Variable::new(format!("X{}", i + 1), k)).collect();
    let spec = match &confounding {
        OracleConfounding::Arbitrary => ConfoundingSpec::full(),
        OracleConfounding::Factorised(spec) => spec.clone(),
    };
    let model = CausalModel::new(variables, edges, spec)?;
    let n = model.len();
    let configs: Vec<usize> = (0..n)
        .map(|i| checked_product(model.parents(i).iter().map(|&j| model.cardinality(j))))
        .collect::<Result<_>>()?;
    let exo_sizes: Vec<usize> = (0..n)
        .map(|i| {
            u32::try_from(configs[i])
                .ok()
                .and_then(|c| model.cardinality(i).checked_pow(c))
                .ok_or_else(|| Error::Capacity("exogenous domain overflows".into()))
        })
        .collect::<Result<_>>()?;
    let size = checked_product(exo_sizes.iter().copied())?;
    if size > MAX_EXOGENOUS_SIZE {
        return Err(Error::Guard(format!("{size} exogenous configurations exceed {MAX_EXOGENOUS_SIZE}")));
    }
    let (p_u, mechanisms) = match confounding {
        OracleConfounding::Arbitrary => {
            let mechanisms = (0..n)
                .map(|i| (0..exo_sizes[i] * configs[i]).map(|_| rng.random_range(0..model.cardinality(i))).collect())
                .collect();
            (dirichlet(rng, size), mechanisms)
        }
        OracleConfounding::Factorised(_) => {
            let mechanisms: Vec<Vec<usize>> = (0..n)
                .map(|i| {
                    let k = model.cardinality(i);
                    let mut order: Vec<usize> = (0..exo_sizes[i]).collect();
                    order.shuffle(rng);
                    let mut table = vec![0; exo_sizes[i] * configs[i]];
                    for (u, &f) in order.iter().enumerate() {
                        // function number f, read as base-k digits over parent configurations
                        let mut rest = f;
                        for c in 0..configs[i] {
                            table[u * configs[i] + c] = rest % k;
                            rest /= k;
                        }
                    }
                    table
                })
                .collect();
            let conditionals: Vec<Vec<Vec<f64>>> = (0..n)
                .map(|i| {
                    let cols: usize = model.response_parents(i).iter().map(|&j| exo_sizes[j]).product();
                    (0..cols).map(|_| dirichlet(rng, exo_sizes[i])).collect()
                })
                .collect();
            let mut p_u = vec![0.0; size];
            let mut u = vec![0; n];
            for slot in p_u.iter_mut() {
                let mut mass = 1.0;
                for i in 0..n {
                    let mut col = 0;
                    let mut stride = 1;
                    for &j in model.response_parents(i) {
                        col += u[j] * stride;
                        stride *= exo_sizes[j];
                    }
                    mass *= conditionals[i][col][u[i]];
                }
                *slot = mass;
                for (d, &k) in u.iter_mut().zip(&exo_sizes) {
                    *d += 1;
                    if *d < k {
                        break;
                    }
                    *d = 0;
                }
            }
            (p_u, mechanisms)
        }
    };
    GroundTruthScm::new(model, exo_sizes, p_u, mechanisms)
}
