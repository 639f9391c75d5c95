//! Discrete response functions standing in for the exogenous noise.
//!
//! A response index `r_i < K_i^{C_i}` is read as a base-`K_i` numeral with one
//! digit per parent configuration; digit `c` (little-endian) is the value the
//! function assigns to the parent configuration with canonical code `c`.
//! Parent configurations use the mixed-radix code over the parents in ascending
//! variable order. Joint response indices are never materialised as a list.

use crate::error::{Error, Result};
use crate::model::{checked_product, decode_index, Action, CausalModel};

#[derive(Debug, Clone, PartialEq)]
pub struct ResponseSpace {
    cardinalities: Vec<usize>,
    parents: Vec<Vec<usize>>,
    parent_configs: Vec<usize>,
    counts: Vec<usize>,
    total: usize,
    // powers[i][c] = K_i^c
    powers: Vec<Vec<usize>>,
}

fn checked_pow(base: usize, exp: usize) -> Result<usize> {
    let exp = u32::try_from(exp).map_err(|_| Error::Capacity("response exponent too large".into()))?;
    base.checked_pow(exp)
        .ok_or_else(|| Error::Capacity(format!("{base}^{exp} response functions overflow usize")))
}

impl ResponseSpace {
    pub fn new(model: &CausalModel) -> Result<Self> {
        let n = model.len();
        let cardinalities = model.cardinalities();
        let mut parents = Vec::with_capacity(n);
        let mut parent_configs = Vec::with_capacity(n);
        let mut counts = Vec::with_capacity(n);
        let mut powers = Vec::with_capacity(n);
        for i in 0..n {
            let ps = model.parents(i).to_vec();
            let k = cardinalities[i];
            let c = checked_product(ps.iter().map(|&p| cardinalities[p]))?;
            let count = if ps.is_empty() { k } else { checked_pow(k, c)? };
            let pw = (0..c).map(|e| k.pow(e as u32)).collect();
            parents.push(ps);
            parent_configs.push(c);
            counts.push(count);
            powers.push(pw);
        }
        let total = checked_product(counts.iter().copied())?;
        Ok(Self { cardinalities, parents, parent_configs, counts, total, powers })
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// |R_i|.
    pub fn count(&self, i: usize) -> usize {
        self.counts[i]
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn cardinalities(&self) -> &[usize] {
        &self.cardinalities
    }

    /// Number of parent configurations C_i (1 for roots).
    pub fn parent_configs(&self, i: usize) -> usize {
        self.parent_configs[i]
    }

    /// |R|.
    pub fn total(&self) -> usize {
        self.total
    }

    /// Lazily iterates joint response indices.
    pub fn indices(&self) -> std::ops::Range<usize> {
        0..self.total
    }

    pub fn digits(&self, r: usize) -> Vec<usize> {
        decode_index(r, &self.counts)
    }

    pub fn digits_into(&self, mut r: usize, out: &mut [usize]) {
        for (slot, &k) in out.iter_mut().zip(&self.counts) {
            *slot = r % k;
            r /= k;
        }
    }

    /// Code of variable `i`'s parent configuration within `x`.
    pub fn parent_config(&self, i: usize, x: &[usize]) -> usize {
        let mut idx = 0;
        let mut stride = 1;
        for &p in &self.parents[i] {
            idx += x[p] * stride;
            stride *= self.cardinalities[p];
        }
        idx
    }

    /// Output of response function `r_i` of variable `i` at parent configuration `config`.
    #[inline]
    pub fn output(&self, i: usize, r_i: usize, config: usize) -> usize {
        if self.parents[i].is_empty() {
            r_i
        } else {
            (r_i / self.powers[i][config]) % self.cardinalities[i]
        }
    }

    /// Full input-output table of response function `r_i`.
    pub fn function_table(&self, i: usize, r_i: usize) -> Vec<usize> {
        (0..self.parent_configs[i]).map(|c| self.output(i, r_i, c)).collect()
    }

    /// Simulates the SCM under response digits `r`, writing the configuration into `x`.
    pub fn simulate_into(&self, r: &[usize], action: Option<&Action>, x: &mut [usize]) {
        for i in 0..self.len() {
            x[i] = match action.and_then(|a| a.value_of(i)) {
                Some(v) => v,
                None => self.output(i, r[i], self.parent_config(i, x)),
            };
        }
    }

    pub fn simulate(&self, r: &[usize], action: Option<&Action>) -> Vec<usize> {
        let mut x = vec![0; self.len()];
        self.simulate_into(r, action, &mut x);
        x
    }
}

/// |R_i| for variable `i` of `model`.
pub fn response_count(model: &CausalModel, i: usize) -> Result<usize> {
    if i >= model.len() {
        return Err(Error::Domain(format!("variable index {i} out of range")));
    }
    let cards = model.cardinalities();
    let k = cards[i];
    let ps = model.parents(i);
    if ps.is_empty() {
        return Ok(k);
    }
    let c = checked_product(ps.iter().map(|&p| cards[p]))?;
    checked_pow(k, c)
}

/// State of `X_i` produced by response function `r_i` given its parents' states
/// (ascending parent order).
pub fn eval_response(model: &CausalModel, i: usize, r_i: usize, pa_values: &[usize]) -> Result<usize> {
    let count = response_count(model, i)?;
    if r_i >= count {
        return Err(Error::Domain(format!("response index {r_i} out of range 0..{count}")));
    }
    let ps = model.parents(i);
    if pa_values.len() != ps.len() {
        return Err(Error::Domain(format!(
            "expected {} parent values, got {}",
            ps.len(),
            pa_values.len()
        )));
    }
    let pa_cards: Vec<usize> = ps.iter().map(|&p| model.cardinality(p)).collect();
    let config = crate::model::canonical_index(pa_values, &pa_cards)?;
    let k = model.cardinality(i);
    Ok(if ps.is_empty() { r_i } else { (r_i / k.pow(config as u32)) % k })
}

/// Configuration generated by joint response index `r`, optionally under an intervention.
pub fn forward_simulate(space: &ResponseSpace, r: usize, action: Option<&Action>) -> Result<Vec<usize>> {
    if r >= space.total() {
        return Err(Error::Domain(format!("joint response index {r} out of range 0..{}", space.total())));
    }
    Ok(space.simulate(&space.digits(r), action))
}
