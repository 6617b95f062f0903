//! Multinomial-logit choice model and expected-revenue assortment
//! optimization.
//!
//! Under MNL with no-purchase weight `v0`, an item `k` offered in assortment
//! `S` is chosen with probability `v_k / (v0 + Σ_{j∈S} v_j)`, and the
//! assortment earns `R(S) = Σ_{k∈S} p_k · P(k|S)`.

mod estimate;
mod optimize;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::catalog::CatalogSnapshot;
use crate::constraints::ConstraintSet;

pub use estimate::{estimate_mnl, ClampEvent, EstimationOptions, MnlEstimate, Transaction};
pub use optimize::{brute_force_optimal, brute_force_optimal_with, optimize_assortment, optimize_assortment_with, BRUTE_FORCE_LIMIT};

#[derive(Debug, thiserror::Error)]
pub enum ChoiceError {
    #[error("item `{0}` is not in the assortment")]
    ItemNotOffered(String),
    #[error("unknown item `{0}`")]
    UnknownItem(String),
    #[error("invalid MNL parameters: {0}")]
    InvalidParameters(String),
    #[error("max_cardinality must be at least 1")]
    InvalidCardinality,
    #[error("{size} items pass the filter; exhaustive search is limited to {limit}")]
    TooLarge { size: usize, limit: usize },
    #[error("item `{0}` never appears in an offered set")]
    NeverOffered(String),
    #[error("items chosen every time they are offered, weight unbounded: {items:?}")]
    DegenerateData { items: Vec<String> },
    #[error("transaction {index}: {reason}")]
    InvalidTransaction { index: usize, reason: String },
    #[error("no usable transactions")]
    EmptyTransactions,
    #[error("estimation did not converge after {iterations} iterations (gradient norm {gradient_norm:e})")]
    NotConverged { iterations: usize, gradient_norm: f64 },
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("malformed input: {0}")]
    Malformed(String),
}

/// MNL weights. `v0` is the no-purchase weight; item weights lie in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MnlParameters {
    pub v0: f64,
    pub v: BTreeMap<String, f64>,
}

impl MnlParameters {
    pub fn new(v0: f64, v: impl IntoIterator<Item = (String, f64)>) -> Result<Self, ChoiceError> {
        let params = MnlParameters { v0, v: v.into_iter().collect() };
        params.check()?;
        Ok(params)
    }

    /// Same weight for every catalog item.
    pub fn uniform(catalog: &CatalogSnapshot, weight: f64) -> Self {
        MnlParameters { v0: 1.0, v: catalog.iter().map(|i| (i.item_id.clone(), weight)).collect() }
    }

    pub fn check(&self) -> Result<(), ChoiceError> {
        if !(self.v0.is_finite() && self.v0 > 0.0) {
            return Err(ChoiceError::InvalidParameters(format!("v0 must be positive, got {}", self.v0)));
        }
        for (id, w) in &self.v {
            if !(w.is_finite() && (0.0..=1.0).contains(w)) {
                return Err(ChoiceError::InvalidParameters(format!("weight of `{id}` is {w}, outside [0, 1]")));
            }
        }
        Ok(())
    }

    /// Fails with the first catalog item lacking a weight.
    pub fn check_covers(&self, catalog: &CatalogSnapshot) -> Result<(), ChoiceError> {
        match catalog.iter().find(|i| !self.v.contains_key(&i.item_id)) {
            Some(item) => Err(ChoiceError::UnknownItem(item.item_id.clone())),
            None => Ok(()),
        }
    }

    pub fn weight(&self, item_id: &str) -> Result<f64, ChoiceError> {
        self.v.get(item_id).copied().ok_or_else(|| ChoiceError::UnknownItem(item_id.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self, ChoiceError> {
        let params: MnlParameters = serde_json::from_str(text).map_err(|e| ChoiceError::Malformed(e.to_string()))?;
        params.check()?;
        Ok(params)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ChoiceError> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("parameters encode")
    }
}

/// Limits on the assortments the optimizer may return.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FeasibleSpec {
    #[serde(default)]
    pub constraints: ConstraintSet,
    /// `None` means unbounded.
    #[serde(default)]
    pub max_cardinality: Option<usize>,
}

impl FeasibleSpec {
    pub fn unbounded(constraints: ConstraintSet) -> Self {
        FeasibleSpec { constraints, max_cardinality: None }
    }

    pub fn bounded(constraints: ConstraintSet, max_cardinality: usize) -> Self {
        FeasibleSpec { constraints, max_cardinality: Some(max_cardinality) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assortment {
    pub items: BTreeSet<String>,
    pub revenue: f64,
}

impl Assortment {
    pub fn empty() -> Self {
        Assortment { items: BTreeSet::new(), revenue: 0.0 }
    }
}

/// `v_k / (v0 + Σ_{j∈S} v_j)`.
pub fn mnl_probability(params: &MnlParameters, assortment: &BTreeSet<String>, k: &str) -> Result<f64, ChoiceError> {
    if !assortment.contains(k) {
        return Err(ChoiceError::ItemNotOffered(k.to_string()));
    }
    let mut denom = params.v0;
    for id in assortment {
        denom += params.weight(id)?;
    }
    Ok(params.weight(k)? / denom)
}

/// Weights and prices of a set of catalog positions, summed in position
/// order so that every caller evaluating the same set gets bit-identical
/// revenue.
pub(crate) fn revenue_of(prices: &[f64], weights: &[f64], v0: f64, positions: impl Iterator<Item = usize>) -> f64 {
    let mut numer = 0.0;
    let mut denom = v0;
    for i in positions {
        numer += prices[i] * weights[i];
        denom += weights[i];
    }
    numer / denom
}

/// `Σ_{k∈S} p_k · P(k|S)`; zero for the empty set.
pub fn expected_revenue(params: &MnlParameters, catalog: &CatalogSnapshot, assortment: &BTreeSet<String>) -> Result<f64, ChoiceError> {
    let mut positions = Vec::with_capacity(assortment.len());
    for id in assortment {
        positions.push(catalog.position(id).ok_or_else(|| ChoiceError::UnknownItem(id.clone()))?);
        params.weight(id)?;
    }
    positions.sort_unstable();
    let universe = optimize::Universe::new(params, catalog, positions.iter().copied())?;
    Ok(universe.revenue((0..positions.len()).collect::<Vec<_>>().into_iter()))
}

/// Draws one choice from `offered` under `params`; `None` is no purchase.
pub fn sample_choice<R: Rng + ?Sized>(params: &MnlParameters, offered: &[String], rng: &mut R) -> Result<Option<String>, ChoiceError> {
    let mut total = params.v0;
    for id in offered {
        total += params.weight(id)?;
    }
    let mut u = rng.random::<f64>() * total;
    for id in offered {
        let w = params.weight(id)?;
        if u < w {
            return Ok(Some(id.clone()));
        }
        u -= w;
    }
    Ok(None)
}
