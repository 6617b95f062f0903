use std::collections::{BTreeMap, BTreeSet, HashMap};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{ChoiceError, MnlParameters};

/// One observed choice: the items on offer and what was picked (`None` for
/// no purchase).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transaction {
    pub offered: Vec<String>,
    pub chosen: Option<String>,
}

impl Transaction {
    pub fn parse_jsonl(text: &str) -> Result<Vec<Transaction>, ChoiceError> {
        text.lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| serde_json::from_str(l).map_err(|e| ChoiceError::Malformed(format!("line {}: {e}", i + 1))))
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct EstimationOptions {
    /// Stop once the log-likelihood gradient (with respect to log-weights)
    /// has Euclidean norm at most this.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Items that must receive a weight. Defaults to every offered item.
    pub universe: Option<Vec<String>>,
}

impl Default for EstimationOptions {
    fn default() -> Self {
        EstimationOptions { tolerance: 1e-8, max_iterations: 500, universe: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClampEvent {
    pub item_id: String,
    pub raw_weight: f64,
    pub clamped_to: f64,
}

#[derive(Debug, Clone)]
pub struct MnlEstimate {
    pub params: MnlParameters,
    /// Weights moved into `[MIN_WEIGHT, 1]`.
    pub clamped: Vec<ClampEvent>,
    pub iterations: usize,
    pub gradient_norm: f64,
    pub log_likelihood: f64,
}

const MIN_WEIGHT: f64 = 1e-9;
const MAX_LOG_WEIGHT: f64 = 40.0;
const MAX_STEP: f64 = 5.0;
const DENSE_LIMIT: usize = 300;

struct Problem {
    items: Vec<String>,
    /// Distinct offered sets (indices into `items`) with their multiplicity.
    groups: Vec<(Vec<usize>, f64)>,
    chosen: Vec<f64>,
    free: Vec<usize>,
}

impl Problem {
    fn build(transactions: &[Transaction], opts: &EstimationOptions) -> Result<(Problem, Vec<usize>), ChoiceError> {
        let mut names: BTreeSet<String> = BTreeSet::new();
        for (index, t) in transactions.iter().enumerate() {
            let distinct: BTreeSet<&String> = t.offered.iter().collect();
            if distinct.len() != t.offered.len() {
                return Err(ChoiceError::InvalidTransaction { index, reason: "offered set repeats an item".into() });
            }
            if let Some(c) = &t.chosen {
                if !distinct.contains(c) {
                    return Err(ChoiceError::InvalidTransaction { index, reason: format!("chosen item `{c}` was not offered") });
                }
            }
            names.extend(t.offered.iter().cloned());
        }
        if let Some(universe) = &opts.universe {
            for id in universe {
                if !names.contains(id) {
                    return Err(ChoiceError::NeverOffered(id.clone()));
                }
            }
        }
        let items: Vec<String> = names.into_iter().collect();
        if items.is_empty() {
            return Err(ChoiceError::EmptyTransactions);
        }
        let index: HashMap<&str, usize> = items.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
        let mut group_counts: BTreeMap<Vec<usize>, f64> = BTreeMap::new();
        let mut chosen = vec![0.0; items.len()];
        for t in transactions {
            let mut members: Vec<usize> = t.offered.iter().map(|id| index[id.as_str()]).collect();
            members.sort_unstable();
            if let Some(c) = &t.chosen {
                chosen[index[c.as_str()]] += 1.0;
            }
            *group_counts.entry(members).or_insert(0.0) += 1.0;
        }
        let degenerate = unbeaten(items.len(), transactions, &index, &chosen);
        if !degenerate.is_empty() {
            return Err(ChoiceError::DegenerateData { items: degenerate.into_iter().map(|i| items[i].clone()).collect() });
        }
        let never_chosen: Vec<usize> = (0..items.len()).filter(|&i| chosen[i] == 0.0).collect();
        let free: Vec<usize> = (0..items.len()).filter(|&i| chosen[i] > 0.0).collect();
        let groups = group_counts.into_iter().filter(|(m, _)| !m.is_empty()).collect();
        Ok((Problem { items, groups, chosen, free }, never_chosen))
    }

    fn log_likelihood(&self, theta: &[f64]) -> f64 {
        let linear: f64 = self.chosen.iter().zip(theta).map(|(c, t)| c * t).sum();
        let partition: f64 = self
            .groups
            .iter()
            .map(|(members, n)| n * (1.0 + members.iter().map(|&j| theta[j].exp()).sum::<f64>()).ln())
            .sum();
        linear - partition
    }

    /// Gradient over free items and per-group choice probabilities.
    fn gradient(&self, theta: &[f64]) -> (DVector<f64>, Vec<Vec<f64>>) {
        let mut expected = vec![0.0; self.items.len()];
        let probs: Vec<Vec<f64>> = self
            .groups
            .iter()
            .map(|(members, n)| {
                let w: Vec<f64> = members.iter().map(|&j| theta[j].exp()).collect();
                let denom = 1.0 + w.iter().sum::<f64>();
                let p: Vec<f64> = w.iter().map(|x| x / denom).collect();
                for (&j, pj) in members.iter().zip(&p) {
                    expected[j] += n * pj;
                }
                p
            })
            .collect();
        let g = DVector::from_iterator(self.free.len(), self.free.iter().map(|&i| self.chosen[i] - expected[i]));
        (g, probs)
    }

    /// Negative Hessian times `x` (both over free items).
    fn neg_hessian_apply(&self, probs: &[Vec<f64>], slot: &[Option<usize>], x: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.free.len());
        for ((members, n), p) in self.groups.iter().zip(probs) {
            let mut px = 0.0;
            for (&j, pj) in members.iter().zip(p) {
                if let Some(s) = slot[j] {
                    px += pj * x[s];
                }
            }
            for (&j, pj) in members.iter().zip(p) {
                if let Some(s) = slot[j] {
                    out[s] += n * pj * (x[s] - px);
                }
            }
        }
        out
    }

    fn neg_hessian_dense(&self, probs: &[Vec<f64>], slot: &[Option<usize>]) -> DMatrix<f64> {
        let m = self.free.len();
        let mut h = DMatrix::zeros(m, m);
        for ((members, n), p) in self.groups.iter().zip(probs) {
            let local: Vec<(usize, f64)> = members.iter().zip(p).filter_map(|(&j, &pj)| slot[j].map(|s| (s, pj))).collect();
            for &(a, pa) in &local {
                h[(a, a)] += n * pa;
                for &(b, pb) in &local {
                    h[(a, b)] -= n * pa * pb;
                }
            }
        }
        h
    }

    fn newton_direction(&self, g: &DVector<f64>, probs: &[Vec<f64>], slot: &[Option<usize>]) -> DVector<f64> {
        if self.free.len() <= DENSE_LIMIT {
            let h = self.neg_hessian_dense(probs, slot);
            let mut ridge = 0.0;
            for _ in 0..8 {
                let mut hr = h.clone();
                for i in 0..hr.nrows() {
                    hr[(i, i)] += ridge;
                }
                if let Some(chol) = hr.cholesky() {
                    return chol.solve(g);
                }
                ridge = if ridge == 0.0 { 1e-10 * h.trace().abs().max(1.0) } else { ridge * 100.0 };
            }
            g.clone()
        } else {
            conjugate_gradient(|x| self.neg_hessian_apply(probs, slot, x), g, self.free.len())
        }
    }
}

fn conjugate_gradient(apply: impl Fn(&DVector<f64>) -> DVector<f64>, b: &DVector<f64>, max_iter: usize) -> DVector<f64> {
    let mut x = DVector::zeros(b.len());
    let mut r = b.clone();
    let mut p = r.clone();
    let mut rs = r.dot(&r);
    let target = 1e-24 * rs.max(1e-300);
    for _ in 0..max_iter {
        if rs <= target {
            break;
        }
        let ap = apply(&p);
        let denom = p.dot(&ap);
        if denom <= 0.0 {
            break;
        }
        let alpha = rs / denom;
        x += alpha * &p;
        r -= alpha * &ap;
        let rs_new = r.dot(&r);
        p = &r + (rs_new / rs) * &p;
        rs = rs_new;
    }
    x
}

/// Maximum-likelihood MNL weights with `v0 = 1`, by Newton ascent on the
/// log-likelihood in log-weight space.
///
/// Items never chosen have their MLE at zero and are pinned to the lower
/// clamp; chosen items with no finite MLE (for instance one picked every
/// time it is offered) are rejected with [`ChoiceError::DegenerateData`]. Finite weights above 1
/// are clamped to 1. Every clamp is listed in [`MnlEstimate::clamped`].
pub fn estimate_mnl(transactions: &[Transaction], opts: &EstimationOptions) -> Result<MnlEstimate, ChoiceError> {
    let (problem, never_chosen) = Problem::build(transactions, opts)?;
    let n_items = problem.items.len();
    let mut theta = vec![0.0; n_items];
    for &i in &never_chosen {
        theta[i] = MIN_WEIGHT.ln();
    }
    let mut slot = vec![None; n_items];
    for (s, &i) in problem.free.iter().enumerate() {
        slot[i] = Some(s);
    }
    let total: f64 = problem.groups.iter().map(|(_, n)| n).sum();
    let noise_floor = 1e-9 * total.max(1.0);

    let mut iterations = 0;
    let mut ll = problem.log_likelihood(&theta);
    let (mut grad, mut probs) = problem.gradient(&theta);
    while grad.norm() > opts.tolerance {
        if iterations >= opts.max_iterations {
            return Err(ChoiceError::NotConverged { iterations, gradient_norm: grad.norm() });
        }
        iterations += 1;
        let mut step = problem.newton_direction(&grad, &probs, &slot);
        let largest = step.amax();
        if largest > MAX_STEP {
            step *= MAX_STEP / largest;
        }
        let mut t = 1.0;
        let mut accepted = None;
        while t > 1e-12 {
            let mut candidate = theta.clone();
            for (s, &i) in problem.free.iter().enumerate() {
                candidate[i] = (theta[i] + t * step[s]).min(MAX_LOG_WEIGHT);
            }
            let cand_ll = problem.log_likelihood(&candidate);
            if cand_ll >= ll {
                accepted = Some((candidate, cand_ll));
                break;
            }
            t *= 0.5;
        }
        match accepted {
            Some((candidate, cand_ll)) => {
                theta = candidate;
                ll = cand_ll;
                (grad, probs) = problem.gradient(&theta);
            }
            // no ascent left: accept only if we sit at the rounding floor
            None if grad.norm() <= noise_floor => break,
            None => return Err(ChoiceError::NotConverged { iterations, gradient_norm: grad.norm() }),
        }
    }

    let mut clamped = Vec::new();
    let mut weights = BTreeMap::new();
    for (i, id) in problem.items.iter().enumerate() {
        let raw = if never_chosen.contains(&i) { 0.0 } else { theta[i].exp() };
        let w = raw.clamp(MIN_WEIGHT, 1.0);
        if w != raw {
            tracing::warn!(item = %id, raw, clamped = w, "MNL weight clamped into [1e-9, 1]");
            clamped.push(ClampEvent { item_id: id.clone(), raw_weight: raw, clamped_to: w });
        }
        weights.insert(id.clone(), w);
    }
    Ok(MnlEstimate {
        params: MnlParameters { v0: 1.0, v: weights },
        clamped,
        iterations,
        gradient_norm: grad.norm(),
        log_likelihood: ll,
    })
}

/// Chosen items that are not beaten, directly or through a chain of other
/// items, by the no-purchase option. For those the likelihood keeps rising
/// as their weight grows, so no finite maximizer exists.
fn unbeaten(n: usize, transactions: &[Transaction], index: &HashMap<&str, usize>, chosen: &[f64]) -> Vec<usize> {
    let none = n;
    // beaten_by[w] lists the alternatives that lost to w at least once
    let mut beaten_by: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n + 1];
    for t in transactions {
        let winner = t.chosen.as_ref().map_or(none, |c| index[c.as_str()]);
        let losers = &mut beaten_by[winner];
        losers.extend(t.offered.iter().map(|id| index[id.as_str()]).filter(|&j| j != winner));
        if winner != none {
            losers.insert(none);
        }
    }
    let mut reached = vec![false; n + 1];
    reached[none] = true;
    let mut stack = vec![none];
    while let Some(w) = stack.pop() {
        for &l in &beaten_by[w] {
            if !reached[l] {
                reached[l] = true;
                stack.push(l);
            }
        }
    }
    (0..n).filter(|&i| chosen[i] > 0.0 && !reached[i]).collect()
}


#[cfg(test)]
mod tests {
    use super::*;

    fn repeat(offered: &[&str], chosen: Option<&str>, times: usize) -> Vec<Transaction> {
        let t = Transaction {
            offered: offered.iter().map(|s| s.to_string()).collect(),
            chosen: chosen.map(str::to_string),
        };
        vec![t; times]
    }

    fn counts(a: usize, b: usize, none: usize) -> Vec<Transaction> {
        let mut ts = repeat(&["a", "b"], Some("a"), a);
        ts.extend(repeat(&["a", "b"], Some("b"), b));
        ts.extend(repeat(&["a", "b"], None, none));
        ts
    }

    /// Independent route: coordinate-wise golden-section search on the
    /// likelihood written directly in weight space.
    fn direct_mle(ca: f64, cb: f64, c0: f64) -> (f64, f64) {
        let ll = |va: f64, vb: f64| ca * va.ln() + cb * vb.ln() - (ca + cb + c0) * (1.0 + va + vb).ln();
        let golden = |f: &dyn Fn(f64) -> f64| {
            let (mut lo, mut hi) = (1e-6, 50.0);
            let r = (5f64.sqrt() - 1.0) / 2.0;
            for _ in 0..200 {
                let x1 = hi - r * (hi - lo);
                let x2 = lo + r * (hi - lo);
                if f(x1) < f(x2) {
                    lo = x1;
                } else {
                    hi = x2;
                }
            }
            (lo + hi) / 2.0
        };
        let (mut va, mut vb) = (1.0, 1.0);
        for _ in 0..200 {
            va = golden(&|x| ll(x, vb));
            vb = golden(&|x| ll(va, x));
        }
        (va, vb)
    }

    #[test]
    fn symmetric_counts_give_unit_weights() {
        let est = estimate_mnl(&counts(100, 100, 100), &EstimationOptions::default()).unwrap();
        assert!((est.params.v["a"] - 1.0).abs() < 1e-6);
        assert!((est.params.v["b"] - 1.0).abs() < 1e-6);
        assert!(est.gradient_norm <= 1e-8);
    }

    #[test]
    fn frequency_ratio_mle_and_upper_clamp() {
        let (va, vb) = direct_mle(100.0, 200.0, 100.0);
        assert!((va - 1.0).abs() < 1e-6, "oracle va {va}");
        assert!((vb - 2.0).abs() < 1e-6, "oracle vb {vb}");
        let est = estimate_mnl(&counts(100, 200, 100), &EstimationOptions::default()).unwrap();
        assert!((est.params.v["a"] - 1.0).abs() < 1e-6);
        assert_eq!(est.params.v["b"], 1.0);
        let b_clamp = est.clamped.iter().find(|c| c.item_id == "b").expect("b clamp reported");
        assert!((b_clamp.raw_weight - vb).abs() < 1e-6);
    }

    #[test]
    fn unequal_frequencies_match_oracle() {
        let (va, vb) = direct_mle(30.0, 55.0, 140.0);
        let est = estimate_mnl(&counts(30, 55, 140), &EstimationOptions::default()).unwrap();
        assert!((est.params.v["a"] - va).abs() < 1e-6);
        assert!((est.params.v["b"] - vb).abs() < 1e-6);
        assert!(est.clamped.is_empty());
    }

    #[test]
    fn never_offered_and_never_chosen() {
        let opts = EstimationOptions { universe: Some(vec!["a".into(), "b".into(), "c".into()]), ..Default::default() };
        assert!(matches!(estimate_mnl(&counts(5, 5, 5), &opts), Err(ChoiceError::NeverOffered(id)) if id == "c"));

        let mut ts = counts(10, 0, 10);
        ts.extend(repeat(&["a"], None, 3));
        let est = estimate_mnl(&ts, &EstimationOptions::default()).unwrap();
        assert_eq!(est.params.v["b"], 1e-9);
        assert!(est.clamped.iter().any(|c| c.item_id == "b" && c.raw_weight == 0.0));
        // a alone: chosen 10 of 23 offers against no-purchase 13
        assert!((est.params.v["a"] - 10.0 / 13.0).abs() < 1e-6);
    }

    #[test]
    fn degenerate_and_invalid_inputs() {
        let ts = repeat(&["a", "b"], Some("a"), 4);
        assert!(matches!(estimate_mnl(&ts, &EstimationOptions::default()), Err(ChoiceError::DegenerateData { items }) if items == ["a"]));
        let bad = repeat(&["a"], Some("b"), 1);
        assert!(matches!(estimate_mnl(&bad, &EstimationOptions::default()), Err(ChoiceError::InvalidTransaction { index: 0, .. })));
        assert!(matches!(estimate_mnl(&[], &EstimationOptions::default()), Err(ChoiceError::EmptyTransactions)));
    }

    #[test]
    fn no_purchase_never_observed_is_degenerate() {
        let mut ts = repeat(&["a", "b"], Some("a"), 5);
        ts.extend(repeat(&["a", "b"], Some("b"), 5));
        assert!(matches!(estimate_mnl(&ts, &EstimationOptions::default()), Err(ChoiceError::DegenerateData { .. })));
    }

    #[test]
    fn transaction_file_format() {
        let ts = Transaction::parse_jsonl("{\"offered\":[\"a\",\"b\"],\"chosen\":\"a\"}\n{\"offered\":[\"a\"],\"chosen\":null}\n").unwrap();
        assert_eq!(ts.len(), 2);
        assert_eq!(ts[1].chosen, None);
        assert!(Transaction::parse_jsonl("{").is_err());
    }
}
