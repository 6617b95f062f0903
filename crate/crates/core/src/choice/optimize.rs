use std::cmp::Ordering;

use super::{revenue_of, Assortment, ChoiceError, FeasibleSpec, MnlParameters};
use crate::catalog::CatalogSnapshot;
use crate::exec::Exec;

/// Largest filtered universe searched exhaustively.
pub const BRUTE_FORCE_LIMIT: usize = 20;

const MASKS_PER_TASK: u64 = 1 << 12;

/// The catalog items under consideration, in catalog order.
pub(crate) struct Universe<'a> {
    ids: Vec<&'a str>,
    prices: Vec<f64>,
    weights: Vec<f64>,
    v0: f64,
}

impl<'a> Universe<'a> {
    pub(crate) fn new(
        params: &MnlParameters,
        catalog: &'a CatalogSnapshot,
        positions: impl Iterator<Item = usize>,
    ) -> Result<Self, ChoiceError> {
        params.check()?;
        let mut u = Universe { ids: Vec::new(), prices: Vec::new(), weights: Vec::new(), v0: params.v0 };
        for pos in positions {
            let item = &catalog.items()[pos];
            u.weights.push(params.weight(&item.item_id)?);
            u.ids.push(&item.item_id);
            u.prices.push(item.price.to_f64());
        }
        Ok(u)
    }

    fn filtered(params: &MnlParameters, catalog: &'a CatalogSnapshot, spec: &FeasibleSpec) -> Result<Self, ChoiceError> {
        if spec.max_cardinality == Some(0) {
            return Err(ChoiceError::InvalidCardinality);
        }
        let admitted = catalog
            .iter()
            .enumerate()
            .filter(|(_, item)| spec.constraints.admits(item))
            .map(|(pos, _)| pos);
        Universe::new(params, catalog, admitted)
    }

    fn len(&self) -> usize {
        self.ids.len()
    }

    /// Revenue of the set given by local indices in ascending order.
    pub(crate) fn revenue(&self, indices: impl Iterator<Item = usize>) -> f64 {
        revenue_of(&self.prices, &self.weights, self.v0, indices)
    }

    fn mask_revenue(&self, mask: u64) -> f64 {
        self.revenue((0..self.len()).filter(|i| mask >> i & 1 == 1))
    }

    fn mask_ids(&self, mask: u64) -> Vec<&'a str> {
        let mut ids: Vec<&str> = (0..self.len()).filter(|i| mask >> i & 1 == 1).map(|i| self.ids[i]).collect();
        ids.sort_unstable();
        ids
    }

    /// Higher revenue first, then fewer items, then lexicographically smaller
    /// sorted item ids. Total over distinct masks.
    fn better(&self, a: (u64, f64), b: (u64, f64)) -> Ordering {
        b.1.partial_cmp(&a.1)
            .unwrap_or(Ordering::Equal)
            .then_with(|| a.0.count_ones().cmp(&b.0.count_ones()))
            .then_with(|| self.mask_ids(a.0).cmp(&self.mask_ids(b.0)))
    }

    fn pick(&self, a: (u64, f64), b: (u64, f64)) -> (u64, f64) {
        if self.better(b, a) == Ordering::Less {
            b
        } else {
            a
        }
    }

    fn assortment(&self, mask: u64) -> Assortment {
        Assortment {
            items: (0..self.len()).filter(|i| mask >> i & 1 == 1).map(|i| self.ids[i].to_string()).collect(),
            revenue: self.mask_revenue(mask),
        }
    }

    fn exhaustive(&self, cap: usize, exec: Exec) -> Assortment {
        let n = self.len();
        let total: u64 = 1 << n;
        let tasks = total.div_ceil(MASKS_PER_TASK) as usize;
        let best_per_task = exec.map_range(tasks, |t| {
            let start = t as u64 * MASKS_PER_TASK;
            let end = (start + MASKS_PER_TASK).min(total);
            let mut best = (0u64, 0.0);
            for mask in start..end {
                if mask.count_ones() as usize > cap {
                    continue;
                }
                best = self.pick(best, (mask, self.mask_revenue(mask)));
            }
            best
        });
        let best = best_per_task.into_iter().fold((0u64, 0.0), |a, b| self.pick(a, b));
        self.assortment(best.0)
    }

    /// Evaluates the nested sets formed by adding items in decreasing price
    /// order and keeps the best one.
    fn revenue_ordered(&self) -> Assortment {
        let n = self.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            self.prices[b].partial_cmp(&self.prices[a]).unwrap_or(Ordering::Equal).then_with(|| self.ids[a].cmp(self.ids[b]))
        });
        let mut best_len = 0;
        let mut best_rev = 0.0;
        if n <= 256 {
            let mut members = vec![false; n];
            for (len, &i) in order.iter().enumerate() {
                members[i] = true;
                let rev = self.revenue((0..n).filter(|&j| members[j]));
                if rev > best_rev {
                    best_rev = rev;
                    best_len = len + 1;
                }
            }
        } else {
            let (mut numer, mut denom) = (0.0, self.v0);
            for (len, &i) in order.iter().enumerate() {
                numer += self.prices[i] * self.weights[i];
                denom += self.weights[i];
                let rev = numer / denom;
                if rev > best_rev {
                    best_rev = rev;
                    best_len = len + 1;
                }
            }
        }
        let mut chosen: Vec<usize> = order[..best_len].to_vec();
        chosen.sort_unstable();
        Assortment {
            items: chosen.iter().map(|&i| self.ids[i].to_string()).collect(),
            revenue: self.revenue(chosen.into_iter()),
        }
    }
}

/// Exhaustive search over every subset of the filtered items (at most
/// [`BRUTE_FORCE_LIMIT`]) respecting `max_cardinality`. Ties prefer fewer
/// items, then lexicographically smaller item ids.
pub fn brute_force_optimal(params: &MnlParameters, catalog: &CatalogSnapshot, spec: &FeasibleSpec) -> Result<Assortment, ChoiceError> {
    brute_force_optimal_with(Exec::default(), params, catalog, spec)
}

pub fn brute_force_optimal_with(
    exec: Exec,
    params: &MnlParameters,
    catalog: &CatalogSnapshot,
    spec: &FeasibleSpec,
) -> Result<Assortment, ChoiceError> {
    let universe = Universe::filtered(params, catalog, spec)?;
    if universe.len() > BRUTE_FORCE_LIMIT {
        return Err(ChoiceError::TooLarge { size: universe.len(), limit: BRUTE_FORCE_LIMIT });
    }
    let cap = spec.max_cardinality.unwrap_or(usize::MAX);
    Ok(universe.exhaustive(cap, exec))
}

/// Filters the catalog by the spec's constraints, then maximizes expected
/// revenue. Unbounded specs use the revenue-ordered nested sets, which are
/// optimal for unconstrained MNL; bounded specs are searched exhaustively.
pub fn optimize_assortment(params: &MnlParameters, catalog: &CatalogSnapshot, spec: &FeasibleSpec) -> Result<Assortment, ChoiceError> {
    optimize_assortment_with(Exec::default(), params, catalog, spec)
}

pub fn optimize_assortment_with(
    exec: Exec,
    params: &MnlParameters,
    catalog: &CatalogSnapshot,
    spec: &FeasibleSpec,
) -> Result<Assortment, ChoiceError> {
    match spec.max_cardinality {
        None => Ok(Universe::filtered(params, catalog, spec)?.revenue_ordered()),
        Some(_) => brute_force_optimal_with(exec, params, catalog, spec),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::Item;
    use crate::choice::expected_revenue;
    use crate::constraints::ConstraintSet;
    use crate::money::Money;

    fn instance() -> (MnlParameters, CatalogSnapshot) {
        let cat = CatalogSnapshot::from_items(
            vec![
                Item::new("a", "A", Money::from_cents(1000)),
                Item::new("b", "B", Money::from_cents(800)),
                Item::new("c", "C", Money::from_cents(600)),
            ],
            1,
        )
        .unwrap();
        let p = MnlParameters::new(1.0, [("a".into(), 0.2), ("b".into(), 0.5), ("c".into(), 0.9)]).unwrap();
        (p, cat)
    }

    /// Independent oracle: closed-form revenue of every subset written out
    /// by hand.
    fn all_subsets_by_hand() -> Vec<(Vec<&'static str>, f64)> {
        let (pa, pb, pc) = (10.0, 8.0, 6.0);
        let (va, vb, vc) = (0.2, 0.5, 0.9);
        vec![
            (vec![], 0.0),
            (vec!["a"], pa * va / (1.0 + va)),
            (vec!["b"], pb * vb / (1.0 + vb)),
            (vec!["c"], pc * vc / (1.0 + vc)),
            (vec!["a", "b"], (pa * va + pb * vb) / (1.0 + va + vb)),
            (vec!["a", "c"], (pa * va + pc * vc) / (1.0 + va + vc)),
            (vec!["b", "c"], (pb * vb + pc * vc) / (1.0 + vb + vc)),
            (vec!["a", "b", "c"], (pa * va + pb * vb + pc * vc) / (1.0 + va + vb + vc)),
        ]
    }

    #[test]
    fn brute_force_matches_hand_enumeration() {
        let (p, cat) = instance();
        let table = all_subsets_by_hand();
        let (best_set, best_rev) = table.iter().cloned().fold((vec![], f64::MIN), |a, b| if b.1 > a.1 { b } else { a });
        // (a, b, c) = 11.4 / 2.6, (b, c) = 9.4 / 2.4, (a, b) = 6 / 1.7
        assert_eq!(best_set, ["a", "b", "c"]);
        let got = brute_force_optimal(&p, &cat, &FeasibleSpec::default()).unwrap();
        assert_eq!(got.items.iter().map(String::as_str).collect::<Vec<_>>(), best_set);
        assert!((got.revenue - best_rev).abs() < 1e-12);
        assert!((got.revenue - 11.4 / 2.6).abs() < 1e-12);
    }

    #[test]
    fn singleton_cap() {
        let (p, cat) = instance();
        let singles: Vec<_> = all_subsets_by_hand().into_iter().filter(|(s, _)| s.len() == 1).collect();
        let best = singles.iter().cloned().fold((vec![], f64::MIN), |a, b| if b.1 > a.1 { b } else { a });
        // c: 6*0.9/1.9 = 2.842..., b: 8*0.5/1.5 = 2.667, a: 10*0.2/1.2 = 1.667
        assert_eq!(best.0, ["c"]);
        let got = brute_force_optimal(&p, &cat, &FeasibleSpec::bounded(ConstraintSet::default(), 1)).unwrap();
        assert_eq!(got.items.len(), 1);
        assert!(got.items.contains("c"));
        assert!((got.revenue - best.1).abs() < 1e-12);
    }

    #[test]
    fn empty_universe_and_bad_cardinality() {
        let (p, cat) = instance();
        let nothing = ConstraintSet { lowest_price: Some(Money::from_cents(1_000_000)), ..Default::default() };
        assert_eq!(brute_force_optimal(&p, &cat, &FeasibleSpec::unbounded(nothing.clone())).unwrap(), Assortment::empty());
        assert_eq!(optimize_assortment(&p, &cat, &FeasibleSpec::unbounded(nothing)).unwrap(), Assortment::empty());
        assert!(matches!(
            optimize_assortment(&p, &cat, &FeasibleSpec::bounded(ConstraintSet::default(), 0)),
            Err(ChoiceError::InvalidCardinality)
        ));
    }

    #[test]
    fn too_large_for_exhaustive_search() {
        let items: Vec<Item> = (0..21).map(|i| Item::new(format!("i{i:02}"), "x", Money::from_cents(100 + i))).collect();
        let cat = CatalogSnapshot::from_items(items, 1).unwrap();
        let p = MnlParameters::uniform(&cat, 0.5);
        assert!(matches!(
            brute_force_optimal(&p, &cat, &FeasibleSpec::default()),
            Err(ChoiceError::TooLarge { size: 21, .. })
        ));
        assert!(matches!(
            optimize_assortment(&p, &cat, &FeasibleSpec::bounded(ConstraintSet::default(), 3)),
            Err(ChoiceError::TooLarge { .. })
        ));
        assert!(optimize_assortment(&p, &cat, &FeasibleSpec::default()).is_ok());
    }

    #[test]
    fn ties_prefer_fewer_items_then_lexicographic() {
        let cat = CatalogSnapshot::from_items(
            vec![
                Item::new("z", "Z", Money::from_cents(1000)),
                Item::new("y", "Y", Money::from_cents(1000)),
                Item::new("w", "W", Money::from_cents(500)),
            ],
            1,
        )
        .unwrap();
        // w has zero weight: adding it never changes revenue
        let p = MnlParameters::new(1.0, [("z".into(), 1.0), ("y".into(), 1.0), ("w".into(), 0.0)]).unwrap();
        let single = brute_force_optimal(&p, &cat, &FeasibleSpec::bounded(ConstraintSet::default(), 1)).unwrap();
        assert_eq!(single.items.iter().collect::<Vec<_>>(), ["y"]);
        let best = brute_force_optimal(&p, &cat, &FeasibleSpec::default()).unwrap();
        assert_eq!(best.items.iter().collect::<Vec<_>>(), ["y", "z"]);
        assert_eq!(optimize_assortment(&p, &cat, &FeasibleSpec::default()).unwrap(), best);
    }

    #[test]
    fn sequential_and_parallel_agree() {
        let items: Vec<Item> = (0..16)
            .map(|i| Item::new(format!("i{i:02}"), "x", Money::from_cents(100 + 37 * i)))
            .collect();
        let cat = CatalogSnapshot::from_items(items, 1).unwrap();
        let p = MnlParameters::new(1.0, cat.iter().enumerate().map(|(i, it)| (it.item_id.clone(), ((i * 7) % 11) as f64 / 10.0))).unwrap();
        let spec = FeasibleSpec::bounded(ConstraintSet::default(), 4);
        let a = brute_force_optimal_with(Exec::Sequential, &p, &cat, &spec).unwrap();
        let b = brute_force_optimal_with(Exec::Parallel, &p, &cat, &spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.revenue, expected_revenue(&p, &cat, &a.items).unwrap());
    }
}
