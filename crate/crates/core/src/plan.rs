//! Assortment plans: which choice probabilities the recovery consumes.
//!
//! For product `i`, a *fan* is a family of size-`r` assortments that all
//! exclude `i` and pairwise intersect in the same `(r-1)`-set. Fixing the
//! intersection `C`, the fan is `{C ∪ {k} : k ∉ C ∪ {i}}`, which has
//! `n - r` members. When `2r <= n`, two disjoint intersection sets serve
//! every product and the total data requirement is `O(n^2)` assortments.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::model::Assortment;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlanKind {
    /// Common-intersection fans (the small plan).
    Minimal,
    /// Every size-`r` assortment, and every size-`r+1` one for the data.
    Full,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RecoveryPlan {
    n: usize,
    r: usize,
    kind: PlanKind,
    intersections: BTreeMap<usize, Assortment>,
    per_product_fans: BTreeMap<usize, Vec<Assortment>>,
    lambda_assortments: Vec<Assortment>,
    required_assortments: BTreeSet<Assortment>,
}

impl RecoveryPlan {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn r(&self) -> usize {
        self.r
    }

    pub fn kind(&self) -> PlanKind {
        self.kind
    }

    /// The `(r-1)`-set shared by product `i`'s fan (minimal plans only).
    pub fn intersection(&self, i: usize) -> Option<&Assortment> {
        self.intersections.get(&i)
    }

    pub fn fan(&self, i: usize) -> &[Assortment] {
        self.per_product_fans.get(&i).map_or(&[], Vec::as_slice)
    }

    pub fn fans(&self) -> &BTreeMap<usize, Vec<Assortment>> {
        &self.per_product_fans
    }

    pub fn lambda_assortments(&self) -> &[Assortment] {
        &self.lambda_assortments
    }

    pub fn required_assortments(&self) -> &BTreeSet<Assortment> {
        &self.required_assortments
    }

    /// Size-`r` assortments whose conditional probabilities are needed.
    pub fn conditional_assortments(&self) -> BTreeSet<Assortment> {
        self.per_product_fans
            .values()
            .flatten()
            .chain(&self.lambda_assortments)
            .cloned()
            .collect()
    }
}

fn check_sizes(n: usize, r: usize) -> Result<()> {
    if n < 3 {
        return Err(Error::domain(format!("n must be at least 3, got {n}")));
    }
    if r < 2 || r > n - 1 {
        return Err(Error::domain(format!("r must lie in 2..={}, got {r}", n - 1)));
    }
    Ok(())
}

fn fan_for(n: usize, i: usize, intersection: &Assortment) -> Vec<Assortment> {
    (1..=n)
        .filter(|&k| k != i && !intersection.contains(k))
        .map(|k| intersection.with(k).expect("k is outside the intersection"))
        .collect()
}

/// Adds `S` and `S ∪ {j}` for every `j ∉ S`.
fn close_requirements<'a>(n: usize, sets: impl IntoIterator<Item = &'a Assortment>) -> BTreeSet<Assortment> {
    let mut required = BTreeSet::new();
    for s in sets {
        required.insert(s.clone());
        for j in (1..=n).filter(|&j| !s.contains(j)) {
            required.insert(s.with(j).expect("j is outside S"));
        }
    }
    required
}

/// Builds the common-intersection plan for `n` products and assortment
/// size `r`.
///
/// With `2r <= n`, `C = {1, ..., r-1}` serves every product outside it and
/// the disjoint `C' = {r, ..., 2r-2}` serves the products in `C`. Otherwise
/// each product `i` uses the `r-1` smallest products other than `i`.
pub fn build_plan(n: usize, r: usize) -> Result<RecoveryPlan> {
    check_sizes(n, r)?;
    let mut intersections = BTreeMap::new();
    if 2 * r <= n {
        let primary = Assortment::new(1..r)?;
        let secondary = Assortment::new(r..=2 * r - 2)?;
        for i in 1..=n {
            let c = if primary.contains(i) { &secondary } else { &primary };
            intersections.insert(i, c.clone());
        }
    } else {
        for i in 1..=n {
            let c = Assortment::new((1..=n).filter(|&k| k != i).take(r - 1))?;
            intersections.insert(i, c);
        }
    }

    let per_product_fans: BTreeMap<usize, Vec<Assortment>> = intersections
        .iter()
        .map(|(&i, c)| (i, fan_for(n, i, c)))
        .collect();

    // Product 1's fan never contains product 1; `{1, ..., r}` fills that gap.
    let mut lambda_assortments = per_product_fans[&1].clone();
    let anchor = Assortment::new(1..=r)?;
    if !lambda_assortments.contains(&anchor) {
        lambda_assortments.push(anchor);
    }

    let required_assortments = close_requirements(
        n,
        per_product_fans.values().flatten().chain(&lambda_assortments),
    );

    Ok(RecoveryPlan {
        n,
        r,
        kind: PlanKind::Minimal,
        intersections,
        per_product_fans,
        lambda_assortments,
        required_assortments,
    })
}

/// Every size-`k` subset of `{1, ..., n}`, in lexicographic order.
pub fn subsets_of_size(n: usize, k: usize) -> Vec<Assortment> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Assortment>) {
        if cur.len() == k {
            out.push(Assortment::new(cur.iter().copied()).expect("distinct positive"));
            return;
        }
        let remaining = k - cur.len();
        for p in start..=n + 1 - remaining {
            cur.push(p);
            rec(p + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    if k >= 1 && k <= n {
        rec(1, n, k, &mut Vec::with_capacity(k), &mut out);
    }
    out
}

/// The plan that uses every size-`r` assortment, as in the unrestricted
/// formulation of the recovery.
pub fn build_full_plan(n: usize, r: usize) -> Result<RecoveryPlan> {
    check_sizes(n, r)?;
    let all_r = subsets_of_size(n, r);
    let per_product_fans = (1..=n)
        .map(|i| (i, all_r.iter().filter(|s| !s.contains(i)).cloned().collect()))
        .collect();
    let required_assortments = all_r
        .iter()
        .cloned()
        .chain(subsets_of_size(n, r + 1))
        .collect();
    Ok(RecoveryPlan {
        n,
        r,
        kind: PlanKind::Full,
        intersections: BTreeMap::new(),
        per_product_fans,
        lambda_assortments: all_r,
        required_assortments,
    })
}

/// Distinct required assortments of size `r` and of size `r + 1`.
pub fn count_required(plan: &RecoveryPlan) -> (usize, usize) {
    plan.required_assortments
        .iter()
        .fold((0, 0), |(a, b), s| if s.len() == plan.r { (a + 1, b) } else { (a, b + 1) })
}
