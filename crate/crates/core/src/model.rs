//! Model parameters, assortments, validation, and random model generation.
//!
//! States are indexed `0..=n`: state 0 is the no-purchase option and states
//! `1..=n` are products. A model consists of an initial distribution
//! `lambda` over all states and a row-stochastic transition matrix `rho`.

use std::cmp::Ordering;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on probability-vector and transition-row sums.
pub const STOCHASTIC_TOLERANCE: f64 = 1e-12;

/// Transition entries at or below this are treated as absent edges when
/// checking irreducibility.
pub const EDGE_THRESHOLD: f64 = 1e-15;

/// Initial distribution and transition matrix of a Markov chain choice model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawModel")]
pub struct ModelParams {
    n: usize,
    lambda: Vec<f64>,
    rho: Vec<Vec<f64>>,
}

#[derive(Deserialize)]
struct RawModel {
    n: usize,
    lambda: Vec<f64>,
    rho: Vec<Vec<f64>>,
}

impl TryFrom<RawModel> for ModelParams {
    type Error = Error;

    fn try_from(raw: RawModel) -> Result<Self> {
        let model = ModelParams::new(raw.lambda, raw.rho)?;
        if model.n != raw.n {
            return Err(Error::domain(format!(
                "declared n = {} but lambda has {} entries",
                raw.n,
                model.n + 1
            )));
        }
        Ok(model)
    }
}

impl ModelParams {
    /// Builds a model from its parts, checking shapes only. Use [`validate`]
    /// for the probabilistic invariants.
    pub fn new(lambda: Vec<f64>, rho: Vec<Vec<f64>>) -> Result<Self> {
        if lambda.len() < 2 {
            return Err(Error::domain("lambda must cover state 0 and at least one product"));
        }
        let states = lambda.len();
        if rho.len() != states || rho.iter().any(|row| row.len() != states) {
            return Err(Error::domain(format!(
                "rho must be {states}x{states} to match lambda"
            )));
        }
        Ok(Self {
            n: states - 1,
            lambda,
            rho,
        })
    }

    /// Uniform `lambda` over products and uniform transitions to every
    /// other product, with `no_purchase_mass` sent to state 0 from each row.
    pub fn uniform(n: usize, no_purchase_mass: f64) -> Result<Self> {
        if n < 2 {
            return Err(Error::domain("uniform model needs at least two products"));
        }
        let mut lambda = vec![1.0 / n as f64; n + 1];
        lambda[0] = 0.0;
        let share = (1.0 - no_purchase_mass) / (n - 1) as f64;
        let rho = (0..=n)
            .map(|i| {
                (0..=n)
                    .map(|j| match (i, j) {
                        (0, 0) => 1.0,
                        (0, _) => 0.0,
                        (_, 0) => no_purchase_mass,
                        _ if i == j => 0.0,
                        _ => share,
                    })
                    .collect()
            })
            .collect();
        Self::new(lambda, rho)
    }

    /// Number of products.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    pub fn rho(&self) -> &[Vec<f64>] {
        &self.rho
    }

    pub fn rho_row(&self, i: usize) -> &[f64] {
        &self.rho[i]
    }

    /// Rescales `lambda` and every `rho` row to sum to one. Intended for
    /// hand-written model files whose decimals do not add up exactly.
    pub fn renormalized(&self) -> Self {
        fn normalize(v: &[f64]) -> Vec<f64> {
            let total: f64 = v.iter().sum();
            if total > 0.0 {
                v.iter().map(|x| x / total).collect()
            } else {
                v.to_vec()
            }
        }
        Self {
            n: self.n,
            lambda: normalize(&self.lambda),
            rho: self.rho.iter().map(|row| normalize(row)).collect(),
        }
    }

    /// Largest entrywise absolute difference over `lambda` and `rho`.
    pub fn max_abs_diff(&self, other: &ModelParams) -> Result<f64> {
        if self.n != other.n {
            return Err(Error::domain(format!(
                "cannot compare models with n = {} and n = {}",
                self.n, other.n
            )));
        }
        let lambda = self
            .lambda
            .iter()
            .zip(&other.lambda)
            .map(|(a, b)| (a - b).abs());
        let rho = self
            .rho
            .iter()
            .zip(&other.rho)
            .flat_map(|(ra, rb)| ra.iter().zip(rb).map(|(a, b)| (a - b).abs()));
        Ok(lambda.chain(rho).fold(0.0, f64::max))
    }

    pub fn to_json(&self) -> String {
        crate::json::to_string(self)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }
}

/// A nonempty set of products, stored sorted.
///
/// Ordering is by size first, then lexicographically, which is the order
/// choice-table files are written in.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct Assortment(Vec<usize>);

impl Assortment {
    pub fn new(products: impl IntoIterator<Item = usize>) -> Result<Self> {
        let mut products: Vec<usize> = products.into_iter().collect();
        if products.is_empty() {
            return Err(Error::domain("assortment must be nonempty"));
        }
        products.sort_unstable();
        if products[0] == 0 {
            return Err(Error::domain("product indices start at 1"));
        }
        if products.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::domain(format!("duplicate products in {products:?}")));
        }
        Ok(Self(products))
    }

    /// The full product set `{1, ..., n}`.
    pub fn full(n: usize) -> Result<Self> {
        Self::new(1..=n)
    }

    pub fn products(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn max_product(&self) -> usize {
        *self.0.last().expect("assortments are nonempty")
    }

    pub fn contains(&self, product: usize) -> bool {
        self.0.binary_search(&product).is_ok()
    }

    /// Whether `state` is absorbing when this assortment is offered.
    pub fn is_outcome(&self, state: usize) -> bool {
        state == 0 || self.contains(state)
    }

    /// Outcomes `0, s_1, ..., s_r`; vectors over outcomes use this order.
    pub fn outcomes(&self) -> impl Iterator<Item = usize> + '_ {
        std::iter::once(0).chain(self.0.iter().copied())
    }

    pub fn outcome_count(&self) -> usize {
        self.0.len() + 1
    }

    /// Position of `state` in [`Assortment::outcomes`].
    pub fn outcome_index(&self, state: usize) -> Option<usize> {
        if state == 0 {
            Some(0)
        } else {
            self.0.binary_search(&state).ok().map(|p| p + 1)
        }
    }

    pub fn with(&self, product: usize) -> Result<Self> {
        Self::new(self.0.iter().copied().chain(std::iter::once(product)))
    }

    pub fn without(&self, product: usize) -> Result<Self> {
        Self::new(self.0.iter().copied().filter(|&p| p != product))
    }

    pub(crate) fn check_bounds(&self, n: usize) -> Result<()> {
        if self.max_product() > n {
            return Err(Error::domain(format!(
                "assortment {self} has products outside 1..={n}"
            )));
        }
        Ok(())
    }
}

impl TryFrom<Vec<usize>> for Assortment {
    type Error = Error;

    fn try_from(products: Vec<usize>) -> Result<Self> {
        Self::new(products)
    }
}

impl From<Assortment> for Vec<usize> {
    fn from(a: Assortment) -> Self {
        a.0
    }
}

impl Ord for Assortment {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0
            .len()
            .cmp(&other.0.len())
            .then_with(|| self.0.cmp(&other.0))
    }
}

impl PartialOrd for Assortment {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Assortment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("{")?;
        for (k, p) in self.0.iter().enumerate() {
            if k > 0 {
                f.write_str(",")?;
            }
            write!(f, "{p}")?;
        }
        f.write_str("}")
    }
}

/// A violated model invariant.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "code")]
pub enum Violation {
    /// Row has a negative or non-finite entry, or does not sum to one.
    NonStochasticRow { row: usize },
    /// A product state transitions to itself.
    SelfLoop { product: usize },
    /// Row 0 is not `(1, 0, ..., 0)`.
    NoPurchaseNotAbsorbing,
    /// The product-to-product transition graph is not strongly connected.
    ReducibleSubmatrix,
    /// `lambda` has a negative or non-finite entry, or does not sum to one.
    BadLambda,
}

impl Violation {
    pub fn code(&self) -> &'static str {
        match self {
            Violation::NonStochasticRow { .. } => "NonStochasticRow",
            Violation::SelfLoop { .. } => "SelfLoop",
            Violation::NoPurchaseNotAbsorbing => "NoPurchaseNotAbsorbing",
            Violation::ReducibleSubmatrix => "ReducibleSubmatrix",
            Violation::BadLambda => "BadLambda",
        }
    }
}

fn is_distribution(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite() && *x >= 0.0)
        && (v.iter().sum::<f64>() - 1.0).abs() <= STOCHASTIC_TOLERANCE
}

/// Returns every violated invariant; an empty list means the model is valid.
pub fn validate(model: &ModelParams) -> Vec<Violation> {
    let n = model.n;
    let mut violations = Vec::new();

    if !is_distribution(&model.lambda) {
        violations.push(Violation::BadLambda);
    }
    for (row, values) in model.rho.iter().enumerate() {
        if !is_distribution(values) {
            violations.push(Violation::NonStochasticRow { row });
        }
    }
    if model.rho[0][0] != 1.0 || model.rho[0][1..].iter().any(|&x| x != 0.0) {
        violations.push(Violation::NoPurchaseNotAbsorbing);
    }
    for i in 1..=n {
        if model.rho[i][i] != 0.0 {
            violations.push(Violation::SelfLoop { product: i });
        }
    }
    if !product_graph_strongly_connected(model) {
        violations.push(Violation::ReducibleSubmatrix);
    }
    violations
}

pub fn ensure_valid(model: &ModelParams) -> Result<()> {
    let violations = validate(model);
    if violations.is_empty() {
        Ok(())
    } else {
        Err(Error::InvalidModel(violations))
    }
}

/// Strong connectivity of the graph on products with an edge `i -> j`
/// whenever `rho[i][j] > EDGE_THRESHOLD`: every product must be reachable
/// from product 1 both forwards and backwards.
pub fn product_graph_strongly_connected(model: &ModelParams) -> bool {
    let n = model.n;
    let edge = |i: usize, j: usize| i != j && model.rho[i][j] > EDGE_THRESHOLD;
    let reaches_all = |forward: bool| {
        let mut seen = vec![false; n + 1];
        let mut stack = vec![1];
        seen[1] = true;
        while let Some(u) = stack.pop() {
            for v in 1..=n {
                let linked = if forward { edge(u, v) } else { edge(v, u) };
                if linked && !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        seen[1..].iter().all(|&s| s)
    };
    reaches_all(true) && reaches_all(false)
}

/// Draws a random valid model with strictly positive off-diagonal product
/// transitions, `rho[i][0] = no_purchase_mass` for every product, `lambda_0 = 0`
/// and `lambda` strictly positive on products.
pub fn generate_random(n: usize, no_purchase_mass: f64, seed: u64) -> Result<ModelParams> {
    if n < 3 {
        return Err(Error::domain(format!("n must be at least 3, got {n}")));
    }
    if !(0.0..1.0).contains(&no_purchase_mass) {
        return Err(Error::domain(format!(
            "no-purchase mass must lie in [0, 1), got {no_purchase_mass}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut lambda = vec![0.0; n + 1];
    fill_normalized(&mut rng, &mut lambda[1..], 1.0);

    let mut rho = vec![vec![0.0; n + 1]; n + 1];
    rho[0][0] = 1.0;
    for (i, row) in rho.iter_mut().enumerate().skip(1) {
        row[0] = no_purchase_mass;
        let mut others: Vec<f64> = vec![0.0; n - 1];
        fill_normalized(&mut rng, &mut others, 1.0 - no_purchase_mass);
        let targets = (1..=n).filter(|&j| j != i);
        for (j, value) in targets.zip(others) {
            row[j] = value;
        }
    }
    ModelParams::new(lambda, rho)
}

/// Normalized exponential draws (a flat Dirichlet sample) scaled to `total`.
fn fill_normalized<R: Rng>(rng: &mut R, out: &mut [f64], total: f64) {
    for x in out.iter_mut() {
        *x = loop {
            let draw: f64 = rng.sample(Exp1);
            if draw > 0.0 {
                break draw;
            }
        };
    }
    let sum: f64 = out.iter().sum();
    for x in out.iter_mut() {
        *x *= total / sum;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn symmetric3() -> ModelParams {
        ModelParams::uniform(3, 0.0).unwrap()
    }

    #[test]
    fn symmetric_model_is_valid() {
        let m = symmetric3();
        assert_eq!(m.rho_row(1), &[0.0, 0.0, 0.5, 0.5]);
        assert_eq!(m.lambda(), &[0.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]);
        assert_eq!(validate(&m), vec![]);
        assert_eq!(validate(&ModelParams::uniform(6, 0.3).unwrap()), vec![]);
    }

    #[test]
    fn self_loop_is_reported() {
        let m = symmetric3();
        let mut rho = m.rho().to_vec();
        rho[1] = vec![0.0, 0.1, 0.45, 0.45];
        let m = ModelParams::new(m.lambda().to_vec(), rho).unwrap();
        assert_eq!(validate(&m), vec![Violation::SelfLoop { product: 1 }]);
    }

    #[test]
    fn block_diagonal_products_are_reducible() {
        let lambda = vec![0.0, 0.25, 0.25, 0.25, 0.25];
        let rho = vec![
            vec![1.0, 0.0, 0.0, 0.0, 0.0],
            vec![0.0, 0.0, 1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0, 0.0, 0.0],
            vec![0.0, 0.0, 0.0, 0.0, 1.0],
            vec![0.0, 0.0, 0.0, 1.0, 0.0],
        ];
        let m = ModelParams::new(lambda, rho).unwrap();
        assert_eq!(validate(&m), vec![Violation::ReducibleSubmatrix]);
    }

    #[test]
    fn no_purchase_must_absorb() {
        let m = symmetric3();
        let mut rho = m.rho().to_vec();
        rho[0] = vec![0.5, 0.5, 0.0, 0.0];
        let m = ModelParams::new(m.lambda().to_vec(), rho).unwrap();
        assert_eq!(validate(&m), vec![Violation::NoPurchaseNotAbsorbing]);
    }

    #[test]
    fn bad_lambda_and_rows_are_reported() {
        let m = symmetric3();
        let mut rho = m.rho().to_vec();
        rho[2] = vec![0.0, 0.5, 0.0, 0.6];
        let m = ModelParams::new(vec![0.0, 0.5, 0.5, 0.5], rho).unwrap();
        assert_eq!(
            validate(&m),
            vec![Violation::BadLambda, Violation::NonStochasticRow { row: 2 }]
        );
        let neg = ModelParams::new(vec![0.0, 1.5, -0.5, 0.0], symmetric3().rho().to_vec()).unwrap();
        assert_eq!(validate(&neg), vec![Violation::BadLambda]);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        assert!(ModelParams::new(vec![0.0, 1.0], vec![vec![1.0, 0.0]]).is_err());
        assert!(ModelParams::new(vec![1.0], vec![vec![1.0]]).is_err());
        let text = r#"{"n": 3, "lambda": [0, 1], "rho": [[1, 0], [1, 0]]}"#;
        assert!(ModelParams::from_json(text).is_err());
    }

    #[test]
    fn generator_contract() {
        let m = generate_random(3, 0.0, 7).unwrap();
        assert_eq!(validate(&m), vec![]);
        assert_eq!(m.lambda()[0], 0.0);
        assert!(m.lambda()[1..].iter().all(|&x| x > 0.0));
        for i in 1..=3 {
            assert_eq!(m.rho_row(i)[0], 0.0);
            for j in 1..=3 {
                assert_eq!(m.rho_row(i)[j] > 0.0, i != j);
            }
        }

        let a = generate_random(5, 0.2, 1).unwrap();
        let b = generate_random(5, 0.2, 1).unwrap();
        assert_eq!(a.to_json(), b.to_json());
        assert!((1..=5).all(|i| a.rho_row(i)[0] == 0.2));
    }

    #[test]
    fn generator_rejects_bad_arguments() {
        assert!(matches!(generate_random(2, 0.0, 1), Err(Error::Domain(_))));
        assert!(matches!(generate_random(4, 1.0, 1), Err(Error::Domain(_))));
        assert!(matches!(generate_random(4, -0.1, 1), Err(Error::Domain(_))));
    }

    #[test]
    fn assortment_canonical_form() {
        let a = Assortment::new([3, 1, 2]).unwrap();
        assert_eq!(a.products(), &[1, 2, 3]);
        assert_eq!(a.outcomes().collect::<Vec<_>>(), vec![0, 1, 2, 3]);
        assert_eq!(a.outcome_index(3), Some(3));
        assert_eq!(a.outcome_index(4), None);
        assert!(Assortment::new([]).is_err());
        assert!(Assortment::new([0, 1]).is_err());
        assert!(Assortment::new([2, 2]).is_err());
        let mut v = vec![
            Assortment::new([1, 2, 3]).unwrap(),
            Assortment::new([2, 3]).unwrap(),
            Assortment::new([1, 4]).unwrap(),
        ];
        v.sort();
        assert_eq!(v[0].products(), &[1, 4]);
        assert_eq!(v[2].len(), 3);
    }

    #[test]
    fn renormalize_fixes_rounding() {
        let lambda = vec![0.0, 0.333, 0.333, 0.333];
        let rho = vec![
            vec![1.0, 0.0, 0.0, 0.0],
            vec![0.0, 0.0, 0.49, 0.49],
            vec![0.0, 0.5, 0.0, 0.5],
            vec![0.0, 0.5, 0.5, 0.0],
        ];
        let m = ModelParams::new(lambda, rho).unwrap();
        assert!(!validate(&m).is_empty());
        assert_eq!(validate(&m.renormalized()), vec![]);
    }
}
