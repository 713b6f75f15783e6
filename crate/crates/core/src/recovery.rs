//! Parameter recovery from choice probabilities.
//!
//! For each product `i` and each size-`r` assortment `S` with `i ∉ S`, the
//! true transition row satisfies
//!
//! ```text
//! sum_k pi(j, S | k) * rho[i][k] = pi(j, S | i)      for j in S ∪ {0}
//! ```
//!
//! and the initial distribution satisfies
//!
//! ```text
//! sum_k pi(j, S | k) * lambda[k] = pi(j, S)           for j in S ∪ {0}.
//! ```
//!
//! Both systems are assembled from a [`ConditionalTable`] and solved by
//! minimum-norm least squares. With exact inputs and a fan-based plan the
//! solution is unique and equals the generating parameters.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::ser::SerializeMap;
use serde::{Serialize, Serializer};

use crate::choice::{build_conditional_table, ChoiceTable, ConditionalTable, DEFAULT_DENOM_TOLERANCE};
use crate::error::{Error, Result, SystemId};
use crate::linalg::{self, RankInfo};
use crate::model::{Assortment, ModelParams, STOCHASTIC_TOLERANCE};
use crate::plan::RecoveryPlan;

pub const DEFAULT_RANK_TOLERANCE: f64 = 1e-9;

/// Entries below this trigger clipping and renormalization of a recovered row.
pub const PROJECTION_TRIGGER: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Constraint {
    /// `x[column] = value`; the column is eliminated before solving.
    Fix { column: usize, value: f64 },
    /// `sum(x) = value`; appended as a unit-weight equation.
    Sum { value: f64 },
}

/// One equation, contributed by outcome `j` of assortment `S`.
#[derive(Clone, Debug, PartialEq)]
pub struct EquationRow {
    pub assortment: Assortment,
    pub outcome: usize,
    pub coefficients: Vec<f64>,
    pub rhs: f64,
}

/// Equations over unknowns indexed by states `0..=n`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearSystem {
    columns: Vec<usize>,
    rows: Vec<EquationRow>,
    constraints: Vec<Constraint>,
}

impl LinearSystem {
    pub fn columns(&self) -> &[usize] {
        &self.columns
    }

    pub fn rows(&self) -> &[EquationRow] {
        &self.rows
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    /// The equation coefficients alone (no constraints), one row per equation.
    pub fn coefficient_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.rows.len(), self.columns.len(), |r, c| {
            self.rows[r].coefficients[c]
        })
    }

    /// Largest absolute violation of any equation or constraint at `x`.
    pub fn residual(&self, x: &[f64]) -> f64 {
        let eq = self.rows.iter().map(|row| {
            let lhs: f64 = row.coefficients.iter().zip(x).map(|(a, b)| a * b).sum();
            (lhs - row.rhs).abs()
        });
        let cons = self.constraints.iter().map(|c| match *c {
            Constraint::Fix { column, value } => (x[column] - value).abs(),
            Constraint::Sum { value } => (x.iter().sum::<f64>() - value).abs(),
        });
        eq.chain(cons).fold(0.0, f64::max)
    }
}

fn lookup(cond: &ConditionalTable, s: &Assortment, origin: usize, outcome: usize) -> Result<f64> {
    cond.get(s, origin, outcome)
        .map(|p| p.clamp(0.0, 1.0))
        .ok_or_else(|| Error::MissingConditional {
            assortment: s.clone(),
            origin,
            outcome,
        })
}

/// Equations for the transition row of product `i` from the assortments in
/// `fan`, none of which may contain `i`.
pub fn build_rho_system(cond: &ConditionalTable, i: usize, fan: &[Assortment]) -> Result<LinearSystem> {
    let n = cond.n();
    if i == 0 || i > n {
        return Err(Error::domain(format!("product {i} is outside 1..={n}")));
    }
    let mut rows = Vec::new();
    for s in fan {
        if s.contains(i) {
            return Err(Error::domain(format!("assortment {s} contains product {i}")));
        }
        for j in s.outcomes() {
            let coefficients = (0..=n)
                .map(|k| lookup(cond, s, k, j))
                .collect::<Result<Vec<_>>>()?;
            rows.push(EquationRow {
                assortment: s.clone(),
                outcome: j,
                coefficients,
                rhs: lookup(cond, s, i, j)?,
            });
        }
    }
    Ok(LinearSystem {
        columns: (0..=n).collect(),
        rows,
        constraints: vec![
            Constraint::Fix {
                column: i,
                value: 0.0,
            },
            Constraint::Sum { value: 1.0 },
        ],
    })
}

/// Equations for the initial distribution.
pub fn build_lambda_system(
    cond: &ConditionalTable,
    table: &ChoiceTable,
    assortments: &[Assortment],
) -> Result<LinearSystem> {
    let n = cond.n();
    let mut rows = Vec::new();
    for s in assortments {
        for j in s.outcomes() {
            let coefficients = (0..=n)
                .map(|k| lookup(cond, s, k, j))
                .collect::<Result<Vec<_>>>()?;
            rows.push(EquationRow {
                assortment: s.clone(),
                outcome: j,
                coefficients,
                rhs: table.prob(j, s)?.clamp(0.0, 1.0),
            });
        }
    }
    Ok(LinearSystem {
        columns: (0..=n).collect(),
        rows,
        constraints: vec![Constraint::Sum { value: 1.0 }],
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SystemSolution {
    /// Values for every column, fixed ones included.
    pub solution: Vec<f64>,
    pub residual: f64,
    pub rank: RankInfo,
    pub unknowns: usize,
}

/// Least-squares solve after eliminating fixed columns; sum constraints
/// become extra equations. Fails with [`Error::UnderdeterminedSystem`] when
/// the numerical rank is below the number of free unknowns.
pub fn solve_system(sys: &LinearSystem, rank_tolerance: f64) -> Result<SystemSolution> {
    let width = sys.columns.len();
    let mut fixed: Vec<Option<f64>> = vec![None; width];
    let mut sums = Vec::new();
    for c in &sys.constraints {
        match *c {
            Constraint::Fix { column, value } => fixed[column] = Some(value),
            Constraint::Sum { value } => sums.push(value),
        }
    }
    let free: Vec<usize> = (0..width).filter(|&c| fixed[c].is_none()).collect();

    let height = sys.rows.len() + sums.len();
    let mut a = DMatrix::zeros(height, free.len());
    let mut b = DVector::zeros(height);
    for (r, row) in sys.rows.iter().enumerate() {
        let mut rhs = row.rhs;
        for (c, coef) in row.coefficients.iter().enumerate() {
            if let Some(v) = fixed[c] {
                rhs -= coef * v;
            }
        }
        for (fc, &c) in free.iter().enumerate() {
            a[(r, fc)] = row.coefficients[c];
        }
        b[r] = rhs;
    }
    let fixed_total: f64 = fixed.iter().flatten().sum();
    for (s, value) in sums.iter().enumerate() {
        let r = sys.rows.len() + s;
        a.row_mut(r).fill(1.0);
        b[r] = value - fixed_total;
    }

    let (x_free, rank) = linalg::lstsq_min_norm(&a, &b, rank_tolerance);
    let mut solution = vec![0.0; width];
    for (c, value) in fixed.iter().enumerate() {
        if let Some(v) = value {
            solution[c] = *v;
        }
    }
    for (fc, &c) in free.iter().enumerate() {
        solution[c] = x_free[fc];
    }
    let residual = sys.residual(&solution);
    if rank.rank < free.len() {
        return Err(Error::UnderdeterminedSystem {
            rank: rank.rank,
            unknowns: free.len(),
            residual,
        });
    }
    Ok(SystemSolution {
        solution,
        residual,
        rank,
        unknowns: free.len(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RecoverOptions {
    pub rank_tolerance: f64,
    pub denom_tolerance: f64,
}

impl Default for RecoverOptions {
    fn default() -> Self {
        Self {
            rank_tolerance: DEFAULT_RANK_TOLERANCE,
            denom_tolerance: DEFAULT_DENOM_TOLERANCE,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RankSummary {
    pub rank: usize,
    pub unknowns: usize,
    pub threshold: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RecoveryReport {
    pub recovered: ModelParams,
    pub per_system_residual: BTreeMap<SystemId, f64>,
    pub per_system_rank: BTreeMap<SystemId, RankSummary>,
    /// Systems whose solution was clipped and renormalized.
    pub projected: Vec<SystemId>,
    pub max_param_error: Option<f64>,
}

impl RecoveryReport {
    /// Records the entrywise error against known parameters.
    pub fn attach_truth(&mut self, truth: &ModelParams) -> Result<f64> {
        let err = self.recovered.max_abs_diff(truth)?;
        self.max_param_error = Some(err);
        Ok(err)
    }

    pub fn to_json(&self) -> String {
        crate::json::to_string(&ReportJson {
            recovered: Some(&self.recovered),
            residuals: &self.per_system_residual,
            ranks: &self.per_system_rank,
            projected: &self.projected,
            max_param_error: self.max_param_error,
            failures: &BTreeMap::new(),
        })
    }
}

/// Per-system outcomes of a recovery run, before assembly.
#[derive(Clone, Debug)]
pub struct PartialRecovery {
    n: usize,
    systems: BTreeMap<SystemId, Result<SystemSolution>>,
}

impl PartialRecovery {
    pub fn systems(&self) -> &BTreeMap<SystemId, Result<SystemSolution>> {
        &self.systems
    }

    pub fn failures(&self) -> impl Iterator<Item = (SystemId, &Error)> {
        self.systems
            .iter()
            .filter_map(|(id, r)| r.as_ref().err().map(|e| (*id, e)))
    }

    /// Assembles the recovered model, failing on the first failed system.
    pub fn into_report(self) -> Result<RecoveryReport> {
        let n = self.n;
        let mut lambda = Vec::new();
        let mut rho = vec![vec![0.0; n + 1]; n + 1];
        rho[0][0] = 1.0;
        let mut per_system_residual = BTreeMap::new();
        let mut per_system_rank = BTreeMap::new();
        let mut projected = Vec::new();
        for (id, outcome) in self.systems {
            let sol = outcome.map_err(|e| Error::System {
                system: id,
                source: Box::new(e),
            })?;
            per_system_residual.insert(id, sol.residual);
            per_system_rank.insert(id, summarize(&sol));
            let (values, was_projected) = project(sol.solution);
            if was_projected {
                projected.push(id);
            }
            match id {
                SystemId::Rho(i) => rho[i] = values,
                SystemId::Lambda => lambda = values,
            }
        }
        Ok(RecoveryReport {
            recovered: ModelParams::new(lambda, rho)?,
            per_system_residual,
            per_system_rank,
            projected,
            max_param_error: None,
        })
    }

    /// Report of whatever systems succeeded, with failure messages.
    pub fn to_json(&self) -> String {
        let residuals = self
            .systems
            .iter()
            .filter_map(|(id, r)| r.as_ref().ok().map(|s| (*id, s.residual)))
            .collect();
        let ranks = self
            .systems
            .iter()
            .filter_map(|(id, r)| r.as_ref().ok().map(|s| (*id, summarize(s))))
            .collect();
        let failures = self.failures().map(|(id, e)| (id, e.to_string())).collect();
        crate::json::to_string(&ReportJson {
            recovered: None,
            residuals: &residuals,
            ranks: &ranks,
            projected: &[],
            max_param_error: None,
            failures: &failures,
        })
    }
}

fn summarize(sol: &SystemSolution) -> RankSummary {
    RankSummary {
        rank: sol.rank.rank,
        unknowns: sol.unknowns,
        threshold: sol.rank.threshold,
    }
}

/// Zeroes tiny negative entries; clips and renormalizes when an entry is
/// below `-PROJECTION_TRIGGER` or the clipped sum is off by more than the
/// stochasticity tolerance used by model validation.
fn project(mut values: Vec<f64>) -> (Vec<f64>, bool) {
    let clip = values.iter().any(|&v| v < -PROJECTION_TRIGGER);
    for v in values.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    let needs = clip || (values.iter().sum::<f64>() - 1.0).abs() > STOCHASTIC_TOLERANCE;
    if needs {
        let total: f64 = values.iter().sum();
        if total > 0.0 {
            for v in values.iter_mut() {
                *v /= total;
            }
        }
    }
    (values, needs)
}

struct IdMap<'a, V>(&'a BTreeMap<SystemId, V>);

impl<V: Serialize> Serialize for IdMap<'_, V> {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(self.0.len()))?;
        for (id, v) in self.0 {
            map.serialize_entry(&id.to_string(), v)?;
        }
        map.end()
    }
}

struct ReportJson<'a> {
    recovered: Option<&'a ModelParams>,
    residuals: &'a BTreeMap<SystemId, f64>,
    ranks: &'a BTreeMap<SystemId, RankSummary>,
    projected: &'a [SystemId],
    max_param_error: Option<f64>,
    failures: &'a BTreeMap<SystemId, String>,
}

impl Serialize for ReportJson<'_> {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(None)?;
        map.serialize_entry("recovered", &self.recovered)?;
        map.serialize_entry("per_system_residual", &IdMap(self.residuals))?;
        map.serialize_entry("per_system_rank", &IdMap(self.ranks))?;
        let projected: Vec<String> = self.projected.iter().map(ToString::to_string).collect();
        map.serialize_entry("projected", &projected)?;
        map.serialize_entry("max_param_error", &self.max_param_error)?;
        map.serialize_entry("failures", &IdMap(self.failures))?;
        map.end()
    }
}

/// Builds and solves every system of the plan, keeping per-system failures.
///
/// Errors that prevent any system from being built (missing data, failed
/// conditional probabilities) are returned directly.
pub fn recover_partial(table: &ChoiceTable, plan: &RecoveryPlan, options: &RecoverOptions) -> Result<PartialRecovery> {
    let n = plan.n();
    if let Some(missing) = plan.required_assortments().iter().find(|s| !table.contains(s)) {
        return Err(Error::MissingAssortment {
            assortment: missing.clone(),
        });
    }
    let cond = build_conditional_table(table, &plan.conditional_assortments(), n, options.denom_tolerance)?;

    let ids: Vec<SystemId> = (1..=n).map(SystemId::Rho).chain([SystemId::Lambda]).collect();
    let systems = ids
        .par_iter()
        .map(|&id| {
            let sys = match id {
                SystemId::Rho(i) => build_rho_system(&cond, i, plan.fan(i)),
                SystemId::Lambda => build_lambda_system(&cond, table, plan.lambda_assortments()),
            };
            (id, sys.and_then(|s| solve_system(&s, options.rank_tolerance)))
        })
        .collect::<Vec<_>>()
        .into_iter()
        .collect();
    Ok(PartialRecovery { n, systems })
}

/// Recovers `lambda` and `rho` from the choice probabilities of the plan's
/// assortments.
pub fn recover(table: &ChoiceTable, plan: &RecoveryPlan, options: &RecoverOptions) -> Result<RecoveryReport> {
    recover_partial(table, plan, options)?.into_report()
}

/// Recovery from the full assortment and every assortment missing one
/// product: `lambda_j = pi(j, N)` and
/// `rho[i][j] = (pi(j, N \ {i}) - pi(j, N)) / pi(i, N)`.
pub fn recover_full_assortment(table: &ChoiceTable, n: usize, denom_tolerance: f64) -> Result<ModelParams> {
    let full = Assortment::full(n)?;
    let lambda = (0..=n)
        .map(|j| table.prob(j, &full))
        .collect::<Result<Vec<_>>>()?;
    let mut rho = vec![vec![0.0; n + 1]; n + 1];
    rho[0][0] = 1.0;
    for i in 1..=n {
        let denom = lambda[i];
        if !(denom > denom_tolerance) {
            return Err(Error::ZeroDenominator {
                assortment: full,
                product: i,
                value: denom,
                tolerance: denom_tolerance,
            });
        }
        let reduced = full.without(i)?;
        for j in (0..=n).filter(|&j| j != i) {
            rho[i][j] = (table.prob(j, &reduced)? - lambda[j]) / denom;
        }
    }
    ModelParams::new(lambda, rho)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::choice::ConditionalTable;
    use crate::model::{generate_random, validate};
    use crate::plan::build_plan;

    fn a(p: &[usize]) -> Assortment {
        Assortment::new(p.iter().copied()).unwrap()
    }

    fn sym() -> ModelParams {
        ModelParams::uniform(3, 0.0).unwrap()
    }

    #[test]
    fn rho_system_rows_for_uniform_model() {
        let m = sym();
        let s = a(&[1, 2]);
        let cond = ConditionalTable::exact(&m, [&s]).unwrap();
        let sys = build_rho_system(&cond, 3, &[s.clone()]).unwrap();
        assert_eq!(sys.rows().len(), 3);
        let row1 = &sys.rows()[1];
        assert_eq!(row1.outcome, 1);
        assert!((row1.rhs - 0.5).abs() < 1e-15);
        // Columns of S_+ form the identity.
        let h = sys.coefficient_matrix();
        for (r, j) in s.outcomes().enumerate() {
            for k in s.outcomes() {
                assert_eq!(h[(r, k)], if j == k { 1.0 } else { 0.0 });
            }
        }
        assert!(sys.residual(m.rho_row(3)) < 1e-15);
        assert!(build_rho_system(&cond, 1, &[s]).is_err());
    }

    #[test]
    fn empty_fan_is_underdetermined() {
        let cond = ConditionalTable::empty(3);
        let sys = build_rho_system(&cond, 2, &[]).unwrap();
        assert_eq!(sys.constraints().len(), 2);
        assert!(matches!(
            solve_system(&sys, DEFAULT_RANK_TOLERANCE),
            Err(Error::UnderdeterminedSystem { rank: 1, unknowns: 3, .. })
        ));
        let table = ChoiceTable::new();
        let lam = build_lambda_system(&cond, &table, &[]).unwrap();
        assert!(matches!(
            solve_system(&lam, DEFAULT_RANK_TOLERANCE),
            Err(Error::UnderdeterminedSystem { .. })
        ));
    }

    #[test]
    fn missing_conditional_is_named() {
        let cond = ConditionalTable::empty(3);
        let err = build_rho_system(&cond, 3, &[a(&[1, 2])]).unwrap_err();
        assert!(matches!(err, Error::MissingConditional { origin: 0, outcome: 0, .. }));
    }

    #[test]
    fn identity_system_solves_to_rhs() {
        let b = [0.1, 0.2, 0.3, 0.4];
        let sys = LinearSystem {
            columns: (0..4).collect(),
            rows: (0..4)
                .map(|r| EquationRow {
                    assortment: a(&[1]),
                    outcome: r,
                    coefficients: (0..4).map(|c| if c == r { 1.0 } else { 0.0 }).collect(),
                    rhs: b[r],
                })
                .collect(),
            constraints: vec![],
        };
        let sol = solve_system(&sys, DEFAULT_RANK_TOLERANCE).unwrap();
        assert_eq!(sol.rank.rank, 4);
        assert!(sol.residual < 1e-15);
        for (x, y) in sol.solution.iter().zip(b) {
            assert!((x - y).abs() < 1e-15);
        }

        let mut dup = sys.clone();
        dup.rows.push(sys.rows[2].clone());
        let sol2 = solve_system(&dup, DEFAULT_RANK_TOLERANCE).unwrap();
        assert_eq!(sol2.rank.rank, 4);
        for (x, y) in sol.solution.iter().zip(&sol2.solution) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn uniform_model_round_trip() {
        let m = sym();
        let plan = build_plan(3, 2).unwrap();
        let table = ChoiceTable::exact(&m, plan.required_assortments()).unwrap();
        let mut report = recover(&table, &plan, &RecoverOptions::default()).unwrap();
        assert!(report.attach_truth(&m).unwrap() < 1e-10);
        assert!(report.projected.is_empty());
        assert_eq!(validate(&report.recovered), vec![]);
        let lam = report.recovered.lambda();
        for (x, y) in lam.iter().zip([0.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn lambda_system_on_full_assortment_is_identity() {
        let m = generate_random(4, 0.2, 9).unwrap();
        let full = Assortment::full(4).unwrap();
        let table = ChoiceTable::exact(&m, [&full]).unwrap();
        let cond = ConditionalTable::exact(&m, [&full]).unwrap();
        let sys = build_lambda_system(&cond, &table, &[full]).unwrap();
        assert_eq!(sys.coefficient_matrix(), DMatrix::<f64>::identity(5, 5));
        let sol = solve_system(&sys, DEFAULT_RANK_TOLERANCE).unwrap();
        for (x, y) in sol.solution.iter().zip(m.lambda()) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn full_assortment_baseline() {
        let m = sym();
        let mut sets = vec![Assortment::full(3).unwrap()];
        sets.extend((1..=3).map(|i| Assortment::full(3).unwrap().without(i).unwrap()));
        let table = ChoiceTable::exact(&m, &sets).unwrap();
        let got = recover_full_assortment(&table, 3, DEFAULT_DENOM_TOLERANCE).unwrap();
        assert!(got.max_abs_diff(&m).unwrap() < 1e-14);

        let zero = ModelParams::new(vec![0.0, 0.5, 0.5, 0.0], m.rho().to_vec()).unwrap();
        let table = ChoiceTable::exact(&zero, &sets).unwrap();
        assert!(matches!(
            recover_full_assortment(&table, 3, DEFAULT_DENOM_TOLERANCE),
            Err(Error::ZeroDenominator { product: 3, .. })
        ));
    }

    #[test]
    fn missing_required_assortment_is_named() {
        let m = generate_random(5, 0.1, 4).unwrap();
        let plan = build_plan(5, 2).unwrap();
        let mut table = ChoiceTable::exact(&m, plan.required_assortments()).unwrap();
        let victim = plan.required_assortments().iter().nth(3).unwrap().clone();
        table.remove(&victim);
        assert_eq!(
            recover(&table, &plan, &RecoverOptions::default()).unwrap_err(),
            Error::MissingAssortment { assortment: victim }
        );
    }

    #[test]
    fn projection_only_when_needed() {
        let (v, p) = project(vec![0.25, 0.25, 0.5]);
        assert!(!p);
        assert_eq!(v, vec![0.25, 0.25, 0.5]);
        let (v, p) = project(vec![-1e-17, 0.5, 0.5]);
        assert!(!p);
        assert_eq!(v, vec![0.0, 0.5, 0.5]);
        let (v, p) = project(vec![-0.1, 0.6, 0.5]);
        assert!(p);
        assert!((v[1] - 0.6 / 1.1).abs() < 1e-15 && v[0] == 0.0);
    }

    #[test]
    fn report_json_shape() {
        let m = sym();
        let plan = build_plan(3, 2).unwrap();
        let table = ChoiceTable::exact(&m, plan.required_assortments()).unwrap();
        let report = recover(&table, &plan, &RecoverOptions::default()).unwrap();
        let v: serde_json::Value = serde_json::from_str(&report.to_json()).unwrap();
        assert_eq!(v["recovered"]["n"], 3);
        assert!(v["per_system_residual"]["lambda"].is_number());
        assert_eq!(v["per_system_rank"]["2"]["unknowns"], 3);
        assert!(v["failures"].as_object().unwrap().is_empty());
        let back = ModelParams::from_json(&v["recovered"].to_string()).unwrap();
        assert_eq!(back, report.recovered);
    }
}
