//! Exact choice probabilities and conditional choice probabilities.
//!
//! Offering an assortment `S` makes the states `S ∪ {0}` absorbing.
//! `pi(j, S)` is the probability that the walk started from `lambda` is
//! absorbed at `j`; `pi(j, S | i)` is the same probability for a walk
//! started at state `i`. Conditional probabilities are not observable, but
//! they follow from unconditional ones for `S` and `S ∪ {i}`, which is what
//! [`conditional_from_tables`] computes. [`conditional_direct`] evaluates
//! the definition on a known model and serves as its oracle.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::ser::{SerializeMap, SerializeStruct};
use serde::{Serialize, Serializer};

use crate::error::{ConditionalFailure, Error, Result};
use crate::model::{Assortment, ModelParams};

/// Denominator guard for exact tables.
pub const DEFAULT_DENOM_TOLERANCE: f64 = 1e-12;

/// Denominator guard suggested for Monte Carlo tables.
pub const NOISY_DENOM_TOLERANCE: f64 = 1e-6;

/// Tolerance for the row sums of a computed absorption matrix.
const ABSORPTION_SUM_TOLERANCE: f64 = 1e-8;

/// Absorption probabilities for one assortment: entry `(i, t)` is the
/// probability of absorbing at the `t`-th outcome of `S` when starting at
/// state `i`.
#[derive(Clone, Debug, PartialEq)]
pub struct Absorption {
    assortment: Assortment,
    probs: DMatrix<f64>,
}

impl Absorption {
    pub fn assortment(&self) -> &Assortment {
        &self.assortment
    }

    /// Rows are states `0..=n`, columns follow [`Assortment::outcomes`].
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.probs
    }

    /// `Pr(absorb at outcome | start at origin)`, or `None` when `outcome`
    /// is not absorbing for this assortment.
    pub fn prob(&self, origin: usize, outcome: usize) -> Option<f64> {
        let col = self.assortment.outcome_index(outcome)?;
        (origin < self.probs.nrows()).then(|| self.probs[(origin, col)])
    }
}

/// Solves `(I - Q) X = R` over the transient states `T = N \ S`, where `Q`
/// is `rho` on `T x T` and `R` is `rho` on `T x S_+`.
pub fn absorption_probabilities(model: &ModelParams, s: &Assortment) -> Result<Absorption> {
    let n = model.n();
    s.check_bounds(n)?;
    let outcomes: Vec<usize> = s.outcomes().collect();
    let transient: Vec<usize> = (1..=n).filter(|&k| !s.contains(k)).collect();

    let mut probs = DMatrix::zeros(n + 1, outcomes.len());
    for (col, &j) in outcomes.iter().enumerate() {
        probs[(j, col)] = 1.0;
    }
    if transient.is_empty() {
        return Ok(Absorption {
            assortment: s.clone(),
            probs,
        });
    }

    let t = transient.len();
    let rho = model.rho();
    let lhs = DMatrix::from_fn(t, t, |a, b| {
        let delta = if a == b { 1.0 } else { 0.0 };
        delta - rho[transient[a]][transient[b]]
    });
    let rhs = DMatrix::from_fn(t, outcomes.len(), |a, col| rho[transient[a]][outcomes[col]]);
    let singular = || Error::SingularSystem {
        assortment: s.clone(),
    };
    let solved = lhs.lu().solve(&rhs).ok_or_else(singular)?;

    for (a, &state) in transient.iter().enumerate() {
        let row = solved.row(a);
        if row.iter().any(|x| !x.is_finite()) || (row.sum() - 1.0).abs() > ABSORPTION_SUM_TOLERANCE {
            return Err(singular());
        }
        probs.row_mut(state).copy_from(&row);
    }
    Ok(Absorption {
        assortment: s.clone(),
        probs,
    })
}

/// `(pi(j, S))` for `j` in outcome order.
pub fn exact_choice_probs(model: &ModelParams, s: &Assortment) -> Result<Vec<f64>> {
    let absorption = absorption_probabilities(model, s)?;
    let lambda = model.lambda();
    Ok((0..s.outcome_count())
        .map(|col| {
            lambda
                .iter()
                .enumerate()
                .map(|(i, l)| l * absorption.probs[(i, col)])
                .sum()
        })
        .collect())
}

/// `pi(j, S | i)` straight from the definition.
pub fn conditional_direct(model: &ModelParams, s: &Assortment, i: usize, j: usize) -> Result<f64> {
    if i > model.n() {
        return Err(Error::domain(format!("origin state {i} is outside 0..={}", model.n())));
    }
    if !s.is_outcome(j) {
        return Err(Error::domain(format!("{j} is not an outcome of {s}")));
    }
    let absorption = absorption_probabilities(model, s)?;
    Ok(absorption.prob(i, j).expect("checked above"))
}

/// Observed choice probabilities, keyed by assortment. Each vector is indexed
/// by [`Assortment::outcomes`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ChoiceTable {
    entries: BTreeMap<Assortment, Vec<f64>>,
}

impl ChoiceTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Exact choice probabilities for every listed assortment.
    pub fn exact<'a, I>(model: &ModelParams, assortments: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a Assortment>,
    {
        let list: Vec<&Assortment> = assortments.into_iter().collect();
        let computed: Vec<(Assortment, Vec<f64>)> = list
            .par_iter()
            .map(|s| Ok(((*s).clone(), exact_choice_probs(model, s)?)))
            .collect::<Result<_>>()?;
        let mut table = Self::new();
        for (s, probs) in computed {
            table.insert(s, probs)?;
        }
        Ok(table)
    }

    pub fn insert(&mut self, s: Assortment, probs: Vec<f64>) -> Result<()> {
        if probs.len() != s.outcome_count() {
            return Err(Error::domain(format!(
                "assortment {s} needs {} probabilities, got {}",
                s.outcome_count(),
                probs.len()
            )));
        }
        if probs.iter().any(|p| !p.is_finite()) {
            return Err(Error::domain(format!("non-finite probability for {s}")));
        }
        self.entries.insert(s, probs);
        Ok(())
    }

    pub fn get(&self, s: &Assortment) -> Option<&[f64]> {
        self.entries.get(s).map(Vec::as_slice)
    }

    pub fn contains(&self, s: &Assortment) -> bool {
        self.entries.contains_key(s)
    }

    /// `pi(j, S)`.
    pub fn prob(&self, j: usize, s: &Assortment) -> Result<f64> {
        let probs = self.get(s).ok_or_else(|| Error::MissingAssortment {
            assortment: s.clone(),
        })?;
        let idx = s
            .outcome_index(j)
            .ok_or_else(|| Error::domain(format!("{j} is not an outcome of {s}")))?;
        Ok(probs[idx])
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Assortment, &[f64])> {
        self.entries.iter().map(|(s, p)| (s, p.as_slice()))
    }

    pub fn assortments(&self) -> impl Iterator<Item = &Assortment> {
        self.entries.keys()
    }

    pub fn remove(&mut self, s: &Assortment) -> Option<Vec<f64>> {
        self.entries.remove(s)
    }

    /// Largest `|sum - 1|` over stored vectors.
    pub fn max_normalization_error(&self) -> f64 {
        self.entries
            .values()
            .map(|p| (p.iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Writes one JSON record per line, in (size, lexicographic) order.
    pub fn write_ndjson<W: Write>(&self, mut writer: W) -> Result<()> {
        for (s, probs) in &self.entries {
            crate::json::to_writer(&mut writer, &Record { s, probs })
                .map_err(|e| Error::Parse(e.to_string()))?;
            writer
                .write_all(b"\n")
                .map_err(|e| Error::Parse(e.to_string()))?;
        }
        Ok(())
    }

    pub fn to_ndjson(&self) -> String {
        let mut buf = Vec::new();
        self.write_ndjson(&mut buf).expect("writing to memory cannot fail");
        String::from_utf8(buf).expect("UTF-8 output")
    }

    /// Reads records written by [`ChoiceTable::write_ndjson`]. Blank lines
    /// are skipped; a duplicate assortment is an error.
    pub fn read_ndjson<R: BufRead>(reader: R) -> Result<Self> {
        let mut table = Self::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::Parse(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let (s, probs) = parse_record(&line)
                .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))?;
            if table.contains(&s) {
                return Err(Error::Parse(format!(
                    "line {}: duplicate assortment {s}",
                    lineno + 1
                )));
            }
            table.insert(s, probs)?;
        }
        Ok(table)
    }

    pub fn from_ndjson(text: &str) -> Result<Self> {
        Self::read_ndjson(text.as_bytes())
    }
}

struct Record<'a> {
    s: &'a Assortment,
    probs: &'a [f64],
}

struct OutcomeMap<'a>(&'a Assortment, &'a [f64]);

impl Serialize for OutcomeMap<'_> {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(self.1.len()))?;
        for (j, p) in self.0.outcomes().zip(self.1) {
            map.serialize_entry(&j.to_string(), p)?;
        }
        map.end()
    }
}

impl Serialize for Record<'_> {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut st = serializer.serialize_struct("Record", 2)?;
        st.serialize_field("S", self.s)?;
        st.serialize_field("pi", &OutcomeMap(self.s, self.probs))?;
        st.end()
    }
}

fn parse_record(line: &str) -> std::result::Result<(Assortment, Vec<f64>), String> {
    #[derive(serde::Deserialize)]
    #[serde(deny_unknown_fields)]
    struct Raw {
        #[serde(rename = "S")]
        s: Vec<usize>,
        pi: BTreeMap<String, f64>,
    }
    let raw: Raw = serde_json::from_str(line).map_err(|e| e.to_string())?;
    let s = Assortment::new(raw.s).map_err(|e| e.to_string())?;
    let mut probs = vec![f64::NAN; s.outcome_count()];
    for (key, p) in raw.pi {
        let j: usize = key
            .parse()
            .map_err(|_| format!("outcome key {key:?} is not an integer"))?;
        let idx = s
            .outcome_index(j)
            .ok_or_else(|| format!("outcome {j} is not in {s} or 0"))?;
        probs[idx] = p;
    }
    if let Some(missing) = s.outcomes().zip(&probs).find(|(_, p)| p.is_nan()) {
        return Err(format!("missing probability for outcome {} of {s}", missing.0));
    }
    Ok((s, probs))
}

/// `pi(j, S | i)` for origins `0..=n` and outcomes of each stored `S`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionalTable {
    n: usize,
    entries: BTreeMap<Assortment, DMatrix<f64>>,
}

impl ConditionalTable {
    pub fn empty(n: usize) -> Self {
        Self {
            n,
            entries: BTreeMap::new(),
        }
    }

    /// Conditional table computed from the model by absorption solves.
    pub fn exact<'a, I>(model: &ModelParams, assortments: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a Assortment>,
    {
        let mut table = Self::empty(model.n());
        for s in assortments {
            let absorption = absorption_probabilities(model, s)?;
            table.entries.insert(s.clone(), absorption.probs);
        }
        Ok(table)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, s: &Assortment, origin: usize, outcome: usize) -> Option<f64> {
        let block = self.entries.get(s)?;
        let col = s.outcome_index(outcome)?;
        (origin <= self.n).then(|| block[(origin, col)])
    }

    /// Rows are origins `0..=n`, columns follow [`Assortment::outcomes`].
    pub fn block(&self, s: &Assortment) -> Option<&DMatrix<f64>> {
        self.entries.get(s)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn assortments(&self) -> impl Iterator<Item = &Assortment> {
        self.entries.keys()
    }

    /// Largest `|sum_j pi(j, S | i) - 1|` over all stored `(S, i)`.
    pub fn max_normalization_error(&self) -> f64 {
        self.entries
            .values()
            .flat_map(|block| block.row_iter().map(|r| (r.sum() - 1.0).abs()).collect::<Vec<_>>())
            .fold(0.0, f64::max)
    }
}

/// Conditional probability from unconditional tables:
///
/// - `1` if `i = j`;
/// - `0` if `i` is another outcome of `S`;
/// - `(pi(j, S) - pi(j, S+i)) / pi(i, S+i)` otherwise, clamped to `[0, 1]`.
pub fn conditional_from_tables(
    table: &ChoiceTable,
    s: &Assortment,
    i: usize,
    j: usize,
    denom_tolerance: f64,
) -> Result<f64> {
    if !s.is_outcome(j) {
        return Err(Error::domain(format!("{j} is not an outcome of {s}")));
    }
    if i == j {
        return Ok(1.0);
    }
    if s.is_outcome(i) {
        return Ok(0.0);
    }
    let row = conditional_row(table, s, i, denom_tolerance)?;
    Ok(row[s.outcome_index(j).expect("checked above")])
}

/// `pi(., S | i)` over the outcomes of `S`, for a product `i` not in `S`.
fn conditional_row(table: &ChoiceTable, s: &Assortment, i: usize, denom_tolerance: f64) -> Result<Vec<f64>> {
    let base = table.get(s).ok_or_else(|| Error::MissingAssortment {
        assortment: s.clone(),
    })?;
    let extended = s.with(i)?;
    let ext = table.get(&extended).ok_or_else(|| Error::MissingAssortment {
        assortment: extended.clone(),
    })?;
    let denom = ext[extended.outcome_index(i).expect("i was just added")];
    if !(denom > denom_tolerance) {
        return Err(Error::ZeroDenominator {
            assortment: extended,
            product: i,
            value: denom,
            tolerance: denom_tolerance,
        });
    }
    Ok(s.outcomes()
        .zip(base)
        .map(|(j, &p)| {
            let p_ext = ext[extended.outcome_index(j).expect("S is inside S+i")];
            ((p - p_ext) / denom).clamp(0.0, 1.0)
        })
        .collect())
}

/// Fills `pi(j, S | i)` for every listed `S`, every origin `i` in `0..=n`
/// and every outcome `j` of `S`. Failures for all `(S, i)` pairs are
/// collected into one [`Error::ConditionalFailures`].
pub fn build_conditional_table<'a, I>(
    table: &ChoiceTable,
    assortments: I,
    n: usize,
    denom_tolerance: f64,
) -> Result<ConditionalTable>
where
    I: IntoIterator<Item = &'a Assortment>,
{
    let list: Vec<&Assortment> = assortments.into_iter().collect();
    for s in &list {
        s.check_bounds(n)?;
    }
    let blocks: Vec<(Assortment, std::result::Result<DMatrix<f64>, Vec<ConditionalFailure>>)> = list
        .par_iter()
        .map(|&s| (s.clone(), conditional_block(table, s, n, denom_tolerance)))
        .collect();

    let mut out = ConditionalTable::empty(n);
    let mut failures = Vec::new();
    for (s, block) in blocks {
        match block {
            Ok(b) => {
                out.entries.insert(s, b);
            }
            Err(mut f) => failures.append(&mut f),
        }
    }
    if failures.is_empty() {
        Ok(out)
    } else {
        Err(Error::ConditionalFailures(failures))
    }
}

fn conditional_block(
    table: &ChoiceTable,
    s: &Assortment,
    n: usize,
    denom_tolerance: f64,
) -> std::result::Result<DMatrix<f64>, Vec<ConditionalFailure>> {
    let mut block = DMatrix::zeros(n + 1, s.outcome_count());
    let mut failures = Vec::new();
    if !table.contains(s) {
        failures.push(ConditionalFailure {
            assortment: s.clone(),
            origin: 0,
            error: Error::MissingAssortment {
                assortment: s.clone(),
            },
        });
        return Err(failures);
    }
    for i in 0..=n {
        if let Some(col) = s.outcome_index(i) {
            block[(i, col)] = 1.0;
            continue;
        }
        match conditional_row(table, s, i, denom_tolerance) {
            Ok(row) => {
                for (col, p) in row.into_iter().enumerate() {
                    block[(i, col)] = p;
                }
            }
            Err(error) => failures.push(ConditionalFailure {
                assortment: s.clone(),
                origin: i,
                error,
            }),
        }
    }
    if failures.is_empty() {
        Ok(block)
    } else {
        Err(failures)
    }
}
