#![allow(dead_code)]

use mccm::model::{generate_random, Assortment, ModelParams};
use mccm::plan::subsets_of_size;
use statrs::distribution::{ChiSquared, ContinuousCDF};

pub fn a(p: &[usize]) -> Assortment {
    Assortment::new(p.iter().copied()).unwrap()
}

/// The `count` models used by the sweeps: `n` cycles through `ns`, mass
/// alternates through `masses`, seeds are consecutive from `base_seed`.
pub fn model_sweep(count: usize, ns: &[usize], masses: &[f64], base_seed: u64) -> Vec<ModelParams> {
    (0..count)
        .map(|k| {
            let n = ns[k % ns.len()];
            let mass = masses[k % masses.len()];
            generate_random(n, mass, base_seed + k as u64).unwrap()
        })
        .collect()
}

/// All assortments with size in `sizes`.
pub fn assortments_of_sizes(n: usize, sizes: &[usize]) -> Vec<Assortment> {
    sizes.iter().flat_map(|&k| subsets_of_size(n, k)).collect()
}

/// Absorption probabilities by iterating `P <- rho_S P` from the identity on
/// absorbing states, where `rho_S` makes `S ∪ {0}` absorbing. Independent of
/// any linear solve. Rows are states `0..=n`, columns are outcomes of `S`.
pub fn absorption_by_iteration(model: &ModelParams, s: &Assortment) -> Vec<Vec<f64>> {
    let n = model.n();
    let outcomes: Vec<usize> = s.outcomes().collect();
    let mut p = vec![vec![0.0; outcomes.len()]; n + 1];
    for (c, &j) in outcomes.iter().enumerate() {
        p[j][c] = 1.0;
    }
    for _ in 0..100_000 {
        let mut next = p.clone();
        let mut delta: f64 = 0.0;
        for i in (1..=n).filter(|&i| !s.contains(i)) {
            for c in 0..outcomes.len() {
                let v: f64 = (0..=n).map(|k| model.rho_row(i)[k] * p[k][c]).sum();
                delta = delta.max((v - p[i][c]).abs());
                next[i][c] = v;
            }
        }
        p = next;
        if delta < 1e-16 {
            break;
        }
    }
    p
}

/// Reachability by Floyd–Warshall on the product graph; strongly connected
/// iff every product reaches every other.
pub fn strongly_connected_by_closure(rho: &[Vec<f64>], threshold: f64) -> bool {
    let n = rho.len() - 1;
    let mut reach = vec![vec![false; n + 1]; n + 1];
    for i in 1..=n {
        reach[i][i] = true;
        for j in 1..=n {
            if i != j && rho[i][j] > threshold {
                reach[i][j] = true;
            }
        }
    }
    for k in 1..=n {
        for i in 1..=n {
            for j in 1..=n {
                if reach[i][k] && reach[k][j] {
                    reach[i][j] = true;
                }
            }
        }
    }
    (1..=n).all(|i| (1..=n).all(|j| reach[i][j]))
}

/// Pearson chi-square p-value of `counts` against `probs`; cells with zero
/// expected probability must have zero counts and are dropped.
pub fn chi_square_p_value(counts: &[u64], probs: &[f64]) -> f64 {
    let total: u64 = counts.iter().sum();
    let mut stat = 0.0;
    let mut cells = 0;
    for (&c, &p) in counts.iter().zip(probs) {
        if p <= 1e-15 {
            assert_eq!(c, 0, "observed an outcome with zero probability");
            continue;
        }
        let expected = p * total as f64;
        stat += (c as f64 - expected).powi(2) / expected;
        cells += 1;
    }
    if cells < 2 {
        return 1.0;
    }
    ChiSquared::new((cells - 1) as f64).unwrap().sf(stat)
}

/// Least-squares slope of `log y` against `log x`.
pub fn log_log_slope(points: &[(f64, f64)]) -> f64 {
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = xs.iter().sum::<f64>() / xs.len() as f64;
    let my = ys.iter().sum::<f64>() / ys.len() as f64;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

pub fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let k = v.len();
    if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}
