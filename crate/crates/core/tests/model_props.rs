mod common;

use mccm::model::{generate_random, product_graph_strongly_connected, validate, ModelParams, EDGE_THRESHOLD};
use proptest::prelude::*;

#[test]
fn generated_models_are_valid() {
    for n in 3..=20 {
        for &mass in &[0.0, 0.1, 0.3] {
            for seed in 0..100 {
                let m = generate_random(n, mass, seed).unwrap();
                assert_eq!(validate(&m), vec![], "n={n} mass={mass} seed={seed}");
            }
        }
    }
}

#[test]
fn generator_is_deterministic_and_seed_sensitive() {
    let a = generate_random(8, 0.2, 11).unwrap();
    let b = generate_random(8, 0.2, 11).unwrap();
    let c = generate_random(8, 0.2, 12).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

/// A random model over `n` products whose product graph keeps each edge
/// with probability `density`.
fn sparse_model() -> impl Strategy<Value = ModelParams> {
    (1usize..=6)
        .prop_flat_map(|n| {
            let cells = (n + 1) * (n + 1);
            (
                Just(n),
                prop::collection::vec(0.01f64..1.0, cells),
                prop::collection::vec(prop::bool::weighted(0.35), cells),
            )
        })
        .prop_map(|(n, weights, keep)| {
            let mut rho = vec![vec![0.0; n + 1]; n + 1];
            rho[0][0] = 1.0;
            for i in 1..=n {
                let idx = |j: usize| i * (n + 1) + j;
                let mut row: Vec<f64> = (0..=n)
                    .map(|j| if j != i && keep[idx(j)] { weights[idx(j)] } else { 0.0 })
                    .collect();
                let total: f64 = row.iter().sum();
                if total == 0.0 {
                    row[0] = 1.0;
                } else {
                    row.iter_mut().for_each(|x| *x /= total);
                }
                rho[i] = row;
            }
            let mut lambda = vec![1.0 / n as f64; n + 1];
            lambda[0] = 0.0;
            ModelParams::new(lambda, rho).unwrap()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn irreducibility_matches_transitive_closure(m in sparse_model()) {
        let expected = common::strongly_connected_by_closure(m.rho(), EDGE_THRESHOLD);
        prop_assert_eq!(product_graph_strongly_connected(&m), expected);
    }

    #[test]
    fn json_round_trip_is_exact(n in 3usize..12, mass in 0.0f64..0.9, seed in any::<u64>()) {
        let m = generate_random(n, mass, seed).unwrap();
        let back = ModelParams::from_json(&m.to_json()).unwrap();
        prop_assert_eq!(back, m);
    }
}

#[test]
fn model_file_layout() {
    let m = ModelParams::uniform(3, 0.0).unwrap();
    let v: serde_json::Value = serde_json::from_str(&m.to_json()).unwrap();
    assert_eq!(v["n"], 3);
    assert_eq!(v["lambda"].as_array().unwrap().len(), 4);
    assert_eq!(v["rho"].as_array().unwrap().len(), 4);
    assert!(m.to_json().contains("3.3333333333333331e-1"));
    // Hand-written files with short decimals parse too.
    let hand = r#"{"n": 3, "lambda": [0, 0.5, 0.25, 0.25],
        "rho": [[1,0,0,0],[0,0,0.5,0.5],[0,0.5,0,0.5],[0.1,0.45,0.45,0]]}"#;
    assert_eq!(validate(&ModelParams::from_json(hand).unwrap()), vec![]);
}
