use proptest::prelude::*;
use rsem::generator::{
    chain_at_grid, coupling_tail, simulate_chain_seeded, stationary_distribution, GeneratorMatrix,
};

fn generator(n: usize, rates: &[f64]) -> GeneratorMatrix {
    let mut rows = vec![vec![0.0; n]; n];
    let mut k = 0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                rows[i][j] = rates[k];
                k += 1;
            }
        }
        rows[i][i] = -rows[i].iter().sum::<f64>();
    }
    GeneratorMatrix::from_rows(&rows).unwrap()
}

fn arb_generator() -> impl Strategy<Value = GeneratorMatrix> {
    (2usize..=6).prop_flat_map(|n| {
        prop::collection::vec(0.05f64..5.0, n * (n - 1)).prop_map(move |r| generator(n, &r))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn stationary_solves_balance(q in arb_generator()) {
        let mu = stationary_distribution(&q).unwrap();
        prop_assert!(mu.residual(&q) < 1e-12 * q.q0().max(1.0));
        prop_assert!(mu.as_slice().iter().all(|m| *m > 0.0));
        prop_assert!((mu.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn stationary_follows_relabelling(q in arb_generator(), shift in 0usize..6) {
        let n = q.len();
        let perm: Vec<usize> = (0..n).map(|k| (k + shift) % n).collect();
        let mu = stationary_distribution(&q).unwrap();
        let nu = stationary_distribution(&q.permuted(&perm).unwrap()).unwrap();
        for k in 0..n {
            prop_assert!((nu.get(k) - mu.get(perm[k])).abs() < 1e-12);
        }
    }

    #[test]
    fn grid_sampling_matches_direct_lookup(q in arb_generator(), seed in any::<u64>(), delta in 0.001f64..0.5) {
        let steps = (5.0 / delta) as usize;
        let path = simulate_chain_seeded(&q, 0, steps as f64 * delta, seed).unwrap();
        let grid = chain_at_grid(&path, delta, steps).unwrap();
        for (k, s) in grid.iter().enumerate() {
            // brute force: last jump at or before k * delta
            let t = k as f64 * delta;
            let expect = path
                .jump_times
                .iter()
                .zip(&path.states)
                .filter(|(tj, _)| **tj <= t)
                .last()
                .map_or(path.initial, |(_, s)| *s);
            prop_assert_eq!(*s, expect);
            prop_assert_eq!(path.state_at(t), expect);
        }
    }
}

#[test]
fn occupation_approaches_stationary_law() {
    let q = generator(3, &[1.0, 2.0, 0.5, 0.5, 3.0, 1.0]);
    let mu = stationary_distribution(&q).unwrap();
    let path = simulate_chain_seeded(&q, 0, 20_000.0, 42).unwrap();
    let occ = path.occupation(3);
    for i in 0..3 {
        assert!((occ[i] - mu.get(i)).abs() < 0.02, "{occ:?} vs {:?}", mu.as_slice());
    }
}

#[test]
fn seeded_paths_are_reproducible() {
    let q = generator(2, &[4.0, 1.0]);
    let a = simulate_chain_seeded(&q, 1, 100.0, 7).unwrap();
    let b = simulate_chain_seeded(&q, 1, 100.0, 7).unwrap();
    let c = simulate_chain_seeded(&q, 1, 100.0, 8).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn grid_beyond_horizon_is_rejected() {
    let q = generator(2, &[4.0, 1.0]);
    let path = simulate_chain_seeded(&q, 0, 1.0, 1).unwrap();
    assert!(chain_at_grid(&path, 0.1, 10).is_ok());
    assert!(chain_at_grid(&path, 0.1, 11).is_err());
}

#[test]
fn meeting_time_tail_decays() {
    let q = generator(2, &[4.0, 1.0]);
    let tail = coupling_tail(&q, 0, 1, 3.0, 4000, 5).unwrap();
    assert_eq!(tail.curve.len(), 100);
    assert!(tail.curve.windows(2).all(|w| w[1].1 <= w[0].1));
    assert!(tail.log_slope().unwrap() < 0.0);
    assert!(coupling_tail(&q, 1, 1, 3.0, 10, 5).is_err());
}
