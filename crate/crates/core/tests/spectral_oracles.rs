use nalgebra::DMatrix;
use proptest::prelude::*;
use rsem::generator::{stationary_distribution, GeneratorMatrix};
use rsem::spectral::{
    averaging_condition, build_qp, certify_additive, certify_multiplicative, eta_p_and_eigvec, spectral_certificate,
    RegimeBounds, DEFAULT_P_GRID,
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

/// Minus the largest real part among all eigenvalues, from a dense Schur solver.
fn abscissa_oracle(m: &DMatrix<f64>) -> f64 {
    let eig = m.clone().complex_eigenvalues();
    -eig.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max)
}

fn arb_case() -> impl Strategy<Value = (GeneratorMatrix, Vec<f64>)> {
    (2usize..=6).prop_flat_map(|n| {
        (
            prop::collection::vec(0.05f64..5.0, n * (n - 1)),
            prop::collection::vec(-4.0f64..4.0, n),
        )
            .prop_map(move |(r, b)| (generator(n, &r), b))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn perron_pair_matches_dense_solver((q, beta) in arb_case(), p in 0.05f64..2.0) {
        let bounds = RegimeBounds::new(beta, 1.0, 1.0, 0.0).unwrap();
        let qp = build_qp(&q, &bounds, p).unwrap();
        let pair = eta_p_and_eigvec(&qp).unwrap();
        prop_assert!(pair.residual(&qp) < 1e-10);
        prop_assert!(pair.xi.iter().all(|x| *x > 0.0));
        let oracle = abscissa_oracle(&qp);
        prop_assert!((pair.eta - oracle).abs() < 1e-8, "{} vs {}", pair.eta, oracle);
    }

    #[test]
    fn eta_is_concave_in_p((q, beta) in arb_case()) {
        let bounds = RegimeBounds::new(beta, 1.0, 1.0, 0.0).unwrap();
        let eta = |p: f64| spectral_certificate(&q, &bounds, p).unwrap().eta_p;
        prop_assert!(eta(0.0).abs() < 1e-12);
        let grid: Vec<f64> = (0..=8).map(|k| 0.25 * k as f64).collect();
        let values: Vec<f64> = grid.iter().map(|p| eta(*p)).collect();
        for w in values.windows(3) {
            prop_assert!(w[1] >= 0.5 * (w[0] + w[2]) - 1e-9);
        }
        // slope at the origin is minus half the averaged beta
        let mu = stationary_distribution(&q).unwrap();
        let avg = averaging_condition(&mu, &bounds).unwrap().sum;
        let h = 1e-5;
        prop_assert!(((eta(h) / h) + 0.5 * avg).abs() < 1e-3 * (1.0 + avg.abs()));
    }

    #[test]
    fn eigenvector_scale_does_not_move_bounds((q, beta) in arb_case(), c in 0.01f64..100.0) {
        let bounds = RegimeBounds::new(beta, 1.0, 2.0, 0.0).unwrap();
        let cert = spectral_certificate(&q, &bounds, 0.5).unwrap();
        let scaled = cert.rescaled(c);
        let a = rsem::spectral::alpha_additive(&bounds, &cert);
        let b = rsem::spectral::alpha_additive(&bounds, &scaled);
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
    }
}

#[test]
fn switching_ou_grid() {
    let q = generator(2, &[4.0, 1.0]);
    let bounds = RegimeBounds::new(vec![2.0, -1.0], 1.0, 1.0, 1.0).unwrap();
    let cands = certify_additive(&q, &bounds, &DEFAULT_P_GRID).unwrap();
    assert_eq!(cands.len(), 5);
    // closed form of the 2x2 abscissa
    for c in &cands {
        let p = c.cert.p;
        let (a, d) = (-4.0 + p, -1.0 - 0.5 * p);
        let top = 0.5 * (a + d) + (0.25 * (a - d).powi(2) + 4.0).sqrt();
        assert!((c.cert.eta_p + top).abs() < 1e-12);
        assert!(c.bound.is_some());
    }
    let eta: Vec<f64> = cands.iter().map(|c| c.cert.eta_p).collect();
    assert!(eta.windows(2).all(|w| w[1] > w[0]));
    let half = &cands[2];
    assert!((half.cert.eta_p - 0.0803).abs() < 1e-4);
    assert!((half.alpha - 57.47).abs() < 0.01);
    // eta_2 = 0 exactly for this chain, so nothing is certified at p = 2
    assert!(!spectral_certificate(&q, &bounds, 2.0).unwrap().eta_positive());
}

#[test]
fn three_state_multiplicative_certificate() {
    let q = generator(3, &[0.0, 3.0, 1.0, 2.0, 1.0, 2.0]);
    let bounds = RegimeBounds::new(vec![10.0 / 9.0, 0.0, -5.0], 0.0, 4.0, 0.0).unwrap();
    let m = certify_multiplicative(&q, &bounds).unwrap();
    assert!(m.star6);
    assert!((m.cert.eta_p - 0.81546).abs() < 1e-5);
    let expect = [1.0, 0.7853, 0.3578];
    for (x, e) in m.cert.xi.iter().zip(expect) {
        assert!((x - e).abs() < 1e-4);
    }
    let beta = m.beta.unwrap();
    assert!((beta - 4665.0 * m.cert.xi_hat * m.cert.xi_bar).abs() < 1e-9 * beta);
    let bound = m.bound.unwrap();
    assert!((bound.delta_max / 3.91e-9 - 1.0).abs() < 0.01);
}
