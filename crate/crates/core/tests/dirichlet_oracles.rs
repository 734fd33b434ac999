use proptest::prelude::*;
use rsem::dirichlet::{dirichlet_form, principal_eigenvalue, test_vector_rate, DirichletProblem};
use rsem::generator::GeneratorMatrix;

/// Reversible chain from symmetric conductances `c_ij` and weights `w_i`:
/// `q_ij = c_ij / w_i`, reversible w.r.t. `pi ∝ w`.
fn reversible(n: usize, cond: &[f64], w: &[f64]) -> GeneratorMatrix {
    let mut rows = vec![vec![0.0; n]; n];
    let mut k = 0;
    for i in 0..n {
        for j in i + 1..n {
            rows[i][j] = cond[k] / w[i];
            rows[j][i] = cond[k] / w[j];
            k += 1;
        }
    }
    for (i, row) in rows.iter_mut().enumerate() {
        row[i] = -row.iter().sum::<f64>();
    }
    GeneratorMatrix::from_rows(&rows).unwrap()
}

/// Cyclic Jacobi rotations on a symmetric matrix; returns all eigenvalues.
fn jacobi_eigenvalues(mut a: Vec<Vec<f64>>) -> Vec<f64> {
    let n = a.len();
    for _ in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i][j] * a[i][j]).sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..n).map(|i| a[i][i]).collect()
}

fn arb_problem() -> impl Strategy<Value = DirichletProblem> {
    (2usize..=6).prop_flat_map(|n| {
        (
            prop::collection::vec(0.05f64..4.0, n * (n - 1) / 2),
            prop::collection::vec(0.2f64..3.0, n),
            prop::collection::vec(-3.0f64..3.0, n),
        )
            .prop_map(move |(c, w, b)| DirichletProblem::new(reversible(n, &c, &w), b).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn lambda0_matches_jacobi(prob in arb_problem()) {
        let n = prob.len();
        let pi = prob.distribution().as_slice().to_vec();
        // symmetrised operator built independently from the generator entries
        let a: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| {
                        let q = prob.generator().rate(i, j);
                        let s = -q * (pi[i] / pi[j]).sqrt();
                        if i == j { s - prob.beta()[i] } else { s }
                    })
                    .collect()
            })
            .collect();
        let lowest = jacobi_eigenvalues(a).into_iter().fold(f64::INFINITY, f64::min);
        let cert = principal_eigenvalue(&prob).unwrap();
        prop_assert!((cert.lambda0 - lowest).abs() < 1e-9 * lowest.abs().max(1.0));
        prop_assert!(cert.residual < 1e-9);
    }

    #[test]
    fn rayleigh_quotients_bound_lambda0(prob in arb_problem(), f in prop::collection::vec(-2.0f64..2.0, 6)) {
        let f = &f[..prob.len()];
        let norm = prob.norm_sq(f);
        prop_assume!(norm > 1e-6);
        let cert = principal_eigenvalue(&prob).unwrap();
        let d = dirichlet_form(&prob, f).unwrap();
        prop_assert!(d >= cert.lambda0 * norm - 1e-9 * (1.0 + d.abs()));
        // equality at the ground state
        let g = dirichlet_form(&prob, &cert.xi).unwrap();
        prop_assert!((g - cert.lambda0 * prob.norm_sq(&cert.xi)).abs() < 1e-9);
    }

    #[test]
    fn test_vectors_never_beat_lambda0(prob in arb_problem(), f in prop::collection::vec(0.1f64..2.0, 6)) {
        let f = &f[..prob.len()];
        let cert = principal_eigenvalue(&prob).unwrap();
        let rate = test_vector_rate(&prob, f).unwrap();
        prop_assert!(rate <= cert.lambda0 + 1e-9);
    }
}

#[test]
fn birth_death_example() {
    let (a, b) = (3.0, 1.0);
    let q = GeneratorMatrix::from_rows(&[
        vec![-b, b, 0.0],
        vec![2.0 * a, -2.0 * (a + b), 2.0 * b],
        vec![0.0, 3.0 * a, -3.0 * a],
    ])
    .unwrap();
    let c = vec![-3.0, 1.0, 2.0];
    let prob = DirichletProblem::new(q, c.clone()).unwrap();
    let omega = prob.apply_omega(&[1.0, 2.0, 3.0]);
    assert_eq!(omega, vec![b + c[0], -2.0 * (a - b - c[1]), -3.0 * (a - c[2])]);
    assert_eq!(test_vector_rate(&prob, &[1.0, 2.0, 3.0]).unwrap(), 1.0);
    let cert = principal_eigenvalue(&prob).unwrap();
    assert!(cert.lambda0 >= 1.0 - 1e-9);
    assert!(cert.residual < 1e-9);
}
