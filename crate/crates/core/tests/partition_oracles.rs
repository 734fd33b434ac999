use nalgebra::DMatrix;
use proptest::prelude::*;
use rsem::generator::GeneratorMatrix;
use rsem::partition::{
    build_partition, comparability_gaps, h_matrix, is_nonsingular_m_matrix, lumped_generator, partition_certificate,
    CountableRegimeSpec,
};

/// `A = sI - B` with `B >= 0`; nonsingular M-matrix iff `s > rho(B)`.
fn definitional_m_matrix(a: &DMatrix<f64>) -> Option<bool> {
    let n = a.nrows();
    let s = (0..n).map(|i| a[(i, i)]).fold(f64::NEG_INFINITY, f64::max).max(0.0) + 1.0;
    let b = DMatrix::from_diagonal_element(n, n, s) - a;
    let rho = b.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max);
    // too close to the boundary to call either way
    if (s - rho).abs() < 1e-9 * s {
        return None;
    }
    Some(s > rho)
}

fn arb_z_matrix() -> impl Strategy<Value = DMatrix<f64>> {
    (1usize..=6).prop_flat_map(|n| {
        (prop::collection::vec(0.0f64..2.0, n * n), prop::collection::vec(-1.0f64..6.0, n)).prop_map(move |(off, diag)| {
            DMatrix::from_fn(n, n, |i, j| if i == j { diag[i] } else { -off[i * n + j] })
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn minors_test_matches_spectral_radius(a in arb_z_matrix()) {
        if let Some(expect) = definitional_m_matrix(&a) {
            prop_assert_eq!(is_nonsingular_m_matrix(&a), expect);
        }
    }

    #[test]
    fn certificates_solve_their_system(qf_off in prop::collection::vec(0.0f64..2.0, 12), beta in prop::collection::vec(-3.0f64..1.0, 4), m in 1usize..=4) {
        let mut qf = DMatrix::zeros(m, m);
        let mut k = 0;
        for i in 0..m {
            for j in 0..m {
                if i != j {
                    qf[(i, j)] = qf_off[k];
                    k += 1;
                }
            }
            let off: f64 = (0..m).filter(|&j| j != i).map(|j| qf[(i, j)]).sum();
            qf[(i, i)] = -off;
        }
        if let Ok(cert) = partition_certificate(&qf, &beta[..m]) {
            for i in 0..m {
                let row: f64 = (0..m).map(|j| cert.a[i][j] * cert.eta[j]).sum();
                prop_assert!((row - 1.0).abs() < 1e-10);
            }
            prop_assert!(cert.eta.iter().all(|v| *v > 0.0));
            prop_assert!(cert.xi.windows(2).all(|w| w[1] < w[0]));
            prop_assert!(cert.residual() < 1e-10);
        }
    }
}

fn six_state() -> (GeneratorMatrix, Vec<f64>) {
    let rates = [
        [0.0, 1.0, 0.5, 0.0, 0.2, 0.1],
        [0.3, 0.0, 1.0, 0.4, 0.0, 0.2],
        [0.0, 2.0, 0.0, 1.0, 0.5, 0.0],
        [0.1, 0.0, 0.7, 0.0, 1.2, 0.3],
        [0.6, 0.2, 0.0, 0.9, 0.0, 1.1],
        [0.0, 0.4, 0.3, 0.0, 2.0, 0.0],
    ];
    let rows: Vec<Vec<f64>> = (0..6)
        .map(|i| (0..6).map(|j| if i == j { -rates[i].iter().sum::<f64>() } else { rates[i][j] }).collect())
        .collect();
    (GeneratorMatrix::from_rows(&rows).unwrap(), vec![0.7, -2.0, 1.5, -0.3, 0.1, -1.0])
}

#[test]
fn classes_match_interval_scan() {
    let (q, beta) = six_state();
    let spec = CountableRegimeSpec::finite(&q, beta.clone()).unwrap();
    let cuts = [-0.5, 0.4];
    let p = build_partition(&spec, &cuts).unwrap();
    let bounds = [f64::NEG_INFINITY, -0.5, 0.4, 1.5];
    for (r, b) in beta.iter().enumerate() {
        let scan = (0..3).find(|&c| bounds[c] < *b && *b <= bounds[c + 1]).unwrap();
        assert_eq!(p.class_of[r], scan);
    }
}

#[test]
fn lumped_rates_match_enumeration() {
    let (q, beta) = six_state();
    let spec = CountableRegimeSpec::finite(&q, beta.clone()).unwrap();
    let p = build_partition(&spec, &[-0.5, 0.4]).unwrap();
    let (qf, bf) = lumped_generator(&spec, &p).unwrap();
    let classes: Vec<Vec<usize>> = (0..3).map(|c| (0..6).filter(|&r| p.class_of[r] == c).collect()).collect();
    for i in 0..3 {
        for j in 0..3 {
            if i == j {
                continue;
            }
            let flows: Vec<f64> = classes[i].iter().map(|&r| classes[j].iter().map(|&k| q.rate(r, k)).sum()).collect();
            let expect = if j < i {
                flows.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            } else {
                flows.iter().cloned().fold(f64::INFINITY, f64::min)
            };
            assert_eq!(qf[(i, j)], expect);
        }
        let off: f64 = (0..3).filter(|&j| j != i).map(|j| qf[(i, j)]).sum();
        assert_eq!(qf[(i, i)], -off);
        let sup = classes[i].iter().map(|&r| beta[r]).fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(bf[i], sup);
    }
    let gaps = comparability_gaps(&spec, &p, &qf, &[5.0, 3.0, 1.0]);
    assert!(gaps.iter().all(|g| *g <= 1e-12));
}

#[test]
fn identity_lumping_of_two_state_chain() {
    let q = GeneratorMatrix::from_rows(&[vec![-4.0, 4.0], vec![1.0, -1.0]]).unwrap();
    let spec = CountableRegimeSpec::finite(&q, vec![2.0, -1.0]).unwrap();
    // singleton classes ordered by beta: state 1 first
    let p = build_partition(&spec, &[0.0]).unwrap();
    assert_eq!(p.class_of, vec![1, 0]);
    let (qf, bf) = lumped_generator(&spec, &p).unwrap();
    assert_eq!(qf, DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 4.0, -4.0]));
    assert_eq!(bf, vec![-1.0, 2.0]);
    let mut omega = qf.clone();
    omega[(0, 0)] += bf[0];
    omega[(1, 1)] += bf[1];
    let a = -(omega * h_matrix(2));
    let minors = [a[(0, 0)], a.determinant()];
    let expect = a.iter().enumerate().all(|(k, v)| k % 3 == 0 || *v <= 0.0) && minors.iter().all(|m| *m > 0.0);
    assert_eq!(is_nonsingular_m_matrix(&a), expect);
    assert_eq!(partition_certificate(&qf, &bf).is_ok(), expect);
}
