//! Finite-partition reduction of a (possibly countable) regime space.
//!
//! States are grouped by their `beta` value into classes
//! `F_i = {j : beta_j in (k_{i-1}, k_i]}`. The lumped generator takes the
//! supremum of class-to-class rates towards lower classes and the infimum
//! towards higher ones. Stability follows when
//! `A = -(Q^F + diag(beta^F)) H` is a nonsingular M-matrix, with `H` the
//! upper-triangular matrix of ones; solving `A eta = 1` then yields the
//! positive witness `eta` and the decreasing Lyapunov weights `xi = H eta`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generator::GeneratorMatrix;

/// Declared lumped rate between two classes (0-based). For `to < from` it is
/// read as the supremum of `sum_{k in F_to} q_rk` over `r in F_from`, for
/// `to > from` as the infimum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassRateBound {
    pub from: usize,
    pub to: usize,
    pub value: f64,
}

/// Finite enumeration of representative regimes together with the global
/// and per-class bounds that stand in for the unseen part of the space.
#[derive(Debug, Clone, PartialEq)]
pub struct CountableRegimeSpec {
    beta: Vec<f64>,
    rates: DMatrix<f64>,
    beta_sup: f64,
    exit_rate_sup: f64,
    exhaustive: bool,
    rate_bounds: Vec<ClassRateBound>,
    class_beta: Vec<(usize, f64)>,
}

impl CountableRegimeSpec {
    /// A finite regime space, enumerated completely.
    pub fn finite(q: &GeneratorMatrix, beta: Vec<f64>) -> Result<Self> {
        if beta.len() != q.len() {
            return Err(Error::LengthMismatch {
                expected: q.len(),
                found: beta.len(),
            });
        }
        let beta_sup = beta.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        Self::build(beta, q.rates().clone(), beta_sup, q.q0(), true)
    }

    /// A finite window of representatives out of a larger space. `rates`
    /// holds `q_rk` among representatives; rows need not be conservative.
    pub fn truncated(beta: Vec<f64>, rates: DMatrix<f64>, beta_sup: f64, exit_rate_sup: f64) -> Result<Self> {
        Self::build(beta, rates, beta_sup, exit_rate_sup, false)
    }

    fn build(beta: Vec<f64>, rates: DMatrix<f64>, beta_sup: f64, exit_rate_sup: f64, exhaustive: bool) -> Result<Self> {
        let n = beta.len();
        if n == 0 || rates.shape() != (n, n) {
            return Err(Error::BadShape {
                rows: rates.nrows(),
                cols: rates.ncols(),
            });
        }
        if !beta_sup.is_finite() || !exit_rate_sup.is_finite() {
            return Err(Error::InvalidArgument("sup beta and sup(-q_ii) must be finite".into()));
        }
        if let Some(b) = beta.iter().find(|b| !b.is_finite() || **b > beta_sup) {
            return Err(Error::InvalidArgument(format!("beta {b} exceeds declared sup {beta_sup}")));
        }
        for r in 0..n {
            for k in 0..n {
                let v = rates[(r, k)];
                if !v.is_finite() {
                    return Err(Error::NonFiniteRate { row: r, col: k, value: v });
                }
                if r != k && v < 0.0 {
                    return Err(Error::NegativeRate { row: r, col: k, value: v });
                }
            }
            if -rates[(r, r)] > exit_rate_sup {
                return Err(Error::InvalidArgument(format!(
                    "exit rate of representative {r} exceeds declared sup {exit_rate_sup}"
                )));
            }
        }
        Ok(Self {
            beta,
            rates,
            beta_sup,
            exit_rate_sup,
            exhaustive,
            rate_bounds: Vec::new(),
            class_beta: Vec::new(),
        })
    }

    pub fn declare_rate(mut self, from: usize, to: usize, value: f64) -> Self {
        self.rate_bounds.push(ClassRateBound { from, to, value });
        self
    }

    /// Upper bound of `beta` over the whole class, not only its representatives.
    pub fn declare_class_beta(mut self, class: usize, value: f64) -> Self {
        self.class_beta.push((class, value));
        self
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn rates(&self) -> &DMatrix<f64> {
        &self.rates
    }

    /// `K = sup_i beta_i`.
    pub fn beta_sup(&self) -> f64 {
        self.beta_sup
    }

    pub fn exit_rate_sup(&self) -> f64 {
        self.exit_rate_sup
    }

    pub fn is_exhaustive(&self) -> bool {
        self.exhaustive
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    /// Interior cut points `k_1 < ... < k_m`.
    pub cuts: Vec<f64>,
    /// `k_{m+1} = K`.
    pub top: f64,
    /// Class index of every representative, `0..=m`.
    pub class_of: Vec<usize>,
}

impl Partition {
    pub fn class_count(&self) -> usize {
        self.cuts.len() + 1
    }

    pub fn members(&self, class: usize) -> Vec<usize> {
        (0..self.class_of.len()).filter(|&r| self.class_of[r] == class).collect()
    }

    /// Upper end of the class's beta interval.
    pub fn upper_cut(&self, class: usize) -> f64 {
        self.cuts.get(class).copied().unwrap_or(self.top)
    }
}

pub fn build_partition(spec: &CountableRegimeSpec, cuts: &[f64]) -> Result<Partition> {
    let k = spec.beta_sup;
    let increasing = cuts.windows(2).all(|w| w[0] < w[1]);
    if !increasing || cuts.iter().any(|c| !(*c < k)) {
        return Err(Error::NonMonotoneCuts { k });
    }
    let class_of: Vec<usize> = spec
        .beta
        .iter()
        .map(|b| cuts.iter().position(|c| b <= c).unwrap_or(cuts.len()))
        .collect();
    let partition = Partition {
        cuts: cuts.to_vec(),
        top: k,
        class_of,
    };
    if let Some(class) = (0..partition.class_count()).find(|&c| partition.members(c).is_empty()) {
        return Err(Error::EmptyClass { class });
    }
    Ok(partition)
}

/// Lumped generator `Q^F` and class potentials `beta^F`.
pub fn lumped_generator(spec: &CountableRegimeSpec, partition: &Partition) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let m = partition.class_count();
    let members: Vec<Vec<usize>> = (0..m).map(|c| partition.members(c)).collect();
    let mut qf = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in 0..m {
            if i == j {
                continue;
            }
            let flows: Vec<f64> = members[i]
                .iter()
                .map(|&r| members[j].iter().map(|&k| spec.rates[(r, k)]).sum())
                .collect();
            let observed = if j < i {
                flows.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            } else {
                flows.iter().cloned().fold(f64::INFINITY, f64::min)
            };
            let declared = spec.rate_bounds.iter().find(|b| b.from == i && b.to == j);
            qf[(i, j)] = match (spec.exhaustive, declared) {
                (true, None) => observed,
                (_, Some(bound)) => {
                    let slack = 1e-12 * observed.abs().max(1.0);
                    let consistent = if j < i {
                        bound.value >= observed - slack
                    } else {
                        bound.value <= observed + slack
                    };
                    if !consistent || bound.value < 0.0 {
                        return Err(Error::InconsistentBound { from: i, to: j, observed });
                    }
                    bound.value
                }
                (false, None) => return Err(Error::UnresolvableBound { from: i, to: j }),
            };
        }
        let off: f64 = (0..m).filter(|&j| j != i).map(|j| qf[(i, j)]).sum();
        qf[(i, i)] = -off;
    }
    let mut beta_f = Vec::with_capacity(m);
    for (c, mem) in members.iter().enumerate() {
        let observed = mem.iter().map(|&r| spec.beta[r]).fold(f64::NEG_INFINITY, f64::max);
        let declared = spec.class_beta.iter().find(|(k, _)| *k == c).map(|(_, v)| *v);
        let value = match (spec.exhaustive, declared) {
            (_, Some(v)) if v < observed => {
                return Err(Error::InconsistentBound { from: c, to: c, observed });
            }
            (_, Some(v)) => v,
            (true, None) => observed,
            (false, None) => partition.upper_cut(c),
        };
        beta_f.push(value);
    }
    Ok((qf, beta_f))
}

/// `H[i][j] = 1` for `j >= i`.
pub fn h_matrix(size: usize) -> DMatrix<f64> {
    DMatrix::from_fn(size, size, |i, j| if j >= i { 1.0 } else { 0.0 })
}

/// Z-matrix whose leading principal minors are all positive. The minors
/// are the running products of the pivots of Gaussian elimination without
/// pivoting, so elimination stops at the first non-positive pivot.
pub fn is_nonsingular_m_matrix(a: &DMatrix<f64>) -> bool {
    let n = a.nrows();
    if n == 0 || a.ncols() != n {
        return false;
    }
    let z_pattern = (0..n).all(|i| (0..n).all(|j| i == j || a[(i, j)] <= 0.0));
    if !z_pattern || a.iter().any(|v| !v.is_finite()) {
        return false;
    }
    let mut u = a.clone();
    for k in 0..n {
        let pivot = u[(k, k)];
        if !(pivot > 0.0) {
            return false;
        }
        for i in k + 1..n {
            let factor = u[(i, k)] / pivot;
            if factor != 0.0 {
                for j in k..n {
                    u[(i, j)] -= factor * u[(k, j)];
                }
            }
        }
    }
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LumpedCertificate {
    pub qf: Vec<Vec<f64>>,
    pub beta_f: Vec<f64>,
    /// `-(Q^F + diag(beta^F)) H`.
    pub a: Vec<Vec<f64>>,
    pub eta: Vec<f64>,
    /// `H eta`, strictly decreasing.
    pub xi: Vec<f64>,
    /// `A eta`, the all-ones vector up to rounding.
    pub lambda: Vec<f64>,
    /// Exponential ergodicity of the underlying chain is taken on trust.
    pub ergodicity_assumed: bool,
}

impl LumpedCertificate {
    /// `||(Q^F + diag beta^F) xi + lambda||_inf`.
    pub fn residual(&self) -> f64 {
        let m = self.xi.len();
        (0..m)
            .map(|i| {
                let row: f64 = (0..m).map(|j| self.qf[i][j] * self.xi[j]).sum::<f64>() + self.beta_f[i] * self.xi[i];
                (row + self.lambda[i]).abs()
            })
            .fold(0.0, f64::max)
    }
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

pub fn lyapunov_matrix(qf: &DMatrix<f64>, beta_f: &[f64]) -> Result<DMatrix<f64>> {
    let m = qf.nrows();
    if qf.ncols() != m || beta_f.len() != m {
        return Err(Error::LengthMismatch {
            expected: m,
            found: beta_f.len(),
        });
    }
    let mut omega = qf.clone();
    for i in 0..m {
        omega[(i, i)] += beta_f[i];
    }
    Ok(-(omega * h_matrix(m)))
}

pub fn partition_certificate(qf: &DMatrix<f64>, beta_f: &[f64]) -> Result<LumpedCertificate> {
    let a = lyapunov_matrix(qf, beta_f)?;
    if !is_nonsingular_m_matrix(&a) {
        return Err(Error::NotMMatrix);
    }
    let m = a.nrows();
    let ones = DVector::from_element(m, 1.0);
    let eta = a.clone().lu().solve(&ones).ok_or(Error::NotMMatrix)?;
    if eta.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::NotMMatrix);
    }
    let xi = h_matrix(m) * &eta;
    debug_assert!(xi.as_slice().windows(2).all(|w| w[1] < w[0]));
    let lambda = &a * &eta;
    Ok(LumpedCertificate {
        qf: rows(qf),
        beta_f: beta_f.to_vec(),
        a: rows(&a),
        eta: eta.iter().copied().collect(),
        xi: xi.iter().copied().collect(),
        lambda: lambda.iter().copied().collect(),
        ergodicity_assumed: true,
    })
}

/// Builds the partition, lumps, and certifies in one go.
pub fn certify_partition(spec: &CountableRegimeSpec, cuts: &[f64]) -> Result<(Partition, LumpedCertificate)> {
    let partition = build_partition(spec, cuts)?;
    let (qf, beta_f) = lumped_generator(spec, &partition)?;
    let cert = partition_certificate(&qf, &beta_f)?;
    Ok((partition, cert))
}

/// `(Q xi)(r) - (Q^F xi^F)(phi(r))` for every representative of an
/// exhaustive spec, with `xi` extended classwise. All entries are `<= 0`
/// whenever `xi_f` is decreasing.
pub fn comparability_gaps(spec: &CountableRegimeSpec, partition: &Partition, qf: &DMatrix<f64>, xi_f: &[f64]) -> Vec<f64> {
    let n = spec.beta.len();
    let m = partition.class_count();
    let xi: Vec<f64> = partition.class_of.iter().map(|&c| xi_f[c]).collect();
    (0..n)
        .map(|r| {
            let lhs: f64 = (0..n).map(|k| spec.rates[(r, k)] * xi[k]).sum();
            let c = partition.class_of[r];
            let rhs: f64 = (0..m).map(|j| qf[(c, j)] * xi_f[j]).sum();
            lhs - rhs
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q4() -> GeneratorMatrix {
        GeneratorMatrix::from_rows(&[
            vec![-3.0, 1.0, 1.0, 1.0],
            vec![2.0, -4.0, 1.0, 1.0],
            vec![0.5, 0.5, -2.0, 1.0],
            vec![3.0, 1.0, 2.0, -6.0],
        ])
        .unwrap()
    }

    #[test]
    fn h_matrix_shapes() {
        assert_eq!(h_matrix(1), DMatrix::from_element(1, 1, 1.0));
        assert_eq!(
            h_matrix(3),
            DMatrix::from_row_slice(3, 3, &[1.0, 1.0, 1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0])
        );
        let eta = DVector::from_vec(vec![0.5, 2.0, 1.0]);
        let s = h_matrix(3) * eta;
        assert_eq!(s.as_slice(), &[3.5, 3.0, 1.0]);
    }

    #[test]
    fn m_matrix_examples() {
        assert!(is_nonsingular_m_matrix(&DMatrix::from_row_slice(2, 2, &[2.0, -1.0, -1.0, 2.0])));
        assert!(!is_nonsingular_m_matrix(&DMatrix::from_row_slice(2, 2, &[1.0, -2.0, -2.0, 1.0])));
        assert!(!is_nonsingular_m_matrix(&DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0])));
        assert!(is_nonsingular_m_matrix(&DMatrix::from_element(1, 1, 1.0)));
    }

    #[test]
    fn partition_classes_and_errors() {
        let spec = CountableRegimeSpec::finite(&q4(), vec![-2.0, -1.0, 0.5, 1.0]).unwrap();
        let p = build_partition(&spec, &[0.0]).unwrap();
        assert_eq!(p.class_of, vec![0, 0, 1, 1]);
        assert!(matches!(build_partition(&spec, &[-5.0]), Err(Error::EmptyClass { class: 0 })));
        assert!(matches!(build_partition(&spec, &[0.0, -0.5]), Err(Error::NonMonotoneCuts { .. })));
        assert!(matches!(build_partition(&spec, &[1.0]), Err(Error::NonMonotoneCuts { .. })));
        // boundary value belongs to the lower class
        let p = build_partition(&spec, &[-1.0]).unwrap();
        assert_eq!(p.class_of, vec![0, 0, 1, 1]);
    }

    #[test]
    fn singleton_lumping_is_identity() {
        let q = q4();
        let beta = vec![-2.0, -1.0, 0.5, 1.0];
        let spec = CountableRegimeSpec::finite(&q, beta.clone()).unwrap();
        let p = build_partition(&spec, &[-1.5, 0.0, 0.75]).unwrap();
        let (qf, bf) = lumped_generator(&spec, &p).unwrap();
        assert_eq!(&qf, q.rates());
        assert_eq!(bf, beta);
    }

    #[test]
    fn truncated_spec_needs_declarations() {
        let rates = DMatrix::from_row_slice(2, 2, &[-1.0, 0.5, 0.7, -2.0]);
        let spec = CountableRegimeSpec::truncated(vec![-1.0, 0.5], rates.clone(), 1.0, 3.0).unwrap();
        let p = build_partition(&spec, &[0.0]).unwrap();
        assert_eq!(lumped_generator(&spec, &p), Err(Error::UnresolvableBound { from: 0, to: 1 }));

        let spec = CountableRegimeSpec::truncated(vec![-1.0, 0.5], rates.clone(), 1.0, 3.0)
            .unwrap()
            .declare_rate(0, 1, 0.4)
            .declare_rate(1, 0, 0.9);
        let (qf, bf) = lumped_generator(&spec, &p).unwrap();
        assert_eq!(qf, DMatrix::from_row_slice(2, 2, &[-0.4, 0.4, 0.9, -0.9]));
        // class betas fall back to the cut values
        assert_eq!(bf, vec![0.0, 1.0]);

        // an infimum above an observed representative rate is a contradiction
        let bad = CountableRegimeSpec::truncated(vec![-1.0, 0.5], rates, 1.0, 3.0)
            .unwrap()
            .declare_rate(0, 1, 0.6)
            .declare_rate(1, 0, 0.9);
        assert!(matches!(lumped_generator(&bad, &p), Err(Error::InconsistentBound { .. })));
    }

    #[test]
    fn single_class_certificate() {
        let qf = DMatrix::zeros(1, 1);
        let cert = partition_certificate(&qf, &[-1.0]).unwrap();
        assert_eq!(cert.a, vec![vec![1.0]]);
        assert_eq!(cert.eta, vec![1.0]);
    }

    #[test]
    fn certificate_witnesses() {
        let qf = DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 1.0, -1.0]);
        let cert = partition_certificate(&qf, &[0.0, -1.0]).unwrap();
        assert_eq!(cert.a, vec![vec![1.0, 0.0], vec![-1.0, 1.0]]);
        assert_eq!(cert.eta, vec![1.0, 2.0]);
        assert_eq!(cert.xi, vec![3.0, 2.0]);
        assert!(cert.residual() < 1e-12);
    }

    #[test]
    fn ordered_multi_class_partitions_never_certify() {
        // The last column of A is -beta^F, so the Z pattern needs
        // beta^F_i >= 0 off the last class while the last diagonal entry
        // needs beta^F_{m+1} < 0.
        let q = q4();
        for beta in [[-6.0, -5.0, -2.0, -1.0], [-1.0, 0.0, 0.5, 1.0], [0.0, 0.0, 1.0, 2.0]] {
            let spec = CountableRegimeSpec::finite(&q, beta.to_vec()).unwrap();
            let cuts = [beta[1]];
            if let Ok(p) = build_partition(&spec, &cuts) {
                let (qf, bf) = lumped_generator(&spec, &p).unwrap();
                assert_eq!(partition_certificate(&qf, &bf).unwrap_err(), Error::NotMMatrix);
            }
        }
    }

    #[test]
    fn comparability_holds_for_decreasing_weights() {
        let q = q4();
        let spec = CountableRegimeSpec::finite(&q, vec![-2.0, -1.0, 0.5, 1.0]).unwrap();
        let p = build_partition(&spec, &[-1.5, 0.7]).unwrap();
        let (qf, _) = lumped_generator(&spec, &p).unwrap();
        let gaps = comparability_gaps(&spec, &p, &qf, &[3.0, 2.0, 0.5]);
        assert!(gaps.iter().all(|g| *g <= 1e-12), "{gaps:?}");
    }

    #[test]
    fn unstable_lumping_is_rejected() {
        let q = q4();
        let spec = CountableRegimeSpec::finite(&q, vec![-0.1, 0.0, 3.0, 4.0]).unwrap();
        assert_eq!(certify_partition(&spec, &[0.0]).unwrap_err(), Error::NotMMatrix);
    }
}
