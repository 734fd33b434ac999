//! Exact discrete optimal transport: Hungarian algorithm for square
//! assignment problems and the transportation simplex for general weights.

use crate::error::{Error, Result};

/// Minimum-cost perfect matching on a row-major `n x n` cost matrix.
/// Returns the optimal cost and `assignment[row] = column`.
pub fn assignment(cost: &[f64], n: usize) -> Result<(f64, Vec<usize>)> {
    if n == 0 {
        return Err(Error::EmptySupport);
    }
    if cost.len() != n * n {
        return Err(Error::LengthMismatch {
            expected: n * n,
            found: cost.len(),
        });
    }
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(Error::InvalidArgument("transport costs must be finite".into()));
    }
    // Shortest augmenting paths with row potentials `u` and column
    // potentials `v`; index 0 is a virtual column.
    let c = |i: usize, j: usize| cost[(i - 1) * n + (j - 1)];
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut minv = vec![0.0; n + 1];
    let mut used = vec![false; n + 1];
    for row in 1..=n {
        owner[0] = row;
        let mut j0 = 0;
        minv.iter_mut().for_each(|m| *m = f64::INFINITY);
        used.iter_mut().for_each(|b| *b = false);
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = c(i0, j) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut result = vec![0usize; n];
    for j in 1..=n {
        result[owner[j] - 1] = j - 1;
    }
    let total = result.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum();
    Ok((total, result))
}

/// Optimal plan of the balanced transportation problem with supplies `a`,
/// demands `b` and row-major `a.len() x b.len()` costs. Returns the cost and
/// the nonzero flows `(i, j, amount)`.
pub fn transport(a: &[f64], b: &[f64], cost: &[f64]) -> Result<(f64, Vec<(usize, usize, f64)>)> {
    let (m, n) = (a.len(), b.len());
    if m == 0 || n == 0 {
        return Err(Error::EmptySupport);
    }
    if cost.len() != m * n {
        return Err(Error::LengthMismatch {
            expected: m * n,
            found: cost.len(),
        });
    }
    if a.iter().chain(b).any(|w| !(*w >= 0.0) || !w.is_finite()) || cost.iter().any(|c| !c.is_finite()) {
        return Err(Error::InvalidArgument("weights must be finite and nonnegative, costs finite".into()));
    }
    let (sa, sb): (f64, f64) = (a.iter().sum(), b.iter().sum());
    if (sa - sb).abs() > 1e-9 * sa.max(sb).max(1e-300) {
        return Err(Error::InvalidArgument(format!("unbalanced masses {sa} and {sb}")));
    }
    let mut plan = Plan::north_west(a, b);
    let scale = cost.iter().fold(0.0_f64, |s, c| s.max(c.abs())).max(1e-300);
    let limit = 50 * (m + n) * (m + n) + 1000;
    for _ in 0..limit {
        let (u, v) = plan.potentials(cost, n);
        let mut entering = None;
        let mut best = -1e-12 * scale;
        for i in 0..m {
            for j in 0..n {
                let reduced = cost[i * n + j] - u[i] - v[j];
                if reduced < best {
                    best = reduced;
                    entering = Some((i, j));
                }
            }
        }
        let Some((i, j)) = entering else {
            let flows: Vec<(usize, usize, f64)> = plan.basis.iter().filter(|c| c.2 > 0.0).copied().collect();
            let total = flows.iter().map(|&(i, j, f)| f * cost[i * n + j]).sum();
            return Ok((total, flows));
        };
        plan.pivot(i, j);
    }
    Err(Error::NoConvergence {
        iterations: limit,
        gap: f64::NAN,
    })
}

/// Basic feasible solution: a spanning tree of `m + n - 1` cells of the
/// bipartite row/column graph, degenerate cells kept with zero flow.
struct Plan {
    m: usize,
    n: usize,
    basis: Vec<(usize, usize, f64)>,
}

impl Plan {
    fn north_west(a: &[f64], b: &[f64]) -> Self {
        let (m, n) = (a.len(), b.len());
        let mut supply = a.to_vec();
        let mut demand = b.to_vec();
        let mut basis = Vec::with_capacity(m + n - 1);
        let (mut i, mut j) = (0, 0);
        loop {
            let f = supply[i].min(demand[j]);
            basis.push((i, j, f));
            supply[i] -= f;
            demand[j] -= f;
            if i == m - 1 && j == n - 1 {
                break;
            }
            // Advance exactly one index per cell so the tree has m + n - 1 cells.
            if j == n - 1 || (i < m - 1 && supply[i] <= demand[j]) {
                i += 1;
            } else {
                j += 1;
            }
        }
        Self { m, n, basis }
    }

    fn adjacency(&self) -> Vec<Vec<(usize, usize)>> {
        let mut adj = vec![Vec::new(); self.m + self.n];
        for (k, &(i, j, _)) in self.basis.iter().enumerate() {
            adj[i].push((self.m + j, k));
            adj[self.m + j].push((i, k));
        }
        adj
    }

    /// Dual values with `u_i + v_j = c_ij` on basic cells and `u_0 = 0`.
    fn potentials(&self, cost: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
        let adj = self.adjacency();
        let mut pot = vec![f64::NAN; self.m + self.n];
        let mut stack = vec![0];
        pot[0] = 0.0;
        while let Some(node) = stack.pop() {
            for &(next, k) in &adj[node] {
                if pot[next].is_nan() {
                    let (i, j, _) = self.basis[k];
                    pot[next] = cost[i * n + j] - pot[node];
                    stack.push(next);
                }
            }
        }
        (pot[..self.m].to_vec(), pot[self.m..].to_vec())
    }

    /// Brings cell `(i, j)` into the basis along the unique tree cycle.
    fn pivot(&mut self, i: usize, j: usize) {
        let adj = self.adjacency();
        let (start, goal) = (self.m + j, i);
        let mut prev: Vec<Option<(usize, usize)>> = vec![None; self.m + self.n];
        let mut seen = vec![false; self.m + self.n];
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(node) = stack.pop() {
            if node == goal {
                break;
            }
            for &(next, k) in &adj[node] {
                if !seen[next] {
                    seen[next] = true;
                    prev[next] = Some((node, k));
                    stack.push(next);
                }
            }
        }
        // Path from column j back to row i; cells alternate -, +, -, ...
        // starting next to the entering cell, which gets +.
        let mut path = Vec::new();
        let mut node = goal;
        while let Some((p, k)) = prev[node] {
            path.push(k);
            node = p;
        }
        let mut theta = f64::INFINITY;
        let mut leaving = usize::MAX;
        for (pos, &k) in path.iter().enumerate() {
            if pos % 2 == 0 && self.basis[k].2 < theta {
                theta = self.basis[k].2;
                leaving = k;
            }
        }
        for (pos, &k) in path.iter().enumerate() {
            if pos % 2 == 0 {
                self.basis[k].2 -= theta;
            } else {
                self.basis[k].2 += theta;
            }
        }
        self.basis[leaving] = (i, j, theta);
        for cell in &mut self.basis {
            if cell.2 < 0.0 {
                cell.2 = 0.0;
            }
        }
    }
}
