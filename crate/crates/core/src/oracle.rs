//! Exact transportation simplex used as an independent reference for the
//! Sinkhorn solver on small instances.
//!
//! Northwest-corner start, MODI potentials for reduced costs and Bland's
//! smallest-index rule for both the entering and the leaving cell. The basis
//! always holds exactly `rows + cols - 1` cells (degenerate zeros included),
//! which keeps it a spanning tree of the bipartite row/column graph.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;
use crate::ot::{marginal_residual, AllocationMatrix, BalancedProblem};

pub const MAX_ORACLE_CELLS: usize = 10_000;

pub fn exact_oracle(p: &BalancedProblem) -> Result<AllocationMatrix> {
    let (n, m) = (p.num_rows(), p.num_channels());
    if n * m > MAX_ORACLE_CELLS {
        return Err(Error::TooLarge {
            cells: n * m,
            limit: MAX_ORACLE_CELLS,
        });
    }
    if n == 0 || m == 0 {
        return Ok(AllocationMatrix {
            plan: DenseMatrix::zeros(n, m),
            dual_f: vec![0.0; n],
            dual_g: vec![0.0; m],
            iterations_used: 0,
            converged: true,
            marginal_residual: 0.0,
        });
    }
    let mut t = Tableau::northwest(&p.cost, &p.budgets, &p.channel_limits);
    let scale = p.cost.iter().fold(1.0f64, |a, c| a.max(c.abs()));
    let threshold = -1e-12 * scale;
    let mut pivots = 0;
    loop {
        let (u, v) = t.potentials();
        let entering = (0..n * m).find(|&k| !t.basic[k] && t.cost.as_slice()[k] - u[k / m] - v[k % m] < threshold);
        let Some(k) = entering else {
            let residual = marginal_residual(&t.x, &p.budgets, &p.channel_limits);
            return Ok(AllocationMatrix {
                plan: t.x,
                dual_f: u,
                dual_g: v,
                iterations_used: pivots,
                converged: true,
                marginal_residual: residual,
            });
        };
        t.pivot(k / m, k % m);
        pivots += 1;
        // Bland's rule terminates; this only guards against a logic error.
        assert!(pivots < 1_000_000, "transportation simplex failed to terminate");
    }
}

struct Tableau<'a> {
    cost: &'a DenseMatrix,
    x: DenseMatrix,
    basic: Vec<bool>,
    n: usize,
    m: usize,
}

impl<'a> Tableau<'a> {
    fn northwest(cost: &'a DenseMatrix, supply: &[f64], demand: &[f64]) -> Self {
        let (n, m) = cost.shape();
        let mut x = DenseMatrix::zeros(n, m);
        let mut basic = vec![false; n * m];
        let mut s = supply.to_vec();
        let mut d = demand.to_vec();
        let (mut i, mut j) = (0, 0);
        loop {
            let q = s[i].min(d[j]).max(0.0);
            x[(i, j)] = q;
            basic[i * m + j] = true;
            s[i] -= q;
            d[j] -= q;
            if i == n - 1 && j == m - 1 {
                // Absorb rounding so the last cell closes both marginals.
                x[(i, j)] += s[i].max(d[j]).max(0.0);
                break;
            }
            if j == m - 1 || (i < n - 1 && s[i] <= d[j]) {
                i += 1;
            } else {
                j += 1;
            }
        }
        Self { cost, x, basic, n, m }
    }

    /// Solves `u_i + v_j = c_ij` over the basis tree with `u_0 = 0`.
    fn potentials(&self) -> (Vec<f64>, Vec<f64>) {
        let (n, m) = (self.n, self.m);
        let mut u = vec![f64::NAN; n];
        let mut v = vec![f64::NAN; m];
        let adj = self.adjacency();
        u[0] = 0.0;
        let mut queue = VecDeque::from([0usize]);
        while let Some(node) = queue.pop_front() {
            for &other in &adj[node] {
                if node < n {
                    let j = other - n;
                    if v[j].is_nan() {
                        v[j] = self.cost[(node, j)] - u[node];
                        queue.push_back(other);
                    }
                } else {
                    let i = other;
                    if u[i].is_nan() {
                        u[i] = self.cost[(i, node - n)] - v[node - n];
                        queue.push_back(other);
                    }
                }
            }
        }
        (u, v)
    }

    /// Bipartite adjacency over basic cells: rows are nodes `0..n`, columns `n..n+m`.
    fn adjacency(&self) -> Vec<Vec<usize>> {
        let (n, m) = (self.n, self.m);
        let mut adj = vec![Vec::new(); n + m];
        for k in (0..n * m).filter(|&k| self.basic[k]) {
            let (i, j) = (k / m, k % m);
            adj[i].push(n + j);
            adj[n + j].push(i);
        }
        adj
    }

    /// Brings `(ei, ej)` into the basis along its unique cycle.
    fn pivot(&mut self, ei: usize, ej: usize) {
        let (n, m) = (self.n, self.m);
        let adj = self.adjacency();
        // Tree path from column node ej to row node ei.
        let mut parent = vec![usize::MAX; n + m];
        let start = n + ej;
        parent[start] = start;
        let mut queue = VecDeque::from([start]);
        while let Some(node) = queue.pop_front() {
            if node == ei {
                break;
            }
            for &next in &adj[node] {
                if parent[next] == usize::MAX {
                    parent[next] = node;
                    queue.push_back(next);
                }
            }
        }
        let mut path = vec![ei];
        while *path.last().unwrap() != start {
            path.push(parent[*path.last().unwrap()]);
        }
        // path: ei (row) -> col -> row -> ... -> ej (col). Consecutive pairs are
        // basic cells; the first one shares row ei with the entering cell and
        // therefore loses mass, then signs alternate.
        let cells: Vec<(usize, usize)> = path
            .windows(2)
            .map(|w| if w[0] < n { (w[0], w[1] - n) } else { (w[1], w[0] - n) })
            .collect();
        let mut theta = f64::INFINITY;
        let mut leaving = usize::MAX;
        for &(i, j) in cells.iter().step_by(2) {
            let val = self.x[(i, j)];
            let k = i * m + j;
            if val < theta || (val == theta && k < leaving) {
                theta = val;
                leaving = k;
            }
        }
        for (pos, &(i, j)) in cells.iter().enumerate() {
            let cell = &mut self.x[(i, j)];
            if pos % 2 == 0 {
                *cell = (*cell - theta).max(0.0);
            } else {
                *cell += theta;
            }
        }
        self.x[(ei, ej)] = theta;
        self.basic[ei * m + ej] = true;
        self.basic[leaving] = false;
        let (li, lj) = (leaving / m, leaving % m);
        self.x[(li, lj)] = 0.0;
    }
}
