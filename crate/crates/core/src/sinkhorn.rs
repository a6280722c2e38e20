//! Log-domain Sinkhorn iteration for entropy-regularized transport.
//!
//! The solver alternates closed-form updates of the row potentials `f` and
//! the column potentials `g`:
//!
//! ```text
//! f_i = -eps * LSE_j((g_j - C_ij) / eps) + eps * ln b_i
//! g_j = -eps * LSE_i((f_i - C_ij) / eps) + eps * ln h_j
//! ```
//!
//! and recovers the plan as `P_ij = exp((f_i + g_j - C_ij) / eps)`. Every
//! log-sum-exp subtracts its running maximum, so no exponential can overflow
//! regardless of how small `eps` is.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;
use crate::ot::{entropy, objective_value, AllocationMatrix, BalancedProblem};

/// Convergence threshold on the marginal residual.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tolerance {
    Absolute(f64),
    /// Multiplied by the instance's total mass.
    Relative(f64),
}

impl Tolerance {
    pub fn resolve(self, total_mass: f64) -> f64 {
        match self {
            Tolerance::Absolute(t) => t,
            Tolerance::Relative(r) => r * total_mass,
        }
    }

    fn value(self) -> f64 {
        match self {
            Tolerance::Absolute(t) | Tolerance::Relative(t) => t,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub epsilon: f64,
    pub max_iterations: usize,
    pub tolerance: Tolerance,
    pub residual_check_period: usize,
}

impl SolverConfig {
    pub const DEFAULT_MAX_ITERATIONS: usize = 10_000;
    pub const DEFAULT_RELATIVE_TOLERANCE: f64 = 1e-6;
    pub const DEFAULT_CHECK_PERIOD: usize = 10;

    pub fn new(epsilon: f64) -> Self {
        Self {
            epsilon,
            max_iterations: Self::DEFAULT_MAX_ITERATIONS,
            tolerance: Tolerance::Relative(Self::DEFAULT_RELATIVE_TOLERANCE),
            residual_check_period: Self::DEFAULT_CHECK_PERIOD,
        }
    }

    pub fn with_tolerance(mut self, tolerance: Tolerance) -> Self {
        self.tolerance = tolerance;
        self
    }

    pub fn with_max_iterations(mut self, max_iterations: usize) -> Self {
        self.max_iterations = max_iterations;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::Config(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        let tol = self.tolerance.value();
        if !(tol.is_finite() && tol > 0.0) {
            return Err(Error::Config(format!("tolerance must be positive, got {tol}")));
        }
        if self.max_iterations == 0 {
            return Err(Error::Config("max_iterations must be at least 1".into()));
        }
        if self.residual_check_period == 0 {
            return Err(Error::Config("residual_check_period must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub iteration: usize,
    pub residual: f64,
    pub objective: f64,
}

/// Residual and regularized objective at every convergence check.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SinkhornTrace {
    pub points: Vec<TracePoint>,
}

impl SinkhornTrace {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for p in &self.points {
            w.serialize(p)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::file(path, e))?;
        self.write_csv(file)
    }
}

/// `<P, C> - eps * H(P)`.
pub fn regularized_objective(cost: &DenseMatrix, plan: &DenseMatrix, epsilon: f64) -> Result<f64> {
    Ok(objective_value(cost, plan)? - epsilon * entropy(plan))
}

/// Dual state restricted to the rows and columns that carry mass.
struct Reduced<'a> {
    cost: &'a DenseMatrix,
    rows: Vec<usize>,
    cols: Vec<usize>,
    log_b: Vec<f64>,
    log_h: Vec<f64>,
    b: Vec<f64>,
    h: Vec<f64>,
    eps: f64,
}

impl Reduced<'_> {
    fn update_rows(&self, f: &mut [f64], g: &[f64]) {
        let eps = self.eps;
        for (r, &i) in self.rows.iter().enumerate() {
            let c = self.cost.row(i);
            let mut max = f64::NEG_INFINITY;
            for (k, &j) in self.cols.iter().enumerate() {
                max = max.max(g[k] - c[j]);
            }
            let s: f64 = self
                .cols
                .iter()
                .enumerate()
                .map(|(k, &j)| ((g[k] - c[j] - max) / eps).exp())
                .sum();
            f[r] = -(max + eps * s.ln()) + eps * self.log_b[r];
        }
    }

    fn update_cols(&self, f: &[f64], g: &mut [f64], scratch: &mut [f64]) {
        let eps = self.eps;
        // Column-wise running max, then sum, walking the matrix row by row.
        scratch.fill(f64::NEG_INFINITY);
        for (r, &i) in self.rows.iter().enumerate() {
            let c = self.cost.row(i);
            for (k, &j) in self.cols.iter().enumerate() {
                scratch[k] = scratch[k].max(f[r] - c[j]);
            }
        }
        let mut sums = vec![0.0; self.cols.len()];
        for (r, &i) in self.rows.iter().enumerate() {
            let c = self.cost.row(i);
            for (k, &j) in self.cols.iter().enumerate() {
                sums[k] += ((f[r] - c[j] - scratch[k]) / eps).exp();
            }
        }
        for k in 0..self.cols.len() {
            g[k] = -(scratch[k] + eps * sums[k].ln()) + eps * self.log_h[k];
        }
    }

    /// Plan on the reduced index set.
    fn plan(&self, f: &[f64], g: &[f64]) -> DenseMatrix {
        let mut p = DenseMatrix::zeros(self.rows.len(), self.cols.len());
        for (r, &i) in self.rows.iter().enumerate() {
            let c = self.cost.row(i);
            let out = p.row_mut(r);
            for (k, &j) in self.cols.iter().enumerate() {
                out[k] = ((f[r] + g[k] - c[j]) / self.eps).exp();
            }
        }
        p
    }

    fn residual(&self, plan: &DenseMatrix) -> f64 {
        crate::ot::marginal_residual(plan, &self.b, &self.h)
    }

    fn reduced_cost(&self) -> DenseMatrix {
        let mut c = DenseMatrix::zeros(self.rows.len(), self.cols.len());
        for (r, &i) in self.rows.iter().enumerate() {
            for (k, &j) in self.cols.iter().enumerate() {
                c[(r, k)] = self.cost[(i, j)];
            }
        }
        c
    }
}

/// Solves the entropy-regularized transport problem.
///
/// Rows and columns with zero mass are removed before iterating and come back
/// as zero rows/columns of the plan. Running out of iterations is not an
/// error: the best iterate seen is returned with `converged == false`.
pub fn solve(p: &BalancedProblem, cfg: &SolverConfig) -> Result<(AllocationMatrix, SinkhornTrace)> {
    cfg.validate()?;
    let (n, m) = (p.num_rows(), p.num_channels());
    let tol = cfg.tolerance.resolve(p.total_mass());
    let rows: Vec<usize> = (0..n).filter(|&i| p.budgets[i] > 0.0).collect();
    let cols: Vec<usize> = (0..m).filter(|&j| p.channel_limits[j] > 0.0).collect();

    let mut trace = SinkhornTrace::default();
    if rows.is_empty() || cols.is_empty() {
        let plan = DenseMatrix::zeros(n, m);
        let residual = crate::ot::marginal_residual(&plan, &p.budgets, &p.channel_limits);
        return Ok((
            AllocationMatrix {
                plan,
                dual_f: vec![f64::NEG_INFINITY; n],
                dual_g: vec![f64::NEG_INFINITY; m],
                iterations_used: 0,
                converged: residual <= tol,
                marginal_residual: residual,
            },
            trace,
        ));
    }

    let b: Vec<f64> = rows.iter().map(|&i| p.budgets[i]).collect();
    let h: Vec<f64> = cols.iter().map(|&j| p.channel_limits[j]).collect();
    let red = Reduced {
        cost: &p.cost,
        log_b: b.iter().map(|v| v.ln()).collect(),
        log_h: h.iter().map(|v| v.ln()).collect(),
        rows,
        cols,
        b,
        h,
        eps: cfg.epsilon,
    };
    let reduced_cost = red.reduced_cost();

    let mut f = vec![0.0; red.rows.len()];
    let mut g = vec![0.0; red.cols.len()];
    let mut scratch = vec![0.0; red.cols.len()];
    let mut best: Option<(f64, Vec<f64>, Vec<f64>, usize)> = None;
    let mut converged = false;
    let mut iterations = 0;

    for it in 1..=cfg.max_iterations {
        red.update_rows(&mut f, &g);
        red.update_cols(&f, &mut g, &mut scratch);
        iterations = it;
        if it % cfg.residual_check_period != 0 && it != cfg.max_iterations {
            continue;
        }
        let plan = red.plan(&f, &g);
        let residual = red.residual(&plan);
        if residual.is_nan() {
            return Err(Error::NanResidual(it));
        }
        trace.points.push(TracePoint {
            iteration: it,
            residual,
            objective: regularized_objective(&reduced_cost, &plan, cfg.epsilon)?,
        });
        if best.as_ref().is_none_or(|(r, ..)| residual < *r) {
            best = Some((residual, f.clone(), g.clone(), it));
        }
        if residual <= tol {
            converged = true;
            break;
        }
    }

    let (residual, f, g, _) = best.expect("at least one residual check runs");
    let reduced_plan = red.plan(&f, &g);
    let mut plan = DenseMatrix::zeros(n, m);
    let mut dual_f = vec![f64::NEG_INFINITY; n];
    let mut dual_g = vec![f64::NEG_INFINITY; m];
    for (r, &i) in red.rows.iter().enumerate() {
        dual_f[i] = f[r];
        for (k, &j) in red.cols.iter().enumerate() {
            plan[(i, j)] = reduced_plan[(r, k)];
        }
    }
    for (k, &j) in red.cols.iter().enumerate() {
        dual_g[j] = g[k];
    }
    Ok((
        AllocationMatrix {
            plan,
            dual_f,
            dual_g,
            iterations_used: iterations,
            converged,
            marginal_residual: residual,
        },
        trace,
    ))
}

/// Rebuilds the plan from a pair of potentials using the first-order condition.
pub fn plan_from_duals(cost: &DenseMatrix, f: &[f64], g: &[f64], epsilon: f64) -> Result<DenseMatrix> {
    if cost.rows() != f.len() || cost.cols() != g.len() {
        return Err(Error::Dimension(format!(
            "potentials of length {}/{} for a {:?} cost",
            f.len(),
            g.len(),
            cost.shape()
        )));
    }
    let mut p = DenseMatrix::zeros(cost.rows(), cost.cols());
    for i in 0..cost.rows() {
        for j in 0..cost.cols() {
            p[(i, j)] = ((f[i] + g[j] - cost[(i, j)]) / epsilon).exp();
        }
    }
    Ok(p)
}
