//! Budget allocation policies compared in the offline experiments.
//!
//! * `Fcfs`: no per-channel split; a campaign spends wherever it wins first.
//! * `LocalGreedy`: a fraction of campaigns split their budget across
//!   channels in proportion to their own historical conversions per unit spend.
//! * `LocalLinearRoi`: a fraction of campaigns fill channels in order of their
//!   own linear ROI slope, each channel capped at its own historical daily spend.
//! * `AdCob`: every campaign's budget is transported onto channels by
//!   entropy-regularized OT against the estimated channel cost limits.

use std::collections::BTreeSet;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::auction::{replay, BudgetAllocation, MetricsReport, ReplayConfig, TrafficBlock};
use crate::cost_model::{PerfStats, DEFAULT_BLEND_WEIGHT};
use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;
use crate::ot::{make_balanced, AllocationMatrix, BalancedProblem, BudgetProblem};
use crate::sinkhorn::{solve, SolverConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    Fcfs,
    LocalGreedy,
    LocalLinearRoi,
    #[serde(rename = "adcob")]
    AdCob,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrategyConfig {
    pub kind: StrategyKind,
    #[serde(default)]
    pub adoption_fraction: f64,
    #[serde(default)]
    pub selection_seed: u64,
    #[serde(default)]
    pub solver: Option<SolverConfig>,
}

impl StrategyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.adoption_fraction) {
            return Err(Error::Config(format!(
                "adoption_fraction {} outside [0, 1]",
                self.adoption_fraction
            )));
        }
        if let Some(s) = &self.solver {
            s.validate()?;
        }
        Ok(())
    }
}

/// Campaigns, their budgets and the channels they can spend on.
#[derive(Clone, Debug, PartialEq)]
pub struct Market {
    pub campaign_ids: Vec<String>,
    pub budgets: Vec<f64>,
    pub channel_ids: Vec<String>,
}

impl Market {
    pub fn from_problem(p: &BudgetProblem) -> Self {
        Self {
            campaign_ids: p.campaign_ids.clone(),
            budgets: p.budgets.clone(),
            channel_ids: p.channel_ids.clone(),
        }
    }
}

/// Every cell holds the campaign's whole budget; only the campaign total binds.
pub fn allocate_fcfs(market: &Market) -> Result<BudgetAllocation> {
    let m = market.channel_ids.len();
    let mut cells = DenseMatrix::zeros(market.campaign_ids.len(), m);
    for (i, &b) in market.budgets.iter().enumerate() {
        cells.row_mut(i).fill(b);
    }
    BudgetAllocation::new(
        market.campaign_ids.clone(),
        market.channel_ids.clone(),
        cells,
        market.budgets.clone(),
    )
}

/// Uniform random subset of `round(fraction * n)` campaigns, a pure function of its inputs.
pub fn select_adopters(campaign_ids: &[String], fraction: f64, seed: u64) -> BTreeSet<String> {
    let n = campaign_ids.len();
    let k = ((fraction.clamp(0.0, 1.0) * n as f64).round() as usize).min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample(&mut rng, n, k)
        .into_iter()
        .map(|i| campaign_ids[i].clone())
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct LocalAllocation {
    pub allocation: BudgetAllocation,
    /// Adopters without usable history that fell back to first-come-first-served.
    pub fallbacks: Vec<String>,
}

/// Historical conversions per unit spend on each channel, from the campaign's own rows.
fn own_slopes(stats: &PerfStats, campaign: &str, channels: &[String], blend_weight: f64) -> Vec<f64> {
    channels
        .iter()
        .map(|ch| {
            let cell = stats.get(campaign, ch);
            let conv = cell.blended(blend_weight);
            if cell.spend > 0.0 && conv > 0.0 {
                conv / cell.spend
            } else {
                0.0
            }
        })
        .collect()
}

fn local_allocation(
    market: &Market,
    adopters: &BTreeSet<String>,
    mut split: impl FnMut(usize, &str) -> Option<Vec<f64>>,
) -> Result<LocalAllocation> {
    let mut allocation = allocate_fcfs(market)?;
    let mut fallbacks = Vec::new();
    for (i, id) in market.campaign_ids.iter().enumerate() {
        if !adopters.contains(id) {
            continue;
        }
        match split(i, id) {
            Some(row) => allocation.cells.row_mut(i).copy_from_slice(&row),
            None => {
                log::info!("adopter `{id}` has no history; keeping first-come-first-served");
                fallbacks.push(id.clone());
            }
        }
    }
    Ok(LocalAllocation { allocation, fallbacks })
}

/// Adopters split their budget in proportion to inverse historical CPC.
pub fn allocate_local_greedy(
    market: &Market,
    stats: &PerfStats,
    adopters: &BTreeSet<String>,
    blend_weight: f64,
) -> Result<LocalAllocation> {
    local_allocation(market, adopters, |i, id| {
        let w = own_slopes(stats, id, &market.channel_ids, blend_weight);
        let total: f64 = w.iter().sum();
        (total > 0.0).then(|| w.iter().map(|x| market.budgets[i] * x / total).collect())
    })
}

/// Greedy single-campaign knapsack: fill channels by slope (ties by channel id),
/// each up to the campaign's own historical daily spend there. Budget beyond
/// the sum of caps goes to the best channel.
pub fn allocate_local_linear_roi(
    market: &Market,
    stats: &PerfStats,
    adopters: &BTreeSet<String>,
    blend_weight: f64,
) -> Result<LocalAllocation> {
    let days = stats.window_days.max(1) as f64;
    local_allocation(market, adopters, |i, id| {
        let slopes = own_slopes(stats, id, &market.channel_ids, blend_weight);
        let mut order: Vec<usize> = (0..slopes.len()).filter(|&j| slopes[j] > 0.0).collect();
        if order.is_empty() {
            return None;
        }
        order.sort_by(|&a, &b| {
            slopes[b]
                .total_cmp(&slopes[a])
                .then_with(|| market.channel_ids[a].cmp(&market.channel_ids[b]))
        });
        let mut row = vec![0.0; slopes.len()];
        let mut left = market.budgets[i];
        for &j in &order {
            let cap = stats.get(id, &market.channel_ids[j]).spend / days;
            let take = cap.min(left);
            row[j] = take;
            left -= take;
            if left <= 0.0 {
                break;
            }
        }
        if left > 0.0 {
            row[order[0]] += left;
        }
        Some(row)
    })
}

/// Linear ROI fill for explicit slopes and caps; exposed for inspection and tests.
pub fn linear_roi_fill(budget: f64, slopes: &[f64], caps: &[f64], channel_ids: &[String]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..slopes.len()).filter(|&j| slopes[j] > 0.0).collect();
    order.sort_by(|&a, &b| {
        slopes[b]
            .total_cmp(&slopes[a])
            .then_with(|| channel_ids[a].cmp(&channel_ids[b]))
    });
    let mut row = vec![0.0; slopes.len()];
    let mut left = budget;
    for &j in &order {
        let take = caps[j].min(left);
        row[j] = take;
        left -= take;
    }
    if left > 0.0 {
        if let Some(&best) = order.first() {
            row[best] += left;
        }
    }
    row
}

/// Cells below this fraction of the campaign budget are numerically zero
/// transport and are dropped from the caps.
pub const PLAN_DUST_RTOL: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct AdcobAllocation {
    pub allocation: BudgetAllocation,
    pub balanced: BalancedProblem,
    pub solution: AllocationMatrix,
}

impl AdcobAllocation {
    pub fn converged(&self) -> bool {
        self.solution.converged
    }
}

/// Balance, solve, strip the virtual campaign.
pub fn allocate_adcob(problem: &BudgetProblem, cfg: &SolverConfig) -> Result<AdcobAllocation> {
    let balanced = make_balanced(problem.clone())?;
    let (solution, _) = solve(&balanced, cfg)?;
    if !solution.converged {
        log::warn!(
            "sinkhorn did not converge at epsilon {} (residual {:.3e} after {} iterations)",
            cfg.epsilon,
            solution.marginal_residual,
            solution.iterations_used
        );
    }
    let mut cells = solution.real_plan(&balanced);
    for i in 0..cells.rows() {
        let dust = PLAN_DUST_RTOL * problem.budgets[i];
        for v in cells.row_mut(i) {
            if *v < dust {
                *v = 0.0;
            }
        }
    }
    let allocation = BudgetAllocation::new(
        problem.campaign_ids.clone(),
        problem.channel_ids.clone(),
        cells,
        problem.budgets.clone(),
    )?;
    Ok(AdcobAllocation {
        allocation,
        balanced,
        solution,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub epsilon: f64,
    pub converged: bool,
    pub report: Option<MetricsReport>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    /// Index of the row with the most conversions.
    pub best: Option<usize>,
}

impl SweepTable {
    pub fn best_row(&self) -> Option<&SweepRow> {
        self.best.map(|k| &self.rows[k])
    }
}

/// Allocates and replays at every epsilon of the grid. Failures at one epsilon
/// become flagged rows.
pub fn sweep_epsilon(
    problem: &BudgetProblem,
    traffic: &[TrafficBlock],
    eps_grid: &[f64],
    solver: &SolverConfig,
    replay_cfg: &ReplayConfig,
) -> Result<SweepTable> {
    if eps_grid.is_empty() {
        return Err(Error::Config("empty epsilon grid".into()));
    }
    if eps_grid.iter().any(|e| !(e.is_finite() && *e > 0.0)) {
        return Err(Error::Config("epsilon grid must be strictly positive".into()));
    }
    if eps_grid.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::Config("epsilon grid must be sorted".into()));
    }
    let rows: Vec<SweepRow> = eps_grid
        .par_iter()
        .map(|&epsilon| {
            let cfg = SolverConfig { epsilon, ..*solver };
            let run = allocate_adcob(problem, &cfg)
                .and_then(|a| Ok((a.converged(), replay(traffic, &a.allocation, replay_cfg)?)));
            match run {
                Ok((converged, report)) => SweepRow {
                    epsilon,
                    converged,
                    report: Some(report),
                    error: None,
                },
                Err(e) => SweepRow {
                    epsilon,
                    converged: false,
                    report: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    let best = rows
        .iter()
        .enumerate()
        .filter_map(|(k, r)| r.report.as_ref().map(|rep| (k, rep.conversions)))
        .fold(None, |acc: Option<(usize, f64)>, (k, c)| match acc {
            Some((_, best)) if best >= c => acc,
            _ => Some((k, c)),
        })
        .map(|(k, _)| k);
    Ok(SweepTable { rows, best })
}

/// `points` log-spaced values from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let (a, b) = (lo.ln(), hi.ln());
            (0..points)
                .map(|k| (a + (b - a) * k as f64 / (points - 1) as f64).exp())
                .collect()
        }
    }
}

/// Builds the allocation for a non-OT strategy.
pub fn allocate_baseline(market: &Market, stats: &PerfStats, cfg: &StrategyConfig) -> Result<LocalAllocation> {
    cfg.validate()?;
    let adopters = select_adopters(&market.campaign_ids, cfg.adoption_fraction, cfg.selection_seed);
    match cfg.kind {
        StrategyKind::Fcfs => Ok(LocalAllocation {
            allocation: allocate_fcfs(market)?,
            fallbacks: Vec::new(),
        }),
        StrategyKind::LocalGreedy => allocate_local_greedy(market, stats, &adopters, DEFAULT_BLEND_WEIGHT),
        StrategyKind::LocalLinearRoi => allocate_local_linear_roi(market, stats, &adopters, DEFAULT_BLEND_WEIGHT),
        StrategyKind::AdCob => Err(Error::Config("AdCob allocations come from allocate_adcob".into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost_model::StatCell;
    use approx::assert_abs_diff_eq;

    fn ids(prefix: &str, n: usize) -> Vec<String> {
        (0..n).map(|k| format!("{prefix}{k}")).collect()
    }

    fn market(budgets: &[f64], channels: usize) -> Market {
        Market {
            campaign_ids: ids("c", budgets.len()),
            budgets: budgets.to_vec(),
            channel_ids: ids("ch", channels),
        }
    }

    fn cell(spend: f64, conv: f64) -> StatCell {
        StatCell {
            spend,
            real_conversions: conv as u64,
            expected_conversions: conv,
        }
    }

    #[test]
    fn fcfs_puts_whole_budget_on_every_channel() {
        let a = allocate_fcfs(&market(&[10.0, 0.0], 3)).unwrap();
        assert_eq!(a.cells.row(0), &[10.0, 10.0, 10.0]);
        assert_eq!(a.cells.row(1), &[0.0, 0.0, 0.0]);
        assert_eq!(a.campaign_totals, vec![10.0, 0.0]);
    }

    #[test]
    fn adopters_are_a_pure_function_of_inputs() {
        let c = ids("c", 50);
        assert_eq!(select_adopters(&c, 0.4, 3), select_adopters(&c, 0.4, 3));
        assert_eq!(select_adopters(&c, 0.4, 3).len(), 20);
        assert_ne!(select_adopters(&c, 0.4, 3), select_adopters(&c, 0.4, 4));
        assert!(select_adopters(&c, 0.0, 3).is_empty());
        assert_eq!(select_adopters(&c, 1.0, 3).len(), 50);
    }

    #[test]
    fn greedy_splits_by_inverse_cpc() {
        let m = market(&[100.0], 2);
        let mut stats = PerfStats::new(1);
        *stats.entry("c0", "ch0") = cell(100.0, 10.0); // CPC 10
        *stats.entry("c0", "ch1") = cell(300.0, 10.0); // CPC 30
        let all: BTreeSet<String> = m.campaign_ids.iter().cloned().collect();
        let a = allocate_local_greedy(&m, &stats, &all, 0.5).unwrap();
        assert_abs_diff_eq!(a.allocation.cells[(0, 0)], 75.0, epsilon = 1e-12);
        assert_abs_diff_eq!(a.allocation.cells[(0, 1)], 25.0, epsilon = 1e-12);
    }

    #[test]
    fn greedy_single_channel_and_empty_adopters() {
        let m = market(&[7.0], 1);
        let mut stats = PerfStats::new(1);
        *stats.entry("c0", "ch0") = cell(10.0, 1.0);
        let all: BTreeSet<String> = m.campaign_ids.iter().cloned().collect();
        assert_eq!(
            allocate_local_greedy(&m, &stats, &all, 0.5)
                .unwrap()
                .allocation
                .cells
                .row(0),
            &[7.0]
        );

        let m = market(&[7.0, 3.0], 2);
        let none = select_adopters(&m.campaign_ids, 0.0, 1);
        assert_eq!(
            allocate_local_greedy(&m, &stats, &none, 0.5).unwrap().allocation,
            allocate_fcfs(&m).unwrap()
        );
    }

    #[test]
    fn adopter_without_history_falls_back() {
        let m = market(&[5.0], 2);
        let all: BTreeSet<String> = m.campaign_ids.iter().cloned().collect();
        let a = allocate_local_greedy(&m, &PerfStats::new(1), &all, 0.5).unwrap();
        assert_eq!(a.fallbacks, vec!["c0".to_string()]);
        assert_eq!(a.allocation.cells.row(0), &[5.0, 5.0]);
    }

    #[test]
    fn linear_roi_fills_by_slope() {
        let ch = ids("ch", 2);
        let row = linear_roi_fill(10.0, &[0.1, 1.0 / 30.0], &[5.0, 20.0], &ch);
        assert_eq!(row, vec![5.0, 5.0]);
        let row = linear_roi_fill(3.0, &[0.1, 1.0 / 30.0], &[5.0, 20.0], &ch);
        assert_eq!(row, vec![3.0, 0.0]);
        let row = linear_roi_fill(6.0, &[0.2, 0.2], &[5.0, 5.0], &ch);
        assert_eq!(row, vec![5.0, 1.0]);
        let row = linear_roi_fill(12.0, &[0.2, 0.1], &[5.0, 5.0], &ch);
        assert_eq!(row, vec![7.0, 5.0]);
    }

    #[test]
    fn linear_roi_uses_daily_history_as_caps() {
        let m = market(&[10.0], 2);
        let mut stats = PerfStats::new(2);
        *stats.entry("c0", "ch0") = cell(10.0, 1.0); // slope 0.1, daily cap 5
        *stats.entry("c0", "ch1") = cell(60.0, 2.0); // slope 1/30, daily cap 30
        let all: BTreeSet<String> = m.campaign_ids.iter().cloned().collect();
        let a = allocate_local_linear_roi(&m, &stats, &all, 0.5).unwrap();
        assert_eq!(a.allocation.cells.row(0), &[5.0, 5.0]);
    }

    #[test]
    fn adcob_single_cell_gets_whole_budget() {
        let p = BudgetProblem::anonymous(vec![4.0], vec![9.0], DenseMatrix::from_rows(&[[2.0]]).unwrap()).unwrap();
        let a = allocate_adcob(&p, &SolverConfig::new(0.1)).unwrap();
        assert!(a.converged());
        assert_abs_diff_eq!(a.allocation.cells[(0, 0)], 4.0, epsilon = 1e-5);
        assert_eq!(a.allocation.campaign_totals, vec![4.0]);
    }

    #[test]
    fn adcob_caps_oversubscribed_channel() {
        // both campaigns prefer ch0, which can only absorb 3
        let p = BudgetProblem::anonymous(
            vec![2.0, 2.0],
            vec![3.0, 10.0],
            DenseMatrix::from_rows(&[[1.0, 5.0], [1.0, 4.0]]).unwrap(),
        )
        .unwrap();
        let a = allocate_adcob(&p, &SolverConfig::new(0.05)).unwrap();
        let tol = 1e-6 * a.balanced.total_mass();
        let cols = a.allocation.cells.col_sums();
        assert!(cols[0] <= 3.0 + tol, "{cols:?}");
        for (s, b) in a.allocation.cells.row_sums().iter().zip(&p.budgets) {
            assert!((s - b).abs() <= tol);
        }
    }

    #[test]
    fn adcob_rejects_infeasible_budget() {
        let p = BudgetProblem::anonymous(vec![5.0], vec![4.0], DenseMatrix::from_rows(&[[1.0]]).unwrap()).unwrap();
        assert!(matches!(
            allocate_adcob(&p, &SolverConfig::new(0.1)),
            Err(Error::Infeasible { .. })
        ));
    }

    #[test]
    fn grid_is_log_spaced() {
        let g = log_grid(0.01, 100.0, 5);
        let expected = [0.01, 0.1, 1.0, 10.0, 100.0];
        for (a, b) in g.iter().zip(expected) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-12 * b);
        }
    }

    #[test]
    fn sweep_rejects_bad_grids() {
        let p = BudgetProblem::anonymous(vec![1.0], vec![1.0], DenseMatrix::from_rows(&[[1.0]]).unwrap()).unwrap();
        let s = SolverConfig::new(1.0);
        let r = ReplayConfig::default();
        assert!(sweep_epsilon(&p, &[], &[], &s, &r).is_err());
        assert!(sweep_epsilon(&p, &[], &[1.0, 0.5], &s, &r).is_err());
        assert!(sweep_epsilon(&p, &[], &[0.0], &s, &r).is_err());
    }
}
