//! Transport instances for cross-channel budget allocation.
//!
//! Campaign budgets are the sources, channel cost limits are the sinks and
//! the cost of moving one unit of budget from campaign `i` to channel `j` is
//! the campaign's cost per conversion on that channel. When channels can
//! absorb more than the campaigns hold, a zero-cost virtual campaign soaks up
//! the surplus so the instance becomes balanced.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;

/// Relative tolerance used when comparing total budget against total channel capacity.
pub const BALANCE_RTOL: f64 = 1e-9;

/// Identifier given to the virtual campaign row in exported plans.
pub const VIRTUAL_CAMPAIGN_ID: &str = "__virtual__";

#[derive(Clone, Debug, PartialEq)]
pub struct BudgetProblem {
    pub campaign_ids: Vec<String>,
    pub channel_ids: Vec<String>,
    pub budgets: Vec<f64>,
    pub channel_limits: Vec<f64>,
    /// Cost per conversion, campaigns by channels.
    pub cost: DenseMatrix,
}

impl BudgetProblem {
    /// Builds and validates a problem.
    pub fn new(
        campaign_ids: Vec<String>,
        channel_ids: Vec<String>,
        budgets: Vec<f64>,
        channel_limits: Vec<f64>,
        cost: DenseMatrix,
    ) -> Result<Self> {
        validate_problem(Self {
            campaign_ids,
            channel_ids,
            budgets,
            channel_limits,
            cost,
        })
    }

    /// Builds a problem with generated ids `c0..` and `ch0..`.
    pub fn anonymous(budgets: Vec<f64>, channel_limits: Vec<f64>, cost: DenseMatrix) -> Result<Self> {
        let campaign_ids = (0..budgets.len()).map(|i| format!("c{i}")).collect();
        let channel_ids = (0..channel_limits.len()).map(|j| format!("ch{j}")).collect();
        Self::new(campaign_ids, channel_ids, budgets, channel_limits, cost)
    }

    pub fn num_campaigns(&self) -> usize {
        self.budgets.len()
    }

    pub fn num_channels(&self) -> usize {
        self.channel_limits.len()
    }

    pub fn total_budget(&self) -> f64 {
        self.budgets.iter().sum()
    }

    pub fn total_limit(&self) -> f64 {
        self.channel_limits.iter().sum()
    }
}

/// Checks every structural and numeric invariant of a [`BudgetProblem`].
pub fn validate_problem(p: BudgetProblem) -> Result<BudgetProblem> {
    let (n, m) = (p.budgets.len(), p.channel_limits.len());
    if p.cost.rows() != n || p.cost.cols() != m {
        return Err(Error::Dimension(format!(
            "cost is {}x{} but there are {n} budgets and {m} channel limits",
            p.cost.rows(),
            p.cost.cols()
        )));
    }
    if p.campaign_ids.len() != n {
        return Err(Error::Dimension(format!(
            "{} campaign ids for {n} budgets",
            p.campaign_ids.len()
        )));
    }
    if p.channel_ids.len() != m {
        return Err(Error::Dimension(format!(
            "{} channel ids for {m} channel limits",
            p.channel_ids.len()
        )));
    }
    check_entries("budget", &p.budgets)?;
    check_entries("channel_limit", &p.channel_limits)?;
    for (row, col, value) in p.cost.indexed_iter() {
        if !(value.is_finite() && value >= 0.0) {
            return Err(Error::InvalidCost { row, col, value });
        }
    }
    Ok(p)
}

fn check_entries(field: &'static str, values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
        Some(index) => Err(Error::InvalidEntry {
            field,
            index,
            value: values[index],
        }),
        None => Ok(()),
    }
}

/// A problem whose total row mass equals its total column mass.
#[derive(Clone, Debug, PartialEq)]
pub struct BalancedProblem {
    /// Ids of the real campaigns only.
    pub campaign_ids: Vec<String>,
    pub channel_ids: Vec<String>,
    /// Budgets including the virtual campaign (last entry) when present.
    pub budgets: Vec<f64>,
    pub channel_limits: Vec<f64>,
    /// Cost including the all-zero virtual row when present.
    pub cost: DenseMatrix,
    pub has_virtual_row: bool,
    pub virtual_budget: f64,
}

impl BalancedProblem {
    /// Wraps raw marginals that the caller asserts are balanced; no virtual row.
    pub fn from_marginals(budgets: Vec<f64>, channel_limits: Vec<f64>, cost: DenseMatrix) -> Result<Self> {
        let p = BudgetProblem::anonymous(budgets, channel_limits, cost)?;
        let balanced = make_balanced(p)?;
        if balanced.has_virtual_row {
            return Err(Error::Dimension(format!(
                "marginals are not balanced: row mass short by {}",
                balanced.virtual_budget
            )));
        }
        Ok(balanced)
    }

    pub fn num_real_campaigns(&self) -> usize {
        self.campaign_ids.len()
    }

    pub fn num_rows(&self) -> usize {
        self.budgets.len()
    }

    pub fn num_channels(&self) -> usize {
        self.channel_limits.len()
    }

    /// Total transported mass (the larger of the two marginal sums).
    pub fn total_mass(&self) -> f64 {
        let rows: f64 = self.budgets.iter().sum();
        let cols: f64 = self.channel_limits.iter().sum();
        rows.max(cols)
    }

    pub fn objective(&self, plan: &DenseMatrix) -> Result<f64> {
        objective_value(&self.cost, plan)
    }
}

/// Turns an unbalanced problem into a balanced one by appending a zero-cost
/// virtual campaign that carries the channel capacity surplus.
pub fn make_balanced(p: BudgetProblem) -> Result<BalancedProblem> {
    let p = validate_problem(p)?;
    let total_budget = p.total_budget();
    let total_limit = p.total_limit();
    let slack = BALANCE_RTOL * total_budget.max(total_limit);
    if total_budget > total_limit + slack {
        return Err(Error::Infeasible {
            budget: total_budget,
            limit: total_limit,
        });
    }
    let surplus = total_limit - total_budget;
    let BudgetProblem {
        campaign_ids,
        channel_ids,
        mut budgets,
        channel_limits,
        cost,
    } = p;
    if surplus <= slack {
        return Ok(BalancedProblem {
            campaign_ids,
            channel_ids,
            budgets,
            channel_limits,
            cost,
            has_virtual_row: false,
            virtual_budget: 0.0,
        });
    }
    let cost = cost.with_row(&vec![0.0; channel_limits.len()])?;
    budgets.push(surplus);
    Ok(BalancedProblem {
        campaign_ids,
        channel_ids,
        budgets,
        channel_limits,
        cost,
        has_virtual_row: true,
        virtual_budget: surplus,
    })
}

/// Transport plan plus the dual potentials it was recovered from.
#[derive(Clone, Debug)]
pub struct AllocationMatrix {
    pub plan: DenseMatrix,
    /// Row potentials; `-inf` for rows with zero mass.
    pub dual_f: Vec<f64>,
    /// Column potentials; `-inf` for columns with zero mass.
    pub dual_g: Vec<f64>,
    pub iterations_used: usize,
    pub converged: bool,
    pub marginal_residual: f64,
}

impl AllocationMatrix {
    /// The plan restricted to real campaigns (drops the virtual row if any).
    pub fn real_plan(&self, problem: &BalancedProblem) -> DenseMatrix {
        self.plan.top_rows(problem.num_real_campaigns())
    }
}

/// `sum_ij plan_ij * cost_ij`.
pub fn objective_value(cost: &DenseMatrix, plan: &DenseMatrix) -> Result<f64> {
    if cost.shape() != plan.shape() {
        return Err(Error::Dimension(format!(
            "plan is {:?} but cost is {:?}",
            plan.shape(),
            cost.shape()
        )));
    }
    Ok(cost.iter().zip(plan.iter()).map(|(c, p)| c * p).sum())
}

/// `-sum_ij P_ij (ln P_ij - 1)` with `0 ln 0 = 0`.
pub fn entropy(plan: &DenseMatrix) -> f64 {
    -plan
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * (p.ln() - 1.0))
        .sum::<f64>()
}

/// Largest absolute violation of either marginal constraint.
pub fn marginal_residual(plan: &DenseMatrix, budgets: &[f64], limits: &[f64]) -> f64 {
    let rows = plan
        .row_sums()
        .iter()
        .zip(budgets)
        .map(|(s, b)| (s - b).abs())
        .fold(0.0, f64::max);
    plan.col_sums()
        .iter()
        .zip(limits)
        .map(|(s, h)| (s - h).abs())
        .fold(rows, f64::max)
}

#[derive(Debug, Serialize, Deserialize)]
struct CampaignRow {
    id: String,
    budget: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct ChannelRow {
    id: String,
    limit: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub(crate) struct CostTriplet {
    pub campaign_id: String,
    pub channel_id: String,
    pub cost: f64,
}

fn reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    let file = std::fs::File::open(path).map_err(|e| Error::file(path, e))?;
    Ok(csv::Reader::from_reader(file))
}

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    let file = std::fs::File::create(path).map_err(|e| Error::file(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

/// Reads `id,budget` rows.
pub fn read_campaigns(path: &Path) -> Result<Vec<(String, f64)>> {
    let mut rows = Vec::new();
    for rec in reader(path)?.deserialize() {
        let r: CampaignRow = rec?;
        rows.push((r.id, r.budget));
    }
    Ok(rows)
}

/// Reads `id,limit` rows.
pub fn read_channels(path: &Path) -> Result<Vec<(String, f64)>> {
    let mut rows = Vec::new();
    for rec in reader(path)?.deserialize() {
        let r: ChannelRow = rec?;
        rows.push((r.id, r.limit));
    }
    Ok(rows)
}

pub fn write_campaigns(path: &Path, rows: &[(String, f64)]) -> Result<()> {
    let mut w = writer(path)?;
    for (id, budget) in rows {
        w.serialize(CampaignRow {
            id: id.clone(),
            budget: *budget,
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_channels(path: &Path, rows: &[(String, f64)]) -> Result<()> {
    let mut w = writer(path)?;
    for (id, limit) in rows {
        w.serialize(ChannelRow {
            id: id.clone(),
            limit: *limit,
        })?;
    }
    w.flush()?;
    Ok(())
}

/// Writes the cost matrix as `campaign_id,channel_id,cost` triplets in row-major order.
pub fn write_cost_triplets(
    path: &Path,
    campaign_ids: &[String],
    channel_ids: &[String],
    cost: &DenseMatrix,
) -> Result<()> {
    let mut w = writer(path)?;
    for (i, j, c) in cost.indexed_iter() {
        w.serialize(CostTriplet {
            campaign_id: campaign_ids[i].clone(),
            channel_id: channel_ids[j].clone(),
            cost: c,
        })?;
    }
    w.flush()?;
    Ok(())
}

/// Reads triplets into a dense matrix aligned with the given ids. Every cell
/// must appear exactly once.
pub fn read_cost_triplets(path: &Path, campaign_ids: &[String], channel_ids: &[String]) -> Result<DenseMatrix> {
    let rows: HashMap<&str, usize> = index_of(campaign_ids);
    let cols: HashMap<&str, usize> = index_of(channel_ids);
    let mut cost = DenseMatrix::zeros(campaign_ids.len(), channel_ids.len());
    let mut seen = vec![false; campaign_ids.len() * channel_ids.len()];
    for rec in reader(path)?.deserialize() {
        let t: CostTriplet = rec?;
        let i = *rows.get(t.campaign_id.as_str()).ok_or_else(|| Error::UnknownId {
            kind: "campaign",
            id: t.campaign_id.clone(),
        })?;
        let j = *cols.get(t.channel_id.as_str()).ok_or_else(|| Error::UnknownId {
            kind: "channel",
            id: t.channel_id.clone(),
        })?;
        let k = i * channel_ids.len() + j;
        if seen[k] {
            return Err(Error::Data(format!(
                "duplicate cost triplet ({}, {})",
                t.campaign_id, t.channel_id
            )));
        }
        seen[k] = true;
        cost[(i, j)] = t.cost;
    }
    if let Some(k) = seen.iter().position(|s| !s) {
        let (i, j) = (k / channel_ids.len(), k % channel_ids.len());
        return Err(Error::Data(format!(
            "missing cost triplet ({}, {})",
            campaign_ids[i], channel_ids[j]
        )));
    }
    Ok(cost)
}

/// Loads a problem from the campaigns, channels and cost-triplet files.
pub fn read_problem(campaigns: &Path, channels: &Path, cost: &Path) -> Result<BudgetProblem> {
    let (campaign_ids, budgets): (Vec<_>, Vec<_>) = read_campaigns(campaigns)?.into_iter().unzip();
    let (channel_ids, limits): (Vec<_>, Vec<_>) = read_channels(channels)?.into_iter().unzip();
    check_unique("campaign", &campaign_ids)?;
    check_unique("channel", &channel_ids)?;
    let cost = read_cost_triplets(cost, &campaign_ids, &channel_ids)?;
    BudgetProblem::new(campaign_ids, channel_ids, budgets, limits, cost)
}

pub fn write_problem(p: &BudgetProblem, campaigns: &Path, channels: &Path, cost: &Path) -> Result<()> {
    let zip = |ids: &[String], v: &[f64]| ids.iter().cloned().zip(v.iter().copied()).collect::<Vec<_>>();
    write_campaigns(campaigns, &zip(&p.campaign_ids, &p.budgets))?;
    write_channels(channels, &zip(&p.channel_ids, &p.channel_limits))?;
    write_cost_triplets(cost, &p.campaign_ids, &p.channel_ids, &p.cost)
}

pub(crate) fn index_of(ids: &[String]) -> HashMap<&str, usize> {
    ids.iter().enumerate().map(|(k, id)| (id.as_str(), k)).collect()
}

pub(crate) fn check_unique(kind: &'static str, ids: &[String]) -> Result<()> {
    let mut seen = BTreeMap::new();
    for id in ids {
        if seen.insert(id.as_str(), ()).is_some() {
            return Err(Error::Data(format!("duplicate {kind} id `{id}`")));
        }
    }
    Ok(())
}
