use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;
use crate::ot::{check_unique, index_of};

/// Per-campaign, per-channel spending caps plus a per-campaign total cap.
///
/// Coordinated strategies set the cells to a transport plan and the total to
/// the campaign budget. First-come-first-served sets every cell to the full
/// budget so that only the campaign total binds.
#[derive(Clone, Debug, PartialEq)]
pub struct BudgetAllocation {
    pub campaign_ids: Vec<String>,
    pub channel_ids: Vec<String>,
    pub cells: DenseMatrix,
    pub campaign_totals: Vec<f64>,
}

impl BudgetAllocation {
    pub fn new(
        campaign_ids: Vec<String>,
        channel_ids: Vec<String>,
        cells: DenseMatrix,
        campaign_totals: Vec<f64>,
    ) -> Result<Self> {
        if cells.shape() != (campaign_ids.len(), channel_ids.len()) || campaign_totals.len() != campaign_ids.len() {
            return Err(Error::Dimension(format!(
                "allocation cells {:?} for {} campaigns, {} channels, {} totals",
                cells.shape(),
                campaign_ids.len(),
                channel_ids.len(),
                campaign_totals.len()
            )));
        }
        check_unique("campaign", &campaign_ids)?;
        check_unique("channel", &channel_ids)?;
        for (row, col, value) in cells.indexed_iter() {
            if !(value.is_finite() && value >= 0.0) {
                return Err(Error::InvalidCost { row, col, value });
            }
        }
        if let Some(index) = campaign_totals.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidEntry {
                field: "campaign_total",
                index,
                value: campaign_totals[index],
            });
        }
        Ok(Self {
            campaign_ids,
            channel_ids,
            cells,
            campaign_totals,
        })
    }

    /// Allocation whose cells are a plan and whose totals are the plan's row sums.
    pub fn from_plan(campaign_ids: Vec<String>, channel_ids: Vec<String>, plan: DenseMatrix) -> Result<Self> {
        let totals = plan.row_sums();
        Self::new(campaign_ids, channel_ids, plan, totals)
    }

    pub fn num_campaigns(&self) -> usize {
        self.campaign_ids.len()
    }

    pub fn campaign_index(&self, id: &str) -> Option<usize> {
        self.campaign_ids.iter().position(|c| c == id)
    }

    pub fn total_budget(&self) -> f64 {
        self.campaign_totals.iter().sum()
    }

    /// Scales cells and totals by `factor` (used to carve out bucket shares).
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            campaign_ids: self.campaign_ids.clone(),
            channel_ids: self.channel_ids.clone(),
            cells: self.cells.map(|v| v * factor),
            campaign_totals: self.campaign_totals.iter().map(|v| v * factor).collect(),
        }
    }
}

/// Remaining budgets during a replay.
#[derive(Clone, Debug)]
pub struct BudgetLedger {
    campaigns: HashMap<String, usize>,
    channels: HashMap<String, usize>,
    num_channels: usize,
    remaining: Vec<f64>,
    total_remaining: Vec<f64>,
    alive: Vec<bool>,
    unlimited: bool,
}

impl BudgetLedger {
    pub fn from_allocation(a: &BudgetAllocation) -> Self {
        Self {
            campaigns: index_of(&a.campaign_ids)
                .into_iter()
                .map(|(k, v)| (k.to_owned(), v))
                .collect(),
            channels: index_of(&a.channel_ids)
                .into_iter()
                .map(|(k, v)| (k.to_owned(), v))
                .collect(),
            num_channels: a.channel_ids.len(),
            remaining: a.cells.as_slice().to_vec(),
            total_remaining: a.campaign_totals.clone(),
            alive: a.campaign_totals.iter().map(|t| *t > 0.0).collect(),
            unlimited: false,
        }
    }

    /// A ledger that never refuses or caps a charge.
    pub fn unlimited() -> Self {
        Self {
            campaigns: HashMap::new(),
            channels: HashMap::new(),
            num_channels: 0,
            remaining: Vec::new(),
            total_remaining: Vec::new(),
            alive: Vec::new(),
            unlimited: true,
        }
    }

    pub fn is_unlimited(&self) -> bool {
        self.unlimited
    }

    fn cell(&self, campaign: &str, channel: &str) -> Option<(usize, usize)> {
        let i = *self.campaigns.get(campaign)?;
        let j = *self.channels.get(channel)?;
        Some((i, i * self.num_channels + j))
    }

    /// Alive with positive remaining budget on this channel. Unknown ids are never eligible.
    pub fn is_eligible(&self, campaign: &str, channel: &str) -> bool {
        if self.unlimited {
            return true;
        }
        match self.cell(campaign, channel) {
            Some((i, k)) => self.alive[i] && self.remaining[k] > 0.0,
            None => false,
        }
    }

    pub fn is_alive(&self, campaign: &str) -> bool {
        self.unlimited || self.campaigns.get(campaign).is_some_and(|&i| self.alive[i])
    }

    /// Deducts up to `amount`, capped by the remaining cell and campaign total.
    /// Returns what was actually charged. A campaign whose total reaches zero
    /// goes offline for the rest of the budget period.
    pub fn charge(&mut self, campaign: &str, channel: &str, amount: f64) -> f64 {
        if self.unlimited {
            return amount;
        }
        let Some((i, k)) = self.cell(campaign, channel) else {
            return 0.0;
        };
        let charged = amount.min(self.remaining[k]).min(self.total_remaining[i]).max(0.0);
        self.remaining[k] -= charged;
        self.total_remaining[i] -= charged;
        if self.remaining[k] <= 0.0 {
            self.remaining[k] = 0.0;
        }
        if self.total_remaining[i] <= 0.0 {
            self.total_remaining[i] = 0.0;
            self.alive[i] = false;
        }
        charged
    }

    pub fn remaining(&self, campaign: &str, channel: &str) -> Option<f64> {
        if self.unlimited {
            return Some(f64::INFINITY);
        }
        self.cell(campaign, channel).map(|(_, k)| self.remaining[k])
    }

    pub fn total_remaining(&self, campaign: &str) -> Option<f64> {
        if self.unlimited {
            return Some(f64::INFINITY);
        }
        self.campaigns.get(campaign).map(|&i| self.total_remaining[i])
    }
}
