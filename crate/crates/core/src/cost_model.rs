//! Cost matrix and channel cost limits derived from historical statistics.
//!
//! The cost of campaign `i` on channel `j` is its spend there divided by its
//! conversions there, where conversions blend realized counts with the sum of
//! predicted conversion rates (realized conversions are too sparse on their
//! own). Channel limits come from replaying traffic with budgets switched off
//! and averaging each channel's daily spend.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::auction::replay::ReplayConfig;
use crate::auction::{run_auction, BudgetLedger, TrafficBlock};
use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;

/// Weight of realized conversions in the blended count. Arbitrary; a config knob.
pub const DEFAULT_BLEND_WEIGHT: f64 = 0.5;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StatCell {
    pub spend: f64,
    pub real_conversions: u64,
    pub expected_conversions: f64,
}

impl StatCell {
    pub fn blended(&self, weight: f64) -> f64 {
        weight * self.real_conversions as f64 + (1.0 - weight) * self.expected_conversions
    }
}

/// Per (campaign, channel) performance over a window of days.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PerfStats {
    pub window_days: u32,
    pub cells: BTreeMap<(String, String), StatCell>,
}

#[derive(Debug, Serialize, Deserialize)]
struct StatRow {
    campaign_id: String,
    channel_id: String,
    spend: f64,
    real_conv: u64,
    expected_conv: f64,
}

impl PerfStats {
    pub fn new(window_days: u32) -> Self {
        Self {
            window_days,
            cells: BTreeMap::new(),
        }
    }

    pub fn get(&self, campaign: &str, channel: &str) -> StatCell {
        self.cells
            .get(&(campaign.to_owned(), channel.to_owned()))
            .copied()
            .unwrap_or_default()
    }

    pub fn entry(&mut self, campaign: &str, channel: &str) -> &mut StatCell {
        self.cells.entry((campaign.to_owned(), channel.to_owned())).or_default()
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_days == 0 {
            return Err(Error::Data("stats window must cover at least one day".into()));
        }
        for ((campaign, channel), c) in &self.cells {
            if !(c.spend.is_finite() && c.spend >= 0.0)
                || !(c.expected_conversions.is_finite() && c.expected_conversions >= 0.0)
            {
                return Err(Error::Data(format!("invalid stats for ({campaign}, {channel}): {c:?}")));
            }
        }
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for ((campaign, channel), c) in &self.cells {
            w.serialize(StatRow {
                campaign_id: campaign.clone(),
                channel_id: channel.clone(),
                spend: c.spend,
                real_conv: c.real_conversions,
                expected_conv: c.expected_conversions,
            })?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::file(path, e))?;
        self.write_csv(file)
    }

    /// Reads `campaign_id,channel_id,spend,real_conv,expected_conv` rows.
    /// Repeated pairs are summed.
    pub fn load(path: &Path, window_days: u32) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::file(path, e))?;
        let mut stats = Self::new(window_days);
        for row in csv::Reader::from_reader(file).deserialize() {
            let r: StatRow = row?;
            let c = stats.entry(&r.campaign_id, &r.channel_id);
            c.spend += r.spend;
            c.real_conversions += r.real_conv;
            c.expected_conversions += r.expected_conv;
        }
        stats.validate()?;
        Ok(stats)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FillReport {
    pub direct: usize,
    pub cold_start: usize,
    pub globally_cold: usize,
    pub globally_cold_campaigns: Vec<String>,
    /// Median of the directly observed costs, used for globally cold campaigns.
    pub median_cost: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CostMatrixBuild {
    pub cost: DenseMatrix,
    pub report: FillReport,
}

/// Builds the campaigns-by-channels cost matrix.
///
/// * direct: spend > 0 and blended conversions > 0 gives `spend / blended`;
/// * cold start: any other cell takes the campaign's own average cost per
///   blended conversion over all channels;
/// * globally cold: a campaign without positive total spend and positive total
///   blended conversions gets the dataset median of the direct costs, and is
///   listed in the report.
pub fn build_cost_matrix(
    stats: &PerfStats,
    campaign_ids: &[String],
    channel_ids: &[String],
    blend_weight: f64,
) -> Result<CostMatrixBuild> {
    if !(0.0..=1.0).contains(&blend_weight) {
        return Err(Error::Config(format!("blend_weight {blend_weight} outside [0, 1]")));
    }
    stats.validate()?;
    let (n, m) = (campaign_ids.len(), channel_ids.len());
    let mut cost = DenseMatrix::zeros(n, m);
    let mut direct = vec![false; n * m];
    let mut direct_costs = Vec::new();
    let mut campaign_avg = vec![None; n];

    for (i, campaign) in campaign_ids.iter().enumerate() {
        let (mut spend, mut conv) = (0.0, 0.0);
        for (j, channel) in channel_ids.iter().enumerate() {
            let cell = stats.get(campaign, channel);
            let blended = cell.blended(blend_weight);
            spend += cell.spend;
            conv += blended;
            if cell.spend > 0.0 && blended > 0.0 {
                let c = cell.spend / blended;
                cost[(i, j)] = c;
                direct[i * m + j] = true;
                direct_costs.push(c);
            }
        }
        if spend > 0.0 && conv > 0.0 {
            campaign_avg[i] = Some(spend / conv);
        }
    }

    let mut report = FillReport::default();
    let needs_median = campaign_avg.iter().any(Option::is_none);
    if needs_median {
        if direct_costs.is_empty() {
            return Err(Error::Data(
                "no campaign/channel pair has both spend and conversions".into(),
            ));
        }
        direct_costs.sort_by(f64::total_cmp);
        let k = direct_costs.len();
        report.median_cost = if k % 2 == 1 {
            direct_costs[k / 2]
        } else {
            0.5 * (direct_costs[k / 2 - 1] + direct_costs[k / 2])
        };
    }

    for i in 0..n {
        match campaign_avg[i] {
            Some(avg) => {
                for j in 0..m {
                    if direct[i * m + j] {
                        report.direct += 1;
                    } else {
                        cost[(i, j)] = avg;
                        report.cold_start += 1;
                    }
                }
            }
            None => {
                log::warn!(
                    "campaign `{}` has no usable history; using the median cost",
                    campaign_ids[i]
                );
                report.globally_cold_campaigns.push(campaign_ids[i].clone());
                for j in 0..m {
                    cost[(i, j)] = report.median_cost;
                    report.globally_cold += 1;
                }
            }
        }
    }
    Ok(CostMatrixBuild { cost, report })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DailySpend {
    pub channel: String,
    pub day: u64,
    pub spend: f64,
}

/// Estimated per-channel cost upper limits with the daily series behind them.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ChannelLimitEstimate {
    /// Aligned with the channel ids passed to the estimator.
    pub limits: Vec<(String, f64)>,
    pub daily: Vec<DailySpend>,
    pub warnings: Vec<String>,
}

impl ChannelLimitEstimate {
    pub fn limit(&self, channel: &str) -> Option<f64> {
        self.limits.iter().find(|(c, _)| c == channel).map(|(_, l)| *l)
    }

    pub fn save_limits(&self, path: &Path) -> Result<()> {
        crate::ot::write_channels(path, &self.limits)
    }

    pub fn save_daily(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::file(path, e))?;
        let mut w = csv::Writer::from_writer(file);
        for d in &self.daily {
            w.serialize(d)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load_daily(path: &Path) -> Result<Vec<DailySpend>> {
        let file = std::fs::File::open(path).map_err(|e| Error::file(path, e))?;
        csv::Reader::from_reader(file)
            .deserialize()
            .map(|r| r.map_err(Error::from))
            .collect()
    }
}

/// Everything a budget-free replay measures.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct UnconstrainedSummary {
    pub days: BTreeSet<u64>,
    /// (channel, day) -> total winner payments.
    pub daily_channel_spend: BTreeMap<(String, u64), f64>,
    pub impressions_by_channel: BTreeMap<String, u64>,
    pub stats: PerfStats,
}

/// Replays every record with budgets disabled.
pub fn unconstrained_replay(blocks: &[TrafficBlock], cfg: &ReplayConfig) -> Result<UnconstrainedSummary> {
    let mut s = UnconstrainedSummary::default();
    // Without budgets every auction is independent of the others, so block
    // order does not matter and is not checked.
    let mut ledger = BudgetLedger::unlimited();
    for record in blocks.iter().flat_map(|b| &b.records) {
        let outcome = run_auction(record, &mut ledger, &cfg.auction);
        let day = record.day();
        s.days.insert(day);
        *s.impressions_by_channel.entry(record.channel.clone()).or_default() += outcome.winners.len() as u64;
        let daily = s.daily_channel_spend.entry((record.channel.clone(), day)).or_default();
        for w in outcome.winners.iter().filter(|w| w.clicked) {
            *daily += w.charged;
            let cell = s.stats.entry(&w.campaign, &record.channel);
            cell.spend += w.charged;
            cell.expected_conversions += w.pcvr;
            if w.converted {
                cell.real_conversions += 1;
            }
        }
    }
    s.stats.window_days = s.days.len() as u32;
    Ok(s)
}

/// Mean daily spend per channel under a budget-free replay.
pub fn estimate_channel_limits(
    blocks: &[TrafficBlock],
    channel_ids: &[String],
    cfg: &ReplayConfig,
) -> Result<ChannelLimitEstimate> {
    if blocks.iter().all(|b| b.records.is_empty()) {
        return Err(Error::Data("cannot estimate channel limits from empty traffic".into()));
    }
    let summary = unconstrained_replay(blocks, cfg)?;
    Ok(limits_from_summary(&summary, channel_ids))
}

pub fn limits_from_summary(summary: &UnconstrainedSummary, channel_ids: &[String]) -> ChannelLimitEstimate {
    let days = summary.days.len().max(1) as f64;
    let mut est = ChannelLimitEstimate::default();
    for channel in channel_ids {
        if summary.impressions_by_channel.get(channel).copied().unwrap_or(0) == 0 {
            let msg = format!("channel `{channel}` has no impressions; limit set to 0");
            log::warn!("{msg}");
            est.warnings.push(msg);
        }
        let mut total = 0.0;
        for &day in &summary.days {
            let spend = summary
                .daily_channel_spend
                .get(&(channel.clone(), day))
                .copied()
                .unwrap_or(0.0);
            total += spend;
            est.daily.push(DailySpend {
                channel: channel.clone(),
                day,
                spend,
            });
        }
        est.limits.push((channel.clone(), total / days));
    }
    est
}
