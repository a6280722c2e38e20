//! Block-by-block replay of traffic against a budget allocation.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::engine::{run_auction, AuctionConfig, AuctionOutcome};
use super::ledger::{BudgetAllocation, BudgetLedger};
use super::traffic::{TrafficBlock, TrafficRecord, DAY_SECONDS};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplayConfig {
    pub auction: AuctionConfig,
    /// Length of one budget period in seconds; the ledger is refilled from the
    /// allocation whenever a record enters a new period. `None` means one
    /// period for the whole replay.
    pub budget_period: Option<u64>,
}

impl Default for ReplayConfig {
    fn default() -> Self {
        Self {
            auction: AuctionConfig::default(),
            budget_period: Some(DAY_SECONDS),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Breakdown {
    pub spend: f64,
    pub impressions: u64,
    pub clicks: u64,
    /// Sum of pCVR over clicked winners.
    pub conversions: f64,
    /// Clicked winners whose conversion flag is set.
    pub realized_conversions: u64,
}

impl Breakdown {
    fn add(&mut self, charged: f64, clicked: bool, pcvr: f64, converted: bool) {
        self.impressions += 1;
        if clicked {
            self.clicks += 1;
            self.spend += charged;
            self.conversions += pcvr;
            if converted {
                self.realized_conversions += 1;
            }
        }
    }
}

/// Metrics divided by those of a base run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalized {
    pub base: String,
    pub revenue: Option<f64>,
    pub conversions: Option<f64>,
    pub cpc_per_conversion: Option<f64>,
    pub clicks: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Total charged to winners, i.e. platform revenue.
    pub revenue: f64,
    pub conversions: f64,
    pub clicks: u64,
    pub impressions: u64,
    pub realized_conversions: u64,
    /// Spend per (predicted) conversion; zero when there are no conversions.
    pub cpc_per_conversion: f64,
    pub per_channel: BTreeMap<String, Breakdown>,
    pub per_campaign: BTreeMap<String, Breakdown>,
    pub per_day: BTreeMap<u64, Breakdown>,
    pub normalized: Option<Normalized>,
}

fn ratio(x: f64, base: f64) -> Option<f64> {
    (base != 0.0).then(|| x / base)
}

impl MetricsReport {
    pub fn total_spend(&self) -> f64 {
        self.revenue
    }

    /// Attaches ratios against `base`; a report normalized against itself is
    /// exactly 1 on every metric.
    pub fn normalize(&mut self, base_name: &str, base: &MetricsReport) {
        self.normalized = Some(Normalized {
            base: base_name.to_owned(),
            revenue: ratio(self.revenue, base.revenue),
            conversions: ratio(self.conversions, base.conversions),
            cpc_per_conversion: ratio(self.cpc_per_conversion, base.cpc_per_conversion),
            clicks: ratio(self.clicks as f64, base.clicks as f64),
        });
    }

    pub fn normalized_against(mut self, base_name: &str, base: &MetricsReport) -> Self {
        self.normalize(base_name, base);
        self
    }

    /// Canonical JSON; identical runs produce identical bytes.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    fn finish(mut self) -> Self {
        self.cpc_per_conversion = if self.conversions > 0.0 {
            self.revenue / self.conversions
        } else {
            0.0
        };
        self
    }
}

pub const REPORT_CSV_HEADER: [&str; 11] = [
    "strategy",
    "status",
    "revenue",
    "conversions",
    "cpc_per_conversion",
    "clicks",
    "base",
    "revenue_norm",
    "conversions_norm",
    "cpc_norm",
    "clicks_norm",
];

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

/// One CSV row with raw and normalized columns, matching [`REPORT_CSV_HEADER`].
pub fn report_csv_row(name: &str, status: &str, report: Option<&MetricsReport>) -> Vec<String> {
    let mut row = vec![name.to_owned(), status.to_owned()];
    match report {
        Some(r) => {
            row.extend([
                format!("{:.6}", r.revenue),
                format!("{:.6}", r.conversions),
                format!("{:.6}", r.cpc_per_conversion),
                r.clicks.to_string(),
            ]);
            match &r.normalized {
                Some(n) => row.extend([
                    n.base.clone(),
                    fmt_opt(n.revenue),
                    fmt_opt(n.conversions),
                    fmt_opt(n.cpc_per_conversion),
                    fmt_opt(n.clicks),
                ]),
                None => row.extend(std::iter::repeat_n(String::new(), 5)),
            }
        }
        None => row.extend(std::iter::repeat_n(String::new(), 9)),
    }
    row
}

pub fn write_reports_csv<W: Write>(out: W, rows: &[(String, String, Option<MetricsReport>)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(REPORT_CSV_HEADER)?;
    for (name, status, report) in rows {
        w.write_record(report_csv_row(name, status, report.as_ref()))?;
    }
    w.flush()?;
    Ok(())
}

/// Drives the auction over every record, refilling the ledger at each budget
/// period boundary, and hands each outcome to `visit`.
pub(crate) fn drive(
    blocks: &[TrafficBlock],
    mut fresh_ledger: impl FnMut() -> BudgetLedger,
    cfg: &ReplayConfig,
    mut visit: impl FnMut(&TrafficRecord, &AuctionOutcome, &BudgetLedger),
) -> Result<()> {
    check_order(blocks)?;
    let mut ledger = fresh_ledger();
    let mut period: Option<u64> = None;
    for block in blocks {
        for record in &block.records {
            if let Some(len) = cfg.budget_period {
                let p = record.timestamp / len;
                if period.is_some_and(|current| current != p) {
                    ledger = fresh_ledger();
                }
                period = Some(p);
            }
            let outcome = run_auction(record, &mut ledger, &cfg.auction);
            visit(record, &outcome, &ledger);
        }
    }
    Ok(())
}

pub(crate) fn check_order(blocks: &[TrafficBlock]) -> Result<()> {
    for w in blocks.windows(2) {
        if w[1].start <= w[0].start {
            return Err(Error::UnorderedBlocks {
                previous: w[0].start,
                found: w[1].start,
            });
        }
    }
    for b in blocks {
        if let Some(r) = b.records.iter().find(|r| !b.contains(r.timestamp)) {
            return Err(Error::Data(format!(
                "record {} at {} lies outside block [{}, {})",
                r.id,
                r.timestamp,
                b.start,
                b.start + super::traffic::BLOCK_SECONDS
            )));
        }
    }
    Ok(())
}

/// Every channel and candidate campaign in the traffic must be known to the allocation.
fn check_ids(blocks: &[TrafficBlock], allocation: &BudgetAllocation) -> Result<()> {
    let campaigns: HashSet<&str> = allocation.campaign_ids.iter().map(String::as_str).collect();
    let channels: HashSet<&str> = allocation.channel_ids.iter().map(String::as_str).collect();
    for r in blocks.iter().flat_map(|b| &b.records) {
        if !channels.contains(r.channel.as_str()) {
            return Err(Error::UnknownId {
                kind: "channel",
                id: r.channel.clone(),
            });
        }
        if let Some(c) = r.candidates.iter().find(|c| !campaigns.contains(c.campaign.as_str())) {
            return Err(Error::UnknownId {
                kind: "campaign",
                id: c.campaign.clone(),
            });
        }
    }
    Ok(())
}

/// Replays `blocks` in order against `allocation` and aggregates metrics.
pub fn replay(blocks: &[TrafficBlock], allocation: &BudgetAllocation, cfg: &ReplayConfig) -> Result<MetricsReport> {
    check_ids(blocks, allocation)?;
    let campaign_index: HashMap<&str, usize> = crate::ot::index_of(&allocation.campaign_ids);
    let channel_index: HashMap<&str, usize> = crate::ot::index_of(&allocation.channel_ids);
    let mut per_campaign = vec![Breakdown::default(); allocation.campaign_ids.len()];
    let mut per_channel = vec![Breakdown::default(); allocation.channel_ids.len()];
    let mut per_day: BTreeMap<u64, Breakdown> = BTreeMap::new();
    let mut total = Breakdown::default();

    drive(
        blocks,
        || BudgetLedger::from_allocation(allocation),
        cfg,
        |record, outcome, _| {
            let j = channel_index[record.channel.as_str()];
            let day = per_day.entry(record.day()).or_default();
            for w in &outcome.winners {
                let i = campaign_index[w.campaign.as_str()];
                for b in [&mut per_campaign[i], &mut per_channel[j], &mut *day, &mut total] {
                    b.add(w.charged, w.clicked, w.pcvr, w.converted);
                }
            }
        },
    )?;

    let named = |ids: &[String], v: Vec<Breakdown>| ids.iter().cloned().zip(v).collect::<BTreeMap<_, _>>();
    Ok(MetricsReport {
        revenue: total.spend,
        conversions: total.conversions,
        clicks: total.clicks,
        impressions: total.impressions,
        realized_conversions: total.realized_conversions,
        cpc_per_conversion: 0.0,
        per_channel: named(&allocation.channel_ids, per_channel),
        per_campaign: named(&allocation.campaign_ids, per_campaign),
        per_day,
        normalized: None,
    }
    .finish())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::auction::traffic::{into_blocks, Candidate};
    use crate::matrix::DenseMatrix;

    fn single_record_blocks(bid: f64) -> Vec<TrafficBlock> {
        into_blocks([TrafficRecord {
            id: 1,
            timestamp: 5,
            channel: "x".into(),
            slots: 3,
            candidates: vec![Candidate {
                campaign: "a".into(),
                pctr: 1.0,
                pcvr: 0.2,
                bid,
                clicked: true,
                converted: true,
            }],
        }])
        .unwrap()
    }

    fn alloc(total: f64) -> BudgetAllocation {
        BudgetAllocation::new(
            vec!["a".into()],
            vec!["x".into()],
            DenseMatrix::from_rows(&[[total]]).unwrap(),
            vec![total],
        )
        .unwrap()
    }

    #[test]
    fn empty_stream_yields_zero_metrics() {
        let r = replay(&[], &alloc(10.0), &ReplayConfig::default()).unwrap();
        assert_eq!(r.revenue, 0.0);
        assert_eq!(r.conversions, 0.0);
        assert_eq!(r.clicks, 0);
        assert_eq!(r.cpc_per_conversion, 0.0);
    }

    #[test]
    fn single_candidate_wins_for_free() {
        let r = replay(&single_record_blocks(5.0), &alloc(10.0), &ReplayConfig::default()).unwrap();
        assert_eq!(r.revenue, 0.0);
        assert_eq!(r.clicks, 1);
        assert_eq!(r.conversions, 0.2);
        assert_eq!(r.realized_conversions, 1);
        assert_eq!(r.per_campaign["a"].clicks, 1);
        assert_eq!(r.per_channel["x"].conversions, 0.2);
    }

    #[test]
    fn unknown_ids_and_unordered_blocks_are_errors() {
        let other = BudgetAllocation::new(
            vec!["b".into()],
            vec!["x".into()],
            DenseMatrix::from_rows(&[[1.0]]).unwrap(),
            vec![1.0],
        )
        .unwrap();
        assert!(matches!(
            replay(&single_record_blocks(1.0), &other, &ReplayConfig::default()),
            Err(Error::UnknownId { kind: "campaign", .. })
        ));
        let mut blocks = single_record_blocks(1.0);
        blocks.push(blocks[0].clone());
        assert!(matches!(
            replay(&blocks, &alloc(1.0), &ReplayConfig::default()),
            Err(Error::UnorderedBlocks { .. })
        ));
    }

    #[test]
    fn normalizing_against_itself_gives_ones() {
        let r = replay(&single_record_blocks(5.0), &alloc(10.0), &ReplayConfig::default()).unwrap();
        let n = r.clone().normalized_against("self", &r).normalized.unwrap();
        assert_eq!(n.conversions, Some(1.0));
        assert_eq!(n.clicks, Some(1.0));
        // zero revenue has no defined ratio
        assert_eq!(n.revenue, None);
    }

    #[test]
    fn csv_rows_carry_raw_and_normalized_columns() {
        let r = replay(&single_record_blocks(5.0), &alloc(10.0), &ReplayConfig::default()).unwrap();
        let r = r.clone().normalized_against("base", &r);
        let mut buf = Vec::new();
        write_reports_csv(
            &mut buf,
            &[
                ("base".into(), "ok".into(), Some(r)),
                ("broken".into(), "failed".into(), None),
            ],
        )
        .unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], REPORT_CSV_HEADER.join(","));
        assert_eq!(
            lines[1],
            "base,ok,0.000000,0.200000,0.000000,1,base,,1.000000,,1.000000"
        );
        assert_eq!(lines[2], "broken,failed,,,,,,,,,");
    }
}
