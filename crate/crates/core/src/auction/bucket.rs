//! Budget bucketing: both the traffic and every campaign's budget are split in
//! two, and each bucket replays against its own ledger so the arms never
//! compete for the same money.

use serde::{Deserialize, Serialize};

use super::ledger::BudgetAllocation;
use super::replay::{replay, MetricsReport, ReplayConfig};
use super::traffic::{TrafficBlock, TrafficRecord};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Bucket {
    A,
    B,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BucketSplit {
    pub seed: u64,
    /// Fraction of records routed to bucket A.
    pub traffic_share_a: f64,
}

impl BucketSplit {
    pub fn even(seed: u64) -> Self {
        Self {
            seed,
            traffic_share_a: 0.5,
        }
    }

    pub fn route(&self, record: &TrafficRecord) -> Bucket {
        let h = splitmix64(record.id ^ splitmix64(self.seed));
        let u = (h >> 11) as f64 / (1u64 << 53) as f64;
        if u < self.traffic_share_a {
            Bucket::A
        } else {
            Bucket::B
        }
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Partitions the stream by bucket, keeping block order and dropping empty blocks.
pub fn split_blocks(blocks: &[TrafficBlock], split: &BucketSplit) -> (Vec<TrafficBlock>, Vec<TrafficBlock>) {
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for block in blocks {
        let (ra, rb): (Vec<_>, Vec<_>) = block.records.iter().cloned().partition(|r| split.route(r) == Bucket::A);
        for (out, records) in [(&mut a, ra), (&mut b, rb)] {
            if !records.is_empty() {
                out.push(TrafficBlock {
                    start: block.start,
                    records,
                });
            }
        }
    }
    (a, b)
}

/// Relative tolerance on `budget_A + budget_B == total`.
pub const SPLIT_RTOL: f64 = 1e-9;

/// Replays both buckets independently. `totals` is aligned with
/// `allocation_a.campaign_ids`; both allocations must list the same campaigns.
pub fn run_bucketed(
    blocks: &[TrafficBlock],
    allocation_a: &BudgetAllocation,
    allocation_b: &BudgetAllocation,
    totals: &[f64],
    split: &BucketSplit,
    cfg: &ReplayConfig,
) -> Result<(MetricsReport, MetricsReport)> {
    if allocation_a.campaign_ids != allocation_b.campaign_ids || totals.len() != allocation_a.campaign_ids.len() {
        return Err(Error::Dimension(
            "bucket allocations and totals must cover the same campaigns in the same order".into(),
        ));
    }
    for (i, id) in allocation_a.campaign_ids.iter().enumerate() {
        let (a, b, t) = (
            allocation_a.campaign_totals[i],
            allocation_b.campaign_totals[i],
            totals[i],
        );
        if ((a + b) - t).abs() > SPLIT_RTOL * t.abs().max(1.0) {
            return Err(Error::BudgetSplit {
                campaign: id.clone(),
                bucket_a: a,
                bucket_b: b,
                total: t,
            });
        }
    }
    let (blocks_a, blocks_b) = split_blocks(blocks, split);
    Ok((
        replay(&blocks_a, allocation_a, cfg)?,
        replay(&blocks_b, allocation_b, cfg)?,
    ))
}
