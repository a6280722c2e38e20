//! Fixtures shared by the integration tests.
#![allow(dead_code)]

use std::collections::HashMap;

use crossbudget::auction::{into_blocks, BudgetAllocation, Candidate, TrafficBlock, TrafficRecord};
use crossbudget::ot::BalancedProblem;
use crossbudget::DenseMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn ids(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|k| format!("{prefix}{k}")).collect()
}

/// Random balanced instance: positive masses, costs in [1, 10].
pub fn random_balanced(rng: &mut ChaCha8Rng, n: usize, m: usize) -> BalancedProblem {
    let mut b: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..5.0)).collect();
    let h: Vec<f64> = (0..m).map(|_| rng.random_range(0.5..5.0)).collect();
    let scale = h.iter().sum::<f64>() / b.iter().sum::<f64>();
    b.iter_mut().for_each(|v| *v *= scale);
    let cost = DenseMatrix::from_vec(n, m, (0..n * m).map(|_| rng.random_range(1.0..10.0)).collect()).unwrap();
    // Rescaling can leave a few ulps of imbalance; push the rest onto the last row.
    let gap = h.iter().sum::<f64>() - b.iter().sum::<f64>();
    b[n - 1] += gap;
    BalancedProblem::from_marginals(b, h, cost).unwrap()
}

pub struct TrafficShape {
    pub campaigns: usize,
    pub channels: usize,
    pub days: u64,
    pub records_per_day: usize,
    pub max_candidates: usize,
    pub max_slots: usize,
}

/// Time-sorted random traffic; campaigns `c*`, channels `x*`.
pub fn random_traffic(seed: u64, shape: &TrafficShape) -> Vec<TrafficBlock> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let campaigns = ids("c", shape.campaigns);
    let channels = ids("x", shape.channels);
    let mut records = Vec::new();
    for day in 0..shape.days {
        let mut stamps: Vec<u64> = (0..shape.records_per_day)
            .map(|_| day * 86_400 + rng.random_range(0..86_400))
            .collect();
        stamps.sort_unstable();
        for (k, ts) in stamps.into_iter().enumerate() {
            let mut pool: Vec<usize> = (0..shape.campaigns).collect();
            let count = rng.random_range(1..=shape.max_candidates.min(shape.campaigns));
            let candidates = (0..count)
                .map(|_| {
                    let c = pool.swap_remove(rng.random_range(0..pool.len()));
                    let pctr: f64 = rng.random_range(0.01..0.3);
                    let pcvr: f64 = rng.random_range(0.01..0.2);
                    Candidate {
                        campaign: campaigns[c].clone(),
                        pctr,
                        pcvr,
                        bid: rng.random_range(0.5..10.0),
                        clicked: rng.random_bool(0.5),
                        converted: rng.random_bool(pcvr),
                    }
                })
                .collect();
            records.push(TrafficRecord {
                id: (day << 32) | k as u64,
                timestamp: ts,
                channel: channels[rng.random_range(0..shape.channels)].clone(),
                slots: rng.random_range(1..=shape.max_slots),
                candidates,
            });
        }
    }
    into_blocks(records).unwrap()
}

/// Totals of a straight-line replay, field names as in `MetricsReport`.
#[derive(Debug, Default, PartialEq)]
pub struct ScriptedTotals {
    pub revenue: f64,
    pub clicks: u64,
    pub impressions: u64,
    pub conversions: f64,
    pub realized_conversions: u64,
    pub campaign_spend: HashMap<String, f64>,
    pub channel_spend: HashMap<String, f64>,
    pub campaign_clicks: HashMap<String, u64>,
}

/// Second implementation of the replay: strict GSP on bid*pctr, ties by id,
/// charge on click capped by cell and campaign total, daily refill.
pub fn scripted_replay(blocks: &[TrafficBlock], alloc: &BudgetAllocation, period: Option<u64>) -> ScriptedTotals {
    let refill = || {
        let cell: HashMap<(String, String), f64> = alloc
            .cells
            .indexed_iter()
            .map(|(i, j, v)| ((alloc.campaign_ids[i].clone(), alloc.channel_ids[j].clone()), v))
            .collect();
        let total: HashMap<String, f64> = alloc
            .campaign_ids
            .iter()
            .cloned()
            .zip(alloc.campaign_totals.iter().copied())
            .collect();
        (cell, total)
    };
    let (mut cell, mut total) = refill();
    let mut current = None;
    let mut out = ScriptedTotals::default();
    for r in blocks.iter().flat_map(|b| &b.records) {
        if let Some(len) = period {
            let p = r.timestamp / len;
            if current.is_some() && current != Some(p) {
                (cell, total) = refill();
            }
            current = Some(p);
        }
        let mut ranked: Vec<&Candidate> = r
            .candidates
            .iter()
            .filter(|c| total[&c.campaign] > 0.0 && cell[&(c.campaign.clone(), r.channel.clone())] > 0.0)
            .collect();
        ranked.sort_by(|a, b| {
            (b.bid * b.pctr)
                .partial_cmp(&(a.bid * a.pctr))
                .unwrap()
                .then(a.campaign.cmp(&b.campaign))
        });
        for k in 0..ranked.len().min(r.slots) {
            let c = ranked[k];
            out.impressions += 1;
            if !c.clicked {
                continue;
            }
            let price = ranked.get(k + 1).map_or(0.0, |n| (n.bid * n.pctr / c.pctr).min(c.bid));
            let key = (c.campaign.clone(), r.channel.clone());
            let paid = price.min(cell[&key]).min(total[&c.campaign]).max(0.0);
            *cell.get_mut(&key).unwrap() -= paid;
            *total.get_mut(&c.campaign).unwrap() -= paid;
            out.revenue += paid;
            out.clicks += 1;
            out.conversions += c.pcvr;
            out.realized_conversions += c.converted as u64;
            *out.campaign_spend.entry(c.campaign.clone()).or_default() += paid;
            *out.channel_spend.entry(r.channel.clone()).or_default() += paid;
            *out.campaign_clicks.entry(c.campaign.clone()).or_default() += 1;
        }
    }
    out
}

fn cand(campaign: &str, pctr: f64, pcvr: f64, bid: f64, clicked: bool, converted: bool) -> Candidate {
    Candidate {
        campaign: campaign.into(),
        pctr,
        pcvr,
        bid,
        clicked,
        converted,
    }
}

/// Three fifteen-minute blocks, campaigns a..d, channels x and y, with caps
/// tight enough that cells and totals run out mid-stream.
pub fn three_block_fixture() -> (Vec<TrafficBlock>, BudgetAllocation) {
    let rec = |id: u64, timestamp: u64, channel: &str, slots: usize, candidates: Vec<Candidate>| TrafficRecord {
        id,
        timestamp,
        channel: channel.into(),
        slots,
        candidates,
    };
    let records = vec![
        rec(
            1,
            10,
            "x",
            2,
            vec![
                cand("a", 0.5, 0.2, 4.0, true, false),
                cand("b", 0.4, 0.1, 3.0, true, true),
                cand("c", 0.2, 0.3, 5.0, true, false),
            ],
        ),
        rec(
            2,
            300,
            "y",
            1,
            vec![
                cand("c", 0.3, 0.3, 6.0, true, true),
                cand("d", 0.3, 0.2, 6.0, true, false),
            ],
        ),
        rec(
            3,
            899,
            "x",
            3,
            vec![
                cand("a", 0.5, 0.2, 4.0, true, false),
                cand("b", 0.4, 0.1, 3.0, false, false),
                cand("d", 0.1, 0.4, 9.0, true, true),
            ],
        ),
        rec(
            4,
            900,
            "y",
            2,
            vec![
                cand("a", 0.6, 0.2, 2.0, true, false),
                cand("b", 0.5, 0.1, 2.5, true, false),
                cand("c", 0.3, 0.3, 6.0, true, false),
            ],
        ),
        rec(
            5,
            1200,
            "x",
            1,
            vec![
                cand("a", 0.5, 0.2, 4.0, true, true),
                cand("d", 0.2, 0.4, 9.0, true, false),
            ],
        ),
        rec(
            6,
            1790,
            "y",
            2,
            vec![
                cand("d", 0.3, 0.2, 6.0, true, true),
                cand("c", 0.3, 0.3, 6.0, true, false),
                cand("b", 0.5, 0.1, 1.0, true, false),
            ],
        ),
        rec(
            7,
            1800,
            "x",
            2,
            vec![
                cand("a", 0.5, 0.2, 4.0, true, false),
                cand("b", 0.4, 0.1, 3.0, true, true),
                cand("d", 0.2, 0.4, 9.0, true, false),
            ],
        ),
        rec(
            8,
            2000,
            "y",
            5,
            vec![
                cand("a", 0.6, 0.2, 2.0, true, false),
                cand("b", 0.5, 0.1, 2.5, true, false),
                cand("c", 0.3, 0.3, 6.0, true, true),
                cand("d", 0.3, 0.2, 6.0, true, false),
            ],
        ),
        rec(9, 2699, "x", 1, vec![cand("c", 0.9, 0.3, 1.0, true, false)]),
    ];
    let alloc = BudgetAllocation::new(
        ids_of(&["a", "b", "c", "d"]),
        ids_of(&["x", "y"]),
        DenseMatrix::from_rows(&[[3.0, 1.0], [10.0, 10.0], [0.0, 6.0], [2.0, 2.0]]).unwrap(),
        vec![4.0, 5.0, 6.0, 4.0],
    )
    .unwrap();
    (into_blocks(records).unwrap(), alloc)
}

pub fn ids_of(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}
