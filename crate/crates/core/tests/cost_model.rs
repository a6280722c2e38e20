mod common;

use common::{random_traffic, scripted_replay, TrafficShape};
use crossbudget::auction::{replay, BudgetAllocation, ReplayConfig, TrafficBlock};
use crossbudget::cost_model::{build_cost_matrix, estimate_channel_limits, unconstrained_replay, PerfStats};
use crossbudget::DenseMatrix;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SHAPE: TrafficShape = TrafficShape {
    campaigns: 5,
    channels: 2,
    days: 3,
    records_per_day: 300,
    max_candidates: 4,
    max_slots: 3,
};

fn unlimited(n: usize, m: usize) -> BudgetAllocation {
    BudgetAllocation::new(
        common::ids("c", n),
        common::ids("x", m),
        DenseMatrix::filled(n, m, 1e300),
        vec![1e300; n],
    )
    .unwrap()
}

fn day_blocks(blocks: &[TrafficBlock], day: u64) -> Vec<TrafficBlock> {
    blocks.iter().filter(|b| b.start / 86_400 == day).cloned().collect()
}

#[test]
fn three_day_limits_match_scripted_daily_means() {
    let blocks = random_traffic(31, &SHAPE);
    let channels = common::ids("x", SHAPE.channels);
    let est = estimate_channel_limits(&blocks, &channels, &ReplayConfig::default()).unwrap();
    let alloc = unlimited(SHAPE.campaigns, SHAPE.channels);
    for ch in &channels {
        let daily: Vec<f64> = (0..SHAPE.days)
            .map(|d| {
                scripted_replay(&day_blocks(&blocks, d), &alloc, None)
                    .channel_spend
                    .get(ch)
                    .copied()
                    .unwrap_or(0.0)
            })
            .collect();
        let want = daily.iter().sum::<f64>() / daily.len() as f64;
        let got = est.limit(ch).unwrap();
        assert!((got - want).abs() <= 1e-9 * want, "{ch}: {got} vs {want}");
        let series: Vec<f64> = est.daily.iter().filter(|d| &d.channel == ch).map(|d| d.spend).collect();
        assert_eq!(series.len(), 3);
        for (a, b) in series.iter().zip(&daily) {
            assert!((a - b).abs() <= 1e-9 * b.max(1.0));
        }
    }
}

/// Shuffles records inside each block and blocks inside each day.
fn shuffle_within_days(blocks: &[TrafficBlock], seed: u64) -> Vec<TrafficBlock> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<TrafficBlock> = Vec::new();
    let days: std::collections::BTreeSet<u64> = blocks.iter().map(|b| b.start / 86_400).collect();
    for d in days {
        let mut day = day_blocks(blocks, d);
        day.shuffle(&mut rng);
        for b in &mut day {
            b.records.shuffle(&mut rng);
        }
        out.extend(day);
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn limits_ignore_order_within_a_day(seed in any::<u64>(), shuffle in any::<u64>()) {
        let blocks = random_traffic(seed, &SHAPE);
        let channels = common::ids("x", SHAPE.channels);
        let cfg = ReplayConfig::default();
        let a = unconstrained_replay(&blocks, &cfg).unwrap();
        let b = unconstrained_replay(&shuffle_within_days(&blocks, shuffle), &cfg).unwrap();
        let (la, lb) = (
            crossbudget::cost_model::limits_from_summary(&a, &channels),
            crossbudget::cost_model::limits_from_summary(&b, &channels),
        );
        for ((ca, va), (cb, vb)) in la.limits.iter().zip(&lb.limits) {
            prop_assert_eq!(ca, cb);
            prop_assert!((va - vb).abs() <= 1e-9 * va.max(1.0));
        }
        for (k, cell) in &a.stats.cells {
            let other = b.stats.get(&k.0, &k.1);
            prop_assert_eq!(cell.real_conversions, other.real_conversions);
            prop_assert!((cell.spend - other.spend).abs() <= 1e-9 * cell.spend.max(1.0));
        }
    }

    #[test]
    fn unconstrained_spend_bounds_constrained_spend(seed in any::<u64>()) {
        let blocks = random_traffic(seed, &SHAPE);
        let channels = common::ids("x", SHAPE.channels);
        let est = estimate_channel_limits(&blocks, &channels, &ReplayConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, m) = (SHAPE.campaigns, SHAPE.channels);
        let plan = DenseMatrix::from_vec(n, m, (0..n * m).map(|_| rng.random_range(0.0..20.0)).collect()).unwrap();
        let totals: Vec<f64> = (0..n).map(|_| rng.random_range(1.0..30.0)).collect();
        let fcfs = DenseMatrix::from_vec(n, m, totals.iter().flat_map(|&t| std::iter::repeat_n(t, m)).collect()).unwrap();
        for cells in [plan.clone(), fcfs] {
            let alloc = BudgetAllocation::new(common::ids("c", n), channels.clone(), cells, totals.clone()).unwrap();
            let report = replay(&blocks, &alloc, &ReplayConfig::default()).unwrap();
            for ch in &channels {
                let cap = est.limit(ch).unwrap() * SHAPE.days as f64;
                let spent = report.per_channel[ch].spend;
                prop_assert!(spent <= cap * (1.0 + 1e-9), "{}: {} > {}", ch, spent, cap);
            }
        }
    }

    #[test]
    fn fill_covers_every_cell(
        rows in prop::collection::vec(
            prop::collection::vec(prop_oneof![
                Just(None),
                (0.0f64..500.0, 0u64..20, 0.0f64..15.0).prop_map(Some),
            ], 4),
            1..7),
        blend in 0.0f64..=1.0,
    ) {
        let n = rows.len();
        let campaigns = common::ids("c", n);
        let channels = common::ids("x", 4);
        let mut stats = PerfStats::new(30);
        for (i, row) in rows.iter().enumerate() {
            for (j, cell) in row.iter().enumerate() {
                if let Some((spend, real, expected)) = *cell {
                    let e = stats.entry(&campaigns[i], &channels[j]);
                    e.spend = spend;
                    e.real_conversions = real;
                    e.expected_conversions = expected;
                }
            }
        }
        match build_cost_matrix(&stats, &campaigns, &channels, blend) {
            Ok(b) => {
                let r = &b.report;
                prop_assert_eq!(r.direct + r.cold_start + r.globally_cold, n * 4);
                prop_assert!(b.cost.iter().all(|c| c.is_finite() && *c >= 0.0));
                prop_assert_eq!(r.globally_cold, 4 * r.globally_cold_campaigns.len());
            }
            Err(_) => {
                // Only legitimate when no cell has a usable direct cost.
                let any_direct = stats.cells.values().any(|c| c.spend > 0.0 && c.blended(blend) > 0.0);
                prop_assert!(!any_direct);
            }
        }
    }

    #[test]
    fn full_real_weight_gives_plain_ratio(
        cells in prop::collection::vec((0.01f64..500.0, 1u64..50, 0.0f64..30.0), 6),
    ) {
        let campaigns = common::ids("c", 2);
        let channels = common::ids("x", 3);
        let mut stats = PerfStats::new(30);
        for (k, &(spend, real, expected)) in cells.iter().enumerate() {
            let e = stats.entry(&campaigns[k / 3], &channels[k % 3]);
            e.spend = spend;
            e.real_conversions = real;
            e.expected_conversions = expected;
        }
        let b = build_cost_matrix(&stats, &campaigns, &channels, 1.0).unwrap();
        for (k, &(spend, real, _)) in cells.iter().enumerate() {
            prop_assert_eq!(b.cost[(k / 3, k % 3)], spend / real as f64);
        }
        prop_assert_eq!(b.report.direct, 6);
    }
}
