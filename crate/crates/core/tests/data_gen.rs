use std::fs;
use std::path::{Path, PathBuf};

use crossbudget::auction::{load_traffic, replay, ReplayConfig};
use crossbudget::cost_model::{unconstrained_replay, PerfStats};
use crossbudget::data_gen::{
    generate, validate_dataset, DatasetSpec, ViolationKind, MANIFEST_FILE, STATS_FILE, TRAFFIC_FILE, WARMUP_FILE,
};
use crossbudget::experiment::{run_estimate, DatasetPaths, Inputs};
use crossbudget::sinkhorn::SolverConfig;
use crossbudget::strategies::{allocate_adcob, allocate_fcfs};

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&p).unwrap(),
            )
        })
        .collect();
    out.sort();
    out
}

fn fresh(spec: &DatasetSpec) -> (tempfile::TempDir, PathBuf) {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("data");
    generate(spec, &dir).unwrap();
    (tmp, dir)
}

#[test]
fn same_spec_twice_writes_identical_bytes() {
    let spec = DatasetSpec::small(3);
    let (_a, da) = fresh(&spec);
    let (_b, db) = fresh(&spec);
    let (fa, fb) = (files(&da), files(&db));
    assert_eq!(fa.len(), 7);
    assert_eq!(fa, fb);
    let (_c, dc) = fresh(&DatasetSpec::small(4));
    assert_ne!(files(&dc), fa);
}

#[test]
fn fresh_dataset_has_no_violations() {
    for seed in [1, 2] {
        let (_t, dir) = fresh(&DatasetSpec::small(seed));
        let report = validate_dataset(&dir).unwrap();
        assert!(report.is_clean(), "{:?}", report.violations);
        // Evaluation and warm-up files, one day each.
        assert_eq!(report.records, 2 * 3 * 120);
    }
}

/// Rewrites line `line` (1-based) of the traffic file through `edit`.
fn edit_line(dir: &Path, line: usize, edit: impl FnOnce(&mut serde_json::Value)) {
    let path = dir.join(TRAFFIC_FILE);
    let text = fs::read_to_string(&path).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_owned).collect();
    let mut v: serde_json::Value = serde_json::from_str(&lines[line - 1]).unwrap();
    edit(&mut v);
    lines[line - 1] = serde_json::to_string(&v).unwrap();
    fs::write(&path, lines.join("\n") + "\n").unwrap();
}

#[test]
fn out_of_range_pctr_is_reported_at_its_line() {
    let (_t, dir) = fresh(&DatasetSpec::small(5));
    edit_line(&dir, 17, |v| v["candidates"][0]["pctr"] = 1.5.into());
    let report = validate_dataset(&dir).unwrap();
    assert!(report
        .violations
        .iter()
        .any(|x| x.kind == ViolationKind::Range && x.file == TRAFFIC_FILE && x.line == Some(17)));
    // The edit also breaks the manifest hash; nothing else is flagged.
    assert!(report
        .violations
        .iter()
        .all(|x| x.kind == ViolationKind::Hash || x.line == Some(17)));
}

#[test]
fn timestamp_outside_its_block_is_a_window_violation() {
    let (_t, dir) = fresh(&DatasetSpec::small(5));
    edit_line(&dir, 40, |v| {
        let start = v["block_start"].as_u64().unwrap();
        v["timestamp"] = (start + 900).into();
    });
    let report = validate_dataset(&dir).unwrap();
    assert!(report
        .violations
        .iter()
        .any(|x| x.kind == ViolationKind::Window && x.line == Some(40)));
}

#[test]
fn stats_file_equals_warmup_replay() {
    let spec = DatasetSpec {
        warmup_days: 2,
        ..DatasetSpec::small(9)
    };
    let (_t, dir) = fresh(&spec);
    let warmup = load_traffic(&dir.join(WARMUP_FILE)).unwrap();
    let summary = unconstrained_replay(&warmup, &ReplayConfig::default()).unwrap();
    let emitted = PerfStats::load(&dir.join(STATS_FILE), 2).unwrap();
    assert_eq!(summary.stats.window_days, 2);
    let nonzero = |s: &PerfStats| {
        s.cells
            .iter()
            .filter(|(_, c)| c.spend > 0.0 || c.real_conversions > 0 || c.expected_conversions > 0.0)
            .map(|(k, c)| (k.clone(), *c))
            .collect::<Vec<_>>()
    };
    let (a, b) = (nonzero(&summary.stats), nonzero(&emitted));
    assert!(!a.is_empty());
    assert_eq!(a.len(), b.len());
    for ((ka, ca), (kb, cb)) in a.iter().zip(&b) {
        assert_eq!(ka, kb);
        assert_eq!(ca.real_conversions, cb.real_conversions);
        assert!((ca.spend - cb.spend).abs() <= 1e-12 * ca.spend.max(1.0), "{ka:?}");
        assert!((ca.expected_conversions - cb.expected_conversions).abs() <= 1e-12 * ca.expected_conversions.max(1.0));
    }
}

#[test]
fn single_channel_market_leaves_nothing_to_coordinate() {
    let spec = DatasetSpec {
        num_channels: 1,
        slots_per_channel: vec![10],
        ..DatasetSpec::small(13)
    };
    let (_t, dir) = fresh(&spec);
    let traffic = load_traffic(&dir.join(TRAFFIC_FILE)).unwrap();
    assert!(traffic.iter().flat_map(|b| &b.records).all(|r| r.channel == "ch0"));
    run_estimate(&dir, &dir, 0.5, &ReplayConfig::default()).unwrap();
    let inputs = Inputs::load(&DatasetPaths {
        dir: dir.clone(),
        spec: None,
        estimates_dir: None,
    })
    .unwrap();
    let cfg = ReplayConfig::default();
    let fcfs = replay(&inputs.traffic, &allocate_fcfs(&inputs.market()).unwrap(), &cfg).unwrap();
    let ot = allocate_adcob(&inputs.problem().unwrap(), &SolverConfig::new(0.1 * inputs.mean_cost())).unwrap();
    assert!(ot.converged());
    let adcob = replay(&inputs.traffic, &ot.allocation, &cfg).unwrap();
    assert_eq!(adcob.clicks, fcfs.clicks);
    assert_eq!(adcob.impressions, fcfs.impressions);
    let tol = 1e-6 * inputs.budgets.iter().sum::<f64>() * spec.days as f64;
    assert!(
        (adcob.revenue - fcfs.revenue).abs() <= tol,
        "{} vs {}",
        adcob.revenue,
        fcfs.revenue
    );
    assert!((adcob.conversions - fcfs.conversions).abs() <= 1e-9 * fcfs.conversions);
}

#[test]
fn shipped_benchmark_config_is_the_benchmark_spec() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/benchmark.toml");
    assert_eq!(DatasetSpec::load(&path).unwrap(), DatasetSpec::benchmark());
}

#[test]
fn manifest_records_spec_seed_and_hashes() {
    let (_t, dir) = fresh(&DatasetSpec::small(21));
    let m = crossbudget::data_gen::Manifest::load(&dir.join(MANIFEST_FILE)).unwrap();
    assert_eq!(m.seed, 21);
    assert_eq!(m.spec, DatasetSpec::small(21));
    assert_eq!(m.files.len(), 6);
    assert_eq!(m.targets.eval_records, 120 * 3);
}
