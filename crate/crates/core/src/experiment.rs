//! Experiment configuration and the estimate / run / sweep / bucket / pipeline
//! workflows behind the command-line tool.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::auction::{
    load_traffic, replay, run_bucketed, split_blocks, write_reports_csv, AuctionConfig, BucketSplit, MetricsReport,
    ReplayConfig, TrafficBlock,
};
use crate::cost_model::{
    build_cost_matrix, limits_from_summary, unconstrained_replay, FillReport, PerfStats, DEFAULT_BLEND_WEIGHT,
};
use crate::data_gen::{
    self, read_channel_ids, validate_dataset, DatasetSpec, Manifest, CAMPAIGNS_FILE, CHANNELS_FILE, STATS_FILE,
    TRAFFIC_FILE, WARMUP_FILE,
};
use crate::error::{Error, ErrorCategory, Result};
use crate::matrix::DenseMatrix;
use crate::ot::{read_campaigns, read_channels, read_cost_triplets, write_cost_triplets, BudgetProblem};
use crate::sinkhorn::{SolverConfig, Tolerance};
use crate::strategies::{
    allocate_adcob, allocate_fcfs, allocate_local_greedy, allocate_local_linear_roi, log_grid, select_adopters,
    sweep_epsilon, Market, StrategyKind, SweepTable,
};

pub const LIMITS_FILE: &str = "limits.csv";
pub const LIMITS_DAILY_FILE: &str = "limits_daily.csv";
pub const COST_FILE: &str = "cost.csv";
pub const ESTIMATE_FILE: &str = "estimate.json";
pub const RESULTS_CSV: &str = "results.csv";
pub const RESULTS_JSON: &str = "results.json";
pub const SWEEP_CSV: &str = "sweep.csv";
pub const BUCKET_CSV: &str = "bucket.csv";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetPaths {
    pub dir: PathBuf,
    /// Generation spec, used by `pipeline`.
    #[serde(default)]
    pub spec: Option<PathBuf>,
    /// Where `estimate` output lives; defaults to the dataset directory.
    #[serde(default)]
    pub estimates_dir: Option<PathBuf>,
}

impl DatasetPaths {
    pub fn estimates(&self) -> &Path {
        self.estimates_dir.as_deref().unwrap_or(&self.dir)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateSettings {
    pub blend_weight: f64,
}

impl Default for EstimateSettings {
    fn default() -> Self {
        Self {
            blend_weight: DEFAULT_BLEND_WEIGHT,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSettings {
    pub max_iterations: usize,
    /// Marginal residual tolerance relative to the total mass.
    pub tolerance: f64,
    pub residual_check_period: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            max_iterations: SolverConfig::DEFAULT_MAX_ITERATIONS,
            tolerance: SolverConfig::DEFAULT_RELATIVE_TOLERANCE,
            residual_check_period: SolverConfig::DEFAULT_CHECK_PERIOD,
        }
    }
}

impl SolverSettings {
    pub fn at(&self, epsilon: f64) -> SolverConfig {
        SolverConfig {
            epsilon,
            max_iterations: self.max_iterations,
            tolerance: Tolerance::Relative(self.tolerance),
            residual_check_period: self.residual_check_period,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReplaySettings {
    pub reserve_price: f64,
    /// Seconds per budget period; 0 spends each budget once over the whole replay.
    pub budget_period: u64,
}

impl Default for ReplaySettings {
    fn default() -> Self {
        Self {
            reserve_price: 0.0,
            budget_period: crate::auction::DAY_SECONDS,
        }
    }
}

impl ReplaySettings {
    pub fn config(&self) -> ReplayConfig {
        ReplayConfig {
            auction: AuctionConfig {
                reserve_price: self.reserve_price,
            },
            budget_period: (self.budget_period > 0).then_some(self.budget_period),
        }
    }
}

/// Epsilon grid. Values are multiples of the mean cost unless `relative` is false.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSettings {
    pub grid: Option<Vec<f64>>,
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
    pub relative: bool,
}

impl Default for SweepSettings {
    fn default() -> Self {
        Self {
            grid: None,
            lo: 0.01,
            hi: 100.0,
            points: 9,
            relative: true,
        }
    }
}

impl SweepSettings {
    /// Grid in the units the config was written in.
    pub fn raw_grid(&self) -> Vec<f64> {
        self.grid
            .clone()
            .unwrap_or_else(|| log_grid(self.lo, self.hi, self.points))
    }

    pub fn absolute_grid(&self, mean_cost: f64) -> Vec<f64> {
        let scale = if self.relative { mean_cost } else { 1.0 };
        self.raw_grid().into_iter().map(|e| e * scale).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategySpec {
    pub name: String,
    pub kind: StrategyKind,
    #[serde(default)]
    pub adoption_fraction: Option<f64>,
    /// Defaults to the global seed.
    #[serde(default)]
    pub selection_seed: Option<u64>,
    /// Absolute epsilon.
    #[serde(default)]
    pub epsilon: Option<f64>,
    /// Epsilon as a multiple of the mean cost. Without either, the best epsilon of the sweep is used.
    #[serde(default)]
    pub epsilon_rel: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BucketSettings {
    pub a: String,
    pub b: String,
    /// Defaults to the global seed.
    #[serde(default)]
    pub split_seed: Option<u64>,
    #[serde(default = "half")]
    pub traffic_share_a: f64,
    #[serde(default = "half")]
    pub budget_share_a: f64,
}

fn half() -> f64 {
    0.5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    /// Name of the strategy every other row is normalized against.
    pub base: String,
    pub output_dir: PathBuf,
    pub dataset: DatasetPaths,
    #[serde(default)]
    pub estimate: EstimateSettings,
    #[serde(default)]
    pub solver: SolverSettings,
    #[serde(default)]
    pub replay: ReplaySettings,
    #[serde(default)]
    pub sweep: SweepSettings,
    #[serde(rename = "strategy")]
    pub strategies: Vec<StrategySpec>,
    #[serde(default)]
    pub bucket: Option<BucketSettings>,
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl ExperimentConfig {
    /// Reads a TOML config; relative paths are taken relative to the file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::Config(format!("config not found: {}", path.display())),
            _ => Error::file(path, e),
        })?;
        let mut cfg: Self = toml::from_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        resolve(base, &mut cfg.output_dir);
        resolve(base, &mut cfg.dataset.dir);
        if let Some(p) = cfg.dataset.spec.as_mut() {
            resolve(base, p);
        }
        if let Some(p) = cfg.dataset.estimates_dir.as_mut() {
            resolve(base, p);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn strategy(&self, name: &str) -> Option<&StrategySpec> {
        self.strategies.iter().find(|s| s.name == name)
    }

    pub fn validate(&self) -> Result<()> {
        if self.strategies.is_empty() {
            return Err(Error::Config("no strategies configured".into()));
        }
        let mut names = BTreeSet::new();
        for s in &self.strategies {
            if !names.insert(s.name.as_str()) {
                return Err(Error::Config(format!("strategy `{}` defined twice", s.name)));
            }
            match (s.kind, s.adoption_fraction) {
                (StrategyKind::LocalGreedy | StrategyKind::LocalLinearRoi, None) => {
                    return Err(Error::Config(format!("strategy `{}` needs adoption_fraction", s.name)))
                }
                (_, Some(f)) if !(0.0..=1.0).contains(&f) => {
                    return Err(Error::Config(format!(
                        "strategy `{}`: adoption_fraction {f} outside [0, 1]",
                        s.name
                    )))
                }
                _ => {}
            }
            if s.epsilon.is_some() && s.epsilon_rel.is_some() {
                return Err(Error::Config(format!(
                    "strategy `{}` sets both epsilon and epsilon_rel",
                    s.name
                )));
            }
            if let Some(e) = s.epsilon.or(s.epsilon_rel) {
                if !(e.is_finite() && e > 0.0) {
                    return Err(Error::Config(format!(
                        "strategy `{}`: epsilon must be positive",
                        s.name
                    )));
                }
            }
        }
        if !names.contains(self.base.as_str()) {
            return Err(Error::Config(format!(
                "base strategy `{}` is not in the strategy list",
                self.base
            )));
        }
        if !(0.0..=1.0).contains(&self.estimate.blend_weight) {
            return Err(Error::Config("blend_weight outside [0, 1]".into()));
        }
        self.solver.at(1.0).validate()?;
        if !(self.replay.reserve_price.is_finite() && self.replay.reserve_price >= 0.0) {
            return Err(Error::Config("reserve_price must be non-negative".into()));
        }
        let grid = self.sweep.raw_grid();
        if grid.is_empty() || grid.iter().any(|e| !(e.is_finite() && *e > 0.0)) || grid.windows(2).any(|w| w[0] > w[1])
        {
            return Err(Error::Config(
                "sweep grid must be non-empty, positive and sorted".into(),
            ));
        }
        if let Some(b) = &self.bucket {
            for n in [&b.a, &b.b] {
                if !names.contains(n.as_str()) {
                    return Err(Error::Config(format!(
                        "bucket strategy `{n}` is not in the strategy list"
                    )));
                }
            }
            for (k, v) in [
                ("traffic_share_a", b.traffic_share_a),
                ("budget_share_a", b.budget_share_a),
            ] {
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::Config(format!("{k} {v} outside [0, 1]")));
                }
            }
        }
        Ok(())
    }
}

/// Summary written next to the estimated limits and costs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateSummary {
    pub window_days: u32,
    pub blend_weight: f64,
    pub limits: Vec<(String, f64)>,
    pub fill: FillReport,
    pub warnings: Vec<String>,
}

fn fail_on_violations(dir: &Path) -> Result<()> {
    let report = validate_dataset(dir)?;
    if report.is_clean() {
        return Ok(());
    }
    let listed: Vec<String> = report
        .violations
        .iter()
        .take(20)
        .map(|v| {
            format!(
                "{}:{}: {:?}: {}",
                v.file,
                v.line.map_or_else(String::new, |l| l.to_string()),
                v.kind,
                v.message
            )
        })
        .collect();
    Err(Error::Data(format!(
        "{} has {} violations:\n{}",
        dir.display(),
        report.violations.len(),
        listed.join("\n")
    )))
}

/// Channel limits from an unconstrained replay of the warm-up split and the
/// cost matrix from the dataset statistics, written to `out_dir`.
pub fn run_estimate(
    dataset_dir: &Path,
    out_dir: &Path,
    blend_weight: f64,
    replay_cfg: &ReplayConfig,
) -> Result<EstimateSummary> {
    fail_on_violations(dataset_dir)?;
    let campaigns = read_campaigns(&dataset_dir.join(CAMPAIGNS_FILE))?;
    let campaign_ids: Vec<String> = campaigns.into_iter().map(|(id, _)| id).collect();
    let channel_ids = read_channel_ids(&dataset_dir.join(CHANNELS_FILE))?;
    let warmup = load_traffic(&dataset_dir.join(WARMUP_FILE))?;
    if warmup.is_empty() {
        return Err(Error::Data("cannot estimate channel limits from empty traffic".into()));
    }
    let summary = unconstrained_replay(
        &warmup,
        &ReplayConfig {
            budget_period: None,
            ..*replay_cfg
        },
    )?;
    let limits = limits_from_summary(&summary, &channel_ids);
    let window_days = summary.days.len() as u32;
    let stats = PerfStats::load(&dataset_dir.join(STATS_FILE), window_days)?;
    let build = build_cost_matrix(&stats, &campaign_ids, &channel_ids, blend_weight)?;

    fs::create_dir_all(out_dir).map_err(|e| Error::file(out_dir, e))?;
    limits.save_limits(&out_dir.join(LIMITS_FILE))?;
    limits.save_daily(&out_dir.join(LIMITS_DAILY_FILE))?;
    write_cost_triplets(&out_dir.join(COST_FILE), &campaign_ids, &channel_ids, &build.cost)?;
    let est = EstimateSummary {
        window_days,
        blend_weight,
        limits: limits.limits,
        fill: build.report,
        warnings: limits.warnings,
    };
    let path = out_dir.join(ESTIMATE_FILE);
    fs::write(&path, serde_json::to_string_pretty(&est)? + "\n").map_err(|e| Error::file(&path, e))?;
    Ok(est)
}

/// Everything an experiment reads from disk.
#[derive(Clone, Debug)]
pub struct Inputs {
    pub campaign_ids: Vec<String>,
    pub budgets: Vec<f64>,
    pub channel_ids: Vec<String>,
    pub limits: Vec<f64>,
    pub cost: DenseMatrix,
    pub stats: PerfStats,
    pub traffic: Vec<TrafficBlock>,
}

impl Inputs {
    pub fn load(paths: &DatasetPaths) -> Result<Self> {
        let dir = &paths.dir;
        let est_dir = paths.estimates();
        let est_path = est_dir.join(ESTIMATE_FILE);
        if !est_path.exists() {
            return Err(Error::Data(format!(
                "no estimates in {}; run `estimate` first",
                est_dir.display()
            )));
        }
        let est: EstimateSummary =
            serde_json::from_str(&fs::read_to_string(&est_path).map_err(|e| Error::file(&est_path, e))?)?;
        let (campaign_ids, budgets): (Vec<String>, Vec<f64>) =
            read_campaigns(&dir.join(CAMPAIGNS_FILE))?.into_iter().unzip();
        let channel_ids = read_channel_ids(&dir.join(CHANNELS_FILE))?;
        let limit_rows = read_channels(&est_dir.join(LIMITS_FILE))?;
        let limits = channel_ids
            .iter()
            .map(|ch| {
                limit_rows
                    .iter()
                    .find(|(id, _)| id == ch)
                    .map(|(_, l)| *l)
                    .ok_or_else(|| Error::Data(format!("no limit for channel `{ch}`")))
            })
            .collect::<Result<Vec<f64>>>()?;
        let cost = read_cost_triplets(&est_dir.join(COST_FILE), &campaign_ids, &channel_ids)?;
        let stats = PerfStats::load(&dir.join(STATS_FILE), est.window_days)?;
        let traffic = load_traffic(&dir.join(TRAFFIC_FILE))?;
        Ok(Self {
            campaign_ids,
            budgets,
            channel_ids,
            limits,
            cost,
            stats,
            traffic,
        })
    }

    pub fn market(&self) -> Market {
        Market {
            campaign_ids: self.campaign_ids.clone(),
            budgets: self.budgets.clone(),
            channel_ids: self.channel_ids.clone(),
        }
    }

    pub fn problem(&self) -> Result<BudgetProblem> {
        BudgetProblem::new(
            self.campaign_ids.clone(),
            self.channel_ids.clone(),
            self.budgets.clone(),
            self.limits.clone(),
            self.cost.clone(),
        )
    }

    pub fn mean_cost(&self) -> f64 {
        self.cost.mean()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum RowStatus {
    Ok,
    NotConverged,
    Failed { category: ErrorCategory, message: String },
}

impl RowStatus {
    pub fn label(&self) -> String {
        match self {
            Self::Ok => "ok".into(),
            Self::NotConverged => "not_converged".into(),
            Self::Failed { message, .. } => format!("failed: {message}"),
        }
    }

    fn failed(e: &Error) -> Self {
        Self::Failed {
            category: e.category(),
            message: e.to_string(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrategyRow {
    pub name: String,
    pub kind: StrategyKind,
    pub status: RowStatus,
    /// Absolute epsilon used by an OT allocation.
    pub epsilon: Option<f64>,
    /// Adopters that fell back to first-come-first-served.
    pub fallbacks: Vec<String>,
    pub report: Option<MetricsReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResults {
    pub base: String,
    pub mean_cost: f64,
    pub rows: Vec<StrategyRow>,
    pub sweep: Option<SweepTable>,
}

impl RunResults {
    pub fn row(&self, name: &str) -> Option<&StrategyRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    pub fn base_row(&self) -> &StrategyRow {
        self.row(&self.base).expect("base strategy is validated")
    }

    pub fn write(&self, out_dir: &Path) -> Result<()> {
        fs::create_dir_all(out_dir).map_err(|e| Error::file(out_dir, e))?;
        let rows: Vec<(String, String, Option<MetricsReport>)> = self
            .rows
            .iter()
            .map(|r| (r.name.clone(), r.status.label(), r.report.clone()))
            .collect();
        let path = out_dir.join(RESULTS_CSV);
        write_reports_csv(fs::File::create(&path).map_err(|e| Error::file(&path, e))?, &rows)?;
        let path = out_dir.join(RESULTS_JSON);
        fs::write(&path, serde_json::to_string_pretty(self)? + "\n").map_err(|e| Error::file(&path, e))?;
        if let Some(s) = &self.sweep {
            write_sweep_csv(&out_dir.join(SWEEP_CSV), s, self.mean_cost)?;
        }
        Ok(())
    }
}

/// An allocation plus what produced it.
struct Built {
    allocation: crate::auction::BudgetAllocation,
    converged: bool,
    epsilon: Option<f64>,
    fallbacks: Vec<String>,
}

struct Context<'a> {
    cfg: &'a ExperimentConfig,
    inputs: &'a Inputs,
    replay: ReplayConfig,
    sweep: Option<SweepTable>,
}

impl Context<'_> {
    fn sweep(&mut self) -> Result<&SweepTable> {
        if self.sweep.is_none() {
            let grid = self.cfg.sweep.absolute_grid(self.inputs.mean_cost());
            let table = sweep_epsilon(
                &self.inputs.problem()?,
                &self.inputs.traffic,
                &grid,
                &self.cfg.solver.at(grid[0]),
                &self.replay,
            )?;
            self.sweep = Some(table);
        }
        Ok(self.sweep.as_ref().expect("just filled"))
    }

    fn epsilon(&mut self, spec: &StrategySpec) -> Result<f64> {
        if let Some(e) = spec.epsilon {
            return Ok(e);
        }
        if let Some(r) = spec.epsilon_rel {
            return Ok(r * self.inputs.mean_cost());
        }
        let table = self.sweep()?;
        table
            .best_row()
            .map(|r| r.epsilon)
            .ok_or_else(|| Error::Data("every epsilon of the sweep failed".into()))
    }

    /// Allocation of `spec` with budgets and channel limits scaled by the given shares.
    fn build(&mut self, spec: &StrategySpec, budget_share: f64, traffic_share: f64) -> Result<Built> {
        let inputs = self.inputs;
        let mut market = inputs.market();
        for b in &mut market.budgets {
            *b *= budget_share;
        }
        let adopters = || {
            select_adopters(
                &market.campaign_ids,
                spec.adoption_fraction.unwrap_or(0.0),
                spec.selection_seed.unwrap_or(self.cfg.seed),
            )
        };
        let blend = self.cfg.estimate.blend_weight;
        let local = match spec.kind {
            StrategyKind::Fcfs => {
                return Ok(Built {
                    allocation: allocate_fcfs(&market)?,
                    converged: true,
                    epsilon: None,
                    fallbacks: Vec::new(),
                })
            }
            StrategyKind::LocalGreedy => allocate_local_greedy(&market, &inputs.stats, &adopters(), blend)?,
            StrategyKind::LocalLinearRoi => allocate_local_linear_roi(&market, &inputs.stats, &adopters(), blend)?,
            StrategyKind::AdCob => {
                let epsilon = self.epsilon(spec)?;
                let mut problem = inputs.problem()?;
                problem.budgets = market.budgets.clone();
                for l in &mut problem.channel_limits {
                    *l *= traffic_share;
                }
                let a = allocate_adcob(&problem, &self.cfg.solver.at(epsilon))?;
                return Ok(Built {
                    converged: a.converged(),
                    allocation: a.allocation,
                    epsilon: Some(epsilon),
                    fallbacks: Vec::new(),
                });
            }
        };
        Ok(Built {
            allocation: local.allocation,
            converged: true,
            epsilon: None,
            fallbacks: local.fallbacks,
        })
    }

    fn row(
        &mut self,
        spec: &StrategySpec,
        blocks: &[TrafficBlock],
        budget_share: f64,
        traffic_share: f64,
    ) -> StrategyRow {
        let mut row = StrategyRow {
            name: spec.name.clone(),
            kind: spec.kind,
            status: RowStatus::Ok,
            epsilon: None,
            fallbacks: Vec::new(),
            report: None,
        };
        let built = match self.build(spec, budget_share, traffic_share) {
            Ok(b) => b,
            Err(e) => {
                log::error!("strategy `{}` failed: {e}", spec.name);
                row.status = RowStatus::failed(&e);
                return row;
            }
        };
        row.epsilon = built.epsilon;
        row.fallbacks = built.fallbacks;
        if !built.converged {
            row.status = RowStatus::NotConverged;
        }
        match replay(blocks, &built.allocation, &self.replay) {
            Ok(r) => row.report = Some(r),
            Err(e) => row.status = RowStatus::failed(&e),
        }
        row
    }
}

/// Runs every configured strategy on the evaluation traffic.
pub fn run_strategies(cfg: &ExperimentConfig, inputs: &Inputs) -> Result<RunResults> {
    let mut ctx = Context {
        cfg,
        inputs,
        replay: cfg.replay.config(),
        sweep: None,
    };
    let mut rows = Vec::new();
    for spec in &cfg.strategies {
        log::info!("running `{}`", spec.name);
        rows.push(ctx.row(spec, &inputs.traffic, 1.0, 1.0));
    }
    let base = rows.iter().find(|r| r.name == cfg.base).and_then(|r| r.report.clone());
    if let Some(base_report) = base {
        for r in rows.iter_mut() {
            if let Some(rep) = r.report.as_mut() {
                rep.normalize(&cfg.base, &base_report);
            }
        }
    }
    Ok(RunResults {
        base: cfg.base.clone(),
        mean_cost: inputs.mean_cost(),
        rows,
        sweep: ctx.sweep,
    })
}

/// Sweeps the configured epsilon grid.
pub fn run_sweep(cfg: &ExperimentConfig, inputs: &Inputs) -> Result<SweepTable> {
    let mut ctx = Context {
        cfg,
        inputs,
        replay: cfg.replay.config(),
        sweep: None,
    };
    ctx.sweep()?;
    Ok(ctx.sweep.expect("filled"))
}

pub fn write_sweep_csv(path: &Path, table: &SweepTable, mean_cost: f64) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "epsilon",
        "epsilon_rel",
        "status",
        "revenue",
        "conversions",
        "cpc_per_conversion",
        "clicks",
        "best",
    ])?;
    for (k, row) in table.rows.iter().enumerate() {
        let status = match (&row.error, row.converged) {
            (Some(e), _) => format!("failed: {e}"),
            (None, true) => "ok".into(),
            (None, false) => "not_converged".into(),
        };
        let mut rec = vec![
            format!("{:.6e}", row.epsilon),
            format!("{:.6e}", row.epsilon / mean_cost),
            status,
        ];
        match &row.report {
            Some(r) => rec.extend([
                format!("{:.6}", r.revenue),
                format!("{:.6}", r.conversions),
                format!("{:.6}", r.cpc_per_conversion),
                r.clicks.to_string(),
            ]),
            None => rec.extend(std::iter::repeat_n(String::new(), 4)),
        }
        rec.push(if table.best == Some(k) { "1" } else { "0" }.into());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BucketArm {
    pub row: StrategyRow,
    pub budget: f64,
    pub revenue_per_budget: Option<f64>,
    pub conversions_per_budget: Option<f64>,
}

impl BucketArm {
    fn new(row: StrategyRow, budget: f64) -> Self {
        let per = |v: f64| (budget > 0.0).then(|| v / budget);
        Self {
            revenue_per_budget: row.report.as_ref().and_then(|r| per(r.revenue)),
            conversions_per_budget: row.report.as_ref().and_then(|r| per(r.conversions)),
            row,
            budget,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BucketResults {
    pub a: BucketArm,
    pub b: BucketArm,
}

fn rel_delta(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    match (a, b) {
        (Some(a), Some(b)) if a != 0.0 => Some((b - a) / a),
        _ => None,
    }
}

impl BucketResults {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let fmt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        let mut w = csv::Writer::from_path(path)?;
        w.write_record([
            "bucket",
            "strategy",
            "status",
            "budget",
            "revenue",
            "conversions",
            "cpc_per_conversion",
            "clicks",
            "revenue_per_budget",
            "conversions_per_budget",
        ])?;
        for (label, arm) in [("A", &self.a), ("B", &self.b)] {
            let r = arm.row.report.as_ref();
            w.write_record([
                label.to_string(),
                arm.row.name.clone(),
                arm.row.status.label(),
                format!("{:.6}", arm.budget),
                fmt(r.map(|r| r.revenue)),
                fmt(r.map(|r| r.conversions)),
                fmt(r.map(|r| r.cpc_per_conversion)),
                r.map_or_else(String::new, |r| r.clicks.to_string()),
                fmt(arm.revenue_per_budget),
                fmt(arm.conversions_per_budget),
            ])?;
        }
        w.write_record([
            "delta_b_vs_a".to_string(),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
            fmt(rel_delta(self.a.revenue_per_budget, self.b.revenue_per_budget)),
            fmt(rel_delta(self.a.conversions_per_budget, self.b.conversions_per_budget)),
        ])?;
        w.flush()?;
        Ok(())
    }
}

/// Splits traffic and budgets in two and replays each configured strategy in
/// its own bucket.
pub fn run_bucket(cfg: &ExperimentConfig, inputs: &Inputs) -> Result<BucketResults> {
    let settings = cfg
        .bucket
        .as_ref()
        .ok_or_else(|| Error::Config("no [bucket] section in the config".into()))?;
    let spec_a = cfg.strategy(&settings.a).expect("validated");
    let spec_b = cfg.strategy(&settings.b).expect("validated");
    let split = BucketSplit {
        seed: settings.split_seed.unwrap_or(cfg.seed),
        traffic_share_a: settings.traffic_share_a,
    };
    let share_a = settings.budget_share_a;
    let mut ctx = Context {
        cfg,
        inputs,
        replay: cfg.replay.config(),
        sweep: None,
    };
    let built_a = ctx.build(spec_a, share_a, settings.traffic_share_a);
    let built_b = ctx.build(spec_b, 1.0 - share_a, 1.0 - settings.traffic_share_a);
    let total_budget: f64 = inputs.budgets.iter().sum();
    let budget_a = share_a * total_budget;
    let budget_b = (1.0 - share_a) * total_budget;
    let blank = |spec: &StrategySpec| StrategyRow {
        name: spec.name.clone(),
        kind: spec.kind,
        status: RowStatus::Ok,
        epsilon: None,
        fallbacks: Vec::new(),
        report: None,
    };
    let (mut row_a, mut row_b) = (blank(spec_a), blank(spec_b));
    match (built_a, built_b) {
        (Ok(a), Ok(b)) => {
            for (row, built) in [(&mut row_a, &a), (&mut row_b, &b)] {
                row.epsilon = built.epsilon;
                row.fallbacks = built.fallbacks.clone();
                if !built.converged {
                    row.status = RowStatus::NotConverged;
                }
            }
            let (ra, rb) = run_bucketed(
                &inputs.traffic,
                &a.allocation,
                &b.allocation,
                &inputs.budgets,
                &split,
                &ctx.replay,
            )?;
            row_a.report = Some(ra);
            row_b.report = Some(rb);
        }
        (a, b) => {
            // One side failed; the other still runs on its own records.
            let (blocks_a, blocks_b) = split_blocks(&inputs.traffic, &split);
            for (row, built, blocks) in [(&mut row_a, a, &blocks_a), (&mut row_b, b, &blocks_b)] {
                match built {
                    Ok(built) => {
                        row.epsilon = built.epsilon;
                        row.fallbacks = built.fallbacks;
                        if !built.converged {
                            row.status = RowStatus::NotConverged;
                        }
                        row.report = Some(replay(blocks, &built.allocation, &ctx.replay)?);
                    }
                    Err(e) => row.status = RowStatus::failed(&e),
                }
            }
        }
    }
    Ok(BucketResults {
        a: BucketArm::new(row_a, budget_a),
        b: BucketArm::new(row_b, budget_b),
    })
}

/// Generates the dataset from `dataset.spec`, estimates, and runs every strategy.
pub fn run_pipeline(cfg: &ExperimentConfig, seed: Option<u64>) -> Result<(Manifest, EstimateSummary, RunResults)> {
    let spec_path = cfg
        .dataset
        .spec
        .as_ref()
        .ok_or_else(|| Error::Config("pipeline needs dataset.spec".into()))?;
    let mut spec = DatasetSpec::load(spec_path)?;
    if let Some(s) = seed {
        spec.seed = s;
    }
    let manifest = data_gen::generate(&spec, &cfg.dataset.dir)?;
    let est = run_estimate(
        &cfg.dataset.dir,
        cfg.dataset.estimates(),
        cfg.estimate.blend_weight,
        &cfg.replay.config(),
    )?;
    let inputs = Inputs::load(&cfg.dataset)?;
    let results = run_strategies(cfg, &inputs)?;
    results.write(&cfg.output_dir)?;
    Ok((manifest, est, results))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<ExperimentConfig> {
        let cfg: ExperimentConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    const MINIMAL: &str = r#"
        base = "fcfs"
        output_dir = "out"
        [dataset]
        dir = "data"
        [[strategy]]
        name = "fcfs"
        kind = "fcfs"
    "#;

    #[test]
    fn minimal_config_takes_defaults() {
        let cfg = parse(MINIMAL).unwrap();
        assert_eq!(cfg.sweep.raw_grid().len(), 9);
        assert_eq!(cfg.replay.config(), ReplayConfig::default());
        assert_eq!(cfg.estimate.blend_weight, 0.5);
    }

    #[test]
    fn base_must_be_listed() {
        let text = MINIMAL.replace("base = \"fcfs\"", "base = \"adcob\"");
        assert!(matches!(parse(&text), Err(Error::Config(_))));
    }

    #[test]
    fn local_strategies_need_a_fraction() {
        let text = format!("{MINIMAL}\n[[strategy]]\nname = \"g\"\nkind = \"local_greedy\"\n");
        assert!(parse(&text).is_err());
        let text = format!("{MINIMAL}\n[[strategy]]\nname = \"g\"\nkind = \"local_greedy\"\nadoption_fraction = 0.4\n");
        assert!(parse(&text).is_ok());
    }

    #[test]
    fn duplicate_names_and_bad_grids_are_rejected() {
        let text = format!("{MINIMAL}\n[[strategy]]\nname = \"fcfs\"\nkind = \"fcfs\"\n");
        assert!(parse(&text).is_err());
        let text = format!("{MINIMAL}\n[sweep]\ngrid = [1.0, 0.1]\n");
        assert!(parse(&text).is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = format!("{MINIMAL}\nbogus = 1\n");
        assert!(matches!(parse(&text), Err(Error::Toml(_))));
    }

    #[test]
    fn bucket_names_are_checked() {
        let text = format!("{MINIMAL}\n[bucket]\na = \"fcfs\"\nb = \"missing\"\n");
        assert!(parse(&text).is_err());
    }
}
