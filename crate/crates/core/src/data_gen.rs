//! Synthetic traffic datasets and dataset validation.
//!
//! A dataset directory holds:
//!
//! | file            | content                                                   |
//! |-----------------|-----------------------------------------------------------|
//! | `campaigns.csv` | `id,budget` daily budgets                                 |
//! | `channels.csv`  | `id,slots`                                                |
//! | `warmup.jsonl`  | history traffic, used for statistics and channel limits   |
//! | `traffic.jsonl` | evaluation traffic                                        |
//! | `stats.csv`     | per (campaign, channel) statistics of the warm-up split   |
//! | `truth.json`    | sampled market parameters                                 |
//! | `manifest.json` | spec echo, seed, content hashes and summary targets       |

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution as _, LogNormal, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::auction::traffic::RecordLine;
use crate::auction::{
    into_blocks, save_traffic, Candidate, ReplayConfig, TrafficBlock, TrafficRecord, BLOCK_SECONDS, DAY_SECONDS,
    SCHEMA_VERSION,
};
use crate::cost_model::{unconstrained_replay, PerfStats};
use crate::error::{Error, Result};
use crate::ot::{read_campaigns, write_campaigns};

pub const CAMPAIGNS_FILE: &str = "campaigns.csv";
pub const CHANNELS_FILE: &str = "channels.csv";
pub const WARMUP_FILE: &str = "warmup.jsonl";
pub const TRAFFIC_FILE: &str = "traffic.jsonl";
pub const STATS_FILE: &str = "stats.csv";
pub const TRUTH_FILE: &str = "truth.json";
pub const MANIFEST_FILE: &str = "manifest.json";

pub const ALLOWED_SLOTS: [usize; 3] = [5, 10, 20];

/// A parametric family.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Distribution {
    Constant {
        value: f64,
    },
    Uniform {
        low: f64,
        high: f64,
    },
    /// `exp(N(mu, sigma^2))`.
    LogNormal {
        mu: f64,
        sigma: f64,
    },
    Beta {
        alpha: f64,
        beta: f64,
    },
}

impl Distribution {
    pub fn validate(&self, name: &str) -> Result<()> {
        let ok = match *self {
            Self::Constant { value } => value.is_finite(),
            Self::Uniform { low, high } => low.is_finite() && high.is_finite() && low <= high,
            Self::LogNormal { mu, sigma } => mu.is_finite() && sigma.is_finite() && sigma >= 0.0,
            Self::Beta { alpha, beta } => alpha.is_finite() && beta.is_finite() && alpha > 0.0 && beta > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid parameters for {name}: {self:?}")))
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            Self::Constant { value } => value,
            Self::Uniform { low, high } => 0.5 * (low + high),
            Self::LogNormal { mu, sigma } => (mu + 0.5 * sigma * sigma).exp(),
            Self::Beta { alpha, beta } => alpha / (alpha + beta),
        }
    }

    /// Smallest and largest values the family can produce.
    fn support(&self) -> (f64, f64) {
        match *self {
            Self::Constant { value } => (value, value),
            Self::Uniform { low, high } => (low, high),
            Self::LogNormal { .. } => (0.0, f64::INFINITY),
            Self::Beta { .. } => (0.0, 1.0),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Self::Constant { value } => value,
            Self::Uniform { low, high } => low + (high - low) * rng.random::<f64>(),
            Self::LogNormal { mu, sigma } => LogNormal::new(mu, sigma).expect("validated").sample(rng),
            Self::Beta { alpha, beta } => Beta::new(alpha, beta).expect("validated").sample(rng),
        }
    }
}

/// Per (campaign cluster, channel) multipliers on conversion rate and recall.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Affinity {
    /// Explicit `clusters x channels` matrix.
    Matrix { matrix: Vec<Vec<f64>> },
    /// Each entry drawn from a mean-one log-normal with this spread.
    Random { sigma: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub num_campaigns: usize,
    pub num_channels: usize,
    /// Evaluation days.
    pub days: usize,
    /// History days preceding the evaluation split.
    pub warmup_days: usize,
    pub records_per_day_per_channel: usize,
    pub slots_per_channel: Vec<usize>,
    /// Expected number of candidates per auction.
    pub candidates_per_record: usize,
    pub num_clusters: usize,
    /// Daily budget as a multiple of the campaign's unconstrained warm-up daily spend.
    pub budget_distribution: Distribution,
    /// Target cost per conversion; bids are `target * pcvr`.
    pub bid_distribution: Distribution,
    pub pctr_distribution: Distribution,
    pub pcvr_distribution: Distribution,
    pub channel_affinity: Affinity,
    /// How strongly affinity shapes which campaigns are recalled on a channel.
    #[serde(default = "one")]
    pub recall_exponent: f64,
    /// Log-normal spread of per-candidate noise on pctr, pcvr and bid.
    #[serde(default = "default_noise")]
    pub noise_sigma: f64,
    /// Hour of day around which each channel's traffic peaks. Default: evenly spread.
    #[serde(default)]
    pub peak_hours: Option<Vec<f64>>,
    #[serde(default = "default_peak_spread")]
    pub peak_spread_hours: f64,
    pub seed: u64,
}

fn one() -> f64 {
    1.0
}

fn default_noise() -> f64 {
    0.3
}

fn default_peak_spread() -> f64 {
    4.0
}

impl DatasetSpec {
    /// 200 campaigns, 8 channels, 3 evaluation days.
    pub fn benchmark() -> Self {
        Self {
            num_campaigns: 200,
            num_channels: 8,
            days: 3,
            warmup_days: 7,
            records_per_day_per_channel: 4000,
            slots_per_channel: vec![5, 10, 20, 5, 10, 20, 5, 10],
            candidates_per_record: 30,
            num_clusters: 8,
            budget_distribution: Distribution::Uniform { low: 0.05, high: 0.15 },
            bid_distribution: Distribution::LogNormal { mu: 3.0, sigma: 0.4 },
            pctr_distribution: Distribution::Beta { alpha: 4.0, beta: 76.0 },
            pcvr_distribution: Distribution::Beta { alpha: 2.0, beta: 38.0 },
            channel_affinity: Affinity::Random { sigma: 0.8 },
            recall_exponent: 0.75,
            noise_sigma: 0.3,
            peak_hours: None,
            peak_spread_hours: 4.0,
            seed: 42,
        }
    }

    /// A few campaigns and channels, for tests and examples.
    pub fn small(seed: u64) -> Self {
        Self {
            num_campaigns: 12,
            num_channels: 3,
            days: 1,
            warmup_days: 1,
            records_per_day_per_channel: 120,
            slots_per_channel: vec![5, 10, 5],
            candidates_per_record: 8,
            num_clusters: 3,
            seed,
            ..Self::benchmark()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("num_campaigns", self.num_campaigns),
            ("num_channels", self.num_channels),
            ("days", self.days),
            ("warmup_days", self.warmup_days),
            ("records_per_day_per_channel", self.records_per_day_per_channel),
            ("candidates_per_record", self.candidates_per_record),
            ("num_clusters", self.num_clusters),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if self.slots_per_channel.len() != self.num_channels {
            return Err(Error::Config(format!(
                "slots_per_channel has {} entries for {} channels",
                self.slots_per_channel.len(),
                self.num_channels
            )));
        }
        if let Some(s) = self.slots_per_channel.iter().find(|s| !ALLOWED_SLOTS.contains(s)) {
            return Err(Error::Config(format!("slots {s} not in {ALLOWED_SLOTS:?}")));
        }
        self.budget_distribution.validate("budget_distribution")?;
        self.bid_distribution.validate("bid_distribution")?;
        self.pctr_distribution.validate("pctr_distribution")?;
        self.pcvr_distribution.validate("pcvr_distribution")?;
        if self.budget_distribution.support().0 <= 0.0 {
            return Err(Error::Config("budget_distribution must be strictly positive".into()));
        }
        if self.bid_distribution.support().0 < 0.0 {
            return Err(Error::Config("bid_distribution must be non-negative".into()));
        }
        for (name, d) in [
            ("pctr_distribution", &self.pctr_distribution),
            ("pcvr_distribution", &self.pcvr_distribution),
        ] {
            let (lo, hi) = d.support();
            if lo < 0.0 || hi > 1.0 {
                return Err(Error::Config(format!("{name} must stay within [0, 1]")));
            }
        }
        match &self.channel_affinity {
            Affinity::Matrix { matrix } => {
                if matrix.len() != self.num_clusters || matrix.iter().any(|r| r.len() != self.num_channels) {
                    return Err(Error::Config(format!(
                        "channel_affinity must be {} x {}",
                        self.num_clusters, self.num_channels
                    )));
                }
                if matrix.iter().flatten().any(|v| !(v.is_finite() && *v > 0.0)) {
                    return Err(Error::Config("channel_affinity entries must be positive".into()));
                }
            }
            Affinity::Random { sigma } => {
                if !(sigma.is_finite() && *sigma >= 0.0) {
                    return Err(Error::Config("channel_affinity sigma must be non-negative".into()));
                }
            }
        }
        for (name, v) in [
            ("recall_exponent", self.recall_exponent),
            ("noise_sigma", self.noise_sigma),
            ("peak_spread_hours", self.peak_spread_hours),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be non-negative")));
            }
        }
        if let Some(p) = &self.peak_hours {
            if p.len() != self.num_channels || p.iter().any(|h| !(0.0..24.0).contains(h)) {
                return Err(Error::Config("peak_hours needs one hour in [0, 24) per channel".into()));
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        let spec: Self = toml::from_str(&text)?;
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CampaignTruth {
    pub id: String,
    pub cluster: usize,
    pub target_cpa: f64,
    pub base_ctr: f64,
    pub base_cvr: f64,
    pub budget: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelTruth {
    pub id: String,
    pub slots: usize,
    pub peak_hour: f64,
}

/// Sampled market behind a dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub campaigns: Vec<CampaignTruth>,
    pub channels: Vec<ChannelTruth>,
    /// `clusters x channels`.
    pub affinity: Vec<Vec<f64>>,
    /// Probability that campaign `i` is a candidate on channel `j`, row-major.
    pub inclusion: Vec<Vec<f64>>,
}

impl GroundTruth {
    pub fn campaign_ids(&self) -> Vec<String> {
        self.campaigns.iter().map(|c| c.id.clone()).collect()
    }

    pub fn channel_ids(&self) -> Vec<String> {
        self.channels.iter().map(|c| c.id.clone()).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryTargets {
    pub eval_records: usize,
    pub warmup_records: usize,
    /// Expected candidates per record.
    pub mean_candidates: f64,
    pub mean_bid: f64,
    pub mean_pctr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub seed: u64,
    pub spec: DatasetSpec,
    /// sha256 of every other file in the directory.
    pub files: BTreeMap<String, String>,
    pub targets: SummaryTargets,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        let m: Self = serde_json::from_str(&text)?;
        if m.schema_version != SCHEMA_VERSION {
            return Err(Error::SchemaVersion {
                found: m.schema_version,
                expected: SCHEMA_VERSION,
            });
        }
        Ok(m)
    }
}

/// Everything `generate` writes, held in memory.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub spec: DatasetSpec,
    pub truth: GroundTruth,
    pub warmup: Vec<TrafficBlock>,
    pub traffic: Vec<TrafficBlock>,
    pub stats: PerfStats,
    pub targets: SummaryTargets,
}

impl Dataset {
    pub fn budgets(&self) -> Vec<(String, f64)> {
        self.truth.campaigns.iter().map(|c| (c.id.clone(), c.budget)).collect()
    }
}

/// Rounds to `digits` significant digits so that files and memory agree exactly.
fn round_sig(x: f64, digits: i32) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    let e = digits - 1 - x.abs().log10().floor() as i32;
    if e >= 0 {
        let p = 10f64.powi(e);
        (x * p).round() / p
    } else {
        let p = 10f64.powi(-e);
        (x / p).round() * p
    }
}

const SIG_DIGITS: i32 = 6;

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn mean_one_lognormal(sigma: f64) -> LogNormal<f64> {
    LogNormal::new(-0.5 * sigma * sigma, sigma).expect("non-negative sigma")
}

fn sample_truth(spec: &DatasetSpec) -> GroundTruth {
    let mut rng = stream_rng(spec.seed, 0);
    let (n, m, k) = (spec.num_campaigns, spec.num_channels, spec.num_clusters);
    let width = n.saturating_sub(1).to_string().len().max(3);
    let campaigns: Vec<CampaignTruth> = (0..n)
        .map(|i| CampaignTruth {
            id: format!("c{i:0width$}"),
            cluster: rng.random_range(0..k),
            target_cpa: round_sig(spec.bid_distribution.sample(&mut rng), SIG_DIGITS),
            base_ctr: round_sig(spec.pctr_distribution.sample(&mut rng), SIG_DIGITS),
            base_cvr: round_sig(spec.pcvr_distribution.sample(&mut rng), SIG_DIGITS),
            budget: 0.0,
        })
        .collect();
    let affinity: Vec<Vec<f64>> = match &spec.channel_affinity {
        Affinity::Matrix { matrix } => matrix.clone(),
        Affinity::Random { sigma } => {
            let d = mean_one_lognormal(*sigma);
            (0..k)
                .map(|_| (0..m).map(|_| round_sig(d.sample(&mut rng), SIG_DIGITS)).collect())
                .collect()
        }
    };
    let channels: Vec<ChannelTruth> = (0..m)
        .map(|j| ChannelTruth {
            id: format!("ch{j}"),
            slots: spec.slots_per_channel[j],
            peak_hour: spec.peak_hours.as_ref().map_or(24.0 * j as f64 / m as f64, |p| p[j]),
        })
        .collect();
    // Poisson sampling: each campaign joins independently, so inclusion
    // probabilities are exact and summary targets follow in closed form.
    let mut inclusion = vec![vec![0.0; m]; n];
    for j in 0..m {
        let w: Vec<f64> = campaigns
            .iter()
            .map(|c| affinity[c.cluster][j].powf(spec.recall_exponent))
            .collect();
        let total: f64 = w.iter().sum();
        for i in 0..n {
            inclusion[i][j] = (spec.candidates_per_record as f64 * w[i] / total).min(1.0);
        }
    }
    GroundTruth {
        campaigns,
        channels,
        affinity,
        inclusion,
    }
}

fn targets(spec: &DatasetSpec, truth: &GroundTruth) -> SummaryTargets {
    let (mut weight, mut bid, mut pctr) = (0.0, 0.0, 0.0);
    for (i, c) in truth.campaigns.iter().enumerate() {
        for j in 0..truth.channels.len() {
            let p = truth.inclusion[i][j];
            weight += p;
            pctr += p * c.base_ctr;
            bid += p * c.target_cpa * c.base_cvr * truth.affinity[c.cluster][j];
        }
    }
    let per_day = spec.records_per_day_per_channel * spec.num_channels;
    SummaryTargets {
        eval_records: per_day * spec.days,
        warmup_records: per_day * spec.warmup_days,
        mean_candidates: weight / truth.channels.len() as f64,
        mean_bid: bid / weight,
        mean_pctr: pctr / weight,
    }
}

fn generate_day(spec: &DatasetSpec, truth: &GroundTruth, day: u64) -> Vec<TrafficRecord> {
    let mut rng = stream_rng(spec.seed, 1 + day);
    let noise = mean_one_lognormal(spec.noise_sigma);
    let hour = Normal::new(0.0, spec.peak_spread_hours).expect("non-negative spread");
    let mut records = Vec::with_capacity(spec.records_per_day_per_channel * truth.channels.len());
    for (j, ch) in truth.channels.iter().enumerate() {
        for _ in 0..spec.records_per_day_per_channel {
            let h = (ch.peak_hour + hour.sample(&mut rng)).rem_euclid(24.0);
            let second = ((h * 3600.0) as u64).min(DAY_SECONDS - 1);
            let mut candidates = Vec::new();
            for (i, c) in truth.campaigns.iter().enumerate() {
                if rng.random::<f64>() >= truth.inclusion[i][j] {
                    continue;
                }
                let pctr = round_sig((c.base_ctr * noise.sample(&mut rng)).min(1.0), SIG_DIGITS);
                let pcvr = round_sig(
                    (c.base_cvr * truth.affinity[c.cluster][j] * noise.sample(&mut rng)).min(1.0),
                    SIG_DIGITS,
                );
                let bid = round_sig(c.target_cpa * pcvr * noise.sample(&mut rng), SIG_DIGITS);
                let clicked = rng.random::<f64>() < pctr;
                let converted = clicked && rng.random::<f64>() < pcvr;
                candidates.push(Candidate {
                    campaign: c.id.clone(),
                    pctr,
                    pcvr,
                    bid,
                    clicked,
                    converted,
                });
            }
            records.push(TrafficRecord {
                id: 0,
                timestamp: day * DAY_SECONDS + second,
                channel: ch.id.clone(),
                slots: ch.slots,
                candidates,
            });
        }
    }
    records.sort_by_key(|r| r.timestamp);
    for (k, r) in records.iter_mut().enumerate() {
        r.id = (day << 32) | k as u64;
    }
    records
}

fn generate_days(spec: &DatasetSpec, truth: &GroundTruth, days: std::ops::Range<u64>) -> Result<Vec<TrafficBlock>> {
    let per_day: Vec<Vec<TrafficRecord>> = days.into_par_iter().map(|d| generate_day(spec, truth, d)).collect();
    into_blocks(per_day.into_iter().flatten())
}

/// Samples a dataset in memory. A pure function of the spec.
pub fn generate_dataset(spec: &DatasetSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut truth = sample_truth(spec);
    let w = spec.warmup_days as u64;
    let warmup = generate_days(spec, &truth, 0..w)?;
    let traffic = generate_days(spec, &truth, w..w + spec.days as u64)?;

    let summary = unconstrained_replay(&warmup, &ReplayConfig::default())?;
    let mut daily_spend = vec![0.0; truth.campaigns.len()];
    for (i, c) in truth.campaigns.iter().enumerate() {
        for ch in &truth.channels {
            daily_spend[i] += summary.stats.get(&c.id, &ch.id).spend;
        }
        daily_spend[i] /= spec.warmup_days as f64;
    }
    let mut positive: Vec<f64> = daily_spend.iter().copied().filter(|s| *s > 0.0).collect();
    positive.sort_by(f64::total_cmp);
    let floor = positive.get(positive.len() / 2).map_or(1.0, |m| 0.1 * m);
    let mut rng = stream_rng(spec.seed, u64::MAX);
    for (c, s) in truth.campaigns.iter_mut().zip(&daily_spend) {
        let ratio = spec.budget_distribution.sample(&mut rng);
        c.budget = round_sig(ratio * s.max(floor), SIG_DIGITS);
    }
    let total_budget: f64 = truth.campaigns.iter().map(|c| c.budget).sum();
    let capacity: f64 = daily_spend.iter().sum();
    if total_budget >= capacity {
        return Err(Error::Config(format!(
            "budgets ({total_budget:.2}) exceed the warm-up daily spend ({capacity:.2}); lower budget_distribution"
        )));
    }
    let targets = targets(spec, &truth);
    Ok(Dataset {
        spec: spec.clone(),
        truth,
        warmup,
        traffic,
        stats: summary.stats,
        targets,
    })
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::file(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn write_channels_file(path: &Path, channels: &[ChannelTruth]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["id", "slots"])?;
    for c in channels {
        w.write_record([c.id.clone(), c.slots.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Channel ids from the first column of `channels.csv`.
pub fn read_channel_ids(path: &Path) -> Result<Vec<String>> {
    let file = fs::File::open(path).map_err(|e| Error::file(path, e))?;
    let mut r = csv::Reader::from_reader(file);
    let mut ids = Vec::new();
    for row in r.records() {
        let row = row?;
        let id = row.get(0).unwrap_or_default().trim().to_string();
        if id.is_empty() {
            return Err(Error::Data(format!("{}: empty channel id", path.display())));
        }
        ids.push(id);
    }
    crate::ot::check_unique("channel", &ids)?;
    Ok(ids)
}

/// Writes a dataset directory and returns its manifest.
pub fn write_dataset(ds: &Dataset, dir: &Path) -> Result<Manifest> {
    fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
    write_campaigns(&dir.join(CAMPAIGNS_FILE), &ds.budgets())?;
    write_channels_file(&dir.join(CHANNELS_FILE), &ds.truth.channels)?;
    save_traffic(&dir.join(WARMUP_FILE), &ds.warmup)?;
    save_traffic(&dir.join(TRAFFIC_FILE), &ds.traffic)?;
    ds.stats.save(&dir.join(STATS_FILE))?;
    let truth_path = dir.join(TRUTH_FILE);
    fs::write(&truth_path, serde_json::to_string_pretty(&ds.truth)?).map_err(|e| Error::file(&truth_path, e))?;

    let mut files = BTreeMap::new();
    for name in [
        CAMPAIGNS_FILE,
        CHANNELS_FILE,
        WARMUP_FILE,
        TRAFFIC_FILE,
        STATS_FILE,
        TRUTH_FILE,
    ] {
        files.insert(name.to_string(), sha256_file(&dir.join(name))?);
    }
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        seed: ds.spec.seed,
        spec: ds.spec.clone(),
        files,
        targets: ds.targets.clone(),
    };
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n").map_err(|e| Error::file(&path, e))?;
    Ok(manifest)
}

/// Generates and writes a dataset.
pub fn generate(spec: &DatasetSpec, dir: &Path) -> Result<Manifest> {
    let ds = generate_dataset(spec)?;
    write_dataset(&ds, dir)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    Parse,
    Range,
    Window,
    Order,
    Reference,
    Duplicate,
    Hash,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub file: String,
    /// 1-based line number, when the problem is tied to one line.
    pub line: Option<usize>,
    pub kind: ViolationKind,
    pub message: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub records: usize,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, file: &str, line: Option<usize>, kind: ViolationKind, message: impl Into<String>) {
        self.violations.push(Violation {
            file: file.to_string(),
            line,
            kind,
            message: message.into(),
        });
    }
}

fn check_traffic_file(
    path: &Path,
    campaigns: &HashSet<String>,
    channels: &HashSet<String>,
    report: &mut ValidationReport,
) -> Result<()> {
    let name = path
        .file_name()
        .map_or_else(String::new, |n| n.to_string_lossy().into_owned());
    let file = fs::File::open(path).map_err(|e| Error::file(path, e))?;
    let mut last_block: Option<u64> = None;
    let mut ids = HashSet::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line_no = n + 1;
        let line = line.map_err(|e| Error::file(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: RecordLine = match serde_json::from_str(&line) {
            Ok(r) => r,
            Err(e) => {
                report.push(&name, Some(line_no), ViolationKind::Parse, e.to_string());
                continue;
            }
        };
        if rec.schema_version != SCHEMA_VERSION {
            return Err(Error::SchemaVersion {
                found: rec.schema_version,
                expected: SCHEMA_VERSION,
            });
        }
        report.records += 1;
        let block_start = rec.block_start;
        if !block_start.is_multiple_of(BLOCK_SECONDS)
            || !(block_start..block_start + BLOCK_SECONDS).contains(&rec.timestamp)
        {
            report.push(
                &name,
                Some(line_no),
                ViolationKind::Window,
                format!(
                    "timestamp {} outside block window starting at {block_start}",
                    rec.timestamp
                ),
            );
        }
        if last_block.is_some_and(|b| block_start < b) {
            report.push(
                &name,
                Some(line_no),
                ViolationKind::Order,
                format!("block {block_start} follows block {}", last_block.unwrap_or_default()),
            );
        }
        last_block = Some(last_block.map_or(block_start, |b| b.max(block_start)));
        if !ids.insert(rec.id) {
            report.push(
                &name,
                Some(line_no),
                ViolationKind::Duplicate,
                format!("record id {} repeats", rec.id),
            );
        }
        if !channels.contains(&rec.channel) {
            report.push(
                &name,
                Some(line_no),
                ViolationKind::Reference,
                format!("unknown channel `{}`", rec.channel),
            );
        }
        for c in rec.candidates.iter().filter(|c| !campaigns.contains(&c.campaign)) {
            report.push(
                &name,
                Some(line_no),
                ViolationKind::Reference,
                format!("unknown campaign `{}`", c.campaign),
            );
        }
        if let Err(msg) = rec.into_record().check() {
            report.push(&name, Some(line_no), ViolationKind::Range, msg);
        }
    }
    Ok(())
}

/// Checks a dataset directory. Missing or unreadable required files and schema
/// version mismatches are errors; everything else is reported as a violation.
pub fn validate_dataset(dir: &Path) -> Result<ValidationReport> {
    let mut report = ValidationReport::default();
    let campaign_rows = read_campaigns(&dir.join(CAMPAIGNS_FILE))?;
    let campaigns: HashSet<String> = campaign_rows.iter().map(|(id, _)| id.clone()).collect();
    let channels: HashSet<String> = read_channel_ids(&dir.join(CHANNELS_FILE))?.into_iter().collect();

    let manifest_path = dir.join(MANIFEST_FILE);
    let manifest = manifest_path
        .exists()
        .then(|| Manifest::load(&manifest_path))
        .transpose()?;

    for name in [TRAFFIC_FILE, WARMUP_FILE] {
        let path = dir.join(name);
        if name == TRAFFIC_FILE || path.exists() {
            check_traffic_file(&path, &campaigns, &channels, &mut report)?;
        }
    }
    let stats_path = dir.join(STATS_FILE);
    if stats_path.exists() {
        let stats = PerfStats::load(&stats_path, 1)?;
        let mut unknown = BTreeSet::new();
        for (campaign, channel) in stats.cells.keys() {
            if !campaigns.contains(campaign) {
                unknown.insert(format!("campaign `{campaign}`"));
            }
            if !channels.contains(channel) {
                unknown.insert(format!("channel `{channel}`"));
            }
        }
        for u in unknown {
            report.push(STATS_FILE, None, ViolationKind::Reference, format!("unknown {u}"));
        }
        if let Err(e) = stats.validate() {
            report.push(STATS_FILE, None, ViolationKind::Range, e.to_string());
        }
    }
    if let Some(m) = manifest {
        for (name, expected) in &m.files {
            let path = dir.join(name);
            if !path.exists() {
                report.push(name, None, ViolationKind::Hash, "listed in manifest but missing");
            } else if &sha256_file(&path)? != expected {
                report.push(name, None, ViolationKind::Hash, "content differs from manifest hash");
            }
        }
    }
    Ok(report)
}
