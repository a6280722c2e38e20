//! Offline auction replay: traffic format, budget ledger, GSP engine,
//! metrics and budget bucketing.

pub mod bucket;
pub mod engine;
pub mod ledger;
pub mod replay;
pub mod traffic;

pub use bucket::{run_bucketed, split_blocks, Bucket, BucketSplit};
pub use engine::{run_auction, AuctionConfig, AuctionOutcome, Winner};
pub use ledger::{BudgetAllocation, BudgetLedger};
pub use replay::{replay, write_reports_csv, Breakdown, MetricsReport, Normalized, ReplayConfig};
pub use traffic::{
    into_blocks, load_traffic, read_traffic, record_count, save_traffic, write_traffic, Candidate, TrafficBlock,
    TrafficRecord, BLOCK_SECONDS, DAY_SECONDS, SCHEMA_VERSION,
};
