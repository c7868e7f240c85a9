//! Single-agent and federated SARSA training loops.

mod agent;
mod config;
mod record;
mod run;

pub use agent::{local_round, AgentState};
pub use config::{RunConfig, StepSchedule};
pub use record::{
    config_hash, env_hash, fmt_real, fmt_vec, parse_csv_rows, sha256_hex, write_atomic, RoundRow, RunRecord,
    CSV_COLUMNS, RECORD_SCHEMA_VERSION,
};
pub use run::{fed_round, resolve_config, run_fedsarsa, run_sarsa, RoundContext, Targets};
