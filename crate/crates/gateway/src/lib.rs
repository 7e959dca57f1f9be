//! Run orchestration around the locoplan planner and simulator: run
//! records and logs, the gateway service, batch experiments, metrics, the
//! HTTP API and the model client used against a real endpoint.

pub mod config;
pub mod execute;
pub mod experiment;
pub mod http;
pub mod http_client;
pub mod metrics;
pub mod record;
pub mod runlog;
pub mod service;

pub use metrics::{MetricsReport, TaskMetrics, SUCCESS_BAR};
pub use record::{RunOptions, RunRecord, RunState};
pub use service::{Gateway, GatewayConfig, GatewayError, SubmitRequest};
