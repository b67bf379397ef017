//! Deterministic discrete-event simulation of the orchestrator, its sites
//! and the links between them.

pub mod engine;
pub mod generators;
pub mod metrics;
pub mod scenario;

pub use engine::{run, RunOptions, SimError, Simulation};
pub use generators::{generate_events, GenAction, GenEvent};
pub use metrics::{summarize, MetricsLog, Summary, UtilSample};
pub use scenario::{
    Arrivals, BatchMixParams, ChatbotParams, DuTraceParams, Duration, Generator, LinkSpec, Scenario, ScenarioError,
    TrafficPattern,
};
