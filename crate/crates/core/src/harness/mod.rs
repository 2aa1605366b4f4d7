//! Scenario files, closed-loop simulation, safety audit, metrics, sweeps
//! and the CLI.

mod audit;
mod bench;
pub mod cli;
mod metrics;
mod scenario;
mod sim;

pub use audit::{audit, AuditReport, AUDIT_STEP};
pub use bench::{evaluate, failed_row, sweep, write_sweep_csv, Evaluation, SweepRow, DEFAULT_FOTP_WEIGHT};
pub use metrics::{
    accel_cost, auxiliary_costs, compute_metrics, fotp_cost, travel_distance, goals_reached, AuxiliaryCosts, MetricsRow, GOAL_HEADING_TOL, GOAL_POSITION_TOL,
    METRICS_HEADER,
};
pub use scenario::{
    random_scenario, AgentSpec, AgentState, ConstraintOptions, FrontendConfig, RandomScenarioParams, Scenario,
    SCHEMA_VERSION,
};
pub use sim::{bicycle, rk4_step, simulate_agent, simulate_closed_loop, AgentLog, Drive, SimOptions, SimResult, SimSample};

pub mod gradcheck;
