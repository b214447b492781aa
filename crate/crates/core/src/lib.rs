//! Discrete-event simulation of NIC receive steering and the packet
//! reordering it causes when application threads migrate between cores.
//!
//! The NIC spreads flows over per-core rings with an RSS hash and, with
//! Flow Director enabled, steers each flow to the core that last sent on
//! it. A migrated thread's next transmit moves its flow's entry, so packets
//! still queued on the old core race those arriving on the new one.

pub mod analytic;
pub mod compare;
pub mod engine;
pub mod experiment;
pub mod host;
pub mod ids;
pub mod metrics;
pub mod nic;
pub mod scenario;
pub mod sim;
pub mod workload;

pub use engine::{Engine, RngStream, SimRng, SimTime};
pub use ids::{CoreId, FlowId, QueueId, ThreadId};
pub use scenario::{load_scenario, Scenario, ScenarioError};
pub use sim::{RunOutput, SimConfig, Simulation};
