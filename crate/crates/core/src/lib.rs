//! Era-based evolutionary optimization for the bi-objective multi-vehicle
//! routing problem with dynamic customer requests.
//!
//! Vehicles drive open tours from a start to an end depot. Mandatory
//! customers must be served; dynamic customers request service over the day
//! and may be left out. The optimizer minimizes the longest tour and the
//! number of unserved requests, re-planning at the onset of each era while
//! the already driven parts of the tours stay fixed.

pub mod evolution;
pub mod experiment;
pub mod fixtures;
pub mod genotype;
pub mod instance;
pub mod localsearch;
pub mod metrics;
pub mod orchestrator;
pub mod session;

pub use evolution::{EraContext, EvoParams, LsSchedule, Population};
pub use genotype::{decode, evaluate, extract_prefix, Individual, Objectives, RealizedPrefix, TourPlan};
pub use instance::{
    generate_instance, load_instance, save_instance, Customer, CustomerKind, GeneratorConfig, Instance,
    InstanceError, Topology,
};
pub use metrics::{hypervolume_2d, non_dominated, rank_sum_test};
pub use orchestrator::{run_clairvoyant, run_demoa, AutoDecision, DecisionMaker, DmPolicy, EraRecord, RunConfig};
