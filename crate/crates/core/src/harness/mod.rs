//! Workload generation, the request pipeline, experiment scenarios and
//! their reports.

mod config;
mod pipeline;
mod report;
mod scenario;
mod workload;

use thiserror::Error;

pub use config::{LinkSection, SimConfig};
pub use pipeline::{run_pipeline, RequestOutcome};
pub use report::{geomean, Aggregate, Criterion, Row, SimReport};
pub use scenario::{run_scenario, ImageService, ImageStep, SCENARIOS};
pub use workload::{
    generate_messages, generate_schema_source, generate_workload, Workload, WorkloadSpec,
    WorkloadStats, SMALL_FIELD_LIMIT,
};

use crate::cu::CuError;
use crate::deser::DeserError;
use crate::field_update::FieldUpdateError;
use crate::layout::LayoutError;
use crate::link::LinkError;
use crate::memory::MemoryError;
use crate::platform::PlatformError;
use crate::ser::SerError;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HarnessError {
    #[error("invalid workload spec: {0}")]
    InvalidSpec(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),
    #[error("i/o: {0}")]
    Io(String),
    #[error("response to request {request} does not decode to the expected message")]
    Closure { request: usize },
    #[error("request {id}: {source}")]
    Request {
        id: usize,
        #[source]
        source: Box<HarnessError>,
    },
    #[error(transparent)]
    Platform(#[from] PlatformError),
    #[error(transparent)]
    Deser(#[from] DeserError),
    #[error(transparent)]
    Ser(#[from] SerError),
    #[error(transparent)]
    Cu(#[from] CuError),
    #[error(transparent)]
    FieldUpdate(#[from] FieldUpdateError),
    #[error(transparent)]
    Layout(#[from] LayoutError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error(transparent)]
    Link(#[from] LinkError),
}

impl HarnessError {
    pub(crate) fn at(self, id: usize) -> HarnessError {
        match self {
            e @ HarnessError::Request { .. } => e,
            e => HarnessError::Request {
                id,
                source: Box::new(e),
            },
        }
    }
}
