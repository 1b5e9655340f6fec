use std::fmt;

use csg_core::csg::CsgError;
use csg_core::generator::GeneratorError;
use csg_core::knowledge::KnowledgeError;
use csg_core::model::ModelError;
use csg_core::planner::PlannerError;
use csg_core::scene::SceneError;
use csg_core::sim::SimError;

/// Process exit status, grouped by who has to fix the problem.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Exit {
    /// Bad flags or an inconsistent configuration.
    Usage = 2,
    /// Unreadable or corrupt input files, checkpoints included.
    Data = 3,
    /// Anything that went wrong while doing the work.
    Runtime = 4,
}

#[derive(Debug)]
pub struct CliError {
    pub exit: Exit,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            exit: Exit::Usage,
            message: message.into(),
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self {
            exit: Exit::Data,
            message: message.into(),
        }
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        Self {
            exit: Exit::Runtime,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

pub type CliResult<T> = Result<T, CliError>;

fn classify_scene(e: &SceneError) -> Exit {
    match e {
        SceneError::Resolution { .. } => Exit::Usage,
        _ => Exit::Data,
    }
}

fn classify_knowledge(e: &KnowledgeError) -> Exit {
    match e {
        KnowledgeError::NoCategoryFound(_) | KnowledgeError::EmptyInput(_) => Exit::Usage,
        KnowledgeError::Lexicon(_) => Exit::Data,
        KnowledgeError::BackendUnavailable(_) | KnowledgeError::Cache { .. } => Exit::Runtime,
    }
}

fn classify_csg(e: &CsgError) -> Exit {
    match e {
        CsgError::Knowledge(k) => classify_knowledge(k),
        CsgError::UnknownTarget(_) | CsgError::NotMovable(_) | CsgError::InvalidThreshold(_) => Exit::Usage,
        CsgError::Empty => Exit::Data,
    }
}

fn classify_model(e: &ModelError) -> Exit {
    match e {
        ModelError::Checkpoint(_) | ModelError::Io { .. } | ModelError::EmptyCorpus => Exit::Data,
        ModelError::Config(_) => Exit::Usage,
        ModelError::Csg(c) => classify_csg(c),
        _ => Exit::Runtime,
    }
}

fn classify_planner(e: &PlannerError) -> Exit {
    match e {
        PlannerError::Config(_) => Exit::Usage,
        _ => Exit::Runtime,
    }
}

macro_rules! from_core {
    ($ty:ty, $classify:expr) => {
        impl From<$ty> for CliError {
            fn from(e: $ty) -> Self {
                Self {
                    exit: $classify(&e),
                    message: e.to_string(),
                }
            }
        }
    };
}

from_core!(SceneError, classify_scene);
from_core!(KnowledgeError, classify_knowledge);
from_core!(CsgError, classify_csg);
from_core!(ModelError, classify_model);
from_core!(PlannerError, classify_planner);
from_core!(GeneratorError, |e: &GeneratorError| match e {
    GeneratorError::Config(_) | GeneratorError::PlacementExhausted { .. } => Exit::Usage,
    GeneratorError::Scene(s) => classify_scene(s),
    GeneratorError::Io { .. } => Exit::Runtime,
});
from_core!(SimError, |e: &SimError| match e {
    SimError::Scene(s) => classify_scene(s),
    SimError::Csg(c) => classify_csg(c),
    SimError::Model(m) => classify_model(m),
    SimError::Planner(p) => classify_planner(p),
    SimError::UnknownTarget(_) | SimError::BlockedStart { .. } | SimError::Config(_) => Exit::Usage,
    SimError::EmptyResults => Exit::Runtime,
});
