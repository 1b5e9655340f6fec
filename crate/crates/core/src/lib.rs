//! Commonsense scene graphs, link prediction and grid-world object search.
//!
//! The pipeline: a [`scene::Scene`] is turned into a [`csg::Csg`] whose
//! nodes and edges carry hashed text features from [`knowledge`]; the
//! [`model`] scores how likely a queried object sits next to each node; the
//! [`planner`] spreads those scores over the occupancy grid and ranks
//! navigation goals; [`sim`] runs search episodes and reports SR/SPL.
//! [`generator`] produces labelled synthetic scenes for training and tests.

pub mod csg;
pub mod defaults;
pub mod exec;
pub mod generator;
pub mod io;
pub mod knowledge;
pub mod model;
pub mod planner;
pub mod scene;
pub mod sim;

pub use exec::Exec;
