//! Default hyperparameters.
//!
//! Values marked "published" are the settings reported for the original
//! method; everything else is a local choice.

/// Edge distance threshold in meters (published).
pub const D_THRE: f64 = 1.0;
/// Link probability threshold (published).
pub const LINK_THRESHOLD: f64 = 0.5;
/// Graphs per minibatch (published).
pub const BATCH_GRAPHS: usize = 32;
/// MoveAhead distance in meters (published).
pub const STEP_METERS: f64 = 0.25;
/// Rotation increment in degrees (published).
pub const TURN_DEGREES: f64 = 45.0;
/// Success radius in meters (published).
pub const SUCCESS_RADIUS: f64 = 1.0;

/// Planner weights for single-room scenes (published).
pub const SINGLE_ROOM: PlannerPreset = PlannerPreset { w: 0.05, alpha: 0.4, beta: 0.6 };
/// Planner weights for multi-room scenes (published).
pub const MULTI_ROOM: PlannerPreset = PlannerPreset { w: 0.05, alpha: 0.6, beta: 0.4 };
/// Planner weights used for the real-robot runs (published).
pub const REAL_WORLD: PlannerPreset = PlannerPreset { w: 0.1, alpha: 0.5, beta: 0.5 };

/// Likelihood spread radius in meters.
pub const SPREAD_RADIUS: f64 = 1.0;
/// Grid resolution in meters per cell; equals [`STEP_METERS`].
pub const GRID_RESOLUTION: f64 = 0.25;
pub const D_FEAT: usize = 64;
pub const D_HID: usize = 64;
pub const D_K: usize = 32;
pub const D_MLP: usize = 64;
pub const LEARNING_RATE: f64 = 1e-3;
pub const EPOCHS: usize = 50;
pub const MAX_STEPS: usize = 250;
pub const FOV_DEGREES: f64 = 90.0;
pub const DETECT_RANGE: f64 = 3.0;
pub const SEED: u64 = 7;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlannerPreset {
    pub w: f64,
    pub alpha: f64,
    pub beta: f64,
}
