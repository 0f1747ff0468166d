//! Feasibility-guided multi-policy planning over elevation maps.
//!
//! Per-policy feasibility networks score rotated height patches; the
//! resulting directional tensors are max-fused and searched with Dijkstra,
//! and every path edge is assigned the policy that supplied its feasibility.

pub mod evaluator;
pub mod feasnet;
pub mod mapio;
pub mod oracle;
pub mod planner;
pub mod tensorizer;
pub mod terrain;

/// Number of planning directions; channel `k` is heading `k * 45` degrees.
pub const DIRECTIONS: usize = 8;

/// Grid offset `(dx, dy)` of direction channel `k`.
pub const fn direction_offset(k: usize) -> (i64, i64) {
    match k % DIRECTIONS {
        0 => (1, 0),
        1 => (1, 1),
        2 => (0, 1),
        3 => (-1, 1),
        4 => (-1, 0),
        5 => (-1, -1),
        6 => (0, -1),
        _ => (1, -1),
    }
}

/// Direction channel for a unit grid offset, if it is an 8-neighbor move.
pub fn direction_of(dx: i64, dy: i64) -> Option<usize> {
    (0..DIRECTIONS).find(|&k| direction_offset(k) == (dx, dy))
}

/// Metric length of one move in channel `k`.
pub fn step_length(k: usize, resolution: f64) -> f64 {
    if k % 2 == 1 {
        resolution * std::f64::consts::SQRT_2
    } else {
        resolution
    }
}

pub use evaluator::{spl, FailureCause, TrialResult};
pub use feasnet::{FeasNetParams, TrainConfig};
pub use mapio::{load_map, save_map};
pub use oracle::{ArchetypeKind, Capabilities, PolicyArchetype, TaskVector};
pub use planner::{FusedField, Plan, Planner};
pub use tensorizer::{FeasibilityTensor, PolicyBundle};
pub use terrain::{extract_patch, generate, ElevationMap, HeightPatch, TerrainFamily, TerrainParams, TerrainSpec};
