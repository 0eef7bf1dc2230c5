//! Deterministic, seedable device-control simulator.
//!
//! Tasks are multi-screen search-and-select flows (home, app, search box, query, results,
//! item, cart, checkout). Screens are 12x20 cell grids rendered at 3x3 pixels per cell; a
//! programmatic evaluator decides success from the logical screen.

mod action;
pub mod agents;
mod env;
pub mod screen;
pub mod task;

pub use action::{Action, ActionKind, NavTarget, N_CELLS, N_KINDS, N_NAV};
pub use agents::{expert_action, on_optimal_path, ActionPolicy, BehaviorConfig, Expert, FlawedExpert, UniformRandom};
pub use env::{
    cell_pixel_distance, evaluate_success, max_pixel_distance, pixel_distance, reset, reset_by_id,
    step, transition, EnvConfig, EnvState, Observation, StepOutcome,
};
pub use screen::{Screen, Widget, GRID_H, GRID_W, N_TOKENS};
pub use task::{default_task_pool, Goal, Split, Task, TaskKind};
