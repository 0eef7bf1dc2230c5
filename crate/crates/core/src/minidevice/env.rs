use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::action::{Action, NavTarget};
use super::screen::{
    overlay_popup, popup_close_cell, popup_rect, render_pixels, Screen, GRID_H, GRID_W,
    N_PIXELS, N_TOKENS, POPUP_TOP_MAX, POPUP_TOP_MIN,
};
use super::task::Task;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    /// Per-step probability that a pop-up appears.
    pub p_popup: f64,
    /// Effect threshold as a fraction of the largest possible pixel distance.
    pub epsilon_frac: f64,
    /// Horizon assigned to generated tasks.
    pub horizon: u32,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            p_popup: 0.1,
            epsilon_frac: 0.005,
            horizon: 10,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p_popup) {
            return Err(Error::Config(format!("p_popup {} outside [0, 1]", self.p_popup)));
        }
        if !(self.epsilon_frac > 0.0 && self.epsilon_frac < 1.0) {
            return Err(Error::Config(format!("epsilon_frac {} outside (0, 1)", self.epsilon_frac)));
        }
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be positive".into()));
        }
        Ok(())
    }

    /// The effect threshold ε in pixel-distance units.
    pub fn epsilon(&self) -> f64 {
        self.epsilon_frac * max_pixel_distance()
    }

    pub fn hash(&self) -> String {
        crate::util::short_hash(&serde_json::to_vec(self).expect("config serializes"))
    }
}

pub fn max_pixel_distance() -> f64 {
    (N_PIXELS as f64).sqrt()
}

/// What the agent sees at one step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub screen: Screen,
    /// Cell codes, row-major, with any pop-up drawn on top.
    #[serde(with = "cells_text")]
    pub cells: Vec<u8>,
    pub popup: Option<u8>,
    pub task_id: u32,
    pub task_text: String,
    pub step: u32,
    /// Step budget of the episode.
    pub horizon: u32,
    /// Action that produced this observation (`None` at reset).
    pub prev_action: Option<Action>,
}

impl Observation {
    pub fn pixels(&self) -> Vec<f64> {
        render_pixels(&self.cells)
    }

    pub fn cell(&self, x: usize, y: usize) -> u8 {
        self.cells[y * GRID_W + x]
    }
}

mod cells_text {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(cells: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&cells.iter().map(|&c| (b'a' + c) as char).collect::<String>())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        s.bytes()
            .map(|b| {
                b.checked_sub(b'a')
                    .filter(|c| *c < super::super::screen::NUM_CODES)
                    .ok_or_else(|| serde::de::Error::custom("invalid cell code"))
            })
            .collect()
    }
}

/// Full simulator state; determined by `(task, seed, action history)`.
#[derive(Debug, Clone)]
pub struct EnvState {
    task: Task,
    config: EnvConfig,
    screen: Screen,
    popup: Option<u8>,
    rng: ChaCha8Rng,
    step: u32,
    done: bool,
    prev_action: Option<Action>,
}

impl EnvState {
    pub fn task(&self) -> &Task {
        &self.task
    }

    pub fn screen(&self) -> Screen {
        self.screen
    }

    pub fn popup(&self) -> Option<u8> {
        self.popup
    }

    pub fn step_index(&self) -> u32 {
        self.step
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn observe(&self) -> Observation {
        let mut cells = self.screen.render_cells();
        if let Some(top) = self.popup {
            overlay_popup(&mut cells, top);
        }
        Observation {
            screen: self.screen,
            cells,
            popup: self.popup,
            task_id: self.task.id,
            task_text: self.task.instruction.clone(),
            step: self.step,
            horizon: self.task.horizon,
            prev_action: self.prev_action,
        }
    }

    /// Two draws per call keep the RNG stream aligned regardless of the outcome.
    fn maybe_popup(&mut self) {
        let u: f64 = self.rng.gen();
        let top = self.rng.gen_range(POPUP_TOP_MIN..=POPUP_TOP_MAX);
        if self.popup.is_none() && u < self.config.p_popup {
            self.popup = Some(top);
        }
    }

    fn apply(&mut self, action: Action) {
        (self.screen, self.popup) = transition(self.screen, self.popup, action);
    }
}

/// Deterministic effect of `action` on the screen and pop-up; distractor dynamics excluded.
pub fn transition(screen: Screen, popup: Option<u8>, action: Action) -> (Screen, Option<u8>) {
    match action {
        Action::Navigate {
            target: NavTarget::Home,
        } => (Screen::Home, popup),
        Action::Navigate {
            target: NavTarget::Back,
        } => (screen.parent(), popup),
        Action::Type { token } => match screen {
            Screen::Focused { app } if (token as usize) < N_TOKENS => (
                Screen::Results {
                    app,
                    token,
                    page: 0,
                },
                popup,
            ),
            _ => (screen, popup),
        },
        Action::Click { x, y } => {
            let (x, y) = (x as usize, y as usize);
            if let Some(top) = popup {
                if (x, y) == popup_close_cell(top) {
                    return (screen, None);
                }
                if popup_rect(top).contains(x, y) {
                    return (screen, popup);
                }
            }
            let next = screen.hit_test(x, y).and_then(|w| screen.click(w)).unwrap_or(screen);
            (next, popup)
        }
    }
}

pub fn reset(task: &Task, config: &EnvConfig, seed: u64) -> Result<(EnvState, Observation)> {
    task.validate()?;
    config.validate()?;
    let mut state = EnvState {
        task: task.clone(),
        config: *config,
        screen: Screen::Home,
        popup: None,
        rng: ChaCha8Rng::seed_from_u64(seed),
        step: 0,
        done: false,
        prev_action: None,
    };
    state.maybe_popup();
    let obs = state.observe();
    Ok((state, obs))
}

/// Looks up `task_id` in `tasks` and resets.
pub fn reset_by_id(
    tasks: &[Task],
    task_id: u32,
    config: &EnvConfig,
    seed: u64,
) -> Result<(EnvState, Observation)> {
    let task = tasks
        .iter()
        .find(|t| t.id == task_id)
        .ok_or(Error::UnknownTask(task_id))?;
    reset(task, config, seed)
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub obs: Observation,
    pub reward: u8,
    pub done: bool,
}

/// Advances one step. Actions on absent widgets leave the screen unchanged; only the
/// distractor dynamics move.
pub fn step(state: &mut EnvState, action: Action) -> Result<StepOutcome> {
    if state.done {
        return Err(Error::Contract("step called on a finished episode".into()));
    }
    action.validate(N_TOKENS)?;
    let was_goal = state.task.goal.holds(&state.screen);
    state.apply(action);
    state.step += 1;
    state.prev_action = Some(action);
    let goal = state.task.goal.holds(&state.screen);
    let reward = u8::from(goal && !was_goal);
    state.done = goal || state.step >= state.task.horizon;
    if !state.done {
        state.maybe_popup();
    }
    Ok(StepOutcome {
        obs: state.observe(),
        reward,
        done: state.done,
    })
}

/// Programmatic success verdict.
pub fn evaluate_success(obs: &Observation, task: &Task) -> u8 {
    u8::from(task.goal.holds(&obs.screen))
}

/// Euclidean distance between rendered pixel grids.
pub fn pixel_distance(a: &Observation, b: &Observation) -> Result<f64> {
    if a.cells.len() != b.cells.len() || a.cells.len() != GRID_W * GRID_H {
        return Err(Error::Shape(format!(
            "pixel grids of {} and {} cells",
            a.cells.len(),
            b.cells.len()
        )));
    }
    Ok(cell_pixel_distance(&a.cells, &b.cells))
}

/// Pixel distance computed from cell grids: every cell covers the same number of pixels.
pub fn cell_pixel_distance(a: &[u8], b: &[u8]) -> f64 {
    let per_cell = (super::screen::CELL_PX * super::screen::CELL_PX) as f64;
    let sq: f64 = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = super::screen::intensity(x) - super::screen::intensity(y);
            d * d
        })
        .sum();
    (sq * per_cell).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::minidevice::screen::{intensity, Widget, CELL_PX};
    use crate::minidevice::task::{default_task_pool, TaskKind};

    fn calm() -> EnvConfig {
        EnvConfig {
            p_popup: 0.0,
            ..EnvConfig::default()
        }
    }

    fn click(w: Widget) -> Action {
        let (x, y) = w.center();
        Action::click(x, y)
    }

    #[test]
    fn reset_is_deterministic() {
        let task = &default_task_pool(10)[0];
        let cfg = EnvConfig::default();
        assert_eq!(reset(task, &cfg, 7).unwrap().1, reset(task, &cfg, 7).unwrap().1);
    }

    #[test]
    fn no_popups_means_seed_independent() {
        let task = &default_task_pool(10)[0];
        let a = reset(task, &calm(), 1).unwrap().1;
        for seed in 2..20 {
            assert_eq!(reset(task, &calm(), seed).unwrap().1, a);
        }
    }

    #[test]
    fn seeds_differ_only_in_distractors() {
        let task = &default_task_pool(10)[0];
        let cfg = EnvConfig {
            p_popup: 0.5,
            ..EnvConfig::default()
        };
        let base = Screen::Home.render_cells();
        let mut saw_popup = false;
        for seed in 0..64 {
            let obs = reset(task, &cfg, seed).unwrap().1;
            assert_eq!(obs.screen, Screen::Home);
            match obs.popup {
                None => assert_eq!(obs.cells, base),
                Some(top) => {
                    saw_popup = true;
                    let r = popup_rect(top);
                    for y in 0..GRID_H {
                        for x in 0..GRID_W {
                            if !r.contains(x, y) {
                                assert_eq!(obs.cell(x, y), base[y * GRID_W + x]);
                            }
                        }
                    }
                }
            }
        }
        assert!(saw_popup);
    }

    #[test]
    fn goal_action_rewards_once_and_ends() {
        let task = crate::minidevice::task::Task::new(0, TaskKind::Search, 2, 1, 0, 10);
        let (mut s, obs) = reset(&task, &calm(), 0).unwrap();
        assert_eq!(evaluate_success(&obs, &task), 0);
        let o = step(&mut s, click(Widget::AppIcon(2))).unwrap();
        assert_eq!((o.reward, o.done), (0, false));
        let o = step(&mut s, click(Widget::SearchBox)).unwrap();
        assert_eq!((o.reward, o.done), (0, false));
        let o = step(&mut s, Action::Type { token: 1 }).unwrap();
        assert_eq!((o.reward, o.done), (1, true));
        assert_eq!(evaluate_success(&o.obs, &task), 1);
        assert!(step(&mut s, Action::Type { token: 1 }).is_err());
    }

    #[test]
    fn empty_click_is_pixel_identical_noop() {
        let task = &default_task_pool(10)[0];
        let (mut s, obs) = reset(task, &calm(), 0).unwrap();
        let o = step(&mut s, Action::click(0, 15)).unwrap();
        assert_eq!(o.reward, 0);
        assert_eq!(pixel_distance(&obs, &o.obs).unwrap(), 0.0);
    }

    #[test]
    fn exhausting_horizon_ends_without_reward() {
        let task = &default_task_pool(10)[1];
        let (mut s, _) = reset(task, &calm(), 0).unwrap();
        let mut total = 0;
        let mut done = false;
        for _ in 0..task.horizon {
            let o = step(&mut s, Action::click(0, 15)).unwrap();
            total += o.reward;
            done = o.done;
        }
        assert!(done);
        assert_eq!(total, 0);
    }

    #[test]
    fn popup_blocks_until_dismissed() {
        let task = &default_task_pool(10)[0];
        let cfg = EnvConfig {
            p_popup: 1.0,
            ..EnvConfig::default()
        };
        let (mut s, obs) = reset(task, &cfg, 3).unwrap();
        let top = obs.popup.expect("popup at p = 1");
        let inside = popup_rect(top);
        let o = step(&mut s, Action::click(inside.x0, inside.y1)).unwrap();
        assert_eq!(o.obs.screen, Screen::Home);
        assert_eq!(o.obs.popup, Some(top));
        let (x, y) = popup_close_cell(top);
        let o = step(&mut s, Action::click(x, y)).unwrap();
        // Dismissed, though at p = 1 a fresh one is drawn right away.
        assert_eq!(o.obs.screen, Screen::Home);
        assert!(o.obs.popup.is_some());
    }

    #[test]
    fn one_cell_change_distance() {
        let a = Screen::Home.render_cells();
        let mut b = a.clone();
        let idx = 15 * GRID_W;
        b[idx] = 7;
        let expected = (intensity(7) - intensity(a[idx])).abs() * (CELL_PX as f64);
        assert!((cell_pixel_distance(&a, &b) - expected).abs() < 1e-12);
    }
}
