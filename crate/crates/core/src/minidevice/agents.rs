//! Scripted agents: the optimal expert, a flawed behavior policy with systematic mistakes,
//! and uniform random players.

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::action::{Action, ActionKind, NavTarget, N_CELLS, N_NAV};
use super::env::{transition, Observation};
use super::screen::{popup_close_cell, Screen, Widget, ITEMS_PER_PAGE, N_APPS, N_TOKENS};
use super::task::{Task, TaskKind};

/// Anything that picks actions in the simulator.
pub trait ActionPolicy: Sync {
    fn sample(&self, obs: &Observation, task: &Task, rng: &mut dyn RngCore) -> Action;

    /// The most likely action.
    fn greedy(&self, obs: &Observation, task: &Task) -> Action;

    fn id(&self) -> String;
}

fn click(w: Widget) -> Action {
    let (x, y) = w.center();
    Action::click(x, y)
}

fn dismiss(top: u8) -> Action {
    let (x, y) = popup_close_cell(top);
    Action::click(x, y)
}

const BACK: Action = Action::Navigate {
    target: NavTarget::Back,
};
const HOME: Action = Action::Navigate {
    target: NavTarget::Home,
};

/// The shortest-path action for `task` from the observed screen.
pub fn expert_action(obs: &Observation, task: &Task) -> Action {
    if let Some(top) = obs.popup {
        return dismiss(top);
    }
    let (k, q) = (task.app(), task.token());
    let item = task.item();
    let target = (k, q, item.unwrap_or(0));
    match obs.screen {
        Screen::Home => click(Widget::AppIcon(k)),
        Screen::App { app } if app != k => HOME,
        Screen::App { .. } => click(Widget::SearchBox),
        Screen::Focused { app } if app != k => HOME,
        Screen::Focused { .. } => Action::Type { token: q },
        Screen::Results { app, .. } if app != k => HOME,
        Screen::Results { token, .. } if token != q => click(Widget::SearchBox),
        Screen::Results { page, .. } => match item {
            // Only reachable on page 1 for search tasks: go back to the goal page.
            None => BACK,
            Some(j) => {
                let target_page = j / ITEMS_PER_PAGE as u8;
                if page < target_page {
                    click(Widget::More)
                } else if page > target_page {
                    BACK
                } else {
                    click(Widget::ResultRow(j % ITEMS_PER_PAGE as u8))
                }
            }
        },
        Screen::Ad { .. } => BACK,
        Screen::Item { app, token, item: i } => {
            if (app, token, i) == target && matches!(task.kind(), TaskKind::Cart | TaskKind::Buy) {
                click(Widget::AddToCart)
            } else if app == k {
                BACK
            } else {
                HOME
            }
        }
        Screen::Cart { app, token, item: i } => {
            if (app, token, i) == target && task.kind() == TaskKind::Buy {
                click(Widget::Checkout)
            } else {
                BACK
            }
        }
        Screen::Order { .. } => HOME,
    }
}

/// Whether `a` has the same deterministic effect as the shortest-path action; clicks
/// anywhere on the expert's widget count.
pub fn on_optimal_path(obs: &Observation, task: &Task, a: Action) -> bool {
    let expert = expert_action(obs, task);
    a == expert || transition(obs.screen, obs.popup, a) == transition(obs.screen, obs.popup, expert)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Expert;

impl ActionPolicy for Expert {
    fn sample(&self, obs: &Observation, task: &Task, _rng: &mut dyn RngCore) -> Action {
        expert_action(obs, task)
    }

    fn greedy(&self, obs: &Observation, task: &Task) -> Action {
        expert_action(obs, task)
    }

    fn id(&self) -> String {
        "expert".into()
    }
}

/// Uniform over the factored action space: kind, then cell / token / target.
pub fn factored_uniform(rng: &mut dyn RngCore) -> Action {
    let kind = ActionKind::ALL[rng.gen_range(0..ActionKind::ALL.len())];
    let n = match kind {
        ActionKind::Click => N_CELLS,
        ActionKind::Type => N_TOKENS,
        ActionKind::Navigate => N_NAV,
    };
    Action::from_parts(kind, rng.gen_range(0..n))
}

/// Mistake rates of the data-collection policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BehaviorConfig {
    /// Probability of a uniformly random factored action.
    pub noise: f64,
    /// Probability of closing a visible pop-up (otherwise random).
    pub popup_dismiss: f64,
    /// Opens a neighbouring app from the home screen.
    pub wrong_app: f64,
    /// Types a neighbouring query token.
    pub wrong_token: f64,
    /// Clicks the sponsored row on the page that holds the target result.
    pub ad_click: f64,
    /// Opens the same-slot result on page one when the target is on page two.
    pub skip_more: f64,
    /// Backs out of the target item page instead of adding it to the cart.
    pub cart_back: f64,
}

impl Default for BehaviorConfig {
    fn default() -> Self {
        Self {
            noise: 0.15,
            popup_dismiss: 0.6,
            wrong_app: 0.2,
            wrong_token: 0.3,
            ad_click: 0.6,
            skip_more: 0.4,
            cart_back: 0.25,
        }
    }
}

impl BehaviorConfig {
    pub fn validate(&self) -> crate::Result<()> {
        let all = [
            self.noise,
            self.popup_dismiss,
            self.wrong_app,
            self.wrong_token,
            self.ad_click,
            self.skip_more,
            self.cart_back,
        ];
        if all.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(crate::Error::Config("behavior probabilities must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// A competent but systematically mistaken agent, standing in for a pre-trained
/// device-control checkpoint.
#[derive(Debug, Clone, Copy, Default)]
pub struct FlawedExpert {
    pub config: BehaviorConfig,
}

impl FlawedExpert {
    pub fn new(config: BehaviorConfig) -> Self {
        Self { config }
    }

    /// The systematic mistake available at this observation and its probability.
    fn mistake(&self, obs: &Observation, task: &Task) -> Option<(Action, f64)> {
        let c = &self.config;
        let (k, q) = (task.app(), task.token());
        match obs.screen {
            Screen::Home => Some((click(Widget::AppIcon((k + 1) % N_APPS as u8)), c.wrong_app)),
            Screen::Focused { app } if app == k => Some((
                Action::Type {
                    token: (q + 1) % N_TOKENS as u8,
                },
                c.wrong_token,
            )),
            Screen::Results { app, token, page } if app == k && token == q => {
                let j = task.item()?;
                let target_page = j / ITEMS_PER_PAGE as u8;
                if page == target_page {
                    Some((click(Widget::AdRow), c.ad_click))
                } else if page < target_page {
                    Some((click(Widget::ResultRow(j % ITEMS_PER_PAGE as u8)), c.skip_more))
                } else {
                    None
                }
            }
            Screen::Item { app, token, item }
                if (app, token, Some(item)) == (k, q, task.item())
                    && matches!(task.kind(), TaskKind::Cart | TaskKind::Buy) =>
            {
                Some((BACK, c.cart_back))
            }
            _ => None,
        }
    }
}

impl ActionPolicy for FlawedExpert {
    fn sample(&self, obs: &Observation, task: &Task, rng: &mut dyn RngCore) -> Action {
        if let Some(top) = obs.popup {
            return if rng.gen::<f64>() < self.config.popup_dismiss {
                dismiss(top)
            } else {
                factored_uniform(rng)
            };
        }
        let u: f64 = rng.gen();
        if u < self.config.noise {
            return factored_uniform(rng);
        }
        let v: f64 = rng.gen();
        match self.mistake(obs, task) {
            Some((a, p)) if v < p => a,
            _ => expert_action(obs, task),
        }
    }

    fn greedy(&self, obs: &Observation, task: &Task) -> Action {
        if let Some(top) = obs.popup {
            if self.config.popup_dismiss >= 0.5 {
                return dismiss(top);
            }
        }
        match self.mistake(obs, task) {
            Some((a, p)) if p > 0.5 => a,
            _ => expert_action(obs, task),
        }
    }

    fn id(&self) -> String {
        let c = &self.config;
        format!(
            "flawed-expert(noise={},popup={},app={},token={},ad={},more={},cart={})",
            c.noise, c.popup_dismiss, c.wrong_app, c.wrong_token, c.ad_click, c.skip_more, c.cart_back
        )
    }
}

/// Uniform over the on-screen affordances: every visible widget, every token, both
/// navigation targets.
#[derive(Debug, Clone, Copy, Default)]
pub struct UniformRandom;

impl UniformRandom {
    pub fn affordances(obs: &Observation) -> Vec<Action> {
        let mut out: Vec<Action> = obs.screen.widgets().into_iter().map(click).collect();
        if let Some(top) = obs.popup {
            out.push(dismiss(top));
        }
        out.extend((0..N_TOKENS as u8).map(|token| Action::Type { token }));
        out.extend(NavTarget::ALL.iter().map(|&target| Action::Navigate { target }));
        out
    }
}

impl ActionPolicy for UniformRandom {
    fn sample(&self, obs: &Observation, _task: &Task, rng: &mut dyn RngCore) -> Action {
        let choices = Self::affordances(obs);
        choices[rng.gen_range(0..choices.len())]
    }

    fn greedy(&self, obs: &Observation, _task: &Task) -> Action {
        Self::affordances(obs)[0]
    }

    fn id(&self) -> String {
        "uniform-random".into()
    }
}
