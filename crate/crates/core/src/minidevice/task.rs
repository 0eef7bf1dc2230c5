use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::screen::{Screen, ITEMS_PER_PAGE, N_APPS, N_ITEMS, N_TOKENS};
use crate::error::{Error, Result};

pub const APP_NAMES: [&str; N_APPS] = ["shopper", "bazaar", "outlet", "depot"];
pub const TOKEN_NAMES: [&str; N_TOKENS] = ["shoes", "phone", "lamp", "book", "watch", "chair"];
pub const ORDINALS: [&str; N_ITEMS] = ["first", "second", "third", "fourth", "fifth", "sixth"];
pub const VERBS: [&str; 4] = ["search", "open", "cart", "buy"];

/// Dimension of the bag-of-words instruction encoding.
pub const TASK_EMBED_DIM: usize = N_APPS + N_TOKENS + N_ITEMS + VERBS.len();

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    /// Results page for the query visible.
    Search,
    /// Detail page of the chosen result visible.
    Open,
    /// Chosen result added to the cart.
    Cart,
    /// Chosen result ordered.
    Buy,
}

/// Declarative goal over the logical screen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "visible", rename_all = "snake_case")]
pub enum Goal {
    Results { app: u8, token: u8 },
    Item { app: u8, token: u8, item: u8 },
    Cart { app: u8, token: u8, item: u8 },
    Order { app: u8, token: u8, item: u8 },
}

impl Goal {
    pub fn holds(&self, screen: &Screen) -> bool {
        match (*self, *screen) {
            (Goal::Results { app, token }, Screen::Results { app: a, token: t, page: 0 }) => {
                app == a && token == t
            }
            (Goal::Item { app, token, item }, Screen::Item { app: a, token: t, item: i })
            | (Goal::Cart { app, token, item }, Screen::Cart { app: a, token: t, item: i })
            | (Goal::Order { app, token, item }, Screen::Order { app: a, token: t, item: i }) => {
                (app, token, item) == (a, t, i)
            }
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub id: u32,
    pub instruction: String,
    pub goal: Goal,
    pub horizon: u32,
    #[serde(default)]
    pub split: Split,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    #[default]
    Train,
    Test,
}

impl Task {
    pub fn new(id: u32, kind: TaskKind, app: u8, token: u8, item: u8, horizon: u32) -> Self {
        let goal = match kind {
            TaskKind::Search => Goal::Results { app, token },
            TaskKind::Open => Goal::Item { app, token, item },
            TaskKind::Cart => Goal::Cart { app, token, item },
            TaskKind::Buy => Goal::Order { app, token, item },
        };
        Self {
            id,
            instruction: instruction_for(kind, app, token, item),
            goal,
            horizon,
            split: Split::Train,
        }
    }

    pub fn kind(&self) -> TaskKind {
        match self.goal {
            Goal::Results { .. } => TaskKind::Search,
            Goal::Item { .. } => TaskKind::Open,
            Goal::Cart { .. } => TaskKind::Cart,
            Goal::Order { .. } => TaskKind::Buy,
        }
    }

    pub fn app(&self) -> u8 {
        match self.goal {
            Goal::Results { app, .. }
            | Goal::Item { app, .. }
            | Goal::Cart { app, .. }
            | Goal::Order { app, .. } => app,
        }
    }

    pub fn token(&self) -> u8 {
        match self.goal {
            Goal::Results { token, .. }
            | Goal::Item { token, .. }
            | Goal::Cart { token, .. }
            | Goal::Order { token, .. } => token,
        }
    }

    pub fn item(&self) -> Option<u8> {
        match self.goal {
            Goal::Results { .. } => None,
            Goal::Item { item, .. } | Goal::Cart { item, .. } | Goal::Order { item, .. } => Some(item),
        }
    }

    /// Steps an optimal agent needs without distractors.
    pub fn min_steps(&self) -> u32 {
        let base = match self.kind() {
            TaskKind::Search => 3,
            TaskKind::Open => 4,
            TaskKind::Cart => 5,
            TaskKind::Buy => 6,
        };
        let page = self.item().map_or(0, |i| (i as usize / ITEMS_PER_PAGE) as u32);
        base + page
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::Config(format!("task {} has zero horizon", self.id)));
        }
        if self.app() as usize >= N_APPS || self.token() as usize >= N_TOKENS {
            return Err(Error::Config(format!("task {} references unknown app/token", self.id)));
        }
        if self.item().is_some_and(|i| i as usize >= N_ITEMS) {
            return Err(Error::Config(format!("task {} references unknown result", self.id)));
        }
        if self.min_steps() > self.horizon {
            return Err(Error::Config(format!(
                "task {} needs {} steps but has horizon {}",
                self.id,
                self.min_steps(),
                self.horizon
            )));
        }
        Ok(())
    }
}

fn instruction_for(kind: TaskKind, app: u8, token: u8, item: u8) -> String {
    let app = APP_NAMES[app as usize];
    let token = TOKEN_NAMES[token as usize];
    let ord = ORDINALS[item as usize];
    match kind {
        TaskKind::Search => format!("Open {app} and search for {token}"),
        TaskKind::Open => format!("Open {app}, search for {token} and open the {ord} result"),
        TaskKind::Cart => {
            format!("Open {app}, search for {token} and add the {ord} result to the cart")
        }
        TaskKind::Buy => format!("Open {app}, search for {token} and buy the {ord} result"),
    }
}

/// Bag-of-words encoding of an instruction over the simulator vocabulary.
pub fn embed_instruction(text: &str) -> [f64; TASK_EMBED_DIM] {
    let mut v = [0.0; TASK_EMBED_DIM];
    let mut open_seen = false;
    for word in text
        .split(|c: char| !c.is_ascii_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_ascii_lowercase)
    {
        if let Some(i) = APP_NAMES.iter().position(|w| *w == word) {
            v[i] = 1.0;
        } else if let Some(i) = TOKEN_NAMES.iter().position(|w| *w == word) {
            v[N_APPS + i] = 1.0;
        } else if let Some(i) = ORDINALS.iter().position(|w| *w == word) {
            v[N_APPS + N_TOKENS + i] = 1.0;
        } else if word == "open" {
            // The leading "Open <app>" is shared by every instruction; only a second
            // "open" names the result-opening step.
            if open_seen {
                v[N_APPS + N_TOKENS + N_ITEMS + 1] = 1.0;
            }
            open_seen = true;
        } else if let Some(i) = VERBS.iter().position(|w| *w == word) {
            v[N_APPS + N_TOKENS + N_ITEMS + i] = 1.0;
        }
    }
    v
}

/// The standard task pool: every task kind across apps, queries and result positions.
/// Tasks whose `(app, token)` pair falls on the held-out diagonal form the test split.
pub fn default_task_pool(horizon: u32) -> Vec<Task> {
    let mut tasks = Vec::new();
    let kinds = [TaskKind::Search, TaskKind::Open, TaskKind::Cart, TaskKind::Buy];
    let mut id = 0;
    for app in 0..N_APPS as u8 {
        for (ki, kind) in kinds.iter().enumerate() {
            let token = ((app as usize * 2 + ki) % N_TOKENS) as u8;
            let item = ((app as usize + 2 * ki) % N_ITEMS) as u8;
            let mut t = Task::new(id, *kind, app, token, item, horizon);
            if t.min_steps() > horizon {
                t = Task::new(id, *kind, app, token, item % ITEMS_PER_PAGE as u8, horizon);
            }
            t.split = if (app as usize + ki) % 4 == 3 { Split::Test } else { Split::Train };
            tasks.push(t);
            id += 1;
        }
    }
    tasks
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RegistryFile {
    tasks: Vec<Task>,
}

/// Task registry in TOML: a `[[tasks]]` array of tables.
pub fn save_registry(tasks: &[Task], path: &Path) -> Result<()> {
    let text = toml::to_string(&RegistryFile {
        tasks: tasks.to_vec(),
    })
    .map_err(|e| Error::Invalid(e.to_string()))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_registry(path: &Path) -> Result<Vec<Task>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: RegistryFile = toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
    for t in &file.tasks {
        t.validate()?;
    }
    Ok(file.tasks)
}
