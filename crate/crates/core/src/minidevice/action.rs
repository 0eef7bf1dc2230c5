use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::screen::{GRID_H, GRID_W};
use crate::error::{Error, Result};

pub const N_KINDS: usize = 3;
pub const N_CELLS: usize = GRID_W * GRID_H;
pub const N_NAV: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NavTarget {
    Home,
    Back,
}

impl NavTarget {
    pub const ALL: [NavTarget; N_NAV] = [NavTarget::Home, NavTarget::Back];

    pub fn index(self) -> usize {
        match self {
            NavTarget::Home => 0,
            NavTarget::Back => 1,
        }
    }

    fn name(self) -> &'static str {
        match self {
            NavTarget::Home => "home",
            NavTarget::Back => "back",
        }
    }
}

/// A device primitive. Click coordinates are grid cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Action {
    Click { x: u8, y: u8 },
    Type { token: u8 },
    Navigate { target: NavTarget },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ActionKind {
    Click,
    Type,
    Navigate,
}

impl ActionKind {
    pub const ALL: [ActionKind; N_KINDS] = [ActionKind::Click, ActionKind::Type, ActionKind::Navigate];

    pub fn index(self) -> usize {
        match self {
            ActionKind::Click => 0,
            ActionKind::Type => 1,
            ActionKind::Navigate => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }
}

impl Action {
    pub fn click(x: usize, y: usize) -> Self {
        Action::Click {
            x: x as u8,
            y: y as u8,
        }
    }

    pub fn kind(&self) -> ActionKind {
        match self {
            Action::Click { .. } => ActionKind::Click,
            Action::Type { .. } => ActionKind::Type,
            Action::Navigate { .. } => ActionKind::Navigate,
        }
    }

    /// Index of the kind-specific component (cell, token or navigation target).
    pub fn component(&self) -> usize {
        match *self {
            Action::Click { x, y } => y as usize * GRID_W + x as usize,
            Action::Type { token } => token as usize,
            Action::Navigate { target } => target.index(),
        }
    }

    pub fn from_parts(kind: ActionKind, component: usize) -> Self {
        match kind {
            ActionKind::Click => Action::click(component % GRID_W, component / GRID_W),
            ActionKind::Type => Action::Type {
                token: component as u8,
            },
            ActionKind::Navigate => Action::Navigate {
                target: NavTarget::ALL[component],
            },
        }
    }

    pub fn validate(&self, n_tokens: usize) -> Result<()> {
        match *self {
            Action::Click { x, y } if (x as usize) >= GRID_W || (y as usize) >= GRID_H => {
                Err(Error::Invalid(format!("click ({x}, {y}) outside the {GRID_W}x{GRID_H} grid")))
            }
            Action::Type { token } if token as usize >= n_tokens => {
                Err(Error::Invalid(format!("token {token} outside vocabulary of {n_tokens}")))
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::Click { x, y } => write!(f, "click ({x}, {y})"),
            Action::Type { token } => write!(f, "type {token}"),
            Action::Navigate { target } => write!(f, "navigate {}", target.name()),
        }
    }
}

impl FromStr for Action {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Invalid(format!("malformed action `{s}`"));
        let s = s.trim();
        if let Some(rest) = s.strip_prefix("click") {
            let inner = rest
                .trim()
                .strip_prefix('(')
                .and_then(|r| r.strip_suffix(')'))
                .ok_or_else(bad)?;
            let mut it = inner.split(',').map(|p| p.trim().parse::<u8>());
            match (it.next(), it.next(), it.next()) {
                (Some(Ok(x)), Some(Ok(y)), None) => Ok(Action::Click { x, y }),
                _ => Err(bad()),
            }
        } else if let Some(rest) = s.strip_prefix("type ") {
            let token = rest.trim().parse::<u8>().map_err(|_| bad())?;
            Ok(Action::Type { token })
        } else if let Some(rest) = s.strip_prefix("navigate ") {
            match rest.trim() {
                "home" => Ok(Action::Navigate {
                    target: NavTarget::Home,
                }),
                "back" => Ok(Action::Navigate {
                    target: NavTarget::Back,
                }),
                _ => Err(bad()),
            }
        } else {
            Err(bad())
        }
    }
}

impl Serialize for Action {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Action {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn any_action() -> impl Strategy<Value = Action> {
        prop_oneof![
            (0u8..GRID_W as u8, 0u8..GRID_H as u8).prop_map(|(x, y)| Action::Click { x, y }),
            (0u8..6).prop_map(|token| Action::Type { token }),
            prop_oneof![Just(NavTarget::Home), Just(NavTarget::Back)]
                .prop_map(|target| Action::Navigate { target }),
        ]
    }

    proptest! {
        #[test]
        fn text_form_round_trips(a in any_action()) {
            let text = a.to_string();
            prop_assert_eq!(text.parse::<Action>().unwrap(), a);
            prop_assert_eq!(Action::from_parts(a.kind(), a.component()), a);
        }
    }

    #[test]
    fn text_forms() {
        assert_eq!(Action::click(8, 2).to_string(), "click (8, 2)");
        assert_eq!("navigate back".parse::<Action>().unwrap(), Action::Navigate { target: NavTarget::Back });
        assert!("click (1)".parse::<Action>().is_err());
        assert!("swipe up".parse::<Action>().is_err());
    }

    #[test]
    fn out_of_grid_click_rejected() {
        assert!(Action::click(GRID_W, 0).validate(6).is_err());
        assert!(Action::Type { token: 6 }.validate(6).is_err());
        assert!(Action::click(0, 0).validate(6).is_ok());
    }
}
