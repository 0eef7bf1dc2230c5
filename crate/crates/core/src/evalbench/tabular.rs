//! Small explicit MDPs and exact policy evaluation.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::critic::{mc_regress, tabular, train_critic, CriticConfig, CriticData, CriticState};
use crate::error::{Error, Result};
use crate::util::substream;

/// `P[s][a]` is a distribution over next states, `R[s][a]` the immediate reward.
/// Terminal states are absorbing with zero value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularMDP {
    pub n_states: usize,
    pub n_actions: usize,
    pub p: Vec<Vec<Vec<f64>>>,
    pub r: Vec<Vec<f64>>,
    pub terminal: Vec<bool>,
    pub gamma: f64,
}

const ROW_TOL: f64 = 1e-9;

impl TabularMDP {
    pub fn validate(&self) -> Result<()> {
        let (ns, na) = (self.n_states, self.n_actions);
        if ns == 0 || na == 0 {
            return Err(Error::Invalid("tabular MDP needs states and actions".into()));
        }
        if self.p.len() != ns || self.r.len() != ns || self.terminal.len() != ns {
            return Err(Error::Shape("tabular MDP tables disagree on the state count".into()));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Invalid(format!("gamma {} outside [0, 1]", self.gamma)));
        }
        for s in 0..ns {
            if self.p[s].len() != na || self.r[s].len() != na {
                return Err(Error::Shape(format!("state {s}: expected {na} actions")));
            }
            for a in 0..na {
                let row = &self.p[s][a];
                if row.len() != ns || row.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
                    return Err(Error::Invalid(format!("P[{s}][{a}] is not a distribution over {ns} states")));
                }
                let total: f64 = row.iter().sum();
                if (total - 1.0).abs() > ROW_TOL {
                    return Err(Error::Invalid(format!("P[{s}][{a}] sums to {total}")));
                }
                if !self.r[s][a].is_finite() {
                    return Err(Error::Invalid(format!("R[{s}][{a}] is not finite")));
                }
            }
        }
        Ok(())
    }

    /// `Σ_a π(a|s) Q(s, a)`, zero on terminal states.
    pub fn state_values(&self, q: &[Vec<f64>], policy: &[Vec<f64>]) -> Vec<f64> {
        (0..self.n_states)
            .map(|s| {
                if self.terminal[s] {
                    0.0
                } else {
                    policy[s].iter().zip(&q[s]).map(|(p, q)| p * q).sum()
                }
            })
            .collect()
    }

    /// Draws the next state from `P[s][a]` with a uniform variate `u ∈ [0, 1)`.
    pub fn next_state(&self, s: usize, a: usize, u: f64) -> usize {
        let mut acc = 0.0;
        for (j, &p) in self.p[s][a].iter().enumerate() {
            acc += p;
            if u < acc {
                return j;
            }
        }
        // rounding left a sliver at the top: take the last reachable state
        self.p[s][a].iter().rposition(|&p| p > 0.0).unwrap_or(s)
    }
}

fn check_policy(mdp: &TabularMDP, policy: &[Vec<f64>]) -> Result<()> {
    if policy.len() != mdp.n_states {
        return Err(Error::Shape(format!("policy has {} rows for {} states", policy.len(), mdp.n_states)));
    }
    for (s, row) in policy.iter().enumerate() {
        if row.len() != mdp.n_actions || row.iter().any(|&x| !(x >= 0.0)) {
            return Err(Error::Invalid(format!("policy row {s} is not a distribution")));
        }
        let total: f64 = row.iter().sum();
        if (total - 1.0).abs() > ROW_TOL {
            return Err(Error::Invalid(format!("policy row {s} sums to {total}")));
        }
    }
    Ok(())
}

/// Exact `Q^π` by solving `(I − γ P_π) V = R_π` and backing up once.
pub fn tabular_q_oracle(mdp: &TabularMDP, policy: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    mdp.validate()?;
    check_policy(mdp, policy)?;
    let n = mdp.n_states;
    let mut a = DMatrix::<f64>::identity(n, n);
    let mut b = DVector::<f64>::zeros(n);
    for s in 0..n {
        if mdp.terminal[s] {
            continue;
        }
        for (act, &pi) in policy[s].iter().enumerate() {
            if pi == 0.0 {
                continue;
            }
            b[s] += pi * mdp.r[s][act];
            for (j, &p) in mdp.p[s][act].iter().enumerate() {
                if !mdp.terminal[j] {
                    a[(s, j)] -= mdp.gamma * pi * p;
                }
            }
        }
    }
    let v = a
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::Invalid("policy evaluation system is singular (γ = 1 without termination?)".into()))?;
    Ok((0..n)
        .map(|s| {
            (0..mdp.n_actions)
                .map(|act| {
                    if mdp.terminal[s] {
                        return 0.0;
                    }
                    let next: f64 = mdp.p[s][act]
                        .iter()
                        .enumerate()
                        .filter(|(j, _)| !mdp.terminal[*j])
                        .map(|(j, p)| p * v[j])
                        .sum();
                    mdp.r[s][act] + mdp.gamma * next
                })
                .collect()
        })
        .collect())
}

/// Largest element-wise violation of `Q = R + γ P V^π`.
pub fn bellman_residual(mdp: &TabularMDP, policy: &[Vec<f64>], q: &[Vec<f64>]) -> f64 {
    let v = mdp.state_values(q, policy);
    let mut worst: f64 = 0.0;
    for s in 0..mdp.n_states {
        if mdp.terminal[s] {
            continue;
        }
        for a in 0..mdp.n_actions {
            let target = mdp.r[s][a] + mdp.gamma * mdp.p[s][a].iter().zip(&v).map(|(p, v)| p * v).sum::<f64>();
            worst = worst.max((q[s][a] - target).abs());
        }
    }
    worst
}

/// Five states, three actions, one absorbing goal; every action reachable everywhere.
/// Used by the critic-oracle comparison.
pub fn five_state_fixture() -> TabularMDP {
    let n = 5;
    let mut p = vec![vec![vec![0.0; n]; 3]; n];
    let mut r = vec![vec![0.0; 3]; n];
    for s in 0..4 {
        // a0: advance with prob 0.8, otherwise stay
        p[s][0][s + 1] += 0.8;
        p[s][0][s] += 0.2;
        // a1: fall back to the start
        p[s][1][0] = 1.0;
        // a2: stay put
        p[s][2][s] = 1.0;
    }
    // reaching the goal pays 1; 0.8 in expectation
    r[3][0] = 0.8;
    for a in 0..3 {
        p[4][a][4] = 1.0;
    }
    TabularMDP {
        n_states: n,
        n_actions: 3,
        p,
        r,
        terminal: vec![false, false, false, false, true],
        gamma: 0.9,
    }
}

/// Two-step tree: the root branches stochastically into one of two middle states,
/// and each middle state pays a deterministic, action-dependent reward on termination.
pub fn branching_fixture() -> TabularMDP {
    let n = 4;
    let mut p = vec![vec![vec![0.0; n]; 2]; n];
    p[0][0][1] = 0.5;
    p[0][0][2] = 0.5;
    p[0][1][1] = 0.2;
    p[0][1][2] = 0.8;
    for s in [1, 2] {
        for a in 0..2 {
            p[s][a][3] = 1.0;
        }
    }
    for a in 0..2 {
        p[3][a][3] = 1.0;
    }
    TabularMDP {
        n_states: n,
        n_actions: 2,
        p,
        r: vec![vec![0.0, 0.0], vec![1.0, 0.5], vec![0.0, 0.2], vec![0.0, 0.0]],
        terminal: vec![false, false, false, true],
        gamma: 0.9,
    }
}

fn draw(rng: &mut ChaCha8Rng, probs: &[f64]) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// Independent transitions with start states drawn uniformly over non-terminal states
/// and actions from `policy`; every action is stored as a candidate. One-hot features.
pub fn sample_transitions(mdp: &TabularMDP, policy: &[Vec<f64>], n: usize, seed: u64) -> Result<CriticData> {
    mdp.validate()?;
    check_policy(mdp, policy)?;
    let live: Vec<usize> = (0..mdp.n_states).filter(|&s| !mdp.terminal[s]).collect();
    if live.is_empty() || n == 0 {
        return Err(Error::Invalid("need a non-terminal state and at least one transition".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let all: Vec<usize> = (0..mdp.n_actions).collect();
    let samples = (0..n)
        .map(|_| {
            let s = live[rng.gen_range(0..live.len())];
            let a = draw(&mut rng, &policy[s]);
            let s2 = mdp.next_state(s, a, rng.gen());
            tabular::sample(mdp.n_states, mdp.n_actions, s, a, mdp.r[s][a], s2, mdp.terminal[s2], &all)
        })
        .collect();
    CriticData::new(samples)
}

/// Complete episodes from the start state under `policy`, with discounted
/// return-to-go attached to each step. Episodes are cut at `max_len` steps.
pub fn sample_episodes(
    mdp: &TabularMDP,
    policy: &[Vec<f64>],
    start: usize,
    episodes: usize,
    max_len: usize,
    seed: u64,
) -> Result<CriticData> {
    mdp.validate()?;
    check_policy(mdp, policy)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let all: Vec<usize> = (0..mdp.n_actions).collect();
    let mut samples = Vec::new();
    for _ in 0..episodes {
        let mut s = start;
        let mut steps = Vec::new();
        while !mdp.terminal[s] && steps.len() < max_len {
            let a = draw(&mut rng, &policy[s]);
            let s2 = mdp.next_state(s, a, rng.gen());
            steps.push(tabular::sample(mdp.n_states, mdp.n_actions, s, a, mdp.r[s][a], s2, mdp.terminal[s2], &all));
            s = s2;
        }
        let mut g = 0.0;
        for step in steps.iter_mut().rev() {
            g = step.r + mdp.gamma * g;
            step.mc_return = g;
        }
        samples.extend(steps);
    }
    CriticData::new(samples)
}

/// Critic heads as plain linear maps, i.e. lookup tables over one-hot features.
pub fn tabular_critic_config(base: &CriticConfig, n_actions: usize) -> CriticConfig {
    CriticConfig {
        q_hidden: Vec::new(),
        v_hidden: Vec::new(),
        m: n_actions,
        ..base.clone()
    }
}

/// `Q(s, a)` read off a critic trained on one-hot features.
pub fn critic_q_table(cs: &CriticState, n_states: usize, n_actions: usize) -> Result<Vec<Vec<f64>>> {
    (0..n_states)
        .map(|s| {
            (0..n_actions)
                .map(|a| cs.q(&tabular::one_hot(s * n_actions + a, n_states * n_actions)))
                .collect()
        })
        .collect()
}

/// Largest `|Q_critic − Q_oracle|` over non-terminal states.
pub fn max_q_error(mdp: &TabularMDP, q: &[Vec<f64>], oracle: &[Vec<f64>]) -> f64 {
    let mut worst: f64 = 0.0;
    for s in (0..mdp.n_states).filter(|&s| !mdp.terminal[s]) {
        for a in 0..mdp.n_actions {
            worst = worst.max((q[s][a] - oracle[s][a]).abs());
        }
    }
    worst
}

/// Across-dataset variance of the learned `V(s)` per non-terminal state, for the TD
/// critic and for Monte-Carlo regression trained on the same episodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueVariance {
    pub states: Vec<usize>,
    pub td: Vec<f64>,
    pub mc: Vec<f64>,
}

impl ValueVariance {
    pub fn mc_exceeds_td_everywhere(&self) -> bool {
        self.td.iter().zip(&self.mc).all(|(t, m)| m > t)
    }
}

pub fn value_variance(
    mdp: &TabularMDP,
    policy: &[Vec<f64>],
    episodes: usize,
    reseeds: usize,
    cfg: &CriticConfig,
    seed: u64,
) -> Result<ValueVariance> {
    let cfg = tabular_critic_config(cfg, mdp.n_actions);
    let states: Vec<usize> = (0..mdp.n_states).filter(|&s| !mdp.terminal[s]).collect();
    let mut td_v = vec![Vec::with_capacity(reseeds); states.len()];
    let mut mc_v = vec![Vec::with_capacity(reseeds); states.len()];
    for r in 0..reseeds as u64 {
        let data = sample_episodes(mdp, policy, 0, episodes, 4 * mdp.n_states, substream(seed, r))?;
        let td = train_critic(&data, &cfg, substream(seed, 1000 + r))?.state;
        let mc = mc_regress(&data, &cfg, substream(seed, 1000 + r))?.state;
        for (i, &s) in states.iter().enumerate() {
            let f = tabular::one_hot(s, mdp.n_states);
            td_v[i].push(td.v(&f)?);
            mc_v[i].push(mc.v(&f)?);
        }
    }
    let var = |v: &[f64]| crate::util::mean_std(v).1.powi(2);
    Ok(ValueVariance {
        td: td_v.iter().map(|v| var(v)).collect(),
        mc: mc_v.iter().map(|v| var(v)).collect(),
        states,
    })
}
