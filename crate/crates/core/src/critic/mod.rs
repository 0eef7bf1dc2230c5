//! Q and V heads trained by temporal differences on frozen features.
//!
//! `Q(f(s,a))` regresses onto `r + γ·V̄(f(s'))` (no bootstrap on terminal steps) and
//! `V(f(s))` regresses onto the mean of `Q̄(f(s,a_i))` over `m` stored candidate actions.
//! Both delayed targets follow the online heads by Polyak averaging after every step.

use std::path::Path;
use std::sync::Arc;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reprlearn::{extract_s_features, FeatureKind, FeatureVector, FeaturizerParams};
use crate::tensorcore::{
    checkpoint, clip_grad_norm, Activation, ComputeRecord, GradBundle, MlpParams, OptimizerState,
};
use crate::trajstore::{Dataset, Transition};
use crate::util::substream;

pub const CRITIC_CHECKPOINT: &str = "digiq-critic";

/// Losses above this abort training.
const DIVERGENCE_LIMIT: f64 = 1e6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CriticConfig {
    pub gamma: f64,
    pub tau: f64,
    /// Candidates averaged in the V target.
    pub m: usize,
    pub q_hidden: Vec<usize>,
    pub v_hidden: Vec<usize>,
    pub lr: f64,
    pub batch_size: usize,
    pub iterations: usize,
    pub steps_per_iteration: usize,
    pub grad_clip: f64,
}

impl Default for CriticConfig {
    fn default() -> Self {
        Self {
            gamma: 0.95,
            tau: 0.02,
            m: 4,
            q_hidden: vec![64],
            v_hidden: vec![64],
            lr: 3e-3,
            batch_size: 128,
            iterations: 200,
            steps_per_iteration: 20,
            grad_clip: 0.01,
        }
    }
}

impl CriticConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("gamma must lie in [0, 1], got {}", self.gamma)));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::Config(format!("tau must lie in [0, 1], got {}", self.tau)));
        }
        if self.m == 0 || self.batch_size == 0 || self.iterations == 0 || self.steps_per_iteration == 0 {
            return Err(Error::Config("critic m, batch size and iteration counts must be positive".into()));
        }
        if self.q_hidden.contains(&0) || self.v_hidden.contains(&0) {
            return Err(Error::Config("critic hidden widths must be positive".into()));
        }
        if !(self.lr > 0.0) || !(self.grad_clip > 0.0) {
            return Err(Error::Config("critic lr and grad clip must be positive".into()));
        }
        Ok(())
    }
}

/// Online heads, delayed targets and the discount/averaging constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticState {
    pub q_head: MlpParams,
    pub v_head: MlpParams,
    pub q_target: MlpParams,
    pub v_target: MlpParams,
    pub gamma: f64,
    pub tau: f64,
}

impl CriticState {
    pub fn new(sa_dim: usize, s_dim: usize, cfg: &CriticConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dims = |input: usize, hidden: &[usize]| {
            let mut d = vec![input];
            d.extend_from_slice(hidden);
            d.push(1);
            d
        };
        let q_head = MlpParams::new(&dims(sa_dim, &cfg.q_hidden), Activation::Relu, &mut rng)?;
        let v_head = MlpParams::new(&dims(s_dim, &cfg.v_hidden), Activation::Relu, &mut rng)?;
        Self::from_heads(q_head, v_head, cfg.gamma, cfg.tau)
    }

    /// Targets start as copies of the online heads.
    pub fn from_heads(q_head: MlpParams, v_head: MlpParams, gamma: f64, tau: f64) -> Result<Self> {
        let cs = Self {
            q_target: q_head.clone(),
            v_target: v_head.clone(),
            q_head,
            v_head,
            gamma,
            tau,
        };
        cs.validate()?;
        Ok(cs)
    }

    pub fn validate(&self) -> Result<()> {
        for p in [&self.q_head, &self.v_head, &self.q_target, &self.v_target] {
            p.validate()?;
            if p.out_dim() != 1 {
                return Err(Error::Shape("critic heads must output a scalar".into()));
            }
        }
        if self.q_head.shapes() != self.q_target.shapes() || self.v_head.shapes() != self.v_target.shapes() {
            return Err(Error::Shape("target shapes differ from online shapes".into()));
        }
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::Config("gamma and tau must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn q(&self, f_sa: &[f64]) -> Result<f64> {
        self.q_head.predict_scalar(f_sa)
    }

    pub fn v(&self, f_s: &[f64]) -> Result<f64> {
        self.v_head.predict_scalar(f_s)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(CRITIC_CHECKPOINT, self, path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let cs: Self = checkpoint::load(CRITIC_CHECKPOINT, path)?;
        cs.validate()?;
        Ok(cs)
    }
}

/// `θ̄ ← (1−τ)θ̄ + τθ` for both heads; online parameters are untouched.
pub fn soft_update(cs: &CriticState) -> CriticState {
    let mut next = cs.clone();
    soft_update_in_place(&mut next);
    next
}

fn soft_update_in_place(cs: &mut CriticState) {
    // shapes are an invariant of CriticState
    cs.q_target.blend_from(&cs.q_head, cs.tau).expect("q target shape");
    cs.v_target.blend_from(&cs.v_head, cs.tau).expect("v target shape");
}

/// `Q(f_sa) − V(f_s)` with the online heads.
pub fn advantage(cs: &CriticState, f_sa: &FeatureVector, f_s: &FeatureVector) -> Result<f64> {
    if f_sa.kind != FeatureKind::StateAction || f_s.kind != FeatureKind::StateOnly {
        return Err(Error::Contract(format!(
            "advantage expects (state-action, state-only) features, got ({:?}, {:?})",
            f_sa.kind, f_s.kind
        )));
    }
    Ok(cs.q(&f_sa.values)? - cs.v(&f_s.values)?)
}

/// Everything the critic needs from one transition, with features resolved.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticSample {
    pub f_sa: Arc<Vec<f64>>,
    pub f_s: Arc<Vec<f64>>,
    pub f_s_next: Arc<Vec<f64>>,
    pub r: f64,
    pub done: bool,
    /// `f(s, a_i)` per stored candidate; identical candidates share one allocation.
    pub candidates: Vec<Arc<Vec<f64>>>,
    /// Discounted return-to-go of the trajectory from this step.
    pub mc_return: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CriticData {
    pub samples: Vec<CriticSample>,
    pub sa_dim: usize,
    pub s_dim: usize,
}

impl CriticData {
    pub fn new(samples: Vec<CriticSample>) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::Invalid("critic data needs at least one sample".into()))?;
        let (sa_dim, s_dim) = (first.f_sa.len(), first.f_s.len());
        for (i, s) in samples.iter().enumerate() {
            let bad_sa = s.f_sa.len() != sa_dim || s.candidates.iter().any(|c| c.len() != sa_dim);
            let bad_s = s.f_s.len() != s_dim || s.f_s_next.len() != s_dim;
            if bad_sa || bad_s {
                return Err(Error::Shape(format!("transition {i}: feature dimensions are inconsistent")));
            }
            let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
            if !finite(&s.f_sa)
                || !finite(&s.f_s)
                || !finite(&s.f_s_next)
                || !s.candidates.iter().all(|c| finite(c))
                || !s.r.is_finite()
            {
                return Err(Error::NonFinite(format!("features of transition {i}")));
            }
        }
        Ok(Self { samples, sa_dim, s_dim })
    }

    /// Resolves features for every transition, preferring cached vectors and otherwise
    /// computing them with the frozen featurizer. Transitions stay in dataset order.
    pub fn from_dataset(dataset: &Dataset, featurizer: Option<&FeaturizerParams>, gamma: f64) -> Result<Self> {
        let mut rows: Vec<(usize, &Transition, f64)> = Vec::with_capacity(dataset.n_transitions());
        for traj in &dataset.trajectories {
            let rtg = traj.returns_to_go(gamma);
            for (t, g) in traj.transitions.iter().zip(rtg) {
                rows.push((rows.len(), t, g));
            }
        }
        let samples = rows
            .par_iter()
            .map(|&(i, t, g)| resolve(i, t, g, featurizer))
            .collect::<Result<Vec<_>>>()?;
        Self::new(samples)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn min_candidates(&self) -> usize {
        self.samples.iter().map(|s| s.candidates.len()).min().unwrap_or(0)
    }
}

fn resolve(i: usize, t: &Transition, mc_return: f64, featurizer: Option<&FeaturizerParams>) -> Result<CriticSample> {
    let cache = t.features.as_ref();
    let missing = |what: &str| Error::MissingFeatures(format!("transition {i} has no {what} and no featurizer was given"));
    let f_s = match cache.and_then(|c| c.s.clone()) {
        Some(v) => v,
        None => extract_s_features(&t.s).values,
    };
    let f_s_next = match cache.and_then(|c| c.s_next.clone()) {
        Some(v) => v,
        None => extract_s_features(&t.s_next).values,
    };
    let policy_s = extract_s_features(&t.s).values;
    let sa = |a| -> Result<Vec<f64>> {
        let f = featurizer.ok_or_else(|| missing("f(s,a)"))?;
        Ok(f.sa_features_from(&policy_s, a)?.values)
    };
    let f_sa = match cache.and_then(|c| c.sa.clone()) {
        Some(v) => v,
        None => sa(&t.a)?,
    };
    let cached = cache.map(|c| c.candidates.as_slice()).unwrap_or(&[]);
    let mut candidates: Vec<Arc<Vec<f64>>> = Vec::with_capacity(t.candidates.len());
    for (j, a) in t.candidates.iter().enumerate() {
        if let Some(prev) = t.candidates[..j].iter().position(|b| b == a) {
            candidates.push(Arc::clone(&candidates[prev]));
            continue;
        }
        let v = match cached.get(j) {
            Some(v) => v.clone(),
            None if !cached.is_empty() => return Err(missing("candidate features")),
            None => sa(a)?,
        };
        candidates.push(Arc::new(v));
    }
    Ok(CriticSample {
        f_sa: Arc::new(f_sa),
        f_s: Arc::new(f_s),
        f_s_next: Arc::new(f_s_next),
        r: t.r as f64,
        done: t.done,
        candidates,
        mc_return,
    })
}

fn check_loss(loss: f64, what: &str) -> Result<()> {
    if !loss.is_finite() || loss > DIVERGENCE_LIMIT {
        return Err(Error::Divergence {
            stage: "critic",
            detail: format!("{what} loss reached {loss:e}"),
        });
    }
    Ok(())
}

/// Mean squared TD error and its gradient with respect to the Q head only.
pub fn q_loss(cs: &CriticState, batch: &[&CriticSample]) -> Result<GradBundle> {
    let mut g = GradBundle::zeros_like(&cs.q_head);
    if batch.is_empty() {
        return Ok(g);
    }
    let n = batch.len() as f64;
    let mut loss = 0.0;
    for s in batch {
        let target = if s.done {
            s.r
        } else {
            s.r + cs.gamma * cs.v_target.predict_scalar(&s.f_s_next)?
        };
        let (q, cache) = cs.q_head.forward(&s.f_sa)?;
        let err = q[0] - target;
        loss += err * err;
        cs.q_head.backward_into(&cache, &[2.0 * err / n], &mut g)?;
    }
    g.loss = loss / n;
    Ok(g)
}

/// `(V(s) − mean_i Q̄(s, a_i))²` over the first `m` candidates of each state.
pub fn v_loss(cs: &CriticState, batch: &[&CriticSample], m: usize) -> Result<GradBundle> {
    let picks: Vec<Vec<usize>> = batch.iter().map(|_| (0..m).collect()).collect();
    v_loss_with(cs, batch, &picks)
}

/// V loss with an explicit candidate subset per state.
pub fn v_loss_with(cs: &CriticState, batch: &[&CriticSample], picks: &[Vec<usize>]) -> Result<GradBundle> {
    let mut g = GradBundle::zeros_like(&cs.v_head);
    if batch.is_empty() {
        return Ok(g);
    }
    let n = batch.len() as f64;
    let mut loss = 0.0;
    for (i, (s, pick)) in batch.iter().zip(picks).enumerate() {
        if pick.is_empty() {
            return Err(Error::Invalid(format!("state {i}: no candidates selected for the V target")));
        }
        let mut target = 0.0;
        for &j in pick {
            let f = s.candidates.get(j).ok_or_else(|| {
                Error::Invalid(format!(
                    "state {i}: candidate {j} requested but only {} stored",
                    s.candidates.len()
                ))
            })?;
            target += cs.q_target.predict_scalar(f)?;
        }
        target /= pick.len() as f64;
        let (v, cache) = cs.v_head.forward(&s.f_s)?;
        let err = v[0] - target;
        loss += err * err;
        cs.v_head.backward_into(&cache, &[2.0 * err / n], &mut g)?;
    }
    g.loss = loss / n;
    Ok(g)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticLogRow {
    pub iteration: usize,
    pub q_loss: f64,
    pub v_loss: f64,
    pub q_grad_norm: f64,
    pub v_grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CriticRun {
    pub state: CriticState,
    pub log: Vec<CriticLogRow>,
    pub compute: Vec<ComputeRecord>,
}

pub fn write_log(rows: &[CriticLogRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

struct Trainer<'a> {
    data: &'a CriticData,
    cfg: &'a CriticConfig,
    seed: u64,
    step: u64,
}

impl Trainer<'_> {
    fn batch(&mut self) -> Result<(Vec<&CriticSample>, ChaCha8Rng)> {
        let mut rng = ChaCha8Rng::seed_from_u64(substream(self.seed, self.step));
        self.step += 1;
        let n = self.data.len();
        let b = self.cfg.batch_size.min(n);
        let idx = sample(&mut rng, n, b);
        Ok((idx.iter().map(|i| &self.data.samples[i]).collect(), rng))
    }
}

/// Alternating Q and V steps with soft target updates after each step.
pub fn train_critic(data: &CriticData, cfg: &CriticConfig, seed: u64) -> Result<CriticRun> {
    cfg.validate()?;
    if data.min_candidates() < cfg.m {
        return Err(Error::Invalid(format!(
            "V target needs m = {} candidates but some states store only {}",
            cfg.m,
            data.min_candidates()
        )));
    }
    let mut cs = CriticState::new(data.sa_dim, data.s_dim, cfg, seed)?;
    let mut opt_q = OptimizerState::new(&cs.q_head);
    let mut opt_v = OptimizerState::new(&cs.v_head);
    let mut rec_q = ComputeRecord::new("critic", "q_head", &cs.q_head);
    let mut rec_v = ComputeRecord::new("critic", "v_head", &cs.v_head);
    let mut log = Vec::with_capacity(cfg.iterations);
    let mut trainer = Trainer {
        data,
        cfg,
        seed,
        step: 0,
    };
    for iteration in 0..cfg.iterations {
        let mut row = CriticLogRow {
            iteration,
            q_loss: 0.0,
            v_loss: 0.0,
            q_grad_norm: 0.0,
            v_grad_norm: 0.0,
        };
        for _ in 0..cfg.steps_per_iteration {
            let (batch, mut rng) = trainer.batch()?;
            let b = batch.len() as u64;

            let mut gq = q_loss(&cs, &batch)?;
            check_loss(gq.loss, "Q")?;
            row.q_loss += gq.loss;
            row.q_grad_norm += clip_grad_norm(&mut gq, cfg.grad_clip);
            opt_q.step(&mut cs.q_head, &gq, cfg.lr)?;
            // online Q and V̄ forwards, then one backward
            rec_q.forwards += b;
            rec_q.backwards += b;
            rec_v.forwards += b;

            let picks: Vec<Vec<usize>> = batch
                .iter()
                .map(|s| sample(&mut rng, s.candidates.len(), cfg.m).into_vec())
                .collect();
            let mut gv = v_loss_with(&cs, &batch, &picks)?;
            check_loss(gv.loss, "V")?;
            row.v_loss += gv.loss;
            row.v_grad_norm += clip_grad_norm(&mut gv, cfg.grad_clip);
            opt_v.step(&mut cs.v_head, &gv, cfg.lr)?;
            rec_v.forwards += b;
            rec_v.backwards += b;
            rec_q.forwards += b * cfg.m as u64;

            soft_update_in_place(&mut cs);
        }
        let k = cfg.steps_per_iteration as f64;
        row.q_loss /= k;
        row.v_loss /= k;
        row.q_grad_norm /= k;
        row.v_grad_norm /= k;
        log.push(row);
    }
    Ok(CriticRun {
        state: cs,
        log,
        compute: vec![rec_q, rec_v],
    })
}

/// Regression of Q and V onto discounted Monte-Carlo returns; no bootstrapping.
pub fn mc_regress(data: &CriticData, cfg: &CriticConfig, seed: u64) -> Result<CriticRun> {
    cfg.validate()?;
    let mut cs = CriticState::new(data.sa_dim, data.s_dim, cfg, seed)?;
    let mut opt_q = OptimizerState::new(&cs.q_head);
    let mut opt_v = OptimizerState::new(&cs.v_head);
    let mut rec_q = ComputeRecord::new("critic_mc", "q_head", &cs.q_head);
    let mut rec_v = ComputeRecord::new("critic_mc", "v_head", &cs.v_head);
    let mut log = Vec::with_capacity(cfg.iterations);
    let mut trainer = Trainer {
        data,
        cfg,
        seed,
        step: 0,
    };
    let regress = |head: &MlpParams, batch: &[&CriticSample], input: fn(&CriticSample) -> &[f64]| -> Result<GradBundle> {
        let mut g = GradBundle::zeros_like(head);
        let n = batch.len() as f64;
        for s in batch {
            let (y, cache) = head.forward(input(s))?;
            let err = y[0] - s.mc_return;
            g.loss += err * err / n;
            head.backward_into(&cache, &[2.0 * err / n], &mut g)?;
        }
        Ok(g)
    };
    for iteration in 0..cfg.iterations {
        let mut row = CriticLogRow {
            iteration,
            q_loss: 0.0,
            v_loss: 0.0,
            q_grad_norm: 0.0,
            v_grad_norm: 0.0,
        };
        for _ in 0..cfg.steps_per_iteration {
            let (batch, _) = trainer.batch()?;
            let b = batch.len() as u64;
            let mut gq = regress(&cs.q_head, &batch, |s| &s.f_sa)?;
            check_loss(gq.loss, "Q")?;
            row.q_loss += gq.loss;
            row.q_grad_norm += clip_grad_norm(&mut gq, cfg.grad_clip);
            opt_q.step(&mut cs.q_head, &gq, cfg.lr)?;
            let mut gv = regress(&cs.v_head, &batch, |s| &s.f_s)?;
            check_loss(gv.loss, "V")?;
            row.v_loss += gv.loss;
            row.v_grad_norm += clip_grad_norm(&mut gv, cfg.grad_clip);
            opt_v.step(&mut cs.v_head, &gv, cfg.lr)?;
            for r in [&mut rec_q, &mut rec_v] {
                r.forwards += b;
                r.backwards += b;
            }
        }
        let k = cfg.steps_per_iteration as f64;
        row.q_loss /= k;
        row.v_loss /= k;
        row.q_grad_norm /= k;
        row.v_grad_norm /= k;
        log.push(row);
    }
    cs.q_target = cs.q_head.clone();
    cs.v_target = cs.v_head.clone();
    Ok(CriticRun {
        state: cs,
        log,
        compute: vec![rec_q, rec_v],
    })
}

/// One-hot feature helpers for tabular problems.
pub mod tabular {
    use super::*;

    pub fn one_hot(i: usize, n: usize) -> Vec<f64> {
        let mut v = vec![0.0; n];
        v[i] = 1.0;
        v
    }

    /// `f(s, a)` = one-hot over `n_states · n_actions`; `f(s)` = one-hot over states.
    #[allow(clippy::too_many_arguments)]
    pub fn sample(
        n_states: usize,
        n_actions: usize,
        s: usize,
        a: usize,
        r: f64,
        s_next: usize,
        done: bool,
        candidates: &[usize],
    ) -> CriticSample {
        let sa = |a: usize| Arc::new(one_hot(s * n_actions + a, n_states * n_actions));
        CriticSample {
            f_sa: sa(a),
            f_s: Arc::new(one_hot(s, n_states)),
            f_s_next: Arc::new(one_hot(s_next, n_states)),
            r,
            done,
            candidates: candidates.iter().map(|&c| sa(c)).collect(),
            mc_return: r,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensorcore::{finite_diff_check, Layer};

    fn scalar_head(w: f64, b: f64) -> MlpParams {
        MlpParams::from_layers(
            vec![Layer {
                in_dim: 1,
                out_dim: 1,
                weights: vec![w],
                bias: vec![b],
            }],
            vec![],
        )
        .unwrap()
    }

    fn const_head(in_dim: usize, c: f64) -> MlpParams {
        let mut l = Layer::zeros(in_dim, 1);
        l.bias[0] = c;
        MlpParams::from_layers(vec![l], vec![]).unwrap()
    }

    fn one(v: f64) -> Arc<Vec<f64>> {
        Arc::new(vec![v])
    }

    fn sample_1d(f_sa: f64, r: f64, done: bool, cands: &[f64]) -> CriticSample {
        CriticSample {
            f_sa: one(f_sa),
            f_s: one(1.0),
            f_s_next: one(1.0),
            r,
            done,
            candidates: cands.iter().map(|&c| one(c)).collect(),
            mc_return: r,
        }
    }

    #[test]
    fn terminal_transition_loss_and_gradient() {
        // Q ≡ 0: loss (0 − 1)² = 1, dL/dQ = −2 → db = −2
        let cs = CriticState::from_heads(const_head(1, 0.0), const_head(1, 5.0), 0.9, 0.005).unwrap();
        let s = sample_1d(0.3, 1.0, true, &[]);
        let g = q_loss(&cs, &[&s]).unwrap();
        assert_eq!(g.loss, 1.0);
        assert_eq!(g.layers[0].bias[0], -2.0);
    }

    #[test]
    fn bootstrapped_td_example() {
        let cs = CriticState::from_heads(const_head(1, 0.0), const_head(1, 0.5), 0.9, 0.005).unwrap();
        let s = sample_1d(0.3, 0.0, false, &[]);
        let g = q_loss(&cs, &[&s]).unwrap();
        assert!((g.loss - 0.2025).abs() < 1e-15);
    }

    #[test]
    fn td_fixed_point_has_zero_gradient() {
        // Q(x) = x, V̄ ≡ 0.5, γ = 0.9: pick f_sa = r + 0.45
        let cs = CriticState::from_heads(scalar_head(1.0, 0.0), const_head(1, 0.5), 0.9, 0.005).unwrap();
        let a = sample_1d(0.45, 0.0, false, &[]);
        let b = sample_1d(1.45, 1.0, false, &[]);
        let c = sample_1d(1.0, 1.0, true, &[]);
        let g = q_loss(&cs, &[&a, &b, &c]).unwrap();
        assert!(g.loss < 1e-30);
        assert!(g.is_zero());
    }

    #[test]
    fn v_loss_examples() {
        let q = scalar_head(1.0, 0.0);
        let cs = CriticState::from_heads(q.clone(), const_head(1, 0.7), 0.9, 0.0).unwrap();
        let s = sample_1d(0.0, 0.0, false, &[0.7]);
        let g = v_loss(&cs, &[&s], 1).unwrap();
        assert_eq!(g.loss, 0.0);

        let cs = CriticState::from_heads(q, const_head(1, 0.0), 0.9, 0.0).unwrap();
        let s = sample_1d(0.0, 0.0, false, &[0.0, 1.0]);
        assert_eq!(v_loss(&cs, &[&s], 2).unwrap().loss, 0.25);
        let err = v_loss(&cs, &[&s], 3).unwrap_err();
        assert!(err.to_string().contains("only 2 stored"), "{err}");
    }

    #[test]
    fn v_converges_to_constant_q() {
        let c = 0.37;
        let samples: Vec<CriticSample> = (0..64)
            .map(|i| CriticSample {
                f_s: Arc::new(vec![(i % 8) as f64 / 8.0, 1.0 - (i % 5) as f64 / 5.0]),
                f_s_next: Arc::new(vec![0.0, 0.0]),
                ..sample_1d(0.0, 0.0, false, &[0.1, 0.9, 0.4, 0.2])
            })
            .collect();
        let data = CriticData::new(samples).unwrap();
        let cfg = CriticConfig {
            q_hidden: vec![],
            v_hidden: vec![8],
            iterations: 60,
            lr: 1e-2,
            batch_size: 32,
            ..CriticConfig::default()
        };
        let mut cs = CriticState::new(1, 2, &cfg, 0).unwrap();
        cs.q_target = const_head(1, c);
        let mut opt = OptimizerState::new(&cs.v_head);
        let batch: Vec<&CriticSample> = data.samples.iter().collect();
        for _ in 0..2000 {
            let g = v_loss(&cs, &batch, 4).unwrap();
            opt.step(&mut cs.v_head, &g, 1e-2).unwrap();
        }
        for s in &data.samples {
            assert!((cs.v(&s.f_s).unwrap() - c).abs() < 1e-2);
        }
    }

    #[test]
    fn target_algebra() {
        let cfg = CriticConfig {
            q_hidden: vec![3],
            v_hidden: vec![2],
            ..CriticConfig::default()
        };
        let mut cs = CriticState::new(4, 3, &cfg, 9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        cs.q_target = MlpParams::new(&[4, 3, 1], Activation::Relu, &mut rng).unwrap();
        cs.v_target = MlpParams::new(&[3, 2, 1], Activation::Relu, &mut rng).unwrap();

        let full = soft_update(&CriticState { tau: 1.0, ..cs.clone() });
        assert_eq!(full.q_target, cs.q_head);
        assert_eq!(full.v_target, cs.v_head);
        let none = soft_update(&CriticState { tau: 0.0, ..cs.clone() });
        assert_eq!(none.q_target, cs.q_target);
        assert_eq!(none.q_head, cs.q_head);

        let tau = 0.1;
        let mut s = CriticState { tau, ..cs.clone() };
        let d0 = s.q_target.distance(&s.q_head).unwrap();
        for n in 1..=25 {
            s = soft_update(&s);
            let want = d0 * (1.0 - tau).powi(n);
            assert!((s.q_target.distance(&s.q_head).unwrap() - want).abs() < 1e-12);
        }

        let mut h = CriticState::from_heads(scalar_head(0.0, 1.0), scalar_head(0.0, 0.0), 0.9, 0.5).unwrap();
        h.q_target = scalar_head(0.0, 0.0);
        assert_eq!(soft_update(&h).q_target.layers[0].bias[0], 0.5);
    }

    #[test]
    fn advantage_examples() {
        let cs = CriticState::from_heads(const_head(1, 0.7), const_head(1, 0.4), 0.9, 0.0).unwrap();
        let sa = FeatureVector {
            values: vec![0.0],
            kind: FeatureKind::StateAction,
        };
        let s = FeatureVector {
            values: vec![0.0],
            kind: FeatureKind::StateOnly,
        };
        assert!((advantage(&cs, &sa, &s).unwrap() - 0.3).abs() < 1e-15);
        assert!(advantage(&cs, &s, &sa).is_err());
        let shifted = CriticState::from_heads(const_head(1, 10.7), const_head(1, 10.4), 0.9, 0.0).unwrap();
        assert!((advantage(&shifted, &sa, &s).unwrap() - 0.3).abs() < 1e-12);
        let eq = CriticState::from_heads(const_head(1, 0.4), const_head(1, 0.4), 0.9, 0.0).unwrap();
        assert_eq!(advantage(&eq, &sa, &s).unwrap(), 0.0);
    }

    fn random_batch(seed: u64, sa_dim: usize, s_dim: usize, k: usize) -> Vec<CriticSample> {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut v = |d: usize| Arc::new((0..d).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>());
        (0..6)
            .map(|i| CriticSample {
                f_sa: v(sa_dim),
                f_s: v(s_dim),
                f_s_next: v(s_dim),
                r: (i % 2) as f64,
                done: i % 3 == 0,
                candidates: (0..k).map(|_| v(sa_dim)).collect(),
                mc_return: 0.5,
            })
            .collect()
    }

    #[test]
    fn td_gradients_match_finite_differences() {
        let cfg = CriticConfig {
            q_hidden: vec![6, 5],
            v_hidden: vec![4],
            ..CriticConfig::default()
        };
        let cs = CriticState::new(5, 3, &cfg, 4).unwrap();
        let cs = CriticState {
            q_target: MlpParams::new(&[5, 6, 5, 1], Activation::Relu, &mut ChaCha8Rng::seed_from_u64(7)).unwrap(),
            v_target: MlpParams::new(&[3, 4, 1], Activation::Relu, &mut ChaCha8Rng::seed_from_u64(8)).unwrap(),
            ..cs
        };
        let samples = random_batch(3, 5, 3, 4);
        let batch: Vec<&CriticSample> = samples.iter().collect();

        let g = q_loss(&cs, &batch).unwrap();
        let mut probe = cs.clone();
        let err = finite_diff_check(
            |p| {
                probe.q_head.set_flat(p).unwrap();
                q_loss(&probe, &batch).unwrap().loss
            },
            &cs.q_head.flat(),
            &g.flat(),
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-4, "q: {err}");

        let g = v_loss(&cs, &batch, 3).unwrap();
        let mut probe = cs.clone();
        let err = finite_diff_check(
            |p| {
                probe.v_head.set_flat(p).unwrap();
                v_loss(&probe, &batch, 3).unwrap().loss
            },
            &cs.v_head.flat(),
            &g.flat(),
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-4, "v: {err}");
    }

    #[test]
    fn gradient_isolation() {
        let cfg = CriticConfig::default();
        let samples = random_batch(1, 5, 3, 4);
        let data = CriticData::new(samples).unwrap();
        let cs0 = CriticState::new(5, 3, &cfg, 0).unwrap();
        let batch: Vec<&CriticSample> = data.samples.iter().collect();
        let gq = q_loss(&cs0, &batch).unwrap();
        let gv = v_loss(&cs0, &batch, 4).unwrap();
        assert!(gq.matches(&cs0.q_head) && !gq.is_zero());
        assert!(gv.matches(&cs0.v_head) && !gv.is_zero());
        let mut cs = cs0.clone();
        OptimizerState::new(&cs.q_head).step(&mut cs.q_head, &gq, 1e-2).unwrap();
        assert_eq!(cs.v_head, cs0.v_head);
        assert_ne!(cs.q_head, cs0.q_head);
    }

    #[test]
    fn gamma_zero_recovers_immediate_reward() {
        let (ns, na) = (3, 2);
        let mut samples = Vec::new();
        for rep in 0..20 {
            for s in 0..ns {
                for a in 0..na {
                    let r = ((s + 2 * a) % 3) as f64 / 2.0;
                    samples.push(tabular::sample(ns, na, s, a, r, (s + 1) % ns, rep % 4 == 0, &[0, 1]));
                }
            }
        }
        let data = CriticData::new(samples).unwrap();
        let cfg = CriticConfig {
            gamma: 0.0,
            q_hidden: vec![],
            v_hidden: vec![],
            m: 2,
            lr: 1e-2,
            batch_size: 32,
            iterations: 40,
            ..CriticConfig::default()
        };
        let run = train_critic(&data, &cfg, 3).unwrap();
        for s in 0..ns {
            for a in 0..na {
                let r = ((s + 2 * a) % 3) as f64 / 2.0;
                let q = run.state.q(&tabular::one_hot(s * na + a, ns * na)).unwrap();
                assert!((q - r).abs() < 1e-2, "Q({s},{a}) = {q}, r = {r}");
            }
        }
        assert_eq!(run.log.len(), 40);
    }

    #[test]
    fn training_is_deterministic_and_logged() {
        let samples = random_batch(2, 5, 3, 4);
        let data = CriticData::new(samples).unwrap();
        let cfg = CriticConfig {
            iterations: 3,
            steps_per_iteration: 4,
            ..CriticConfig::default()
        };
        let a = train_critic(&data, &cfg, 11).unwrap();
        let b = train_critic(&data, &cfg, 11).unwrap();
        assert_eq!(a.state, b.state);
        assert_eq!(a.log, b.log);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("critic.json");
        a.state.save(&p).unwrap();
        assert_eq!(CriticState::load(&p).unwrap(), a.state);
        let log = dir.path().join("log.csv");
        write_log(&a.log, &log).unwrap();
        let text = std::fs::read_to_string(&log).unwrap();
        assert!(text.starts_with("iteration,q_loss,v_loss,q_grad_norm,v_grad_norm\n"));
        assert_eq!(text.lines().count(), 4);
    }

    #[test]
    fn divergence_guard_names_the_stage() {
        let mut s = sample_1d(1.0, 0.0, true, &[1.0]);
        s.r = 1e4;
        let data = CriticData::new(vec![s]).unwrap();
        let cfg = CriticConfig {
            m: 1,
            q_hidden: vec![],
            v_hidden: vec![],
            ..CriticConfig::default()
        };
        let err = train_critic(&data, &cfg, 0).unwrap_err();
        assert!(matches!(err, Error::Divergence { stage: "critic", .. }), "{err}");
    }

    #[test]
    fn too_few_candidates_rejected() {
        let data = CriticData::new(vec![sample_1d(1.0, 0.0, true, &[1.0])]).unwrap();
        assert!(train_critic(&data, &CriticConfig::default(), 0).is_err());
    }

    #[test]
    fn mc_single_step_target_is_reward() {
        let samples: Vec<CriticSample> = (0..4)
            .map(|s| tabular::sample(4, 1, s, 0, (s as f64) / 4.0, s, true, &[0]))
            .collect();
        let data = CriticData::new(samples).unwrap();
        let cfg = CriticConfig {
            gamma: 1.0,
            q_hidden: vec![],
            v_hidden: vec![],
            m: 1,
            lr: 1e-2,
            iterations: 30,
            ..CriticConfig::default()
        };
        let run = mc_regress(&data, &cfg, 0).unwrap();
        for s in 0..4 {
            let q = run.state.q(&tabular::one_hot(s, 4)).unwrap();
            assert!((q - s as f64 / 4.0).abs() < 1e-2);
        }
    }
}
