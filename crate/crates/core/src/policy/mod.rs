//! Factored categorical actor and the policy-extraction operators: behavior cloning,
//! Best-of-N reranking, advantage-weighted regression and REINFORCE.
//!
//! The actor outputs one logit block for the action kind and one block per kind for its
//! component (click cell, token, navigation target). `log π(a|s)` is the sum of the kind
//! and component log-probabilities.

use std::path::Path;
use std::sync::Arc;

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::critic::{CriticData, CriticState};
use crate::error::{Error, Result};
use crate::minidevice::{Action, ActionKind, ActionPolicy, Observation, Task, N_CELLS, N_NAV, N_TOKENS};
use crate::reprlearn::{extract_s_features, FeaturizerParams, STATE_DIM};
use crate::tensorcore::{checkpoint, clip_grad_norm, Activation, ComputeRecord, GradBundle, MlpParams, OptimizerState};
use crate::trajstore::Dataset;
use crate::util::substream;

pub const POLICY_CHECKPOINT: &str = "digiq-policy";

/// Component counts per action kind for the device action space.
pub fn device_action_space() -> Vec<usize> {
    vec![N_CELLS, N_TOKENS, N_NAV]
}

/// An action as (kind index, component index) within an action space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ActionIdx {
    pub kind: usize,
    pub comp: usize,
}

impl From<&Action> for ActionIdx {
    fn from(a: &Action) -> Self {
        Self {
            kind: a.kind().index(),
            comp: a.component(),
        }
    }
}

impl ActionIdx {
    pub fn to_action(self) -> Result<Action> {
        let kind = ActionKind::from_index(self.kind)
            .ok_or_else(|| Error::Invalid(format!("action kind {} out of range", self.kind)))?;
        Ok(Action::from_parts(kind, self.comp))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub network: MlpParams,
    pub temperature: f64,
    /// Component count per kind; the output layer has `len + Σ` logits.
    pub space: Vec<usize>,
}

/// Normalized distribution of one state.
#[derive(Debug, Clone, PartialEq)]
pub struct FactoredDist {
    pub kind: Vec<f64>,
    pub comps: Vec<Vec<f64>>,
}

fn log_softmax(logits: &[f64], temperature: f64) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let scaled: Vec<f64> = logits.iter().map(|l| (l - max) / temperature).collect();
    let lse = scaled.iter().map(|z| z.exp()).sum::<f64>().ln();
    scaled.iter().map(|z| z - lse).collect()
}

fn argmax(v: &[f64]) -> usize {
    // first maximum wins
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

impl FactoredDist {
    pub fn log_prob(&self, a: ActionIdx) -> f64 {
        self.kind[a.kind].ln() + self.comps[a.kind][a.comp].ln()
    }

    /// Joint argmax: the kind maximizing `p(k)·max_c p(c|k)`, then its best component.
    pub fn mode(&self) -> ActionIdx {
        let scores: Vec<f64> = self
            .kind
            .iter()
            .zip(&self.comps)
            .map(|(pk, c)| pk * c[argmax(c)])
            .collect();
        let kind = argmax(&scores);
        ActionIdx {
            kind,
            comp: argmax(&self.comps[kind]),
        }
    }

    pub fn sample(&self, rng: &mut dyn RngCore) -> ActionIdx {
        let draw = |p: &[f64], rng: &mut dyn RngCore| {
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            for (i, &x) in p.iter().enumerate() {
                acc += x;
                if u < acc {
                    return i;
                }
            }
            p.len() - 1
        };
        let kind = draw(&self.kind, rng);
        ActionIdx {
            kind,
            comp: draw(&self.comps[kind], rng),
        }
    }

    /// `KL(self ‖ other) = KL_kind + Σ_k p(k)·KL_k`.
    pub fn kl(&self, other: &FactoredDist) -> f64 {
        let kl = |p: &[f64], q: &[f64]| -> f64 {
            p.iter()
                .zip(q)
                .filter(|(pi, _)| **pi > 0.0)
                .map(|(pi, qi)| pi * (pi.ln() - qi.ln()))
                .sum()
        };
        let mut total = kl(&self.kind, &other.kind);
        for (k, pk) in self.kind.iter().enumerate() {
            total += pk * kl(&self.comps[k], &other.comps[k]);
        }
        total.max(0.0)
    }
}

impl PolicyParams {
    pub fn new(input_dim: usize, hidden: &[usize], space: Vec<usize>, temperature: f64, seed: u64) -> Result<Self> {
        if space.is_empty() || space.contains(&0) {
            return Err(Error::Config("action space needs at least one kind and no empty kinds".into()));
        }
        if !(temperature > 0.0) {
            return Err(Error::Config("policy temperature must be positive".into()));
        }
        let mut dims = vec![input_dim];
        dims.extend_from_slice(hidden);
        dims.push(space.len() + space.iter().sum::<usize>());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let network = MlpParams::new(&dims, Activation::Relu, &mut rng)?;
        Ok(Self {
            network,
            temperature,
            space,
        })
    }

    pub fn for_device(hidden: &[usize], temperature: f64, seed: u64) -> Result<Self> {
        Self::new(STATE_DIM, hidden, device_action_space(), temperature, seed)
    }

    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        if self.network.out_dim() != self.space.len() + self.space.iter().sum::<usize>() {
            return Err(Error::Shape("policy output width does not match its action space".into()));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::Config("policy temperature must be positive".into()));
        }
        Ok(())
    }

    fn blocks(&self) -> Vec<(usize, usize)> {
        let mut out = vec![(0, self.space.len())];
        let mut off = self.space.len();
        for &n in &self.space {
            out.push((off, n));
            off += n;
        }
        out
    }

    fn dist_from_logits(&self, logits: &[f64]) -> FactoredDist {
        let blocks = self.blocks();
        let lp = |(o, n): (usize, usize)| -> Vec<f64> {
            log_softmax(&logits[o..o + n], self.temperature).into_iter().map(f64::exp).collect()
        };
        FactoredDist {
            kind: lp(blocks[0]),
            comps: blocks[1..].iter().map(|&b| lp(b)).collect(),
        }
    }

    pub fn distribution(&self, s_features: &[f64]) -> Result<FactoredDist> {
        Ok(self.dist_from_logits(&self.network.predict(s_features)?))
    }

    pub fn check_action(&self, a: ActionIdx) -> Result<()> {
        match self.space.get(a.kind) {
            Some(&n) if a.comp < n => Ok(()),
            _ => Err(Error::Invalid(format!("action {a:?} outside the policy's action space"))),
        }
    }

    /// Accumulates `−weight·∇ log π(a|s)` into `grads` and returns `log π(a|s)`.
    fn accumulate_nll(&self, input: &[f64], a: ActionIdx, weight: f64, grads: &mut GradBundle) -> Result<f64> {
        let (logits, cache) = self.network.forward(input)?;
        let blocks = self.blocks();
        let mut dlogits = vec![0.0; logits.len()];
        let mut logp = 0.0;
        for (block, target) in [(blocks[0], a.kind), (blocks[1 + a.kind], a.comp)] {
            let (o, n) = block;
            let lp = log_softmax(&logits[o..o + n], self.temperature);
            logp += lp[target];
            for (i, l) in lp.iter().enumerate() {
                let onehot = if i == target { 1.0 } else { 0.0 };
                dlogits[o + i] = -weight * (onehot - l.exp()) / self.temperature;
            }
        }
        if weight != 0.0 {
            self.network.backward_into(&cache, &dlogits, grads)?;
        }
        Ok(logp)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(POLICY_CHECKPOINT, self, path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let p: Self = checkpoint::load(POLICY_CHECKPOINT, path)?;
        p.validate()?;
        Ok(p)
    }
}

/// `Σ` of kind and component log-probabilities.
pub fn log_prob(policy: &PolicyParams, s_features: &[f64], a: ActionIdx) -> Result<f64> {
    policy.check_action(a)?;
    Ok(policy.distribution(s_features)?.log_prob(a))
}

/// Weighted negative log-likelihood, averaged over the batch, and its gradient.
pub fn weighted_nll(policy: &PolicyParams, batch: &[(&[f64], ActionIdx, f64)]) -> Result<GradBundle> {
    let mut g = GradBundle::zeros_like(&policy.network);
    let n = batch.len().max(1) as f64;
    let mut loss = 0.0;
    for &(x, a, w) in batch {
        policy.check_action(a)?;
        loss -= w * policy.accumulate_nll(x, a, w / n, &mut g)?;
    }
    g.loss = loss / n;
    if !g.loss.is_finite() {
        return Err(Error::NonFinite("actor loss".into()));
    }
    Ok(g)
}

/// Mean `KL(policy ‖ reference)` over the given states.
pub fn policy_kl(policy: &PolicyParams, reference: &PolicyParams, states: &[Arc<Vec<f64>>]) -> Result<f64> {
    if policy.space != reference.space {
        return Err(Error::Shape("KL between policies over different action spaces".into()));
    }
    if states.is_empty() {
        return Ok(0.0);
    }
    let kls = states
        .par_iter()
        .map(|s| Ok(policy.distribution(s)?.kl(&reference.distribution(s)?)))
        .collect::<Result<Vec<f64>>>()?;
    Ok(kls.iter().sum::<f64>() / kls.len() as f64)
}

/// Actor-side view of a dataset: state inputs, executed actions and stored candidates.
#[derive(Debug, Clone, PartialEq)]
pub struct ActorData {
    pub inputs: Vec<Arc<Vec<f64>>>,
    pub actions: Vec<ActionIdx>,
    pub candidates: Vec<Vec<ActionIdx>>,
}

impl ActorData {
    pub fn from_dataset(dataset: &Dataset) -> Self {
        let ts: Vec<_> = dataset.transitions().collect();
        let inputs = ts.par_iter().map(|t| Arc::new(extract_s_features(&t.s).values)).collect();
        Self {
            inputs,
            actions: ts.iter().map(|t| ActionIdx::from(&t.a)).collect(),
            candidates: ts
                .iter()
                .map(|t| t.candidates.iter().map(ActionIdx::from).collect())
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

/// Critic outputs the extraction operators need, evaluated once with the online heads.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateValues {
    /// `Q(s, a_i)` per stored candidate.
    pub q: Vec<Vec<f64>>,
    pub v: Vec<f64>,
    /// `Q(s, a)` of the executed action.
    pub q_exec: Vec<f64>,
}

impl CandidateValues {
    pub fn compute(critic: &CriticState, data: &CriticData) -> Result<Self> {
        let rows = data
            .samples
            .par_iter()
            .map(|s| {
                let mut q = Vec::with_capacity(s.candidates.len());
                for (j, c) in s.candidates.iter().enumerate() {
                    match s.candidates[..j].iter().position(|d| Arc::ptr_eq(d, c)) {
                        Some(p) => q.push(q[p]),
                        None => q.push(critic.q(c)?),
                    }
                }
                Ok((q, critic.v(&s.f_s)?, critic.q(&s.f_sa)?))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut out = Self {
            q: Vec::with_capacity(rows.len()),
            v: Vec::with_capacity(rows.len()),
            q_exec: Vec::with_capacity(rows.len()),
        };
        for (q, v, qe) in rows {
            out.q.push(q);
            out.v.push(v);
            out.q_exec.push(qe);
        }
        Ok(out)
    }

    pub fn advantages(&self) -> Vec<f64> {
        self.q_exec.iter().zip(&self.v).map(|(q, v)| q - v).collect()
    }
}

/// Index of the Q-argmax (lowest index on ties) if its advantage exceeds `threshold`.
pub fn select_best(q: &[f64], v: f64, threshold: f64) -> Option<usize> {
    if q.is_empty() {
        return None;
    }
    let best = argmax(q);
    (q[best] - v > threshold).then_some(best)
}

/// Best-of-N selection among `candidates` at observation `s`.
pub fn bon_select(
    critic: &CriticState,
    s: &Observation,
    candidates: &[Action],
    featurizer: &FeaturizerParams,
    threshold: f64,
) -> Result<Option<Action>> {
    if candidates.is_empty() {
        return Err(Error::Invalid("best-of-N selection over no candidates".into()));
    }
    let f_s = extract_s_features(s).values;
    let q = candidates
        .iter()
        .map(|a| critic.q(&featurizer.sa_features_from(&f_s, a)?.values))
        .collect::<Result<Vec<f64>>>()?;
    Ok(select_best(&q, critic.v(&f_s)?, threshold).map(|i| candidates[i]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ActorConfig {
    pub hidden: Vec<usize>,
    pub temperature: f64,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub grad_clip: f64,
}

impl Default for ActorConfig {
    fn default() -> Self {
        Self {
            hidden: vec![128],
            temperature: 1.0,
            epochs: 30,
            lr: 1e-3,
            batch_size: 128,
            grad_clip: 0.01,
        }
    }
}

impl ActorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden.contains(&0) || self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("actor widths, epochs and batch size must be positive".into()));
        }
        if !(self.lr > 0.0) || !(self.grad_clip > 0.0) || !(self.temperature > 0.0) {
            return Err(Error::Config("actor lr, grad clip and temperature must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExtractionConfig {
    /// Candidates drawn per state per epoch.
    pub n: usize,
    /// Minimum advantage for a selection to be imitated.
    pub threshold: f64,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub grad_clip: f64,
    pub awr_beta: f64,
    pub awr_cap: f64,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        Self {
            n: 16,
            threshold: 0.0,
            epochs: 30,
            lr: 1e-4,
            batch_size: 128,
            grad_clip: 0.01,
            awr_beta: 1.0,
            awr_cap: 20.0,
        }
    }
}

impl ExtractionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("N, epochs and batch size must be positive".into()));
        }
        if !self.threshold.is_finite() && self.threshold != f64::NEG_INFINITY {
            return Err(Error::Config("advantage threshold must be finite or -inf".into()));
        }
        if !(self.lr > 0.0) || !(self.grad_clip > 0.0) || !(self.awr_beta > 0.0) || !(self.awr_cap > 0.0) {
            return Err(Error::Config("extraction lr, grad clip, AWR beta and cap must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyLogRow {
    pub epoch: usize,
    pub loss: f64,
    /// Fraction of states that contributed a target this epoch.
    pub selected_frac: f64,
    /// Mean KL to the reference policy (`NaN` when none was given).
    pub kl_reference: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyRun {
    pub policy: PolicyParams,
    pub log: Vec<PolicyLogRow>,
    pub compute: ComputeRecord,
}

pub fn write_log(rows: &[PolicyLogRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

struct Optim<'a> {
    lr: f64,
    batch_size: usize,
    grad_clip: f64,
    reference: Option<&'a PolicyParams>,
    stage: &'a str,
}

/// Shared loop: each epoch asks `targets` for weighted (state, action) pairs, then runs
/// shuffled minibatch steps on the weighted negative log-likelihood.
fn fit<F>(init: &PolicyParams, data: &ActorData, epochs: usize, opt: Optim<'_>, seed: u64, mut targets: F) -> Result<PolicyRun>
where
    F: FnMut(usize, &mut ChaCha8Rng) -> Vec<(usize, ActionIdx, f64)>,
{
    let mut policy = init.clone();
    let mut adam = OptimizerState::new(&policy.network);
    let mut rec = ComputeRecord::new(opt.stage, "actor", &policy.network);
    let mut log = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(substream(seed, epoch as u64));
        let mut items = targets(epoch, &mut rng);
        let selected_frac = items.len() as f64 / data.len().max(1) as f64;
        items.shuffle(&mut rng);
        let mut loss = 0.0;
        let mut steps = 0;
        for chunk in items.chunks(opt.batch_size) {
            let batch: Vec<(&[f64], ActionIdx, f64)> =
                chunk.iter().map(|&(i, a, w)| (data.inputs[i].as_slice(), a, w)).collect();
            let mut g = weighted_nll(&policy, &batch)?;
            loss += g.loss;
            steps += 1;
            clip_grad_norm(&mut g, opt.grad_clip);
            adam.step(&mut policy.network, &g, opt.lr)?;
            rec.forwards += chunk.len() as u64;
            rec.backwards += chunk.len() as u64;
        }
        let kl_reference = match opt.reference {
            Some(r) => policy_kl(&policy, r, &data.inputs)?,
            None => f64::NAN,
        };
        log.push(PolicyLogRow {
            epoch,
            loss: if steps > 0 { loss / steps as f64 } else { 0.0 },
            selected_frac,
            kl_reference,
        });
    }
    Ok(PolicyRun {
        policy,
        log,
        compute: rec,
    })
}

/// Maximizes the log-likelihood of the executed actions; returns π_β.
pub fn behavior_clone(data: &ActorData, space: Vec<usize>, cfg: &ActorConfig, seed: u64) -> Result<PolicyRun> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Invalid("behavior cloning on an empty dataset".into()));
    }
    let input_dim = data.inputs[0].len();
    let init = PolicyParams::new(input_dim, &cfg.hidden, space, cfg.temperature, seed)?;
    let opt = Optim {
        lr: cfg.lr,
        batch_size: cfg.batch_size,
        grad_clip: cfg.grad_clip,
        reference: None,
        stage: "behavior_clone",
    };
    fit(&init, data, cfg.epochs, opt, seed, |_, _| {
        data.actions.iter().enumerate().map(|(i, &a)| (i, a, 1.0)).collect()
    })
}

fn extraction_opt<'a>(cfg: &ExtractionConfig, reference: Option<&'a PolicyParams>, stage: &'a str) -> Optim<'a> {
    Optim {
        lr: cfg.lr,
        batch_size: cfg.batch_size,
        grad_clip: cfg.grad_clip,
        reference,
        stage,
    }
}

fn check_aligned(data: &ActorData, values: &CandidateValues) -> Result<()> {
    if values.v.len() != data.len() || values.q.len() != data.len() || values.q_exec.len() != data.len() {
        return Err(Error::Shape(format!(
            "critic values for {} states but {} actor states",
            values.v.len(),
            data.len()
        )));
    }
    Ok(())
}

/// Per state and epoch, draws `N` of the stored candidates, keeps the Q-argmax if its
/// advantage clears the threshold and imitates it with unit weight.
pub fn bon_train(
    policy: &PolicyParams,
    data: &ActorData,
    values: &CandidateValues,
    cfg: &ExtractionConfig,
    seed: u64,
    reference: Option<&PolicyParams>,
) -> Result<PolicyRun> {
    cfg.validate()?;
    check_aligned(data, values)?;
    for (i, c) in data.candidates.iter().enumerate() {
        if c.len() < cfg.n {
            return Err(Error::Invalid(format!(
                "N = {} exceeds the {} candidates stored for state {i}",
                cfg.n,
                c.len()
            )));
        }
        if values.q[i].len() != c.len() {
            return Err(Error::Shape(format!("state {i}: candidate values misaligned")));
        }
    }
    fit(policy, data, cfg.epochs, extraction_opt(cfg, reference, "bon"), seed, |_, rng| {
        let mut out = Vec::new();
        for i in 0..data.len() {
            let mut drawn = sample(rng, data.candidates[i].len(), cfg.n).into_vec();
            drawn.sort_unstable();
            let q: Vec<f64> = drawn.iter().map(|&j| values.q[i][j]).collect();
            if let Some(b) = select_best(&q, values.v[i], cfg.threshold) {
                out.push((i, data.candidates[i][drawn[b]], 1.0));
            }
        }
        out
    })
}

pub fn awr_weight(advantage: f64, beta: f64, cap: f64) -> f64 {
    (advantage / beta).exp().min(cap)
}

/// Executed actions weighted by `min(exp(A/β), cap)`.
pub fn awr_train(
    policy: &PolicyParams,
    data: &ActorData,
    values: &CandidateValues,
    cfg: &ExtractionConfig,
    seed: u64,
    reference: Option<&PolicyParams>,
) -> Result<PolicyRun> {
    cfg.validate()?;
    check_aligned(data, values)?;
    let items: Vec<(usize, ActionIdx, f64)> = values
        .advantages()
        .into_iter()
        .enumerate()
        .map(|(i, a)| (i, data.actions[i], awr_weight(a, cfg.awr_beta, cfg.awr_cap)))
        .collect();
    fit(policy, data, cfg.epochs, extraction_opt(cfg, reference, "awr"), seed, |_, _| items.clone())
}

/// Policy gradient `A·∇log π(a|s)` on executed actions; negative advantages push
/// probability down.
pub fn reinforce_train(
    policy: &PolicyParams,
    data: &ActorData,
    values: &CandidateValues,
    cfg: &ExtractionConfig,
    seed: u64,
    reference: Option<&PolicyParams>,
) -> Result<PolicyRun> {
    cfg.validate()?;
    check_aligned(data, values)?;
    let items: Vec<(usize, ActionIdx, f64)> = values
        .advantages()
        .into_iter()
        .enumerate()
        .map(|(i, a)| (i, data.actions[i], a))
        .collect();
    fit(policy, data, cfg.epochs, extraction_opt(cfg, reference, "reinforce"), seed, |_, _| items.clone())
}

/// A trained actor acting in the simulator.
#[derive(Debug, Clone)]
pub struct LearnedPolicy {
    pub params: PolicyParams,
    pub name: String,
}

impl LearnedPolicy {
    pub fn new(params: PolicyParams, name: &str) -> Self {
        Self {
            params,
            name: name.into(),
        }
    }

    fn dist(&self, obs: &Observation) -> FactoredDist {
        // the device policy is validated at construction/load; shapes cannot mismatch here
        self.params
            .distribution(&extract_s_features(obs).values)
            .expect("policy input width matches state features")
    }
}

impl ActionPolicy for LearnedPolicy {
    fn sample(&self, obs: &Observation, _task: &Task, rng: &mut dyn RngCore) -> Action {
        let a = self.dist(obs).sample(rng);
        a.to_action().expect("device action space")
    }

    fn greedy(&self, obs: &Observation, _task: &Task) -> Action {
        self.dist(obs).mode().to_action().expect("device action space")
    }

    fn id(&self) -> String {
        self.name.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::minidevice::{default_task_pool, EnvConfig, Expert, NavTarget};
    use crate::tensorcore::{finite_diff_check, Layer};
    use crate::trajstore::{collect_dataset, presample_candidates};

    fn zero_policy(input_dim: usize, space: Vec<usize>) -> PolicyParams {
        let out = space.len() + space.iter().sum::<usize>();
        PolicyParams {
            network: MlpParams::from_layers(vec![Layer::zeros(input_dim, out)], vec![]).unwrap(),
            temperature: 1.0,
            space,
        }
    }

    fn onehot_states(n: usize) -> Vec<Arc<Vec<f64>>> {
        (0..n)
            .map(|i| {
                let mut v = vec![0.0; n];
                v[i] = 1.0;
                Arc::new(v)
            })
            .collect()
    }

    #[test]
    fn uniform_kind_only_space() {
        let p = zero_policy(2, vec![1, 1, 1, 1]);
        let lp = log_prob(&p, &[0.3, -0.2], ActionIdx { kind: 2, comp: 0 }).unwrap();
        assert!((lp - 0.25f64.ln()).abs() < 1e-15);
        assert!(lp <= 0.0);
    }

    #[test]
    fn probabilities_normalize() {
        let p = PolicyParams::new(3, &[5], vec![4, 2, 3], 0.7, 1).unwrap();
        let x = [0.2, -0.4, 0.9];
        let mut total = 0.0;
        for (k, &n) in p.space.iter().enumerate() {
            for c in 0..n {
                total += log_prob(&p, &x, ActionIdx { kind: k, comp: c }).unwrap().exp();
            }
        }
        assert!((total - 1.0).abs() < 1e-12);
        assert!(log_prob(&p, &x, ActionIdx { kind: 1, comp: 2 }).is_err());
    }

    #[test]
    fn low_temperature_concentrates_on_argmax() {
        let mut p = PolicyParams::new(3, &[5], vec![4, 2, 3], 1.0, 2).unwrap();
        let x = [0.2, -0.4, 0.9];
        let peak = |d: &FactoredDist| {
            let mut v = vec![d.kind.iter().cloned().fold(0.0, f64::max)];
            v.extend(d.comps.iter().map(|c| c.iter().cloned().fold(0.0, f64::max)));
            v
        };
        let mut last = vec![0.0; 4];
        for t in [1.0, 0.3, 0.1, 0.01, 0.001] {
            p.temperature = t;
            let now = peak(&p.distribution(&x).unwrap());
            assert!(now.iter().zip(&last).all(|(a, b)| a >= b));
            last = now;
        }
        assert!(last.iter().all(|&m| m > 0.999), "{last:?}");
    }

    #[test]
    fn nll_gradient_matches_finite_differences() {
        let p = PolicyParams::new(4, &[6], vec![5, 3, 2], 0.8, 3).unwrap();
        let xs: Vec<Vec<f64>> = (0..5).map(|i| (0..4).map(|j| ((i * 5 + j * 3) % 7) as f64 / 3.0 - 1.0).collect()).collect();
        let acts = [(0, 4), (1, 1), (2, 0), (0, 2), (1, 2)];
        let weights = [1.0, 0.5, -0.7, 2.0, 1.0];
        let batch: Vec<(&[f64], ActionIdx, f64)> = (0..5)
            .map(|i| (xs[i].as_slice(), ActionIdx { kind: acts[i].0, comp: acts[i].1 }, weights[i]))
            .collect();
        let g = weighted_nll(&p, &batch).unwrap();
        let mut probe = p.clone();
        let err = finite_diff_check(
            |v| {
                probe.network.set_flat(v).unwrap();
                weighted_nll(&probe, &batch).unwrap().loss
            },
            &p.network.flat(),
            &g.flat(),
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn kl_properties() {
        let a = PolicyParams::new(3, &[4], vec![3, 2], 1.0, 5).unwrap();
        let b = PolicyParams::new(3, &[4], vec![3, 2], 1.0, 6).unwrap();
        let states: Vec<Arc<Vec<f64>>> = (0..20).map(|i| Arc::new(vec![i as f64 / 10.0, -1.0, 0.5])).collect();
        assert_eq!(policy_kl(&a, &a, &states).unwrap(), 0.0);
        assert!(policy_kl(&a, &b, &states).unwrap() > 0.0);
        assert!(policy_kl(&b, &a, &states).unwrap() > 0.0);
    }

    fn single_state(candidates: Vec<ActionIdx>, action: ActionIdx) -> ActorData {
        ActorData {
            inputs: vec![Arc::new(vec![1.0])],
            actions: vec![action],
            candidates: vec![candidates],
        }
    }

    #[test]
    fn cloning_one_transition_raises_its_probability_each_epoch() {
        let a = ActionIdx { kind: 1, comp: 1 };
        let data = single_state(vec![], a);
        let cfg = ActorConfig {
            hidden: vec![4],
            epochs: 1,
            ..ActorConfig::default()
        };
        let mut last = f64::NEG_INFINITY;
        let mut p = behavior_clone(&data, vec![3, 2], &cfg, 0).unwrap().policy;
        for e in 0..10 {
            let lp = log_prob(&p, &data.inputs[0], a).unwrap();
            assert!(lp > last, "epoch {e}");
            last = lp;
            let opt = Optim {
                lr: cfg.lr,
                batch_size: 1,
                grad_clip: cfg.grad_clip,
                reference: None,
                stage: "bc",
            };
            p = fit(&p, &data, 1, opt, e, |_, _| vec![(0, a, 1.0)]).unwrap().policy;
        }
    }

    #[test]
    fn cloned_expert_matches_on_seen_states() {
        let env = EnvConfig {
            p_popup: 0.0,
            ..EnvConfig::default()
        };
        let pool = default_task_pool(10);
        let ds = collect_dataset(&env, &pool, &Expert, 64, 1).unwrap();
        let data = ActorData::from_dataset(&ds);
        let cfg = ActorConfig {
            epochs: 60,
            lr: 3e-3,
            grad_clip: 1.0,
            batch_size: 32,
            ..ActorConfig::default()
        };
        let run = behavior_clone(&data, device_action_space(), &cfg, 0).unwrap();
        let agree = (0..data.len())
            .filter(|&i| run.policy.distribution(&data.inputs[i]).unwrap().mode() == data.actions[i])
            .count();
        assert!(agree as f64 / data.len() as f64 >= 0.95, "{agree}/{}", data.len());
        // KL from the (deterministic) empirical action distribution is −log π(a|s)
        let kl: f64 = (0..data.len())
            .map(|i| -log_prob(&run.policy, &data.inputs[i], data.actions[i]).unwrap())
            .sum::<f64>()
            / data.len() as f64;
        assert!(kl < 0.1, "{kl}");
    }

    #[test]
    fn selection_examples() {
        assert_eq!(select_best(&[0.2, 0.7, 0.5], 0.4, 0.05), Some(1));
        assert_eq!(select_best(&[0.2, 0.7, 0.5], 0.69, 0.05), None);
        assert_eq!(select_best(&[0.7, 0.7, 0.1], 0.0, 0.05), Some(0));
        assert_eq!(select_best(&[0.2, 0.7, 0.5], 10.4, 0.05), None);
        assert_eq!(select_best(&[10.2, 10.7, 10.5], 10.4, 0.05), Some(1));
        assert_eq!(select_best(&[], 0.0, 0.05), None);
    }

    #[test]
    fn bon_select_invariant_to_shared_offsets() {
        use crate::critic::CriticConfig;
        use crate::reprlearn::{ReprConfig, SA_INPUT_DIM};
        let rcfg = ReprConfig {
            feature_dim: 16,
            trunk_hidden: 16,
            head_hidden: 4,
            ..ReprConfig::default()
        };
        let feat = FeaturizerParams::random_frozen(&rcfg, 1).unwrap();
        let ccfg = CriticConfig {
            q_hidden: vec![8],
            v_hidden: vec![8],
            ..CriticConfig::default()
        };
        // f(s, a) = trunk features ⊕ featurizer input
        let mut critic = CriticState::new(16 + SA_INPUT_DIM, STATE_DIM, &ccfg, 2).unwrap();
        let pool = default_task_pool(10);
        let (_, obs) = crate::minidevice::reset(&pool[0], &EnvConfig::default(), 0).unwrap();
        let cands = vec![
            Action::click(3, 4),
            Action::click(7, 5),
            Action::Type { token: 1 },
            Action::Navigate { target: NavTarget::Back },
        ];
        for threshold in [-1.0, 0.0, 0.1] {
            let before = bon_select(&critic, &obs, &cands, &feat, threshold).unwrap();
            let mut shifted = critic.clone();
            shifted.q_head.layers.last_mut().unwrap().bias[0] += 3.5;
            shifted.v_head.layers.last_mut().unwrap().bias[0] += 3.5;
            assert_eq!(bon_select(&shifted, &obs, &cands, &feat, threshold).unwrap(), before);
        }
        critic.q_head.layers.last_mut().unwrap().bias[0] += 100.0;
        assert!(bon_select(&critic, &obs, &cands, &feat, 0.1).unwrap().is_some());
        assert!(bon_select(&critic, &obs, &[], &feat, 0.1).is_err());
    }

    /// One state with five arms; arm rewards are also the exact Q values.
    fn bandit(k: usize, seed: u64) -> (ActorData, CandidateValues, Vec<f64>) {
        let rewards = vec![0.1, 0.9, 0.3, 0.5, 0.0];
        let behavior = [0.3, 0.05, 0.3, 0.15, 0.2];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_states = 4;
        let inputs = onehot_states(n_states);
        let mut data = ActorData {
            inputs,
            actions: vec![],
            candidates: vec![],
        };
        let mut values = CandidateValues {
            q: vec![],
            v: vec![],
            q_exec: vec![],
        };
        let v: f64 = rewards.iter().zip(&behavior).map(|(r, p)| r * p).sum();
        for _ in 0..n_states {
            let draw = |rng: &mut ChaCha8Rng| {
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                for (i, p) in behavior.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        return i;
                    }
                }
                behavior.len() - 1
            };
            let cands: Vec<usize> = (0..k).map(|_| draw(&mut rng)).collect();
            data.actions.push(ActionIdx { kind: 0, comp: cands[0] });
            data.candidates.push(cands.iter().map(|&c| ActionIdx { kind: 0, comp: c }).collect());
            values.q.push(cands.iter().map(|&c| rewards[c]).collect());
            values.v.push(v);
            values.q_exec.push(rewards[cands[0]]);
        }
        (data, values, rewards)
    }

    fn expected_reward(p: &PolicyParams, data: &ActorData, rewards: &[f64]) -> f64 {
        data.inputs
            .iter()
            .map(|x| {
                let d = p.distribution(x).unwrap();
                d.comps[0].iter().zip(rewards).map(|(q, r)| q * r).sum::<f64>()
            })
            .sum::<f64>()
            / data.len() as f64
    }

    #[test]
    fn bandit_reward_non_decreasing_in_n() {
        let (data, values, rewards) = bandit(64, 3);
        let init = zero_policy(data.inputs[0].len(), vec![5]);
        let mut last = f64::NEG_INFINITY;
        for n in [1, 4, 16] {
            let cfg = ExtractionConfig {
                n,
                threshold: 0.0,
                epochs: 300,
                lr: 1e-2,
                grad_clip: 1.0,
                batch_size: 4,
                ..ExtractionConfig::default()
            };
            let run = bon_train(&init, &data, &values, &cfg, 0, None).unwrap();
            let r = expected_reward(&run.policy, &data, &rewards);
            assert!(r >= last - 1e-9, "N={n}: {r} < {last}");
            last = r;
        }
        // well above the behavior policy's value
        assert!(last > values.v[0] + 0.3, "{last}");
    }

    #[test]
    fn zero_advantage_leaves_policy_unchanged() {
        let (data, mut values, _) = bandit(8, 1);
        for (q, v) in values.q.iter_mut().zip(values.v.iter_mut()) {
            q.iter_mut().for_each(|x| *x = 0.25);
            *v = 0.25;
        }
        let init = PolicyParams::new(4, &[3], vec![5], 1.0, 0).unwrap();
        let cfg = ExtractionConfig {
            n: 4,
            epochs: 3,
            threshold: 0.0,
            ..ExtractionConfig::default()
        };
        let run = bon_train(&init, &data, &values, &cfg, 0, None).unwrap();
        assert_eq!(run.policy, init);
        assert!(run.log.iter().all(|r| r.selected_frac == 0.0));
        let too_many = ExtractionConfig { n: 9, ..cfg };
        assert!(bon_train(&init, &data, &values, &too_many, 0, None).is_err());
    }

    #[test]
    fn bon_with_one_candidate_and_open_threshold_is_cloning() {
        let (mut data, values, _) = bandit(1, 4);
        data.actions = data.candidates.iter().map(|c| c[0]).collect();
        let init = PolicyParams::new(4, &[3], vec![5], 1.0, 0).unwrap();
        let cfg = ExtractionConfig {
            n: 1,
            threshold: f64::NEG_INFINITY,
            epochs: 5,
            ..ExtractionConfig::default()
        };
        let bon = bon_train(&init, &data, &values, &cfg, 9, None).unwrap();
        let opt = extraction_opt(&cfg, None, "bon");
        let bc = fit(&init, &data, cfg.epochs, opt, 9, |_, _| {
            data.actions.iter().enumerate().map(|(i, &a)| (i, a, 1.0)).collect()
        })
        .unwrap();
        assert_eq!(bon.policy, bc.policy);
    }

    #[test]
    fn awr_with_zero_advantage_is_cloning() {
        let (data, mut values, _) = bandit(4, 2);
        values.q_exec = values.v.clone();
        let init = PolicyParams::new(4, &[3], vec![5], 1.0, 0).unwrap();
        let cfg = ExtractionConfig {
            epochs: 4,
            ..ExtractionConfig::default()
        };
        let awr = awr_train(&init, &data, &values, &cfg, 1, None).unwrap();
        let bc = fit(&init, &data, cfg.epochs, extraction_opt(&cfg, None, "awr"), 1, |_, _| {
            data.actions.iter().enumerate().map(|(i, &a)| (i, a, 1.0)).collect()
        })
        .unwrap();
        assert_eq!(awr.policy, bc.policy);
        assert_eq!(awr_weight(100.0, 1.0, 20.0), 20.0);
        assert_eq!(awr_weight(0.0, 1.0, 20.0), 1.0);
    }

    #[test]
    fn awr_small_beta_imitates_the_dominant_action() {
        // two samples of the same state, different actions, opposite advantages
        let data = ActorData {
            inputs: vec![Arc::new(vec![1.0]), Arc::new(vec![1.0])],
            actions: vec![ActionIdx { kind: 0, comp: 0 }, ActionIdx { kind: 0, comp: 1 }],
            candidates: vec![vec![], vec![]],
        };
        let values = CandidateValues {
            q: vec![vec![], vec![]],
            v: vec![0.5, 0.5],
            q_exec: vec![1.0, 0.4],
        };
        let init = zero_policy(1, vec![2]);
        let p1 = |beta: f64| {
            let cfg = ExtractionConfig {
                awr_beta: beta,
                awr_cap: 1e12,
                epochs: 200,
                lr: 1e-2,
                grad_clip: 1.0,
                ..ExtractionConfig::default()
            };
            let run = awr_train(&init, &data, &values, &cfg, 0, None).unwrap();
            run.policy.distribution(&[1.0]).unwrap().comps[0][0]
        };
        let (wide, narrow) = (p1(1.0), p1(0.02));
        assert!(narrow > wide);
        assert!(narrow > 0.95, "{narrow}");
    }

    #[test]
    fn reinforce_moves_mass_to_positive_advantage() {
        let data = ActorData {
            inputs: vec![Arc::new(vec![1.0]), Arc::new(vec![1.0])],
            actions: vec![ActionIdx { kind: 0, comp: 0 }, ActionIdx { kind: 0, comp: 1 }],
            candidates: vec![vec![], vec![]],
        };
        let values = CandidateValues {
            q: vec![vec![], vec![]],
            v: vec![0.0, 0.0],
            q_exec: vec![1.0, -1.0],
        };
        let init = zero_policy(1, vec![2]);
        let cfg = ExtractionConfig {
            epochs: 2,
            ..ExtractionConfig::default()
        };
        let run = reinforce_train(&init, &data, &values, &cfg, 0, None).unwrap();
        assert!(run.policy.distribution(&[1.0]).unwrap().comps[0][0] > 0.5);
        // all positive advantages: same direction as weighted cloning
        let pos = CandidateValues {
            q_exec: vec![0.3, 0.6],
            ..values.clone()
        };
        let g_r = weighted_nll(&init, &[(&[1.0][..], data.actions[0], 0.3), (&[1.0][..], data.actions[1], 0.6)]).unwrap();
        let rf = reinforce_train(&init, &data, &pos, &ExtractionConfig { epochs: 1, ..cfg.clone() }, 0, None).unwrap();
        assert!(g_r.loss > 0.0);
        let moved: Vec<f64> = rf.policy.network.flat().iter().zip(init.network.flat()).map(|(a, b)| a - b).collect();
        let dot: f64 = moved.iter().zip(g_r.flat()).map(|(m, g)| m * g).sum();
        assert!(dot < 0.0);
    }

    #[test]
    fn trainers_are_deterministic_and_checkpoint() {
        let pool = default_task_pool(10);
        let env = EnvConfig::default();
        let ds = collect_dataset(&env, &pool, &Expert, 8, 2).unwrap();
        let ds = presample_candidates(&ds, &pool, &Expert, 4, 3).unwrap();
        let data = ActorData::from_dataset(&ds);
        let cfg = ActorConfig {
            hidden: vec![8],
            epochs: 2,
            ..ActorConfig::default()
        };
        let a = behavior_clone(&data, device_action_space(), &cfg, 7).unwrap();
        let b = behavior_clone(&data, device_action_space(), &cfg, 7).unwrap();
        assert_eq!(a.policy, b.policy);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.json");
        a.policy.save(&path).unwrap();
        assert_eq!(PolicyParams::load(&path).unwrap(), a.policy);
        write_log(&a.log, &dir.path().join("log.csv")).unwrap();
        let learned = LearnedPolicy::new(a.policy, "bc");
        let (_, obs) = crate::minidevice::reset(&pool[0], &env, 0).unwrap();
        let act = learned.greedy(&obs, &pool[0]);
        assert_eq!(act, learned.greedy(&obs, &pool[0]));
    }
}
