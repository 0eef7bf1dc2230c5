//! Effect-aware representation learning.
//!
//! Transitions are labeled by whether the next screen differs from the current one by at
//! least ε in pixel space. A trunk MLP over (state context ⊕ action encoding) plus a small
//! classifier head is trained with class-weighted binary cross-entropy on those labels,
//! then frozen; the trunk activations become the state-action features `f(s, a)`.
//! State-only features `f(s)` are a fixed encoding that needs no training.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::minidevice::{
    pixel_distance, task::embed_instruction, task::TASK_EMBED_DIM, Action, Observation, GRID_H,
    GRID_W, N_KINDS, N_NAV, N_TOKENS,
};
use crate::minidevice::screen::{intensity, NUM_CODES};
use crate::tensorcore::{
    checkpoint, clip_grad_norm_joint, Activation, ComputeRecord, GradBundle, MlpParams,
    OptimizerState,
};
use crate::trajstore::{Dataset, Transition};

pub const ACTION_DIM: usize = N_KINDS + 2 + N_TOKENS + N_NAV;
pub const STATE_DIM: usize = GRID_W * GRID_H + NUM_CODES as usize + TASK_EMBED_DIM + 1;
/// One-hot code of the cell under a click target.
pub const GLIMPSE_DIM: usize = NUM_CODES as usize;
/// Width of the featurizer input `s ⊕ encode(a) ⊕ glimpse(s, a)`.
pub const SA_INPUT_DIM: usize = STATE_DIM + ACTION_DIM + GLIMPSE_DIM;
pub const FEATURIZER_CHECKPOINT: &str = "digiq-featurizer";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    StateAction,
    StateOnly,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub kind: FeatureKind,
}

impl FeatureVector {
    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// `y = 1` iff the transition changed the screen by at least ε.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EffectLabel(pub bool);

pub fn label_transition(t: &Transition, epsilon: f64) -> Result<EffectLabel> {
    if !(epsilon > 0.0) {
        return Err(Error::Config(format!("effect threshold must be positive, got {epsilon}")));
    }
    Ok(EffectLabel(pixel_distance(&t.s, &t.s_next)? >= epsilon))
}

/// One-hot kind ⊕ normalized click coordinates ⊕ one-hot token ⊕ one-hot navigation target.
pub fn encode_action(a: &Action) -> [f64; ACTION_DIM] {
    let mut v = [0.0; ACTION_DIM];
    v[a.kind().index()] = 1.0;
    match *a {
        Action::Click { x, y } => {
            v[N_KINDS] = (x as f64 + 0.5) / GRID_W as f64;
            v[N_KINDS + 1] = (y as f64 + 0.5) / GRID_H as f64;
        }
        Action::Type { token } => v[N_KINDS + 2 + token as usize] = 1.0,
        Action::Navigate { target } => v[N_KINDS + 2 + N_TOKENS + target.index()] = 1.0,
    }
    v
}

/// Recovers the action kind from the one-hot slots of an encoding.
pub fn decode_kind(encoding: &[f64]) -> Option<crate::minidevice::ActionKind> {
    let idx = (0..N_KINDS).find(|&i| encoding.get(i) == Some(&1.0))?;
    crate::minidevice::ActionKind::from_index(idx)
}

/// Cell-pooled pixel intensities ⊕ widget-code histogram ⊕ instruction embedding ⊕
/// elapsed fraction of the step budget. Independent of any trained parameters.
pub fn extract_s_features(obs: &Observation) -> FeatureVector {
    let mut values = Vec::with_capacity(STATE_DIM);
    values.extend(obs.cells.iter().map(|&c| intensity(c)));
    let mut hist = [0.0; NUM_CODES as usize];
    for &c in &obs.cells {
        hist[c as usize] += 1.0;
    }
    let n = obs.cells.len().max(1) as f64;
    values.extend(hist.iter().map(|h| (h / n).sqrt()));
    values.extend_from_slice(&embed_instruction(&obs.task_text));
    values.push(obs.step as f64 / obs.horizon.max(1) as f64);
    FeatureVector {
        values,
        kind: FeatureKind::StateOnly,
    }
}

/// What the screen shows under the action's target: the one-hot code of the clicked cell,
/// zero for non-click actions. Plays the role of the cursor drawn on click prompts.
pub fn glimpse(s_features: &[f64], a: &Action) -> [f64; GLIMPSE_DIM] {
    let mut g = [0.0; GLIMPSE_DIM];
    if let Action::Click { x, y } = *a {
        let v = s_features[y as usize * GRID_W + x as usize];
        let code = (v * (GLIMPSE_DIM - 1) as f64).round() as usize;
        g[code.min(GLIMPSE_DIM - 1)] = 1.0;
    }
    g
}

pub fn effect_input(s_features: &[f64], a: &Action) -> Vec<f64> {
    let mut x = Vec::with_capacity(SA_INPUT_DIM);
    x.extend_from_slice(s_features);
    x.extend_from_slice(&encode_action(a));
    x.extend_from_slice(&glimpse(s_features, a));
    x
}

/// Which activations serve as `f(s, a)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureLayer {
    /// Rectified trunk output (dimension D).
    #[default]
    Trunk,
    /// Hidden layer of the classifier head.
    HeadHidden,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReprConfig {
    pub feature_dim: usize,
    pub trunk_hidden: usize,
    pub head_hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub grad_clip: f64,
    pub val_frac: f64,
    pub test_frac: f64,
    pub feature_layer: FeatureLayer,
}

impl Default for ReprConfig {
    fn default() -> Self {
        Self {
            feature_dim: 128,
            trunk_hidden: 128,
            head_hidden: 32,
            epochs: 30,
            batch_size: 128,
            lr: 1e-3,
            grad_clip: 0.01,
            val_frac: 0.1,
            test_frac: 0.2,
            feature_layer: FeatureLayer::Trunk,
        }
    }
}

impl ReprConfig {
    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 || self.trunk_hidden == 0 || self.head_hidden == 0 {
            return Err(Error::Config("featurizer widths must be positive".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("featurizer epochs and batch size must be positive".into()));
        }
        if !(self.lr > 0.0) || !(self.grad_clip > 0.0) {
            return Err(Error::Config("featurizer lr and grad clip must be positive".into()));
        }
        if !(self.val_frac > 0.0 && self.test_frac > 0.0 && self.val_frac + self.test_frac < 0.9) {
            return Err(Error::Config("featurizer split fractions out of range".into()));
        }
        Ok(())
    }
}

/// Trunk and classifier head; `frozen` forbids further updates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeaturizerParams {
    pub trunk: MlpParams,
    pub head: MlpParams,
    pub feature_layer: FeatureLayer,
    frozen: bool,
}

struct EffectCache {
    trunk: crate::tensorcore::ForwardCache,
    trunk_out: Vec<f64>,
    head: crate::tensorcore::ForwardCache,
}

impl FeaturizerParams {
    pub fn new(input_dim: usize, cfg: &ReprConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let trunk = MlpParams::new(
            &[input_dim, cfg.trunk_hidden, cfg.feature_dim],
            Activation::Relu,
            &mut rng,
        )?;
        let head = MlpParams::new(&[cfg.feature_dim, cfg.head_hidden, 1], Activation::Relu, &mut rng)?;
        Ok(Self {
            trunk,
            head,
            feature_layer: cfg.feature_layer,
            frozen: false,
        })
    }

    /// An untrained, frozen featurizer (the no-fine-tuning control).
    pub fn random_frozen(cfg: &ReprConfig, seed: u64) -> Result<Self> {
        Ok(Self::new(SA_INPUT_DIM, cfg, seed)?.freeze())
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    /// Idempotent.
    pub fn freeze(mut self) -> Self {
        self.frozen = true;
        self
    }

    pub fn feature_dim(&self) -> usize {
        match self.feature_layer {
            FeatureLayer::Trunk => self.trunk.out_dim(),
            FeatureLayer::HeadHidden => self.head.layers[0].out_dim,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.trunk.in_dim()
    }

    fn forward(&self, x: &[f64]) -> Result<(f64, EffectCache)> {
        let (mut z, trunk) = self.trunk.forward(x)?;
        z.iter_mut().for_each(|v| *v = v.max(0.0));
        let (logit, head) = self.head.forward(&z)?;
        Ok((
            logit[0],
            EffectCache {
                trunk,
                trunk_out: z,
                head,
            },
        ))
    }

    pub fn logit(&self, x: &[f64]) -> Result<f64> {
        Ok(self.forward(x)?.0)
    }

    /// Backprop of `dloss/dlogit` through head and trunk, accumulating into the bundles.
    fn backward(
        &self,
        cache: &EffectCache,
        dlogit: f64,
        g_trunk: &mut GradBundle,
        g_head: &mut GradBundle,
    ) -> Result<()> {
        let mut dh = self.head.backward_into(&cache.head, &[dlogit], g_head)?;
        for (d, &h) in dh.iter_mut().zip(&cache.trunk_out) {
            if h <= 0.0 {
                *d = 0.0;
            }
        }
        self.trunk.backward_into(&cache.trunk, &dh, g_trunk)?;
        Ok(())
    }

    /// Adam update of trunk and head; refused once frozen.
    pub fn apply_gradients(
        &mut self,
        g_trunk: &GradBundle,
        g_head: &GradBundle,
        opt_trunk: &mut OptimizerState,
        opt_head: &mut OptimizerState,
        lr: f64,
    ) -> Result<()> {
        if self.frozen {
            return Err(Error::Contract("gradient update on a frozen featurizer".into()));
        }
        opt_trunk.step(&mut self.trunk, g_trunk, lr)?;
        opt_head.step(&mut self.head, g_head, lr)
    }

    fn features_unchecked(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut z = self.trunk.predict(x)?;
        z.iter_mut().for_each(|v| *v = v.max(0.0));
        match self.feature_layer {
            FeatureLayer::Trunk => Ok(z),
            FeatureLayer::HeadHidden => {
                let l = &self.head.layers[0];
                let mut h = vec![0.0; l.out_dim];
                for (o, hv) in h.iter_mut().enumerate() {
                    let row = &l.weights[o * l.in_dim..(o + 1) * l.in_dim];
                    *hv = (l.bias[o] + row.iter().zip(&z).map(|(w, x)| w * x).sum::<f64>()).max(0.0);
                }
                Ok(h)
            }
        }
    }

    /// `f(s, a)` from precomputed state features.
    pub fn sa_features_from(&self, s_features: &[f64], a: &Action) -> Result<FeatureVector> {
        if !self.frozen {
            return Err(Error::Contract(
                "state-action features requested from an unfrozen featurizer".into(),
            ));
        }
        let x = effect_input(s_features, a);
        let mut values = self.features_unchecked(&x)?;
        values.extend_from_slice(&x);
        Ok(FeatureVector {
            values,
            kind: FeatureKind::StateAction,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(FEATURIZER_CHECKPOINT, self, path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let p: Self = checkpoint::load(FEATURIZER_CHECKPOINT, path)?;
        p.trunk.validate()?;
        p.head.validate()?;
        Ok(p)
    }

    pub fn fingerprint(&self) -> String {
        crate::util::sha256_hex(checkpoint::to_string(FEATURIZER_CHECKPOINT, self).unwrap_or_default().as_bytes())
    }
}

/// `f(s, a) = trunk(s ⊕ encode(a))`; requires frozen parameters.
pub fn extract_sa_features(params: &FeaturizerParams, s: &Observation, a: &Action) -> Result<FeatureVector> {
    params.sa_features_from(&extract_s_features(s).values, a)
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable `−[y log σ(z) + (1−y) log(1−σ(z))]`.
fn bce_with_logit(z: f64, y: bool) -> f64 {
    let softplus = |t: f64| if t > 0.0 { t + (-t).exp().ln_1p() } else { t.exp().ln_1p() };
    if y {
        softplus(-z)
    } else {
        softplus(z)
    }
}

#[derive(Debug, Clone)]
pub struct EffectSample {
    pub input: Vec<f64>,
    pub label: bool,
}

/// Weighted mean BCE over a batch and its gradients for trunk and head.
pub fn bce_batch(
    params: &FeaturizerParams,
    batch: &[&EffectSample],
    class_weights: [f64; 2],
) -> Result<(f64, GradBundle, GradBundle)> {
    let mut g_trunk = GradBundle::zeros_like(&params.trunk);
    let mut g_head = GradBundle::zeros_like(&params.head);
    let n = batch.len() as f64;
    let mut loss = 0.0;
    for s in batch {
        let (z, cache) = params.forward(&s.input)?;
        let w = class_weights[usize::from(s.label)];
        loss += w * bce_with_logit(z, s.label);
        let dz = w * (sigmoid(z) - f64::from(u8::from(s.label))) / n;
        params.backward(&cache, dz, &mut g_trunk, &mut g_head)?;
    }
    loss /= n;
    if !loss.is_finite() {
        return Err(Error::NonFinite("effect-classifier loss".into()));
    }
    g_trunk.loss = loss;
    g_head.loss = loss;
    Ok((loss, g_trunk, g_head))
}

/// Labeled (state ⊕ action) examples from every transition of a dataset.
pub fn effect_samples(dataset: &Dataset, epsilon: f64) -> Result<Vec<EffectSample>> {
    dataset
        .transitions()
        .map(|t| {
            let y = label_transition(t, epsilon)?;
            Ok(EffectSample {
                input: effect_input(&extract_s_features(&t.s).values, &t.a),
                label: y.0,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectReport {
    pub train_size: usize,
    pub test_size: usize,
    pub positive_rate: f64,
    /// Accuracy of always predicting the training majority class on the held-out split.
    pub majority_rate: f64,
    pub test_accuracy: f64,
    pub best_epoch: usize,
    pub val_losses: Vec<f64>,
    pub compute: Vec<ComputeRecord>,
}

impl EffectReport {
    /// Placeholder for runs that reuse a featurizer instead of training one.
    pub fn skipped() -> Self {
        Self {
            train_size: 0,
            test_size: 0,
            positive_rate: f64::NAN,
            majority_rate: f64::NAN,
            test_accuracy: f64::NAN,
            best_epoch: 0,
            val_losses: Vec::new(),
            compute: Vec::new(),
        }
    }
}

/// Trains trunk + head with class-weighted BCE, keeping the parameters with the lowest
/// validation loss. Returns frozen parameters and a held-out report.
pub fn train_effect_classifier(
    samples: &[EffectSample],
    cfg: &ReprConfig,
    seed: u64,
) -> Result<(FeaturizerParams, EffectReport)> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::Invalid("no samples for the effect classifier".into()));
    }
    let input_dim = samples[0].input.len();
    if samples.iter().any(|s| s.input.len() != input_dim) {
        return Err(Error::Shape("effect samples have inconsistent input widths".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut rng);
    let n_test = ((samples.len() as f64) * cfg.test_frac).round().max(1.0) as usize;
    let n_val = ((samples.len() as f64) * cfg.val_frac).round().max(1.0) as usize;
    if n_test + n_val >= samples.len() {
        return Err(Error::Invalid(format!("{} samples are too few to split", samples.len())));
    }
    let test: Vec<&EffectSample> = order[..n_test].iter().map(|&i| &samples[i]).collect();
    let val: Vec<&EffectSample> = order[n_test..n_test + n_val].iter().map(|&i| &samples[i]).collect();
    let train: Vec<&EffectSample> = order[n_test + n_val..].iter().map(|&i| &samples[i]).collect();

    let n_pos = train.iter().filter(|s| s.label).count();
    let n_neg = train.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Invalid(format!(
            "effect labels are single-class ({n_pos} positive, {n_neg} negative); nothing to learn"
        )));
    }
    let n = train.len() as f64;
    let weights = [n / (2.0 * n_neg as f64), n / (2.0 * n_pos as f64)];
    let log_prior_odds = (n_pos as f64 / n_neg as f64).ln();

    let mut params = FeaturizerParams::new(input_dim, cfg, seed ^ 0x5eed)?;
    let mut opt_t = OptimizerState::new(&params.trunk);
    let mut opt_h = OptimizerState::new(&params.head);
    let mut rec_t = ComputeRecord::new("featurizer", "trunk", &params.trunk);
    let mut rec_h = ComputeRecord::new("featurizer", "head", &params.head);

    let val_loss = |p: &FeaturizerParams| -> Result<f64> { Ok(bce_batch(p, &val, weights)?.0) };
    let mut best = (val_loss(&params)?, params.clone(), 0usize);
    let mut val_losses = vec![best.0];
    let mut idx: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=cfg.epochs {
        idx.shuffle(&mut rng);
        for chunk in idx.chunks(cfg.batch_size) {
            let batch: Vec<&EffectSample> = chunk.iter().map(|&i| train[i]).collect();
            let (_, mut gt, mut gh) = bce_batch(&params, &batch, weights)?;
            clip_grad_norm_joint(&mut [&mut gt, &mut gh], cfg.grad_clip);
            params.apply_gradients(&gt, &gh, &mut opt_t, &mut opt_h, cfg.lr)?;
            let b = batch.len() as u64;
            rec_t.forwards += b;
            rec_t.backwards += b;
            rec_h.forwards += b;
            rec_h.backwards += b;
        }
        let vl = val_loss(&params)?;
        val_losses.push(vl);
        if vl < best.0 {
            best = (vl, params.clone(), epoch);
        }
    }
    let (_, params, best_epoch) = best;
    let correct = test
        .iter()
        .map(|s| Ok(((params.logit(&s.input)? + log_prior_odds) > 0.0) == s.label))
        .collect::<Result<Vec<bool>>>()?
        .into_iter()
        .filter(|c| *c)
        .count();
    let majority_label = n_pos >= n_neg;
    let majority = test.iter().filter(|s| s.label == majority_label).count();
    let report = EffectReport {
        train_size: train.len(),
        test_size: test.len(),
        positive_rate: n_pos as f64 / n,
        majority_rate: majority as f64 / test.len() as f64,
        test_accuracy: correct as f64 / test.len() as f64,
        best_epoch,
        val_losses,
        compute: vec![rec_t, rec_h],
    };
    Ok((params.freeze(), report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::minidevice::{self, default_task_pool, EnvConfig, FlawedExpert, NavTarget, Screen};
    use crate::tensorcore::finite_diff_check;
    use crate::trajstore::collect_dataset;

    fn obs(screen: Screen) -> Observation {
        Observation {
            screen,
            cells: screen.render_cells(),
            popup: None,
            task_id: 0,
            task_text: "Open bazaar and search for lamp".into(),
            step: 0,
            horizon: 10,
            prev_action: None,
        }
    }

    fn transition(s: Screen, s_next: Screen) -> Transition {
        Transition {
            s: obs(s),
            a: Action::click(0, 0),
            r: 0,
            s_next: obs(s_next),
            done: false,
            candidates: vec![],
            features: None,
        }
    }

    #[test]
    fn labels_follow_pixel_threshold() {
        let eps = EnvConfig::default().epsilon();
        assert_eq!(label_transition(&transition(Screen::Home, Screen::Home), eps).unwrap(), EffectLabel(false));
        assert_eq!(
            label_transition(&transition(Screen::Home, Screen::App { app: 1 }), eps).unwrap(),
            EffectLabel(true)
        );
        let t = transition(Screen::Home, Screen::App { app: 1 });
        let d = pixel_distance(&t.s, &t.s_next).unwrap();
        assert_eq!(label_transition(&t, d).unwrap(), EffectLabel(true));
        assert!(label_transition(&t, 0.0).is_err());
    }

    #[test]
    fn action_encoding_is_injective_and_typed() {
        let a = encode_action(&Action::click(0, 0));
        let b = encode_action(&Action::click(0, 1));
        let differing: Vec<usize> = (0..ACTION_DIM).filter(|&i| a[i] != b[i]).collect();
        assert_eq!(differing, vec![N_KINDS + 1]);
        assert_ne!(encode_action(&Action::Type { token: 0 }), encode_action(&Action::Type { token: 1 }));
        for act in [
            Action::click(3, 4),
            Action::Type { token: 2 },
            Action::Navigate { target: NavTarget::Back },
        ] {
            assert_eq!(decode_kind(&encode_action(&act)), Some(act.kind()));
        }
        let mut all = std::collections::HashSet::new();
        for y in 0..GRID_H {
            for x in 0..GRID_W {
                all.insert(encode_action(&Action::click(x, y)).map(f64::to_bits));
            }
        }
        assert_eq!(all.len(), GRID_W * GRID_H);
    }

    #[test]
    fn state_features_fixed_and_distinct() {
        let home = extract_s_features(&obs(Screen::Home));
        assert_eq!(home, extract_s_features(&obs(Screen::Home)));
        let goal = extract_s_features(&obs(Screen::Results { app: 1, token: 2, page: 0 }));
        assert_ne!(home.values, goal.values);
        assert_eq!(home.dim(), STATE_DIM);
        assert_eq!(goal.kind, FeatureKind::StateOnly);
    }

    #[test]
    fn freezing_contract() {
        let cfg = ReprConfig {
            feature_dim: 8,
            trunk_hidden: 8,
            head_hidden: 4,
            ..ReprConfig::default()
        };
        let p = FeaturizerParams::new(SA_INPUT_DIM, &cfg, 1).unwrap();
        let o = obs(Screen::Home);
        assert!(extract_sa_features(&p, &o, &Action::click(1, 1)).is_err());
        let f = p.clone().freeze();
        let ff = f.clone().freeze();
        assert_eq!(f, ff);
        let v1 = extract_sa_features(&f, &o, &Action::click(1, 1)).unwrap();
        let v2 = extract_sa_features(&ff, &o, &Action::click(1, 1)).unwrap();
        assert_eq!(v1, v2);
        assert_eq!(v1.dim(), 8 + SA_INPUT_DIM);
        let mut frozen = f.clone();
        let gt = GradBundle::zeros_like(&f.trunk);
        let gh = GradBundle::zeros_like(&f.head);
        let mut ot = OptimizerState::new(&f.trunk);
        let mut oh = OptimizerState::new(&f.head);
        let err = frozen.apply_gradients(&gt, &gh, &mut ot, &mut oh, 1e-3).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
        assert_eq!(frozen, f);
    }

    #[test]
    fn bce_gradient_matches_finite_differences() {
        let cfg = ReprConfig {
            feature_dim: 6,
            trunk_hidden: 7,
            head_hidden: 5,
            ..ReprConfig::default()
        };
        let params = FeaturizerParams::new(5, &cfg, 3).unwrap();
        let samples: Vec<EffectSample> = (0..6)
            .map(|i| EffectSample {
                input: (0..5).map(|j| ((i * 7 + j * 3) % 11) as f64 / 5.0 - 1.0).collect(),
                label: i % 3 == 0,
            })
            .collect();
        let batch: Vec<&EffectSample> = samples.iter().collect();
        let w = [0.75, 1.5];
        let (_, gt, gh) = bce_batch(&params, &batch, w).unwrap();
        let mut analytic = gt.flat();
        analytic.extend(gh.flat());
        let mut flat = params.trunk.flat();
        flat.extend(params.head.flat());
        let nt = params.trunk.param_count();
        let mut probe = params.clone();
        let err = finite_diff_check(
            |v| {
                probe.trunk.set_flat(&v[..nt]).unwrap();
                probe.head.set_flat(&v[nt..]).unwrap();
                bce_batch(&probe, &batch, w).unwrap().0
            },
            &flat,
            &analytic,
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-4, "relative error {err}");
    }

    #[test]
    fn separable_fixture_is_learned_perfectly() {
        // label = x0 > x1 with a margin
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        use rand::Rng;
        let samples: Vec<EffectSample> = (0..600)
            .map(|_| {
                let a: f64 = rng.gen_range(-1.0..1.0);
                let b: f64 = rng.gen_range(-1.0..1.0);
                let shift = if a > b { 0.2 } else { -0.2 };
                EffectSample {
                    input: vec![a + shift, b - shift, rng.gen_range(-1.0..1.0)],
                    label: a > b,
                }
            })
            .collect();
        let cfg = ReprConfig {
            feature_dim: 16,
            trunk_hidden: 16,
            head_hidden: 8,
            epochs: 60,
            batch_size: 32,
            lr: 1e-2,
            ..ReprConfig::default()
        };
        let (p, report) = train_effect_classifier(&samples, &cfg, 1).unwrap();
        assert!(p.is_frozen());
        assert_eq!(report.test_accuracy, 1.0, "{report:?}");
    }

    #[test]
    fn single_class_refused() {
        let samples: Vec<EffectSample> = (0..50)
            .map(|i| EffectSample {
                input: vec![i as f64],
                label: true,
            })
            .collect();
        let err = train_effect_classifier(&samples, &ReprConfig::default(), 0).unwrap_err();
        assert!(err.to_string().contains("single-class"));
    }

    #[test]
    fn simulator_effect_labels_are_consistent() {
        // Without pop-ups the label is a function of (s, a): check agreement with the
        // majority label of each (s, a) group is at least 95%.
        let env = EnvConfig {
            p_popup: 0.0,
            ..EnvConfig::default()
        };
        let pool = default_task_pool(10);
        let ds = collect_dataset(&env, &pool, &FlawedExpert::default(), 128, 0).unwrap();
        let mut groups: std::collections::HashMap<(Vec<u8>, Action), (u32, u32)> = Default::default();
        for t in ds.transitions() {
            let y = label_transition(t, env.epsilon()).unwrap().0;
            let e = groups.entry((t.s.cells.clone(), t.a)).or_default();
            if y {
                e.0 += 1
            } else {
                e.1 += 1
            }
        }
        let total: u32 = groups.values().map(|(a, b)| a + b).sum();
        let agree: u32 = groups.values().map(|(a, b)| *a.max(b)).sum();
        assert!(agree as f64 / total as f64 >= 0.95);
        // effective and no-op transitions both occur
        let pos = ds.transitions().filter(|t| label_transition(t, env.epsilon()).unwrap().0).count();
        assert!(pos > 0 && pos < ds.n_transitions());
        let _ = minidevice::max_pixel_distance();
    }
}
