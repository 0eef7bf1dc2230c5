//! Ablation runners. Settings that share a prefix of the pipeline (dataset, featurizer,
//! TD critic, behavior clone) reuse one base run per seed and training-set size.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::advantage::{advantage_accuracy, label_candidates};
use super::eval::SuccessTable;
use super::flops::{featurization_record, flops_ledger};
use super::report::{Curve, CurvePoint, EvalReport, MethodResult};
use super::tabular::{branching_fixture, value_variance, ValueVariance};
use crate::config::{ActorLoss, TrainConfig};
use crate::critic::{mc_regress, CriticRun};
use crate::error::{Error, Result};
use crate::pipeline::{self, seed_for, stage_seed, staged};
use crate::policy::{ActorData, CandidateValues, LearnedPolicy, PolicyRun};
use crate::reprlearn::{EffectReport, FeaturizerParams};
use crate::tensorcore::ComputeRecord;
use crate::trajstore::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    NSweep,
    ActorLoss,
    McVsTd,
    DataScaling,
    Representation,
}

impl Ablation {
    pub const ALL: [Ablation; 5] = [
        Ablation::NSweep,
        Ablation::ActorLoss,
        Ablation::McVsTd,
        Ablation::DataScaling,
        Ablation::Representation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::NSweep => "n_sweep",
            Ablation::ActorLoss => "actor_loss",
            Ablation::McVsTd => "mc_vs_td",
            Ablation::DataScaling => "data_scaling",
            Ablation::Representation => "representation",
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|a| a.name() == s).ok_or_else(|| {
            let names: Vec<&str> = Self::ALL.iter().map(|a| a.name()).collect();
            Error::Invalid(format!("unknown ablation `{s}` (expected one of {})", names.join(", ")))
        })
    }
}

/// The shared prefix of the pipeline for one seed and training-set size.
struct BaseRun {
    ds: Dataset,
    featurizer: FeaturizerParams,
    repr: EffectReport,
    critic: CriticRun,
    adata: ActorData,
    bc: PolicyRun,
    values: CandidateValues,
    bc_success: SuccessTable,
    /// Best-of-N with the base config, trained on first use.
    default_bon: Option<Arm>,
}

/// One trained-and-evaluated policy.
#[derive(Clone)]
struct Arm {
    success: SuccessTable,
    kl: f64,
}

impl Arm {
    fn from_run(cfg: &TrainConfig, run: &PolicyRun, name: &str, seed: u64) -> Result<Self> {
        let success = staged(
            "eval",
            pipeline::evaluate(cfg, &LearnedPolicy::new(run.policy.clone(), name), seed),
        )?;
        let kl = run.log.last().map_or(f64::NAN, |r| r.kl_reference);
        Ok(Self { success, kl })
    }
}

/// Runs ablations for one base config, caching shared base runs across calls.
pub struct AblationRunner {
    cfg: TrainConfig,
    bases: BTreeMap<(u64, usize), BaseRun>,
}

impl AblationRunner {
    pub fn new(cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg: cfg.clone(),
            bases: BTreeMap::new(),
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    fn base(&mut self, seed: u64, n_traj: usize) -> Result<&BaseRun> {
        if !self.bases.contains_key(&(seed, n_traj)) {
            let run = build_base(&self.cfg, seed, n_traj)?;
            self.bases.insert((seed, n_traj), run);
        }
        Ok(&self.bases[&(seed, n_traj)])
    }

    /// Best-of-N extraction with the unmodified base config, shared by every ablation
    /// that includes it as an arm.
    fn default_bon(&mut self, seed: u64, n_traj: usize) -> Result<Arm> {
        let cfg = self.cfg.clone();
        self.base(seed, n_traj)?;
        let b = self.bases.get_mut(&(seed, n_traj)).expect("base run just built");
        if b.default_bon.is_none() {
            let run = staged("actor", pipeline::extract(&cfg, ActorLoss::Bon, &b.bc, &b.adata, &b.values, seed))?;
            b.default_bon = Some(Arm::from_run(&cfg, &run, "bon", seed)?);
        }
        Ok(b.default_bon.clone().expect("set above"))
    }

    pub fn run(&mut self, ablation: Ablation, seeds: &[u64]) -> Result<EvalReport> {
        if seeds.is_empty() {
            return Err(Error::Config("ablation needs at least one seed".into()));
        }
        let mut seeds = seeds.to_vec();
        seeds.sort_unstable();
        seeds.dedup();
        let mut report = EvalReport::new(ablation.name(), &self.cfg.hash(), &seeds);
        match ablation {
            Ablation::NSweep => self.n_sweep(&seeds, &mut report)?,
            Ablation::ActorLoss => self.actor_loss(&seeds, &mut report)?,
            Ablation::McVsTd => self.mc_vs_td(&seeds, &mut report)?,
            Ablation::DataScaling => self.data_scaling(&seeds, &mut report)?,
            Ablation::Representation => self.representation(&seeds, &mut report)?,
        }
        let n = self.cfg.data.n_traj;
        report.flops = Some(flops_ledger(&base_compute(self.base(seeds[0], n)?)));
        Ok(report)
    }

    fn bc_method(&mut self, seeds: &[u64]) -> Result<MethodResult> {
        let n = self.cfg.data.n_traj;
        let mut tables = Vec::with_capacity(seeds.len());
        for &s in seeds {
            tables.push(self.base(s, n)?.bc_success.clone());
        }
        let mut m = MethodResult::from_tables("behavior_clone", &tables)?;
        m.kl = vec![0.0; seeds.len()];
        Ok(m)
    }

    fn n_sweep(&mut self, seeds: &[u64], report: &mut EvalReport) -> Result<()> {
        report.methods.push(self.bc_method(seeds)?);
        let n_traj = self.cfg.data.n_traj;
        let mut points = Vec::new();
        for n in self.cfg.ablation.n_values.clone() {
            let mut cfg = self.cfg.clone();
            cfg.extraction.n = n;
            let label = format!("bon_n{n}");
            let arms = seeds
                .iter()
                .map(|&s| {
                    if n == self.cfg.extraction.n {
                        return self.default_bon(s, n_traj);
                    }
                    let b = self.base(s, n_traj)?;
                    let run = staged("actor", pipeline::extract(&cfg, ActorLoss::Bon, &b.bc, &b.adata, &b.values, s))?;
                    Arm::from_run(&cfg, &run, &label, s)
                })
                .collect::<Result<Vec<_>>>()?;
            let m = method(&label, &arms)?;
            points.push(CurvePoint::new(n as f64, m.per_seed.clone()));
            report.methods.push(m);
        }
        report.curves.push(Curve {
            name: "n_sweep".into(),
            x_label: "N (candidates per state)".into(),
            y_label: "success rate".into(),
            points,
        });
        Ok(())
    }

    fn actor_loss(&mut self, seeds: &[u64], report: &mut EvalReport) -> Result<()> {
        report.methods.push(self.bc_method(seeds)?);
        let n_traj = self.cfg.data.n_traj;
        let cfg = self.cfg.clone();
        for loss in [ActorLoss::Bon, ActorLoss::Awr, ActorLoss::Reinforce] {
            let label = loss.to_string();
            let arms = seeds
                .iter()
                .map(|&s| {
                    if loss == ActorLoss::Bon {
                        return self.default_bon(s, n_traj);
                    }
                    let b = self.base(s, n_traj)?;
                    let run = staged("actor", pipeline::extract(&cfg, loss, &b.bc, &b.adata, &b.values, s))?;
                    Arm::from_run(&cfg, &run, &label, s)
                })
                .collect::<Result<Vec<_>>>()?;
            report.methods.push(method(&label, &arms)?);
        }
        Ok(())
    }

    fn mc_vs_td(&mut self, seeds: &[u64], report: &mut EvalReport) -> Result<()> {
        let n_traj = self.cfg.data.n_traj;
        let cfg = self.cfg.clone();
        let (mut td_arms, mut mc_arms) = (Vec::new(), Vec::new());
        let (mut td_acc, mut mc_acc) = (Vec::new(), Vec::new());
        for &s in seeds {
            td_arms.push(self.default_bon(s, n_traj)?);
            let b = self.base(s, n_traj)?;
            let labeled = staged("eval", label_candidates(&b.ds, &pipeline::task_pool(&cfg)))?;
            let cdata = staged("critic", pipeline::critic_data(&cfg, &b.ds, &b.featurizer))?;
            let mc = staged("critic", mc_regress(&cdata, &cfg.critic, seed_for(s, stage_seed::CRITIC)))?;
            let mc_values = staged("actor", CandidateValues::compute(&mc.state, &cdata))?;
            drop(cdata);
            td_acc.push(staged("eval", advantage_accuracy(&b.critic.state, &b.featurizer, &labeled))?);
            mc_acc.push(staged("eval", advantage_accuracy(&mc.state, &b.featurizer, &labeled))?);
            let mc_run = staged("actor", pipeline::extract(&cfg, ActorLoss::Bon, &b.bc, &b.adata, &mc_values, s))?;
            mc_arms.push(Arm::from_run(&cfg, &mc_run, "mc", s)?);
        }
        let mut td = method("td", &td_arms)?;
        td.advantage_accuracy = td_acc;
        let mut mc = method("mc", &mc_arms)?;
        mc.advantage_accuracy = mc_acc;
        report.methods.push(td);
        report.methods.push(mc);

        let mdp = branching_fixture();
        let uniform = vec![vec![1.0 / mdp.n_actions as f64; mdp.n_actions]; mdp.n_states];
        let a = &cfg.ablation;
        let vv = staged(
            "variance",
            value_variance(&mdp, &uniform, a.variance_episodes, a.variance_reseeds, &a.tabular_critic, seeds[0]),
        )?;
        report.curves.extend(variance_curves(&vv));
        Ok(())
    }

    fn data_scaling(&mut self, seeds: &[u64], report: &mut EvalReport) -> Result<()> {
        let mut points = Vec::new();
        for n_traj in self.cfg.ablation.data_sizes.clone() {
            let label = format!("bon_{n_traj}traj");
            let arms = seeds
                .iter()
                .map(|&s| self.default_bon(s, n_traj))
                .collect::<Result<Vec<_>>>()?;
            let m = method(&label, &arms)?;
            points.push(CurvePoint::new(n_traj as f64, m.per_seed.clone()));
            report.methods.push(m);
        }
        report.curves.push(Curve {
            name: "data_scaling".into(),
            x_label: "training trajectories".into(),
            y_label: "success rate".into(),
            points,
        });
        Ok(())
    }

    fn representation(&mut self, seeds: &[u64], report: &mut EvalReport) -> Result<()> {
        let n_traj = self.cfg.data.n_traj;
        let cfg = self.cfg.clone();
        let (mut tuned, mut random) = (Vec::new(), Vec::new());
        for &s in seeds {
            tuned.push(self.default_bon(s, n_traj)?);
            let b = self.base(s, n_traj)?;
            let untrained = staged(
                "featurizer",
                FeaturizerParams::random_frozen(&cfg.repr, seed_for(s, stage_seed::FEATURIZER)),
            )?;
            let cdata = staged("critic", pipeline::critic_data(&cfg, &b.ds, &untrained))?;
            let critic = staged("critic", pipeline::fit_critic(&cfg, &cdata, s))?;
            let values = staged("actor", CandidateValues::compute(&critic.state, &cdata))?;
            drop(cdata);
            let run = staged("actor", pipeline::extract(&cfg, ActorLoss::Bon, &b.bc, &b.adata, &values, s))?;
            random.push(Arm::from_run(&cfg, &run, "random_frozen", s)?);
        }
        report.methods.push(method("fine_tuned", &tuned)?);
        report.methods.push(method("random_frozen", &random)?);
        Ok(())
    }
}

/// One-shot convenience wrapper around [`AblationRunner`].
pub fn run_ablation(ablation: Ablation, cfg: &TrainConfig, seeds: &[u64]) -> Result<EvalReport> {
    AblationRunner::new(cfg)?.run(ablation, seeds)
}

fn build_base(cfg: &TrainConfig, seed: u64, n_traj: usize) -> Result<BaseRun> {
    let ds = staged("collect", pipeline::collect(cfg, n_traj, seed))?;
    let (featurizer, repr) = staged("featurizer", pipeline::fit_featurizer(cfg, &ds, seed))?;
    let cdata = staged("critic", pipeline::critic_data(cfg, &ds, &featurizer))?;
    let critic = staged("critic", pipeline::fit_critic(cfg, &cdata, seed))?;
    let values = staged("actor", CandidateValues::compute(&critic.state, &cdata))?;
    drop(cdata);
    let adata = ActorData::from_dataset(&ds);
    let bc = staged("behavior_clone", pipeline::fit_bc(cfg, &adata, seed))?;
    let bc_success = staged(
        "eval",
        pipeline::evaluate(cfg, &LearnedPolicy::new(bc.policy.clone(), "behavior_clone"), seed),
    )?;
    Ok(BaseRun {
        ds,
        featurizer,
        repr,
        critic,
        adata,
        bc,
        values,
        bc_success,
        default_bon: None,
    })
}

fn base_compute(b: &BaseRun) -> Vec<ComputeRecord> {
    let mut out = b.repr.compute.clone();
    let vectors: u64 = b
        .ds
        .transitions()
        .map(|t| 1 + t.candidates.len() as u64)
        .sum();
    out.push(featurization_record(&b.featurizer, vectors));
    out.extend(b.critic.compute.iter().cloned());
    out.push(b.bc.compute.clone());
    out
}

fn method(label: &str, arms: &[Arm]) -> Result<MethodResult> {
    let tables: Vec<SuccessTable> = arms.iter().map(|a| a.success.clone()).collect();
    let mut m = MethodResult::from_tables(label, &tables)?;
    m.kl = arms.iter().map(|a| a.kl).collect();
    Ok(m)
}

fn variance_curves(vv: &ValueVariance) -> Vec<Curve> {
    let curve = |name: &str, var: &[f64]| Curve {
        name: name.into(),
        x_label: "state".into(),
        y_label: "variance of V across datasets".into(),
        points: vv
            .states
            .iter()
            .zip(var)
            .map(|(&s, &v)| CurvePoint {
                x: s as f64,
                per_seed: vec![v],
                mean: v,
                std: 0.0,
            })
            .collect(),
    };
    vec![curve("value_variance_td", &vv.td), curve("value_variance_mc", &vv.mc)]
}

/// A directional expectation an ablation report either meets or not.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

fn need<'r>(report: &'r EvalReport, name: &str) -> Result<&'r MethodResult> {
    report
        .method(name)
        .ok_or_else(|| Error::Invalid(format!("report `{}` has no method `{name}`", report.name)))
}

/// The ordering each ablation is expected to reproduce.
pub fn directional_checks(report: &EvalReport) -> Result<Vec<Check>> {
    let ablation: Ablation = report.name.parse()?;
    let mut out = Vec::new();
    let monotone = |name: &str, slack: f64| -> Result<Check> {
        let c = report
            .curve(name)
            .ok_or_else(|| Error::Invalid(format!("report has no `{name}` curve")))?;
        let means: Vec<String> = c.points.iter().map(|p| format!("{}: {:.3}±{:.3}", p.x, p.mean, p.std)).collect();
        Ok(Check {
            name: format!("{name} non-decreasing"),
            pass: c.non_decreasing_within(slack),
            detail: means.join(", "),
        })
    };
    match ablation {
        Ablation::NSweep => out.push(monotone("n_sweep", 1.0)?),
        Ablation::DataScaling => out.push(monotone("data_scaling", 0.0)?),
        Ablation::ActorLoss => {
            let (bon, awr, bc) = (need(report, "bon")?, need(report, "awr")?, need(report, "behavior_clone")?);
            out.push(Check {
                name: "success bon > behavior_clone".into(),
                pass: bon.success.mean > bc.success.mean,
                detail: format!("{:.3} vs {:.3}", bon.success.mean, bc.success.mean),
            });
            out.push(Check {
                name: "success bon > awr".into(),
                pass: bon.success.mean > awr.success.mean,
                detail: format!("{:.3} vs {:.3}", bon.success.mean, awr.success.mean),
            });
            out.push(Check {
                name: "kl awr < kl bon".into(),
                pass: mean(&awr.kl) < mean(&bon.kl),
                detail: format!("{:.4} vs {:.4}", mean(&awr.kl), mean(&bon.kl)),
            });
        }
        Ablation::McVsTd => {
            let (td, mc) = (need(report, "td")?, need(report, "mc")?);
            // seed-averaged, like the success comparisons
            let (t, m) = (mean(&td.advantage_accuracy), mean(&mc.advantage_accuracy));
            out.push(Check {
                name: "advantage accuracy td ≥ mc".into(),
                pass: !td.advantage_accuracy.is_empty() && t >= m,
                detail: format!("{t:.3} vs {m:.3} (per seed {:?} vs {:?})", td.advantage_accuracy, mc.advantage_accuracy),
            });
            let (vt, vm) = (report.curve("value_variance_td"), report.curve("value_variance_mc"));
            if let (Some(vt), Some(vm)) = (vt, vm) {
                let pass = vt.points.iter().zip(&vm.points).all(|(t, m)| m.mean > t.mean);
                out.push(Check {
                    name: "value variance mc > td on every state".into(),
                    pass,
                    detail: format!(
                        "td {:?} mc {:?}",
                        vt.points.iter().map(|p| p.mean).collect::<Vec<_>>(),
                        vm.points.iter().map(|p| p.mean).collect::<Vec<_>>()
                    ),
                });
            }
        }
        Ablation::Representation => {
            let (ft, rnd) = (need(report, "fine_tuned")?, need(report, "random_frozen")?);
            out.push(Check {
                name: "success fine_tuned > random_frozen".into(),
                pass: ft.success.mean > rnd.success.mean,
                detail: format!("{:.3} vs {:.3}", ft.success.mean, rnd.success.mean),
            });
        }
    }
    Ok(out)
}
