//! Subcommand implementations behind the `digiq` binary. Each writes the resolved config
//! next to its artifacts; `cmd_pipeline` records a manifest of stage checkpoints so that
//! a later run can resume.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::config::TrainConfig;
use crate::critic::{self, CriticState};
use crate::error::{Error, Result};
use crate::evalbench::{
    advantage_accuracy, directional_checks, emit_report, featurization_record, flops_ledger, label_candidates,
    AblationRunner, Check, EvalReport, MethodResult, Ablation,
};
use crate::pipeline::{self, staged};
use crate::policy::{self, ActorData, CandidateValues, LearnedPolicy, PolicyParams};
use crate::reprlearn::FeaturizerParams;
use crate::trajstore::{self, Dataset};
use crate::util::{sha256_hex, short_hash};

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_CONFIG: i32 = 3;
pub const EXIT_STAGE: i32 = 4;
pub const EXIT_ACCEPTANCE: i32 = 5;

/// How a subcommand failed, mapped onto distinct exit codes.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Acceptance(Vec<Check>),
    Run(Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Acceptance(_) => EXIT_ACCEPTANCE,
            CliError::Run(Error::Config(_)) => EXIT_CONFIG,
            CliError::Run(_) => EXIT_STAGE,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Acceptance(failed) => {
                write!(f, "directional checks failed:")?;
                for c in failed {
                    write!(f, "\n  {} ({})", c.name, c.detail)?;
                }
                Ok(())
            }
            CliError::Run(e) => write!(f, "{e}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Run(e)
    }
}

pub const CONFIG_ECHO: &str = "config.toml";

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn sha_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path).map_err(|e| Error::io(path, e))?))
}

/// `<file>.config.toml` next to a single-file artifact.
pub fn echo_path_for(file: &Path) -> PathBuf {
    let mut name = file.file_name().unwrap_or_default().to_os_string();
    name.push(".config.toml");
    file.with_file_name(name)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollectSummary {
    pub path: PathBuf,
    pub trajectories: usize,
    pub transitions: usize,
    pub success_rate: f64,
    pub k: usize,
    pub sha256: String,
}

impl std::fmt::Display for CollectSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}: {} trajectories, {} transitions, behavior success {:.3}, K = {}, sha256 {}",
            self.path.display(),
            self.trajectories,
            self.transitions,
            self.success_rate,
            self.k,
            self.sha256
        )
    }
}

/// Rolls out the behavior policy, pre-samples candidates and writes the dataset file.
pub fn cmd_collect(cfg: &TrainConfig, out: &Path, force: bool) -> std::result::Result<CollectSummary, CliError> {
    cfg.validate()?;
    if out.exists() && !force {
        return Err(CliError::Usage(format!("{} exists (pass --force to overwrite)", out.display())));
    }
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let ds = staged("collect", pipeline::collect(cfg, cfg.data.n_traj, cfg.seed))?;
    trajstore::save(&ds, out)?;
    write(&echo_path_for(out), cfg.echo().as_bytes())?;
    Ok(CollectSummary {
        path: out.to_path_buf(),
        trajectories: ds.trajectories.len(),
        transitions: ds.n_transitions(),
        success_rate: ds.success_rate(),
        k: ds.meta.k,
        sha256: sha_file(out)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Featurizer,
    Critic,
    BehaviorClone,
    Actor,
    Eval,
}

impl Stage {
    pub const ALL: [Stage; 5] = [Stage::Featurizer, Stage::Critic, Stage::BehaviorClone, Stage::Actor, Stage::Eval];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Featurizer => "featurizer",
            Stage::Critic => "critic",
            Stage::BehaviorClone => "behavior_clone",
            Stage::Actor => "actor",
            Stage::Eval => "eval",
        }
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|st| st.name() == s).ok_or_else(|| {
            let names: Vec<&str> = Self::ALL.iter().map(|st| st.name()).collect();
            Error::Invalid(format!("unknown stage `{s}` (expected one of {})", names.join(", ")))
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: Stage,
    /// Hash of everything the stage's output depends on.
    pub key: String,
    /// Checkpoint files with their SHA-256.
    pub files: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub dataset_sha256: String,
    pub stages: Vec<StageRecord>,
}

impl Manifest {
    pub const FILE: &'static str = "manifest.json";

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(Self::FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    fn save(&self, dir: &Path) -> Result<()> {
        write(&dir.join(Self::FILE), serde_json::to_string_pretty(self)?.as_bytes())
    }

    fn record(&self, stage: Stage) -> Option<&StageRecord> {
        self.stages.iter().find(|r| r.stage == stage)
    }

    fn set(&mut self, rec: StageRecord) {
        self.stages.retain(|r| r.stage != rec.stage);
        self.stages.push(rec);
        self.stages.sort_by_key(|r| r.stage);
    }
}

#[derive(Debug, Clone, Default)]
pub struct PipelineOptions {
    /// Existing dataset file; collected from the config when absent.
    pub dataset: Option<PathBuf>,
    pub force: bool,
    /// Reuse verified checkpoints of every stage before this one.
    pub resume: Option<Stage>,
}

#[derive(Debug, Clone)]
pub struct PipelineSummary {
    pub report: EvalReport,
    /// Stages loaded from checkpoints instead of recomputed.
    pub reused: Vec<Stage>,
}

const FEATURIZER_FILE: &str = "featurizer.json";
const CRITIC_FILE: &str = "critic.json";
const CRITIC_LOG: &str = "critic_log.csv";
const BC_FILE: &str = "behavior_clone.json";
const BC_LOG: &str = "behavior_clone_log.csv";
const ACTOR_FILE: &str = "actor.json";
const ACTOR_LOG: &str = "actor_log.csv";
const DATASET_FILE: &str = "dataset.jsonl";
pub const REPORT_DIR: &str = "report";

struct StageCtx<'a> {
    dir: &'a Path,
    manifest: Manifest,
    prev_key: String,
    resume_before: Option<Stage>,
    reused: Vec<Stage>,
}

impl StageCtx<'_> {
    fn key(&self, stage: Stage) -> String {
        short_hash(format!("{}|{}|{}", self.manifest.config_hash, self.prev_key, stage.name()).as_bytes())
    }

    /// The stage's files if `--resume` allows reuse and the recorded key and hashes match.
    fn reusable(&self, stage: Stage) -> bool {
        if !self.resume_before.is_some_and(|r| stage < r) {
            return false;
        }
        let key = self.key(stage);
        self.manifest.record(stage).is_some_and(|rec| {
            rec.key == key
                && rec
                    .files
                    .iter()
                    .all(|(f, sha)| sha_file(&self.dir.join(f)).is_ok_and(|s| s == *sha))
        })
    }

    fn finish(&mut self, stage: Stage, files: &[&str], reused: bool) -> Result<()> {
        let key = self.key(stage);
        if reused {
            self.reused.push(stage);
        } else {
            let files = files
                .iter()
                .map(|f| Ok((f.to_string(), sha_file(&self.dir.join(f))?)))
                .collect::<Result<Vec<_>>>()?;
            self.manifest.set(StageRecord {
                stage,
                key: key.clone(),
                files,
            });
            self.manifest.save(self.dir)?;
        }
        self.prev_key = key;
        Ok(())
    }
}

/// Featurizer → critic → behavior clone → extraction → evaluation, with a checkpoint
/// per stage and a report under `out/report`.
pub fn cmd_pipeline(cfg: &TrainConfig, out: &Path, opts: &PipelineOptions) -> std::result::Result<PipelineSummary, CliError> {
    cfg.validate()?;
    let occupied = out.exists() && fs::read_dir(out).map_err(|e| Error::io(out, e))?.next().is_some();
    if occupied && !opts.force && opts.resume.is_none() {
        return Err(CliError::Usage(format!(
            "{} is not empty (pass --force to overwrite or --resume STAGE to continue)",
            out.display()
        )));
    }
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write(&out.join(CONFIG_ECHO), cfg.echo().as_bytes())?;

    let ds_path = match &opts.dataset {
        Some(p) => p.clone(),
        None => {
            let p = out.join(DATASET_FILE);
            let reuse = opts.resume.is_some() && p.exists();
            if !reuse {
                let ds = staged("collect", pipeline::collect(cfg, cfg.data.n_traj, cfg.seed))?;
                trajstore::save(&ds, &p)?;
            }
            p
        }
    };
    let ds: Dataset = staged("collect", trajstore::load_checked(&ds_path, &cfg.env))?;
    let previous = if opts.resume.is_some() { Manifest::load(out).ok() } else { None };
    let mut ctx = StageCtx {
        dir: out,
        manifest: Manifest {
            config_hash: cfg.hash(),
            dataset_sha256: sha_file(&ds_path)?,
            stages: Vec::new(),
        },
        prev_key: String::new(),
        resume_before: opts.resume,
        reused: Vec::new(),
    };
    ctx.prev_key = ctx.manifest.dataset_sha256.clone();
    if let Some(prev) = previous.filter(|p| p.config_hash == ctx.manifest.config_hash && p.dataset_sha256 == ctx.manifest.dataset_sha256) {
        ctx.manifest.stages = prev.stages;
    }
    let seed = cfg.seed;

    let reuse = ctx.reusable(Stage::Featurizer);
    let (featurizer, repr_compute) = if reuse {
        (staged("featurizer", FeaturizerParams::load(&out.join(FEATURIZER_FILE)))?, Vec::new())
    } else {
        let (f, rep) = staged("featurizer", pipeline::fit_featurizer(cfg, &ds, seed))?;
        staged("featurizer", f.save(&out.join(FEATURIZER_FILE)))?;
        (f, rep.compute)
    };
    ctx.finish(Stage::Featurizer, &[FEATURIZER_FILE], reuse)?;

    let cdata = staged("critic", pipeline::critic_data(cfg, &ds, &featurizer))?;
    let reuse = ctx.reusable(Stage::Critic);
    let (critic_state, critic_compute) = if reuse {
        (staged("critic", CriticState::load(&out.join(CRITIC_FILE)))?, Vec::new())
    } else {
        let run = staged("critic", pipeline::fit_critic(cfg, &cdata, seed))?;
        staged("critic", run.state.save(&out.join(CRITIC_FILE)))?;
        staged("critic", critic::write_log(&run.log, &out.join(CRITIC_LOG)))?;
        (run.state, run.compute)
    };
    ctx.finish(Stage::Critic, &[CRITIC_FILE], reuse)?;
    let values = staged("actor", CandidateValues::compute(&critic_state, &cdata))?;
    drop(cdata);

    let adata = ActorData::from_dataset(&ds);
    let reuse = ctx.reusable(Stage::BehaviorClone);
    let (bc, bc_compute) = if reuse {
        (staged("behavior_clone", PolicyParams::load(&out.join(BC_FILE)))?, None)
    } else {
        let run = staged("behavior_clone", pipeline::fit_bc(cfg, &adata, seed))?;
        staged("behavior_clone", run.policy.save(&out.join(BC_FILE)))?;
        staged("behavior_clone", policy::write_log(&run.log, &out.join(BC_LOG)))?;
        (run.policy, Some(run.compute))
    };
    ctx.finish(Stage::BehaviorClone, &[BC_FILE], reuse)?;

    let reuse = ctx.reusable(Stage::Actor);
    let (actor, actor_compute) = if reuse {
        (staged("actor", PolicyParams::load(&out.join(ACTOR_FILE)))?, None)
    } else {
        let bc_run = policy::PolicyRun {
            policy: bc.clone(),
            log: Vec::new(),
            compute: bc_compute.clone().unwrap_or_else(|| crate::tensorcore::ComputeRecord::new("behavior_clone", "policy", &bc.network)),
        };
        let run = staged("actor", pipeline::extract(cfg, cfg.actor_loss, &bc_run, &adata, &values, seed))?;
        staged("actor", run.policy.save(&out.join(ACTOR_FILE)))?;
        staged("actor", policy::write_log(&run.log, &out.join(ACTOR_LOG)))?;
        (run.policy, Some(run.compute))
    };
    ctx.finish(Stage::Actor, &[ACTOR_FILE], reuse)?;

    // evaluation is cheap relative to training and always recomputed
    let bc_table = staged("eval", pipeline::evaluate(cfg, &LearnedPolicy::new(bc.clone(), "behavior_clone"), seed))?;
    let loss = cfg.actor_loss.to_string();
    let actor_table = staged("eval", pipeline::evaluate(cfg, &LearnedPolicy::new(actor.clone(), &loss), seed))?;
    let labeled = staged("eval", label_candidates(&ds, &pipeline::task_pool(cfg)))?;
    let accuracy = staged("eval", advantage_accuracy(&critic_state, &featurizer, &labeled))?;
    let kl = staged("eval", policy::policy_kl(&actor, &bc, &adata.inputs))?;

    let mut report = EvalReport::new("pipeline", &cfg.hash(), &[seed]);
    let mut bc_m = MethodResult::from_tables("behavior_clone", &[bc_table])?;
    bc_m.kl = vec![0.0];
    let mut actor_m = MethodResult::from_tables(&loss, &[actor_table])?;
    actor_m.kl = vec![kl];
    actor_m.advantage_accuracy = vec![accuracy];
    report.methods = vec![bc_m, actor_m];
    let mut compute = repr_compute;
    if !ctx.reused.contains(&Stage::Featurizer) {
        let vectors = ds.transitions().map(|t| 1 + t.candidates.len() as u64).sum();
        compute.push(featurization_record(&featurizer, vectors));
    }
    compute.extend(critic_compute);
    compute.extend(bc_compute);
    compute.extend(actor_compute);
    report.flops = Some(flops_ledger(&compute));
    let report_dir = out.join(REPORT_DIR);
    staged("eval", emit_report(&report, &report_dir))?;
    ctx.finish(Stage::Eval, &[], false)?;
    Ok(PipelineSummary {
        report,
        reused: ctx.reused,
    })
}

#[derive(Debug, Clone)]
pub struct AblateSummary {
    pub report: EvalReport,
    pub checks: Vec<Check>,
}

/// Runs one ablation over `seeds`, writes its report and fails with the acceptance exit
/// code if a directional check does not hold.
pub fn cmd_ablate(name: &str, cfg: &TrainConfig, out: &Path, seeds: &[u64]) -> std::result::Result<AblateSummary, CliError> {
    let ablation = Ablation::from_str(name).map_err(|e| CliError::Usage(e.to_string()))?;
    cfg.validate()?;
    if seeds.is_empty() {
        return Err(CliError::Usage("--seeds must list at least one seed".into()));
    }
    let report = AblationRunner::new(cfg)?.run(ablation, seeds)?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write(&out.join(CONFIG_ECHO), cfg.echo().as_bytes())?;
    emit_report(&report, out)?;
    let checks = directional_checks(&report)?;
    let failed: Vec<Check> = checks.iter().filter(|c| !c.pass).cloned().collect();
    if !failed.is_empty() {
        return Err(CliError::Acceptance(failed));
    }
    Ok(AblateSummary { report, checks })
}

/// Parses `1,2,3`.
pub fn parse_seeds(list: &str) -> Result<Vec<u64>> {
    list.split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad seed `{s}` in `{list}`")))
        })
        .collect()
}

/// Sizes the global worker pool from `DIGIQ_THREADS` when set.
pub fn init_threads() -> Result<()> {
    let Ok(v) = std::env::var("DIGIQ_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("DIGIQ_THREADS must be a positive integer, got `{v}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}
