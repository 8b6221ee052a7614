//! One function per CLI verb. Each reads its prerequisites from the run
//! directory, writes its artifacts there and records a manifest.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rlstab_core::policy::SoftmaxPolicy;
use rlstab_core::rehearsal::{select_rehearsal, Payload};
use rlstab_core::scoremodel::ModelKind;

use crate::config::RunConfig;
use crate::csv::Table;
use crate::error::{invalid, LabError, Result};
use crate::experiments::{self as ex, Experiment, Lab};
use crate::io;
use crate::manifest::{digests, Manifest};

pub const ENV: &str = "env.json";
pub const SOURCE_POLICIES: &str = "source_policies.json";
pub const RM_TRAIN: &str = "rm_train.jsonl";
pub const RM_TEST: &str = "rm_test.jsonl";
pub const PPO_TRAIN: &str = "ppo_train.jsonl";
pub const PPO_TEST: &str = "ppo_test.jsonl";
pub const FORGET: &str = "forget.jsonl";
pub const SFT_TRAIN: &str = "sft_train.jsonl";
pub const SFT_POLICY: &str = "sft.policy.json";
pub const REHEARSAL: &str = "rehearsal.jsonl";

pub fn checkpoint_name(kind: ModelKind) -> String {
    format!("{}.ckpt.json", kind.name())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verb {
    GenData,
    TrainRm,
    TrainAm,
    EvalScore,
    TrainSft,
    TrainPpo,
    SelectRehearsal { records: Option<PathBuf> },
    Report,
    Experiment(Experiment),
}

impl Verb {
    pub fn name(&self) -> String {
        match self {
            Verb::GenData => "gen-data".into(),
            Verb::TrainRm => "train-rm".into(),
            Verb::TrainAm => "train-am".into(),
            Verb::EvalScore => "eval-score".into(),
            Verb::TrainSft => "train-sft".into(),
            Verb::TrainPpo => "train-ppo".into(),
            Verb::SelectRehearsal { .. } => "select-rehearsal".into(),
            Verb::Report => "report".into(),
            Verb::Experiment(e) => format!("experiment-{e}"),
        }
    }
}

/// Files read and written by one verb, relative to the run directory.
#[derive(Default)]
struct Touched {
    inputs: Vec<String>,
    outputs: Vec<String>,
    /// Inputs living outside the run directory.
    external: Vec<PathBuf>,
}

struct Ctx<'a> {
    cfg: &'a RunConfig,
    dir: &'a Path,
    t: Touched,
}

impl Ctx<'_> {
    fn input(&mut self, name: &str) -> PathBuf {
        self.t.inputs.push(name.to_string());
        self.dir.join(name)
    }

    fn output(&mut self, name: &str) -> PathBuf {
        self.t.outputs.push(name.to_string());
        self.dir.join(name)
    }

    fn tables(&mut self, tables: &[(String, Table)]) -> Result<()> {
        let written = ex::write_tables(self.dir, tables)?;
        self.t.outputs.extend(written);
        Ok(())
    }

    fn policy(&mut self, name: &str) -> Result<SoftmaxPolicy> {
        io::read_json::<io::PolicyFile>(&self.input(name))?.policy()
    }
}

/// `<out>/<run-id>` for this config.
pub fn run_dir(cfg: &RunConfig, run_id: Option<&str>) -> PathBuf {
    let id = run_id.map(str::to_string).unwrap_or_else(|| cfg.run_id());
    cfg.paths.out.join(id)
}

pub fn run(verb: &Verb, cfg: &RunConfig, dir: &Path) -> Result<Manifest> {
    let start = Instant::now();
    std::fs::create_dir_all(dir).map_err(|e| LabError::io(dir, e))?;
    let mut ctx = Ctx {
        cfg,
        dir,
        t: Touched::default(),
    };
    match verb {
        Verb::GenData => gen_data(&mut ctx)?,
        Verb::TrainRm => train_score(&mut ctx, ModelKind::Rm)?,
        Verb::TrainAm => train_score(&mut ctx, ModelKind::Am)?,
        Verb::EvalScore => eval_score(&mut ctx)?,
        Verb::TrainSft => train_sft(&mut ctx)?,
        Verb::TrainPpo => train_ppo(&mut ctx)?,
        Verb::SelectRehearsal { records } => select(&mut ctx, records.as_deref())?,
        Verb::Report => report(&mut ctx)?,
        Verb::Experiment(e) => experiment(&mut ctx, *e)?,
    }
    let mut inputs = digests(dir, &ctx.t.inputs)?;
    for p in &ctx.t.external {
        inputs.insert(p.display().to_string(), crate::manifest::file_digest(p)?);
    }
    let manifest = Manifest {
        run_id: dir.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default(),
        verb: verb.name(),
        config_hash: cfg.hash(),
        seed: cfg.seed,
        inputs,
        outputs: digests(dir, &ctx.t.outputs)?,
        wall_clock_secs: start.elapsed().as_secs_f64(),
        versions: Manifest::versions(),
    };
    io::write_json(&dir.join(format!("manifest-{}.json", verb.name())), &manifest)?;
    io::write_json(&dir.join("config.json"), cfg)?;
    Ok(manifest)
}

fn gen_data(ctx: &mut Ctx) -> Result<()> {
    let (env, data) = ex::generate(ctx.cfg)?;
    io::write_json(&ctx.output(ENV), &env)?;
    let sources: Vec<io::PolicyFile> = data
        .source_policies
        .iter()
        .map(|p| io::PolicyFile::new(p, ctx.cfg.seed, 0, None))
        .collect();
    io::write_json(&ctx.output(SOURCE_POLICIES), &sources)?;
    io::write_comparisons(&ctx.output(RM_TRAIN), &data.rm_train)?;
    io::write_comparisons(&ctx.output(RM_TEST), &data.rm_test)?;
    io::write_episodes(&ctx.output(PPO_TRAIN), &data.ppo_train)?;
    io::write_episodes(&ctx.output(PPO_TEST), &data.ppo_test)?;
    io::write_experts(&ctx.output(FORGET), &data.forget)?;
    io::write_experts(&ctx.output(SFT_TRAIN), &data.sft_train)?;
    Ok(())
}

fn train_score(ctx: &mut Ctx, kind: ModelKind) -> Result<()> {
    let pairs = io::read_comparisons(&ctx.input(RM_TRAIN))?;
    let (ckpt, log) = ex::train_scorer_on(ctx.cfg, kind, &pairs)?;
    io::write_checkpoint(&ctx.output(&checkpoint_name(kind)), &ckpt)?;
    ctx.tables(&[(format!("{}_train_log.csv", kind.name()), ex::train_log_table(&log))])
}

fn eval_score(ctx: &mut Ctx) -> Result<()> {
    let present: Vec<ModelKind> = [ModelKind::Rm, ModelKind::Am]
        .into_iter()
        .filter(|k| ctx.dir.join(checkpoint_name(*k)).exists())
        .collect();
    if present.is_empty() {
        return Err(LabError::Missing(ctx.dir.join(checkpoint_name(ModelKind::Rm))));
    }
    let pairs = io::read_comparisons(&ctx.input(RM_TEST))?;
    let episodes = io::read_episodes(&ctx.input(PPO_TEST))?;
    let mut evals = Vec::new();
    for k in present {
        let ckpt = io::read_checkpoint(&ctx.input(&checkpoint_name(k)))?;
        evals.push(ex::evaluate_scorer(ctx.cfg, &ckpt, &pairs, &episodes)?);
    }
    let (bins, curve, summary) = ex::calibration_tables(&evals);
    let (moments, disparity) = ex::moment_tables(&evals);
    ctx.tables(&[
        ("calibration.csv".into(), bins),
        ("calibration_curve.csv".into(), curve),
        ("accuracy.csv".into(), summary),
        ("moments.csv".into(), moments),
        ("disparity.csv".into(), disparity),
    ])
}

fn train_sft(ctx: &mut Ctx) -> Result<()> {
    let experts = io::read_experts(&ctx.input(SFT_TRAIN))?;
    let (policy, losses) = ex::train_sft(ctx.cfg, &experts)?;
    let steps = ctx.cfg.sft.epochs * experts.len().div_ceil(ctx.cfg.sft.batch_size);
    io::write_json(&ctx.output(SFT_POLICY), &io::PolicyFile::new(&policy, ctx.cfg.seed, steps, None))?;
    let mut t = Table::new(&["epoch", "loss"]);
    for (i, l) in losses.iter().enumerate() {
        t.push(vec![(i + 1).into(), (*l).into()]);
    }
    ctx.tables(&[("sft_log.csv".into(), t)])
}

fn select(ctx: &mut Ctx, records: Option<&Path>) -> Result<()> {
    let cfg = ctx.cfg;
    let set = match records {
        Some(path) => {
            ctx.t.external.push(path.to_path_buf());
            let recs = io::ingest_external_records(path)?;
            select_rehearsal(&recs, cfg.ppo.clusters, cfg.ppo.top_k, cfg.kmeans(), &rlstab_core::numkernel::RandomStream::new(cfg.seed).split_named("rehearsal"))?
        }
        None => {
            let episodes = io::read_episodes(&ctx.input(PPO_TRAIN))?;
            let sft = ctx.policy(SFT_POLICY)?;
            let am = io::read_checkpoint(&ctx.input(&checkpoint_name(ModelKind::Am)))?;
            ex::rehearsal_set(cfg, &episodes, &sft, &am, cfg.ppo.clusters)?
        }
    };
    io::write_rehearsal(&ctx.output(REHEARSAL), &set)
}

fn train_ppo(ctx: &mut Ctx) -> Result<()> {
    let cfg = ctx.cfg;
    let sft = ctx.policy(SFT_POLICY)?;
    let kind = match cfg.ppo.score_mode {
        rlstab_core::policy::ScoreMode::Am => ModelKind::Am,
        _ => ModelKind::Rm,
    };
    let scorer = io::read_checkpoint(&ctx.input(&checkpoint_name(kind)))?;
    let rehearsal = if cfg.ppo.rehearsal {
        let set = io::read_rehearsal(&ctx.input(REHEARSAL))?;
        if set.iter().any(|s| !matches!(s.record.payload, Payload::Episode { .. })) {
            return Err(invalid(format!("{REHEARSAL}: every record needs an episode payload for training")));
        }
        Some(set)
    } else {
        None
    };
    let data = rlstab_core::env::Datasets {
        rm_train: Vec::new(),
        rm_test: Vec::new(),
        ppo_train: io::read_episodes(&ctx.input(PPO_TRAIN))?,
        ppo_test: io::read_episodes(&ctx.input(PPO_TEST))?,
        forget: io::read_experts(&ctx.input(FORGET))?,
        sft_train: Vec::new(),
        source_policies: Vec::new(),
    };
    let name = ex::variant_name(cfg.ppo.score_mode, cfg.ppo.rehearsal);
    let run = ex::run_ppo(cfg, &name, &data, &sft, &scorer, rehearsal.as_deref())?;
    let lineage = Some(format!("{SFT_POLICY}+{}", checkpoint_name(kind)));
    let policy_file = io::PolicyFile::new(&run.policy, cfg.seed, run.stats.len(), lineage);
    io::write_json(&ctx.output(&format!("ppo_{name}.policy.json")), &policy_file)?;
    let snaps = ex::snapshot_table(&run);
    let mut tables = ex::training_report(&name, &snaps)?;
    let mut wl = ex::winloss_table();
    ex::winloss_rows(&mut wl, &run);
    tables.push((format!("{name}_snapshots.csv"), snaps));
    tables.push((format!("{name}_stats.csv"), ex::stats_table(&run)));
    tables.push((format!("winloss_{name}.csv"), wl));
    ctx.tables(&tables)
}

/// Rebuilds curves and a summary from every `*_snapshots.csv` in the run directory.
fn report(ctx: &mut Ctx) -> Result<()> {
    let mut names: Vec<String> = std::fs::read_dir(ctx.dir)
        .map_err(|e| LabError::io(ctx.dir, e))?
        .filter_map(|e| e.ok())
        .filter_map(|e| e.file_name().to_str().and_then(|n| n.strip_suffix("_snapshots.csv")).map(str::to_string))
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(LabError::Missing(ctx.dir.join("<model>_snapshots.csv")));
    }
    let mut summary = Table::new(&["model", "final_delta_reward", "peak_win_minus_lose", "final_win_minus_lose", "final_forget_win_minus_lose"]);
    let mut tables = Vec::new();
    for name in names {
        let snaps = Table::read(&ctx.input(&format!("{name}_snapshots.csv")))?;
        let curves = ex::training_report(&name, &snaps)?;
        let last = |i: usize| -> Result<f64> {
            let col = Table::parse(&curves[i].1.render())?.f64_column("value")?;
            Ok(*col.last().unwrap())
        };
        let wl = Table::parse(&curves[1].1.render())?.f64_column("value")?;
        let peak = wl.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        summary.push(vec![name.as_str().into(), last(0)?.into(), peak.into(), last(1)?.into(), last(2)?.into()]);
        tables.extend(curves);
    }
    tables.push(("report.csv".into(), summary));
    ctx.tables(&tables)
}

fn experiment(ctx: &mut Ctx, which: Experiment) -> Result<()> {
    let lab = Lab::prepare(ctx.cfg)?;
    let tables = ex::run_experiment(&lab, which)?;
    let prefixed: Vec<(String, Table)> = tables
        .into_iter()
        .map(|(rel, t)| (format!("experiments/{}/{rel}", which.name()), t))
        .collect();
    ctx.tables(&prefixed)
}
