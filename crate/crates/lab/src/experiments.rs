//! Shared pipeline stages and the canned experiment suites.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rlstab_core::env::{build_datasets, Datasets, EnvParams, Episode, ExpertPair};
use rlstab_core::eval::{
    calibration_curve, category_moments, expected_calibration_error, mean_greedy_score, mean_greedy_utility,
    win_rate_vs_expert, win_rate_vs_reference, CalibrationReport, CurvePoint, MomentsReport, WinLossReport,
};
use rlstab_core::numkernel::{AdamState, RandomStream};
use rlstab_core::policy::{sft_update, PpoTrainer, ScoreMode, SoftmaxPolicy, StepStats, Target};
use rlstab_core::rehearsal::{build_rehearsal_set, rehearsal_targets, Selected};
use rlstab_core::scoremodel::{train_score_model, ModelKind, ScoreCheckpoint, TrainLogRow};

use crate::config::RunConfig;
use crate::csv::{Cell, Table};
use crate::error::{invalid, Result};

pub const CLUSTER_SWEEP: [usize; 4] = [4, 8, 16, 32];

fn root(cfg: &RunConfig) -> RandomStream {
    RandomStream::new(cfg.seed)
}

pub fn generate(cfg: &RunConfig) -> Result<(EnvParams, Datasets)> {
    let env = EnvParams::generate(&cfg.env_config())?;
    let data = build_datasets(&env, &cfg.data_config(), &root(cfg).split_named("data"))?;
    Ok((env, data))
}

pub fn train_scorer(cfg: &RunConfig, kind: ModelKind, data: &Datasets) -> Result<(ScoreCheckpoint, Vec<TrainLogRow>)> {
    train_scorer_on(cfg, kind, &data.rm_train)
}

pub fn train_scorer_on(
    cfg: &RunConfig,
    kind: ModelKind,
    pairs: &[rlstab_core::env::ComparisonRecord],
) -> Result<(ScoreCheckpoint, Vec<TrainLogRow>)> {
    let rng = root(cfg).split_named(kind.name());
    Ok(train_score_model(kind, pairs, &cfg.advantage(), &cfg.score_settings(), &rng)?)
}

/// Teacher forcing on the expert pairs; returns the policy and the last
/// mini-batch loss of every epoch.
pub fn train_sft(cfg: &RunConfig, experts: &[ExpertPair]) -> Result<(SoftmaxPolicy, Vec<f64>)> {
    if experts.is_empty() {
        return Err(invalid("sft_train split is empty"));
    }
    let mut policy = SoftmaxPolicy::zeros(cfg.environment.dim);
    let mut adam = AdamState::new(policy.weights.len());
    let targets: Vec<Target> = experts.iter().map(Target::from).collect();
    let mut rng = root(cfg).split_named("sft");
    let mut losses = Vec::with_capacity(cfg.sft.epochs);
    for _ in 0..cfg.sft.epochs {
        losses.push(sft_update(&mut policy, &targets, cfg.sft.lr, cfg.sft.batch_size, &mut adam, &mut rng)?);
    }
    Ok((policy, losses))
}

pub fn rehearsal_set(cfg: &RunConfig, episodes: &[Episode], sft: &SoftmaxPolicy, am: &ScoreCheckpoint, clusters: usize) -> Result<Vec<Selected>> {
    Ok(build_rehearsal_set(
        episodes,
        sft,
        am,
        clusters,
        cfg.ppo.top_k,
        cfg.kmeans(),
        &root(cfg).split_named("rehearsal"),
    )?)
}

/// Everything the experiment suites share.
pub struct Lab {
    pub cfg: RunConfig,
    pub env: EnvParams,
    pub data: Datasets,
    pub rm: ScoreCheckpoint,
    pub am: ScoreCheckpoint,
    pub sft: SoftmaxPolicy,
    pub rm_log: Vec<TrainLogRow>,
    pub am_log: Vec<TrainLogRow>,
}

impl Lab {
    pub fn prepare(cfg: &RunConfig) -> Result<Self> {
        let (env, data) = generate(cfg)?;
        let (rm, rm_log) = train_scorer(cfg, ModelKind::Rm, &data)?;
        let (am, am_log) = train_scorer(cfg, ModelKind::Am, &data)?;
        let (sft, _) = train_sft(cfg, &data.sft_train)?;
        Ok(Self {
            cfg: cfg.clone(),
            env,
            data,
            rm,
            am,
            sft,
            rm_log,
            am_log,
        })
    }

    pub fn scorer(&self, mode: ScoreMode) -> &ScoreCheckpoint {
        match mode {
            ScoreMode::Rm | ScoreMode::RmMa => &self.rm,
            ScoreMode::Am => &self.am,
        }
    }

    pub fn run(&self, name: &str, mode: ScoreMode, rehearsal: Option<&[Selected]>) -> Result<PpoRun> {
        let mut cfg = self.cfg.clone();
        cfg.ppo.score_mode = mode;
        run_ppo(&cfg, name, &self.data, &self.sft, self.scorer(mode), rehearsal)
    }

    pub fn rehearsal(&self, clusters: usize) -> Result<Vec<Selected>> {
        rehearsal_set(&self.cfg, &self.data.ppo_train, &self.sft, &self.am, clusters)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub step: usize,
    /// Mean scorer value of greedy candidates on the test prompts.
    pub score: f64,
    pub sft_score: f64,
    pub utility: f64,
    pub main: WinLossReport,
    pub forget: WinLossReport,
}

#[derive(Debug, Clone)]
pub struct PpoRun {
    pub name: String,
    pub snapshots: Vec<Snapshot>,
    pub stats: Vec<StepStats>,
    pub policy: SoftmaxPolicy,
}

impl PpoRun {
    pub fn first(&self) -> &Snapshot {
        &self.snapshots[0]
    }

    pub fn last(&self) -> &Snapshot {
        self.snapshots.last().unwrap()
    }

    pub fn peak_win_minus_lose(&self) -> f64 {
        self.snapshots.iter().map(|s| s.main.win_minus_lose()).fold(f64::NEG_INFINITY, f64::max)
    }
}

fn snapshot(
    step: usize,
    policy: &SoftmaxPolicy,
    sft: &SoftmaxPolicy,
    data: &Datasets,
    scorer: &ScoreCheckpoint,
    sft_score: f64,
    tie: f64,
) -> Result<Snapshot> {
    Ok(Snapshot {
        step,
        score: mean_greedy_score(policy, &data.ppo_test, scorer)?,
        sft_score,
        utility: mean_greedy_utility(policy, &data.ppo_test),
        main: win_rate_vs_reference(policy, sft, &data.ppo_test, tie),
        forget: win_rate_vs_expert(policy, &data.forget, tie),
    })
}

/// PPO from the SFT policy with `cfg.ppo.score_mode`, optionally with
/// rehearsal. Snapshots are taken at step 0, every `snapshot_interval`
/// steps and after the last step.
pub fn run_ppo(
    cfg: &RunConfig,
    name: &str,
    data: &Datasets,
    sft: &SoftmaxPolicy,
    scorer: &ScoreCheckpoint,
    rehearsal: Option<&[Selected]>,
) -> Result<PpoRun> {
    let targets = match rehearsal {
        Some(set) => Some(rehearsal_targets(set, &data.ppo_train)?),
        None => None,
    };
    let mut trainer = PpoTrainer::new(sft.clone(), cfg.ppo_settings(), root(cfg).split_named("ppo"))?;
    let tie = cfg.eval.tie_epsilon;
    let sft_score = mean_greedy_score(sft, &data.ppo_test, scorer)?;
    let steps = cfg.ppo.steps;
    let mut snapshots = vec![snapshot(0, sft, sft, data, scorer, sft_score, tie)?];
    let mut stats = Vec::with_capacity(steps);
    for step in 1..=steps {
        let batch = trainer.next_batch(&data.ppo_train);
        stats.push(match &targets {
            Some(t) => trainer.ppo_sr_step(&batch, scorer, t)?,
            None => trainer.ppo_step(&batch, scorer)?,
        });
        if step % cfg.eval.snapshot_interval == 0 || step == steps {
            snapshots.push(snapshot(step, &trainer.policy, sft, data, scorer, sft_score, tie)?);
        }
    }
    Ok(PpoRun {
        name: name.to_string(),
        snapshots,
        stats,
        policy: trainer.policy,
    })
}

/// Run name for a score mode with or without rehearsal, e.g. `am_sr`.
pub fn variant_name(mode: ScoreMode, rehearsal: bool) -> String {
    format!("{}{}", mode.name(), if rehearsal { "_sr" } else { "" })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    AmVsRmCalibration,
    Disparity,
    Hacking,
    Forgetting,
    ClusterSweep,
}

impl Experiment {
    pub const ALL: [Experiment; 5] = [
        Experiment::AmVsRmCalibration,
        Experiment::Disparity,
        Experiment::Hacking,
        Experiment::Forgetting,
        Experiment::ClusterSweep,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::AmVsRmCalibration => "am-vs-rm-calibration",
            Experiment::Disparity => "disparity",
            Experiment::Hacking => "hacking",
            Experiment::Forgetting => "forgetting",
            Experiment::ClusterSweep => "cluster-sweep",
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Experiment {
    type Err = crate::error::LabError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| invalid(format!("unknown experiment `{s}`")))
    }
}

pub struct ScorerEval {
    pub kind: ModelKind,
    pub calibration: CalibrationReport,
    pub curve: Vec<CurvePoint>,
    pub moments: MomentsReport,
}

pub fn evaluate_scorer(cfg: &RunConfig, scorer: &ScoreCheckpoint, test_pairs: &[rlstab_core::env::ComparisonRecord], episodes: &[Episode]) -> Result<ScorerEval> {
    Ok(ScorerEval {
        kind: scorer.mode,
        calibration: expected_calibration_error(scorer, test_pairs, cfg.eval.bins)?,
        curve: calibration_curve(scorer, test_pairs, cfg.eval.bins)?,
        moments: category_moments(scorer, episodes)?,
    })
}

pub struct SweepResult {
    pub sft_reward: f64,
    pub am_reward: f64,
    pub runs: Vec<(usize, PpoRun)>,
}

impl SweepResult {
    pub fn spread(&self) -> f64 {
        let finals: Vec<f64> = self.runs.iter().map(|(_, r)| r.last().score).collect();
        finals.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - finals.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn improvement(&self) -> f64 {
        self.am_reward - self.sft_reward
    }
}

pub fn cluster_sweep(lab: &Lab, clusters: &[usize]) -> Result<SweepResult> {
    let am = lab.run("am", ScoreMode::Am, None)?;
    let mut runs = Vec::with_capacity(clusters.len());
    for &c in clusters {
        let set = lab.rehearsal(c)?;
        runs.push((c, lab.run(&format!("am_sr_c{c}"), ScoreMode::Am, Some(&set))?));
    }
    Ok(SweepResult {
        sft_reward: am.first().score,
        am_reward: am.last().score,
        runs,
    })
}

// ---- tables ----

pub fn calibration_tables(evals: &[ScorerEval]) -> (Table, Table, Table) {
    let mut bins = Table::new(&["model", "bin", "conf", "acc", "count"]);
    let mut curve = Table::new(&["model", "mean_delta", "accuracy", "ideal", "count"]);
    let mut summary = Table::new(&["model", "accuracy", "ece"]);
    for e in evals {
        let m = e.kind.name();
        for (i, b) in e.calibration.bins.iter().enumerate() {
            bins.push(vec![m.into(), i.into(), b.confidence_mean.into(), b.empirical_accuracy.into(), b.count.into()]);
        }
        for p in &e.curve {
            curve.push(vec![m.into(), p.mean_delta.into(), p.accuracy.into(), p.ideal.into(), p.count.into()]);
        }
        summary.push(vec![m.into(), e.calibration.accuracy.into(), e.calibration.ece.into()]);
    }
    (bins, curve, summary)
}

fn score_kind(kind: ModelKind) -> &'static str {
    match kind {
        ModelKind::Rm => "r",
        ModelKind::Am => "a",
    }
}

pub fn moment_tables(evals: &[ScorerEval]) -> (Table, Table) {
    let mut moments = Table::new(&["category", "kind", "mean", "std", "count"]);
    let mut disparity = Table::new(&["kind", "mean_spread", "mean_deviation", "std_ratio"]);
    for e in evals {
        let k = score_kind(e.kind);
        for c in &e.moments.categories {
            moments.push(vec![c.category.into(), k.into(), c.mean.into(), c.std.into(), c.count.into()]);
        }
        disparity.push(vec![
            k.into(),
            e.moments.mean_spread.into(),
            e.moments.mean_deviation.into(),
            e.moments.std_ratio.into(),
        ]);
    }
    (moments, disparity)
}

pub const SNAPSHOT_COLUMNS: [&str; 12] = [
    "step",
    "score",
    "sft_score",
    "utility",
    "main_win",
    "main_lose",
    "main_tie",
    "main_n",
    "forget_win",
    "forget_lose",
    "forget_tie",
    "forget_n",
];

pub fn snapshot_table(run: &PpoRun) -> Table {
    let mut t = Table::new(&SNAPSHOT_COLUMNS);
    for s in &run.snapshots {
        t.push(vec![
            s.step.into(),
            s.score.into(),
            s.sft_score.into(),
            s.utility.into(),
            s.main.win.into(),
            s.main.lose.into(),
            s.main.tie.into(),
            s.main.n.into(),
            s.forget.win.into(),
            s.forget.lose.into(),
            s.forget.tie.into(),
            s.forget.n.into(),
        ]);
    }
    t
}

pub fn stats_table(run: &PpoRun) -> Table {
    let mut t = Table::new(&["step", "mean_score", "mean_kl", "mean_oracle_utility", "rehearsal_nll"]);
    for s in &run.stats {
        t.push(vec![
            s.step.into(),
            s.mean_score.into(),
            s.mean_kl.into(),
            s.mean_oracle_utility.into(),
            s.rehearsal_nll.into(),
        ]);
    }
    t
}

pub fn train_log_table(log: &[TrainLogRow]) -> Table {
    let mut t = Table::new(&["step", "loss", "lr"]);
    for r in log {
        t.push(vec![r.step.into(), r.loss.into(), r.lr.into()]);
    }
    t
}

fn curve(steps: &[f64], values: impl Iterator<Item = f64>) -> Table {
    let mut t = Table::new(&["step", "value"]);
    for (&s, v) in steps.iter().zip(values) {
        t.push(vec![Cell::Int(s as i64), v.into()]);
    }
    t
}

/// Learning curves from a snapshot table: delta reward against the SFT
/// policy, oracle win-minus-lose on the main and forget sets, and oracle
/// utility. Returned as `(relative path, table)`.
pub fn training_report(name: &str, snapshots: &Table) -> Result<Vec<(String, Table)>> {
    if snapshots.rows.is_empty() {
        return Err(invalid(format!("{name}: snapshot table is empty")));
    }
    let col = |c: &str| snapshots.f64_column(c).map_err(|e| invalid(format!("{name}: {e}")));
    let step = col("step")?;
    let score = col("score")?;
    let sft = col("sft_score")?;
    let utility = col("utility")?;
    let (mw, ml) = (col("main_win")?, col("main_lose")?);
    let (fw, fl) = (col("forget_win")?, col("forget_lose")?);
    let diff = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x - y).collect::<Vec<_>>();
    Ok(vec![
        (format!("curves/{name}_delta_reward.csv"), curve(&step, diff(&score, &sft).into_iter())),
        (format!("curves/{name}_win_minus_lose.csv"), curve(&step, diff(&mw, &ml).into_iter())),
        (format!("curves/{name}_forget_win_minus_lose.csv"), curve(&step, diff(&fw, &fl).into_iter())),
        (format!("curves/{name}_utility.csv"), curve(&step, utility.into_iter())),
    ])
}

pub fn winloss_rows(t: &mut Table, run: &PpoRun) {
    let s = run.last();
    for (set, r) in [("main", &s.main), ("forget", &s.forget)] {
        t.push(vec![set.into(), run.name.as_str().into(), r.win.into(), r.lose.into(), r.tie.into(), r.n.into()]);
    }
}

pub fn winloss_table() -> Table {
    Table::new(&["set", "model", "win", "lose", "tie", "n"])
}

/// Writes `(relative path, table)` pairs under `dir` and returns the paths.
pub fn write_tables(dir: &Path, tables: &[(String, Table)]) -> Result<Vec<String>> {
    for (rel, t) in tables {
        t.write(&dir.join(rel))?;
    }
    Ok(tables.iter().map(|(rel, _)| rel.clone()).collect())
}

fn run_tables(run: &PpoRun) -> Result<Vec<(String, Table)>> {
    let snaps = snapshot_table(run);
    let mut out = training_report(&run.name, &snaps)?;
    out.push((format!("{}_snapshots.csv", run.name), snaps));
    out.push((format!("{}_stats.csv", run.name), stats_table(run)));
    Ok(out)
}

/// Runs a canned suite and returns its tables keyed by relative path.
pub fn run_experiment(lab: &Lab, which: Experiment) -> Result<Vec<(String, Table)>> {
    let mut out = Vec::new();
    match which {
        Experiment::AmVsRmCalibration | Experiment::Disparity => {
            let evals = [&lab.rm, &lab.am]
                .into_iter()
                .map(|s| evaluate_scorer(&lab.cfg, s, &lab.data.rm_test, &lab.data.ppo_test))
                .collect::<Result<Vec<_>>>()?;
            if which == Experiment::AmVsRmCalibration {
                let (bins, curve, summary) = calibration_tables(&evals);
                out.push(("calibration.csv".into(), bins));
                out.push(("calibration_curve.csv".into(), curve));
                out.push(("accuracy.csv".into(), summary));
            } else {
                let (moments, disparity) = moment_tables(&evals);
                out.push(("moments.csv".into(), moments));
                out.push(("disparity.csv".into(), disparity));
            }
        }
        Experiment::Hacking | Experiment::Forgetting => {
            let mut runs = vec![lab.run("rm", ScoreMode::Rm, None)?];
            if which == Experiment::Hacking {
                runs.push(lab.run("rm_ma", ScoreMode::RmMa, None)?);
                runs.push(lab.run("am", ScoreMode::Am, None)?);
            } else {
                runs.push(lab.run("am", ScoreMode::Am, None)?);
                let set = lab.rehearsal(lab.cfg.ppo.clusters)?;
                runs.push(lab.run("am_sr", ScoreMode::Am, Some(&set))?);
            }
            let mut summary = Table::new(&["model", "initial_score", "final_score", "peak_win_minus_lose", "final_win_minus_lose", "forget_win_minus_lose"]);
            let mut wl = winloss_table();
            for r in &runs {
                summary.push(vec![
                    r.name.as_str().into(),
                    r.first().score.into(),
                    r.last().score.into(),
                    r.peak_win_minus_lose().into(),
                    r.last().main.win_minus_lose().into(),
                    r.last().forget.win_minus_lose().into(),
                ]);
                winloss_rows(&mut wl, r);
                out.extend(run_tables(r)?);
            }
            out.push((format!("{}.csv", which.name()), summary));
            out.push(("winloss.csv".into(), wl));
        }
        Experiment::ClusterSweep => {
            let sweep = cluster_sweep(lab, &CLUSTER_SWEEP)?;
            let mut t = Table::new(&["c", "final_reward"]);
            for (c, run) in &sweep.runs {
                t.push(vec![(*c).into(), run.last().score.into()]);
                let steps: Vec<f64> = run.snapshots.iter().map(|s| s.step as f64).collect();
                out.push((format!("curves/am_sr_c{c}.csv"), curve(&steps, run.snapshots.iter().map(|s| s.score))));
            }
            let mut s = Table::new(&["sft_reward", "am_reward", "improvement", "spread"]);
            s.push(vec![sweep.sft_reward.into(), sweep.am_reward.into(), sweep.improvement().into(), sweep.spread().into()]);
            out.push(("cluster_sweep.csv".into(), t));
            out.push(("cluster_sweep_summary.csv".into(), s));
        }
    }
    Ok(out)
}
