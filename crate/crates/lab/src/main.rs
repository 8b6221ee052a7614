use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rlstab::commands::{self, Verb};
use rlstab::experiments::Experiment;
use rlstab::{LabError, RunConfig};

#[derive(Parser)]
#[command(name = "rlstab", version, about = "Reward/advantage models, PPO and selective rehearsal on a synthetic preference world")]
struct Cli {
    #[command(subcommand)]
    verb: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON config; omitted or empty means defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// `block.key=value`, applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output root (overrides paths.out).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Directory name under the output root; defaults to a config-hash id.
    #[arg(long)]
    run_id: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the environment and every dataset split.
    GenData(Common),
    /// Train the reward model.
    TrainRm(Common),
    /// Train the advantage model.
    TrainAm(Common),
    /// Accuracy, calibration and per-category moments of trained scorers.
    EvalScore(Common),
    /// Supervised fine-tuning on expert responses.
    TrainSft(Common),
    /// PPO from the SFT policy, scored by ppo.score_mode.
    TrainPpo(Common),
    /// Build the rehearsal set from PPO prompts or an external JSONL file.
    SelectRehearsal {
        #[command(flatten)]
        common: Common,
        /// External records `{id, embedding, score, payload?}` per line.
        #[arg(long)]
        records: Option<PathBuf>,
    },
    /// Rebuild learning curves from snapshot tables.
    Report(Common),
    /// Run a canned suite: am-vs-rm-calibration, disparity, hacking, forgetting, cluster-sweep.
    Experiment {
        name: String,
        #[command(flatten)]
        common: Common,
    },
}

fn execute(cli: Cli) -> Result<PathBuf, LabError> {
    let (verb, common) = match cli.verb {
        Command::GenData(c) => (Verb::GenData, c),
        Command::TrainRm(c) => (Verb::TrainRm, c),
        Command::TrainAm(c) => (Verb::TrainAm, c),
        Command::EvalScore(c) => (Verb::EvalScore, c),
        Command::TrainSft(c) => (Verb::TrainSft, c),
        Command::TrainPpo(c) => (Verb::TrainPpo, c),
        Command::SelectRehearsal { common, records } => (Verb::SelectRehearsal { records }, common),
        Command::Report(c) => (Verb::Report, c),
        Command::Experiment { name, common } => (Verb::Experiment(name.parse::<Experiment>()?), common),
    };
    let mut overrides = common.set.clone();
    if let Some(seed) = common.seed {
        overrides.push(format!("seed={seed}"));
    }
    if let Some(out) = &common.out {
        overrides.push(format!("paths.out={}", serde_json::Value::String(out.display().to_string())));
    }
    let cfg = RunConfig::load(common.config.as_deref(), &overrides)?;
    let dir = commands::run_dir(&cfg, common.run_id.as_deref());
    commands::run(&verb, &cfg, &dir)?;
    Ok(dir)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(dir) => {
            println!("{}", dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("rlstab: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
