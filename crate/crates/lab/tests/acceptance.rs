//! Acceptance suite: one PASS/FAIL line per criterion over seeds 1, 2, 3 on
//! the desk-scale configuration in `configs/desk.json`.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use rlstab::experiments::{evaluate_scorer, Experiment, Lab, PpoRun, ScorerEval, CLUSTER_SWEEP};
use rlstab::RunConfig;
use rlstab_core::env::{Episode, Prompt, Response};
use rlstab_core::numkernel::{finite_diff_grad, max_relative_error, AdamState, RandomStream};
use rlstab_core::policy::*;
use rlstab_core::rehearsal::*;
use rlstab_core::scoremodel::*;

const SEEDS: [u64; 3] = [1, 2, 3];
const GRAD_TOL: f64 = 1e-4;
const ACC_SLACK: f64 = 1.0;
const SPREAD_RATIO: f64 = 0.5;
const HACK_DROP: f64 = 5.0;
const AM_PEAK_SLACK: f64 = 2.0;
const MAIN_SLACK: f64 = 1.0;
const SWEEP_FRACTION: f64 = 0.10;
const KMEANS_TOL: f64 = 1e-9;

fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn desk_config(seed: u64) -> RunConfig {
    RunConfig::load(Some(&repo_root().join("configs/desk.json")), &[format!("seed={seed}")]).unwrap()
}

struct SeedResult {
    seed: u64,
    rm_eval: ScorerEval,
    am_eval: ScorerEval,
    rm_run: PpoRun,
    am_run: PpoRun,
    /// AM-PPO-SR per cluster count; the configured count is used for criteria 5 and 6.
    sr_runs: Vec<(usize, PpoRun)>,
    clusters: usize,
}

impl SeedResult {
    fn sr(&self) -> &PpoRun {
        &self.sr_runs.iter().find(|(c, _)| *c == self.clusters).unwrap().1
    }
}

fn run_seed(seed: u64) -> SeedResult {
    let cfg = desk_config(seed);
    let lab = Lab::prepare(&cfg).unwrap();
    let eval = |s: &ScoreCheckpoint| evaluate_scorer(&cfg, s, &lab.data.rm_test, &lab.data.ppo_test).unwrap();
    let sr_runs = CLUSTER_SWEEP
        .iter()
        .map(|&c| {
            let set = lab.rehearsal(c).unwrap();
            (c, lab.run(&format!("am_sr_c{c}"), ScoreMode::Am, Some(&set)).unwrap())
        })
        .collect();
    SeedResult {
        seed,
        rm_eval: eval(&lab.rm),
        am_eval: eval(&lab.am),
        rm_run: lab.run("rm", ScoreMode::Rm, None).unwrap(),
        am_run: lab.run("am", ScoreMode::Am, None).unwrap(),
        sr_runs,
        clusters: cfg.ppo.clusters,
    }
}

struct Verdict {
    failures: Vec<usize>,
}

impl Verdict {
    fn report(&mut self, id: usize, name: &str, pass: bool, detail: String) {
        println!("criterion {id:>2} {name:<34} {} | {detail}", if pass { "PASS" } else { "FAIL" });
        if !pass {
            self.failures.push(id);
        }
    }
}

// ---- criterion 1 ----

fn random_prompt(rng: &mut RandomStream, id: u64, d: usize) -> Prompt {
    Prompt { id, category: 0, features: (0..d).map(|_| rng.normal()).collect() }
}

fn random_response(rng: &mut RandomStream, id: u64, d: usize) -> Response {
    Response { id, content: (0..d).map(|_| rng.normal()).collect(), exploit: rng.bernoulli(0.3) }
}

fn random_episode(rng: &mut RandomStream, id: u64, d: usize, pool: usize) -> Episode {
    let candidates: Vec<Response> = (0..pool).map(|i| random_response(rng, id * 10 + i as u64, d)).collect();
    let true_utilities = (0..pool).map(|_| rng.normal()).collect();
    Episode { id, prompt: random_prompt(rng, id, d), candidates, true_utilities }
}

fn gradient_errors() -> Vec<(&'static str, f64)> {
    let cfg = desk_config(1);
    let lab_data = rlstab::experiments::generate(&cfg).unwrap().1;
    let pairs = &lab_data.rm_train[..8];
    let adv = cfg.advantage();
    let layout = ScoreLayout { dim: cfg.environment.dim, hidden: vec![8, 8] };
    let mut worst = vec![("rm_loss", 0.0f64), ("am_loss", 0.0), ("sft_nll", 0.0), ("ppo_surrogate", 0.0), ("ppo_sr_combined", 0.0)];
    let mut bump = |i: usize, e: f64| worst[i].1 = worst[i].1.max(e);
    let d = cfg.environment.dim;
    let mut rng = RandomStream::new(99);
    let episodes: Vec<Episode> = (0..10).map(|i| random_episode(&mut rng, i, d, 5)).collect();
    let targets: Vec<Target> = episodes.iter().take(4).map(|e| Target { episode: e, index: e.best_index() }).collect();
    for point in 0..20u64 {
        let mut r = RandomStream::new(1000 + point);
        let mut net = ScoreNet::init(layout.clone(), &mut r);
        for p in net.params.iter_mut() {
            *p += 0.1 * r.normal();
        }
        let with = |x: &[f64]| {
            let mut n = net.clone();
            n.params.copy_from_slice(x);
            n
        };
        let (_, g) = rm_loss_and_grad(&net, pairs).unwrap();
        let fd = finite_diff_grad(|x| rm_loss_and_grad(&with(x), pairs).unwrap().0, &net.params, 1e-5).unwrap();
        bump(0, max_relative_error(&g, &fd));
        let (_, g) = am_loss_and_grad(&net, pairs, &adv).unwrap();
        let fd = finite_diff_grad(|x| am_loss_and_grad(&with(x), pairs, &adv).unwrap().0, &net.params, 1e-5).unwrap();
        bump(1, max_relative_error(&g, &fd));

        let mut behaviour = SoftmaxPolicy::zeros(d);
        for w in behaviour.weights.iter_mut() {
            *w = 0.2 * r.normal();
        }
        let mut p = behaviour.clone();
        for w in p.weights.iter_mut() {
            *w += 0.02 * r.normal();
        }
        let pol = |w: &[f64]| {
            let mut q = p.clone();
            q.weights.copy_from_slice(w);
            q
        };
        let rollouts: Vec<Rollout> = episodes
            .iter()
            .enumerate()
            .map(|(i, e)| {
                let action = i % e.candidates.len();
                Rollout { episode: e, action, old_logprob: behaviour.log_probs(e)[action], advantage: r.normal() }
            })
            .collect();
        let (_, g) = nll_and_grad(&p, &targets).unwrap();
        let fd = finite_diff_grad(|w| nll_and_grad(&pol(w), &targets).unwrap().0, &p.weights, 1e-5).unwrap();
        bump(2, max_relative_error(&g, &fd));
        let (_, g) = surrogate_loss_and_grad(&p, &rollouts, 0.2).unwrap();
        let fd = finite_diff_grad(|w| surrogate_loss_and_grad(&pol(w), &rollouts, 0.2).unwrap().0, &p.weights, 1e-5).unwrap();
        bump(3, max_relative_error(&g, &fd));
        let (_, g, _) = combined_loss_and_grad(&p, &rollouts, 0.2, &targets, 0.01).unwrap();
        let fd = finite_diff_grad(|w| combined_loss_and_grad(&pol(w), &rollouts, 0.2, &targets, 0.01).unwrap().0, &p.weights, 1e-5).unwrap();
        bump(4, max_relative_error(&g, &fd));
    }
    worst
}

// ---- criterion 8 ----

fn sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Best 2-partition objective by enumerating every assignment.
fn exhaustive_two_means(points: &[Vec<f64>]) -> f64 {
    let n = points.len();
    let mut best = f64::INFINITY;
    for mask in 1..(1u32 << n) - 1 {
        let mut total = 0.0;
        for side in [true, false] {
            let members: Vec<&Vec<f64>> = (0..n).filter(|&i| (mask >> i & 1 == 1) == side).map(|i| &points[i]).collect();
            let d = members[0].len();
            let centroid: Vec<f64> = (0..d).map(|j| members.iter().map(|p| p[j]).sum::<f64>() / members.len() as f64).collect();
            total += members.iter().map(|p| sq(p, &centroid)).sum::<f64>();
        }
        best = best.min(total);
    }
    best
}

fn selection_checks() -> (f64, usize) {
    let mut rng = RandomStream::new(8);
    let mut worst = 0.0f64;
    for trial in 0..200u64 {
        let n = 3 + (trial % 6) as usize;
        let pts: Vec<Vec<f64>> = (0..n).map(|_| (0..2).map(|_| rng.normal()).collect()).collect();
        let got = kmeans_points(&pts, 2, &RandomStream::new(trial), KMeansSettings { max_iters: 100, restarts: 50 }).unwrap();
        worst = worst.max((got.objective - exhaustive_two_means(&pts)).abs());
    }
    let mut mismatches = 0;
    for trial in 0..1000u64 {
        let n = 1 + rng.below(30);
        let clusters = 1 + rng.below(4);
        let k = 1 + rng.below(6);
        let records: Vec<RehearsalRecord> = (0..n)
            .map(|i| RehearsalRecord {
                id: (n - i) as u64 * 3 + trial,
                embedding: vec![0.0],
                // coarse grid so ties are common
                am_score: rng.below(5) as f64 * 0.5,
                payload: Payload::None,
            })
            .collect();
        let assignments: Vec<usize> = (0..n).map(|_| rng.below(clusters)).collect();
        let clustering = Clustering {
            assignments: assignments.clone(),
            centroids: vec![vec![0.0]; clusters],
            objective: 0.0,
            iterations_used: 0,
            objective_trace: vec![],
        };
        let got: Vec<(usize, u64)> = select_top_k(&records, &clustering, k).unwrap().iter().map(|s| (s.cluster, s.record.id)).collect();
        let mut want = Vec::new();
        for c in 0..clusters {
            let mut members: Vec<&RehearsalRecord> = records.iter().zip(&assignments).filter(|(_, &a)| a == c).map(|(r, _)| r).collect();
            members.sort_by_key(|r| r.id);
            // stable sort keeps the id order among equal scores
            members.sort_by(|a, b| b.am_score.partial_cmp(&a.am_score).unwrap());
            want.extend(members.iter().take(k).map(|r| (c, r.id)));
        }
        if got != want {
            mismatches += 1;
        }
    }
    (worst, mismatches)
}

// ---- criterion 9 ----

fn metric_csvs(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|e| e == "csv") {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn determinism() -> (usize, usize) {
    let tmp = tempfile::tempdir().unwrap();
    let config = repo_root().join("configs/desk.json");
    let mut compared = 0;
    let mut differing = 0;
    for exp in Experiment::ALL {
        let mut dirs = Vec::new();
        for rep in 0..2 {
            let run_id = format!("{}-{rep}", exp.name());
            let status = Command::new(env!("CARGO_BIN_EXE_rlstab"))
                .args(["experiment", exp.name(), "--config"])
                .arg(&config)
                .arg("--out")
                .arg(tmp.path())
                .args(["--run-id", &run_id, "--seed", "1"])
                .output()
                .unwrap();
            assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
            dirs.push(tmp.path().join(run_id));
        }
        let (a, b) = (metric_csvs(&dirs[0]), metric_csvs(&dirs[1]));
        assert!(!a.is_empty());
        compared += a.len();
        if a != b {
            differing += 1;
        }
    }
    (compared, differing)
}

// ---- criterion 10 ----

fn degenerate_identities() -> Vec<(&'static str, bool)> {
    let cfg = desk_config(1);
    let (_, data) = rlstab::experiments::generate(&RunConfig {
        data: rlstab::config::DataBlock { rm_train: 200, rm_test: 50, ppo_train: 200, ppo_test: 50, forget: 50, sft_train: 50, ..cfg.data.clone() },
        ..cfg.clone()
    })
    .unwrap();
    let (sft, _) = rlstab::experiments::train_sft(&cfg, &data.sft_train).unwrap();
    let mut small = cfg.clone();
    small.score.epochs = 1;
    let (am, _) = rlstab::experiments::train_scorer(&small, ModelKind::Am, &data).unwrap();

    let targets: Vec<Target> = data.sft_train.iter().map(Target::from).collect();
    let settings = PpoSettings { gamma: 0.0, steps: 10, ..cfg.ppo_settings() };
    let mut plain = PpoTrainer::new(sft.clone(), settings.clone(), RandomStream::new(5)).unwrap();
    let mut sr = PpoTrainer::new(sft.clone(), settings, RandomStream::new(5)).unwrap();
    for _ in 0..10 {
        let b = plain.next_batch(&data.ppo_train);
        plain.ppo_step(&b, &am).unwrap();
        let b = sr.next_batch(&data.ppo_train);
        sr.ppo_sr_step(&b, &am, &targets).unwrap();
    }
    let gamma_zero = plain.policy.weights.iter().zip(&sr.policy.weights).all(|(a, b)| a.to_bits() == b.to_bits());

    let k0 = AdvantageConfig { k: 0, ..cfg.advantage() };
    let mut k_zero = true;
    for rec in &data.rm_test {
        let (r, e) = score(&am.net, &rec.prompt, &rec.chosen).unwrap();
        let a = advantage_score(&am.net, &rec.prompt, &rec.chosen, rec.chosen_current_logprob, rec.chosen_logprob, rec.source_is_current(), &k0).unwrap();
        k_zero &= a.to_bits() == (r - e).to_bits();
    }

    let batch: Vec<&Episode> = data.ppo_train.iter().take(64).collect();
    let mut p = sft.clone();
    let mut adam = AdamState::new(p.weights.len());
    rejection_sampling_iteration(&mut p, &batch, &am, f64::INFINITY, 1e-2, &mut adam, &RandomStream::new(3)).unwrap();
    let tau_inf = p.weights.iter().zip(&sft.weights).all(|(a, b)| a.to_bits() == b.to_bits());
    vec![("gamma=0 PPO-SR == PPO", gamma_zero), ("K=0 advantage == r - e", k_zero), ("tau=+inf rejection no-op", tau_inf)]
}

fn main() {
    let start = Instant::now();
    let mut v = Verdict { failures: Vec::new() };

    let grads = gradient_errors();
    let worst = grads.iter().map(|g| g.1).fold(0.0, f64::max);
    let detail = grads.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect::<Vec<_>>().join(", ");
    v.report(1, "gradient correctness", worst <= GRAD_TOL, detail);

    let results: Vec<SeedResult> = SEEDS.iter().map(|&s| run_seed(s)).collect();
    let per_seed = |f: &dyn Fn(&SeedResult) -> (bool, String)| -> (usize, String) {
        let mut passed = 0;
        let mut parts = Vec::new();
        for r in &results {
            let (ok, s) = f(r);
            passed += ok as usize;
            parts.push(format!("s{} {}{}", r.seed, s, if ok { "" } else { " x" }));
        }
        (passed, parts.join("; "))
    };

    let (n, d) = per_seed(&|r| {
        let (rc, ac) = (&r.rm_eval.calibration, &r.am_eval.calibration);
        let ok = ac.ece < rc.ece && 100.0 * ac.accuracy >= 100.0 * rc.accuracy - ACC_SLACK;
        (ok, format!("ECE rm {:.2} am {:.2}, acc rm {:.1} am {:.1}", rc.ece, ac.ece, 100.0 * rc.accuracy, 100.0 * ac.accuracy))
    });
    v.report(2, "calibration ordering", n == SEEDS.len(), d);

    let (n, d) = per_seed(&|r| {
        let (rm, am) = (&r.rm_eval.moments, &r.am_eval.moments);
        let ok = am.mean_spread <= SPREAD_RATIO * rm.mean_spread && am.std_ratio <= rm.std_ratio;
        (ok, format!("spread rm {:.3} am {:.3}, std ratio rm {:.2} am {:.2}", rm.mean_spread, am.mean_spread, rm.std_ratio, am.std_ratio))
    });
    v.report(3, "disparity reduction", n == SEEDS.len(), d);

    let (rm_n, rm_d) = per_seed(&|r| {
        let run = &r.rm_run;
        let drop = run.peak_win_minus_lose() - run.last().main.win_minus_lose();
        let ok = run.last().score > run.first().score && drop >= HACK_DROP;
        (ok, format!("rm score {:.3}->{:.3} drop {:.1}", run.first().score, run.last().score, drop))
    });
    let (am_n, am_d) = per_seed(&|r| {
        let run = &r.am_run;
        let drop = run.peak_win_minus_lose() - run.last().main.win_minus_lose();
        (drop <= AM_PEAK_SLACK, format!("am drop {:.1}", drop))
    });
    v.report(4, "reward hacking signature", 2 * rm_n > SEEDS.len() && am_n == SEEDS.len(), format!("{rm_d} | {am_d}"));

    let (n, d) = per_seed(&|r| {
        let f = |run: &PpoRun| run.last().forget.win_minus_lose();
        let (sr, am, rm) = (f(r.sr()), f(&r.am_run), f(&r.rm_run));
        (sr >= am && am > rm && rm < 0.0, format!("forget W-L sr {sr:.1} am {am:.1} rm {rm:.1}"))
    });
    v.report(5, "forgetting mitigation", n == SEEDS.len(), d);

    let (n, d) = per_seed(&|r| {
        let (sr, am) = (r.sr().last().main.win_minus_lose(), r.am_run.last().main.win_minus_lose());
        (sr >= am - MAIN_SLACK, format!("main W-L sr {sr:.1} am {am:.1}"))
    });
    v.report(6, "main-set non-regression", n == SEEDS.len(), d);

    let (n, d) = per_seed(&|r| {
        let finals: Vec<f64> = r.sr_runs.iter().map(|(_, run)| run.last().score).collect();
        let spread = finals.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - finals.iter().cloned().fold(f64::INFINITY, f64::min);
        let gain = r.am_run.last().score - r.am_run.first().score;
        (spread <= SWEEP_FRACTION * gain, format!("spread {spread:.4} vs gain {gain:.4}"))
    });
    v.report(7, "cluster-count robustness", n == SEEDS.len(), d);

    let (kmeans_err, mismatches) = selection_checks();
    v.report(
        8,
        "selection oracle equivalence",
        kmeans_err <= KMEANS_TOL && mismatches == 0,
        format!("kmeans max |obj - exhaustive| {kmeans_err:.1e}, top-k mismatches {mismatches}/1000"),
    );

    let (files, differing) = determinism();
    v.report(9, "determinism", differing == 0, format!("{files} CSVs over {} experiments, {differing} differing", Experiment::ALL.len()));

    let ids = degenerate_identities();
    let detail = ids.iter().map(|(n, ok)| format!("{n}: {}", if *ok { "exact" } else { "differs" })).collect::<Vec<_>>().join(", ");
    v.report(10, "degenerate-config identities", ids.iter().all(|i| i.1), detail);

    println!("acceptance finished in {:.0}s; failing criteria: {:?}", start.elapsed().as_secs_f64(), v.failures);
    if !v.failures.is_empty() {
        std::process::exit(1);
    }
}
