mod common;

use common::*;
use rlstab_core::env::*;
use rlstab_core::numkernel::*;
use rlstab_core::policy::*;
use rlstab_core::scoremodel::{Scorer, ScorerKind};
use rlstab_core::Result;

struct Table(Vec<f64>);

impl Scorer for Table {
    fn score(&self, _prompt: &Prompt, response: &Response) -> Result<f64> {
        Ok(self.0[(response.id % 10) as usize])
    }
    fn kind(&self) -> ScorerKind {
        ScorerKind::Advantage
    }
}

struct Utility;

impl Scorer for Utility {
    fn score(&self, _prompt: &Prompt, response: &Response) -> Result<f64> {
        Ok(-response.content.iter().map(|v| v * v).sum::<f64>())
    }
    fn kind(&self) -> ScorerKind {
        ScorerKind::Oracle
    }
}

fn random_policy(dim: usize, seed: u64, scale: f64) -> SoftmaxPolicy {
    let mut rng = RandomStream::new(seed);
    let mut p = SoftmaxPolicy::zeros(dim);
    for w in p.weights.iter_mut() {
        *w = scale * rng.normal();
    }
    p
}

fn with_weights(p: &SoftmaxPolicy, w: &[f64]) -> SoftmaxPolicy {
    let mut q = p.clone();
    q.weights.copy_from_slice(w);
    q
}

fn fixture_episodes(n: usize, seed: u64) -> Vec<Episode> {
    let mut rng = RandomStream::new(seed);
    (0..n as u64)
        .map(|i| {
            let ys: Vec<Vec<f64>> = (0..4).map(|_| random_vec(&mut rng, 3, 1.0)).collect();
            let u = ys.iter().map(|y| -y.iter().map(|v| v * v).sum::<f64>()).collect();
            episode(i, 0, random_vec(&mut rng, 3, 1.0), ys, u)
        })
        .collect()
}

#[test]
fn probabilities_form_a_simplex() {
    let eps = fixture_episodes(20, 1);
    for seed in 0..10 {
        let p = random_policy(3, seed, 0.7);
        for e in &eps {
            let probs = p.action_probs(e);
            assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(probs.iter().all(|&q| q > 0.0 && q < 1.0));
        }
    }
    let zero = SoftmaxPolicy::zeros(3);
    assert!(zero.action_probs(&eps[0]).iter().all(|&q| (q - 0.25).abs() < 1e-15));
}

#[test]
fn kl_examples() {
    let eps = fixture_episodes(10, 2);
    let p = random_policy(3, 3, 0.5);
    let q = random_policy(3, 4, 0.5);
    for e in &eps {
        assert_eq!(kl_to_init(&p, &p, e), 0.0);
        assert!(kl_to_init(&p, &q, e) >= 0.0);
    }
    // uniform against (0.8, 0.2): make the init favour candidate 0 through the exploit flag
    let mut e = episode(0, 0, vec![0.0; 3], vec![vec![0.0; 3], vec![0.0; 3]], vec![0.0, 0.0]);
    e.candidates[0].exploit = true;
    let mut init = SoftmaxPolicy::zeros(3);
    init.weights[6] = 4f64.ln();
    let kl = kl_to_init(&SoftmaxPolicy::zeros(3), &init, &e);
    assert!((kl - 0.223_143_551_314_209_7).abs() < 1e-12, "{kl}");
}

#[test]
fn nll_gradient_matches_finite_differences() {
    let eps = fixture_episodes(8, 5);
    let targets: Vec<Target> = eps.iter().enumerate().map(|(i, e)| Target { episode: e, index: i % 4 }).collect();
    for seed in 0..20 {
        let p = random_policy(3, 100 + seed, 0.3);
        let (_, g) = nll_and_grad(&p, &targets).unwrap();
        let fd = finite_diff_grad(|w| nll_and_grad(&with_weights(&p, w), &targets).unwrap().0, &p.weights, 1e-5).unwrap();
        assert!(max_relative_error(&g, &fd) <= 1e-4);
    }
}

fn rollouts<'a>(eps: &'a [Episode], behaviour: &SoftmaxPolicy, rng: &mut RandomStream) -> Vec<Rollout<'a>> {
    eps.iter()
        .enumerate()
        .map(|(i, e)| {
            let lp = behaviour.log_probs(e);
            let action = i % e.candidates.len();
            Rollout { episode: e, action, old_logprob: lp[action], advantage: rng.normal() }
        })
        .collect()
}

#[test]
fn surrogate_and_combined_gradients_match_finite_differences() {
    let eps = fixture_episodes(12, 6);
    let targets: Vec<Target> = eps.iter().take(4).map(|e| Target { episode: e, index: e.best_index() }).collect();
    let mut rng = RandomStream::new(7);
    for seed in 0..20 {
        let behaviour = random_policy(3, 200 + seed, 0.3);
        let mut p = behaviour.clone();
        for w in p.weights.iter_mut() {
            *w += 0.05 * rng.normal();
        }
        let ro = rollouts(&eps, &behaviour, &mut rng);
        let (_, g) = surrogate_loss_and_grad(&p, &ro, 0.2).unwrap();
        let fd = finite_diff_grad(|w| surrogate_loss_and_grad(&with_weights(&p, w), &ro, 0.2).unwrap().0, &p.weights, 1e-5).unwrap();
        assert!(max_relative_error(&g, &fd) <= 1e-4);
        let (_, g, _) = combined_loss_and_grad(&p, &ro, 0.2, &targets, 0.01).unwrap();
        let fd = finite_diff_grad(|w| combined_loss_and_grad(&with_weights(&p, w), &ro, 0.2, &targets, 0.01).unwrap().0, &p.weights, 1e-5).unwrap();
        assert!(max_relative_error(&g, &fd) <= 1e-4);
    }
}

#[test]
fn combined_gradient_is_sum_of_parts() {
    let eps = fixture_episodes(12, 8);
    let targets: Vec<Target> = eps.iter().take(5).map(|e| Target { episode: e, index: 1 }).collect();
    let mut rng = RandomStream::new(9);
    let p = random_policy(3, 10, 0.4);
    let ro = rollouts(&eps, &random_policy(3, 11, 0.4), &mut rng);
    let (_, gp) = surrogate_loss_and_grad(&p, &ro, 0.2).unwrap();
    let (_, gn) = nll_and_grad(&p, &targets).unwrap();
    let (_, gc, _) = combined_loss_and_grad(&p, &ro, 0.2, &targets, 0.01).unwrap();
    let expected: Vec<f64> = gp.iter().zip(&gn).map(|(a, b)| a + 0.01 * b).collect();
    assert!(max_relative_error(&gc, &expected) <= 1e-10);
}

#[test]
fn sft_converges_on_tiny_fixture() {
    let eps = fixture_episodes(3, 12);
    let targets: Vec<Target> = eps.iter().enumerate().map(|(i, e)| Target { episode: e, index: i }).collect();
    let mut p = SoftmaxPolicy::zeros(3);
    let mut adam = AdamState::new(p.weights.len());
    let mut rng = RandomStream::new(1);
    for _ in 0..2000 {
        sft_update(&mut p, &targets, 0.05, 3, &mut adam, &mut rng).unwrap();
    }
    for t in &targets {
        assert!(p.action_probs(t.episode)[t.index] > 0.9);
    }
}

#[test]
fn sft_zero_lr_and_bad_index() {
    let eps = fixture_episodes(3, 13);
    let targets: Vec<Target> = eps.iter().map(|e| Target { episode: e, index: 2 }).collect();
    let mut p = random_policy(3, 1, 0.2);
    let before = p.clone();
    let mut adam = AdamState::new(p.weights.len());
    sft_update(&mut p, &targets, 0.0, 2, &mut adam, &mut RandomStream::new(1)).unwrap();
    assert_eq!(p, before);
    let bad = [Target { episode: &eps[0], index: 9 }];
    assert!(sft_update(&mut p, &bad, 0.1, 2, &mut adam, &mut RandomStream::new(1)).is_err());
}

#[test]
fn clip_zero_makes_ppo_a_no_op() {
    let eps = fixture_episodes(10, 14);
    let init = random_policy(3, 2, 0.3);
    let settings = PpoSettings { clip: 0.0, batch_prompts: 10, lr: 0.1, ..Default::default() };
    let mut tr = PpoTrainer::new(init.clone(), settings, RandomStream::new(3)).unwrap();
    for _ in 0..5 {
        let batch = tr.next_batch(&eps);
        tr.ppo_step(&batch, &Table(vec![0.0, 1.0, -1.0, 0.5, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0])).unwrap();
    }
    assert_eq!(tr.policy, init);
}

#[test]
fn zero_gamma_matches_plain_ppo_bitwise() {
    let eps = fixture_episodes(16, 15);
    let rehearsal: Vec<Target> = eps.iter().map(|e| Target { episode: e, index: e.best_index() }).collect();
    let scorer = Table(vec![0.3, -1.0, 2.0, 0.1, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    let settings = PpoSettings { gamma: 0.0, batch_prompts: 8, ..Default::default() };
    let mut a = PpoTrainer::new(SoftmaxPolicy::zeros(3), settings.clone(), RandomStream::new(4)).unwrap();
    let mut b = PpoTrainer::new(SoftmaxPolicy::zeros(3), settings, RandomStream::new(4)).unwrap();
    for _ in 0..20 {
        let ba = a.next_batch(&eps);
        let bb = b.next_batch(&eps);
        let sa = a.ppo_step(&ba, &scorer).unwrap();
        let sb = b.ppo_sr_step(&bb, &scorer, &rehearsal).unwrap();
        assert_eq!(sa.mean_score.to_bits(), sb.mean_score.to_bits());
    }
    let bits = |p: &SoftmaxPolicy| p.weights.iter().map(|w| w.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a.policy), bits(&b.policy));
}

#[test]
fn ppo_is_deterministic_and_rejects_wrong_scorer() {
    let eps = fixture_episodes(16, 16);
    let scorer = Table(vec![0.3, -1.0, 2.0, 0.1, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    let run = || {
        let mut t = PpoTrainer::new(SoftmaxPolicy::zeros(3), PpoSettings { batch_prompts: 8, ..Default::default() }, RandomStream::new(5)).unwrap();
        for _ in 0..10 {
            let b = t.next_batch(&eps);
            t.ppo_step(&b, &scorer).unwrap();
        }
        t.policy
    };
    assert_eq!(run(), run());
    let mut rm = PpoTrainer::new(SoftmaxPolicy::zeros(3), PpoSettings { score_mode: ScoreMode::Rm, ..Default::default() }, RandomStream::new(5)).unwrap();
    let b = rm.next_batch(&eps);
    assert!(rm.ppo_step(&b, &scorer).is_err());
    let mut sr = PpoTrainer::new(SoftmaxPolicy::zeros(3), PpoSettings::default(), RandomStream::new(5)).unwrap();
    assert!(sr.ppo_sr_step(&b, &scorer, &[]).is_err());
}

#[test]
fn oracle_ppo_improves_expected_utility() {
    let eps = fixture_episodes(10, 17);
    let expected = |p: &SoftmaxPolicy| {
        eps.iter()
            .map(|e| p.action_probs(e).iter().zip(&e.true_utilities).map(|(a, b)| a * b).sum::<f64>())
            .sum::<f64>()
            / eps.len() as f64
    };
    let init = SoftmaxPolicy::zeros(3);
    let settings = PpoSettings { beta: 0.0, batch_prompts: 10, lr: 1e-2, score_mode: ScoreMode::Rm, ..Default::default() };
    let mut tr = PpoTrainer::new(init.clone(), settings, RandomStream::new(6)).unwrap();
    for _ in 0..200 {
        let b = tr.next_batch(&eps);
        tr.ppo_step(&b, &Utility).unwrap();
    }
    assert!(expected(&tr.policy) > expected(&init) + 0.1);
}

#[test]
fn oracle_single_step_moves_mass_toward_better_candidate() {
    let e = episode(0, 0, vec![1.0, 0.0, 0.0], vec![vec![0.1, 0.0, 0.0], vec![2.0, 0.0, 0.0]], vec![-0.01, -4.0]);
    // one prompt alone has zero batch-centred advantage, so repeat it
    let pool: Vec<Episode> = (0..8).map(|i| Episode { id: i, ..e.clone() }).collect();
    let settings = PpoSettings { beta: 0.0, batch_prompts: 8, lr: 1e-2, score_mode: ScoreMode::Rm, ..Default::default() };
    let mut tr = PpoTrainer::new(SoftmaxPolicy::zeros(3), settings, RandomStream::new(2)).unwrap();
    let b = tr.next_batch(&pool);
    tr.ppo_step(&b, &Utility).unwrap();
    assert!(tr.policy.action_probs(&pool[0])[0] > 0.5);
}

#[test]
fn rejection_sampling_thresholds() {
    let eps = fixture_episodes(10, 18);
    let batch: Vec<&Episode> = eps.iter().collect();
    let p = random_policy(3, 3, 0.2);
    let rng = RandomStream::new(1);
    let mut adam = AdamState::new(p.weights.len());

    let mut q = p.clone();
    assert_eq!(rejection_sampling_iteration(&mut q, &batch, &Utility, f64::INFINITY, 0.1, &mut adam, &rng).unwrap(), 0);
    assert_eq!(q, p);
    assert_eq!(rejection_sampling_iteration(&mut q, &batch, &Utility, f64::NEG_INFINITY, 0.1, &mut adam, &rng).unwrap(), 10);
    assert_ne!(q, p);
    assert!(rejection_sampling_iteration(&mut q, &batch, &Utility, f64::NAN, 0.1, &mut adam, &rng).is_err());

    // enumerate the sampled scores with the same streams and put tau at the third largest
    let mut scores: Vec<f64> = eps
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let a = rng.split(i as u64).categorical(&p.action_probs(e));
            Utility.score(&e.prompt, &e.candidates[a]).unwrap()
        })
        .collect();
    scores.sort_by(|a, b| b.total_cmp(a));
    let mut q = p.clone();
    let mut adam = AdamState::new(p.weights.len());
    assert_eq!(rejection_sampling_iteration(&mut q, &batch, &Utility, scores[2], 0.1, &mut adam, &rng).unwrap(), 3);
    let tau = score_quantile(&p, &batch, &Utility, 0.75, &rng).unwrap();
    let mut sorted = scores.clone();
    sorted.sort_by(f64::total_cmp);
    assert_eq!(tau, sorted[7]);
}
