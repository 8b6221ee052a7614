#![allow(dead_code)]

use rlstab_core::env::*;
use rlstab_core::numkernel::RandomStream;

pub fn small_env(seed: u64) -> EnvParams {
    EnvParams::generate(&EnvConfig { dim: 3, categories: 3, seed, ..Default::default() }).unwrap()
}

pub fn small_data(seed: u64) -> (EnvParams, Datasets) {
    let env = small_env(seed);
    let cfg = DataConfig {
        rm_train: 200,
        rm_test: 50,
        ppo_train: 40,
        ppo_test: 20,
        forget: 20,
        sft_train: 30,
        ..Default::default()
    };
    let data = build_datasets(&env, &cfg, &RandomStream::new(seed)).unwrap();
    (env, data)
}

pub fn random_vec(rng: &mut RandomStream, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| scale * rng.normal()).collect()
}

pub fn prompt(id: u64, category: usize, features: Vec<f64>) -> Prompt {
    Prompt { id, category, features }
}

pub fn response(id: u64, content: Vec<f64>, exploit: bool) -> Response {
    Response { id, content, exploit }
}

pub fn episode(id: u64, category: usize, x: Vec<f64>, ys: Vec<Vec<f64>>, utilities: Vec<f64>) -> Episode {
    let candidates = ys
        .into_iter()
        .enumerate()
        .map(|(i, y)| response(id * 10 + i as u64, y, false))
        .collect();
    Episode { id, prompt: prompt(id, category, x), candidates, true_utilities: utilities }
}
