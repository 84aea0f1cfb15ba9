use std::time::Instant;

use pfa_core::config::Config;
use pfa_core::data::synthetic::{self, SyntheticSpec};
use pfa_core::nets::AgeEstimator;
use pfa_core::nn::HasParams;
use pfa_core::train::{load_feature_net, Dataset, GanTrainer};
use pfa_core::Real;
use rand::SeedableRng;

fn main() {
    let dir = std::env::temp_dir().join("pfa_step_bench");
    let _ = std::fs::remove_dir_all(&dir);
    synthetic::generate(
        &dir,
        &SyntheticSpec {
            identities: 24,
            images_per_identity: 8,
            size: 64,
            seed: 0,
        },
    )
    .unwrap();

    let mut cfg = Config::default();
    cfg.data.root = dir.display().to_string();
    cfg.train.max_iterations = 10;
    let ds = Dataset::<Real>::load(&cfg).unwrap();

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
    let est = AgeEstimator::<Real>::new(&mut rng, 64, 4).unwrap();
    let phi = load_feature_net(&cfg).unwrap();
    let mut trainer = GanTrainer::new(&cfg, ds.n, est, phi).unwrap();

    // warmup
    trainer.step(&ds).unwrap();
    let t = Instant::now();
    let reps = 5;
    for _ in 0..reps {
        trainer.step(&ds).unwrap();
    }
    let per = t.elapsed().as_secs_f64() / reps as f64;
    println!("train step: {per:.3} s  ->  2000 iterations ~ {:.1} min", per * 2000.0 / 60.0);

    let t = Instant::now();
    let mut est2 = AgeEstimator::<Real>::new(&mut rng, 64, 4).unwrap();
    let x = ds.train_store.batch(&(0..32).collect::<Vec<_>>(), &vec![false; 32]);
    let ages = ndarray::Array1::from_elem(32, 40.0f32);
    let groups = vec![2usize; 32];
    est2.zero_grads();
    pfa_core::loss::age_pretrain_step(
        &mut est2,
        &x,
        &ages,
        &groups,
        pfa_core::loss::AgeReduction::MeanAbs,
    )
    .unwrap();
    println!(
        "age pretrain fwd+bwd, batch 32: {:.3} s",
        t.elapsed().as_secs_f64()
    );
    let _ = std::fs::remove_dir_all(&dir);
}
