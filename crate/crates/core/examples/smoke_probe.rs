use std::path::PathBuf;
use std::time::Instant;

use pfa_core::config::{Config, Direction, EvalSection};
use pfa_core::data::synthetic::{self, SyntheticSpec};
use pfa_core::eval::{evaluate, AgingModel, EvalContext};
use pfa_core::image::clip_unit;
use pfa_core::nets::IdentityEmbedder;
use pfa_core::train::{
    self, pretrain_age_estimator, untrained_model, Dataset, GanTrainer, GenModel,
};
use pfa_core::Real;

fn main() {
    let iters: u64 = std::env::var("SMOKE_ITERS")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(300);
    let epochs: usize = std::env::var("SMOKE_EPOCHS")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(6);

    let dir = std::env::temp_dir().join("pfa_smoke_probe_data");
    if !dir.join("manifest.csv").exists() {
        println!("generating dataset...");
        synthetic::generate(
            &dir,
            &SyntheticSpec {
                identities: 80,
                images_per_identity: 16,
                size: 64,
                seed: 0,
            },
        )
        .unwrap();
    }

    let mut cfg = Config::default();
    cfg.data.root = dir.display().to_string();
    cfg.train.max_iterations = iters;
    cfg.train.checkpoint_every = 1_000_000; // no periodic checkpoints here
    cfg.train.seed = 7;
    cfg.pretrain.epochs = epochs;
    cfg.eval.max_eval_faces = 64;

    let ds = Dataset::<Real>::load(&cfg).unwrap();
    println!(
        "dataset: {} train / {} test images",
        ds.train_store.len(),
        ds.test_store.len()
    );

    let t0 = Instant::now();
    let (est, out1) = pretrain_age_estimator(
        &ds.train_store,
        &ds.train_real_groups,
        &ds.train_ages,
        Some((&ds.test_store, &ds.test_ages)),
        ds.n,
        64,
        &cfg.pretrain,
    )
    .unwrap();
    println!(
        "estimator: val MAE {:.2} years  ({:.1} s)",
        out1.val_mae,
        t0.elapsed().as_secs_f64()
    );
    let mut oracle_cfg = cfg.pretrain.clone();
    oracle_cfg.seed += 1000;
    let (mut oracle, out2) = pretrain_age_estimator(
        &ds.train_store,
        &ds.train_real_groups,
        &ds.train_ages,
        Some((&ds.test_store, &ds.test_ages)),
        ds.n,
        64,
        &oracle_cfg,
    )
    .unwrap();
    println!("oracle: val MAE {:.2} years", out2.val_mae);

    // Untrained PCC baseline.
    let data = ds.eval_data();
    let eval_cfg = EvalSection {
        max_eval_faces: 64,
        ..Default::default()
    };
    let mut embedder = IdentityEmbedder::from_seed(cfg.eval.embedder_seed);
    let mut untrained = untrained_model::<Real>(&cfg, ds.n);
    let base_report = evaluate(EvalContext {
        model: &mut untrained,
        oracle: &mut oracle,
        embedder: &mut embedder,
        data: &data,
        cfg: &eval_cfg,
        direction: Direction::Aging,
        mode: "untrained".into(),
        checkpoint: String::new(),
        config_hash: String::new(),
    })
    .unwrap();
    println!(
        "untrained: pcc {:.4}, IS {:.3}, confidences {:?}",
        base_report.pcc,
        base_report.inception_score,
        base_report
            .groups
            .iter()
            .map(|g| g.verification_confidence.unwrap_or(f64::NAN))
            .collect::<Vec<_>>()
    );

    let phi = train::load_feature_net(&cfg).unwrap();
    let mut trainer = GanTrainer::new(&cfg, ds.n, est, phi).unwrap();
    let t1 = Instant::now();
    for i in 1..=iters {
        let report = trainer.step(&ds).unwrap();
        if i % 50 == 0 || i == 1 {
            println!(
                "iter {i:>5}: total {:.3} adv {:.4} age {:.3} pix {:.4} ssim {:.4} fea {:.5} d {:.4}  ({:.2} s/it)",
                report.total,
                report.adv,
                report.age,
                report.pixel,
                report.ssim,
                report.feature,
                report.d_loss,
                t1.elapsed().as_secs_f64() / i as f64
            );
        }
    }

    let mut model = match &trainer.gen {
        GenModel::Chain(g) => AgingModel::Progressive(g.clone()),
        GenModel::Single(g) => AgingModel::SingleStep(g.clone()),
    };
    let report = evaluate(EvalContext {
        model: &mut model,
        oracle: &mut oracle,
        embedder: &mut embedder,
        data: &data,
        cfg: &eval_cfg,
        direction: Direction::Aging,
        mode: "trained".into(),
        checkpoint: String::new(),
        config_hash: String::new(),
    })
    .unwrap();
    println!(
        "trained: pcc {:.4} (untrained {:.4}), IS {:.3}, age errors {:?}, confidences {:?}, rates {:?}",
        report.pcc,
        base_report.pcc,
        report.inception_score,
        report
            .groups
            .iter()
            .map(|g| g.age_error.unwrap_or(f64::NAN))
            .collect::<Vec<_>>(),
        report
            .groups
            .iter()
            .map(|g| g.verification_confidence.unwrap_or(f64::NAN))
            .collect::<Vec<_>>(),
        report
            .groups
            .iter()
            .map(|g| g.verification_rate.unwrap_or(f64::NAN))
            .collect::<Vec<_>>(),
    );

    // Ordinal check: mean oracle ages of generated group 2 vs group 4.
    let sources: Vec<usize> = data
        .mapped_groups
        .iter()
        .enumerate()
        .filter(|(_, &g)| g == 1)
        .map(|(i, _)| i)
        .take(48)
        .collect();
    let batch = train::batch_of(
        &sources
            .iter()
            .map(|&i| data.images[i].clone())
            .collect::<Vec<_>>(),
    );
    let mut mean_age = |t: usize, model: &mut AgingModel<Real>, oracle: &mut pfa_core::nets::AgeEstimator<Real>| -> f64 {
        let (aged, _) = model.age_batch(&batch, 1, t).unwrap();
        let (ages, _, _) = oracle.estimate(&clip_unit(&aged)).unwrap();
        ages.iter().map(|&a| a as f64).sum::<f64>() / ages.len() as f64
    };
    let m2 = mean_age(2, &mut model, &mut oracle);
    let m3 = mean_age(3, &mut model, &mut oracle);
    let m4 = mean_age(4, &mut model, &mut oracle);
    println!("generated mean ages: ->2 {m2:.2}  ->3 {m3:.2}  ->4 {m4:.2}");
    let mean_path = PathBuf::from("/tmp/pfa_smoke_probe_done");
    let _ = std::fs::write(mean_path, "done");
}
