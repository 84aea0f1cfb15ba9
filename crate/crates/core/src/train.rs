//! Two-phase optimization: estimator pre-training, then alternating
//! adversarial training of the gated generator chain and the conditioned
//! discriminator, with the ablation and baseline modes.

use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::{concatenate, Array1, Array4, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::age::AgeGroupPartition;
use crate::ckpt::{self, CkptMeta};
use crate::cond::condition_batch;
use crate::config::{AgeNetMode, Config, Direction, TrainMode};
use crate::data::{
    ingest, ImageStore, PairPolicy, PairSample, PairSampler, Split,
};
use crate::error::{Error, Result};
use crate::eval::{self, AgingModel, EvalContext, EvalData, EvalReport};
use crate::gates::GateVector;
use crate::loss::{
    adv_loss_d, adv_loss_g_grad, age_loss_grad, age_pretrain_step, identity_loss_grad,
    total_g_loss, LossReport, LossWeights, SsimSettings,
};
use crate::nets::{
    AgeEstimator, FeatureNet, IdentityEmbedder, PatchDiscriminator, ProgressiveGenerator,
    SubGenerator,
};
use crate::nn::param::HasParams;
use crate::nn::{Adam, ParamMut, ParamRef};
use crate::scalar::{sc, Scalar};

/// Loaded dataset with groups mapped into the training direction's index
/// space (rejuvenation reverses the group order; ages stay real).
pub struct Dataset<S: Scalar> {
    pub partition: AgeGroupPartition,
    pub n: usize,
    pub direction: Direction,
    pub train_store: ImageStore<S>,
    pub train_mapped_groups: Vec<usize>,
    pub train_real_groups: Vec<usize>,
    pub train_ages: Vec<u32>,
    pub test_store: ImageStore<S>,
    pub test_mapped_groups: Vec<usize>,
    pub test_ages: Vec<u32>,
    pub test_identities: Vec<String>,
    pub sampler: PairSampler,
}

impl<S: Scalar> Dataset<S> {
    pub fn load(cfg: &Config) -> Result<Self> {
        let partition = cfg.partition()?;
        let n = partition.group_count();
        let root = PathBuf::from(&cfg.data.root);
        let manifest = root.join("manifest.csv");
        if !manifest.exists() {
            return Err(Error::Config(format!(
                "dataset manifest {} does not exist (check data.root)",
                manifest.display()
            )));
        }
        let records = ingest(&manifest, &partition, cfg.data.seed)?;
        let direction = cfg.train.direction;
        let map_group = |g: usize| match direction {
            Direction::Aging => g,
            Direction::Rejuvenation => partition.reverse_group(g),
        };

        let train_recs: Vec<_> = records
            .iter()
            .filter(|r| r.split == Split::Train)
            .cloned()
            .collect();
        let test_recs: Vec<_> = records
            .iter()
            .filter(|r| r.split == Split::Test)
            .cloned()
            .collect();
        let (train_store, train_kept) = ImageStore::load(&root, &train_recs, cfg.data.size);
        let (test_store, test_kept) = ImageStore::load(&root, &test_recs, cfg.data.size);
        if train_store.is_empty() {
            return Err(Error::Data("no loadable training images".into()));
        }

        let train_mapped_groups: Vec<usize> = train_kept
            .iter()
            .map(|&i| map_group(train_recs[i].group))
            .collect();
        let train_real_groups: Vec<usize> =
            train_kept.iter().map(|&i| train_recs[i].group).collect();
        let train_ages: Vec<u32> = train_kept.iter().map(|&i| train_recs[i].age).collect();
        let test_mapped_groups: Vec<usize> = test_kept
            .iter()
            .map(|&i| map_group(test_recs[i].group))
            .collect();
        let test_ages: Vec<u32> = test_kept.iter().map(|&i| test_recs[i].age).collect();
        let test_identities: Vec<String> = test_kept
            .iter()
            .map(|&i| test_recs[i].identity.clone())
            .collect();

        let sampler = PairSampler::new(
            &train_mapped_groups,
            &train_ages,
            n,
            cfg.train.target_age,
        )?;
        Ok(Dataset {
            partition,
            n,
            direction,
            train_store,
            train_mapped_groups,
            train_real_groups,
            train_ages,
            test_store,
            test_mapped_groups,
            test_ages,
            test_identities,
            sampler,
        })
    }

    /// Real (unmapped) group for a mapped index.
    pub fn real_group(&self, mapped: usize) -> usize {
        match self.direction {
            Direction::Aging => mapped,
            Direction::Rejuvenation => self.partition.reverse_group(mapped),
        }
    }

    pub fn eval_data(&self) -> EvalData<S> {
        EvalData {
            images: (0..self.test_store.len())
                .map(|i| self.test_store.image(i).clone())
                .collect(),
            identities: self.test_identities.clone(),
            mapped_groups: self.test_mapped_groups.clone(),
        }
    }
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct PretrainOutcome {
    pub final_train_loss: f64,
    pub val_mae: f64,
    pub epochs: usize,
}

/// Pre-train an age estimator on real faces (regression + group
/// classification). Returns the trained network and its validation report.
pub fn pretrain_age_estimator<S: Scalar>(
    store: &ImageStore<S>,
    real_groups: &[usize],
    ages: &[u32],
    val: Option<(&ImageStore<S>, &[u32])>,
    n_groups: usize,
    image_size: usize,
    cfg: &crate::config::PretrainSection,
) -> Result<(AgeEstimator<S>, PretrainOutcome)> {
    if store.is_empty() {
        return Err(Error::Data("no training faces for pre-training".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut est = AgeEstimator::<S>::new(&mut rng, image_size, n_groups)?;
    let mut opt = Adam::<S>::new(cfg.lr, 0.9, 0.999);
    let mut last_loss = f64::NAN;

    let count = store.len();
    let mut order: Vec<usize> = (0..count).collect();
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr * cfg.lr_decay.powi((epoch / cfg.lr_decay_every.max(1)) as i32);
        opt.set_lr(lr);
        // Fisher-Yates over the seeded stream.
        for i in (1..order.len()).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        for chunk in order.chunks(cfg.batch_size) {
            if chunk.len() < 2 {
                continue; // batch statistics need at least two samples
            }
            let flips = vec![false; chunk.len()];
            let x = store.batch(chunk, &flips);
            let age_targets =
                Array1::from_iter(chunk.iter().map(|&i| sc::<S>(ages[i] as f64)));
            let group_targets: Vec<usize> = chunk.iter().map(|&i| real_groups[i]).collect();
            est.zero_grads();
            let parts = age_pretrain_step(
                &mut est,
                &x,
                &age_targets,
                &group_targets,
                crate::loss::AgeReduction::MeanAbs,
            )?;
            last_loss = parts.total.to_f64();
            if !last_loss.is_finite() {
                return Err(Error::Numerical(format!(
                    "age pre-training diverged at epoch {epoch} (loss {last_loss})"
                )));
            }
            opt.step(&mut est);
        }
    }

    let val_mae = match val {
        Some((vstore, vages)) if !vstore.is_empty() => {
            estimator_mae(&mut est, vstore, vages)?
        }
        _ => estimator_mae(&mut est, store, ages)?,
    };
    Ok((
        est,
        PretrainOutcome {
            final_train_loss: last_loss,
            val_mae,
            epochs: cfg.epochs,
        },
    ))
}

/// Mean absolute error of expected ages over a store.
pub fn estimator_mae<S: Scalar>(
    est: &mut AgeEstimator<S>,
    store: &ImageStore<S>,
    ages: &[u32],
) -> Result<f64> {
    let mut abs_sum = 0.0;
    let mut count = 0usize;
    let idx: Vec<usize> = (0..store.len()).collect();
    for chunk in idx.chunks(32) {
        let flips = vec![false; chunk.len()];
        let x = store.batch(chunk, &flips);
        let (pred, _, _) = est.estimate(&x)?;
        for (k, &i) in chunk.iter().enumerate() {
            abs_sum += (pred[k].to_f64() - ages[i] as f64).abs();
            count += 1;
        }
    }
    Ok(abs_sum / count.max(1) as f64)
}

/// The generator under optimization: the gated chain, or the single
/// conditional network of the ablation.
pub enum GenModel<S: Scalar> {
    Chain(ProgressiveGenerator<S>),
    Single(SubGenerator<S>),
}

impl<S: Scalar> HasParams<S> for GenModel<S> {
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(ParamMut<'_, S>)) {
        match self {
            GenModel::Chain(g) => g.visit_mut(prefix, f),
            GenModel::Single(g) => g.visit_mut(prefix, f),
        }
    }

    fn visit(&self, prefix: &str, f: &mut dyn FnMut(ParamRef<'_, S>)) {
        match self {
            GenModel::Chain(g) => g.visit(prefix, f),
            GenModel::Single(g) => g.visit(prefix, f),
        }
    }
}

pub struct GanTrainer<S: Scalar> {
    pub gen: GenModel<S>,
    pub disc: PatchDiscriminator<S>,
    pub estimator: AgeEstimator<S>,
    pub phi: FeatureNet<S>,
    opt_g: Adam<S>,
    opt_d: Adam<S>,
    pub weights: LossWeights,
    ssim: SsimSettings,
    mode: TrainMode,
    age_net: AgeNetMode,
    age_reduction: crate::loss::AgeReduction,
    d_steps_per_g: usize,
    flip_augment: bool,
    batch_hint: usize,
    n: usize,
    rng: ChaCha8Rng,
    pub iteration: u64,
}

impl<S: Scalar> GanTrainer<S> {
    /// Build generator, discriminator and optimizers from the config; the
    /// estimator arrives pre-trained and stays frozen.
    pub fn new(cfg: &Config, n: usize, estimator: AgeEstimator<S>, phi: FeatureNet<S>) -> Result<Self> {
        let weights = cfg.loss_weights()?;
        let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.train.seed.wrapping_add(0x47454E));
        let gen = match cfg.train.mode {
            TrainMode::CganSingle => GenModel::Single(SubGenerator::new(&mut init_rng, 3 + n)),
            _ => GenModel::Chain(ProgressiveGenerator::new(&mut init_rng, n)),
        };
        let mut disc_rng = ChaCha8Rng::seed_from_u64(cfg.train.seed.wrapping_add(0x444953));
        let disc = PatchDiscriminator::new(&mut disc_rng, n);
        Ok(GanTrainer {
            gen,
            disc,
            estimator,
            phi,
            opt_g: Adam::new(cfg.train.lr_g, cfg.train.adam_beta1, cfg.train.adam_beta2),
            opt_d: Adam::new(cfg.train.lr_d, cfg.train.adam_beta1, cfg.train.adam_beta2),
            weights,
            ssim: SsimSettings::default(),
            mode: cfg.train.mode,
            age_net: cfg.train.age_net,
            age_reduction: cfg.train.age_reduction,
            d_steps_per_g: cfg.train.d_steps_per_g,
            flip_augment: cfg.data.flip_augment,
            batch_hint: cfg.train.batch_size,
            n,
            rng: ChaCha8Rng::seed_from_u64(cfg.train.seed),
            iteration: 0,
        })
    }

    pub fn pair_policy(&self) -> PairPolicy {
        match self.mode {
            TrainMode::PfaIndependent => PairPolicy::Adjacent,
            _ => PairPolicy::Any,
        }
    }

    /// Sample a batch of pairs and run one alternating D/G update.
    pub fn step(&mut self, ds: &Dataset<S>) -> Result<LossReport> {
        let policy = self.pair_policy();
        let batch = (0..self.batch_size_hint())
            .map(|_| ds.sampler.sample_pair(&mut self.rng, policy))
            .collect::<Vec<_>>();
        self.step_with_pairs(ds, &batch)
    }

    fn batch_size_hint(&self) -> usize {
        self.batch_hint
    }

    /// One full training iteration on an explicit pair batch: discriminator
    /// update(s) on real faces of all groups vs the current fakes, then one
    /// generator update through the whole engaged chain.
    pub fn step_with_pairs(&mut self, ds: &Dataset<S>, pairs: &[PairSample]) -> Result<LossReport> {
        let b = pairs.len();
        if b == 0 {
            return Err(Error::invalid("empty training batch"));
        }
        let src_idx: Vec<usize> = pairs.iter().map(|p| p.image).collect();
        let src_flips: Vec<bool> = (0..b)
            .map(|_| self.flip_augment && self.rng.gen_bool(0.5))
            .collect();
        let x_src = ds.train_store.batch(&src_idx, &src_flips);
        let t_mapped: Vec<usize> = pairs.iter().map(|p| p.t).collect();
        let t_real: Vec<usize> = t_mapped.iter().map(|&t| ds.real_group(t)).collect();
        let target_ages = Array1::from_iter(pairs.iter().map(|p| sc::<S>(p.target_age)));

        // Generator forward (training caches kept for the backward pass).
        let fake = match &mut self.gen {
            GenModel::Chain(g) => {
                let gates: Result<Vec<GateVector>> = pairs
                    .iter()
                    .map(|p| {
                        let gv = GateVector::for_mapping(p.s, p.t, self.n)?;
                        gv.validate_contiguous()?;
                        Ok(gv)
                    })
                    .collect();
                g.forward(&x_src, &gates?, true)?
            }
            GenModel::Single(g) => {
                let (_, _, h, w) = x_src.dim();
                let cond = condition_batch::<S>(&t_mapped, self.n, h, w)?;
                let stacked = concatenate(Axis(1), &[x_src.view(), cond.view()])
                    .expect("concat image with condition");
                g.forward(&stacked, true)
            }
        };

        // Discriminator update(s). The fake batch is treated as constant
        // here (no gradient flows back into the generator).
        let mut d_loss = 0.0;
        for _ in 0..self.d_steps_per_g {
            self.disc.zero_grads();
            self.disc.power_iterate();
            let mut real_idx = Vec::with_capacity(b);
            let mut real_groups = Vec::with_capacity(b);
            for _ in 0..b {
                let (i, g) = ds.sampler.sample_real(&mut self.rng);
                real_idx.push(i);
                real_groups.push(g);
            }
            let real_flips: Vec<bool> = (0..b)
                .map(|_| self.flip_augment && self.rng.gen_bool(0.5))
                .collect();
            let x_real = ds.train_store.batch(&real_idx, &real_flips);

            let s_real = self.disc.forward(&x_real, &real_groups, true)?;
            let nr = sc::<S>(s_real.len() as f64);
            let d_real = s_real.mapv(|s| (s - S::one()) / nr);
            self.disc.backward(&d_real, false, true);

            let s_fake = self.disc.forward(&fake, &t_mapped, true)?;
            let nf = sc::<S>(s_fake.len() as f64);
            let d_fake = s_fake.mapv(|s| s / nf);
            self.disc.backward(&d_fake, false, true);

            d_loss = adv_loss_d(&s_real, &s_fake).to_f64();
            self.opt_d.step(&mut self.disc);
        }

        // Generator update against the freshly updated discriminator.
        self.gen.zero_grads();
        let s_fake = self.disc.forward(&fake, &t_mapped, true)?;
        let (adv, d_scores) = adv_loss_g_grad(&s_fake);
        let d_fake_adv = self
            .disc
            .backward(&d_scores, true, false)
            .expect("dx requested");

        let (age_parts, d_fake_age) = age_loss_grad(
            &mut self.estimator,
            &fake,
            &target_ages,
            &t_real,
            self.age_reduction,
            self.age_net == AgeNetMode::DexMultitask,
        )?;
        let (ide_parts, d_fake_ide) =
            identity_loss_grad(&fake, &x_src, &mut self.phi, &self.weights, &self.ssim)?;

        let (l_adv, l_age, l_ide) = (
            sc::<S>(self.weights.lambda_adv),
            sc::<S>(self.weights.lambda_age),
            sc::<S>(self.weights.lambda_ide),
        );
        let mut d_fake_total = d_fake_adv.mapv(|v| v * l_adv);
        d_fake_total.zip_mut_with(&d_fake_age, |acc, &v| *acc = *acc + l_age * v);
        d_fake_total.zip_mut_with(&d_fake_ide, |acc, &v| *acc = *acc + l_ide * v);

        match &mut self.gen {
            GenModel::Chain(g) => {
                g.backward(&d_fake_total, true);
            }
            GenModel::Single(g) => {
                g.backward(&d_fake_total, false, true);
            }
        }
        self.opt_g.step(&mut self.gen);
        self.iteration += 1;

        let report = LossReport {
            adv: adv.to_f64(),
            age: age_parts.total.to_f64(),
            pixel: ide_parts.pixel.to_f64(),
            ssim: ide_parts.ssim.to_f64(),
            feature: ide_parts.feature.to_f64(),
            ide: ide_parts.total.to_f64(),
            total: total_g_loss(
                adv.to_f64(),
                age_parts.total.to_f64(),
                ide_parts.total.to_f64(),
                &self.weights,
            ),
            d_loss,
        };
        if !report.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite loss at iteration {}: {report:?}",
                self.iteration
            )));
        }
        Ok(report)
    }
}

/// Run directory layout: config snapshot, run manifest, per-step loss log,
/// checkpoints, and the final evaluation report.
pub struct RunPaths {
    pub root: PathBuf,
    pub checkpoints: PathBuf,
    pub losses_csv: PathBuf,
    pub eval_dir: PathBuf,
}

impl RunPaths {
    /// Create (or, with `force`, reuse) a run directory.
    pub fn prepare(root: &Path, force: bool) -> Result<RunPaths> {
        if root.exists() {
            let occupied = root
                .read_dir()
                .map(|mut d| d.next().is_some())
                .unwrap_or(false);
            if occupied && !force {
                return Err(Error::Config(format!(
                    "run directory {} already exists; pass --force to overwrite",
                    root.display()
                )));
            }
        }
        let checkpoints = root.join("checkpoints");
        std::fs::create_dir_all(&checkpoints)
            .map_err(|e| Error::io(checkpoints.display().to_string(), e))?;
        Ok(RunPaths {
            root: root.to_path_buf(),
            checkpoints,
            losses_csv: root.join("losses.csv"),
            eval_dir: root.join("eval"),
        })
    }
}

#[derive(Debug, serde::Serialize)]
pub struct RunManifest {
    pub command: String,
    pub seed: u64,
    pub code_version: String,
    pub started_at: String,
    pub config: std::collections::BTreeMap<String, String>,
}

/// Write the immutable run manifest and the config snapshot before any
/// long-running work starts.
pub fn write_run_manifest(run: &RunPaths, command: &str, cfg: &Config) -> Result<()> {
    let snapshot_path = run.root.join("config.snapshot.toml");
    std::fs::write(&snapshot_path, cfg.to_toml())
        .map_err(|e| Error::io(snapshot_path.display().to_string(), e))?;
    let manifest = RunManifest {
        command: command.to_string(),
        seed: cfg.train.seed,
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        started_at: now_utc(),
        config: cfg.flatten(),
    };
    let path = run.root.join("manifest.json");
    let body = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Data(format!("manifest: {e}")))?;
    std::fs::write(&path, body).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(())
}

fn now_utc() -> String {
    let secs = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    format!("unix:{secs}")
}

pub struct TrainOutcome {
    pub last_checkpoint: PathBuf,
    pub final_report: Option<EvalReport>,
    pub iterations: u64,
}

struct CheckpointKeeper {
    saved: Vec<(u64, PathBuf, PathBuf)>,
    best_pcc: f64,
}

impl CheckpointKeeper {
    fn new() -> Self {
        CheckpointKeeper {
            saved: Vec::new(),
            best_pcc: f64::NEG_INFINITY,
        }
    }

    fn push(&mut self, iter: u64, gen: PathBuf, disc: PathBuf) {
        self.saved.push((iter, gen, disc));
        // Retain the last three periodic checkpoints.
        while self.saved.len() > 3 {
            let (_, g, d) = self.saved.remove(0);
            let _ = std::fs::remove_file(g.with_extension("ckpt.json"));
            let _ = std::fs::remove_file(d.with_extension("ckpt.json"));
            let _ = std::fs::remove_file(g);
            let _ = std::fs::remove_file(d);
        }
    }
}

fn gen_meta<S: Scalar>(cfg: &Config, n: usize, iteration: u64) -> CkptMeta {
    CkptMeta {
        kind: "generator".into(),
        n_groups: n,
        image_size: cfg.data.size,
        iteration,
        mode: cfg.train.mode.as_str().into(),
        direction: cfg.train.direction.as_str().into(),
        seed: cfg.train.seed,
        extra: [("dtype".to_string(), serde_json::json!(S::DTYPE))]
            .into_iter()
            .collect(),
    }
}

/// Quick PCC probe used for best-checkpoint selection during training.
fn quick_pcc<S: Scalar>(
    trainer: &mut GanTrainer<S>,
    oracle: &mut AgeEstimator<S>,
    data: &EvalData<S>,
    cap: usize,
) -> Result<f64> {
    let mut model = match &trainer.gen {
        GenModel::Chain(g) => AgingModel::Progressive(g.clone()),
        GenModel::Single(g) => AgingModel::SingleStep(g.clone()),
    };
    let mut embedder = IdentityEmbedder::from_seed(0);
    let cfg = crate::config::EvalSection {
        max_eval_faces: cap,
        identity_threshold: Some(0.5),
        ..Default::default()
    };
    let report = eval::evaluate(EvalContext {
        model: &mut model,
        oracle,
        embedder: &mut embedder,
        data,
        cfg: &cfg,
        direction: Direction::Aging,
        mode: String::new(),
        checkpoint: String::new(),
        config_hash: String::new(),
    })?;
    Ok(report.pcc)
}

/// Full training run: loss log, periodic checkpoints (last three plus the
/// best-PCC one when an oracle is available), and a final evaluation.
pub fn train<S: Scalar>(
    cfg: &Config,
    run: &RunPaths,
    estimator: AgeEstimator<S>,
    mut oracle: Option<AgeEstimator<S>>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let ds = Dataset::<S>::load(cfg)?;
    let phi = load_feature_net(cfg)?;
    let mut trainer = GanTrainer::new(cfg, ds.n, estimator, phi)?;

    let mut csv = std::fs::File::create(&run.losses_csv)
        .map_err(|e| Error::io(run.losses_csv.display().to_string(), e))?;
    writeln!(csv, "iteration,adv,age,pixel,ssim,feature,ide,total,d_loss")
        .map_err(|e| Error::io(run.losses_csv.display().to_string(), e))?;

    let eval_data = (!ds.test_store.is_empty()).then(|| ds.eval_data());
    let mut keeper = CheckpointKeeper::new();
    let mut last_ckpt = PathBuf::new();

    for iter in 1..=cfg.train.max_iterations {
        let report = trainer.step(&ds).map_err(|e| match e {
            Error::Numerical(msg) => Error::Numerical(format!(
                "{msg}; last good checkpoint: {}",
                if last_ckpt.as_os_str().is_empty() {
                    "none".to_string()
                } else {
                    last_ckpt.display().to_string()
                }
            )),
            other => other,
        })?;
        writeln!(
            csv,
            "{iter},{},{},{},{},{},{},{},{}",
            report.adv,
            report.age,
            report.pixel,
            report.ssim,
            report.feature,
            report.ide,
            report.total,
            report.d_loss
        )
        .map_err(|e| Error::io(run.losses_csv.display().to_string(), e))?;

        if iter % cfg.train.checkpoint_every == 0 || iter == cfg.train.max_iterations {
            let gpath = run.checkpoints.join(format!("gen_{iter:07}.ckpt"));
            let dpath = run.checkpoints.join(format!("disc_{iter:07}.ckpt"));
            ckpt::save(&gpath, &gen_meta::<S>(cfg, ds.n, iter), &trainer.gen)?;
            let mut dmeta = gen_meta::<S>(cfg, ds.n, iter);
            dmeta.kind = "discriminator".into();
            ckpt::save(&dpath, &dmeta, &trainer.disc)?;
            last_ckpt = gpath.clone();
            keeper.push(iter, gpath.clone(), dpath);

            if let (Some(oracle), Some(data)) = (oracle.as_mut(), eval_data.as_ref()) {
                let pcc = quick_pcc(&mut trainer, oracle, data, 24)?;
                if pcc > keeper.best_pcc {
                    keeper.best_pcc = pcc;
                    let best = run.checkpoints.join("gen_best_pcc.ckpt");
                    std::fs::copy(&gpath, &best)
                        .map_err(|e| Error::io(best.display().to_string(), e))?;
                    let side = gpath.with_extension("ckpt.json");
                    if side.exists() {
                        let best_side = best.with_extension("ckpt.json");
                        std::fs::copy(&side, &best_side)
                            .map_err(|e| Error::io(best_side.display().to_string(), e))?;
                    }
                }
            }
        }
    }
    csv.flush()
        .map_err(|e| Error::io(run.losses_csv.display().to_string(), e))?;

    // Final evaluation trigger.
    let final_report = match (oracle.as_mut(), eval_data.as_ref()) {
        (Some(oracle), Some(data)) => {
            let mut model = match &trainer.gen {
                GenModel::Chain(g) => AgingModel::Progressive(g.clone()),
                GenModel::Single(g) => AgingModel::SingleStep(g.clone()),
            };
            let mut embedder = IdentityEmbedder::from_seed(cfg.eval.embedder_seed);
            let report = eval::evaluate(EvalContext {
                model: &mut model,
                oracle,
                embedder: &mut embedder,
                data,
                cfg: &cfg.eval,
                direction: cfg.train.direction,
                mode: cfg.train.mode.as_str().into(),
                checkpoint: last_ckpt.display().to_string(),
                config_hash: eval::fingerprint(&cfg.to_toml()),
            })?;
            eval::write_report(&run.eval_dir, &report)?;
            Some(report)
        }
        _ => None,
    };

    Ok(TrainOutcome {
        last_checkpoint: last_ckpt,
        final_report,
        iterations: cfg.train.max_iterations,
    })
}

/// The frozen feature extractor: seeded random stack, or a checkpoint when
/// configured.
pub fn load_feature_net<S: Scalar>(cfg: &Config) -> Result<FeatureNet<S>> {
    let mut phi = FeatureNet::from_seed(cfg.feature.seed);
    if !cfg.feature.checkpoint.is_empty() {
        ckpt::load_into(Path::new(&cfg.feature.checkpoint), &mut phi)?;
    }
    Ok(phi)
}

/// Rebuild a generator network from a checkpoint, dispatching on the stored
/// mode flag. `sequential` wraps a single-step network in the repeated
/// one-group-at-a-time inference baseline.
pub fn load_aging_model<S: Scalar>(path: &Path, sequential: bool) -> Result<(AgingModel<S>, CkptMeta)> {
    let meta = ckpt::read_meta(path)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let model = match meta.mode.as_str() {
        "cgan_single" => {
            let mut g = SubGenerator::<S>::new(&mut rng, 3 + meta.n_groups);
            ckpt::load_into(path, &mut g)?;
            if sequential {
                AgingModel::Sequential(g)
            } else {
                AgingModel::SingleStep(g)
            }
        }
        _ => {
            if sequential {
                return Err(Error::invalid(
                    "--sequential applies to single-step (cgan_single) checkpoints only",
                ));
            }
            let mut g = ProgressiveGenerator::<S>::new(&mut rng, meta.n_groups);
            ckpt::load_into(path, &mut g)?;
            AgingModel::Progressive(g)
        }
    };
    Ok((model, meta))
}

/// Rebuild an age estimator from a checkpoint, sizing the network from the
/// stored metadata.
pub fn load_age_estimator<S: Scalar>(path: &Path) -> Result<(AgeEstimator<S>, CkptMeta)> {
    let meta = ckpt::read_meta(path)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut est = AgeEstimator::<S>::new(&mut rng, meta.image_size, meta.n_groups)?;
    ckpt::load_into(path, &mut est)?;
    Ok((est, meta))
}

/// Convenience wrapper used by tests and the smoke experiment: an untrained
/// generator with the same architecture and seed scheme as a trained one.
pub fn untrained_model<S: Scalar>(cfg: &Config, n: usize) -> AgingModel<S> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed.wrapping_add(0x47454E));
    match cfg.train.mode {
        TrainMode::CganSingle => AgingModel::SingleStep(SubGenerator::new(&mut rng, 3 + n)),
        _ => AgingModel::Progressive(ProgressiveGenerator::new(&mut rng, n)),
    }
}

/// Convert an `Array4` batch helper used by tests.
pub fn batch_of<S: Scalar>(images: &[ndarray::Array3<S>]) -> Array4<S> {
    let (c, h, w) = images[0].dim();
    let mut out = Array4::zeros((images.len(), c, h, w));
    for (i, img) in images.iter().enumerate() {
        out.index_axis_mut(Axis(0), i).assign(img);
    }
    out
}
