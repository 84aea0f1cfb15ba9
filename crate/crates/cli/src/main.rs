//! Command-line entry point: `pfa pretrain-age | train | infer | evaluate |
//! synth`.
//!
//! Exit codes: 0 success, 2 configuration/argument error, 3 data error,
//! 4 numerical failure. Failures print one machine-parseable line of the
//! form `error[<class>]: <message>` on stderr.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use pfa_core::config::{Config, Direction};
use pfa_core::data::synthetic::{self, SyntheticSpec};
use pfa_core::error::{Error, Result};
use pfa_core::eval::{self, EvalContext};
use pfa_core::image::clip_unit;
use pfa_core::nets::IdentityEmbedder;
use pfa_core::train::{
    self, load_age_estimator, load_aging_model, pretrain_age_estimator, write_run_manifest,
    Dataset, RunPaths,
};
use pfa_core::{ckpt, Real};

#[derive(Parser)]
#[command(name = "pfa", version, about = "Progressive face aging toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Configuration file (TOML). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dotted-key overrides, e.g. --set train.batch_size=12 (flags win).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<Config> {
        let mut cfg = match &self.config {
            Some(path) => Config::from_path(path)?,
            None => Config::default(),
        };
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {kv:?} is not KEY=VALUE")))?;
            cfg.apply_override(k.trim(), v.trim())?;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Pre-train the age estimation network (and the held-out evaluation
    /// oracle) on the configured dataset.
    PretrainAge {
        #[command(flatten)]
        config: ConfigArgs,
        /// Output directory for checkpoints and the error report.
        #[arg(long, value_name = "DIR")]
        run_dir: Option<PathBuf>,
        /// Overwrite an existing run directory.
        #[arg(long)]
        force: bool,
        /// Shorthand for --set pretrain.epochs=N.
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Adversarial training of the progressive generator.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        /// Pre-trained age estimator checkpoint (required).
        #[arg(long, value_name = "FILE")]
        age_ckpt: PathBuf,
        /// Held-out age oracle for checkpoint selection and final eval.
        #[arg(long, value_name = "FILE")]
        oracle_ckpt: Option<PathBuf>,
        #[arg(long, value_name = "DIR")]
        run_dir: Option<PathBuf>,
        #[arg(long)]
        force: bool,
        /// Shorthand for --set train.mode=...
        #[arg(long)]
        mode: Option<String>,
        /// Shorthand for --set train.age_net=...
        #[arg(long)]
        age_net: Option<String>,
        /// Shorthand for --set train.direction=...
        #[arg(long)]
        direction: Option<String>,
        /// Shorthand for --set train.max_iterations=N.
        #[arg(long)]
        iterations: Option<u64>,
    },
    /// Age input images with a trained checkpoint.
    Infer {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, value_name = "FILE")]
        checkpoint: PathBuf,
        /// Input images (PNG/JPEG).
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// Source age group (1-based). Mutually exclusive with
        /// --estimate-source.
        #[arg(long)]
        source: Option<usize>,
        /// Estimate the source group with the age oracle checkpoint.
        #[arg(long)]
        estimate_source: bool,
        /// Age oracle checkpoint used by --estimate-source.
        #[arg(long, value_name = "FILE")]
        age_ckpt: Option<PathBuf>,
        /// Target groups (default: every group past the source).
        #[arg(long, value_delimiter = ',')]
        targets: Vec<usize>,
        #[arg(long, value_name = "DIR", default_value = "inferred")]
        output: PathBuf,
        /// Also write a labelled grid montage.
        #[arg(long)]
        montage: bool,
        #[arg(long)]
        force: bool,
    },
    /// Run the evaluation suite on a checkpoint and emit report.json/csv.
    Evaluate {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, value_name = "FILE")]
        checkpoint: PathBuf,
        /// Held-out age oracle checkpoint.
        #[arg(long, value_name = "FILE")]
        oracle_ckpt: PathBuf,
        #[arg(long, value_name = "DIR")]
        report_dir: Option<PathBuf>,
        /// Treat a single-step checkpoint as a sequential baseline
        /// (one-group steps applied repeatedly).
        #[arg(long)]
        sequential: bool,
        #[arg(long)]
        force: bool,
    },
    /// Generate the synthetic aging dataset.
    Synth {
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        #[arg(long, default_value_t = 80)]
        identities: usize,
        #[arg(long, default_value_t = 16)]
        images_per_identity: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn default_run_dir(command: &str) -> PathBuf {
    let root = std::env::var("PFA_RUN_DIR").unwrap_or_else(|_| "runs".into());
    let stamp = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    PathBuf::from(root).join(format!("{stamp}_{command}"))
}

fn cmd_pretrain_age(
    config: ConfigArgs,
    run_dir: Option<PathBuf>,
    force: bool,
    epochs: Option<usize>,
) -> Result<()> {
    let mut cfg = config.load()?;
    if let Some(e) = epochs {
        cfg.apply_override("pretrain.epochs", &e.to_string())?;
    }
    cfg.validate()?;
    let run = RunPaths::prepare(&run_dir.unwrap_or_else(|| default_run_dir("pretrain-age")), force)?;
    write_run_manifest(&run, "pretrain-age", &cfg)?;

    // Estimators bin by real groups regardless of the training direction.
    let mut data_cfg = cfg.clone();
    data_cfg.train.direction = Direction::Aging;
    let ds = Dataset::<Real>::load(&data_cfg)?;
    let val = (!ds.test_store.is_empty()).then_some((&ds.test_store, &ds.test_ages[..]));

    let (est, outcome) = pretrain_age_estimator(
        &ds.train_store,
        &ds.train_real_groups,
        &ds.train_ages,
        val,
        ds.n,
        cfg.data.size,
        &cfg.pretrain,
    )?;
    println!(
        "age estimator: {} epochs, final loss {:.4}, validation MAE {:.3} years",
        outcome.epochs, outcome.final_train_loss, outcome.val_mae
    );

    // Held-out oracle: disjoint seed and shuffle.
    let mut oracle_cfg = cfg.pretrain.clone();
    oracle_cfg.seed = cfg.pretrain.seed.wrapping_add(1000);
    let (oracle, oracle_outcome) = pretrain_age_estimator(
        &ds.train_store,
        &ds.train_real_groups,
        &ds.train_ages,
        val,
        ds.n,
        cfg.data.size,
        &oracle_cfg,
    )?;
    println!(
        "age oracle: validation MAE {:.3} years",
        oracle_outcome.val_mae
    );

    let meta = |kind: &str, seed: u64| ckpt::CkptMeta {
        kind: kind.into(),
        n_groups: ds.n,
        image_size: cfg.data.size,
        iteration: outcome.epochs as u64,
        mode: "age".into(),
        direction: "aging".into(),
        seed,
        extra: Default::default(),
    };
    ckpt::save(
        &run.root.join("age_estimator.ckpt"),
        &meta("age_estimator", cfg.pretrain.seed),
        &est,
    )?;
    ckpt::save(
        &run.root.join("age_oracle.ckpt"),
        &meta("age_oracle", oracle_cfg.seed),
        &oracle,
    )?;
    let report = serde_json::json!({
        "estimator": outcome,
        "oracle": oracle_outcome,
    });
    let report_path = run.root.join("pretrain_report.json");
    std::fs::write(&report_path, serde_json::to_string_pretty(&report).expect("json"))
        .map_err(|e| Error::io(report_path.display().to_string(), e))?;
    println!("checkpoints written to {}", run.root.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_train(
    config: ConfigArgs,
    age_ckpt: PathBuf,
    oracle_ckpt: Option<PathBuf>,
    run_dir: Option<PathBuf>,
    force: bool,
    mode: Option<String>,
    age_net: Option<String>,
    direction: Option<String>,
    iterations: Option<u64>,
) -> Result<()> {
    let mut cfg = config.load()?;
    if let Some(m) = mode {
        cfg.apply_override("train.mode", &m)?;
    }
    if let Some(a) = age_net {
        cfg.apply_override("train.age_net", &a)?;
    }
    if let Some(d) = direction {
        cfg.apply_override("train.direction", &d)?;
    }
    if let Some(n) = iterations {
        cfg.apply_override("train.max_iterations", &n.to_string())?;
    }
    cfg.validate()?;

    if !age_ckpt.exists() {
        return Err(Error::Config(format!(
            "age estimator checkpoint {} does not exist; run `pfa pretrain-age` first",
            age_ckpt.display()
        )));
    }
    let run = RunPaths::prepare(&run_dir.unwrap_or_else(|| default_run_dir("train")), force)?;
    write_run_manifest(&run, "train", &cfg)?;

    let (estimator, _) = load_age_estimator::<Real>(&age_ckpt)?;
    let oracle = match &oracle_ckpt {
        Some(path) => Some(load_age_estimator::<Real>(path)?.0),
        None => None,
    };

    let outcome = train::train(&cfg, &run, estimator, oracle)?;
    println!(
        "training finished after {} iterations; last checkpoint {}",
        outcome.iterations,
        outcome.last_checkpoint.display()
    );
    if let Some(report) = outcome.final_report {
        println!(
            "final eval: pcc {:.4}, inception score {:.3} (+/- {:.3})",
            report.pcc, report.inception_score, report.inception_score_std
        );
        println!("reports in {}", run.eval_dir.display());
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_infer(
    config: ConfigArgs,
    checkpoint: PathBuf,
    inputs: Vec<PathBuf>,
    source: Option<usize>,
    estimate_source: bool,
    age_ckpt: Option<PathBuf>,
    targets: Vec<usize>,
    output: PathBuf,
    montage: bool,
    force: bool,
) -> Result<()> {
    let cfg = config.load()?;
    let partition = cfg.partition()?;
    let (mut model, meta) = load_aging_model::<Real>(&checkpoint, false)?;
    let n = model.n_groups();
    let rejuvenation = meta.direction == "rejuvenation";
    let map = |g: usize| if rejuvenation { n + 1 - g } else { g };

    if source.is_some() == estimate_source {
        return Err(Error::Config(
            "pass exactly one of --source or --estimate-source".into(),
        ));
    }
    let mut oracle = match (&age_ckpt, estimate_source) {
        (Some(path), true) => Some(load_age_estimator::<Real>(path)?.0),
        (None, true) => {
            return Err(Error::Config(
                "--estimate-source requires --age-ckpt ORACLE".into(),
            ))
        }
        _ => None,
    };

    if output.exists() && output.read_dir().map(|mut d| d.next().is_some()).unwrap_or(false) && !force
    {
        return Err(Error::Config(format!(
            "output directory {} is not empty; pass --force to overwrite",
            output.display()
        )));
    }
    std::fs::create_dir_all(&output).map_err(|e| Error::io(output.display().to_string(), e))?;

    let mut montage_rows: Vec<Vec<ndarray::Array3<Real>>> = Vec::new();
    for input in &inputs {
        let img = pfa_core::data::load_image::<Real>(input, meta.image_size)?;
        let batch = train::batch_of(std::slice::from_ref(&img));

        let s_real = match source {
            Some(s) => {
                if s < 1 || s > n {
                    return Err(Error::invalid(format!(
                        "source group {s} out of range 1..={n}"
                    )));
                }
                s
            }
            None => {
                let (ages, _, _) = oracle.as_mut().expect("oracle loaded").estimate(&batch)?;
                let g = partition.group_of_years(ages[0] as f64)?;
                println!(
                    "{}: estimated age {:.1} -> source group {g}",
                    input.display(),
                    ages[0]
                );
                g
            }
        };
        let s = map(s_real);

        let target_list: Vec<usize> = if targets.is_empty() {
            (1..=n).filter(|&t| map(t) > s).collect()
        } else {
            targets.clone()
        };
        let mut row = vec![img.clone()];
        for &t_real in &target_list {
            if t_real < 1 || t_real > n {
                return Err(Error::invalid(format!(
                    "target group {t_real} out of range 1..={n}"
                )));
            }
            let t = map(t_real);
            if t < s {
                let valid: Vec<String> = (1..=n)
                    .filter(|&v| map(v) >= s)
                    .map(|v| v.to_string())
                    .collect();
                return Err(Error::invalid(format!(
                    "target group {t_real} precedes source {s_real} for this {} model; \
                     valid targets: {}",
                    meta.direction,
                    valid.join(", ")
                )));
            }
            let (aged_raw, _) = model.age_batch(&batch, s, t)?;
            let aged = clip_unit(&aged_raw);
            let aged3 = aged.index_axis(ndarray::Axis(0), 0).to_owned();
            let stem = input
                .file_stem()
                .map(|s| s.to_string_lossy().to_string())
                .unwrap_or_else(|| "image".into());
            let out_path = output.join(format!("{stem}_group{t_real}.png"));
            synthetic::save_png(&out_path, &aged3.mapv(|v| v as f64))?;
            row.push(aged3);
        }
        montage_rows.push(row);
    }
    if montage {
        let path = output.join("montage.png");
        eval::save_montage(&path, &montage_rows)?;
        println!("montage written to {}", path.display());
    }
    println!("aged images written to {}", output.display());
    Ok(())
}

fn cmd_evaluate(
    config: ConfigArgs,
    checkpoint: PathBuf,
    oracle_ckpt: PathBuf,
    report_dir: Option<PathBuf>,
    sequential: bool,
    force: bool,
) -> Result<()> {
    let mut cfg = config.load()?;
    let (mut model, meta) = load_aging_model::<Real>(&checkpoint, sequential)?;
    // The checkpoint's direction decides how test faces are binned.
    cfg.apply_override("train.direction", &meta.direction)?;
    cfg.validate()?;

    let report_dir = report_dir.unwrap_or_else(|| default_run_dir("evaluate"));
    if report_dir.exists()
        && report_dir
            .read_dir()
            .map(|mut d| d.next().is_some())
            .unwrap_or(false)
        && !force
    {
        return Err(Error::Config(format!(
            "report directory {} is not empty; pass --force to overwrite",
            report_dir.display()
        )));
    }

    let ds = Dataset::<Real>::load(&cfg)?;
    if ds.test_store.is_empty() {
        return Err(Error::Data("test split is empty".into()));
    }
    let (mut oracle, _) = load_age_estimator::<Real>(&oracle_ckpt)?;
    let mut embedder = IdentityEmbedder::from_seed(cfg.eval.embedder_seed);

    let data = ds.eval_data();
    let report = eval::evaluate(EvalContext {
        model: &mut model,
        oracle: &mut oracle,
        embedder: &mut embedder,
        data: &data,
        cfg: &cfg.eval,
        direction: cfg.train.direction,
        mode: if sequential {
            format!("{}+sequential", meta.mode)
        } else {
            meta.mode.clone()
        },
        checkpoint: checkpoint.display().to_string(),
        config_hash: eval::fingerprint(&cfg.to_toml()),
    })?;
    eval::write_report(&report_dir, &report)?;

    println!("pcc {:.4} ({} degenerate sequences)", report.pcc, report.pcc_warnings);
    println!(
        "inception score {:.3} +/- {:.3}",
        report.inception_score, report.inception_score_std
    );
    for g in &report.groups {
        println!(
            "group {}: age error {}, verification rate {}",
            g.group,
            g.age_error.map_or("n/a".into(), |v| format!("{v:.2}")),
            g.verification_rate
                .map_or("n/a".into(), |v| format!("{:.1}%", v * 100.0)),
        );
    }
    println!("reports written to {}", report_dir.display());
    Ok(())
}

fn cmd_synth(out: &Path, spec: SyntheticSpec) -> Result<()> {
    if out.join("manifest.csv").exists() {
        return Err(Error::Config(format!(
            "{} already holds a dataset",
            out.display()
        )));
    }
    synthetic::generate(out, &spec)?;
    println!(
        "synthetic dataset with {} identities x {} images at {} written to {}",
        spec.identities,
        spec.images_per_identity,
        spec.size,
        out.display()
    );
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::PretrainAge {
            config,
            run_dir,
            force,
            epochs,
        } => cmd_pretrain_age(config, run_dir, force, epochs),
        Command::Train {
            config,
            age_ckpt,
            oracle_ckpt,
            run_dir,
            force,
            mode,
            age_net,
            direction,
            iterations,
        } => cmd_train(
            config, age_ckpt, oracle_ckpt, run_dir, force, mode, age_net, direction, iterations,
        ),
        Command::Infer {
            config,
            checkpoint,
            inputs,
            source,
            estimate_source,
            age_ckpt,
            targets,
            output,
            montage,
            force,
        } => cmd_infer(
            config,
            checkpoint,
            inputs,
            source,
            estimate_source,
            age_ckpt,
            targets,
            output,
            montage,
            force,
        ),
        Command::Evaluate {
            config,
            checkpoint,
            oracle_ckpt,
            report_dir,
            sequential,
            force,
        } => cmd_evaluate(config, checkpoint, oracle_ckpt, report_dir, sequential, force),
        Command::Synth {
            out,
            identities,
            images_per_identity,
            size,
            seed,
        } => cmd_synth(
            &out,
            SyntheticSpec {
                identities,
                images_per_identity,
                size,
                seed,
            },
        ),
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error[{}]: {e}", e.class());
        std::process::exit(e.exit_code());
    }
}
