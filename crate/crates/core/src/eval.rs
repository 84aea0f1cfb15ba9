//! Evaluation: drive a checkpointed aging model over the test split and
//! produce the metric report (age error per target group, aging-smoothness
//! PCC, inception score, identity verification).

use std::path::Path;

use ndarray::{concatenate, Array2, Array3, Array4, Axis};

use crate::cond::condition_batch;
use crate::config::{Direction, EvalSection};
use crate::error::{Error, Result};
use crate::gates::GateVector;
use crate::image::clip_unit;
use crate::metrics;
use crate::nets::estimator::softmax_rows;
use crate::nets::{AgeEstimator, IdentityEmbedder, ProgressiveGenerator, SubGenerator};
use crate::scalar::Scalar;

/// An aging model as seen by inference and evaluation. `SingleStep` is the
/// conditional single-network variant jumping straight to the target group;
/// `Sequential` applies the same single-step network one group at a time.
pub enum AgingModel<S: Scalar> {
    Progressive(ProgressiveGenerator<S>),
    SingleStep(SubGenerator<S>),
    Sequential(SubGenerator<S>),
}

impl<S: Scalar> AgingModel<S> {
    pub fn n_groups(&self) -> usize {
        match self {
            AgingModel::Progressive(g) => g.n_groups(),
            AgingModel::SingleStep(g) | AgingModel::Sequential(g) => g.in_channels() - 3,
        }
    }

    /// Raw (unclipped) aged output for a whole batch sharing one `(s, t)`
    /// mapping. Returns the number of single-step network invocations made.
    pub fn age_batch(&mut self, x: &Array4<S>, s: usize, t: usize) -> Result<(Array4<S>, u64)> {
        let n = self.n_groups();
        if s < 1 || t > n || s > t {
            return Err(Error::invalid(format!(
                "mapping {s}->{t} invalid for {n} groups (aging direction only)"
            )));
        }
        if s == t {
            return Ok((x.clone(), 0));
        }
        match self {
            AgingModel::Progressive(g) => {
                let gates = GateVector::for_mapping(s, t, n)?;
                Ok((g.generate(x, &gates)?, 0))
            }
            AgingModel::SingleStep(g) => Ok((single_step(g, x, t, n)?, 1)),
            AgingModel::Sequential(g) => {
                let mut cur = x.clone();
                let mut calls = 0;
                for next in s + 1..=t {
                    cur = single_step(g, &cur, next, n)?;
                    calls += 1;
                }
                Ok((cur, calls))
            }
        }
    }
}

/// One conditional single-network application: `G([x; C_t])`.
fn single_step<S: Scalar>(
    g: &mut SubGenerator<S>,
    x: &Array4<S>,
    t: usize,
    n: usize,
) -> Result<Array4<S>> {
    let (b, _, h, w) = x.dim();
    let cond = condition_batch::<S>(&vec![t; b], n, h, w)?;
    let stacked = concatenate(Axis(1), &[x.view(), cond.view()])
        .expect("concat image with condition");
    g.check_input(&stacked)?;
    Ok(g.forward(&stacked, false))
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct GroupMetric {
    pub group: usize,
    pub label: String,
    pub age_error: Option<f64>,
    pub verification_confidence: Option<f64>,
    pub verification_rate: Option<f64>,
}

/// Full metric report; serialized as `report.json` (schema mirrors the
/// quantitative tables: per-group age error, PCC, IS, verification).
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct EvalReport {
    pub checkpoint: String,
    pub config_hash: String,
    pub n_groups: usize,
    pub image_size: usize,
    pub direction: String,
    pub mode: String,
    pub source_group: usize,
    pub n_test_faces: usize,
    pub groups: Vec<GroupMetric>,
    pub pcc: f64,
    pub pcc_warnings: usize,
    pub inception_score: f64,
    pub inception_score_std: f64,
    pub identity_threshold: f64,
}

/// Everything evaluation needs about the test split, with groups already
/// mapped into the training direction's index space.
pub struct EvalData<S: Scalar> {
    pub images: Vec<Array3<S>>,
    pub identities: Vec<String>,
    pub mapped_groups: Vec<usize>,
}

fn stack<S: Scalar>(images: &[&Array3<S>]) -> Array4<S> {
    let (c, h, w) = images[0].dim();
    let mut out = Array4::zeros((images.len(), c, h, w));
    for (i, img) in images.iter().enumerate() {
        out.index_axis_mut(Axis(0), i).assign(img);
    }
    out
}

/// FNV-1a fingerprint used to stamp reports with their configuration.
pub fn fingerprint(text: &str) -> String {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in text.as_bytes() {
        hash ^= *byte as u64;
        hash = hash.wrapping_mul(0x100_0000_01b3);
    }
    format!("{hash:016x}")
}

pub struct EvalContext<'a, S: Scalar> {
    pub model: &'a mut AgingModel<S>,
    pub oracle: &'a mut AgeEstimator<S>,
    pub embedder: &'a mut IdentityEmbedder<S>,
    pub data: &'a EvalData<S>,
    pub cfg: &'a EvalSection,
    pub direction: Direction,
    pub mode: String,
    pub checkpoint: String,
    pub config_hash: String,
}

/// Age every held-out source-group face into all older groups and compute
/// the metric suite.
pub fn evaluate<S: Scalar>(ctx: EvalContext<'_, S>) -> Result<EvalReport> {
    let n = ctx.model.n_groups();
    let eval_batch = 16usize;

    // Oracle ages of real test faces, per mapped group.
    let mut real_ages: Vec<Vec<f64>> = vec![Vec::new(); n];
    let per_group_cap = ctx.cfg.max_eval_faces;
    let mut kept_per_group = vec![0usize; n];
    let mut real_indices: Vec<usize> = Vec::new();
    for (i, &g) in ctx.data.mapped_groups.iter().enumerate() {
        if kept_per_group[g - 1] < per_group_cap {
            kept_per_group[g - 1] += 1;
            real_indices.push(i);
        }
    }
    for chunk in real_indices.chunks(eval_batch) {
        let imgs: Vec<&Array3<S>> = chunk.iter().map(|&i| &ctx.data.images[i]).collect();
        let batch = stack(&imgs);
        let (ages, _, _) = ctx.oracle.estimate(&batch)?;
        for (k, &i) in chunk.iter().enumerate() {
            real_ages[ctx.data.mapped_groups[i] - 1].push(ages[k].to_f64());
        }
    }

    // Sources: mapped group 1 faces.
    let sources: Vec<usize> = ctx
        .data
        .mapped_groups
        .iter()
        .enumerate()
        .filter(|(_, &g)| g == 1)
        .map(|(i, _)| i)
        .take(ctx.cfg.max_eval_faces)
        .collect();
    if sources.is_empty() {
        return Err(Error::Data(
            "test split has no faces in the source age group".into(),
        ));
    }

    let mut sequences: Vec<Vec<f64>> = vec![Vec::new(); sources.len()];
    let mut fake_ages: Vec<Vec<f64>> = vec![Vec::new(); n];
    let mut similarities: Vec<Vec<f64>> = vec![Vec::new(); n];
    let mut fake_group_probs: Vec<Array2<S>> = Vec::new();

    for (chunk_start, chunk) in sources.chunks(eval_batch).enumerate().map(|(ci, c)| (ci * eval_batch, c)) {
        let imgs: Vec<&Array3<S>> = chunk.iter().map(|&i| &ctx.data.images[i]).collect();
        let batch = stack(&imgs);
        let (own_ages, _, _) = ctx.oracle.estimate(&batch)?;
        for (k, _) in chunk.iter().enumerate() {
            sequences[chunk_start + k].push(own_ages[k].to_f64());
        }
        let emb_src = ctx.embedder.embed(&batch);

        for t in 2..=n {
            let (aged_raw, _) = ctx.model.age_batch(&batch, 1, t)?;
            let aged = clip_unit(&aged_raw);
            let (ages, _, group_logits) = ctx.oracle.estimate(&aged)?;
            for (k, _) in chunk.iter().enumerate() {
                sequences[chunk_start + k].push(ages[k].to_f64());
                fake_ages[t - 1].push(ages[k].to_f64());
            }
            fake_group_probs.push(softmax_rows(&group_logits));
            let emb_aged = ctx.embedder.embed(&aged);
            let cos = IdentityEmbedder::cosine(&emb_src, &emb_aged);
            for &c in cos.iter() {
                similarities[t - 1].push(c.to_f64());
            }
        }
    }

    // Generic sequence: per-group mean oracle ages of real test faces.
    let generic: Vec<f64> = (1..=n)
        .map(|g| {
            let ages = &real_ages[g - 1];
            if ages.is_empty() {
                f64::NAN
            } else {
                ages.iter().sum::<f64>() / ages.len() as f64
            }
        })
        .collect();
    if generic.iter().any(|v| v.is_nan()) {
        return Err(Error::Data(
            "test split is missing a whole age group; cannot form the generic sequence".into(),
        ));
    }
    let (pcc, pcc_warnings) = metrics::pcc(
        &sequences
            .iter()
            .map(|s| metrics::AgeSequence(s.clone()))
            .collect::<Vec<_>>(),
        &metrics::GenericAgeSequence(generic),
    )?;

    // Inception score over all aged faces, group-head classifier.
    let all_probs_f64: Vec<Array2<f64>> = fake_group_probs
        .iter()
        .map(|p| p.mapv(|v| v.to_f64()))
        .collect();
    let views: Vec<_> = all_probs_f64.iter().map(|p| p.view()).collect();
    let pooled = concatenate(Axis(0), &views).expect("probability rows");
    let splits = ctx.cfg.is_splits.min(pooled.dim().0 / 2).max(1);
    let (is_mean, is_std) = metrics::inception_score(&pooled, splits)?;

    // Identity threshold: configured, or calibrated on real impostor pairs.
    let threshold = match ctx.cfg.identity_threshold {
        Some(t) => t,
        None => {
            let mut impostors = Vec::new();
            'outer: for (a_pos, &i) in real_indices.iter().enumerate() {
                for &j in real_indices.iter().skip(a_pos + 1) {
                    if ctx.data.identities[i] != ctx.data.identities[j] {
                        let e = ctx.embedder.embed(&stack(&[
                            &ctx.data.images[i],
                            &ctx.data.images[j],
                        ]));
                        let sim = e.row(0).iter().zip(e.row(1)).map(|(&x, &y)| x * y).sum::<S>();
                        impostors.push(sim.to_f64());
                        if impostors.len() >= 2000 {
                            break 'outer;
                        }
                    }
                }
            }
            metrics::calibrate_threshold(&impostors, ctx.cfg.identity_far)?
        }
    };

    let age_err = metrics::age_estimation_error(&real_ages, &fake_ages);
    let mut groups = Vec::new();
    for t in 2..=n {
        let sims = &similarities[t - 1];
        let (conf, rate) = if sims.is_empty() {
            (None, None)
        } else {
            let (c, r) = metrics::identity_preservation(sims, threshold)?;
            (Some(c), Some(r))
        };
        groups.push(GroupMetric {
            group: t,
            label: format!("group {t}"),
            age_error: age_err[t - 1],
            verification_confidence: conf,
            verification_rate: rate,
        });
    }

    Ok(EvalReport {
        checkpoint: ctx.checkpoint,
        config_hash: ctx.config_hash,
        n_groups: n,
        image_size: ctx.data.images[0].dim().1,
        direction: ctx.direction.as_str().to_string(),
        mode: ctx.mode,
        source_group: 1,
        n_test_faces: sources.len(),
        groups,
        pcc,
        pcc_warnings,
        inception_score: is_mean,
        inception_score_std: is_std,
        identity_threshold: threshold,
    })
}

/// Write `report.json` and the flat `report.csv` under `dir`.
pub fn write_report(dir: &Path, report: &EvalReport) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let json = serde_json::to_string_pretty(report)
        .map_err(|e| Error::Data(format!("serialize report: {e}")))?;
    let json_path = dir.join("report.json");
    std::fs::write(&json_path, json).map_err(|e| Error::io(json_path.display().to_string(), e))?;

    let mut csv = String::from("metric,group,value\n");
    for g in &report.groups {
        if let Some(v) = g.age_error {
            csv.push_str(&format!("age_error,{},{v}\n", g.group));
        }
        if let Some(v) = g.verification_confidence {
            csv.push_str(&format!("verification_confidence,{},{v}\n", g.group));
        }
        if let Some(v) = g.verification_rate {
            csv.push_str(&format!("verification_rate,{},{v}\n", g.group));
        }
    }
    csv.push_str(&format!("pcc,,{}\n", report.pcc));
    csv.push_str(&format!("inception_score,,{}\n", report.inception_score));
    csv.push_str(&format!(
        "inception_score_std,,{}\n",
        report.inception_score_std
    ));
    csv.push_str(&format!("identity_threshold,,{}\n", report.identity_threshold));
    let csv_path = dir.join("report.csv");
    std::fs::write(&csv_path, csv).map_err(|e| Error::io(csv_path.display().to_string(), e))?;
    Ok(())
}

/// Horizontal montage of `[-1, 1]` images, written as one PNG row per input.
pub fn save_montage<S: Scalar>(path: &Path, rows: &[Vec<Array3<S>>]) -> Result<()> {
    if rows.is_empty() || rows[0].is_empty() {
        return Err(Error::invalid("montage needs at least one image"));
    }
    let (c, h, w) = rows[0][0].dim();
    if c != 3 {
        return Err(Error::invalid("montage expects RGB images"));
    }
    let cols = rows[0].len();
    let mut canvas = Array3::<f64>::zeros((3, h * rows.len(), w * cols));
    for (r, row) in rows.iter().enumerate() {
        for (cidx, img) in row.iter().enumerate() {
            for ch in 0..3 {
                for y in 0..h {
                    for x in 0..w {
                        canvas[[ch, r * h + y, cidx * w + x]] = img[[ch, y, x]].to_f64();
                    }
                }
            }
        }
    }
    crate::data::synthetic::save_png(path, &canvas)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sequential_model_makes_t_minus_s_calls() {
        let mut rng = ChaCha8Rng::seed_from_u64(50);
        let mut model = AgingModel::Sequential(SubGenerator::<f32>::new(&mut rng, 3 + 4));
        let x = Array4::<f32>::zeros((2, 3, 8, 8));
        for (s, t) in [(1usize, 2usize), (1, 4), (2, 4), (3, 3)] {
            let (_, calls) = model.age_batch(&x, s, t).unwrap();
            assert_eq!(calls as usize, t - s, "mapping {s}->{t}");
        }
    }

    #[test]
    fn single_step_consumes_image_plus_condition_channels() {
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        let g = SubGenerator::<f32>::new(&mut rng, 3 + 4);
        assert_eq!(g.in_channels(), 7);
        let mut model = AgingModel::SingleStep(g);
        let x = Array4::<f32>::zeros((1, 3, 8, 8));
        let (aged, calls) = model.age_batch(&x, 1, 3).unwrap();
        assert_eq!(calls, 1);
        assert_eq!(aged.dim(), (1, 3, 8, 8));
    }

    #[test]
    fn same_source_and_target_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(52);
        let mut model = AgingModel::Progressive(ProgressiveGenerator::<f32>::new(&mut rng, 4));
        let x = Array4::from_shape_fn((1, 3, 8, 8), |(_, c, i, j)| {
            ((c + i + j) as f32 * 0.3).sin()
        });
        let (y, _) = model.age_batch(&x, 2, 2).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn rejects_reversed_mappings() {
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        let mut model = AgingModel::Progressive(ProgressiveGenerator::<f32>::new(&mut rng, 4));
        let x = Array4::<f32>::zeros((1, 3, 8, 8));
        assert!(model.age_batch(&x, 3, 2).is_err());
        assert!(model.age_batch(&x, 0, 2).is_err());
    }

    #[test]
    fn fingerprints_are_stable_and_distinct() {
        assert_eq!(fingerprint("abc"), fingerprint("abc"));
        assert_ne!(fingerprint("abc"), fingerprint("abd"));
    }
}
