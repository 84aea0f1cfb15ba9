//! Evaluation metrics: per-group age estimation error, Pearson-correlation
//! aging smoothness, inception score, and identity preservation.

use ndarray::Array2;

use crate::error::{Error, Result};

/// Estimated ages of one subject: the input face first, then its aged
/// renditions ordered by group.
#[derive(Debug, Clone)]
pub struct AgeSequence(pub Vec<f64>);

/// Per-group mean estimated ages of real faces, same ordering.
#[derive(Debug, Clone)]
pub struct GenericAgeSequence(pub Vec<f64>);

/// Pearson correlation coefficient; `None` when either side has zero
/// variance.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    assert_eq!(a.len(), b.len());
    let n = a.len() as f64;
    if a.is_empty() {
        return None;
    }
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va <= 0.0 || vb <= 0.0 {
        return None;
    }
    if cov == va && cov == vb {
        return Some(1.0); // identical sequences, exactly
    }
    Some((cov / (va.sqrt() * vb.sqrt())).clamp(-1.0, 1.0))
}

/// Mean Pearson correlation between each subject's age sequence and the
/// generic sequence. Degenerate constant sequences contribute 0 (keeping the
/// sample count fixed) and are counted in the returned warning tally.
pub fn pcc(sequences: &[AgeSequence], generic: &GenericAgeSequence) -> Result<(f64, usize)> {
    if sequences.is_empty() {
        return Err(Error::invalid("need at least one age sequence"));
    }
    let n = generic.0.len();
    for (i, s) in sequences.iter().enumerate() {
        if s.0.len() != n {
            return Err(Error::invalid(format!(
                "sequence {i} has length {} but the generic sequence has {n}",
                s.0.len()
            )));
        }
    }
    let gvar = pearson(&generic.0, &generic.0);
    if gvar.is_none() {
        return Err(Error::invalid(
            "generic age sequence has zero variance; cannot correlate against it",
        ));
    }
    let mut warnings = 0usize;
    let mut acc = 0.0;
    for s in sequences {
        match pearson(&s.0, &generic.0) {
            Some(r) => acc += r,
            None => {
                warnings += 1;
                eprintln!("warning: constant age sequence, correlation taken as 0");
            }
        }
    }
    Ok((acc / sequences.len() as f64, warnings))
}

/// Absolute difference between mean oracle ages of real and generated faces,
/// per group. Groups with an empty side are reported as missing.
pub fn age_estimation_error(
    real_ages_per_group: &[Vec<f64>],
    fake_ages_per_group: &[Vec<f64>],
) -> Vec<Option<f64>> {
    assert_eq!(real_ages_per_group.len(), fake_ages_per_group.len());
    real_ages_per_group
        .iter()
        .zip(fake_ages_per_group)
        .map(|(real, fake)| {
            if real.is_empty() || fake.is_empty() {
                None
            } else {
                let mr = real.iter().sum::<f64>() / real.len() as f64;
                let mf = fake.iter().sum::<f64>() / fake.len() as f64;
                Some((mr - mf).abs())
            }
        })
        .collect()
}

/// Standard inception score over a class-probability table (rows: images,
/// columns: classes): `exp` of the mean KL divergence between the
/// conditional and marginal distributions, averaged over `splits` splits.
/// Returns `(mean, std)` over the splits.
pub fn inception_score(probs: &Array2<f64>, splits: usize) -> Result<(f64, f64)> {
    let (n, _k) = probs.dim();
    if splits == 0 {
        return Err(Error::invalid("need at least one split"));
    }
    if n < splits * 2 {
        return Err(Error::invalid(format!(
            "need at least {} images for {splits} splits, got {n}",
            splits * 2
        )));
    }
    for (i, row) in probs.rows().into_iter().enumerate() {
        let sum: f64 = row.sum();
        if (sum - 1.0).abs() > 1e-5 || row.iter().any(|&p| p < 0.0) {
            return Err(Error::invalid(format!(
                "row {i} is not a probability distribution (sum {sum})"
            )));
        }
    }
    let mut scores = Vec::with_capacity(splits);
    for s in 0..splits {
        let lo = s * n / splits;
        let hi = (s + 1) * n / splits;
        let part = probs.slice(ndarray::s![lo..hi, ..]);
        let m = part.mean_axis(ndarray::Axis(0)).expect("non-empty split");
        let mut kl_sum = 0.0;
        for row in part.rows() {
            let mut kl = 0.0;
            for (&p, &q) in row.iter().zip(m.iter()) {
                if p > 0.0 {
                    kl += p * (p.ln() - q.max(1e-300).ln());
                }
            }
            kl_sum += kl;
        }
        scores.push((kl_sum / (hi - lo) as f64).exp());
    }
    let mean = scores.iter().sum::<f64>() / splits as f64;
    let var = scores.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / splits as f64;
    Ok((mean, var.sqrt()))
}

/// Cosine-similarity verification over paired embeddings: mean confidence
/// and the fraction of pairs at or above the threshold.
pub fn identity_preservation(
    similarities: &[f64],
    threshold: f64,
) -> Result<(f64, f64)> {
    if similarities.is_empty() {
        return Err(Error::invalid("no pairs to verify"));
    }
    let mean = similarities.iter().sum::<f64>() / similarities.len() as f64;
    let rate = similarities.iter().filter(|&&s| s >= threshold).count() as f64
        / similarities.len() as f64;
    Ok((mean, rate))
}

/// Threshold with impostor acceptance at most `far` on the given impostor
/// similarity sample.
pub fn calibrate_threshold(impostor_sims: &[f64], far: f64) -> Result<f64> {
    if impostor_sims.is_empty() {
        return Err(Error::invalid("no impostor pairs for calibration"));
    }
    let mut sorted: Vec<f64> = impostor_sims.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).expect("finite similarities"));
    let allowed = (far * sorted.len() as f64).floor() as usize;
    Ok(if allowed == 0 {
        sorted[0] + 1e-6
    } else if allowed >= sorted.len() {
        sorted[sorted.len() - 1] - 1e-6
    } else {
        (sorted[allowed - 1] + sorted[allowed]) / 2.0
    })
}
