//! Synthetic aging dataset for desk-scale experiments and tests.
//!
//! Each identity is a smooth random pattern (low-frequency cosines plus a
//! few Gaussian blobs). Age is encoded by controllable image statistics: a
//! global brightness ramp (the dominant, easily learnable cue) and a
//! high-frequency "wrinkle" texture whose amplitude grows with age. Every
//! image is a pure function of `(seed, identity, age)`, so datasets are
//! fully reproducible.

use std::path::Path;

use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::{sc, Scalar};

#[derive(Debug, Clone, Copy)]
pub struct SyntheticSpec {
    pub identities: usize,
    pub images_per_identity: usize,
    pub size: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            identities: 80,
            images_per_identity: 16,
            size: 64,
            seed: 0,
        }
    }
}

pub const AGE_RANGES: [(u32, u32); 4] = [(18, 30), (31, 40), (41, 50), (51, 69)];

fn brightness(age: u32) -> f64 {
    (age as f64 - 43.5) / 58.0
}

fn wrinkle_amp(age: u32) -> f64 {
    0.14 * ((age as f64 - 25.0) / 44.0).clamp(0.0, 1.0)
}

struct IdentityPattern {
    waves: Vec<(f64, f64, f64, f64, usize)>, // amp, fx, fy, phase, channel
    blobs: Vec<(f64, f64, f64, f64)>,        // amp, cx, cy, sigma
    wrinkle_phase: (f64, f64),
}

impl IdentityPattern {
    fn new(seed: u64, identity: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9).wrapping_add(identity));
        let waves = (0..8)
            .map(|k| {
                (
                    rng.gen_range(0.10..0.28),
                    rng.gen_range(0.7..3.5),
                    rng.gen_range(0.7..3.5),
                    rng.gen_range(0.0..std::f64::consts::TAU),
                    k % 3,
                )
            })
            .collect();
        let blobs = (0..3)
            .map(|_| {
                let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                (
                    sign * rng.gen_range(0.20..0.40),
                    rng.gen_range(0.2..0.8),
                    rng.gen_range(0.2..0.8),
                    rng.gen_range(0.10..0.22),
                )
            })
            .collect();
        let wrinkle_phase = (
            rng.gen_range(0.0..std::f64::consts::TAU),
            rng.gen_range(0.0..std::f64::consts::TAU),
        );
        IdentityPattern {
            waves,
            blobs,
            wrinkle_phase,
        }
    }
}

/// Render one synthetic face as a `(3, size, size)` array in `[-1, 1]`.
pub fn face_image<S: Scalar>(seed: u64, identity: u64, age: u32, size: usize) -> Array3<S> {
    let pat = IdentityPattern::new(seed, identity);
    let b = brightness(age);
    let amp = wrinkle_amp(age);
    let tau = std::f64::consts::TAU;
    let n = size as f64;
    let mut out = Array3::<S>::zeros((3, size, size));
    for y in 0..size {
        for x in 0..size {
            let (u, v) = (x as f64 / n, y as f64 / n);
            let mut base = [0.0f64; 3];
            for &(a, fx, fy, ph, ch) in &pat.waves {
                let w = a * (tau * (fx * u + fy * v) + ph).cos();
                base[ch] += w;
                base[(ch + 1) % 3] += 0.5 * w;
                base[(ch + 2) % 3] += 0.5 * w;
            }
            let mut blob = 0.0f64;
            for &(a, cx, cy, sg) in &pat.blobs {
                let d2 = (u - cx).powi(2) + (v - cy).powi(2);
                blob += a * (-d2 / (2.0 * sg * sg)).exp();
            }
            let wr = amp
                * (tau * 9.0 * u + pat.wrinkle_phase.0).sin()
                * (tau * 7.0 * v + pat.wrinkle_phase.1).cos();
            for c in 0..3 {
                let val = 0.62 * (base[c] * 0.55 + blob) + b + wr;
                out[[c, y, x]] = sc(val.clamp(-1.0, 1.0));
            }
        }
    }
    out
}

/// Ages for one identity, stratified so every age group is populated.
pub fn stratified_ages(seed: u64, identity: u64, count: usize) -> Vec<u32> {
    let mut rng =
        ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x517C_C1B7).wrapping_add(identity));
    (0..count)
        .map(|j| {
            let (lo, hi) = AGE_RANGES[j % AGE_RANGES.len()];
            rng.gen_range(lo..=hi)
        })
        .collect()
}

/// Materialize a dataset under `dir`: `images/*.png` plus `manifest.csv`
/// (id, image, age; the split is derived at ingest time).
pub fn generate(dir: &Path, spec: &SyntheticSpec) -> Result<()> {
    let images_dir = dir.join("images");
    std::fs::create_dir_all(&images_dir)
        .map_err(|e| Error::io(images_dir.display().to_string(), e))?;
    let manifest_path = dir.join("manifest.csv");
    let mut manifest = String::from("id,image,age\n");
    for id in 0..spec.identities {
        let ages = stratified_ages(spec.seed, id as u64, spec.images_per_identity);
        for (j, &age) in ages.iter().enumerate() {
            let img: Array3<f64> = face_image(spec.seed, id as u64, age, spec.size);
            let name = format!("images/id{id:03}_{j:02}_a{age}.png");
            save_png(&dir.join(&name), &img)?;
            manifest.push_str(&format!("id{id:03},{name},{age}\n"));
        }
    }
    std::fs::write(&manifest_path, manifest)
        .map_err(|e| Error::io(manifest_path.display().to_string(), e))?;
    Ok(())
}

/// Write a `(3, h, w)` array in `[-1, 1]` as an 8-bit PNG.
pub fn save_png(path: &Path, img: &Array3<f64>) -> Result<()> {
    let (_, h, w) = img.dim();
    let mut buf = image::RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let px: [u8; 3] = std::array::from_fn(|c| {
                (((img[[c, y, x]].clamp(-1.0, 1.0) + 1.0) * 127.5).round()) as u8
            });
            buf.put_pixel(x as u32, y as u32, image::Rgb(px));
        }
    }
    buf.save(path)
        .map_err(|e| Error::Data(format!("write {}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn images_are_deterministic() {
        let a: Array3<f64> = face_image(3, 7, 40, 16);
        let b: Array3<f64> = face_image(3, 7, 40, 16);
        assert_eq!(a, b);
    }

    #[test]
    fn brightness_increases_with_age() {
        let young: Array3<f64> = face_image(3, 7, 20, 32);
        let old: Array3<f64> = face_image(3, 7, 65, 32);
        let my = young.sum() / young.len() as f64;
        let mo = old.sum() / old.len() as f64;
        assert!(
            mo - my > 0.4,
            "brightness gap too small: young {my:.3} old {mo:.3}"
        );
    }

    #[test]
    fn identities_differ() {
        let a: Array3<f64> = face_image(3, 1, 40, 32);
        let b: Array3<f64> = face_image(3, 2, 40, 32);
        let diff = (&a - &b).mapv(f64::abs).sum() / a.len() as f64;
        assert!(diff > 0.05, "identities look identical: {diff}");
    }

    #[test]
    fn stratified_ages_cover_all_groups() {
        let ages = stratified_ages(0, 5, 8);
        for (k, (lo, hi)) in AGE_RANGES.iter().enumerate() {
            assert!(ages.iter().any(|a| a >= lo && a <= hi), "group {k} empty");
        }
    }

    #[test]
    fn generate_writes_a_loadable_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SyntheticSpec {
            identities: 5,
            images_per_identity: 4,
            size: 16,
            seed: 1,
        };
        generate(dir.path(), &spec).unwrap();
        let recs = crate::data::ingest(
            &dir.path().join("manifest.csv"),
            &crate::age::AgeGroupPartition::default(),
            0,
        )
        .unwrap();
        assert_eq!(recs.len(), 20);
        let img =
            crate::data::load_normalized::<f32>(dir.path(), &recs[0], 16).unwrap();
        assert!(img.iter().all(|&v| (-1.0..=1.0).contains(&v)));
    }
}
