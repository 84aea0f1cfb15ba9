//! Dataset ingestion, identity-disjoint splitting, normalized image loading,
//! and training pair sampling.
//!
//! Layout on disk: `<root>/manifest.csv` with header `id,image,age[,split]`
//! and image paths relative to the root. When the split column is absent an
//! identity-level 80/20 split is derived from a seeded shuffle, so the same
//! seed always yields the same split and no identity ever appears in both
//! sets.

pub mod synthetic;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use ndarray::{Array3, Array4, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::age::AgeGroupPartition;
use crate::error::{Error, Result};
use crate::scalar::{sc, Scalar};

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, serde::Serialize, serde::Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone)]
pub struct FaceRecord {
    pub identity: String,
    pub image_path: PathBuf,
    pub age: u32,
    pub group: usize,
    pub split: Split,
}

/// Seeded identity-level split: the unique identities (in first-appearance
/// order) are shuffled and the first `ceil(0.8 * n)` become training
/// identities.
pub fn identity_split(identities: &[String], seed: u64) -> BTreeSet<String> {
    let mut unique: Vec<&String> = Vec::new();
    let mut seen = BTreeSet::new();
    for id in identities {
        if seen.insert(id.clone()) {
            unique.push(id);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    unique.shuffle(&mut rng);
    let n_train = (unique.len() as f64 * 0.8).ceil() as usize;
    unique[..n_train].iter().map(|s| (*s).clone()).collect()
}

/// Parse the manifest and bin every row into its age group. Provided splits
/// are validated for identity disjointness; absent splits are generated.
pub fn ingest(
    manifest: &Path,
    partition: &AgeGroupPartition,
    seed: u64,
) -> Result<Vec<FaceRecord>> {
    let mut reader = csv::Reader::from_path(manifest)
        .map_err(|e| Error::Data(format!("cannot open manifest {}: {e}", manifest.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Data(format!("manifest header: {e}")))?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let (id_col, img_col, age_col) = match (col("id"), col("image"), col("age")) {
        (Some(a), Some(b), Some(c)) => (a, b, c),
        _ => {
            return Err(Error::Data(format!(
                "manifest must have columns id,image,age[,split]; got {:?}",
                headers.iter().collect::<Vec<_>>()
            )))
        }
    };
    let split_col = col("split");

    let mut rows: Vec<(String, PathBuf, u32, Option<Split>)> = Vec::new();
    for (line, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::Data(format!("manifest row {}: {e}", line + 2)))?;
        let id = rec.get(id_col).unwrap_or("").trim().to_string();
        let img = rec.get(img_col).unwrap_or("").trim().to_string();
        let age_raw = rec.get(age_col).unwrap_or("").trim();
        if id.is_empty() || img.is_empty() {
            return Err(Error::Data(format!(
                "manifest row {}: empty id or image",
                line + 2
            )));
        }
        let age: u32 = age_raw.parse().map_err(|_| {
            Error::Data(format!(
                "manifest row {}: unparseable age {age_raw:?}",
                line + 2
            ))
        })?;
        let split = match split_col.map(|c| rec.get(c).unwrap_or("").trim()) {
            None | Some("") => None,
            Some("train") => Some(Split::Train),
            Some("test") => Some(Split::Test),
            Some(other) => {
                return Err(Error::Data(format!(
                    "manifest row {}: split must be train or test, got {other:?}",
                    line + 2
                )))
            }
        };
        rows.push((id, PathBuf::from(img), age, split));
    }
    if rows.is_empty() {
        return Err(Error::Data(format!(
            "manifest {} has no data rows",
            manifest.display()
        )));
    }

    let provided = rows.iter().filter(|r| r.3.is_some()).count();
    let records: Vec<FaceRecord> = if provided == rows.len() {
        // Validate identity disjointness of the provided split.
        let mut by_id: BTreeMap<&str, BTreeSet<Split>> = BTreeMap::new();
        for (id, _, _, split) in &rows {
            by_id.entry(id).or_default().insert(split.unwrap());
        }
        for (id, splits) in &by_id {
            if splits.len() > 1 {
                return Err(Error::Data(format!(
                    "identity {id} appears in both train and test splits"
                )));
            }
        }
        rows.into_iter()
            .map(|(id, img, age, split)| FaceRecord {
                group: partition.group_of(age),
                identity: id,
                image_path: img,
                age,
                split: split.unwrap(),
            })
            .collect()
    } else if provided == 0 {
        let ids: Vec<String> = rows.iter().map(|r| r.0.clone()).collect();
        let train_ids = identity_split(&ids, seed);
        rows.into_iter()
            .map(|(id, img, age, _)| FaceRecord {
                group: partition.group_of(age),
                split: if train_ids.contains(&id) {
                    Split::Train
                } else {
                    Split::Test
                },
                identity: id,
                image_path: img,
                age,
            })
            .collect()
    } else {
        return Err(Error::Data(
            "manifest mixes rows with and without a split value".into(),
        ));
    };
    Ok(records)
}

/// Decode, square-crop (center) if needed, resize, and map `[0, 255]`
/// linearly onto `[-1, 1]`.
pub fn load_normalized<S: Scalar>(root: &Path, record: &FaceRecord, size: usize) -> Result<Array3<S>> {
    load_image(&root.join(&record.image_path), size)
}

/// [`load_normalized`] for a bare image path.
pub fn load_image<S: Scalar>(path: &Path, size: usize) -> Result<Array3<S>> {
    let img = image::open(path)
        .map_err(|e| Error::Data(format!("decode {}: {e}", path.display())))?;
    let rgb = img.to_rgb8();
    let (w, h) = rgb.dimensions();
    let side = w.min(h);
    let cropped = if w != h {
        image::imageops::crop_imm(&rgb, (w - side) / 2, (h - side) / 2, side, side).to_image()
    } else {
        rgb
    };
    let resized = if side as usize != size {
        image::imageops::resize(
            &cropped,
            size as u32,
            size as u32,
            image::imageops::FilterType::Triangle,
        )
    } else {
        cropped
    };
    let mut out = Array3::<S>::zeros((3, size, size));
    for (x, y, pixel) in resized.enumerate_pixels() {
        for c in 0..3 {
            let v = pixel.0[c] as f64;
            out[[c, y as usize, x as usize]] = sc(2.0 * v / 255.0 - 1.0);
        }
    }
    Ok(out)
}

/// In-memory image store over one split; decode failures are skipped with a
/// counted warning rather than aborting.
pub struct ImageStore<S: Scalar> {
    images: Vec<Array3<S>>,
    pub skipped: usize,
}

impl<S: Scalar> ImageStore<S> {
    pub fn load(root: &Path, records: &[FaceRecord], size: usize) -> (Self, Vec<usize>) {
        let mut images = Vec::with_capacity(records.len());
        let mut kept = Vec::with_capacity(records.len());
        let mut skipped = 0usize;
        for (i, rec) in records.iter().enumerate() {
            match load_normalized::<S>(root, rec, size) {
                Ok(img) => {
                    images.push(img);
                    kept.push(i);
                }
                Err(e) => {
                    skipped += 1;
                    eprintln!("warning: skipping {}: {e}", rec.image_path.display());
                }
            }
        }
        (ImageStore { images, skipped }, kept)
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn image(&self, idx: usize) -> &Array3<S> {
        &self.images[idx]
    }

    /// Stack the selected images into a batch, flipping horizontally where
    /// `flips` says so.
    pub fn batch(&self, idx: &[usize], flips: &[bool]) -> Array4<S> {
        assert_eq!(idx.len(), flips.len());
        let (c, h, w) = self.images[0].dim();
        let mut out = Array4::zeros((idx.len(), c, h, w));
        for (row, (&i, &flip)) in idx.iter().zip(flips).enumerate() {
            let src = &self.images[i];
            let mut dst = out.index_axis_mut(Axis(0), row);
            if flip {
                for ci in 0..c {
                    for y in 0..h {
                        for x in 0..w {
                            dst[[ci, y, x]] = src[[ci, y, w - 1 - x]];
                        }
                    }
                }
            } else {
                dst.assign(src);
            }
        }
        out
    }
}

/// How training pairs are drawn: any ordered pair `s < t`, or adjacent pairs
/// only (the independently-trained baseline).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairPolicy {
    Any,
    Adjacent,
}

/// Scalar age target for a generated group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetAge {
    GroupMean,
    GroupMidpoint,
}

impl Default for TargetAge {
    fn default() -> Self {
        TargetAge::GroupMean
    }
}

#[derive(Debug, Clone, Copy)]
pub struct PairSample {
    /// Index into the sampler's record subset (store index).
    pub image: usize,
    pub s: usize,
    pub t: usize,
    pub target_age: f64,
}

/// Draws `(source group, target group, face)` triples for training.
///
/// Groups here live in training index space: for rejuvenation the caller
/// bins records with reversed group indices, and this sampler is oblivious
/// to the reversal.
pub struct PairSampler {
    by_group: Vec<Vec<usize>>,
    target_ages: Vec<f64>,
    n: usize,
}

impl PairSampler {
    /// `groups[i]` is the (possibly reversed) 1-based group of store image
    /// `i`; `ages[i]` its real age in years.
    pub fn new(groups: &[usize], ages: &[u32], n: usize, target: TargetAge) -> Result<Self> {
        let mut by_group: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (i, &g) in groups.iter().enumerate() {
            if g < 1 || g > n {
                return Err(Error::invalid(format!("group {g} out of 1..={n}")));
            }
            by_group[g - 1].push(i);
        }
        for (gi, members) in by_group.iter().enumerate() {
            if members.is_empty() {
                return Err(Error::Config(format!(
                    "age group {} has no training faces",
                    gi + 1
                )));
            }
        }
        let target_ages = (0..n)
            .map(|gi| {
                let members = &by_group[gi];
                match target {
                    TargetAge::GroupMean => {
                        members.iter().map(|&i| ages[i] as f64).sum::<f64>()
                            / members.len() as f64
                    }
                    TargetAge::GroupMidpoint => {
                        let lo = members.iter().map(|&i| ages[i]).min().unwrap();
                        let hi = members.iter().map(|&i| ages[i]).max().unwrap();
                        (lo + hi) as f64 / 2.0
                    }
                }
            })
            .collect();
        Ok(PairSampler {
            by_group,
            target_ages,
            n,
        })
    }

    pub fn n_groups(&self) -> usize {
        self.n
    }

    pub fn group_members(&self, g: usize) -> &[usize] {
        &self.by_group[g - 1]
    }

    pub fn target_age(&self, g: usize) -> f64 {
        self.target_ages[g - 1]
    }

    /// One training pair: source group uniform over `1..N-1`, target uniform
    /// over `s+1..N` (or exactly `s+1` under the adjacent policy), face
    /// uniform within the source group.
    pub fn sample_pair<R: Rng>(&self, rng: &mut R, policy: PairPolicy) -> PairSample {
        let s = rng.gen_range(1..self.n);
        let t = match policy {
            PairPolicy::Any => rng.gen_range(s + 1..=self.n),
            PairPolicy::Adjacent => s + 1,
        };
        let members = &self.by_group[s - 1];
        let image = members[rng.gen_range(0..members.len())];
        PairSample {
            image,
            s,
            t,
            target_age: self.target_ages[t - 1],
        }
    }

    /// One real face drawn uniformly over all `N` groups (then uniformly
    /// within the group), with its group index for conditioning.
    pub fn sample_real<R: Rng>(&self, rng: &mut R) -> (usize, usize) {
        let g = rng.gen_range(1..=self.n);
        let members = &self.by_group[g - 1];
        (members[rng.gen_range(0..members.len())], g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_manifest(dir: &Path, body: &str) -> PathBuf {
        let path = dir.join("manifest.csv");
        let mut f = std::fs::File::create(&path).unwrap();
        f.write_all(body.as_bytes()).unwrap();
        path
    }

    #[test]
    fn ingest_bins_one_age_per_group() {
        let dir = tempfile::tempdir().unwrap();
        let m = write_manifest(
            dir.path(),
            "id,image,age\na,i1.png,25\nb,i2.png,35\nc,i3.png,45\nd,i4.png,55\n",
        );
        let recs = ingest(&m, &AgeGroupPartition::default(), 0).unwrap();
        let groups: Vec<usize> = recs.iter().map(|r| r.group).collect();
        assert_eq!(groups, vec![1, 2, 3, 4]);
    }

    #[test]
    fn generated_split_is_identity_disjoint_8_to_2() {
        let dir = tempfile::tempdir().unwrap();
        let mut body = String::from("id,image,age\n");
        for id in 0..10 {
            for k in 0..3 {
                body.push_str(&format!("id{id},img_{id}_{k}.png,{}\n", 20 + id * 5));
            }
        }
        let m = write_manifest(dir.path(), &body);
        let recs = ingest(&m, &AgeGroupPartition::default(), 7).unwrap();

        let train_ids: BTreeSet<_> = recs
            .iter()
            .filter(|r| r.split == Split::Train)
            .map(|r| r.identity.clone())
            .collect();
        let test_ids: BTreeSet<_> = recs
            .iter()
            .filter(|r| r.split == Split::Test)
            .map(|r| r.identity.clone())
            .collect();
        assert_eq!(train_ids.len(), 8);
        assert_eq!(test_ids.len(), 2);
        assert!(train_ids.is_disjoint(&test_ids));

        // Oracle: recompute the seeded shuffle independently.
        let ids: Vec<String> = (0..10).flat_map(|i| vec![format!("id{i}"); 3]).collect();
        let expected = identity_split(&ids, 7);
        assert_eq!(train_ids, expected);

        // Same identities land in the same split per record.
        for r in &recs {
            assert_eq!(
                r.split == Split::Train,
                expected.contains(&r.identity),
                "identity {}",
                r.identity
            );
        }
    }

    #[test]
    fn duplicate_identity_across_provided_splits_errors() {
        let dir = tempfile::tempdir().unwrap();
        let m = write_manifest(
            dir.path(),
            "id,image,age,split\na,i1.png,25,train\na,i2.png,30,test\n",
        );
        assert!(ingest(&m, &AgeGroupPartition::default(), 0).is_err());
    }

    #[test]
    fn empty_or_missing_manifest_errors() {
        let dir = tempfile::tempdir().unwrap();
        let m = write_manifest(dir.path(), "id,image,age\n");
        assert!(ingest(&m, &AgeGroupPartition::default(), 0).is_err());
        assert!(ingest(
            &dir.path().join("nope.csv"),
            &AgeGroupPartition::default(),
            0
        )
        .is_err());
    }

    #[test]
    fn unparseable_age_errors() {
        let dir = tempfile::tempdir().unwrap();
        let m = write_manifest(dir.path(), "id,image,age\na,i1.png,old\n");
        assert!(ingest(&m, &AgeGroupPartition::default(), 0).is_err());
    }

    #[test]
    fn normalization_endpoints() {
        let dir = tempfile::tempdir().unwrap();
        for (name, value) in [("black.png", 0u8), ("white.png", 255), ("gray.png", 128)] {
            let img = image::RgbImage::from_pixel(9, 9, image::Rgb([value, value, value]));
            img.save(dir.path().join(name)).unwrap();
        }
        let rec = |name: &str| FaceRecord {
            identity: "x".into(),
            image_path: PathBuf::from(name),
            age: 30,
            group: 1,
            split: Split::Train,
        };
        let black = load_normalized::<f64>(dir.path(), &rec("black.png"), 9).unwrap();
        assert!(black.iter().all(|&v| v == -1.0));
        let white = load_normalized::<f64>(dir.path(), &rec("white.png"), 9).unwrap();
        assert!(white.iter().all(|&v| v == 1.0));
        let gray = load_normalized::<f64>(dir.path(), &rec("gray.png"), 9).unwrap();
        let expected = 2.0 * 128.0 / 255.0 - 1.0;
        assert!(gray.iter().all(|&v| (v - expected).abs() < 1e-12));
    }

    #[test]
    fn loaded_values_stay_in_unit_range() {
        let dir = tempfile::tempdir().unwrap();
        let img = image::RgbImage::from_fn(13, 17, |x, y| {
            image::Rgb([(x * 19 % 256) as u8, (y * 37 % 256) as u8, 128])
        });
        img.save(dir.path().join("t.png")).unwrap();
        let rec = FaceRecord {
            identity: "x".into(),
            image_path: PathBuf::from("t.png"),
            age: 30,
            group: 1,
            split: Split::Train,
        };
        // Non-square source goes through the center-crop fallback.
        let arr = load_normalized::<f32>(dir.path(), &rec, 8).unwrap();
        assert!(arr.iter().all(|&v| (-1.0..=1.0).contains(&v)));
    }

    #[test]
    fn sampler_covers_exactly_the_six_ordered_pairs() {
        let groups = vec![1, 2, 3, 4];
        let ages = vec![25u32, 35, 45, 55];
        let sampler = PairSampler::new(&groups, &ages, 4, TargetAge::GroupMean).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut seen = BTreeSet::new();
        for _ in 0..300 {
            let p = sampler.sample_pair(&mut rng, PairPolicy::Any);
            assert!(p.s < p.t);
            seen.insert((p.s, p.t));
        }
        let expected: BTreeSet<(usize, usize)> =
            [(1, 2), (1, 3), (1, 4), (2, 3), (2, 4), (3, 4)].into();
        assert_eq!(seen, expected);
    }

    #[test]
    fn seeded_sampling_is_reproducible() {
        let groups = vec![1, 1, 2, 2, 3, 3, 4, 4];
        let ages = vec![20, 25, 35, 38, 45, 48, 55, 60];
        let sampler = PairSampler::new(&groups, &ages, 4, TargetAge::GroupMean).unwrap();
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..100)
                .map(|_| {
                    let p = sampler.sample_pair(&mut rng, PairPolicy::Any);
                    (p.image, p.s, p.t)
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(11), draw(11));
        assert_ne!(draw(11), draw(12));
    }

    #[test]
    fn pair_frequencies_match_design_within_three_sigma() {
        let groups = vec![1, 2, 3, 4];
        let ages = vec![25u32, 35, 45, 55];
        let sampler = PairSampler::new(&groups, &ages, 4, TargetAge::GroupMean).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n = 30_000usize;
        let mut counts: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        for _ in 0..n {
            let p = sampler.sample_pair(&mut rng, PairPolicy::Any);
            *counts.entry((p.s, p.t)).or_default() += 1;
        }
        // Design: s uniform over 1..=3, t uniform over s+1..=4.
        for (pair, prob) in [
            ((1usize, 2usize), 1.0 / 9.0),
            ((1, 3), 1.0 / 9.0),
            ((1, 4), 1.0 / 9.0),
            ((2, 3), 1.0 / 6.0),
            ((2, 4), 1.0 / 6.0),
            ((3, 4), 1.0 / 3.0),
        ] {
            let freq = counts[&pair] as f64 / n as f64;
            let se = (prob * (1.0 - prob) / n as f64).sqrt();
            assert!(
                (freq - prob).abs() <= 3.0 * se,
                "pair {pair:?}: freq {freq:.4} vs design {prob:.4} (se {se:.5})"
            );
        }
    }

    #[test]
    fn adjacent_policy_only_draws_neighbors() {
        let groups = vec![1, 2, 3, 4];
        let ages = vec![25u32, 35, 45, 55];
        let sampler = PairSampler::new(&groups, &ages, 4, TargetAge::GroupMean).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let p = sampler.sample_pair(&mut rng, PairPolicy::Adjacent);
            assert_eq!(p.t, p.s + 1);
        }
    }

    #[test]
    fn empty_group_is_a_configuration_error() {
        let groups = vec![1, 1, 2, 4];
        let ages = vec![20, 25, 35, 55];
        assert!(PairSampler::new(&groups, &ages, 4, TargetAge::GroupMean).is_err());
    }

    #[test]
    fn target_age_is_the_group_mean() {
        let groups = vec![1, 2, 2, 4];
        let ages = vec![20, 32, 38, 60];
        let sampler = PairSampler::new(&groups, &ages, 4, TargetAge::GroupMean);
        // group 3 empty -> error; fill it to proceed
        assert!(sampler.is_err());
        let groups = vec![1, 2, 2, 3, 4];
        let ages = vec![20, 32, 38, 45, 60];
        let sampler = PairSampler::new(&groups, &ages, 4, TargetAge::GroupMean).unwrap();
        assert_eq!(sampler.target_age(2), 35.0);
    }
}
