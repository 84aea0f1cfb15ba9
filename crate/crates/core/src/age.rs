//! Age-group partitioning.
//!
//! Ages are split into `N` ordered, disjoint intervals by `N-1` integer cut
//! ages. The default partition is the four-group scheme 30-, 31-40, 41-50,
//! 51+. Group indices are 1-based throughout the crate; only raw array
//! offsets are 0-based.
//!
//! A cut age belongs to the group below it: with cuts `[30, 40, 50]`, age 30
//! is group 1 and age 31 is group 2 (an interval label like "31-40" is read
//! as `31 <= age <= 40`).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ordered list of `N-1` strictly increasing integer cut ages defining `N`
/// disjoint age groups.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgeGroupPartition {
    bounds: Vec<u32>,
}

impl Default for AgeGroupPartition {
    fn default() -> Self {
        AgeGroupPartition {
            bounds: vec![30, 40, 50],
        }
    }
}

impl AgeGroupPartition {
    pub fn new(bounds: Vec<u32>) -> Result<Self> {
        if bounds.is_empty() {
            return Err(Error::invalid("partition needs at least one cut age"));
        }
        if !bounds.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::invalid(format!(
                "cut ages must be strictly increasing, got {bounds:?}"
            )));
        }
        Ok(AgeGroupPartition { bounds })
    }

    /// Number of groups `N`.
    pub fn group_count(&self) -> usize {
        self.bounds.len() + 1
    }

    pub fn bounds(&self) -> &[u32] {
        &self.bounds
    }

    /// 1-based index of the group containing `age`.
    pub fn group_of(&self, age: u32) -> usize {
        let mut g = 1;
        for &cut in &self.bounds {
            if age > cut {
                g += 1;
            } else {
                break;
            }
        }
        g
    }

    /// Group of a real-valued age (e.g. from an estimator), rounded half-up
    /// to whole years. Negative ages are rejected.
    pub fn group_of_years(&self, age: f64) -> Result<usize> {
        if !age.is_finite() || age < 0.0 {
            return Err(Error::invalid(format!(
                "age must be a non-negative number of years, got {age}"
            )));
        }
        Ok(self.group_of((age + 0.5).floor() as u32))
    }

    /// Closed label for group `g`, for reports and montage captions.
    pub fn label(&self, g: usize) -> String {
        let n = self.group_count();
        assert!(g >= 1 && g <= n, "group {g} out of 1..={n}");
        if g == 1 {
            format!("{}-", self.bounds[0])
        } else if g == n {
            format!("{}+", self.bounds[n - 2] + 1)
        } else {
            format!("{}-{}", self.bounds[g - 2] + 1, self.bounds[g - 1])
        }
    }

    /// Partition used for rejuvenation training: group order reversed, so
    /// "aging" in the reversed index space walks toward younger groups.
    /// Mapping of a 1-based group index into the reversed space.
    pub fn reverse_group(&self, g: usize) -> usize {
        self.group_count() + 1 - g
    }
}
