//! Binary gate vectors controlling which sub-generators participate in an
//! aging mapping.
//!
//! A mapping from source group `s` to target group `t` engages exactly the
//! sub-generators between them: gate `i` (1-based) is 1 iff `s <= i < t`.
//! The vector is stored densely so that non-contiguous patterns are
//! representable for tests, but training paths validate contiguity.

use crate::error::{Error, Result};

/// Length `N-1` sequence of 0/1 gates, one per sub-generator.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GateVector {
    gates: Vec<u8>,
}

impl GateVector {
    /// Build from raw 0/1 values. Values other than 0 or 1 are rejected.
    pub fn from_bits(gates: Vec<u8>) -> Result<Self> {
        if gates.iter().any(|&g| g > 1) {
            return Err(Error::invalid("gate values must be exactly 0 or 1"));
        }
        Ok(GateVector { gates })
    }

    /// Gate vector for aging from group `s` to group `t` among `n` groups:
    /// ones exactly at 1-based positions `s..t-1`.
    pub fn for_mapping(s: usize, t: usize, n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::invalid(format!("need at least 2 groups, got {n}")));
        }
        if s < 1 || t > n {
            return Err(Error::invalid(format!(
                "groups must satisfy 1 <= s <= t <= {n}, got s={s} t={t}"
            )));
        }
        if s > t {
            return Err(Error::invalid(format!(
                "aging direction requires s <= t, got s={s} t={t} \
                 (rejuvenation reverses the partition instead)"
            )));
        }
        let gates = (1..n).map(|i| u8::from(i >= s && i < t)).collect();
        Ok(GateVector { gates })
    }

    /// All-zero gates (identity mapping) of the right length for `n` groups.
    pub fn zeros(n: usize) -> Self {
        GateVector {
            gates: vec![0; n - 1],
        }
    }

    pub fn len(&self) -> usize {
        self.gates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gates.is_empty()
    }

    /// Gate for sub-generator `i`, 1-based.
    pub fn gate(&self, i: usize) -> u8 {
        self.gates[i - 1]
    }

    pub fn bits(&self) -> &[u8] {
        &self.gates
    }

    pub fn count_ones(&self) -> usize {
        self.gates.iter().filter(|&&g| g == 1).count()
    }

    /// Contiguity check used by training paths: all 1s (if any) must form a
    /// single run, i.e. the vector encodes some `s..t` mapping.
    pub fn is_contiguous(&self) -> bool {
        let first = self.gates.iter().position(|&g| g == 1);
        let last = self.gates.iter().rposition(|&g| g == 1);
        match (first, last) {
            (Some(a), Some(b)) => self.gates[a..=b].iter().all(|&g| g == 1),
            _ => true, // no ones at all: identity mapping
        }
    }

    pub fn validate_contiguous(&self) -> Result<()> {
        if self.is_contiguous() {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "gate vector {:?} is not a contiguous aging mapping",
                self.gates
            )))
        }
    }
}
