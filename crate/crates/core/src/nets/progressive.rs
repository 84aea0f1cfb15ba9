//! The progressive generator: an ordered chain of gated residual
//! sub-generators evaluated in ascending order, each feeding the next.
//!
//! Samples within a batch may carry different gate vectors, so every stage
//! gathers the engaged samples, runs its sub-network on that sub-batch, and
//! scatters the residuals back. Bypassed samples flow through unchanged and
//! contribute no gradient to the bypassed sub-network.

use ndarray::{Array4, Axis};
use rand::Rng;

use super::subgen::SubGenerator;
use crate::error::{Error, Result};
use crate::gates::GateVector;
use crate::nn::param::{join, HasParams, ParamMut, ParamRef};
use crate::scalar::Scalar;

#[derive(Debug, Clone)]
pub struct ProgressiveGenerator<S: Scalar> {
    subnets: Vec<SubGenerator<S>>,
    trace: Vec<Vec<usize>>, // engaged sample indices per stage, from last forward
}

fn gather<S: Scalar>(x: &Array4<S>, idx: &[usize]) -> Array4<S> {
    x.select(Axis(0), idx)
}

fn scatter_add<S: Scalar>(dst: &mut Array4<S>, src: &Array4<S>, idx: &[usize]) {
    for (row, &i) in idx.iter().enumerate() {
        let mut d = dst.index_axis_mut(Axis(0), i);
        d += &src.index_axis(Axis(0), row);
    }
}

impl<S: Scalar> ProgressiveGenerator<S> {
    /// A chain of `n_groups - 1` sub-generators.
    pub fn new<R: Rng>(rng: &mut R, n_groups: usize) -> Self {
        assert!(n_groups >= 2, "need at least two age groups");
        ProgressiveGenerator {
            subnets: (0..n_groups - 1)
                .map(|_| SubGenerator::new(rng, 3))
                .collect(),
            trace: Vec::new(),
        }
    }

    pub fn n_groups(&self) -> usize {
        self.subnets.len() + 1
    }

    pub fn subnet(&mut self, i: usize) -> &mut SubGenerator<S> {
        &mut self.subnets[i - 1]
    }

    pub fn subnets(&self) -> &[SubGenerator<S>] {
        &self.subnets
    }

    fn check_gates(&self, batch: usize, gates: &[GateVector]) -> Result<()> {
        if gates.len() != batch {
            return Err(Error::invalid(format!(
                "expected one gate vector per sample ({batch}), got {}",
                gates.len()
            )));
        }
        for g in gates {
            if g.len() != self.subnets.len() {
                return Err(Error::invalid(format!(
                    "gate vector length {} does not match {} sub-generators",
                    g.len(),
                    self.subnets.len()
                )));
            }
        }
        Ok(())
    }

    /// Forward pass with per-sample gates. With `train` set, caches are kept
    /// for [`ProgressiveGenerator::backward`].
    pub fn forward(
        &mut self,
        x: &Array4<S>,
        gates: &[GateVector],
        train: bool,
    ) -> Result<Array4<S>> {
        let batch = x.dim().0;
        self.check_gates(batch, gates)?;
        if batch > 0 {
            self.subnets[0].check_input(x)?;
        }
        let mut cur = x.clone();
        self.trace.clear();
        for (i, sub) in self.subnets.iter_mut().enumerate() {
            let engaged: Vec<usize> = (0..batch)
                .filter(|&s| gates[s].gate(i + 1) == 1)
                .collect();
            if engaged.is_empty() {
                self.trace.push(engaged);
                continue;
            }
            let xi = gather(&cur, &engaged);
            let branch = sub.forward(&xi, train);
            scatter_add(&mut cur, &branch, &engaged);
            self.trace.push(engaged);
        }
        Ok(cur)
    }

    /// Inference with a single gate vector shared by the whole batch.
    pub fn generate(&mut self, x: &Array4<S>, gates: &GateVector) -> Result<Array4<S>> {
        let batch = x.dim().0;
        let per_sample = vec![gates.clone(); batch];
        self.forward(x, &per_sample, false)
    }

    /// Backpropagate through the chain in reverse stage order, accumulating
    /// parameter gradients. Returns the gradient with respect to the input.
    pub fn backward(&mut self, dy: &Array4<S>, want_dw: bool) -> Array4<S> {
        assert_eq!(
            self.trace.len(),
            self.subnets.len(),
            "backward without a training forward"
        );
        let mut d = dy.clone();
        for i in (0..self.subnets.len()).rev() {
            let engaged = std::mem::take(&mut self.trace[i]);
            if engaged.is_empty() {
                continue;
            }
            let di = gather(&d, &engaged);
            let dbranch = self.subnets[i]
                .backward(&di, true, want_dw)
                .expect("dx requested");
            scatter_add(&mut d, &dbranch, &engaged);
        }
        self.trace.clear();
        d
    }
}

impl<S: Scalar> HasParams<S> for ProgressiveGenerator<S> {
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(ParamMut<'_, S>)) {
        for (i, sub) in self.subnets.iter_mut().enumerate() {
            sub.visit_mut(&join(prefix, &format!("g{}", i + 1)), f);
        }
    }

    fn visit(&self, prefix: &str, f: &mut dyn FnMut(ParamRef<'_, S>)) {
        for (i, sub) in self.subnets.iter().enumerate() {
            sub.visit(&join(prefix, &format!("g{}", i + 1)), f);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::subgen::subgen_step;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn randn4(rng: &mut ChaCha8Rng, d: (usize, usize, usize, usize)) -> Array4<f64> {
        Array4::from_shape_simple_fn(d, || crate::nn::init::standard_normal(rng))
    }

    #[test]
    fn all_zero_gates_is_a_bitwise_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut g = ProgressiveGenerator::<f64>::new(&mut rng, 4);
        let x = randn4(&mut rng, (3, 3, 8, 8));
        let y = g.generate(&x, &GateVector::zeros(4)).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn generate_equals_stepwise_fold() {
        // Brute-force oracle: apply subgen_step one stage at a time.
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let mut g = ProgressiveGenerator::<f64>::new(&mut rng, 4);
        let x = randn4(&mut rng, (2, 3, 8, 8));
        for s in 1..=4usize {
            for t in s..=4usize {
                let gates = GateVector::for_mapping(s, t, 4).unwrap();
                let y = g.generate(&x, &gates).unwrap();
                let mut cur = x.clone();
                for i in 1..4usize {
                    cur = subgen_step(&cur, g.subnet(i), gates.gate(i)).unwrap();
                }
                let err = (&y - &cur).mapv(f64::abs).sum();
                assert_eq!(err, 0.0, "mapping {s}->{t}");
            }
        }
    }

    #[test]
    fn single_middle_gate_bypasses_the_others() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let mut g = ProgressiveGenerator::<f64>::new(&mut rng, 4);
        let x = randn4(&mut rng, (1, 3, 8, 8));
        let gates = GateVector::for_mapping(2, 3, 4).unwrap();
        let y = g.generate(&x, &gates).unwrap();
        let branch = g.subnet(2).forward(&x, false);
        let err = (&y - &(&x + &branch)).mapv(f64::abs).sum();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn prefix_consistency() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let mut g = ProgressiveGenerator::<f64>::new(&mut rng, 4);
        let x = randn4(&mut rng, (1, 3, 8, 8));
        for s in 1..=4usize {
            for r in s..=4usize {
                for t in r..=4usize {
                    let whole = g
                        .generate(&x, &GateVector::for_mapping(s, t, 4).unwrap())
                        .unwrap();
                    let first = g
                        .generate(&x, &GateVector::for_mapping(s, r, 4).unwrap())
                        .unwrap();
                    let second = g
                        .generate(&first, &GateVector::for_mapping(r, t, 4).unwrap())
                        .unwrap();
                    let err = (&whole - &second).mapv(f64::abs).sum();
                    assert_eq!(err, 0.0, "s={s} r={r} t={t}");
                }
            }
        }
    }

    #[test]
    fn mixed_gates_match_per_sample_generation() {
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        let mut g = ProgressiveGenerator::<f64>::new(&mut rng, 4);
        let x = randn4(&mut rng, (3, 3, 8, 8));
        let gates = vec![
            GateVector::for_mapping(1, 4, 4).unwrap(),
            GateVector::for_mapping(2, 3, 4).unwrap(),
            GateVector::for_mapping(3, 3, 4).unwrap(),
        ];
        let y = g.forward(&x, &gates, false).unwrap();
        for (i, gv) in gates.iter().enumerate() {
            let xi = x.select(Axis(0), &[i]);
            let yi = g.generate(&xi, gv).unwrap();
            let err = (&y.select(Axis(0), &[i]) - &yi).mapv(f64::abs).sum();
            assert_eq!(err, 0.0, "sample {i}");
        }
    }

    #[test]
    fn rejects_mismatched_gate_lengths() {
        let mut rng = ChaCha8Rng::seed_from_u64(26);
        let mut g = ProgressiveGenerator::<f64>::new(&mut rng, 4);
        let x = randn4(&mut rng, (1, 3, 8, 8));
        let bad = GateVector::from_bits(vec![1, 0]).unwrap();
        assert!(g.generate(&x, &bad).is_err());
    }
}
