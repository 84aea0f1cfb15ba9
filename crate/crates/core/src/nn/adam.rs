//! Adam optimizer over any parameter-bearing network.
//!
//! Moment slots are allocated on the first step and matched to parameters by
//! visit order, which is deterministic for every network in this crate.

use ndarray::ArrayD;

use super::param::{HasParams, ParamKind};
use crate::scalar::{sc, Scalar};

#[derive(Debug, Clone)]
pub struct Adam<S: Scalar> {
    pub lr: S,
    pub beta1: S,
    pub beta2: S,
    pub eps: S,
    t: u64,
    slots: Vec<(ArrayD<S>, ArrayD<S>)>,
}

impl<S: Scalar> Adam<S> {
    pub fn new(lr: f64, beta1: f64, beta2: f64) -> Self {
        Adam {
            lr: sc(lr),
            beta1: sc(beta1),
            beta2: sc(beta2),
            eps: sc(1e-8),
            t: 0,
            slots: Vec::new(),
        }
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.lr = sc(lr);
    }

    pub fn step<N: HasParams<S>>(&mut self, net: &mut N) {
        self.t += 1;
        let t = self.t as i32;
        let bc1 = S::one() - self.beta1.powi(t);
        let bc2 = S::one() - self.beta2.powi(t);
        let (lr, b1, b2, eps) = (self.lr, self.beta1, self.beta2, self.eps);
        let slots = &mut self.slots;
        let mut idx = 0usize;
        net.visit_mut("", &mut |mut p| {
            if p.kind != ParamKind::Weight {
                return;
            }
            let grad = p.grad.as_ref().expect("weight param without gradient");
            if slots.len() == idx {
                slots.push((
                    ArrayD::zeros(p.value.raw_dim()),
                    ArrayD::zeros(p.value.raw_dim()),
                ));
            }
            let (m, v) = &mut slots[idx];
            ndarray::Zip::from(&mut p.value)
                .and(m)
                .and(v)
                .and(grad)
                .for_each(|w, m, v, &g| {
                    *m = b1 * *m + (S::one() - b1) * g;
                    *v = b2 * *v + (S::one() - b2) * g * g;
                    let mhat = *m / bc1;
                    let vhat = *v / bc2;
                    *w = *w - lr * mhat / (vhat.sqrt() + eps);
                });
            idx += 1;
        });
    }
}
