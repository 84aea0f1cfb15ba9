//! Parameter enumeration shared by the optimizer and the checkpoint code.
//!
//! Layers keep typed arrays for their math; `HasParams::visit` exposes them
//! as dynamic-dimensional views in a fixed, deterministic order. Optimizer
//! state is keyed by that order, checkpoints by the dotted names.

use ndarray::{ArrayViewD, ArrayViewMutD};

use crate::scalar::Scalar;

/// Whether a tensor is optimized or merely carried along (running statistics,
/// power-iteration vectors).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Buffer,
}

/// Mutable view over one named tensor and its gradient.
pub struct ParamMut<'a, S: Scalar> {
    pub name: String,
    pub kind: ParamKind,
    pub value: ArrayViewMutD<'a, S>,
    pub grad: Option<ArrayViewMutD<'a, S>>,
}

/// Read-only view used when saving checkpoints and inspecting gradients.
pub struct ParamRef<'a, S: Scalar> {
    pub name: String,
    pub kind: ParamKind,
    pub value: ArrayViewD<'a, S>,
    pub grad: Option<ArrayViewD<'a, S>>,
}

pub trait HasParams<S: Scalar> {
    /// Visit every tensor mutably, in a deterministic order.
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(ParamMut<'_, S>));

    /// Visit every tensor read-only, in the same order as `visit_mut`.
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(ParamRef<'_, S>));

    fn zero_grads(&mut self) {
        self.visit_mut("", &mut |mut p| {
            if let Some(g) = p.grad.as_mut() {
                g.fill(S::zero());
            }
        });
    }

    /// Total number of optimized scalars.
    fn weight_count(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |p| {
            if p.kind == ParamKind::Weight {
                n += p.value.len();
            }
        });
        n
    }

    /// True if any tensor or gradient contains a non-finite value.
    fn has_non_finite(&self) -> bool {
        let mut bad = false;
        self.visit("", &mut |p| {
            if !bad && p.value.iter().any(|v| !v.is_finite()) {
                bad = true;
            }
        });
        bad
    }
}

pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}
