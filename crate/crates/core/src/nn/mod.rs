//! Minimal neural-network toolkit: fully-connected nets with hand-written
//! reverse-mode gradients, a diagonal-Gaussian policy head, Adam, gradient
//! clipping, and a binary checkpoint container.
//!
//! Everything is scalar f64 with fixed iteration order, so results are
//! bit-reproducible across runs on the same platform.

mod adam;
mod checkpoint;
mod gaussian;
mod mlp;

pub use adam::AdamOptimizer;
pub use checkpoint::{
    Checkpoint, DeployPolicy, CKPT_MAGIC, DEPLOY_MAGIC, FORMAT_VERSION,
};
pub use gaussian::GaussianHead;
pub use mlp::{Activation, MlpNet};

use serde::{Deserialize, Serialize};

/// Anything that exposes flat (parameter, gradient) slice pairs in a fixed
/// order. Optimizers and gradient clipping walk parameters through this trait
/// so a policy (net + distribution head) can be updated as one group.
pub trait ParamSet {
    /// Calls `f` once per parameter block with matching gradient block.
    /// The visit order must be identical on every call.
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut [f64], &mut [f64]));

    /// Total number of scalar parameters.
    fn param_count(&mut self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |p, _| n += p.len());
        n
    }

    /// Clears all gradient accumulators.
    fn zero_grad(&mut self) {
        self.visit_params(&mut |_, g| g.fill(0.0));
    }
}

/// Several independently-owned parameter sets updated as one.
pub struct ParamGroup<'a> {
    members: Vec<&'a mut dyn ParamSet>,
}

impl<'a> ParamGroup<'a> {
    pub fn new(members: Vec<&'a mut dyn ParamSet>) -> Self {
        Self { members }
    }
}

impl ParamSet for ParamGroup<'_> {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut [f64], &mut [f64])) {
        for m in &mut self.members {
            m.visit_params(f);
        }
    }
}

/// How `clip_gradients` bounds the update direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GradClipMode {
    /// Rescale all gradients together so the global L2 norm is at most the
    /// threshold.
    GlobalNorm,
    /// Clamp each gradient component into `[-threshold, threshold]`.
    Elementwise,
}

/// Global L2 norm over every gradient component of `set`.
pub fn global_grad_norm(set: &mut impl ParamSet) -> f64 {
    let mut sum_sq = 0.0;
    set.visit_params(&mut |_, g| {
        for v in g.iter() {
            sum_sq += v * v;
        }
    });
    sum_sq.sqrt()
}

/// Clips gradient accumulators in place and returns the pre-clip global norm.
///
/// With [`GradClipMode::GlobalNorm`] all gradients are rescaled by
/// `max / norm` when the norm exceeds `max`; a zero norm is left untouched.
/// Clipping an already-clipped set is a no-op.
pub fn clip_gradients(set: &mut impl ParamSet, mode: GradClipMode, max: f64) -> f64 {
    let norm = global_grad_norm(set);
    match mode {
        GradClipMode::GlobalNorm => {
            if norm > max && norm > 0.0 {
                let scale = max / norm;
                set.visit_params(&mut |_, g| {
                    for v in g.iter_mut() {
                        *v *= scale;
                    }
                });
            }
        }
        GradClipMode::Elementwise => {
            set.visit_params(&mut |_, g| {
                for v in g.iter_mut() {
                    *v = v.clamp(-max, max);
                }
            });
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Flat {
        p: Vec<f64>,
        g: Vec<f64>,
    }

    impl Flat {
        fn with_grads(g: Vec<f64>) -> Self {
            Self { p: vec![0.0; g.len()], g }
        }
    }

    impl ParamSet for Flat {
        fn visit_params(&mut self, f: &mut dyn FnMut(&mut [f64], &mut [f64])) {
            f(&mut self.p, &mut self.g);
        }
    }

    #[test]
    fn norm_below_threshold_is_untouched() {
        let mut set = Flat::with_grads(vec![0.3, 0.4]);
        let norm = clip_gradients(&mut set, GradClipMode::GlobalNorm, 1.0);
        assert!((norm - 0.5).abs() < 1e-15);
        assert_eq!(set.g, vec![0.3, 0.4]);
    }

    #[test]
    fn norm_above_threshold_rescales_to_max() {
        // Norm 4 with max 1 must rescale everything by 0.25.
        let mut set = Flat::with_grads(vec![0.0, 4.0]);
        let norm = clip_gradients(&mut set, GradClipMode::GlobalNorm, 1.0);
        assert!((norm - 4.0).abs() < 1e-15);
        assert_eq!(set.g, vec![0.0, 1.0]);
    }

    #[test]
    fn clipping_is_idempotent() {
        let mut set = Flat::with_grads(vec![3.0, -4.0, 12.0]);
        clip_gradients(&mut set, GradClipMode::GlobalNorm, 1.0);
        let after_once = set.g.clone();
        let norm = clip_gradients(&mut set, GradClipMode::GlobalNorm, 1.0);
        assert!((norm - 1.0).abs() <= 1e-12);
        assert_eq!(set.g, after_once);
    }

    #[test]
    fn post_clip_norm_is_min_of_pre_norm_and_max() {
        let mut set = Flat::with_grads(vec![0.1, -2.0, 0.7, 3.3, -0.2]);
        let pre = clip_gradients(&mut set, GradClipMode::GlobalNorm, 1.0);
        let post = global_grad_norm(&mut set);
        assert!((post - pre.min(1.0)).abs() <= 1e-12, "post {post} pre {pre}");
    }

    #[test]
    fn zero_gradients_return_zero_norm_without_rescale() {
        let mut set = Flat::with_grads(vec![0.0; 4]);
        let norm = clip_gradients(&mut set, GradClipMode::GlobalNorm, 1.0);
        assert_eq!(norm, 0.0);
        assert_eq!(set.g, vec![0.0; 4]);
    }

    #[test]
    fn elementwise_mode_clamps_components() {
        let mut set = Flat::with_grads(vec![0.5, -3.0, 2.0]);
        clip_gradients(&mut set, GradClipMode::Elementwise, 1.0);
        assert_eq!(set.g, vec![0.5, -1.0, 1.0]);
    }

    #[test]
    fn param_group_visits_members_in_order() {
        let mut a = Flat::with_grads(vec![1.0, 2.0]);
        let mut b = Flat::with_grads(vec![3.0]);
        let mut group = ParamGroup::new(vec![&mut a, &mut b]);
        assert_eq!(group.param_count(), 3);
        let mut seen = Vec::new();
        group.visit_params(&mut |_, g| seen.extend_from_slice(g));
        assert_eq!(seen, vec![1.0, 2.0, 3.0]);
    }
}
