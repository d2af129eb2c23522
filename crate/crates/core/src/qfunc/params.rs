//! Named parameter segments shared by all network variants.

use ndarray::Array2;

use crate::error::{Error, Result};

/// One named block of parameters. Non-trainable segments hold constants
/// (input normalization) that travel with the network through snapshots but
/// are never touched by the optimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub name: String,
    pub values: Array2<f64>,
    pub trainable: bool,
}

/// An ordered collection of segments. Order is part of the identity: two
/// parameter sets are compatible when their segment names and shapes match
/// pairwise.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet {
    segments: Vec<Segment>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: &str, values: Array2<f64>, trainable: bool) {
        debug_assert!(
            self.get(name).is_none(),
            "duplicate segment name {name:?}"
        );
        self.segments.push(Segment {
            name: name.to_string(),
            values,
            trainable,
        });
    }

    pub fn get(&self, name: &str) -> Option<&Array2<f64>> {
        self.segments
            .iter()
            .find(|s| s.name == name)
            .map(|s| &s.values)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Array2<f64>> {
        self.segments
            .iter_mut()
            .find(|s| s.name == name)
            .map(|s| &mut s.values)
    }

    /// Panics when the segment is missing; for internal layer code where the
    /// name is statically known to exist.
    pub(crate) fn expect(&self, name: &str) -> &Array2<f64> {
        self.get(name)
            .unwrap_or_else(|| panic!("missing segment {name:?}"))
    }

    pub(crate) fn expect_mut(&mut self, name: &str) -> &mut Array2<f64> {
        self.get_mut(name)
            .unwrap_or_else(|| panic!("missing segment {name:?}"))
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn segments_mut(&mut self) -> &mut [Segment] {
        &mut self.segments
    }

    /// Total number of scalar parameters, trainable ones only.
    pub fn trainable_len(&self) -> usize {
        self.segments
            .iter()
            .filter(|s| s.trainable)
            .map(|s| s.values.len())
            .sum()
    }

    /// A zero-filled set with the same segment layout.
    pub fn zeros_like(&self) -> ParamSet {
        ParamSet {
            segments: self
                .segments
                .iter()
                .map(|s| Segment {
                    name: s.name.clone(),
                    values: Array2::zeros(s.values.raw_dim()),
                    trainable: s.trainable,
                })
                .collect(),
        }
    }

    pub fn same_layout(&self, other: &ParamSet) -> bool {
        self.segments.len() == other.segments.len()
            && self
                .segments
                .iter()
                .zip(&other.segments)
                .all(|(a, b)| a.name == b.name && a.values.raw_dim() == b.values.raw_dim())
    }

    /// Copies values from `other` into `self`; layouts must match.
    pub fn copy_from(&mut self, other: &ParamSet) -> Result<()> {
        if !self.same_layout(other) {
            return Err(Error::ContractViolation(
                "parameter set layouts differ".into(),
            ));
        }
        for (dst, src) in self.segments.iter_mut().zip(&other.segments) {
            dst.values.assign(&src.values);
        }
        Ok(())
    }

    /// Largest absolute value across trainable segments; `0.0` when empty.
    pub fn max_abs(&self) -> f64 {
        self.segments
            .iter()
            .filter(|s| s.trainable)
            .flat_map(|s| s.values.iter())
            .fold(0.0f64, |m, &v| m.max(v.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.segments
            .iter()
            .all(|s| s.values.iter().all(|v| v.is_finite()))
    }
}

/// RMSProp with a per-parameter running mean of squared gradients.
#[derive(Debug, Clone)]
pub struct RmsProp {
    pub learning_rate: f64,
    pub decay: f64,
    pub epsilon: f64,
    cache: Option<ParamSet>,
}

impl RmsProp {
    pub fn new(learning_rate: f64, decay: f64) -> Self {
        Self {
            learning_rate,
            decay,
            epsilon: 1e-8,
            cache: None,
        }
    }

    /// Applies one update in place: `p -= lr * g / sqrt(v + eps)` with
    /// `v = decay * v + (1 - decay) * g^2`. Non-trainable segments are left
    /// untouched.
    pub fn step(&mut self, params: &mut ParamSet, grads: &ParamSet) -> Result<()> {
        if !params.same_layout(grads) {
            return Err(Error::ContractViolation(
                "gradient layout does not match parameters".into(),
            ));
        }
        let cache = match &mut self.cache {
            Some(c) if c.same_layout(params) => c,
            slot => {
                *slot = Some(params.zeros_like());
                slot.as_mut().expect("just set")
            }
        };
        for ((p, g), v) in params
            .segments_mut()
            .iter_mut()
            .zip(grads.segments())
            .zip(cache.segments_mut())
        {
            if !p.trainable {
                continue;
            }
            for ((pv, &gv), vv) in p
                .values
                .iter_mut()
                .zip(g.values.iter())
                .zip(v.values.iter_mut())
            {
                *vv = self.decay * *vv + (1.0 - self.decay) * gv * gv;
                *pv -= self.learning_rate * gv / (vv.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }

    /// Forgets accumulated second-moment state.
    pub fn reset(&mut self) {
        self.cache = None;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;

    fn small_set() -> ParamSet {
        let mut p = ParamSet::new();
        p.push("w", array![[1.0, -2.0], [0.5, 3.0]], true);
        p.push("norm", array![[10.0]], false);
        p
    }

    #[test]
    fn layout_and_counts() {
        let p = small_set();
        assert_eq!(p.trainable_len(), 4);
        assert!(p.same_layout(&p.zeros_like()));
        assert_eq!(p.max_abs(), 3.0);
        assert!(p.all_finite());
    }

    #[test]
    fn copy_from_requires_matching_layout() {
        let mut a = small_set();
        let b = a.zeros_like();
        a.copy_from(&b).unwrap();
        assert_eq!(a.expect("w").sum(), 0.0);
        // Constants copy too (they are part of the snapshot identity).
        assert_eq!(a.expect("norm")[[0, 0]], 0.0);
        let mut other = ParamSet::new();
        other.push("w", array![[1.0]], true);
        assert!(a.copy_from(&other).is_err());
    }

    #[test]
    fn rmsprop_first_step_is_scaled_sign_update() {
        let mut p = ParamSet::new();
        p.push("w", array![[1.0, 1.0]], true);
        let mut g = p.zeros_like();
        g.expect_mut("w").assign(&array![[0.3, -0.01]]);
        let mut opt = RmsProp::new(0.1, 0.9);
        opt.step(&mut p, &g).unwrap();
        // v = 0.1 g^2, so the step is lr * g / (sqrt(0.1) |g|) = lr / sqrt(0.1)
        // in magnitude, independent of |g|.
        let step = 0.1 / 0.1f64.sqrt();
        let w = p.expect("w");
        assert_relative_eq!(w[[0, 0]], 1.0 - step, epsilon = 1e-6);
        assert_relative_eq!(w[[0, 1]], 1.0 + step, epsilon = 1e-4);
    }

    #[test]
    fn rmsprop_skips_frozen_segments() {
        let mut p = small_set();
        let mut g = p.zeros_like();
        g.expect_mut("norm").assign(&array![[5.0]]);
        g.expect_mut("w").assign(&array![[1.0, 1.0], [1.0, 1.0]]);
        let mut opt = RmsProp::new(0.1, 0.9);
        opt.step(&mut p, &g).unwrap();
        assert_eq!(p.expect("norm")[[0, 0]], 10.0);
        assert!(p.expect("w")[[0, 0]] < 1.0);
    }
}
