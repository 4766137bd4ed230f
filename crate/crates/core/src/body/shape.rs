//! Body shape parameters.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const SHAPE_PARAMS: usize = 8;

/// k-dimensional shape vector, each component clamped to [-2, 2].
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeParams {
    pub beta: [f32; SHAPE_PARAMS],
}

/// Multiplicative factors derived from the shape vector.
pub struct ShapeFactors {
    pub height: f32,
    pub arm_len: f32,
    pub leg_len: f32,
    pub torso_len: f32,
    pub limb_thick: f32,
    pub torso_thick: f32,
    pub head: f32,
    pub shoulder_w: f32,
}

impl ShapeParams {
    pub fn zero() -> Self {
        ShapeParams {
            beta: [0.0; SHAPE_PARAMS],
        }
    }

    pub fn new(beta: [f32; SHAPE_PARAMS]) -> Self {
        let mut b = beta;
        for v in &mut b {
            *v = v.clamp(-2.0, 2.0);
        }
        ShapeParams { beta: b }
    }

    pub fn random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut beta = [0.0f32; SHAPE_PARAMS];
        for v in &mut beta {
            *v = rng.gen_range(-2.0..2.0);
        }
        ShapeParams { beta }
    }

    /// Component scale coefficients: arm length is the strongest axis (0.08
    /// per unit), so beta1 = +2 vs -2 changes arm length by ~32%.
    pub fn factors(&self) -> ShapeFactors {
        let f = |i: usize, coef: f32| 1.0 + coef * self.beta[i];
        ShapeFactors {
            height: f(0, 0.05),
            arm_len: f(1, 0.08),
            leg_len: f(2, 0.06),
            torso_len: f(3, 0.05),
            limb_thick: f(4, 0.10),
            torso_thick: f(5, 0.08),
            head: f(6, 0.08),
            shoulder_w: f(7, 0.06),
        }
    }

    pub fn flat(&self) -> Vec<f32> {
        self.beta.to_vec()
    }

    pub fn from_flat(vals: &[f32]) -> Self {
        assert_eq!(vals.len(), SHAPE_PARAMS);
        let mut beta = [0.0f32; SHAPE_PARAMS];
        beta.copy_from_slice(vals);
        ShapeParams::new(beta)
    }
}
