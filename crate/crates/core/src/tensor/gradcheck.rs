//! Finite-difference gradient checking for every registered op.

use super::{backward, forward_op, OpAttrs, OpId, Tensor, TensorError};
use crate::scalar::{r, Real};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Max over input elements of |analytic - numeric| / (|analytic| + |numeric| + 1e-8),
/// with the numeric side from central differences of step `h`.
///
/// `f` must be scalar-valued and re-runnable on fresh leaves.
pub fn grad_check<T: Real>(
    f: &dyn Fn(&[Tensor<T>]) -> Tensor<T>,
    inputs: &[Tensor<T>],
    h: f64,
) -> Result<f64, TensorError> {
    let params: Vec<Tensor<T>> = inputs
        .iter()
        .map(|t| Tensor::param(t.shape(), t.data().to_vec()))
        .collect();
    let loss = f(&params);
    if loss.numel() != 1 {
        return Err(TensorError::NonScalarLoss(loss.shape().to_vec()));
    }
    for p in &params {
        p.zero_grad();
    }
    backward(&loss)?;

    let mut max_err = 0.0f64;
    for (i, p) in params.iter().enumerate() {
        let analytic = p.grad().expect("grad populated by backward");
        for j in 0..p.numel() {
            let eval = |delta: f64| -> f64 {
                let rebuilt: Vec<Tensor<T>> = params
                    .iter()
                    .enumerate()
                    .map(|(k, q)| {
                        let mut data = q.data().to_vec();
                        if k == i {
                            data[j] = data[j] + r(delta);
                        }
                        Tensor::from_vec(q.shape(), data)
                    })
                    .collect();
                f(&rebuilt).item().as_f64()
            };
            let numeric = (eval(h) - eval(-h)) / (2.0 * h);
            let a = analytic[j].as_f64();
            let err = (a - numeric).abs() / (a.abs() + numeric.abs() + 1e-8);
            if err > max_err {
                max_err = err;
            }
        }
    }
    Ok(max_err)
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub op: String,
    pub max_err: f64,
    pub threshold: f64,
}

impl GradCheckReport {
    pub fn pass(&self) -> bool {
        self.max_err < self.threshold
    }
}

fn rand_data<T: Real>(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<T> {
    (0..n).map(|_| r(rng.gen_range(lo..hi))).collect()
}

/// Random values kept at least 0.05 away from zero (for kinked ops).
fn rand_data_off_kink<T: Real>(rng: &mut ChaCha8Rng, n: usize) -> Vec<T> {
    (0..n)
        .map(|_| {
            let mag = rng.gen_range(0.05..1.0);
            let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            r(mag * sign)
        })
        .collect()
}

/// Weighted mean to a scalar so every output element gets a distinct cotangent.
fn to_scalar<T: Real>(out: &Tensor<T>, rng: &mut ChaCha8Rng) -> Tensor<T> {
    let w = Tensor::from_vec(out.shape(), rand_data(rng, out.numel(), -1.0, 1.0));
    out.mul(&w).mean_all()
}

/// Run grad_check for every registered op at 10 seeded random inputs each.
///
/// Thresholds: 1e-3 for smooth ops, 1e-2 for ops with clamps (probed away
/// from their kinks).
pub fn grad_check_all_ops<T: Real>(h: f64) -> Vec<GradCheckReport> {
    let mut reports = Vec::new();
    for op in OpId::ALL {
        let threshold = match op {
            OpId::Relu => 1e-2,
            _ => 1e-3,
        };
        let mut worst = 0.0f64;
        for seed in 0..10u64 {
            let err = grad_check_op::<T>(op, seed, h).expect("gradcheck harness must run");
            if err > worst {
                worst = err;
            }
        }
        reports.push(GradCheckReport {
            op: op.name().to_string(),
            max_err: worst,
            threshold,
        });
    }
    reports
}

fn grad_check_op<T: Real>(op: OpId, seed: u64, h: f64) -> Result<f64, TensorError> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x6AD0 + seed * 7919);
    let mk = |rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64| {
        let n = shape.iter().product();
        Tensor::from_vec(shape, rand_data::<T>(rng, n, lo, hi))
    };
    let mut attrs = OpAttrs::default();
    let inputs: Vec<Tensor<T>> = match op {
        OpId::Add | OpId::Sub | OpId::Mul => {
            let a = mk(&mut rng, &[2, 3, 4], -1.0, 1.0);
            let b = if seed % 2 == 0 {
                mk(&mut rng, &[2, 3, 4], -1.0, 1.0)
            } else {
                mk(&mut rng, &[1, 3, 4], -1.0, 1.0)
            };
            vec![a, b]
        }
        OpId::ScalarMul | OpId::ScalarAdd => {
            attrs.scalar = rng.gen_range(-2.0..2.0);
            vec![mk(&mut rng, &[2, 3, 4], -1.0, 1.0)]
        }
        OpId::MatMul => vec![mk(&mut rng, &[3, 4], -1.0, 1.0), mk(&mut rng, &[4, 5], -1.0, 1.0)],
        OpId::Transpose2d => vec![mk(&mut rng, &[3, 5], -1.0, 1.0)],
        OpId::Conv2d => {
            if seed % 2 == 0 {
                attrs.stride = 1;
                attrs.pad = 1;
            } else {
                attrs.stride = 2;
                attrs.pad = 0;
            }
            vec![
                mk(&mut rng, &[2, 5, 6], -1.0, 1.0),
                mk(&mut rng, &[3, 2, 3, 3], -0.5, 0.5),
                mk(&mut rng, &[3], -0.5, 0.5),
            ]
        }
        OpId::TConv2d => {
            attrs.stride = 2;
            attrs.pad = 1;
            vec![
                mk(&mut rng, &[2, 3, 4], -1.0, 1.0),
                mk(&mut rng, &[2, 3, 3, 3], -0.5, 0.5),
                mk(&mut rng, &[3], -0.5, 0.5),
            ]
        }
        OpId::Relu => {
            let n = 24;
            vec![Tensor::from_vec(&[2, 3, 4], rand_data_off_kink::<T>(&mut rng, n))]
        }
        OpId::Sigmoid | OpId::Tanh | OpId::Softplus | OpId::Exp => {
            vec![mk(&mut rng, &[2, 3, 4], -1.5, 1.5)]
        }
        OpId::Log => vec![mk(&mut rng, &[2, 3, 4], 0.3, 1.5)],
        OpId::Sum | OpId::Mean => vec![mk(&mut rng, &[2, 3, 4], -1.0, 1.0)],
        OpId::Softmax => {
            attrs.axis = 1;
            vec![mk(&mut rng, &[2, 5, 3], -2.0, 2.0)]
        }
        OpId::GroupNorm => vec![
            mk(&mut rng, &[8, 4, 4], -1.0, 1.0),
            mk(&mut rng, &[8], 0.5, 1.5),
            mk(&mut rng, &[8], -0.5, 0.5),
        ],
        OpId::Concat => {
            attrs.axis = (seed % 2) as usize;
            vec![mk(&mut rng, &[2, 3], -1.0, 1.0), mk(&mut rng, &[2, 3], -1.0, 1.0)]
        }
        OpId::Slice => {
            attrs.axis = (seed % 2) as usize;
            attrs.start = 1;
            attrs.end = 3;
            vec![mk(&mut rng, &[4, 5], -1.0, 1.0)]
        }
        OpId::Reshape => {
            attrs.shape = Some(vec![3, 4]);
            vec![mk(&mut rng, &[2, 6], -1.0, 1.0)]
        }
        OpId::UpsampleNearest2 | OpId::AvgPool2 => vec![mk(&mut rng, &[2, 4, 4], -1.0, 1.0)],
        OpId::L2Norm => {
            let n = 12;
            vec![Tensor::from_vec(&[3, 4], rand_data_off_kink::<T>(&mut rng, n))]
        }
        OpId::PixelNorm => {
            attrs.eps = 1e-8;
            vec![mk(&mut rng, &[3, 4, 4], -1.0, 1.0)]
        }
    };

    let weight_rng_seed = 0xBEEF + seed;
    let f = move |xs: &[Tensor<T>]| -> Tensor<T> {
        let out = forward_op(op, xs, &attrs).expect("forward_op in gradcheck");
        let mut wrng = ChaCha8Rng::seed_from_u64(weight_rng_seed);
        to_scalar(&out, &mut wrng)
    };
    grad_check(&f, &inputs, h)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_gradient_is_tight() {
        // f = sum(x^2), x = [1,2,3]: analytic grad 2x, quadratic so FD is near-exact.
        let x = Tensor::<f64>::from_vec(&[3], vec![1.0, 2.0, 3.0]);
        let f = |xs: &[Tensor<f64>]| xs[0].mul(&xs[0]).sum_all();
        let err = grad_check(&f, &[x], 1e-3).unwrap();
        assert!(err < 1e-4, "err = {err}");
    }

    #[test]
    fn all_ops_pass_thresholds_f64() {
        for report in grad_check_all_ops::<f64>(1e-3) {
            assert!(
                report.pass(),
                "op {} failed gradcheck: {} >= {}",
                report.op,
                report.max_err,
                report.threshold
            );
        }
    }

    #[test]
    fn mlp_matches_finite_differences_in_f32() {
        // Random 3-layer MLP, f32 end to end, h = 1e-3, rel err < 1e-2.
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mk = |rng: &mut ChaCha8Rng, shape: &[usize]| {
            let n: usize = shape.iter().product();
            Tensor::<f32>::from_vec(shape, (0..n).map(|_| rng.gen_range(-0.5..0.5)).collect())
        };
        let x = mk(&mut rng, &[1, 6]);
        let w1 = mk(&mut rng, &[6, 8]);
        let w2 = mk(&mut rng, &[8, 8]);
        let w3 = mk(&mut rng, &[8, 4]);
        let f = move |ps: &[Tensor<f32>]| {
            x.matmul(&ps[0]).tanh().matmul(&ps[1]).tanh().matmul(&ps[2]).mean_all()
        };
        let err = grad_check(&f, &[w1, w2, w3], 1e-3).unwrap();
        assert!(err < 1e-2, "err = {err}");
    }

    #[test]
    fn conv_then_mean_tight() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Tensor::<f64>::from_vec(&[1, 6, 6], (0..36).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let w = Tensor::<f64>::from_vec(&[2, 1, 3, 3], (0..18).map(|_| rng.gen_range(-0.5..0.5)).collect());
        let f = |ps: &[Tensor<f64>]| ps[0].conv2d(&ps[1], None, 1, 1).mean_all();
        let err = grad_check(&f, &[x, w], 1e-3).unwrap();
        assert!(err < 1e-3, "err = {err}");
    }
}
