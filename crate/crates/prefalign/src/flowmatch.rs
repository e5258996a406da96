//! Flow matching: linear interpolation path, velocity-matching loss, and an
//! Euler ODE sampler. Convention here: t=0 is data, t=1 is pure noise.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::cond::TaskCond;
use crate::error::{Error, Result};
use crate::nn::{mlp_backward, mlp_forward, MlpGrads, MlpParams};
use crate::rng::rng_from;
use crate::tensor::Tensor;
use crate::toyworld::{blend, from_model_space, Image, InpaintTask};

pub const DEFAULT_S: usize = 25;

fn check_time(t: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidParam {
            name: "t",
            reason: format!("flow time {t} outside [0,1]"),
        });
    }
    Ok(())
}

/// `x_t = (1-t) x0 + t eps`.
pub fn fm_interpolate(x0: &Tensor, eps: &Tensor, t: f64) -> Result<Tensor> {
    check_time(t)?;
    if x0.len() != eps.len() {
        return Err(Error::ShapeMismatch {
            context: "fm_interpolate",
            expected: format!("{}", x0.len()),
            got: format!("{}", eps.len()),
        });
    }
    Ok(Tensor::vector(
        x0.data
            .iter()
            .zip(&eps.data)
            .map(|(x, e)| (1.0 - t) * x + t * e)
            .collect(),
    ))
}

/// Velocity-matching MSE at a fixed `(t, eps)` draw, with policy gradients:
/// `||v_theta(x_t, cond, t) - (eps - x0)||^2 / dim`.
pub fn fm_loss(
    params: &MlpParams,
    task: &InpaintTask,
    k: usize,
    x0: &Tensor,
    t: f64,
    eps: &Tensor,
) -> Result<(f64, MlpGrads)> {
    let (loss, grads) = fm_loss_inner(params, task, k, x0, t, eps, true)?;
    Ok((loss, grads.unwrap()))
}

pub fn fm_loss_value(
    params: &MlpParams,
    task: &InpaintTask,
    k: usize,
    x0: &Tensor,
    t: f64,
    eps: &Tensor,
) -> Result<f64> {
    Ok(fm_loss_inner(params, task, k, x0, t, eps, false)?.0)
}

fn fm_loss_inner(
    params: &MlpParams,
    task: &InpaintTask,
    k: usize,
    x0: &Tensor,
    t: f64,
    eps: &Tensor,
    want_grads: bool,
) -> Result<(f64, Option<MlpGrads>)> {
    let x_t = fm_interpolate(x0, eps, t)?;
    let cond = TaskCond::new(task, k);
    let input = cond.build(&x_t.data, t);
    let pred = mlp_forward(params, &input)?;
    let dim = pred.len() as f64;
    let loss = pred
        .data
        .iter()
        .zip(eps.data.iter().zip(&x0.data))
        .map(|(p, (e, x))| {
            let target = e - x;
            (p - target) * (p - target)
        })
        .sum::<f64>()
        / dim;
    if !loss.is_finite() {
        return Err(Error::NonFinite { context: "fm_loss", step: None });
    }
    if !want_grads {
        return Ok((loss, None));
    }
    let upstream = Tensor::vector(
        pred.data
            .iter()
            .zip(eps.data.iter().zip(&x0.data))
            .map(|(p, (e, x))| 2.0 * (p - (e - x)) / dim)
            .collect(),
    );
    let (grads, _) = mlp_backward(params, &input, &upstream)?;
    Ok((loss, Some(grads)))
}

/// Euler integration from t=1 down to t=0 with a caller-supplied velocity
/// field. Exposed so tests can integrate oracle fields directly.
pub fn euler_integrate<F>(mut x: Vec<f64>, s_steps: usize, mut velocity: F) -> Result<Vec<f64>>
where
    F: FnMut(&[f64], f64) -> Result<Vec<f64>>,
{
    let dt = 1.0 / s_steps as f64;
    for step in 0..s_steps {
        let t = 1.0 - step as f64 * dt;
        let v = velocity(&x, t)?;
        for (xi, vi) in x.iter_mut().zip(&v) {
            *xi -= dt * vi;
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { context: "euler_integrate", step: Some(step) });
        }
    }
    Ok(x)
}

/// Flow-matching sampler: seeded Gaussian start at t=1, `s_steps` Euler steps
/// to t=0, pixel mapping, blending.
pub fn fm_sample(
    params: &MlpParams,
    task: &InpaintTask,
    k: usize,
    s_steps: usize,
    seed: u64,
) -> Result<Image> {
    if s_steps < 1 {
        return Err(Error::InvalidParam {
            name: "s_steps",
            reason: "need at least 1 Euler step".into(),
        });
    }
    let dim = 3 * task.source.width * task.source.height;
    let cond = TaskCond::new(task, k);
    let mut rng = rng_from(seed);
    let x1: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    let x0 = euler_integrate(x1, s_steps, |x, t| {
        Ok(mlp_forward(params, &cond.build(x, t))?.data)
    })?;
    let raw = from_model_space(&Tensor::vector(x0), task.source.width, task.source.height)?;
    blend(&raw, &task.source, &task.mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::normal_vec;
    use crate::toyworld::make_dataset;
    use proptest::prelude::*;

    #[test]
    fn interpolate_endpoints_exact() {
        let x0 = Tensor::vector(vec![0.2, -0.4, 0.9]);
        let eps = Tensor::vector(vec![1.0, 0.5, -2.0]);
        assert_eq!(fm_interpolate(&x0, &eps, 0.0).unwrap(), x0);
        assert_eq!(fm_interpolate(&x0, &eps, 1.0).unwrap(), eps);
    }

    #[test]
    fn interpolate_midpoint_elementwise() {
        let x0 = Tensor::vector(vec![0.0, 1.0, -1.0]);
        let eps = Tensor::vector(vec![1.0, 0.0, 1.0]);
        let mid = fm_interpolate(&x0, &eps, 0.5).unwrap();
        for (m, (a, b)) in mid.data.iter().zip(x0.data.iter().zip(&eps.data)) {
            assert!((m - 0.5 * (a + b)).abs() < 1e-15);
        }
    }

    #[test]
    fn interpolate_rejects_out_of_range_t() {
        let x = Tensor::vector(vec![0.0]);
        assert!(fm_interpolate(&x, &x, -0.1).is_err());
        assert!(fm_interpolate(&x, &x, 1.1).is_err());
    }

    #[test]
    fn loss_zero_on_exact_velocity() {
        // x0 = 0 and zero network: target velocity eps - x0 = eps; with eps=0
        // the zero net is exact and loss is 0.
        let tasks = make_dataset(1, 2, 1, 0.0, 4, 4).unwrap();
        let dim = 48;
        let params = MlpParams::zeros(crate::cond::cond_input_dim(4, 4, 2), &[], dim);
        let (loss, _) = fm_loss(
            &params,
            &tasks[0],
            2,
            &Tensor::zeros(dim),
            0.3,
            &Tensor::zeros(dim),
        )
        .unwrap();
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn zero_net_zero_x0_loss_is_mean_eps_squared() {
        let tasks = make_dataset(2, 2, 1, 0.0, 4, 4).unwrap();
        let dim = 48;
        let params = MlpParams::zeros(crate::cond::cond_input_dim(4, 4, 2), &[], dim);
        let mut total = 0.0;
        let draws = 1000;
        for i in 0..draws {
            let eps = Tensor::vector(normal_vec(5000 + i, dim));
            let (loss, _) =
                fm_loss(&params, &tasks[0], 2, &Tensor::zeros(dim), 0.4, &eps).unwrap();
            let expected = eps.data.iter().map(|e| e * e).sum::<f64>() / dim as f64;
            assert!((loss - expected).abs() < 1e-12);
            total += loss;
        }
        assert!((total / draws as f64 - 1.0).abs() < 0.1);
    }

    #[test]
    fn euler_exact_on_constant_velocity() {
        // v = eps - x0 constant: Euler from eps lands exactly on x0 for any S.
        let dim = 12;
        let x0 = normal_vec(100, dim);
        let eps = normal_vec(101, dim);
        let v: Vec<f64> = eps.iter().zip(&x0).map(|(e, x)| e - x).collect();
        for s in [1usize, 3, 25] {
            let out = euler_integrate(eps.clone(), s, |_, _| Ok(v.clone())).unwrap();
            for (o, x) in out.iter().zip(&x0) {
                assert!((o - x).abs() < 1e-12, "S={s}");
            }
        }
    }

    #[test]
    fn sampler_deterministic_and_invariants_hold() {
        let tasks = make_dataset(3, 2, 1, 0.05, 4, 4).unwrap();
        let t = &tasks[0];
        let params = MlpParams::init(crate::cond::cond_input_dim(4, 4, 2), &[8], 48, 5);
        let a = fm_sample(&params, t, 2, 25, 9).unwrap();
        let b = fm_sample(&params, t, 2, 25, 9).unwrap();
        assert_eq!(a, b);
        let one_step = fm_sample(&params, t, 2, 1, 9).unwrap();
        assert_ne!(a, one_step);
        for img in [&a, &one_step] {
            assert!(img.in_unit_range());
            for y in 0..4 {
                for x in 0..4 {
                    if t.mask.values[y * 4 + x] == 0.0 {
                        assert_eq!(img.pixel(x, y), t.source.pixel(x, y));
                    }
                }
            }
        }
    }

    proptest! {
        #[test]
        fn interpolate_is_affine_in_inputs(a in -2.0f64..2.0, t in 0.0f64..1.0) {
            let x0 = Tensor::vector(vec![0.3, -0.7, 1.1]);
            let eps = Tensor::vector(vec![-0.2, 0.9, 0.4]);
            let scaled_x0 = Tensor::vector(x0.data.iter().map(|v| a * v).collect());
            let scaled_eps = Tensor::vector(eps.data.iter().map(|v| a * v).collect());
            let lhs = fm_interpolate(&scaled_x0, &scaled_eps, t).unwrap();
            let rhs = fm_interpolate(&x0, &eps, t).unwrap();
            for (l, r) in lhs.data.iter().zip(&rhs.data) {
                prop_assert!((l - a * r).abs() < 1e-12);
            }
        }
    }
}
