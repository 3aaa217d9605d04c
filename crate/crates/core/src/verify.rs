//! Finite-difference verification of every differentiable primitive and of
//! the whole reduced-width model, in 64-bit.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{grad_check, tape_objective, AutodiffError, Mode, Tensor, TensorRole};
use crate::dataio::{make_synthetic_pair, SyntheticConfig};
use crate::network::{forward_batch, ModelConfig, ModelParams};
use crate::pointcloud::PointCloud;

pub const PRIMITIVE_TOLERANCE: f64 = 1e-6;
pub const BATCH_NORM_TOLERANCE: f64 = 1e-5;
pub const MODEL_TOLERANCE: f64 = 1e-4;
/// Central-difference step for the end-to-end check. Smaller steps drown
/// gradients near 1e-8 in round-off; larger ones start crossing ReLU kinks.
pub const MODEL_STEP: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub coordinates: usize,
}

impl CheckOutcome {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.gen_range(lo..hi)).collect(),
    )
    .unwrap()
}

/// Values with magnitude in `[0.1, 1)` and random sign, away from ReLU and
/// sign kinks.
fn off_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    let v = (0..n)
        .map(|_| {
            let m = rng.gen_range(0.1..1.0);
            if rng.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), v).unwrap()
}

fn coefs(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn check(
    name: &'static str,
    tolerance: f64,
    inputs: &[Tensor<f64>],
    h: f64,
    f: impl Fn(&[Tensor<f64>]) -> Result<(f64, Vec<Tensor<f64>>), AutodiffError>,
) -> Result<CheckOutcome, AutodiffError> {
    let r = grad_check(f, inputs, h)?;
    Ok(CheckOutcome {
        name,
        max_rel_error: r.max_rel_error,
        tolerance,
        coordinates: r.coordinates,
    })
}

/// Gradient checks of the tape primitives.
pub fn primitive_checks(seed: u64) -> Result<Vec<CheckOutcome>, AutodiffError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = 1e-6;
    let mut out = Vec::new();

    let c = coefs(&mut rng, 15);
    let inputs = [
        random(&mut rng, &[5, 4], -1.0, 1.0),
        random(&mut rng, &[4, 3], -1.0, 1.0),
        random(&mut rng, &[3], -1.0, 1.0),
    ];
    let f = tape_objective(|t, v| {
        let y = t.linear(v[0], v[1], v[2])?;
        t.weighted_sum(y, &c)
    });
    out.push(check("linear", PRIMITIVE_TOLERANCE, &inputs, h, f)?);

    let c = coefs(&mut rng, 24);
    let inputs = [off_zero(&mut rng, &[6, 4])];
    let f = tape_objective(|t, v| {
        let y = t.relu(v[0])?;
        t.weighted_sum(y, &c)
    });
    out.push(check("relu", PRIMITIVE_TOLERANCE, &inputs, h, f)?);

    // Distinct values spaced far beyond h so no entry changes rank.
    let mut vals: Vec<f64> = (0..60).map(|k| k as f64 * 0.05).collect();
    vals.shuffle(&mut rng);
    let inputs = [Tensor::new(vec![3, 4, 5], vals).unwrap()];
    let c = coefs(&mut rng, 15);
    let f = tape_objective(|t, v| {
        let y = t.max_pool_set(v[0], &[4, 2, 3])?;
        t.weighted_sum(y, &c)
    });
    out.push(check("max_pool", PRIMITIVE_TOLERANCE, &inputs, h, f)?);

    for (name, mode) in [
        ("batch_norm_train", Mode::Train),
        ("batch_norm_infer", Mode::Infer),
    ] {
        let inputs = [
            random(&mut rng, &[8, 3], -2.0, 2.0),
            random(&mut rng, &[3], 0.5, 1.5),
            random(&mut rng, &[3], -0.5, 0.5),
        ];
        let rm = coefs(&mut rng, 3);
        let rv: Vec<f64> = (0..3).map(|_| rng.gen_range(0.5..2.0)).collect();
        let c = coefs(&mut rng, 24);
        let f = tape_objective(|t, v| {
            let (y, _) = t.batch_norm(v[0], v[1], v[2], (&rm, &rv), mode)?;
            t.weighted_sum(y, &c)
        });
        out.push(check(name, BATCH_NORM_TOLERANCE, &inputs, h, f)?);
    }

    let inputs = [
        random(&mut rng, &[4, 2], -1.0, 1.0),
        random(&mut rng, &[6, 3], -1.0, 1.0),
    ];
    let c = coefs(&mut rng, 30);
    let f = tape_objective(|t, v| {
        let g = t.gather_rows(v[0], &[3, 0, 0, 2, 1, 3])?;
        let y = t.concat_cols(&[g, v[1]])?;
        let y = t.reshape(y, &[3, 10])?;
        t.weighted_sum(y, &c)
    });
    out.push(check(
        "gather_concat_reshape",
        PRIMITIVE_TOLERANCE,
        &inputs,
        h,
        f,
    )?);

    let target: Vec<f64> = coefs(&mut rng, 12);
    let mut pred = target.clone();
    for p in &mut pred {
        *p += if rng.gen_bool(0.5) { 0.3 } else { -0.3 };
    }
    let inputs = [Tensor::new(vec![2, 6], pred).unwrap()];
    let f = tape_objective(|t, v| t.mae(v[0], &target));
    out.push(check("mae", PRIMITIVE_TOLERANCE, &inputs, h, f)?);

    let target = coefs(&mut rng, 18);
    let inputs = [random(&mut rng, &[3, 6], -1.0, 1.0)];
    let f = tape_objective(|t, v| t.cos_dist(v[0], &target, 0..3));
    out.push(check("cos_dist", PRIMITIVE_TOLERANCE, &inputs, h, f)?);

    Ok(out)
}

/// Perturbs every tensor of freshly initialized parameters so that batch-norm
/// statistics and affine terms are non-trivial.
pub fn randomized_params(config: &ModelConfig, seed: u64) -> ModelParams<f64> {
    let mut p = ModelParams::init(config, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    let names: Vec<String> = p.names().map(String::from).collect();
    for n in names {
        let role = p.role(&n).unwrap();
        for v in p.get_mut(&n).unwrap().data_mut() {
            match role {
                TensorRole::BnRunningVar => *v = rng.gen_range(0.5..2.0),
                TensorRole::Weight => {}
                _ => *v += rng.gen_range(-0.3..0.3),
            }
        }
    }
    p
}

/// End-to-end check of the reduced model on `pairs`, differentiating a random
/// linear functional of the output with respect to every trainable tensor.
pub fn model_check(
    name: &'static str,
    config: &ModelConfig,
    pairs: &[(PointCloud, PointCloud)],
    mode: Mode,
    seed: u64,
) -> Result<CheckOutcome, AutodiffError> {
    let base = randomized_params(config, seed);
    let names: Vec<String> = base
        .iter()
        .filter(|(_, r, _)| r.is_trainable())
        .map(|(n, _, _)| n.to_string())
        .collect();
    let inputs: Vec<Tensor<f64>> = names.iter().map(|n| base.get(n).unwrap().clone()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = coefs(&mut rng, 6 * pairs.len());
    let refs: Vec<_> = pairs.iter().map(|(p, q)| (p, q)).collect();
    let net = |e: crate::network::NetworkError| match e {
        crate::network::NetworkError::Autodiff(a) => a,
        other => AutodiffError::ShapeMismatch(other.to_string()),
    };
    let f = |x: &[Tensor<f64>]| {
        let mut params = base.clone();
        for (n, t) in names.iter().zip(x) {
            *params.get_mut(n).unwrap() = t.clone();
        }
        let mut fwd = forward_batch(&refs, &params, config, mode).map_err(net)?;
        let y = fwd.tape.weighted_sum(fwd.output, &c)?;
        let value = fwd.tape.value(y).data()[0];
        let mut grads = fwd.tape.backward(y)?;
        let mut named = fwd.named_grads(&mut grads);
        let g = names
            .iter()
            .zip(x)
            .map(|(n, t)| named.remove(n).unwrap_or_else(|| Tensor::zeros(t.shape())))
            .collect();
        Ok((value, g))
    };
    check(name, MODEL_TOLERANCE, &inputs, MODEL_STEP, f)
}

/// Synthetic pair with `n` points in each scan.
pub fn small_pair(seed: u64, n: usize) -> (PointCloud, PointCloud) {
    let cfg = SyntheticConfig {
        n_points: n.max(16),
        max_t: 1.0,
        max_r: 5.0,
        ..SyntheticConfig::default()
    };
    let pair = make_synthetic_pair(seed, &cfg).unwrap();
    let idx: Vec<usize> = (0..n).collect();
    (pair.p.select(&idx), pair.q.select(&idx))
}

/// Primitives plus the reduced model on one 8-point pair. A single pair runs
/// in inference mode, since training-mode batch norm needs two rows at the head.
pub fn gradient_suite(seed: u64) -> Result<Vec<CheckOutcome>, AutodiffError> {
    let mut out = primitive_checks(seed)?;
    let pair = small_pair(seed, 8);
    out.push(model_check(
        "model_8pt",
        &ModelConfig::reduced(),
        &[pair],
        Mode::Infer,
        seed,
    )?);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn primitives_pass() {
        for c in primitive_checks(1).unwrap() {
            assert!(c.passed(), "{c:?}");
            assert!(c.coordinates > 0);
        }
    }

    #[test]
    fn small_pair_has_requested_size() {
        let (p, q) = small_pair(3, 8);
        assert_eq!((p.len(), q.len()), (8, 8));
    }
}
