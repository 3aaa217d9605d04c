use super::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

fn coefs(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

#[test]
fn linear_examples() {
    let mut tape = Tape::<f64>::new();
    let x = tape
        .constant(Tensor::from_f64(&[1, 2], &[1.0, 2.0]).unwrap())
        .unwrap();
    let w = tape
        .constant(Tensor::from_f64(&[2, 2], &[1.0, 0.0, 0.0, 1.0]).unwrap())
        .unwrap();
    let b0 = tape.constant(Tensor::zeros(&[2])).unwrap();
    let b = tape
        .constant(Tensor::from_f64(&[2], &[3.0, 3.0]).unwrap())
        .unwrap();
    let y0 = tape.linear(x, w, b0).unwrap();
    assert_eq!(tape.value(y0).data(), &[1.0, 2.0]);
    let y = tape.linear(x, w, b).unwrap();
    assert_eq!(tape.value(y).data(), &[4.0, 5.0]);
    let bad = tape.constant(Tensor::zeros(&[3, 2])).unwrap();
    assert!(matches!(
        tape.linear(x, bad, b),
        Err(AutodiffError::ShapeMismatch(_))
    ));
}

#[test]
fn linear_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for (n, a, o) in [(1, 1, 1), (3, 4, 2), (5, 3, 6)] {
        let c = coefs(&mut rng, n * o);
        let f = tape_objective(move |t, v| {
            let y = t.linear(v[0], v[1], v[2])?;
            t.weighted_sum(y, &c)
        });
        let inputs = [
            rand_tensor(&mut rng, &[n, a]),
            rand_tensor(&mut rng, &[a, o]),
            rand_tensor(&mut rng, &[o]),
        ];
        let r = grad_check(&f, &inputs, 1e-5).unwrap();
        assert!(r.max_rel_error < 1e-6, "{r:?}");
    }
}

#[test]
fn relu_examples_and_gradient() {
    let mut tape = Tape::<f64>::new();
    let neg = tape
        .constant(Tensor::from_f64(&[3], &[-1.0, -0.5, -3.0]).unwrap())
        .unwrap();
    let y = tape.relu(neg).unwrap();
    assert_eq!(tape.value(y).data(), &[0.0; 3]);
    let pos = tape
        .constant(Tensor::from_f64(&[3], &[1.0, 0.5, 3.0]).unwrap())
        .unwrap();
    let y = tape.relu(pos).unwrap();
    assert_eq!(tape.value(y).data(), &[1.0, 0.5, 3.0]);

    let x = Tensor::from_f64(&[2, 3], &[-0.7, 0.3, 1.2, 0.9, -0.2, -1.5]).unwrap();
    let c = vec![0.3, -1.1, 0.8, 0.5, 2.0, -0.4];
    let f = tape_objective(|t, v| {
        let y = t.relu(v[0])?;
        t.weighted_sum(y, &c)
    });
    let (_, g) = f(&[x.clone()]).unwrap();
    for ((&xi, &gi), &ci) in x.data().iter().zip(g[0].data()).zip(&c) {
        assert_eq!(gi, if xi > 0.0 { ci } else { 0.0 });
    }
    assert!(grad_check(&f, &[x], 1e-6).unwrap().max_rel_error < 1e-6);

    // Subgradient at exactly zero is zero.
    let (_, g) = f(&[Tensor::from_f64(&[1, 6], &[0.0; 6]).unwrap()]).unwrap();
    assert!(g[0].data().iter().all(|&v| v == 0.0));
}

fn bn(t: &mut Tape<f64>, x: Var, g: Var, b: Var, mode: Mode) -> Result<Var, AutodiffError> {
    let c = t.value(x).cols();
    let rm = vec![0.1; c];
    let rv = vec![1.7; c];
    Ok(t.batch_norm(x, g, b, (&rm, &rv), mode)?.0)
}

#[test]
fn batch_norm_examples() {
    let mut tape = Tape::<f64>::new();
    let x = tape
        .constant(Tensor::from_f64(&[4, 2], &[3.0, 1.0, 3.0, -1.0, 3.0, 1.0, 3.0, -1.0]).unwrap())
        .unwrap();
    let g = tape.constant(Tensor::filled(&[2], 1.0)).unwrap();
    let b = tape.constant(Tensor::zeros(&[2])).unwrap();
    let (y, stats) = tape
        .batch_norm(x, g, b, (&[0.0; 2], &[1.0; 2]), Mode::Train)
        .unwrap();
    let stats = stats.unwrap();
    assert_eq!(stats.mean, vec![3.0, 0.0]);
    assert_eq!(stats.var, vec![0.0, 1.0]);
    let yv = tape.value(y).data();
    for r in 0..4 {
        // Constant channel normalizes to exactly zero.
        assert_eq!(yv[r * 2], 0.0);
        // Standardized channel passes through up to the ε = 1e-5 shrink.
        let xin = if r % 2 == 0 { 1.0 } else { -1.0 };
        assert!((yv[r * 2 + 1] - xin).abs() < 1e-5);
    }
    let single = tape.constant(Tensor::zeros(&[1, 2])).unwrap();
    assert_eq!(
        tape.batch_norm(single, g, b, (&[0.0; 2], &[1.0; 2]), Mode::Train)
            .unwrap_err(),
        AutodiffError::DegenerateBatch(1)
    );
    assert!(tape
        .batch_norm(single, g, b, (&[0.0; 2], &[1.0; 2]), Mode::Infer)
        .is_ok());
}

#[test]
fn batch_norm_running_update() {
    let stats = BatchStats {
        mean: vec![1.0],
        var: vec![4.0],
    };
    let (mut m, mut v) = (vec![0.0], vec![1.0]);
    stats.update_running(&mut m, &mut v);
    assert!((m[0] - 0.1).abs() < 1e-15);
    assert!((v[0] - 1.3).abs() < 1e-15);
}

#[test]
fn batch_norm_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for mode in [Mode::Train, Mode::Infer] {
        let c = coefs(&mut rng, 6 * 3);
        let f = tape_objective(move |t, v| {
            let y = bn(t, v[0], v[1], v[2], mode)?;
            t.weighted_sum(y, &c)
        });
        let inputs = [
            rand_tensor(&mut rng, &[6, 3]),
            rand_tensor(&mut rng, &[3]),
            rand_tensor(&mut rng, &[3]),
        ];
        let r = grad_check(&f, &inputs, 1e-5).unwrap();
        assert!(r.max_rel_error < 1e-5, "{mode:?}: {r:?}");
    }
}

#[test]
fn max_pool_examples_and_gradient() {
    let mut tape = Tape::<f64>::new();
    let x = tape
        .constant(
            Tensor::from_f64(
                &[2, 3, 2],
                &[1.0, 5.0, 9.0, 0.0, 2.0, 7.0, 4.0, 4.0, 3.0, 8.0, 0.0, 0.0],
            )
            .unwrap(),
        )
        .unwrap();
    let y = tape.max_pool_set(x, &[1, 2]).unwrap();
    assert_eq!(tape.value(y).data(), &[1.0, 5.0, 4.0, 8.0]);
    let y = tape.max_pool_set(x, &[3, 3]).unwrap();
    assert_eq!(tape.value(y).data(), &[9.0, 7.0, 4.0, 8.0]);
    assert!(tape.max_pool_set(x, &[0, 3]).is_err());

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let c = coefs(&mut rng, 3 * 4);
    let valid = [5, 2, 3];
    let f = tape_objective(|t, v| {
        let y = t.max_pool_set(v[0], &valid)?;
        t.weighted_sum(y, &c)
    });
    let x = rand_tensor(&mut rng, &[3, 5, 4]);
    let (_, g) = f(&[x.clone()]).unwrap();
    // Gradient lands only on the argmax of each (row, channel).
    let nonzero = g[0].data().iter().filter(|v| **v != 0.0).count();
    assert_eq!(nonzero, 12);
    for r in 0..3 {
        for e in valid[r]..5 {
            for j in 0..4 {
                assert_eq!(g[0].data()[(r * 5 + e) * 4 + j], 0.0);
            }
        }
    }
    assert!(grad_check(&f, &[x], 1e-6).unwrap().max_rel_error < 1e-6);
}

#[test]
fn max_pool_permutation_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = rand_tensor(&mut rng, &[1, 6, 3]);
    let mut tape = Tape::<f64>::new();
    let a = tape.constant(x.clone()).unwrap();
    let ya = tape.max_pool_set(a, &[6]).unwrap();
    let mut rows: Vec<&[f64]> = x.data().chunks(3).collect();
    rows.reverse();
    rows.swap(1, 4);
    let permuted: Vec<f64> = rows.concat();
    let b = tape
        .constant(Tensor::new(vec![1, 6, 3], permuted).unwrap())
        .unwrap();
    let yb = tape.max_pool_set(b, &[6]).unwrap();
    assert_eq!(tape.value(ya), tape.value(yb));
}

#[test]
fn gather_concat_reshape_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let c = coefs(&mut rng, 5 * 5);
    let idx = [0, 2, 2, 1, 0];
    let f = tape_objective(|t, v| {
        let g = t.gather_rows(v[0], &idx)?;
        let cat = t.concat_cols(&[g, v[1]])?;
        let r = t.reshape(cat, &[25])?;
        let s = t.scale(r, 0.5)?;
        let s2 = t.add(s, r)?;
        t.weighted_sum(s2, &c)
    });
    let inputs = [
        rand_tensor(&mut rng, &[3, 3]),
        rand_tensor(&mut rng, &[5, 2]),
    ];
    assert!(grad_check(&f, &inputs, 1e-5).unwrap().max_rel_error < 1e-6);
}

#[test]
fn mae_examples_and_gradient() {
    let mut tape = Tape::<f64>::new();
    let y = [0.1, -0.2, 0.3, 1.0, 2.0, -3.0];
    let p = tape
        .constant(Tensor::from_f64(&[1, 6], &y).unwrap())
        .unwrap();
    let l = tape.mae(p, &y).unwrap();
    assert_eq!(tape.value(l).data()[0], 0.0);
    let mut off = y;
    off[4] += 6.0;
    let l = tape.mae(p, &off).unwrap();
    assert!((tape.value(l).data()[0] - 1.0).abs() < 1e-15);

    let target = vec![0.5, -0.5, 0.25, 1.0, -2.0, 0.0];
    let f = tape_objective(|t, v| t.mae(v[0], &target));
    let pred = Tensor::from_f64(&[1, 6], &[0.1, 0.4, 0.9, -1.0, -1.5, 0.3]).unwrap();
    let (_, g) = f(&[pred.clone()]).unwrap();
    for ((&gi, &pi), &ti) in g[0].data().iter().zip(pred.data()).zip(&target) {
        let expect = -f64::signum(ti - pi) / 6.0;
        assert_eq!(gi, expect);
    }
    assert!(grad_check(&f, &[pred], 1e-6).unwrap().max_rel_error < 1e-6);
}

#[test]
fn cos_dist_examples() {
    let y = [1.0, 2.0, -1.0, 0.5, 0.0, 3.0];
    let eval = |pred: [f64; 6], cols: std::ops::Range<usize>| {
        let mut tape = Tape::<f64>::new();
        let p = tape
            .constant(Tensor::from_f64(&[1, 6], &pred).unwrap())
            .unwrap();
        let l = tape.cos_dist(p, &y, cols).unwrap();
        tape.value(l).data()[0]
    };
    assert!(eval(y.map(|v| 2.0 * v), 0..6).abs() < 1e-15);
    assert!((eval(y.map(|v| -v), 0..6) - 2.0).abs() < 1e-15);
    // (2, -1, 0) is orthogonal to (1, 2, -1) in the translation block.
    assert!((eval([2.0, -1.0, 0.0, 9.0, 9.0, 9.0], 0..3) - 1.0).abs() < 1e-15);
    assert_eq!(eval([0.0; 6], 0..6), 0.0);

    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let target: Vec<f64> = coefs(&mut rng, 12);
    for cols in [0..6, 0..3] {
        let t2 = target.clone();
        let f = tape_objective(move |t, v| t.cos_dist(v[0], &t2, cols.clone()));
        let r = grad_check(&f, &[rand_tensor(&mut rng, &[2, 6])], 1e-6).unwrap();
        assert!(r.max_rel_error < 1e-6, "{r:?}");
    }
}

#[test]
fn corrupted_backward_is_detected() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let c = coefs(&mut rng, 6);
    let f = tape_objective(|t, v| {
        let y = t.linear(v[0], v[1], v[2])?;
        let y = t.corrupt(y)?;
        t.weighted_sum(y, &c)
    });
    let inputs = [
        rand_tensor(&mut rng, &[2, 3]),
        rand_tensor(&mut rng, &[3, 3]),
        rand_tensor(&mut rng, &[3]),
    ];
    assert!(grad_check(&f, &inputs, 1e-5).unwrap().max_rel_error > 1e-2);
}

#[test]
fn non_finite_values_raise() {
    let mut tape = Tape::<f32>::new();
    let x = tape.constant(Tensor::filled(&[1, 2], 1e30)).unwrap();
    let w = tape.constant(Tensor::filled(&[2, 1], 1e30)).unwrap();
    let b = tape.constant(Tensor::zeros(&[1])).unwrap();
    assert_eq!(
        tape.linear(x, w, b).unwrap_err(),
        AutodiffError::NonFinite("linear")
    );
    assert!(tape.leaf(Tensor::filled(&[1], f32::NAN)).is_err());
}

#[test]
fn forward_is_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut tape = Tape::<f32>::new();
        let x = tape.leaf(rand_tensor(&mut rng, &[16, 4]).cast()).unwrap();
        let w = tape.leaf(rand_tensor(&mut rng, &[4, 8]).cast()).unwrap();
        let b = tape.leaf(rand_tensor(&mut rng, &[8]).cast()).unwrap();
        let y = tape.linear(x, w, b).unwrap();
        let g = tape.leaf(Tensor::filled(&[8], 1.0)).unwrap();
        let be = tape.leaf(Tensor::zeros(&[8])).unwrap();
        let (y, _) = tape
            .batch_norm(y, g, be, (&[0.0; 8], &[1.0; 8]), Mode::Train)
            .unwrap();
        let y = tape.relu(y).unwrap();
        tape.value(y)
            .data()
            .iter()
            .map(|v| v.to_bits())
            .collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}
