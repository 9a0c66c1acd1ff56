use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::from_rows(rows, cols, data).unwrap()
}

fn positive(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.gen_range(0.2..2.0)).collect();
    Tensor::from_rows(rows, cols, data).unwrap()
}

const EPS: f64 = 1e-6;
const TOL: f64 = 1e-4;

#[test]
fn softmax_equal_row_is_uniform() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::full(1, 4, 3.7));
    let y = g.softmax_rows(x).unwrap();
    for &v in g.value(y).data() {
        assert!((v - 0.25).abs() < 1e-15);
    }
}

#[test]
fn softmax_closed_form() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::from_rows(1, 2, vec![1f64.ln(), 3f64.ln()]).unwrap());
    let y = g.softmax_rows(x).unwrap();
    let d = g.value(y).data();
    assert!((d[0] - 0.25).abs() < 1e-12 && (d[1] - 0.75).abs() < 1e-12);
}

#[test]
fn softmax_rejects_nan() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::from_rows(1, 2, vec![f64::NAN, 0.0]).unwrap());
    assert!(matches!(g.softmax_rows(x), Err(crate::Error::NonFinite(_))));
}

#[test]
fn masked_softmax_zeroes_dropped_columns() {
    let mut g = Graph::new();
    let x = g.param(Tensor::from_rows(2, 3, vec![1.0, 2.0, 3.0, 0.0, 0.0, 0.0]).unwrap());
    let y = g
        .softmax_rows_masked(x, Some(&[true, false, true]))
        .unwrap();
    let v = g.value(y);
    assert_eq!(v.get(0, 1), 0.0);
    assert!((v.get(1, 0) - 0.5).abs() < 1e-15);
    let s = g.sum(y);
    let grads = g.backward(s).unwrap();
    assert_eq!(grads.wrt(x).unwrap().get(0, 1), 0.0);
}

#[test]
fn mean_masked_by_hand() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::from_rows(1, 3, vec![3.0, 5.0, 7.0]).unwrap());
    let m = g.mean_masked(x, &[1.0, 1.0, 0.0]).unwrap();
    assert_eq!(g.value(m).item(), 4.0);
    assert!(matches!(
        g.mean_masked(x, &[0.0; 3]),
        Err(crate::Error::EmptyMask(_))
    ));
}

#[test]
fn concat_fixes_combined_width() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::zeros(2, 1024));
    let b = g.constant(Tensor::zeros(2, 527));
    let c = g.concat_cols(a, b).unwrap();
    assert_eq!(g.value(c).shape(), &[2, 1551]);
}

#[test]
fn slice_rows_partitions() {
    let k = 3;
    let mut g = Graph::new();
    let e = g.constant(Tensor::from_rows(2 * k, 2, (0..12).map(f64::from).collect()).unwrap());
    let top = g.slice_rows(e, 0, k).unwrap();
    let bottom = g.slice_rows(e, k, 2 * k).unwrap();
    let back = g.concat_rows(top, bottom).unwrap();
    assert_eq!(g.value(back), g.value(e));
}

#[test]
fn sum_gives_all_ones() {
    let mut g = Graph::new();
    let x = g.param(Tensor::full(2, 3, 0.3));
    let s = g.sum(x);
    let grads = g.backward(s).unwrap();
    assert!(grads.wrt(x).unwrap().data().iter().all(|&v| v == 1.0));
}

#[test]
fn diamond_accumulates() {
    let mut g = Graph::new();
    let x = g.param(Tensor::scalar(1.5));
    let y = g.add(x, x).unwrap();
    let grads = g.backward(y).unwrap();
    assert_eq!(grads.wrt(x).unwrap().item(), 2.0);
}

#[test]
fn unused_param_gets_exact_zero() {
    let mut g = Graph::new();
    let x = g.param(Tensor::full(2, 2, 1.0));
    let unused = g.param(Tensor::full(3, 1, 9.0));
    let s = g.sum(x);
    let grads = g.backward(s).unwrap();
    let z = grads.wrt(unused).unwrap();
    assert_eq!(z.shape(), &[3, 1]);
    assert!(z.data().iter().all(|&v| v == 0.0));
}

#[test]
fn constants_have_no_gradient() {
    let mut g = Graph::new();
    let c = g.constant(Tensor::full(1, 2, 1.0));
    let s = g.sum(c);
    assert!(g.backward(s).unwrap().wrt(c).is_none());
}

#[test]
fn non_scalar_loss_rejected() {
    let mut g = Graph::new();
    let x = g.param(Tensor::zeros(2, 2));
    assert!(matches!(g.backward(x), Err(crate::Error::NonScalarLoss(_))));
}

#[test]
fn relu_subgradient_at_zero_is_zero() {
    let mut g = Graph::new();
    let x = g.param(Tensor::from_rows(1, 3, vec![-1.0, 0.0, 2.0]).unwrap());
    let r = g.relu(x);
    let s = g.sum(r);
    let grads = g.backward(s).unwrap();
    assert_eq!(grads.wrt(x).unwrap().data(), &[0.0, 0.0, 1.0]);
}

#[test]
fn matmul_grad_check_3x4_4x2() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let inputs = [random(&mut rng, 3, 4), random(&mut rng, 4, 2)];
    let err = grad_check(
        |g, v| {
            let c = g.matmul(v[0], v[1])?;
            let sq = g.mul(c, c)?;
            Ok(g.sum(sq))
        },
        &inputs,
        EPS,
    )
    .unwrap();
    assert!(err < TOL, "max relative error {err}");
}

#[test]
fn grad_check_rejects_bad_step() {
    assert!(grad_check(|g, v| Ok(g.sum(v[0])), &[Tensor::zeros(1, 1)], 1e-2).is_err());
}

/// Weighted sum with fixed pseudo-random weights, so that every output entry
/// contributes a distinct amount to the scalar being checked.
fn weighted_sum(g: &mut Graph, x: Var, seed: u64) -> crate::Result<Var> {
    let shape = g.value(x).shape().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = random(&mut rng, shape[0], shape[1]);
    let w = g.constant(w);
    let p = g.mul(x, w)?;
    Ok(g.sum(p))
}

fn dims() -> impl Strategy<Value = (usize, usize, usize, u64)> {
    (1usize..=6, 1usize..=6, 1usize..=6, any::<u64>())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn grad_check_unary_ops((m, n, _p, seed) in dims()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = [random(&mut rng, m, n)];
        let xp = [positive(&mut rng, m, n)];
        type Build = fn(&mut Graph, Var) -> crate::Result<Var>;
        let cases: [(&str, Build, bool); 9] = [
            ("transpose", |g, x| g.transpose(x), false),
            ("scale", |g, x| Ok(g.scale(x, -1.7)), false),
            ("add_scalar", |g, x| Ok(g.add_scalar(x, 0.3)), false),
            ("relu", |g, x| Ok(g.relu(x)), false),
            ("exp", |g, x| Ok(g.exp(x)), false),
            ("softmax", |g, x| g.softmax_rows(x), false),
            ("log_softmax", |g, x| g.log_softmax_rows(x), false),
            ("log", |g, x| g.log(x), true),
            ("pow", |g, x| g.pow(x, 2.5), true),
        ];
        for (name, op, needs_positive) in cases {
            let inputs = if needs_positive { &xp } else { &x };
            let err = grad_check(|g, v| { let y = op(g, v[0])?; weighted_sum(g, y, seed ^ 1) }, inputs, EPS).unwrap();
            prop_assert!(err < TOL, "{name}: {err}");
        }
    }

    #[test]
    fn grad_check_binary_ops((m, n, p, seed) in dims()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random(&mut rng, m, n);
        let b = random(&mut rng, m, n);
        let c = random(&mut rng, n, p);
        let bias = random(&mut rng, 1, n);
        let other = random(&mut rng, m, p);
        let check = |inputs: &[Tensor], f: &dyn Fn(&mut Graph, &[Var]) -> crate::Result<Var>| {
            grad_check(|g, v| { let y = f(g, v)?; weighted_sum(g, y, seed ^ 2) }, inputs, EPS).unwrap()
        };
        prop_assert!(check(&[a.clone(), c.clone()], &|g, v| g.matmul(v[0], v[1])) < TOL);
        prop_assert!(check(&[a.clone(), b.clone()], &|g, v| g.add(v[0], v[1])) < TOL);
        prop_assert!(check(&[a.clone(), b.clone()], &|g, v| g.mul(v[0], v[1])) < TOL);
        prop_assert!(check(&[a.clone(), bias], &|g, v| g.add_row(v[0], v[1])) < TOL);
        prop_assert!(check(&[a.clone(), other], &|g, v| g.concat_cols(v[0], v[1])) < TOL);
        prop_assert!(check(&[a.clone(), b.clone()], &|g, v| g.concat_rows(v[0], v[1])) < TOL);
        let cut = m.div_ceil(2);
        prop_assert!(check(std::slice::from_ref(&a), &|g, v| g.slice_rows(v[0], cut - 1, m)) < TOL);
        let index: Vec<usize> = (0..m).map(|r| (r * 7 + seed as usize) % n).collect();
        prop_assert!(check(std::slice::from_ref(&a), &|g, v| g.gather_cols(v[0], &index)) < TOL);
        let keep: Vec<bool> = (0..n).map(|j| j == 0 || (seed >> j) & 1 == 1).collect();
        prop_assert!(check(std::slice::from_ref(&a), &|g, v| g.softmax_rows_masked(v[0], Some(&keep))) < TOL);
        let mask: Vec<f64> = (0..m * n).map(|i| if i == 0 || (seed >> (i % 60)) & 1 == 1 { 1.0 } else { 0.0 }).collect();
        let err = grad_check(|g, v| { let e = g.exp(v[0]); g.mean_masked(e, &mask) }, &[a], EPS).unwrap();
        prop_assert!(err < TOL);
    }

    #[test]
    fn softmax_rows_are_distributions((m, n, _p, seed) in dims(), scale in 0.1f64..50.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut g = Graph::new();
        let x = random(&mut rng, m, n);
        let x = g.constant(Tensor::from_rows(m, n, x.data().iter().map(|v| v * scale).collect()).unwrap());
        let y = g.softmax_rows(x).unwrap();
        let shifted = g.add_scalar(x, 123.0);
        let ys = g.softmax_rows(shifted).unwrap();
        let (yv, ysv) = (g.value(y), g.value(ys));
        for r in 0..m {
            let s: f64 = yv.row(r).iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-9);
            prop_assert!(yv.row(r).iter().all(|&p| (0.0..=1.0).contains(&p)));
            for j in 0..n {
                prop_assert!((yv.get(r, j) - ysv.get(r, j)).abs() < 1e-12);
            }
        }
    }
}
