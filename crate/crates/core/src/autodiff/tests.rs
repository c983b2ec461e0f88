use approx::assert_abs_diff_eq;
use ndarray::{array, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::gradcheck::check_forward;
use super::*;

const H: f64 = 1e-5;

fn randn(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<f64> {
    Array2::from_shape_fn((r, c), |_| rng.sample(StandardNormal))
}

fn params(entries: &[(&str, Array2<f64>)]) -> ParamSet {
    let mut p = ParamSet::new();
    for (n, v) in entries {
        p.insert(*n, v.clone());
    }
    p
}

/// Contract an arbitrary-shaped output to a scalar with fixed random
/// weights so every output entry contributes a distinct gradient.
fn contract(g: &mut Graph, y: Tensor, seed: u64) -> Result<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (r, c) = g.shape(y);
    let w = g.constant(randn(&mut rng, r, c))?;
    let prod = g.mul(y, w)?;
    g.sum(prod)
}

#[test]
fn matmul_identity_and_hand_example() {
    let mut g = Graph::new();
    let a = g.constant(array![[1.0, 2.0], [3.0, 4.0]]).unwrap();
    let i = g.constant(Array2::eye(2)).unwrap();
    let swap = g.constant(array![[0.0, 1.0], [1.0, 0.0]]).unwrap();
    let ai = g.matmul(a, i).unwrap();
    assert_eq!(g.value(ai), g.value(a));
    let out = g.matmul(a, swap).unwrap();
    assert_eq!(g.value(out), &array![[2.0, 1.0], [4.0, 3.0]]);
}

#[test]
fn matmul_shape_mismatch() {
    let mut g = Graph::new();
    let a = g.constant(Array2::zeros((2, 3))).unwrap();
    let b = g.constant(Array2::zeros((2, 3))).unwrap();
    assert!(matches!(g.matmul(a, b), Err(Error::Shape(_))));
    let c = g.constant(Array2::zeros((3, 2))).unwrap();
    assert!(matches!(g.add(a, c), Err(Error::Shape(_))));
}

#[test]
fn matmul_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let p = params(&[("a", randn(&mut rng, 3, 4)), ("b", randn(&mut rng, 4, 2))]);
    let res = check_forward(&p, H, |g, p| {
        let a = g.param(p, "a")?;
        let b = g.param(p, "b")?;
        let y = g.matmul(a, b)?;
        contract(g, y, 9)
    })
    .unwrap();
    assert_eq!(res.checked, 20);
    assert!(res.max_rel_err < 1e-5, "{res:?}");
}

#[test]
fn activation_values() {
    let mut g = Graph::new();
    let x = g.constant(array![[-1.0, 2.0, 0.0]]).unwrap();
    let r = g.relu(x).unwrap();
    assert_eq!(g.value(r), &array![[0.0, 2.0, 0.0]]);
    let e = g.elu(x).unwrap();
    assert_eq!(g.value(e)[[0, 2]], 0.0);
    assert_abs_diff_eq!(g.value(e)[[0, 0]], (-1.0f64).exp() - 1.0, epsilon = 1e-15);
    // continuity of elu at 0
    let near = g.constant(array![[-1e-9, 1e-9]]).unwrap();
    let en = g.elu(near).unwrap();
    assert!(g.value(en).iter().all(|v| v.abs() < 2e-9));
    let s = g.sigmoid(x).unwrap();
    assert_eq!(g.value(s)[[0, 2]], 0.5);
}

#[test]
fn activation_gradients_at_random_points() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut x = randn(&mut rng, 10, 10) * 2.0;
    x.mapv_inplace(|v| if v.abs() < 1e-3 { v + 0.01 } else { v });
    for act in [Activation::Relu, Activation::Elu, Activation::Sigmoid] {
        let p = params(&[("x", x.clone())]);
        let res = check_forward(&p, H, |g, p| {
            let x = g.param(p, "x")?;
            let y = g.activation(act, x)?;
            contract(g, y, 3)
        })
        .unwrap();
        assert!(res.max_rel_err < 1e-5, "{act:?}: {res:?}");
    }
}

#[test]
fn relu_subgradient_at_zero_is_zero() {
    let mut g = Graph::new();
    let x = g.variable(array![[0.0]]).unwrap();
    let y = g.relu(x).unwrap();
    let s = g.sum(y).unwrap();
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap()[[0, 0]], 0.0);
}

#[test]
fn binary_ops_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for op in [Binary::Add, Binary::Sub, Binary::Mul] {
        let p = params(&[("a", randn(&mut rng, 3, 3)), ("b", randn(&mut rng, 3, 3))]);
        let res = check_forward(&p, H, |g, p| {
            let a = g.param(p, "a")?;
            let b = g.param(p, "b")?;
            let y = g.binary(op, a, b)?;
            contract(g, y, 5)
        })
        .unwrap();
        assert!(res.max_rel_err < 1e-5, "{op:?}: {res:?}");
    }
}

#[test]
fn row_normalize_values() {
    let mut g = Graph::new();
    let x = g.constant(array![[3.0, 4.0], [0.0, 0.0], [1e-3, -2.0]]).unwrap();
    let y = g.row_l2_normalize(x).unwrap();
    let v = g.value(y);
    assert_abs_diff_eq!(v[[0, 0]], 0.6, epsilon = 1e-15);
    assert_abs_diff_eq!(v[[0, 1]], 0.8, epsilon = 1e-15);
    assert_eq!(v.row(1).to_vec(), vec![0.0, 0.0]);
    for row in v.rows() {
        let n = row.dot(&row).sqrt();
        assert!(n == 0.0 || (n - 1.0).abs() < 1e-9);
    }
}

#[test]
fn row_normalize_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let p = params(&[("x", randn(&mut rng, 4, 3))]);
    let res = check_forward(&p, H, |g, p| {
        let x = g.param(p, "x")?;
        let y = g.row_l2_normalize(x)?;
        contract(g, y, 6)
    })
    .unwrap();
    assert!(res.max_rel_err < 1e-5, "{res:?}");
}

#[test]
fn reductions() {
    let mut g = Graph::new();
    let z = g.constant(array![[0.0, 0.0], [1000.0, 1000.0]]).unwrap();
    let l = g.reduce(Reduction::LogSumExpRows, z).unwrap();
    assert_abs_diff_eq!(g.value(l)[[0, 0]], std::f64::consts::LN_2, epsilon = 1e-12);
    assert_abs_diff_eq!(g.value(l)[[1, 0]], 1000.0 + std::f64::consts::LN_2, epsilon = 1e-9);

    let mut g = Graph::new();
    let x = g.variable(Array2::from_elem((2, 5), 3.0)).unwrap();
    let m = g.mean(x).unwrap();
    g.backward(m).unwrap();
    assert!(g.grad(x).unwrap().iter().all(|&v| v == 0.1));
}

#[test]
fn logsumexp_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let p = params(&[("x", randn(&mut rng, 4, 3))]);
    let res = check_forward(&p, H, |g, p| {
        let x = g.param(p, "x")?;
        let y = g.reduce(Reduction::LogSumExpRows, x)?;
        contract(g, y, 7)
    })
    .unwrap();
    assert!(res.max_rel_err < 1e-5, "{res:?}");
}

#[test]
fn backward_sum_and_fan_out() {
    let mut g = Graph::new();
    let w = g.variable(Array2::from_elem((3, 2), 0.7)).unwrap();
    let s = g.sum(w).unwrap();
    g.backward(s).unwrap();
    assert!(g.grad(w).unwrap().iter().all(|&v| v == 1.0));

    let mut g = Graph::new();
    let w = g.variable(Array2::from_elem((3, 2), 0.7)).unwrap();
    let s1 = g.sum(w).unwrap();
    let s2 = g.sum(w).unwrap();
    let total = g.add(s1, s2).unwrap();
    g.backward(total).unwrap();
    assert!(g.grad(w).unwrap().iter().all(|&v| v == 2.0));
}

#[test]
fn backward_errors() {
    let mut g = Graph::new();
    let w = g.variable(Array2::ones((2, 2))).unwrap();
    assert!(matches!(g.backward(w), Err(Error::Graph(_))));
    let s = g.sum(w).unwrap();
    g.backward(s).unwrap();
    assert!(matches!(g.backward(s), Err(Error::Graph(_))));
}

#[test]
fn non_finite_forward_is_an_error() {
    let mut g = Graph::new();
    let x = g.constant(array![[1e300]]).unwrap();
    assert!(matches!(g.mul(x, x), Err(Error::NonFinite(_))));
}

#[test]
fn pairwise_distance_and_soft_threshold_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let p = params(&[("z", randn(&mut rng, 5, 3)), ("t", array![[0.8]])]);
    let res = check_forward(&p, H, |g, p| {
        let z = g.param(p, "z")?;
        let t = g.param(p, "t")?;
        let d = g.pairwise_distance(z)?;
        let s = g.scalar_minus(t, d)?;
        let a = g.sigmoid(s)?;
        let a = g.set_diagonal(a, 1.0)?;
        contract(g, a, 10)
    })
    .unwrap();
    assert!(res.max_rel_err < 1e-5, "{res:?}");
}

#[test]
fn sym_normalize_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let a = randn(&mut rng, 5, 5).mapv(|v: f64| v.abs() + 0.1);
    let p = params(&[("a", a)]);
    let res = check_forward(&p, H, |g, p| {
        let a = g.param(p, "a")?;
        let n = g.sym_normalize(a)?;
        contract(g, n, 11)
    })
    .unwrap();
    assert!(res.max_rel_err < 1e-5, "{res:?}");
}

#[test]
fn adam_minimizes_quadratic_bowl() {
    let mut p = params(&[("theta", array![[1.0]])]);
    let mut adam = AdamState::new(0.1, 0.0);
    for _ in 0..200 {
        let th = p.get("theta").unwrap()[[0, 0]];
        p.set_grad("theta", array![[2.0 * th]]).unwrap();
        adam.step(&mut p).unwrap();
    }
    assert!(p.get("theta").unwrap()[[0, 0]].abs() < 1e-3);
}

#[test]
fn adam_first_step_is_plus_minus_lr() {
    let mut p = params(&[("w", array![[1.0, -2.0, 0.5]])]);
    p.set_grad("w", array![[3.0, -0.01, 250.0]]).unwrap();
    let mut adam = AdamState::new(0.05, 0.0);
    adam.step(&mut p).unwrap();
    let w = p.get("w").unwrap();
    assert_abs_diff_eq!(w[[0, 0]], 1.0 - 0.05, epsilon = 1e-7);
    assert_abs_diff_eq!(w[[0, 1]], -2.0 + 0.05, epsilon = 1e-7);
    assert_abs_diff_eq!(w[[0, 2]], 0.5 - 0.05, epsilon = 1e-7);
    assert!(p.grad("w").is_none());
}

#[test]
fn adam_weight_decay_with_zero_gradient() {
    let mut p = params(&[("w", array![[2.0]])]);
    let mut adam = AdamState::new(0.1, 0.5);
    for k in 1..=10 {
        p.set_grad("w", array![[0.0]]).unwrap();
        adam.step(&mut p).unwrap();
        assert_abs_diff_eq!(p.get("w").unwrap()[[0, 0]], 2.0 * 0.95f64.powi(k), epsilon = 1e-12);
    }
}

#[test]
fn adam_requires_gradients() {
    let mut p = params(&[("w", array![[2.0]])]);
    let mut adam = AdamState::new(0.1, 0.0);
    assert!(matches!(adam.step(&mut p), Err(Error::Graph(_))));
}

#[test]
fn param_set_json_round_trip() {
    let p = params(&[("b", array![[1.5, -2.0]]), ("a", array![[1.0], [0.25]])]);
    let json = p.to_json().unwrap();
    let q = ParamSet::from_json(&json).unwrap();
    assert_eq!(p, q);
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(v["a"], serde_json::json!([[1.0], [0.25]]));
}

#[test]
fn ops_are_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut g = Graph::new();
        let x = g.variable(randn(&mut rng, 6, 4)).unwrap();
        let w = g.variable(randn(&mut rng, 4, 3)).unwrap();
        let y = g.matmul(x, w).unwrap();
        let y = g.elu(y).unwrap();
        let y = g.row_l2_normalize(y).unwrap();
        let l = g.reduce(Reduction::LogSumExpRows, y).unwrap();
        let s = g.sum(l).unwrap();
        g.backward(s).unwrap();
        (g.value(s).clone(), g.grad(x).unwrap().clone(), g.grad(w).unwrap().clone())
    };
    let a = run();
    let b = run();
    assert_eq!(a.0.as_slice().unwrap(), b.0.as_slice().unwrap());
    assert_eq!(a.1, b.1);
    assert_eq!(a.2, b.2);
}
