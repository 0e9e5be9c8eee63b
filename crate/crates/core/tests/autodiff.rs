//! Finite-difference checks for every differentiable op of the tensor engine.

use crossview::gradcheck::{check_op_f32, check_op_f64, grad_check, op_cases};
use crossview::tensor::{Graph, Scalar, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_tensor<F: Scalar>(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<F> {
    let n: usize = shape.iter().product();
    let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::from_f64(shape, &v).unwrap()
}

#[test]
fn every_op_passes_finite_differences_f64() {
    for case in op_cases() {
        for seed in 0..10 {
            let err = check_op_f64(&case, seed);
            assert!(err < 1e-6, "{} seed {seed}: rel err {err:e}", case.name);
        }
    }
}

#[test]
fn every_op_passes_finite_differences_f32() {
    for case in op_cases() {
        for seed in 100..110 {
            let err = check_op_f32(&case, seed);
            assert!(err < 1e-4, "{} seed {seed}: rel err {err:e}", case.name);
        }
    }
}

/// A deliberately wrong backward must be caught: scaling the loss after the
/// fact changes the analytic side only.
#[test]
fn checker_detects_a_wrong_gradient() {
    fn doubled(g: &mut Graph<f64>, v: &[Var]) -> Var {
        let y = g.sum_of_squares(v[0]).unwrap();
        g.scale(y, 2.0).unwrap()
    }
    fn plain(g: &mut Graph<f64>, v: &[Var]) -> Var {
        g.sum_of_squares(v[0]).unwrap()
    }
    let x = Tensor::from_f64(&[3], &[0.5, -1.0, 2.0]).unwrap();
    assert!(grad_check::<f64>(std::slice::from_ref(&x), plain, plain) < 1e-8);
    assert!(grad_check::<f64>(&[x], doubled, plain) > 0.3);
}

#[test]
fn square_gradient() {
    let mut g = Graph::<f64>::new();
    let x = g.leaf(Tensor::from_f64(&[1], &[3.0]).unwrap(), true);
    let l = g.sum_of_squares(x).unwrap();
    assert_eq!(g.backward(l).unwrap().get(x).data(), &[6.0]);
}

#[test]
fn fan_out_accumulates() {
    let mut g = Graph::<f64>::new();
    let x = g.leaf(Tensor::from_f64(&[1], &[0.7]).unwrap(), true);
    let y = g.add(x, x).unwrap();
    let l = g.mean(y).unwrap();
    assert_eq!(g.backward(l).unwrap().get(x).data(), &[2.0]);
}

#[test]
fn unreachable_leaf_gets_zero() {
    let mut g = Graph::<f64>::new();
    let x = g.leaf(Tensor::from_f64(&[2], &[1.0, 2.0]).unwrap(), true);
    let z = g.leaf(Tensor::from_f64(&[3], &[1.0, 2.0, 3.0]).unwrap(), true);
    let l = g.sum_of_squares(x).unwrap();
    let grads = g.backward(l).unwrap();
    assert_eq!(grads.get(z).data(), &[0.0, 0.0, 0.0]);
}

#[test]
fn non_scalar_loss_rejected() {
    let mut g = Graph::<f64>::new();
    let x = g.leaf(Tensor::from_f64(&[2], &[1.0, 2.0]).unwrap(), true);
    assert!(g.backward(x).is_err());
}

#[test]
fn sum_of_losses_gradients_add() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let a: Tensor<f64> = random_tensor(&mut rng, &[3, 4]);
    let w: Tensor<f64> = random_tensor(&mut rng, &[4, 2]);
    let run = |which: u8| {
        let mut g = Graph::<f64>::new();
        let av = g.leaf(a.clone(), true);
        let wv = g.leaf(w.clone(), true);
        let y = g.matmul(av, wv).unwrap();
        let l1 = g.sum_of_squares(y).unwrap();
        let s = g.softmax(y).unwrap();
        let l2 = g.mean(s).unwrap();
        let l2 = g.scale(l2, 3.0).unwrap();
        let l = match which {
            0 => l1,
            1 => l2,
            _ => g.add(l1, l2).unwrap(),
        };
        let gr = g.backward(l).unwrap();
        (gr.get(av).to_f64_vec(), gr.get(wv).to_f64_vec())
    };
    let (a1, w1) = run(0);
    let (a2, w2) = run(1);
    let (a3, w3) = run(2);
    for i in 0..a1.len() {
        assert!((a1[i] + a2[i] - a3[i]).abs() < 1e-12);
    }
    for i in 0..w1.len() {
        assert!((w1[i] + w2[i] - w3[i]).abs() < 1e-12);
    }
}

#[test]
fn forward_identities() {
    let mut g = Graph::<f64>::new();
    let eye = g.constant(Tensor::from_f64(&[3, 3], &[1., 0., 0., 0., 1., 0., 0., 0., 1.]).unwrap());
    let a = g.constant(Tensor::from_f64(&[3, 2], &[1., 2., 3., 4., 5., 6.]).unwrap());
    let p = g.matmul(eye, a).unwrap();
    assert_eq!(g.value(p), g.value(a));

    let c = g.constant(Tensor::from_f64(&[4], &[2.5; 4]).unwrap());
    let bias = g.constant(Tensor::from_f64(&[4], &[0.1, 0.2, 0.3, 0.4]).unwrap());
    let gain = g.constant(Tensor::from_f64(&[4], &[5.0; 4]).unwrap());
    let ln = g.layer_norm(c, Some(gain), Some(bias)).unwrap();
    assert_eq!(g.value(ln).data(), &[0.1, 0.2, 0.3, 0.4]);

    let z = g.constant(Tensor::zeros(&[4]));
    let s = g.softmax(z).unwrap();
    assert_eq!(g.value(s).data(), &[0.25; 4]);
}

#[test]
fn non_finite_is_an_error() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(Tensor::from_f64(&[1], &[1e300]).unwrap());
    let y = g.scale(x, 1e300);
    assert!(y.is_err());
}

#[test]
fn shape_errors() {
    let mut g = Graph::<f64>::new();
    let a = g.constant(Tensor::zeros(&[2, 3]));
    let b = g.constant(Tensor::zeros(&[2, 3]));
    assert!(g.matmul(a, b).is_err());
    let c = g.constant(Tensor::zeros(&[2]));
    assert!(g.add(a, c).is_err());
    assert!(g.mul(a, c).is_err());
    assert!(g.reshape(a, &[4]).is_err());
    assert!(g.slice(a, 1, 2, 2).is_err());
    assert!(g.permute(a, &[0, 0]).is_err());
}

#[test]
fn backward_is_bit_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let a: Tensor<f32> = random_tensor(&mut rng, &[5, 7]);
    let w: Tensor<f32> = random_tensor(&mut rng, &[7, 3]);
    let run = || {
        let mut g = Graph::<f32>::new();
        let av = g.leaf(a.clone(), true);
        let wv = g.leaf(w.clone(), true);
        let y = g.matmul(av, wv).unwrap();
        let y = g.gelu(y).unwrap();
        let l = g.sum_of_squares(y).unwrap();
        let gr = g.backward(l).unwrap();
        (g.value(l).clone(), gr.get(av), gr.get(wv))
    };
    assert_eq!(run(), run());
}
