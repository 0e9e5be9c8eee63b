//! Central finite-difference checks of the reverse-mode engine and the DiT
//! loss gradient.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::dit::{drop_condition, Conditioning, Dit, DitConfig, Stream};
use crate::tensor::{Graph, Scalar, Tensor, Var};

/// Step of the central differences, always taken in 64-bit.
pub const FD_STEP: f64 = 1e-4;
/// Denominator floor of the relative error `|a − n| / max(|a|, |n|, floor)`.
pub const REL_FLOOR: f64 = 1e-3;

pub type Build<F> = fn(&mut Graph<F>, &[Var]) -> Var;

/// One differentiable op (or small composition) under test.
pub struct OpCase {
    pub name: &'static str,
    /// Input shapes drawn for a seed.
    pub shapes: fn(&mut ChaCha8Rng) -> Vec<Vec<usize>>,
    pub build64: Build<f64>,
    pub build32: Build<f32>,
}

fn random_tensor<F: Scalar>(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<F> {
    let n: usize = shape.iter().product();
    let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::from_f64(shape, &v).expect("shape matches data")
}

/// Fourth-order central difference at 0 of `f`, where `f(d)` evaluates with
/// the coordinate under test shifted by `d`.
pub fn central_difference(mut f: impl FnMut(f64) -> f64) -> f64 {
    let h = FD_STEP;
    (8.0 * (f(h) - f(-h)) - (f(2.0 * h) - f(-2.0 * h))) / (12.0 * h)
}

fn eval<F: Scalar>(inputs: &[Tensor<F>], f: Build<F>) -> f64 {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone(), false)).collect();
    let l = f(&mut g, &vars);
    g.value(l).data()[0].as_f64()
}

/// Worst relative error between the analytic gradient of `f` at `inputs` and
/// central differences of the 64-bit `reference` at the same point.
pub fn grad_check<F: Scalar>(inputs: &[Tensor<F>], f: Build<F>, reference: Build<f64>) -> f64 {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone(), true)).collect();
    let l = f(&mut g, &vars);
    let grads = g.backward(l).expect("scalar loss");
    let base: Vec<Tensor<f64>> = inputs.iter().map(|t| t.cast()).collect();
    let mut worst = 0.0f64;
    for (i, t) in base.iter().enumerate() {
        let analytic = grads.get(vars[i]);
        for j in 0..t.numel() {
            let x = t.data()[j];
            let num = central_difference(|d| {
                let mut shifted = base.clone();
                shifted[i].data_mut()[j] = x + d;
                eval(&shifted, reference)
            });
            let a = analytic.data()[j].as_f64();
            worst = worst.max((a - num).abs() / a.abs().max(num.abs()).max(REL_FLOOR));
        }
    }
    worst
}

/// Random weighted sum so every output element gets a distinct cotangent.
fn weighted<F: Scalar>(g: &mut Graph<F>, y: Var, seed: u64) -> Var {
    let shape = g.shape(y).to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcdef);
    let w = random_tensor::<F>(&mut rng, &shape);
    let w = g.constant(w);
    let p = g.mul(y, w).unwrap();
    // sum = mean · n keeps the reduction to primitive ops
    let n = shape.iter().product::<usize>() as f64;
    let m = g.mean(p).unwrap();
    g.scale(m, n).unwrap()
}

macro_rules! case {
    ($name:expr, $shapes:expr, |$g:ident, $v:ident| $body:expr) => {
        OpCase {
            name: $name,
            shapes: $shapes,
            build64: |$g: &mut Graph<f64>, $v: &[Var]| -> Var { $body },
            build32: |$g: &mut Graph<f32>, $v: &[Var]| -> Var { $body },
        }
    };
}

fn dim(rng: &mut ChaCha8Rng) -> usize {
    rng.random_range(1..5)
}

/// Every differentiable op of the engine, each reduced to a scalar.
pub fn op_cases() -> Vec<OpCase> {
    vec![
        case!("matmul", |r| { let (m, k, n) = (dim(r), dim(r), dim(r)); vec![vec![m, k], vec![k, n]] },
            |g, v| { let y = g.matmul(v[0], v[1]).unwrap(); weighted(g, y, 1) }),
        case!("matmul_batched_nt", |r| { let (b, m, k, n) = (dim(r), dim(r), dim(r), dim(r)); vec![vec![b, m, k], vec![b, n, k]] },
            |g, v| { let y = g.matmul_nt(v[0], v[1]).unwrap(); weighted(g, y, 2) }),
        case!("matmul_shared_weight", |r| { let (b, m, k, n) = (dim(r), dim(r), dim(r), dim(r)); vec![vec![b, m, k], vec![k, n]] },
            |g, v| { let y = g.matmul(v[0], v[1]).unwrap(); weighted(g, y, 3) }),
        case!("add_bias", |r| { let (a, b) = (dim(r), dim(r)); vec![vec![a, b], vec![b]] },
            |g, v| { let y = g.add(v[0], v[1]).unwrap(); weighted(g, y, 4) }),
        case!("sub_mul", |r| { let s = vec![dim(r), dim(r)]; vec![s.clone(), s] },
            |g, v| { let d = g.sub(v[0], v[1]).unwrap(); let y = g.mul(d, v[0]).unwrap(); weighted(g, y, 5) }),
        case!("scale", |r| vec![vec![dim(r), dim(r)]],
            |g, v| { let y = g.scale(v[0], -1.7).unwrap(); weighted(g, y, 6) }),
        case!("layer_norm", |r| { let d = 2 + dim(r); vec![vec![dim(r), d], vec![d], vec![d]] },
            |g, v| { let y = g.layer_norm(v[0], Some(v[1]), Some(v[2])).unwrap(); weighted(g, y, 7) }),
        case!("softmax", |r| vec![vec![dim(r), 1 + dim(r)]],
            |g, v| { let y = g.softmax(v[0]).unwrap(); weighted(g, y, 8) }),
        case!("gelu", |r| vec![vec![dim(r), dim(r)]],
            |g, v| { let y = g.gelu(v[0]).unwrap(); weighted(g, y, 9) }),
        case!("silu", |r| vec![vec![dim(r), dim(r)]],
            |g, v| { let y = g.silu(v[0]).unwrap(); weighted(g, y, 10) }),
        case!("slice_concat", |r| { let (a, b) = (dim(r), 2 + dim(r)); vec![vec![a, b, 2], vec![a, 1, 2]] },
            |g, v| {
                let s = g.slice(v[0], 1, 1, 2).unwrap();
                let c = g.concat(&[v[1], s, v[0]], 1).unwrap();
                weighted(g, c, 11)
            }),
        case!("reshape_permute_transpose", |r| vec![vec![dim(r), dim(r), dim(r)]],
            |g, v| {
                let s = g.shape(v[0]).to_vec();
                let p = g.permute(v[0], &[2, 0, 1]).unwrap();
                let t = g.transpose(p).unwrap();
                let y = g.reshape(t, &[s.iter().product()]).unwrap();
                weighted(g, y, 12)
            }),
        case!("gather_rows", |r| vec![vec![3 + dim(r), dim(r)]],
            |g, v| { let y = g.gather_rows(v[0], &[0, 2, 2, 1]).unwrap(); weighted(g, y, 13) }),
        case!("repeat_rows", |r| vec![vec![dim(r), dim(r)]],
            |g, v| { let y = g.repeat_rows(v[0], 3).unwrap(); weighted(g, y, 14) }),
        case!("mean_sum_of_squares", |r| vec![vec![dim(r), dim(r)]],
            |g, v| { let a = g.sum_of_squares(v[0]).unwrap(); let m = g.mean(v[0]).unwrap(); g.mul(m, a).unwrap() }),
        case!("mlp_two_layer", |r| { let (n, i, h, o) = (dim(r), dim(r), 2 + dim(r), dim(r)); vec![vec![n, i], vec![i, h], vec![h], vec![h, o], vec![o]] },
            |g, v| {
                let h = g.matmul(v[0], v[1]).unwrap();
                let h = g.add(h, v[2]).unwrap();
                let h = g.gelu(h).unwrap();
                let y = g.matmul(h, v[3]).unwrap();
                let y = g.add(y, v[4]).unwrap();
                g.sum_of_squares(y).unwrap()
            }),
    ]
}

/// Worst relative gradient error of `case` at random inputs drawn from `seed`.
pub fn check_op_f64(case: &OpCase, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shapes = (case.shapes)(&mut rng);
    let inputs: Vec<Tensor<f64>> = shapes.iter().map(|s| random_tensor(&mut rng, s)).collect();
    grad_check(&inputs, case.build64, case.build64)
}

/// As [`check_op_f64`] with a 32-bit backward pass against 64-bit differences.
pub fn check_op_f32(case: &OpCase, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shapes = (case.shapes)(&mut rng);
    let inputs: Vec<Tensor<f32>> = shapes.iter().map(|s| random_tensor(&mut rng, s)).collect();
    grad_check(&inputs, case.build32, case.build64)
}

/// Two-layer model small enough for exhaustive finite differences.
pub fn tiny_dit_config() -> DitConfig {
    DitConfig {
        layers: 2,
        model_dim: 16,
        heads: 2,
        mlp_ratio: 2,
        frames: 4,
        grid: 2,
        dct_order: 3,
        context_size: 4,
        context_patch: 2,
        ..DitConfig::default()
    }
}

fn randn(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Model with the zero-initialized parts filled in, so every parameter
/// actually influences the output.
pub fn live_dit(config: DitConfig, seed: u64) -> Dit<f64> {
    let mut m = Dit::<f64>::new(config, seed).expect("valid config");
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
    for p in m.params_mut() {
        for v in p.data_mut() {
            *v += 0.1 * rng.sample::<f64, _>(StandardNormal);
        }
    }
    m
}

/// A random training batch `(x1, x0, t, conds)`.
pub fn random_batch(c: &DitConfig, b: usize, seed: u64) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<Conditioning>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x1 = randn(&mut rng, b * c.frames * 4, 0.5);
    let x0 = randn(&mut rng, b * c.frames * 4, 1.0);
    let t: Vec<f64> = (0..b).map(|_| rng.random::<f64>()).collect();
    let conds = (0..b)
        .map(|_| Conditioning {
            reference: Some(randn(&mut rng, c.frames * 4, 0.5)),
            trajectories: Some(randn(&mut rng, c.trajectory_tokens() * c.trajectory_features(), 0.5)),
            context: Some(randn(&mut rng, c.context_size * c.context_size, 0.5)),
        })
        .collect();
    (x1, x0, t, conds)
}

/// Worst relative error of the `F` loss gradient of a live tiny DiT against
/// 64-bit central differences, over `per_param` random entries of every
/// parameter. The batch drops every stream once so null tokens get gradient.
pub fn check_dit<F: Scalar>(seed: u64, per_param: usize) -> f64 {
    let c = tiny_dit_config();
    let mut m = live_dit(c.clone(), seed);
    let (x1, x0, t, mut conds) = random_batch(&c, 2, seed.wrapping_add(1));
    conds[1] = drop_condition(Stream::Trajectories, &conds[1]);
    conds[1] = drop_condition(Stream::Context, &conds[1]);
    conds[0] = drop_condition(Stream::Reference, &conds[0]);
    let (_, grads) = m.cast::<F>().loss_and_grads(&x1, &x0, &t, &conds).expect("valid batch");
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut worst = 0.0f64;
    for (pi, grad) in grads.iter().enumerate() {
        let n = m.params()[pi].numel();
        for _ in 0..per_param {
            let j = rng.random_range(0..n);
            let orig = m.params()[pi].data()[j];
            let fd = central_difference(|d| {
                m.params_mut()[pi].data_mut()[j] = orig + d;
                m.loss_value(&x1, &x0, &t, &conds).expect("valid batch")
            });
            m.params_mut()[pi].data_mut()[j] = orig;
            let an = grad.data()[j].as_f64();
            worst = worst.max((fd - an).abs() / fd.abs().max(an.abs()).max(REL_FLOOR));
        }
    }
    worst
}
