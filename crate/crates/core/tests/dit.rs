use crossview::dit::{drop_condition, Conditioning, Dit, DitConfig, Stream};
use crossview::gradcheck::{check_dit, live_dit, random_batch, tiny_dit_config};
use crossview::tensor::Tensor;

fn tiny() -> DitConfig {
    tiny_dit_config()
}

fn live_model(seed: u64) -> Dit<f64> {
    live_dit(tiny(), seed)
}

fn batch(c: &DitConfig, b: usize, seed: u64) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<Conditioning>) {
    random_batch(c, b, seed)
}

#[test]
fn loss_gradient_matches_finite_differences_f64() {
    for seed in 0..10 {
        let err = check_dit::<f64>(seed, 3);
        assert!(err < 1e-6, "seed {seed}: rel err {err:e}");
    }
}

#[test]
fn loss_gradient_matches_finite_differences_f32() {
    for seed in 0..10 {
        let err = check_dit::<f32>(seed, 3);
        assert!(err < 1e-4, "seed {seed}: rel err {err:e}");
    }
}

#[test]
fn trajectory_tokens_are_permutation_equivariant() {
    let c = tiny();
    let m = live_model(21);
    let (x1, _, t, conds) = batch(&c, 1, 22);
    let base = m.predict(&x1, &t, &conds).unwrap();

    let perm = [2usize, 0, 3, 1];
    let f = c.trajectory_features();
    let traj = conds[0].trajectories.as_ref().unwrap();
    let mut permuted = Conditioning {
        trajectories: Some(vec![0.0; traj.len()]),
        ..conds[0].clone()
    };
    let dst = permuted.trajectories.as_mut().unwrap();
    for (new, &old) in perm.iter().enumerate() {
        dst[new * f..(new + 1) * f].copy_from_slice(&traj[old * f..(old + 1) * f]);
    }
    let mut mp = m.clone();
    let d = c.model_dim;
    let pos = m.param("pos.traj").unwrap().data().to_vec();
    let mut new_pos = vec![0.0; pos.len()];
    for (new, &old) in perm.iter().enumerate() {
        new_pos[new * d..(new + 1) * d].copy_from_slice(&pos[old * d..(old + 1) * d]);
    }
    *mp.param_mut("pos.traj").unwrap() = Tensor::new(vec![c.trajectory_tokens(), d], new_pos).unwrap();
    let out = mp.predict(&x1, &t, &[permuted.clone()]).unwrap();
    for (a, b) in base.iter().zip(&out) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
    // without moving the positions along, the output does change
    let moved = m.predict(&x1, &t, &[permuted]).unwrap();
    assert!(base.iter().zip(&moved).any(|(a, b)| (a - b).abs() > 1e-9));
}

#[test]
fn conditioning_streams_influence_output() {
    let c = tiny();
    let m = live_model(31);
    let (x1, _, t, conds) = batch(&c, 1, 32);
    let base = m.predict(&x1, &t, &conds).unwrap();
    for s in [Stream::Trajectories, Stream::Context, Stream::Reference] {
        let out = m.predict(&x1, &t, &[drop_condition(s, &conds[0])]).unwrap();
        assert!(base.iter().zip(&out).any(|(a, b)| (a - b).abs() > 1e-9), "{s:?}");
    }
}

#[test]
fn batch_items_are_independent() {
    let c = tiny();
    let m = live_model(41);
    let (x1, _, t, conds) = batch(&c, 3, 42);
    let joint = m.predict(&x1, &t, &conds).unwrap();
    let per = c.frames * 4;
    for i in 0..3 {
        let single = m
            .predict(&x1[i * per..(i + 1) * per], &t[i..i + 1], &conds[i..i + 1])
            .unwrap();
        for (a, b) in single.iter().zip(&joint[i * per..(i + 1) * per]) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn f32_and_f64_forward_agree() {
    let c = tiny();
    let m = live_model(51);
    let m32: Dit<f32> = m.cast();
    let (x1, _, t, conds) = batch(&c, 2, 52);
    let a = m.predict(&x1, &t, &conds).unwrap();
    let b = m32.predict(&x1, &t, &conds).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() < 1e-4 * (1.0 + x.abs()), "{x} vs {y}");
    }
}
