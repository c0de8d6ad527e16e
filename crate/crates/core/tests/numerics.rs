use norma::numerics::{grad_check, grad_check_multi, Graph, Tensor, Var};
use norma::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TRIALS: u64 = 20;
const TOL: f64 = 1e-5;
const H: f64 = 1e-5;

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

fn dims(rng: &mut ChaCha8Rng) -> usize {
    rng.random_range(2..5)
}

/// Weighted sum so that every output element gets a distinct upstream gradient.
fn weighted(g: &mut Graph<f64>, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = random(&mut rng, g.shape(y));
    let w = g.constant(w);
    let p = g.mul(y, w)?;
    Ok(g.sum(p))
}

fn check(name: &str, inputs: &[Tensor<f64>], f: impl Fn(&mut Graph<f64>, &[Var]) -> Result<Var>) {
    let r = grad_check_multi(f, inputs, H).unwrap();
    assert!(r.max_rel_error < TOL, "{name}: max relative error {} at {:?}", r.max_rel_error, r.worst);
}

#[test]
fn matmul_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for t in 0..TRIALS {
        let (m, k, n) = (dims(&mut rng), dims(&mut rng), dims(&mut rng));
        let a = random(&mut rng, &[m, k]);
        let b = random(&mut rng, &[k, n]);
        let bt = random(&mut rng, &[n, k]);
        check("matmul", &[a.clone(), b], |g, v| {
            let y = g.matmul(v[0], v[1])?;
            weighted(g, y, t)
        });
        check("matmul_nt", &[a, bt], |g, v| {
            let y = g.matmul_nt(v[0], v[1])?;
            weighted(g, y, t)
        });
        let x3 = random(&mut rng, &[2, m, k]);
        let w = random(&mut rng, &[k, n]);
        check("matmul rank3", &[x3, w], |g, v| {
            let y = g.matmul(v[0], v[1])?;
            weighted(g, y, t)
        });
    }
}

#[test]
fn bmm_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for t in 0..TRIALS {
        let (c, m, k, n) = (dims(&mut rng), dims(&mut rng), dims(&mut rng), dims(&mut rng));
        let a = random(&mut rng, &[c, m, k]);
        let b = random(&mut rng, &[c, k, n]);
        let bt = random(&mut rng, &[c, n, k]);
        check("bmm", &[a.clone(), b], |g, v| {
            let y = g.bmm(v[0], v[1], false)?;
            weighted(g, y, t)
        });
        check("bmm transposed", &[a, bt], |g, v| {
            let y = g.bmm(v[0], v[1], true)?;
            weighted(g, y, t)
        });
    }
}

#[test]
fn sum_of_matmul_gradient_is_ones_times_b_transposed() {
    let a = Tensor::new(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
    let b = Tensor::new(&[3, 2], vec![0.5, -1.0, 2.0, 0.25, -3.0, 1.5]).unwrap();
    let mut g = Graph::new();
    let (va, vb) = (g.param(a), g.constant(b.clone()));
    let y = g.matmul(va, vb).unwrap();
    let s = g.sum(y);
    let grads = g.backward(s).unwrap();
    // ones(2x2) · bᵀ: each row is the row sums of b
    let row_sums: Vec<f64> = (0..3).map(|i| b.data()[2 * i] + b.data()[2 * i + 1]).collect();
    let want: Vec<f64> = row_sums.iter().chain(row_sums.iter()).copied().collect();
    assert_eq!(grads.get(va).unwrap().data(), &want[..]);
    // and against finite differences
    let err = grad_check(
        |g, x| {
            let w = g.constant(b.clone());
            g.matmul(x, w)
        },
        &Tensor::new(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap(),
        H,
    )
    .unwrap();
    assert!(err < 1e-10, "{err}");
}

#[test]
fn elementwise_and_structural_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for t in 0..TRIALS {
        let (r, c) = (dims(&mut rng), dims(&mut rng));
        let a = random(&mut rng, &[r, c]);
        let b = random(&mut rng, &[r, c]);
        let bias = random(&mut rng, &[c]);
        check("add", &[a.clone(), b.clone()], |g, v| {
            let y = g.add(v[0], v[1])?;
            weighted(g, y, t)
        });
        check("add broadcast", &[a.clone(), bias], |g, v| {
            let y = g.add(v[0], v[1])?;
            weighted(g, y, t)
        });
        check("mul", &[a.clone(), b.clone()], |g, v| {
            let y = g.mul(v[0], v[1])?;
            weighted(g, y, t)
        });
        check("scale", &[a.clone()], |g, v| {
            let y = g.scale(v[0], -1.7);
            weighted(g, y, t)
        });
        check("transpose", &[a.clone()], |g, v| {
            let y = g.transpose(v[0])?;
            weighted(g, y, t)
        });
        check("concat_rows", &[a.clone(), b.clone()], |g, v| {
            let y = g.concat_rows(&[v[0], v[1], v[0]])?;
            weighted(g, y, t)
        });
        check("slice_rows", &[a.clone()], |g, v| {
            let y = g.slice_rows(v[0], 1, r - 1)?;
            weighted(g, y, t)
        });
        check("reshape", &[a.clone()], |g, v| {
            let y = g.reshape(v[0], &[r * c])?;
            weighted(g, y, t)
        });
        // keep inputs away from the kink at zero
        let away = a.map(|x| if x.abs() < 0.05 { 0.3 } else { x });
        check("relu", &[away], |g, v| {
            let y = g.relu(v[0]);
            weighted(g, y, t)
        });
    }
}

#[test]
fn softmax_layer_norm_embedding_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for t in 0..TRIALS {
        let (r, c) = (dims(&mut rng), dims(&mut rng));
        let x = random(&mut rng, &[2, r, c]);
        check("softmax", &[x.clone()], |g, v| {
            let y = g.softmax(v[0], 2)?;
            weighted(g, y, t)
        });
        let gain = random(&mut rng, &[c]);
        let bias = random(&mut rng, &[c]);
        check("layer_norm", &[x, gain, bias], |g, v| {
            let y = g.layer_norm(v[0], v[1], v[2], 1e-5)?;
            weighted(g, y, t)
        });
        let table = random(&mut rng, &[5, c]);
        let ids: Vec<usize> = (0..6).map(|_| rng.random_range(0..5)).collect();
        check("embedding", &[table], |g, v| {
            let y = g.embedding(v[0], &ids)?;
            weighted(g, y, t)
        });
    }
}

#[test]
fn embedding_gradient_accumulates_for_repeated_ids() {
    let table = Tensor::from_fn(&[3, 2], |i| i as f64);
    let mut g = Graph::new();
    let tv = g.param(table);
    let y = g.embedding(tv, &[1, 1, 2]).unwrap();
    let s = g.sum(y);
    let grads = g.backward(s).unwrap();
    assert_eq!(grads.get(tv).unwrap().data(), &[0.0, 0.0, 2.0, 2.0, 1.0, 1.0]);
}

#[test]
fn head_permutation_and_dropout_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for t in 0..TRIALS {
        let x = random(&mut rng, &[2, 3, 4]);
        check("split_heads", &[x.clone()], |g, v| {
            let y = g.split_heads(v[0], 2)?;
            weighted(g, y, t)
        });
        check("merge_heads", &[x.clone()], |g, v| {
            let y = g.merge_heads(v[0], 2)?;
            weighted(g, y, t)
        });
        check("dropout", &[x], |g, v| {
            let mut drng = ChaCha8Rng::seed_from_u64(t);
            let y = g.dropout(v[0], 0.3, true, &mut drng)?;
            weighted(g, y, t)
        });
    }
}

#[test]
fn split_then_merge_is_identity() {
    let x = Tensor::from_fn(&[2, 3, 8], |i| i as f64);
    let mut g = Graph::new();
    let v = g.constant(x.clone());
    let s = g.split_heads(v, 4).unwrap();
    assert_eq!(g.shape(s), &[8, 3, 2]);
    let m = g.merge_heads(s, 4).unwrap();
    assert_eq!(g.value(m), &x);
}

#[test]
fn cross_entropy_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..TRIALS {
        let (n, v) = (dims(&mut rng) + 1, dims(&mut rng) + 1);
        let logits = random(&mut rng, &[n, v]).map(|x| 3.0 * x);
        let mut targets: Vec<usize> = (0..n).map(|_| rng.random_range(0..v)).collect();
        targets[0] = 0; // at least one pad row
        targets[1] = 1;
        let eps = rng.random_range(0.0..0.5);
        check("cross_entropy", &[logits], |g, vs| g.cross_entropy_ls(vs[0], &targets, eps, 0));
    }
}

#[test]
fn cross_entropy_hand_evaluated() {
    // p = (0.7, 0.2, 0.1): logits = ln p
    let logits = Tensor::new(&[1, 3], vec![0.7f64.ln(), 0.2f64.ln(), 0.1f64.ln()]).unwrap();
    let mut g = Graph::new();
    let l = g.constant(logits);
    let loss = g.cross_entropy_ls(l, &[0], 0.1, 99).unwrap();
    let want = 0.9 * -(0.7f64.ln()) + 0.1 / 3.0 * -(0.7f64.ln() + 0.2f64.ln() + 0.1f64.ln());
    // 0.9·0.356675 + (0.1/3)·4.268698
    assert!((want - 0.463297).abs() < 1e-6, "oracle {want}");
    assert!((g.value(loss).data()[0] - want).abs() < 1e-12);
}

#[test]
fn cross_entropy_collapses_and_uniform() {
    let logits = Tensor::new(&[2, 4], vec![0.3, -1.0, 2.0, 0.5, 0.0, 0.0, 0.0, 0.0]).unwrap();
    let mut g = Graph::new();
    let l = g.constant(logits.clone());
    // eps = 0 is plain NLL
    let loss = g.cross_entropy_ls(l, &[2, 0], 0.0, 9).unwrap();
    let lse0 = (0.3f64.exp() + (-1.0f64).exp() + 2.0f64.exp() + 0.5f64.exp()).ln();
    let nll = ((lse0 - 2.0) + 4.0f64.ln()) / 2.0;
    assert!((g.value(loss).data()[0] - nll).abs() < 1e-12);
    // uniform logits give ln V for any eps
    let u = g.constant(Tensor::full(&[3, 4], 1.5));
    for eps in [0.0, 0.1, 0.7] {
        let loss = g.cross_entropy_ls(u, &[1, 2, 3], eps, 0).unwrap();
        assert!((g.value(loss).data()[0] - 4.0f64.ln()).abs() < 1e-12);
    }
    // pad rows are excluded from the mean
    let all_pad = g.cross_entropy_ls(u, &[0, 0, 0], 0.1, 0);
    assert!(all_pad.is_err());
}

#[test]
fn softmax_examples() {
    let mut g = Graph::<f64>::new();
    let z = g.constant(Tensor::new(&[3], vec![0.0, 0.0, 0.0]).unwrap());
    let s = g.softmax(z, 0).unwrap();
    assert!(g.value(s).data().iter().all(|&p| (p - 1.0 / 3.0).abs() < 1e-15));

    let x = g.constant(Tensor::new(&[3], vec![1.0, 2.0, 3.0]).unwrap());
    let s = g.softmax(x, 0).unwrap();
    // direct evaluation in f64
    let denom = 1f64.exp() + 2f64.exp() + 3f64.exp();
    let oracle: Vec<f64> = [1.0f64, 2.0, 3.0].iter().map(|v| v.exp() / denom).collect();
    for (p, o) in g.value(s).data().iter().zip(&oracle) {
        assert!((p - o).abs() < 1e-15);
    }
    for (o, want) in oracle.iter().zip([0.09003, 0.24473, 0.66524]) {
        assert!((o - want).abs() < 5e-6);
    }

    let bad = g.constant(Tensor::new(&[2], vec![f64::NAN, 1.0]).unwrap());
    assert!(g.softmax(bad, 0).is_err());
    let m = g.constant(Tensor::zeros(&[2, 2]));
    assert!(g.softmax(m, 0).is_err(), "only the last axis is supported");
}

#[test]
fn softmax_rows_sum_to_one_and_shift_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..50 {
        let c = rng.random_range(2..30);
        let x = Tensor::<f64>::from_fn(&[4, c], |_| rng.random_range(-20.0..20.0));
        let shift = rng.random_range(-50.0..50.0);
        let mut g = Graph::new();
        let a = g.constant(x.clone());
        let b = g.constant(x.map(|v| v + shift));
        let sa = g.softmax(a, 1).unwrap();
        let sb = g.softmax(b, 1).unwrap();
        for r in 0..4 {
            let sum: f64 = g.value(sa).row(r).iter().sum();
            assert!((sum - 1.0).abs() < 1e-6);
        }
        assert!(g.value(sa).max_abs_diff(g.value(sb)) < 1e-6);
    }
}

#[test]
fn layer_norm_examples() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(Tensor::full(&[2, 4], 7.0));
    let gain = g.constant(Tensor::full(&[4], 1.0));
    let bias = g.constant(Tensor::zeros(&[4]));
    let y = g.layer_norm(x, gain, bias, 1e-5).unwrap();
    assert!(g.value(y).data().iter().all(|&v| v == 0.0));

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = g.constant(random(&mut rng, &[3, 16]).map(|v| 5.0 * v + 2.0));
    let (ones, zeros) = (g_ones(&mut g, 16), g_zeros(&mut g, 16));
    let y = g.layer_norm(x, ones, zeros, 1e-5).unwrap();
    for r in 0..3 {
        let row = g.value(y).row(r);
        let mean: f64 = row.iter().sum::<f64>() / 16.0;
        let var: f64 = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 16.0;
        assert!(mean.abs() < 1e-5 && (var - 1.0).abs() < 1e-5, "mean {mean} var {var}");
    }
}

fn g_ones(g: &mut Graph<f64>, n: usize) -> Var {
    g.constant(Tensor::full(&[n], 1.0))
}

fn g_zeros(g: &mut Graph<f64>, n: usize) -> Var {
    g.constant(Tensor::zeros(&[n]))
}

#[test]
fn matmul_identity_and_shapes() {
    let mut g = Graph::<f64>::new();
    let i = g.constant(Tensor::new(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap());
    let x = g.constant(Tensor::new(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
    let y = g.matmul(i, x).unwrap();
    assert_eq!(g.value(y), g.value(x));
    let a = g.constant(Tensor::zeros(&[2, 3]));
    let b = g.constant(Tensor::zeros(&[3, 1]));
    let y = g.matmul(a, b).unwrap();
    assert_eq!(g.shape(y), &[2, 1]);
    assert!(g.matmul(b, b).is_err());
}

#[test]
fn dropout_behaviour() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut g = Graph::<f32>::new();
    let x = g.constant(Tensor::full(&[100_000], 1.0));
    assert_eq!(g.dropout(x, 0.0, true, &mut rng).unwrap(), x);
    assert_eq!(g.dropout(x, 0.3, false, &mut rng).unwrap(), x);
    assert!(g.dropout(x, 1.0, true, &mut rng).is_err());
    let y = g.dropout(x, 0.3, true, &mut rng).unwrap();
    let dropped = g.value(y).data().iter().filter(|&&v| v == 0.0).count();
    let rate = dropped as f64 / 100_000.0;
    assert!((rate - 0.3).abs() < 0.01, "drop rate {rate}");
    let kept = g.value(y).data().iter().find(|&&v| v != 0.0).unwrap();
    assert!((kept - 1.0 / 0.7).abs() < 1e-6);
}

#[test]
fn fan_out_accumulates() {
    // y = x·x + 3x, dy/dx = 2x + 3
    let x = Tensor::new(&[3], vec![0.5, -2.0, 4.0]).unwrap();
    let mut g = Graph::new();
    let v = g.param(x.clone());
    let sq = g.mul(v, v).unwrap();
    let lin = g.scale(v, 3.0);
    let y = g.add(sq, lin).unwrap();
    let s = g.sum(y);
    let grads = g.backward(s).unwrap();
    let want: Vec<f64> = x.data().iter().map(|x| 2.0 * x + 3.0).collect();
    assert_eq!(grads.get(v).unwrap().data(), &want[..]);
}

#[test]
fn grad_check_exactness_on_polynomials() {
    let x = Tensor::new(&[4], vec![0.3, -1.2, 2.5, 0.9]).unwrap();
    let quad = grad_check(
        |g, v| {
            let sq = g.mul(v, v)?;
            Ok(g.scale(sq, 0.5))
        },
        &x,
        1e-4,
    )
    .unwrap();
    assert!(quad < 1e-9, "quadratic {quad}");
    let lin = grad_check(|g, v| Ok(g.scale(v, 2.5)), &x, 1e-4).unwrap();
    assert!(lin < 1e-10, "linear {lin}");
}
