use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Error;

fn t2(rows: &[&[f64]]) -> Tensor {
    Tensor::from_rows(rows).unwrap()
}

#[test]
fn matmul_identity() {
    let mut g = Graph::new();
    let a = g.constant(t2(&[&[1.0, 2.0], &[3.0, 4.0]]));
    let i = g.constant(t2(&[&[1.0, 0.0], &[0.0, 1.0]]));
    let y = g.matmul(a, i).unwrap();
    assert_eq!(g.value(y).data(), &[1.0, 2.0, 3.0, 4.0]);
}

#[test]
fn softmax_uniform() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::zeros(&[1, 3]));
    let y = g.softmax_rows(a);
    for &v in g.value(y).data() {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }
}

#[test]
fn layer_norm_of_constant_is_zero() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::filled(&[2, 5], 3.7));
    let y = g.layer_norm(a, 1e-5);
    assert!(g.value(y).data().iter().all(|&v| v == 0.0));
}

#[test]
fn backward_of_sum_is_ones() {
    let mut g = Graph::new();
    let x = g.variable(Tensor::from_vec(&[3], vec![0.3, -2.0, 7.0]).unwrap());
    let s = g.sum(x);
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[1.0, 1.0, 1.0]);
}

#[test]
fn backward_of_squared_norm() {
    let mut g = Graph::new();
    let x = g.variable(Tensor::from_vec(&[2], vec![3.0, 4.0]).unwrap());
    let sq = g.square(x);
    let s = g.sum(sq);
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[6.0, 8.0]);
}

#[test]
fn backward_twice_does_not_accumulate() {
    let mut g = Graph::new();
    let x = g.variable(Tensor::from_vec(&[2], vec![3.0, 4.0]).unwrap());
    let sq = g.square(x);
    let s = g.sum(sq);
    g.backward(s).unwrap();
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[6.0, 8.0]);
}

#[test]
fn non_scalar_root_is_rejected() {
    let mut g = Graph::new();
    let x = g.variable(Tensor::zeros(&[2]));
    assert!(matches!(g.backward(x), Err(Error::NonScalarRoot(_))));
}

#[test]
fn shape_errors_name_the_op() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::zeros(&[2, 3]));
    let b = g.constant(Tensor::zeros(&[2, 3]));
    let err = g.matmul(a, b).unwrap_err();
    assert!(err.to_string().contains("matmul"), "{err}");
    let c = g.constant(Tensor::zeros(&[4, 2]));
    let err = g.add(a, c).unwrap_err();
    assert!(err.to_string().contains("add"), "{err}");
    let err = g.group_max(a, 4).unwrap_err();
    assert!(err.to_string().contains("group_max"), "{err}");
}

#[test]
fn gather_backward_scatters() {
    let mut g = Graph::new();
    let x = g.variable(t2(&[&[1.0, 2.0], &[3.0, 4.0], &[5.0, 6.0]]));
    let y = g.gather_rows(x, &[2, 0, 2]).unwrap();
    let s = g.sum(y);
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[1.0, 1.0, 0.0, 0.0, 2.0, 2.0]);
}

#[test]
fn group_max_ties_take_lowest_row() {
    let mut g = Graph::new();
    let x = g.variable(t2(&[&[1.0], &[1.0], &[0.5], &[2.0]]));
    let y = g.group_max(x, 2).unwrap();
    assert_eq!(g.value(y).data(), &[1.0, 2.0]);
    let s = g.sum(y);
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[1.0, 0.0, 0.0, 1.0]);
}

#[test]
fn quadratic_gradcheck_is_tight() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut store = ParamStore::new();
    store.insert_normal(&mut rng, "w", &[7], 1.0).unwrap();
    let rep = finite_diff_check(&store, &GradCheckOptions::default(), |g, s| {
        let w = g.param(s, "w")?;
        let sq = g.square(w);
        Ok(g.sum(sq))
    })
    .unwrap();
    assert!(rep.max_rel_error <= 1e-8, "{}", rep.max_rel_error);
    assert_eq!(rep.coords.len(), 7);
}

#[test]
fn gradcheck_rejects_non_finite() {
    let mut store = ParamStore::new();
    store.insert("w", Tensor::scalar(0.0), true).unwrap();
    let r = finite_diff_check(&store, &GradCheckOptions::default(), |g, s| {
        let w = g.param(s, "w")?;
        Ok(g.recip(w))
    });
    assert!(matches!(r, Err(Error::NonFinite(_))));
}

/// Exercises every op with a non-trivial downstream gradient.
#[test]
fn every_op_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut store = ParamStore::new();
    store.insert_normal(&mut rng, "a", &[6, 4], 1.0).unwrap();
    store.insert_normal(&mut rng, "b", &[4, 3], 1.0).unwrap();
    store.insert_normal(&mut rng, "row", &[3], 1.0).unwrap();
    store.insert_normal(&mut rng, "col", &[6, 1], 1.0).unwrap();
    store.insert_normal(&mut rng, "s", &[1], 1.0).unwrap();
    store.insert_normal(&mut rng, "seq", &[2, 3, 4], 1.0).unwrap();
    store.insert_normal(&mut rng, "k", &[3], 0.5).unwrap();
    store.insert_normal(&mut rng, "proj", &[20, 1], 1.0).unwrap();

    let objective = |g: &mut Graph, s: &ParamStore| {
        let a = g.param(s, "a")?;
        let b = g.param(s, "b")?;
        let row = g.param(s, "row")?;
        let col = g.param(s, "col")?;
        let sc = g.param(s, "s")?;
        let seq = g.param(s, "seq")?;
        let k = g.param(s, "k")?;
        let m = g.matmul(a, b)?; // 6x3
        let m = g.add(m, row)?;
        let m = g.mul(m, col)?;
        let m = g.sub(m, sc)?;
        let ln = g.layer_norm(m, 1e-5);
        let sm = g.softmax_rows(ln);
        let sg = g.sigmoid(m);
        let sl = g.silu(m);
        let th = g.tanh(sm);
        let e = g.scale(sg, 0.3);
        let e = g.exp(e);
        let sq = g.square(sl);
        let p1 = g.add_const(sq, 1.0);
        let sr = g.sqrt(p1);
        let rc = g.recip(sr);
        let cm = g.clamp_min(rc, 0.4);
        let cat = g.concat_cols(&[th, e, cm, sm])?; // 6x12
        let gm = g.group_max(cat, 2)?; // 3x12
        let gs = g.group_sum(cat, 3)?; // 2x12
        let gmean = g.group_mean(cat, 6)?; // 1x12
        let rows = g.concat_rows(&[gm, gs, gmean])?; // 6x12
        let sl2 = g.slice_cols(rows, 2, 9)?; // 6x7
        let perm = g.gather_rows(sl2, &[5, 1, 1, 0, 3, 2, 4])?; // 7x7
        let rn = g.row_norm(perm); // 7x1
        let sc2 = g.sum_cols(perm); // 7x1
        let conv = g.causal_conv(seq, k)?; // 2x3x4
        let flat = g.reshape(conv, &[6, 4])?;
        let flat = g.slice_cols(flat, 0, 1)?; // 6x1
        let all = g.concat_rows(&[rn, sc2, flat])?; // 20x1
        let all = g.reshape(all, &[1, 20])?;
        let proj = g.param(s, "proj")?;
        let out = g.matmul(all, proj)?;
        let neg = g.neg(out);
        let relu = g.relu(neg);
        let cmax = g.col_max(relu)?;
        let r1 = g.mean(cmax);
        let r2 = g.mean(out);
        let r = g.add(r1, r2)?;
        Ok(g.sum(r))
    };
    let opts = GradCheckOptions {
        samples: 1000,
        ..Default::default()
    };
    let rep = finite_diff_check(&store, &opts, objective).unwrap();
    let w = rep.worst().unwrap();
    assert!(rep.max_rel_error <= 1e-4, "{w:?}");
}

#[test]
fn mlp_and_layer_norm_shapes() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut store = ParamStore::new();
    let mlp = nn::Mlp::init(&mut store, &mut rng, "m", &[5, 8, 3], nn::Activation::Relu).unwrap();
    let ln = nn::LayerNorm::init(&mut store, "ln", 3).unwrap();
    let mut g = Graph::new();
    let x = g.constant(Tensor::zeros(&[4, 5]));
    let y = mlp.forward(&mut g, &store, x).unwrap();
    let y = ln.forward(&mut g, &store, y).unwrap();
    assert_eq!(g.shape(y), &[4, 3]);
    assert_eq!(store.len(), 6);
}

#[test]
fn independent_tapes_are_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut store = ParamStore::new();
    store.insert_normal(&mut rng, "w", &[16, 16], 1.0).unwrap();
    let run = |s: &ParamStore| {
        let mut g = Graph::new();
        let w = g.param(s, "w").unwrap();
        let m = g.matmul(w, w).unwrap();
        let t = g.tanh(m);
        let r = g.sum(t);
        g.backward(r).unwrap();
        g.grad(w).unwrap().clone()
    };
    let a = run(&store);
    let b = std::thread::scope(|sc| sc.spawn(|| run(&store)).join().unwrap());
    assert_eq!(a, b);
}
