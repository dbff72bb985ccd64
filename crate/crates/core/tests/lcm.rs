use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use radar_odom::diff::{finite_diff_check, Adam, GradCheckOptions, Graph, ParamStore, Tensor};
use radar_odom::geom::{norm3, Vec3};
use radar_odom::lcm::{constant_cloud, offset_hat, Lcm, LcmConfig};
use radar_odom::par::ExecMode;

fn setup(c: usize, m: usize, seed: u64) -> (Lcm, ParamStore) {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = LcmConfig {
        m,
        channels: c,
        ..Default::default()
    };
    let lcm = Lcm::init(&mut store, &mut rng, "lcm", &cfg).unwrap();
    (lcm, store)
}

fn random_cloud(seed: u64, n: usize, c: usize) -> (Vec<Vec3>, Tensor) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xyz: Vec<Vec3> = (0..n)
        .map(|_| {
            [
                rng.random_range(-10.0..10.0),
                rng.random_range(-10.0..10.0),
                rng.random_range(-1.0..1.0),
            ]
        })
        .collect();
    let f: Vec<f64> = (0..n * c).map(|_| rng.random_range(-1.0..1.0)).collect();
    (xyz, Tensor::from_vec(&[n, c], f).unwrap())
}

#[test]
fn offset_hat_examples() {
    let same = [[1.0, 2.0, 3.0]; 8];
    assert_eq!(offset_hat([1.0, 2.0, 3.0], &same), [0.0; 3]);
    let sym = [[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, -2.0, 0.0]];
    assert_eq!(offset_hat([0.0; 3], &sym), [0.0; 3]);
}

#[test]
fn region_offsets_match_direct_arithmetic() {
    let (lcm, store) = setup(8, 16, 1);
    let (xyz, f) = random_cloud(2, 96, 8);
    let mut g = Graph::new();
    let cloud = constant_cloud(&mut g, &xyz, f).unwrap();
    let regions = lcm.regions(&xyz, ExecMode::Parallel).unwrap();
    let (_, dx_hat) = lcm.region_stats(&mut g, &store, &cloud, &regions).unwrap();
    let got = g.value(dx_hat);
    for (i, &a) in regions.anchors.iter().enumerate() {
        let nb: Vec<Vec3> = regions.neighbors[i * 8..(i + 1) * 8].iter().map(|&j| xyz[j]).collect();
        let want = offset_hat(xyz[a], &nb);
        for k in 0..3 {
            assert!((got.at(i, k) - want[k]).abs() < 1e-12);
        }
    }
}

#[test]
fn gate_bounds_offsets() {
    let (lcm, store) = setup(8, 32, 3);
    let (xyz, f) = random_cloud(4, 128, 8);
    let mut g = Graph::new();
    let cloud = constant_cloud(&mut g, &xyz, f).unwrap();
    let (_, trace) = lcm.complete(&mut g, &store, &cloud, ExecMode::Parallel).unwrap();
    let alpha = g.value(trace.alpha).data().to_vec();
    assert!(alpha.iter().all(|&a| a > 0.0 && a < 1.0));
    let hat = g.value(trace.offset_hat).clone();
    let off = g.value(trace.offset).clone();
    for i in 0..32 {
        let h: Vec3 = std::array::from_fn(|k| hat.at(i, k));
        let o: Vec3 = std::array::from_fn(|k| off.at(i, k));
        assert!(norm3(o) <= norm3(h));
    }
    // Anchors sitting on their neighborhood centroid do not move.
    let mut g = Graph::new();
    let zero = g.constant(Tensor::zeros(&[4, 3]));
    let df = g.constant(Tensor::filled(&[4, 8], 0.3));
    let ff = g.constant(Tensor::filled(&[4, 8], -0.2));
    let (dx, _) = lcm.offset_attention(&mut g, &store, df, ff, zero).unwrap();
    assert!(g.value(dx).data().iter().all(|&v| v == 0.0));
}

#[test]
fn completion_shape_and_confinement() {
    let (lcm, store) = setup(8, 64, 5);
    let (xyz, f) = random_cloud(6, 256, 8);
    let mut g = Graph::new();
    let cloud = constant_cloud(&mut g, &xyz, f.clone()).unwrap();
    let (out, trace) = lcm.complete(&mut g, &store, &cloud, ExecMode::Parallel).unwrap();
    assert_eq!(out.len(), 320);
    assert_eq!(g.value(out.feats).rows(), 320);
    assert_eq!(&out.xyz[..256], &xyz[..]);
    assert_eq!(&g.value(out.feats).data()[..256 * 8], f.data());
    for (i, &a) in trace.regions.anchors.iter().enumerate() {
        let nb = &trace.regions.neighbors[i * 8..(i + 1) * 8];
        let reach = nb.iter().map(|&j| norm3(sub(xyz[a], xyz[j]))).fold(0.0, f64::max);
        assert!(norm3(sub(out.xyz[256 + i], xyz[a])) <= reach + 1e-12);
    }
    assert!(lcm.regions(&xyz[..63], ExecMode::Parallel).is_err());
}

fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[test]
fn offset_gradient_matches_finite_differences() {
    let (lcm, store) = setup(8, 16, 7);
    let (xyz, f) = random_cloud(8, 64, 8);
    let opts = GradCheckOptions {
        samples: 48,
        prefix: Some("lcm.w_q".into()),
        ..Default::default()
    };
    let r = finite_diff_check(&store, &opts, |g, s| {
        let cloud = constant_cloud(g, &xyz, f.clone())?;
        let (_, trace) = lcm.complete(g, s, &cloud, ExecMode::Sequential)?;
        let w = g.constant(Tensor::from_vec(&[1, 3], vec![0.7, -1.1, 0.4])?);
        let p = g.mul(trace.offset, w)?;
        Ok(g.sum(p))
    })
    .unwrap();
    assert!(r.max_rel_error <= 1e-4, "{:?}", r.worst());
}

/// Points scattered on a tilted plane with Gaussian normal noise; training
/// the block to keep synthetic points on the plane brings their mean
/// distance below the raw noise level.
#[test]
fn planar_toy_training() {
    let sigma = 0.05;
    let normal = {
        let n = [0.3, -0.2, 1.0];
        let l = norm3(n);
        [n[0] / l, n[1] / l, n[2] / l]
    };
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let noise = Normal::new(0.0, sigma).unwrap();
    let xyz: Vec<Vec3> = (0..256)
        .map(|_| {
            let (u, v): (f64, f64) = (rng.random_range(-15.0..15.0), rng.random_range(-15.0..15.0));
            let e = noise.sample(&mut rng);
            let z = -(normal[0] * u + normal[1] * v) / normal[2];
            [u + e * normal[0], v + e * normal[1], z + e * normal[2]]
        })
        .collect();
    let c = 8;
    let feats = Tensor::from_vec(&[256, c], (0..256 * c).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let (lcm, mut store) = setup(c, 64, 12);
    let nt = Tensor::from_vec(&[3, 1], normal.to_vec()).unwrap();

    let mean_distance = |store: &ParamStore| {
        let mut g = Graph::new();
        let cloud = constant_cloud(&mut g, &xyz, feats.clone()).unwrap();
        let (out, _) = lcm.complete(&mut g, store, &cloud, ExecMode::Sequential).unwrap();
        out.xyz[256..]
            .iter()
            .map(|p| (p[0] * normal[0] + p[1] * normal[1] + p[2] * normal[2]).abs())
            .sum::<f64>()
            / 64.0
    };
    let before = mean_distance(&store);
    for _ in 0..300 {
        let mut g = Graph::new();
        let cloud = constant_cloud(&mut g, &xyz, feats.clone()).unwrap();
        let (out, _) = lcm.complete(&mut g, &store, &cloud, ExecMode::Sequential).unwrap();
        let new = g.slice_rows(out.coords, 256, 320).unwrap();
        let n = g.constant(nt.clone());
        let d = g.matmul(new, n).unwrap();
        let d2 = g.square(d);
        let loss = g.mean(d2);
        g.backward(loss).unwrap();
        g.accumulate_param_grads(&mut store).unwrap();
        store.adam_step(1e-2, Adam::default());
        store.zero_grads();
    }
    let after = mean_distance(&store);
    assert!(before > sigma, "untrained mean distance {before}");
    assert!(after <= sigma, "trained mean distance {after} (before {before})");
}
