mod common;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use radar_odom::dataio::{synth_generate, Frame, RadarPoint, SynthConfig};
use radar_odom::diff::ParamStore;
use radar_odom::geom::{Pose, Quat, Vec3};
use radar_odom::par::ExecMode;
use common::{brute_ball, brute_fps, cloud, sorted_by_distance};
use radar_odom::pointops::{
    ball_query, encode_backbone, fps, fps_from, knn, lexicographic_seed, Backbone, BackboneConfig,
};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn search_matches_exhaustive_oracles(seed in any::<u64>(), n in 1usize..=512, grid in any::<bool>()) {
        let p = cloud(seed, n, grid);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let m = rng.random_range(1..=n.min(24));
        let s = lexicographic_seed(&p).unwrap();
        prop_assert_eq!(fps(&p, m).unwrap(), brute_fps(&p, m, s));

        let k = rng.random_range(1..=n.min(16));
        let r = rng.random_range(0.5..6.0);
        let queries: Vec<Vec3> = (0..8).map(|i| if i % 2 == 0 { p[rng.random_range(0..n)] } else { [rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0), 0.0] }).collect();
        for &q in &queries {
            let b = ball_query(q, &p, r, k).unwrap();
            let (idx, fb) = brute_ball(q, &p, r, k);
            prop_assert_eq!(b.indices, idx);
            prop_assert_eq!(b.fallback, fb);
        }
        let got = knn(&queries, &p, k, ExecMode::Parallel).unwrap();
        for (qi, &q) in queries.iter().enumerate() {
            let want: Vec<usize> = sorted_by_distance(q, &p).iter().take(k).map(|x| x.1).collect();
            prop_assert_eq!(&got[qi * k..(qi + 1) * k], &want[..]);
        }
    }
}

#[test]
fn fps_examples() {
    let line: Vec<Vec3> = (0..10).map(|i| [i as f64, 0.0, 0.0]).collect();
    assert_eq!(fps_from(&line, 2, 0).unwrap(), vec![0, 9]);
    assert_eq!(fps(&line, 2).unwrap(), vec![0, 9]);
    let p = cloud(3, 64, false);
    let mut all = fps(&p, 64).unwrap();
    all.sort_unstable();
    assert_eq!(all, (0..64).collect::<Vec<_>>());
    assert_eq!(fps_from(&p, 16, 0).unwrap(), brute_fps(&p, 16, 0));
    assert!(fps(&p, 65).is_err());
    assert!(fps(&[], 1).is_err());
}

#[test]
fn ball_query_examples() {
    let p = cloud(5, 50, false);
    let b = ball_query(p[7], &p, 0.1, 4).unwrap();
    assert_eq!(b.indices[0], 7);
    assert!(!b.fallback);
    let far = ball_query([500.0, 0.0, 0.0], &p, 1.0, 5).unwrap();
    assert!(far.fallback);
    let nearest = sorted_by_distance([500.0, 0.0, 0.0], &p)[0].1;
    assert_eq!(far.indices, vec![nearest; 5]);
    assert!(ball_query([0.0; 3], &[], 1.0, 2).is_err());
}

#[test]
fn knn_examples() {
    let p = cloud(9, 40, false);
    assert_eq!(knn(&p, &p, 1, ExecMode::Sequential).unwrap(), (0..40).collect::<Vec<_>>());
    let mut two = cloud(10, 20, false);
    two.extend(cloud(11, 20, false).into_iter().map(|x| [x[0] + 1000.0, x[1], x[2]]));
    let nn = knn(&two, &two, 20, ExecMode::Sequential).unwrap();
    for (i, row) in nn.chunks(20).enumerate() {
        assert!(row.iter().all(|&j| (j < 20) == (i < 20)));
    }
    assert!(knn(&p, &[], 1, ExecMode::Sequential).is_err());
    assert!(knn(&p, &p, 41, ExecMode::Sequential).is_err());
}

fn small_backbone() -> (Backbone, ParamStore) {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let cfg = BackboneConfig {
        channels: 16,
        ..Default::default()
    };
    let bb = Backbone::init(&mut store, &mut rng, "backbone", &cfg).unwrap();
    (bb, store)
}

fn frame(seed: u64) -> Frame {
    let s = synth_generate(&SynthConfig { n_frames: 2, ..Default::default() }, seed).unwrap();
    s.sequence.frames[0].clone()
}

#[test]
fn backbone_shape_and_determinism() {
    let (bb, store) = small_backbone();
    let f = frame(1);
    let a = encode_backbone(&bb, &store, &f, ExecMode::Parallel).unwrap();
    assert_eq!((a.len(), a.channels()), (256, 16));
    let b = encode_backbone(&bb, &store, &f, ExecMode::Sequential).unwrap();
    assert_eq!(a, b);

    let mut small = f.clone();
    small.points.truncate(40);
    let c = encode_backbone(&bb, &store, &small, ExecMode::Parallel).unwrap();
    assert_eq!(c.len(), 256);
    small.points.truncate(7);
    assert!(encode_backbone(&bb, &store, &small, ExecMode::Parallel).is_err());
}

#[test]
fn backbone_is_permutation_invariant() {
    let (bb, store) = small_backbone();
    let f = frame(2);
    let mut g = f.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    use rand::seq::SliceRandom;
    g.points.shuffle(&mut rng);
    let a = encode_backbone(&bb, &store, &f, ExecMode::Parallel).unwrap();
    let b = encode_backbone(&bb, &store, &g, ExecMode::Parallel).unwrap();
    // Sampled coordinates come out in the same order; features agree up to
    // the order of max-pool operands.
    assert_eq!(a.coords, b.coords);
    assert!(a.feats.max_abs_diff(&b.feats) < 1e-12);
}

#[test]
fn backbone_under_rigid_motion() {
    let (bb, store) = small_backbone();
    let f = frame(3);
    let pose = Pose {
        q: Quat::from_yaw(0.3),
        t: [1.5, -2.0, 0.25],
    };
    let mut moved = f.clone();
    for p in &mut moved.points {
        let x = pose.apply([p.x, p.y, p.z]);
        *p = RadarPoint { x: x[0], y: x[1], z: x[2], ..*p };
    }
    let keep = bb.sample_indices(&f).unwrap();
    let keep_moved = bb.sample_indices(&moved).unwrap();
    let a = encode_backbone(&bb, &store, &f, ExecMode::Parallel).unwrap();
    let b = encode_backbone(&bb, &store, &moved, ExecMode::Parallel).unwrap();
    // Coordinates of the points sampled from the moved frame are the moved
    // coordinates of the same source points.
    for (i, &j) in keep_moved.iter().enumerate() {
        let want = pose.apply(f.points[j].xyz());
        assert!((0..3).all(|a| (b.coords[i][a] - want[a]).abs() < 1e-12));
    }
    // Level-1 relative coordinates rotate with the frame.
    let r = bb.cfg.radii[0];
    let xyz = f.xyz();
    let xyz_m = moved.xyz();
    for &c in keep.iter().take(32) {
        let q = radar_odom::pointops::ball_query(xyz[c], &xyz, r, bb.cfg.k).unwrap();
        let qm = radar_odom::pointops::ball_query(xyz_m[c], &xyz_m, r, bb.cfg.k).unwrap();
        assert_eq!(q.indices, qm.indices);
        for &j in &q.indices {
            let rel: Vec3 = std::array::from_fn(|a| (xyz[j][a] - xyz[c][a]) / r);
            let rel_m: Vec3 = std::array::from_fn(|a| (xyz_m[j][a] - xyz_m[c][a]) / r);
            let rot = pose.q.rotate(rel);
            assert!((0..3).all(|a| (rot[a] - rel_m[a]).abs() < 1e-12));
        }
    }
    assert_eq!(a.len(), b.len());
}
