#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use radar_odom::geom::{dist2_3, Vec3};

pub fn brute_fps(p: &[Vec3], m: usize, seed: usize) -> Vec<usize> {
    let mut chosen = vec![seed];
    while chosen.len() < m {
        let mut best = (f64::NEG_INFINITY, usize::MAX);
        for i in 0..p.len() {
            if chosen.contains(&i) {
                continue;
            }
            let d = chosen.iter().map(|&c| dist2_3(p[i], p[c])).fold(f64::INFINITY, f64::min);
            if d > best.0 {
                best = (d, i);
            }
        }
        chosen.push(best.1);
    }
    chosen
}

pub fn sorted_by_distance(q: Vec3, p: &[Vec3]) -> Vec<(f64, usize)> {
    let mut d: Vec<(f64, usize)> = p.iter().enumerate().map(|(i, &x)| (dist2_3(x, q), i)).collect();
    d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    d
}

pub fn brute_ball(q: Vec3, p: &[Vec3], r: f64, k: usize) -> (Vec<usize>, bool) {
    let all = sorted_by_distance(q, p);
    let mut hits: Vec<usize> = all.iter().filter(|x| x.0 <= r * r).map(|x| x.1).take(k).collect();
    if hits.is_empty() {
        return (vec![all[0].1; k], true);
    }
    while hits.len() < k {
        hits.push(hits[0]);
    }
    (hits, false)
}

pub fn cloud(seed: u64, n: usize, grid: bool) -> Vec<Vec3> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            if grid {
                // coarse lattice to force distance ties
                [
                    rng.random_range(0..6) as f64,
                    rng.random_range(0..6) as f64,
                    rng.random_range(0..3) as f64,
                ]
            } else {
                [
                    rng.random_range(-20.0..20.0),
                    rng.random_range(-20.0..20.0),
                    rng.random_range(-3.0..3.0),
                ]
            }
        })
        .collect()
}
