use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::geom::{dist2_3, Vec3};
use crate::par::{self, ExecMode};

/// Index of the lexicographically smallest `(x, y, z)`; ties go to the lower index.
pub fn lexicographic_seed(points: &[Vec3]) -> Option<usize> {
    (0..points.len()).min_by(|&a, &b| {
        let (p, q) = (points[a], points[b]);
        p[0].total_cmp(&q[0])
            .then(p[1].total_cmp(&q[1]))
            .then(p[2].total_cmp(&q[2]))
            .then(a.cmp(&b))
    })
}

/// Farthest point sampling from the lexicographically smallest point.
pub fn fps(points: &[Vec3], m: usize) -> Result<Vec<usize>> {
    let seed = lexicographic_seed(points).ok_or(Error::EmptyCloud)?;
    fps_from(points, m, seed)
}

/// Greedy max-min sampling starting at `seed`.
///
/// Each step picks the unchosen point whose squared distance to the chosen
/// set is largest; ties go to the lowest index.
pub fn fps_from(points: &[Vec3], m: usize, seed: usize) -> Result<Vec<usize>> {
    let n = points.len();
    if n == 0 {
        return Err(Error::EmptyCloud);
    }
    if m == 0 || m > n {
        return Err(Error::invalid(format!("fps: m = {m} outside 1..={n}")));
    }
    if seed >= n {
        return Err(Error::invalid(format!("fps: seed {seed} >= {n}")));
    }
    let mut chosen = Vec::with_capacity(m);
    let mut taken = vec![false; n];
    let mut min_d = vec![f64::INFINITY; n];
    let mut cur = seed;
    for _ in 0..m {
        chosen.push(cur);
        taken[cur] = true;
        let c = points[cur];
        let mut best = usize::MAX;
        let mut best_d = f64::NEG_INFINITY;
        for i in 0..n {
            if taken[i] {
                continue;
            }
            let d = dist2_3(points[i], c);
            if d < min_d[i] {
                min_d[i] = d;
            }
            if min_d[i] > best_d {
                best_d = min_d[i];
                best = i;
            }
        }
        cur = best;
    }
    Ok(chosen)
}

/// Result of a radius search.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BallQuery {
    /// Exactly `k` indices.
    pub indices: Vec<usize>,
    /// Set when nothing lay within the radius and the global nearest point was used.
    pub fallback: bool,
}

fn by_dist_then_index(a: &(f64, usize), b: &(f64, usize)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

/// Up to `k` points within `radius` of `center`, nearest first.
///
/// Short results are padded with the nearest hit. With no hit at all the
/// global nearest point is repeated `k` times and `fallback` is set.
pub fn ball_query(center: Vec3, points: &[Vec3], radius: f64, k: usize) -> Result<BallQuery> {
    if points.is_empty() {
        return Err(Error::EmptyCloud);
    }
    if !(radius > 0.0) || k == 0 {
        return Err(Error::invalid(format!(
            "ball_query: radius {radius}, k {k}"
        )));
    }
    let r2 = radius * radius;
    let mut hits: Vec<(f64, usize)> = points
        .iter()
        .enumerate()
        .map(|(i, &p)| (dist2_3(p, center), i))
        .filter(|&(d, _)| d <= r2)
        .collect();
    if hits.is_empty() {
        let nearest = points
            .iter()
            .enumerate()
            .map(|(i, &p)| (dist2_3(p, center), i))
            .min_by(by_dist_then_index)
            .expect("non-empty")
            .1;
        return Ok(BallQuery {
            indices: vec![nearest; k],
            fallback: true,
        });
    }
    if hits.len() > k {
        hits.select_nth_unstable_by(k - 1, by_dist_then_index);
        hits.truncate(k);
    }
    hits.sort_unstable_by(by_dist_then_index);
    let mut indices: Vec<usize> = hits.iter().map(|h| h.1).collect();
    indices.resize(k, indices[0]);
    Ok(BallQuery {
        indices,
        fallback: false,
    })
}

/// Ball query for many centers; returns flattened `centers.len() * k` indices
/// and the number of fallbacks.
pub fn ball_query_batch(
    centers: &[Vec3],
    points: &[Vec3],
    radius: f64,
    k: usize,
    mode: ExecMode,
) -> Result<(Vec<usize>, usize)> {
    let res = par::map_slice(mode, centers, |&c| ball_query(c, points, radius, k));
    let mut idx = Vec::with_capacity(centers.len() * k);
    let mut fallbacks = 0;
    for r in res {
        let r = r?;
        fallbacks += r.fallback as usize;
        idx.extend(r.indices);
    }
    Ok((idx, fallbacks))
}

/// `k` nearest neighbors of one point, nearest first, ties by index.
pub fn knn_one(q: Vec3, target: &[Vec3], k: usize) -> Vec<usize> {
    let mut d: Vec<(f64, usize)> = target
        .iter()
        .enumerate()
        .map(|(i, &p)| (dist2_3(p, q), i))
        .collect();
    if k < d.len() {
        d.select_nth_unstable_by(k - 1, by_dist_then_index);
        d.truncate(k);
    }
    d.sort_unstable_by(by_dist_then_index);
    d.into_iter().map(|x| x.1).collect()
}

/// Flattened `query.len() * k` nearest-neighbor indices into `target`.
pub fn knn(query: &[Vec3], target: &[Vec3], k: usize, mode: ExecMode) -> Result<Vec<usize>> {
    if target.is_empty() {
        return Err(Error::EmptyCloud);
    }
    if k == 0 || k > target.len() {
        return Err(Error::invalid(format!(
            "knn: k = {k} outside 1..={}",
            target.len()
        )));
    }
    let rows = par::map_slice(mode, query, |&q| knn_one(q, target, k));
    Ok(rows.into_iter().flatten().collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fps_collinear_extremes() {
        let pts: Vec<Vec3> = (0..10).map(|i| [i as f64, 0.0, 0.0]).collect();
        assert_eq!(fps_from(&pts, 2, 0).unwrap(), vec![0, 9]);
        assert_eq!(fps(&pts, 2).unwrap(), vec![0, 9]);
    }

    #[test]
    fn fps_full_covers_all_even_with_duplicates() {
        let pts = vec![[1.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, 0.0]];
        let mut s = fps(&pts, 4).unwrap();
        assert_eq!(s[0], 2);
        s.sort();
        assert_eq!(s, vec![0, 1, 2, 3]);
        assert!(fps(&pts, 5).is_err());
    }

    #[test]
    fn ball_query_rules() {
        let pts = vec![[0.0, 0.0, 0.0], [0.05, 0.0, 0.0], [5.0, 0.0, 0.0]];
        let b = ball_query([0.05, 0.0, 0.0], &pts, 0.1, 3).unwrap();
        assert_eq!(b.indices, vec![1, 0, 1]);
        assert!(!b.fallback);
        let b = ball_query([10.0, 0.0, 0.0], &pts, 0.1, 4).unwrap();
        assert_eq!(b.indices, vec![2; 4]);
        assert!(b.fallback);
        assert!(matches!(ball_query([0.0; 3], &[], 1.0, 1), Err(Error::EmptyCloud)));
    }

    #[test]
    fn knn_self_and_clusters() {
        let mut pts: Vec<Vec3> = (0..5).map(|i| [i as f64 * 0.1, 0.0, 0.0]).collect();
        pts.extend((0..5).map(|i| [100.0 + i as f64 * 0.1, 0.0, 0.0]));
        let nn = knn(&pts, &pts, 1, ExecMode::Sequential).unwrap();
        assert_eq!(nn, (0..10).collect::<Vec<_>>());
        let nn = knn(&pts, &pts, 5, ExecMode::Parallel).unwrap();
        for (q, row) in nn.chunks(5).enumerate() {
            assert!(row.iter().all(|&j| (j < 5) == (q < 5)));
        }
        assert!(knn(&pts, &[], 1, ExecMode::Sequential).is_err());
    }
}
