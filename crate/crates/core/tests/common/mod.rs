//! Direct-formula oracles and random-instance helpers shared by the
//! integration suites. Nothing here calls into the code under test.

#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Column means by explicit index arithmetic over a row-major buffer.
pub fn naive_column_mean(shape: &[usize], data: &[f32]) -> Vec<f64> {
    let width = shape[shape.len() - 1];
    let rows: usize = shape[..shape.len() - 1].iter().product();
    let mut out = Vec::with_capacity(width);
    for j in 0..width {
        let mut s = 0.0f64;
        for r in 0..rows {
            s += data[r * width + j] as f64;
        }
        out.push(s / rows as f64);
    }
    out
}

pub fn direct_distance(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let mut s = 0.0f64;
    for i in 0..a.len() {
        let d = a[i] - b[i];
        s += d * d;
    }
    s.sqrt()
}

/// Two-pass population mean and standard deviation per dimension.
pub fn two_pass_stats(vs: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let n = vs.len() as f64;
    let dim = vs[0].len();
    let mut mean = vec![0.0; dim];
    for v in vs {
        for j in 0..dim {
            mean[j] += v[j];
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    let mut var = vec![0.0; dim];
    for v in vs {
        for j in 0..dim {
            var[j] += (v[j] - mean[j]).powi(2);
        }
    }
    (mean, var.into_iter().map(|x| (x / n).sqrt()).collect())
}

pub fn normalize(v: &[f64], mean: &[f64], std: &[f64], eps: f64) -> Vec<f64> {
    (0..v.len())
        .map(|j| (v[j] - mean[j]) / if std[j] > eps { std[j] } else { eps })
        .collect()
}

/// Mean of the raw vectors, then normalized.
pub fn prototype_oracle(vs: &[Vec<f64>], mean: &[f64], std: &[f64], eps: f64) -> Vec<f64> {
    let dim = vs[0].len();
    let mut acc = vec![0.0; dim];
    for v in vs {
        for j in 0..dim {
            acc[j] += v[j];
        }
    }
    let m: Vec<f64> = acc.iter().map(|a| a / vs.len() as f64).collect();
    normalize(&m, mean, std, eps)
}

/// Exhaustive K-NN: a point is selected when fewer than `k` points precede it
/// in (distance, class, position) order, counted pairwise. Votes are tallied
/// and the most-voted class wins, lowest class id on ties.
pub fn brute_force_knn(points: &[(u32, Vec<f64>)], query: &[f64], k: usize) -> u32 {
    let d: Vec<f64> = points.iter().map(|(_, p)| direct_distance(p, query)).collect();
    let key = |i: usize| (d[i], points[i].0, i);
    let mut votes: BTreeMap<u32, usize> = BTreeMap::new();
    for i in 0..points.len() {
        let before = (0..points.len())
            .filter(|&j| {
                let (dj, cj, pj) = key(j);
                let (di, ci, pi) = key(i);
                dj < di || (dj == di && (cj < ci || (cj == ci && pj < pi)))
            })
            .count();
        if before < k {
            *votes.entry(points[i].0).or_default() += 1;
        }
    }
    let best = *votes.values().max().unwrap();
    *votes.iter().find(|(_, &n)| n == best).unwrap().0
}

pub fn random_vec(rng: &mut ChaCha8Rng, dim: usize, scale: f64) -> Vec<f64> {
    if scale == 0.0 {
        return vec![0.0; dim];
    }
    (0..dim).map(|_| rng.random_range(-scale..scale)).collect()
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

/// One random K-NN instance; every third one gets exact distance ties.
pub struct KnnInstance {
    pub points: Vec<(u32, Vec<f64>)>,
    pub queries: Vec<Vec<f64>>,
    pub k: usize,
}

pub fn knn_instance(rng: &mut ChaCha8Rng, index: usize) -> KnnInstance {
    let dim = rng.random_range(1..=64);
    let n_classes = rng.random_range(1..=12u32);
    let n = rng.random_range(1..=460);
    let k = [1, 1, 3, 5, 7][rng.random_range(0..5)];
    let mut points: Vec<(u32, Vec<f64>)> = (0..n)
        .map(|_| (rng.random_range(0..n_classes), random_vec(rng, dim, 1.0)))
        .collect();
    let mut queries: Vec<Vec<f64>> = (0..5).map(|_| random_vec(rng, dim, 1.2)).collect();
    if index.is_multiple_of(3) {
        // Duplicates under different labels, queried at the duplicate itself.
        for _ in 0..rng.random_range(1..=20) {
            let src = rng.random_range(0..points.len());
            let copy = points[src].1.clone();
            points.push((rng.random_range(0..n_classes + 3), copy.clone()));
            queries.push(copy);
        }
        // Mirror pairs around a query: equal distances by symmetry.
        let centre = vec![0.0; dim];
        for _ in 0..5 {
            let mut a = vec![0.0; dim];
            let axis = rng.random_range(0..dim);
            a[axis] = 0.5;
            let mut b = a.clone();
            b[axis] = -0.5;
            points.push((rng.random_range(0..n_classes + 3), a));
            points.push((rng.random_range(0..n_classes + 3), b));
        }
        queries.push(centre);
    }
    assert!(points.len() <= 500);
    KnnInstance { points, queries, k }
}
