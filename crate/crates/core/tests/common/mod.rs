//! Brute-force oracles and fixtures shared by the integration tests.
//!
//! Every oracle here is written directly from the definitions with plain
//! loops over `f64` and shares no code with the library.

#![allow(dead_code)]

use proxyformer::geometry::PointCloud;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type P = [f64; 3];

pub fn d2(a: &P, b: &P) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

pub fn cloud(points: &[P]) -> PointCloud<f64> {
    PointCloud::new(points.to_vec()).unwrap()
}

pub fn random_points(rng: &mut impl Rng, n: usize) -> Vec<P> {
    (0..n)
        .map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
        .collect()
}

/// Points on a coarse integer lattice, so distance ties are common.
pub fn lattice_points(rng: &mut impl Rng, n: usize) -> Vec<P> {
    (0..n)
        .map(|_| {
            [
                rng.random_range(0..4) as f64,
                rng.random_range(0..4) as f64,
                rng.random_range(0..3) as f64,
            ]
        })
        .collect()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Nearest index in `to` (lowest index on ties) and its squared distance.
pub fn nearest(x: &P, to: &[P]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, y) in to.iter().enumerate() {
        let d = d2(x, y);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

pub fn oracle_cd_l1(a: &[P], b: &[P]) -> f64 {
    let ab: f64 = a.iter().map(|x| nearest(x, b).1.sqrt()).sum::<f64>() / a.len() as f64;
    let ba: f64 = b.iter().map(|y| nearest(y, a).1.sqrt()).sum::<f64>() / b.len() as f64;
    0.5 * (ab + ba)
}

pub fn oracle_cd_l2(a: &[P], b: &[P]) -> f64 {
    let ab: f64 = a.iter().map(|x| nearest(x, b).1).sum::<f64>() / a.len() as f64;
    let ba: f64 = b.iter().map(|y| nearest(y, a).1).sum::<f64>() / b.len() as f64;
    ab + ba
}

pub fn oracle_dcd(a: &[P], b: &[P], alpha: f64) -> f64 {
    let half = |from: &[P], to: &[P]| {
        let matches: Vec<(usize, f64)> = from.iter().map(|x| nearest(x, to)).collect();
        let mut total = 0.0;
        for &(j, dist2) in &matches {
            let n_y = matches.iter().filter(|m| m.0 == j).count() as f64;
            total += 1.0 - (-alpha * dist2.sqrt()).exp() / n_y;
        }
        total / from.len() as f64
    };
    0.5 * (half(a, b) + half(b, a))
}

pub fn oracle_fscore(pred: &[P], gt: &[P], t: f64) -> f64 {
    let precision = pred.iter().filter(|x| nearest(x, gt).1.sqrt() < t).count() as f64 / pred.len() as f64;
    let recall = gt.iter().filter(|y| nearest(y, pred).1.sqrt() < t).count() as f64 / gt.len() as f64;
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

pub fn oracle_fidelity(partial: &[P], output: &[P]) -> f64 {
    partial.iter().map(|x| nearest(x, output).1.sqrt()).sum::<f64>() / partial.len() as f64
}

/// FPS by recomputing every min-distance from scratch at each step.
pub fn oracle_fps(points: &[P], m: usize, seed: usize) -> Vec<usize> {
    let mut sel = vec![seed];
    while sel.len() < m {
        let mut best: Option<(usize, f64)> = None;
        for i in 0..points.len() {
            if sel.contains(&i) {
                continue;
            }
            let md = sel.iter().map(|&s| d2(&points[i], &points[s])).fold(f64::INFINITY, f64::min);
            if best.is_none_or(|(_, bd)| md > bd) {
                best = Some((i, md));
            }
        }
        sel.push(best.unwrap().0);
    }
    sel
}

/// k-NN by a full stable sort of all reference indices.
pub fn oracle_knn(reference: &[P], queries: &[P], k: usize) -> Vec<usize> {
    let mut out = Vec::new();
    for q in queries {
        let mut idx: Vec<usize> = (0..reference.len()).collect();
        idx.sort_by(|&a, &b| d2(q, &reference[a]).partial_cmp(&d2(q, &reference[b])).unwrap().then(a.cmp(&b)));
        out.extend_from_slice(&idx[..k]);
    }
    out
}

pub fn shuffled<T: Clone>(items: &[T], seed: u64) -> (Vec<T>, Vec<usize>) {
    let mut r = rng(seed);
    let mut perm: Vec<usize> = (0..items.len()).collect();
    for i in (1..perm.len()).rev() {
        let j = r.random_range(0..=i);
        perm.swap(i, j);
    }
    (perm.iter().map(|&i| items[i].clone()).collect(), perm)
}
