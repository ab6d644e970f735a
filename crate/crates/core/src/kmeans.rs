//! Lloyd's k-means with k-means++ seeding over row-major vectors.

use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    /// k × dim, row-major
    pub centroids: Vec<f64>,
    pub dim: usize,
    /// Inertia of the seeds followed by the inertia after each iteration.
    pub inertia: Vec<f64>,
}

impl KMeans {
    pub fn k(&self) -> usize {
        self.centroids.len() / self.dim
    }

    pub fn centroid(&self, c: usize) -> &[f64] {
        &self.centroids[c * self.dim..(c + 1) * self.dim]
    }
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Closest centroid by squared distance; ties go to the lowest id.
pub fn nearest(point: &[f64], centroids: &[f64], dim: usize) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.chunks_exact(dim).enumerate() {
        let d = sq_dist(point, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

pub fn kmeans(vectors: &[f64], dim: usize, k: usize, iterations: usize, seed: u64) -> Result<KMeans> {
    if dim == 0 || vectors.is_empty() {
        return Err(Error::Empty("k-means input"));
    }
    if vectors.len() % dim != 0 {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: vectors.len() % dim,
        });
    }
    let n = vectors.len() / dim;
    if k == 0 || k > n {
        return Err(Error::InvalidConfig(alloc::format!(
            "k-means needs 1 <= k <= n, got k={k}, n={n}"
        )));
    }
    if iterations == 0 {
        return Err(Error::InvalidConfig("k-means needs at least one iteration".into()));
    }
    let point = |i: usize| &vectors[i * dim..(i + 1) * dim];

    // k-means++ seeding
    let mut r = rng::rng_for(seed, &[b"kmeans++"]);
    let mut centroids = Vec::with_capacity(k * dim);
    centroids.extend_from_slice(point(r.gen_range(0..n)));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(point(i), &centroids[..dim])).collect();
    for _ in 1..k {
        let total: f64 = d2.iter().sum();
        let chosen = if total > 0.0 {
            let mut u = r.gen::<f64>() * total;
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if u < w {
                    pick = i;
                    break;
                }
                u -= w;
            }
            pick
        } else {
            r.gen_range(0..n)
        };
        let start = centroids.len();
        centroids.extend_from_slice(point(chosen));
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(point(i), &centroids[start..]));
        }
    }

    let mut assign = alloc::vec![0usize; n];
    let mut dist = alloc::vec![0.0; n];
    let mut inertia = Vec::with_capacity(iterations + 1);
    let assign_all = |centroids: &[f64], assign: &mut [usize], dist: &mut [f64]| {
        let mut total = 0.0;
        for i in 0..n {
            let (c, d) = nearest(point(i), centroids, dim);
            assign[i] = c;
            dist[i] = d;
            total += d;
        }
        total
    };
    inertia.push(assign_all(&centroids, &mut assign, &mut dist));

    for _ in 0..iterations {
        let mut sums = alloc::vec![0.0; k * dim];
        let mut counts = alloc::vec![0usize; k];
        for i in 0..n {
            let c = assign[i];
            counts[c] += 1;
            for (s, x) in sums[c * dim..(c + 1) * dim].iter_mut().zip(point(i)) {
                *s += x;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                for (dst, s) in centroids[c * dim..(c + 1) * dim]
                    .iter_mut()
                    .zip(&sums[c * dim..(c + 1) * dim])
                {
                    *dst = s / counts[c] as f64;
                }
            }
        }
        // empty clusters take the points farthest from their new centroid
        let empties: Vec<usize> = (0..k).filter(|&c| counts[c] == 0).collect();
        if !empties.is_empty() {
            let mut far: Vec<(f64, usize)> = (0..n)
                .map(|i| {
                    let c = assign[i];
                    (sq_dist(point(i), &centroids[c * dim..(c + 1) * dim]), i)
                })
                .collect();
            far.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            for (c, (_, i)) in empties.into_iter().zip(far) {
                centroids[c * dim..(c + 1) * dim].copy_from_slice(point(i));
            }
        }
        let prev = assign.clone();
        inertia.push(assign_all(&centroids, &mut assign, &mut dist));
        if prev == assign {
            break;
        }
    }

    Ok(KMeans {
        centroids,
        dim,
        inertia,
    })
}
