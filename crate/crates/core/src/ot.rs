//! Reference optimal-transport distances between equal-size, uniformly
//! weighted empirical distributions.
//!
//! Everything here is deliberately plain: sort-and-match for 1D W2, an
//! exhaustive permutation search for checking it, and a direct
//! Monte-Carlo sliced distance. The encoder is tested against these.

use crate::encoder::ProjectionSet;
use crate::error::{Error, Result};

/// `n` points in `R^d`, each carrying mass `1/n`.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSet {
    dim: usize,
    coords: Vec<f64>,
}

impl PointSet {
    pub fn new(points: Vec<Vec<f64>>) -> Result<Self> {
        let dim = points.first().map(Vec::len).ok_or(Error::EmptyInput)?;
        if dim == 0 {
            return Err(Error::Dimension("points must have at least one coordinate".into()));
        }
        let mut coords = Vec::with_capacity(points.len() * dim);
        for p in &points {
            if p.len() != dim {
                return Err(Error::Dimension(format!(
                    "point of length {} in a set of dimension {dim}",
                    p.len()
                )));
            }
            if p.iter().any(|x| !x.is_finite()) {
                return Err(Error::Invalid("non-finite coordinate".into()));
            }
            coords.extend_from_slice(p);
        }
        Ok(PointSet { dim, coords })
    }

    /// Builds from a row-major buffer of `len / dim` points.
    pub fn from_flat(dim: usize, coords: Vec<f64>) -> Result<Self> {
        if dim == 0 || coords.is_empty() || coords.len() % dim != 0 {
            return Err(Error::Dimension(format!(
                "{} coordinates cannot form points of dimension {dim}",
                coords.len()
            )));
        }
        if coords.iter().any(|x| !x.is_finite()) {
            return Err(Error::Invalid("non-finite coordinate".into()));
        }
        Ok(PointSet { dim, coords })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn point(&self, k: usize) -> &[f64] {
        &self.coords[k * self.dim..(k + 1) * self.dim]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.coords.chunks_exact(self.dim)
    }
}

fn check_lengths(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!(
            "empirical distributions of different sizes ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(())
}

/// 1D Wasserstein-2 distance by monotone (sorted) matching.
pub fn w2_1d(a: &[f64], b: &[f64]) -> Result<f64> {
    check_lengths(a, b)?;
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let cost: f64 = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok((cost / a.len() as f64).sqrt())
}

pub const BRUTEFORCE_MAX_N: usize = 8;

/// 1D Wasserstein-2 distance by minimising over every bijection.
/// Limited to `n <= 8`.
pub fn w2_1d_bruteforce(a: &[f64], b: &[f64]) -> Result<f64> {
    check_lengths(a, b)?;
    let n = a.len();
    if n > BRUTEFORCE_MAX_N {
        return Err(Error::Invalid(format!(
            "brute-force transport limited to n <= {BRUTEFORCE_MAX_N}, got {n}"
        )));
    }
    let cost = |perm: &[usize]| -> f64 {
        perm.iter()
            .enumerate()
            .map(|(k, &j)| (a[k] - b[j]) * (a[k] - b[j]))
            .sum()
    };
    // Heap's algorithm, iterative form
    let mut perm: Vec<usize> = (0..n).collect();
    let mut c = vec![0usize; n];
    let mut best = cost(&perm);
    let mut i = 1;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            best = best.min(cost(&perm));
            c[i] += 1;
            i = 1;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    Ok((best / n as f64).sqrt())
}

fn project_points(set: &PointSet, theta: &[f64]) -> Vec<f64> {
    set.points()
        .map(|p| {
            let mut acc = 0.0;
            for k in 0..p.len() {
                acc += p[k] * theta[k];
            }
            acc
        })
        .collect()
}

/// Monte-Carlo sliced Wasserstein-2 distance over the given directions:
/// `sqrt(mean_s W2(θ_sᵀP, θ_sᵀQ)²)`.
pub fn mc_sw2(p: &PointSet, q: &PointSet, proj: &ProjectionSet) -> Result<f64> {
    if p.dim() != q.dim() || p.dim() != proj.dim() {
        return Err(Error::Dimension(format!(
            "point dims {} and {} with projection dim {}",
            p.dim(),
            q.dim(),
            proj.dim()
        )));
    }
    if p.len() != q.len() {
        return Err(Error::Dimension(format!(
            "point sets of different sizes ({} vs {})",
            p.len(),
            q.len()
        )));
    }
    let mut total = 0.0;
    for theta in proj.directions() {
        let w = w2_1d(&project_points(p, theta), &project_points(q, theta))?;
        total += w * w;
    }
    Ok((total / proj.len() as f64).sqrt())
}
