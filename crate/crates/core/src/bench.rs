//! Wall-clock timing of `encode_all` over a grid of synthetic sizes.

use std::fmt::Write as _;
use std::time::Instant;

use crate::encoder::{Encoder, Layout, Normalization, ProjectionSet, ReferenceSet};
use crate::error::Result;
use crate::par::Exec;
use crate::synthetic::gaussian_features;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridPoint {
    pub users: usize,
    pub slices: usize,
    pub dim: usize,
    pub depth: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Timing {
    pub point: GridPoint,
    /// Fastest of the repeats, in seconds.
    pub seconds: f64,
}

/// Times concat-layout encoding of Gaussian features at one grid point.
pub fn time_encode(point: GridPoint, repeats: usize, exec: Exec, seed: u64) -> Result<Timing> {
    let layers = point.depth + 1;
    let features = gaussian_features(point.users, layers, point.dim, seed)?;
    let encoder = Encoder::new(
        ReferenceSet::gaussian(point.depth, point.dim, seed ^ 1, 1.0)?,
        ProjectionSet::sample(point.slices, point.dim, seed ^ 2),
        Layout::Concat,
        Normalization::Isometric,
    )?;
    let mut best = f64::INFINITY;
    for _ in 0..repeats.max(1) {
        let start = Instant::now();
        let out = encoder.encode_all(&features, exec)?;
        let elapsed = start.elapsed().as_secs_f64();
        std::hint::black_box(out);
        best = best.min(elapsed);
    }
    Ok(Timing { point, seconds: best })
}

/// Full cartesian grid over `users × slices × dims`.
pub fn run_grid(
    users: &[usize],
    slices: &[usize],
    dims: &[usize],
    depth: usize,
    repeats: usize,
    exec: Exec,
) -> Result<Vec<Timing>> {
    let mut out = Vec::new();
    for &dim in dims {
        for &s in slices {
            for &m in users {
                let point = GridPoint {
                    users: m,
                    slices: s,
                    dim,
                    depth,
                };
                out.push(time_encode(point, repeats, exec, 42)?);
            }
        }
    }
    Ok(out)
}

pub fn render_table(rows: &[Timing]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:>8} {:>6} {:>6} {:>4} {:>12}", "M", "S", "d", "L", "seconds");
    for t in rows {
        let p = t.point;
        let _ = writeln!(
            out,
            "{:>8} {:>6} {:>6} {:>4} {:>12.6}",
            p.users, p.slices, p.dim, p.depth, t.seconds
        );
    }
    out
}
