//! Deterministic parallel ensemble drivers.
//!
//! Particles are processed in fixed-size index chunks; each chunk produces a
//! partial result and the partials are combined in chunk order, so results do
//! not depend on the number of worker threads.

use rayon::prelude::*;

use crate::error::Result;
use crate::geometry::Point;
use crate::sticky_sde::{InitialLaw, NoiseStream, Particle, PathContext};

pub const CHUNK: usize = 256;

/// Maps `f` over consecutive index ranges covering `0..n` and returns the
/// partials in index order.
pub fn map_chunks<T, F>(n: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(std::ops::Range<usize>) -> Result<T> + Sync + Send,
{
    let chunks = n.div_ceil(CHUNK);
    (0..chunks)
        .into_par_iter()
        .map(|c| f(c * CHUNK..((c + 1) * CHUNK).min(n)))
        .collect()
}

/// Simulates `n` independent paths and returns their final states in index order.
pub fn final_particles(
    ctx: &PathContext<'_>,
    initial: &InitialLaw,
    seed: u64,
    n: usize,
) -> Result<Vec<Particle>> {
    ctx.check()?;
    initial.validate(ctx.domain)?;
    let parts = map_chunks(n, |range| {
        range
            .map(|i| {
                let mut s = NoiseStream::for_particle(seed, i, ctx.domain, ctx.params);
                ctx.run(initial, &mut s, |_, _| {})
            })
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(parts.into_iter().flatten().collect())
}

/// Per-grid-point weighted sums `(sum w, sum w r_1, sum w r_2, sum w^2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSums {
    pub sums: Vec<[f64; 4]>,
}

impl GridSums {
    pub fn zeros(len: usize) -> Self {
        Self {
            sums: vec![[0.0; 4]; len],
        }
    }

    #[inline]
    pub fn add(&mut self, k: usize, w: f64, r: Point) {
        let s = &mut self.sums[k];
        s[0] += w;
        s[1] += w * r[0];
        s[2] += w * r[1];
        s[3] += w * w;
    }

    pub fn merge(&mut self, other: &GridSums) {
        for (a, b) in self.sums.iter_mut().zip(&other.sums) {
            for j in 0..4 {
                a[j] += b[j];
            }
        }
    }
}
