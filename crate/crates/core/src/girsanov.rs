//! Mean-field moment curves under the controlled measure.
//!
//! Moments `E^u[r(X_t)]` are estimated either by reweighting paths of the
//! uncontrolled dynamics with their likelihood `L^u` (self-normalised
//! importance sampling) or by simulating the controlled dynamics directly.
//! The fixed point of the moment map is found by Picard iteration with frozen
//! noise, and the interacting N-particle system serves as an independent
//! approximation of the same law.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::control::{ControlLaw, MomentFn};
use crate::ensemble::{map_chunks, GridSums};
use crate::error::{Error, Result};
use crate::geometry::{norm, sub, Domain, Point};
use crate::sticky_sde::{Drive, InitialLaw, NoiseStream, Particle, PathContext, SchemeParams};

/// Moment values on the simulation grid `t_k = k dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanFieldCurve {
    pub dt: f64,
    pub moment: MomentFn,
    pub values: Vec<Point>,
}

impl MeanFieldCurve {
    pub fn constant(params: &SchemeParams, moment: MomentFn, value: Point) -> Self {
        Self {
            dt: params.dt,
            moment,
            values: vec![value; params.steps() + 1],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn value(&self, k: usize) -> Point {
        self.values[k]
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    /// Sup over the grid of the Euclidean distance between moment values.
    pub fn distance(&self, other: &MeanFieldCurve) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| norm(sub(*a, *b)))
            .fold(0.0, f64::max)
    }

    /// CSV rows `t,m_x,m_y,mode,iteration` without header.
    pub fn write_csv_rows(&self, out: &mut String, mode: &str, iteration: usize) {
        for (k, v) in self.values.iter().enumerate() {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                crate::io::fmt_f64(self.time(k)),
                crate::io::fmt_f64(v[0]),
                crate::io::fmt_f64(v[1]),
                mode,
                iteration
            );
        }
    }
}

/// Self-normalised weights `exp(logL_i) / sum_j exp(logL_j)`.
pub fn self_normalized_weights(log_ls: &[f64]) -> Result<Vec<f64>> {
    if log_ls.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    let shift = log_ls.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = log_ls.iter().map(|l| (l - shift).exp()).collect();
    let total: f64 = w.iter().sum();
    Ok(w.into_iter().map(|x| x / total).collect())
}

/// `(sum w)^2 / sum w^2` for unnormalised log-weights.
pub fn effective_sample_size(log_ls: &[f64]) -> f64 {
    let shift = log_ls.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (s, s2) = log_ls.iter().fold((0.0, 0.0), |(s, s2), l| {
        let w = (l - shift).exp();
        (s + w, s2 + w * w)
    });
    s * s / s2
}

/// Self-normalised estimate of `E^u[r(X)]` from particles carrying `logL`
/// from a common reference simulation.
pub fn weighted_moment(particles: &[Particle], r: impl Fn(Point) -> Point) -> Result<Point> {
    let log_ls: Vec<f64> = particles.iter().map(|p| p.log_l).collect();
    let w = self_normalized_weights(&log_ls)?;
    Ok(particles.iter().zip(&w).fold([0.0, 0.0], |acc, (p, &wi)| {
        let v = r(p.x);
        [acc[0] + wi * v[0], acc[1] + wi * v[1]]
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EstimationMode {
    /// Uncontrolled paths reweighted by the likelihood.
    #[serde(rename = "weighted")]
    WeightedReference,
    /// Paths of the controlled dynamics driven by the candidate curve.
    #[serde(rename = "direct")]
    DirectParticle,
}

impl EstimationMode {
    pub fn name(self) -> &'static str {
        match self {
            EstimationMode::WeightedReference => "weighted",
            EstimationMode::DirectParticle => "direct",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedPointConfig {
    pub mode: EstimationMode,
    /// Stop once the sup-grid distance between successive iterates is at most this.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub n_particles: usize,
    /// Draw new noise each iteration instead of reusing the first draw.
    pub fresh_noise: bool,
    /// A grid point counts as weight collapse when ESS / N falls below this.
    pub ess_fraction: f64,
}

impl FixedPointConfig {
    pub fn new(mode: EstimationMode, n_particles: usize) -> Self {
        Self {
            mode,
            tolerance: 1e-4,
            max_iterations: 50,
            n_particles,
            fresh_noise: false,
            ess_fraction: 0.01,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance >= 0.0) {
            return Err(Error::InvalidParams(
                "fixed-point tolerance must be >= 0".into(),
            ));
        }
        if self.n_particles < 2 {
            return Err(Error::InvalidParams(
                "fixed-point solve needs at least 2 particles".into(),
            ));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidParams("max_iterations must be >= 1".into()));
        }
        Ok(())
    }
}

/// Result of one application of the moment map.
#[derive(Debug, Clone)]
pub struct MomentPass {
    pub curve: MeanFieldCurve,
    /// Smallest ESS / N over the grid (1 in direct mode).
    pub min_ess_fraction: f64,
    /// Final states in particle order.
    pub finals: Vec<Particle>,
}

/// Applies the moment map once: estimates `E^u[r(X_t)]` on the grid when the
/// control reads `input` as its mean field.
#[allow(clippy::too_many_arguments)]
pub fn moment_map(
    domain: &Domain,
    initial: &InitialLaw,
    control: &ControlLaw,
    input: Option<&MeanFieldCurve>,
    moment: MomentFn,
    params: &SchemeParams,
    mode: EstimationMode,
    n: usize,
    seed: u64,
) -> Result<MomentPass> {
    let drive = match mode {
        EstimationMode::WeightedReference => Drive::Reference,
        EstimationMode::DirectParticle => Drive::Controlled,
    };
    let ctx = PathContext::new(domain, params, control, input, drive);
    ctx.check()?;
    initial.validate(domain)?;
    if n == 0 {
        return Err(Error::EmptyEnsemble);
    }
    let len = params.steps() + 1;
    let weighted = mode == EstimationMode::WeightedReference;
    let parts = map_chunks(n, |range| {
        let mut sums = GridSums::zeros(len);
        let mut finals = Vec::with_capacity(range.len());
        for i in range {
            let mut s = NoiseStream::for_particle(seed, i, domain, params);
            let last = ctx.run(initial, &mut s, |k, p| {
                let w = if weighted { p.log_l.exp() } else { 1.0 };
                sums.add(k, w, moment.apply(p.x));
            })?;
            finals.push(last);
        }
        Ok((sums, finals))
    })?;
    let mut total = GridSums::zeros(len);
    let mut finals = Vec::with_capacity(n);
    for (sums, f) in parts {
        total.merge(&sums);
        finals.extend(f);
    }
    let mut min_ess = 1.0f64;
    let values = total
        .sums
        .iter()
        .map(|s| {
            min_ess = min_ess.min(s[0] * s[0] / s[3] / n as f64);
            [s[1] / s[0], s[2] / s[0]]
        })
        .collect();
    Ok(MomentPass {
        curve: MeanFieldCurve {
            dt: params.dt,
            moment,
            values,
        },
        min_ess_fraction: min_ess,
        finals,
    })
}

#[derive(Debug, Clone)]
pub struct PicardResult {
    pub curve: MeanFieldCurve,
    /// Iterates `m_0, m_1, ...`; `m_0` is the image of the initial guess.
    pub iterates: Vec<MeanFieldCurve>,
    /// `distances[k - 1] = |m_k - m_{k-1}|` for `k >= 1`.
    pub distances: Vec<f64>,
    /// Number of iterations whose ESS fell below the configured fraction.
    pub weight_collapse_iterations: usize,
    /// Final states of the last pass (weights in `log_l` for the weighted mode).
    pub finals: Vec<Particle>,
}

impl PicardResult {
    pub fn iterations(&self) -> usize {
        self.distances.len()
    }

    pub fn to_csv(&self, mode: EstimationMode) -> String {
        let mut out = String::from("t,m_x,m_y,mode,iteration\n");
        for (i, c) in self.iterates.iter().enumerate() {
            c.write_csv_rows(&mut out, mode.name(), i);
        }
        out
    }
}

/// Initial guess: the moment of the bounding-box centre, constant in time.
pub fn default_guess(domain: &Domain, moment: MomentFn, params: &SchemeParams) -> MeanFieldCurve {
    let (lo, hi) = domain.bounding_box();
    let c = [0.5 * (lo[0] + hi[0]), 0.5 * (lo[1] + hi[1])];
    MeanFieldCurve::constant(params, moment, moment.apply(c))
}

/// Picard iteration `m_k = Phi(m_{k-1})` of the moment map until successive
/// iterates are within `config.tolerance`.
pub fn picard_solve(
    domain: &Domain,
    initial: &InitialLaw,
    control: &ControlLaw,
    config: &FixedPointConfig,
    params: &SchemeParams,
    seed: u64,
) -> Result<PicardResult> {
    config.validate()?;
    let moment = control.moment().unwrap_or(MomentFn::Identity);
    let guess = default_guess(domain, moment, params);
    picard_solve_from(domain, initial, control, config, params, seed, guess)
}

pub fn picard_solve_from(
    domain: &Domain,
    initial: &InitialLaw,
    control: &ControlLaw,
    config: &FixedPointConfig,
    params: &SchemeParams,
    seed: u64,
    guess: MeanFieldCurve,
) -> Result<PicardResult> {
    config.validate()?;
    let moment = guess.moment;
    let pass = |input: &MeanFieldCurve, iteration: usize| {
        let s = if config.fresh_noise {
            seed.wrapping_add(iteration as u64)
        } else {
            seed
        };
        moment_map(
            domain,
            initial,
            control,
            Some(input),
            moment,
            params,
            config.mode,
            config.n_particles,
            s,
        )
    };
    let mut collapses = 0usize;
    let mut last = pass(&guess, 0)?;
    if last.min_ess_fraction < config.ess_fraction {
        collapses += 1;
    }
    let mut iterates = vec![last.curve.clone()];
    let mut distances = Vec::new();
    for it in 1..=config.max_iterations {
        let next = pass(&last.curve, it)?;
        if next.min_ess_fraction < config.ess_fraction {
            collapses += 1;
        }
        let d = next.curve.distance(&last.curve);
        distances.push(d);
        iterates.push(next.curve.clone());
        last = next;
        if d <= config.tolerance {
            return Ok(PicardResult {
                curve: last.curve,
                iterates,
                distances,
                weight_collapse_iterations: collapses,
                finals: last.finals,
            });
        }
    }
    Err(Error::NoConvergence {
        iterations: config.max_iterations,
        distances,
    })
}

/// Outcome of the interacting N-particle simulation.
#[derive(Debug, Clone)]
pub struct ParticleSystemRun {
    pub finals: Vec<Particle>,
    /// Empirical moment on the grid.
    pub curve: MeanFieldCurve,
    /// Attached fraction over the second half of the grid, pooled.
    pub occupation: f64,
}

/// Interacting particle system: every particle feeds back on the empirical
/// moment of the whole ensemble, frozen over each step.
pub fn run_particle_system(
    domain: &Domain,
    initial: &InitialLaw,
    control: &ControlLaw,
    n: usize,
    params: &SchemeParams,
    seed: u64,
) -> Result<ParticleSystemRun> {
    if !initial.is_nonatomic() {
        return Err(Error::InvalidParams(
            "the particle system needs a nonatomic initial law".into(),
        ));
    }
    if n == 0 {
        return Err(Error::EmptyEnsemble);
    }
    params.validate_for(domain)?;
    control.validate()?;
    initial.validate(domain)?;
    let moment = control.moment().unwrap_or(MomentFn::Identity);
    // the context never reads a curve; the empirical moment is passed explicitly
    let ctx = PathContext::new(domain, params, control, None, Drive::Controlled);

    let mut streams: Vec<NoiseStream> = (0..n)
        .map(|i| NoiseStream::for_particle(seed, i, domain, params))
        .collect();
    let mut particles: Vec<Particle> = streams
        .iter_mut()
        .map(|s| ctx.start(initial, s))
        .collect::<Result<_>>()?;

    let empirical = |ps: &[Particle]| {
        let s = ps.iter().fold([0.0, 0.0], |acc, p| {
            let v = moment.apply(p.x);
            [acc[0] + v[0], acc[1] + v[1]]
        });
        [s[0] / ps.len() as f64, s[1] / ps.len() as f64]
    };

    let steps = params.steps();
    let half = steps / 2;
    let mut values = Vec::with_capacity(steps + 1);
    let mut attached = 0usize;
    let mut counted = 0usize;
    let tally = |ps: &[Particle], attached: &mut usize, counted: &mut usize| {
        *attached += ps.iter().filter(|p| p.phase.is_attached()).count();
        *counted += ps.len();
    };
    values.push(empirical(&particles));
    if half == 0 {
        tally(&particles, &mut attached, &mut counted);
    }
    for k in 0..steps {
        let m = values[k];
        particles
            .par_iter_mut()
            .zip(streams.par_iter_mut())
            .try_for_each(|(p, s)| {
                let beta = control.feedback(domain, p.x, p.phase, Some(m))?;
                let noise = s.next_step();
                ctx.advance_with(p, beta, &noise)
            })?;
        values.push(empirical(&particles));
        if k + 1 >= half {
            tally(&particles, &mut attached, &mut counted);
        }
    }
    Ok(ParticleSystemRun {
        finals: particles,
        curve: MeanFieldCurve {
            dt: params.dt,
            moment,
            values,
        },
        occupation: attached as f64 / counted as f64,
    })
}

/// Two estimates of `E^u[g(X_T)]` with standard errors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EquivalenceReport {
    pub weighted: f64,
    pub weighted_se: f64,
    pub direct: f64,
    pub direct_se: f64,
}

impl EquivalenceReport {
    pub fn gap(&self) -> f64 {
        (self.weighted - self.direct).abs()
    }

    pub fn combined_se(&self) -> f64 {
        self.weighted_se + self.direct_se
    }
}

/// Self-normalised estimate with its delta-method standard error.
pub fn weighted_estimate(log_ls: &[f64], values: &[f64]) -> Result<(f64, f64)> {
    let w = self_normalized_weights(log_ls)?;
    let est: f64 = w.iter().zip(values).map(|(w, v)| w * v).sum();
    let var: f64 = w
        .iter()
        .zip(values)
        .map(|(w, v)| (w * (v - est)).powi(2))
        .sum();
    Ok((est, var.sqrt()))
}

/// Estimates `E^u[g(X_T)]` once by reweighting uncontrolled paths and once by
/// simulating the controlled dynamics, both from the same seed.
#[allow(clippy::too_many_arguments)]
pub fn estimator_equivalence_check(
    domain: &Domain,
    initial: &InitialLaw,
    control: &ControlLaw,
    mean_field: Option<&MeanFieldCurve>,
    g: impl Fn(Point) -> f64 + Sync,
    n: usize,
    params: &SchemeParams,
    seed: u64,
) -> Result<EquivalenceReport> {
    let reference = PathContext::new(domain, params, control, mean_field, Drive::Reference);
    let direct = PathContext::new(domain, params, control, mean_field, Drive::Controlled);
    let ref_finals = crate::ensemble::final_particles(&reference, initial, seed, n)?;
    let dir_finals = crate::ensemble::final_particles(&direct, initial, seed, n)?;

    let log_ls: Vec<f64> = ref_finals.iter().map(|p| p.log_l).collect();
    let g_ref: Vec<f64> = ref_finals.iter().map(|p| g(p.x)).collect();
    let (weighted, weighted_se) = weighted_estimate(&log_ls, &g_ref)?;

    let g_dir: Vec<f64> = dir_finals.iter().map(|p| g(p.x)).collect();
    let (direct, direct_se) = if control.kind == crate::control::ControlKind::None {
        // same paths, unit weights: reuse the weighted arithmetic exactly
        weighted_estimate(&vec![0.0; n], &g_dir)?
    } else {
        crate::stats::mean_se(&g_dir)
    };
    Ok(EquivalenceReport {
        weighted,
        weighted_se,
        direct,
        direct_se,
    })
}

/// Mean and standard error of `L_T` over uncontrolled paths.
pub fn likelihood_mean(
    domain: &Domain,
    initial: &InitialLaw,
    control: &ControlLaw,
    mean_field: Option<&MeanFieldCurve>,
    n: usize,
    params: &SchemeParams,
    seed: u64,
) -> Result<(f64, f64)> {
    let reference = PathContext::new(domain, params, control, mean_field, Drive::Reference);
    let finals = crate::ensemble::final_particles(&reference, initial, seed, n)?;
    let l: Vec<f64> = finals.iter().map(|p| p.log_l.exp()).collect();
    Ok(crate::stats::mean_se(&l))
}
