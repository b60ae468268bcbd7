//! Reproducible numerical studies: boundary occupation, LQ runs, the
//! propagation-of-chaos study and the corridor speed profiles.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::control::{
    evaluate_cost, Congestion, ControlKind, ControlLaw, CostEstimate, CostSpec, Penalty,
    DEFAULT_DELTA_REG, DEFAULT_U_MAX,
};
use crate::ensemble::map_chunks;
use crate::error::{Error, Result};
use crate::geometry::{norm, sub, Domain, Point};
use crate::girsanov::{
    picard_solve, run_particle_system, EstimationMode, FixedPointConfig, PicardResult,
};
use crate::io::fmt_f64;
use crate::stats::{energy_distance, mean_se, median};
use crate::sticky_sde::{Drive, InitialLaw, NoiseStream, PathContext, SchemeParams};

// ---------------------------------------------------------------------------
// occupation

#[derive(Debug, Clone, PartialEq)]
pub struct OccupationRow {
    pub shape: &'static str,
    pub gamma: f64,
    pub predicted: f64,
    pub observed: f64,
    /// Half-width of the 95% confidence interval.
    pub ci: f64,
}

impl OccupationRow {
    pub fn csv_header() -> &'static str {
        "shape,gamma,predicted,observed,ci95"
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.shape,
            fmt_f64(self.gamma),
            fmt_f64(self.predicted),
            fmt_f64(self.observed),
            fmt_f64(self.ci)
        )
    }
}

/// Long-run attached fraction of uncontrolled paths started uniformly in the
/// domain, against the closed-form boundary mass.
pub fn occupation_study(
    domain: &Domain,
    params: &SchemeParams,
    n: usize,
    seed: u64,
) -> Result<OccupationRow> {
    if !(params.gamma > 0.0) {
        return Err(Error::Config("gamma must be > 0".into()));
    }
    if n == 0 {
        return Err(Error::EmptyEnsemble);
    }
    let none = ControlLaw::none();
    let ctx = PathContext::new(domain, params, &none, None, Drive::Controlled);
    ctx.check()?;
    let initial = InitialLaw::UniformDomain;
    let steps = params.steps();
    let start = steps / 2;
    let per_path = map_chunks(n, |range| {
        range
            .map(|i| {
                let mut s = NoiseStream::for_particle(seed, i, domain, params);
                let mut attached = 0usize;
                ctx.run(&initial, &mut s, |k, p| {
                    if k >= start && p.phase.is_attached() {
                        attached += 1;
                    }
                })?;
                Ok(attached as f64 / (steps - start + 1) as f64)
            })
            .collect::<Result<Vec<f64>>>()
    })?;
    let fractions: Vec<f64> = per_path.into_iter().flatten().collect();
    let (observed, se) = mean_se(&fractions);
    Ok(OccupationRow {
        shape: domain.name(),
        gamma: params.gamma,
        predicted: domain.boundary_mass(params.gamma),
        observed,
        ci: 1.96 * se,
    })
}

/// Table over all `(shape, gamma)` pairs.
pub fn run_occupation_validation(
    gammas: &[f64],
    shapes: &[Domain],
    base: &SchemeParams,
    n: usize,
    seed: u64,
) -> Result<Vec<OccupationRow>> {
    if gammas.iter().any(|g| !(*g > 0.0)) {
        return Err(Error::Config("every gamma must be > 0".into()));
    }
    let mut rows = Vec::new();
    for shape in shapes {
        for &gamma in gammas {
            let params = SchemeParams { gamma, ..*base };
            rows.push(occupation_study(shape, &params, n, seed)?);
        }
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// LQ

#[derive(Debug, Clone, PartialEq)]
pub struct LqReport {
    pub initial_mean_distance: f64,
    pub terminal_mean_distance: f64,
    /// Cost under the LQ feedback.
    pub cost: CostEstimate,
    /// Same cost functional without control.
    pub cost_uncontrolled: CostEstimate,
}

/// Runs the tracking problem toward `target` and compares its cost with the
/// uncontrolled dynamics on the same noise.
pub fn run_lq(
    domain: &Domain,
    initial: &InitialLaw,
    target: Point,
    params: &SchemeParams,
    n: usize,
    seed: u64,
    u_max: f64,
) -> Result<LqReport> {
    let law = ControlLaw::lq_track(target).with_u_max(u_max);
    let cost = CostSpec::for_control(&law);
    let ctx = PathContext::new(domain, params, &law, None, Drive::Controlled);
    let finals = crate::ensemble::final_particles(&ctx, initial, seed, n)?;
    let starts = map_chunks(n, |range| {
        Ok(range
            .map(|i| {
                let mut s = NoiseStream::for_particle(seed, i, domain, params);
                norm(sub(initial.sample(domain, s.rng()), target))
            })
            .collect::<Vec<_>>())
    })?;
    let initial_mean_distance = mean_se(&starts.concat()).0;
    let terminal: Vec<f64> = finals.iter().map(|p| norm(sub(p.x, target))).collect();
    let j = evaluate_cost(domain, initial, &law, &cost, None, n, params, seed)?;
    let j0 = evaluate_cost(
        domain,
        initial,
        &ControlLaw::none(),
        &cost,
        None,
        n,
        params,
        seed,
    )?;
    Ok(LqReport {
        initial_mean_distance,
        terminal_mean_distance: mean_se(&terminal).0,
        cost: j,
        cost_uncontrolled: j0,
    })
}

/// Mean-field LQ: fixed point of the mean curve, then the cost on that curve.
pub struct MeanFieldLqReport {
    pub picard: PicardResult,
    pub cost: CostEstimate,
}

pub fn run_mean_field_lq(
    domain: &Domain,
    initial: &InitialLaw,
    config: &FixedPointConfig,
    params: &SchemeParams,
    seed: u64,
    u_max: f64,
) -> Result<MeanFieldLqReport> {
    let law = ControlLaw::mean_field_lq().with_u_max(u_max);
    let picard = picard_solve(domain, initial, &law, config, params, seed)?;
    let cost = CostSpec::for_control(&law);
    let j = evaluate_cost(
        domain,
        initial,
        &law,
        &cost,
        Some(&picard.curve),
        config.n_particles,
        params,
        seed,
    )?;
    Ok(MeanFieldLqReport { picard, cost: j })
}

// ---------------------------------------------------------------------------
// propagation of chaos

#[derive(Debug, Clone, PartialEq)]
pub struct ChaosRow {
    pub n: usize,
    pub distances: Vec<f64>,
    pub median: f64,
    pub se: f64,
}

impl ChaosRow {
    pub fn csv_header() -> &'static str {
        "n,median_energy_distance,se,replicates"
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{}",
            self.n,
            fmt_f64(self.median),
            fmt_f64(self.se),
            self.distances.len()
        )
    }
}

pub struct ChaosStudy {
    pub reference: PicardResult,
    pub rows: Vec<ChaosRow>,
}

/// Energy distance at the horizon between N-particle systems and a
/// mean-field reference ensemble from the direct-mode fixed point.
#[allow(clippy::too_many_arguments)]
pub fn run_chaos_study(
    domain: &Domain,
    initial: &InitialLaw,
    control: &ControlLaw,
    ns: &[usize],
    n_reference: usize,
    replications: usize,
    params: &SchemeParams,
    seed: u64,
) -> Result<ChaosStudy> {
    if !initial.is_nonatomic() {
        return Err(Error::Config(
            "the chaos study needs a nonatomic initial law".into(),
        ));
    }
    let config = FixedPointConfig {
        tolerance: 1e-4,
        max_iterations: 50,
        ..FixedPointConfig::new(EstimationMode::DirectParticle, n_reference)
    };
    let reference = picard_solve(domain, initial, control, &config, params, seed)?;
    let ref_points: Vec<Point> = reference.finals.iter().map(|p| p.x).collect();
    let mut rows = Vec::with_capacity(ns.len());
    for &n in ns {
        let mut distances = Vec::with_capacity(replications);
        for r in 0..replications {
            let run =
                run_particle_system(domain, initial, control, n, params, replica_seed(seed, r))?;
            let pts: Vec<Point> = run.finals.iter().map(|p| p.x).collect();
            distances.push(energy_distance(&pts, &ref_points));
        }
        let (_, se) = mean_se(&distances);
        rows.push(ChaosRow {
            n,
            median: median(&distances),
            se,
            distances,
        });
    }
    Ok(ChaosStudy { reference, rows })
}

/// Seeds of the replicated N-particle runs, disjoint from the reference seed.
pub fn replica_seed(seed: u64, replicate: usize) -> u64 {
    seed.wrapping_add(1 + replicate as u64)
}

// ---------------------------------------------------------------------------
// corridor

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorridorConfig {
    pub x_min: f64,
    pub x_max: f64,
    pub half_width: f64,
    pub corner_radius: f64,
    pub params: SchemeParams,
    pub realizations: usize,
    pub segments: usize,
    pub c_boundary: Vec<f64>,
    pub c_f: f64,
    pub penalty: Penalty,
    pub delta_reg: f64,
    /// -1 toward the target, +1 the printed sign.
    pub sign: f64,
    pub initial_min: Point,
    pub initial_max: Point,
    pub target: Point,
    /// Window length of the displacement speed estimator.
    pub window: f64,
    pub u_max: f64,
    pub picard_tolerance: f64,
    pub picard_max_iterations: usize,
    pub seed: u64,
}

impl Default for CorridorConfig {
    fn default() -> Self {
        Self {
            x_min: -1.0,
            x_max: 12.0,
            half_width: crate::geometry::DEFAULT_CORRIDOR_HALF_WIDTH,
            corner_radius: crate::geometry::DEFAULT_CORNER_RADIUS,
            params: SchemeParams::corridor(),
            realizations: 4000,
            segments: 9,
            c_boundary: vec![0.25, 0.5, 1.0, 2.0],
            c_f: 1.0,
            penalty: Penalty::H1,
            delta_reg: DEFAULT_DELTA_REG,
            sign: -1.0,
            initial_min: [0.0, -0.08],
            initial_max: [0.5, 0.08],
            target: [10.0, 0.0],
            window: 0.05,
            u_max: DEFAULT_U_MAX,
            picard_tolerance: 1e-4,
            picard_max_iterations: 30,
            seed: 7,
        }
    }
}

impl CorridorConfig {
    pub fn domain(&self) -> Result<Domain> {
        Domain::corridor(self.x_min, self.x_max, self.half_width, self.corner_radius)
    }

    pub fn initial(&self) -> InitialLaw {
        InitialLaw::UniformRect {
            min: self.initial_min,
            max: self.initial_max,
        }
    }

    pub fn window_steps(&self) -> usize {
        (self.window / self.params.dt).round() as usize
    }

    pub fn law(&self, c_boundary: f64) -> ControlLaw {
        let congestion = Congestion {
            c_f: self.c_f,
            c_boundary,
            penalty: self.penalty,
            delta_reg: self.delta_reg,
        };
        let mut law = ControlLaw::corridor(self.target, congestion).with_u_max(self.u_max);
        if let ControlKind::Corridor { sign, .. } = &mut law.kind {
            *sign = self.sign;
        }
        law
    }

    pub fn validate(&self) -> Result<()> {
        let domain = self.domain()?;
        self.params.validate_for(&domain)?;
        if self.segments.is_multiple_of(2) {
            return Err(Error::Config("segments must be odd".into()));
        }
        if self.c_boundary.is_empty() {
            return Err(Error::Config("c_boundary list is empty".into()));
        }
        let w = self.window_steps();
        if w < 2 || w % 2 == 1 || w > self.params.steps() {
            return Err(Error::Config(
                "window must be an even number of steps no longer than the horizon".into(),
            ));
        }
        if self.realizations == 0 {
            return Err(Error::Config("realizations must be > 0".into()));
        }
        self.initial().validate(&domain)?;
        if domain.signed_distance(self.target) > 0.0 {
            return Err(Error::Config("target must lie in the corridor".into()));
        }
        for &c in &self.c_boundary {
            self.law(c).validate()?;
        }
        Ok(())
    }

    /// Segment index of a transverse coordinate.
    pub fn segment(&self, y: f64) -> usize {
        let w = self.half_width;
        let s = ((y + w) / (2.0 * w) * self.segments as f64).floor();
        (s.max(0.0) as usize).min(self.segments - 1)
    }

    /// Fraction of pilot paths, with the mean frozen at the corridor axis and
    /// the cheapest boundary cost, that reach the target's x-coordinate
    /// before the horizon.
    pub fn pilot_reach_fraction(&self) -> Result<f64> {
        const PILOT: usize = 64;
        let domain = self.domain()?;
        let law = self.law(
            self.c_boundary
                .iter()
                .copied()
                .fold(f64::INFINITY, f64::min),
        );
        let curve = crate::girsanov::MeanFieldCurve::constant(
            &self.params,
            crate::control::MomentFn::SecondCoordinate,
            [0.0, 0.0],
        );
        let ctx = PathContext::new(&domain, &self.params, &law, Some(&curve), Drive::Controlled);
        let initial = self.initial();
        let reached = map_chunks(PILOT, |range| {
            let mut hits = 0usize;
            for i in range {
                let mut s =
                    NoiseStream::for_particle(self.seed ^ 0x9e37_79b9, i, &domain, &self.params);
                let mut hit = false;
                ctx.run(&initial, &mut s, |_, p| hit |= p.x[0] >= self.target[0])?;
                hits += hit as usize;
            }
            Ok(hits)
        })?;
        Ok(reached.into_iter().sum::<usize>() as f64 / PILOT as f64)
    }

    /// The crowd must not typically arrive at the target before the horizon.
    pub fn check_target_unreached(&self) -> Result<()> {
        let f = self.pilot_reach_fraction()?;
        if f > 0.5 {
            return Err(Error::Config(format!(
                "target reached by {:.0}% of pilot paths before the horizon; move it further away",
                100.0 * f
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpeedProfile {
    pub c_boundary: f64,
    pub penalty: Penalty,
    pub seed: u64,
    pub half_width: f64,
    /// Mean windowed speed per transverse segment.
    pub speeds: Vec<f64>,
    /// Path-clustered standard errors of `speeds`.
    pub se: Vec<f64>,
    pub counts: Vec<u64>,
    pub picard_iterations: usize,
    pub picard_distances: Vec<f64>,
}

impl SpeedProfile {
    pub fn segments(&self) -> usize {
        self.speeds.len()
    }

    pub fn center(&self) -> f64 {
        self.speeds[self.segments() / 2]
    }

    /// Speeds of the two segments touching the walls, `(bottom, top)`.
    pub fn walls(&self) -> (f64, f64) {
        (self.speeds[0], self.speeds[self.segments() - 1])
    }

    pub fn wall_mean(&self) -> f64 {
        let (a, b) = self.walls();
        0.5 * (a + b)
    }

    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("segment,y_low,y_high,mean_speed,se,count,c_boundary,penalty,seed\n");
        let n = self.segments();
        let w = self.half_width;
        for s in 0..n {
            let lo = -w + 2.0 * w * s as f64 / n as f64;
            let hi = -w + 2.0 * w * (s + 1) as f64 / n as f64;
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                s,
                fmt_f64(lo),
                fmt_f64(hi),
                fmt_f64(self.speeds[s]),
                fmt_f64(self.se[s]),
                self.counts[s],
                fmt_f64(self.c_boundary),
                self.penalty.name(),
                self.seed
            );
        }
        out
    }
}

/// Per-segment path-clustered sums: `(sum S, sum C, sum S^2, sum C^2, sum S C)`
/// where `S` and `C` are one path's speed total and sample count in a segment.
#[derive(Debug, Clone)]
struct SegmentSums(Vec<[f64; 5]>);

impl SegmentSums {
    fn new(n: usize) -> Self {
        Self(vec![[0.0; 5]; n])
    }

    fn add_path(&mut self, speed: &[f64], count: &[u64]) {
        for (acc, (&s, &c)) in self.0.iter_mut().zip(speed.iter().zip(count)) {
            let c = c as f64;
            acc[0] += s;
            acc[1] += c;
            acc[2] += s * s;
            acc[3] += c * c;
            acc[4] += s * c;
        }
    }

    fn merge(&mut self, other: &SegmentSums) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            for j in 0..5 {
                a[j] += b[j];
            }
        }
    }
}

/// Windowed displacement speeds `|X(t + tau) - X(t)| / tau` of `n` controlled
/// paths, binned by the transverse position at the window midpoint.
fn speed_profile(
    config: &CorridorConfig,
    domain: &Domain,
    law: &ControlLaw,
    curve: &crate::girsanov::MeanFieldCurve,
) -> Result<(Vec<f64>, Vec<f64>, Vec<u64>)> {
    let params = &config.params;
    let ctx = PathContext::new(domain, params, law, Some(curve), Drive::Controlled);
    ctx.check()?;
    let initial = config.initial();
    let w = config.window_steps();
    let tau = w as f64 * params.dt;
    let nseg = config.segments;
    let parts = map_chunks(config.realizations, |range| {
        let mut sums = SegmentSums::new(nseg);
        let mut ring: Vec<Point> = vec![[0.0, 0.0]; w + 1];
        for i in range {
            let mut speed = vec![0.0; nseg];
            let mut count = vec![0u64; nseg];
            let mut s = NoiseStream::for_particle(config.seed, i, domain, params);
            ctx.run(&initial, &mut s, |k, p| {
                ring[k % (w + 1)] = p.x;
                if k >= w {
                    let old = ring[(k - w) % (w + 1)];
                    let mid = ring[(k - w / 2) % (w + 1)];
                    let seg = config.segment(mid[1]);
                    speed[seg] += norm(sub(p.x, old)) / tau;
                    count[seg] += 1;
                }
            })?;
            sums.add_path(&speed, &count);
        }
        Ok(sums)
    })?;
    let mut total = SegmentSums::new(nseg);
    for p in &parts {
        total.merge(p);
    }
    let mut speeds = Vec::with_capacity(nseg);
    let mut ses = Vec::with_capacity(nseg);
    let mut counts = Vec::with_capacity(nseg);
    for a in &total.0 {
        let (s, c, s2, c2, sc) = (a[0], a[1], a[2], a[3], a[4]);
        let mu = if c > 0.0 { s / c } else { 0.0 };
        let resid = (s2 - 2.0 * mu * sc + mu * mu * c2).max(0.0);
        speeds.push(mu);
        ses.push(if c > 0.0 { resid.sqrt() / c } else { 0.0 });
        counts.push(c as u64);
    }
    Ok((speeds, ses, counts))
}

/// Solves the mean-field curve and measures the speed profile for one
/// boundary cost coefficient.
pub fn run_corridor_leg(config: &CorridorConfig, c_boundary: f64) -> Result<SpeedProfile> {
    let domain = config.domain()?;
    let law = config.law(c_boundary);
    let fp = FixedPointConfig {
        tolerance: config.picard_tolerance,
        max_iterations: config.picard_max_iterations,
        ..FixedPointConfig::new(EstimationMode::DirectParticle, config.realizations.max(2))
    };
    let picard = picard_solve(
        &domain,
        &config.initial(),
        &law,
        &fp,
        &config.params,
        config.seed,
    )?;
    let (speeds, se, counts) = speed_profile(config, &domain, &law, &picard.curve)?;
    Ok(SpeedProfile {
        c_boundary,
        penalty: config.penalty,
        seed: config.seed,
        half_width: config.half_width,
        speeds,
        se,
        counts,
        picard_iterations: picard.iterations(),
        picard_distances: picard.distances,
    })
}

/// One speed profile per boundary cost coefficient, all legs on the same seed.
pub fn run_corridor(config: &CorridorConfig) -> Result<Vec<SpeedProfile>> {
    config.validate()?;
    config.check_target_unreached()?;
    config
        .c_boundary
        .iter()
        .map(|&c| run_corridor_leg(config, c))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn segments_cover_the_width() {
        let c = CorridorConfig::default();
        assert_eq!(c.segment(-0.1), 0);
        assert_eq!(c.segment(0.1), 8);
        assert_eq!(c.segment(0.0), 4);
        assert_eq!(c.segment(-0.07), 1);
        assert_eq!(c.window_steps(), 50);
    }

    #[test]
    fn default_config_is_valid() {
        CorridorConfig::default().validate().unwrap();
    }

    #[test]
    fn even_segment_count_rejected() {
        let c = CorridorConfig {
            segments: 8,
            ..Default::default()
        };
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn zero_gamma_is_a_config_error() {
        let base = SchemeParams::validation(0.5, 1.0);
        let iv = Domain::interval(1.0).unwrap();
        assert!(matches!(
            run_occupation_validation(&[0.0], &[iv], &base, 10, 1),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn predicted_column() {
        let base = SchemeParams {
            dt: 1e-3,
            epsilon: 2e-2,
            gamma: 0.5,
            horizon: 0.1,
        };
        let rows = run_occupation_validation(
            &[0.5, 0.25],
            &[
                Domain::interval(1.0).unwrap(),
                Domain::disk([0.0, 0.0], 1.0).unwrap(),
            ],
            &base,
            8,
            3,
        )
        .unwrap();
        assert_eq!(rows.len(), 4);
        assert!((rows[0].predicted - 0.5).abs() < 1e-15);
        assert!((rows[3].predicted - 1.0 / 3.0).abs() < 1e-15);
        assert!(rows.iter().all(|r| (0.0..=1.0).contains(&r.observed)));
    }
}
