//! Two-phase discretisation of the sticky reflected SDE with boundary diffusion.
//!
//! A particle is either in the open interior or attached to the boundary.
//! Interior steps are plain Euler steps; an increment that leaves the domain,
//! or whose Brownian bridge touches the boundary in between grid points,
//! attaches the particle at the nearest boundary point. While attached the
//! particle takes tangential Euler steps re-projected onto the boundary, and
//! detaches to depth `epsilon` along the inward normal with probability
//! `dt / (2 gamma epsilon)` per step, so a boundary sojourn lasts `2 gamma epsilon`
//! on average.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::control::ControlLaw;
use crate::error::{Error, Result};
use crate::geometry::{add, dot, scale, sub, Domain, Point, ON_BOUNDARY_TOL};
use crate::girsanov::MeanFieldCurve;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Interior,
    Attached,
}

impl Phase {
    pub fn is_attached(self) -> bool {
        self == Phase::Attached
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Particle {
    pub x: Point,
    pub phase: Phase,
    pub log_l: f64,
    /// Time spent attached over completed steps.
    pub boundary_time: f64,
}

impl Particle {
    /// Places a particle at `x`, attached if `x` lies on the boundary.
    pub fn at(domain: &Domain, x: Point) -> Result<Self> {
        let x = domain.ambient(x);
        let d = domain.signed_distance(x);
        let (x, phase) = if d < -ON_BOUNDARY_TOL {
            (x, Phase::Interior)
        } else if d <= ON_BOUNDARY_TOL {
            (domain.project_to_boundary(x)?, Phase::Attached)
        } else {
            return Err(Error::InvalidParams(format!(
                "initial point ({}, {}) lies outside the domain",
                x[0], x[1]
            )));
        };
        Ok(Self {
            x,
            phase,
            log_l: 0.0,
            boundary_time: 0.0,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeParams {
    pub dt: f64,
    /// Boundary-layer thickness; also the re-entry depth after detachment.
    pub epsilon: f64,
    /// Stickiness (time per length).
    pub gamma: f64,
    pub horizon: f64,
}

impl SchemeParams {
    /// Validation-run defaults.
    pub fn validation(gamma: f64, horizon: f64) -> Self {
        Self {
            dt: 1e-4,
            epsilon: 1e-2,
            gamma,
            horizon,
        }
    }

    /// Corridor-run defaults.
    pub fn corridor() -> Self {
        Self {
            dt: 1e-3,
            epsilon: 2e-2,
            gamma: 0.5,
            horizon: 1.0,
        }
    }

    pub fn detach_probability(&self) -> f64 {
        self.dt / (2.0 * self.gamma * self.epsilon)
    }

    /// Number of steps on the grid `0, dt, ..., horizon`.
    pub fn steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParams(m.to_string()));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad("dt must be > 0");
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return bad("epsilon must be > 0");
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return bad("gamma must be > 0");
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return bad("horizon must be > 0");
        }
        if self.detach_probability() > 1.0 {
            return bad("dt / (2 gamma epsilon) must not exceed 1");
        }
        let n = self.horizon / self.dt;
        if (n - n.round()).abs() > 1e-6 * n.max(1.0) {
            return bad("horizon must be an integer multiple of dt");
        }
        Ok(())
    }

    /// Also checks that the re-entry depth fits inside the domain.
    pub fn validate_for(&self, domain: &Domain) -> Result<()> {
        self.validate()?;
        let feature = match *domain {
            Domain::Interval { length } => 0.5 * length,
            Domain::Disk { radius, .. } => radius,
            Domain::Corridor { corner_radius, .. } => corner_radius,
        };
        if self.epsilon >= feature {
            return Err(Error::InvalidParams(format!(
                "epsilon {} must be smaller than the domain feature size {}",
                self.epsilon, feature
            )));
        }
        Ok(())
    }
}

/// Random input of one step: Brownian increment and one uniform used for the
/// bridge-contact test (interior) or the detachment draw (attached).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepNoise {
    pub db: Point,
    pub uniform: f64,
}

/// Counter-based per-particle random stream: ChaCha8 keyed by the run seed,
/// one stream per particle index, so draws do not depend on scheduling.
#[derive(Debug, Clone)]
pub struct NoiseStream {
    rng: ChaCha8Rng,
    sqrt_dt: f64,
    dim: usize,
}

impl NoiseStream {
    pub fn new(seed: u64, index: u64, dt: f64, dim: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(index);
        Self {
            rng,
            sqrt_dt: dt.sqrt(),
            dim,
        }
    }

    pub fn for_particle(seed: u64, index: usize, domain: &Domain, params: &SchemeParams) -> Self {
        Self::new(seed, index as u64, params.dt, domain.ambient_dim())
    }

    pub fn next_step(&mut self) -> StepNoise {
        let z0: f64 = self.rng.sample(StandardNormal);
        let z1: f64 = if self.dim > 1 {
            self.rng.sample(StandardNormal)
        } else {
            0.0
        };
        StepNoise {
            db: [self.sqrt_dt * z0, self.sqrt_dt * z1],
            uniform: self.rng.random(),
        }
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}

/// Law of the starting point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialLaw {
    Point {
        at: Point,
    },
    UniformBall {
        center: Point,
        radius: f64,
    },
    UniformRect {
        min: Point,
        max: Point,
    },
    /// Uniform on the whole domain.
    UniformDomain,
}

impl InitialLaw {
    pub fn is_nonatomic(&self) -> bool {
        !matches!(self, InitialLaw::Point { .. })
    }

    pub fn validate(&self, domain: &Domain) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParams(m));
        match *self {
            InitialLaw::Point { at } => {
                if domain.signed_distance(domain.ambient(at)) > ON_BOUNDARY_TOL {
                    return bad(format!(
                        "initial point ({}, {}) is outside the domain",
                        at[0], at[1]
                    ));
                }
            }
            InitialLaw::UniformBall { center, radius } => {
                if !(radius > 0.0) || domain.signed_distance(domain.ambient(center)) + radius > 0.0
                {
                    return bad("initial ball must lie inside the domain".into());
                }
            }
            InitialLaw::UniformRect { min, max } => {
                let dim = domain.ambient_dim();
                if !(max[0] > min[0]) || (dim > 1 && !(max[1] > min[1])) {
                    return bad("initial rectangle must have positive extent".into());
                }
                let corners = [min, max, [min[0], max[1]], [max[0], min[1]]];
                if corners
                    .iter()
                    .any(|&c| domain.signed_distance(domain.ambient(c)) >= 0.0)
                {
                    return bad("initial rectangle must lie inside the domain".into());
                }
            }
            InitialLaw::UniformDomain => {}
        }
        Ok(())
    }

    pub fn sample(&self, domain: &Domain, rng: &mut impl Rng) -> Point {
        let dim = domain.ambient_dim();
        match *self {
            InitialLaw::Point { at } => domain.ambient(at),
            InitialLaw::UniformBall { center, radius } => loop {
                let v = [
                    rng.random_range(-1.0..1.0),
                    if dim > 1 {
                        rng.random_range(-1.0..1.0)
                    } else {
                        0.0
                    },
                ];
                if dot(v, v) < 1.0 {
                    break domain.ambient(add(center, scale(radius, v)));
                }
            },
            InitialLaw::UniformRect { min, max } => domain.ambient([
                rng.random_range(min[0]..max[0]),
                if dim > 1 {
                    rng.random_range(min[1]..max[1])
                } else {
                    0.0
                },
            ]),
            InitialLaw::UniformDomain => {
                let (lo, hi) = domain.bounding_box();
                loop {
                    let p = domain.ambient([
                        rng.random_range(lo[0]..hi[0]),
                        if dim > 1 {
                            rng.random_range(lo[1]..hi[1])
                        } else {
                            0.0
                        },
                    ]);
                    if domain.contains(p) {
                        break p;
                    }
                }
            }
        }
    }
}

/// Diffusion matrix applied to a vector: identity on the ambient coordinates
/// in the interior, tangential projection on the boundary.
#[inline]
pub fn sigma(domain: &Domain, x: Point, phase: Phase, v: Point) -> Result<Point> {
    match phase {
        Phase::Interior => Ok(domain.ambient(v)),
        Phase::Attached => Ok(domain.boundary_frame(x)?.project(v)),
    }
}

/// Euler increment of the log stochastic exponential.
#[inline]
pub fn likelihood_increment(beta: Point, db: Point, dt: f64) -> f64 {
    dot(beta, db) - 0.5 * dot(beta, beta) * dt
}

/// Probability that a Brownian bridge over one step, started `d0` and ending
/// `d1` inside a locally flat boundary, touches it.
#[inline]
fn bridge_contact_probability(d0: f64, d1: f64, dt: f64) -> f64 {
    let a = 2.0 * d0 * d1 / dt;
    // exp(-a) is exactly zero beyond this point; skip the call
    if a > 746.0 {
        0.0
    } else {
        (-a).exp()
    }
}

/// One step of the scheme with drift kernel value `beta`. Leaves `log_l`
/// untouched.
pub fn step(
    domain: &Domain,
    particle: &Particle,
    beta: Point,
    params: &SchemeParams,
    noise: &StepNoise,
) -> Result<Particle> {
    let dt = params.dt;
    let mut next = *particle;
    match particle.phase {
        Phase::Interior => {
            let inc = domain.ambient(add(scale(dt, beta), noise.db));
            let proposal = add(particle.x, inc);
            let d1 = domain.signed_distance(proposal);
            let attach = d1 >= 0.0 || {
                let d0 = -domain.signed_distance(particle.x);
                noise.uniform < bridge_contact_probability(d0, -d1, dt)
            };
            if attach {
                next.x = domain.project_to_boundary(proposal)?;
                next.phase = Phase::Attached;
            } else {
                next.x = proposal;
            }
        }
        Phase::Attached => {
            let frame = domain.boundary_frame(particle.x)?;
            if noise.uniform < params.detach_probability() {
                next.x = sub(particle.x, scale(params.epsilon, frame.normal));
                next.phase = Phase::Interior;
            } else {
                let inc = frame.project(add(scale(dt, beta), noise.db));
                next.x = domain.project_to_boundary(add(particle.x, inc))?;
                next.boundary_time += dt;
            }
        }
    }
    Ok(next)
}

/// Which measure the path is simulated under.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Drive {
    /// The particle moves with drift `sigma beta`.
    Controlled,
    /// The particle follows the uncontrolled dynamics; `beta` only enters the
    /// likelihood weight.
    Reference,
}

/// Everything needed to advance a single path.
#[derive(Debug, Clone, Copy)]
pub struct PathContext<'a> {
    pub domain: &'a Domain,
    pub params: &'a SchemeParams,
    pub control: &'a ControlLaw,
    pub mean_field: Option<&'a MeanFieldCurve>,
    pub drive: Drive,
}

impl<'a> PathContext<'a> {
    pub fn new(
        domain: &'a Domain,
        params: &'a SchemeParams,
        control: &'a ControlLaw,
        mean_field: Option<&'a MeanFieldCurve>,
        drive: Drive,
    ) -> Self {
        Self {
            domain,
            params,
            control,
            mean_field,
            drive,
        }
    }

    pub fn check(&self) -> Result<()> {
        self.params.validate_for(self.domain)?;
        self.control.validate()?;
        if self.control.is_measure_dependent() {
            let curve = self.mean_field.ok_or(Error::MissingMeanField)?;
            if curve.len() != self.params.steps() + 1 {
                return Err(Error::InvalidParams(format!(
                    "mean-field curve has {} points, grid has {}",
                    curve.len(),
                    self.params.steps() + 1
                )));
            }
        }
        Ok(())
    }

    #[inline]
    pub fn mean_at(&self, k: usize) -> Option<Point> {
        self.mean_field.map(|c| c.value(k))
    }

    #[inline]
    pub fn beta(&self, k: usize, p: &Particle) -> Result<Point> {
        self.control
            .feedback(self.domain, p.x, p.phase, self.mean_at(k))
    }

    pub fn start(&self, initial: &InitialLaw, stream: &mut NoiseStream) -> Result<Particle> {
        let x = initial.sample(self.domain, stream.rng());
        Particle::at(self.domain, x)
    }

    /// Advances `p` from grid point `k` to `k + 1` with the given drift value
    /// and updates the log-likelihood.
    #[inline]
    pub fn advance_with(&self, p: &mut Particle, beta: Point, noise: &StepNoise) -> Result<()> {
        let drift = match self.drive {
            Drive::Controlled => beta,
            Drive::Reference => [0.0, 0.0],
        };
        let log_l = p.log_l + likelihood_increment(beta, noise.db, self.params.dt);
        *p = step(self.domain, p, drift, self.params, noise)?;
        p.log_l = log_l;
        Ok(())
    }

    #[inline]
    pub fn advance(&self, p: &mut Particle, k: usize, stream: &mut NoiseStream) -> Result<()> {
        let beta = self.beta(k, p)?;
        let noise = stream.next_step();
        self.advance_with(p, beta, &noise)
    }

    /// Runs a full path, calling `observe(k, &particle)` at every grid point.
    pub fn run<F>(
        &self,
        initial: &InitialLaw,
        stream: &mut NoiseStream,
        mut observe: F,
    ) -> Result<Particle>
    where
        F: FnMut(usize, &Particle),
    {
        let mut p = self.start(initial, stream)?;
        observe(0, &p);
        for k in 0..self.params.steps() {
            self.advance(&mut p, k, stream)?;
            observe(k + 1, &p);
        }
        Ok(p)
    }
}

/// Recorded path on the simulation grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub t: Vec<f64>,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub phase: Vec<Phase>,
    #[serde(rename = "logL")]
    pub log_l: Vec<f64>,
}

impl Trajectory {
    fn with_capacity(n: usize) -> Self {
        Self {
            t: Vec::with_capacity(n),
            x: Vec::with_capacity(n),
            y: Vec::with_capacity(n),
            phase: Vec::with_capacity(n),
            log_l: Vec::with_capacity(n),
        }
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn point(&self, k: usize) -> Point {
        [self.x[k], self.y[k]]
    }

    /// One JSON-lines record.
    pub fn to_json_line(&self, particle: usize) -> String {
        #[derive(Serialize)]
        struct Record<'a> {
            particle: usize,
            #[serde(flatten)]
            path: &'a Trajectory,
        }
        serde_json::to_string(&Record {
            particle,
            path: self,
        })
        .expect("trajectory serialises")
    }
}

/// Simulates one controlled path and records it on the grid.
pub fn simulate_path(
    domain: &Domain,
    initial: &InitialLaw,
    control: &ControlLaw,
    mean_field: Option<&MeanFieldCurve>,
    params: &SchemeParams,
    stream: &mut NoiseStream,
) -> Result<Trajectory> {
    let ctx = PathContext::new(domain, params, control, mean_field, Drive::Controlled);
    ctx.check()?;
    initial.validate(domain)?;
    let mut traj = Trajectory::with_capacity(params.steps() + 1);
    ctx.run(initial, stream, |k, p| {
        traj.t.push(params.time(k));
        traj.x.push(p.x[0]);
        traj.y.push(p.x[1]);
        traj.phase.push(p.phase);
        traj.log_l.push(p.log_l);
    })?;
    Ok(traj)
}

/// Fraction of grid points spent attached over the second half of each path,
/// pooled over the ensemble.
pub fn occupation_fraction(trajectories: &[Trajectory]) -> Result<f64> {
    let mut attached = 0usize;
    let mut total = 0usize;
    for tr in trajectories {
        let start = (tr.len() - 1) / 2;
        for ph in &tr.phase[start..] {
            attached += ph.is_attached() as usize;
            total += 1;
        }
    }
    if total == 0 {
        return Err(Error::EmptyEnsemble);
    }
    Ok(attached as f64 / total as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quiet() -> StepNoise {
        StepNoise {
            db: [0.0, 0.0],
            uniform: 0.999_999,
        }
    }

    fn interior(x: Point) -> Particle {
        Particle {
            x,
            phase: Phase::Interior,
            log_l: 0.0,
            boundary_time: 0.0,
        }
    }

    #[test]
    fn zero_increment_is_a_fixed_point() {
        let disk = Domain::disk([0.0, 0.0], 1.0).unwrap();
        let params = SchemeParams::validation(0.5, 1.0);
        let p = interior([0.2, -0.1]);
        let q = step(&disk, &p, [0.0, 0.0], &params, &quiet()).unwrap();
        assert_eq!(q.x, p.x);
        assert_eq!(q.phase, Phase::Interior);
    }

    #[test]
    fn detach_probability_example() {
        let params = SchemeParams {
            dt: 1e-3,
            epsilon: 1e-2,
            gamma: 0.5,
            horizon: 1.0,
        };
        assert!((params.detach_probability() - 0.1).abs() < 1e-15);
    }

    #[test]
    fn exit_attaches_on_interval() {
        let iv = Domain::interval(1.0).unwrap();
        let params = SchemeParams::validation(0.5, 1.0);
        let p = interior([0.005, 0.0]);
        let noise = StepNoise {
            db: [-0.02, 0.0],
            uniform: 0.5,
        };
        let q = step(&iv, &p, [0.0, 0.0], &params, &noise).unwrap();
        assert_eq!(q.x, [0.0, 0.0]);
        assert_eq!(q.phase, Phase::Attached);
    }

    #[test]
    fn bridge_contact_attaches_near_wall() {
        let iv = Domain::interval(1.0).unwrap();
        let params = SchemeParams::validation(0.5, 1.0);
        // both endpoints inside, contact probability exp(-2 * 0.005 * 0.004 / 1e-4) = e^-0.4
        let p = interior([0.005, 0.0]);
        let mut noise = StepNoise {
            db: [-0.001, 0.0],
            uniform: 0.6,
        };
        let q = step(&iv, &p, [0.0, 0.0], &params, &noise).unwrap();
        assert_eq!(q.phase, Phase::Attached);
        noise.uniform = 0.7;
        let q = step(&iv, &p, [0.0, 0.0], &params, &noise).unwrap();
        assert_eq!(q.phase, Phase::Interior);
        assert!((q.x[0] - 0.004).abs() < 1e-15);
    }

    #[test]
    fn detachment_moves_inward_by_epsilon() {
        let disk = Domain::disk([0.0, 0.0], 1.0).unwrap();
        let params = SchemeParams::validation(0.5, 1.0);
        let p = Particle::at(&disk, [0.0, 1.0]).unwrap();
        assert_eq!(p.phase, Phase::Attached);
        let noise = StepNoise {
            db: [0.3, 0.3],
            uniform: 0.0,
        };
        let q = step(&disk, &p, [0.0, 0.0], &params, &noise).unwrap();
        assert_eq!(q.phase, Phase::Interior);
        assert!((q.x[1] - 0.99).abs() < 1e-15);
        assert_eq!(q.boundary_time, 0.0);
    }

    #[test]
    fn attached_step_stays_on_circle() {
        let disk = Domain::disk([0.0, 0.0], 1.0).unwrap();
        let params = SchemeParams::validation(0.5, 1.0);
        let p = Particle::at(&disk, [1.0, 0.0]).unwrap();
        let noise = StepNoise {
            db: [0.5, 0.01],
            uniform: 0.9,
        };
        let q = step(&disk, &p, [0.0, 0.0], &params, &noise).unwrap();
        assert_eq!(q.phase, Phase::Attached);
        assert!(disk.signed_distance(q.x).abs() < 1e-15);
        // normal part of the noise is discarded
        assert!((q.x[1].atan2(q.x[0]) - 0.01f64.atan()).abs() < 1e-15);
        assert_eq!(q.boundary_time, params.dt);
    }

    #[test]
    fn interval_endpoint_is_frozen_while_attached() {
        let iv = Domain::interval(1.0).unwrap();
        let params = SchemeParams::validation(0.5, 1.0);
        let p = Particle::at(&iv, [1.0, 0.0]).unwrap();
        let noise = StepNoise {
            db: [0.2, 0.0],
            uniform: 0.9,
        };
        let q = step(&iv, &p, [3.0, 0.0], &params, &noise).unwrap();
        assert_eq!(q.x, [1.0, 0.0]);
        assert_eq!(q.phase, Phase::Attached);
    }

    #[test]
    fn likelihood_increment_example() {
        let inc = likelihood_increment([1.0, 0.0], [0.1, -0.2], 0.01);
        assert!((inc - 0.095).abs() < 1e-15);
    }

    #[test]
    fn uncontrolled_path_has_unit_likelihood() {
        let disk = Domain::disk([0.0, 0.0], 1.0).unwrap();
        let params = SchemeParams {
            dt: 1e-3,
            epsilon: 1e-2,
            gamma: 0.5,
            horizon: 0.5,
        };
        let mut s = NoiseStream::for_particle(3, 0, &disk, &params);
        let tr = simulate_path(
            &disk,
            &InitialLaw::UniformDomain,
            &ControlLaw::none(),
            None,
            &params,
            &mut s,
        )
        .unwrap();
        assert_eq!(tr.len(), 501);
        assert!(tr.log_l.iter().all(|&l| l == 0.0));
        assert!((0..tr.len()).all(|k| disk.signed_distance(tr.point(k)) <= 1e-9));
    }

    #[test]
    fn params_validation() {
        let mut p = SchemeParams::validation(0.5, 1.0);
        assert!(p.validate().is_ok());
        p.gamma = 0.0;
        assert!(p.validate().is_err());
        let p = SchemeParams {
            dt: 1e-2,
            epsilon: 1e-3,
            gamma: 0.5,
            horizon: 1.0,
        };
        assert!(p.validate().is_err());
        let p = SchemeParams::corridor();
        let narrow = Domain::corridor(0.0, 1.0, 0.1, 0.015).unwrap();
        assert!(p.validate_for(&narrow).is_err());
    }

    #[test]
    fn occupation_of_empty_ensemble() {
        assert_eq!(occupation_fraction(&[]), Err(Error::EmptyEnsemble));
    }

    #[test]
    fn json_line_has_expected_keys() {
        let tr = Trajectory {
            t: vec![0.0],
            x: vec![0.5],
            y: vec![0.0],
            phase: vec![Phase::Attached],
            log_l: vec![0.0],
        };
        let v: serde_json::Value = serde_json::from_str(&tr.to_json_line(4)).unwrap();
        assert_eq!(v["particle"], 4);
        assert_eq!(v["phase"][0], "attached");
        assert!(v.get("logL").is_some());
    }
}
