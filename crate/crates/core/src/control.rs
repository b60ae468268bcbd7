//! Closed-form feedback laws, cost functionals and the analytic adjoint checks.
//!
//! All laws use the drift kernel `beta(t, x, m, u) = u`, so the controlled
//! coordinate process picks up the drift `sigma(x) u` and the likelihood
//! follows `dL = L u^T dB`.

use serde::{Deserialize, Serialize};

use crate::ensemble::map_chunks;
use crate::error::{Error, Result};
use crate::geometry::{add, dot, norm, scale, sub, Domain, Point};
use crate::girsanov::MeanFieldCurve;
use crate::stats::mean_se;
use crate::sticky_sde::{sigma, Phase};
use crate::sticky_sde::{Drive, InitialLaw, NoiseStream, PathContext, SchemeParams};

pub const DEFAULT_U_MAX: f64 = 50.0;
pub const DEFAULT_DELTA_REG: f64 = 1e-3;

/// Moment function `r` whose expectation feeds the mean-field coupling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MomentFn {
    Identity,
    /// `x -> (0, x_2)`; only the second slot of the moment vector is used.
    SecondCoordinate,
}

impl MomentFn {
    #[inline]
    pub fn apply(self, x: Point) -> Point {
        match self {
            MomentFn::Identity => x,
            MomentFn::SecondCoordinate => [0.0, x[1]],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MomentFn::Identity => "identity",
            MomentFn::SecondCoordinate => "second_coordinate",
        }
    }
}

/// Congestion penalty added to the free-space cost coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Penalty {
    /// `|x_2 - m_2|`
    H1,
    /// `1 / max(|x_2 - m_2|, delta_reg)`
    H2,
}

impl Penalty {
    #[inline]
    pub fn value(self, x2: f64, m2: f64, delta_reg: f64) -> f64 {
        let gap = (x2 - m2).abs();
        match self {
            Penalty::H1 => gap,
            Penalty::H2 => 1.0 / gap.max(delta_reg),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Penalty::H1 => "h1",
            Penalty::H2 => "h2",
        }
    }
}

/// Coefficients of the congestion-type running cost
/// `1/2 C(x) (c_f + h) |u|^2` with `C = c_boundary` on the boundary and 1 inside.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Congestion {
    pub c_f: f64,
    pub c_boundary: f64,
    pub penalty: Penalty,
    pub delta_reg: f64,
}

impl Congestion {
    pub fn validate(&self) -> Result<()> {
        if !(self.c_f > 0.0) {
            return Err(Error::InvalidControl("c_f must be > 0".into()));
        }
        if !(self.c_boundary > 0.0) {
            return Err(Error::InvalidControl("c_boundary must be > 0".into()));
        }
        if self.penalty == Penalty::H2 && !(self.delta_reg > 0.0) {
            return Err(Error::InvalidControl("delta_reg must be > 0 for h2".into()));
        }
        Ok(())
    }

    /// `C(x) (c_f + h)`.
    #[inline]
    pub fn weight(&self, x: Point, phase: Phase, m2: f64) -> f64 {
        let site = match phase {
            Phase::Attached => self.c_boundary,
            Phase::Interior => 1.0,
        };
        site * (self.c_f + self.penalty.value(x[1], m2, self.delta_reg))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ControlKind {
    None,
    /// Fixed drift kernel, independent of state and law.
    Constant {
        value: Point,
    },
    /// `u = -sigma(x) (x - target)`.
    LqTrack {
        target: Point,
    },
    /// `u = -sigma(x) (x - E[X_t])`.
    MeanFieldLq,
    /// `u = sign * sigma(x) (x - target) / (C(x) (c_f + h))`.
    Corridor {
        target: Point,
        congestion: Congestion,
        /// -1 steers toward the target; +1 reproduces the printed sign.
        sign: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlLaw {
    pub kind: ControlKind,
    /// Half-side of the control box `[-u_max, u_max]^2`.
    pub u_max: f64,
    /// Constant added to the closed-form value before clipping; zero except
    /// when probing the cost around the feedback law.
    pub perturbation: Point,
}

impl ControlLaw {
    pub fn none() -> Self {
        Self {
            kind: ControlKind::None,
            u_max: DEFAULT_U_MAX,
            perturbation: [0.0, 0.0],
        }
    }

    pub fn constant(value: Point) -> Self {
        Self {
            kind: ControlKind::Constant { value },
            u_max: DEFAULT_U_MAX,
            perturbation: [0.0, 0.0],
        }
    }

    pub fn lq_track(target: Point) -> Self {
        Self {
            kind: ControlKind::LqTrack { target },
            u_max: DEFAULT_U_MAX,
            perturbation: [0.0, 0.0],
        }
    }

    pub fn mean_field_lq() -> Self {
        Self {
            kind: ControlKind::MeanFieldLq,
            u_max: DEFAULT_U_MAX,
            perturbation: [0.0, 0.0],
        }
    }

    pub fn corridor(target: Point, congestion: Congestion) -> Self {
        Self {
            kind: ControlKind::Corridor {
                target,
                congestion,
                sign: -1.0,
            },
            u_max: DEFAULT_U_MAX,
            perturbation: [0.0, 0.0],
        }
    }

    pub fn with_u_max(mut self, u_max: f64) -> Self {
        self.u_max = u_max;
        self
    }

    pub fn with_perturbation(mut self, v: Point) -> Self {
        self.perturbation = v;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.u_max > 0.0) {
            return Err(Error::InvalidControl("u_max must be > 0".into()));
        }
        if let ControlKind::Corridor {
            congestion, sign, ..
        } = &self.kind
        {
            congestion.validate()?;
            if sign.abs() != 1.0 {
                return Err(Error::InvalidControl("sign must be +1 or -1".into()));
            }
        }
        Ok(())
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            ControlKind::None => "none",
            ControlKind::Constant { .. } => "constant",
            ControlKind::LqTrack { .. } => "lq_track",
            ControlKind::MeanFieldLq => "mean_field_lq",
            ControlKind::Corridor { .. } => "corridor",
        }
    }

    /// Moment the law reads from the mean field, if any.
    pub fn moment(&self) -> Option<MomentFn> {
        match self.kind {
            ControlKind::MeanFieldLq => Some(MomentFn::Identity),
            ControlKind::Corridor { .. } => Some(MomentFn::SecondCoordinate),
            _ => None,
        }
    }

    pub fn is_measure_dependent(&self) -> bool {
        self.moment().is_some()
    }

    /// Unclipped feedback value.
    pub fn raw_feedback(
        &self,
        domain: &Domain,
        x: Point,
        phase: Phase,
        mean: Option<Point>,
    ) -> Result<Point> {
        Ok(match self.kind {
            ControlKind::None => [0.0, 0.0],
            ControlKind::Constant { value } => domain.ambient(value),
            ControlKind::LqTrack { target } => {
                scale(-1.0, sigma(domain, x, phase, sub(x, target))?)
            }
            ControlKind::MeanFieldLq => {
                let m = mean.ok_or(Error::MissingMeanField)?;
                scale(-1.0, sigma(domain, x, phase, sub(x, m))?)
            }
            ControlKind::Corridor {
                target,
                congestion,
                sign,
            } => {
                let m = mean.ok_or(Error::MissingMeanField)?;
                let w = congestion.weight(x, phase, m[1]);
                scale(sign / w, sigma(domain, x, phase, sub(x, target))?)
            }
        })
    }

    /// Feedback value clipped into the control box.
    pub fn feedback(
        &self,
        domain: &Domain,
        x: Point,
        phase: Phase,
        mean: Option<Point>,
    ) -> Result<Point> {
        let u = self.raw_feedback(domain, x, phase, mean)?;
        Ok(clip(add(u, domain.ambient(self.perturbation)), self.u_max))
    }
}

/// Rescales `u` so that `max(|u_1|, |u_2|) <= u_max`. Uniform rescaling keeps
/// the direction, so tangential controls stay tangential.
#[inline]
pub fn clip(u: Point, u_max: f64) -> Point {
    let inf = u[0].abs().max(u[1].abs());
    if inf > u_max {
        scale(u_max / inf, u)
    } else {
        u
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RunningCost {
    /// `1/2 |u|^2`
    Quadratic,
    Congestion(Congestion),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TerminalCost {
    None,
    /// `1/2 |x - target|^2`
    Target(Point),
    /// `1/2 |x - E[X_T]|^2`
    Variance,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostSpec {
    pub running: RunningCost,
    pub terminal: TerminalCost,
}

impl CostSpec {
    /// Cost functional whose stationarity condition defines `control`.
    pub fn for_control(control: &ControlLaw) -> Self {
        match control.kind {
            ControlKind::None | ControlKind::Constant { .. } => Self {
                running: RunningCost::Quadratic,
                terminal: TerminalCost::None,
            },
            ControlKind::LqTrack { target } => Self {
                running: RunningCost::Quadratic,
                terminal: TerminalCost::Target(target),
            },
            ControlKind::MeanFieldLq => Self {
                running: RunningCost::Quadratic,
                terminal: TerminalCost::Variance,
            },
            ControlKind::Corridor {
                target, congestion, ..
            } => Self {
                running: RunningCost::Congestion(congestion),
                terminal: TerminalCost::Target(target),
            },
        }
    }

    pub fn running_moment(&self) -> Option<MomentFn> {
        match self.running {
            RunningCost::Congestion(_) => Some(MomentFn::SecondCoordinate),
            RunningCost::Quadratic => None,
        }
    }

    pub fn running_cost(
        &self,
        x: Point,
        phase: Phase,
        u: Point,
        mean: Option<Point>,
    ) -> Result<f64> {
        let u2 = dot(u, u);
        Ok(match self.running {
            RunningCost::Quadratic => 0.5 * u2,
            RunningCost::Congestion(c) => {
                if u2 == 0.0 {
                    return Ok(0.0);
                }
                let m = mean.ok_or(Error::MissingMeanField)?;
                0.5 * c.weight(x, phase, m[1]) * u2
            }
        })
    }

    /// `grad_u f` at `u`.
    pub fn running_cost_gradient(
        &self,
        x: Point,
        phase: Phase,
        u: Point,
        mean: Option<Point>,
    ) -> Result<Point> {
        Ok(match self.running {
            RunningCost::Quadratic => u,
            RunningCost::Congestion(c) => {
                let m = mean.ok_or(Error::MissingMeanField)?;
                scale(c.weight(x, phase, m[1]), u)
            }
        })
    }

    pub fn terminal_cost(&self, x: Point, terminal_mean: Option<Point>) -> Result<f64> {
        Ok(match self.terminal {
            TerminalCost::None => 0.0,
            TerminalCost::Target(t) => {
                let d = sub(x, t);
                0.5 * dot(d, d)
            }
            TerminalCost::Variance => {
                let m = terminal_mean.ok_or(Error::MissingMeanField)?;
                let d = sub(x, m);
                0.5 * dot(d, d)
            }
        })
    }

    /// `grad_x phi(t, x)` where `phi` is the terminal cost evaluated at the
    /// current state (the mean-derivative term vanishes for both forms).
    fn phi_gradient(&self, x: Point, mean: Option<Point>) -> Result<Point> {
        Ok(match self.terminal {
            TerminalCost::None => [0.0, 0.0],
            TerminalCost::Target(t) => sub(x, t),
            TerminalCost::Variance => sub(x, mean.ok_or(Error::MissingMeanField)?),
        })
    }
}

/// First-order adjoint quantities evaluated along a path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdjointSnapshot {
    /// `q_t = -grad_x phi(t, X_t) sigma(X_t)`, stored as a column.
    pub q: Point,
    /// `-phi(t, X_t)`; not evolved.
    pub p_proxy: f64,
    /// `|q_t grad_u beta - grad_u f|` at the feedback value.
    pub residual: f64,
}

/// One point of a path with what the stationarity check needs at that time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathPoint {
    pub x: Point,
    pub phase: Phase,
    /// Value of the mean-field moment curve at this time, if the law uses one.
    pub mean: Option<Point>,
}

/// Stationarity of the Hamiltonian in `u` along a path: since `beta = u`,
/// `grad_u beta` is the identity and the residual is `|q^T - grad_u f(u_hat)|`.
pub fn stationarity_residual(
    domain: &Domain,
    control: &ControlLaw,
    cost: &CostSpec,
    path: &[PathPoint],
) -> Result<Vec<AdjointSnapshot>> {
    match control.kind {
        ControlKind::None | ControlKind::Constant { .. } => {
            return Err(Error::UnsupportedControl(control.name()))
        }
        _ => {}
    }
    path.iter()
        .map(|pt| {
            let grad_phi = cost.phi_gradient(pt.x, pt.mean)?;
            // sigma is symmetric, so (grad_phi sigma)^T = sigma grad_phi
            let q = scale(-1.0, sigma(domain, pt.x, pt.phase, grad_phi)?);
            let u = control.feedback(domain, pt.x, pt.phase, pt.mean)?;
            let grad_f = cost.running_cost_gradient(pt.x, pt.phase, u, pt.mean)?;
            let p_proxy = -cost.terminal_cost(pt.x, pt.mean)?;
            Ok(AdjointSnapshot {
                q,
                p_proxy,
                residual: norm(sub(q, grad_f)),
            })
        })
        .collect()
}

/// Largest one-step residual of the discretised second-order adjoint equation
/// `dP = -(|b|^2 P + 2 Q.b) dt + Q.dB`, `P_T = 0`, for a candidate `(P, Q)`
/// along a path with effective drift kernel values `b` and increments `dB`.
///
/// `p` has one entry per grid point; `q`, `b`, `db` one per step.
pub fn second_order_adjoint_residual(
    p: &[f64],
    q: &[Point],
    b: &[Point],
    db: &[Point],
    dt: f64,
) -> f64 {
    assert_eq!(p.len(), q.len() + 1, "P needs one more entry than Q");
    assert_eq!(q.len(), b.len());
    assert_eq!(q.len(), db.len());
    let terminal = p.last().copied().unwrap_or(0.0).abs();
    (0..q.len())
        .map(|k| {
            let drift = dot(b[k], b[k]) * p[k] + 2.0 * dot(q[k], b[k]);
            (p[k + 1] - p[k] + drift * dt - dot(q[k], db[k])).abs()
        })
        .fold(terminal, f64::max)
}

/// Monte Carlo estimate of the cost with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostEstimate {
    pub mean: f64,
    pub se: f64,
}

/// Per-path cost contributions of a direct simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct PathCosts {
    pub running: Vec<f64>,
    pub terminal_states: Vec<Point>,
}

/// Simulates `n` controlled paths and integrates the running cost along each
/// with the trapezoidal rule.
#[allow(clippy::too_many_arguments)]
pub fn path_costs(
    domain: &Domain,
    initial: &InitialLaw,
    control: &ControlLaw,
    cost: &CostSpec,
    mean_field: Option<&MeanFieldCurve>,
    n: usize,
    params: &SchemeParams,
    seed: u64,
) -> Result<PathCosts> {
    let ctx = PathContext::new(domain, params, control, mean_field, Drive::Controlled);
    ctx.check()?;
    initial.validate(domain)?;
    if cost.running_moment().is_some() && mean_field.is_none() {
        return Err(Error::MissingMeanField);
    }
    let steps = params.steps();
    let dt = params.dt;
    let parts = map_chunks(n, |range| {
        range
            .map(|i| {
                let mut s = NoiseStream::for_particle(seed, i, domain, params);
                let mut p = ctx.start(initial, &mut s)?;
                let mut integral = 0.0;
                for k in 0..=steps {
                    let mean = ctx.mean_at(k);
                    let u = control.feedback(domain, p.x, p.phase, mean)?;
                    let f = cost.running_cost(p.x, p.phase, u, mean)?;
                    let w = if k == 0 || k == steps { 0.5 } else { 1.0 };
                    integral += w * f * dt;
                    if k < steps {
                        let noise = s.next_step();
                        ctx.advance_with(&mut p, u, &noise)?;
                    }
                }
                Ok((integral, p.x))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let (running, terminal_states) = parts.into_iter().flatten().unzip();
    Ok(PathCosts {
        running,
        terminal_states,
    })
}

/// Cost `E[int_0^T f dt + g(X_T)]` of a feedback law, estimated from `n`
/// directly simulated paths. The terminal mean for the variance form is taken
/// from `mean_field` when it carries the identity moment, otherwise from the
/// ensemble itself.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_cost(
    domain: &Domain,
    initial: &InitialLaw,
    control: &ControlLaw,
    cost: &CostSpec,
    mean_field: Option<&MeanFieldCurve>,
    n: usize,
    params: &SchemeParams,
    seed: u64,
) -> Result<CostEstimate> {
    if n == 0 {
        return Err(Error::EmptyEnsemble);
    }
    let pc = path_costs(domain, initial, control, cost, mean_field, n, params, seed)?;
    let terminal_mean = match mean_field {
        Some(c) if c.moment == MomentFn::Identity => Some(c.value(c.len() - 1)),
        _ => {
            let s = pc
                .terminal_states
                .iter()
                .fold([0.0, 0.0], |a, x| add(a, *x));
            Some(scale(1.0 / n as f64, s))
        }
    };
    let totals = pc
        .running
        .iter()
        .zip(&pc.terminal_states)
        .map(|(r, x)| Ok(r + cost.terminal_cost(*x, terminal_mean)?))
        .collect::<Result<Vec<f64>>>()?;
    let (mean, se) = mean_se(&totals);
    Ok(CostEstimate { mean, se })
}

/// Per-path cost differences `J_i(u + zeta v) - J_i(u)` under common random
/// numbers; their mean and standard error.
#[allow(clippy::too_many_arguments)]
pub fn cost_increment(
    domain: &Domain,
    initial: &InitialLaw,
    control: &ControlLaw,
    cost: &CostSpec,
    mean_field: Option<&MeanFieldCurve>,
    direction: Point,
    zeta: f64,
    n: usize,
    params: &SchemeParams,
    seed: u64,
) -> Result<CostEstimate> {
    let per_path = |law: &ControlLaw| -> Result<Vec<f64>> {
        let pc = path_costs(domain, initial, law, cost, mean_field, n, params, seed)?;
        let terminal_mean = mean_field.map(|c| c.value(c.len() - 1));
        pc.running
            .iter()
            .zip(&pc.terminal_states)
            .map(|(r, x)| Ok(r + cost.terminal_cost(*x, terminal_mean)?))
            .collect()
    };
    let base = per_path(control)?;
    let bumped =
        per_path(&control.with_perturbation(add(control.perturbation, scale(zeta, direction))))?;
    let diffs: Vec<f64> = bumped.iter().zip(&base).map(|(b, a)| b - a).collect();
    let (mean, se) = mean_se(&diffs);
    Ok(CostEstimate { mean, se })
}

/// Central finite-difference directional derivative
/// `(J(u + zeta v) - J(u - zeta v)) / (2 zeta)` under common random numbers.
#[allow(clippy::too_many_arguments)]
pub fn cost_derivative(
    domain: &Domain,
    initial: &InitialLaw,
    control: &ControlLaw,
    cost: &CostSpec,
    mean_field: Option<&MeanFieldCurve>,
    direction: Point,
    zeta: f64,
    n: usize,
    params: &SchemeParams,
    seed: u64,
) -> Result<CostEstimate> {
    if !(zeta > 0.0) {
        return Err(Error::InvalidControl("zeta must be > 0".into()));
    }
    let per_path = |shift: f64| -> Result<Vec<f64>> {
        let law = control.with_perturbation(add(control.perturbation, scale(shift, direction)));
        let pc = path_costs(domain, initial, &law, cost, mean_field, n, params, seed)?;
        let terminal_mean = mean_field.map(|c| c.value(c.len() - 1));
        pc.running
            .iter()
            .zip(&pc.terminal_states)
            .map(|(r, x)| Ok(r + cost.terminal_cost(*x, terminal_mean)?))
            .collect()
    };
    let up = per_path(zeta)?;
    let down = per_path(-zeta)?;
    let diffs: Vec<f64> = up
        .iter()
        .zip(&down)
        .map(|(a, b)| (a - b) / (2.0 * zeta))
        .collect();
    let (mean, se) = mean_se(&diffs);
    Ok(CostEstimate { mean, se })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn disk() -> Domain {
        Domain::disk([0.0, 0.0], 1.0).unwrap()
    }

    fn corridor() -> Domain {
        Domain::corridor(-1.0, 12.0, 0.1, 0.05).unwrap()
    }

    fn congestion(penalty: Penalty, c_boundary: f64) -> Congestion {
        Congestion {
            c_f: 1.0,
            c_boundary,
            penalty,
            delta_reg: DEFAULT_DELTA_REG,
        }
    }

    #[test]
    fn lq_feedback_examples() {
        let big = Domain::disk([0.0, 0.0], 5.0).unwrap();
        let law = ControlLaw::lq_track([0.0, 0.0]);
        assert_eq!(
            law.feedback(&big, [2.0, 0.0], Phase::Interior, None)
                .unwrap(),
            [-2.0, 0.0]
        );
        let law = ControlLaw::lq_track([0.3, 0.1]);
        assert_eq!(
            law.feedback(&big, [0.3, 0.1], Phase::Interior, None)
                .unwrap(),
            [0.0, 0.0]
        );
        // radial displacement is annihilated by the tangential projection
        let law = ControlLaw::lq_track([0.0, 0.0]);
        let u = law
            .feedback(&disk(), [1.0, 0.0], Phase::Attached, None)
            .unwrap();
        assert!(norm(u) < 1e-15);
    }

    #[test]
    fn corridor_feedback_on_wall() {
        let law = ControlLaw::corridor([10.0, 0.0], congestion(Penalty::H1, 2.0));
        let x = [0.0, 0.1];
        let u = law
            .feedback(&corridor(), x, Phase::Attached, Some([0.0, 0.0]))
            .unwrap();
        // -pi(x)(x - x_T) / (c_Gamma (c_f + h1)) with h1 = 0.1
        let expected = [10.0 / (2.0 * 1.1), 0.0];
        assert!((u[0] - expected[0]).abs() < 1e-14);
        assert_eq!(u[1], 0.0);
    }

    #[test]
    fn corridor_needs_mean_field() {
        let law = ControlLaw::corridor([10.0, 0.0], congestion(Penalty::H1, 1.0));
        assert_eq!(
            law.feedback(&corridor(), [0.0, 0.0], Phase::Interior, None),
            Err(Error::MissingMeanField)
        );
        assert_eq!(
            ControlLaw::mean_field_lq().feedback(&disk(), [0.1, 0.0], Phase::Interior, None),
            Err(Error::MissingMeanField)
        );
    }

    #[test]
    fn clipping_keeps_direction() {
        let law = ControlLaw::lq_track([100.0, 50.0]).with_u_max(5.0);
        let big = Domain::disk([0.0, 0.0], 500.0).unwrap();
        let u = law
            .feedback(&big, [0.0, 0.0], Phase::Interior, None)
            .unwrap();
        assert_eq!(u, [5.0, 2.5]);
    }

    #[test]
    fn tangency_on_corner_arc() {
        let c = corridor();
        let law = ControlLaw::corridor([10.0, 0.0], congestion(Penalty::H2, 0.25)).with_u_max(1.0);
        for s in [0.13, 0.16, 0.38, 0.41, 0.63, 0.91] {
            let x = c.boundary_point(s);
            let frame = c.boundary_frame(x).unwrap();
            let u = law
                .feedback(&c, x, Phase::Attached, Some([0.0, 0.0]))
                .unwrap();
            assert!(dot(u, frame.normal).abs() < 1e-12);
            assert!(u[0].abs().max(u[1].abs()) <= 1.0);
        }
    }

    #[test]
    fn speed_on_wall_decreases_with_c_boundary() {
        let mut last = f64::INFINITY;
        for cb in [0.25, 0.5, 1.0, 2.0, 4.0] {
            let law = ControlLaw::corridor([10.0, 0.0], congestion(Penalty::H1, cb));
            let u = law
                .feedback(&corridor(), [1.0, -0.1], Phase::Attached, Some([0.0, 0.01]))
                .unwrap();
            assert!(norm(u) < last);
            last = norm(u);
        }
    }

    #[test]
    fn h2_is_bounded() {
        let p = Penalty::H2;
        assert_eq!(p.value(0.0, 0.0, 1e-3), 1e3);
        assert_eq!(p.value(0.05, 0.0, 1e-3), 20.0);
        for y in [-0.1, -1e-9, 0.0, 1e-12, 0.07] {
            assert!(p.value(y, 0.0, 1e-3) <= 1e3);
        }
    }

    #[test]
    fn running_cost_examples() {
        let quad = CostSpec::for_control(&ControlLaw::lq_track([0.0, 0.0]));
        assert_eq!(
            quad.running_cost([0.0, 0.0], Phase::Interior, [0.0, 0.0], None)
                .unwrap(),
            0.0
        );
        assert_eq!(
            quad.running_cost([0.0, 0.0], Phase::Interior, [1.0, 1.0], None)
                .unwrap(),
            1.0
        );
        let cong = CostSpec::for_control(&ControlLaw::corridor(
            [10.0, 0.0],
            congestion(Penalty::H1, 2.0),
        ));
        let f = cong
            .running_cost([0.0, 0.05], Phase::Interior, [2.0, 0.0], Some([0.0, 0.0]))
            .unwrap();
        assert!((f - 2.1).abs() < 1e-14);
        assert_eq!(
            cong.running_cost([0.0, 0.05], Phase::Interior, [0.0, 0.0], None)
                .unwrap(),
            0.0
        );
    }

    #[test]
    fn residual_vanishes_for_closed_forms() {
        let c = corridor();
        let law = ControlLaw::corridor([10.0, 0.0], congestion(Penalty::H1, 0.5));
        let cost = CostSpec::for_control(&law);
        let path = [
            PathPoint {
                x: [0.3, 0.02],
                phase: Phase::Interior,
                mean: Some([0.0, 0.001]),
            },
            PathPoint {
                x: [0.7, 0.1],
                phase: Phase::Attached,
                mean: Some([0.0, -0.003]),
            },
            PathPoint {
                x: c.boundary_point(0.9),
                phase: Phase::Attached,
                mean: Some([0.0, 0.0]),
            },
        ];
        for snap in stationarity_residual(&c, &law, &cost, &path).unwrap() {
            assert!(snap.residual <= 1e-10, "{snap:?}");
        }

        let law = ControlLaw::lq_track([0.4, -0.2]);
        let cost = CostSpec::for_control(&law);
        let path = [PathPoint {
            x: [0.0, 1.0],
            phase: Phase::Attached,
            mean: None,
        }];
        let snap = stationarity_residual(&disk(), &law, &cost, &path).unwrap()[0];
        assert!(snap.residual <= 1e-10);
        assert!((snap.p_proxy + 0.5 * (0.16 + 1.44)).abs() < 1e-14);
    }

    #[test]
    fn printed_sign_is_not_stationary() {
        let c = corridor();
        let mut law = ControlLaw::corridor([10.0, 0.0], congestion(Penalty::H1, 1.0));
        if let ControlKind::Corridor { sign, .. } = &mut law.kind {
            *sign = 1.0;
        }
        let cost = CostSpec::for_control(&law);
        let path = [PathPoint {
            x: [0.3, 0.02],
            phase: Phase::Interior,
            mean: Some([0.0, 0.0]),
        }];
        let snap = stationarity_residual(&c, &law, &cost, &path).unwrap()[0];
        assert!(snap.residual > 1.0);
    }

    #[test]
    fn residual_rejects_uncontrolled() {
        let law = ControlLaw::none();
        let cost = CostSpec::for_control(&law);
        assert_eq!(
            stationarity_residual(&disk(), &law, &cost, &[]),
            Err(Error::UnsupportedControl("none"))
        );
    }

    #[test]
    fn second_order_adjoint_zero_solution() {
        let b = vec![[0.3, -1.2]; 10];
        let db = vec![[0.01, 0.02]; 10];
        let q = vec![[0.0, 0.0]; 10];
        let p = vec![0.0; 11];
        assert_eq!(second_order_adjoint_residual(&p, &q, &b, &db, 1e-3), 0.0);
        // a nonzero candidate is caught
        let p = vec![1.0; 11];
        assert!(second_order_adjoint_residual(&p, &q, &b, &db, 1e-3) > 1e-3);
    }

    #[test]
    fn invalid_laws() {
        assert!(ControlLaw::none().with_u_max(0.0).validate().is_err());
        let mut c = congestion(Penalty::H2, 1.0);
        c.delta_reg = 0.0;
        assert!(ControlLaw::corridor([0.0, 0.0], c).validate().is_err());
        let c = congestion(Penalty::H1, -1.0);
        assert!(ControlLaw::corridor([0.0, 0.0], c).validate().is_err());
    }
}
