//! Analytic geometry of the supported planar domains.
//!
//! Every shape exposes an exact signed distance, nearest-point projection onto
//! the boundary, and the boundary frame (outward normal, tangential projection,
//! mean curvature). The interval is embedded in the plane as `[0, L] x {0}`;
//! its second coordinate is ignored by all queries and its tangent space is
//! trivial.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point = [f64; 2];

/// 2x2 matrix, row major.
pub type Mat2 = [[f64; 2]; 2];

/// Points closer than this to a medial-axis tie are treated as degenerate.
const MEDIAL_TOL: f64 = 1e-12;

/// Tolerance on `signed_distance` for a point to count as lying on the boundary.
pub const ON_BOUNDARY_TOL: f64 = 1e-9;

pub const DEFAULT_CORRIDOR_HALF_WIDTH: f64 = 0.1;
pub const DEFAULT_CORNER_RADIUS: f64 = 0.05;

#[inline]
pub fn add(a: Point, b: Point) -> Point {
    [a[0] + b[0], a[1] + b[1]]
}

#[inline]
pub fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1]]
}

#[inline]
pub fn scale(s: f64, a: Point) -> Point {
    [s * a[0], s * a[1]]
}

#[inline]
pub fn dot(a: Point, b: Point) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

/// Euclidean length. Coordinates stay O(1e2), so the plain square root
/// cannot overflow and is several times faster than `hypot`.
#[inline]
pub fn norm(a: Point) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub fn mat_vec(m: &Mat2, v: Point) -> Point {
    [
        m[0][0] * v[0] + m[0][1] * v[1],
        m[1][0] * v[0] + m[1][1] * v[1],
    ]
}

/// Shape of a bounded planar domain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case", deny_unknown_fields)]
pub enum Domain {
    /// `[0, length]` on the first axis.
    Interval {
        length: f64,
    },
    Disk {
        center: Point,
        radius: f64,
    },
    /// Rectangle `[x_min, x_max] x [-half_width, half_width]` with quarter-circle
    /// corners of radius `corner_radius`.
    Corridor {
        x_min: f64,
        x_max: f64,
        #[serde(default = "default_half_width")]
        half_width: f64,
        #[serde(default = "default_corner_radius")]
        corner_radius: f64,
    },
}

fn default_half_width() -> f64 {
    DEFAULT_CORRIDOR_HALF_WIDTH
}

fn default_corner_radius() -> f64 {
    DEFAULT_CORNER_RADIUS
}

/// Outward normal, tangential projection and mean curvature at a boundary point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryFrame {
    pub point: Point,
    pub normal: Point,
    pub projection: Mat2,
    pub curvature: f64,
}

impl BoundaryFrame {
    fn new(point: Point, normal: Point, curvature: f64, trivial_tangent: bool) -> Self {
        let projection = if trivial_tangent {
            [[0.0; 2]; 2]
        } else {
            tangent_projection(normal)
        };
        Self {
            point,
            normal,
            projection,
            curvature,
        }
    }

    /// `pi(x) v`.
    #[inline]
    pub fn project(&self, v: Point) -> Point {
        mat_vec(&self.projection, v)
    }
}

/// `E - n n^T` for a unit vector `n`.
pub fn tangent_projection(n: Point) -> Mat2 {
    [
        [1.0 - n[0] * n[0], -n[0] * n[1]],
        [-n[1] * n[0], 1.0 - n[1] * n[1]],
    ]
}

/// Which part of the corridor boundary a point is nearest to.
#[derive(Debug, Clone, Copy, PartialEq)]
enum CorridorPiece {
    Flat,
    Arc,
}

impl Domain {
    pub fn interval(length: f64) -> Result<Self> {
        let d = Domain::Interval { length };
        d.validate()?;
        Ok(d)
    }

    pub fn disk(center: Point, radius: f64) -> Result<Self> {
        let d = Domain::Disk { center, radius };
        d.validate()?;
        Ok(d)
    }

    pub fn corridor(x_min: f64, x_max: f64, half_width: f64, corner_radius: f64) -> Result<Self> {
        let d = Domain::Corridor {
            x_min,
            x_max,
            half_width,
            corner_radius,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |c: bool, msg: &str| {
            if c {
                Ok(())
            } else {
                Err(Error::InvalidDomain(msg.to_string()))
            }
        };
        match *self {
            Domain::Interval { length } => {
                ok(length.is_finite() && length > 0.0, "length must be > 0")
            }
            Domain::Disk { center, radius } => {
                ok(
                    center.iter().all(|c| c.is_finite()),
                    "center must be finite",
                )?;
                ok(radius.is_finite() && radius > 0.0, "radius must be > 0")
            }
            Domain::Corridor {
                x_min,
                x_max,
                half_width,
                corner_radius,
            } => {
                ok(
                    x_min.is_finite() && x_max.is_finite(),
                    "x-extent must be finite",
                )?;
                ok(half_width > 0.0, "half_width must be > 0")?;
                ok(
                    corner_radius > 0.0 && corner_radius < half_width,
                    "corner_radius must lie in (0, half_width)",
                )?;
                ok(
                    x_max - x_min > 2.0 * corner_radius,
                    "x-extent must exceed twice the corner radius",
                )
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Domain::Interval { .. } => "interval",
            Domain::Disk { .. } => "disk",
            Domain::Corridor { .. } => "corridor",
        }
    }

    /// Number of ambient coordinates the dynamics actually use.
    pub fn ambient_dim(&self) -> usize {
        match self {
            Domain::Interval { .. } => 1,
            _ => 2,
        }
    }

    /// Restricts an ambient vector to the coordinates the domain lives in.
    #[inline]
    pub fn ambient(&self, v: Point) -> Point {
        match self {
            Domain::Interval { .. } => [v[0], 0.0],
            _ => v,
        }
    }

    /// Lebesgue measure of the interior.
    pub fn interior_measure(&self) -> f64 {
        match *self {
            Domain::Interval { length } => length,
            Domain::Disk { radius, .. } => PI * radius * radius,
            Domain::Corridor {
                x_min,
                x_max,
                half_width,
                corner_radius: r,
            } => (x_max - x_min) * 2.0 * half_width - (4.0 - PI) * r * r,
        }
    }

    /// Surface measure of the boundary (counting measure for the interval).
    pub fn boundary_measure(&self) -> f64 {
        match *self {
            Domain::Interval { .. } => 2.0,
            Domain::Disk { radius, .. } => 2.0 * PI * radius,
            Domain::Corridor {
                x_min,
                x_max,
                half_width,
                corner_radius: r,
            } => 2.0 * (x_max - x_min) + 4.0 * half_width - (8.0 - 2.0 * PI) * r,
        }
    }

    /// Long-run fraction of time spent on the boundary for stickiness `gamma`:
    /// boundary mass `gamma s / (lambda + gamma s)` of the invariant law.
    pub fn boundary_mass(&self, gamma: f64) -> f64 {
        let gs = gamma * self.boundary_measure();
        gs / (self.interior_measure() + gs)
    }

    /// Axis-aligned bounding box `(min, max)` of the closed domain.
    pub fn bounding_box(&self) -> (Point, Point) {
        match *self {
            Domain::Interval { length } => ([0.0, 0.0], [length, 0.0]),
            Domain::Disk { center, radius } => (
                [center[0] - radius, center[1] - radius],
                [center[0] + radius, center[1] + radius],
            ),
            Domain::Corridor {
                x_min,
                x_max,
                half_width,
                ..
            } => ([x_min, -half_width], [x_max, half_width]),
        }
    }

    pub fn signed_distance(&self, x: Point) -> f64 {
        match *self {
            Domain::Interval { length } => (-x[0]).max(x[0] - length),
            Domain::Disk { center, radius } => norm(sub(x, center)) - radius,
            Domain::Corridor { corner_radius, .. } => {
                let q = self.corridor_offsets(x);
                let outside = norm([q[0].max(0.0), q[1].max(0.0)]);
                let inside = q[0].max(q[1]).min(0.0);
                outside + inside - corner_radius
            }
        }
    }

    /// Strict interior membership.
    #[inline]
    pub fn contains(&self, x: Point) -> bool {
        self.signed_distance(x) < 0.0
    }

    /// Nearest point on the boundary.
    pub fn project_to_boundary(&self, x: Point) -> Result<Point> {
        let (n, _) = self.nearest_normal(x)?;
        let d = self.signed_distance(x);
        let p = sub(x, scale(d, n));
        Ok(match *self {
            // snap exactly onto the analytic boundary
            Domain::Interval { length } => {
                if n[0] < 0.0 {
                    [0.0, 0.0]
                } else {
                    [length, 0.0]
                }
            }
            Domain::Disk { center, radius } => add(center, scale(radius, n)),
            Domain::Corridor { half_width, .. } => {
                if n[0] == 0.0 {
                    [p[0], half_width * n[1].signum()]
                } else {
                    p
                }
            }
        })
    }

    pub fn boundary_frame(&self, x: Point) -> Result<BoundaryFrame> {
        let d = self.signed_distance(x);
        if d.abs() > ON_BOUNDARY_TOL {
            return Err(Error::NotOnBoundary {
                point: x,
                distance: d,
            });
        }
        let (n, curvature) = self.nearest_normal(x)?;
        let trivial = matches!(self, Domain::Interval { .. });
        Ok(BoundaryFrame::new(x, n, curvature, trivial))
    }

    /// Outward unit normal at the nearest boundary point, with the mean
    /// curvature there.
    fn nearest_normal(&self, x: Point) -> Result<(Point, f64)> {
        let degenerate = || Error::DegenerateProjection { point: x };
        match *self {
            Domain::Interval { length } => {
                let mid = 0.5 * length;
                if (x[0] - mid).abs() <= MEDIAL_TOL * length {
                    Err(degenerate())
                } else if x[0] < mid {
                    Ok(([-1.0, 0.0], 0.0))
                } else {
                    Ok(([1.0, 0.0], 0.0))
                }
            }
            Domain::Disk { center, radius } => {
                let r = sub(x, center);
                let len = norm(r);
                if len <= MEDIAL_TOL * radius {
                    Err(degenerate())
                } else {
                    Ok((scale(1.0 / len, r), 1.0 / radius))
                }
            }
            Domain::Corridor { corner_radius, .. } => {
                let q = self.corridor_offsets(x);
                let rel = sub(x, self.corridor_center());
                let sx = rel[0].signum();
                let sy = rel[1].signum();
                let (piece, n) = if q[0] > 0.0 && q[1] > 0.0 {
                    let len = norm(q);
                    (CorridorPiece::Arc, [sx * q[0] / len, sy * q[1] / len])
                } else if q[0] > 0.0 {
                    (CorridorPiece::Flat, [sx, 0.0])
                } else if q[1] > 0.0 {
                    (CorridorPiece::Flat, [0.0, sy])
                } else {
                    // inside the inner rectangle: nearest flat side wins
                    if (q[0] - q[1]).abs() <= MEDIAL_TOL {
                        return Err(degenerate());
                    }
                    if q[0] > q[1] {
                        if rel[0] == 0.0 {
                            return Err(degenerate());
                        }
                        (CorridorPiece::Flat, [sx, 0.0])
                    } else {
                        if rel[1] == 0.0 {
                            return Err(degenerate());
                        }
                        (CorridorPiece::Flat, [0.0, sy])
                    }
                };
                let curvature = match piece {
                    CorridorPiece::Arc => 1.0 / corner_radius,
                    CorridorPiece::Flat => 0.0,
                };
                Ok((n, curvature))
            }
        }
    }

    fn corridor_center(&self) -> Point {
        match *self {
            Domain::Corridor { x_min, x_max, .. } => [0.5 * (x_min + x_max), 0.0],
            _ => unreachable!("corridor_center on non-corridor"),
        }
    }

    /// `|x - c| - (inner half extents)`, componentwise.
    fn corridor_offsets(&self, x: Point) -> Point {
        match *self {
            Domain::Corridor {
                x_min,
                x_max,
                half_width,
                corner_radius,
            } => {
                let c = self.corridor_center();
                let hx = 0.5 * (x_max - x_min) - corner_radius;
                let hy = half_width - corner_radius;
                [(x[0] - c[0]).abs() - hx, (x[1] - c[1]).abs() - hy]
            }
            _ => unreachable!("corridor_offsets on non-corridor"),
        }
    }

    /// Boundary point at arc-length-like parameter `s` in `[0, 1)`. Used to
    /// sample boundary points in tests and diagnostics; not uniform in arc
    /// length for the corridor.
    pub fn boundary_point(&self, s: f64) -> Point {
        let s = s.rem_euclid(1.0);
        match *self {
            Domain::Interval { length } => {
                if s < 0.5 {
                    [0.0, 0.0]
                } else {
                    [length, 0.0]
                }
            }
            Domain::Disk { center, radius } => {
                let th = 2.0 * PI * s;
                [center[0] + radius * th.cos(), center[1] + radius * th.sin()]
            }
            Domain::Corridor {
                x_min,
                x_max,
                half_width: w,
                corner_radius: r,
            } => {
                // eight pieces counter-clockwise from the bottom wall: four sides, four arcs
                let k = (s * 8.0).floor() as usize;
                let f = s * 8.0 - k as f64;
                let xl = x_min + r;
                let xr = x_max - r;
                let yb = -w + r;
                let yt = w - r;
                let arc = |cx: f64, cy: f64, a0: f64| {
                    let th = a0 + 0.5 * PI * f;
                    [cx + r * th.cos(), cy + r * th.sin()]
                };
                match k {
                    0 => [xl + f * (xr - xl), -w],
                    1 => arc(xr, yb, -0.5 * PI),
                    2 => [x_max, yb + f * (yt - yb)],
                    3 => arc(xr, yt, 0.0),
                    4 => [xr - f * (xr - xl), w],
                    5 => arc(xl, yt, 0.5 * PI),
                    6 => [x_min, yt - f * (yt - yb)],
                    _ => arc(xl, yb, PI),
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corridor() -> Domain {
        Domain::corridor(-1.0, 12.0, 0.1, 0.05).unwrap()
    }

    #[test]
    fn signed_distance_examples() {
        let disk = Domain::disk([0.0, 0.0], 1.0).unwrap();
        assert_eq!(disk.signed_distance([0.0, 0.0]), -1.0);
        assert_eq!(disk.signed_distance([1.0, 0.0]), 0.0);
        let c = corridor();
        assert!((c.signed_distance([0.0, 0.25]) - 0.15).abs() < 1e-15);
        assert!((c.signed_distance([0.0, 0.05]) + 0.05).abs() < 1e-15);
    }

    #[test]
    fn corridor_corner_distance() {
        let c = corridor();
        // outside the rounded corner at (12, 0.1): corner centre (11.95, 0.05)
        let p = [12.0, 0.1];
        let expected = (2.0f64 * 0.05 * 0.05).sqrt() - 0.05;
        assert!((c.signed_distance(p) - expected).abs() < 1e-14);
    }

    #[test]
    fn projection_examples() {
        let disk = Domain::disk([0.0, 0.0], 1.0).unwrap();
        assert_eq!(disk.project_to_boundary([2.0, 0.0]).unwrap(), [1.0, 0.0]);
        assert_eq!(
            disk.project_to_boundary([0.0, 0.0]),
            Err(Error::DegenerateProjection { point: [0.0, 0.0] })
        );
        let p = corridor().project_to_boundary([0.3, 0.05]).unwrap();
        assert_eq!(p, [0.3, 0.1]);
        assert!(matches!(
            corridor().project_to_boundary([0.3, 0.0]),
            Err(Error::DegenerateProjection { .. })
        ));
        let iv = Domain::interval(1.0).unwrap();
        assert_eq!(iv.project_to_boundary([-0.015, 0.0]).unwrap(), [0.0, 0.0]);
        assert!(iv.project_to_boundary([0.5, 0.0]).is_err());
    }

    #[test]
    fn frame_examples() {
        let disk = Domain::disk([0.0, 0.0], 2.0).unwrap();
        let f = disk.boundary_frame([2.0, 0.0]).unwrap();
        assert_eq!(f.normal, [1.0, 0.0]);
        assert_eq!(f.curvature, 0.5);

        let f = corridor().boundary_frame([0.0, 0.1]).unwrap();
        assert_eq!(f.normal, [0.0, 1.0]);
        assert_eq!(f.projection, [[1.0, 0.0], [0.0, 0.0]]);
        assert_eq!(f.curvature, 0.0);

        let f = Domain::interval(1.0)
            .unwrap()
            .boundary_frame([0.0, 0.0])
            .unwrap();
        assert_eq!(f.normal, [-1.0, 0.0]);
        assert_eq!(f.projection, [[0.0; 2]; 2]);
        assert_eq!(f.curvature, 0.0);
    }

    #[test]
    fn corner_arc_curvature() {
        let c = corridor();
        let p = c.boundary_point(1.5 / 8.0);
        let f = c.boundary_frame(p).unwrap();
        assert!((f.curvature - 20.0).abs() < 1e-12);
    }

    #[test]
    fn off_boundary_frame_rejected() {
        let disk = Domain::disk([0.0, 0.0], 1.0).unwrap();
        assert!(matches!(
            disk.boundary_frame([0.5, 0.0]),
            Err(Error::NotOnBoundary { .. })
        ));
    }

    #[test]
    fn measures() {
        let disk = Domain::disk([0.3, -0.2], 1.0).unwrap();
        assert!((disk.interior_measure() - PI).abs() < 1e-12);
        assert!((disk.boundary_measure() - 2.0 * PI).abs() < 1e-12);
        let iv = Domain::interval(2.5).unwrap();
        assert!((iv.interior_measure() - 2.5).abs() < 1e-12);
        assert!((iv.boundary_measure() - 2.0).abs() < 1e-12);
        // a corridor with r -> w/2 still has positive measures
        let c = corridor();
        assert!(c.interior_measure() > 0.0 && c.boundary_measure() > 0.0);
    }

    #[test]
    fn boundary_mass_formula() {
        let iv = Domain::interval(1.0).unwrap();
        assert!((iv.boundary_mass(0.5) - 0.5).abs() < 1e-15);
        let disk = Domain::disk([0.0, 0.0], 1.0).unwrap();
        assert!((disk.boundary_mass(0.5) - 0.5).abs() < 1e-15);
        assert!((disk.boundary_mass(0.25) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn invalid_shapes() {
        assert!(Domain::interval(0.0).is_err());
        assert!(Domain::disk([0.0, 0.0], -1.0).is_err());
        assert!(Domain::corridor(0.0, 1.0, 0.1, 0.1).is_err());
        assert!(Domain::corridor(0.0, 1.0, 0.1, 0.0).is_err());
    }
}
