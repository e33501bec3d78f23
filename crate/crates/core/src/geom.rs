//! Planar geometry helpers: angle wrapping, rigid transforms, polyline
//! centerlines with arc-length parametrization, oriented-box overlap.

/// Wraps an angle into (-pi, pi]. Exact identity on already-wrapped values.
pub fn wrap_angle(a: f64) -> f64 {
    if a > -std::f64::consts::PI && a <= std::f64::consts::PI {
        return a;
    }
    let two_pi = std::f64::consts::TAU;
    let r = a.rem_euclid(two_pi);
    if r > std::f64::consts::PI {
        r - two_pi
    } else {
        r
    }
}

/// Rotates a point by `angle` about the origin.
pub fn rotate(p: (f64, f64), angle: f64) -> (f64, f64) {
    let (s, c) = angle.sin_cos();
    (c * p.0 - s * p.1, s * p.0 + c * p.1)
}

/// Expresses a global point in the frame at `origin` with heading `yaw`.
pub fn to_frame(p: (f64, f64), origin: (f64, f64), yaw: f64) -> (f64, f64) {
    rotate((p.0 - origin.0, p.1 - origin.1), -yaw)
}

/// Maps a point from the frame at `origin`/`yaw` back to global coordinates.
pub fn from_frame(p: (f64, f64), origin: (f64, f64), yaw: f64) -> (f64, f64) {
    let r = rotate(p, yaw);
    (r.0 + origin.0, r.1 + origin.1)
}

pub fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

/// A polyline with cumulative arc length, used for lane centerlines and
/// routes. Poses along it are linearly interpolated; headings follow the
/// segment tangents.
#[derive(Debug, Clone)]
pub struct Centerline {
    pts: Vec<(f64, f64)>,
    cum: Vec<f64>,
}

impl Centerline {
    pub fn new(pts: Vec<(f64, f64)>) -> Self {
        assert!(pts.len() >= 2, "centerline needs at least two points");
        let mut cum = Vec::with_capacity(pts.len());
        let mut s = 0.0;
        cum.push(0.0);
        for w in pts.windows(2) {
            s += dist(w[0], w[1]);
            cum.push(s);
        }
        Centerline { pts, cum }
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.pts
    }

    pub fn total_len(&self) -> f64 {
        *self.cum.last().unwrap()
    }

    /// Position and heading at arc length `s`. Clamped at the ends; beyond the
    /// last point the pose extrapolates along the final tangent.
    pub fn pose_at(&self, s: f64) -> ((f64, f64), f64) {
        let n = self.pts.len();
        if s <= 0.0 {
            let yaw = segment_yaw(self.pts[0], self.pts[1]);
            let p = self.pts[0];
            return ((p.0 + s * yaw.cos(), p.1 + s * yaw.sin()), yaw);
        }
        if s >= self.total_len() {
            let yaw = segment_yaw(self.pts[n - 2], self.pts[n - 1]);
            let extra = s - self.total_len();
            let p = self.pts[n - 1];
            return ((p.0 + extra * yaw.cos(), p.1 + extra * yaw.sin()), yaw);
        }
        // cum is sorted; find the segment containing s.
        let i = match self
            .cum
            .binary_search_by(|c| c.partial_cmp(&s).unwrap())
        {
            Ok(i) => i.min(n - 2),
            Err(i) => i - 1,
        };
        let seg = self.cum[i + 1] - self.cum[i];
        let t = if seg > 0.0 { (s - self.cum[i]) / seg } else { 0.0 };
        let a = self.pts[i];
        let b = self.pts[i + 1];
        (
            (a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1)),
            segment_yaw(a, b),
        )
    }

    /// Projects a point onto the centerline. Returns (arc length, signed
    /// lateral offset, absolute distance); lateral is positive to the left of
    /// the travel direction.
    pub fn project(&self, p: (f64, f64)) -> (f64, f64, f64) {
        let mut best = (0.0, 0.0, f64::INFINITY);
        for i in 0..self.pts.len() - 1 {
            let a = self.pts[i];
            let b = self.pts[i + 1];
            let ab = (b.0 - a.0, b.1 - a.1);
            let len2 = ab.0 * ab.0 + ab.1 * ab.1;
            let t = if len2 > 0.0 {
                (((p.0 - a.0) * ab.0 + (p.1 - a.1) * ab.1) / len2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let q = (a.0 + t * ab.0, a.1 + t * ab.1);
            let d = dist(p, q);
            if d < best.2 {
                let s = self.cum[i] + t * len2.sqrt();
                // Cross product sign gives the side.
                let cross = ab.0 * (p.1 - q.1) - ab.1 * (p.0 - q.0);
                let lateral = if cross >= 0.0 { d } else { -d };
                best = (s, lateral, d);
            }
        }
        best
    }

    pub fn min_distance(&self, p: (f64, f64)) -> f64 {
        self.project(p).2
    }

    /// Resamples the polyline to exactly `n` points, evenly spaced in arc
    /// length.
    pub fn resample(&self, n: usize) -> Vec<(f64, f64)> {
        assert!(n >= 2);
        let total = self.total_len();
        (0..n)
            .map(|i| self.pose_at(total * i as f64 / (n - 1) as f64).0)
            .collect()
    }
}

fn segment_yaw(a: (f64, f64), b: (f64, f64)) -> f64 {
    (b.1 - a.1).atan2(b.0 - a.0)
}

/// Oriented rectangle (vehicle footprint).
#[derive(Debug, Clone, Copy)]
pub struct Obb {
    pub center: (f64, f64),
    pub yaw: f64,
    pub length: f64,
    pub width: f64,
}

impl Obb {
    fn corners(&self) -> [(f64, f64); 4] {
        let (hl, hw) = (self.length / 2.0, self.width / 2.0);
        let local = [(hl, hw), (hl, -hw), (-hl, -hw), (-hl, hw)];
        local.map(|p| from_frame(p, self.center, self.yaw))
    }

    /// Separating-axis overlap test for two oriented rectangles.
    pub fn overlaps(&self, other: &Obb) -> bool {
        let ca = self.corners();
        let cb = other.corners();
        for rect in [&ca, &cb] {
            for i in 0..2 {
                let edge = (rect[i + 1].0 - rect[i].0, rect[i + 1].1 - rect[i].1);
                let axis = (-edge.1, edge.0);
                let proj = |cs: &[(f64, f64); 4]| {
                    let mut lo = f64::INFINITY;
                    let mut hi = f64::NEG_INFINITY;
                    for c in cs {
                        let d = c.0 * axis.0 + c.1 * axis.1;
                        lo = lo.min(d);
                        hi = hi.max(d);
                    }
                    (lo, hi)
                };
                let (alo, ahi) = proj(&ca);
                let (blo, bhi) = proj(&cb);
                if ahi < blo || bhi < alo {
                    return false;
                }
            }
        }
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    #[test]
    fn wrap_angle_range_and_boundary() {
        assert_eq!(wrap_angle(0.0), 0.0);
        assert!((wrap_angle(4.0) - (4.0 - std::f64::consts::TAU)).abs() < 1e-12);
        // pi maps to itself, -pi maps to +pi: range is (-pi, pi].
        assert_eq!(wrap_angle(PI), PI);
        assert_eq!(wrap_angle(-PI), PI);
        for k in -10..10 {
            let a = 0.37 + k as f64 * 1.1;
            let w = wrap_angle(a);
            assert!(w > -PI && w <= PI);
            assert!(((a - w) / std::f64::consts::TAU).round() * std::f64::consts::TAU + w - a < 1e-9);
        }
    }

    #[test]
    fn frame_round_trip() {
        let origin = (3.0, -2.0);
        let yaw = 0.7;
        let p = (5.5, 1.25);
        let local = to_frame(p, origin, yaw);
        let back = from_frame(local, origin, yaw);
        assert!(dist(p, back) < 1e-12);
    }

    #[test]
    fn centerline_projection_sign() {
        let line = Centerline::new(vec![(0.0, 0.0), (10.0, 0.0)]);
        let (s, lat, d) = line.project((4.0, 1.5));
        assert!((s - 4.0).abs() < 1e-12);
        assert!((lat - 1.5).abs() < 1e-12);
        assert!((d - 1.5).abs() < 1e-12);
        let (_, lat, _) = line.project((4.0, -0.5));
        assert!((lat + 0.5).abs() < 1e-12);
    }

    #[test]
    fn centerline_pose_extrapolates() {
        let line = Centerline::new(vec![(0.0, 0.0), (0.0, 5.0)]);
        let ((x, y), yaw) = line.pose_at(7.0);
        assert!((x - 0.0).abs() < 1e-12);
        assert!((y - 7.0).abs() < 1e-12);
        assert!((yaw - FRAC_PI_2).abs() < 1e-12);
    }

    #[test]
    fn obb_overlap_cases() {
        let a = Obb {
            center: (0.0, 0.0),
            yaw: 0.0,
            length: 4.0,
            width: 2.0,
        };
        let b = Obb {
            center: (3.0, 0.0),
            yaw: 0.0,
            length: 4.0,
            width: 2.0,
        };
        assert!(a.overlaps(&b));
        let c = Obb {
            center: (0.0, 2.1),
            yaw: 0.0,
            length: 4.0,
            width: 2.0,
        };
        assert!(!a.overlaps(&c));
        // Rotated near-miss that an AABB test would get wrong.
        let d = Obb {
            center: (3.4, 1.6),
            yaw: FRAC_PI_2 / 2.0,
            length: 4.0,
            width: 2.0,
        };
        assert!(a.overlaps(&d));
    }
}
