//! Lines, SL2 lines, reguli, (delta, rho)-regulus strips and their dual tubes.
//!
//! A non-horizontal line is stored by its parameters `(a, b, c, d)`: it is
//! `(a, b, 0) + span(c, d, 1)`. The subfamily with `a == d` is identified with
//! points `(a, b, c)` of R^3 ([`LLine`]), and every regulus strip in the working
//! family is written with such a core.

use nalgebra::{Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Vec4 = Vector4<f64>;

/// Degeneracy threshold shared by every chart and curve guard.
pub const EPS_MIN: f64 = 1e-6;

/// A line `(a, b, 0) + span(c, d, 1)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl Line {
    pub fn new(a: f64, b: f64, c: f64, d: f64) -> Self {
        Self { a, b, c, d }
    }

    #[inline]
    pub fn point_at(&self, t: f64) -> Vec3 {
        Vec3::new(self.a + self.c * t, self.b + self.d * t, t)
    }

    pub fn breve(&self) -> Vec4 {
        Vec4::new(self.a, self.b, self.c, self.d)
    }

    pub fn det(&self) -> f64 {
        self.a * self.d - self.b * self.c
    }

    pub fn is_sl2(&self, tol: f64) -> bool {
        (self.det() - 1.0).abs() <= tol
    }

    /// Rewrite an SL2 line as an `a == d` line after swapping the second and
    /// third physical coordinates.
    ///
    /// The original point at height `s` maps to the returned line at height
    /// `b + d s`.
    pub fn sl2_reparameterize(&self) -> Result<LLine> {
        if !self.is_sl2(1e-9) {
            return Err(Error::NotSl2(self.det()));
        }
        if (self.a * self.d).abs() <= EPS_MIN {
            return Err(Error::DegenerateLine("ad = 0"));
        }
        let k = 1.0 + self.b * self.c;
        if k.abs() <= EPS_MIN {
            return Err(Error::DegenerateLine("1 + bc = 0"));
        }
        Ok(LLine::new(self.a / k, -self.a * self.b / k, self.a * self.c / k))
    }
}

pub fn line_point(line: &Line, t: f64) -> Vec3 {
    line.point_at(t)
}

pub fn sl2_check(line: &Line, tol: f64) -> bool {
    line.is_sl2(tol)
}

/// The line `l_(a,b,c) := l_(a,b,c,a)`, i.e. the point `(a, b, c)` of the
/// parameter space.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LLine {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl LLine {
    pub fn new(a: f64, b: f64, c: f64) -> Self {
        Self { a, b, c }
    }

    pub fn from_param(x: &Vec3) -> Self {
        Self::new(x.x, x.y, x.z)
    }

    pub fn param(&self) -> Vec3 {
        Vec3::new(self.a, self.b, self.c)
    }

    #[inline]
    pub fn point_at(&self, t: f64) -> Vec3 {
        Vec3::new(self.a + self.c * t, self.b + self.a * t, t)
    }

    pub fn as_line(&self) -> Line {
        Line::new(self.a, self.b, self.c, self.a)
    }

    pub fn breve(&self) -> Vec4 {
        Vec4::new(self.a, self.b, self.c, self.a)
    }
}

/// The regulus `{(a+ct, b+at, t) + u(1,-t,0)}` ruled by horizontal segments.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Regulus {
    pub core: LLine,
}

impl Regulus {
    #[inline]
    pub fn point_at(&self, t: f64, u: f64) -> Vec3 {
        let c = self.core.point_at(t);
        Vec3::new(c.x + u, c.y - u * t, t)
    }
}

/// Best `(t, u, residual)` over the membership t-net for the set
/// `{core(t) + u(1,-t,0) : t in [0,1], |u| <= rho}`, with no cube clipping.
///
/// The net is `p3` and `p3 ± k delta/4` for `k = 1..4`, kept inside `[0, 1]`;
/// `u` is the clamped least-squares offset along `(1,-t,0)`. Returns as soon as
/// a residual within `accept` is found.
pub(crate) fn regulus_net_search(
    core: &LLine,
    rho: f64,
    step: f64,
    p: &Vec3,
    accept: f64,
) -> Option<(f64, f64, f64)> {
    let mut best: Option<(f64, f64, f64)> = None;
    for k in 0..9i32 {
        // order: 0, +1, -1, +2, -2, ...
        let off = if k == 0 { 0.0 } else if k % 2 == 1 { ((k + 1) / 2) as f64 } else { -((k / 2) as f64) };
        let t = p.z + off * step;
        if !(0.0..=1.0).contains(&t) {
            continue;
        }
        let rx = p.x - (core.a + core.c * t);
        let ry = p.y - (core.b + core.a * t);
        let rz = p.z - t;
        let u = ((rx - t * ry) / (1.0 + t * t)).clamp(-rho, rho);
        let ex = rx - u;
        let ey = ry + u * t;
        let res2 = ex * ex + ey * ey + rz * rz;
        if best.map_or(true, |b| res2 < b.2) {
            best = Some((t, u, res2));
        }
        if res2 <= accept * accept {
            break;
        }
    }
    best.map(|(t, u, r2)| (t, u, r2.sqrt()))
}

/// A `(delta, rho)`-regulus strip: the delta-neighbourhood of the regulus
/// patch `|u| <= rho`, `t in [0,1]`, clipped to the unit cube.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegulusStrip {
    pub core: LLine,
    pub delta: f64,
    pub rho: f64,
}

impl RegulusStrip {
    pub fn new(core: LLine, delta: f64, rho: f64) -> Result<Self> {
        check_scales(delta, rho)?;
        Ok(Self { core, delta, rho })
    }

    /// Construct without checking `rho <= sqrt(delta)`; used for thickened or
    /// widened comparison sets.
    pub fn unchecked(core: LLine, delta: f64, rho: f64) -> Self {
        Self { core, delta, rho }
    }

    pub fn regulus(&self) -> Regulus {
        Regulus { core: self.core }
    }

    /// Membership witness `(t, u)`, or `None`.
    pub fn witness(&self, p: &Vec3) -> Option<(f64, f64)> {
        if !in_unit_cube(p) {
            return None;
        }
        self.witness_unclipped(p)
    }

    pub fn witness_unclipped(&self, p: &Vec3) -> Option<(f64, f64)> {
        regulus_net_search(&self.core, self.rho, self.delta / 4.0, p, self.delta)
            .filter(|&(_, _, r)| r <= self.delta)
            .map(|(t, u, _)| (t, u))
    }

    #[inline]
    pub fn contains(&self, p: &Vec3) -> bool {
        self.witness(p).is_some()
    }

    pub fn dual_tube(&self) -> DualTube {
        DualTube::new(self.core.breve(), self.rho, self.delta)
    }
}

pub fn check_scales(delta: f64, rho: f64) -> Result<()> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Invalid(format!("delta = {delta} must lie in (0, 1)")));
    }
    if !(rho >= delta && rho <= delta.sqrt() * (1.0 + 1e-9)) {
        return Err(Error::Invalid(format!(
            "rho = {rho} must lie in [delta, sqrt(delta)] = [{delta}, {}]",
            delta.sqrt()
        )));
    }
    Ok(())
}

#[inline]
pub fn in_unit_cube(p: &Vec3) -> bool {
    (0.0..=1.0).contains(&p.x) && (0.0..=1.0).contains(&p.y) && (0.0..=1.0).contains(&p.z)
}

pub fn strip_membership(strip: &RegulusStrip, p: &Vec3) -> (bool, Option<(f64, f64)>) {
    let w = strip.witness(p);
    (w.is_some(), w)
}

/// Spine direction of every dual tube, before normalisation.
pub const DUAL_AXIS: [f64; 4] = [1.0, 0.0, 0.0, -1.0];

/// The parameter-space image of a strip: `{center + u(1,0,0,-1) : |u| <= rho}`
/// thickened by a 4-ball of radius `delta`.
///
/// `half_length` is the range of `u`; the Euclidean half-length of the spine
/// is `half_length * sqrt(2)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DualTube {
    pub center: Vec4,
    pub axis: Vec4,
    pub half_length: f64,
    pub radius: f64,
}

impl DualTube {
    pub fn new(center: Vec4, half_length: f64, radius: f64) -> Self {
        Self {
            center,
            axis: Vec4::from(DUAL_AXIS) / 2f64.sqrt(),
            half_length,
            radius,
        }
    }

    pub fn spine_point(&self, u: f64) -> Vec4 {
        self.center + Vec4::from(DUAL_AXIS) * u
    }

    pub fn distance_to_spine(&self, q: &Vec4) -> f64 {
        let r = q - self.center;
        let u = ((r[0] - r[3]) / 2.0).clamp(-self.half_length, self.half_length);
        (r - Vec4::from(DUAL_AXIS) * u).norm()
    }

    #[inline]
    pub fn contains(&self, q: &Vec4) -> bool {
        self.distance_to_spine(q) <= self.radius
    }
}

pub fn dual_tube(strip: &RegulusStrip) -> DualTube {
    strip.dual_tube()
}

/// Distance from `q` to the regulus swept by the horizontal rays through the
/// origin's vertical axis and the points of `line`:
/// `{((1+s)(a+ct), (1+s)(b+dt), t) : s real}`.
///
/// Heights are scanned on a net of step `1e-3` over `q3 ± 0.5` with the
/// closed-form optimal `s`, then refined by ternary search around the best
/// net height.
pub fn radial_regulus_distance(line: &Line, q: &Vec3) -> f64 {
    let at = |tau: f64| -> f64 {
        let p = line.point_at(tau);
        let (px, py) = (p.x, p.y);
        let n2 = px * px + py * py;
        let (hx, hy) = if n2 > 0.0 {
            let k = (q.x * px + q.y * py) / n2;
            (q.x - k * px, q.y - k * py)
        } else {
            (q.x, q.y)
        };
        (hx * hx + hy * hy + (q.z - tau) * (q.z - tau)).sqrt()
    };
    let step = 1e-3;
    let mut best = (at(q.z), q.z);
    for k in 1..=500 {
        for tau in [q.z + k as f64 * step, q.z - k as f64 * step] {
            let d = at(tau);
            if d < best.0 {
                best = (d, tau);
            }
        }
    }
    let (mut lo, mut hi) = (best.1 - step, best.1 + step);
    for _ in 0..60 {
        let m1 = lo + (hi - lo) / 3.0;
        let m2 = hi - (hi - lo) / 3.0;
        if at(m1) < at(m2) {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    best.0.min(at(0.5 * (lo + hi)))
}

/// Largest distance from the line with `breve = s * breve(ell)` to the regulus
/// of `ell`, over `n_samples` equispaced heights in `[0, 1]`.
pub fn ruling_defect(ell: &LLine, s: f64, n_samples: usize) -> f64 {
    let other = LLine::new(s * ell.a, s * ell.b, s * ell.c);
    ruling_defect_between(ell, &other.as_line(), n_samples)
}

/// Same as [`ruling_defect`] for an arbitrary candidate line.
pub fn ruling_defect_between(ell: &LLine, other: &Line, n_samples: usize) -> f64 {
    let base = ell.as_line();
    let n = n_samples.max(2);
    (0..n)
        .map(|i| {
            let t = i as f64 / (n - 1) as f64;
            radial_regulus_distance(&base, &other.point_at(t))
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    const D: f64 = 1.0 / 64.0;
    const R: f64 = 1.0 / 8.0;

    #[test]
    fn line_point_examples() {
        assert_eq!(line_point(&Line::new(0., 0., 0., 0.), 0.5), Vec3::new(0., 0., 0.5));
        let l = Line::new(1., 2., 3., 4.);
        assert_eq!(l.point_at(0.0), Vec3::new(1., 2., 0.));
        assert_eq!(l.point_at(1.0), Vec3::new(4., 6., 1.));
    }

    #[test]
    fn sl2_check_examples() {
        assert!(sl2_check(&Line::new(1., 0., 0., 1.), 1e-12));
        assert!(sl2_check(&Line::new(2., 1., 1., 1.), 1e-12));
        assert!(!sl2_check(&Line::new(1., 1., 1., 1.), 1e-3));
    }

    #[test]
    fn reparameterize_examples() {
        let l = Line::new(1., 0., 0., 1.).sl2_reparameterize().unwrap();
        assert_eq!(l, LLine::new(1., 0., 0.));
        let src = Line::new(2., 1., 1., 1.);
        let l = src.sl2_reparameterize().unwrap();
        assert_eq!(l, LLine::new(1., -1., 1.));
        for i in 0..=20 {
            let t = i as f64 / 20.0;
            let p = src.point_at(t);
            let swapped = Vec3::new(p.x, p.z, p.y);
            assert!((swapped - l.point_at(1.0 + t)).norm() < 1e-12);
        }
        assert!(matches!(
            Line::new(0., 1., -1., 1.).sl2_reparameterize(),
            Err(Error::DegenerateLine(_))
        ));
        assert!(matches!(Line::new(1., 1., 1., 1.).sl2_reparameterize(), Err(Error::NotSl2(_))));
    }

    #[test]
    fn membership_examples() {
        let s = RegulusStrip::new(LLine::new(0., 0., 0.), D, R).unwrap();
        let (inside, w) = strip_membership(&s, &Vec3::new(0., 0., 0.5));
        assert!(inside);
        assert_eq!(w, Some((0.5, 0.0)));
        let (inside, w) = strip_membership(&s, &Vec3::new(R, -R / 2.0, 0.5));
        // the point is off the cube (y < 0)
        assert!(!inside && w.is_none());
        let w = s.witness_unclipped(&Vec3::new(R, -R / 2.0, 0.5)).unwrap();
        assert!((w.0 - 0.5).abs() < 1e-15 && (w.1 - R).abs() < 1e-15);
        assert!(!s.contains(&Vec3::new(2. * R + 2. * D, 0., 0.5)));
        assert!(s.witness_unclipped(&Vec3::new(2. * R + 2. * D, 0., 0.5)).is_none());
    }

    #[test]
    fn outside_point_brute_force_residual() {
        // brute-force minimal residual over a fine (t, u) grid exceeds delta
        let s = RegulusStrip::new(LLine::new(0., 0., 0.), D, R).unwrap();
        let p = Vec3::new(2. * R + 2. * D, 0., 0.5);
        let mut best = f64::INFINITY;
        for i in 0..=2000 {
            let t = i as f64 / 2000.0;
            for j in 0..=200 {
                let u = -R + 2.0 * R * j as f64 / 200.0;
                best = best.min((p - s.regulus().point_at(t, u)).norm());
            }
        }
        assert!(best > D);
    }

    #[test]
    fn dual_tube_examples() {
        let s = RegulusStrip::new(LLine::new(0., 0., 0.), D, R).unwrap();
        assert_eq!(dual_tube(&s).center, Vec4::zeros());
        let s = RegulusStrip::new(LLine::new(1., -1., 1.), D, R).unwrap();
        let t = dual_tube(&s);
        assert_eq!(t.center, Vec4::new(1., -1., 1., 1.));
        assert!((t.axis.norm() - 1.0).abs() < 1e-15);
        for u in [-R, -R / 3.0, 0.0, R] {
            let q = Vec4::new(1. + u, -1., 1., 1. - u);
            assert!(t.distance_to_spine(&q) < 1e-15);
            assert!(t.contains(&q));
        }
    }

    #[test]
    fn ruling_defect_examples() {
        let ell = LLine::new(1., 0., 0.3);
        assert_eq!(ruling_defect(&ell, 1.0, 16), 0.0);
        assert!(ruling_defect(&ell, 1.25, 64) <= 1e-6);
        let other = Line::new(1., 0.5, 0.3, 1.);
        assert!(ruling_defect_between(&ell, &other, 64) > 1e-2);
    }

    #[test]
    fn scale_validation() {
        assert!(RegulusStrip::new(LLine::new(0., 0., 0.), D, D / 2.0).is_err());
        assert!(RegulusStrip::new(LLine::new(0., 0., 0.), D, 0.2).is_err());
        assert!(RegulusStrip::new(LLine::new(0., 0., 0.), D, D.sqrt()).is_ok());
    }
}
