//! Point-line duality for the `a == d` family, the moving frame of the dual
//! rays, the projections `pi_t`, wave-packet planks, and the curve
//! generalisation of the frame computation.
//!
//! The dual-ray direction is `d(t) = (-t, t^2, 1) = e1 x e2` with
//! `e1 = (1, 0, t)`, `e2 = (t, 1, 0)`. The line `l_x` passes through the
//! physical point `p = (p1, p2, t)` exactly when `x` lies on
//! `(p1, p2 - p1 t, 0) + span(d(t))`.

use nalgebra::{Matrix3, Vector2};

use crate::error::{Error, Result};
use crate::geom::{LLine, RegulusStrip, Vec3, EPS_MIN};

pub type Vec2 = Vector2<f64>;

#[inline]
pub fn dual_direction(t: f64) -> Vec3 {
    Vec3::new(-t, t * t, 1.0)
}

/// The parameter-space line of all `x` whose `l_x` passes through `p`.
pub fn dual_ray(p: &Vec3) -> (Vec3, Vec3) {
    let t = p.z;
    (Vec3::new(p.x, p.y - p.x * t, 0.0), dual_direction(t))
}

/// Moving frame of the dual rays at height `t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Frame {
    pub t: f64,
    pub d: Vec3,
    pub xi: Vec3,
    pub xi_prime: Vec3,
    pub v: Vec3,
}

impl Frame {
    /// Normalised `xi'`, the middle axis of the wave-packet planks.
    pub fn mid(&self) -> Vec3 {
        self.xi_prime.normalize()
    }

    /// `xi x mid`, the short axis.
    pub fn short(&self) -> Vec3 {
        self.xi.cross(&self.mid())
    }
}

pub fn frame_at(t: f64) -> Frame {
    let d = dual_direction(t);
    let n2 = 1.0 + t * t + t.powi(4);
    let n = n2.sqrt();
    let dd = Vec3::new(-1.0, 2.0 * t, 0.0);
    let xi_prime = dd / n - d * (d.dot(&dd) / (n2 * n));
    let v = Vec3::new(1.0 - t.powi(4), -2.0 * t - t.powi(3), 2.0 * t.powi(3) + t) / n2;
    Frame { t, d, xi: d / n, xi_prime, v }
}

/// `(2t^3 + t, -t^3 - 2t, t^4 - 1) / |d|^3`, a candidate closed form for
/// `xi'` checked against finite differences; nothing downstream uses it.
pub fn reference_xi_prime(t: f64) -> Vec3 {
    let n2: f64 = 1.0 + t * t + t.powi(4);
    Vec3::new(2.0 * t.powi(3) + t, -t.powi(3) - 2.0 * t, t.powi(4) - 1.0) / n2.powf(1.5)
}

/// Coordinates of the orthogonal projection of `y` onto `d(t)^perp` in the
/// basis `(mid, short)` of [`frame_at`].
pub fn project_pi_t(y: &Vec3, t: f64) -> Vec2 {
    let f = frame_at(t);
    Vec2::new(y.dot(&f.mid()), y.dot(&f.short()))
}

/// A box with orthonormal axes (rows of `axes`: long, mid, short).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Plank {
    pub center: Vec3,
    pub axes: Matrix3<f64>,
    pub half_extents: Vec3,
}

impl Plank {
    pub fn local(&self, p: &Vec3) -> Vec3 {
        self.axes * (p - self.center)
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        let q = self.local(p);
        (0..3).all(|i| q[i].abs() <= self.half_extents[i])
    }
}

/// Axes shared by every plank at height `t`.
pub fn plank_axes(t: f64) -> Matrix3<f64> {
    let f = frame_at(t);
    let (m, s) = (f.mid(), f.short());
    Matrix3::new(f.xi.x, f.xi.y, f.xi.z, m.x, m.y, m.z, s.x, s.y, s.z)
}

pub fn plank_for(x: &Vec3, t: f64, rho: f64, delta: f64) -> Plank {
    debug_assert!(delta <= rho);
    Plank {
        center: *x,
        axes: plank_axes(t),
        half_extents: Vec3::new(1.0, rho, delta),
    }
}

/// A segment with a thickness, in some plane.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tube2 {
    pub center: Vec2,
    /// unit direction
    pub direction: Vec2,
    /// Euclidean half-length of the core segment
    pub half_length: f64,
    pub thickness: f64,
}

impl Tube2 {
    pub fn endpoints(&self) -> (Vec2, Vec2) {
        let h = self.direction * self.half_length;
        (self.center - h, self.center + h)
    }

    pub fn distance_to_core(&self, q: &Vec2) -> f64 {
        let r = q - self.center;
        let s = r.dot(&self.direction).clamp(-self.half_length, self.half_length);
        (r - self.direction * s).norm()
    }

    pub fn contains(&self, q: &Vec2) -> bool {
        self.distance_to_core(q) <= self.thickness
    }

    /// Area of the thickened segment (a stadium).
    pub fn area(&self) -> f64 {
        4.0 * self.half_length * self.thickness + std::f64::consts::PI * self.thickness.powi(2)
    }
}

/// Horizontal slice `{(a+ct, b+at) + u(1,-t) : |u| <= rho}` of a strip,
/// thickened by `delta`. The Euclidean half-length is `rho * sqrt(1 + t^2)`.
pub fn slice_tube(strip: &RegulusStrip, t: f64) -> Tube2 {
    slice_tube_of(&strip.core, strip.rho, strip.delta, t)
}

pub fn slice_tube_of(core: &LLine, rho: f64, delta: f64, t: f64) -> Tube2 {
    let p = core.point_at(t);
    let len = (1.0 + t * t).sqrt();
    Tube2 {
        center: Vec2::new(p.x, p.y),
        direction: Vec2::new(1.0 / len, -t / len),
        half_length: rho * len,
        thickness: delta,
    }
}

/// A closed segment in a plane.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Segment2 {
    pub a: Vec2,
    pub b: Vec2,
}

impl Segment2 {
    pub fn length(&self) -> f64 {
        (self.b - self.a).norm()
    }

    pub fn as_tube(&self, thickness: f64) -> Tube2 {
        let len = self.length();
        Tube2 {
            center: (self.a + self.b) / 2.0,
            direction: if len > 0.0 { (self.b - self.a) / len } else { Vec2::new(1.0, 0.0) },
            half_length: len / 2.0,
            thickness,
        }
    }
}

/// Distance between two planar segments.
pub fn segment_distance(p: &Segment2, q: &Segment2) -> f64 {
    if segments_cross(p, q) {
        return 0.0;
    }
    let pt = p.as_tube(0.0);
    let qt = q.as_tube(0.0);
    pt.distance_to_core(&q.a)
        .min(pt.distance_to_core(&q.b))
        .min(qt.distance_to_core(&p.a))
        .min(qt.distance_to_core(&p.b))
}

fn cross2(a: &Vec2, b: &Vec2) -> f64 {
    a.x * b.y - a.y * b.x
}

fn segments_cross(p: &Segment2, q: &Segment2) -> bool {
    let r = p.b - p.a;
    let s = q.b - q.a;
    let den = cross2(&r, &s);
    if den == 0.0 {
        return false;
    }
    let w = q.a - p.a;
    let u = cross2(&w, &s) / den;
    let v = cross2(&w, &r) / den;
    (0.0..=1.0).contains(&u) && (0.0..=1.0).contains(&v)
}

/// Direction `(0, -t, 1/t)` whose segment through `x` has the same
/// `(e1, e2)`-coordinates as the physical slice.
pub fn slice_preimage_direction(t: f64) -> Result<Vec3> {
    if t.abs() <= EPS_MIN {
        return Err(Error::DegenerateHeight(t));
    }
    Ok(Vec3::new(0.0, -t, 1.0 / t))
}

/// `pi_t({x + u(0, -t, 1/t) : |u| <= rho})`.
pub fn projected_segment(x: &Vec3, t: f64, rho: f64) -> Result<Segment2> {
    let w = slice_preimage_direction(t)?;
    Ok(Segment2 {
        a: project_pi_t(&(x - w * rho), t),
        b: project_pi_t(&(x + w * rho), t),
    })
}

/// The physical `(e1, e2)` coordinates `(y . e1, y . e2)` at height `t`.
pub fn slice_coordinates(y: &Vec3, t: f64) -> Vec2 {
    Vec2::new(y.x + t * y.z, t * y.x + y.y)
}

type CurveFn = Box<dyn Fn(f64) -> Vec3 + Send + Sync>;

/// A spatial curve `gamma: [0,1] -> R^3` with an optional closed-form derivative.
pub struct CurveSystem {
    gamma: CurveFn,
    derivative: Option<CurveFn>,
}

impl std::fmt::Debug for CurveSystem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CurveSystem")
            .field("closed_form_derivative", &self.derivative.is_some())
            .finish()
    }
}

/// Central-difference step for curves without a closed-form derivative.
pub const CURVE_FD_STEP: f64 = 1e-5;

impl CurveSystem {
    pub fn new(gamma: impl Fn(f64) -> Vec3 + Send + Sync + 'static) -> Self {
        Self { gamma: Box::new(gamma), derivative: None }
    }

    pub fn with_derivative(
        gamma: impl Fn(f64) -> Vec3 + Send + Sync + 'static,
        derivative: impl Fn(f64) -> Vec3 + Send + Sync + 'static,
    ) -> Self {
        Self { gamma: Box::new(gamma), derivative: Some(Box::new(derivative)) }
    }

    /// Componentwise polynomial curve; `coeffs[i][k]` multiplies `t^k`.
    pub fn polynomial(coeffs: [Vec<f64>; 3]) -> Self {
        let eval = |c: &[f64], t: f64| c.iter().rev().fold(0.0, |acc, &k| acc * t + k);
        let deriv = |c: &[f64], t: f64| {
            c.iter()
                .enumerate()
                .skip(1)
                .rev()
                .fold(0.0, |acc, (k, &ck)| acc * t + k as f64 * ck)
        };
        let g = coeffs.clone();
        Self::with_derivative(
            move |t| Vec3::new(eval(&g[0], t), eval(&g[1], t), eval(&g[2], t)),
            move |t| Vec3::new(deriv(&coeffs[0], t), deriv(&coeffs[1], t), deriv(&coeffs[2], t)),
        )
    }

    /// `gamma(t) = (1, t^2, -t)`.
    pub fn sl2() -> Self {
        Self::polynomial([vec![1.0], vec![0.0, 0.0, 1.0], vec![0.0, -1.0]])
    }

    #[inline]
    pub fn gamma(&self, t: f64) -> Vec3 {
        (self.gamma)(t)
    }

    pub fn gamma_prime(&self, t: f64) -> Vec3 {
        match &self.derivative {
            Some(d) => d(t),
            None => {
                let h = CURVE_FD_STEP;
                (self.gamma(t + h) - self.gamma(t - h)) / (2.0 * h)
            }
        }
    }

    fn check_first(&self, t: f64) -> Result<Vec3> {
        let g = self.gamma(t);
        if g.x.abs() <= EPS_MIN {
            return Err(Error::DegenerateCurve(t));
        }
        Ok(g)
    }
}

/// `e1 = (g3, 0, -g1)` and `e2 = (g2, -g1, 0)`, both orthogonal to `gamma(t)`.
pub fn curve_frames(cs: &CurveSystem, t: f64) -> Result<(Vec3, Vec3)> {
    let g = cs.check_first(t)?;
    Ok((Vec3::new(g.z, 0.0, -g.x), Vec3::new(g.y, -g.x, 0.0)))
}

/// `(x1 g3 - x3 g1, x1 g2 - x2 g1)` at `t`; the curve `C_x` is `(this, t)`.
pub fn curve_projection(cs: &CurveSystem, x: &Vec3, t: f64) -> Vec2 {
    project_with(&cs.gamma(t), x)
}

fn project_with(g: &Vec3, x: &Vec3) -> Vec2 {
    Vec2::new(x.x * g.z - x.z * g.x, x.x * g.y - x.y * g.x)
}

/// `v1 = (g1 g3' - g3 g1', g1 g2' - g2 g1')`.
pub fn curve_v1(cs: &CurveSystem, t: f64) -> Vec2 {
    let g = cs.gamma(t);
    let dg = cs.gamma_prime(t);
    Vec2::new(g.x * dg.z - g.z * dg.x, g.x * dg.y - g.y * dg.x)
}

pub fn curve_normal(cs: &CurveSystem, t: f64) -> Result<Vec3> {
    let g = cs.check_first(t)?;
    let dg = cs.gamma_prime(t);
    Ok(Vec3::new(-g.x * dg.y + g.y * dg.x, g.x * dg.z - g.z * dg.x, 0.0) / g.x)
}

/// The two vectors spanning the tangent plane of the curves through `z`.
pub fn curve_tangent_plane(cs: &CurveSystem, z: &Vec3) -> Result<(Vec3, Vec3)> {
    let t = z.z;
    let g = cs.check_first(t)?;
    let dg = cs.gamma_prime(t);
    let k = dg.x / g.x;
    Ok((
        Vec3::new(dg.z - g.z * k, dg.y - g.y * k, 0.0),
        Vec3::new(z.x * k, z.y * k, 1.0),
    ))
}

/// `|det[gamma, gamma', (gamma/|gamma|)']|`.
pub fn coplanarity_defect(cs: &CurveSystem, t: f64) -> Result<f64> {
    let g = cs.gamma(t);
    let n = g.norm();
    if n <= EPS_MIN {
        return Err(Error::DegenerateCurve(t));
    }
    let dg = cs.gamma_prime(t);
    let unit_prime = dg / n - g * (g.dot(&dg) / n.powi(3));
    Ok(Matrix3::from_columns(&[g, dg, unit_prime]).determinant().abs())
}

/// The strip `{z + u n^perp(z3) : z in C_x, |u| <= sqrt(delta)} + B_delta`
/// attached to the curve `C_x`.
pub struct GeneralizedStrip<'a> {
    cs: &'a CurveSystem,
    x: Vec3,
    delta: f64,
}

impl<'a> GeneralizedStrip<'a> {
    pub fn core_point(&self, t: f64) -> Vec3 {
        let q = curve_projection(self.cs, &self.x, t);
        Vec3::new(q.x, q.y, t)
    }

    /// Horizontal unit vector orthogonal to `n(t)`, or zero where `n` vanishes.
    pub fn ruling(&self, t: f64) -> Vec3 {
        match curve_normal(self.cs, t) {
            Ok(n) if n.norm() > EPS_MIN => Vec3::new(-n.y, n.x, 0.0) / n.norm(),
            _ => Vec3::zeros(),
        }
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        let half = self.delta.sqrt();
        let step = self.delta / 4.0;
        (0..9).any(|k: i32| {
            let off = if k == 0 { 0 } else if k % 2 == 1 { (k + 1) / 2 } else { -(k / 2) };
            let t = p.z + off as f64 * step;
            if !(0.0..=1.0).contains(&t) {
                return false;
            }
            let r = p - self.core_point(t);
            let dir = self.ruling(t);
            let u = r.dot(&dir).clamp(-half, half);
            (r - dir * u).norm() <= self.delta
        })
    }
}

pub fn generalized_strip<'a>(cs: &'a CurveSystem, x: &Vec3, delta: f64) -> Result<GeneralizedStrip<'a>> {
    for i in 0..=100 {
        cs.check_first(i as f64 / 100.0)?;
    }
    Ok(GeneralizedStrip { cs, x: *x, delta })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close3(a: &Vec3, b: &Vec3, tol: f64) -> bool {
        (a - b).norm() <= tol
    }

    #[test]
    fn dual_ray_examples() {
        let (b, d) = dual_ray(&Vec3::zeros());
        assert_eq!((b, d), (Vec3::zeros(), Vec3::new(0., 0., 1.)));
        let (b, d) = dual_ray(&Vec3::new(1., 0., 0.));
        assert_eq!((b, d), (Vec3::new(1., 0., 0.), Vec3::new(0., 0., 1.)));
        let (b, d) = dual_ray(&Vec3::new(1., 1., 1.));
        assert_eq!(d, Vec3::new(-1., 1., 1.));
        // (0,1,1) lies on the ray
        let r = Vec3::new(0., 1., 1.) - b;
        assert!(r.cross(&d).norm() < 1e-15);
        for x in [b, b + d * 0.7, b - d * 2.0] {
            let l = LLine::from_param(&x);
            assert!(close3(&l.point_at(1.0), &Vec3::new(1., 1., 1.), 1e-14));
        }
    }

    #[test]
    fn frame_examples() {
        let f = frame_at(0.0);
        assert_eq!(f.d, Vec3::new(0., 0., 1.));
        assert!(close3(&f.xi_prime, &Vec3::new(-1., 0., 0.), 1e-15));
        assert!(close3(&f.v, &Vec3::new(1., 0., 0.), 1e-15));
        assert!(close3(&f.v, &(-f.xi_prime), 1e-15));
        let f = frame_at(1.0);
        assert_eq!(f.d, Vec3::new(-1., 1., 1.));
        assert!((f.d.norm_squared() - 3.0).abs() < 1e-15);
        for t in [0.0, 0.3, 1.0] {
            let f = frame_at(t);
            assert!(f.v.cross(&f.xi_prime).norm() < 1e-12);
            assert!(f.xi.dot(&f.xi_prime).abs() < 1e-12);
        }
    }

    #[test]
    fn e3_is_cross_product_of_e1_e2() {
        for t in [0.0, 0.25, 0.8, 1.0] {
            let e1 = Vec3::new(1.0, 0.0, t);
            let e2 = Vec3::new(t, 1.0, 0.0);
            assert!(close3(&e1.cross(&e2), &dual_direction(t), 1e-15));
        }
    }

    #[test]
    fn pi_t_examples() {
        for t in [0.0, 0.4, 1.0] {
            assert!(project_pi_t(&dual_direction(t), t).norm() < 1e-15);
        }
        assert!((project_pi_t(&Vec3::new(1., 0., 0.), 0.0) - Vec2::new(-1., 0.)).norm() < 1e-15);
        assert!((project_pi_t(&Vec3::new(0., 1., 0.), 0.0) - Vec2::new(0., -1.)).norm() < 1e-15);
    }

    #[test]
    fn plank_examples() {
        let (rho, delta) = (0.125, 1.0 / 64.0);
        let p = plank_for(&Vec3::zeros(), 0.0, rho, delta);
        let expected = Matrix3::new(0., 0., 1., -1., 0., 0., 0., -1., 0.);
        assert!((p.axes - expected).norm() < 1e-15);
        let t = 0.6;
        let x = Vec3::new(0.3, -0.2, 0.5);
        let p = plank_for(&x, t, rho, delta);
        let f = frame_at(t);
        assert!(p.contains(&(x + f.xi * 0.9)));
        assert!(!p.contains(&(x + f.xi * 1.1)));
        assert!(!p.contains(&(x + f.short() * 2.0 * delta)));
        assert!(p.contains(&(x + f.mid() * 0.9 * rho)));
    }

    #[test]
    fn slice_tube_examples() {
        let (d, r) = (1.0 / 64.0, 0.125);
        let s = RegulusStrip::new(LLine::new(0., 0., 0.), d, r).unwrap();
        let tb = slice_tube(&s, 0.0);
        assert_eq!(tb.center, Vec2::zeros());
        assert_eq!(tb.direction, Vec2::new(1., 0.));
        let s = RegulusStrip::new(LLine::new(1., -1., 1.), d, r).unwrap();
        let tb = slice_tube(&s, 1.0);
        assert_eq!(tb.center, Vec2::new(2., 0.));
        assert!((tb.direction - Vec2::new(1., -1.) / 2f64.sqrt()).norm() < 1e-15);
    }

    #[test]
    fn slice_coordinates_match_physical_slice() {
        let x = Vec3::new(0.4, -0.3, 0.7);
        let l = LLine::from_param(&x);
        for t in [0.1, 0.5, 1.0] {
            let w = slice_preimage_direction(t).unwrap();
            for u in [-0.1, 0.0, 0.05] {
                let q = slice_coordinates(&(x + w * u), t);
                let p = crate::geom::Regulus { core: l }.point_at(t, u);
                assert!((q - Vec2::new(p.x, p.y)).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn projected_segment_examples() {
        let x = Vec3::new(0.2, 0.1, -0.3);
        let seg = projected_segment(&x, 0.5, 0.0).unwrap();
        assert!((seg.a - project_pi_t(&x, 0.5)).norm() < 1e-15);
        assert!(matches!(projected_segment(&x, 0.0, 0.1), Err(Error::DegenerateHeight(_))));
        let seg = projected_segment(&x, 1e-3, 0.1).unwrap();
        let dir = (seg.b - seg.a).normalize();
        assert!((dir - Vec2::new(-1.0, 0.0)).norm() < 1e-2);
    }

    #[test]
    fn curve_examples() {
        let cs = CurveSystem::sl2();
        let (e1, e2) = curve_frames(&cs, 1.0).unwrap();
        assert_eq!(e1, Vec3::new(-1., 0., -1.));
        assert_eq!(e2, Vec3::new(1., -1., 0.));
        assert_eq!(curve_projection(&cs, &Vec3::new(1., 0., 0.), 1.0), Vec2::new(-1., 1.));
        assert_eq!(curve_projection(&cs, &Vec3::zeros(), 0.3), Vec2::zeros());
        assert_eq!(curve_normal(&cs, 1.0).unwrap(), Vec3::new(-2., -1., 0.));
        let flat = CurveSystem::polynomial([vec![1.0], vec![0.0], vec![0.0]]);
        assert_eq!(curve_normal(&flat, 0.4).unwrap(), Vec3::zeros());
        let bad = CurveSystem::polynomial([vec![0.0, -1.0], vec![0.0, 0.0, 1.0], vec![1.0]]);
        assert!(matches!(curve_frames(&bad, 0.0), Err(Error::DegenerateCurve(_))));
        assert!(coplanarity_defect(&cs, 0.7).unwrap() <= 1e-12);
    }

    #[test]
    fn v1_is_orthogonal_to_normal() {
        let cs = CurveSystem::polynomial([vec![1.0, 0.5], vec![0.2, -1.0, 0.3], vec![0.0, 0.7, 0.0, -0.4]]);
        for i in 0..20 {
            let t = i as f64 / 19.0;
            let v1 = curve_v1(&cs, t);
            let lhs = curve_projection(&cs, &cs.gamma_prime(t), t);
            assert!((lhs + v1).norm() < 1e-12);
            let n = curve_normal(&cs, t).unwrap();
            assert!((n.x * v1.x + n.y * v1.y).abs() < 1e-12);
        }
    }

    #[test]
    fn perturbed_coplanarity_detects_nonzero() {
        let cs = CurveSystem::sl2();
        let t = 0.7;
        let g = cs.gamma(t);
        let dg = cs.gamma_prime(t);
        let n = g.norm();
        let up = dg / n - g * (g.dot(&dg) / n.powi(3)) + Vec3::new(0.1, 0.0, 0.0);
        assert!(Matrix3::from_columns(&[g, dg, up]).determinant().abs() > 1e-4);
    }

    #[test]
    fn generalized_strip_examples() {
        let cs = CurveSystem::sl2();
        let x = Vec3::new(0.3, 0.2, -0.1);
        for delta in [1e-2, 1.0 / 256.0] {
            let s = generalized_strip(&cs, &x, delta).unwrap();
            let z = s.core_point(0.5);
            let dir = s.ruling(0.5);
            assert!(s.contains(&z));
            assert!(s.contains(&(z + dir * delta.sqrt())));
            assert!(!s.contains(&(z + dir * 3.0 * delta.sqrt())));
        }
        let bad = CurveSystem::polynomial([vec![0.0, -1.0], vec![0.0, 0.0, 1.0], vec![1.0]]);
        assert!(generalized_strip(&bad, &x, 0.01).is_err());
    }
}
