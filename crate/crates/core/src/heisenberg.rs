//! The first Heisenberg group with the Korányi gauge, horizontal lines and
//! their tubes, and a discretized Nikodym maximal function.

use std::ops::Mul;

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::family::StripFamily;
use crate::geom::{LLine, RegulusStrip, Vec3};
use crate::rng::stream_rng;

/// Group law `(x+x', y+y', z+z'+(xy'-x'y)/2)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HPoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl HPoint {
    pub const IDENTITY: HPoint = HPoint { x: 0.0, y: 0.0, z: 0.0 };

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn inverse(&self) -> Self {
        Self::new(-self.x, -self.y, -self.z)
    }

    /// `((x^2 + y^2)^2 + 16 z^2)^(1/4)`.
    pub fn gauge(&self) -> f64 {
        let r2 = self.x * self.x + self.y * self.y;
        (r2 * r2 + 16.0 * self.z * self.z).sqrt().sqrt()
    }

    pub fn as_vec(&self) -> Vec3 {
        Vec3::new(self.x, self.y, self.z)
    }
}

impl From<Vec3> for HPoint {
    fn from(v: Vec3) -> Self {
        Self::new(v.x, v.y, v.z)
    }
}

impl Mul for HPoint {
    type Output = HPoint;

    fn mul(self, o: HPoint) -> HPoint {
        HPoint::new(self.x + o.x, self.y + o.y, self.z + o.z + (self.x * o.y - o.x * self.y) / 2.0)
    }
}

/// `|q^{-1} p|`.
pub fn koranyi_distance(p: &HPoint, q: &HPoint) -> f64 {
    (q.inverse() * *p).gauge()
}

/// A horizontal line: the left translate of `t (u, v, 0)` by `base`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HLine {
    pub base: HPoint,
    pub direction: [f64; 2],
}

impl HLine {
    pub fn new(base: HPoint, direction: [f64; 2]) -> Self {
        let n = direction[0].hypot(direction[1]);
        Self { base, direction: [direction[0] / n, direction[1] / n] }
    }

    pub fn point_at(&self, t: f64) -> HPoint {
        let [u, v] = self.direction;
        self.base * HPoint::new(u * t, v * t, 0.0)
    }

    /// Derivative of [`HLine::point_at`].
    pub fn tangent(&self, _t: f64) -> Vec3 {
        let [u, v] = self.direction;
        Vec3::new(u, v, (self.base.x * v - self.base.y * u) / 2.0)
    }

    /// Korányi distance from `p` to the points with `t` in `window`, on a net
    /// of step `step`.
    pub fn distance_on_net(&self, p: &HPoint, window: [f64; 2], step: f64) -> f64 {
        let n = ((window[1] - window[0]) / step).ceil().max(1.0) as usize;
        (0..=n)
            .map(|i| koranyi_distance(p, &self.point_at((window[0] + i as f64 * step).min(window[1]))))
            .fold(f64::INFINITY, f64::min)
    }
}

/// Korányi distance from `p` to `line` over `window`, minimized on a
/// `delta/4` net.
pub fn htube_membership(line: &HLine, delta: f64, p: &HPoint, t_window: [f64; 2]) -> bool {
    line.distance_on_net(p, t_window, delta / 4.0) <= delta
}

/// A nonnegative function, constant on the cells of a cubical grid and zero
/// outside it.
#[derive(Clone, Debug, PartialEq)]
pub struct GridFunction {
    pub lo: Vec3,
    pub h: f64,
    pub n: usize,
    pub values: Vec<f64>,
}

impl GridFunction {
    /// The grid of side `h` on the unit cube, filled by `f` at cell centers.
    pub fn from_fn(h: f64, f: impl Fn(&Vec3) -> f64 + Sync) -> Self {
        let n = (1.0 / h - 1e-9).ceil() as usize;
        let lo = Vec3::zeros();
        let values = (0..n * n * n)
            .into_par_iter()
            .map(|idx| {
                let (i, j, k) = (idx % n, idx / n % n, idx / (n * n));
                f(&(lo + Vec3::new(i as f64 + 0.5, j as f64 + 0.5, k as f64 + 0.5) * h))
            })
            .collect();
        Self { lo, h, n, values }
    }

    pub fn constant(h: f64, c: f64) -> Self {
        Self::from_fn(h, |_| c)
    }

    pub fn center(&self, idx: usize) -> Vec3 {
        let n = self.n;
        let (i, j, k) = (idx % n, idx / n % n, idx / (n * n));
        self.lo + Vec3::new(i as f64 + 0.5, j as f64 + 0.5, k as f64 + 0.5) * self.h
    }

    #[inline]
    pub fn eval(&self, p: &HPoint) -> f64 {
        let q = (p.as_vec() - self.lo) / self.h;
        if q.x < 0.0 || q.y < 0.0 || q.z < 0.0 {
            return 0.0;
        }
        let (i, j, k) = (q.x as usize, q.y as usize, q.z as usize);
        if i >= self.n || j >= self.n || k >= self.n {
            return 0.0;
        }
        self.values[(k * self.n + j) * self.n + i]
    }

    pub fn norm(&self, p: f64) -> f64 {
        let s: f64 = self.values.iter().map(|v| v.abs().powf(p)).sum();
        (self.h.powi(3) * s).powf(1.0 / p)
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self { values: self.values.iter().map(|v| v * c).collect(), ..self.clone() }
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }
}

/// Cross-section offsets of a Korányi `delta`-tube around a line of
/// direction `(u, v)`: the core, `±delta/2` along the horizontal normal and
/// `±delta^2/8` vertically.
fn cross_section(direction: [f64; 2], delta: f64) -> [HPoint; 5] {
    let [u, v] = direction;
    let s = delta / 2.0;
    let w = delta * delta / 8.0;
    [
        HPoint::IDENTITY,
        HPoint::new(-v * s, u * s, 0.0),
        HPoint::new(v * s, -u * s, 0.0),
        HPoint::new(0.0, 0.0, w),
        HPoint::new(0.0, 0.0, -w),
    ]
}

/// Average of `f` over the Korányi `delta`-tube around `line` for `t` in
/// `[t0, t0 + 1]`, sampled with step `f.h / 2`.
pub fn tube_average(f: &GridFunction, line: &HLine, delta: f64, t0: f64) -> f64 {
    let m = (2.0 / f.h).ceil() as usize;
    let cs = cross_section(line.direction, delta);
    let mut sum = 0.0;
    for i in 0..=m {
        let q = line.point_at(t0 + i as f64 / m as f64);
        sum += cs.iter().map(|c| f.eval(&(q * *c))).sum::<f64>();
    }
    sum / ((m + 1) * cs.len()) as f64
}

/// Shifts of the unit parameter window relative to the point of contact.
pub const WINDOW_SHIFTS: [f64; 5] = [-0.5, -0.25, 0.0, 0.25, 0.5];

/// Horizontal base offsets of Euclidean length at most `delta/2` on the
/// lattice `net_step Z^2`.
pub fn base_offsets(delta: f64, net_step: f64) -> Vec<HPoint> {
    let k = (delta / 2.0 / net_step + 1e-9).floor() as i64;
    let mut out = Vec::new();
    for i in -k..=k {
        for j in -k..=k {
            let (x, y) = (i as f64 * net_step, j as f64 * net_step);
            if x.hypot(y) <= delta / 2.0 + 1e-12 {
                out.push(HPoint::new(x, y, 0.0));
            }
        }
    }
    out
}

/// Directions `theta = k delta` in `[0, pi)`.
pub fn direction_net(delta: f64) -> Vec<[f64; 2]> {
    let n = (std::f64::consts::PI / delta).ceil() as usize;
    (0..n)
        .map(|k| {
            let th = k as f64 * std::f64::consts::PI / n as f64;
            [th.cos(), th.sin()]
        })
        .collect()
}

/// The maximal average over the discretized tubes through `x`.
pub fn maximal_at(f: &GridFunction, x: &HPoint, delta: f64, bases: &[HPoint], dirs: &[[f64; 2]]) -> f64 {
    // samples on t in [-1, 1]; each shifted window is a run of m + 1 of them
    let m = (2.0 / f.h).ceil() as usize;
    let total = 2 * m;
    let mut prefix = vec![0.0; total + 2];
    let mut best: f64 = 0.0;
    for w in bases {
        let base = *x * *w;
        for &dir in dirs {
            let line = HLine { base, direction: dir };
            let cs = cross_section(dir, delta);
            for i in 0..=total {
                let q = line.point_at(-1.0 + i as f64 / m as f64);
                let s: f64 = cs.iter().map(|c| f.eval(&(q * *c))).sum();
                prefix[i + 1] = prefix[i] + s;
            }
            for sigma in WINDOW_SHIFTS {
                let start = ((sigma + 0.5) * m as f64).round() as usize;
                let avg = (prefix[start + m + 1] - prefix[start]) / ((m + 1) * cs.len()) as f64;
                best = best.max(avg);
            }
        }
    }
    best
}

/// `Mf` at every cell center.
pub fn nikodym_maximal(f: &GridFunction, delta: f64, net_step: f64) -> Result<GridFunction> {
    if !(net_step > 0.0 && net_step <= delta) {
        return Err(Error::Invalid(format!("net step {net_step} must lie in (0, delta]")));
    }
    let bases = base_offsets(delta, net_step);
    let dirs = direction_net(delta);
    let values = (0..f.values.len())
        .into_par_iter()
        .map(|idx| maximal_at(f, &HPoint::from(f.center(idx)), delta, &bases, &dirs))
        .collect();
    Ok(GridFunction { values, ..f.clone() })
}

/// `|Mf|_p / |f|_p`.
pub fn lp_ratio(f: &GridFunction, p: f64, delta: f64, net_step: f64) -> Result<f64> {
    let nf = f.norm(p);
    if nf == 0.0 {
        return Err(Error::ZeroFunction);
    }
    Ok(nikodym_maximal(f, delta, net_step)?.norm(p) / nf)
}

/// Center of the test fixtures below.
pub const FIXTURE_CENTER: HPoint = HPoint::new(0.5, 0.5, 0.5);

/// The horizontal line through [`FIXTURE_CENTER`] with direction `(1, 0)`.
pub fn fixture_line() -> HLine {
    HLine::new(FIXTURE_CENTER, [1.0, 0.0])
}

/// Indicator of the cells within Euclidean distance `h` of the core of
/// [`fixture_line`] for `t` in `[-1/2, 1/2]`.
pub fn tube_indicator(h: f64) -> GridFunction {
    let line = fixture_line();
    GridFunction::from_fn(h, |p| {
        // x = 1/2 + t along the fixture line
        let t = (p.x - line.base.x).clamp(-0.5, 0.5);
        let q = line.point_at(t).as_vec();
        let d = (p - q).norm();
        if d <= h { 1.0 } else { 0.0 }
    })
}

/// Indicator of the Korányi ball of radius `max(delta, h)` about
/// [`FIXTURE_CENTER`], on cell centers.
pub fn ball_indicator(h: f64, delta: f64) -> GridFunction {
    let r = delta.max(h);
    GridFunction::from_fn(h, |p| {
        if koranyi_distance(&HPoint::from(*p), &FIXTURE_CENTER) <= r { 1.0 } else { 0.0 }
    })
}

/// Indicator of `∪S` on cell centers.
pub fn family_indicator(h: f64, family: &StripFamily) -> GridFunction {
    let index = crate::measure::StripIndex::new(family);
    GridFunction::from_fn(h, |p| if index.contains(p) { 1.0 } else { 0.0 })
}

/// The horizontal line identified with `ell`: base `ell(0)`, direction the
/// normalized horizontal part `(c, a)` of its direction.
pub fn embed_lline(ell: &LLine) -> HLine {
    let p = ell.point_at(0.0);
    HLine::new(HPoint::new(p.x, p.y, p.z), [ell.c, ell.a])
}

fn distance_to_hline(line: &HLine, p: &HPoint, window: [f64; 2], delta: f64) -> f64 {
    let step = delta / 4.0;
    let n = ((window[1] - window[0]) / step).ceil() as usize;
    let d = |t: f64| koranyi_distance(p, &line.point_at(t));
    let (mut best_t, mut best) = (window[0], f64::INFINITY);
    for i in 0..=n {
        let t = window[0] + i as f64 * step;
        let v = d(t);
        if v < best {
            best = v;
            best_t = t;
        }
    }
    // golden-section refinement around the best net point
    let (mut a, mut b) = (best_t - step, best_t + step);
    let g = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..60 {
        let (c1, c2) = (b - g * (b - a), a + g * (b - a));
        if d(c1) < d(c2) {
            b = c2;
        } else {
            a = c1;
        }
    }
    best.min(d((a + b) / 2.0))
}

/// Measured containment constants between `S(ell)` (at scales `delta`,
/// `sqrt(delta)`) and the Korányi `delta`-tube of [`embed_lline`]`(ell)`.
///
/// `c_out` is the smallest `C` with every strip sample in the `C delta`-tube;
/// `c_in` the smallest `C` with every tube sample in the strip thickened to
/// `C delta` and widened to `C sqrt(delta)`.
pub fn strip_vs_htube(ell: &LLine, delta: f64, n_samples: usize, seed: u64) -> (f64, f64) {
    let line = embed_lline(ell);
    let speed = ell.c.hypot(ell.a);
    let rho = delta.sqrt();
    let window = [-1.0, speed + 1.0];
    let mut rng = stream_rng(seed, 0);
    let strip = RegulusStrip::unchecked(*ell, delta, rho);
    let mut c_out: f64 = 0.0;
    for _ in 0..n_samples {
        let t: f64 = rng.gen_range(0.0..=1.0);
        let u: f64 = rng.gen_range(-rho..=rho);
        let off = loop {
            let v = Vec3::new(rng.gen_range(-1.0..=1.0), rng.gen_range(-1.0..=1.0), rng.gen_range(-1.0..=1.0));
            if v.norm_squared() <= 1.0 {
                break v * delta;
            }
        };
        let p = strip.regulus().point_at(t, u) + off;
        c_out = c_out.max(distance_to_hline(&line, &HPoint::from(p), window, delta) / delta);
    }
    let mut rng = stream_rng(seed, 1);
    let tube_samples: Vec<Vec3> = (0..n_samples)
        .map(|_| {
            let s: f64 = rng.gen_range(0.0..=speed);
            let v = loop {
                let v = HPoint::new(
                    rng.gen_range(-1.0..=1.0) * delta,
                    rng.gen_range(-1.0..=1.0) * delta,
                    rng.gen_range(-1.0..=1.0) * delta * delta / 4.0,
                );
                if v.gauge() <= delta {
                    break v;
                }
            };
            (line.point_at(s) * v).as_vec()
        })
        .collect();
    let fits = |c: f64| {
        let s = RegulusStrip::unchecked(*ell, c * delta, c * rho);
        tube_samples.iter().all(|p| s.witness_unclipped(p).is_some())
    };
    let c_in = if fits(1.0) {
        1.0
    } else {
        let mut hi = 2.0;
        while !fits(hi) {
            hi *= 2.0;
            if hi > 1e6 {
                return (f64::INFINITY, c_out);
            }
        }
        let mut lo = hi / 2.0;
        for _ in 0..30 {
            let mid = (lo + hi) / 2.0;
            if fits(mid) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        hi
    };
    (c_in, c_out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauge_examples() {
        let p = HPoint::new(0.3, -0.2, 0.7);
        assert_eq!(koranyi_distance(&p, &p), 0.0);
        assert_eq!(koranyi_distance(&HPoint::new(1.0, 0.0, 0.0), &HPoint::IDENTITY), 1.0);
        assert!((HPoint::new(0.0, 0.0, 0.25).gauge() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn htube_examples() {
        let line = HLine::new(HPoint::new(0.2, 0.1, 0.3), [0.6, 0.8]);
        let delta = 1.0 / 32.0;
        let w = [-0.5, 0.5];
        assert!(htube_membership(&line, delta, &line.point_at(0.25), w));
        let p = line.point_at(0.0) * HPoint::new(0.0, 0.0, delta * delta / 4.0);
        assert!((koranyi_distance(&p, &line.point_at(0.0)) - delta).abs() < 1e-15);
        assert!(htube_membership(&line, delta, &p, w));
        let q = line.point_at(0.0).as_vec() + Vec3::new(-0.8, 0.6, 0.0) * 10.0 * delta;
        assert!(!htube_membership(&line, delta, &HPoint::from(q), w));
    }

    #[test]
    fn base_offsets_and_directions() {
        assert_eq!(base_offsets(0.1, 0.1).len(), 1);
        assert_eq!(base_offsets(0.1, 0.05).len(), 5);
        assert_eq!(base_offsets(0.1, 0.025).len(), 13);
        let d = direction_net(0.1);
        assert_eq!(d.len(), 32);
    }

    #[test]
    fn constant_function_is_fixed() {
        let f = GridFunction::constant(0.25, 1.0);
        let m = nikodym_maximal(&f, 0.25, 0.25).unwrap();
        assert!(m.values.iter().all(|&v| v <= 1.0 + 1e-12));
        assert!(m.max() >= 1.0 - 1e-12);
        assert!(lp_ratio(&f, 6.0, 0.25, 0.25).unwrap() <= 1.0 + 1e-9);
    }

    #[test]
    fn zero_function_errors() {
        let f = GridFunction::constant(0.25, 0.0);
        assert!(matches!(lp_ratio(&f, 2.0, 0.25, 0.25), Err(Error::ZeroFunction)));
    }

    #[test]
    fn points_on_the_line_embed_at_unit_constant() {
        let ell = LLine::new(1.0, 0.0, 0.0);
        let line = embed_lline(&ell);
        assert_eq!(line.point_at(0.0).as_vec(), ell.point_at(0.0));
    }
}
