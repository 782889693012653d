//! The two-dimensional ball condition, in counting and volume form, and the
//! essential-disjointness ratio.

use std::collections::HashMap;
use std::f64::consts::PI;

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::family::StripFamily;
use crate::geom::{DualTube, Vec4};
use crate::measure;
use crate::rng::stream_rng;

/// Tolerance constant of the counting form.
pub const DEFAULT_CONSTANT: f64 = 100.0;

/// Tolerance constant of the volume form (counting constant times 8).
pub const VOLUME_CONSTANT: f64 = 800.0;

/// `delta, 2 delta, 4 delta, ...` up to 1.
pub fn dyadic_radii(delta: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut r = delta;
    while r <= 1.0 + 1e-12 {
        out.push(r);
        r *= 2.0;
    }
    out
}

/// `r / delta` below `rho` and `r^2 / (delta rho)` above.
pub fn counting_bound(r: f64, delta: f64, rho: f64) -> f64 {
    if r <= rho {
        r / delta
    } else {
        r * r / (delta * rho)
    }
}

/// `(r / delta)^2`, the volume-form bound before the constant.
pub fn volume_bound(r: f64, delta: f64) -> f64 {
    (r / delta).powi(2)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Form {
    Count,
    Volume,
}

impl Form {
    pub fn name(self) -> &'static str {
        match self {
            Form::Count => "count",
            Form::Volume => "volume",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RadiusReport {
    pub r: f64,
    pub worst_center: Vec4,
    pub observed: f64,
    /// Bound including the constant.
    pub bound: f64,
    pub ratio: f64,
    pub pass: bool,
    /// Monte Carlo standard error of `observed`; zero for the counting form.
    pub stderr: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BallConditionReport {
    pub form: Form,
    pub constant: f64,
    pub radii: Vec<RadiusReport>,
    pub overall_pass: bool,
    pub worst_ratio: f64,
}

impl BallConditionReport {
    fn from_radii(form: Form, constant: f64, radii: Vec<RadiusReport>) -> Self {
        let overall_pass = radii.iter().all(|r| r.pass);
        let worst_ratio = radii.iter().map(|r| r.ratio).fold(0.0, f64::max);
        Self { form, constant, radii, overall_pass, worst_ratio }
    }

    pub fn at(&self, r: f64) -> Option<&RadiusReport> {
        self.radii.iter().find(|x| (x.r - r).abs() <= 1e-12 * r.max(1.0))
    }

    /// Radius with the largest observed/bound ratio.
    pub fn worst_radius(&self) -> Option<f64> {
        self.radii
            .iter()
            .fold(None::<&RadiusReport>, |best, x| match best {
                Some(b) if b.ratio >= x.ratio => Some(b),
                _ => Some(x),
            })
            .map(|x| x.r)
    }
}

struct Grid4 {
    cell: f64,
    cells: HashMap<[i64; 4], Vec<usize>>,
}

impl Grid4 {
    fn new(points: &[Vec4], cell: f64) -> Self {
        let mut cells: HashMap<[i64; 4], Vec<usize>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            cells.entry(Self::key(p, cell)).or_default().push(i);
        }
        Self { cell, cells }
    }

    fn key(p: &Vec4, cell: f64) -> [i64; 4] {
        [0, 1, 2, 3].map(|k| (p[k] / cell).floor() as i64)
    }

    /// Number of points within `radius <= cell` of `p`.
    fn count_within(&self, points: &[Vec4], p: &Vec4, radius: f64) -> usize {
        let k = Self::key(p, self.cell);
        let mut n = 0;
        for off in 0..81i64 {
            let d = [off % 3 - 1, off / 3 % 3 - 1, off / 9 % 3 - 1, off / 27 - 1];
            let key = [k[0] + d[0], k[1] + d[1], k[2] + d[2], k[3] + d[3]];
            if let Some(ids) = self.cells.get(&key) {
                n += ids.iter().filter(|&&j| (points[j] - p).norm() <= radius).count();
            }
        }
        n
    }
}

fn count_in_doubled_balls(points: &[Vec4], r: f64) -> Vec<usize> {
    let radius = 2.0 * r;
    let grid = Grid4::new(points, radius);
    if grid.cells.len() < 81 {
        return points
            .par_iter()
            .map(|p| points.iter().filter(|q| (*q - p).norm() <= radius).count())
            .collect();
    }
    points
        .par_iter()
        .map(|p| grid.count_within(points, p, radius))
        .collect()
}

fn worst_index(values: &[f64]) -> Option<usize> {
    values
        .iter()
        .enumerate()
        .fold(None, |best: Option<(usize, f64)>, (i, &v)| match best {
            Some((_, b)) if b >= v => best,
            _ => Some((i, v)),
        })
        .map(|(i, _)| i)
}

/// Counting form: at each dyadic `r`, the largest number of dual centers in a
/// ball of radius `2r` about a dual center, against `constant * counting_bound`.
pub fn ball_condition_count(family: &StripFamily, constant: f64) -> BallConditionReport {
    let (delta, rho) = (family.delta, family.rho);
    ball_condition_count_with(family, &dyadic_radii(delta), |r| counting_bound(r, delta, rho), constant)
}

/// Counting form against an arbitrary bound at the given radii.
pub fn ball_condition_count_with(
    family: &StripFamily,
    radii: &[f64],
    bound: impl Fn(f64) -> f64,
    constant: f64,
) -> BallConditionReport {
    let centers = family.dual_centers();
    let radii = radii
        .iter()
        .map(|&r| {
            let bound = constant * bound(r);
            let counts: Vec<f64> = count_in_doubled_balls(&centers, r)
                .into_iter()
                .map(|c| c as f64)
                .collect();
            let (worst_center, observed) = match worst_index(&counts) {
                Some(i) => (centers[i], counts[i]),
                None => (Vec4::zeros(), 0.0),
            };
            RadiusReport {
                r,
                worst_center,
                observed,
                bound,
                ratio: observed / bound,
                pass: observed <= bound,
                stderr: 0.0,
            }
        })
        .collect();
    BallConditionReport::from_radii(Form::Count, constant, radii)
}

/// Counting bound satisfied by a sample of a `(delta, rho)` family taken for
/// refinement to `(delta', rho')`: `r (rho'/rho) / delta'` below `rho` and
/// `r^2 / (delta rho)` above.
pub fn refined_counting_bound(r: f64, delta: f64, rho: f64, delta_new: f64, rho_new: f64) -> f64 {
    if r <= rho {
        r / delta_new * (rho_new / rho)
    } else {
        r * r / (delta * rho)
    }
}

/// Coordinates orthogonal to the common dual-tube axis `(1,0,0,-1)`.
#[inline]
fn transverse(q: &Vec4) -> [f64; 3] {
    [(q[0] + q[3]) / std::f64::consts::SQRT_2, q[1], q[2]]
}

/// Dual tubes bucketed on a dense grid of their transverse coordinates,
/// which are constant along every spine.
pub struct DualTubeIndex {
    tubes: Vec<DualTube>,
    radius: f64,
    cell: f64,
    lo: [f64; 3],
    dims: [usize; 3],
    offsets: Vec<u32>,
    ids: Vec<u32>,
}

impl DualTubeIndex {
    pub fn new(family: &StripFamily) -> Self {
        let tubes: Vec<DualTube> = family.strips.iter().map(|s| s.dual_tube()).collect();
        let mut cell = family.delta;
        let keys: Vec<[f64; 3]> = tubes.iter().map(|t| transverse(&t.center)).collect();
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for k in &keys {
            for a in 0..3 {
                lo[a] = lo[a].min(k[a]);
                hi[a] = hi[a].max(k[a]);
            }
        }
        if keys.is_empty() {
            lo = [0.0; 3];
            hi = [0.0; 3];
        }
        let side = |cell: f64| [0, 1, 2].map(|a| ((hi[a] - lo[a]) / cell).floor() as usize + 1);
        while side(cell).iter().product::<usize>() > 1 << 23 {
            cell *= 2.0;
        }
        let dims = side(cell);
        let n_cells = dims[0] * dims[1] * dims[2];
        let flat = |k: &[f64; 3]| {
            let c = [0, 1, 2].map(|a| (((k[a] - lo[a]) / cell) as usize).min(dims[a] - 1));
            (c[2] * dims[1] + c[1]) * dims[0] + c[0]
        };
        let mut offsets = vec![0u32; n_cells + 1];
        for k in &keys {
            offsets[flat(k) + 1] += 1;
        }
        for i in 0..n_cells {
            offsets[i + 1] += offsets[i];
        }
        let mut fill = offsets.clone();
        let mut ids = vec![0u32; keys.len()];
        for (i, k) in keys.iter().enumerate() {
            let c = flat(k);
            ids[fill[c] as usize] = i as u32;
            fill[c] += 1;
        }
        Self { tubes, radius: family.delta, cell, lo, dims, offsets, ids }
    }

    pub fn contains(&self, q: &Vec4) -> bool {
        if self.tubes.is_empty() {
            return false;
        }
        let w = transverse(q);
        let mut range = [(0usize, 0usize); 3];
        for a in 0..3 {
            let first = ((w[a] - self.radius - self.lo[a]) / self.cell).floor();
            let last = ((w[a] + self.radius - self.lo[a]) / self.cell).floor();
            if last < 0.0 || first >= self.dims[a] as f64 {
                return false;
            }
            range[a] = (first.max(0.0) as usize, (last as usize).min(self.dims[a] - 1));
        }
        for z in range[2].0..=range[2].1 {
            for y in range[1].0..=range[1].1 {
                let row = (z * self.dims[1] + y) * self.dims[0];
                let a = self.offsets[row + range[0].0] as usize;
                let b = self.offsets[row + range[0].1 + 1] as usize;
                if self.ids[a..b].iter().any(|&k| self.tubes[k as usize].contains(q)) {
                    return true;
                }
            }
        }
        false
    }
}

/// Volume of the 4-ball of radius `r`.
pub fn ball4_volume(r: f64) -> f64 {
    PI * PI / 2.0 * r.powi(4)
}

fn sample_ball4<R: Rng>(rng: &mut R, center: &Vec4, radius: f64) -> Vec4 {
    loop {
        let v = Vec4::new(
            rng.gen_range(-1.0..=1.0),
            rng.gen_range(-1.0..=1.0),
            rng.gen_range(-1.0..=1.0),
            rng.gen_range(-1.0..=1.0),
        );
        if v.norm_squared() <= 1.0 {
            return center + v * radius;
        }
    }
}

/// Monte Carlo estimate of `|W ∩ B(center, radius)| / delta^4` and its
/// standard error, `W` being the union of the dual tubes.
pub fn dual_union_in_ball(
    index: &DualTubeIndex,
    center: &Vec4,
    radius: f64,
    delta: f64,
    n_mc: usize,
    seed: u64,
    stream: u64,
) -> (f64, f64) {
    let mut rng = stream_rng(seed, stream);
    let hits = (0..n_mc)
        .filter(|_| index.contains(&sample_ball4(&mut rng, center, radius)))
        .count();
    let p = hits as f64 / n_mc as f64;
    let scale = ball4_volume(radius) / delta.powi(4);
    (p * scale, (p * (1.0 - p) / n_mc as f64).sqrt() * scale)
}

/// Volume form: at each dyadic `r` and each dual center `x`, the Monte Carlo
/// measure of `W ∩ B(x, 2r)` over `delta^4`, against `constant (r/delta)^2`.
pub fn ball_condition_volume(
    family: &StripFamily,
    n_mc: usize,
    seed: u64,
    constant: f64,
) -> Result<BallConditionReport> {
    if n_mc < 10_000 {
        return Err(Error::Invalid(format!("n_mc = {n_mc} is below 10^4")));
    }
    let index = DualTubeIndex::new(family);
    let centers = family.dual_centers();
    let delta = family.delta;
    let mut radii = Vec::new();
    for (k, r) in dyadic_radii(delta).into_iter().enumerate() {
        let bound = constant * volume_bound(r, delta);
        let estimates: Vec<(f64, f64)> = centers
            .par_iter()
            .enumerate()
            .map(|(i, c)| {
                let stream = ((k as u64) << 32) | i as u64;
                dual_union_in_ball(&index, c, 2.0 * r, delta, n_mc, seed, stream)
            })
            .collect();
        let observed: Vec<f64> = estimates.iter().map(|e| e.0).collect();
        let report = match worst_index(&observed) {
            Some(i) => {
                let (obs, se) = estimates[i];
                if se > 0.25 * bound {
                    return Err(Error::InsufficientSamples { r, stderr: se, bound });
                }
                RadiusReport {
                    r,
                    worst_center: centers[i],
                    observed: obs,
                    bound,
                    ratio: obs / bound,
                    pass: obs <= bound,
                    stderr: se,
                }
            }
            None => RadiusReport {
                r,
                worst_center: Vec4::zeros(),
                observed: 0.0,
                bound,
                ratio: 0.0,
                pass: true,
                stderr: 0.0,
            },
        };
        radii.push(report);
    }
    Ok(BallConditionReport::from_radii(Form::Volume, constant, radii))
}

/// `|∪S| / (#S |S|)` with `|S|` the brute-force single-strip reference.
pub fn disjointness_ratio(family: &StripFamily, grid_resolution: f64) -> Result<f64> {
    if grid_resolution > family.delta / 2.0 + 1e-15 {
        return Err(Error::Invalid("grid resolution must be at most delta/2".into()));
    }
    if family.is_empty() {
        return Ok(0.0);
    }
    let union = measure::rasterize(family, grid_resolution)?.measure();
    let single = measure::reference_strip_volume(family.delta, family.rho);
    Ok(union / (family.len() as f64 * single))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::LLine;

    #[test]
    fn radii_and_bounds() {
        let r = dyadic_radii(1.0 / 64.0);
        assert_eq!(r.len(), 7);
        assert_eq!(*r.last().unwrap(), 1.0);
        let (d, rho) = (1.0 / 64.0, 0.125);
        assert_eq!(counting_bound(d, d, rho), 1.0);
        assert_eq!(counting_bound(rho, d, rho), 8.0);
        assert_eq!(counting_bound(1.0, d, rho), 512.0);
    }

    #[test]
    fn single_strip_counts() {
        let f = StripFamily::new(1.0 / 64.0, 0.125, [LLine::new(1.0, 0.0, 0.0)]).unwrap();
        let rep = ball_condition_count(&f, DEFAULT_CONSTANT);
        assert!(rep.overall_pass);
        assert!(rep.radii.iter().all(|r| r.observed <= 1.0));
    }

    #[test]
    fn empty_family_volume_passes() {
        let f = StripFamily::empty(1.0 / 64.0, 0.125).unwrap();
        let rep = ball_condition_volume(&f, 10_000, 0, VOLUME_CONSTANT).unwrap();
        assert!(rep.overall_pass);
        assert!(rep.radii.iter().all(|r| r.observed == 0.0));
        assert!(ball_condition_volume(&f, 100, 0, VOLUME_CONSTANT).is_err());
    }

    #[test]
    fn tube_index_agrees_with_scan() {
        let f = StripFamily::new(
            1.0 / 64.0,
            0.125,
            (0..30).map(|i| LLine::new(1.0 + 0.01 * i as f64, 0.003 * i as f64, -0.002 * i as f64)),
        )
        .unwrap();
        let index = DualTubeIndex::new(&f);
        let tubes: Vec<DualTube> = f.strips.iter().map(|s| s.dual_tube()).collect();
        let mut rng = stream_rng(5, 0);
        let c = Vec4::new(1.15, 0.05, -0.03, 1.15);
        for _ in 0..20_000 {
            let q = sample_ball4(&mut rng, &c, 0.2);
            assert_eq!(index.contains(&q), tubes.iter().any(|t| t.contains(&q)));
        }
    }
}
