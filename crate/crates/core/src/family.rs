//! Strip families and their generators.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::conditions::{counting_bound, dyadic_radii, DEFAULT_CONSTANT};
use crate::error::{Error, Result};
use crate::geom::{check_scales, LLine, RegulusStrip, Vec3, Vec4};
use crate::rng::stream_rng;

/// A family of `(delta, rho)`-strips sharing both scales.
#[derive(Clone, Debug, PartialEq)]
pub struct StripFamily {
    pub delta: f64,
    pub rho: f64,
    pub strips: Vec<RegulusStrip>,
}

#[derive(Serialize, Deserialize)]
struct CoreRecord {
    a: f64,
    b: f64,
    c: f64,
}

#[derive(Serialize, Deserialize)]
struct FamilyFile {
    delta: f64,
    rho: f64,
    strips: Vec<CoreRecord>,
}

impl StripFamily {
    pub fn new(delta: f64, rho: f64, cores: impl IntoIterator<Item = LLine>) -> Result<Self> {
        check_scales(delta, rho)?;
        Ok(Self::from_cores_unchecked(delta, rho, cores))
    }

    pub fn empty(delta: f64, rho: f64) -> Result<Self> {
        Self::new(delta, rho, [])
    }

    fn from_cores_unchecked(delta: f64, rho: f64, cores: impl IntoIterator<Item = LLine>) -> Self {
        let strips = cores
            .into_iter()
            .map(|core| RegulusStrip::unchecked(core, delta, rho))
            .collect();
        Self { delta, rho, strips }
    }

    pub fn len(&self) -> usize {
        self.strips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.strips.is_empty()
    }

    pub fn cores(&self) -> impl Iterator<Item = &LLine> + '_ {
        self.strips.iter().map(|s| &s.core)
    }

    /// The set `E(S)` of `(a, b, c)` parameters.
    pub fn parameter_points(&self) -> Vec<Vec3> {
        self.cores().map(LLine::param).collect()
    }

    pub fn dual_centers(&self) -> Vec<Vec4> {
        self.cores().map(LLine::breve).collect()
    }

    /// Same cores, new scales.
    pub fn with_scales(&self, delta: f64, rho: f64) -> Result<Self> {
        Self::new(delta, rho, self.cores().copied())
    }

    pub fn subfamily(&self, indices: &[usize]) -> Self {
        Self {
            delta: self.delta,
            rho: self.rho,
            strips: indices.iter().map(|&i| self.strips[i]).collect(),
        }
    }

    /// Whether the parameter points are pairwise `sep`-separated.
    pub fn is_separated(&self, sep: f64) -> bool {
        let pts = self.parameter_points();
        pts.iter()
            .enumerate()
            .all(|(i, p)| pts[i + 1..].iter().all(|q| (p - q).norm() >= sep))
    }

    pub fn to_json(&self) -> Result<String> {
        let file = FamilyFile {
            delta: self.delta,
            rho: self.rho,
            strips: self
                .cores()
                .map(|l| CoreRecord { a: l.a, b: l.b, c: l.c })
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: FamilyFile = serde_json::from_str(s)?;
        Self::new(file.delta, file.rho, file.strips.iter().map(|r| LLine::new(r.a, r.b, r.c)))
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut s = self.to_json()?;
        s.push('\n');
        std::fs::write(path, s)?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// An axis-aligned box of `(a, b, c)` parameters, half-open on the upper side.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamBox {
    pub a: [f64; 2],
    pub b: [f64; 2],
    pub c: [f64; 2],
}

impl ParamBox {
    pub const fn new(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> Self {
        Self { a, b, c }
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        match v {
            [a0, a1, b0, b1, c0, c1] if a0 < a1 && b0 < b1 && c0 < c1 => {
                Ok(Self::new([*a0, *a1], [*b0, *b1], [*c0, *c1]))
            }
            _ => Err(Error::Invalid(format!("box needs six increasing bounds, got {v:?}"))),
        }
    }

    pub fn volume(&self) -> f64 {
        (self.a[1] - self.a[0]) * (self.b[1] - self.b[0]) * (self.c[1] - self.c[0])
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> Vec3 {
        Vec3::new(
            rng.gen_range(self.a[0]..self.a[1]),
            rng.gen_range(self.b[0]..self.b[1]),
            rng.gen_range(self.c[0]..self.c[1]),
        )
    }
}

/// Default parameter box of the SL2 example.
pub const SL2_BOX: ParamBox = ParamBox::new([0.5, 1.5], [-1.5, 1.0], [-2.0, 0.0]);

/// Box in which [`gen_random_family`] samples.
pub const RANDOM_BOX: ParamBox = ParamBox::new([0.75, 1.25], [-0.5, 0.0], [-0.5, 0.0]);

/// Center of the parameter cluster of [`gen_clustered_family`].
pub const CLUSTER_CENTER: [f64; 3] = [0.5, 0.25, 0.0];

fn grid_indices(lo: f64, hi: f64, s: f64) -> std::ops::Range<i64> {
    let first = (lo / s - 1e-9).ceil() as i64;
    let end = (hi / s - 1e-9).ceil() as i64;
    first..end
}

/// The SL2 example: one strip per point of `sqrt(delta) Z^3` in the box,
/// each point jittered by at most `sqrt(delta)/10`.
pub fn gen_sl2_example(delta: f64, bx: &ParamBox, seed: u64) -> Result<StripFamily> {
    if !(delta > 0.0 && delta <= 1.0 / 16.0) {
        return Err(Error::BadScale(delta));
    }
    let s = delta.sqrt();
    let jitter = s / (10.0 * 3f64.sqrt());
    let mut rng = stream_rng(seed, 0);
    let mut cores = Vec::new();
    for i in grid_indices(bx.a[0], bx.a[1], s) {
        for j in grid_indices(bx.b[0], bx.b[1], s) {
            for k in grid_indices(bx.c[0], bx.c[1], s) {
                let mut off = || rng.gen_range(-jitter..=jitter);
                let (da, db, dc) = (off(), off(), off());
                cores.push(LLine::new(i as f64 * s + da, j as f64 * s + db, k as f64 * s + dc));
            }
        }
    }
    StripFamily::new(delta, s, cores)
}

/// Knobs of the greedy random generator.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RandomParams {
    pub bx: ParamBox,
    pub constant: f64,
    pub max_rejects: usize,
}

impl Default for RandomParams {
    fn default() -> Self {
        Self { bx: RANDOM_BOX, constant: DEFAULT_CONSTANT, max_rejects: 1000 }
    }
}

/// Uniform samples in [`RANDOM_BOX`], accepted greedily while the family stays
/// `delta`-separated and within the counting bounds at constant 100.
pub fn gen_random_family(delta: f64, rho: f64, n: usize, seed: u64, max_rejects: usize) -> Result<StripFamily> {
    gen_random_family_with(delta, rho, n, seed, &RandomParams { max_rejects, ..Default::default() })
}

pub fn gen_random_family_with(
    delta: f64,
    rho: f64,
    n: usize,
    seed: u64,
    params: &RandomParams,
) -> Result<StripFamily> {
    check_scales(delta, rho)?;
    if n == 0 {
        return Err(Error::Invalid("n must be at least 1".into()));
    }
    let radii = dyadic_radii(delta);
    let bounds: Vec<f64> = radii
        .iter()
        .map(|&r| params.constant * counting_bound(r, delta, rho))
        .collect();
    let mut rng = stream_rng(seed, 0);
    let mut points: Vec<Vec3> = Vec::with_capacity(n);
    let mut duals: Vec<Vec4> = Vec::with_capacity(n);
    // counts[k][i]: dual centers within 2 r_k of dual center i
    let mut counts: Vec<Vec<u32>> = vec![Vec::with_capacity(n); radii.len()];
    let mut rejects = 0usize;
    let mut near: Vec<(usize, f64)> = Vec::new();
    while points.len() < n {
        let p = params.bx.sample(&mut rng);
        let x = LLine::from_param(&p).breve();
        let separated = points.iter().all(|q| (p - q).norm() >= delta);
        let mut ok = separated;
        if ok {
            near.clear();
            near.extend(duals.iter().enumerate().map(|(i, y)| (i, (x - y).norm())));
            ok = radii.iter().zip(&bounds).enumerate().all(|(k, (&r, &bound))| {
                let mut own = 1.0;
                for &(i, dist) in &near {
                    if dist <= 2.0 * r {
                        own += 1.0;
                        if f64::from(counts[k][i]) + 1.0 > bound {
                            return false;
                        }
                    }
                }
                own <= bound
            });
        }
        if !ok {
            rejects += 1;
            if rejects >= params.max_rejects {
                return Err(Error::GenerationExhausted { accepted: points.len(), rejects });
            }
            continue;
        }
        rejects = 0;
        for (k, &r) in radii.iter().enumerate() {
            let mut own = 1;
            for &(i, dist) in &near {
                if dist <= 2.0 * r {
                    counts[k][i] += 1;
                    own += 1;
                }
            }
            counts[k].push(own);
        }
        points.push(p);
        duals.push(x);
    }
    StripFamily::new(delta, rho, points.iter().map(LLine::from_param))
}

/// `n` strips whose dual centers are uniform in the 4-ball of radius `r`
/// about the dual center of [`CLUSTER_CENTER`].
pub fn gen_clustered_family(delta: f64, rho: f64, r: f64, n: usize, seed: u64) -> Result<StripFamily> {
    gen_clustered_family_at(delta, rho, r, n, seed, Vec3::from(CLUSTER_CENTER))
}

pub fn gen_clustered_family_at(
    delta: f64,
    rho: f64,
    r: f64,
    n: usize,
    seed: u64,
    center: Vec3,
) -> Result<StripFamily> {
    check_scales(delta, rho)?;
    if !(r >= delta && r <= 1.0) {
        return Err(Error::Invalid(format!("cluster radius {r} outside [delta, 1]")));
    }
    let mut rng = stream_rng(seed, 0);
    let mut cores = Vec::with_capacity(n);
    // uniform in the ellipsoid 2 da^2 + db^2 + dc^2 <= r^2 by rejection from its bounding box
    let ha = r / 2f64.sqrt();
    while cores.len() < n {
        let d = Vec3::new(rng.gen_range(-ha..=ha), rng.gen_range(-r..=r), rng.gen_range(-r..=r));
        if 2.0 * d.x * d.x + d.y * d.y + d.z * d.z <= r * r {
            cores.push(LLine::from_param(&(center + d)));
        }
    }
    StripFamily::new(delta, rho, cores)
}

/// Number of strips a cluster of radius `r` needs to exceed the counting
/// bound at `r` by `factor`.
pub fn clustered_violation_count(delta: f64, rho: f64, r: f64, factor: f64) -> usize {
    (factor * DEFAULT_CONSTANT * counting_bound(r, delta, rho)).ceil() as usize
}

/// Keep probability of [`sample_refine`].
pub fn refine_probability(delta: f64, rho: f64, delta_new: f64, rho_new: f64) -> f64 {
    let log = (1.0 / delta).log2();
    ((delta / delta_new) * (rho / rho_new) / log).min(1.0)
}

/// Keep each strip independently with [`refine_probability`] and re-emit the
/// survivors at the new scales.
pub fn sample_refine(family: &StripFamily, delta_new: f64, rho_new: f64, seed: u64) -> Result<StripFamily> {
    if delta_new < family.delta || rho_new < family.rho {
        return Err(Error::Invalid("refinement scales must not shrink".into()));
    }
    let p = refine_probability(family.delta, family.rho, delta_new, rho_new);
    let mut rng = stream_rng(seed, 0);
    let kept: Vec<LLine> = family
        .cores()
        .filter(|_| p >= 1.0 || rng.gen::<f64>() < p)
        .copied()
        .collect();
    StripFamily::new(delta_new, rho_new, kept)
}
