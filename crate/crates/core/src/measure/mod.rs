//! Union measures of strip families: voxel rasterization, planar slices and
//! Monte Carlo, plus the wave-packet and shading machinery built on them.

mod planks;
mod shading;

pub use planks::{plank_union_measure, slice_correspondence, PlankMeasure, SliceCorrespondence};
pub use shading::{
    decompose_htubes, htube_count, kakeya_ratio, make_shading, rasterize_htubes, regularize, HTube,
    KakeyaRatio, Regularized, Shading, ShadingMode,
};

use std::collections::HashMap;
use std::sync::Mutex;

use rand::Rng;
use rayon::prelude::*;

use crate::duality::{slice_tube_of, Tube2, Vec2};
use crate::error::{Error, Result};
use crate::family::StripFamily;
use crate::geom::{LLine, RegulusStrip, Vec3};
use crate::rng::stream_rng;

/// Largest number of cells [`rasterize`] will allocate.
pub const CELL_BUDGET: u64 = 1 << 30;

/// Core used for the single-strip reference volume.
pub const REFERENCE_CORE: LLine = LLine { a: 0.5, b: 0.25, c: 0.0 };

/// Dense voxel occupancy over `origin + [0, dims * h)`, one bit per cell,
/// stored layer by layer with each layer padded to whole words.
#[derive(Clone, Debug, PartialEq)]
pub struct OccupancyGrid {
    pub origin: Vec3,
    pub h: f64,
    pub dims: [usize; 3],
    words_per_layer: usize,
    bits: Vec<u64>,
}

impl OccupancyGrid {
    pub fn new(h: f64, n: usize) -> Self {
        let words_per_layer = (n * n).div_ceil(64);
        Self {
            origin: Vec3::zeros(),
            h,
            dims: [n; 3],
            words_per_layer,
            bits: vec![0; words_per_layer * n],
        }
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> bool {
        let idx = j * self.dims[0] + i;
        self.bits[k * self.words_per_layer + idx / 64] >> (idx % 64) & 1 == 1
    }

    pub fn center(&self, i: usize, j: usize, k: usize) -> Vec3 {
        self.origin + Vec3::new(i as f64 + 0.5, j as f64 + 0.5, k as f64 + 0.5) * self.h
    }

    pub fn count(&self) -> u64 {
        self.bits.iter().map(|w| u64::from(w.count_ones())).sum()
    }

    pub fn layer_count(&self, k: usize) -> u64 {
        self.bits[k * self.words_per_layer..(k + 1) * self.words_per_layer]
            .iter()
            .map(|w| u64::from(w.count_ones()))
            .sum()
    }

    pub fn measure(&self) -> f64 {
        self.h.powi(3) * self.count() as f64
    }

    /// Cells set here but not in `other` (same shape).
    pub fn difference_count(&self, other: &Self) -> u64 {
        self.bits
            .iter()
            .zip(&other.bits)
            .map(|(a, b)| u64::from((a & !b).count_ones()))
            .sum()
    }
}

/// Number of cells of side `h` covering `[0, 1]`.
pub fn cells_per_side(h: f64) -> usize {
    (1.0 / h - 1e-9).ceil() as usize
}

fn checked_side(h: f64) -> Result<usize> {
    if !(h > 0.0) {
        return Err(Error::Invalid(format!("resolution {h} must be positive")));
    }
    let n = cells_per_side(h);
    let cells = (n as u64).saturating_pow(3);
    if cells > CELL_BUDGET {
        return Err(Error::GridTooLarge { cells, budget: CELL_BUDGET });
    }
    Ok(n)
}

/// The `x`-interval of `{q : dist(q, [a, b]) <= r}` on the line `q.y = y`.
pub(crate) fn capsule_row(a: &Vec2, b: &Vec2, r: f64, y: f64) -> Option<(f64, f64)> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for c in [a, b] {
        let dy = y - c.y;
        if dy.abs() <= r {
            let w = (r * r - dy * dy).sqrt();
            lo = lo.min(c.x - w);
            hi = hi.max(c.x + w);
        }
    }
    let v = b - a;
    let len = v.norm();
    if len > 0.0 {
        let e = v / len;
        let dy = y - a.y;
        // e.x (x - a.x) + e.y dy in [0, len]; -e.y (x - a.x) + e.x dy in [-r, r]
        let mut slab = (f64::NEG_INFINITY, f64::INFINITY);
        let mut feasible = true;
        for (coef, konst, l, h) in [(e.x, e.y * dy, 0.0, len), (-e.y, e.x * dy, -r, r)] {
            if coef.abs() < 1e-14 {
                feasible &= konst >= l && konst <= h;
            } else {
                let (p, q) = ((l - konst) / coef, (h - konst) / coef);
                slab.0 = slab.0.max(p.min(q));
                slab.1 = slab.1.min(p.max(q));
            }
        }
        if feasible && slab.0 <= slab.1 {
            lo = lo.min(slab.0 + a.x);
            hi = hi.max(slab.1 + a.x);
        }
    }
    (lo <= hi).then_some((lo, hi))
}

/// Calls `f(i, j, center)` for each cell of an `n x n` grid of side `h` whose
/// center lies within `r` of the segment `[a, b]`.
pub(crate) fn for_cells_in_capsule(
    a: &Vec2,
    b: &Vec2,
    r: f64,
    h: f64,
    n: usize,
    mut f: impl FnMut(usize, usize, Vec2),
) {
    let ylo = a.y.min(b.y) - r;
    let yhi = a.y.max(b.y) + r;
    let j0 = ((ylo / h - 0.5).ceil().max(0.0)) as usize;
    let j1 = (yhi / h - 0.5).floor();
    if j1 < 0.0 {
        return;
    }
    let j1 = (j1 as usize).min(n.saturating_sub(1));
    for j in j0..=j1 {
        let y = (j as f64 + 0.5) * h;
        let Some((xlo, xhi)) = capsule_row(a, b, r, y) else { continue };
        let i0 = ((xlo / h - 0.5).ceil().max(0.0)) as usize;
        let i1 = (xhi / h - 0.5).floor();
        if i1 < 0.0 {
            continue;
        }
        let i1 = (i1 as usize).min(n - 1);
        for i in i0..=i1 {
            f(i, j, Vec2::new((i as f64 + 0.5) * h, y));
        }
    }
}

#[inline]
fn set_bit(bits: &mut [u64], idx: usize) {
    bits[idx / 64] |= 1 << (idx % 64);
}

#[inline]
fn test_bit(bits: &[u64], idx: usize) -> bool {
    bits[idx / 64] >> (idx % 64) & 1 == 1
}

/// Radius about the slice segment at height `z` outside which no point at
/// that height is in the strip.
fn prefilter_radius(strip: &RegulusStrip) -> f64 {
    let c = &strip.core;
    strip.delta * (1.0 + c.c.hypot(c.a.abs() + strip.rho))
}

/// Marks the cells of one `n x n` layer at height `z` that lie in some strip.
fn raster_layer(strips: &[RegulusStrip], z: f64, h: f64, n: usize, bits: &mut [u64]) {
    for strip in strips {
        let tube = slice_tube_of(&strip.core, strip.rho, strip.delta, z);
        let (a, b) = tube.endpoints();
        let r = prefilter_radius(strip);
        if a.x.max(b.x) + r < 0.0 || a.x.min(b.x) - r > 1.0 || a.y.max(b.y) + r < 0.0 || a.y.min(b.y) - r > 1.0 {
            continue;
        }
        for_cells_in_capsule(&a, &b, r, h, n, |i, j, q| {
            let idx = j * n + i;
            if test_bit(bits, idx) {
                return;
            }
            if tube.distance_to_core(&q) <= strip.delta || strip.contains(&Vec3::new(q.x, q.y, z)) {
                set_bit(bits, idx);
            }
        });
    }
}

fn raster_layers(
    h: f64,
    n: usize,
    fill: impl Fn(usize, f64, &mut [u64]) + Sync,
) -> OccupancyGrid {
    let mut grid = OccupancyGrid::new(h, n);
    let wpl = grid.words_per_layer;
    grid.bits
        .par_chunks_mut(wpl)
        .enumerate()
        .for_each(|(k, layer)| fill(k, (k as f64 + 0.5) * h, layer));
    grid
}

/// Voxelizes `∪S` over `[0,1]^3` at cell size `h`; a cell is set iff its
/// center is in some strip.
pub fn rasterize(family: &StripFamily, h: f64) -> Result<OccupancyGrid> {
    let n = checked_side(h)?;
    Ok(raster_layers(h, n, |_, z, layer| raster_layer(&family.strips, z, h, n, layer)))
}

/// Area of the slice of `∪S` at height `t`, on a planar grid of side `h2`.
pub fn slice_measure(family: &StripFamily, t: f64, h2: f64) -> f64 {
    let n = cells_per_side(h2);
    let mut bits = vec![0u64; (n * n).div_ceil(64)];
    raster_layer(&family.strips, t, h2, n, &mut bits);
    bits.iter().map(|w| w.count_ones() as f64).sum::<f64>() * h2 * h2
}

/// Voxelizes a union of planar tubes, each living on a range of layer indices.
pub(crate) fn rasterize_tubes(tubes: &[(std::ops::Range<usize>, Tube2)], h: f64) -> Result<OccupancyGrid> {
    let n = checked_side(h)?;
    Ok(raster_layers(h, n, |k, _, layer| {
        for (range, tube) in tubes {
            if !range.contains(&k) {
                continue;
            }
            let (a, b) = tube.endpoints();
            for_cells_in_capsule(&a, &b, tube.thickness, h, n, |i, j, _| set_bit(layer, j * n + i));
        }
    }))
}

static REFERENCE_CACHE: Mutex<Option<HashMap<(u64, u64), f64>>> = Mutex::new(None);

/// Volume of a single interior `(delta, rho)`-strip, rasterized at `delta/8`.
pub fn reference_strip_volume(delta: f64, rho: f64) -> f64 {
    let key = (delta.to_bits(), rho.to_bits());
    if let Some(v) = REFERENCE_CACHE.lock().unwrap().as_ref().and_then(|m| m.get(&key)) {
        return *v;
    }
    let strip = RegulusStrip::unchecked(REFERENCE_CORE, delta, rho);
    let h = delta / 8.0;
    let n = cells_per_side(h);
    let count: u64 = (0..n)
        .into_par_iter()
        .map(|k| {
            let mut bits = vec![0u64; (n * n).div_ceil(64)];
            raster_layer(std::slice::from_ref(&strip), (k as f64 + 0.5) * h, h, n, &mut bits);
            bits.iter().map(|w| u64::from(w.count_ones())).sum::<u64>()
        })
        .sum();
    let v = count as f64 * h.powi(3);
    REFERENCE_CACHE.lock().unwrap().get_or_insert_with(HashMap::new).insert(key, v);
    v
}

/// Samples per independent RNG stream in [`mc_measure`].
pub const MC_CHUNK: usize = 1 << 14;

/// Hit fraction of `pred` over `n` uniform samples in `[0,1]^3`, with its
/// binomial standard error. Chunk `i` draws from stream `i`, so the result
/// does not depend on the thread count.
pub fn mc_measure(pred: impl Fn(&Vec3) -> bool + Sync, n: usize, seed: u64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 0.0);
    }
    let chunks = n.div_ceil(MC_CHUNK);
    let hits: usize = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = stream_rng(seed, c as u64);
            let m = MC_CHUNK.min(n - c * MC_CHUNK);
            (0..m)
                .filter(|_| pred(&Vec3::new(rng.gen(), rng.gen(), rng.gen())))
                .count()
        })
        .sum();
    let p = hits as f64 / n as f64;
    (p, (p * (1.0 - p) / n as f64).sqrt())
}

/// Strips bucketed by height slab (width `delta`) and planar cell.
pub struct StripIndex<'a> {
    strips: &'a [RegulusStrip],
    slab: f64,
    n_slabs: usize,
    cell: f64,
    m: usize,
    offsets: Vec<u32>,
    ids: Vec<u32>,
}

impl<'a> StripIndex<'a> {
    pub fn new(family: &'a StripFamily) -> Self {
        let slab = family.delta;
        let n_slabs = cells_per_side(slab);
        let cell = (2.0 * family.rho).max(1.0 / 64.0);
        let m = cells_per_side(cell);
        let n_buckets = n_slabs * m * m;
        let visit = |f: &mut dyn FnMut(usize, u32)| {
            for (id, s) in family.strips.iter().enumerate() {
                for k in 0..n_slabs {
                    let t0 = ((k as f64 - 1.0) * slab).max(0.0);
                    let t1 = ((k as f64 + 2.0) * slab).min(1.0);
                    let mut lo = Vec2::repeat(f64::INFINITY);
                    let mut hi = Vec2::repeat(f64::NEG_INFINITY);
                    for t in [t0, t1] {
                        for u in [-s.rho, s.rho] {
                            let p = s.regulus().point_at(t, u);
                            lo = lo.inf(&p.xy());
                            hi = hi.sup(&p.xy());
                        }
                    }
                    let (lo, hi) = (lo.add_scalar(-s.delta), hi.add_scalar(s.delta));
                    if hi.x < 0.0 || hi.y < 0.0 || lo.x > 1.0 || lo.y > 1.0 {
                        continue;
                    }
                    let cx = |v: f64| ((v / cell).floor().max(0.0) as usize).min(m - 1);
                    for j in cx(lo.y)..=cx(hi.y) {
                        for i in cx(lo.x)..=cx(hi.x) {
                            f((k * m + j) * m + i, id as u32);
                        }
                    }
                }
            }
        };
        let mut counts = vec![0u32; n_buckets + 1];
        visit(&mut |b, _| counts[b + 1] += 1);
        for i in 0..n_buckets {
            counts[i + 1] += counts[i];
        }
        let mut fill = counts.clone();
        let mut ids = vec![0u32; counts[n_buckets] as usize];
        visit(&mut |b, id| {
            ids[fill[b] as usize] = id;
            fill[b] += 1;
        });
        Self { strips: &family.strips, slab, n_slabs, cell, m, offsets: counts, ids }
    }

    pub fn candidates(&self, p: &Vec3) -> &[u32] {
        if !crate::geom::in_unit_cube(p) {
            return &[];
        }
        let k = ((p.z / self.slab) as usize).min(self.n_slabs - 1);
        let i = ((p.x / self.cell) as usize).min(self.m - 1);
        let j = ((p.y / self.cell) as usize).min(self.m - 1);
        let b = (k * self.m + j) * self.m + i;
        &self.ids[self.offsets[b] as usize..self.offsets[b + 1] as usize]
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        self.candidates(p).iter().any(|&i| self.strips[i as usize].contains(p))
    }
}

/// Monte Carlo estimate of `|∪S|` and its standard error.
pub fn mc_union_measure(family: &StripFamily, n: usize, seed: u64) -> (f64, f64) {
    if family.is_empty() {
        return (0.0, 0.0);
    }
    let index = StripIndex::new(family);
    mc_measure(|p| index.contains(p), n, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_capsule_row(a: &Vec2, b: &Vec2, r: f64, y: f64) -> Option<(f64, f64)> {
        let tube = crate::duality::Segment2 { a: *a, b: *b }.as_tube(r);
        let xs: Vec<f64> = (0..=40_000)
            .map(|i| -2.0 + 4.0 * i as f64 / 40_000.0)
            .filter(|&x| tube.contains(&Vec2::new(x, y)))
            .collect();
        Some((*xs.first()?, *xs.last()?))
    }

    #[test]
    fn capsule_rows_match_scan() {
        let cases = [
            (Vec2::new(0.1, 0.2), Vec2::new(0.8, 0.5), 0.05),
            (Vec2::new(0.3, 0.3), Vec2::new(0.3, 0.9), 0.1),
            (Vec2::new(0.2, 0.4), Vec2::new(0.7, 0.4), 0.02),
            (Vec2::new(0.5, 0.5), Vec2::new(0.5, 0.5), 0.1),
        ];
        for (a, b, r) in cases {
            for k in 0..50 {
                let y = k as f64 / 49.0;
                match (capsule_row(&a, &b, r, y), brute_capsule_row(&a, &b, r, y)) {
                    (Some(x), Some(z)) => {
                        assert!((x.0 - z.0).abs() < 2e-4 && (x.1 - z.1).abs() < 2e-4, "{x:?} {z:?}")
                    }
                    (None, None) => {}
                    (x, z) => {
                        // tangent rows may disagree at scan resolution
                        let w = x.or(z).unwrap();
                        assert!(w.1 - w.0 < 1e-2, "{x:?} {z:?}");
                    }
                }
            }
        }
    }

    #[test]
    fn empty_family_measures_zero() {
        let f = StripFamily::empty(1.0 / 16.0, 0.25).unwrap();
        assert_eq!(rasterize(&f, 1.0 / 32.0).unwrap().measure(), 0.0);
        assert_eq!(mc_union_measure(&f, 10_000, 1), (0.0, 0.0));
        assert_eq!(slice_measure(&f, 0.5, 1.0 / 32.0), 0.0);
    }

    #[test]
    fn grid_budget() {
        let f = StripFamily::empty(1.0 / 16.0, 0.25).unwrap();
        assert!(matches!(rasterize(&f, 1.0 / 2048.0), Err(Error::GridTooLarge { .. })));
    }

    #[test]
    fn duplicate_strip_is_idempotent() {
        let (d, r) = (1.0 / 32.0, 0.125);
        let one = StripFamily::new(d, r, [REFERENCE_CORE]).unwrap();
        let two = StripFamily::new(d, r, [REFERENCE_CORE, REFERENCE_CORE]).unwrap();
        assert_eq!(rasterize(&one, d / 2.0).unwrap(), rasterize(&two, d / 2.0).unwrap());
    }

    #[test]
    fn mc_box_fixture() {
        let (est, se) = mc_measure(|p| p.x < 0.5 && p.y < 0.4 && p.z > 0.25, 200_000, 3);
        assert!((est - 0.15).abs() <= 3.0 * se, "{est} {se}");
    }

    #[test]
    fn index_matches_scan() {
        let f = crate::family::gen_random_family(1.0 / 64.0, 0.125, 60, 2, 1000).unwrap();
        let index = StripIndex::new(&f);
        let mut rng = stream_rng(9, 0);
        let mut hits = 0;
        for _ in 0..50_000 {
            let p = Vec3::new(rng.gen(), rng.gen(), rng.gen());
            let brute = f.strips.iter().any(|s| s.contains(&p));
            assert_eq!(index.contains(&p), brute);
            hits += brute as usize;
        }
        assert!(hits > 0);
    }
}
