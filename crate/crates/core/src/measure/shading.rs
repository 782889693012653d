use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::duality::{segment_distance, slice_tube_of, Segment2, Tube2};
use crate::error::{Error, Result};
use crate::family::StripFamily;
use crate::geom::Vec3;
use crate::rng::stream_rng;

use super::{cells_per_side, rasterize_tubes, reference_strip_volume};

/// Number of horizontal tubes per strip.
pub fn htube_count(delta: f64) -> usize {
    (1.0 / delta - 1e-9).ceil() as usize
}

/// The slice tube of a strip at `t = (k + 1/2) delta`, living on the slab
/// `[k delta, (k+1) delta)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HTube {
    pub strip_index: usize,
    pub t_index: usize,
    pub tube: Tube2,
    pub slab: [f64; 2],
}

impl HTube {
    pub fn center(&self) -> Vec3 {
        Vec3::new(self.tube.center.x, self.tube.center.y, (self.slab[0] + self.slab[1]) / 2.0)
    }

    pub fn segment(&self) -> Segment2 {
        let (a, b) = self.tube.endpoints();
        Segment2 { a, b }
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        p.z >= self.slab[0] && p.z < self.slab[1] && self.tube.contains(&p.xy())
    }
}

fn htube(family: &StripFamily, strip_index: usize, k: usize) -> HTube {
    let d = family.delta;
    let s = &family.strips[strip_index];
    HTube {
        strip_index,
        t_index: k,
        tube: slice_tube_of(&s.core, s.rho, s.delta, (k as f64 + 0.5) * d),
        slab: [k as f64 * d, ((k + 1) as f64 * d).min(1.0)],
    }
}

pub fn decompose_htubes(strip_index: usize, family: &StripFamily) -> Vec<HTube> {
    (0..htube_count(family.delta)).map(|k| htube(family, strip_index, k)).collect()
}

/// Selected horizontal tubes per strip.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shading {
    pub selected: BTreeMap<usize, BTreeSet<usize>>,
}

#[derive(Serialize, Deserialize)]
struct ShadingFile {
    selected: BTreeMap<String, Vec<usize>>,
}

impl Shading {
    pub fn count(&self, strip: usize) -> usize {
        self.selected.get(&strip).map_or(0, BTreeSet::len)
    }

    pub fn density(&self, strip: usize, delta: f64) -> f64 {
        self.count(strip) as f64 * delta
    }

    /// Smallest density over the strips of a family.
    pub fn min_density(&self, family: &StripFamily) -> f64 {
        (0..family.len())
            .map(|i| self.density(i, family.delta))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn mass(&self) -> usize {
        self.selected.values().map(BTreeSet::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.mass() == 0
    }

    pub fn tubes(&self, family: &StripFamily) -> Vec<HTube> {
        self.selected
            .iter()
            .flat_map(|(&i, ks)| ks.iter().map(move |&k| htube(family, i, k)))
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        let file = ShadingFile {
            selected: self
                .selected
                .iter()
                .map(|(i, ks)| (i.to_string(), ks.iter().copied().collect()))
                .collect(),
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: ShadingFile = serde_json::from_str(s)?;
        let mut selected = BTreeMap::new();
        for (key, ks) in file.selected {
            let i: usize = key
                .parse()
                .map_err(|_| Error::Invalid(format!("strip index {key:?} is not an integer")))?;
            selected.insert(i, ks.into_iter().collect());
        }
        Ok(Self { selected })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ShadingMode {
    Full,
    Random { lambda: f64, seed: u64 },
    /// Tubes whose center lies in the box `[lo, hi]`.
    Region { lo: Vec3, hi: Vec3 },
}

pub fn make_shading(family: &StripFamily, mode: ShadingMode) -> Result<Shading> {
    let n_t = htube_count(family.delta);
    let mut selected = BTreeMap::new();
    for i in 0..family.len() {
        let ks: BTreeSet<usize> = match mode {
            ShadingMode::Full => (0..n_t).collect(),
            ShadingMode::Random { lambda, seed } => {
                if !(lambda > 0.0 && lambda <= 1.0) {
                    return Err(Error::Invalid(format!("lambda = {lambda} outside (0, 1]")));
                }
                let mut rng = stream_rng(seed, i as u64);
                (0..n_t).filter(|_| rng.gen::<f64>() < lambda).collect()
            }
            ShadingMode::Region { lo, hi } => (0..n_t)
                .filter(|&k| {
                    let c = htube(family, i, k).center();
                    (0..3).all(|a| c[a] >= lo[a] && c[a] <= hi[a])
                })
                .collect(),
        };
        if !ks.is_empty() {
            selected.insert(i, ks);
        }
    }
    Ok(Shading { selected })
}

/// Output of [`regularize`]; `indices[j]` is the original index of strip `j`
/// of `family`.
#[derive(Clone, Debug, PartialEq)]
pub struct Regularized {
    pub family: StripFamily,
    pub shading: Shading,
    pub mu: usize,
    pub indices: Vec<usize>,
    pub saturated_mass: usize,
}

/// Planar hash of the selected tubes of one slab.
struct SlabHash {
    cell: f64,
    buckets: HashMap<(i64, i64), Vec<Segment2>>,
}

impl SlabHash {
    fn new(cell: f64) -> Self {
        Self { cell, buckets: HashMap::new() }
    }

    fn keys(&self, seg: &Segment2, pad: f64) -> impl Iterator<Item = (i64, i64)> {
        let f = |v: f64| (v / self.cell).floor() as i64;
        let (x0, x1) = (f(seg.a.x.min(seg.b.x) - pad), f(seg.a.x.max(seg.b.x) + pad));
        let (y0, y1) = (f(seg.a.y.min(seg.b.y) - pad), f(seg.a.y.max(seg.b.y) + pad));
        (x0..=x1).flat_map(move |i| (y0..=y1).map(move |j| (i, j)))
    }

    fn insert(&mut self, seg: Segment2) {
        let keys: Vec<_> = self.keys(&seg, 0.0).collect();
        for k in keys {
            self.buckets.entry(k).or_default().push(seg);
        }
    }

    fn any_within(&self, seg: &Segment2, dist: f64) -> bool {
        self.keys(seg, dist).any(|k| {
            self.buckets
                .get(&k)
                .is_some_and(|v| v.iter().any(|s| segment_distance(s, seg) <= dist))
        })
    }
}

/// Saturates the shading against the union of its tubes, then keeps the
/// dyadic class of selected counts carrying the most mass.
///
/// A tube is added during saturation when it meets a selected tube of the
/// same slab, i.e. when the core segments are within `2 delta`.
pub fn regularize(family: &StripFamily, shading: &Shading) -> Result<Regularized> {
    if shading.is_empty() {
        return Err(Error::Invalid("shading is empty".into()));
    }
    let d = family.delta;
    let n_t = htube_count(d);
    let mut slabs: Vec<SlabHash> = (0..n_t).map(|_| SlabHash::new((2.0 * family.rho).max(4.0 * d))).collect();
    for t in shading.tubes(family) {
        slabs[t.t_index].insert(t.segment());
    }
    let mut saturated = BTreeMap::new();
    for i in 0..family.len() {
        let own = shading.selected.get(&i);
        let ks: BTreeSet<usize> = (0..n_t)
            .filter(|&k| {
                own.is_some_and(|s| s.contains(&k)) || slabs[k].any_within(&htube(family, i, k).segment(), 2.0 * d)
            })
            .collect();
        if !ks.is_empty() {
            saturated.insert(i, ks);
        }
    }
    let saturated_mass: usize = saturated.values().map(BTreeSet::len).sum();
    let mut class_mass: BTreeMap<u32, usize> = BTreeMap::new();
    for ks in saturated.values() {
        *class_mass.entry(ks.len().ilog2()).or_default() += ks.len();
    }
    // ties go to the larger class
    let (&j, _) = class_mass
        .iter()
        .max_by(|a, b| a.1.cmp(b.1).then(a.0.cmp(b.0)))
        .expect("saturated shading is nonempty");
    let indices: Vec<usize> = saturated
        .iter()
        .filter(|(_, ks)| ks.len().ilog2() == j)
        .map(|(&i, _)| i)
        .collect();
    let selected = indices
        .iter()
        .enumerate()
        .map(|(new, old)| (new, saturated[old].clone()))
        .collect();
    Ok(Regularized {
        family: family.subfamily(&indices),
        shading: Shading { selected },
        mu: 1 << j,
        indices,
        saturated_mass,
    })
}

/// Voxelizes the union of the selected tubes.
pub fn rasterize_htubes(family: &StripFamily, shading: &Shading, h: f64) -> Result<super::OccupancyGrid> {
    let n = cells_per_side(h);
    let layer_range = |slab: [f64; 2]| {
        let first = ((slab[0] / h - 0.5).ceil().max(0.0)) as usize;
        // cell centers strictly below the slab's upper end
        let end = ((slab[1] / h - 0.5).ceil().max(0.0) as usize).min(n);
        first..end
    };
    let tubes: Vec<_> = shading
        .tubes(family)
        .into_iter()
        .map(|t| (layer_range(t.slab), t.tube))
        .collect();
    rasterize_tubes(&tubes, h)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KakeyaRatio {
    pub ratio: f64,
    pub lhs: f64,
    pub rhs_basis: f64,
    pub lambda: f64,
}

/// `|∪Y| / (lambda^6 #S |S|)` with `lambda` the smallest density.
pub fn kakeya_ratio(family: &StripFamily, shading: &Shading, h: f64) -> Result<KakeyaRatio> {
    if h > family.delta / 2.0 + 1e-15 {
        return Err(Error::Invalid("grid resolution must be at most delta/2".into()));
    }
    let lambda = shading.min_density(family);
    if family.is_empty() || lambda <= 0.0 {
        return Err(Error::Invalid("every strip needs a nonempty shading".into()));
    }
    let lhs = rasterize_htubes(family, shading, h)?.measure();
    let rhs_basis =
        lambda.powi(6) * family.len() as f64 * reference_strip_volume(family.delta, family.rho);
    Ok(KakeyaRatio { ratio: lhs / rhs_basis, lhs, rhs_basis, lambda })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::LLine;

    fn small_family() -> StripFamily {
        StripFamily::new(
            1.0 / 16.0,
            0.25,
            [LLine::new(0.5, 0.25, 0.0), LLine::new(0.6, 0.2, -0.1), LLine::new(0.55, 0.3, 0.05)],
        )
        .unwrap()
    }

    #[test]
    fn htube_counts_and_centers() {
        let f = small_family();
        let tubes = decompose_htubes(0, &f);
        assert_eq!(tubes.len(), 16);
        for (k, t) in tubes.iter().enumerate() {
            assert!((t.center().z - (k as f64 + 0.5) / 16.0).abs() < 1e-15);
        }
    }

    #[test]
    fn shading_modes() {
        let f = small_family();
        let full = make_shading(&f, ShadingMode::Full).unwrap();
        assert_eq!(full.min_density(&f), 1.0);
        let lo = Vec3::zeros();
        let hi = Vec3::new(1.0, 1.0, 0.5);
        let half = make_shading(&f, ShadingMode::Region { lo, hi }).unwrap();
        for i in 0..f.len() {
            let d = half.density(i, f.delta);
            assert!((d - 0.5).abs() <= f.delta + 1e-12, "{d}");
        }
        assert!(make_shading(&f, ShadingMode::Random { lambda: 0.0, seed: 1 }).is_err());
    }

    #[test]
    fn shading_json_round_trip() {
        let f = small_family();
        let s = make_shading(&f, ShadingMode::Random { lambda: 0.5, seed: 3 }).unwrap();
        let json = s.to_json().unwrap();
        assert!(json.starts_with("{\"selected\":{\"0\":["));
        assert_eq!(Shading::from_json(&json).unwrap(), s);
    }

    #[test]
    fn full_shading_regularizes_to_itself() {
        let f = small_family();
        let full = make_shading(&f, ShadingMode::Full).unwrap();
        let r = regularize(&f, &full).unwrap();
        assert_eq!(r.family, f);
        assert_eq!(r.shading, full);
        assert_eq!(r.mu, 16);
        assert!(regularize(&f, &Shading::default()).is_err());
    }
}
