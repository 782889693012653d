use crate::duality::{plank_axes, slice_tube_of};
use crate::error::{Error, Result};
use crate::family::StripFamily;
use crate::geom::Vec3;

use super::{slice_measure, CELL_BUDGET};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlankMeasure {
    pub volume3d: f64,
    pub projected_area: f64,
    pub n_planks: usize,
}

/// Measures `∪ T_x(t)` over the parameter points whose slice at `t` meets
/// the unit square.
///
/// All planks at one height share their axes, so the union is rasterized in
/// frame coordinates `(xi, mid, short)` on a grid with cell sizes
/// `(h / delta, h rho / delta, h)`, i.e. the same number of cells across each
/// plank axis.
pub fn plank_union_measure(family: &StripFamily, t: f64, h: f64) -> Result<PlankMeasure> {
    let (delta, rho) = (family.delta, family.rho);
    let axes = plank_axes(t);
    let centers: Vec<Vec3> = family
        .strips
        .iter()
        .filter(|s| {
            let tube = slice_tube_of(&s.core, rho, delta, t);
            let (a, b) = tube.endpoints();
            let r = tube.thickness;
            a.x.max(b.x) + r >= 0.0 && a.x.min(b.x) - r <= 1.0 && a.y.max(b.y) + r >= 0.0 && a.y.min(b.y) - r <= 1.0
        })
        .map(|s| axes * s.core.param())
        .collect();
    if centers.is_empty() {
        return Ok(PlankMeasure { volume3d: 0.0, projected_area: 0.0, n_planks: 0 });
    }
    let ext = Vec3::new(1.0, rho, delta);
    let cell = Vec3::new(h / delta, h * rho / delta, h);
    let mut lo = Vec3::repeat(f64::INFINITY);
    let mut hi = Vec3::repeat(f64::NEG_INFINITY);
    for c in &centers {
        lo = lo.inf(&(c - ext));
        hi = hi.sup(&(c + ext));
    }
    let dims: [usize; 3] = [0, 1, 2].map(|k| ((hi[k] - lo[k]) / cell[k]).ceil() as usize + 1);
    let cells = dims.iter().map(|&d| d as u64).product::<u64>();
    if cells > CELL_BUDGET {
        return Err(Error::GridTooLarge { cells, budget: CELL_BUDGET });
    }
    let [_, nm, ns] = dims;
    let mut vol = vec![0u64; (cells as usize).div_ceil(64)];
    let mut proj = vec![0u64; (nm * ns).div_ceil(64)];
    let range = |k: usize, c: f64| {
        let a = ((c - ext[k] - lo[k]) / cell[k] - 0.5).ceil().max(0.0) as usize;
        let b = ((c + ext[k] - lo[k]) / cell[k] - 0.5).floor() as usize;
        a..=b.min(dims[k] - 1)
    };
    for c in &centers {
        for m in range(1, c.y) {
            for s in range(2, c.z) {
                let p = m * ns + s;
                proj[p / 64] |= 1 << (p % 64);
                for l in range(0, c.x) {
                    let idx = (l * nm + m) * ns + s;
                    vol[idx / 64] |= 1 << (idx % 64);
                }
            }
        }
    }
    let count = |bits: &[u64]| bits.iter().map(|w| w.count_ones() as f64).sum::<f64>();
    Ok(PlankMeasure {
        volume3d: count(&vol) * cell.x * cell.y * cell.z,
        projected_area: count(&proj) * cell.y * cell.z,
        n_planks: centers.len(),
    })
}

/// Slice area against plank measures at one height, each in units of the
/// corresponding single-object measure (`4 rho delta` for slices and
/// projections, `8 rho delta` for planks).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SliceCorrespondence {
    pub t: f64,
    pub slice_area: f64,
    pub plank: PlankMeasure,
    pub ratio_volume: f64,
    pub ratio_projected: f64,
}

pub fn slice_correspondence(family: &StripFamily, t: f64, h: f64) -> Result<SliceCorrespondence> {
    let slice_area = slice_measure(family, t, h);
    let plank = plank_union_measure(family, t, h)?;
    let unit = 4.0 * family.rho * family.delta;
    let slices = slice_area / unit;
    Ok(SliceCorrespondence {
        t,
        slice_area,
        plank,
        ratio_volume: slices / (plank.volume3d / (2.0 * unit)),
        ratio_projected: slices / (plank.projected_area / unit),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::LLine;

    #[test]
    fn single_plank_volume() {
        let (d, r) = (1.0 / 64.0, 0.125);
        let f = StripFamily::new(d, r, [LLine::new(0.5, 0.25, 0.0)]).unwrap();
        for t in [0.25, 0.5, 0.75] {
            let m = plank_union_measure(&f, t, d / 2.0).unwrap();
            assert!((m.volume3d / (8.0 * r * d) - 1.0).abs() < 0.15, "{m:?}");
            assert!((m.projected_area / (4.0 * r * d) - 1.0).abs() < 0.15, "{m:?}");
        }
    }

    #[test]
    fn empty_planks() {
        let f = StripFamily::empty(1.0 / 64.0, 0.125).unwrap();
        let m = plank_union_measure(&f, 0.5, 1.0 / 128.0).unwrap();
        assert_eq!((m.volume3d, m.projected_area), (0.0, 0.0));
    }
}
