//! Dynamic pillar voxelization.
//!
//! Every in-range point lands in exactly one BEV cell; there is no cap on
//! points per pillar or on the number of pillars. All three axes use
//! half-open intervals `[min, max)`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Point3;

/// Number of per-point decoration features produced by [`pillar_features`].
pub const POINT_FEATURES: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub z_min: f64,
    pub z_max: f64,
    pub nx: usize,
    pub ny: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self::desk()
    }
}

impl GridSpec {
    /// 32 x 32 cells of 1 m over [-16, 16]^2.
    pub fn desk() -> Self {
        Self {
            x_min: -16.0,
            x_max: 16.0,
            y_min: -16.0,
            y_max: 16.0,
            z_min: -3.0,
            z_max: 3.0,
            nx: 32,
            ny: 32,
        }
    }

    /// 512 x 512 cells over [-76.8, 76.8]^2 (0.30 m cells).
    pub fn full_scale() -> Self {
        Self {
            x_min: -76.8,
            x_max: 76.8,
            y_min: -76.8,
            y_max: 76.8,
            z_min: -3.0,
            z_max: 3.0,
            nx: 512,
            ny: 512,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.x_max > self.x_min
            && self.y_max > self.y_min
            && self.z_max > self.z_min
            && self.nx >= 1
            && self.ny >= 1;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("invalid grid spec {self:?}")))
        }
    }

    pub fn cell_size_x(&self) -> f64 {
        (self.x_max - self.x_min) / self.nx as f64
    }

    pub fn cell_size_y(&self) -> f64 {
        (self.y_max - self.y_min) / self.ny as f64
    }

    pub fn num_cells(&self) -> usize {
        self.nx * self.ny
    }

    pub fn cell_center(&self, ix: usize, iy: usize) -> (f64, f64) {
        (
            self.x_min + (ix as f64 + 0.5) * self.cell_size_x(),
            self.y_min + (iy as f64 + 0.5) * self.cell_size_y(),
        )
    }

    /// Cell of a point, or `None` when it is out of range.
    pub fn cell_of(&self, p: &Point3) -> Option<(usize, usize)> {
        let in_range = p.x >= self.x_min
            && p.x < self.x_max
            && p.y >= self.y_min
            && p.y < self.y_max
            && p.z >= self.z_min
            && p.z < self.z_max;
        if !in_range {
            return None;
        }
        let ix = ((p.x - self.x_min) / self.cell_size_x()).floor() as usize;
        let iy = ((p.y - self.y_min) / self.cell_size_y()).floor() as usize;
        // Guard against x_max - eps rounding up to nx.
        Some((ix.min(self.nx - 1), iy.min(self.ny - 1)))
    }
}

/// Occupied pillars keyed by `(ix, iy)`, each holding the indices of its
/// points in input order.
#[derive(Debug, Clone, PartialEq)]
pub struct PillarGrid {
    pub spec: GridSpec,
    pub pillars: BTreeMap<(usize, usize), Vec<usize>>,
}

impl PillarGrid {
    pub fn num_points(&self) -> usize {
        self.pillars.values().map(Vec::len).sum()
    }
}

pub fn voxelize(points: &[Point3], spec: &GridSpec) -> PillarGrid {
    let mut pillars: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for (i, p) in points.iter().enumerate() {
        if let Some(cell) = spec.cell_of(p) {
            pillars.entry(cell).or_default().push(i);
        }
    }
    PillarGrid { spec: *spec, pillars }
}

/// Decorated points grouped by pillar. Pillar `k` covers rows
/// `offsets[k]..offsets[k + 1]` and sits at `cells[k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PillarFeatures {
    pub cells: Vec<(usize, usize)>,
    pub offsets: Vec<usize>,
    pub point_indices: Vec<usize>,
    pub rows: Vec<[f64; POINT_FEATURES]>,
}

impl PillarFeatures {
    pub fn num_pillars(&self) -> usize {
        self.cells.len()
    }

    pub fn pillar_rows(&self, k: usize) -> &[[f64; POINT_FEATURES]] {
        &self.rows[self.offsets[k]..self.offsets[k + 1]]
    }
}

/// Per-point decoration `(x, y, z, intensity, x - x̄, y - ȳ, z - z̄, x - x_c, y - y_c)`
/// with `(x̄, ȳ, z̄)` the pillar centroid and `(x_c, y_c)` the cell center.
pub fn pillar_features(points: &[Point3], grid: &PillarGrid) -> PillarFeatures {
    let n = grid.num_points();
    let mut out = PillarFeatures {
        cells: Vec::with_capacity(grid.pillars.len()),
        offsets: Vec::with_capacity(grid.pillars.len() + 1),
        point_indices: Vec::with_capacity(n),
        rows: Vec::with_capacity(n),
    };
    out.offsets.push(0);
    for (&(ix, iy), idx) in &grid.pillars {
        let inv = 1.0 / idx.len() as f64;
        let (mut mx, mut my, mut mz) = (0.0, 0.0, 0.0);
        for &i in idx {
            mx += points[i].x;
            my += points[i].y;
            mz += points[i].z;
        }
        mx *= inv;
        my *= inv;
        mz *= inv;
        let (xc, yc) = grid.spec.cell_center(ix, iy);
        for &i in idx {
            let p = &points[i];
            out.rows.push([
                p.x,
                p.y,
                p.z,
                p.intensity,
                p.x - mx,
                p.y - my,
                p.z - mz,
                p.x - xc,
                p.y - yc,
            ]);
            out.point_indices.push(i);
        }
        out.cells.push((ix, iy));
        out.offsets.push(out.rows.len());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pt(x: f64, y: f64, z: f64) -> Point3 {
        Point3::new(x, y, z, 0.5)
    }

    #[test]
    fn floor_cell_assignment() {
        let g = voxelize(&[pt(0.5, -0.5, 0.0)], &GridSpec::desk());
        assert_eq!(g.pillars.keys().copied().collect::<Vec<_>>(), vec![(16, 15)]);
    }

    #[test]
    fn no_cap_per_pillar() {
        let pts = [pt(0.1, 0.1, 0.0), pt(0.2, 0.3, 1.0), pt(0.9, 0.9, -1.0)];
        let g = voxelize(&pts, &GridSpec::desk());
        assert_eq!(g.pillars.len(), 1);
        assert_eq!(g.pillars[&(16, 16)], vec![0, 1, 2]);
    }

    #[test]
    fn half_open_bounds() {
        let spec = GridSpec::desk();
        let g = voxelize(
            &[pt(0.0, 0.0, 3.0), pt(16.0, 0.0, 0.0), pt(-16.0, -16.0, -3.0)],
            &spec,
        );
        assert_eq!(g.num_points(), 1);
        assert_eq!(g.pillars[&(0, 0)], vec![2]);
    }

    #[test]
    fn single_point_at_center_has_zero_offsets() {
        let pts = [pt(0.5, 0.5, 0.2)];
        let g = voxelize(&pts, &GridSpec::desk());
        let f = pillar_features(&pts, &g);
        assert_eq!(&f.rows[0][4..], &[0.0; 5]);
    }

    #[test]
    fn symmetric_points_negate_centroid_offsets() {
        let pts = [pt(0.3, 0.4, 0.5), pt(0.7, 0.6, -0.5)];
        let g = voxelize(&pts, &GridSpec::desk());
        let f = pillar_features(&pts, &g);
        for k in 4..7 {
            assert!((f.rows[0][k] + f.rows[1][k]).abs() < 1e-15);
        }
    }

    #[test]
    fn hand_decoration() {
        // One 2 m cell [-0.5, 1.5)^2 centered at (0.5, 0.5).
        let spec = GridSpec {
            x_min: -0.5,
            x_max: 1.5,
            y_min: -0.5,
            y_max: 1.5,
            z_min: -3.0,
            z_max: 3.0,
            nx: 1,
            ny: 1,
        };
        assert_eq!(spec.cell_center(0, 0), (0.5, 0.5));
        let pts = [Point3::new(1.0, 0.0, 0.2, 0.3)];
        let g = voxelize(&pts, &spec);
        let f = pillar_features(&pts, &g);
        assert_eq!(f.rows[0], [1.0, 0.0, 0.2, 0.3, 0.0, 0.0, 0.0, 0.5, -0.5]);
    }

    #[test]
    fn full_scale_cell_is_030() {
        let s = GridSpec::full_scale();
        assert!((s.cell_size_x() - 0.3).abs() < 1e-12);
    }
}
