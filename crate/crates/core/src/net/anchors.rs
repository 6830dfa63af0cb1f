//! Anchor priors and the residual box decoding.

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use crate::geom::{normalize_heading, Box7, ObjectClass};
use crate::pillars::GridSpec;

pub const ANCHORS_PER_CELL: usize = 2;
pub const ANCHOR_ROTATIONS: [f64; ANCHORS_PER_CELL] = [0.0, FRAC_PI_2];
pub const REG_DIM: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnchorSpec {
    pub vehicle: [f64; 3],
    pub pedestrian: [f64; 3],
}

impl Default for AnchorSpec {
    fn default() -> Self {
        Self {
            vehicle: [4.725, 2.079, 1.768],
            pedestrian: [0.901, 0.857, 1.712],
        }
    }
}

impl AnchorSpec {
    pub fn dims(&self, class: ObjectClass) -> [f64; 3] {
        match class {
            ObjectClass::Vehicle => self.vehicle,
            ObjectClass::Pedestrian => self.pedestrian,
        }
    }

    /// Anchors for every cell and rotation; index = `cell * 2 + rotation`
    /// with `cell = iy * nx + ix`.
    pub fn generate(&self, grid: &GridSpec, class: ObjectClass) -> Vec<Box7> {
        let [l, w, h] = self.dims(class);
        let z = 0.5 * (grid.z_min + grid.z_max);
        let mut out = Vec::with_capacity(grid.num_cells() * ANCHORS_PER_CELL);
        for iy in 0..grid.ny {
            for ix in 0..grid.nx {
                let (cx, cy) = grid.cell_center(ix, iy);
                for rot in ANCHOR_ROTATIONS {
                    out.push(Box7::new(cx, cy, z, l, w, h, rot, class));
                }
            }
        }
        out
    }
}

/// Footprint diagonal used to normalize planar offsets.
pub fn anchor_diagonal(anchor: &Box7) -> f64 {
    anchor.length.hypot(anchor.width)
}

/// Wrap into (-pi/2, pi/2].
pub fn fold_heading(theta: f64) -> f64 {
    let mut t = normalize_heading(theta);
    if t > FRAC_PI_2 {
        t -= PI;
    } else if t <= -FRAC_PI_2 {
        t += PI;
    }
    t
}

/// Apply regression residuals to an anchor. `flip` adds pi to the folded
/// heading (the direction classifier's decision).
pub fn decode_residuals(anchor: &Box7, r: &[f64; REG_DIM], flip: bool) -> Box7 {
    let d = anchor_diagonal(anchor);
    let clamp = |v: f64| v.clamp(-10.0, 10.0);
    let mut heading = anchor.heading + r[6];
    if flip {
        heading += PI;
    }
    Box7 {
        cx: anchor.cx + r[0] * d,
        cy: anchor.cy + r[1] * d,
        cz: anchor.cz + r[2] * anchor.height,
        length: anchor.length * clamp(r[3]).exp(),
        width: anchor.width * clamp(r[4]).exp(),
        height: anchor.height * clamp(r[5]).exp(),
        heading: normalize_heading(heading),
        class: anchor.class,
        score: None,
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    let p = p.clamp(1e-12, 1.0 - 1e-12);
    (p / (1.0 - p)).ln()
}
