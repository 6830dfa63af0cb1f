//! One-way analysis of covariance with a single covariate.
//!
//! Reduced model `y = a + b x` versus full model `y = a_g + b x` (group
//! intercepts, common slope). The group effect is tested with
//! `F = (SSE_r - SSE_f) / (SSE_f / (n - 3))` on `(1, n - 3)` degrees of
//! freedom.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, FisherSnedecor};

use crate::error::{Error, Result};

/// Reported F when the full model fits exactly.
pub const F_CAP: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AncovaPoint {
    pub x: f64,
    pub y: f64,
    /// 0 or 1.
    pub group: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AncovaReport {
    pub f_statistic: f64,
    pub p_value: f64,
    pub df_den: usize,
    pub sse_reduced: f64,
    pub sse_full: f64,
    pub common_slope: f64,
    pub group_intercepts: [f64; 2],
    /// Independent per-group fits (slope comparison).
    pub group_fits: [LineFit; 2],
}

/// Least squares via Householder QR. `rows` is the design matrix (n x k).
/// Returns the coefficients and the residual sum of squares.
pub fn least_squares(rows: &[Vec<f64>], y: &[f64]) -> Result<(Vec<f64>, f64)> {
    let n = rows.len();
    let k = rows.first().map_or(0, Vec::len);
    if n < k || k == 0 {
        return Err(Error::SingularDesign(format!("{n} rows for {k} coefficients")));
    }
    // Column-major copy.
    let mut a: Vec<Vec<f64>> = (0..k).map(|j| rows.iter().map(|r| r[j]).collect()).collect();
    let mut b = y.to_vec();
    let scale: f64 = a.iter().flatten().fold(0.0_f64, |m, v| m.max(v.abs())).max(1.0);
    for j in 0..k {
        let norm = a[j][j..].iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm <= 1e-12 * scale * (n as f64).sqrt() {
            return Err(Error::SingularDesign(format!("column {j} is rank deficient")));
        }
        let alpha = if a[j][j] > 0.0 { -norm } else { norm };
        let mut v: Vec<f64> = a[j][j..].to_vec();
        v[0] -= alpha;
        let vnorm2: f64 = v.iter().map(|x| x * x).sum();
        if vnorm2 == 0.0 {
            continue;
        }
        for col in a.iter_mut().skip(j) {
            let dot: f64 = v.iter().zip(&col[j..]).map(|(p, q)| p * q).sum();
            let f = 2.0 * dot / vnorm2;
            for (c, vi) in col[j..].iter_mut().zip(&v) {
                *c -= f * vi;
            }
        }
        let dot: f64 = v.iter().zip(&b[j..]).map(|(p, q)| p * q).sum();
        let f = 2.0 * dot / vnorm2;
        for (c, vi) in b[j..].iter_mut().zip(&v) {
            *c -= f * vi;
        }
    }
    let mut coef = vec![0.0; k];
    for i in (0..k).rev() {
        let mut s = b[i];
        for j in i + 1..k {
            s -= a[j][i] * coef[j];
        }
        coef[i] = s / a[i][i];
    }
    let sse = b[k..].iter().map(|v| v * v).sum();
    Ok((coef, sse))
}

fn fit_line(points: &[&AncovaPoint]) -> Result<LineFit> {
    let rows: Vec<Vec<f64>> = points.iter().map(|p| vec![1.0, p.x]).collect();
    let y: Vec<f64> = points.iter().map(|p| p.y).collect();
    let (c, _) = least_squares(&rows, &y)?;
    Ok(LineFit {
        intercept: c[0],
        slope: c[1],
        n: points.len(),
    })
}

pub fn ancova_group_test(points: &[AncovaPoint]) -> Result<AncovaReport> {
    let groups: [Vec<&AncovaPoint>; 2] = [
        points.iter().filter(|p| p.group == 0).collect(),
        points.iter().filter(|p| p.group == 1).collect(),
    ];
    if points.iter().any(|p| p.group > 1) {
        return Err(Error::InvalidConfig("ancova groups must be 0 or 1".into()));
    }
    for (g, pts) in groups.iter().enumerate() {
        if pts.len() < 3 {
            return Err(Error::InvalidConfig(format!(
                "ancova needs >= 3 points per group (group {g} has {})",
                pts.len()
            )));
        }
        let x0 = pts[0].x;
        if pts.iter().all(|p| p.x == x0) {
            return Err(Error::SingularDesign(format!("group {g} has constant x")));
        }
    }
    let n = points.len();
    let y: Vec<f64> = points.iter().map(|p| p.y).collect();
    let reduced: Vec<Vec<f64>> = points.iter().map(|p| vec![1.0, p.x]).collect();
    let full: Vec<Vec<f64>> = points
        .iter()
        .map(|p| vec![(p.group == 0) as u8 as f64, (p.group == 1) as u8 as f64, p.x])
        .collect();
    let (_, sse_r) = least_squares(&reduced, &y)?;
    let (cf, sse_f) = least_squares(&full, &y)?;
    let df_den = n - 3;
    let mut numerator = (sse_r - sse_f).max(0.0);
    if numerator <= 1e-12 * sse_r.max(f64::MIN_POSITIVE) {
        numerator = 0.0;
    }
    let f_statistic = if numerator == 0.0 {
        0.0
    } else if sse_f <= 0.0 {
        F_CAP
    } else {
        (numerator / (sse_f / df_den as f64)).min(F_CAP)
    };
    let p_value = FisherSnedecor::new(1.0, df_den as f64)
        .map(|d| d.sf(f_statistic))
        .unwrap_or(f64::NAN);
    Ok(AncovaReport {
        f_statistic,
        p_value,
        df_den,
        sse_reduced: sse_r,
        sse_full: sse_f,
        common_slope: cf[2],
        group_intercepts: [cf[0], cf[1]],
        group_fits: [fit_line(&groups[0])?, fit_line(&groups[1])?],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts(xy: &[(f64, f64)], group: usize) -> Vec<AncovaPoint> {
        xy.iter().map(|&(x, y)| AncovaPoint { x, y, group }).collect()
    }

    #[test]
    fn identical_groups_have_no_effect() {
        let base = [(1.0, 2.0), (2.0, 2.9), (3.0, 4.2), (4.0, 4.8)];
        let mut p = pts(&base, 0);
        p.extend(pts(&base, 1));
        let r = ancova_group_test(&p).unwrap();
        assert_eq!(r.f_statistic, 0.0);
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn pure_shift_saturates() {
        let base = [(1.0, 2.0), (2.0, 3.0), (3.0, 4.0), (5.0, 6.0)];
        let mut p = pts(&base, 0);
        p.extend(base.iter().map(|&(x, y)| AncovaPoint { x, y: y + 1.5, group: 1 }));
        let r = ancova_group_test(&p).unwrap();
        assert!(r.f_statistic >= 1e9, "F = {}", r.f_statistic);
        assert!(r.p_value < 1e-6);
        assert!((r.group_intercepts[1] - r.group_intercepts[0] - 1.5).abs() < 1e-9);
    }

    #[test]
    fn too_few_points_rejected() {
        let mut p = pts(&[(1.0, 1.0), (2.0, 2.0)], 0);
        p.extend(pts(&[(1.0, 1.0), (2.0, 2.0), (3.0, 3.0)], 1));
        assert!(ancova_group_test(&p).is_err());
    }

    #[test]
    fn constant_x_is_singular() {
        let mut p = pts(&[(1.0, 1.0), (1.0, 2.0), (1.0, 3.0)], 0);
        p.extend(pts(&[(1.0, 1.0), (2.0, 2.0), (3.0, 3.0)], 1));
        assert!(matches!(ancova_group_test(&p), Err(Error::SingularDesign(_))));
    }

    #[test]
    fn qr_recovers_exact_line() {
        let rows: Vec<Vec<f64>> = (0..5).map(|i| vec![1.0, i as f64]).collect();
        let y: Vec<f64> = (0..5).map(|i| 2.0 + 3.0 * i as f64).collect();
        let (c, sse) = least_squares(&rows, &y).unwrap();
        assert!((c[0] - 2.0).abs() < 1e-12 && (c[1] - 3.0).abs() < 1e-12);
        assert!(sse < 1e-20);
    }
}
